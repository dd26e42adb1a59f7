"""Cluster configuration: defaults, validation, and the flat key=value file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError, RangeError

PROTOCOLS = ("WB", "WT", "BASELINE", "PARALLEL", "PROACTIVE")

KIB = 1024
MIB = 1024 * 1024


@dataclass
class ClusterConfig:
    num_cns: int = 16
    num_mns: int = 16
    cores_per_cn: int = 4
    sb_entries: int = 72
    lq_entries: int = 128
    l1_size: int = 48 * KIB
    l1_assoc: int = 12
    l1_latency: int = 5          # core cycles
    llc_size: int = 8 * MIB
    llc_assoc: int = 16
    llc_latency: int = 36        # core cycles
    line_bytes: int = 64
    dram_ns: float = 45.0
    pmem_ns: float = 500.0
    link_GBps: float = 160.0
    net_rtt_ns: float = 200.0
    sram_log_bytes: int = 4096
    sram_access_ns: float = 4.0
    dram_log_bytes: int = 18 * MIB
    dump_period_us: float = 2500.0
    replication_factor: int = 3
    compression_ratio: float = 5.8
    protocol: str = "WB"
    coalescing_enabled: bool = True
    word_bytes: int = 8
    p_reorder: float = 0.1
    detect_timeout_us: float = 10.0

    def validate(self) -> "ClusterConfig":
        if self.replication_factor < 1 or self.replication_factor > self.num_cns:
            raise RangeError(
                f"replication_factor={self.replication_factor} must be in "
                f"[1, num_cns={self.num_cns}]"
            )
        for key in ("num_cns", "num_mns", "cores_per_cn", "sb_entries",
                    "lq_entries", "l1_size", "l1_assoc", "llc_size",
                    "llc_assoc", "line_bytes", "word_bytes",
                    "sram_log_bytes", "dram_log_bytes"):
            if getattr(self, key) <= 0:
                raise RangeError(f"{key} must be positive")
        if self.line_bytes % self.word_bytes != 0:
            raise RangeError("line_bytes must be divisible by word_bytes")
        if self.protocol not in PROTOCOLS:
            raise RangeError(f"protocol must be one of {PROTOCOLS}")
        if not 0.0 <= self.p_reorder <= 1.0:
            raise RangeError("p_reorder must be in [0, 1]")
        if self.compression_ratio <= 0:
            raise RangeError("compression_ratio must be positive")
        return self

    @property
    def words_per_line(self) -> int:
        return self.line_bytes // self.word_bytes

    @property
    def num_cores(self) -> int:
        return self.num_cns * self.cores_per_cn

    def replace(self, **kw) -> "ClusterConfig":
        return dataclasses.replace(self, **kw).validate()


_FIELDS = {f.name: f for f in dataclasses.fields(ClusterConfig)}


def _coerce(name: str, raw: str):
    typ = _FIELDS[name].type
    raw = raw.strip()
    try:
        if typ == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw, 0)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for key '{name}': {raw!r}") from e


def parse_config_text(text: str) -> ClusterConfig:
    values = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {ln}: unknown key '{key}'")
        values[key] = _coerce(key, raw)
    return ClusterConfig(**values).validate()


def parse_config(path) -> ClusterConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())

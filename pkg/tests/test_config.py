import pytest

from cxlsim.config import ClusterConfig, parse_config_text
from cxlsim.errors import ConfigError, RangeError

MIB = 1024 * 1024


def test_defaults_match_reference_hardware_table():
    cfg = ClusterConfig().validate()
    assert cfg.num_cns == 16 and cfg.num_mns == 16
    assert cfg.cores_per_cn == 4
    assert cfg.sb_entries == 72 and cfg.lq_entries == 128
    assert cfg.l1_size == 48 * 1024 and cfg.l1_assoc == 12
    assert cfg.l1_latency == 5
    assert cfg.llc_size == 8 * MIB and cfg.llc_assoc == 16
    assert cfg.llc_latency == 36
    assert cfg.line_bytes == 64 and cfg.word_bytes == 8
    assert cfg.dram_ns == 45.0 and cfg.pmem_ns == 500.0
    assert cfg.link_GBps == 160.0 and cfg.net_rtt_ns == 200.0
    assert cfg.sram_log_bytes == 4096 and cfg.sram_access_ns == 4.0
    assert cfg.dram_log_bytes == 18 * MIB
    assert cfg.dump_period_us == 2500.0
    assert cfg.replication_factor == 3
    assert cfg.compression_ratio == 5.8
    assert cfg.words_per_line == 8
    assert cfg.num_cores == 64


@pytest.mark.parametrize("bad", [
    {"replication_factor": 0},
    {"replication_factor": 17},
    {"num_cns": 0},
    {"line_bytes": 60},          # not divisible by word_bytes
    {"sb_entries": -1},
    {"protocol": "MESI"},
])
def test_invalid_configs_rejected(bad):
    with pytest.raises((RangeError, ConfigError)):
        ClusterConfig(**bad).validate()


def test_parse_flat_key_value_text():
    cfg = parse_config_text("""
        # comment
        num_cns = 4
        protocol = PARALLEL
        coalescing_enabled = false
        p_reorder = 0.25
    """)
    assert cfg.num_cns == 4
    assert cfg.protocol == "PARALLEL"
    assert cfg.coalescing_enabled is False
    assert cfg.p_reorder == 0.25


def test_parse_unknown_key_names_it():
    with pytest.raises(ConfigError, match="bogus_knob"):
        parse_config_text("bogus_knob = 1")


def test_replace_revalidates():
    cfg = ClusterConfig().validate()
    with pytest.raises(RangeError):
        cfg.replace(num_cns=2)  # Nr=3 no longer fits
    small = cfg.replace(num_cns=2, replication_factor=2)
    assert small.num_cns == 2

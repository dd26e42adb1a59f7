"""Run-result assembly and stable JSON/CSV serialization."""

from __future__ import annotations

import csv
import dataclasses
import json

from .engine import ps_to_ns

SCHEMA = 1


def build_result(sim, label: str = "") -> dict:
    """Collect every reportable counter from a finished simulation."""
    cfg = sim.cfg
    bw = sim.fabric.bandwidth_report()
    totals = bw["totals"]
    per_core = []
    for node in sim.nodes:
        for core in node.cores:
            per_core.append({
                "cn": node.cn, "core": core.idx, "done": core.done,
                "commits": core.n_commits, "stores": core.store_seq,
                "l1_hits": core.n_l1_hits, "llc_hits": core.n_llc_hits,
                "sb_full_stalls": core.n_sb_full,
            })
    max_dram = {str(n.cn): n.lu.max_dram_bytes for n in sim.nodes}
    recovery = [dataclasses.asdict(r) for r in sim.coordinator.reports]
    result = {
        "schema": SCHEMA,
        "label": label,
        "protocol": cfg.protocol,
        "seed": sim.seed,
        "config": dataclasses.asdict(cfg),
        "sim_time_ps": sim.sim_time_ps,
        "sim_time_ns": ps_to_ns(sim.sim_time_ps),
        "commits": sim.n_commits,
        "repl_rounds": sim.n_repl_rounds,
        "repls_at_head": sim.n_repls_at_head,
        "repl_head_fraction": (sim.n_repls_at_head / sim.n_repl_rounds
                               if sim.n_repl_rounds else 0.0),
        "val_msgs": sim.n_val_msgs,
        "coalesced_stores": sim.n_coalesced,
        "gate_checks": sim.gate_checks,
        "gate_violations": sim.gate_violations,
        "ts_inversions": sum(n.lu.ts_inversions for n in sim.nodes),
        "bytes": dict(totals),
        "coherence_bytes": totals["coherence"],
        "replication_bytes": totals["replication"],
        "logdump_bytes": totals["logdump"],
        "max_dram_log_bytes": max_dram,
        "max_dram_log_bytes_any": max(max_dram.values(), default=0),
        "fabric": {
            "sent": sim.fabric.n_sent,
            "delivered": sim.fabric.n_delivered,
            "dropped_viral": sim.fabric.n_dropped_viral,
        },
        "per_core": per_core,
        "crash_fired": sim.crash_fired,
        "recovery": recovery,
        "verify": sim.verify(),
    }
    return result


def dumps_result(result: dict) -> str:
    return json.dumps(result, sort_keys=True, indent=2) + "\n"


def write_result(path, result: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_result(result))


CSV_FIELDS = [
    "label", "protocol", "seed", "sim_time_ns", "commits", "repl_rounds",
    "val_msgs", "coalesced_stores", "coherence_bytes", "replication_bytes",
    "logdump_bytes", "max_dram_log_bytes_any", "gate_violations",
    "ts_inversions", "verify_ok",
]


def csv_row(result: dict) -> dict:
    row = {k: result[k] for k in CSV_FIELDS if k in result}
    row["verify_ok"] = result["verify"]["ok"]
    return row


def write_csv(path, results: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in results:
            w.writerow(csv_row(r))


def summary_lines(result: dict) -> list[str]:
    v = result["verify"]
    lines = [
        f"protocol={result['protocol']} seed={result['seed']} "
        f"label={result['label'] or '-'}",
        f"sim_time={result['sim_time_ns']:.1f} ns  "
        f"commits={result['commits']}  coalesced={result['coalesced_stores']}",
        f"bytes: coherence={result['coherence_bytes']}  "
        f"replication={result['replication_bytes']}  "
        f"logdump={result['logdump_bytes']}",
        f"max DRAM log={result['max_dram_log_bytes_any']} B  "
        f"repl@head={result['repl_head_fraction']:.2f}",
        f"gate_violations={result['gate_violations']}  "
        f"ts_inversions={result['ts_inversions']}",
        f"verify: {'PASS' if v['ok'] else 'FAIL'} "
        f"({v['words_checked']} committed words checked, "
        f"{len(v['failures'])} failures)",
    ]
    for rep in result["recovery"]:
        dur = rep["t_end_ps"] - rep["t_start_ps"]
        lines.append(f"recovery: victims={rep['victims']} "
                     f"duration={dur / 1000.0:.1f} ns "
                     f"fetch_rtts={rep['fetch_rtts']}")
    return lines

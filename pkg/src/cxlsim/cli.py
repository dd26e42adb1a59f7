"""Command-line front end: run, sweep, fuzz-recovery, gen-trace."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import fuzz, metrics
from .config import ClusterConfig, parse_config
from .recovery import CrashPlan
from .sim import Simulation
from .trace import PRESETS, generate_trace, load_trace, save_trace

_TIME_UNITS = {"s": 10**12, "ms": 10**9, "us": 10**6, "ns": 10**3, "ps": 1}


def parse_time_ps(text: str) -> int:
    for unit in ("ms", "us", "ns", "ps", "s"):
        if text.endswith(unit):
            return int(float(text[:-len(unit)]) * _TIME_UNITS[unit])
    return int(float(text) * _TIME_UNITS["ns"])  # bare numbers are ns


def parse_crash(text: str) -> CrashPlan:
    """e.g. 'cn=0,t=12.5ms' or 'cn=0+2,commits=500'."""
    victims, at_time, after = (), 0, 0
    for part in text.split(","):
        key, _, val = part.partition("=")
        if key == "cn":
            victims = tuple(int(v) for v in val.split("+"))
        elif key == "t":
            at_time = parse_time_ps(val)
        elif key in ("commits", "c"):
            after = int(val)
        else:
            raise argparse.ArgumentTypeError(f"unknown crash key {key!r}")
    if not victims or not (at_time or after):
        raise argparse.ArgumentTypeError(
            "crash spec needs cn=... and t=... or commits=...")
    return CrashPlan(victims=victims, at_time_ps=at_time,
                     after_commits=after)


def _parse_bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


_COERCE = {"int": int, "float": float, "bool": _parse_bool, "str": str}


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("cluster configuration")
    for f in dataclasses.fields(ClusterConfig):
        group.add_argument(f"--{f.name.replace('_', '-')}",
                           dest=f"cfg_{f.name}", default=None,
                           type=_COERCE[str(f.type)], metavar=str(f.type))


def build_config(args) -> ClusterConfig:
    cfg = parse_config(args.config) if args.config else ClusterConfig()
    overrides = {f.name: getattr(args, f"cfg_{f.name}")
                 for f in dataclasses.fields(ClusterConfig)
                 if getattr(args, f"cfg_{f.name}") is not None}
    return cfg.replace(**overrides) if overrides else cfg.validate()


def build_traces(args, cfg: ClusterConfig):
    if args.trace:
        return load_trace(args.trace), os.path.basename(args.trace)
    spec = PRESETS[args.preset]
    if args.ops:
        spec = dataclasses.replace(spec, ops_per_core=args.ops)
    traces = generate_trace(spec, cfg.num_cores, args.seed,
                            line_bytes=cfg.line_bytes,
                            word_bytes=cfg.word_bytes)
    return traces, args.preset


def _default_seed() -> int:
    return int(os.environ.get("CXLSIM_SEED", "0"))


def run_one(cfg, traces, seed, crash, label):
    sim = Simulation(cfg, traces, seed=seed, crash_plan=crash)
    sim.run()
    return metrics.build_result(sim, label=label)


def cmd_run(args) -> int:
    cfg = build_config(args)
    traces, label = build_traces(args, cfg)
    result = run_one(cfg, traces, args.seed, args.crash, label)
    out = args.out or f"run_{cfg.protocol}_{args.seed}.json"
    metrics.write_result(out, result)
    for line in metrics.summary_lines(result):
        print(line)
    print(f"result written to {out}")
    ok = result["verify"]["ok"] and result["gate_violations"] == 0
    return 0 if ok else 1


SWEEP_DIMS = {
    "protocol": "protocol",
    "Nr": "replication_factor",
    "num_cns": "num_cns",
    "link_GBps": "link_GBps",
    "coalescing": "coalescing_enabled",
}


def cmd_sweep(args) -> int:
    field = SWEEP_DIMS[args.dimension]
    coerce = _COERCE["str" if field == "protocol" else
                     ("bool" if field == "coalescing_enabled" else
                      ("float" if field == "link_GBps" else "int"))]
    values = [coerce(v) for v in args.values.split(",")]
    base = build_config(args)
    results = []
    for v in values:
        cfg = base.replace(**{field: v})
        traces, label = build_traces(args, cfg)
        results.append(run_one(cfg, traces, args.seed, None,
                               f"{args.dimension}={v}"))
    out = args.out or f"sweep_{args.dimension}.csv"
    metrics.write_csv(out, results)
    t0 = results[0]["sim_time_ps"] or 1
    print(f"{'point':>24} {'sim_time_ns':>14} {'normalized':>10}")
    for r in results:
        print(f"{r['label']:>24} {r['sim_time_ns']:>14.1f} "
              f"{r['sim_time_ps'] / t0:>10.3f}")
    print(f"table written to {out}")
    if args.emit_gnuplot:
        dat = os.path.splitext(out)[0] + ".dat"
        with open(dat, "w", encoding="utf-8") as fh:
            fh.write("# point sim_time_ns normalized\n")
            for r in results:
                fh.write(f"{r['label']} {r['sim_time_ns']:.3f} "
                         f"{r['sim_time_ps'] / t0:.6f}\n")
        print(f"gnuplot data written to {dat}")
    return 0


def cmd_fuzz(args) -> int:
    protocols = ("BASELINE", "PARALLEL", "PROACTIVE")
    reorders = (0.0, 0.5)
    failures = 0
    for i in range(args.trials):
        res = fuzz.run_trial(
            seed=args.seed + i, protocol=protocols[i % 3],
            p_reorder=reorders[(i // 3) % 2], num_victims=args.victims,
            nr=args.nr, ops_per_core=args.ops or 200)
        status = "PASS" if res["ok"] else "FAIL"
        if not res["ok"]:
            failures += 1
            print(f"trial {i}: {status} {res['failures'][:3]}")
        elif args.verbose:
            print(f"trial {i}: {status} protocol={res['protocol']} "
                  f"victims={res['victims']} commits={res['commits']}")
    print(f"{args.trials} trials, {failures} failures")
    return 0 if failures == 0 else 1


def cmd_gen_trace(args) -> int:
    spec = PRESETS[args.preset]
    if args.ops:
        spec = dataclasses.replace(spec, ops_per_core=args.ops)
    traces = generate_trace(spec, args.cores, args.seed)
    save_trace(args.out, traces)
    total = sum(len(t) for t in traces)
    print(f"{args.out}: {args.cores} cores, {total} ops")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cxlsim",
        description="Deterministic simulator of a replicated CXL "
                    "shared-memory cluster")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, preset=True):
        sp.add_argument("--seed", type=int, default=_default_seed())
        sp.add_argument("--config", help="key = value config file")
        if preset:
            sp.add_argument("--preset", default="ycsb-like",
                            choices=sorted(PRESETS))
            sp.add_argument("--trace", help="trace file instead of a preset")
            sp.add_argument("--ops", type=int, default=0,
                            help="override ops per core")
        add_config_flags(sp)

    sp = sub.add_parser("run", help="run one simulation")
    common(sp)
    sp.add_argument("--crash", type=parse_crash, default=None,
                    metavar="cn=N[,t=TIME|,commits=N]")
    sp.add_argument("--out", help="result JSON path")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("sweep", help="sweep one dimension")
    common(sp)
    sp.add_argument("--dimension", required=True, choices=sorted(SWEEP_DIMS))
    sp.add_argument("--values", required=True,
                    help="comma-separated values")
    sp.add_argument("--out", help="CSV path")
    sp.add_argument("--emit-gnuplot", action="store_true")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("fuzz-recovery", help="randomized crash trials")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--seed", type=int, default=_default_seed())
    sp.add_argument("--victims", type=int, default=1)
    sp.add_argument("--nr", type=int, default=3)
    sp.add_argument("--ops", type=int, default=0)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(fn=cmd_fuzz)

    sp = sub.add_parser("gen-trace", help="write a synthetic trace file")
    sp.add_argument("--preset", default="ycsb-like", choices=sorted(PRESETS))
    sp.add_argument("--cores", type=int, default=8)
    sp.add_argument("--ops", type=int, default=0)
    sp.add_argument("--seed", type=int, default=_default_seed())
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_gen_trace)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

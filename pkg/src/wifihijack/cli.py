"""Command-line front end.

Exit status: 0 when the attack succeeds (or a non-attack command completes),
2 when the attack ends in failure or is inconclusive, 1 on usage, config or
input errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from collections import Counter
from pathlib import Path

import yaml

from .config import ScenarioConfig, field_type, load_config
from .errors import ConfigError, TraceFormatError
from .formats import (
    observation_label,
    read_json_doc,
    read_trace,
    write_json_doc,
    write_probe_log,
    write_table,
    write_trace,
)
from .sim import Run, ecdf, observe_timeout_us, run_sweep, simulate

OUT_ENV = "WIFIHIJACK_OUT"
PHASES = ("scan", "port", "seq", "ack_window", "ack_boundary", "action")
EXIT_OK, EXIT_ERROR, EXIT_ATTACK_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


def out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "out")


def summary_doc(run: Run) -> dict:
    r = run.report
    return {
        "scenario": run.cfg.name,
        "seed": run.cfg.seed,
        "action": run.cfg.action.kind,
        "outcome": r.outcome,
        "failed_phase": r.failed_phase,
        "reason": r.reason,
        "phase_times": r.phase_times,
        "probes_sent": r.probes_sent,
        "bytes_sent": r.bytes_sent,
        "virtual_time": r.virtual_time,
        "bandwidth_kbps": round(r.bandwidth_kbps, 6),
        "used_sack_port": r.used_sack_port,
        "reinferences": r.reinferences,
        "victim": {"mac": r.victim_mac, "ip": r.victim_ip},
        "inferred": {
            "client_port": r.port_found,
            "rcv_nxt": r.rcv_nxt_found,
            "ack_lower": r.ack_lower_found,
            "ack_usable": r.ack_usable,
        },
        "truth": run.truth,
    }


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    run = simulate(cfg, record_trace=True)
    out = out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        write_json_doc(fh, "summary", summary_doc(run))
    with open(out / "trace.txt", "w", encoding="utf-8") as fh:
        write_trace(fh, run.trace)
    with open(out / "probes.csv", "w", encoding="utf-8") as fh:
        write_probe_log(fh, run.probe_log)
    r = run.report
    print(f"{cfg.name}: {r.outcome}" + (f" in {r.failed_phase} ({r.reason})" if r.failed_phase else "")
          + f", {r.probes_sent} probes, {r.virtual_time:.3f} s virtual, {r.bandwidth_kbps:.2f} KB/s")
    return EXIT_OK if r.outcome == "success" else EXIT_ATTACK_FAILED


def parse_values(raw: str) -> list:
    values = [yaml.safe_load(v) for v in raw.split(",") if v.strip()]
    if not values:
        raise UsageError("--values needs at least one value")
    return values


def cmd_sweep(args) -> int:
    values = parse_values(args.values or "")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    cfg = load_config(args.config, args.set, args.seed)
    field_type(ScenarioConfig, args.axis)
    rows = run_sweep(cfg, args.axis, values, args.trials)
    out = out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", encoding="utf-8") as fh:
        write_table(fh, "sweep", [args.axis, "trials", "successes", "mean_virtual_time",
                                  "mean_probes", "mean_kbps"], rows)
    for row in rows:
        print(f"{args.axis}={row.value}: {row.successes}/{row.trials} succeeded, "
              f"{row.mean_virtual_time:.2f} s mean virtual time")
    return EXIT_OK


def verdict(lengths: list[int]) -> str:
    """Classify one observation window with the default response sizes."""
    if not lengths:
        return "silence"
    if 56 in lengths and 68 in lengths:
        return "ambiguous"
    for size, name in ((80, "sack"), (68, "challenge"), (56, "rst")):
        if size in lengths:
            return name
    return "other"


def replay(frames, cfg: ScenarioConfig) -> list[tuple[int, str, str]]:
    """Rebuild the attacker's observation windows from a recorded trace.

    A window opens at every frame the attacker transmitted towards the AP and
    lasts one observation timeout.
    """
    attacker, bssid = cfg.attacker.mac, cfg.bssid.lower()
    victim = (cfg.inference.target_mac or cfg.victim.mac).lower()
    timeout = observe_timeout_us(cfg)
    limit = cfg.inference.control_len_max
    starts = [f.t for f in frames if f.addr2 == attacker and f.addr1 == bssid and f.kind == "Data"]
    rows = []
    for t0 in starts:
        t1 = t0 + timeout
        lengths = [f.observable_len for f in frames
                   if t0 <= f.t < t1 and f.addr1 == victim and not f.amsdu and f.observable_len <= limit]
        rows.append((t0, observation_label(lengths), verdict(lengths)))
    return rows


def cmd_replay(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    try:
        frames = read_trace(args.trace)
    except OSError as exc:
        raise UsageError(f"cannot read trace {args.trace}: {exc.strerror}") from None
    rows = replay(frames, cfg)
    out = out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "replay.csv", "w", encoding="utf-8") as fh:
        write_table(fh, "replay", ["t", "observation", "verdict"], rows)
    counts = Counter(v for _, _, v in rows)
    print(f"{len(rows)} observation windows: "
          + (", ".join(f"{k}={counts[k]}" for k in sorted(counts)) or "none"))
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.summaries)
    paths = sorted(src.rglob("summary*.json")) if src.is_dir() else []
    if not paths:
        raise UsageError(f"no summaries found under {src}")
    docs = [read_json_doc(p, "summary") for p in paths]
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)

    times = [d["virtual_time"] for d in docs if d["outcome"] == "success"]
    with open(out / "ecdf.csv", "w", encoding="utf-8") as fh:
        write_table(fh, "ecdf", ["virtual_time", "fraction"], ecdf(times) if times else [])

    rows = []
    for phase in PHASES:
        spent = [d["phase_times"][phase] for d in docs if phase in d["phase_times"]]
        failures = sum(d["failed_phase"] == phase for d in docs)
        if spent or failures:
            mean = sum(spent) / len(spent) if spent else 0.0
            rows.append((phase, len(spent), mean, failures))
    with open(out / "phases.csv", "w", encoding="utf-8") as fh:
        write_table(fh, "phases", ["phase", "runs", "mean_seconds", "failures"], rows)
    print(f"{len(docs)} summaries, {len(times)} successful")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wifihijack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_flags(p, config_required: bool):
        p.add_argument("--config", required=config_required, help="scenario YAML or JSON file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field by dotted path (repeatable)")
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./out)")

    p = sub.add_parser("run", help="run one scenario")
    scenario_flags(p, True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep one config field over several values")
    scenario_flags(p, True)
    p.add_argument("--axis", required=True, help="dotted config path, e.g. channel.loss_prob")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--trials", type=int, default=10)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="classify observation windows of a recorded trace")
    scenario_flags(p, False)
    p.add_argument("--trace", required=True, help="frame trace written by 'run'")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("report", help="aggregate run summaries into ECDF and phase tables")
    p.add_argument("summaries", help="directory searched recursively for summary*.json")
    p.add_argument("--out", help="output directory (default: the summaries directory)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    try:
        return args.func(args)
    except TraceFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ConfigError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""Command line: ``run``, ``sweep`` and ``compare``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import MODES, RELAY_MODES, ConfigError, SimConfig, config_from_mapping, load_config
from .metrics import SUMMARY_COLUMNS, summarize, write_report, write_summary
from .sim import run_simulation

# flag dest -> SimConfig field
_OVERRIDES = {
    "scenario": "scenario_id",
    "mode": "mode",
    "sigma_m": "sigma_m",
    "seed": "seed",
    "duration_tti": "duration_tti",
    "warmup_tti": "warmup_tti",
    "reslice_period_tti": "reslice_period_tti",
    "n_rsu": "n_rsu",
    "highway_length_m": "highway_length_m",
    "offload_threshold_db": "offload_threshold_db",
    "squared_similarity": "squared_similarity",
    "relay_mode": "relay_mode",
    "out": "output_dir",
}


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _str_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3))
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--sigma-m", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--duration-tti", type=int)
    p.add_argument("--warmup-tti", type=int)
    p.add_argument("--reslice-period-tti", type=int)
    p.add_argument("--n-rsu", type=int)
    p.add_argument("--highway-length-m", type=float)
    p.add_argument("--offload-threshold-db", type=float)
    p.add_argument("--squared-similarity", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--relay-mode", choices=RELAY_MODES, help="baseline 2 relay model")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="v2xsim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single simulation run")
    _common(p)

    p = sub.add_parser("sweep", help="scenario x mode x sigma x seed grid")
    _common(p)
    p.add_argument("--scenarios", type=_int_list)
    p.add_argument("--modes", type=_str_list)
    p.add_argument("--sigmas", type=_float_list)
    p.add_argument("--seeds", type=_int_list)

    p = sub.add_parser("compare", help="run several modes over shared seeds")
    _common(p)
    p.add_argument("--modes", type=_str_list, default=list(MODES))
    p.add_argument("--sigmas", type=_float_list, help="sigma values for the proposed mode")
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    return parser


def config_from_args(args: argparse.Namespace) -> SimConfig:
    overrides = {}
    for dest, key in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    if args.config:
        return load_config(args.config, overrides)
    return config_from_mapping(overrides)


def manifest(config: SimConfig) -> dict:
    return {"version": __version__, "config": config.to_dict()}


def run_one(config: SimConfig) -> dict:
    """Run, write CSVs and the manifest under ``config.output_dir`` and return the summary row."""
    report = run_simulation(config)
    out = Path(config.output_dir)
    write_report(report, out)
    (out / "run_manifest.json").write_text(json.dumps(manifest(config), indent=1, sort_keys=True))
    return summarize(report)


def _workers(n_cells: int) -> int:
    env = os.environ.get("V2XSIM_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_cells))


def run_many(configs: Sequence[SimConfig]) -> list[dict]:
    workers = _workers(len(configs))
    if workers == 1:
        return [run_one(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_one, configs))


def _label(mode: str, sigma: float) -> str:
    return f"proposed_sigma{sigma:g}" if mode == "proposed" else mode


def cmd_run(args) -> int:
    config = config_from_args(args)
    row = run_one(config)
    print(f"wrote {config.output_dir}: autonomous latency {row['lat_mean_ms_autonomous']:.3f} ms, "
          f"frac >= 128 kbps {row['frac_128kbps']:.3f}")
    return 0


def cmd_sweep(args) -> int:
    base = config_from_args(args)
    grid = [
        (sc, mode, sigma, seed)
        for sc in (args.scenarios or [base.scenario_id])
        for mode in (args.modes or [base.mode])
        for sigma in (args.sigmas or [base.sigma_m])
        for seed in (args.seeds or [base.seed])
    ]
    out = Path(base.output_dir)
    configs = []
    seen = set()
    for sc, mode, sigma, seed in grid:
        if mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {mode!r}")
        # sigma only matters to the proposed mode
        key = (sc, mode, sigma if mode == "proposed" else None, seed)
        if key in seen:
            continue
        seen.add(key)
        cell = out / f"s{sc}_{_label(mode, sigma)}_seed{seed}"
        configs.append(base.replace(scenario_id=sc, mode=mode, sigma_m=sigma, seed=seed, output_dir=str(cell)))
    rows = run_many(configs)
    write_summary(out / "summary.csv", rows)
    print(f"wrote {len(rows)} runs under {out}")
    return 0


def ordering_checks(by_label: dict[str, dict]) -> dict[str, bool]:
    """Latency and infotainment orderings over whichever modes are present."""
    proposed = sorted((k for k in by_label if k.startswith("proposed")),
                      key=lambda k: by_label[k]["sigma_m"])
    lat = lambda k: by_label[k]["lat_mean_ms_autonomous"]
    chain = proposed + [m for m in ("baseline2", "baseline1") if m in by_label]
    ok = True
    for a, b in zip(chain, chain[1:]):
        if a.startswith("proposed") and b.startswith("baseline"):
            ok &= lat(a) < lat(b)
        else:
            ok &= lat(a) <= lat(b)
    checks = {"latency_ordering_pass": bool(ok)}

    thr = lambda k: by_label[k]["thr_mean_bps_infotainment"]
    ilat = lambda k: by_label[k]["lat_mean_ms_infotainment"]
    mid = [k for k in proposed[:1]]
    chain = [m for m in ("baseline1",) if m in by_label] + mid + [m for m in ("baseline2",) if m in by_label]
    ok = all(thr(a) <= thr(b) and ilat(a) >= ilat(b) for a, b in zip(chain, chain[1:]))
    checks["infotainment_ordering_pass"] = bool(ok)
    return checks


def cmd_compare(args) -> int:
    base = config_from_args(args)
    modes = args.modes
    if len(modes) < 2:
        raise ConfigError("modes", "compare needs at least two modes")
    if len(set(modes)) != len(modes):
        raise ConfigError("modes", f"duplicate mode in {modes}")
    for m in modes:
        if m not in MODES:
            raise ConfigError("modes", f"unknown mode {m!r}")
    sigmas = args.sigmas or [base.sigma_m]
    if len(set(sigmas)) != len(sigmas):
        raise ConfigError("sigmas", "duplicate sigma")
    out = Path(base.output_dir)

    cells = []
    for seed in args.seeds:
        for mode in modes:
            for sigma in (sigmas if mode == "proposed" else [base.sigma_m]):
                label = _label(mode, sigma)
                cfg = base.replace(mode=mode, sigma_m=sigma, seed=seed, output_dir=str(out / label / f"seed{seed}"))
                cells.append((seed, label, cfg))
    rows = run_many([c for _, _, c in cells])

    labels = list(dict.fromkeys(label for _, label, _ in cells))
    table = []
    failures = 0
    for seed in args.seeds:
        by_label = {label: row for (s, label, _), row in zip(cells, rows) if s == seed}
        joined = {"seed": seed}
        for label in labels:
            for col in SUMMARY_COLUMNS[5:]:
                joined[f"{label}.{col}"] = by_label[label][col]
        checks = ordering_checks(by_label)
        joined.update(checks)
        for name, passed in checks.items():
            if not passed:
                failures += 1
                print(f"seed {seed}: {name} failed", file=sys.stderr)
        table.append(joined)
    columns = ["seed"] + [f"{label}.{c}" for label in labels for c in SUMMARY_COLUMNS[5:]] + [
        "latency_ordering_pass", "infotainment_ordering_pass"]
    out.mkdir(parents=True, exist_ok=True)
    write_summary(out / "comparison.csv", table, columns)
    print(f"wrote {out / 'comparison.csv'} ({len(rows)} runs, {failures} ordering failures)")
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "compare": cmd_compare}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on unknown flags
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"v2xsim: configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

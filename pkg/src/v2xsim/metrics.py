"""Per-slice sample collection, empirical distributions, summaries and CSV export."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .traffic import NOMINAL_PACKET_BITS, SLICES, packet_latency

TARGET_SAFETY_BPS = 128_000
LATENCY_BUDGET_MS = 100
RELIABILITY_TARGET = 0.99999


# -- distributions ---------------------------------------------------------

def _as_counts(samples) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(samples, Mapping):
        items = sorted((float(k), int(c)) for k, c in samples.items() if c > 0)
        values = np.array([k for k, _ in items], dtype=float)
        counts = np.array([c for _, c in items], dtype=np.int64)
    else:
        values, counts = np.unique(np.asarray(samples, dtype=float), return_counts=True)
    if values.size == 0:
        raise ValueError("no samples")
    return values, counts


def cdf(samples) -> list[tuple[float, float]]:
    """Empirical CDF at each distinct sample value.

    ``samples`` is a sequence of values or a ``{value: count}`` histogram.
    """
    values, counts = _as_counts(samples)
    cum = np.cumsum(counts)
    prob = cum / cum[-1]
    prob[-1] = 1.0
    return [(float(v), float(p)) for v, p in zip(values, prob)]


def ccdf(samples) -> list[tuple[float, float]]:
    """Exceedance probability P(X > v) at each distinct sample value."""
    values, counts = _as_counts(samples)
    total = counts.sum()
    above = total - np.cumsum(counts)
    return [(float(v), float(a / total)) for v, a in zip(values, above)]


def cdf_at(samples, value: float) -> float:
    values, counts = _as_counts(samples)
    return float(counts[values <= value].sum() / counts.sum())


def ccdf_at(samples, value: float) -> float:
    return 1.0 - cdf_at(samples, value)


def hist_mean(hist: Mapping) -> float:
    values, counts = _as_counts(hist)
    return float((values * counts).sum() / counts.sum())


def hist_quantile(hist: Mapping, q: float) -> float:
    values, counts = _as_counts(hist)
    cum = np.cumsum(counts) / counts.sum()
    return float(values[np.searchsorted(cum, q - 1e-12)])


# -- report ----------------------------------------------------------------

@dataclass
class MetricsReport:
    config: dict
    window_s: float
    latency_hist: dict = field(default_factory=dict)      # slice -> {ms: count}
    queue_hist: dict = field(default_factory=dict)        # slice -> {packets: count}
    queue_bits_mean: dict = field(default_factory=dict)   # slice -> mean bits per queue sample
    throughput_bps: dict = field(default_factory=dict)    # slice -> {vehicle: bps}
    delivered: dict = field(default_factory=dict)         # slice -> packets
    failed: dict = field(default_factory=dict)            # slice -> packets
    leaders_per_km: list = field(default_factory=list)    # one entry per re-slice epoch
    clustered_share: dict = field(default_factory=dict)   # vehicle -> fraction of epochs clustered
    warnings: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        raw = json.loads(text)
        # JSON object keys are strings; restore the integer keys
        for name in ("latency_hist", "queue_hist", "throughput_bps"):
            raw[name] = {s: {int(k): v for k, v in d.items()} for s, d in raw[name].items()}
        raw["clustered_share"] = {int(k): v for k, v in raw["clustered_share"].items()}
        return cls(**raw)


class MetricsCollector:
    """Accumulates samples during a run. Only calls with ``in_window`` count."""

    def __init__(self, n_vehicles: int):
        self.latency = [Counter(), Counter()]
        self.queue_counts = [np.zeros(8, dtype=np.int64), np.zeros(8, dtype=np.int64)]
        self.queue_bits_sum = [0, 0]
        self.queue_samples = [0, 0]
        self.served_bits = np.zeros((n_vehicles, 2), dtype=np.int64)
        self.delivered = [0, 0]
        self.failed = [0, 0]
        self.leaders_per_km: list[float] = []
        self.clustered_epochs = np.zeros(n_vehicles, dtype=np.int64)
        self.n_epochs = 0
        self.warnings: Counter = Counter()

    def record_packets(self, packets) -> None:
        for p in packets:
            if p.failed:
                self.failed[p.slice] += 1
            else:
                self.delivered[p.slice] += 1
                self.latency[p.slice][packet_latency(p)] += 1

    def record_served(self, vehicle: int, bits_by_slice) -> None:
        self.served_bits[vehicle, 0] += bits_by_slice[0]
        self.served_bits[vehicle, 1] += bits_by_slice[1]

    def record_queues(self, slice: int, bits: np.ndarray) -> None:
        pkts = -(-bits // NOMINAL_PACKET_BITS[slice])
        counts = np.bincount(pkts)
        acc = self.queue_counts[slice]
        if counts.size > acc.size:
            acc = np.concatenate([acc, np.zeros(max(counts.size, 2 * acc.size) - acc.size, dtype=np.int64)])
            self.queue_counts[slice] = acc
        acc[: counts.size] += counts
        self.queue_bits_sum[slice] += int(bits.sum())
        self.queue_samples[slice] += int(bits.size)

    def record_epoch(self, n_leaders: int, length_km: float, clustered_ids) -> None:
        self.leaders_per_km.append(n_leaders / length_km)
        self.clustered_epochs[list(clustered_ids)] += 1
        self.n_epochs += 1

    def finish(self, config: dict, window_s: float, video_vehicles, all_vehicles) -> MetricsReport:
        r = MetricsReport(config=config, window_s=window_s)
        populations = (list(video_vehicles), list(all_vehicles))
        for s, name in enumerate(SLICES):
            r.latency_hist[name] = {int(k): int(v) for k, v in sorted(self.latency[s].items())}
            r.queue_hist[name] = {int(k): int(c) for k, c in enumerate(self.queue_counts[s]) if c}
            n = self.queue_samples[s]
            r.queue_bits_mean[name] = self.queue_bits_sum[s] / n if n else 0.0
            r.throughput_bps[name] = {int(v): float(self.served_bits[v, s] / window_s) for v in populations[s]}
            r.delivered[name] = int(self.delivered[s])
            r.failed[name] = int(self.failed[s])
        r.leaders_per_km = [float(x) for x in self.leaders_per_km]
        if self.n_epochs:
            r.clustered_share = {int(v): float(self.clustered_epochs[v] / self.n_epochs) for v in all_vehicles}
        r.warnings = {k: int(v) for k, v in sorted(self.warnings.items()) if v}
        return r


# -- summary ---------------------------------------------------------------

SUMMARY_COLUMNS = [
    "scenario_id", "mode", "sigma_m", "seed", "duration_tti",
    "lat_mean_ms_autonomous", "lat_p99_ms_autonomous",
    "lat_mean_ms_infotainment", "lat_p99_ms_infotainment",
    "queue_mean_pkts_autonomous", "queue_mean_pkts_infotainment",
    "queue_mean_bits_autonomous", "queue_mean_bits_infotainment",
    "thr_mean_bps_autonomous", "thr_mean_bps_infotainment",
    "leaders_per_km_mean",
    "frac_128kbps", "frac_128kbps_clustered",
    "frac_within_100ms",
    "failure_ratio_autonomous", "reliability_autonomous", "meets_reliability_target",
    "failure_ratio_infotainment",
]


def _safe(fn, hist, default=float("nan")):
    return fn(hist) if hist else default


def summarize(report: MetricsReport) -> dict[str, Any]:
    cfg = report.config
    row: dict[str, Any] = {k: cfg.get(k) for k in ("scenario_id", "mode", "sigma_m", "seed", "duration_tti")}
    for name in SLICES:
        lat = report.latency_hist.get(name, {})
        row[f"lat_mean_ms_{name}"] = _safe(hist_mean, lat)
        row[f"lat_p99_ms_{name}"] = _safe(lambda h: hist_quantile(h, 0.99), lat)
        row[f"queue_mean_pkts_{name}"] = _safe(hist_mean, report.queue_hist.get(name, {}))
        row[f"queue_mean_bits_{name}"] = report.queue_bits_mean.get(name, float("nan"))
        thr = list(report.throughput_bps.get(name, {}).values())
        row[f"thr_mean_bps_{name}"] = float(np.mean(thr)) if thr else float("nan")
        d, f = report.delivered.get(name, 0), report.failed.get(name, 0)
        row[f"failure_ratio_{name}"] = f / (d + f) if d + f else 0.0

    lp = report.leaders_per_km
    row["leaders_per_km_mean"] = float(np.mean(lp)) if lp else 0.0

    safety = report.throughput_bps.get("autonomous", {})
    row["frac_128kbps"] = frac_at_least(safety.values(), TARGET_SAFETY_BPS)
    clustered = [bps for v, bps in safety.items() if report.clustered_share.get(v, 0.0) > 0.5]
    row["frac_128kbps_clustered"] = frac_at_least(clustered, TARGET_SAFETY_BPS) if clustered else row["frac_128kbps"]

    lat = report.latency_hist.get("autonomous", {})
    row["frac_within_100ms"] = cdf_at(lat, LATENCY_BUDGET_MS) if lat else float("nan")
    row["reliability_autonomous"] = 1.0 - row["failure_ratio_autonomous"]
    row["meets_reliability_target"] = bool(row["reliability_autonomous"] >= RELIABILITY_TARGET - 1e-12)
    return row


def frac_at_least(values, threshold: float) -> float:
    vals = np.asarray(list(values), dtype=float)
    if vals.size == 0:
        return float("nan")
    # bits/s are exact ratios of integers; allow for float rounding of the division
    return float(np.mean(vals >= threshold * (1 - 1e-12)))


# -- export ----------------------------------------------------------------

def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else repr(v))
    return str(v)


def write_summary(path: Path, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    columns = list(columns or SUMMARY_COLUMNS)
    _write_rows(Path(path), columns, ([r.get(c, "") for c in columns] for r in rows))


def write_report(report: MetricsReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in SLICES:
        thr = list(report.throughput_bps.get(name, {}).values())
        p = out / f"cdf_throughput_{name}.csv"
        _write_rows(p, ["value_bps", "prob"], cdf(thr) if thr else [])
        written.append(p)
        lat = report.latency_hist.get(name, {})
        p = out / f"ccdf_latency_{name}.csv"
        _write_rows(p, ["latency_ms", "exceed_prob"], ccdf(lat) if lat else [])
        written.append(p)
        q = report.queue_hist.get(name, {})
        p = out / f"cdf_queuelen_{name}.csv"
        _write_rows(p, ["queue_len_packets", "prob"], cdf(q) if q else [])
        written.append(p)
    p = out / "summary.csv"
    write_summary(p, [summarize(report)])
    written.append(p)
    p = out / "report.json"
    p.write_text(report.to_json())
    written.append(p)
    return written

"""Position-error metrics: baseline vs two-stage estimates, per condition,
with a paired bootstrap interval on the median improvement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import Rng
from .pipeline import parse_predictions


@dataclass(frozen=True)
class ConditionMetrics:
    """Error summary for one lighting condition over the evaluated records."""

    condition: str
    n_records: int
    baseline_mean: float
    baseline_median: float
    hmdn_mean: float
    hmdn_median: float
    improvement_pct: float  # 100 * (baseline median - hmdn median) / baseline median
    ci_low: float           # bootstrap 95% interval of improvement_pct
    ci_high: float


def _euclidean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((a - b) ** 2, axis=-1))


def paired_errors(records) -> dict:
    """condition -> (baseline errors, hmdn errors), paired record-by-record."""
    buckets: dict = {}
    for r in records:
        b = float(_euclidean(np.asarray(r.baseline_estimate), np.asarray(r.truth)))
        h = float(_euclidean(np.asarray(r.hmdn.estimate), np.asarray(r.truth)))
        buckets.setdefault(r.condition, []).append((b, h))
    return {
        cond: (np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))
        for cond, pairs in buckets.items()
    }


def _improvement_pct(b_median, h_median):
    with np.errstate(divide="ignore", invalid="ignore"):
        pct = 100.0 * (b_median - h_median) / b_median
    return np.where(b_median > 0, pct, 0.0)


def bootstrap_improvement(b_err, h_err, rng: Rng, n_resamples: int = 10_000):
    """95% percentile interval of the median-error improvement (paired).

    Resample indices come from floor(u * n) over the provided stream, one
    block per resample matrix; medians are recomputed on each resample.
    """
    n = b_err.shape[0]
    u = rng.uniform(n_resamples * n).reshape(n_resamples, n)
    idx = np.minimum((u * n).astype(int), n - 1)
    b_med = np.median(b_err[idx], axis=1)
    h_med = np.median(h_err[idx], axis=1)
    pct = _improvement_pct(b_med, h_med)
    lo, hi = np.percentile(pct, [2.5, 97.5])
    return float(lo), float(hi)


def compute_metrics(records, master_seed: int, n_resamples: int = 10_000) -> list:
    """Per-condition metrics; bootstrap streams derive from the master seed
    and the condition name, so re-runs reproduce the intervals exactly."""
    by_condition = paired_errors(records)
    base = Rng(master_seed)
    out = []
    for cond in sorted(by_condition):
        b_err, h_err = by_condition[cond]
        lo, hi = bootstrap_improvement(
            b_err, h_err, base.spawn("bootstrap", cond), n_resamples
        )
        out.append(
            ConditionMetrics(
                condition=cond,
                n_records=b_err.shape[0],
                baseline_mean=float(b_err.mean()),
                baseline_median=float(np.median(b_err)),
                hmdn_mean=float(h_err.mean()),
                hmdn_median=float(np.median(h_err)),
                improvement_pct=float(
                    _improvement_pct(np.median(b_err), np.median(h_err))
                ),
                ci_low=lo,
                ci_high=hi,
            )
        )
    return out


def metrics_from_dump(path, n_resamples: int = 10_000) -> list:
    """Recompute the metrics from a predictions dump file alone.

    The master seed is read back from the dump header, so the bootstrap
    intervals match a live evaluation over the same records.
    """
    meta = dump_metadata(path)
    records = parse_predictions(path)
    return compute_metrics(records, int(meta["master_seed"]), n_resamples)


def dump_metadata(path) -> dict:
    """Key/value header lines (# key value ...) of a predictions dump."""
    meta: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln in fh:
            if not ln.startswith("#"):
                break
            parts = ln[1:].split()
            if len(parts) >= 2 and len(parts) % 2 == 0:
                for k, v in zip(parts[0::2], parts[1::2]):
                    meta[k] = v
    return meta


def format_metrics_table(metrics) -> str:
    """Human-readable fixed-width table."""
    lines = [
        f"{'condition':<14} {'method':<9} {'n':>4} {'mean_err':>9} {'median_err':>11} "
        f"{'improve%':>9} {'ci95_low':>9} {'ci95_high':>9}"
    ]
    for m in metrics:
        lines.append(
            f"{m.condition:<14} {'baseline':<9} {m.n_records:>4} {m.baseline_mean:>9.4f} "
            f"{m.baseline_median:>11.4f} {'':>9} {'':>9} {'':>9}"
        )
        lines.append(
            f"{m.condition:<14} {'hmdn':<9} {m.n_records:>4} {m.hmdn_mean:>9.4f} "
            f"{m.hmdn_median:>11.4f} {m.improvement_pct:>9.3f} {m.ci_low:>9.3f} {m.ci_high:>9.3f}"
        )
    return "\n".join(lines)


def write_metrics_csv(metrics, path) -> None:
    """Machine-readable export: one row per (condition, method)."""

    def fmt(x: float) -> str:
        return format(float(x), ".17g")

    lines = ["condition,method,n_records,mean_error,median_error,improvement_pct,ci_low,ci_high"]
    for m in metrics:
        lines.append(
            f"{m.condition},baseline,{m.n_records},{fmt(m.baseline_mean)},"
            f"{fmt(m.baseline_median)},,,"
        )
        lines.append(
            f"{m.condition},hmdn,{m.n_records},{fmt(m.hmdn_mean)},{fmt(m.hmdn_median)},"
            f"{fmt(m.improvement_pct)},{fmt(m.ci_low)},{fmt(m.ci_high)}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

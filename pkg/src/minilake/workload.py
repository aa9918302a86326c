"""Reasonable-scale workload analysis.

Empirical CCDFs, fixed-xmin power-law fitting, seeded power-law sampling and
the cumulative cost-share curve used to argue that most of a warehouse bill is
spent on small queries.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateTail, EmptyInput, InsufficientTail, InvalidAlpha, MissingCosts, WorkloadError

# 80th percentile of bytes scanned reported for one design partner.
P80_BYTES = 750 * 1000 * 1000


@dataclass(frozen=True)
class WorkloadSample:
    values: tuple[float, ...]
    costs: tuple[float, ...] | None = None

    def __init__(self, values: Sequence[float], costs: Sequence[float] | None = None):
        vals = tuple(float(v) for v in values)
        if any(not (v > 0) or math.isinf(v) for v in vals):
            raise WorkloadError("workload values must be positive and finite")
        cs = None
        if costs is not None:
            cs = tuple(float(c) for c in costs)
            if len(cs) != len(vals):
                raise WorkloadError(f"{len(cs)} costs for {len(vals)} values")
            if any(not (c >= 0) or math.isinf(c) for c in cs):
                raise WorkloadError("costs must be non-negative and finite")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "costs", cs)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    xmin: float
    n_tail: int

    def to_json(self) -> dict:
        return {"alpha": self.alpha, "xmin": self.xmin, "n_tail": self.n_tail}


def _values(sample) -> tuple[float, ...]:
    return sample.values if isinstance(sample, WorkloadSample) else WorkloadSample(sample).values


def empirical_ccdf(values) -> list[tuple[float, float]]:
    """``(x, P(X >= x))`` at every distinct value, ascending."""
    xs = sorted(_values(values))
    n = len(xs)
    if n == 0:
        raise EmptyInput("empirical CCDF of an empty sample")
    points = []
    i = 0
    while i < n:
        x = xs[i]
        points.append((x, (n - i) / n))
        i = bisect.bisect_right(xs, x, i)
    return points


def fit_power_law(sample, xmin: float) -> PowerLawFit:
    """Continuous MLE ``alpha = 1 + n / sum(ln(x / xmin))`` over the tail ``x >= xmin``."""
    if not xmin > 0:
        raise WorkloadError("xmin must be positive")
    tail = [x for x in _values(sample) if x >= xmin]
    if not tail:
        raise InsufficientTail(f"no samples at or above xmin={xmin:g}")
    above = sum(1 for x in tail if x > xmin)
    if above == 0:
        raise DegenerateTail(f"every tail sample equals xmin={xmin:g}")
    if above < 2:
        raise InsufficientTail(f"need at least 2 samples above xmin={xmin:g}, found {above}")
    log_sum = math.fsum(math.log(x / xmin) for x in tail)
    return PowerLawFit(1.0 + len(tail) / log_sum, float(xmin), len(tail))


def inverse_cdf(u, alpha: float, xmin: float):
    return xmin * (1.0 - u) ** (-1.0 / (alpha - 1.0))


def sample_power_law(alpha: float, xmin: float, n: int, seed: int) -> list[float]:
    if not alpha > 1:
        raise InvalidAlpha(f"alpha must exceed 1, got {alpha}")
    if n < 1:
        raise WorkloadError("n must be at least 1")
    u = np.random.default_rng(seed).random(n)
    return inverse_cdf(u, alpha, xmin).tolist()


def ccdf_loglog_slope(values, min_count: int = 10) -> float:
    """Least-squares slope of log P against log x over the empirical CCDF.

    Points backed by fewer than ``min_count`` samples at or beyond them are
    dropped: the extreme tail is a handful of observations and pure noise.
    """
    pts = empirical_ccdf(values)
    n = len(_values(values))
    keep = [(x, p) for x, p in pts if p * n >= min_count]
    if len(keep) < 2:
        raise InsufficientTail("too few CCDF points for a slope")
    lx = np.log([x for x, _ in keep])
    lp = np.log([p for _, p in keep])
    slope, _ = np.polyfit(lx, lp, 1)
    return float(slope)


def _ordered_costs(sample: WorkloadSample) -> list[float]:
    if sample.costs is None:
        raise MissingCosts("cost share needs per-query costs")
    if not sample.values:
        raise EmptyInput("cost share of an empty sample")
    order = sorted(range(len(sample.values)), key=lambda i: sample.values[i])
    return [sample.costs[i] for i in order]


def cost_share_curve(sample: WorkloadSample) -> list[tuple[float, float]]:
    """``(100 k / n, share of cost spent by the k smallest queries)`` for k = 1..n."""
    costs = _ordered_costs(sample)
    cumulative = np.cumsum(costs).tolist()
    total = cumulative[-1]
    if total <= 0:
        raise WorkloadError("total cost is zero")
    n = len(costs)
    return [(100.0 * (k + 1) / n, c / total) for k, c in enumerate(cumulative)]


def share_at(sample: WorkloadSample, percentile: float) -> float:
    """Cost share of the ``ceil(p n / 100)`` smallest queries."""
    if not 0 < percentile <= 100:
        raise WorkloadError("percentile must be in (0, 100]")
    curve = cost_share_curve(sample)
    k = math.ceil(percentile * len(curve) / 100 - 1e-9)
    return curve[max(k, 1) - 1][1]


# -- demo datasets --------------------------------------------------------------

DEMO_ALPHA = 2.5
# minimum billed compute per query and scan throughput of the demo warehouse
MIN_BILLED_S = 60.0
SCAN_BYTES_PER_S = 50e6


def demo_bytes_xmin(alpha: float = DEMO_ALPHA) -> float:
    """xmin placing the 80th percentile of a power law at ``P80_BYTES``."""
    return P80_BYTES * 0.2 ** (1.0 / (alpha - 1.0))


def heavy_tailed_demo(n: int = 10_000, seed: int = 2024, alpha: float = DEMO_ALPHA) -> WorkloadSample:
    """Bytes scanned per query plus the credits each query is billed.

    Bytes follow a power law whose 80th percentile is 750 MB. Each query is
    billed ``max(MIN_BILLED_S, bytes / SCAN_BYTES_PER_S)`` seconds, so the many
    small queries pay the minimum and the bill is dominated by their count.
    """
    values = sample_power_law(alpha, demo_bytes_xmin(alpha), n, seed)
    costs = [max(MIN_BILLED_S, b / SCAN_BYTES_PER_S) / 3600.0 for b in values]
    return WorkloadSample(values, costs)


def query_time_demo(n: int = 5_000, seed: int = 7) -> dict[str, WorkloadSample]:
    """Query-time samples (seconds) for three synthetic companies."""
    specs = {"startup": (2.6, 0.8), "scaleup": (2.2, 1.0), "public": (1.9, 1.5)}
    return {
        name: WorkloadSample(sample_power_law(a, xmin, n, seed + i))
        for i, (name, (a, xmin)) in enumerate(specs.items())
    }


def analyze(sample: WorkloadSample, xmin: float | None = None) -> dict:
    """Report with CCDF points, the fit and (when costs exist) the cost-share curve."""
    if not sample.values:
        raise EmptyInput("empty workload")
    xmin = min(sample.values) if xmin is None else xmin
    report: dict = {
        "n": len(sample),
        "ccdf": [list(p) for p in empirical_ccdf(sample)],
        "fit": fit_power_law(sample, xmin).to_json(),
    }
    if sample.costs is not None:
        report["cost_share"] = [list(p) for p in cost_share_curve(sample)]
        report["share_at_80"] = share_at(sample, 80)
    return report

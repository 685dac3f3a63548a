"""Kruskal-Wallis tests, medians and rank counts for comparing methods."""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

ALPHA = 0.01
_EPS = 1e-16
_MAX_ITER = 10_000


@dataclass(frozen=True)
class RunResult:
    dataset: str
    method: str
    run: int
    split: str
    accuracy: float

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        if not 0 <= self.accuracy <= 1:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")


@dataclass(frozen=True)
class KWOutcome:
    H: float
    df: int
    p: float
    tie_correction: float


# ---------------------------------------------------------------------------
# chi-square survival via the regularized upper incomplete gamma function


def _gamma_series(a, x):
    # lower regularized P(a, x), series form; converges fast for x < a + 1
    term = total = 1.0 / a
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cfrac(a, x):
    # upper regularized Q(a, x), modified Lentz continued fraction; for x >= a + 1
    tiny = 1e-300
    b = x + 1 - a
    c = 1 / tiny
    d = 1 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1 / d
        delta = d * c
        h *= delta
        if abs(delta - 1) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammaincc(a, x):
    """Regularized upper incomplete gamma ``Q(a, x)``."""
    if x < 0 or a <= 0:
        raise ValueError("gammaincc needs a > 0 and x >= 0")
    if x == 0:
        return 1.0
    if x < a + 1:
        return max(0.0, 1.0 - _gamma_series(a, x))
    return _gamma_cfrac(a, x)


def chi2_sf(x, df):
    """Upper tail probability of a chi-square variable with ``df`` degrees of freedom."""
    if x < 0:
        raise ValueError("chi2_sf needs x >= 0")
    if df < 1:
        raise ValueError("df must be at least 1")
    return gammaincc(df / 2.0, x / 2.0)


# ---------------------------------------------------------------------------
# Kruskal-Wallis


def midranks(values):
    """1-based ranks with ties sharing the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], len(values)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    return ranks, ends - starts


def kruskal_wallis(groups) -> KWOutcome:
    """Tie-corrected Kruskal-Wallis H test with a chi-square p-value.

    If every observation is identical the statistic is undefined; ``H = 0``
    and ``p = 1`` are returned.
    """
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(groups) < 2:
        raise ValueError("Kruskal-Wallis needs at least two groups")
    if any(len(g) == 0 for g in groups):
        raise ValueError("every group must be non-empty")
    pooled = np.concatenate(groups)
    n = len(pooled)
    df = len(groups) - 1
    ranks, tie_sizes = midranks(pooled)
    correction = 1.0 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / (n ** 3 - n)
    if correction <= 0:
        return KWOutcome(0.0, df, 1.0, 1.0)
    bounds = np.cumsum([0] + [len(g) for g in groups])
    h = sum(ranks[a:b].sum() ** 2 / (b - a) for a, b in zip(bounds[:-1], bounds[1:]))
    h = 12.0 / (n * (n + 1)) * h - 3 * (n + 1)
    h = max(float(h) / correction, 0.0)
    return KWOutcome(h, df, chi2_sf(h, df), correction)


# ---------------------------------------------------------------------------
# aggregation


def median(values):
    v = sorted(values)
    if not v:
        raise ValueError("median of an empty list")
    mid = len(v) // 2
    return v[mid] if len(v) % 2 else 0.5 * (v[mid - 1] + v[mid])


def aggregate_medians(results, split="test"):
    """Median accuracy per ``(dataset, method)`` over the runs of one split."""
    groups = defaultdict(list)
    for r in results:
        if r.split == split:
            groups[(r.dataset, r.method)].append(r.accuracy)
    return {key: median(v) for key, v in sorted(groups.items())}


def rank_summary(table, methods=None, places=3, tol=1e-12):
    """Count how often each method places 1st, 2nd, 3rd across datasets.

    ``table`` maps ``dataset -> {method: score}``. Ranking is competition
    style: tied scores share a place and the following places are skipped.
    Datasets missing any of ``methods`` are skipped with a warning.
    """
    if methods is None:
        methods = sorted({m for row in table.values() for m in row})
    counts = {m: {p: 0 for p in range(1, places + 1)} for m in methods}
    for dataset, row in table.items():
        missing = [m for m in methods if m not in row]
        if missing:
            log.warning("skipping %s: no score for %s", dataset, ", ".join(missing))
            continue
        for m in methods:
            place = 1 + sum(1 for o in methods if row[o] > row[m] + tol)
            if place <= places:
                counts[m][place] += 1
    return counts


# ---------------------------------------------------------------------------
# pairwise significance


@dataclass
class SignificanceMatrix:
    methods: list
    p: np.ndarray
    # +1 when the row method has the higher median, -1 when lower, 0 when equal
    orientation: np.ndarray
    alpha: float = ALPHA

    @property
    def significant(self):
        return self.p < self.alpha


def significance_matrix(runs, alpha=ALPHA) -> SignificanceMatrix:
    """Pairwise two-group Kruskal-Wallis p-values between methods.

    ``runs`` maps ``method -> per-run accuracies`` for one problem and split.
    """
    methods = list(runs)
    for m in methods:
        if len(runs[m]) < 2:
            raise ValueError(f"method {m} needs at least 2 runs")
    k = len(methods)
    p = np.ones((k, k))
    orient = np.zeros((k, k), dtype=int)
    meds = [median(runs[m]) for m in methods]
    for i in range(k):
        for j in range(i + 1, k):
            p[i, j] = p[j, i] = kruskal_wallis([runs[methods[i]], runs[methods[j]]]).p
            orient[i, j] = int(np.sign(meds[i] - meds[j]))
            orient[j, i] = -orient[i, j]
    return SignificanceMatrix(methods, p, orient, alpha)


def combined_pvalue_table(test_runs, train_runs, alpha=ALPHA):
    """Single matrix with test p-values above the diagonal and train below.

    Methods without at least two train runs get NaN below the diagonal.
    """
    test = significance_matrix(test_runs, alpha)
    methods = test.methods
    k = len(methods)
    p = test.p.copy()
    orient = test.orientation.copy()
    have = [m for m in methods if len(train_runs.get(m, ())) >= 2]
    train = significance_matrix({m: train_runs[m] for m in have}, alpha) if len(have) >= 2 else None
    for i in range(k):
        for j in range(i):
            a, b = methods[i], methods[j]
            if train is not None and a in have and b in have:
                ia, ib = have.index(a), have.index(b)
                p[i, j], orient[i, j] = train.p[ia, ib], train.orientation[ia, ib]
            else:
                p[i, j], orient[i, j] = np.nan, 0
    np.fill_diagonal(p, np.nan)
    return SignificanceMatrix(methods, p, orient, alpha)


# ---------------------------------------------------------------------------
# report files


def write_medians_csv(path, medians):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["dataset", "method", "median_accuracy"])
        for (dataset, method), v in sorted(medians.items()):
            w.writerow([dataset, method, f"{v:.4f}"])


def write_rank_csv(path, counts):
    methods = list(counts)
    places = sorted(next(iter(counts.values()))) if counts else []
    names = {1: "First", 2: "Second", 3: "Third"}
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["place"] + methods)
        for place in places:
            w.writerow([names.get(place, str(place))] + [counts[m][place] for m in methods])


def write_pvalue_csv(path, matrix: SignificanceMatrix):
    """p-values in scientific notation; significant cells tagged ``+`` (row better) or ``-`` (row worse)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([""] + matrix.methods)
        for i, m in enumerate(matrix.methods):
            row = [m]
            for j in range(len(matrix.methods)):
                v = matrix.p[i, j]
                if i == j or np.isnan(v):
                    row.append("--")
                    continue
                tag = ""
                if v < matrix.alpha:
                    tag = "+" if matrix.orientation[i, j] > 0 else "-" if matrix.orientation[i, j] < 0 else ""
                row.append(f"{v:.2e}{tag}")
            w.writerow(row)


def read_medians_csv(path):
    """Inverse of ``write_medians_csv``: ``{(dataset, method): median}``."""
    with open(path, newline="") as f:
        return {(r["dataset"], r["method"]): float(r["median_accuracy"]) for r in csv.DictReader(f)}


def pivot(medians):
    """``{(dataset, method): v}`` to ``{dataset: {method: v}}``."""
    table = {}
    for (dataset, method), v in medians.items():
        table.setdefault(dataset, {})[method] = v
    return table

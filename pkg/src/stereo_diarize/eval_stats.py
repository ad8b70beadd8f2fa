"""Repeated train/test experiments and the statistics used to compare methods."""

from __future__ import annotations

import dataclasses
import itertools
import math
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .channel_ops import Method
from .embedding import EmbeddingSet, EmbeddingVector
from .errors import (
    DegenerateError,
    EvalError,
    ExperimentError,
    SplitError,
    ZeroVarianceError,
)
from .gmm import FitConfig, as_matrix, train_bank

EXACT_MAX_SIZE = 8


@dataclass(frozen=True)
class SplitPlan:
    train_fraction: float = 0.7
    rng_seed: int = 0
    repeats: int = 50
    kfold: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.kfold is not None and self.kfold < 2:
            raise ValueError("kfold needs at least 2 folds")

    @property
    def n_runs(self) -> int:
        return self.repeats * (self.kfold or 1)


@dataclass(frozen=True)
class RunResult:
    method: Method
    run_index: int
    predictions: Tuple[str, ...]
    truth: Tuple[str, ...]
    error_rate: float


@dataclass(frozen=True)
class StatSummary:
    u_statistic: float
    z_value: float
    p_value: float
    exact: bool = False


@dataclass
class ExperimentReport:
    methods: List[Method]
    per_method_mean_error: Dict[Method, float]
    run_results: List[RunResult]
    zscores: Dict[Method, List[float]]
    pairwise: Dict[Tuple[Method, Method], Optional[StatSummary]]
    speakers: List[str] = field(default_factory=list)

    @property
    def pairwise_p(self) -> Dict[Tuple[Method, Method], float]:
        return {k: (s.p_value if s is not None else math.nan) for k, s in self.pairwise.items()}

    def error_rates(self, method: Method) -> List[float]:
        return [r.error_rate for r in self.run_results if r.method == method]

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None or (isinstance(x, float) and math.isnan(x)) else x

        return {
            "methods": [m.value for m in self.methods],
            "speakers": list(self.speakers),
            "per_method_mean_error": {m.value: self.per_method_mean_error[m] for m in self.methods},
            "zscores": {m.value: [num(z) for z in self.zscores[m]] for m in self.methods},
            "pairwise": [
                {
                    "a": a.value,
                    "b": b.value,
                    "u_statistic": s.u_statistic if s else None,
                    "z_value": s.z_value if s else None,
                    "p_value": s.p_value if s else None,
                    "exact": s.exact if s else None,
                }
                for (a, b), s in self.pairwise.items()
            ],
            "runs": [
                {
                    "method": r.method.value,
                    "run": r.run_index,
                    "error_rate": r.error_rate,
                    "predictions": list(r.predictions),
                    "truth": list(r.truth),
                }
                for r in self.run_results
            ],
        }


# --------------------------------------------------------------------------
# Splits
# --------------------------------------------------------------------------

def _rng(*parts) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in parts]))


def _speaker_key(speaker_id: str) -> int:
    return zlib.crc32(speaker_id.encode("utf-8"))


def split_train_test(
    indices: Mapping[str, Union[int, Sequence[int]]], plan: SplitPlan, run: int
) -> Dict[str, Tuple[List[int], List[int]]]:
    """Seeded per-speaker split into floor(train_fraction * t) train items and the rest test.

    ``indices`` maps a speaker to its segment indices (or to a count t,
    meaning indices 0..t-1). Each speaker always keeps at least one test
    and one train item. With ``plan.kfold`` set, run r is fold r % k of
    repeat r // k.
    """
    fraction = Fraction(repr(plan.train_fraction))
    out = {}
    for speaker in sorted(indices):
        items = indices[speaker]
        items = list(range(items)) if isinstance(items, (int, np.integer)) else list(items)
        t = len(items)
        if t < 2:
            raise SplitError(f"speaker {speaker!r} has {t} segment(s); at least 2 are needed")
        if plan.kfold:
            repeat, fold = divmod(run, plan.kfold)
            if t < plan.kfold:
                raise SplitError(f"speaker {speaker!r} has {t} segments, fewer than {plan.kfold} folds")
            order = _rng(plan.rng_seed, repeat, _speaker_key(speaker)).permutation(t)
            folds = np.array_split(order, plan.kfold)
            test_pos = set(folds[fold].tolist())
            train = sorted(items[i] for i in range(t) if i not in test_pos)
            test = sorted(items[i] for i in test_pos)
        else:
            n_train = math.floor(fraction * t)
            n_train = min(max(n_train, 1), t - 1)
            order = _rng(plan.rng_seed, run, _speaker_key(speaker)).permutation(t)
            train = sorted(items[i] for i in order[:n_train])
            test = sorted(items[i] for i in order[n_train:])
        out[speaker] = (train, test)
    return out


# --------------------------------------------------------------------------
# Simple statistics
# --------------------------------------------------------------------------

def error_rate(predictions: Sequence, truth: Sequence) -> float:
    if len(predictions) != len(truth):
        raise EvalError(f"{len(predictions)} predictions for {len(truth)} labels")
    if not truth:
        raise EvalError("cannot compute an error rate over zero items")
    wrong = sum(1 for p, t in zip(predictions, truth) if p != t)
    return wrong / len(truth)


def zscore(values: Sequence[float]) -> List[float]:
    """Standardise with the sample (n - 1) standard deviation."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 2:
        raise EvalError("zscore needs at least two values")
    centred = v - v.mean()
    sd = math.sqrt(float(np.dot(centred, centred)) / (v.shape[0] - 1))
    if sd == 0.0 or np.all(v == v[0]):
        raise ZeroVarianceError("values have zero variance")
    return (centred / sd).tolist()


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the average of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.shape[0])
    sorted_vals = values[order]
    start = 0
    n = values.shape[0]
    while start < n:
        stop = start + 1
        while stop < n and sorted_vals[stop] == sorted_vals[start]:
            stop += 1
        ranks[order[start:stop]] = (start + stop + 1) / 2.0
        start = stop
    return ranks


def u_distribution(n: int, m: int) -> List[int]:
    """Counts of arrangements giving U = 0..n*m (Gaussian binomial coefficients)."""
    k, other = min(n, m), max(n, m)
    # the multiply step briefly overshoots the final degree by i
    coeffs = [1] + [0] * (n * m + k)
    deg = 0
    for i in range(1, k + 1):
        shift = other + i
        for d in range(deg + shift, shift - 1, -1):
            coeffs[d] -= coeffs[d - shift]
        deg += shift
        for d in range(i, deg + 1):
            coeffs[d] += coeffs[d - i]
        deg -= i
    return coeffs[: n * m + 1]


def exact_p_value(u: float, n: int, m: int) -> float:
    """Two-sided exact p for an integer U under no ties."""
    counts = u_distribution(n, m)
    total = math.comb(n + m, n)
    u = int(round(u))
    lower = sum(counts[: u + 1])
    upper = sum(counts[u:])
    return float(min(Fraction(1), Fraction(2 * min(lower, upper), total)))


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> StatSummary:
    """Two-sided Mann-Whitney U test of ``a`` against ``b``.

    U counts pairs with a > b (ties count one half). The normal
    approximation uses a tie-corrected variance and a 0.5 continuity
    correction; small untied samples (min size <= 8) get an exact p.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    n, m = x.shape[0], y.shape[0]
    if n == 0 or m == 0:
        raise EvalError("both samples must be non-empty")
    pooled = np.concatenate([x, y])
    if np.all(pooled == pooled[0]):
        raise DegenerateError("all observations are identical")

    ranks = midranks(pooled)
    u = float(ranks[:n].sum() - n * (n + 1) / 2.0)
    N = n + m
    _, tie_sizes = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_sizes.astype(np.float64) ** 3 - tie_sizes))
    mean = n * m / 2.0
    var = n * m / 12.0 * ((N + 1) - tie_term / (N * (N - 1)))
    delta = u - mean
    z = math.copysign(max(abs(delta) - 0.5, 0.0), delta) / math.sqrt(var)

    if min(n, m) <= EXACT_MAX_SIZE and tie_term == 0:
        return StatSummary(u, z, exact_p_value(u, n, m), exact=True)
    return StatSummary(u, z, min(1.0, 2.0 * _norm_sf(abs(z))), exact=False)


def pca(vectors, k: int = 2):
    """Principal axes via SVD of the centred data.

    Returns (coordinates, components, explained_variance); each component
    is signed so that its largest-magnitude loading is positive.
    """
    X = as_matrix(vectors, EvalError)
    if X.shape[0] < k + 1:
        raise EvalError(f"PCA to {k} dimensions needs at least {k + 1} vectors, got {X.shape[0]}")
    if k > X.shape[1]:
        raise EvalError(f"cannot project {X.shape[1]}-dimensional data onto {k} components")
    centred = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    components = vt[:k].copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    variance = s[:k] ** 2 / (X.shape[0] - 1)
    return centred @ components.T, components, variance


def pca_project(vectors, k: int = 2) -> np.ndarray:
    return pca(vectors, k)[0]


# --------------------------------------------------------------------------
# Experiment
# --------------------------------------------------------------------------

def _group(corpus_for_method) -> Dict[str, List[EmbeddingVector]]:
    if isinstance(corpus_for_method, EmbeddingSet):
        return corpus_for_method.by_speaker()
    groups = {}
    for speaker in sorted(corpus_for_method):
        entries = corpus_for_method[speaker]
        if isinstance(entries, EmbeddingSet):
            entries = entries.entries
        groups[speaker] = sorted(entries, key=lambda e: e.index)
    return groups


def _derive_seed(seed: int, run: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(run)]).generate_state(1)[0])


def run_experiment(
    corpus: Mapping, plan: SplitPlan = SplitPlan(), fit: FitConfig = FitConfig()
) -> ExperimentReport:
    """Paired repeated-split evaluation of every method in ``corpus``.

    ``corpus`` maps a method to an EmbeddingSet or to a speaker -> vectors
    mapping. Every method must carry the same speakers with the same
    segment indices; within a run all methods share one split.
    """
    if not corpus:
        raise ExperimentError("no methods to evaluate")
    methods = sorted((Method.parse(m) for m in corpus), key=list(Method).index)
    grouped = {m: _group(corpus[m] if m in corpus else corpus[m.value]) for m in methods}

    ref = grouped[methods[0]]
    ref_index = {s: [e.index for e in v] for s, v in ref.items()}
    for m in methods[1:]:
        g = grouped[m]
        for speaker in sorted(set(ref) | set(g)):
            if speaker not in g or speaker not in ref:
                raise ExperimentError(
                    f"speaker {speaker!r} is missing from method "
                    f"{m if speaker not in g else methods[0]}")
            if [e.index for e in g[speaker]] != ref_index[speaker]:
                raise ExperimentError(
                    f"speaker {speaker!r} has different segments under {m} and {methods[0]}")
    for speaker, idx in ref_index.items():
        if len(set(idx)) != len(idx):
            raise ExperimentError(f"speaker {speaker!r} has duplicate segment indices")

    lookup = {m: {s: {e.index: e for e in v} for s, v in grouped[m].items()} for m in methods}
    results: List[RunResult] = []
    for run in range(plan.n_runs):
        split = split_train_test(ref_index, plan, run)
        run_fit = dataclasses.replace(fit, rng_seed=_derive_seed(fit.rng_seed, run))
        truth = tuple(s for s in sorted(split) for _ in split[s][1])
        for m in methods:
            table = lookup[m]
            train = {s: [table[s][i] for i in split[s][0]] for s in split}
            test = [table[s][i] for s in sorted(split) for i in split[s][1]]
            bank = train_bank(train, run_fit)
            predictions = tuple(bank.predict(test))
            results.append(RunResult(m, run, predictions, truth, error_rate(predictions, truth)))

    return summarize(methods, results, speakers=sorted(ref))


def summarize(methods: Sequence[Method], results: Sequence[RunResult], speakers=()) -> ExperimentReport:
    """Means, pooled z-scores and pairwise rank tests from per-run results.

    Z-scores pool every run of every method into one population. When that
    population has zero variance, z-scores and p-values are NaN.
    """
    methods = list(methods)
    rates = {m: [r.error_rate for r in results if r.method == m] for m in methods}
    means = {m: math.fsum(rates[m]) / len(rates[m]) for m in methods}

    pooled = [x for m in methods for x in rates[m]]
    try:
        z_all = zscore(pooled)
    except (ZeroVarianceError, EvalError):
        z_all = [math.nan] * len(pooled)
    zscores, pos = {}, 0
    for m in methods:
        zscores[m] = z_all[pos:pos + len(rates[m])]
        pos += len(rates[m])

    pairwise = {}
    for a, b in itertools.combinations(methods, 2):
        pairwise[(a, b)] = None
        if any(math.isnan(z) for z in zscores[a] + zscores[b]):
            continue
        try:
            pairwise[(a, b)] = mann_whitney_u(zscores[a], zscores[b])
        except DegenerateError:
            pass
    return ExperimentReport(methods, means, list(results), zscores, pairwise, list(speakers))

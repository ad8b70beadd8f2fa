"""Per-speaker full-covariance Gaussian mixtures.

Each speaker gets one mixture, fitted by EM from a K-means start. Test
vectors are assigned to the speaker whose mixture gives the highest
log-likelihood.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .embedding import EmbeddingVector
from .errors import FitError, ScoreError

LOG_2PI = math.log(2.0 * math.pi)

Vectors = Union[Sequence[EmbeddingVector], np.ndarray]


@dataclass(frozen=True)
class FitConfig:
    n_components: int = 1
    max_iterations: int = 100
    convergence_tol: float = 1e-3
    covariance_ridge: float = 1e-6
    rng_seed: int = 0
    kmeans_restarts: int = 10
    kmeans_max_iterations: int = 300

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be > 0")
        if self.covariance_ridge < 0:
            raise ValueError("covariance_ridge must be >= 0")
        if self.max_iterations < 1 or self.kmeans_restarts < 1:
            raise ValueError("iteration and restart counts must be >= 1")


def as_matrix(vectors: Vectors, error=FitError) -> np.ndarray:
    """Stack embedding vectors (or pass through a 2-D array) as an (n, D) float matrix."""
    if isinstance(vectors, np.ndarray):
        X = np.asarray(vectors, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
    else:
        rows = [np.asarray(v.values if isinstance(v, EmbeddingVector) else v, dtype=np.float64)
                for v in vectors]
        if not rows:
            raise error("no vectors given")
        dims = {r.shape for r in rows}
        if len(dims) != 1 or rows[0].ndim != 1:
            raise error(f"vectors have inconsistent dimensions {sorted(d for d in dims)}")
        X = np.stack(rows)
    if X.ndim != 2 or X.shape[0] == 0:
        raise error("expected a non-empty (n, D) collection of vectors")
    if not np.all(np.isfinite(X)):
        raise error("vectors contain non-finite values")
    return X


@dataclass
class SpeakerModel:
    speaker_id: str
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood_trace: Tuple[float, ...] = ()
    n_iter: int = 0
    converged: bool = False
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        M, D = self.means.shape
        if self.weights.shape != (M,) or self.covariances.shape != (M, D, D):
            raise FitError("inconsistent mixture parameter shapes")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise FitError("mixture weights must lie on the simplex")
        try:
            self._chol = np.linalg.cholesky(self.covariances)
        except np.linalg.LinAlgError:
            raise FitError(f"covariance of {self.speaker_id!r} is not positive definite") from None

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    def component_log_prob(self, X: np.ndarray) -> np.ndarray:
        """(n, M) matrix of log(weight_m) + log N(x; mean_m, cov_m)."""
        return _component_log_prob(X, self.weights, self.means, self._chol)

    def score_samples(self, vectors: Vectors) -> np.ndarray:
        X = as_matrix(vectors, ScoreError)
        if X.shape[1] != self.dimension:
            raise ScoreError(f"vector dimension {X.shape[1]} != model dimension {self.dimension}")
        return logsumexp(self.component_log_prob(X), axis=1)


def _component_log_prob(X, weights, means, chol) -> np.ndarray:
    n, D = X.shape
    out = np.empty((n, weights.shape[0]))
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    for m in range(weights.shape[0]):
        L = chol[m]
        z = solve_triangular(L, (X - means[m]).T, lower=True, check_finite=False)
        half_logdet = np.sum(np.log(np.diag(L)))
        out[:, m] = log_w[m] - 0.5 * D * LOG_2PI - half_logdet - 0.5 * np.sum(z * z, axis=0)
    return out


def _covariances(X, resp, Nk, means, ridge):
    D = X.shape[1]
    covs = np.empty((means.shape[0], D, D))
    for m in range(means.shape[0]):
        diff = X - means[m]
        cov = (resp[:, m, None] * diff).T @ diff / Nk[m]
        cov = 0.5 * (cov + cov.T)
        cov.flat[::D + 1] += ridge
        covs[m] = cov
    return covs


# --------------------------------------------------------------------------
# K-means start
# --------------------------------------------------------------------------

def _lloyd(X, centroids, max_iter):
    labels = None
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for k in range(centroids.shape[0]):
            members = X[labels == k]
            if len(members):
                centroids[k] = members.mean(axis=0)
    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(X.shape[0]), labels].sum())
    return centroids, labels, inertia


def kmeans(X: np.ndarray, k: int, rng: np.random.Generator, restarts: int = 10, max_iter: int = 300):
    """Lloyd's algorithm from random data points; best of ``restarts`` by inertia.

    Returns (centroids, labels, inertia).
    """
    best = None
    for _ in range(restarts):
        start = X[rng.choice(X.shape[0], size=k, replace=False)].copy()
        result = _lloyd(X, start, max_iter)
        if best is None or result[2] < best[2]:
            best = result
    return best


def kmeans_init(vectors: Vectors, config: FitConfig = FitConfig(), rng: Optional[np.random.Generator] = None):
    """Initial (weights, means, covariances) from a K-means partition."""
    X = as_matrix(vectors)
    M = config.n_components
    if X.shape[0] < M:
        raise FitError(f"{X.shape[0]} vectors cannot initialise {M} components")
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    if M == 1:
        labels = np.zeros(X.shape[0], dtype=int)
    else:
        _, labels, _ = kmeans(X, M, rng, config.kmeans_restarts, config.kmeans_max_iterations)
    resp = np.zeros((X.shape[0], M))
    resp[np.arange(X.shape[0]), labels] = 1.0
    Nk = resp.sum(axis=0)
    weights = Nk / X.shape[0]
    means = np.empty((M, X.shape[1]))
    for m in range(M):
        # an empty cluster falls back to the global mean
        means[m] = X[labels == m].mean(axis=0) if Nk[m] else X.mean(axis=0)
    safe_Nk = np.where(Nk > 0, Nk, 1.0)
    return weights, means, _covariances(X, resp, safe_Nk, means, config.covariance_ridge)


# --------------------------------------------------------------------------
# EM
# --------------------------------------------------------------------------

def em_fit(vectors: Vectors, config: FitConfig = FitConfig(), speaker_id: str = "") -> SpeakerModel:
    """Fit a full-covariance mixture by EM.

    The trace stores the total log-likelihood of every parameter set
    visited, so ``trace[-1]`` belongs to the returned model. Iteration
    stops once the mean per-sample log-likelihood improves by less than
    ``convergence_tol``.
    """
    X = as_matrix(vectors)
    n, D = X.shape
    M = config.n_components
    if n < M:
        raise FitError(f"speaker {speaker_id!r}: {n} vectors for {M} components")
    weights, means, covs = kmeans_init(X, config)
    ridge = config.covariance_ridge

    trace: List[float] = []
    converged = False
    n_iter = 0
    previous = None
    while True:
        try:
            chol = np.linalg.cholesky(covs)
        except np.linalg.LinAlgError:
            raise FitError(f"speaker {speaker_id!r}: covariance lost positive definiteness") from None
        log_prob = _component_log_prob(X, weights, means, chol)
        per_sample = logsumexp(log_prob, axis=1)
        total = float(per_sample.sum())
        if trace and total < trace[-1]:
            # the ridge can make a step lose a hair of likelihood; keep the better set
            weights, means, covs = previous
            n_iter -= 1
            converged = True
            break
        trace.append(total)
        if len(trace) > 1 and (trace[-1] - trace[-2]) / n < config.convergence_tol:
            converged = True
            break
        if n_iter >= config.max_iterations:
            break

        previous = (weights, means, covs)
        resp = np.exp(log_prob - per_sample[:, None])
        Nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
        weights = Nk / Nk.sum()
        means = (resp.T @ X) / Nk[:, None]
        covs = _covariances(X, resp, Nk, means, ridge)
        n_iter += 1

    return SpeakerModel(speaker_id, weights, means, covs, tuple(trace), n_iter, converged)


def log_density(model: SpeakerModel, x) -> float:
    """log f(x) for a single vector."""
    values = x.values if isinstance(x, EmbeddingVector) else np.asarray(x, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] != model.dimension:
        raise ScoreError(f"vector dimension {values.shape} != model dimension {model.dimension}")
    return float(model.score_samples(values[None, :])[0])


# --------------------------------------------------------------------------
# Banks and classification
# --------------------------------------------------------------------------

class ModelBank:
    """Ordered collection of speaker models with unique ids."""

    def __init__(self, models: Sequence[SpeakerModel]):
        models = list(models)
        if not models:
            raise FitError("a model bank needs at least one model")
        ids = [m.speaker_id for m in models]
        if len(set(ids)) != len(ids):
            raise FitError("duplicate speaker ids in model bank")
        dims = {m.dimension for m in models}
        if len(dims) != 1:
            raise ScoreError(f"models disagree on dimension: {sorted(dims)}")
        self.models = models

    def __len__(self):
        return len(self.models)

    def __iter__(self):
        return iter(self.models)

    @property
    def speaker_ids(self) -> List[str]:
        return [m.speaker_id for m in self.models]

    @property
    def dimension(self) -> int:
        return self.models[0].dimension

    def score_matrix(self, vectors: Vectors) -> np.ndarray:
        """(n_vectors, n_models) log-likelihoods, columns in bank order."""
        X = as_matrix(vectors, ScoreError)
        if X.shape[1] != self.dimension:
            raise ScoreError(f"vector dimension {X.shape[1]} != bank dimension {self.dimension}")
        return np.stack([m.score_samples(X) for m in self.models], axis=1)

    def predict(self, vectors: Vectors) -> List[str]:
        scores = self.score_matrix(vectors)
        # visiting models by ascending id makes exact ties go to the smallest id
        order = sorted(range(len(self.models)), key=lambda i: self.models[i].speaker_id)
        best = np.asarray(order)[np.argmax(scores[:, order], axis=1)]
        return [self.models[i].speaker_id for i in best]

    def to_dict(self) -> dict:
        return {
            "format": "gmm-bank v1",
            "models": [
                {
                    "speaker_id": m.speaker_id,
                    "weights": m.weights.tolist(),
                    "means": m.means.tolist(),
                    "covariances": m.covariances.tolist(),
                }
                for m in self.models
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ModelBank":
        if doc.get("format") != "gmm-bank v1":
            raise FitError("not a gmm-bank v1 document")
        return cls([
            SpeakerModel(d["speaker_id"], np.array(d["weights"]), np.array(d["means"]),
                         np.array(d["covariances"]))
            for d in doc["models"]
        ])


def classify(bank: ModelBank, x) -> str:
    """Speaker id with the maximum log-likelihood for one vector."""
    values = x.values if isinstance(x, EmbeddingVector) else np.asarray(x, dtype=np.float64)
    return bank.predict(values[None, :])[0]


def speaker_seed(seed: int, speaker_id: str) -> int:
    """Per-speaker seed, independent of fitting order."""
    return (int(seed) ^ zlib.crc32(speaker_id.encode("utf-8"))) & 0xFFFFFFFFFFFFFFFF


def train_bank(sets: Mapping[str, Vectors], config: FitConfig = FitConfig()) -> ModelBank:
    """One EM fit per speaker; the bank is ordered by ascending speaker id."""
    need = max(config.n_components, 2)
    models = []
    for speaker in sorted(sets):
        X = as_matrix(sets[speaker]) if len(sets[speaker]) else np.zeros((0, 0))
        if X.shape[0] < need:
            raise FitError(f"speaker {speaker!r} has {X.shape[0]} training vectors, needs >= {need}")
        cfg = FitConfig(**{**config.__dict__, "rng_seed": speaker_seed(config.rng_seed, speaker)})
        models.append(em_fit(X, cfg, speaker_id=speaker))
    return ModelBank(models)


def save_bank(bank: ModelBank, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bank.to_dict(), fh)
        fh.write("\n")


def load_bank(path) -> ModelBank:
    with open(path, encoding="utf-8") as fh:
        return ModelBank.from_dict(json.load(fh))


def dumps_bank(bank: ModelBank) -> str:
    return json.dumps(bank.to_dict())


def loads_bank(text: str) -> ModelBank:
    return ModelBank.from_dict(json.loads(text))

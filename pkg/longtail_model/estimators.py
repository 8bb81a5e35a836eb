"""
Parameter estimation
- Method-of-moments estimates of mu (from E[X] = 2(1 - p) mu) and of p (from the class means).
- EM fitting of spherical Gaussian mixtures with k-means++ seeding and restarts.
- GmmModel log-density and plain-text persistence.
"""
import os
import math
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import kmeans_plusplus

from longtail_model.genmodel import Dataset, check_majority_fraction
from longtail_model.numerics import rng_split

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
RELATIVE_VARIANCE_FLOOR = 1e-6
INIT_METHODS = ('kmeans_pp', 'random_points')
LOGPDF_BLOCK_ENTRIES = 2_000_000  # cap on the (points x components) block held at once


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Weighted spherical Gaussian components: weights (k,), means (k x d), variances (k,)."""
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float).reshape(-1)
        means = np.array(self.means, dtype=float)
        if means.ndim == 1:
            means = means.reshape(1, -1)
        variances = np.array(self.variances, dtype=float).reshape(-1)
        if weights.size == 0:
            raise ValueError("A mixture needs at least one component")
        if not (weights.size == means.shape[0] == variances.size):
            raise ValueError("weights, means and variances disagree on the number of components")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"Weights must be non-negative and sum to 1, got sum {weights.sum()}")
        if not np.all(variances > 0):
            raise ValueError("Component variances must be positive")
        for arr in (weights, means, variances):
            arr.setflags(write=False)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'means', means)
        object.__setattr__(self, 'variances', variances)

    @property
    def k(self):
        return self.weights.size

    @property
    def d(self):
        return self.means.shape[1]


@dataclass(frozen=True)
class EmConfig:
    """
    EM settings. variance_floor=None means RELATIVE_VARIANCE_FLOOR times the
    per-coordinate variance of the data being fitted.
    """
    max_iter: int = 500
    tol: float = 1e-8
    restarts: int = 5
    variance_floor: Optional[float] = None
    init: str = 'kmeans_pp'

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be at least 1, got {self.restarts}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.variance_floor is not None and not self.variance_floor > 0:
            raise ValueError(f"variance_floor must be positive, got {self.variance_floor}")
        if self.init not in INIT_METHODS:
            raise ValueError(f"Unknown init '{self.init}', expected one of {INIT_METHODS}")


@dataclass
class EmRun:
    """Outcome of one EM restart: fitted model, final log-likelihood and its per-iteration history."""
    model: GmmModel
    loglik: float
    history: List[float] = field(default_factory=list)
    converged: bool = False


def mom_estimate_mu(dataset, p):
    """
    Method-of-moments estimate mu_hat = sum(x_i) / (2 n (1 - p)), using every point regardless of label.
    Args:
        dataset: Dataset or (n x d) array
        p: Majority fraction in (1/2, 1)
    Returns:
        np.ndarray of shape (d,)
    """
    X = dataset.X if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=float)
    check_majority_fraction(p)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("Method of moments needs a non-empty dataset")
    n = X.shape[0]
    return X.sum(axis=0) / (2.0 * n * (1.0 - p))


def mom_estimate_p(dataset):
    """
    Majority fraction of the negative class from labels and features only.

    The positive-class mean is mu and the negative-class mean is (3 - 4p) mu, so
    p_hat = (3 - <m_neg, m_pos> / |m_pos|^2) / 4. The estimate is kept inside
    [1/2 + 1/(2 n_neg), 1 - 1/(2 n_neg)].
    Args:
        dataset: Dataset with points of both classes
    Returns:
        float
    """
    positives = dataset.class_points(1)
    negatives = dataset.class_points(-1)
    if len(positives) == 0 or len(negatives) == 0:
        raise ValueError("Estimating p needs points of both classes")
    m_pos = positives.mean(axis=0)
    norm2 = float(m_pos @ m_pos)
    if not norm2 > 0:
        raise ValueError("Positive-class mean is zero; p cannot be estimated")
    ratio = float(negatives.mean(axis=0) @ m_pos) / norm2
    margin = 1.0 / (2 * len(negatives))
    return min(max((3.0 - ratio) / 4.0, 0.5 + margin), 1.0 - margin)


def _check_points(points, k=None):
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("Points must form a non-empty (n x d) array")
    if not np.all(np.isfinite(X)):
        raise ValueError("Points contain non-finite coordinates")
    if k is not None and X.shape[0] < k:
        raise ValueError(f"Cannot fit {k} components to {X.shape[0]} points")
    return X


def squared_distances(X, centers, max_block_entries=4_000_000):
    """Squared Euclidean distances (n x k) from explicit differences, in row blocks."""
    block = max(1, max_block_entries // max(1, centers.shape[0] * X.shape[1]))
    out = np.empty((X.shape[0], centers.shape[0]))
    for start in range(0, X.shape[0], block):
        diff = X[start:start + block, None, :] - centers[None, :, :]
        out[start:start + block] = np.einsum('ikd,ikd->ik', diff, diff)
    return out


def _kmeans_pp_centers(X, k, gen):
    """Greedy k-means++ seeding (2 + ln(k) candidates per center), seeded from the stream's generator."""
    centers, _ = kmeans_plusplus(X, k, random_state=int(gen.integers(2 ** 32)))
    return np.array(centers, dtype=float)


def _initial_model(X, k, config, floor, gen):
    n, d = X.shape
    if config.init == 'kmeans_pp':
        centers = _kmeans_pp_centers(X, k, gen)
    else:
        centers = X[gen.choice(n, size=k, replace=False)].copy()
    # one Lloyd pass; empty clusters keep their seed
    assign = np.argmin(squared_distances(X, centers), axis=1)
    for j in range(k):
        members = X[assign == j]
        if len(members):
            centers[j] = members.mean(axis=0)
    d2 = squared_distances(X, centers)
    spread = d2[np.arange(n), np.argmin(d2, axis=1)].sum() / (n * d)
    variances = np.full(k, max(spread, floor))
    return np.full(k, 1.0 / k), centers, variances


def _weighted_log_prob(X, weights, means, variances):
    """log(w_j) + log N(x_i; m_j, s_j^2 I) as an (n x k) array."""
    d = X.shape[1]
    d2 = squared_distances(X, means)
    with np.errstate(divide='ignore'):
        log_w = np.log(weights)
    return log_w[None, :] - 0.5 * (d * (LOG_2PI + np.log(variances))[None, :] + d2 / variances[None, :])


def _m_step(X, resp, floor):
    n, d = X.shape
    nk = resp.sum(axis=0) + 10.0 * np.finfo(float).eps
    weights = nk / nk.sum()
    means = (resp.T @ X) / nk[:, None]
    d2 = squared_distances(X, means)
    variances = np.maximum((resp * d2).sum(axis=0) / (d * nk), floor)
    return weights, means, variances


def responsibilities(model, points):
    """E-step posteriors (n x k); each row sums to 1."""
    X = _check_points(points)
    lp = _weighted_log_prob(X, model.weights, model.means, model.variances)
    return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))


def resolve_variance_floor(X, config):
    if config.variance_floor is not None:
        return config.variance_floor
    data_var = float(X.var(axis=0).mean())
    return RELATIVE_VARIANCE_FLOOR * data_var if data_var > 0 else RELATIVE_VARIANCE_FLOOR


def em_single_run(points, k, config, stream):
    """
    One EM restart from a seeded initialization.
    Returns:
        EmRun with the log-likelihood history (initial model first)
    """
    X = _check_points(points, k)
    floor = resolve_variance_floor(X, config)
    weights, means, variances = _initial_model(X, k, config, floor, stream.generator)
    lp = _weighted_log_prob(X, weights, means, variances)
    log_norm = logsumexp(lp, axis=1)
    loglik = float(log_norm.sum())
    history = [loglik]
    converged = False
    for iteration in range(config.max_iter):
        resp = np.exp(lp - log_norm[:, None])
        weights, means, variances = _m_step(X, resp, floor)
        lp = _weighted_log_prob(X, weights, means, variances)
        log_norm = logsumexp(lp, axis=1)
        new_loglik = float(log_norm.sum())
        history.append(new_loglik)
        improvement = new_loglik - loglik
        loglik = new_loglik
        if improvement < config.tol * abs(new_loglik):
            converged = True
            break
    if not converged:
        logger.warning("EM with k=%d stopped at max_iter=%d without converging", k, config.max_iter)
    model = GmmModel(weights / weights.sum(), means, variances)
    return EmRun(model, loglik, history, converged)


def em_fit_gmm(points, k, config, stream):
    """
    Fit a k-component spherical Gaussian mixture by EM, best of config.restarts.

    Restart r runs on substream r of the given stream; the best final
    log-likelihood wins, ties going to the lowest restart index.
    Args:
        points: (n x d) array with n >= k
        k: Number of components (>= 1)
        config: EmConfig
        stream: RngStream
    Returns:
        (GmmModel, final log-likelihood)
    """
    k = int(k)
    if k < 1:
        raise ValueError(f"Number of components must be at least 1, got {k}")
    X = _check_points(points, k)
    best = None
    for restart in range(config.restarts):
        run = em_single_run(X, k, config, rng_split(stream, restart))
        logger.debug("EM restart %d: k=%d, loglik=%.6f, iterations=%d",
                     restart, k, run.loglik, len(run.history) - 1)
        if best is None or run.loglik > best.loglik:
            best = run
    return best.model, best.loglik


def gmm_logpdf(model, x):
    """
    Log mixture density log sum_j w_j N(x; m_j, s_j^2 I), computed by log-sum-exp.
    Args:
        model: GmmModel
        x: Vector of dimension d, or (n x d) array
    Returns:
        float for a single vector, np.ndarray of shape (n,) otherwise
    """
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    X = arr.reshape(1, -1) if single else arr
    if X.ndim != 2 or X.shape[1] != model.d:
        raise ValueError(f"Dimension mismatch: model has d={model.d}, got shape {arr.shape}")
    values = np.empty(X.shape[0])
    block = max(1, LOGPDF_BLOCK_ENTRIES // model.k)
    for start in range(0, X.shape[0], block):
        rows = slice(start, start + block)
        values[rows] = logsumexp(_weighted_log_prob(X[rows], model.weights, model.means, model.variances), axis=1)
    return float(values[0]) if single else values


def gmm_loglik(model, points):
    """Total log-likelihood of a point set."""
    return float(np.sum(gmm_logpdf(model, _check_points(points))))


def save_gmm(model, path):
    """Write rows weight,mean_0..mean_{d-1},variance under a header line k,d."""
    rows = np.column_stack([model.weights, model.means, model.variances])
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        np.savetxt(path, rows, delimiter=',', fmt='%.17g', header=f'{model.k},{model.d}', comments='')
    except OSError as e:
        raise OSError(f"Failed to write {path}: {e}") from e


def load_gmm(path):
    """Read a model written by save_gmm."""
    try:
        with open(path, 'r') as f:
            header = f.readline().strip()
        rows = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
    except OSError as e:
        raise OSError(f"Failed to read {path}: {e}") from e
    k, d = (int(v) for v in header.split(','))
    if rows.shape != (k, d + 2):
        raise ValueError(f"Expected {k} rows of {d + 2} values in {path}, got {rows.shape}")
    return GmmModel(rows[:, 0], rows[:, 1:d + 1], rows[:, d + 1])

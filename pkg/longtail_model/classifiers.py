"""
Discriminant classifiers for the long-tail model
- LDA: one spherical Gaussian per class, equidistance rule.
- MDA: the true three-component layout (mu, -mu, 3 mu) with priors 1/2, p/2, (1-p)/2.
- Generic MDA: EM-fitted spherical mixtures per class; interpolating MDA: one component per training point.
- Empirical error with per-subpopulation breakdown and the leave-one-out memorization score.
"""
import math
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from longtail_model.estimators import (
    EmConfig, GmmModel, em_fit_gmm, gmm_logpdf, mom_estimate_mu, squared_distances
)
from longtail_model.genmodel import SUBPOPULATIONS, check_majority_fraction
from longtail_model.numerics import rng_split

logger = logging.getLogger(__name__)

LEARNER_KINDS = ('fitted_lda', 'fitted_mda', 'generic_mda', 'interpolating_mda')
DETERMINISTIC_KINDS = ('fitted_lda', 'fitted_mda', 'interpolating_mda')


def _as_batch(x, d):
    """Return (2-D array, was_single_vector) after checking the dimension."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    X = arr.reshape(1, -1) if single else arr
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"Dimension mismatch: classifier has d={d}, got shape {arr.shape}")
    return X, single


def _labels(positive, single):
    labels = np.where(positive, 1, -1)
    return int(labels[0]) if single else labels


@dataclass(frozen=True, eq=False)
class LdaClassifier:
    """Perpendicular-bisector rule between mu_plus and mu_minus; ties go to +1."""
    mu_plus: np.ndarray
    mu_minus: np.ndarray

    def __post_init__(self):
        mu_plus = np.array(self.mu_plus, dtype=float)
        mu_minus = np.array(self.mu_minus, dtype=float)
        if mu_plus.shape != mu_minus.shape or mu_plus.ndim != 1:
            raise ValueError("mu_plus and mu_minus must be vectors of the same dimension")
        if np.array_equal(mu_plus, mu_minus):
            raise ValueError("mu_plus and mu_minus must differ")
        object.__setattr__(self, 'mu_plus', mu_plus)
        object.__setattr__(self, 'mu_minus', mu_minus)

    @property
    def d(self):
        return self.mu_plus.size

    def decision_statistic(self, x):
        """||x - mu_minus||^2 - ||x - mu_plus||^2; non-negative means +1."""
        X, single = _as_batch(x, self.d)
        stat = np.sum((X - self.mu_minus) ** 2, axis=1) - np.sum((X - self.mu_plus) ** 2, axis=1)
        return float(stat[0]) if single else stat

    def predict(self, x):
        X, single = _as_batch(x, self.d)
        return _labels(self.decision_statistic(X) >= 0, single)


@dataclass(frozen=True, eq=False)
class MdaClassifier:
    """
    +1 iff (1/2) f(x; mu) >= (p/2) f(x; -mu) and (1/2) f(x; mu) >= ((1-p)/2) f(x; 3 mu).
    Evaluated as x.mu >= sigma^2 ln(p)/2 and (x - 2 mu).mu <= -sigma^2 ln(1-p)/2.
    """
    mu: np.ndarray
    sigma: float
    p: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        if mu.ndim != 1 or not np.linalg.norm(mu) > 0:
            raise ValueError("mu must be a non-zero vector")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        check_majority_fraction(self.p)
        object.__setattr__(self, 'mu', mu)

    @property
    def d(self):
        return self.mu.size

    def thresholds(self):
        """(lower bound on x.mu, upper bound on x.mu - 2||mu||^2)."""
        s2 = self.sigma ** 2
        return s2 * math.log(self.p) / 2.0, -s2 * math.log1p(-self.p) / 2.0

    def predict(self, x):
        X, single = _as_batch(x, self.d)
        lower, upper = self.thresholds()
        proj = X @ self.mu
        positive = (proj >= lower) & (proj - 2.0 * float(self.mu @ self.mu) <= upper)
        return _labels(positive, single)

    def predict_by_density(self, x):
        """Same rule evaluated directly on the weighted component log-densities."""
        X, single = _as_batch(x, self.d)
        s2 = self.sigma ** 2
        log_pos = math.log(0.5) - np.sum((X - self.mu) ** 2, axis=1) / (2 * s2)
        log_maj = math.log(self.p / 2) - np.sum((X + self.mu) ** 2, axis=1) / (2 * s2)
        log_min = math.log((1 - self.p) / 2) - np.sum((X - 3 * self.mu) ** 2, axis=1) / (2 * s2)
        return _labels((log_pos >= log_maj) & (log_pos >= log_min), single)


@dataclass(frozen=True, eq=False)
class GenericMdaClassifier:
    """+1 iff ln(prior_plus) + ln f_plus(x) >= ln(1 - prior_plus) + ln f_minus(x)."""
    f_plus: GmmModel
    f_minus: GmmModel
    prior_plus: float = 0.5

    def __post_init__(self):
        if self.f_plus.d != self.f_minus.d:
            raise ValueError(f"Class models disagree on dimension: {self.f_plus.d} vs {self.f_minus.d}")
        if not 0 < self.prior_plus < 1:
            raise ValueError(f"prior_plus must lie in (0, 1), got {self.prior_plus}")

    @property
    def d(self):
        return self.f_plus.d

    def log_ratio(self, x):
        X, single = _as_batch(x, self.d)
        ratio = (math.log(self.prior_plus) + gmm_logpdf(self.f_plus, X)
                 - math.log1p(-self.prior_plus) - gmm_logpdf(self.f_minus, X))
        return float(ratio[0]) if single else ratio

    def predict(self, x):
        X, single = _as_batch(x, self.d)
        return _labels(self.log_ratio(X) >= 0, single)


def lda_classify(model, x):
    return model.predict(x)


def mda_classify(model, x):
    return model.predict(x)


def generic_mda_classify(model, x):
    return model.predict(x)


def oracle_lda(params):
    """LDA that knows mu: centers mu and -(4p - 3) mu."""
    return LdaClassifier(params.mu, params.mu_minus)


def oracle_mda(params):
    return MdaClassifier(params.mu, params.sigma, params.p)


def fit_lda(dataset, sigma, p):
    """
    LDA trained by the method of moments.
    Returns:
        LdaClassifier with mu_plus = mu_hat and mu_minus = -(4p - 3) mu_hat
    """
    mu_hat = mom_estimate_mu(dataset, p)
    return LdaClassifier(mu_hat, -(4.0 * p - 3.0) * mu_hat)


def fit_mda(dataset, sigma, p):
    """MDA with the method-of-moments mu_hat plugged into the true component layout."""
    return MdaClassifier(mom_estimate_mu(dataset, p), sigma, p)


def _class_points(dataset, label, k, name):
    points = dataset.class_points(label)
    if len(points) == 0:
        raise ValueError(f"Class {label:+d} is absent from the training set")
    if len(points) < k:
        raise ValueError(f"Class {label:+d} has {len(points)} points, fewer than {name}={k}")
    return points


def fit_generic_mda(dataset, k_plus, k_minus, config, stream):
    """
    Fit k_plus Gaussians to the positive class and k_minus to the negative class by EM.
    The positive fit uses substream 0 of the stream, the negative fit substream 1.
    """
    pos = _class_points(dataset, 1, k_plus, 'k_plus')
    neg = _class_points(dataset, -1, k_minus, 'k_minus')
    f_plus, ll_plus = em_fit_gmm(pos, k_plus, config, rng_split(stream, 0))
    f_minus, ll_minus = em_fit_gmm(neg, k_minus, config, rng_split(stream, 1))
    logger.debug("Generic MDA (%d, %d): loglik %.4f / %.4f", k_plus, k_minus, ll_plus, ll_minus)
    return GenericMdaClassifier(f_plus, f_minus)


def fit_interpolating_mda(dataset, variance):
    """
    Generic MDA with one equal-weight component of the given variance per training point.
    With a variance well below the squared spacing of the sample it reproduces every training label.
    """
    if not variance > 0:
        raise ValueError(f"Component variance must be positive, got {variance}")
    models = []
    for label in (1, -1):
        points = _class_points(dataset, label, 1, 'k')
        m = len(points)
        models.append(GmmModel(np.full(m, 1.0 / m), points, np.full(m, float(variance))))
    return GenericMdaClassifier(models[0], models[1])


@dataclass(frozen=True)
class LearnerSpec:
    """A learning algorithm A: its kind and hyperparameters."""
    kind: str
    sigma: float = 1.0
    p: float = 0.9
    k_plus: int = 1
    k_minus: int = 2
    em_config: EmConfig = field(default_factory=EmConfig)
    interp_variance: float = 0.01

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"Unknown learner kind '{self.kind}', expected one of {LEARNER_KINDS}")
        if self.kind in ('fitted_lda', 'fitted_mda'):
            if not self.sigma > 0:
                raise ValueError(f"sigma must be positive, got {self.sigma}")
            check_majority_fraction(self.p)
        if self.kind == 'generic_mda' and (self.k_plus < 1 or self.k_minus < 1):
            raise ValueError("k_plus and k_minus must be at least 1")
        if self.kind == 'interpolating_mda' and not self.interp_variance > 0:
            raise ValueError(f"interp_variance must be positive, got {self.interp_variance}")

    @property
    def deterministic(self):
        return self.kind in DETERMINISTIC_KINDS

    def fit(self, dataset, stream=None):
        if self.kind == 'fitted_lda':
            return fit_lda(dataset, self.sigma, self.p)
        if self.kind == 'fitted_mda':
            return fit_mda(dataset, self.sigma, self.p)
        if self.kind == 'interpolating_mda':
            return fit_interpolating_mda(dataset, self.interp_variance)
        if stream is None:
            raise ValueError("generic_mda needs a random stream")
        return fit_generic_mda(dataset, self.k_plus, self.k_minus, self.em_config, stream)


@dataclass
class ErrorReport:
    """Misclassification rate plus (count, error rate) per (y, k) subpopulation present."""
    error: float
    n: int
    by_subpopulation: Dict[Tuple[int, int], Tuple[int, float]]

    def __float__(self):
        return self.error


def empirical_error(classify, testset):
    """
    Fraction of misclassified test points.
    Args:
        classify: Vectorized decision function (n x d array -> labels), or an object with predict()
        testset: Non-empty Dataset
    Returns:
        ErrorReport
    """
    if testset.n == 0:
        raise ValueError("Empirical error needs a non-empty test set")
    predict = getattr(classify, 'predict', classify)
    predictions = np.asarray(predict(testset.X)).reshape(-1)
    wrong = predictions != testset.y
    breakdown = {}
    for label, tag in SUBPOPULATIONS:
        mask = (testset.y == label) & (testset.k == tag)
        if mask.any():
            breakdown[(label, tag)] = (int(mask.sum()), float(wrong[mask].mean()))
    return ErrorReport(float(wrong.mean()), testset.n, breakdown)


def _correct_fraction(learner, dataset, x, y, restarts, stream):
    if learner.deterministic:
        return float(learner.fit(dataset).predict(x) == y)
    hits = [learner.fit(dataset, rng_split(stream, r)).predict(x) == y for r in range(restarts)]
    return float(np.mean(hits))


def memorization_score(learner, dataset, index, restarts, stream):
    """
    Pr[h(x_i) = y_i | h <- A(S)] - Pr[h(x_i) = y_i | h <- A(S minus i)] by exact retraining.

    Deterministic learners give 0/1 indicators and ignore restarts; generic_mda
    averages over restarts independent EM fits (substreams 0 and 1 of the
    stream seed the with- and without-fits).
    """
    if not 0 <= index < dataset.n:
        raise ValueError(f"Index {index} out of range for dataset of size {dataset.n}")
    if restarts < 1:
        raise ValueError(f"restarts must be at least 1, got {restarts}")
    x, y = dataset.X[index], int(dataset.y[index])
    with_i = _correct_fraction(learner, dataset, x, y, restarts, rng_split(stream, 0))
    without_i = _correct_fraction(learner, dataset.without(index), x, y, restarts, rng_split(stream, 1))
    return with_i - without_i


def _loo_mom_means(dataset, p):
    """Leave-one-out method-of-moments estimates, one row per removed point."""
    n = dataset.n
    if n < 2:
        raise ValueError("Leave-one-out estimates need at least two points")
    total = dataset.X.sum(axis=0)
    return (total[None, :] - dataset.X) / (2.0 * (n - 1) * (1.0 - p))


def _loo_predictions(learner, dataset):
    """Label each training point with the learner retrained without it."""
    X = dataset.X
    if learner.kind == 'fitted_lda':
        m_plus = _loo_mom_means(dataset, learner.p)
        m_minus = -(4.0 * learner.p - 3.0) * m_plus
        stat = np.sum((X - m_minus) ** 2, axis=1) - np.sum((X - m_plus) ** 2, axis=1)
        return np.where(stat >= 0, 1, -1)
    if learner.kind == 'fitted_mda':
        mu = _loo_mom_means(dataset, learner.p)
        s2 = learner.sigma ** 2
        lower, upper = s2 * math.log(learner.p) / 2.0, -s2 * math.log1p(-learner.p) / 2.0
        proj = np.sum(X * mu, axis=1)
        positive = (proj >= lower) & (proj - 2.0 * np.sum(mu * mu, axis=1) <= upper)
        return np.where(positive, 1, -1)
    return _loo_interpolating_predictions(dataset, learner.interp_variance)


def _loo_interpolating_predictions(dataset, variance, max_block_entries=4_000_000):
    n, d = dataset.X.shape
    log_norm = -0.5 * d * (math.log(2 * math.pi) + math.log(variance))
    labels = np.empty(n, dtype=int)
    block = max(1, max_block_entries // max(1, n * d))
    for start in range(0, n, block):
        rows = np.arange(start, min(start + block, n))
        d2 = squared_distances(dataset.X[rows], dataset.X)
        d2[np.arange(len(rows)), rows] = np.inf
        logdens = {}
        for label in (1, -1):
            members = dataset.y == label
            counts = members.sum() - (dataset.y[rows] == label)
            dens = np.full(len(rows), -np.inf)
            alive = counts > 0
            if alive.any():
                dens[alive] = (logsumexp(-d2[np.ix_(alive, members)] / (2 * variance), axis=1)
                               - np.log(counts[alive]) + log_norm)
            logdens[label] = dens
        labels[rows] = np.where(logdens[1] >= logdens[-1], 1, -1)
    return labels


def memorization_scores(learner, dataset, restarts=1, stream=None):
    """
    Memorization score of every training point.

    Deterministic learners use closed-form leave-one-out refits; generic_mda
    retrains per point with substream i of the stream.
    Returns:
        np.ndarray of shape (n,)
    """
    if learner.deterministic:
        with_fit = learner.fit(dataset).predict(dataset.X)
        without_fit = _loo_predictions(learner, dataset)
        return (with_fit == dataset.y).astype(float) - (without_fit == dataset.y).astype(float)
    if stream is None:
        raise ValueError("generic_mda needs a random stream")
    return np.array([memorization_score(learner, dataset, i, restarts, rng_split(stream, i))
                     for i in range(dataset.n)])

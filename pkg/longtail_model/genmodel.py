"""
Long-tail Gaussian mixture data model D_p
- Balanced labels; positive class N(mu, sigma^2 I).
- Negative class: majority N(-mu, sigma^2 I) w.p. p, minority N(3 mu, sigma^2 I) w.p. 1 - p.
- Samples datasets with their latent component tags and persists them as CSV.
"""
import os
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd

from longtail_model.numerics import sample_std_normal_array

logger = logging.getLogger(__name__)

POSITIVE = 0   # component tag of the positive class
MAJORITY = 1   # negative class, typical examples
MINORITY = 2   # negative class, rare examples
SUBPOPULATIONS = ((1, POSITIVE), (-1, MAJORITY), (-1, MINORITY))
DIRECTION_MODES = ('fixed', 'random')


def check_majority_fraction(p, name='p'):
    """Reject a majority fraction outside the open interval (1/2, 1)."""
    if not (0.5 < p < 1.0):
        raise ValueError(f"{name} must lie in (1/2, 1), got {p}")


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Parameters of D_p: center mu (dimension d), noise scale sigma, majority fraction p."""
    mu: np.ndarray
    sigma: float
    p: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        if mu.ndim != 1 or mu.size == 0:
            raise ValueError("mu must be a non-empty vector")
        if not np.linalg.norm(mu) > 0:
            raise ValueError("mu must be non-zero")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        check_majority_fraction(self.p)
        mu.setflags(write=False)
        object.__setattr__(self, 'mu', mu)
        object.__setattr__(self, 'sigma', float(self.sigma))
        object.__setattr__(self, 'p', float(self.p))

    @property
    def d(self):
        return self.mu.size

    @property
    def mu_norm(self):
        return float(np.linalg.norm(self.mu))

    @property
    def nu(self):
        """Separation-to-noise ratio ||mu|| / sigma."""
        return self.mu_norm / self.sigma

    @property
    def mu_minus(self):
        """Single-Gaussian center of the negative class, -(4p - 3) mu."""
        return -(4.0 * self.p - 3.0) * self.mu

    def with_p(self, p):
        """Same geometry, different majority fraction."""
        return ModelParams(self.mu, self.sigma, p)

    def component_means(self):
        """Means of the positive, majority and minority components (3 x d)."""
        return np.stack([self.mu, -self.mu, 3.0 * self.mu])


class LabeledPoint(NamedTuple):
    x: np.ndarray
    y: int
    k: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Finite sample S. Features X (n x d), labels y in {-1, +1}, component tags k in {0, 1, 2}.
    provenance is (params, master_seed, lineage) when the sample was drawn by sample_dataset.
    """
    X: np.ndarray
    y: np.ndarray
    k: np.ndarray
    provenance: Optional[tuple] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"X must be a 2-D array, got shape {X.shape}")
        y = np.array(self.y, dtype=int).reshape(-1)
        k = np.array(self.k, dtype=int).reshape(-1)
        if not (len(y) == len(k) == X.shape[0]):
            raise ValueError("X, y and k must have the same number of rows")
        if not np.all(np.isin(y, (-1, 1))):
            raise ValueError("Labels must be -1 or +1")
        if not np.all((y == 1) == (k == POSITIVE)) or not np.all(np.isin(k, (0, 1, 2))):
            raise ValueError("Component tags must be 0 for y=+1 and 1 or 2 for y=-1")
        for arr in (X, y, k):
            arr.setflags(write=False)
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'k', k)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def __len__(self):
        return self.n

    @property
    def points(self):
        return [LabeledPoint(self.X[i], int(self.y[i]), int(self.k[i])) for i in range(self.n)]

    def subset(self, indices):
        """Dataset restricted to the given row indices (or boolean mask), order preserved."""
        indices = np.asarray(indices)
        return Dataset(self.X[indices], self.y[indices], self.k[indices])

    def without(self, index):
        """Dataset with one row removed (S minus i)."""
        if not 0 <= index < self.n:
            raise ValueError(f"Index {index} out of range for dataset of size {self.n}")
        mask = np.ones(self.n, dtype=bool)
        mask[index] = False
        return self.subset(mask)

    def class_points(self, label):
        return self.X[self.y == label]

    def to_frame(self):
        frame = pd.DataFrame(self.X, columns=[f'x{j}' for j in range(self.d)])
        frame['y'] = self.y
        frame['k'] = self.k
        return frame


def make_params(d, mu_norm, sigma, p, direction_mode='fixed', stream=None):
    """
    Build ModelParams with ||mu|| = mu_norm.
    Args:
        d: Dimension (>= 1)
        mu_norm: Positive norm of mu
        sigma: Positive noise scale
        p: Majority fraction in (1/2, 1)
        direction_mode: 'fixed' for (1,...,1)/sqrt(d), 'random' for a normalized Gaussian draw
        stream: RngStream, required for 'random'
    Returns:
        ModelParams
    """
    d = int(d)
    if d < 1:
        raise ValueError(f"Dimension must be at least 1, got {d}")
    if not mu_norm > 0:
        raise ValueError(f"mu_norm must be positive, got {mu_norm}")
    check_majority_fraction(p)
    if direction_mode == 'fixed':
        direction = np.ones(d)
    elif direction_mode == 'random':
        if stream is None:
            raise ValueError("A stream is required for a random direction")
        direction = sample_std_normal_array(stream, d)
    else:
        raise ValueError(f"Unknown direction mode '{direction_mode}', expected one of {DIRECTION_MODES}")
    mu = mu_norm * direction / np.linalg.norm(direction)
    return ModelParams(mu, sigma, p)


def sample_dataset(params, n, stream):
    """
    Draw n i.i.d. labeled points from D_p.

    Draw order is fixed: n uniforms for labels, n uniforms for the negative
    components, then an n x d block of standard normals.
    Args:
        params: ModelParams
        n: Sample size (>= 0)
        stream: RngStream
    Returns:
        Dataset with component tags
    """
    n = int(n)
    if n < 0:
        raise ValueError(f"Sample size must be non-negative, got {n}")
    gen = stream.generator
    y = np.where(gen.random(n) < 0.5, 1, -1)
    minority = gen.random(n) >= params.p
    k = np.where(y == 1, POSITIVE, np.where(minority, MINORITY, MAJORITY))
    noise = gen.standard_normal((n, params.d))
    X = params.component_means()[k] + params.sigma * noise
    provenance = (params, stream.master_seed, stream.lineage)
    return Dataset(X, y, k, provenance=provenance)


class SubpopulationStats(NamedTuple):
    count: int
    mean: np.ndarray


def subpopulation_stats(dataset):
    """
    Exact counts and sample means per (y, k) subpopulation present in the dataset.
    Returns:
        dict mapping (y, k) -> SubpopulationStats
    """
    if dataset.n == 0:
        raise ValueError("Subpopulation statistics need a non-empty dataset")
    stats = {}
    for label, tag in SUBPOPULATIONS:
        mask = (dataset.y == label) & (dataset.k == tag)
        count = int(mask.sum())
        if count:
            stats[(label, tag)] = SubpopulationStats(count, dataset.X[mask].mean(axis=0))
    return stats


def save_dataset_csv(dataset, path):
    """Write a dataset as CSV with header x0,...,x{d-1},y,k."""
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        dataset.to_frame().to_csv(path, index=False, lineterminator='\n')
    except OSError as e:
        raise OSError(f"Failed to write {path}: {e}") from e
    logger.info("Dataset with %d points saved to %s", dataset.n, path)


def load_dataset_csv(path):
    """Read a dataset written by save_dataset_csv."""
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except OSError as e:
        raise OSError(f"Failed to read {path}: {e}") from e
    feature_cols = [c for c in frame.columns if c not in ('y', 'k')]
    expected = [f'x{j}' for j in range(len(feature_cols))]
    if feature_cols != expected or 'y' not in frame or 'k' not in frame:
        raise ValueError(f"Unexpected dataset header in {path}: {list(frame.columns)}")
    X = frame[feature_cols].to_numpy(dtype=float).reshape(len(frame), len(feature_cols))
    return Dataset(X, frame['y'].to_numpy(), frame['k'].to_numpy())

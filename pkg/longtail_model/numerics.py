"""
Seeded randomness and Gaussian special functions
- RngStream: deterministic, splittable random streams keyed by (master_seed, lineage).
- Standard normal and spherical Gaussian sampling.
- Standard normal c.d.f. and p.d.f. used by every closed-form error expression.
"""
import math
import logging

import numpy as np
from scipy import special

logger = logging.getLogger(__name__)

SEED_MASK = 0xFFFFFFFFFFFFFFFF  # master seeds are taken modulo 2**64
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class RngStream:
    """
    Deterministic random stream.

    The generator state is derived only from (master_seed, lineage), so two
    streams with the same lineage replay identical draws and children with
    distinct indices are statistically independent.
    """

    def __init__(self, master_seed, lineage=()):
        self.master_seed = int(master_seed) & SEED_MASK
        self.lineage = tuple(int(i) for i in lineage)
        seed_seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=self.lineage)
        self.generator = np.random.Generator(np.random.PCG64(seed_seq))

    @property
    def substream_index(self):
        """Index of this stream under its parent (0 for a root stream)."""
        return self.lineage[-1] if self.lineage else 0

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, lineage={self.lineage})"


def rng_new(master_seed):
    """Create a root stream for a master seed."""
    return RngStream(master_seed)


def rng_split(parent, index):
    """
    Derive a child stream.
    Args:
        parent: RngStream
        index: Non-negative child index
    Returns:
        RngStream deterministic in (parent lineage, index)
    """
    index = int(index)
    if index < 0:
        raise ValueError(f"Substream index must be non-negative, got {index}")
    return RngStream(parent.master_seed, parent.lineage + (index,))


def sample_std_normal(stream):
    """Draw one N(0, 1) deviate, advancing the stream."""
    return float(stream.generator.standard_normal())


def sample_std_normal_array(stream, shape):
    """Draw an array of N(0, 1) deviates, advancing the stream."""
    return stream.generator.standard_normal(shape)


def sample_gaussian_vec(stream, mean, sigma):
    """
    Draw from the spherical Gaussian N(mean, sigma^2 I).
    Args:
        stream: RngStream
        mean: Mean vector of dimension d >= 1
        sigma: Positive noise scale
    Returns:
        np.ndarray of shape (d,)
    """
    mean = np.asarray(mean, dtype=float)
    if mean.ndim != 1 or mean.size == 0:
        raise ValueError("Mean must be a non-empty vector")
    if not sigma > 0:
        raise ValueError(f"Sigma must be positive, got {sigma}")
    return mean + sigma * stream.generator.standard_normal(mean.size)


def _check_finite(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"Argument must be finite, got {x}")
    return arr


def std_normal_cdf(x):
    """
    Standard normal c.d.f. Phi(x).
    Args:
        x: Finite real or array of reals
    Returns:
        float (or array) in [0, 1]
    """
    arr = _check_finite(x)
    result = special.ndtr(arr)
    return float(result) if result.ndim == 0 else result


def std_normal_sf(x):
    """Upper tail 1 - Phi(x) = Phi(-x), accurate for large positive x."""
    arr = _check_finite(x)
    result = special.ndtr(-arr)
    return float(result) if result.ndim == 0 else result


def std_normal_pdf(x):
    """
    Standard normal density phi(x) = exp(-x^2/2) / sqrt(2 pi).
    Underflows to 0 for large |x|.
    """
    arr = _check_finite(x)
    result = INV_SQRT_2PI * np.exp(-0.5 * arr * arr)
    return float(result) if result.ndim == 0 else result

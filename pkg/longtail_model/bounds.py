"""
Closed-form error expressions for the long-tail model, as functions of
nu = ||mu|| / sigma, the majority fraction p and the tail parameter t.
"""
import math
import logging
from dataclasses import dataclass

import numpy as np

from longtail_model.numerics import std_normal_cdf, std_normal_sf

logger = logging.getLogger(__name__)

PHI_CLAMP = 38.0  # Phi is 0 or 1 in double precision beyond this


def _phi(x):
    return std_normal_cdf(float(np.clip(x, -PHI_CLAMP, PHI_CLAMP)))


@dataclass(frozen=True)
class BoundInputs:
    """Validated (nu, p, t) triple; t is optional for the unshifted formulas."""
    nu: float
    p: float
    t: float = None

    def __post_init__(self):
        _check_nu(self.nu)
        _check_p(self.p, allow_one=False)
        if self.t is not None:
            _check_t(self.t)

    @property
    def q(self):
        """Training majority fraction 1 - 1/t."""
        return 1.0 - 1.0 / self.t


def _check_nu(nu):
    if not (math.isfinite(nu) and nu > 0):
        raise ValueError(f"nu must be positive and finite, got {nu}")


def _check_p(p, allow_one):
    upper_ok = p <= 1.0 if allow_one else p < 1.0
    if not (p > 0.5 and upper_ok):
        interval = "(1/2, 1]" if allow_one else "(1/2, 1)"
        raise ValueError(f"p must lie in {interval}, got {p}")


def _check_t(t):
    if not t > 2:
        raise ValueError(f"t must exceed 2, got {t}")


def lda_error_formula(nu, p):
    """
    Exact test error of the oracle LDA classifier on D_p.
    (1/2)[Phi(-(2p-1)nu) + p Phi(-(3-2p)nu) + (1-p) Phi((2p+1)nu)]; p = 1 gives Phi(-nu).
    """
    _check_nu(nu)
    _check_p(p, allow_one=True)
    return 0.5 * (_phi(-(2 * p - 1) * nu)
                  + p * _phi(-(3 - 2 * p) * nu)
                  + (1 - p) * _phi((2 * p + 1) * nu))


def mda_error_bound(nu, p):
    """Upper bound on the oracle MDA test error on D_p."""
    _check_nu(nu)
    _check_p(p, allow_one=False)
    a = math.log(p) / (2 * nu)
    b = math.log1p(-p) / (2 * nu)
    return 0.5 * (_phi(-nu + a) + _phi(-nu + b) + p * _phi(-nu - a) + (1 - p) * _phi(-nu - b))


def gap_lower_bound(nu, p):
    """Lower bound (1-p)/2 - exp(-nu^2/2) on the LDA-minus-MDA error gap."""
    _check_nu(nu)
    _check_p(p, allow_one=False)
    return (1 - p) / 2 - math.exp(-nu * nu / 2)


def lda_error_shifted(nu, p, t):
    """
    Oracle LDA trained on D_{1-1/t} and tested on D_p.
    Args:
        nu: Separation-to-noise ratio
        p: Test majority fraction
        t: Tail parameter (> 2)
    Returns:
        float
    """
    inputs = BoundInputs(nu, p, t)
    shrink = 2.0 / inputs.t
    return 0.5 * (_phi(-(1 - shrink) * nu)
                  + p * _phi(-(1 + shrink) * nu)
                  + (1 - p) * _phi((3 - shrink) * nu))


def mda_error_shifted_bound(nu, p, t):
    """Upper bound on oracle MDA trained on D_{1-1/t} and tested on D_p."""
    inputs = BoundInputs(nu, p, t)
    a = math.log(inputs.q) / (2 * nu)
    b = math.log(inputs.t) / (2 * nu)
    return 0.5 * (_phi(-nu + a) + _phi(-nu - b) + p * _phi(-nu - a) + (1 - p) * _phi(-nu + b))


def crossover_t(nu):
    """exp(8 nu^2), the t below which Phi(3 nu) exceeds Phi(-nu + ln t / (2 nu)); +inf on overflow."""
    _check_nu(nu)
    try:
        return math.exp(8.0 * nu * nu)
    except OverflowError:
        return math.inf


def crossover_margin(nu, t):
    """
    Phi(3 nu) - Phi(-nu + ln t / (2 nu)), computed as a difference of upper tails.
    Positive below the crossover, negative above it.
    """
    _check_nu(nu)
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    return std_normal_sf(-nu + math.log(t) / (2 * nu)) - std_normal_sf(3 * nu)


def bracket_crossover(nu, t_lo, t_hi, rel_tol=1e-6, max_iter=200):
    """
    Locate the sign change of crossover_margin by bisection in ln t.
    Args:
        nu: Separation-to-noise ratio
        t_lo, t_hi: Bracket with margin(t_lo) > 0 >= margin(t_hi)
        rel_tol: Stop once t_hi / t_lo - 1 < rel_tol
    Returns:
        float, geometric midpoint of the final bracket
    """
    if not 0 < t_lo < t_hi:
        raise ValueError(f"Need 0 < t_lo < t_hi, got ({t_lo}, {t_hi})")
    lo, hi = math.log(t_lo), math.log(t_hi)
    if not (crossover_margin(nu, t_lo) > 0 >= crossover_margin(nu, t_hi)):
        raise ValueError(f"[{t_lo}, {t_hi}] does not bracket the crossover for nu={nu}")
    for _ in range(max_iter):
        if math.expm1(hi - lo) < rel_tol:
            break
        mid = 0.5 * (lo + hi)
        if crossover_margin(nu, math.exp(mid)) > 0:
            lo = mid
        else:
            hi = mid
    else:
        logger.warning("Crossover bisection for nu=%s stopped after %d steps", nu, max_iter)
    return math.exp(0.5 * (lo + hi))


def all_bounds(nu, p, t):
    """Every closed form at (nu, p, t), in display order."""
    return {
        'lda_error_formula': lda_error_formula(nu, p),
        'mda_error_bound': mda_error_bound(nu, p),
        'gap_lower_bound': gap_lower_bound(nu, p),
        'lda_error_shifted': lda_error_shifted(nu, p, t),
        'mda_error_shifted_bound': mda_error_shifted_bound(nu, p, t),
        'crossover_t': crossover_t(nu),
    }

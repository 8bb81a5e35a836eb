"""
Seeded Monte Carlo experiments for the long-tail model
- Sweeps over ||mu|| and p, estimation-error scaling in n, train/test tail shift in t.
- Overparameterized generic MDA over a (k_plus, k_minus) grid and 2-D decision-boundary lattices.
- Tail shortening: drop the most memorized training points and retrain.

Every (grid index, replicate) cell draws from its own substream of
rng_split(rng_new(master_seed), crc32(experiment name)), so results do not
depend on execution order or worker count.
"""
import math
import zlib
import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats

from longtail_model import bounds
from longtail_model.classifiers import (
    empirical_error, fit_generic_mda, fit_lda, fit_mda, memorization_scores, oracle_lda, oracle_mda
)
from longtail_model.estimators import mom_estimate_p
from longtail_model.genmodel import MINORITY, make_params, sample_dataset
from longtail_model.numerics import rng_new, rng_split
from experiments.config import ConfigError

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ['sweep_name', 'sweep_value', 'classifier', 'mean_error', 'ci_lo', 'ci_hi',
                 'bound_value', 'replicates', 'master_seed']
HEATMAP_COLUMNS = ['k_plus', 'k_minus', 'train_error', 'test_error', 'test_ci_lo', 'test_ci_hi',
                   'replicates', 'master_seed']
LATTICE_COLUMNS = ['x0', 'x1', 'decision']

P_GRID_RANGE = (0.51, 0.99)
MIN_SCALING_N = 100
DEFAULT_GRIDS = {
    'sweep_mu': [2.0, 3.0, 4.0, 5.0, 6.0],
    'sweep_p': [round(0.51 + 0.02 * i, 10) for i in range(25)],
    'scale_n': [1000, 4000, 16000],
    'shifted_t': [10.0, 100.0, 1000.0, 2000.0],
    'overparam': [1, 11, 21, 31],
}

# substreams inside one replicate
TRAIN_STREAM, TEST_STREAM, DIRECTION_STREAM, LEARNER_STREAM = 0, 1, 2, 3


@dataclass
class SweepResult:
    """Tabular experiment output plus free-form metadata (clipping notes, side tables)."""
    name: str
    frame: pd.DataFrame
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def rows(self):
        return self.frame.to_dict('records')

    def __len__(self):
        return len(self.frame)


def confidence_interval(samples, level=0.95, clip=None):
    """
    Student-t confidence interval for the mean.
    Args:
        samples: At least two reals
        level: Coverage
        clip: Optional (lo, hi) range the reported bounds are clipped to
    Returns:
        (mean, ci_lo, ci_hi)
    """
    values = np.asarray(samples, dtype=float)
    if values.size < 2:
        raise ValueError(f"A confidence interval needs at least 2 samples, got {values.size}")
    mean = float(values.mean())
    std = float(values.std(ddof=1))
    half = float(stats.t.ppf(0.5 + level / 2, values.size - 1)) * std / math.sqrt(values.size)
    lo, hi = mean - half, mean + half
    if clip is not None:
        lo, hi = max(lo, clip[0]), min(hi, clip[1])
    return mean, min(lo, mean), max(hi, mean)


def experiment_stream(config, name):
    return rng_split(rng_new(config.master_seed), zlib.crc32(name.encode('utf-8')))


def cell_stream(config, name, grid_index, replicate):
    return rng_split(rng_split(experiment_stream(config, name), grid_index), replicate)


def arithmetic_grid(start, stop, step):
    """start, start + step, ... up to stop inclusive (within float slack)."""
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + step * i, 12) for i in range(count)]


def resolve_grid(config, name):
    if config.grid_values is not None:
        return list(config.grid_values)
    if config.grid_start is not None:
        return arithmetic_grid(config.grid_start, config.grid_stop, config.grid_step)
    return list(DEFAULT_GRIDS[name])


def _map_cells(config, func, tasks):
    """Evaluate func over tasks, in task order, on config.workers threads."""
    if config.workers == 1:
        return [func(*task) for task in tasks]
    return Parallel(n_jobs=config.workers, prefer='threads')(delayed(func)(*task) for task in tasks)


def _draw_train_test(config, params_train, stream, params_test=None):
    train = sample_dataset(params_train, config.n_train, rng_split(stream, TRAIN_STREAM))
    test = sample_dataset(params_test or params_train, config.n_test, rng_split(stream, TEST_STREAM))
    return train, test


def _params(config, stream, mu_norm=None, p=None, d=None):
    return make_params(d or config.d, mu_norm or config.mu_norm, config.sigma, p or config.p,
                       config.direction, rng_split(stream, DIRECTION_STREAM))


def _sweep_rows(name, grid, outcomes, config, bound_fn, clip=(0.0, 1.0)):
    """
    Aggregate per-replicate errors into SWEEP_COLUMNS rows.
    outcomes[g][r] maps classifier id -> value; bound_fn(value, classifier) gives the bound column.
    """
    rows = []
    for value, replicate_outcomes in zip(grid, outcomes):
        for classifier in replicate_outcomes[0]:
            samples = [outcome[classifier] for outcome in replicate_outcomes]
            mean, lo, hi = confidence_interval(samples, clip=clip)
            bound = bound_fn(value, classifier) if bound_fn else float('nan')
            rows.append({
                'sweep_name': name, 'sweep_value': float(value), 'classifier': classifier,
                'mean_error': mean, 'ci_lo': lo, 'ci_hi': hi, 'bound_value': bound,
                'replicates': len(samples), 'master_seed': config.master_seed,
            })
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def _run_replicated(config, name, grid, replicate_fn):
    tasks = [(g, value, r) for g, value in enumerate(grid) for r in range(config.replicates)]
    logger.info("Running %s: %d grid values x %d replicates", name, len(grid), config.replicates)
    flat = _map_cells(config, lambda g, value, r: replicate_fn(value, cell_stream(config, name, g, r)), tasks)
    return [flat[g * config.replicates:(g + 1) * config.replicates] for g in range(len(grid))]


def _fitted_errors(config, train, test, p):
    return {
        'lda': empirical_error(fit_lda(train, config.sigma, p), test).error,
        'mda': empirical_error(fit_mda(train, config.sigma, p), test).error,
    }


def run_sweep_mu(config):
    """Vary ||mu||; fitted LDA and MDA test errors against the exact LDA error and the MDA bound."""
    name = 'sweep_mu'
    grid = resolve_grid(config, name)

    def replicate(mu_norm, stream):
        train, test = _draw_train_test(config, _params(config, stream, mu_norm=mu_norm), stream)
        return _fitted_errors(config, train, test, config.p)

    def bound(mu_norm, classifier):
        nu = mu_norm / config.sigma
        return bounds.lda_error_formula(nu, config.p) if classifier == 'lda' else bounds.mda_error_bound(nu, config.p)

    outcomes = _run_replicated(config, name, grid, replicate)
    return SweepResult(name, _sweep_rows(name, grid, outcomes, config, bound))


def clip_p_grid(grid):
    """Keep the p values inside [0.51, 0.99]; returns (kept, dropped)."""
    lo, hi = P_GRID_RANGE
    kept = [p for p in grid if lo - 1e-12 <= p <= hi + 1e-12]
    dropped = [p for p in grid if p not in kept]
    return kept, dropped


def run_sweep_p(config):
    """Vary p at fixed ||mu||. Grid values outside [0.51, 0.99] are dropped and recorded in metadata."""
    name = 'sweep_p'
    grid, dropped = clip_p_grid(resolve_grid(config, name))
    if dropped:
        logger.warning("p grid clipped to [%.2f, %.2f]; dropped %s", *P_GRID_RANGE, dropped)
    if not grid:
        raise ConfigError("No p grid values left inside [0.51, 0.99]")
    nu = config.mu_norm / config.sigma

    def replicate(p, stream):
        train, test = _draw_train_test(config, _params(config, stream, p=p), stream)
        return _fitted_errors(config, train, test, p)

    def bound(p, classifier):
        return bounds.lda_error_formula(nu, p) if classifier == 'lda' else bounds.mda_error_bound(nu, p)

    outcomes = _run_replicated(config, name, grid, replicate)
    return SweepResult(name, _sweep_rows(name, grid, outcomes, config, bound),
                       {'p_range': P_GRID_RANGE, 'dropped_p': dropped})


def run_scaling_n(config):
    """
    Estimation-error statistic |test error - closed form| * sqrt(n / (d ln n)) over a grid of n_train.
    The bound column holds the closed form the statistic is measured against.
    """
    name = 'scale_n'
    grid = [int(round(v)) for v in resolve_grid(config, name)]
    small = [n for n in grid if n < MIN_SCALING_N]
    if small:
        raise ConfigError(f"Sample sizes below {MIN_SCALING_N} are outside the scaling regime: {small}")
    nu = config.mu_norm / config.sigma
    closed = {'lda': bounds.lda_error_formula(nu, config.p), 'mda': bounds.mda_error_bound(nu, config.p)}

    def replicate(n, stream):
        params = _params(config, stream)
        train = sample_dataset(params, n, rng_split(stream, TRAIN_STREAM))
        test = sample_dataset(params, config.n_test, rng_split(stream, TEST_STREAM))
        errors = _fitted_errors(config, train, test, config.p)
        scale = math.sqrt(n / (config.d * math.log(n)))
        return {c: abs(errors[c] - closed[c]) * scale for c in errors}

    outcomes = _run_replicated(config, name, grid, replicate)
    frame = _sweep_rows(name, grid, outcomes, config, lambda n, c: closed[c], clip=(0.0, math.inf))
    return SweepResult(name, frame)


def run_shifted(config):
    """Train on D_{1-1/t}, test on D_p, for each t in the grid."""
    name = 'shifted_t'
    grid = [float(v) for v in resolve_grid(config, name)]
    bad = [t for t in grid if not t > 2]
    if bad:
        raise ConfigError(f"Tail parameters must exceed 2, got {bad}")
    nu = config.mu_norm / config.sigma

    def replicate(t, stream):
        q = 1.0 - 1.0 / t
        test_params = _params(config, stream)
        train, test = _draw_train_test(config, test_params.with_p(q), stream, test_params)
        return _fitted_errors(config, train, test, q)

    def bound(t, classifier):
        if classifier == 'lda':
            return bounds.lda_error_shifted(nu, config.p, t)
        return bounds.mda_error_shifted_bound(nu, config.p, t)

    outcomes = _run_replicated(config, name, grid, replicate)
    return SweepResult(name, _sweep_rows(name, grid, outcomes, config, bound))


def run_overparam_grid(config):
    """Generic MDA fitted by EM for every (k_plus, k_minus) pair of the grid; training and test error."""
    name = 'overparam'
    ks = [int(round(v)) for v in resolve_grid(config, name)]
    if min(ks) < 1:
        raise ConfigError(f"Component counts must be at least 1, got {ks}")
    pairs = [(kp, km) for kp in ks for km in ks]
    em_config = config.em_config()
    logger.info("Running %s: %d cells x %d replicates", name, len(pairs), config.replicates)

    def cell(c, kp, km, r):
        stream = cell_stream(config, name, c, r)
        train, test = _draw_train_test(config, _params(config, stream), stream)
        for label, k, key in ((1, kp, 'k_plus'), (-1, km, 'k_minus')):
            count = int(np.sum(train.y == label))
            if k > count:
                raise ValueError(f"{key}={k} exceeds the {count} training points of class {label:+d}")
        model = fit_generic_mda(train, kp, km, em_config, rng_split(stream, LEARNER_STREAM))
        return empirical_error(model, train).error, empirical_error(model, test).error

    tasks = [(c, kp, km, r) for c, (kp, km) in enumerate(pairs) for r in range(config.replicates)]
    flat = _map_cells(config, cell, tasks)
    rows = []
    for c, (kp, km) in enumerate(pairs):
        cell_runs = flat[c * config.replicates:(c + 1) * config.replicates]
        train_errors = [run[0] for run in cell_runs]
        mean, lo, hi = confidence_interval([run[1] for run in cell_runs], clip=(0.0, 1.0))
        rows.append({'k_plus': kp, 'k_minus': km, 'train_error': float(np.mean(train_errors)),
                     'test_error': mean, 'test_ci_lo': lo, 'test_ci_hi': hi,
                     'replicates': config.replicates, 'master_seed': config.master_seed})
        logger.debug("(k_plus, k_minus) = (%d, %d): train %.4f, test %.4f", kp, km, rows[-1]['train_error'], mean)
    return SweepResult(name, pd.DataFrame(rows, columns=HEATMAP_COLUMNS))


def boundary_classifier(config, params, train, stream):
    kind = config.boundary_classifier
    if kind == 'oracle_lda':
        return oracle_lda(params)
    if kind == 'oracle_mda':
        return oracle_mda(params)
    if kind == 'fitted_lda':
        return fit_lda(train, config.sigma, config.p)
    if kind == 'fitted_mda':
        return fit_mda(train, config.sigma, config.p)
    return fit_generic_mda(train, config.k_plus, config.k_minus, config.em_config(), stream)


def lattice_points(train, sigma, resolution):
    """Regular resolution x resolution lattice over the sample's bounding box expanded by 2 sigma."""
    lo = train.X.min(axis=0) - 2 * sigma
    hi = train.X.max(axis=0) + 2 * sigma
    xs = np.linspace(lo[0], hi[0], resolution)
    ys = np.linspace(lo[1], hi[1], resolution)
    g0, g1 = np.meshgrid(xs, ys)
    return np.column_stack([g0.ravel(), g1.ravel()])


def run_boundary_grid(config):
    """Decision labels of one fitted classifier on a 2-D lattice; the training sample rides along in metadata."""
    name = 'boundary'
    if config.d != 2:
        raise ConfigError(f"Decision boundary lattices need d=2, got d={config.d}")
    stream = cell_stream(config, name, 0, 0)
    params = _params(config, stream)
    train = sample_dataset(params, config.n_train, rng_split(stream, TRAIN_STREAM))
    model = boundary_classifier(config, params, train, rng_split(stream, LEARNER_STREAM))
    points = lattice_points(train, config.sigma, config.lattice)
    frame = pd.DataFrame({'x0': points[:, 0], 'x1': points[:, 1], 'decision': model.predict(points)},
                         columns=LATTICE_COLUMNS)
    logger.info("Boundary lattice %dx%d for %s", config.lattice, config.lattice, config.boundary_classifier)
    return SweepResult(name, frame, {'train': train, 'params': params, 'classifier': config.boundary_classifier})


def removal_order(scores):
    """Indices by score descending, ties by index ascending."""
    scores = np.asarray(scores, dtype=float)
    return np.lexsort((np.arange(scores.size), -scores))


def run_tail_shortening(config):
    """
    Score every training point for memorization, remove the top m% for each m in
    removal_fractions, refit LDA and MDA on the rest and test on untouched data.
    With m = 0 the known p is used; otherwise p is re-estimated from the retained
    points' labels and features.
    """
    name = 'tail_shorten'
    fractions = list(config.removal_fractions)
    learner = config.learner(config.memorization_learner)

    def replicate(r):
        stream = cell_stream(config, name, 0, r)
        train, test = _draw_train_test(config, _params(config, stream), stream)
        scores = memorization_scores(learner, train, config.memorization_restarts,
                                     rng_split(stream, LEARNER_STREAM))
        order = removal_order(scores)
        base_minority = float(np.mean(train.k == MINORITY))
        errors, removal = [], []
        for pct in fractions:
            n_remove = int(math.floor(train.n * pct / 100.0 + 1e-9))
            removed = np.sort(order[:n_remove])
            kept = np.setdiff1d(np.arange(train.n), removed)
            retained = train.subset(kept)
            p = config.p if n_remove == 0 else mom_estimate_p(retained)
            errors.append(_fitted_errors(config, retained, test, p))
            removal.append({
                'replicate': r, 'removal_pct': float(pct), 'removed': n_remove,
                'removed_minority_fraction': float(np.mean(train.k[removed] == MINORITY)) if n_remove else float('nan'),
                'base_minority_fraction': base_minority, 'p_used': p,
            })
        return errors, removal

    logger.info("Running %s: %d removal levels x %d replicates", name, len(fractions), config.replicates)
    runs = _map_cells(config, replicate, [(r,) for r in range(config.replicates)])
    outcomes = [[run[0][i] for run in runs] for i in range(len(fractions))]
    frame = _sweep_rows(name, fractions, outcomes, config, None)
    removal_stats = pd.DataFrame([row for run in runs for row in run[1]])
    return SweepResult(name, frame, {'removal_stats': removal_stats, 'scorer': learner.kind})


EXPERIMENTS = {
    'sweep-mu': run_sweep_mu,
    'sweep-p': run_sweep_p,
    'scale-n': run_scaling_n,
    'shifted-t': run_shifted,
    'overparam-grid': run_overparam_grid,
    'boundary': run_boundary_grid,
    'tail-shorten': run_tail_shortening,
}

"""
ltgmm command line
- ltgmm <command> [--config FILE] [--set key=value ...] [--seed N] [--out DIR] [--verbose]
- Logs to data/logs/ltgmm_log.txt; results go to the output directory as CSV and SVG.
- Exit codes: 0 success, 2 configuration error, 3 numerical/runtime error, 4 I/O error.
"""
import os
import sys
import logging
import argparse

import numpy as np
import pandas as pd

from longtail_model import bounds
from longtail_model.classifiers import memorization_scores
from longtail_model.genmodel import make_params, sample_dataset, save_dataset_csv, subpopulation_stats
from longtail_model.numerics import rng_split
from experiments.config import ConfigError, load_experiment_config, parse_set_overrides
from experiments.harness import EXPERIMENTS, cell_stream, DIRECTION_STREAM, LEARNER_STREAM, TRAIN_STREAM
from experiments.plotter import emit_result

logger = logging.getLogger('ltgmm')

LOG_PATH = 'data/logs/ltgmm_log.txt'
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4
COMMANDS = ('sample', 'bounds', 'memscore') + tuple(EXPERIMENTS)


def setup_logging(verbose=False, log_path=LOG_PATH):
    """Timestamped lines to the log file and to stderr."""
    root = logging.getLogger()
    for handler in [h for h in root.handlers if getattr(h, '_ltgmm', False)]:
        root.removeHandler(handler)
        handler.close()
    formatter = logging.Formatter('[%(asctime)s] %(message)s', datefmt='%Y-%m-%d %H:%M:%S')
    os.makedirs(os.path.dirname(log_path), exist_ok=True)
    file_handler = logging.FileHandler(log_path)
    stream_handler = logging.StreamHandler(sys.stderr)
    for handler in (file_handler, stream_handler):
        handler.setFormatter(formatter)
        handler._ltgmm = True
        root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def build_parser():
    parser = argparse.ArgumentParser(prog='ltgmm', description="Long-tail Gaussian mixture experiments")
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', help="YAML experiment config")
    parser.add_argument('--set', dest='overrides', action='append', nargs='+', default=[],
                        metavar='KEY=VALUE', help="override a config key")
    parser.add_argument('--seed', type=int, help="master seed")
    parser.add_argument('--out', help="output directory")
    parser.add_argument('--verbose', action='store_true', help="debug logging")
    return parser


def resolve_config(args):
    overrides = parse_set_overrides([item for group in args.overrides for item in group])
    if args.seed is not None:
        overrides['master_seed'] = args.seed
    if args.out is not None:
        overrides['out_dir'] = args.out
    try:
        return load_experiment_config(args.config, overrides)
    except RuntimeError as e:
        if isinstance(e.__cause__, OSError):
            raise OSError(str(e)) from e
        raise ConfigError(str(e)) from e


def bounds_table(config):
    """All closed forms at (nu, p, t); nu falls back to mu_norm / sigma."""
    nu = config.nu if config.nu is not None else config.mu_norm / config.sigma
    values = bounds.all_bounds(nu, config.p, config.t)
    return nu, pd.DataFrame({'quantity': list(values), 'value': list(values.values())})


def run_bounds(config):
    nu, table = bounds_table(config)
    print(f"nu = {nu:g}, p = {config.p:g}, t = {config.t:g}")
    for quantity, value in zip(table['quantity'], table['value']):
        print(f"{quantity:<26}{value:.6g}" if quantity == 'crossover_t' else f"{quantity:<26}{value:.6f}")
    return []


def run_sample(config):
    stream = cell_stream(config, 'sample', 0, 0)
    params = make_params(config.d, config.mu_norm, config.sigma, config.p, config.direction,
                         rng_split(stream, DIRECTION_STREAM))
    dataset = sample_dataset(params, config.n_train, rng_split(stream, TRAIN_STREAM))
    path = os.path.join(config.out_dir, 'sample.csv')
    save_dataset_csv(dataset, path)
    if dataset.n:
        for (label, tag), stat in subpopulation_stats(dataset).items():
            print(f"y={label:+d} k={tag}: {stat.count} points")
    return [path]


def run_memscore(config):
    """Memorization score of every point of one sampled training set."""
    stream = cell_stream(config, 'memscore', 0, 0)
    params = make_params(config.d, config.mu_norm, config.sigma, config.p, config.direction,
                         rng_split(stream, DIRECTION_STREAM))
    dataset = sample_dataset(params, config.n_train, rng_split(stream, TRAIN_STREAM))
    learner = config.learner(config.memorization_learner)
    scores = memorization_scores(learner, dataset, config.memorization_restarts, rng_split(stream, LEARNER_STREAM))
    frame = pd.DataFrame({'index': np.arange(dataset.n), 'y': dataset.y, 'k': dataset.k, 'score': scores})
    path = os.path.join(config.out_dir, 'memscore.csv')
    try:
        os.makedirs(config.out_dir, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator='\n')
    except OSError as e:
        raise OSError(f"Failed to write {path}: {e}") from e
    print(f"Memorization scores ({learner.kind}), mean by subpopulation:")
    print(frame.groupby(['y', 'k'])['score'].agg(['count', 'mean']).to_string())
    return [path]


def run_command(command, config):
    if command == 'bounds':
        return run_bounds(config)
    if command == 'sample':
        return run_sample(config)
    if command == 'memscore':
        return run_memscore(config)
    result = EXPERIMENTS[command](config)
    written = emit_result(result, config.out_dir)
    if result.name != 'boundary':
        print(result.frame.to_string(index=False))
    return written


def main(argv=None):
    """Entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    try:
        setup_logging(args.verbose)
    except OSError as e:
        print(f"Error: cannot open log file: {e}", file=sys.stderr)
        return EXIT_IO
    try:
        config = resolve_config(args)
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except OSError as e:
        logger.error("I/O error: %s", e)
        return EXIT_IO
    logger.info("ltgmm %s (master_seed=%d)", args.command, config.master_seed)
    try:
        written = run_command(args.command, config)
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except OSError as e:
        logger.error("I/O error: %s", e)
        return EXIT_IO
    except (ValueError, ArithmeticError, RuntimeError) as e:
        logger.error("Error: %s", e)
        return EXIT_RUNTIME
    for path in written:
        print(f"Results saved to {path}")
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())

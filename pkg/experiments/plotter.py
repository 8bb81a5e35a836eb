"""
Result emission
- CSV tables with an exact header, LF line endings, empty field for a missing bound.
- SVG figures through matplotlib: sweep curves with CI bands, the (k_plus, k_minus)
  heatmap and decision-boundary lattices with the training sample.
"""
import os
import logging

import numpy as np
import pandas as pd
import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt

from experiments.harness import HEATMAP_COLUMNS, LATTICE_COLUMNS, SWEEP_COLUMNS, SweepResult

logger = logging.getLogger(__name__)

# fixed ids and no timestamp so repeated runs write identical SVG
plt.rcParams['svg.hashsalt'] = 'ltgmm'
SVG_METADATA = {'Date': None, 'Creator': None}

SERIES_STYLE = {'lda': ('tab:red', 'LDA'), 'mda': ('tab:blue', 'MDA')}
COMPONENT_STYLE = {0: ('tab:blue', 'o', 'y=+1'), 1: ('tab:red', 'x', 'y=-1 majority'),
                   2: ('tab:orange', '^', 'y=-1 minority')}
AXIS_LABELS = {
    'sweep_mu': '||mu||', 'sweep_p': 'p', 'scale_n': 'n',
    'shifted_t': 't', 'tail_shorten': 'removed training points (%)',
}


def _ensure_dir(path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def emit_csv(result, path):
    """Write result.frame as CSV."""
    try:
        _ensure_dir(path)
        result.frame.to_csv(path, index=False, lineterminator='\n', encoding='utf-8', na_rep='')
    except OSError as e:
        raise OSError(f"Failed to write {path}: {e}") from e
    logger.info("%d rows of %s saved to %s", len(result.frame), result.name, path)


def read_sweep_csv(path):
    """Parse a CSV written by emit_csv back into a SweepResult."""
    try:
        frame = pd.read_csv(path, float_precision='round_trip', encoding='utf-8')
    except OSError as e:
        raise OSError(f"Failed to read {path}: {e}") from e
    for columns in (SWEEP_COLUMNS, HEATMAP_COLUMNS, LATTICE_COLUMNS):
        if list(frame.columns) == columns:
            break
    else:
        raise ValueError(f"Unrecognized result header in {path}: {list(frame.columns)}")
    if 'bound_value' in frame:
        frame['bound_value'] = frame['bound_value'].astype(float)
    name = str(frame['sweep_name'].iloc[0]) if 'sweep_name' in frame and len(frame) else \
        os.path.splitext(os.path.basename(path))[0]
    return SweepResult(name, frame)


def _save_svg(fig, path):
    try:
        _ensure_dir(path)
        fig.savefig(path, format='svg', metadata=SVG_METADATA, bbox_inches='tight')
    except OSError as e:
        raise OSError(f"Failed to write {path}: {e}") from e
    finally:
        plt.close(fig)
    logger.info("Figure saved to %s", path)


def emit_svg(result, path):
    """
    Line chart of mean error per classifier with a shaded CI band.
    Each series is an SVG group with id series-<classifier>, its band band-<classifier>.
    """
    frame = result.frame
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for classifier, series in frame.groupby('classifier', sort=False):
        series = series.sort_values('sweep_value')
        color, label = SERIES_STYLE.get(classifier, (None, classifier))
        x = series['sweep_value'].to_numpy()
        band = ax.fill_between(x, series['ci_lo'], series['ci_hi'], color=color, alpha=0.2)
        band.set_gid(f'band-{classifier}')
        line, = ax.plot(x, series['mean_error'], '-o', color=color, markersize=3, label=f'{label} test error')
        line.set_gid(f'series-{classifier}')
        if series['bound_value'].notna().any():
            bound, = ax.plot(x, series['bound_value'], '--', color=color, alpha=0.8, label=f'{label} closed form')
            bound.set_gid(f'bound-{classifier}')
    if result.name in ('scale_n', 'shifted_t'):
        ax.set_xscale('log')
    ax.set_xlabel(AXIS_LABELS.get(result.name, 'sweep value'))
    ax.set_ylabel('|error - closed form| * sqrt(n / (d ln n))' if result.name == 'scale_n' else 'test error')
    ax.set_title(result.name.replace('_', ' '))
    ax.grid(True, alpha=0.3)
    if len(frame):
        ax.legend(fontsize=8)
    _save_svg(fig, path)


def emit_heatmap_svg(result, path):
    """Training and test error heatmaps over (k_plus, k_minus)."""
    frame = result.frame
    k_plus = sorted(frame['k_plus'].unique())
    k_minus = sorted(frame['k_minus'].unique())
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    for ax, column in zip(axes, ('train_error', 'test_error')):
        table = frame.pivot(index='k_plus', columns='k_minus', values=column).reindex(index=k_plus, columns=k_minus)
        image = ax.imshow(table.to_numpy(), origin='lower', cmap='viridis', aspect='auto')
        image.set_gid(f'heatmap-{column}')
        ax.set_xticks(range(len(k_minus)), [str(k) for k in k_minus])
        ax.set_yticks(range(len(k_plus)), [str(k) for k in k_plus])
        ax.set_xlabel('k_minus')
        ax.set_ylabel('k_plus')
        ax.set_title(column.replace('_', ' '))
        fig.colorbar(image, ax=ax)
    _save_svg(fig, path)


def emit_boundary_svg(result, path):
    """Decision regions on the lattice with the training points on top."""
    frame = result.frame
    xs = np.unique(frame['x0'].to_numpy())
    ys = np.unique(frame['x1'].to_numpy())
    decision = frame['decision'].to_numpy().reshape(len(ys), len(xs))
    fig, ax = plt.subplots(figsize=(6, 6))
    regions = ax.contourf(xs, ys, decision, levels=[-1.5, 0, 1.5], colors=['#f4c7c3', '#c6dbef'])
    regions.set_gid('decision-regions')
    train = result.metadata.get('train')
    if train is not None:
        for tag, (color, marker, label) in COMPONENT_STYLE.items():
            points = train.X[train.k == tag]
            if len(points):
                ax.scatter(points[:, 0], points[:, 1], c=color, marker=marker, s=12, label=label)
        ax.legend(fontsize=8, loc='upper left')
    ax.set_xlabel('x0')
    ax.set_ylabel('x1')
    ax.set_title(f"decision boundary ({result.metadata.get('classifier', 'classifier')})")
    _save_svg(fig, path)


def emit_result(result, out_dir):
    """
    Write the CSV and SVG for an experiment result into out_dir.
    Returns:
        list of written paths
    """
    csv_path = os.path.join(out_dir, f'{result.name}.csv')
    svg_path = os.path.join(out_dir, f'{result.name}.svg')
    emit_csv(result, csv_path)
    if result.name == 'overparam':
        emit_heatmap_svg(result, svg_path)
    elif result.name == 'boundary':
        emit_boundary_svg(result, svg_path)
    else:
        emit_svg(result, svg_path)
    written = [csv_path, svg_path]
    removal_stats = result.metadata.get('removal_stats')
    if removal_stats is not None:
        stats_path = os.path.join(out_dir, f'{result.name}_removal.csv')
        emit_csv(SweepResult(f'{result.name}_removal', removal_stats), stats_path)
        written.append(stats_path)
    return written

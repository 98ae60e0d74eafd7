"""
Report files and figures. Figures are written with the Agg backend, so no
display is ever needed.
"""

import os
import json
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt

from errors import ValidationError

logger = logging.getLogger(__name__)

REPORT_SCHEMA = {
    'count': int,
    'success_rate': float,
    'dwa_raw': float,
    'dwa_normalized': float,
    'gss': (float, type(None)),
    'macro_f1': float,
    'mean_average_precision': float,
    'confusion_matrix': list,
    'distance_bins': list,
    'per_environment': dict,
    'classes_present': list,
}
BIN_KEYS = ('low', 'high', 'count', 'accuracy')


def validate_report(report: Dict) -> None:
    """Raise ValidationError unless `report` has every MetricsReport field with the right type."""
    if not isinstance(report, dict):
        raise ValidationError("report must be a JSON object")
    problems = []
    for key, kind in REPORT_SCHEMA.items():
        if key not in report:
            problems.append(f"missing '{key}'")
            continue
        value = report[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            continue
        if not isinstance(value, kind):
            problems.append(f"'{key}' has type {type(value).__name__}")
    matrix = report.get('confusion_matrix')
    if isinstance(matrix, list) and any(not isinstance(row, list) or len(row) != len(matrix) for row in matrix):
        problems.append("confusion matrix is not square")
    for i, b in enumerate(report.get('distance_bins') or []):
        if not isinstance(b, dict) or any(k not in b for k in BIN_KEYS):
            problems.append(f"distance bin {i} is incomplete")
    if problems:
        raise ValidationError("invalid metrics report: " + '; '.join(problems))


def write_json(path: str, payload) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=_json_default)
    logger.info(f"Wrote {path}")
    return path


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def read_json(path: str):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def format_table(rows: Sequence[Dict], columns: Sequence[str]) -> str:
    """Plain-text comparison table; missing cells print as '-'."""
    def cell(value):
        if value is None:
            return '-'
        if isinstance(value, float):
            return f"{value:.4f}"
        return str(value)

    body = [[cell(row.get(c)) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in body)) if body else len(c) for i, c in enumerate(columns)]
    lines = ['  '.join(c.ljust(w) for c, w in zip(columns, widths)),
             '  '.join('-' * w for w in widths)]
    lines += ['  '.join(v.ljust(w) for v, w in zip(r, widths)) for r in body]
    return '\n'.join(lines)


def ablation_rows(results: Sequence[Dict]) -> List[Dict]:
    """Flatten ablate() output for the comparison table."""
    rows = []
    for r in results:
        report = r.get('report') or {}
        rows.append({'variant': r.get('variant'), 'status': r.get('status'),
                     'success_rate': report.get('success_rate'), 'dwa': report.get('dwa_normalized'),
                     'macro_f1': report.get('macro_f1'), 'mAP': report.get('mean_average_precision'),
                     'error': r.get('error')})
    return sorted(rows, key=lambda row: -(row['success_rate'] if row['success_rate'] is not None else -1))


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def _save(fig, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info(f"Saved figure {path}")
    return path


def plot_distance_curve(report: Dict, path: str) -> str:
    bins = [b for b in report['distance_bins'] if b['accuracy'] is not None]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([(b['low'] + b['high']) / 2 for b in bins], [100 * b['accuracy'] for b in bins], marker='o')
    ax.set_xlabel('distance (m)')
    ax.set_ylabel('success rate (%)')
    ax.set_ylim(0, 105)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_confusion_matrix(report: Dict, class_names: Sequence[str], path: str) -> str:
    matrix = np.array(report['confusion_matrix'], dtype=float)
    totals = matrix.sum(axis=1, keepdims=True)
    normalized = np.divide(matrix, totals, out=np.zeros_like(matrix), where=totals > 0)
    fig, ax = plt.subplots(figsize=(8, 7))
    im = ax.imshow(normalized, cmap='Blues', vmin=0, vmax=1)
    ax.set_xticks(range(len(class_names)))
    ax.set_yticks(range(len(class_names)))
    ax.set_xticklabels(class_names, rotation=60, ha='right', fontsize=8)
    ax.set_yticklabels(class_names, fontsize=8)
    ax.set_xlabel('predicted')
    ax.set_ylabel('true')
    fig.colorbar(im, ax=ax)
    return _save(fig, path)


def plot_data_sweep(rows: Sequence[Dict], path: str) -> str:
    ok = [r for r in rows if r.get('status') == 'ok']
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar([r['clips'] for r in ok], [100 * r['mean'] for r in ok],
                yerr=[100 * r['std'] for r in ok], marker='o', capsize=3)
    ax.set_xlabel('training clips')
    ax.set_ylabel('success rate (%)')
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_frame_sweep(rows: Sequence[Dict], path: str) -> str:
    ok = [r for r in rows if r.get('status') == 'ok']
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, name in (('success', 'all'), ('success_dynamic', 'dynamic'), ('success_static', 'static')):
        ax.plot([r['n'] for r in ok], [100 * r[key] for r in ok], marker='o', label=name)
    ax.set_xlabel('frames n')
    ax.set_ylabel('success rate (%)')
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_finetune_curve(rows: Sequence[Dict], path: str) -> str:
    ok = [r for r in rows if r.get('status') == 'ok']
    counts = sorted(set(r['count'] for r in ok))
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ('success', 'success_new', 'success_old'):
        means = [100 * np.nanmean([r[key] for r in ok if r['count'] == c]) for c in counts]
        ax.plot(counts, means, marker='o', label=key.replace('_', ' '))
    ax.set_xlabel('fine-tuning clips per class')
    ax.set_ylabel('success rate (%)')
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def emit_figures(out_dir: str, report: Optional[Dict] = None, class_names: Optional[Sequence[str]] = None,
                 data_sweep: Optional[Sequence[Dict]] = None,
                 frame_sweep: Optional[Sequence[Dict]] = None) -> List[str]:
    """Write every figure whose inputs are available."""
    paths = []
    if report is not None:
        paths.append(plot_distance_curve(report, os.path.join(out_dir, 'accuracy_vs_distance.png')))
        if class_names:
            paths.append(plot_confusion_matrix(report, class_names, os.path.join(out_dir, 'confusion_matrix.png')))
    if data_sweep:
        paths.append(plot_data_sweep(data_sweep, os.path.join(out_dir, 'accuracy_vs_data_size.png')))
    if frame_sweep:
        paths.append(plot_frame_sweep(frame_sweep, os.path.join(out_dir, 'accuracy_vs_frames.png')))
    return paths

"""
Distance-aware and stability metrics (DWA, GSS) plus success rate, macro-F1,
mAP, confusion matrix, per-distance-bin and per-environment accuracy.
"""

import logging
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix, f1_score

import config
from errors import UndefinedMetricError, ValidationError

logger = logging.getLogger(__name__)


@dataclass
class PredictionRecord:
    clip_id: str
    true_label: int
    predicted_label: int
    distance: float
    window_predictions: List[int] = field(default_factory=list)
    scores: Optional[List[float]] = None
    environment: str = 'synthetic'

    @property
    def correct(self) -> bool:
        return self.true_label == self.predicted_label


@dataclass
class DistanceBin:
    low: float
    high: float
    count: int
    accuracy: Optional[float]       # None when the bin is empty


@dataclass
class MetricsReport:
    count: int
    success_rate: float
    dwa_raw: float
    dwa_normalized: float
    gss: Optional[float]
    macro_f1: float
    mean_average_precision: float
    confusion_matrix: List[List[int]]
    distance_bins: List[DistanceBin]
    per_environment: Dict[str, float]
    classes_present: List[int]

    def to_dict(self) -> Dict:
        return asdict(self)


def _require(records: Sequence[PredictionRecord], what: str) -> None:
    if not records:
        raise UndefinedMetricError(f"{what} is undefined for an empty record set")


def distance_weight(distance: float, beta: float = config.DWA_BETA,
                    rho_min: float = config.MIN_DISTANCE, rho_max: float = config.MAX_DISTANCE) -> float:
    return 1.0 + beta * (distance - rho_min) / (rho_max - rho_min)


def dwa(records: Sequence[PredictionRecord], beta: float = config.DWA_BETA,
        rho_min: float = config.MIN_DISTANCE, rho_max: float = config.MAX_DISTANCE) -> Tuple[float, float]:
    """(raw, normalized) distance-weighted accuracy."""
    _require(records, 'DWA')
    weights, hits = [], []
    for r in records:
        if not rho_min <= r.distance <= rho_max:
            raise ValidationError(f"record {r.clip_id}: distance {r.distance} outside [{rho_min}, {rho_max}]")
        weights.append(distance_weight(r.distance, beta, rho_min, rho_max))
        hits.append(1.0 if r.correct else 0.0)
    weights, hits = np.array(weights), np.array(hits)
    raw = float((hits * weights).sum() / len(records))
    normalized = float((hits * weights).sum() / weights.sum())
    return raw, normalized


def gss(records: Sequence[PredictionRecord]) -> float:
    """Mean over clips of the fraction of windows predicted as the true label."""
    _require(records, 'GSS')
    fractions = []
    for r in records:
        if not r.window_predictions:
            raise ValidationError(f"record {r.clip_id} has no window predictions")
        windows = np.asarray(r.window_predictions)
        fractions.append(float((windows == r.true_label).mean()))
    return float(np.mean(fractions))


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """Every-point interpolated AP over a stable descending-score ranking."""
    n_pos = int(positives.sum())
    if n_pos == 0:
        return 0.0
    order = np.argsort(-scores, kind='stable')
    hits = positives[order].astype(bool)
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    interpolated = np.maximum.accumulate(precision[::-1])[::-1]
    return float(interpolated[hits].sum() / n_pos)


def standard_metrics(records: Sequence[PredictionRecord],
                     num_classes: int = config.NUM_CLASSES) -> Dict:
    """success rate, macro-F1, mAP and the confusion matrix."""
    _require(records, 'standard metrics')
    y_true = np.array([r.true_label for r in records])
    y_pred = np.array([r.predicted_label for r in records])
    present = sorted(set(int(c) for c in y_true))
    absent = [c for c in range(num_classes) if c not in present]
    if absent:
        logger.warning(f"Classes {absent} have no samples; excluded from macro averages")

    scores = np.zeros((len(records), num_classes))
    for i, r in enumerate(records):
        if r.scores is not None:
            scores[i] = r.scores
        else:
            scores[i, r.predicted_label] = 1.0

    return {
        'success_rate': float((y_true == y_pred).mean()),
        'macro_f1': float(f1_score(y_true, y_pred, labels=present, average='macro', zero_division=0)),
        'mean_average_precision': float(np.mean([average_precision(scores[:, c], y_true == c) for c in present])),
        'confusion_matrix': confusion_matrix(y_true, y_pred, labels=list(range(num_classes))).tolist(),
        'classes_present': present,
    }


def distance_bins(records: Sequence[PredictionRecord],
                  edges: Sequence[float] = config.DISTANCE_BIN_EDGES) -> List[DistanceBin]:
    """Accuracy per [edge_i, edge_i+1) bin; the last bin is closed."""
    edges = [float(e) for e in edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValidationError(f"bin edges must be strictly increasing, got {edges}")

    bins = []
    for i, (lo, hi) in enumerate(zip(edges, edges[1:])):
        last = i == len(edges) - 2
        inside = [r for r in records if lo <= r.distance < hi or (last and r.distance == hi)]
        accuracy = float(np.mean([r.correct for r in inside])) if inside else None
        bins.append(DistanceBin(lo, hi, len(inside), accuracy))
    return bins


def accuracy_by(records: Sequence[PredictionRecord], key) -> Dict[str, float]:
    groups: Dict[str, List[bool]] = {}
    for r in records:
        groups.setdefault(str(key(r)), []).append(r.correct)
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


def evaluate_records(records: Sequence[PredictionRecord], num_classes: int = config.NUM_CLASSES,
                     edges: Sequence[float] = config.DISTANCE_BIN_EDGES,
                     beta: float = config.DWA_BETA) -> MetricsReport:
    standard = standard_metrics(records, num_classes)
    raw, normalized = dwa(records, beta)
    stability = gss(records) if all(r.window_predictions for r in records) else None
    return MetricsReport(
        count=len(records),
        success_rate=standard['success_rate'],
        dwa_raw=raw,
        dwa_normalized=normalized,
        gss=stability,
        macro_f1=standard['macro_f1'],
        mean_average_precision=standard['mean_average_precision'],
        confusion_matrix=standard['confusion_matrix'],
        distance_bins=distance_bins(records, edges),
        per_environment=accuracy_by(records, lambda r: r.environment),
        classes_present=standard['classes_present'],
    )

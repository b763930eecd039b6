"""Per-time-point class compactness and the f(C) cost of a labeling.

f(C) = sum over time points t and classes n of CM(c_n^t) * |c_n|.

Relational measures use the standard definitions:

- Dunn = min single-linkage distance between classes / max class diameter,
  reported as ``1 / (Dunn + 1e-9)``.
- Davies-Bouldin = mean over classes of max_j (s_i + s_j) / d(centroid_i, centroid_j),
  where s is the mean distance of members to their centroid.
- Silhouette = mean over points of (b - a) / max(a, b), reported as ``1 - silhouette``.

They need at least two non-empty classes at a time point; otherwise that time
point contributes 0. The index value is used as CM for every non-empty class.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.metrics import davies_bouldin_score, silhouette_score

from temporal_rules.dataset import TemporalDataset, normalize_minmax
from temporal_rules.errors import IncompleteLabeling, ObjectSetMismatch
from temporal_rules.rules import Labeling

log = logging.getLogger(__name__)

DUNN_EPSILON = 1e-9


class CompactnessMeasure(Enum):
    """Compactness measures, all oriented so that smaller is better."""

    STDDEV = "stddev"
    CENTROID_DISTANCE = "centroid"
    DUNN_INVERSE = "dunn"
    DAVIES_BOULDIN = "db"
    SILHOUETTE_NEG = "silhouette"

    @property
    def relational(self) -> bool:
        return self in (
            CompactnessMeasure.DUNN_INVERSE,
            CompactnessMeasure.DAVIES_BOULDIN,
            CompactnessMeasure.SILHOUETTE_NEG,
        )


# --- Single-class and partition measures ---


def _as_points(points: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


def dunn_inverse(points: np.ndarray, labels: np.ndarray) -> float:
    dist = cdist(points, points)
    same = labels[:, None] == labels[None, :]
    max_diameter = float(dist[same].max())
    min_gap = float(dist[~same].min())
    if max_diameter > 0:
        dunn = min_gap / max_diameter
    else:
        dunn = math.inf if min_gap > 0 else 0.0
    return 1.0 / (dunn + DUNN_EPSILON)


def partition_index(points: np.ndarray, labels: np.ndarray, measure: CompactnessMeasure) -> float:
    """Relational index of one time-point partition; 0 with fewer than two classes."""
    n_labels = len(np.unique(labels))
    if n_labels < 2:
        return 0.0
    match measure:
        case CompactnessMeasure.DUNN_INVERSE:
            return dunn_inverse(points, labels)
        case CompactnessMeasure.DAVIES_BOULDIN:
            if n_labels >= len(points):
                # all singletons: zero scatter everywhere
                return 0.0
            return float(davies_bouldin_score(points, labels))
        case CompactnessMeasure.SILHOUETTE_NEG:
            if n_labels >= len(points):
                # singleton silhouettes are 0 by convention
                return 1.0
            return 1.0 - float(silhouette_score(points, labels, metric="euclidean"))
    msg = f"{measure} is not a relational measure"
    raise ValueError(msg)


def _spread(members: np.ndarray, measure: CompactnessMeasure) -> np.ndarray:
    """Per-time-point spread of ``(m, T, A)`` members; zeros for m <= 1."""
    if members.shape[0] <= 1:
        return np.zeros(members.shape[1])
    if measure is CompactnessMeasure.STDDEV:
        return members.std(axis=0, ddof=0).mean(axis=1)
    centroid = members.mean(axis=0)
    return np.sqrt(((members - centroid) ** 2).sum(axis=2)).mean(axis=0)


def class_compactness(
    points: Sequence[Sequence[float]] | np.ndarray,
    measure: CompactnessMeasure,
    context: Sequence[np.ndarray] | None = None,
) -> float:
    """CM of one class at one time point.

    *points* are the member vectors of the class. *context* is the list of
    every class's points at the same time point and is only read by the
    relational measures.
    """
    pts = _as_points(points)
    if pts.shape[0] == 0:
        return 0.0
    if not measure.relational:
        return float(_spread(pts[:, None, :], measure)[0])
    if context is None:
        msg = f"measure {measure.value} needs the time-point partition as context"
        raise ValueError(msg)
    groups = [_as_points(g) for g in context if len(g)]
    stacked = np.vstack(groups)
    labels = np.repeat(np.arange(len(groups)), [len(g) for g in groups])
    return partition_index(stacked, labels, measure)


# --- Cost ---


def cm_matrix(
    values: np.ndarray, assigned: np.ndarray, n_classes: int, measure: CompactnessMeasure
) -> tuple[np.ndarray, np.ndarray]:
    """CM per (time point, class) and class sizes for a labeled ``(n, T, A)`` panel."""
    n_times = values.shape[1]
    sizes = np.bincount(assigned, minlength=n_classes)
    cm = np.zeros((n_times, n_classes))
    if measure.relational:
        present = sizes > 0
        for t in range(n_times):
            cm[t, present] = partition_index(values[:, t, :], assigned, measure)
    else:
        for c in range(n_classes):
            if sizes[c] > 1:
                cm[:, c] = _spread(values[assigned == c], measure)
    return cm, sizes


def total_cost(cm: np.ndarray, sizes: np.ndarray) -> float:
    """Exactly rounded sum of CM x size in (time point, class) order."""
    return math.fsum((cm * sizes[None, :]).ravel().tolist())


def compactness_values(
    data: TemporalDataset, attrs: Sequence[str], normalize: bool | None = None
) -> np.ndarray:
    """``(n, T, A)`` values of the compactness attributes.

    Multi-attribute measures use min-max normalized attributes unless
    *normalize* is explicitly False.
    """
    names = list(attrs)
    if normalize is None:
        normalize = len(names) > 1
    if normalize:
        data = normalize_minmax(data, names)
    return data.stack(names)


@dataclass(frozen=True)
class CostTerm:
    cm_value: float
    class_size: int
    term: float


@dataclass(frozen=True, eq=False)
class CostReport:
    """f(C) with its per-(time point, class) decomposition."""

    total: float
    time_points: tuple[int, ...]
    classes: tuple[str, ...]
    cm: np.ndarray
    sizes: np.ndarray

    @classmethod
    def build(
        cls,
        time_points: Sequence[int],
        classes: Sequence[str],
        cm: np.ndarray,
        sizes: np.ndarray,
    ) -> CostReport:
        return cls(
            total=total_cost(cm, sizes),
            time_points=tuple(time_points),
            classes=tuple(classes),
            cm=cm,
            sizes=sizes,
        )

    @property
    def terms(self) -> dict[tuple[int, str], CostTerm]:
        out: dict[tuple[int, str], CostTerm] = {}
        for ti, t in enumerate(self.time_points):
            for ci, c in enumerate(self.classes):
                size = int(self.sizes[ci])
                value = float(self.cm[ti, ci])
                out[(t, c)] = CostTerm(cm_value=value, class_size=size, term=value * size)
        return out

    def to_dict(self) -> dict[str, Any]:
        """``{total, terms: [{t, class, cm, size, term}]}`` sorted by (t, class order)."""
        return {
            "total": self.total,
            "terms": [
                {"t": t, "class": c, "cm": v.cm_value, "size": v.class_size, "term": v.term}
                for (t, c), v in self.terms.items()
            ],
        }


def label_positions(
    object_ids: Sequence[str], labeling: Labeling, classes: Sequence[str]
) -> np.ndarray:
    """Class position of every object, validating coverage."""
    missing = [o for o in object_ids if o not in labeling.labels]
    if missing:
        msg = f"labeling does not cover {len(missing)} object(s), e.g. {missing[:3]}"
        raise IncompleteLabeling(msg)
    extra = set(labeling.labels) - set(object_ids)
    if extra:
        msg = f"labeling names {len(extra)} object(s) not in the data, e.g. {sorted(extra)[:3]}"
        raise ObjectSetMismatch(msg)
    pos = {c: i for i, c in enumerate(classes)}
    return np.array([pos[labeling[o]] for o in object_ids], dtype=np.int64)


def cost(
    data: TemporalDataset,
    labeling: Labeling,
    measure: CompactnessMeasure,
    attrs: Sequence[str],
    *,
    classes: Sequence[str] | None = None,
    normalize: bool | None = None,
) -> CostReport:
    """Score a labeling of *data* with f(C).

    *classes* fixes the class order of the report (and adds empty classes);
    by default the distinct labels in sorted order are used.
    """
    names = list(classes) if classes is not None else sorted(set(labeling.labels.values()))
    unknown = set(labeling.labels.values()) - set(names)
    if unknown:
        msg = f"labeling uses classes outside {names}: {sorted(unknown)}"
        raise IncompleteLabeling(msg)
    values = compactness_values(data, attrs, normalize)
    assigned = label_positions(data.object_ids, labeling, names)
    cm, sizes = cm_matrix(values, assigned, len(names), measure)
    report = CostReport.build(data.time_points, names, cm, sizes)
    log.debug("Cost computed", extra={"measure": measure.value, "total": report.total})
    return report

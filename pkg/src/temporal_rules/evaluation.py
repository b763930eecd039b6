"""Comparing labelings: agreement matrix, derived attributes, KNN probe and AUC.

The probe protocol repeatedly holds out a stratified fraction of the objects,
scores the held-out objects with a k-nearest-neighbour vote trained on the
rest, and reports the Hand-Till multiclass AUC averaged over splits.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy import stats
from scipy.spatial.distance import cdist
from sklearn.model_selection import train_test_split

from temporal_rules.dataset import ID_COLUMN, TIME_COLUMN, TemporalDataset, format_number
from temporal_rules.errors import (
    BadK,
    DegenerateClass,
    EmptyTrain,
    InvalidParameter,
    MissingColumn,
    ObjectSetMismatch,
    TableIndexOutOfRange,
)
from temporal_rules.rules import Labeling

log = logging.getLogger(__name__)

PROBS_TOLERANCE = 1e-9


def _same_objects(a: Sequence[str], b: Sequence[str], what: str) -> None:
    only_a = set(a) - set(b)
    only_b = set(b) - set(a)
    if only_a or only_b:
        msg = (
            f"{what} cover different objects: {len(only_a)} only in the first "
            f"(e.g. {sorted(only_a)[:3]}), {len(only_b)} only in the second "
            f"(e.g. {sorted(only_b)[:3]})"
        )
        raise ObjectSetMismatch(msg)


# --- Agreement ---


@dataclass(frozen=True, eq=False)
class AgreementMatrix:
    """Row-normalized overlap of two labelings, in percent."""

    row_classes: tuple[str, ...]
    col_classes: tuple[str, ...]
    counts: np.ndarray
    cells: np.ndarray
    empty_rows: tuple[str, ...]

    def cell(self, row: str, col: str) -> float:
        return float(self.cells[self.row_classes.index(row), self.col_classes.index(col)])

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": list(self.row_classes),
            "columns": list(self.col_classes),
            "percent": [[round(float(v), 1) for v in row] for row in self.cells],
            "counts": self.counts.tolist(),
            "empty_rows": list(self.empty_rows),
        }


def agreement_matrix(
    a: Labeling,
    b: Labeling,
    row_classes: Sequence[str] | None = None,
    col_classes: Sequence[str] | None = None,
) -> AgreementMatrix:
    """Percentage of each A-class that lands in each B-class.

    Classes default to the sorted distinct labels. Passing *row_classes*
    explicitly may introduce empty A-classes; their rows stay zero and are
    listed in ``empty_rows``.
    """
    _same_objects(a.object_ids, b.object_ids, "labelings")
    rows = tuple(row_classes) if row_classes is not None else tuple(sorted(a.classes()))
    cols = tuple(col_classes) if col_classes is not None else tuple(sorted(b.classes()))
    row_pos = {c: i for i, c in enumerate(rows)}
    col_pos = {c: i for i, c in enumerate(cols)}

    counts = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for obj, label in a.labels.items():
        counts[row_pos[label], col_pos[b[obj]]] += 1
    totals = counts.sum(axis=1)
    cells = np.zeros(counts.shape)
    nonempty = totals > 0
    cells[nonempty] = 100.0 * counts[nonempty] / totals[nonempty, None]
    empty = tuple(c for c, t in zip(rows, totals, strict=True) if t == 0)
    if empty:
        log.warning("Agreement rows without members", extra={"classes": list(empty)})
    return AgreementMatrix(rows, cols, counts, cells, empty)


# --- AUC ---


def pairwise_auc(scores: Sequence[float] | np.ndarray, positives: Sequence[bool] | np.ndarray) -> float:
    """Mann-Whitney AUC of *scores* for the positive mask; ties count 0.5."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = len(s) - n_pos
    if n_pos == 0 or n_neg == 0:
        msg = f"AUC needs positives and negatives, got {n_pos} and {n_neg}"
        raise DegenerateClass(msg)
    ranks = stats.rankdata(s)
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2
    return u / (n_pos * n_neg)


@dataclass(frozen=True, eq=False)
class ProbeScores:
    """Class-membership scores per object; each row sums to 1."""

    object_ids: tuple[str, ...]
    classes: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self) -> None:
        expected = (len(self.object_ids), len(self.classes))
        if self.scores.shape != expected:
            msg = f"scores shape {self.scores.shape} does not match {expected}"
            raise ValueError(msg)
        if (self.scores < 0).any():
            msg = "scores must be non-negative"
            raise ValueError(msg)
        if not np.allclose(self.scores.sum(axis=1), 1.0, rtol=0, atol=PROBS_TOLERANCE):
            msg = "scores of every object must sum to 1"
            raise ValueError(msg)

    def column(self, class_name: str) -> np.ndarray:
        """Scores for *class_name*; zeros for a class the probe never saw."""
        if class_name not in self.classes:
            return np.zeros(len(self.object_ids))
        return self.scores[:, self.classes.index(class_name)]


def hand_till_auc(scores: ProbeScores, truth: Labeling) -> float:
    """Multiclass AUC: mean over class pairs of the symmetric pairwise AUC."""
    truth_labels = np.array([truth[o] for o in scores.object_ids], dtype=object)
    present = sorted(set(truth_labels))
    c = len(present)
    if c < 2:
        msg = f"multiclass AUC needs at least 2 classes, got {present}"
        raise DegenerateClass(msg)
    pair_values = []
    for x, i in enumerate(present):
        for j in present[x + 1 :]:
            mask = (truth_labels == i) | (truth_labels == j)
            members = truth_labels[mask]
            a_ij = pairwise_auc(scores.column(i)[mask], members == i)
            a_ji = pairwise_auc(scores.column(j)[mask], members == j)
            pair_values.append((a_ij + a_ji) / 2)
    return math.fsum(pair_values) * 2 / (c * (c - 1))


# --- Probe ---


def _as_matrix(x: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


def knn_probe(
    train_x: Sequence[Sequence[float]] | np.ndarray,
    train_labels: Sequence[str],
    test_x: Sequence[Sequence[float]] | np.ndarray,
    k: int,
    *,
    train_ids: Sequence[str] | None = None,
    test_ids: Sequence[str] | None = None,
    classes: Sequence[str] | None = None,
    normalize: bool = True,
) -> ProbeScores:
    """Score test objects by the label share among their k nearest train objects.

    Features are min-max scaled with train statistics. Neighbours at equal
    distance are taken in ``train_ids`` order.
    """
    train = _as_matrix(train_x)
    test = _as_matrix(test_x)
    m = len(train_labels)
    if m == 0 or train.shape[0] == 0:
        msg = "probe needs at least one training object"
        raise EmptyTrain(msg)
    if train.shape[0] != m:
        msg = f"{train.shape[0]} training rows but {m} labels"
        raise ValueError(msg)
    if not 1 <= k <= m:
        msg = f"k must lie in 1..{m}, got {k}"
        raise BadK(msg)

    if normalize:
        lo = train.min(axis=0)
        span = train.max(axis=0) - lo
        span[span == 0] = 1.0
        train = (train - lo) / span
        test = (test - lo) / span

    ids = list(train_ids) if train_ids is not None else [f"{i:09d}" for i in range(m)]
    id_rank = np.empty(m, dtype=np.int64)
    id_rank[np.argsort(np.asarray(ids, dtype=object), kind="stable")] = np.arange(m)

    names = tuple(classes) if classes is not None else tuple(sorted(set(train_labels)))
    class_pos = {c: i for i, c in enumerate(names)}
    label_pos = np.array([class_pos[label] for label in train_labels], dtype=np.int64)

    dist = cdist(test, train)
    order = np.lexsort((np.broadcast_to(id_rank, dist.shape), dist), axis=-1)
    votes = label_pos[order[:, :k]]
    counts = np.stack([(votes == c).sum(axis=1) for c in range(len(names))], axis=1)
    out_ids = tuple(test_ids) if test_ids is not None else tuple(str(i) for i in range(len(test)))
    return ProbeScores(out_ids, names, counts / k)


# --- Derived attributes ---


@dataclass(frozen=True, eq=False)
class DerivedAttributes:
    """Per-round behavioural attributes computed from a game panel."""

    object_ids: tuple[str, ...]
    time_points: tuple[int, ...]
    payoff: np.ndarray
    predicted_contribution: np.ndarray
    initial_deviation: np.ndarray
    prediction_accuracy: np.ndarray

    @property
    def initial_deviation_mean(self) -> np.ndarray:
        return self.initial_deviation.mean(axis=1)

    @property
    def prediction_accuracy_sd(self) -> np.ndarray:
        return self.prediction_accuracy.std(axis=1, ddof=0)

    def cells_frame(self) -> pd.DataFrame:
        n, t = self.payoff.shape
        return pd.DataFrame(
            {
                ID_COLUMN: np.repeat(np.asarray(self.object_ids, dtype=object), t),
                TIME_COLUMN: np.tile(np.asarray(self.time_points), n),
                "payoff": self.payoff.ravel(),
                "initial_deviation": self.initial_deviation.ravel(),
                "prediction_accuracy": self.prediction_accuracy.ravel(),
            }
        )

    def summary_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                ID_COLUMN: list(self.object_ids),
                "payoff_mean": self.payoff.mean(axis=1),
                "initial_deviation_mean": self.initial_deviation_mean,
                "prediction_accuracy_sd": self.prediction_accuracy_sd,
            }
        )

    def write(self, cells_path: Path, summary_path: Path) -> list[Path]:
        written = []
        for frame, path in ((self.cells_frame(), cells_path), (self.summary_frame(), summary_path)):
            for col in frame.columns[1:]:
                if col != TIME_COLUMN:
                    frame[col] = frame[col].map(format_number)
            path.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(path, index=False, lineterminator="\n")
            written.append(path)
        return written


def _require_columns(data: TemporalDataset, names: Sequence[str]) -> None:
    missing = [n for n in names if n not in data.attribute_names]
    if missing:
        msg = f"panel lacks required column(s) {missing}; has {list(data.attribute_names)}"
        raise MissingColumn(msg)


def derive_attributes(
    data: TemporalDataset,
    contribution_tables: Mapping[str, Sequence[int]],
    endowment: float = 20,
    mpcr: float = 0.4,
    group_size: int = 4,
    *,
    others_column: str | None = None,
) -> DerivedAttributes:
    """Payoff, table-predicted contribution, deviation and prediction accuracy.

    *others_column* defaults to ``unrounded_others`` when the panel has it,
    which makes payoffs exact on simulated data, else ``others``.
    """
    if others_column is None:
        others_column = "unrounded_others" if "unrounded_others" in data.attribute_names else "others"
    _require_columns(data, ["contribution", "belief", others_column])
    g = data.series("contribution")
    belief = data.series("belief")
    others = data.series(others_column)

    lookup = np.floor(belief + 0.5).astype(np.int64)
    predicted = np.zeros_like(g)
    for row, obj in enumerate(data.object_ids):
        table = contribution_tables.get(obj)
        if table is None:
            msg = f"no contribution table for object {obj!r}"
            raise TableIndexOutOfRange(msg)
        bad = (lookup[row] < 0) | (lookup[row] >= len(table))
        if bad.any():
            t = data.time_points[int(np.flatnonzero(bad)[0])]
            msg = (
                f"object {obj!r} at time {t}: belief {belief[row, np.flatnonzero(bad)[0]]:g} "
                f"does not index a {len(table)}-entry table"
            )
            raise TableIndexOutOfRange(msg)
        predicted[row] = np.asarray(table, dtype=np.float64)[lookup[row]]

    payoff = endowment - g + mpcr * (g + (group_size - 1) * others)
    result = DerivedAttributes(
        object_ids=data.object_ids,
        time_points=data.time_points,
        payoff=payoff,
        predicted_contribution=predicted,
        initial_deviation=g - predicted,
        prediction_accuracy=belief - others,
    )
    log.debug("Derived attributes computed", extra={"objects": data.n_objects, "others": others_column})
    return result


# --- Feature sets ---


class FeatureSet(Enum):
    """Named per-object feature selections for the probe."""

    BELIEF_CONTRIBUTION = "belief+contribution"
    ORIGINAL = "original"
    DERIVED = "derived"
    DERIVED_TEMPORAL = "derived+temporal"
    ORIGINAL_DERIVED = "original+derived"

    @property
    def needs_derived(self) -> bool:
        return self is not FeatureSet.BELIEF_CONTRIBUTION and self is not FeatureSet.ORIGINAL

    @classmethod
    def parse_list(cls, raw: str) -> list[FeatureSet]:
        out = []
        for name in (part.strip() for part in raw.split(",")):
            try:
                out.append(cls(name))
            except ValueError:
                msg = f"unknown feature set {name!r}; expected one of {[f.value for f in cls]}"
                raise InvalidParameter(msg) from None
        return out


DEFAULT_FEATURE_SETS = (
    FeatureSet.BELIEF_CONTRIBUTION,
    FeatureSet.ORIGINAL,
    FeatureSet.DERIVED,
    FeatureSet.ORIGINAL_DERIVED,
)

ORIGINAL_COLUMNS = ("contribution", "belief", "others")


def _temporal(data: TemporalDataset, names: Sequence[str]) -> np.ndarray:
    _require_columns(data, names)
    return data.stack(names).reshape(data.n_objects, -1)


def build_features(
    feature_set: FeatureSet, data: TemporalDataset, derived: DerivedAttributes | None = None
) -> np.ndarray:
    """``(objects, features)`` matrix in ``data.object_ids`` order."""
    if feature_set is FeatureSet.BELIEF_CONTRIBUTION:
        return _temporal(data, ["belief", "contribution"])
    if feature_set is FeatureSet.ORIGINAL:
        return _temporal(data, ORIGINAL_COLUMNS)
    if derived is None:
        msg = f"feature set {feature_set.value!r} needs derived attributes (contribution tables)"
        raise MissingColumn(msg)
    _same_objects(data.object_ids, derived.object_ids, "panel and derived attributes")
    if derived.object_ids != data.object_ids:
        msg = "derived attributes must follow the panel's object order"
        raise ObjectSetMismatch(msg)
    _require_columns(data, ["contribution", "belief"])
    summary = np.column_stack(
        [
            data.series("contribution").mean(axis=1),
            data.series("belief").mean(axis=1),
            derived.payoff.mean(axis=1),
            derived.initial_deviation_mean,
            derived.prediction_accuracy_sd,
        ]
    )
    match feature_set:
        case FeatureSet.DERIVED:
            return summary
        case FeatureSet.DERIVED_TEMPORAL:
            return np.hstack(
                [summary, derived.payoff, derived.initial_deviation, derived.prediction_accuracy]
            )
        case FeatureSet.ORIGINAL_DERIVED:
            return np.hstack([_temporal(data, ORIGINAL_COLUMNS), summary])
    msg = f"unsupported feature set {feature_set}"
    raise ValueError(msg)


# --- Protocol ---


@dataclass(frozen=True)
class ProbeProtocol:
    """Repeated stratified hold-out settings."""

    test_fraction: float = 0.25
    repeats: int = 10
    k: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.test_fraction < 1:
            msg = f"test_fraction must lie in (0, 1), got {self.test_fraction}"
            raise InvalidParameter(msg)
        if self.repeats < 1:
            msg = f"repeats must be >= 1, got {self.repeats}"
            raise InvalidParameter(msg)
        if self.k < 1:
            msg = f"k must be >= 1, got {self.k}"
            raise BadK(msg)


@dataclass(frozen=True)
class ComparisonReport:
    """Mean probe AUC per (feature set, labeling): feature sets as rows, labelings as columns.

    ``skipped_splits`` counts, per labeling, hold-out splits whose test part
    held a single class and so has no AUC.
    """

    feature_sets: tuple[str, ...]
    labelings: tuple[str, ...]
    split_aucs: Mapping[tuple[str, str], tuple[float, ...]]
    protocol: ProbeProtocol
    skipped_splits: Mapping[str, int] = field(default_factory=dict)

    def mean_auc(self, feature_set: str, labeling: str) -> float:
        values = self.split_aucs[(feature_set, labeling)]
        if not values:
            return math.nan
        return math.fsum(values) / len(values)

    def to_dict(self) -> dict[str, Any]:
        def finite(value: float) -> float | None:
            return None if math.isnan(value) else value

        return {
            "protocol": {
                "test_fraction": self.protocol.test_fraction,
                "repeats": self.protocol.repeats,
                "k": self.protocol.k,
                "seed": self.protocol.seed,
            },
            "columns": list(self.labelings),
            "skipped_splits": {lab: self.skipped_splits.get(lab, 0) for lab in self.labelings},
            "rows": [
                {
                    "feature_set": fs,
                    "mean_auc": {lab: finite(self.mean_auc(fs, lab)) for lab in self.labelings},
                    "split_auc": {lab: list(self.split_aucs[(fs, lab)]) for lab in self.labelings},
                }
                for fs in self.feature_sets
            ],
        }


def split_indices(
    labels: Sequence[str], test_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/test positions.

    Objects of classes with a single member always go to train; the rest is
    stratified, or split plainly when stratification is impossible.
    """
    labels = list(labels)
    counts = pd.Series(labels).value_counts()
    positions = np.arange(len(labels))
    lone = np.array([counts[lab] < 2 for lab in labels], dtype=bool)
    pinned, rest = positions[lone], positions[~lone]
    if rest.size < 2:
        return positions, np.array([], dtype=positions.dtype)
    try:
        train, test = train_test_split(
            rest, test_size=test_fraction, random_state=seed, stratify=[labels[i] for i in rest]
        )
    except ValueError:
        log.debug("Stratified split impossible, using a plain split", extra={"seed": seed})
        train, test = train_test_split(rest, test_size=test_fraction, random_state=seed)
    return np.sort(np.concatenate([train, pinned])), np.sort(test)


def compare_labelings(
    data: TemporalDataset,
    label_a: Labeling,
    label_b: Labeling,
    feature_sets: Sequence[FeatureSet] = DEFAULT_FEATURE_SETS,
    protocol: ProbeProtocol | None = None,
    *,
    derived: DerivedAttributes | None = None,
    names: tuple[str, str] = ("A", "B"),
) -> ComparisonReport:
    """How well each labeling can be predicted from each feature set.

    Split *i* uses seed ``protocol.seed + i``; both labelings and all feature
    sets see the split drawn for their own labels, so results do not depend
    on evaluation order.
    """
    protocol = protocol or ProbeProtocol()
    if names[0] == names[1]:
        msg = f"labelings need distinct names, got {names}"
        raise InvalidParameter(msg)
    ids = data.object_ids
    matrices = {fs.value: build_features(fs, data, derived) for fs in feature_sets}
    split_aucs: dict[tuple[str, str], tuple[float, ...]] = {}
    skipped: dict[str, int] = {}

    for name, labeling in zip(names, (label_a, label_b), strict=True):
        _same_objects(ids, labeling.object_ids, f"panel and labeling {name!r}")
        y = [labeling[o] for o in ids]
        splits = [split_indices(y, protocol.test_fraction, protocol.seed + i) for i in range(protocol.repeats)]
        usable = [(train, test) for train, test in splits if len({y[i] for i in test}) >= 2]
        skipped[name] = len(splits) - len(usable)
        if skipped[name]:
            log.warning(
                "Skipped hold-out splits with a single test class",
                extra={"labeling": name, "skipped": skipped[name], "repeats": protocol.repeats},
            )
        for fs, features in matrices.items():
            aucs = []
            for train, test in usable:
                scores = knn_probe(
                    features[train],
                    [y[i] for i in train],
                    features[test],
                    protocol.k,
                    train_ids=[ids[i] for i in train],
                    test_ids=[ids[i] for i in test],
                )
                aucs.append(hand_till_auc(scores, labeling))
            split_aucs[(fs, name)] = tuple(aucs)
            log.info(
                "Probe evaluated",
                extra={
                    "labeling": name,
                    "feature_set": fs,
                    "mean_auc": math.fsum(aucs) / len(aucs) if aucs else None,
                },
            )
    return ComparisonReport(tuple(matrices), names, split_aucs, protocol, skipped)

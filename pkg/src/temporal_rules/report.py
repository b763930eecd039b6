"""Plain-text tables and plot data for optimizer and evaluation results."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np
import pandas as pd

from temporal_rules.dataset import TemporalDataset, format_number
from temporal_rules.evaluation import AgreementMatrix, ComparisonReport
from temporal_rules.rules import Labeling, RuleTemplate

log = logging.getLogger(__name__)

PROFILE_COLUMNS = ["class", "time", "count", "mean", "q25", "median", "q75"]


def _rule(width: int) -> str:
    return "-" * width


def parameter_table(template: RuleTemplate, bindings: Mapping[str, float]) -> str:
    """Lower/upper/best per parameter, grouped under the class whose rule uses it."""
    owner: dict[str, str] = {}
    for rule in template.rules:
        for cond in rule.conditions:
            owner.setdefault(cond.param, rule.class_name)
    name_w = max([9, *(len(p.name) for p in template.params)]) if template.params else 9
    class_w = max([5, *(len(c) for c in template.classes)])
    lines = [
        f"{'Class':<{class_w}} {'Parameter':<{name_w}} {'Lower':>8} {'Upper':>8} {'Step':>6} {'Best':>8}",
        _rule(class_w + name_w + 34),
    ]
    for p in template.params:
        lines.append(
            f"{owner.get(p.name, '-'):<{class_w}} {p.name:<{name_w}} "
            f"{format_number(p.lower):>8} {format_number(p.upper):>8} "
            f"{format_number(p.step):>6} {format_number(bindings[p.name]):>8}"
        )
    return "\n".join(lines)


def class_size_table(sizes: Mapping[str, int]) -> str:
    width = max([5, *(len(c) for c in sizes)]) if sizes else 5
    total = sum(sizes.values())
    lines = [f"{'Class':<{width}} {'Objects':>8} {'Share':>7}", _rule(width + 17)]
    for name, count in sizes.items():
        share = 100.0 * count / total if total else 0.0
        lines.append(f"{name:<{width}} {count:>8} {share:>6.1f}%")
    return "\n".join(lines)


def agreement_table(matrix: AgreementMatrix, title: str = "") -> str:
    """Percentages to one decimal; empty rows are marked with ``*``."""
    row_w = max([5, *(len(c) + 1 for c in matrix.row_classes)])
    col_w = max([7, *(len(c) for c in matrix.col_classes)])
    lines = [title] if title else []
    lines.append(f"{'':<{row_w}} " + " ".join(f"{c:>{col_w}}" for c in matrix.col_classes))
    lines.append(_rule(row_w + (col_w + 1) * len(matrix.col_classes)))
    for r, name in enumerate(matrix.row_classes):
        label = f"{name}*" if name in matrix.empty_rows else name
        cells = " ".join(f"{matrix.cells[r, c]:>{col_w}.1f}" for c in range(len(matrix.col_classes)))
        lines.append(f"{label:<{row_w}} {cells}")
    if matrix.empty_rows:
        lines.append("* class has no members in the row labeling")
    return "\n".join(lines)


def auc_table(report: ComparisonReport) -> str:
    """Feature sets as rows, labelings as columns, mean AUC to three decimals."""
    row_w = max([11, *(len(f) for f in report.feature_sets)])
    col_w = max([8, *(len(n) for n in report.labelings)])
    lines = [
        f"{'Feature set':<{row_w}} " + " ".join(f"{n:>{col_w}}" for n in report.labelings),
        _rule(row_w + (col_w + 1) * len(report.labelings)),
    ]
    for fs in report.feature_sets:
        cells = " ".join(f"{report.mean_auc(fs, n):>{col_w}.3f}" for n in report.labelings)
        lines.append(f"{fs:<{row_w}} {cells}")
    return "\n".join(lines)


# --- Round profiles ---


def round_profile(
    data: TemporalDataset,
    labeling: Labeling,
    attribute: str,
    classes: Sequence[str] | None = None,
) -> pd.DataFrame:
    """Per class and time point: member count, mean and quartiles of *attribute*."""
    series = data.series(attribute)
    labels = np.array([labeling[o] for o in data.object_ids], dtype=object)
    names = list(classes) if classes is not None else sorted(set(labels))
    rows = []
    for name in names:
        members = series[labels == name]
        for ti, t in enumerate(data.time_points):
            if len(members) == 0:
                rows.append([name, t, 0, np.nan, np.nan, np.nan, np.nan])
                continue
            col = members[:, ti]
            q25, median, q75 = np.quantile(col, [0.25, 0.5, 0.75])
            rows.append([name, t, len(members), float(col.mean()), float(q25), float(median), float(q75)])
    return pd.DataFrame(rows, columns=PROFILE_COLUMNS)


def write_profile(frame: pd.DataFrame, path: Path) -> Path:
    out = frame.copy()
    for col in PROFILE_COLUMNS[3:]:
        out[col] = out[col].map(lambda v: "" if pd.isna(v) else format_number(v))
    path.parent.mkdir(parents=True, exist_ok=True)
    out.to_csv(path, index=False, lineterminator="\n")
    log.debug("Round profile written", extra={"path": str(path), "rows": len(out)})
    return path

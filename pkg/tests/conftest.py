"""Shared fixtures for temporal_rules tests."""

from __future__ import annotations

import json
from collections.abc import Callable, Mapping, Sequence
from pathlib import Path

import numpy as np
import pytest

from temporal_rules.dataset import TemporalDataset
from temporal_rules.rules import Labeling, RuleTemplate, load_bundled_template, parse_rule_spec

STUDENT_TIMES = (1, 2, 3, 4, 5)


def make_panel(
    series: Mapping[str, Sequence[float]] | Mapping[str, Mapping[str, Sequence[float]]],
    attribute: str = "mark",
    time_points: Sequence[int] | None = None,
) -> TemporalDataset:
    """Panel from ``{object: series}`` (one attribute) or ``{object: {attr: series}}``."""
    ids = tuple(series)
    first = next(iter(series.values()))
    if isinstance(first, Mapping):
        attrs = tuple(first)
        values = np.array([[series[o][a] for a in attrs] for o in ids], dtype=np.float64)
        values = values.transpose(0, 2, 1)
    else:
        attrs = (attribute,)
        values = np.array([series[o] for o in ids], dtype=np.float64)[:, :, None]
    times = tuple(time_points) if time_points is not None else tuple(range(1, values.shape[1] + 1))
    return TemporalDataset(ids, times, attrs, values)


def _planted_student(levels: Mapping[str, float], per_class: int) -> tuple[TemporalDataset, Labeling]:
    series: dict[str, list[float]] = {}
    labels: dict[str, str] = {}
    n = 0
    for name, level in levels.items():
        for _ in range(per_class):
            n += 1
            oid = f"s{n:02d}"
            # identical within a population, varying over time
            series[oid] = [level + (t % 3) for t in STUDENT_TIMES]
            labels[oid] = name
    return make_panel(series), Labeling(labels)


@pytest.fixture()
def student_template() -> RuleTemplate:
    return load_bundled_template("student_rules")


@pytest.fixture()
def planted_two() -> tuple[TemporalDataset, Labeling]:
    """Bad students around 40, excellent ones around 85."""
    return _planted_student({"Bad": 40, "Excellent": 85}, per_class=5)


@pytest.fixture()
def planted_three() -> tuple[TemporalDataset, Labeling]:
    """Three populations with the gaps inside the threshold ranges."""
    return _planted_student({"Bad": 45, "Good": 60, "Excellent": 90}, per_class=4)


@pytest.fixture()
def pgg_template() -> RuleTemplate:
    return load_bundled_template("pgg_rules")


@pytest.fixture()
def template_factory() -> Callable[..., RuleTemplate]:
    """Build a one-aggregate template from compact rule tuples."""

    def build(
        params: Sequence[tuple[str, float, float, float]],
        rules: Sequence[tuple[str, str, Sequence[tuple[str, str, str]]]],
        classes: Sequence[str],
        default: str,
        aggregates: Sequence[dict] | None = None,
        compactness: Sequence[str] = ("mark",),
    ) -> RuleTemplate:
        doc = {
            "classes": list(classes),
            "default_class": default,
            "compactness_attributes": list(compactness),
            "aggregates": list(
                aggregates
                if aggregates is not None
                else [{"name": "mark_mean", "source": "mark", "kind": "mean"}]
            ),
            "params": [{"name": n, "lower": lo, "upper": hi, "step": st} for n, lo, hi, st in params],
            "rules": [
                {
                    "class": cls,
                    "combine": combine,
                    "conditions": [{"attr": a, "op": op, "param": p} for a, op, p in conds],
                }
                for cls, combine, conds in rules
            ],
        }
        return parse_rule_spec(json.dumps(doc))

    return build


@pytest.fixture()
def write_csv(tmp_path: Path) -> Callable[[str, str], Path]:
    """Write raw CSV text into tmp_path and return the path."""

    def write(name: str, text: str) -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write

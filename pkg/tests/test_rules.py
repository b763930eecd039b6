"""Tests for temporal_rules.rules."""

from __future__ import annotations

import json
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from temporal_rules.dataset import AggregatedView
from temporal_rules.errors import (
    DuplicateParam,
    DuplicateRow,
    EmptyRule,
    GridOverflow,
    InvalidParameter,
    RuleSpecSyntaxError,
    UnknownAttribute,
    UnknownClass,
    UnknownParam,
)
from temporal_rules.rules import (
    CandidateClassifier,
    Combine,
    Labeling,
    Op,
    ParamRange,
    RuleTemplate,
    bundled_templates,
    check_grid,
    classify,
    enumerate_candidates,
    indices_at,
    parse_rule_spec,
    read_labels,
    write_labels,
)

TemplateFactory = Callable[..., RuleTemplate]


def _doc(**overrides: object) -> str:
    doc: dict[str, object] = {
        "classes": ["Excellent", "Good", "Bad"],
        "default_class": "Good",
        "compactness_attributes": ["mark"],
        "aggregates": [{"name": "mark_mean", "source": "mark", "kind": "mean"}],
        "params": [
            {"name": "p_hi", "lower": 65, "upper": 100, "step": 1},
            {"name": "p_lo", "lower": 50, "upper": 58, "step": 1},
        ],
        "rules": [
            {"class": "Excellent", "combine": "all", "conditions": [{"attr": "mark_mean", "op": ">=", "param": "p_hi"}]},
            {"class": "Bad", "combine": "all", "conditions": [{"attr": "mark_mean", "op": "<=", "param": "p_lo"}]},
        ],
    }
    doc.update(overrides)
    return json.dumps(doc)


def _view(**columns: list[float]) -> AggregatedView:
    n = len(next(iter(columns.values())))
    return AggregatedView(
        object_ids=tuple(f"o{i}" for i in range(n)),
        columns={k: np.asarray(v, dtype=np.float64) for k, v in columns.items()},
    )


class TestOp:
    @pytest.mark.parametrize(("raw", "op"), [("≥", Op.GE), ("≤", Op.LE), ("==", Op.EQ), (" < ", Op.LT)])
    def test_aliases(self, raw: str, op: Op) -> None:
        assert Op.parse(raw) is op

    def test_unknown(self) -> None:
        with pytest.raises(RuleSpecSyntaxError, match="operator"):
            Op.parse("!=")


class TestParamRange:
    def test_grid_closed_at_both_ends(self) -> None:
        assert ParamRange("p", 0, 1, 0.25).grid().tolist() == [0, 0.25, 0.5, 0.75, 1]

    def test_overshooting_step_truncates(self) -> None:
        assert ParamRange("p", 0, 1, 0.3).grid().tolist() == [0, 0.3, 0.6, 0.9]

    def test_degenerate_range(self) -> None:
        assert ParamRange("p", 5, 5, 1).size == 1

    def test_decimal_steps_land_on_grid(self) -> None:
        p = ParamRange("p", 0, 1, 0.1)
        assert p.size == 11
        assert p.index_of(0.3) == 3

    def test_off_grid_value(self) -> None:
        with pytest.raises(InvalidParameter, match="not on the grid"):
            ParamRange("p", 0, 10, 2).index_of(3)

    def test_snap_ties_toward_lower(self) -> None:
        p = ParamRange("p", 0, 10, 2)
        assert p.snap(3.0) == 1
        assert p.snap(3.1) == 2
        assert p.snap(-4) == 0
        assert p.snap(99) == 5

    def test_invalid_step(self) -> None:
        with pytest.raises(InvalidParameter, match="step"):
            ParamRange("p", 0, 1, 0)

    def test_inverted_bounds(self) -> None:
        with pytest.raises(InvalidParameter, match="exceeds"):
            ParamRange("p", 2, 1, 1)


class TestParseRuleSpec:
    def test_student_template(self) -> None:
        template = parse_rule_spec(_doc())
        assert [r.class_name for r in template.rules] == ["Excellent", "Bad"]
        assert template.param_names == ("p_hi", "p_lo")
        assert template.default_class == "Good"
        assert template.rules[0].combine is Combine.ALL

    def test_syntax_error_has_line(self) -> None:
        with pytest.raises(RuleSpecSyntaxError, match="line 2"):
            parse_rule_spec('{\n  "classes": [,]\n}')

    def test_unknown_param(self) -> None:
        rules = [{"class": "Bad", "conditions": [{"attr": "mark_mean", "op": "<", "param": "p_mid"}]}]
        with pytest.raises(UnknownParam, match="p_mid"):
            parse_rule_spec(_doc(rules=rules))

    def test_unknown_class(self) -> None:
        rules = [{"class": "Average", "conditions": [{"attr": "mark_mean", "op": "<", "param": "p_lo"}]}]
        with pytest.raises(UnknownClass, match="Average"):
            parse_rule_spec(_doc(rules=rules))

    def test_unknown_default_class(self) -> None:
        with pytest.raises(UnknownClass):
            parse_rule_spec(_doc(default_class="Average"))

    def test_empty_rule(self) -> None:
        with pytest.raises(EmptyRule, match="Bad"):
            parse_rule_spec(_doc(rules=[{"class": "Bad", "conditions": []}]))

    def test_duplicate_param(self) -> None:
        params = [{"name": "p", "lower": 0, "upper": 1}, {"name": "p", "lower": 0, "upper": 2}]
        with pytest.raises(DuplicateParam):
            parse_rule_spec(_doc(params=params, rules=[]))

    def test_undeclared_aggregate(self) -> None:
        rules = [{"class": "Bad", "conditions": [{"attr": "mark_max", "op": "<", "param": "p_lo"}]}]
        with pytest.raises(UnknownAttribute, match="mark_max"):
            parse_rule_spec(_doc(rules=rules))

    def test_missing_key_names_path(self) -> None:
        rules = [{"class": "Bad", "conditions": [{"attr": "mark_mean", "param": "p_lo"}]}]
        with pytest.raises(RuleSpecSyntaxError, match=r"rules\[0\]\.conditions\[0\]: missing key 'op'"):
            parse_rule_spec(_doc(rules=rules))

    def test_empty_compactness_attributes(self) -> None:
        with pytest.raises(RuleSpecSyntaxError, match="compactness_attributes"):
            parse_rule_spec(_doc(compactness_attributes=[]))

    def test_unused_param_warns(self, caplog: pytest.LogCaptureFixture) -> None:
        params = [
            {"name": "p_hi", "lower": 65, "upper": 100},
            {"name": "p_lo", "lower": 50, "upper": 58},
            {"name": "spare", "lower": 0, "upper": 1},
        ]
        parse_rule_spec(_doc(params=params))
        assert "not referenced" in caplog.text

    def test_round_trips_through_to_dict(self) -> None:
        template = parse_rule_spec(_doc())
        assert parse_rule_spec(json.dumps(template.to_dict())) == template


class TestBundledTemplates:
    def test_listed(self) -> None:
        assert {"student_rules", "pgg_rules", "pgg_sim"} <= set(bundled_templates())

    def test_student_grid(self, student_template: RuleTemplate) -> None:
        assert student_template.grid_sizes == (36, 9)
        assert student_template.grid_size == 324

    def test_pgg_template_shape(self, pgg_template: RuleTemplate) -> None:
        assert pgg_template.classes == ("FreeRider", "Weak", "Normal", "Strong")
        assert len(pgg_template.params) == 8
        assert pgg_template.grid_size == 420_000
        assert all(r.combine is Combine.ANY for r in pgg_template.rules)


class TestEnumerateCandidates:
    def test_product_in_lexicographic_order(self, template_factory: TemplateFactory) -> None:
        template = template_factory(
            params=[("a", 0, 2, 1), ("b", 0, 1, 1)],
            rules=[("X", "all", [("mark_mean", ">=", "a"), ("mark_mean", "<", "b")])],
            classes=["X", "Y"],
            default="Y",
        )
        indices = [c.indices for c in enumerate_candidates(template)]
        assert indices == [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]
        assert len(set(indices)) == template.grid_size == 6

    def test_degenerate_range_single_candidate(self, template_factory: TemplateFactory) -> None:
        template = template_factory(
            params=[("a", 3, 3, 1)],
            rules=[("X", "all", [("mark_mean", ">=", "a")])],
            classes=["X", "Y"],
            default="Y",
        )
        candidates = list(enumerate_candidates(template))
        assert len(candidates) == 1
        assert candidates[0].bindings == {"a": 3.0}

    def test_student_grid_count(self, student_template: RuleTemplate) -> None:
        assert sum(1 for _ in enumerate_candidates(student_template)) == 324

    def test_overflow_raises_eagerly(self, pgg_template: RuleTemplate) -> None:
        with pytest.raises(GridOverflow, match="420,000"):
            enumerate_candidates(pgg_template, cap=1000)

    def test_check_grid_returns_size(self, student_template: RuleTemplate) -> None:
        assert check_grid(student_template, cap=324) == 324

    def test_indices_at_matches_enumeration(self, student_template: RuleTemplate) -> None:
        for flat, candidate in enumerate(enumerate_candidates(student_template)):
            assert indices_at(student_template.grid_sizes, flat) == candidate.indices


class TestCandidateClassifier:
    def test_from_bindings(self, student_template: RuleTemplate) -> None:
        candidate = CandidateClassifier.from_bindings(student_template, {"p_hi": 76, "p_lo": 52})
        assert candidate.indices == (11, 2)
        assert candidate.bindings == {"p_hi": 76.0, "p_lo": 52.0}

    def test_missing_binding(self, student_template: RuleTemplate) -> None:
        with pytest.raises(UnknownParam, match="missing"):
            CandidateClassifier.from_bindings(student_template, {"p_hi": 76})

    def test_index_out_of_range(self, student_template: RuleTemplate) -> None:
        with pytest.raises(InvalidParameter):
            CandidateClassifier.from_indices(student_template, (36, 0))


class TestClassify:
    @pytest.mark.parametrize(("mark", "label"), [(80, "Excellent"), (52, "Bad"), (60, "Good"), (76, "Excellent")])
    def test_student_rules(self, student_template: RuleTemplate, mark: float, label: str) -> None:
        candidate = CandidateClassifier.from_bindings(student_template, {"p_hi": 76, "p_lo": 52})
        labeling = classify(_view(mark_mean=[mark]), candidate)
        assert labeling["o0"] == label

    def test_total_and_pure(self, student_template: RuleTemplate) -> None:
        view = _view(mark_mean=[10, 55, 99, 70])
        candidate = CandidateClassifier.from_bindings(student_template, {"p_hi": 70, "p_lo": 55})
        first = classify(view, candidate)
        assert len(first) == 4
        assert classify(view, candidate) == first

    def test_first_match_wins(self, template_factory: TemplateFactory) -> None:
        template = template_factory(
            params=[("a", 5, 5, 1), ("b", 1, 1, 1)],
            rules=[("X", "all", [("mark_mean", ">=", "a")]), ("Y", "all", [("mark_mean", ">=", "b")])],
            classes=["X", "Y", "Z"],
            default="Z",
        )
        labeling = classify(_view(mark_mean=[7, 3, 0]), CandidateClassifier(template, (0, 0)))
        assert [labeling[o] for o in ("o0", "o1", "o2")] == ["X", "Y", "Z"]

    def test_any_rule(self, template_factory: TemplateFactory) -> None:
        template = template_factory(
            params=[("c", 1, 1, 1), ("z", 6, 6, 1)],
            rules=[("FR", "any", [("c_mean", "<=", "c"), ("zeros", ">=", "z")])],
            classes=["FR", "Other"],
            default="Other",
            aggregates=[
                {"name": "c_mean", "source": "c", "kind": "mean"},
                {"name": "zeros", "source": "c", "kind": "count_eq", "value": 0},
            ],
            compactness=["c"],
        )
        view = _view(c_mean=[0.5, 4, 4], zeros=[0, 7, 2])
        labeling = classify(view, CandidateClassifier(template, (0, 0)))
        assert [labeling[o] for o in ("o0", "o1", "o2")] == ["FR", "FR", "Other"]

    def test_class_may_own_several_rules(self, template_factory: TemplateFactory) -> None:
        template = template_factory(
            params=[("lo", 10, 10, 1), ("hi", 90, 90, 1)],
            rules=[("Edge", "all", [("mark_mean", "<", "lo")]), ("Edge", "all", [("mark_mean", ">", "hi")])],
            classes=["Edge", "Middle"],
            default="Middle",
        )
        labeling = classify(_view(mark_mean=[5, 50, 95]), CandidateClassifier(template, (0, 0)))
        assert labeling.class_sizes() == {"Edge": 2, "Middle": 1}

    def test_equality_tolerance(self, template_factory: TemplateFactory) -> None:
        template = template_factory(
            params=[("v", 0.3, 0.3, 0.1)],
            rules=[("Hit", "all", [("mark_mean", "=", "v")])],
            classes=["Hit", "Miss"],
            default="Miss",
        )
        labeling = classify(_view(mark_mean=[0.1 + 0.2, 0.31]), CandidateClassifier(template, (0,)))
        assert (labeling["o0"], labeling["o1"]) == ("Hit", "Miss")

    def test_missing_attribute(self, student_template: RuleTemplate) -> None:
        candidate = CandidateClassifier.from_bindings(student_template, {"p_hi": 76, "p_lo": 52})
        with pytest.raises(UnknownAttribute):
            classify(_view(grade=[1.0]), candidate)


class TestLabelFiles:
    def test_write_then_read(self, tmp_path: Path) -> None:
        labeling = Labeling({"b": "Bad", "a": "Good"})
        path = write_labels(labeling, tmp_path / "labels.csv", ["a", "b"])
        assert path.read_text() == "object_id,class\na,Good\nb,Bad\n"
        assert read_labels(path) == labeling

    def test_duplicate_object(self, tmp_path: Path) -> None:
        path = tmp_path / "labels.csv"
        path.write_text("object_id,class\na,Good\na,Bad\n")
        with pytest.raises(DuplicateRow, match="line 3"):
            read_labels(path)

    def test_duplicate_after_trimming_ids(self, tmp_path: Path) -> None:
        path = tmp_path / "labels.csv"
        path.write_text("object_id,class\n a,Good\na ,Bad\n")
        with pytest.raises(DuplicateRow, match="line 3: object 'a'"):
            read_labels(path)


class TestLabeling:
    def test_class_sizes_include_requested_empty_classes(self) -> None:
        labeling = Labeling({"a": "X", "b": "X", "c": "Y"})
        assert labeling.class_sizes(["X", "Y", "Z"]) == {"X": 2, "Y": 1, "Z": 0}

    def test_restrict(self) -> None:
        labeling = Labeling({"a": "X", "b": "Y"})
        assert labeling.restrict(["b"]).labels == {"b": "Y"}

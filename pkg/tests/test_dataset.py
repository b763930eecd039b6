"""Tests for temporal_rules.dataset."""

from __future__ import annotations

from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest
from conftest import make_panel

from temporal_rules.dataset import (
    AggregateKind,
    AggregateSpec,
    TemporalDataset,
    aggregate,
    format_number,
    load_temporal_csv,
    normalize_minmax,
)
from temporal_rules.errors import (
    DuplicateParam,
    DuplicateRow,
    EmptyDataset,
    MissingCell,
    NonNumericValue,
    RuleSpecSyntaxError,
    UnknownAttribute,
)

WriteCsv = Callable[[str, str], Path]


class TestFormatNumber:
    def test_integral_without_fraction(self) -> None:
        assert format_number(20.0) == "20"

    def test_fraction_kept(self) -> None:
        assert format_number(6.5) == "6.5"


class TestTemporalDataset:
    def test_shape_mismatch_raises(self) -> None:
        with pytest.raises(ValueError, match="does not match"):
            TemporalDataset(("a",), (1, 2), ("x",), np.zeros((1, 3, 1)))

    def test_duplicate_ids_raise(self) -> None:
        with pytest.raises(DuplicateRow):
            TemporalDataset(("a", "a"), (1,), ("x",), np.zeros((2, 1, 1)))

    def test_values_read_only(self) -> None:
        data = make_panel({"a": [1, 2]})
        with pytest.raises(ValueError):
            data.values[0, 0, 0] = 5

    def test_unknown_attribute(self) -> None:
        data = make_panel({"a": [1, 2]})
        with pytest.raises(UnknownAttribute, match="'nope'"):
            data.series("nope")


class TestLoadTemporalCsv:
    def test_loads_and_orders_rows(self, write_csv: WriteCsv) -> None:
        path = write_csv(
            "panel.csv",
            "object_id,time,mark,hours\nb,2,4,1\na,2,2,1\nb,1,3,0\na,1,1.5,0\n",
        )
        data = load_temporal_csv(path)
        assert data.object_ids == ("a", "b")
        assert data.time_points == (1, 2)
        assert data.attribute_names == ("mark", "hours")
        np.testing.assert_array_equal(data.series("mark"), [[1.5, 2], [3, 4]])

    def test_missing_cell(self, write_csv: WriteCsv) -> None:
        path = write_csv("panel.csv", "object_id,time,mark\na,1,1\na,2,2\nb,1,3\n")
        with pytest.raises(MissingCell, match="'b' at time 2"):
            load_temporal_csv(path)

    def test_duplicate_row(self, write_csv: WriteCsv) -> None:
        path = write_csv("panel.csv", "object_id,time,mark\na,1,1\na,1,2\n")
        with pytest.raises(DuplicateRow, match="line 3"):
            load_temporal_csv(path)

    def test_non_numeric_value_names_line_and_column(self, write_csv: WriteCsv) -> None:
        path = write_csv("panel.csv", "object_id,time,mark\na,1,1\na,2,high\n")
        with pytest.raises(NonNumericValue, match=r"line 3, column 'mark'"):
            load_temporal_csv(path)

    def test_non_integer_time(self, write_csv: WriteCsv) -> None:
        path = write_csv("panel.csv", "object_id,time,mark\na,1.5,1\n")
        with pytest.raises(NonNumericValue, match="time"):
            load_temporal_csv(path)

    @pytest.mark.parametrize("literal", ["1e30", "-1e30", "inf"])
    def test_time_out_of_range(self, literal: str, write_csv: WriteCsv) -> None:
        path = write_csv("panel.csv", f"object_id,time,mark\na,1,1\na,{literal},2\n")
        with pytest.raises(NonNumericValue, match=r"line 3, column 'time'.*out of range"):
            load_temporal_csv(path)

    def test_header_only(self, write_csv: WriteCsv) -> None:
        path = write_csv("panel.csv", "object_id,time,mark\n")
        with pytest.raises(EmptyDataset, match="no data rows"):
            load_temporal_csv(path)

    def test_empty_file(self, write_csv: WriteCsv) -> None:
        path = write_csv("panel.csv", "")
        with pytest.raises(EmptyDataset):
            load_temporal_csv(path)

    def test_bad_header(self, write_csv: WriteCsv) -> None:
        path = write_csv("panel.csv", "id,t,mark\na,1,1\n")
        with pytest.raises(EmptyDataset, match="header"):
            load_temporal_csv(path)

    def test_written_panel_loads_back(self, tmp_path: Path) -> None:
        data = make_panel({"x": [1, 2.5], "y": [3, 4]})
        loaded = load_temporal_csv(data.to_csv(tmp_path / "panel.csv"))
        assert loaded.object_ids == data.object_ids
        np.testing.assert_array_equal(loaded.values, data.values)


class TestAggregate:
    @pytest.fixture()
    def data(self) -> TemporalDataset:
        return make_panel({"a": [0, 0, 3, 5], "b": [2, 2, 4, 4]})

    @pytest.mark.parametrize(
        ("kind", "value", "expected"),
        [
            (AggregateKind.MEAN, None, [2.0, 3.0]),
            (AggregateKind.MIN, None, [0.0, 2.0]),
            (AggregateKind.MAX, None, [5.0, 4.0]),
            (AggregateKind.MEDIAN, None, [1.5, 3.0]),
            (AggregateKind.MODE, None, [0.0, 2.0]),
            (AggregateKind.COUNT_EQ, 0, [2.0, 0.0]),
            (AggregateKind.COUNT_LEQ, 3, [3.0, 2.0]),
        ],
    )
    def test_kinds(
        self, data: TemporalDataset, kind: AggregateKind, value: float | None, expected: list[float]
    ) -> None:
        view = aggregate(data, [AggregateSpec("agg", "mark", kind, value)])
        np.testing.assert_allclose(view.column("agg"), expected)

    def test_stddev_is_population(self, data: TemporalDataset) -> None:
        view = aggregate(data, [AggregateSpec("sd", "mark", AggregateKind.STDDEV)])
        assert view.column("sd")[1] == pytest.approx(1.0)

    def test_count_eq_tolerance(self) -> None:
        data = make_panel({"a": [1e-12, 0.5]})
        view = aggregate(data, [AggregateSpec("z", "mark", AggregateKind.COUNT_EQ, 0.0)])
        assert view.column("z")[0] == 1

    def test_duplicate_name(self, data: TemporalDataset) -> None:
        spec = AggregateSpec("m", "mark", AggregateKind.MEAN)
        with pytest.raises(DuplicateParam):
            aggregate(data, [spec, spec])

    def test_unknown_source(self, data: TemporalDataset) -> None:
        with pytest.raises(UnknownAttribute):
            aggregate(data, [AggregateSpec("m", "grade", AggregateKind.MEAN)])

    def test_unknown_aggregate_column(self, data: TemporalDataset) -> None:
        view = aggregate(data, [])
        with pytest.raises(UnknownAttribute):
            view.column("mark_mean")

    def test_view_csv(self, data: TemporalDataset, tmp_path: Path) -> None:
        view = aggregate(data, [AggregateSpec("mark_mean", "mark", AggregateKind.MEAN)])
        text = view.to_csv(tmp_path / "view.csv").read_text()
        assert text == "object_id,mark_mean\na,2\nb,3\n"


class TestAggregateSpec:
    def test_from_dict(self) -> None:
        spec = AggregateSpec.from_dict({"name": "z", "source": "c", "kind": "count_eq", "value": 0})
        assert spec.kind is AggregateKind.COUNT_EQ
        assert spec.value == 0.0

    def test_count_without_value(self) -> None:
        with pytest.raises(RuleSpecSyntaxError, match="requires a 'value'"):
            AggregateSpec.from_dict({"name": "z", "source": "c", "kind": "count_eq"})

    def test_unknown_kind(self) -> None:
        with pytest.raises(RuleSpecSyntaxError, match="unknown aggregate kind"):
            AggregateSpec.from_dict({"name": "z", "source": "c", "kind": "variance"})


class TestNormalizeMinmax:
    def test_scales_to_unit_range(self) -> None:
        data = make_panel({"a": {"x": [0, 10], "y": [1, 1]}, "b": {"x": [5, 5], "y": [1, 1]}})
        scaled = normalize_minmax(data, ["x", "y"])
        np.testing.assert_allclose(scaled.series("x"), [[0, 1], [0.5, 0.5]])
        np.testing.assert_array_equal(scaled.series("y"), 0)

    def test_unlisted_untouched(self) -> None:
        data = make_panel({"a": {"x": [0, 10], "y": [3, 7]}})
        scaled = normalize_minmax(data, ["x"])
        np.testing.assert_array_equal(scaled.series("y"), [[3, 7]])

"""Expert rule templates with threshold ranges, candidate grids, and classification."""

from __future__ import annotations

import itertools
import json
import logging
import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from temporal_rules.config import DEFAULT_GRID_CAP
from temporal_rules.dataset import EQ_TOLERANCE, ID_COLUMN, AggregatedView, AggregateSpec
from temporal_rules.errors import (
    DuplicateParam,
    DuplicateRow,
    EmptyDataset,
    EmptyRule,
    GridOverflow,
    InvalidParameter,
    RuleSpecSyntaxError,
    UnknownAttribute,
    UnknownClass,
    UnknownParam,
)

log = logging.getLogger(__name__)

CLASS_COLUMN = "class"
_GRID_DECIMALS = 12


class Op(Enum):
    """Comparison between an aggregate and a bound parameter."""

    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="
    EQ = "="

    @classmethod
    def parse(cls, raw: str) -> Op:
        text = raw.strip()
        aliases = {"≤": "<=", "≥": ">=", "==": "="}
        try:
            return cls(aliases.get(text, text))
        except ValueError:
            msg = f"unknown comparison operator {raw!r}"
            raise RuleSpecSyntaxError(msg) from None


class Combine(Enum):
    """How a rule joins its conditions."""

    ALL = "all"
    ANY = "any"


def condition_mask(column: np.ndarray, op: Op, value: float) -> np.ndarray:
    """Evaluate ``column <op> value`` element-wise."""
    match op:
        case Op.LT:
            return column < value
        case Op.LE:
            return column <= value
        case Op.GT:
            return column > value
        case Op.GE:
            return column >= value
        case Op.EQ:
            return np.abs(column - value) <= EQ_TOLERANCE
    msg = f"unsupported operator {op}"
    raise ValueError(msg)


@dataclass(frozen=True)
class Condition:
    attribute: str
    op: Op
    param: str


@dataclass(frozen=True)
class Rule:
    """Assigns ``class_name`` when its conditions hold (ALL) or any holds (ANY)."""

    class_name: str
    combine: Combine
    conditions: tuple[Condition, ...]


@dataclass(frozen=True)
class ParamRange:
    """Closed threshold range discretized as ``lower, lower+step, ... <= upper``."""

    name: str
    lower: float
    upper: float
    step: float

    def __post_init__(self) -> None:
        if not self.step > 0:
            msg = f"parameter {self.name!r}: step must be > 0, got {self.step}"
            raise InvalidParameter(msg)
        if self.lower > self.upper:
            msg = f"parameter {self.name!r}: lower {self.lower} exceeds upper {self.upper}"
            raise InvalidParameter(msg)

    @property
    def size(self) -> int:
        return math.floor((self.upper - self.lower) / self.step + 1e-9) + 1

    def grid(self) -> np.ndarray:
        values = self.lower + np.arange(self.size, dtype=np.float64) * self.step
        return np.round(values, _GRID_DECIMALS)

    def index_of(self, value: float) -> int:
        """Grid position of *value*; raises when it is not a grid point."""
        grid = self.grid()
        pos = int(np.argmin(np.abs(grid - value)))
        if abs(grid[pos] - value) > 1e-9:
            msg = f"value {value} is not on the grid of parameter {self.name!r}"
            raise InvalidParameter(msg)
        return pos

    def snap(self, x: float) -> int:
        """Nearest grid position to *x*, ties toward the lower value."""
        k = (x - self.lower) / self.step
        pos = math.ceil(k - 0.5)
        return min(max(pos, 0), self.size - 1)


@dataclass(frozen=True)
class RuleTemplate:
    """Ordered first-match rules plus the ranges their thresholds come from."""

    classes: tuple[str, ...]
    rules: tuple[Rule, ...]
    default_class: str
    params: tuple[ParamRange, ...]
    compactness_attributes: tuple[str, ...]
    aggregates: tuple[AggregateSpec, ...] = ()

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    @property
    def grid_sizes(self) -> tuple[int, ...]:
        return tuple(p.size for p in self.params)

    @property
    def grid_size(self) -> int:
        """Number of candidate classifiers D."""
        return math.prod(self.grid_sizes)

    def param(self, name: str) -> ParamRange:
        for p in self.params:
            if p.name == name:
                return p
        msg = f"unknown parameter {name!r}"
        raise UnknownParam(msg)

    def to_dict(self) -> dict[str, Any]:
        return {
            "classes": list(self.classes),
            "default_class": self.default_class,
            "compactness_attributes": list(self.compactness_attributes),
            "aggregates": [a.to_dict() for a in self.aggregates],
            "params": [
                {"name": p.name, "lower": p.lower, "upper": p.upper, "step": p.step}
                for p in self.params
            ],
            "rules": [
                {
                    "class": r.class_name,
                    "combine": r.combine.value,
                    "conditions": [
                        {"attr": c.attribute, "op": c.op.value, "param": c.param}
                        for c in r.conditions
                    ],
                }
                for r in self.rules
            ],
        }


@dataclass(frozen=True)
class CandidateClassifier:
    """A template with every parameter bound to one grid value."""

    template: RuleTemplate
    indices: tuple[int, ...]

    @classmethod
    def from_indices(cls, template: RuleTemplate, indices: Sequence[int]) -> CandidateClassifier:
        if len(indices) != len(template.params):
            msg = f"expected {len(template.params)} grid indices, got {len(indices)}"
            raise InvalidParameter(msg)
        for p, i in zip(template.params, indices, strict=True):
            if not 0 <= i < p.size:
                msg = f"grid index {i} out of range for parameter {p.name!r}"
                raise InvalidParameter(msg)
        return cls(template, tuple(int(i) for i in indices))

    @classmethod
    def from_bindings(
        cls, template: RuleTemplate, bindings: Mapping[str, float]
    ) -> CandidateClassifier:
        unknown = set(bindings) - set(template.param_names)
        if unknown:
            msg = f"bindings name undeclared parameters: {sorted(unknown)}"
            raise UnknownParam(msg)
        missing = [n for n in template.param_names if n not in bindings]
        if missing:
            msg = f"bindings are missing parameters: {missing}"
            raise UnknownParam(msg)
        return cls(template, tuple(p.index_of(float(bindings[p.name])) for p in template.params))

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(
            float(p.grid()[i]) for p, i in zip(self.template.params, self.indices, strict=True)
        )

    @property
    def bindings(self) -> dict[str, float]:
        return dict(zip(self.template.param_names, self.values, strict=True))


@dataclass(frozen=True)
class Labeling:
    """Total assignment of one class label per object."""

    labels: Mapping[str, str]

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, object_id: str) -> str:
        return self.labels[object_id]

    @property
    def object_ids(self) -> tuple[str, ...]:
        return tuple(self.labels)

    def classes(self) -> list[str]:
        """Distinct labels in first-seen order."""
        return list(dict.fromkeys(self.labels.values()))

    def class_sizes(self, classes: Sequence[str] | None = None) -> dict[str, int]:
        names = list(classes) if classes is not None else sorted(self.classes())
        sizes = dict.fromkeys(names, 0)
        for label in self.labels.values():
            sizes[label] = sizes.get(label, 0) + 1
        return sizes

    def restrict(self, object_ids: Sequence[str]) -> Labeling:
        return Labeling({o: self.labels[o] for o in object_ids})


# --- Rule documents ---


def _require(raw: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in raw:
        msg = f"{where}: missing key {key!r}"
        raise RuleSpecSyntaxError(msg)
    return raw[key]


def _as_list(value: Any, where: str) -> list[Any]:
    if not isinstance(value, list):
        msg = f"{where}: expected an array, got {type(value).__name__}"
        raise RuleSpecSyntaxError(msg)
    return value


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, int | float):
        msg = f"{where}: expected a number, got {value!r}"
        raise RuleSpecSyntaxError(msg)
    return float(value)


def parse_rule_spec(text: str) -> RuleTemplate:
    """Parse and validate a JSON rule document; rule order is kept as written."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        msg = f"line {e.lineno}, column {e.colno}: {e.msg}"
        raise RuleSpecSyntaxError(msg) from None
    if not isinstance(doc, dict):
        msg = "line 1: rule document must be a JSON object"
        raise RuleSpecSyntaxError(msg)

    classes = [str(c) for c in _as_list(_require(doc, "classes", "document"), "classes")]
    if not classes:
        msg = "classes: at least one class is required"
        raise RuleSpecSyntaxError(msg)
    if len(set(classes)) != len(classes):
        msg = f"classes: duplicate class names in {classes}"
        raise RuleSpecSyntaxError(msg)

    default_class = str(_require(doc, "default_class", "document"))
    if default_class not in classes:
        msg = f"default_class {default_class!r} is not one of {classes}"
        raise UnknownClass(msg)

    compactness = [
        str(a)
        for a in _as_list(
            _require(doc, "compactness_attributes", "document"), "compactness_attributes"
        )
    ]
    if not compactness:
        msg = "compactness_attributes: at least one temporal attribute is required"
        raise RuleSpecSyntaxError(msg)

    aggregates: list[AggregateSpec] = []
    for i, raw in enumerate(_as_list(doc.get("aggregates", []), "aggregates")):
        spec = AggregateSpec.from_dict(raw)
        if any(a.name == spec.name for a in aggregates):
            msg = f"aggregates[{i}]: aggregate {spec.name!r} declared twice"
            raise DuplicateParam(msg)
        aggregates.append(spec)

    params: list[ParamRange] = []
    for i, raw in enumerate(_as_list(_require(doc, "params", "document"), "params")):
        where = f"params[{i}]"
        name = str(_require(raw, "name", where))
        if any(p.name == name for p in params):
            msg = f"{where}: parameter {name!r} declared twice"
            raise DuplicateParam(msg)
        params.append(
            ParamRange(
                name=name,
                lower=_number(_require(raw, "lower", where), f"{where}.lower"),
                upper=_number(_require(raw, "upper", where), f"{where}.upper"),
                step=_number(raw.get("step", 1), f"{where}.step"),
            )
        )
    declared = {p.name for p in params}
    aggregate_names = {a.name for a in aggregates}

    rules: list[Rule] = []
    referenced: set[str] = set()
    for i, raw in enumerate(_as_list(_require(doc, "rules", "document"), "rules")):
        where = f"rules[{i}]"
        class_name = str(_require(raw, "class", where))
        if class_name not in classes:
            msg = f"{where}: class {class_name!r} is not one of {classes}"
            raise UnknownClass(msg)
        try:
            combine = Combine(str(raw.get("combine", "all")).lower())
        except ValueError:
            msg = f"{where}: combine must be 'all' or 'any', got {raw.get('combine')!r}"
            raise RuleSpecSyntaxError(msg) from None
        conditions: list[Condition] = []
        for j, cond in enumerate(_as_list(raw.get("conditions", []), f"{where}.conditions")):
            cwhere = f"{where}.conditions[{j}]"
            attr = str(_require(cond, "attr", cwhere))
            param = str(_require(cond, "param", cwhere))
            if param not in declared:
                msg = f"{cwhere}: parameter {param!r} is not declared in params"
                raise UnknownParam(msg)
            if aggregate_names and attr not in aggregate_names:
                msg = f"{cwhere}: attribute {attr!r} is not a declared aggregate"
                raise UnknownAttribute(msg)
            referenced.add(param)
            conditions.append(Condition(attr, Op.parse(str(_require(cond, "op", cwhere))), param))
        if not conditions:
            msg = f"{where}: rule for class {class_name!r} has no conditions"
            raise EmptyRule(msg)
        rules.append(Rule(class_name, combine, tuple(conditions)))

    unused = sorted(declared - referenced)
    if unused:
        log.warning("Parameters not referenced by any rule", extra={"params": unused})

    template = RuleTemplate(
        classes=tuple(classes),
        rules=tuple(rules),
        default_class=default_class,
        params=tuple(params),
        compactness_attributes=tuple(compactness),
        aggregates=tuple(aggregates),
    )
    log.debug(
        "Rule template parsed",
        extra={"rules": len(rules), "params": len(params), "grid_size": template.grid_size},
    )
    return template


def load_rule_spec(path: Path) -> RuleTemplate:
    return parse_rule_spec(Path(path).read_text(encoding="utf-8"))


def bundled_templates() -> list[str]:
    """Names of the JSON documents shipped in ``temporal_rules/templates``."""
    folder = resources.files("temporal_rules") / "templates"
    return sorted(p.name.removesuffix(".json") for p in folder.iterdir() if p.name.endswith(".json"))


def bundled_text(name: str) -> str:
    folder = resources.files("temporal_rules") / "templates"
    entry = folder / f"{name}.json"
    if not entry.is_file():
        msg = f"no bundled document named {name!r}; available: {bundled_templates()}"
        raise FileNotFoundError(msg)
    return entry.read_text(encoding="utf-8")


def load_bundled_template(name: str) -> RuleTemplate:
    return parse_rule_spec(bundled_text(name))


# --- Candidate grid ---


def check_grid(template: RuleTemplate, cap: int = DEFAULT_GRID_CAP) -> int:
    """Return D, raising GridOverflow when it exceeds *cap*."""
    size = template.grid_size
    if size > cap:
        msg = (
            f"candidate grid has {size:,} points, above the cap of {cap:,}; "
            "coarsen parameter steps or use --mode de"
        )
        raise GridOverflow(msg)
    return size


def enumerate_candidates(
    template: RuleTemplate, cap: int = DEFAULT_GRID_CAP
) -> Iterator[CandidateClassifier]:
    """Yield the Cartesian product of parameter grids in lexicographic order."""
    check_grid(template, cap)
    return (
        CandidateClassifier(template, idx)
        for idx in itertools.product(*(range(n) for n in template.grid_sizes))
    )


def indices_at(sizes: Sequence[int], flat: int) -> tuple[int, ...]:
    """Grid indices of the *flat*-th candidate in enumeration order."""
    out = [0] * len(sizes)
    for pos in range(len(sizes) - 1, -1, -1):
        flat, out[pos] = divmod(flat, sizes[pos])
    return tuple(out)


# --- Classification ---


def assign_classes(template: RuleTemplate, rule_masks: Sequence[np.ndarray], n: int) -> np.ndarray:
    """First-match class indices from per-rule firing masks; default last."""
    class_pos = {c: i for i, c in enumerate(template.classes)}
    assigned = np.full(n, -1, dtype=np.int64)
    for rule, fires in zip(template.rules, rule_masks, strict=True):
        take = fires & (assigned < 0)
        assigned[take] = class_pos[rule.class_name]
    assigned[assigned < 0] = class_pos[template.default_class]
    return assigned


def rule_mask(rule: Rule, masks: Sequence[np.ndarray]) -> np.ndarray:
    if rule.combine is Combine.ALL:
        return np.logical_and.reduce(masks)
    return np.logical_or.reduce(masks)


def classify_indices(view: AggregatedView, candidate: CandidateClassifier) -> np.ndarray:
    """Class positions (into ``template.classes``) for every object of *view*."""
    template = candidate.template
    bindings = candidate.bindings
    rule_masks = [
        rule_mask(
            rule,
            [condition_mask(view.column(c.attribute), c.op, bindings[c.param]) for c in rule.conditions],
        )
        for rule in template.rules
    ]
    return assign_classes(template, rule_masks, len(view.object_ids))


def labeling_from_indices(
    object_ids: Sequence[str], classes: Sequence[str], assigned: np.ndarray
) -> Labeling:
    return Labeling({o: classes[int(i)] for o, i in zip(object_ids, assigned, strict=True)})


def classify(view: AggregatedView, candidate: CandidateClassifier) -> Labeling:
    """Label every object with the first rule that fires, else the default class."""
    assigned = classify_indices(view, candidate)
    return labeling_from_indices(view.object_ids, candidate.template.classes, assigned)


# --- Label files ---


def read_labels(path: Path) -> Labeling:
    """Read an ``object_id,class`` file."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        msg = f"{path}: file is empty"
        raise EmptyDataset(msg) from None
    if list(frame.columns[:2]) != [ID_COLUMN, CLASS_COLUMN]:
        msg = f"{path}: header must be '{ID_COLUMN},{CLASS_COLUMN}'"
        raise EmptyDataset(msg)
    if frame.empty:
        msg = f"{path}: no labels"
        raise EmptyDataset(msg)
    ids = frame[ID_COLUMN].str.strip()
    dup = ids.duplicated()
    if dup.any():
        pos = int(np.flatnonzero(dup.to_numpy())[0])
        msg = f"{path}: line {pos + 2}: object {ids.iloc[pos]!r} labeled twice"
        raise DuplicateRow(msg)
    return Labeling(dict(zip(ids, frame[CLASS_COLUMN].str.strip(), strict=True)))


def write_labels(labeling: Labeling, path: Path, order: Sequence[str] | None = None) -> Path:
    """Write ``object_id,class`` rows in *order* (default: labeling order)."""
    ids = list(order) if order is not None else list(labeling.object_ids)
    frame = pd.DataFrame({ID_COLUMN: ids, CLASS_COLUMN: [labeling[o] for o in ids]})
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


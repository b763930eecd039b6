"""Synthetic public goods game panels with planted player archetypes.

Players are shuffled into fixed groups. Each round a player forms a belief
about the co-players' average contribution (round 1: an initial belief;
later rounds: the previous round's rounded co-player average), responds
according to its archetype, and adds rounded Gaussian noise. Everything is
kept on the integer token lattice.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Self

import numpy as np
import pandas as pd

from temporal_rules.dataset import ID_COLUMN, TemporalDataset
from temporal_rules.errors import (
    InvalidParameter,
    OutOfRangeContribution,
    RosterSizeError,
    RuleSpecSyntaxError,
)
from temporal_rules.rules import Labeling, write_labels

log = logging.getLogger(__name__)

PANEL_ATTRIBUTES = ("contribution", "belief", "others")


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _clamp(x: int, lo: int, hi: int) -> int:
    return min(max(x, lo), hi)


@dataclass(frozen=True)
class PggParams:
    """Game constants: group size, endowment, marginal per-capita return, rounds."""

    group_size: int = 4
    endowment: int = 20
    mpcr: float = 0.4
    rounds: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.group_size < 2:
            msg = f"group_size must be >= 2, got {self.group_size}"
            raise InvalidParameter(msg)
        if not 1 / self.group_size < self.mpcr < 1:
            msg = (
                f"mpcr must lie in (1/group_size, 1) = ({1 / self.group_size:g}, 1), "
                f"got {self.mpcr}"
            )
            raise InvalidParameter(msg)
        if self.rounds < 1:
            msg = f"rounds must be >= 1, got {self.rounds}"
            raise InvalidParameter(msg)
        if self.endowment <= 0:
            msg = f"endowment must be > 0, got {self.endowment}"
            raise InvalidParameter(msg)


class ArchetypeKind(Enum):
    FREE_RIDER = "FreeRider"
    CONDITIONAL_COOPERATOR = "ConditionalCooperator"
    TRIANGLE_CONTRIBUTOR = "TriangleContributor"
    RANDOM = "Random"


@dataclass(frozen=True)
class Archetype:
    """Behavioural type of a simulated player.

    ``peak`` and ``initial_belief`` default to half the endowment when None.
    """

    kind: ArchetypeKind
    slope: float = 1.0
    peak: float | None = None
    noise_sd: float = 1.0
    initial_belief: float | None = None

    def __post_init__(self) -> None:
        if self.noise_sd < 0:
            msg = f"noise_sd must be >= 0, got {self.noise_sd}"
            raise InvalidParameter(msg)
        if self.slope < 0:
            msg = f"slope must be >= 0, got {self.slope}"
            raise InvalidParameter(msg)

    def peak_for(self, params: PggParams) -> float:
        peak = params.endowment / 2 if self.peak is None else self.peak
        if not 0 <= peak <= params.endowment:
            msg = f"peak must lie in [0, {params.endowment}], got {peak}"
            raise InvalidParameter(msg)
        return peak

    def initial_belief_for(self, params: PggParams) -> float:
        return params.endowment / 2 if self.initial_belief is None else self.initial_belief


def payoff(own_g: float, all_g: Sequence[float], params: PggParams) -> float:
    """Round gain: tokens kept plus the MPCR share of the group project."""
    for g in (own_g, *all_g):
        if not 0 <= g <= params.endowment:
            msg = f"contribution {g} outside [0, {params.endowment}]"
            raise OutOfRangeContribution(msg)
    return params.endowment - own_g + params.mpcr * math.fsum(all_g)


def response(
    archetype: Archetype,
    belief: float,
    params: PggParams,
    rng: np.random.Generator | None = None,
) -> int:
    """Noiseless intended contribution given a belief about co-players."""
    top = params.endowment
    match archetype.kind:
        case ArchetypeKind.FREE_RIDER:
            return 0
        case ArchetypeKind.CONDITIONAL_COOPERATOR:
            return _clamp(round_half_up(archetype.slope * belief), 0, top)
        case ArchetypeKind.TRIANGLE_CONTRIBUTOR:
            peak = archetype.peak_for(params)
            if belief <= peak:
                raw = belief if peak > 0 else 0.0
            else:
                raw = peak * (top - belief) / (top - peak)
            return _clamp(round_half_up(raw), 0, top)
        case ArchetypeKind.RANDOM:
            gen = rng if rng is not None else np.random.default_rng(0)
            return int(gen.integers(0, top + 1))
    msg = f"unsupported archetype {archetype.kind}"
    raise ValueError(msg)


def contribution_table(
    archetype: Archetype,
    params: PggParams | None = None,
    rng: np.random.Generator | None = None,
) -> list[int]:
    """Stated contribution for every rounded co-player average 0..endowment."""
    params = params or PggParams()
    return [response(archetype, h, params, rng) for h in range(params.endowment + 1)]


@dataclass(frozen=True)
class RosterEntry:
    count: int
    archetype: Archetype


@dataclass(frozen=True)
class SimConfig:
    """Simulator input: game parameters, roster and seed."""

    params: PggParams = field(default_factory=PggParams)
    roster: tuple[RosterEntry, ...] = ()
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> Self:
        p = dict(raw.get("params", {}))
        seed = int(raw.get("seed", p.get("seed", 0)))
        params = PggParams(
            group_size=int(p.get("group_size", 4)),
            endowment=int(p.get("endowment", 20)),
            mpcr=float(p.get("mpcr", 0.4)),
            rounds=int(p.get("rounds", 10)),
            seed=seed,
        )
        roster = []
        for i, entry in enumerate(raw.get("roster", [])):
            try:
                kind = ArchetypeKind(entry["kind"])
                count = int(entry["count"])
            except KeyError as e:
                msg = f"roster[{i}]: missing key {e.args[0]!r}"
                raise RuleSpecSyntaxError(msg) from None
            except ValueError:
                known = [k.value for k in ArchetypeKind]
                msg = f"roster[{i}]: unknown kind {entry.get('kind')!r}; expected one of {known}"
                raise RuleSpecSyntaxError(msg) from None
            archetype = Archetype(
                kind=kind,
                slope=float(entry.get("slope", 1.0)),
                peak=None if entry.get("peak") is None else float(entry["peak"]),
                noise_sd=float(entry.get("noise_sd", 1.0)),
                initial_belief=(
                    None if entry.get("initial_belief") is None else float(entry["initial_belief"])
                ),
            )
            roster.append(RosterEntry(count, archetype))
        return cls(params=params, roster=tuple(roster), seed=seed)

    @classmethod
    def load(cls, path: Path) -> Self:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            msg = f"{path}: line {e.lineno}, column {e.colno}: {e.msg}"
            raise RuleSpecSyntaxError(msg) from None
        return cls.from_dict(raw)


@dataclass(frozen=True, eq=False)
class SimOutput:
    """Simulated panel with planted labels, stated tables and exact co-player means."""

    panel: TemporalDataset
    truth: Labeling
    tables: Mapping[str, tuple[int, ...]]
    unrounded_others: np.ndarray
    groups: tuple[tuple[str, ...], ...]

    def panel_with_unrounded(self) -> TemporalDataset:
        """Panel plus an ``unrounded_others`` column."""
        values = np.concatenate([self.panel.values, self.unrounded_others[:, :, None]], axis=2)
        return TemporalDataset(
            self.panel.object_ids,
            self.panel.time_points,
            (*self.panel.attribute_names, "unrounded_others"),
            values,
        )

    def write(self, out_dir: Path, *, include_unrounded: bool = True) -> list[Path]:
        """Write ``panel.csv``, ``truth.csv`` and ``tables.csv`` into *out_dir*."""
        out_dir.mkdir(parents=True, exist_ok=True)
        panel = self.panel_with_unrounded() if include_unrounded else self.panel
        written = [
            panel.to_csv(out_dir / "panel.csv"),
            write_labels(self.truth, out_dir / "truth.csv", self.panel.object_ids),
            write_tables(self.tables, out_dir / "tables.csv", self.panel.object_ids),
        ]
        log.info("Simulation written", extra={"out_dir": str(out_dir), "files": len(written)})
        return written


def write_tables(
    tables: Mapping[str, Sequence[int]], path: Path, order: Sequence[str]
) -> Path:
    width = len(next(iter(tables.values())))
    frame = pd.DataFrame(
        [[o, *tables[o]] for o in order],
        columns=[ID_COLUMN, *(f"h{h}" for h in range(width))],
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def read_tables(path: Path) -> dict[str, tuple[int, ...]]:
    """Read ``object_id,h0,...,hE`` contribution tables."""
    frame = pd.read_csv(path, dtype={ID_COLUMN: str})
    cols = [c for c in frame.columns if c != ID_COLUMN]
    return {
        str(row[ID_COLUMN]): tuple(int(row[c]) for c in cols)
        for row in frame.to_dict(orient="records")
    }


def simulate(
    params: PggParams,
    roster: Sequence[tuple[int, Archetype]] | Sequence[RosterEntry],
    seed: int | None = None,
) -> SimOutput:
    """Run a repeated public goods game for the whole roster."""
    entries = [e if isinstance(e, RosterEntry) else RosterEntry(*e) for e in roster]
    total = sum(e.count for e in entries)
    if total == 0 or total % params.group_size:
        msg = f"roster of {total} players cannot be split into groups of {params.group_size}"
        raise RosterSizeError(msg)

    rng = np.random.default_rng(params.seed if seed is None else seed)
    top = params.endowment
    width = len(str(total))
    players = [f"p{i + 1:0{width}d}" for i in range(total)]
    archetypes = [e.archetype for e in entries for _ in range(e.count)]

    order = rng.permutation(total)
    groups = [order[g : g + params.group_size] for g in range(0, total, params.group_size)]
    group_of = np.empty(total, dtype=np.int64)
    for gi, members in enumerate(groups):
        group_of[members] = gi

    tables = {
        pid: tuple(contribution_table(arch, params, rng))
        for pid, arch in zip(players, archetypes, strict=True)
    }

    contribution = np.zeros((total, params.rounds), dtype=np.int64)
    belief = np.zeros((total, params.rounds), dtype=np.int64)
    exact_others = np.zeros((total, params.rounds), dtype=np.float64)

    def noise(sd: float) -> int:
        return round_half_up(float(rng.normal(0.0, sd))) if sd > 0 else 0

    for t in range(params.rounds):
        for i, arch in enumerate(archetypes):
            if t == 0:
                base = round_half_up(arch.initial_belief_for(params))
            else:
                base = round_half_up(exact_others[i, t - 1])
            belief[i, t] = _clamp(base + noise(arch.noise_sd), 0, top)
            intended = response(arch, belief[i, t], params, rng)
            contribution[i, t] = _clamp(intended + noise(arch.noise_sd), 0, top)
        for members in groups:
            group_sum = contribution[members, t].sum()
            exact_others[members, t] = (group_sum - contribution[members, t]) / (
                params.group_size - 1
            )

    others = np.floor(exact_others + 0.5)
    values = np.stack([contribution, belief, others], axis=2).astype(np.float64)
    panel = TemporalDataset(
        object_ids=tuple(players),
        time_points=tuple(range(1, params.rounds + 1)),
        attribute_names=PANEL_ATTRIBUTES,
        values=values,
    )
    truth = Labeling({pid: arch.kind.value for pid, arch in zip(players, archetypes, strict=True)})
    log.info(
        "Simulation finished",
        extra={"players": total, "rounds": params.rounds, "groups": len(groups)},
    )
    return SimOutput(
        panel=panel,
        truth=truth,
        tables=tables,
        unrounded_others=exact_others,
        groups=tuple(tuple(players[m] for m in sorted(members)) for members in groups),
    )

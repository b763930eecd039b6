"""Exception hierarchy shared by every stage of the pipeline.

Each error carries the process exit code the CLI reports for it, so scripts
can tell bad input (2) from resource limits (3) without parsing messages.
"""

from __future__ import annotations


class TrcError(Exception):
    """Base class for all expected failures."""

    exit_code: int = 1


class InputError(TrcError, ValueError):
    """Invalid input data, rule document, labels, or parameters."""

    exit_code = 2


class ResourceError(TrcError):
    """A configured resource cap was exceeded."""

    exit_code = 3


# --- data-model ---


class MissingCell(InputError):
    """An (object, time) pair is absent from a panel."""


class DuplicateRow(InputError):
    """An (object, time) pair appears more than once."""


class NonNumericValue(InputError):
    """A value cell could not be parsed as a finite number."""


class EmptyDataset(InputError):
    """The input contains no data rows or no attributes."""


class UnknownAttribute(InputError):
    """A referenced attribute or aggregate does not exist."""


class MissingColumn(InputError):
    """A required column is missing from a panel."""


# --- rule-engine ---


class RuleSpecSyntaxError(InputError):
    """A rule document is malformed."""


class UnknownParam(InputError):
    """A condition references an undeclared parameter."""


class UnknownClass(InputError):
    """A rule or default names a class that was not declared."""


class EmptyRule(InputError):
    """A rule has no conditions."""


class DuplicateParam(InputError):
    """A parameter or aggregate name is declared twice."""


class GridOverflow(ResourceError):
    """The candidate grid is larger than the configured cap."""


# --- compactness / evaluation ---


class IncompleteLabeling(InputError):
    """A labeling does not cover every object of a dataset."""


class ObjectSetMismatch(InputError):
    """Two labelings (or labels and data) cover different objects."""


class DegenerateClass(InputError):
    """A class comparison needs members on both sides."""


class EmptyTrain(InputError):
    """The probe classifier was given no training objects."""


class BadK(InputError):
    """Neighbour count outside 1..len(train)."""


class TableIndexOutOfRange(InputError):
    """A belief does not index into a contribution table."""


# --- pgg-sim ---


class OutOfRangeContribution(InputError):
    """A contribution lies outside [0, endowment]."""


class RosterSizeError(InputError):
    """The roster cannot be partitioned into groups."""


class InvalidParameter(InputError):
    """A numeric parameter violates its documented range."""

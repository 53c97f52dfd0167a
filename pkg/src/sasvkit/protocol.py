"""Three-class SASV trial protocols.

A protocol file holds one trial per line::

    <enroll_id> <test_id> <label>

with ``label`` one of ``target``, ``nontarget`` or ``spoof``. Fields are
separated by exactly one space and blank lines are skipped.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable


class ProtocolError(ValueError):
    pass


class ProtocolParseError(ProtocolError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class EmptyProtocolError(ProtocolError):
    pass


class EmptySubsetError(ProtocolError):
    pass


class TrialClass(enum.Enum):
    TARGET = "target"
    NONTARGET = "nontarget"
    SPOOF = "spoof"


class Metric(enum.Enum):
    SV = "SV"
    SPF = "SPF"
    SASV = "SASV"


# negative classes kept by each metric; targets are always the positive class
NEGATIVES = {
    Metric.SV: frozenset({TrialClass.NONTARGET}),
    Metric.SPF: frozenset({TrialClass.SPOOF}),
    Metric.SASV: frozenset({TrialClass.NONTARGET, TrialClass.SPOOF}),
}


def _check_id(value: str, name: str) -> None:
    if not value:
        raise ValueError(f"{name} is empty")
    if any(c.isspace() for c in value):
        raise ValueError(f"{name} {value!r} contains whitespace")


@dataclass(frozen=True)
class Trial:
    enroll_id: str
    test_id: str
    cls: TrialClass

    def __post_init__(self):
        _check_id(self.enroll_id, "enroll_id")
        _check_id(self.test_id, "test_id")
        if not isinstance(self.cls, TrialClass):
            raise TypeError(f"cls must be a TrialClass, got {self.cls!r}")

    def to_line(self) -> str:
        return f"{self.enroll_id} {self.test_id} {self.cls.value}"


@dataclass(frozen=True)
class Protocol:
    """Ordered, immutable collection of trials."""

    trials: tuple[Trial, ...]
    counts: dict[TrialClass, int] = field(init=False, compare=False, repr=False)

    def __init__(self, trials: Iterable[Trial]):
        object.__setattr__(self, "trials", tuple(trials))
        tally = Counter(t.cls for t in self.trials)
        object.__setattr__(self, "counts", {c: tally.get(c, 0) for c in TrialClass})

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    def count_tuple(self) -> tuple[int, int, int]:
        """Counts as ``(target, nontarget, spoof)``."""
        return tuple(self.counts[c] for c in TrialClass)

    def serialize(self) -> bytes:
        return "".join(t.to_line() + "\n" for t in self.trials).encode("utf-8")


_LABELS = {c.value: c for c in TrialClass}


def parse_protocol(data: bytes | str) -> Protocol:
    """Parse protocol text; every non-blank line must be a valid trial."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"protocol is not valid UTF-8: {exc}") from None
    else:
        text = data

    trials = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line:
            continue
        fields = line.split(" ")
        if len(fields) != 3:
            raise ProtocolParseError(lineno, f"expected 3 fields, got {len(fields)}")
        enroll_id, test_id, label = fields
        if label not in _LABELS:
            raise ProtocolParseError(lineno, f"unknown label {label!r}")
        try:
            trials.append(Trial(enroll_id, test_id, _LABELS[label]))
        except ValueError as exc:
            raise ProtocolParseError(lineno, str(exc)) from None

    if not trials:
        raise EmptyProtocolError("protocol contains no trials")
    return Protocol(trials)


def serialize_protocol(protocol: Protocol) -> bytes:
    return protocol.serialize()


def subset(protocol: Protocol, metric: Metric) -> Protocol:
    """Keep the trials that enter ``metric``: targets plus its negative classes."""
    keep = NEGATIVES[metric] | {TrialClass.TARGET}
    sub = Protocol(t for t in protocol.trials if t.cls in keep)
    if sub.counts[TrialClass.TARGET] == 0:
        raise EmptySubsetError(f"{metric.value} subset has no target trials")
    if not any(sub.counts[c] for c in NEGATIVES[metric]):
        raise EmptySubsetError(f"{metric.value} subset has no negative trials")
    return sub

"""Report containers shared by the certificate and diagnostic routines."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass
class BoundReport:
    """Named bound components, user constants, and the assembled value.

    ``value`` is a deterministic function of ``components`` and ``constants``;
    ``observed`` is an optional measured distance to compare against.
    """

    name: str
    components: dict[str, float]
    constants: dict[str, float]
    value: float
    observed: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def holds(self) -> bool | None:
        if self.observed is None:
            return None
        return self.observed <= self.value

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holds"] = self.holds
        return d


@dataclass
class ConditionReport:
    """Per-index quantities and pass/fail verdicts for a sequence of variables."""

    name: str
    quantities: dict[str, list[float]]
    verdicts: dict[str, bool]
    summary: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

"""Violation reports produced by the sampled structural-hypothesis checkers."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Violation:
    """One sampled point where an inequality failed beyond tolerance."""

    index: int
    t: float
    excess: float
    detail: dict = field(default_factory=dict)


@dataclass
class ViolationReport:
    """Outcome of a sampled inequality check.

    ``excess`` in each violation is the amount by which the left-hand side
    exceeded the right-hand side; the check passed iff ``violations`` is empty.
    """

    name: str
    n_samples: int
    tol: float
    violations: list[Violation] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def n_violations(self) -> int:
        return len(self.violations)

    @property
    def max_excess(self) -> float:
        if not self.violations:
            return 0.0
        return max(v.excess for v in self.violations)

    def summary(self) -> str:
        state = "ok" if self.ok else f"{self.n_violations} violations (max excess {self.max_excess:.3e})"
        return f"{self.name}: {self.n_samples} samples, {state}"

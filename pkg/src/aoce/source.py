"""Finite-state Markov source: validation and structural properties."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TOL = 1e-12


class StructuralError(ValueError):
    """The transition matrix is malformed (wrong shape, negative entries)."""


class ParameterError(ValueError):
    """A source parameter lies outside its feasible range."""


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def admissible(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.admissible


@dataclass(frozen=True, eq=False)
class SourceModel:
    """Markov source with transition matrix ``Q``.

    States are 0-based internally; ``alarm_states`` is 0-based too and is only
    used for labelling output (missed / false alarm rows).
    """

    Q: np.ndarray
    alarm_states: frozenset[int] = field(default_factory=lambda: frozenset({0}))

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise StructuralError(f"Q must be square, got shape {Q.shape}")
        if Q.shape[0] < 2:
            raise StructuralError("source needs at least 2 states")
        if not np.all(np.isfinite(Q)):
            raise StructuralError("Q has non-finite entries")
        if np.any(Q < 0):
            r, c = np.argwhere(Q < 0)[0]
            raise StructuralError(f"negative entry Q[{r},{c}] = {Q[r, c]}")
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "alarm_states", frozenset(int(a) for a in self.alarm_states))
        bad = [a for a in self.alarm_states if not 0 <= a < Q.shape[0]]
        if bad:
            raise StructuralError(f"alarm states {bad} out of range")

    @property
    def M(self) -> int:
        return self.Q.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SourceModel):
            return NotImplemented
        return np.array_equal(self.Q, other.Q) and self.alarm_states == other.alarm_states

    def __hash__(self):
        return hash((self.Q.tobytes(), self.alarm_states))


def _strongly_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    for graph in (adj, adj.T):
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(graph[u]):
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        if not seen.all():
            return False
    return True


def validate(model: SourceModel) -> ValidationReport:
    Q = model.Q
    out = []
    rows = np.abs(Q.sum(axis=1) - 1.0)
    for r in np.flatnonzero(rows > TOL):
        out.append(f"row {r} sums to {Q[r].sum():.15g}, not 1")
    if np.any(Q > 1.0 + TOL):
        out.append("entries above 1")
    if not _strongly_connected(Q > 0):
        out.append("Q is not irreducible")
    if not np.any(np.diag(Q) > 0):
        out.append("no state has a self-transition (X_ap is empty)")
    return ValidationReport(tuple(out))


def classify_states(model: SourceModel) -> tuple[frozenset[int], frozenset[int]]:
    """Split states into those with (X_ap) and without (X_p) self-transitions."""
    diag = np.diag(model.Q)
    ap = frozenset(int(i) for i in np.flatnonzero(diag > 0))
    return ap, frozenset(range(model.M)) - ap


def make_symmetric_source(M: int, p: float, alarm_states=frozenset({0})) -> SourceModel:
    """Source with off-diagonal probability ``p`` and diagonal ``1 - (M-1)p``."""
    if M < 2:
        raise ParameterError("M must be >= 2")
    p_stay = 1.0 - (M - 1) * p
    if not (0.0 < p < 1.0) or not (0.0 < p_stay < 1.0):
        raise ParameterError(f"p={p} infeasible for M={M} (diagonal would be {p_stay})")
    Q = np.full((M, M), float(p))
    np.fill_diagonal(Q, p_stay)
    return SourceModel(Q, alarm_states)


def is_symmetric(model: SourceModel) -> bool:
    Q = model.Q
    off = Q[~np.eye(model.M, dtype=bool)]
    p = off[0]
    if np.any(np.abs(off - p) > TOL):
        return False
    return bool(np.all(np.abs(np.diag(Q) - (1.0 - (model.M - 1) * p)) <= TOL))

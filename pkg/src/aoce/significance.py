"""Error significance weights, age functions and the existence condition.

An age function ``g`` maps the number of consecutive slots spent in one
estimation error (``delta >= 1``) to a non-negative, non-decreasing penalty.
The per-slot cost of error ``(i, j)`` held for ``delta`` slots is
``D[i, j] * g_ij(delta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .source import SourceModel, classify_states

# monotonicity / non-negativity is verified on 1..CHECK_RANGE at construction
CHECK_RANGE = 256


class DomainError(ValueError):
    pass


class AgeFunction:
    """Base class. Subclasses implement ``_eval`` on integer arrays (delta >= 1)."""

    kind: str = ""

    def __call__(self, delta: int) -> float:
        return float(self.values(np.array([delta]))[0])

    def values(self, deltas) -> np.ndarray:
        d = np.asarray(deltas, dtype=np.int64)
        if np.any(d < 1):
            raise DomainError("age functions are defined for delta >= 1")
        with np.errstate(over="ignore"):
            return np.asarray(self._eval(d), dtype=float)

    def growth_ratio_limit(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _check(self):
        v = self.values(np.arange(1, CHECK_RANGE + 1))
        finite = v[np.isfinite(v)]
        if finite.size and finite.min() < 0:
            raise DomainError(f"{self!r} is negative on 1..{CHECK_RANGE}")
        v = v[np.isfinite(v)]
        if np.any(np.diff(v) < -1e-12 * np.maximum(1.0, np.abs(v[1:]))):
            raise DomainError(f"{self!r} is decreasing on 1..{CHECK_RANGE}")


@dataclass(frozen=True)
class Constant(AgeFunction):
    value: float = 1.0
    kind = "constant"

    def __post_init__(self):
        if self.value < 0:
            raise DomainError("constant age function must be >= 0")

    def _eval(self, d):
        return np.full(d.shape, float(self.value))

    def growth_ratio_limit(self):
        return 1.0

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True)
class Linear(AgeFunction):
    """``alpha * delta + beta``."""

    alpha: float = 1.0
    beta: float = 0.0
    kind = "linear"

    def __post_init__(self):
        if self.alpha < 0:
            raise DomainError("linear age function needs alpha >= 0")
        self._check()

    def _eval(self, d):
        return self.alpha * d + self.beta

    def growth_ratio_limit(self):
        return 1.0

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class Logarithmic(AgeFunction):
    """``log_base(alpha * delta) + beta``; ``base`` defaults to e."""

    alpha: float = 1.0
    beta: float = 0.0
    base: float = math.e
    kind = "logarithmic"

    def __post_init__(self):
        if self.alpha <= 0:
            raise DomainError("logarithmic age function needs alpha > 0")
        if self.base <= 1:
            raise DomainError("logarithm base must exceed 1")
        self._check()

    def _eval(self, d):
        return np.log(self.alpha * d) / math.log(self.base) + self.beta

    def growth_ratio_limit(self):
        return 1.0

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "beta": self.beta, "base": self.base}


@dataclass(frozen=True)
class Exponential(AgeFunction):
    """``base ** (rate * delta) + offset``.

    ``Exponential(rate=0.3)`` is ``exp(0.3 * delta)``.
    """

    base: float = math.e
    rate: float = 1.0
    offset: float = 0.0
    kind = "exponential"

    def __post_init__(self):
        if self.base < 1 or self.rate < 0:
            raise DomainError("exponential age function needs base >= 1, rate >= 0")
        if self.base ** self.rate + self.offset < 0:
            raise DomainError("exponential age function is negative at delta = 1")
        self._check()

    def _eval(self, d):
        return np.power(float(self.base), self.rate * d) + self.offset

    def growth_ratio_limit(self):
        return float(self.base) ** self.rate

    def to_dict(self):
        return {"kind": self.kind, "base": self.base, "rate": self.rate, "offset": self.offset}


@dataclass(frozen=True)
class Clipped(AgeFunction):
    """``inner(min(delta, delta_max))``."""

    inner: AgeFunction
    delta_max: int
    kind = "clipped"

    def __post_init__(self):
        if self.delta_max < 1:
            raise DomainError("delta_max must be >= 1")

    def _eval(self, d):
        return self.inner._eval(np.minimum(d, self.delta_max))

    def growth_ratio_limit(self):
        return 1.0

    def to_dict(self):
        return {"kind": self.kind, "delta_max": self.delta_max, "inner": self.inner.to_dict()}


@dataclass(frozen=True)
class Table(AgeFunction):
    """Explicit values ``g(1), ..., g(K)``; beyond K the last ratio repeats."""

    table: tuple[float, ...]
    kind = "table"

    def __post_init__(self):
        object.__setattr__(self, "table", tuple(float(v) for v in self.table))
        if not self.table:
            raise DomainError("table age function needs at least one value")
        self._check()

    def growth_ratio_limit(self):
        t = self.table
        if len(t) == 1:
            return 1.0
        if t[-2] == 0:
            return 1.0 if t[-1] == 0 else math.inf
        return t[-1] / t[-2]

    def _eval(self, d):
        t = np.asarray(self.table)
        K = len(t)
        out = np.empty(d.shape)
        inside = d <= K
        out[inside] = t[d[inside] - 1]
        r = self.growth_ratio_limit()
        if np.any(~inside):
            tail = d[~inside] - K
            out[~inside] = t[-1] if math.isinf(r) and t[-1] == 0 else t[-1] * np.power(r, tail)
        return out

    def to_dict(self):
        return {"kind": self.kind, "table": list(self.table)}


_KINDS = {
    "constant": Constant,
    "linear": Linear,
    "logarithmic": Logarithmic,
    "exponential": Exponential,
    "table": Table,
}


def age_function_from_dict(spec: dict) -> AgeFunction:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "clipped":
        return Clipped(age_function_from_dict(spec["inner"]), int(spec["delta_max"]))
    if kind not in _KINDS:
        raise DomainError(f"unknown age function kind {kind!r}")
    if kind == "table":
        return Table(tuple(float(v) for v in spec["table"]))
    return _KINDS[kind](**{k: float(v) for k, v in spec.items()})


@dataclass(frozen=True, eq=False)
class SignificanceProfile:
    """Error weights ``D`` and per-error age functions ``G``.

    ``G[i][j]`` for ``i != j`` is an :class:`AgeFunction`; the diagonal is
    ignored (synced states cost nothing).
    """

    D: np.ndarray
    G: tuple[tuple[AgeFunction | None, ...], ...]

    def __post_init__(self):
        D = np.array(self.D, dtype=float)
        M = D.shape[0]
        if D.shape != (M, M):
            raise DomainError("D must be square")
        off = ~np.eye(M, dtype=bool)
        if np.any(np.diag(D) != 0):
            raise DomainError("D must have a zero diagonal")
        if np.any(D[off] <= 0):
            raise DomainError("off-diagonal entries of D must be positive")
        G = tuple(tuple(None if i == j else self.G[i][j] for j in range(M)) for i in range(M))
        if len(self.G) != M or any(len(r) != M for r in self.G):
            raise DomainError("G must be M x M")
        for i in range(M):
            for j in range(M):
                if i != j and not isinstance(G[i][j], AgeFunction):
                    raise DomainError(f"G[{i}][{j}] is not an age function")
        D.setflags(write=False)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "G", G)

    @property
    def M(self) -> int:
        return self.D.shape[0]

    def cost_table(self, n_ages: int) -> np.ndarray:
        """Array ``c[i, j, delta]`` for ``delta = 0..n_ages``."""
        M = self.M
        out = np.zeros((M, M, n_ages + 1))
        ages = np.arange(1, n_ages + 1)
        for i in range(M):
            for j in range(M):
                if i != j:
                    out[i, j, 1:] = self.D[i, j] * self.G[i][j].values(ages)
        return out

    def with_age_function(self, g: AgeFunction) -> "SignificanceProfile":
        M = self.M
        return SignificanceProfile(self.D, tuple(tuple(g for _ in range(M)) for _ in range(M)))


def alarm_profile(
    M: int,
    missed: AgeFunction,
    false: AgeFunction,
    normal: AgeFunction,
    D=1.0,
    alarm_states: Sequence[int] = (0,),
) -> SignificanceProfile:
    """Profile keyed by error class: missed alarm (source in an alarm state,
    estimate not), false alarm (the reverse), everything else normal."""
    alarms = set(alarm_states)
    D = np.array(D, dtype=float)
    if D.ndim == 0:
        D = np.full((M, M), float(D))
        np.fill_diagonal(D, 0.0)
    G = []
    for i in range(M):
        row = []
        for j in range(M):
            if i == j:
                row.append(None)
            elif i in alarms and j not in alarms:
                row.append(missed)
            elif j in alarms and i not in alarms:
                row.append(false)
            else:
                row.append(normal)
        G.append(tuple(row))
    return SignificanceProfile(D, tuple(G))


def age_penalty(profile: SignificanceProfile, i: int, j: int, delta: int) -> float:
    if delta < 0:
        raise DomainError("age must be non-negative")
    if i == j:
        return 0.0
    if delta == 0:
        raise DomainError("an estimation error has age >= 1")
    return float(profile.D[i, j] * profile.G[i][j](delta))


def per_stage_cost(profile: SignificanceProfile, s, a: int, lam: float) -> float:
    i, j, delta = s
    return age_penalty(profile, i, j, delta) + lam * (a == 1)


def growth_ratio_limit(g: AgeFunction) -> float:
    return g.growth_ratio_limit()


@dataclass(frozen=True)
class ExistenceEntry:
    i: int
    j: int
    ratio: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.ratio < self.bound


@dataclass(frozen=True)
class ExistenceReport:
    entries: tuple[ExistenceEntry, ...] = field(default=())

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def __bool__(self):
        return self.passed

    def failures(self):
        return [e for e in self.entries if not e.passed]


def check_existence(profile: SignificanceProfile, model: SourceModel, p_f: float) -> ExistenceReport:
    """Check ``lim g(d+1)/g(d) < 1/(Q_ii p_f)`` for every error whose source
    state has a self-transition."""
    if not 0.0 <= p_f <= 1.0:
        raise DomainError("p_f must lie in [0, 1]")
    ap, _ = classify_states(model)
    entries = []
    for i in sorted(ap):
        stay = model.Q[i, i] * p_f
        bound = math.inf if stay == 0 else 1.0 / stay
        for j in range(model.M):
            if j != i:
                entries.append(ExistenceEntry(i, j, profile.G[i][j].growth_ratio_limit(), bound))
    return ExistenceReport(tuple(entries))

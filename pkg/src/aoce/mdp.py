"""Truncated system-state MDP over (source state, estimate, AoCE).

State order (fixed, so value vectors and policies are comparable across runs):
synced states ``(i, i, 0)`` for ``i = 0..M-1`` first, then each error block
``(i, j)`` in lexicographic order with ages ascending. Errors whose source
state has no self-transition only have age 1.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .significance import SignificanceProfile
from .source import SourceModel, classify_states, validate


class SystemState(NamedTuple):
    i: int
    j: int
    delta: int


class ConstructionError(ValueError):
    pass


class StateDomainError(KeyError):
    pass


def aoce_update(prev, next_pair, N: int | None = None) -> int:
    """Age of consecutive error after moving from ``prev`` to ``next_pair``."""
    i, j, delta = prev
    i2, j2 = next_pair
    if i2 == j2:
        return 0
    if (i2, j2) == (i, j):
        return delta + 1 if N is None else min(delta + 1, N)
    return 1


def branches(Q: np.ndarray, p_s: float, N: int, s, a: int) -> Iterator[tuple[SystemState, float, bool]]:
    """Unmerged successor branches ``(next_state, prob, delivered)``.

    ``delivered`` is True on the branch where a transmitted packet arrives.
    In a synced state both channel outcomes lead to the same successor; they
    are still reported separately so that age-of-information bookkeeping sees
    the delivery. Zero-probability branches are skipped.
    """
    i, j, delta = s
    M = Q.shape[0]
    if a == 0:
        for k in range(M):
            if Q[i, k] > 0:
                yield SystemState(k, j, aoce_update(s, (k, j), N)), Q[i, k], False
        return
    p_f = 1.0 - p_s
    for k in range(M):
        q = Q[i, k]
        if q == 0:
            continue
        if p_s > 0:
            yield SystemState(k, i, aoce_update(s, (k, i), N)), q * p_s, True
        if p_f > 0:
            yield SystemState(k, j, aoce_update(s, (k, j), N)), q * p_f, False


def enumerate_states(source: SourceModel, N: int) -> tuple[SystemState, ...]:
    M = source.M
    ap, _ = classify_states(source)
    states = [SystemState(i, i, 0) for i in range(M)]
    for i in range(M):
        ages = range(1, N + 1) if i in ap else range(1, 2)
        for j in range(M):
            if i != j:
                states.extend(SystemState(i, j, d) for d in ages)
    return tuple(states)


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Two-action finite MDP in the form the solvers consume.

    ``P[a]`` is a CSR matrix of shape (S, S); ``cost[a, s]`` is the per-stage
    cost of action ``a`` in state ``s``.
    """

    states: tuple
    index: dict
    P: tuple[sp.csr_matrix, sp.csr_matrix]
    cost: np.ndarray

    @property
    def n_states(self) -> int:
        return len(self.states)

    def kernel_checksum(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.n_states).encode())
        for s in self.states:
            h.update(repr(tuple(int(x) for x in s)).encode())
        for Pa in self.P:
            Pa = Pa.tocsr()
            Pa.sort_indices()
            h.update(Pa.indptr.astype(np.int64).tobytes())
            h.update(Pa.indices.astype(np.int64).tobytes())
            h.update(np.round(Pa.data, 15).tobytes())
        h.update(np.round(self.cost, 12).tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class TruncatedMdp(FiniteMdp):
    source: SourceModel = None
    profile: SignificanceProfile = None
    p_s: float = 1.0
    lam: float = 0.0
    N: int = 1
    # (i, j) -> state indices ordered by age
    blocks: dict = None

    @property
    def M(self) -> int:
        return self.source.M

    @property
    def p_f(self) -> float:
        return 1.0 - self.p_s

    @property
    def errors(self) -> list[tuple[int, int]]:
        return list(self.blocks)

    @property
    def synced(self) -> np.ndarray:
        return np.arange(self.M)

    def state_index(self, s) -> int:
        try:
            return self.index[SystemState(*s)]
        except KeyError:
            raise StateDomainError(f"{tuple(s)} is not in the truncated state space (N={self.N})") from None

    def summary(self) -> dict:
        return {"n_states": self.n_states, "kernel_sha256": self.kernel_checksum()}

    def with_cost(self, profile: SignificanceProfile | None = None, lam: float | None = None) -> "TruncatedMdp":
        return build(self.source, profile or self.profile, self.p_s, self.lam if lam is None else lam, self.N)


def transitions(mdp: TruncatedMdp, s, a: int) -> list[tuple[SystemState, float]]:
    """Merged successor distribution of state ``s`` under action ``a``."""
    mdp.state_index(s)
    if a not in (0, 1):
        raise ValueError("action must be 0 or 1")
    s = SystemState(*s)
    # a synced state moves the same way under both actions; use one branch set
    a = a if s.i != s.j else 0
    merged: dict[SystemState, float] = {}
    for s2, p, _ in branches(mdp.source.Q, mdp.p_s, mdp.N, s, a):
        merged[s2] = merged.get(s2, 0.0) + p
    return sorted(merged.items(), key=lambda kv: mdp.index[kv[0]])


def build(source: SourceModel, profile: SignificanceProfile, p_s: float, lam: float, N: int) -> TruncatedMdp:
    if profile.M != source.M:
        raise ConstructionError(f"profile is {profile.M}x{profile.M}, source has {source.M} states")
    if N < 1:
        raise ConstructionError("truncation N must be >= 1")
    if not 0.0 <= p_s <= 1.0:
        raise ConstructionError("p_s must lie in [0, 1]")
    if lam < 0:
        raise ConstructionError("transmission cost must be >= 0")
    report = validate(source)
    if not report.admissible and any("irreducible" in v or "sums" in v for v in report.violations):
        raise ConstructionError("; ".join(report.violations))
    states = enumerate_states(source, N)
    index = {s: k for k, s in enumerate(states)}
    S = len(states)
    Q = source.Q
    ctab = profile.cost_table(N)
    mats = []
    for a in (0, 1):
        rows, cols, vals = [], [], []
        for k, s in enumerate(states):
            for s2, p, _ in branches(Q, p_s, N, s, a if s.i != s.j else 0):
                rows.append(k)
                cols.append(index[s2])
                vals.append(p)
        # duplicate (row, col) pairs are summed on conversion
        mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(S, S)))
    c = np.array([ctab[s.i, s.j, s.delta] for s in states])
    cost = np.vstack([c, c + lam])
    blocks: dict = {}
    for k, s in enumerate(states):
        if s.i != s.j:
            blocks.setdefault((s.i, s.j), []).append(k)
    blocks = {e: np.array(v) for e, v in blocks.items()}
    return TruncatedMdp(states, index, tuple(mats), cost, source, profile, float(p_s), float(lam), int(N), blocks)


def check_recurrence_always_transmit(mdp: TruncatedMdp) -> bool:
    n, _ = connected_components(mdp.P[1], directed=True, connection="strong")
    return n == 1


def symmetric_age_kernel(M: int, p: float, p_s: float, N: int) -> np.ndarray:
    """Reduced kernel of the AoCE alone for a symmetric source.

    Returns ``K[a, delta, delta']`` for ages ``0..N`` (age N saturates).
    """
    p_stay = 1.0 - (M - 1) * p
    p_f = 1.0 - p_s
    K = np.zeros((2, N + 1, N + 1))
    for a in (0, 1):
        K[a, 0, 0] = p_stay
        K[a, 0, 1] += 1.0 - p_stay
        for d in range(1, N + 1):
            up = min(d + 1, N)
            if a == 0:
                K[a, d, 0] += p
                K[a, d, up] += p_stay
                K[a, d, 1] += 1.0 - p - p_stay
            else:
                K[a, d, 0] += p_stay * p_s + p * p_f
                K[a, d, up] += p_stay * p_f
                K[a, d, 1] += 1.0 - p_stay - p * p_f
    return K


def age_marginal_rows(mdp: TruncatedMdp, age_actions) -> np.ndarray:
    """Distribution of the next AoCE from each state under an age-only policy.

    ``age_actions[delta]`` gives the action at age ``delta``; returns an array
    of shape (S, N+1).
    """
    S, N = mdp.n_states, mdp.N
    out = np.zeros((S, N + 1))
    ages = np.array([s.delta for s in mdp.states])
    for k, s in enumerate(mdp.states):
        a = int(age_actions[s.delta])
        row = mdp.P[a].getrow(k)
        np.add.at(out[k], ages[row.indices], row.data)
    return out

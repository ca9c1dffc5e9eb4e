"""Transmission policies over the truncated state space, and baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .mdp import SystemState, TruncatedMdp

NEVER = math.inf


@dataclass(frozen=True, eq=False)
class Policy:
    """Deterministic stationary policy: ``actions[k]`` is the action in state k."""

    actions: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.actions, dtype=np.int8).copy()
        if a.ndim != 1 or not np.isin(a, (0, 1)).all():
            raise ValueError("actions must be a 1-D array of 0/1")
        a.setflags(write=False)
        object.__setattr__(self, "actions", a)

    def action_of(self, mdp: TruncatedMdp, s) -> int:
        return int(self.actions[mdp.state_index(s)])

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.actions, other.actions)

    def __hash__(self):
        return hash(self.actions.tobytes())


@dataclass(frozen=True, eq=False)
class SwitchingPolicy:
    """Per-error thresholds; transmit in error (i, j) iff age >= tau[i, j].

    ``NEVER`` (inf) means no transmission for that error. The diagonal is
    always NEVER.
    """

    tau: np.ndarray

    def __post_init__(self):
        t = np.array(self.tau, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError("threshold matrix must be square")
        np.fill_diagonal(t, NEVER)
        finite = t[np.isfinite(t)]
        if np.any(finite < 1) or np.any(finite != np.round(finite)):
            raise ValueError("thresholds must be integers >= 1 or NEVER")
        t.setflags(write=False)
        object.__setattr__(self, "tau", t)

    @classmethod
    def uniform(cls, M: int, tau) -> "SwitchingPolicy":
        return cls(np.full((M, M), float(tau)))

    @property
    def M(self) -> int:
        return self.tau.shape[0]

    def canonical(self, mdp: TruncatedMdp) -> "SwitchingPolicy":
        """Equivalent thresholds with unreachable values mapped to NEVER."""
        t = self.tau.copy()
        for (i, j), idx in mdp.blocks.items():
            if t[i, j] > len(idx):
                t[i, j] = NEVER
        return SwitchingPolicy(t)

    def __eq__(self, other):
        return isinstance(other, SwitchingPolicy) and np.array_equal(self.tau, other.tau)

    def __hash__(self):
        return hash(self.tau.tobytes())

    def rows(self, one_based_never: str = "inf") -> list[list[str]]:
        return [[one_based_never if math.isinf(v) else str(int(v)) for v in row] for row in self.tau]


@dataclass(frozen=True)
class NotSwitching:
    """Witness that a policy is not monotone in age: transmits at ``delta``
    but not at ``delta + 1`` in error (i, j)."""

    i: int
    j: int
    delta: int

    def __bool__(self):
        return False


def expand(sw: SwitchingPolicy, mdp: TruncatedMdp) -> Policy:
    if sw.M != mdp.M:
        raise ValueError(f"threshold matrix is {sw.M}x{sw.M}, source has {mdp.M} states")
    a = np.zeros(mdp.n_states, dtype=np.int8)
    for (i, j), idx in mdp.blocks.items():
        ages = np.array([mdp.states[k].delta for k in idx])
        a[idx] = ages >= sw.tau[i, j]
    return Policy(a)


def extract_thresholds(policy: Policy, mdp: TruncatedMdp) -> SwitchingPolicy | NotSwitching:
    tau = np.full((mdp.M, mdp.M), NEVER)
    for (i, j), idx in mdp.blocks.items():
        acts = policy.actions[idx]
        on = np.flatnonzero(acts)
        if on.size == 0:
            continue
        first = on[0]
        if not acts[first:].all():
            off = first + np.flatnonzero(acts[first:] == 0)[0]
            return NotSwitching(i, j, int(mdp.states[idx[off - 1]].delta))
        tau[i, j] = mdp.states[idx[first]].delta
    return SwitchingPolicy(tau)


def synced_silent(policy: Policy, mdp: TruncatedMdp) -> bool:
    return not policy.actions[: mdp.M].any()


# --- history-dependent / open-loop baselines -------------------------------

HISTORY_KINDS = ("randomized", "periodic", "reactive", "aoi", "aoii")


@dataclass(frozen=True, eq=False)
class HistoryPolicy:
    """Policy that needs information outside the system state.

    * ``randomized``: transmit each slot w.p. ``param``
    * ``periodic``: transmit every ``param`` slots
    * ``reactive``: transmit iff the source changed since the last slot
    * ``aoi``: ``table[aoi]`` gives the action at age of information ``aoi``
    * ``aoii``: ``table[i, j, aoii]`` gives the action at AoII ``aoii``
    """

    kind: str
    param: float = 0.0
    table: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in HISTORY_KINDS:
            raise ValueError(f"unknown history policy kind {self.kind!r}")
        if self.kind == "randomized" and not 0.0 <= self.param <= 1.0:
            raise ValueError("transmission probability must lie in [0, 1]")
        if self.kind == "periodic" and (self.param < 1 or self.param != int(self.param)):
            raise ValueError("period must be an integer >= 1")

    @property
    def simulation_only(self) -> bool:
        return self.kind in ("randomized", "periodic")


EvaluablePolicy = Union[Policy, HistoryPolicy]

BASELINE_KINDS = (
    "randomized",
    "periodic",
    "reactive",
    "error_triggered",
    "threshold",
    "distortion_proxy",
    "aoi_reference",
    "aoii_reference",
)


@dataclass(frozen=True)
class BaselineSpec:
    kind: str
    param: float | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        p = self.param
        if self.kind == "randomized" and (p is None or not 0.0 <= p <= 1.0):
            raise ValueError("randomized baseline needs p_alpha in [0, 1]")
        if self.kind in ("periodic", "threshold") and (p is None or p < 1):
            raise ValueError(f"{self.kind} baseline needs a parameter >= 1")


def threshold_policy(mdp: TruncatedMdp, delta_th) -> SwitchingPolicy:
    """Common threshold for every error."""
    return SwitchingPolicy.uniform(mdp.M, delta_th)


def make_baseline(spec: BaselineSpec, mdp: TruncatedMdp) -> EvaluablePolicy:
    from . import solvers

    k = spec.kind
    if k == "randomized":
        return HistoryPolicy("randomized", float(spec.param), label=f"p_alpha={spec.param:g}")
    if k == "periodic":
        return HistoryPolicy("periodic", int(spec.param), label=f"d_th={int(spec.param)}")
    if k == "reactive":
        return HistoryPolicy("reactive", label="reactive")
    if k == "error_triggered":
        return expand(SwitchingPolicy.uniform(mdp.M, 1), mdp)
    if k == "threshold":
        return expand(threshold_policy(mdp, spec.param), mdp)
    if k == "distortion_proxy":
        from .significance import Constant

        proxy = mdp.with_cost(profile=mdp.profile.with_age_function(Constant(1.0)))
        return solvers.structured_policy_iteration(proxy).policy
    if k == "aoi_reference":
        return solvers.aoi_reference_policy(mdp, **spec.options)
    if k == "aoii_reference":
        return solvers.aoii_reference_policy(mdp, **spec.options)
    raise ValueError(k)


def state_action_table(policy: Policy, mdp: TruncatedMdp) -> np.ndarray:
    """Dense ``act[i, j, delta]`` for delta in 0..N (unused cells are 0)."""
    act = np.zeros((mdp.M, mdp.M, mdp.N + 1), dtype=np.int8)
    for k, s in enumerate(mdp.states):
        act[s.i, s.j, s.delta] = policy.actions[k]
    # errors without self-transitions only have age 1; their action holds at every age
    for (i, j), idx in mdp.blocks.items():
        if len(idx) == 1:
            act[i, j, 1:] = policy.actions[idx[0]]
    return act


def label_error(mdp: TruncatedMdp, i: int, j: int) -> str:
    alarms = mdp.source.alarm_states
    if i in alarms and j not in alarms:
        return "missed"
    if j in alarms and i not in alarms:
        return "false"
    return "normal"


__all__ = [
    "NEVER",
    "Policy",
    "SwitchingPolicy",
    "NotSwitching",
    "HistoryPolicy",
    "BaselineSpec",
    "EvaluablePolicy",
    "expand",
    "extract_thresholds",
    "make_baseline",
    "synced_silent",
    "SystemState",
]

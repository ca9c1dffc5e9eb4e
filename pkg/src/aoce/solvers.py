"""Average-cost solvers: relative value iteration, classical and structured
policy iteration, and exhaustive oracles.

Policy evaluation handles chains with several closed classes (e.g. a policy
that never transmits freezes the estimate). Each closed class gets its own
gain and bias; transient states get their gain from absorption probabilities
and their bias from the transient block. Improvement compares the expected
next-stage gain first and the bias backup second (Howard's multichain rule),
breaking exact ties towards not transmitting.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .mdp import FiniteMdp, SystemState, TruncatedMdp
from .policies import (
    NEVER,
    HistoryPolicy,
    NotSwitching,
    Policy,
    SwitchingPolicy,
    expand,
    extract_thresholds,
)
from .source import SourceModel

# two actions whose backups differ by less than this (relative) are tied
TIE_TOL = 1e-9


class SolverError(RuntimeError):
    pass


class EvaluationError(SolverError):
    pass


class NonConvergenceError(SolverError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (last residual {residual:.3e})")
        self.residual = residual


class RefusalError(SolverError):
    def __init__(self, count: int, guard: int):
        super().__init__(f"{count} threshold combinations exceed the guard of {guard}")
        self.count = count


@dataclass(eq=False)
class SolveResult:
    L_star: float
    h: np.ndarray
    policy: Policy
    iterations: int
    residual: float
    s_ref: int = 0
    method: str = ""
    trace: list = field(default_factory=list)
    visits: list = field(default_factory=list)
    mdp: FiniteMdp | None = field(default=None, repr=False)

    @property
    def thresholds(self) -> SwitchingPolicy | NotSwitching:
        if not isinstance(self.mdp, TruncatedMdp):
            raise TypeError("thresholds are defined on the AoCE state space only")
        return extract_thresholds(self.policy, self.mdp)

    def diagnostics(self) -> dict:
        return {
            "method": self.method,
            "L_star": self.L_star,
            "iterations": self.iterations,
            "residual": self.residual,
            "trace": [float(x) for x in self.trace],
            "visits": [int(v) for v in self.visits],
        }


# --- induced chains ----------------------------------------------------------


def induced_chain(mdp: FiniteMdp, actions) -> tuple[sp.csr_matrix, np.ndarray]:
    a = np.asarray(actions, dtype=np.int8)
    on = sp.diags(a.astype(float))
    off = sp.diags(1.0 - a)
    P = (off @ mdp.P[0] + on @ mdp.P[1]).tocsr()
    P.eliminate_zeros()
    c = np.where(a == 1, mdp.cost[1], mdp.cost[0])
    return P, c


def closed_classes(P: sp.spmatrix) -> list[np.ndarray]:
    """Recurrent classes of a finite chain: strongly connected components with
    no probability leaving them."""
    n, lab = connected_components(P, directed=True, connection="strong")
    coo = P.tocoo()
    leaving = (lab[coo.row] != lab[coo.col]) & (coo.data > 0)
    is_open = np.zeros(n, dtype=bool)
    is_open[lab[coo.row[leaving]]] = True
    return [np.flatnonzero(lab == k) for k in range(n) if not is_open[k]]


def reachable_from(P: sp.spmatrix, s: int) -> np.ndarray:
    return np.sort(breadth_first_order(P, s, directed=True, return_predecessors=False))


@dataclass
class _Evaluation:
    g: np.ndarray
    h: np.ndarray
    classes: list


def _gain_bias(P: sp.csr_matrix, c: np.ndarray, ref: int) -> _Evaluation:
    S = len(c)
    Pd = P.toarray()
    classes = closed_classes(P)
    g = np.zeros(S)
    h = np.zeros(S)
    rec = np.zeros(S, dtype=bool)
    try:
        for mem in classes:
            r = ref if ref in mem else mem[0]
            ri = int(np.flatnonzero(mem == r)[0])
            A = np.eye(len(mem)) - Pd[np.ix_(mem, mem)]
            A[:, ri] = 1.0
            x = np.linalg.solve(A, c[mem])
            L = x[ri]
            x[ri] = 0.0
            # bias normalization: zero stationary mean inside the class, so
            # offsets between classes do not depend on the reference state
            B = np.eye(len(mem)) - Pd[np.ix_(mem, mem)].T
            B[0, :] = 1.0
            rhs = np.zeros(len(mem))
            rhs[0] = 1.0
            mu = np.linalg.solve(B, rhs)
            g[mem] = L
            h[mem] = x - mu @ x
            rec[mem] = True
        T = np.flatnonzero(~rec)
        R = np.flatnonzero(rec)
        if T.size:
            A = np.eye(T.size) - Pd[np.ix_(T, T)]
            PTR = Pd[np.ix_(T, R)]
            g[T] = np.linalg.solve(A, PTR @ g[R])
            h[T] = np.linalg.solve(A, c[T] - g[T] + PTR @ h[R])
    except np.linalg.LinAlgError as e:
        raise EvaluationError(
            f"singular evaluation system ({len(classes)} closed classes); "
            "the policy likely isolates part of the state space"
        ) from e
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
        raise EvaluationError("evaluation produced non-finite values")
    # a global shift keeps every evaluation equation satisfied
    h -= h[ref]
    return _Evaluation(g, h, classes)


def _actions(policy) -> np.ndarray:
    return policy.actions if isinstance(policy, Policy) else np.asarray(policy, dtype=np.int8)


def _ref_index(mdp: FiniteMdp, s_ref) -> int:
    if s_ref is None:
        return 0
    if isinstance(s_ref, (int, np.integer)):
        if not 0 <= s_ref < mdp.n_states:
            raise IndexError(f"reference index {s_ref} out of range")
        return int(s_ref)
    if isinstance(mdp, TruncatedMdp):
        return mdp.state_index(s_ref)
    return mdp.index[tuple(s_ref)]


def policy_evaluation(mdp: FiniteMdp, policy, s_ref=None) -> tuple[float, np.ndarray]:
    """Average cost and relative values of a stationary policy.

    Solves ``L + h = c_pi + P_pi h`` with ``h(s_ref) = 0``. Raises
    :class:`EvaluationError` when more than one recurrent class is reachable
    from ``s_ref`` (the average cost would depend on where the chain ends up).
    """
    ref = _ref_index(mdp, s_ref)
    P, c = induced_chain(mdp, _actions(policy))
    ev = _gain_bias(P, c, ref)
    reach = set(reachable_from(P, ref).tolist())
    hit = [m for m in ev.classes if reach.intersection(m.tolist())]
    if len(hit) > 1:
        desc = ", ".join(_describe_class(mdp, m) for m in hit)
        raise EvaluationError(f"{len(hit)} recurrent classes reachable from the reference state: {desc}")
    return float(ev.g[ref]), ev.h


def _describe_class(mdp: FiniteMdp, members: np.ndarray) -> str:
    first = mdp.states[members[0]]
    return f"[{len(members)} states incl. {tuple(int(x) for x in first)}]"


# --- improvement -------------------------------------------------------------


def _row_dot(P: sp.csr_matrix, k: int, v: np.ndarray) -> float:
    lo, hi = P.indptr[k], P.indptr[k + 1]
    return float(P.data[lo:hi] @ v[P.indices[lo:hi]])


def _prefer(d_gain: float, d_bias: float, g_scale: float, h_scale: float) -> int:
    """Action from differences ``(transmit - silent)`` of the gain and bias backups."""
    if d_gain < -TIE_TOL * g_scale:
        return 1
    if d_gain > TIE_TOL * g_scale:
        return 0
    return 1 if d_bias < -TIE_TOL * h_scale else 0


def _scales(mdp: FiniteMdp, ev: _Evaluation) -> tuple[float, float]:
    g_scale = max(1.0, float(np.abs(ev.g).max()))
    h_scale = max(1.0, float(np.abs(ev.h).max()), float(np.abs(mdp.cost).max()))
    return g_scale, h_scale


def _decide(mdp: FiniteMdp, k: int, ev: _Evaluation, scales) -> int:
    P0, P1 = mdp.P
    d_gain = _row_dot(P1, k, ev.g) - _row_dot(P0, k, ev.g)
    f0 = mdp.cost[0, k] + _row_dot(P0, k, ev.h)
    f1 = mdp.cost[1, k] + _row_dot(P1, k, ev.h)
    return _prefer(d_gain, f1 - f0, *scales)


def _greedy_all(mdp: FiniteMdp, ev: _Evaluation) -> np.ndarray:
    P0, P1 = mdp.P
    g_scale, h_scale = _scales(mdp, ev)
    d_gain = P1 @ ev.g - P0 @ ev.g
    d_bias = (mdp.cost[1] + P1 @ ev.h) - (mdp.cost[0] + P0 @ ev.h)
    return np.where(
        d_gain < -TIE_TOL * g_scale,
        1,
        np.where(d_gain > TIE_TOL * g_scale, 0, np.where(d_bias < -TIE_TOL * h_scale, 1, 0)),
    ).astype(np.int8)


def bellman_residual(mdp: FiniteMdp, L, h: np.ndarray) -> float:
    f = mdp.cost + np.vstack([mdp.P[0] @ h, mdp.P[1] @ h])
    return float(np.max(np.abs(L + h - f.min(axis=0))))


def _finish(mdp, actions, ev, ref, iterations, method, trace, visits) -> SolveResult:
    L = float(ev.g[ref])
    # states whose gain differs (other closed classes) are excluded from the residual
    on = np.abs(ev.g - L) <= TIE_TOL * max(1.0, abs(L))
    f = mdp.cost + np.vstack([mdp.P[0] @ ev.h, mdp.P[1] @ ev.h])
    res = float(np.max(np.abs(L + ev.h - f.min(axis=0))[on]))
    return SolveResult(L, ev.h, Policy(actions), iterations, res, ref, method, trace, visits, mdp)


# --- solvers -----------------------------------------------------------------


def relative_value_iteration(
    mdp: FiniteMdp, s_ref=None, tol: float = 1e-10, max_iter: int = 200_000, h0=None
) -> SolveResult:
    """Iterate ``h~ = min_a (c_a + P_a h)``, ``h = h~ - h~(s_ref)`` until the
    span of successive differences drops below ``tol * max(1, |L|)``."""
    ref = _ref_index(mdp, s_ref)
    P0, P1 = mdp.P
    c0, c1 = mdp.cost
    h = np.zeros(mdp.n_states) if h0 is None else np.asarray(h0, dtype=float) - h0[ref]
    span = math.inf
    trace = []
    for n in range(1, max_iter + 1):
        ht = np.minimum(c0 + P0 @ h, c1 + P1 @ h)
        L = ht[ref]
        h_new = ht - L
        d = h_new - h
        span = float(d.max() - d.min())
        h = h_new
        if n % 1000 == 0:
            trace.append(L)
        if span <= tol * max(1.0, abs(float(L))):
            break
    else:
        raise NonConvergenceError(f"relative value iteration did not converge in {max_iter} sweeps", span)
    f0 = c0 + P0 @ h
    f1 = c1 + P1 @ h
    scale = max(1.0, float(np.abs(h).max()), float(np.abs(mdp.cost).max()))
    actions = np.where(f1 < f0 - TIE_TOL * scale, 1, 0).astype(np.int8)
    trace.append(L)
    res = bellman_residual(mdp, L, h)
    return SolveResult(float(L), h, Policy(actions), n, res, ref, "rvi", trace, [], mdp)


def _default_initial(mdp: FiniteMdp) -> np.ndarray:
    """Transmit in every error state (every state for generic MDPs)."""
    if isinstance(mdp, TruncatedMdp):
        return expand(SwitchingPolicy.uniform(mdp.M, 1), mdp).actions.copy()
    return np.ones(mdp.n_states, dtype=np.int8)


def _initial_actions(mdp: FiniteMdp, initial) -> np.ndarray:
    if initial is None:
        return _default_initial(mdp)
    if isinstance(initial, SwitchingPolicy):
        return expand(initial, mdp).actions.copy()
    return np.array(_actions(initial), dtype=np.int8)


def classical_policy_iteration(mdp: FiniteMdp, s_ref=None, max_iter: int = 500, initial=None) -> SolveResult:
    """Howard policy iteration over every state."""
    ref = _ref_index(mdp, s_ref)
    actions = _initial_actions(mdp, initial)
    trace: list = []
    for n in range(1, max_iter + 1):
        P, c = induced_chain(mdp, actions)
        ev = _gain_bias(P, c, ref)
        trace.append(float(ev.g[ref]))
        new = _greedy_all(mdp, ev)
        if np.array_equal(new, actions):
            return _finish(mdp, actions, ev, ref, n, "classical_pi", trace, [])
        actions = new
    raise NonConvergenceError(f"policy iteration did not stabilise in {max_iter} iterations", math.nan)


def structured_policy_iteration(
    mdp: TruncatedMdp, s_ref=None, initial=None, max_iter: int = 500
) -> SolveResult:
    """Policy iteration that exploits the switching structure.

    The improvement step scans each error's ages in increasing order and
    stops at the first age where transmitting wins; every older age of that
    error is set to transmit without a backup. Synced states never transmit.
    ``visits`` records the number of backups per improvement step.
    """
    ref = _ref_index(mdp, s_ref)
    actions = _initial_actions(mdp, initial)
    trace: list = []
    visits: list = []
    for n in range(1, max_iter + 1):
        P, c = induced_chain(mdp, actions)
        ev = _gain_bias(P, c, ref)
        trace.append(float(ev.g[ref]))
        scales = _scales(mdp, ev)
        new = np.zeros_like(actions)
        count = 0
        for idx in mdp.blocks.values():
            for pos, k in enumerate(idx):
                count += 1
                if _decide(mdp, k, ev, scales):
                    new[idx[pos:]] = 1
                    break
        visits.append(count)
        if np.array_equal(new, actions):
            return _finish(mdp, actions, ev, ref, n, "spi", trace, visits)
        actions = new
    raise NonConvergenceError(f"structured policy iteration did not stabilise in {max_iter} iterations", math.nan)


def solve(mdp: TruncatedMdp, method: str = "spi", **kw) -> SolveResult:
    fn = {
        "spi": structured_policy_iteration,
        "pi": classical_policy_iteration,
        "classical_pi": classical_policy_iteration,
        "rvi": relative_value_iteration,
    }.get(method)
    if fn is None:
        raise ValueError(f"unknown solver {method!r}")
    return fn(mdp, **kw)


# --- exhaustive oracle -------------------------------------------------------


def _sink_components(M: int, tau: np.ndarray) -> int:
    """Closed classes of the estimate-level graph (j -> i when error (i, j)
    eventually transmits)."""
    adj = np.isfinite(tau)
    np.fill_diagonal(adj, False)
    n, lab = connected_components(sp.csr_matrix(adj.T.astype(float)), directed=True, connection="strong")
    out = np.zeros(n, dtype=bool)
    src, dst = np.nonzero(adj.T)
    out[lab[src[lab[src] != lab[dst]]]] = True
    return int((~out).sum())


def brute_force_switching_search(
    mdp: TruncatedMdp, tau_max: int | None = None, s_ref=None, guard: int = 10**6, batch: int = 512
) -> tuple[SwitchingPolicy, float]:
    """Evaluate every threshold matrix with entries in ``{1..tau_max, NEVER}``.

    Errors whose source state has no self-transition only take ``{1, NEVER}``.
    """
    ref = _ref_index(mdp, s_ref)
    tau_max = mdp.N if tau_max is None else int(tau_max)
    errors = mdp.errors
    options = []
    for e in errors:
        top = min(tau_max, len(mdp.blocks[e]))
        options.append(list(range(1, top + 1)) + [NEVER])
    count = math.prod(len(o) for o in options)
    if count > guard:
        raise RefusalError(count, guard)

    S = mdp.n_states
    P0 = mdp.P[0].toarray()
    P1 = mdp.P[1].toarray()
    ages = np.array([s.delta for s in mdp.states], dtype=float)
    owner = np.full(S, -1)
    for e_k, e in enumerate(errors):
        owner[mdp.blocks[e]] = e_k
    err_states = owner >= 0
    cmin, cmax = float(mdp.cost.min()), float(mdp.cost.max())
    slack = 1e-9 * max(1.0, abs(cmax))

    best_L, best_tau = math.inf, None
    combos = itertools.product(*options)
    while True:
        chunk = list(itertools.islice(combos, batch))
        if not chunk:
            break
        taus = np.array(chunk, dtype=float)  # (B, #errors)
        thr = np.full((len(chunk), S), np.inf)
        thr[:, err_states] = taus[:, owner[err_states]]
        acts = (ages[None, :] >= thr).astype(np.int8)
        Lvals = np.full(len(chunk), np.nan)
        uni = []
        for b, t in enumerate(chunk):
            tm = np.full((mdp.M, mdp.M), NEVER)
            for e_k, (i, j) in enumerate(errors):
                tm[i, j] = t[e_k]
            if mdp.p_s > 0 and _sink_components(mdp.M, tm) == 1:
                uni.append(b)
        if uni:
            A = np.where(acts[uni][:, :, None] == 1, P1[None], P0[None])
            A = np.eye(S)[None] - A
            A[:, :, ref] = 1.0
            cs = np.where(acts[uni] == 1, mdp.cost[1][None], mdp.cost[0][None])
            try:
                x = np.linalg.solve(A, cs[:, :, None])[:, :, 0]
                Lvals[uni] = x[:, ref]
            except np.linalg.LinAlgError:
                pass
        for b in range(len(chunk)):
            L = Lvals[b]
            if not (np.isfinite(L) and cmin - slack <= L <= cmax + slack):
                P, c = induced_chain(mdp, acts[b])
                Lvals[b] = _gain_bias(P, c, ref).g[ref]
        b = int(np.argmin(Lvals))
        if Lvals[b] < best_L - 1e-13:
            best_L, best_tau = float(Lvals[b]), chunk[b]

    tm = np.full((mdp.M, mdp.M), NEVER)
    for e_k, (i, j) in enumerate(errors):
        tm[i, j] = best_tau[e_k]
    return SwitchingPolicy(tm), best_L


# --- auxiliary age MDPs for the reference baselines --------------------------


def _age_cost(kind: str, ages: np.ndarray) -> np.ndarray:
    if kind == "linear":
        return ages.astype(float)
    raise ValueError(f"unknown auxiliary age cost {kind!r}")


def build_aoi_mdp(p_s: float, lam: float, N: int, age_cost: str = "linear") -> FiniteMdp:
    """Age of information ``1..N``: success resets to 1, otherwise it grows
    (saturating at N). Transmission is allowed at every age."""
    states = tuple((d,) for d in range(1, N + 1))
    index = {s: k for k, s in enumerate(states)}
    up = np.minimum(np.arange(1, N + 1), N - 1)  # index of min(d+1, N)
    rows = np.arange(N)
    P0 = sp.csr_matrix((np.ones(N), (rows, up)), shape=(N, N))
    P1 = sp.csr_matrix(
        (np.r_[np.full(N, p_s), np.full(N, 1.0 - p_s)], (np.r_[rows, rows], np.r_[np.zeros(N, int), up])),
        shape=(N, N),
    )
    P1.eliminate_zeros()
    c = _age_cost(age_cost, np.arange(1, N + 1))
    return FiniteMdp(states, index, (P0, P1), np.vstack([c, c + lam]))


def build_aoii_mdp(source: SourceModel, p_s: float, lam: float, N: int, age_cost: str = "linear") -> FiniteMdp:
    """Age of incorrect information over ``(i, j, aoii)``: the AoII is 0 when
    synced and grows by one per slot spent in any error (saturating at N)."""
    M = source.M
    Q = source.Q
    states = [(i, i, 0) for i in range(M)]
    states += [(i, j, a) for i in range(M) for j in range(M) if i != j for a in range(1, N + 1)]
    states = tuple(states)
    index = {s: k for k, s in enumerate(states)}
    mats = []
    for act in (0, 1):
        rows, cols, vals = [], [], []
        for k, (i, j, a) in enumerate(states):
            send = act == 1 and i != j
            for nxt, p_est in ((i, p_s), (j, 1.0 - p_s)) if send else ((j, 1.0),):
                if p_est == 0:
                    continue
                for k2 in np.flatnonzero(Q[i] > 0):
                    a2 = 0 if k2 == nxt else min(a + 1, N)
                    rows.append(k)
                    cols.append(index[(int(k2), nxt, a2)])
                    vals.append(Q[i, k2] * p_est)
        mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(len(states), len(states))))
    c = np.zeros(len(states))
    c[M:] = _age_cost(age_cost, np.array([s[2] for s in states[M:]]))
    return FiniteMdp(states, index, tuple(mats), np.vstack([c, c + lam]))


def aoi_reference_policy(mdp: TruncatedMdp, age_cost: str = "linear", N: int | None = None) -> HistoryPolicy:
    res = classical_policy_iteration(build_aoi_mdp(mdp.p_s, mdp.lam, N or mdp.N, age_cost))
    table = np.r_[0, res.policy.actions].astype(np.int8)
    on = np.flatnonzero(table[1:])
    label = f"tau={on[0] + 1}" if on.size else "tau=inf"
    return HistoryPolicy("aoi", table=table, label=label)


def aoii_reference_policy(mdp: TruncatedMdp, age_cost: str = "linear", N: int | None = None) -> HistoryPolicy:
    n = N or mdp.N
    aux = build_aoii_mdp(mdp.source, mdp.p_s, mdp.lam, n, age_cost)
    res = classical_policy_iteration(aux)
    table = np.zeros((mdp.M, mdp.M, n + 1), dtype=np.int8)
    for k, (i, j, a) in enumerate(aux.states):
        table[i, j, a] = res.policy.actions[k]
    firsts = {int(np.argmax(table[i, j])) for i in range(mdp.M) for j in range(mdp.M) if i != j and table[i, j].any()}
    label = "tau=" + (",".join(str(t) for t in sorted(firsts)) if firsts else "inf")
    return HistoryPolicy("aoii", table=table, label=label)


# --- baseline parameter search -----------------------------------------------


@dataclass
class GridSearchResult:
    kind: str
    best: float
    cost: float
    costs: dict
    exact: bool


def grid_search_baseline(
    kind: str, grid, mdp: TruncatedMdp, horizon: int = 10**6, seeds=(0,)
) -> GridSearchResult:
    """Best parameter of a one-parameter baseline.

    ``threshold`` candidates are evaluated exactly; ``randomized`` and
    ``periodic`` by simulation averaged over a fixed seed set.
    """
    from .evaluation import average_cost_exact, simulate
    from .policies import BaselineSpec, make_baseline

    grid = list(grid)
    if not grid:
        raise ValueError("empty parameter grid")
    exact = kind == "threshold"
    costs = {}
    for v in grid:
        pol = make_baseline(BaselineSpec(kind, v), mdp)
        if exact:
            costs[v] = average_cost_exact(mdp, pol)
        else:
            costs[v] = float(np.mean([simulate(mdp, pol, horizon, s).mean_cost for s in seeds]))
    best = min(grid, key=lambda v: (costs[v], grid.index(v)))
    return GridSearchResult(kind, best, costs[best], costs, exact)


__all__ = [
    "SolveResult",
    "SolverError",
    "EvaluationError",
    "NonConvergenceError",
    "RefusalError",
    "policy_evaluation",
    "relative_value_iteration",
    "classical_policy_iteration",
    "structured_policy_iteration",
    "brute_force_switching_search",
    "grid_search_baseline",
    "build_aoi_mdp",
    "build_aoii_mdp",
    "aoi_reference_policy",
    "aoii_reference_policy",
    "bellman_residual",
    "SystemState",
]

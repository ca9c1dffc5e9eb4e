"""Exact stationary analysis, Monte Carlo simulation and truncation studies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from . import kernels
from .mdp import SystemState, TruncatedMdp, branches, build
from .policies import HistoryPolicy, Policy, SwitchingPolicy, expand, state_action_table
from .significance import Clipped, Constant, SignificanceProfile, check_existence
from .solvers import closed_classes, induced_chain, reachable_from, solve
from .source import SourceModel, classify_states


class MultipleRecurrentClassesError(ValueError):
    def __init__(self, classes, states):
        self.classes = classes
        desc = "; ".join(
            f"{len(c)} states from {tuple(int(x) for x in states[c[0]])}" for c in classes
        )
        super().__init__(f"induced chain has {len(classes)} recurrent classes: {desc}")


class SimulationOnlyError(ValueError):
    pass


class ExistenceError(ValueError):
    def __init__(self, report):
        self.report = report
        bad = ", ".join(f"({e.i},{e.j}) ratio {e.ratio:.4g} >= {e.bound:.4g}" for e in report.failures())
        super().__init__(f"existence condition fails: {bad}")


class SeriesDivergenceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    """``mu`` is indexed like the MDP states and vanishes off ``support``."""

    mu: np.ndarray
    support: np.ndarray

    def __getitem__(self, k):
        return self.mu[k]


def _as_policy(mdp: TruncatedMdp, policy) -> Policy:
    if isinstance(policy, SwitchingPolicy):
        return expand(policy, mdp)
    if isinstance(policy, Policy):
        return policy
    raise TypeError(f"expected a state-feedback policy, got {type(policy).__name__}")


def _solve_stationary(P: sp.csr_matrix, members: np.ndarray) -> np.ndarray:
    n = len(members)
    if n == 1:
        return np.ones(1)
    sub = P[members][:, members]
    A = (sp.identity(n, format="csr") - sub).T.tolil()
    A[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[-1] = 1.0
    x = spla.spsolve(A.tocsc(), b)
    x = np.maximum(x, 0.0)
    return x / x.sum()


def _class_for(P, classes, start, states):
    if start is None:
        hit = classes
    else:
        reach = set(reachable_from(P, start).tolist())
        hit = [c for c in classes if reach.intersection(c.tolist())]
    if len(hit) != 1:
        raise MultipleRecurrentClassesError(hit, states)
    return hit[0]


def stationary_distribution(mdp: TruncatedMdp, policy, s_ref=None) -> StationaryDistribution:
    """Stationary law of the chain induced by ``policy``.

    Without ``s_ref`` the chain must have a single recurrent class. With
    ``s_ref`` the unique class reachable from that state is analysed.
    """
    pol = _as_policy(mdp, policy)
    P, _ = induced_chain(mdp, pol.actions)
    start = None if s_ref is None else mdp.state_index(s_ref)
    members = _class_for(P, closed_classes(P), start, mdp.states)
    mu = np.zeros(mdp.n_states)
    mu[members] = _solve_stationary(P, members)
    return StationaryDistribution(mu, members)


# --- history-dependent policies on augmented chains --------------------------


def _memory_rules(mdp: TruncatedMdp, hp: HistoryPolicy):
    """``(m0, action(s, m), update(s, m, delivered, s2))`` for an augmented chain."""
    if hp.kind == "reactive":
        return 0, (lambda s, m: int(s.i != m)), (lambda s, m, dl, s2: s.i)
    if hp.kind == "aoi":
        tab = np.asarray(hp.table)
        cap = len(tab) - 1
        return 1, (lambda s, m: int(tab[m])), (lambda s, m, dl, s2: 1 if dl else min(m + 1, cap))
    if hp.kind == "aoii":
        tab = np.asarray(hp.table)
        cap = tab.shape[2] - 1
        return (
            0,
            lambda s, m: int(tab[s.i, s.j, m]),
            lambda s, m, dl, s2: 0 if s2.i == s2.j else min(m + 1, cap),
        )
    raise SimulationOnlyError(f"{hp.kind} policies are evaluated by simulation only")


def _augmented_cost(mdp: TruncatedMdp, hp: HistoryPolicy) -> float:
    m0, act, upd = _memory_rules(mdp, hp)
    Q, p_s, N, lam = mdp.source.Q, mdp.p_s, mdp.N, mdp.lam
    ctab = mdp.profile.cost_table(N)
    start = (SystemState(0, 0, 0), m0)
    index = {start: 0}
    order = [start]
    rows, cols, vals, cost = [], [], [], []
    k = 0
    while k < len(order):
        s, m = order[k]
        a = act(s, m)
        cost.append(ctab[s.i, s.j, s.delta] + lam * a)
        for s2, p, dl in branches(Q, p_s, N, s, a):
            node = (s2, upd(s, m, dl, s2))
            k2 = index.get(node)
            if k2 is None:
                k2 = index[node] = len(order)
                order.append(node)
            rows.append(k)
            cols.append(k2)
            vals.append(p)
        k += 1
    n = len(order)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    members = _class_for(P, closed_classes(P), None, [s for s, _ in order])
    mu = _solve_stationary(P, members)
    return float(mu @ np.asarray(cost)[members])


def average_cost_exact(mdp: TruncatedMdp, policy, s_ref=(0, 0, 0)) -> float:
    """Long-run average cost ``sum_s mu(s) l(s, pi(s))``.

    State-feedback policies are analysed on the recurrent class reached from
    ``s_ref``. Reactive, AoI- and AoII-driven policies are analysed on the
    state space augmented with the extra memory they need.
    """
    if isinstance(policy, HistoryPolicy):
        return _augmented_cost(mdp, policy)
    pol = _as_policy(mdp, policy)
    st = stationary_distribution(mdp, pol, s_ref)
    _, c = induced_chain(mdp, pol.actions)
    return float(st.mu @ c)


# --- simulation ----------------------------------------------------------------


@dataclass(frozen=True)
class SimulationReport:
    mean_cost: float
    half_width_95: float
    horizon: int
    seed: int
    transmissions_per_slot: float
    error_fraction: float
    backend: str
    batch_means: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "mean_cost": self.mean_cost,
            "half_width_95": self.half_width_95,
            "horizon": self.horizon,
            "seed": self.seed,
            "transmissions_per_slot": self.transmissions_per_slot,
            "error_fraction": self.error_fraction,
        }


def _cumulative_rows(Q: np.ndarray) -> np.ndarray:
    qc = np.cumsum(Q, axis=1)
    for r in range(Q.shape[0]):
        last = np.flatnonzero(Q[r] > 0)[-1]
        qc[r, last:] = 1.0
    return np.ascontiguousarray(qc)


def _policy_arrays(mdp: TruncatedMdp, policy):
    """``(kind, act, act_aoi, param, period, n_cap)`` for the kernel."""
    M = mdp.M
    dummy3 = np.zeros((M, M, 1), dtype=np.int8)
    dummy1 = np.zeros(1, dtype=np.int8)
    if isinstance(policy, SwitchingPolicy):
        policy = expand(policy, mdp)
    if isinstance(policy, Policy):
        act = state_action_table(policy, mdp)
        return kernels.KIND_TABLE, act, dummy1, 0.0, 1, mdp.N
    if not isinstance(policy, HistoryPolicy):
        raise TypeError(f"cannot simulate {type(policy).__name__}")
    if policy.kind == "randomized":
        return kernels.KIND_RANDOMIZED, dummy3, dummy1, float(policy.param), 1, 0
    if policy.kind == "periodic":
        return kernels.KIND_PERIODIC, dummy3, dummy1, 0.0, int(policy.param), 0
    if policy.kind == "reactive":
        return kernels.KIND_REACTIVE, dummy3, dummy1, 0.0, 1, 0
    if policy.kind == "aoi":
        tab = np.ascontiguousarray(policy.table, dtype=np.int8)
        return kernels.KIND_AOI, dummy3, tab, 0.0, 1, len(tab) - 1
    tab = np.ascontiguousarray(policy.table, dtype=np.int8)
    return kernels.KIND_AOII, tab, dummy1, 0.0, 1, tab.shape[2] - 1


def simulate(
    mdp: TruncatedMdp,
    policy,
    T: int = 10**6,
    seed: int = 0,
    batches: int = 20,
    chunk: int = 1 << 16,
    run_chunk=None,
) -> SimulationReport:
    """Simulate ``T`` slots from the synced state ``(0, 0, 0)``.

    The AoCE is not truncated; a state-feedback policy acts at ages beyond N
    as it does at N. Three independent PCG64 streams drive the source, the
    channel and the randomized policy's coin, and the channel draw is taken
    every slot so the source path does not depend on the policy.
    """
    if T < 1:
        raise ValueError("horizon must be >= 1")
    run = run_chunk or kernels.run_chunk
    kind, act, act_aoi, param, period, n_cap = _policy_arrays(mdp, policy)
    qcum = _cumulative_rows(mdp.source.Q)
    nb = min(batches, T)
    batch_len = T // nb
    L = max(256, mdp.N + 1)
    while True:
        ctab = np.ascontiguousarray(mdp.profile.cost_table(L - 1))
        if not np.all(np.isfinite(ctab)):
            raise OverflowError("age penalties overflow before the trajectory ends")
        ss = np.random.SeedSequence(seed)
        g_src, g_ch, g_pol = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(3))
        state = np.array([0, 0, 0, 0, 1, 0], dtype=np.int64)
        sums = np.zeros(nb)
        counters = np.zeros(3, dtype=np.int64)
        t0 = 0
        flag = 0
        while t0 < T:
            n = min(chunk, T - t0)
            u_src = g_src.random(n)
            u_ch = g_ch.random(n)
            u_pol = g_pol.random(n) if kind == kernels.KIND_RANDOMIZED else np.zeros(1)
            flag = run(
                state, u_src, u_ch, u_pol, qcum, ctab, kind, act, act_aoi, param, period,
                float(mdp.lam), float(mdp.p_s), n_cap, sums, batch_len, t0, counters,
            )
            if flag:
                break
            t0 += n
        if not flag:
            break
        L *= 2
    lens = np.full(nb, batch_len, dtype=float)
    lens[-1] = T - batch_len * (nb - 1)
    means = sums / lens
    total = float(sums.sum()) / T
    if nb >= 2:
        hw = float(stats.t.ppf(0.975, nb - 1) * means.std(ddof=1) / math.sqrt(nb))
    else:
        hw = math.inf
    return SimulationReport(
        mean_cost=total,
        half_width_95=hw,
        horizon=int(T),
        seed=int(seed),
        transmissions_per_slot=float(counters[0]) / T,
        error_fraction=float(counters[1]) / T,
        backend=kernels.BACKEND if run_chunk is None else "custom",
        batch_means=tuple(float(m) for m in means),
    )


# --- truncation ------------------------------------------------------------------


@dataclass(frozen=True)
class TruncationSweep:
    N: tuple
    L_star: tuple
    gaps: tuple
    fitted_ratio: float | None
    slope: float | None
    predicted_ratio: float
    asymptotic_ratio: float
    fit_points: tuple = ()

    def rows(self):
        return list(zip(self.N, self.L_star, self.gaps))


def predicted_truncation_ratio(source: SourceModel, p_s: float) -> float:
    """``max_{i in X_ap} Q_ii p_f``."""
    ap, _ = classify_states(source)
    return max((source.Q[i, i] * (1.0 - p_s) for i in ap), default=0.0)


def asymptotic_truncation_ratio(source: SourceModel, profile: SignificanceProfile, p_s: float) -> float:
    """``max Q_ii p_f * lim g(d+1)/g(d)``: decay ratio of the gap once the
    growth of the age penalty beyond N is taken into account."""
    ap, _ = classify_states(source)
    best = 0.0
    for i in ap:
        for j in range(source.M):
            if j != i:
                best = max(best, source.Q[i, i] * (1.0 - p_s) * profile.G[i][j].growth_ratio_limit())
    return best


def truncation_sweep(
    source: SourceModel,
    profile: SignificanceProfile,
    p_s: float,
    lam: float,
    N_list,
    method: str = "spi",
    noise: float = 1e3,
) -> TruncationSweep:
    """Solve the truncated MDP for each N and fit the geometric decay of
    ``|L*(N) - L*(N_max)|``.

    Gaps below ``noise * eps * max(1, |L|)`` are excluded from the fit.
    """
    report = check_existence(profile, source, 1.0 - p_s)
    if not report.passed:
        raise ExistenceError(report)
    Ns = sorted(int(n) for n in N_list)
    if not Ns:
        raise ValueError("empty N list")
    Ls = [solve(build(source, profile, p_s, lam, n), method).L_star for n in Ns]
    ref = Ls[-1]
    gaps = [abs(L - ref) for L in Ls]
    floor = noise * np.finfo(float).eps * max(1.0, abs(ref))
    pts = [(n, gp) for n, gp in zip(Ns[:-1], gaps[:-1]) if gp > floor]
    slope = ratio = None
    if len(pts) >= 2:
        x = np.array([p[0] for p in pts], dtype=float)
        y = np.log([p[1] for p in pts])
        slope = float(np.polyfit(x, y, 1)[0])
        ratio = math.exp(slope)
    return TruncationSweep(
        tuple(Ns),
        tuple(Ls),
        tuple(gaps),
        ratio,
        slope,
        predicted_truncation_ratio(source, p_s),
        asymptotic_truncation_ratio(source, profile, p_s),
        tuple(pts),
    )


def _gap_series(g, N, stay, limit, tail_tol, err) -> float:
    """``sum_{k>=1} stay^k (g(N+k) - g(N))`` with a ratio-test stopping rule."""
    if isinstance(g, Constant) or (isinstance(g, Clipped) and g.delta_max <= N):
        return 0.0
    gN = g(N)
    total = 0.0
    prev = 0.0
    for k in range(1, 10**6):
        term = stay**k * (g(N + k) - gN)
        total += term
        if prev > 0:
            r = max(term / prev, limit)
            if r < 1.0 and term * r / (1.0 - r) < tail_tol:
                return total
        elif k > 1000:
            # the age penalty has not moved past N for a thousand ages
            return total
        prev = term
    raise SeriesDivergenceError(f"gap series for error {err} did not settle")


@dataclass(frozen=True)
class GapBound:
    i: int
    j: int
    mu_boundary: float
    series: float
    bound: float


def truncation_gap_bound(mdp: TruncatedMdp, sw: SwitchingPolicy, tail_tol: float = 1e-12) -> list[GapBound]:
    """Per-error bound on the cost lost by truncating ages at N.

    For each error with a self-transitioning source state, the untruncated
    probability of the boundary age N is
    ``mu(i,j,1) Q_ii^(tau-1) (Q_ii p_f)^(N-tau)`` and the lost cost is that
    times ``D_ij * sum_k (Q_ii p_f)^k (g(k+N) - g(N))``.
    """
    # thresholds beyond N are never reached in the truncated chain
    sw = sw.canonical(mdp)
    st = stationary_distribution(mdp, sw, (0, 0, 0))
    N = mdp.N
    out = []
    for (i, j), idx in mdp.blocks.items():
        if len(idx) < 2 and N > 1:
            continue
        q_ii = mdp.source.Q[i, i]
        tau = sw.tau[i, j]
        t = N if math.isinf(tau) else min(int(tau), N)
        stay = q_ii * (1.0 if math.isinf(tau) else mdp.p_f)
        mu_b = st.mu[idx[0]] * q_ii ** (t - 1) * stay ** (N - t)
        g = mdp.profile.G[i][j]
        limit = stay * g.growth_ratio_limit()
        if limit >= 1.0:
            raise SeriesDivergenceError(f"gap series for error ({i},{j}) diverges (ratio limit {limit:.4g})")
        total = _gap_series(g, N, stay, limit, tail_tol, (i, j))
        out.append(GapBound(i, j, float(mu_b), float(total), float(mu_b * mdp.profile.D[i, j] * total)))
    return out


__all__ = [
    "StationaryDistribution",
    "SimulationReport",
    "TruncationSweep",
    "GapBound",
    "MultipleRecurrentClassesError",
    "SimulationOnlyError",
    "ExistenceError",
    "SeriesDivergenceError",
    "stationary_distribution",
    "average_cost_exact",
    "simulate",
    "truncation_sweep",
    "truncation_gap_bound",
    "predicted_truncation_ratio",
    "asymptotic_truncation_ratio",
]

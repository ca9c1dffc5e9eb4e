"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run standalone with ``python3 tests/test_acceptance.py`` or through pytest.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import (  # noqa: E402
    alarm_example_profile,
    asymmetric_mdp,
    random_instance,
    structural_violations,
    symmetric_mdp,
    symmetric_uniform_instance,
)
from oracles import dense_kernel  # noqa: E402

from aoce import (  # noqa: E402
    NEVER,
    Clipped,
    Constant,
    Exponential,
    Linear,
    Logarithmic,
    SwitchingPolicy,
    alarm_profile,
    average_cost_exact,
    brute_force_switching_search,
    build,
    check_existence,
    classical_policy_iteration,
    expand,
    make_symmetric_source,
    relative_value_iteration,
    simulate,
    structured_policy_iteration,
    truncation_sweep,
)
from aoce.mdp import age_marginal_rows, symmetric_age_kernel  # noqa: E402
from aoce.policies import threshold_policy  # noqa: E402

INF = NEVER

# (missed, false, normal) switching thresholds
LAMBDA_TABLE = {
    0: (1, 1, 1),
    1: (1, 1, 1),
    2: (1, 1, INF),
    3: (2, 3, INF),
    4: (3, 11, INF),
    5: (3, INF, INF),
    6: (3, INF, INF),
    7: (3, INF, INF),
}
CHANNEL_TABLE = {
    0.1: (1, INF, INF),
    0.2: (1, INF, INF),
    0.3: (1, INF, INF),
    0.4: (2, INF, INF),
    0.5: (2, INF, INF),
    0.6: (3, INF, INF),
    0.7: (3, 10, INF),
    0.8: (3, 5, INF),
    0.9: (2, 3, INF),
    1.0: (2, 2, INF),
}
ASYM_MATRIX = [
    [INF, 2, 2, 3],
    [3, INF, INF, INF],
    [INF, INF, INF, INF],
    [1, 1, 1, INF],
]
SWITCHING_COSTS = [0.31, 0.59, 0.73, 0.80, 0.85, 0.88]
THRESHOLD_COSTS = [0.31, 0.62, 0.88, 0.97, 1.01, 1.04]
COST_TOL = 0.02
TIE_CERT = 1e-9


def report(n, ok, detail):
    line = f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line, flush=True)
    return line


def class_matrix(missed, false, normal, M=4):
    tau = np.full((M, M), normal, dtype=float)
    tau[0, :] = missed
    tau[:, 0] = false
    np.fill_diagonal(tau, INF)
    return SwitchingPolicy(tau)


def q_values(mdp, h):
    return np.stack([mdp.cost[a] + mdp.P[a] @ h for a in (0, 1)])


def tie_certified(mdp, res, expected: SwitchingPolicy):
    """True when every state where the policies disagree is a Bellman tie."""
    exp_actions = expand(expected, mdp).actions
    diff = np.flatnonzero(exp_actions != res.policy.actions)
    if diff.size == 0:
        return True, 0
    f = q_values(mdp, res.h)
    gap = np.abs(f[0, diff] - f[1, diff])
    return bool(np.all(gap < TIE_CERT)), int(diff.size)


def compare_table(builder, table):
    mismatches, uncertified = [], []
    for key, cls in table.items():
        mdp = builder(key)
        res = structured_policy_iteration(mdp)
        got = res.thresholds.canonical(mdp)
        want = class_matrix(*cls).canonical(mdp)
        if got != want:
            ok, n = tie_certified(mdp, res, want)
            mismatches.append(key)
            if not ok:
                uncertified.append(key)
    return mismatches, uncertified


# --- criteria ------------------------------------------------------------------


def criterion_1():
    t = time.perf_counter()
    mism, bad = compare_table(lambda lam: symmetric_mdp(lam=float(lam)), LAMBDA_TABLE)
    dt = time.perf_counter() - t
    ok = not bad and dt < 60
    return ok, f"lambda sweep: mismatches={mism} uncertified={bad} time={dt:.2f}s"


def criterion_2():
    mism, bad = compare_table(lambda ps: symmetric_mdp(lam=3.0, p_s=ps), CHANNEL_TABLE)
    return not bad, f"channel sweep: mismatches={mism} uncertified={bad}"


def criterion_3():
    mdp = asymmetric_mdp()
    got = structured_policy_iteration(mdp).thresholds.canonical(mdp)
    want = SwitchingPolicy(np.array(ASYM_MATRIX, dtype=float)).canonical(mdp)
    return got == want, f"thresholds={got.rows()}"


def criterion_4():
    t = time.perf_counter()
    problems = []
    sw_costs, th_costs = [], []
    for lam, want_sw, want_th in zip(range(6), SWITCHING_COSTS, THRESHOLD_COSTS):
        mdp = asymmetric_mdp(lam=float(lam))
        res = structured_policy_iteration(mdp)
        L_sw = average_cost_exact(mdp, res.policy)
        grid = {d: average_cost_exact(mdp, threshold_policy(mdp, d)) for d in [*range(1, mdp.N + 1), INF]}
        best_d = min(grid, key=grid.get)
        L_th = grid[best_d]
        sw_costs.append(L_sw)
        th_costs.append(L_th)
        if abs(L_sw - want_sw) > COST_TOL:
            problems.append(f"switching lambda={lam}: {L_sw:.4f} vs {want_sw}")
        if abs(L_th - want_th) > COST_TOL:
            problems.append(f"threshold lambda={lam}: {L_th:.4f} vs {want_th}")
        for name, pol, exact in (("switching", res.policy, L_sw), ("threshold", threshold_policy(mdp, best_d), L_th)):
            rep = simulate(mdp, pol, T=10**6, seed=lam)
            if abs(rep.mean_cost - exact) > 3 * rep.half_width_95:
                problems.append(
                    f"{name} lambda={lam}: sim {rep.mean_cost:.4f} +- {rep.half_width_95:.4f} vs exact {exact:.4f}"
                )
    dt = time.perf_counter() - t
    if dt >= 300:
        problems.append(f"runtime {dt:.0f}s")
    detail = (
        "switching=" + "/".join(f"{v:.3f}" for v in sw_costs)
        + " threshold=" + "/".join(f"{v:.3f}" for v in th_costs)
        + f" time={dt:.1f}s"
    )
    if problems:
        detail += " problems: " + "; ".join(problems)
    return not problems, detail


def oracle_instances():
    out = []
    for k in range(10):
        out.append(random_instance(1000 + k, M=2, N=4 + k % 5))
    for k in range(10):
        out.append(random_instance(2000 + k, M=3, N=4 + k % 2))
    return out


def criterion_5():
    worst = 0.0
    for mdp in oracle_instances():
        L_spi = structured_policy_iteration(mdp).L_star
        _, L_bf = brute_force_switching_search(mdp)
        worst = max(worst, abs(L_spi - L_bf))
    return worst <= 1e-9, f"20 instances, max |L_spi - L_brute| = {worst:.2e}"


def suite_instances():
    """Every instance solved elsewhere in this suite, plus extra random ones."""
    out = []
    out += [(f"lambda={lam}", symmetric_mdp(lam=float(lam)), False) for lam in LAMBDA_TABLE]
    out += [(f"p_s={ps}", symmetric_mdp(lam=3.0, p_s=ps), False) for ps in CHANNEL_TABLE]
    out += [(f"asym lambda={lam}", asymmetric_mdp(lam=float(lam)), False) for lam in range(6)]
    out += [(f"random {k}", m, False) for k, m in enumerate(oracle_instances())]
    out += [(f"sym-uniform {k}", symmetric_uniform_instance(k), True) for k in range(12)]
    return out


def criterion_6():
    failures = []
    count = 0
    for name, mdp, sym in suite_instances():
        for res in (structured_policy_iteration(mdp), classical_policy_iteration(mdp)):
            count += 1
            v = structural_violations(res, mdp, symmetric_uniform=sym)
            if v:
                failures.append(f"{name}/{res.method}: {v}")
    return not failures, f"{count} solves checked; failures={failures}"


def criterion_7():
    src = make_symmetric_source(4, 0.1)
    sw = truncation_sweep(src, alarm_example_profile(), 0.9, 3.0, list(range(4, 21)))
    target = 0.07
    ok = sw.fitted_ratio is not None and abs(sw.fitted_ratio - target) <= 0.2 * target
    return ok, (
        f"fitted ratio={sw.fitted_ratio:.4f} (window {0.8 * target:.3f}..{1.2 * target:.3f}, "
        f"fit points={sw.fit_points}, asymptotic ratio={sw.asymptotic_ratio:.4f})"
    )


def criterion_8():
    src = make_symmetric_source(4, 0.1)
    p_f = 0.1  # stay probability Q_ii p_f = 0.07, bound 1/0.07
    conforming = [
        Constant(2.0),
        Clipped(Exponential(rate=5.0), 6),
        Linear(2.0, 1.0),
        Logarithmic(1.0, 1.0, base=10.0),
        Exponential(rate=0.3),
        Exponential(rate=2.6),
        Exponential(base=2.0, rate=3.8),
    ]
    rejected = [Exponential(rate=2.7), Exponential(rate=3.0), Exponential(base=2.0, rate=3.9)]
    wrong = []
    for g in conforming:
        if not check_existence(alarm_profile(4, g, g, Constant(1.0)), src, p_f).passed:
            wrong.append(f"rejected {g}")
    for g in rejected:
        if check_existence(alarm_profile(4, g, Constant(1.0), Constant(1.0)), src, p_f).passed:
            wrong.append(f"accepted {g}")
    # every error diverges, so no policy can steer around the growth
    g = Exponential(rate=3.0)
    prof = alarm_profile(4, g, g, g)
    Ls = []
    for N in (4, 6, 8, 10, 12):
        mdp = build(src, prof, 0.9, 3.0, N)
        Ls.append(relative_value_iteration(mdp).L_star)
    growing = all(b > a for a, b in zip(Ls, Ls[1:]))
    if not growing:
        wrong.append("L*(N) did not grow")
    return not wrong, "RVI L*(N) for N=4..12: " + ", ".join(f"{v:.4g}" for v in Ls) + (f" issues={wrong}" if wrong else "")


def criterion_9():
    worst, worst_ref = 0.0, 0.0
    for _, mdp, _ in suite_instances():
        L = [
            structured_policy_iteration(mdp).L_star,
            classical_policy_iteration(mdp).L_star,
            relative_value_iteration(mdp).L_star,
        ]
        worst = max(worst, max(L) - min(L))
        e = mdp.errors[-1]
        refs = [(1, 1, 0), (e[0], e[1], 1), mdp.states[-1]]
        Lr = [structured_policy_iteration(mdp, s_ref=r).L_star for r in refs]
        worst_ref = max(worst_ref, max(Lr) - min(Lr))
    ok = worst <= 1e-8 and worst_ref <= 1e-8
    return ok, f"max solver spread={worst:.2e}, max s_ref spread={worst_ref:.2e}"


def criterion_10():
    issues = []
    rng = np.random.default_rng(7)
    instances = [random_instance(3000 + k) for k in range(15)]
    for k in range(8):
        M = int(rng.integers(2, 6))
        p = float(rng.uniform(0.01, 0.95 / M))
        prof = alarm_profile(M, Linear(), Linear(), Linear())
        instances.append(build(make_symmetric_source(M, p), prof, float(rng.uniform(0, 1)), 1.0, int(rng.integers(3, 12))))
    for n, mdp in enumerate(instances):
        for a in (0, 1):
            P = mdp.P[a].toarray()
            if not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
                issues.append(f"#{n} a={a}: rows not stochastic")
            ref = dense_kernel(mdp, np.full(mdp.n_states, a))
            if not np.allclose(P, ref, atol=1e-14):
                issues.append(f"#{n} a={a}: kernel differs from direct construction")
        sync = mdp.synced
        if not np.array_equal(mdp.P[0].toarray()[sync], mdp.P[1].toarray()[sync]):
            issues.append(f"#{n}: synced rows depend on the action")
        for (i, j), idx in mdp.blocks.items():
            if len(idx) == mdp.N:
                top = idx[-1]
                stay = mdp.P[0][top, top]
                if not math.isclose(stay, mdp.source.Q[i, i], abs_tol=1e-15):
                    issues.append(f"#{n}: age N does not saturate for error {(i, j)}")
    for n in range(10):
        M = 2 + n % 4
        p = float(rng.uniform(0.01, 0.95 / M))
        p_s = float(rng.uniform(0.0, 1.0))
        N = int(rng.integers(2, 15))
        mdp = build(make_symmetric_source(M, p), alarm_profile(M, Linear(), Linear(), Linear()), p_s, 1.0, N)
        acts = rng.integers(0, 2, size=N + 1)
        acts[0] = 0
        K = symmetric_age_kernel(M, p, p_s, N)
        rows = age_marginal_rows(mdp, acts)
        ages = np.array([s.delta for s in mdp.states])
        want = K[acts[ages], ages]
        err = float(np.abs(rows - want).max())
        if err > 1e-14:
            issues.append(f"lumping #{n}: max error {err:.1e}")
    return not issues, f"{len(instances)} kernels, 10 lumping checks; issues={issues}"


CRITERIA = {n: globals()[f"criterion_{n}"] for n in range(1, 11)}


@pytest.mark.parametrize("n", list(CRITERIA))
def test_criterion(n, capsys):
    ok, detail = CRITERIA[n]()
    with capsys.disabled():
        print()
        report(n, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    results = []
    for n, fn in CRITERIA.items():
        ok, detail = fn()
        report(n, ok, detail)
        results.append(ok)
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)

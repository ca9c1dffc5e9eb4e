import math

import numpy as np
import pytest

from conftest import asymmetric_mdp, random_instance, structural_violations, symmetric_mdp, symmetric_uniform_instance
from oracles import value_iteration_cost

from aoce import (
    NEVER,
    Constant,
    SwitchingPolicy,
    alarm_profile,
    brute_force_switching_search,
    build,
    classical_policy_iteration,
    expand,
    grid_search_baseline,
    make_symmetric_source,
    policy_evaluation,
    relative_value_iteration,
    structured_policy_iteration,
)
from aoce.solvers import (
    EvaluationError,
    NonConvergenceError,
    RefusalError,
    aoi_reference_policy,
    aoii_reference_policy,
    bellman_residual,
    solve,
)


@pytest.mark.parametrize("seed", range(8))
def test_solvers_agree(seed):
    mdp = random_instance(seed)
    L = [f(mdp).L_star for f in (structured_policy_iteration, classical_policy_iteration, relative_value_iteration)]
    assert max(L) - min(L) < 1e-8


@pytest.mark.parametrize("seed", range(4))
def test_against_plain_value_iteration(seed):
    mdp = random_instance(seed, N=5)
    assert structured_policy_iteration(mdp).L_star == pytest.approx(value_iteration_cost(mdp), abs=1e-8)


@pytest.mark.parametrize("seed", range(6))
def test_brute_force_oracle(seed):
    mdp = random_instance(500 + seed, M=2 + seed % 2, N=4)
    _, L_bf = brute_force_switching_search(mdp)
    assert structured_policy_iteration(mdp).L_star == pytest.approx(L_bf, abs=1e-9)


def test_brute_force_guard():
    with pytest.raises(RefusalError) as e:
        brute_force_switching_search(symmetric_mdp(N=20))
    assert e.value.count > 10**6


def test_reference_state_invariance(asym_mdp):
    Ls = [structured_policy_iteration(asym_mdp, s_ref=s).L_star for s in [(0, 0, 0), (3, 3, 0), (0, 1, 7), (3, 2, 20)]]
    assert max(Ls) - min(Ls) < 1e-8


def test_structure_of_solutions(sym_mdp, asym_mdp):
    for mdp in (sym_mdp, asym_mdp):
        res = structured_policy_iteration(mdp)
        assert structural_violations(res, mdp) == []
        assert res.residual < 1e-8
        assert res.h[res.s_ref] == 0.0


@pytest.mark.parametrize("seed", range(8))
def test_symmetric_uniform_single_threshold(seed):
    mdp = symmetric_uniform_instance(seed)
    res = structured_policy_iteration(mdp)
    assert structural_violations(res, mdp, symmetric_uniform=True) == []


def test_policy_evaluation_matches_solution(sym_mdp):
    res = structured_policy_iteration(sym_mdp)
    L, h = policy_evaluation(sym_mdp, res.policy)
    assert L == pytest.approx(res.L_star, abs=1e-12)
    assert bellman_residual(sym_mdp, L, h) < 1e-8


def test_gain_depends_on_class_under_multichain_policy():
    # never transmitting freezes the estimate: one recurrent class per estimate
    mdp = symmetric_mdp(lam=1.0, N=5)
    never = expand(SwitchingPolicy.uniform(4, NEVER), mdp)
    L0, _ = policy_evaluation(mdp, never, s_ref=(0, 0, 0))
    L1, _ = policy_evaluation(mdp, never, s_ref=(1, 1, 0))
    assert L0 != pytest.approx(L1)
    # an all-transmit policy evaluated from anywhere gives the same gain
    allt = expand(SwitchingPolicy.uniform(4, 1), mdp)
    assert policy_evaluation(mdp, allt, (0, 0, 0))[0] == pytest.approx(policy_evaluation(mdp, allt, (2, 1, 3))[0])


def test_never_transmit_at_huge_cost():
    mdp = build(make_symmetric_source(3, 0.2), alarm_profile(3, Constant(), Constant(), Constant()), 0.9, 1e6, 10)
    for fn in (structured_policy_iteration, classical_policy_iteration, relative_value_iteration):
        res = fn(mdp)
        assert not res.policy.actions.any()


def test_free_transmission_transmits_everywhere(sym_mdp):
    res = structured_policy_iteration(sym_mdp.with_cost(lam=0.0))
    assert res.thresholds == SwitchingPolicy.uniform(4, 1)


def test_spi_visits_fewer_states_than_full_scan(sym_mdp):
    res = structured_policy_iteration(sym_mdp)
    assert max(res.visits) < len(sym_mdp.errors) * sym_mdp.N


def test_rvi_nonconvergence_is_reported(sym_mdp):
    with pytest.raises(NonConvergenceError):
        relative_value_iteration(sym_mdp, max_iter=3)


def test_solve_dispatch(sym_mdp):
    assert solve(sym_mdp, "pi").method == "classical_pi"
    with pytest.raises(ValueError):
        solve(sym_mdp, "magic")


def test_diagnostics(sym_mdp):
    d = structured_policy_iteration(sym_mdp).diagnostics()
    assert d["method"] == "spi" and d["iterations"] >= 1 and math.isfinite(d["L_star"])


def test_aoi_aoii_references():
    mdp = symmetric_mdp(lam=3.0)
    aoi = aoi_reference_policy(mdp)
    aoii = aoii_reference_policy(mdp)
    assert aoi.kind == "aoi" and aoii.kind == "aoii"
    assert np.flatnonzero(aoi.table)[0] == 3
    assert aoii.label == "tau=1"


def test_grid_search_threshold_is_exact(asym_mdp):
    res = grid_search_baseline("threshold", [1, 2, 3, 4, NEVER], asym_mdp)
    assert res.exact and res.best == 4
    assert res.cost == pytest.approx(min(res.costs.values()))


def test_evaluation_rejects_two_reachable_classes():
    # transmitting only into estimates 1 and 2 from estimate 0 makes both
    # "estimate frozen at 1" and "estimate frozen at 2" closed classes
    mdp = build(make_symmetric_source(3, 0.2), alarm_profile(3, Constant(), Constant(), Constant()), 0.9, 1.0, 4)
    tau = np.full((3, 3), NEVER)
    tau[1, 0] = tau[2, 0] = 1
    pol = expand(SwitchingPolicy(tau), mdp)
    with pytest.raises(EvaluationError):
        policy_evaluation(mdp, pol, s_ref=(0, 0, 0))
    L1, _ = policy_evaluation(mdp, pol, s_ref=(1, 1, 0))
    L2, _ = policy_evaluation(mdp, pol, s_ref=(2, 2, 0))
    assert L1 == pytest.approx(L2)

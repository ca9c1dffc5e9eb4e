import numpy as np
import pytest

from conftest import alarm_example_profile, asymmetric_mdp, random_instance, symmetric_mdp
from oracles import power_stationary

from aoce import (
    NEVER,
    Exponential,
    HistoryPolicy,
    SwitchingPolicy,
    alarm_profile,
    average_cost_exact,
    expand,
    make_symmetric_source,
    simulate,
    stationary_distribution,
    structured_policy_iteration,
    truncation_gap_bound,
    truncation_sweep,
)
from aoce.evaluation import (
    ExistenceError,
    MultipleRecurrentClassesError,
    SeriesDivergenceError,
    SimulationOnlyError,
    asymptotic_truncation_ratio,
    predicted_truncation_ratio,
)
from aoce.solvers import aoi_reference_policy, aoii_reference_policy, induced_chain


@pytest.mark.parametrize("seed", range(6))
def test_stationary_fixed_point(seed):
    mdp = random_instance(seed)
    res = structured_policy_iteration(mdp)
    st = stationary_distribution(mdp, res.policy, (0, 0, 0))
    P, c = induced_chain(mdp, res.policy.actions)
    assert st.mu.sum() == pytest.approx(1.0)
    assert np.allclose(st.mu @ P.toarray(), st.mu, atol=1e-13)
    assert np.all(st.mu >= 0)
    assert average_cost_exact(mdp, res.policy) == pytest.approx(res.L_star, abs=1e-10)


def test_stationary_matches_power_iteration(sym_mdp):
    pol = expand(SwitchingPolicy.uniform(4, 2), sym_mdp)
    P, _ = induced_chain(sym_mdp, pol.actions)
    mu = power_stationary(P.toarray())
    assert np.allclose(stationary_distribution(sym_mdp, pol).mu, mu, atol=1e-12)


def test_multiple_classes_detected():
    mdp = symmetric_mdp(N=5)
    never = SwitchingPolicy.uniform(4, NEVER)
    with pytest.raises(MultipleRecurrentClassesError):
        stationary_distribution(mdp, never)
    st = stationary_distribution(mdp, never, (1, 1, 0))
    assert all(mdp.states[k].j == 1 for k in st.support)


def test_exact_matches_simulation(asym_mdp):
    res = structured_policy_iteration(asym_mdp)
    rep = simulate(asym_mdp, res.policy, T=400_000, seed=3)
    assert abs(rep.mean_cost - res.L_star) < 3 * rep.half_width_95
    assert 0 < rep.transmissions_per_slot < 1 and 0 < rep.error_fraction < 1


@pytest.mark.parametrize("kind", ["reactive", "aoi", "aoii"])
def test_augmented_exact_matches_simulation(kind):
    # clipped penalties keep the truncated and untruncated chains identical
    mdp = symmetric_mdp(lam=2.0, N=20).with_cost(
        profile=alarm_profile(4, Exponential(rate=0.3), Exponential(rate=0.1), Exponential(rate=0.05))
    )
    pol = {"reactive": HistoryPolicy("reactive"), "aoi": aoi_reference_policy(mdp), "aoii": aoii_reference_policy(mdp)}[kind]
    exact = average_cost_exact(mdp, pol)
    rep = simulate(mdp, pol, T=400_000, seed=11)
    assert abs(rep.mean_cost - exact) < 3 * rep.half_width_95 + 1e-6


def test_simulation_only_policies_refuse_exact(sym_mdp):
    with pytest.raises(SimulationOnlyError):
        average_cost_exact(sym_mdp, HistoryPolicy("randomized", 0.5))
    with pytest.raises(SimulationOnlyError):
        average_cost_exact(sym_mdp, HistoryPolicy("periodic", 3))


def test_simulation_deterministic(sym_mdp):
    pol = HistoryPolicy("randomized", 0.4)
    a = simulate(sym_mdp, pol, T=50_000, seed=5)
    b = simulate(sym_mdp, pol, T=50_000, seed=5)
    c = simulate(sym_mdp, pol, T=50_000, seed=6)
    assert a == b
    assert a.mean_cost != c.mean_cost


def test_simulation_chunking_invariant(sym_mdp):
    pol = expand(SwitchingPolicy.uniform(4, 2), sym_mdp)
    a = simulate(sym_mdp, pol, T=30_000, seed=1, chunk=1 << 16)
    b = simulate(sym_mdp, pol, T=30_000, seed=1, chunk=777)
    assert a.mean_cost == b.mean_cost and a.batch_means == b.batch_means


def test_source_path_independent_of_policy(sym_mdp):
    a = simulate(sym_mdp, expand(SwitchingPolicy.uniform(4, 1), sym_mdp), T=20_000, seed=2)
    b = simulate(sym_mdp, HistoryPolicy("periodic", 1), T=20_000, seed=2)
    # periodic with period 1 transmits every slot, which equals transmitting in
    # every error since synced transmissions change nothing but the cost
    assert b.transmissions_per_slot == 1.0
    assert a.error_fraction == b.error_fraction


def test_simulation_report_dict(sym_mdp):
    rep = simulate(sym_mdp, HistoryPolicy("reactive"), T=1000, seed=0)
    d = rep.to_dict()
    assert d["horizon"] == 1000 and len(rep.batch_means) == 20
    with pytest.raises(ValueError):
        simulate(sym_mdp, HistoryPolicy("reactive"), T=0)


def test_cost_table_grows_past_default():
    from aoce import Constant, build

    # a near-absorbing source with a frozen estimate pushes the AoCE far past
    # the initial 256-entry cost table
    src = make_symmetric_source(2, 0.001)
    mdp = build(src, alarm_profile(2, Constant(), Constant(), Constant()), 0.5, 1.0, 4)
    rep = simulate(mdp, SwitchingPolicy.uniform(2, NEVER), T=20_000, seed=0)
    assert rep.mean_cost == pytest.approx(rep.error_fraction)
    assert rep.error_fraction > 0


def test_truncation_sweep_decays():
    sw = truncation_sweep(make_symmetric_source(4, 0.1), alarm_example_profile(), 0.9, 3.0, [4, 6, 8, 10, 20])
    assert sw.fitted_ratio is not None and 0 < sw.fitted_ratio < 1
    assert list(sw.gaps) == sorted(sw.gaps, reverse=True)
    assert sw.predicted_ratio == pytest.approx(0.07)


def test_fitted_ratio_tracks_asymptotic_ratio():
    sw = truncation_sweep(make_symmetric_source(4, 0.1), alarm_example_profile(), 0.9, 3.0, list(range(4, 21)))
    assert sw.fitted_ratio == pytest.approx(sw.asymptotic_ratio, rel=0.1)


def test_truncation_ratios():
    src = make_symmetric_source(4, 0.1)
    assert predicted_truncation_ratio(src, 0.9) == pytest.approx(0.07)
    assert asymptotic_truncation_ratio(src, alarm_example_profile(), 0.9) == pytest.approx(0.07 * np.exp(0.3))


def test_truncation_sweep_existence_gate():
    prof = alarm_profile(4, Exponential(rate=3.0), Exponential(rate=3.0), Exponential(rate=3.0))
    with pytest.raises(ExistenceError):
        truncation_sweep(make_symmetric_source(4, 0.1), prof, 0.9, 3.0, [4, 5, 6])


@pytest.mark.parametrize("tau", [2, 3, 5, NEVER])
@pytest.mark.parametrize("N", [4, 6, 8])
def test_gap_bound_matches_untruncated_cost(tau, N):
    mdp = symmetric_mdp(N=N)
    big = symmetric_mdp(N=30)
    sw = SwitchingPolicy.uniform(4, tau)
    gap = average_cost_exact(big, sw.canonical(mdp)) - average_cost_exact(mdp, sw)
    bound = sum(b.bound for b in truncation_gap_bound(mdp, sw))
    assert gap <= bound * (1 + 1e-6) + 1e-14


def test_gap_bound_small_at_optimum(sym_mdp):
    res = structured_policy_iteration(sym_mdp)
    assert all(b.bound < 1e-6 for b in truncation_gap_bound(sym_mdp, res.thresholds))


def test_gap_bound_divergent_series():
    mdp = symmetric_mdp(N=6).with_cost(
        profile=alarm_profile(4, Exponential(rate=3.0), Exponential(rate=0.1), Exponential(rate=0.1))
    )
    with pytest.raises(SeriesDivergenceError):
        truncation_gap_bound(mdp, SwitchingPolicy.uniform(4, 1))


def test_asymmetric_table_costs_monotone_in_lambda():
    costs = [structured_policy_iteration(asymmetric_mdp(lam=float(l))).L_star for l in range(4)]
    assert costs == sorted(costs)

import math

import numpy as np
import pytest

from aoce import (
    Constant,
    Exponential,
    Linear,
    Logarithmic,
    NotSwitching,
    SourceModel,
    alarm_profile,
    build,
    make_symmetric_source,
    validate,
)
from aoce.significance import SignificanceProfile

ASYM_Q = np.array(
    [
        [0.7, 0.1, 0.1, 0.1],
        [0.05, 0.7, 0.15, 0.1],
        [0.1, 0.1, 0.6, 0.2],
        [0.05, 0.1, 0.05, 0.8],
    ]
)


def alarm_example_profile(M=4):
    """Exponential missed-alarm penalty, base-10 log false-alarm penalty, constant otherwise."""
    return alarm_profile(M, Exponential(rate=0.3), Logarithmic(beta=1.0, base=10.0), Constant(1.0))


def symmetric_mdp(lam=3.0, p_s=0.9, N=20):
    return build(make_symmetric_source(4, 0.1), alarm_example_profile(), p_s, lam, N)


def asymmetric_mdp(lam=3.0, p_s=0.9, N=20):
    return build(SourceModel(ASYM_Q), alarm_example_profile(), p_s, lam, N)


def random_instance(seed, M=None, N=None, allow_pure=True):
    """Admissible random problem with mixed age-function kinds."""
    rng = np.random.default_rng(seed)
    M = M or int(rng.integers(2, 4))
    N = N or int(rng.integers(4, 9))
    while True:
        Q = rng.dirichlet(np.ones(M), size=M)
        if allow_pure and M == 3 and rng.random() < 0.3:
            Q[0, 0] = 0.0
            Q[0] /= Q[0].sum()
        Q = np.round(Q, 6)
        Q[:, -1] = 1.0 - Q[:, :-1].sum(axis=1)
        if np.all(Q >= 0) and validate(SourceModel(Q)).admissible:
            src = SourceModel(Q)
            break
    p_s = float(rng.uniform(0.3, 1.0))
    p_f = 1.0 - p_s
    G = []
    for i in range(M):
        row = []
        for j in range(M):
            if i == j:
                row.append(None)
                continue
            k = rng.integers(4)
            if k == 0:
                row.append(Constant(float(rng.uniform(0.5, 2.0))))
            elif k == 1:
                row.append(Linear(float(rng.uniform(0.1, 1.0)), float(rng.uniform(0.0, 1.0))))
            elif k == 2:
                row.append(Logarithmic(1.0, float(rng.uniform(0.5, 1.5))))
            else:
                stay = Q[i, i] * p_f
                cap = math.log(1.0 / stay) if stay > 0 else 1.0
                row.append(Exponential(rate=float(rng.uniform(0.05, 0.9) * min(cap, 1.0))))
        G.append(tuple(row))
    D = rng.uniform(0.5, 2.0, size=(M, M))
    np.fill_diagonal(D, 0.0)
    prof = SignificanceProfile(D, tuple(G))
    lam = float(rng.uniform(0.0, 5.0))
    return build(src, prof, p_s, lam, N)


def symmetric_uniform_instance(seed):
    """Symmetric source, equal weights and one age function for every error."""
    rng = np.random.default_rng(seed)
    M = int(rng.integers(2, 5))
    p = float(rng.uniform(0.02, 0.9 / M))
    g = [Linear(1.0, 0.0), Logarithmic(1.0, 1.0), Exponential(rate=0.2), Constant(1.0)][seed % 4]
    src = make_symmetric_source(M, p)
    prof = alarm_profile(M, g, g, g, D=float(rng.uniform(0.5, 2.0)))
    return build(src, prof, float(rng.uniform(0.4, 1.0)), float(rng.uniform(0.0, 6.0)), int(rng.integers(5, 15)))


def structural_violations(res, mdp, symmetric_uniform=False):
    """Return a list of violated structural properties of a solve result."""
    out = []
    sw = res.thresholds
    if isinstance(sw, NotSwitching):
        out.append(f"not switching at {sw}")
    if res.policy.actions[: mdp.M].any():
        out.append("transmits in a synced state")
    h = res.h
    scale = max(1.0, float(np.abs(h).max()))
    for e, idx in mdp.blocks.items():
        d = np.diff(h[idx])
        if np.any(d < -1e-9 * scale):
            out.append(f"relative values decrease in age for error {e}")
    if symmetric_uniform and not isinstance(sw, NotSwitching):
        vals = {sw.tau[i, j] for i, j in mdp.errors}
        if len(vals) > 1:
            out.append(f"unequal thresholds {sorted(vals)} on a symmetric instance")
    return out


@pytest.fixture(scope="session")
def sym_mdp():
    return symmetric_mdp()


@pytest.fixture(scope="session")
def asym_mdp():
    return asymmetric_mdp()

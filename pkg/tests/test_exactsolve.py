import math

import numpy as np
import pytest
import scipy.sparse as sp

from sipkit import analytic, exactsolve
from sipkit.errors import ParameterError, SolvabilityError, SolverError, StateSpaceTooLarge
from sipkit.model import Configuration, ModelParams, enumerate_transitions, perturbed_params


def solve(N, n_max, p):
    space = exactsolve.build_space(N, n_max)
    G = exactsolve.build_generator(space, p)
    return space, G, exactsolve.stationary_distribution(G)


# spaces

def test_space_sizes():
    assert exactsolve.build_space(2, 1).size == 4
    assert exactsolve.build_space(3, 6).size == 343


def test_index_bijection():
    space = exactsolve.build_space(3, 4)
    for k in range(space.size):
        assert space.index(space.state(k)) == k
    assert len({tuple(s) for s in space.states}) == space.size


def test_space_guards():
    with pytest.raises(StateSpaceTooLarge):
        exactsolve.build_space(8, 40)
    with pytest.raises(ParameterError):
        exactsolve.build_space(1, 4)
    with pytest.raises(ParameterError):
        exactsolve.build_space(3, 0)


def test_choose_nmax():
    n = exactsolve.choose_nmax(0.5, 1.0)
    assert 0.5 ** (n + 1) < 1e-12 <= 0.5**n


# generator

def test_generator_structure():
    space = exactsolve.build_space(3, 8)
    G = exactsolve.build_generator(space, perturbed_params(1.0, 2.0, 0.3, 3, 1.5)).matrix
    off = G - sp.diags(G.diagonal())
    assert off.min() >= 0
    scale = np.abs(G.diagonal()).max()
    assert np.abs(np.asarray(G.sum(axis=1))).max() <= 1e-13 * scale


def test_generator_small_example():
    space = exactsolve.build_space(2, 1)
    G = exactsolve.build_generator(space, ModelParams(2, 1.0, 1.0, 1.0, 1.0, 1.0))
    row = G.matrix.getrow(space.index(Configuration.of(0, 0))).toarray().ravel()
    assert row[space.index(Configuration.of(1, 0))] == 1.0
    assert row[space.index(Configuration.of(0, 1))] == 1.0
    assert np.count_nonzero(row) == 3


def test_generator_matches_transition_enumeration():
    space = exactsolve.build_space(3, 5)
    p = perturbed_params(1.0, 3.0, -0.2, 3, 0.7)
    G = exactsolve.build_generator(space, p).matrix.toarray()
    for k in range(0, space.size, 7):
        x = space.state(k)
        want = np.zeros(space.size)
        for t in enumerate_transitions(x, p):
            if max(t.target.occupations) <= 5:
                want[space.index(t.target)] += t.rate
        want[k] = -want.sum()
        assert np.allclose(G[k], want, rtol=1e-14, atol=1e-14)


def test_dropped_rate_at_nmax40():
    n_max, b, m = 40, 1.0, 1.0
    space = exactsolve.build_space(3, n_max)
    G = exactsolve.build_generator(space, ModelParams.equilibrium(3, m, b, 2.0))
    nu = exactsolve.product_measure(space, 0.5, m)
    # oracle: sites are independent truncated geometrics; a move is dropped when it
    # lands on a full site (2 boundary births, 4 directed bulk moves)
    g = 0.5 ** (np.arange(n_max + 1) + 1)
    g /= g.sum()
    full, mean = g[-1], float(np.arange(n_max + 1) @ g)
    mean_not_full = (mean - n_max * full) / (1 - full)
    births = 2 * b * (m + n_max) * full
    bulk = 4 * full * (1 - full) * mean_not_full * (m + n_max)
    assert G.truncated
    assert G.weighted_dropped_rate(nu) == pytest.approx(births + bulk, rel=1e-10)
    assert G.weighted_dropped_rate(nu) < 1.2e-10


# stationary distribution

def test_equilibrium_is_product_measure():
    space, G, nu = solve(3, 14, ModelParams.equilibrium(3, 1.0, 1.0, 2.0))
    assert np.max(np.abs(nu.probs - exactsolve.product_measure(space, 0.5, 1.0).probs)) <= 1e-10
    assert nu.residual <= 1e-10
    assert math.fsum(nu.probs) == pytest.approx(1.0, abs=1e-12)


def test_symmetric_pair_is_swap_invariant():
    space, _, nu = solve(2, 25, ModelParams(2, 1.3, 0.8, 2.0, 0.8, 2.0))
    swapped = np.array([space.index(Configuration(tuple(s[::-1]))) for s in space.states])
    assert np.max(np.abs(nu.probs - nu.probs[swapped])) <= 1e-14


def test_general_rates_profile():
    p = ModelParams(3, 1.0, 1.0, 3.0, 0.5, 2.0)
    _, G, nu = solve(3, 30, p)
    assert G.weighted_dropped_rate(nu) < 1e-12
    assert np.allclose(nu.site_means(), analytic.density_profile_general(p).densities, atol=1e-9, rtol=0)


def test_expectation_examples():
    space, G, nu = solve(3, 20, ModelParams.equilibrium(3, 1.0, 1.0, 2.0))
    assert exactsolve.expectation(lambda x: 1.0, nu) == pytest.approx(1.0, abs=1e-12)
    w1 = lambda x: (1.0 - 2.0) * (x[0] - x[-1])
    assert abs(exactsolve.expectation(w1, nu)) <= 1e-10
    # truncation lowers the mean by about 22 * 2^-21
    assert exactsolve.expectation(lambda x: x[1], nu) == pytest.approx(1.0, abs=2e-5)


def test_distribution_validation():
    space = exactsolve.build_space(2, 2)
    with pytest.raises(SolverError):
        exactsolve.Distribution(space, np.full(space.size, 0.5))
    with pytest.raises(ParameterError):
        exactsolve.Distribution(space, np.full(3, 1 / 3))


# Poisson equation

@pytest.fixture(scope="module")
def eq20():
    return solve(3, 20, ModelParams.equilibrium(3, 1.0, 1.0, 2.0))


def test_poisson_zero(eq20):
    _, G, nu = eq20
    assert not np.any(exactsolve.solve_poisson(G, np.zeros(G.size), nu))


def test_poisson_solvability(eq20):
    space, G, nu = eq20
    with pytest.raises(SolvabilityError):
        exactsolve.solve_poisson(G, space.states[:, 0].astype(float), nu)


def test_poisson_gauge_and_equation(eq20):
    space, G, nu = eq20
    f = (space.states[:, 1] - space.states[:, 2]).astype(float)
    phi = exactsolve.solve_poisson(G, f, nu)
    assert abs(phi @ nu.probs) <= 1e-10
    assert np.max(np.abs(G.apply(phi) - f)[1:]) <= 1e-8


def test_poisson_w1_matches_mclennan_in_the_interior(box30):
    # dropped face moves perturb the solution near n_max; see the decay check below
    c = analytic.mclennan_coefficients(1.0, 2.0, 1.0, 3)(box30.space.states)
    err = np.abs(box30.h1 - c)
    top = box30.space.states.max(axis=1)
    assert err[top <= 5].max() <= 1e-6
    assert err[top <= 5].max() < err[top <= 10].max() < err[top <= 15].max()
    assert abs(box30.h1 @ box30.nu0.probs) <= 1e-10


# Dyson series

def test_gamma_identity(box30):
    assert exactsolve.gamma_identity_residual(box30.G0, box30.gamma, box30.nu0) <= 1e-10


def test_h1_is_poisson_w1(box30):
    w1 = (1.0 - 2.0) * (box30.space.states[:, 0] - box30.space.states[:, -1]).astype(float)
    assert np.max(np.abs(box30.h1 - exactsolve.solve_poisson(box30.G0, w1, box30.nu0))) <= 1e-10


def test_h1_vanishes_on_constant_states(box30):
    for k in range(0, 30, 3):
        assert abs(box30.h1[box30.space.index(Configuration.of(k, k, k))]) <= 1e-10


def test_h1_rejects_driven_reference():
    space = exactsolve.build_space(3, 5)
    G = exactsolve.build_generator(space, perturbed_params(1.0, 2.0, 0.1, 3, 1.0))
    with pytest.raises(ParameterError):
        exactsolve.dyson_first_order(G)


def weighted(nu0, v):
    return float(nu0.probs @ np.abs(v))


def test_first_order_finite_differences(box30):
    errs = [weighted(box30.nu0, exactsolve.relative_correction(box30.driven[e], box30.nu0, e) - box30.h1)
            for e in (0.02, 0.01)]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)


def test_second_order_finite_differences(box30):
    h2 = box30.stage2.h
    errs = [weighted(box30.nu0, exactsolve.relative_correction(box30.driven[e], box30.nu0, e) - box30.h1 - e * h2)
            for e in (0.02, 0.01)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_second_order_measure_error(box30):
    rho0, h1, h2 = box30.nu0.probs, box30.h1, box30.stage2.h
    errs = [np.abs(box30.driven[e].probs - rho0 * (1 + e * h1 + e * e * h2)).sum() for e in (0.02, 0.01)]
    assert errs[0] / errs[1] == pytest.approx(8.0, rel=0.05)


def test_higher_stages_are_centred(box30):
    assert abs(box30.stage2.projection) <= 1e-10
    assert abs(box30.stage2.h @ box30.nu0.probs) <= 1e-10


def test_recursion_from_constant_reproduces_h1():
    # theta0 = 1/4 keeps the face states' weight negligible in the nu0-weighted norm
    space, G0, nu0 = solve(3, 24, ModelParams.equilibrium(3, 1.0, 1.0, 4.0))
    gamma = exactsolve.perturbation_operator(space, G0.params)
    h1 = exactsolve.dyson_first_order(G0, nu0)
    stage = exactsolve.dyson_higher_order(G0, gamma, np.ones(space.size), nu0)
    assert weighted(nu0, stage.h - h1) <= 1e-10


def test_dyson_series_orders():
    space, G0, nu0 = solve(3, 12, ModelParams.equilibrium(3, 1.0, 1.0, 3.0))
    stages = exactsolve.dyson_series(G0, 3, nu0)
    assert len(stages) == 3
    for st in stages:
        assert abs(st.h @ nu0.probs) <= 1e-10
    with pytest.raises(ParameterError):
        exactsolve.dyson_series(G0, 0, nu0)


def test_relative_correction_rejects_zero(eq20):
    _, _, nu = eq20
    with pytest.raises(ParameterError):
        exactsolve.relative_correction(nu, nu, 0.0)

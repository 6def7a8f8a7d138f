import numpy as np
import pytest

from dengue2s import ParameterSet, strain_swap
from dengue2s.analysis import (
    classify_kind,
    classify_stability,
    dfe_analytic_eigenvalues,
    dfe_quadratic_roots,
    disease_free_equilibrium,
    eigenvalues_at,
    one_strain_equilibrium,
    one_strain_state,
    r0,
    r0_spectral,
    reduced_residuals,
    refine_equilibrium,
    residual_norm,
    two_strain_symmetric_equilibrium,
    two_strain_symmetric_roots,
)
from dengue2s.bifurcation import critical_alpha
from dengue2s.errors import NoPositiveRootError, ThresholdError
from dengue2s.integrate import SolverSettings, integrate, settle
from dengue2s.model import STRAIN2_ONLY, disease_free_state

from conftest import random_params


def multiset_distance(a, b):
    """Largest distance in an optimal greedy pairing of two eigenvalue lists."""
    a, b = list(np.asarray(a, complex)), list(np.asarray(b, complex))
    worst = 0.0
    for z in sorted(a, key=lambda c: (c.real, c.imag)):
        k = int(np.argmin([abs(z - w) for w in b]))
        worst = max(worst, abs(z - b.pop(k)))
    return worst


# -- R0 ---------------------------------------------------------------------------------

def test_r0_baseline(params):
    assert r0(params) == pytest.approx(1.0813194, abs=1e-7)


def test_r0_edge_values(params):
    assert r0(params.replace(alpha=0.0)) == 0.0
    assert r0(params.replace(alpha=critical_alpha(params))) == pytest.approx(1.0, abs=1e-15)


def test_r0_equals_next_generation_spectral_radius():
    rng = np.random.default_rng(10)
    for _ in range(50):
        p = random_params(rng)
        assert r0_spectral(p) == pytest.approx(r0(p), rel=1e-10)


def test_threshold_equivalence_with_quadratic_roots():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        p = random_params(rng)
        R0 = r0(p)
        if abs(R0 - 1) < 1e-9:
            continue
        assert np.sign(R0 - 1) == np.sign(np.max(dfe_quadratic_roots(p).real))


# -- DFE --------------------------------------------------------------------------------

def test_dfe_values(params):
    eq = disease_free_equilibrium(params)
    assert eq.state.S == pytest.approx(10000.0)
    assert eq.state.U == pytest.approx(1e5)
    assert eq.kind == "disease_free"
    assert eq.residual_norm < 1e-12


def test_dfe_spectrum_matches_closed_form():
    rng = np.random.default_rng(12)
    for p in [ParameterSet()] + [random_params(rng) for _ in range(30)]:
        num = eigenvalues_at(disease_free_state(p), p)
        assert multiset_distance(num, dfe_analytic_eigenvalues(p)) < 1e-8


def test_dfe_quadratic_root_signs(params):
    below = params.replace(alpha=0.5 * critical_alpha(params))
    assert np.all(dfe_quadratic_roots(below).real < 0)
    at = params.replace(alpha=critical_alpha(params))
    assert np.min(np.abs(dfe_quadratic_roots(at))) < 1e-14
    assert np.max(dfe_quadratic_roots(params).real) > 0


def test_dfe_stability_follows_threshold(params):
    assert disease_free_equilibrium(params.replace(alpha=0.3)).stable
    assert not disease_free_equilibrium(params).stable


# -- one-strain -------------------------------------------------------------------------

def test_one_strain_baseline_residual(params):
    eq = one_strain_equilibrium(params, 1)
    assert eq.residual_norm < 1e-9 * params.lambda_N
    assert eq.kind == "one_strain_1"
    assert np.all(eq.x[STRAIN2_ONLY] == 0.0)


def test_one_strain_closed_form_is_root_for_random_draws():
    rng = np.random.default_rng(13)
    n = 0
    while n < 200:
        p = random_params(rng)
        if r0(p) <= 1:
            continue
        n += 1
        assert one_strain_equilibrium(p, 1).residual_norm < 1e-9 * p.lambda_N


def test_one_strain_positivity_iff_supercritical():
    rng = np.random.default_rng(14)
    keep = [0, 1, 3, 5, 10, 11]
    for _ in range(200):
        p = random_params(rng)
        if abs(r0(p) - 1) < 1e-6:
            continue
        if r0(p) > 1:
            assert np.all(one_strain_state(p)[keep] > 0)
        else:
            with pytest.raises(ThresholdError):
                one_strain_equilibrium(p)


def test_one_strain_continuity_at_threshold(params):
    p = params.replace(alpha=critical_alpha(params) * (1 + 1e-9))
    x = one_strain_state(p)
    assert x[0] == pytest.approx(params.human_capacity, rel=1e-6)
    assert x[1] < 1e-5


def test_one_strain_swap_and_conjugate_spectrum(params):
    e1, e2 = one_strain_equilibrium(params, 1), one_strain_equilibrium(params, 2)
    np.testing.assert_array_equal(e2.x, np.asarray(strain_swap(e1.x)))
    assert e2.kind == "one_strain_2"
    assert multiset_distance(e1.eigenvalues, e2.eigenvalues) < 1e-10


# -- two-strain -------------------------------------------------------------------------

def test_two_strain_baseline(params):
    eq = two_strain_symmetric_equilibrium(params)
    assert eq.kind == "two_strain_symmetric"
    assert eq.residual_norm < 1e-9 * params.lambda_N
    np.testing.assert_array_equal(eq.x, np.asarray(strain_swap(eq.x)))
    assert eq.stable


def test_two_strain_matches_long_time_limit(params, baseline):
    eq = two_strain_symmetric_equilibrium(params)
    traj = integrate(baseline.initial_state, params, (0, 1e5))
    scale = np.maximum(np.abs(eq.x), 1e-3)
    assert np.max(np.abs(traj.final - eq.x) / scale) < 1e-6
    settled = settle(baseline.initial_state, params)
    assert np.max(np.abs(settled.x - eq.x) / scale) < 1e-6


def test_two_strain_reduced_root_satisfies_reduced_system(params):
    root = two_strain_symmetric_roots(params)[-1]
    d1, d2 = reduced_residuals(root.x, root.y, params)
    assert abs(d1) < 1e-10 and abs(d2) < 1e-10
    assert 0 < root.y <= root.x
    assert root.p == pytest.approx(params.sigma / params.alpha)


def test_two_strain_unpolished_closed_form_is_a_root(params):
    for delta in (0.0, 0.01):
        p = params.replace(delta=delta)
        eq = two_strain_symmetric_equilibrium(p, polish=False)
        assert eq.residual_norm < 1e-9 * p.lambda_N


def test_two_strain_without_secondary_infection(params):
    eq = two_strain_symmetric_equilibrium(params.replace(sigma=0.0))
    s = eq.state
    assert s.I12 == 0.0 and s.I21 == 0.0 and s.R == 0.0
    assert eq.residual_norm < 1e-9 * params.lambda_N


def test_two_strain_random_draws_delta_zero():
    rng = np.random.default_rng(15)
    n = 0
    while n < 50:
        p = random_params(rng, delta=0.0)
        if r0(p) <= 1.01:
            continue
        n += 1
        eq = two_strain_symmetric_equilibrium(p)
        assert eq.residual_norm < 1e-9 * p.lambda_N
        assert eq.kind == "two_strain_symmetric"


def test_two_strain_needs_supercritical(params):
    with pytest.raises(NoPositiveRootError):
        two_strain_symmetric_equilibrium(params.replace(alpha=0.3, sigma=0.0))


# -- Newton refinement ----------------------------------------------------------------------

def test_refine_returns_to_dfe_below_threshold(params):
    p = params.replace(alpha=0.3)
    x = disease_free_state(p)
    x[1] += 1.0
    eq = refine_equilibrium(x, p)
    assert eq.kind == "disease_free"
    assert eq.residual_norm < 1e-9 * p.lambda_N


def test_refine_from_closed_form_converges_immediately(params):
    eq = refine_equilibrium(one_strain_equilibrium(params).x, params)
    assert eq.iterations <= 2
    assert eq.kind == "one_strain_1"


def test_refine_from_midpoint_is_deterministic(params):
    mid = 0.5 * (one_strain_equilibrium(params).x + two_strain_symmetric_equilibrium(params).x)
    a, b = refine_equilibrium(mid, params), refine_equilibrium(mid, params)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.residual_norm < 1e-9 * params.lambda_N
    assert a.kind in ("one_strain_1", "two_strain_symmetric", "generic")


def test_refine_rejects_empty_totals(params):
    with pytest.raises(ValueError):
        refine_equilibrium(np.zeros(14), params)


# -- classification -----------------------------------------------------------------------

def test_classify_kind_labels(params):
    assert classify_kind(disease_free_state(params), params) == "disease_free"
    assert classify_kind(one_strain_equilibrium(params, 2).x, params) == "one_strain_2"
    x = two_strain_symmetric_equilibrium(params).x.copy()
    x[1] *= 1.01
    assert classify_kind(x, params) == "generic"


def test_classify_stability_margin(params):
    eq = disease_free_equilibrium(params.replace(alpha=critical_alpha(params)))
    # the critical eigenvalue is zero to rounding, inside the margin: not stable
    assert not classify_stability(eq, eq_params := params.replace(alpha=critical_alpha(params))).stable
    assert classify_stability(eq, eq_params, margin=-1.0).stable


def test_one_strain_unstable_in_full_space(params):
    assert not one_strain_equilibrium(params).stable

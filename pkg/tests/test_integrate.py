import numpy as np
import pytest
from scipy.integrate import solve_ivp

from dengue2s import ParameterSet
from dengue2s.analysis import (
    disease_free_equilibrium,
    one_strain_equilibrium,
    two_strain_symmetric_equilibrium,
)
from dengue2s.errors import SettleTimeout
from dengue2s.integrate import (
    Event,
    SolverSettings,
    detect_oscillation,
    integrate,
    invariant_basis,
    long_time_bounds_check,
    settle,
)
from dengue2s.model import STRAIN1_ONLY, STRAIN2_ONLY, InvalidStateError, vector_field
from dengue2s.workflows import bistability, strain1_only_state

from conftest import random_params, random_state


def rel_err(x, ref):
    return float(np.max(np.abs(x - ref) / np.maximum(np.abs(ref), 1.0)))


def scipy_reference(x0, p, t1):
    sol = solve_ivp(lambda t, x: vector_field(x, p), (0, t1), x0, method="DOP853", rtol=1e-13, atol=1e-12)
    return sol.y[:, -1]


def test_matches_scipy_reference(baseline):
    x0, p = np.asarray(baseline.initial_state), baseline.params
    ref = scipy_reference(x0, p, 100)
    for tol, bound in ((1e-6, 1e-6), (1e-8, 1e-8), (1e-10, 1e-10)):
        tr = integrate(x0, p, (0, 100), SolverSettings(rel_tol=tol, abs_tol=1e-12))
        assert rel_err(tr.final, ref) < bound


def test_matches_scipy_reference_random_draws():
    rng = np.random.default_rng(40)
    for _ in range(5):
        p = random_params(rng)
        x0 = random_state(rng, p)
        tr = integrate(x0, p, (0, 20), SolverSettings(rel_tol=1e-10, abs_tol=1e-10))
        assert rel_err(tr.final, scipy_reference(x0, p, 20)) < 1e-7


def test_fixed_step_order_at_least_four(baseline):
    x0, p = np.asarray(baseline.initial_state), baseline.params
    ref = scipy_reference(x0, p, 100)
    errs = []
    for h in (0.4, 0.2, 0.1):
        # tolerances so loose that every step is max_step
        tr = integrate(x0, p, (0, 100), SolverSettings(rel_tol=1.0, abs_tol=1e9, max_step=h))
        assert tr.meta["rejects"] == 0
        errs.append(rel_err(tr.final, ref))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 4)


def test_deterministic(baseline):
    a = integrate(baseline.initial_state, baseline.params, (0, 300))
    b = integrate(baseline.initial_state, baseline.params, (0, 300))
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.states, b.states)


def test_dense_output_grid(baseline):
    tr = integrate(baseline.initial_state, baseline.params, (0, 10.5),
                   SolverSettings(dense_output_interval=1.0))
    np.testing.assert_allclose(tr.times, list(range(11)) + [10.5])
    ref = integrate(baseline.initial_state, baseline.params, (0, 7.0)).final
    assert rel_err(tr.states[7], ref) < 1e-7


def test_conservation_without_disease_deaths():
    p = ParameterSet(delta=0.0)
    rng = np.random.default_rng(41)
    x0 = random_state(rng, p)
    x0[:10] *= p.human_capacity / x0[:10].sum()
    tr = integrate(x0, p, (0, 1000))
    N = tr.column("N")
    assert np.max(np.abs(N / p.human_capacity - 1)) < 1e-8


def test_totals_follow_closed_form():
    p = ParameterSet(delta=0.0)
    rng = np.random.default_rng(42)
    x0 = random_state(rng, p)
    tr = integrate(x0, p, (0, 50), SolverSettings(rel_tol=1e-10))
    N0, M0 = x0[:10].sum(), x0[10:].sum()
    N = p.human_capacity + (N0 - p.human_capacity) * np.exp(-p.mu * tr.times)
    M = p.vector_capacity + (M0 - p.vector_capacity) * np.exp(-p.kappa * tr.times)
    np.testing.assert_allclose(tr.column("N"), N, rtol=1e-8)
    np.testing.assert_allclose(tr.column("M"), M, rtol=1e-8)


def test_strain_absent_subspace_preserved(baseline):
    x0 = strain1_only_state(baseline.initial_state)
    tr = integrate(x0, baseline.params, (0, 2000))
    assert np.all(tr.states[:, STRAIN2_ONLY] == 0.0)
    assert tr.column("I1").max() > 0


def test_nonnegative_and_bounded_random_draws():
    rng = np.random.default_rng(43)
    for _ in range(10):
        p = random_params(rng)
        x0 = random_state(rng, p, zero_fraction=0.3)
        tr = integrate(x0, p, (0, 200))
        assert np.all(tr.states >= 0.0)


def test_rejects_bad_input(params):
    x0 = disease_free_equilibrium(params).x
    with pytest.raises(ValueError):
        integrate(x0, params, (10, 0))
    bad = x0.copy()
    bad[1] = -5.0
    with pytest.raises(InvalidStateError):
        integrate(bad, params, (0, 1))
    with pytest.raises(ValueError):
        SolverSettings(rel_tol=0)


def test_event_location(baseline):
    level = 20.0
    ev = Event(lambda t, x: x[1] + x[2] + x[7] + x[8] - level, terminal=True, direction=-1)
    tr = integrate(baseline.initial_state, baseline.params, (0, 600), events=[ev])
    (te, i, xe), = tr.events
    assert i == 0
    assert xe[1] + xe[2] + xe[7] + xe[8] == pytest.approx(level, rel=1e-6)
    assert tr.times[-1] == pytest.approx(te)
    assert tr.meta["terminated_by_event"]


# -- settle -------------------------------------------------------------------------------

def test_settle_below_threshold_reaches_dfe(baseline):
    p = baseline.params.replace(alpha=0.3)
    rec = settle(baseline.initial_state, p)
    assert rec.kind == "disease_free"
    assert rec.residual_norm < 1e-9 * p.lambda_N


def test_settle_at_equilibrium_returns_it(params):
    eq = two_strain_symmetric_equilibrium(params)
    rec = settle(eq.x, params)
    np.testing.assert_allclose(rec.x, eq.x, rtol=1e-9)


def test_bistability(baseline):
    out = bistability(baseline.params, baseline.initial_state)
    two, one = out["two_strain_start"], out["strain1_only_start"]
    assert two.kind == "two_strain_symmetric" and one.kind == "one_strain_1"
    for rec in (two, one):
        assert rec.residual_norm < 1e-9 * baseline.params.lambda_N
    np.testing.assert_allclose(one.x, one_strain_equilibrium(baseline.params).x, rtol=1e-8, atol=1e-10)


def test_settle_times_out_on_oscillation(baseline):
    p = baseline.params.replace(alpha=0.627)
    x0 = np.array(baseline.initial_state, dtype=float)
    x0[2] = 25.0   # break the strain symmetry so the Hopf mode is excited
    with pytest.raises(SettleTimeout) as info:
        settle(x0, p, t_max=6e4)
    assert info.value.oscillating
    assert detect_oscillation(info.value.trajectory)


def test_symmetric_start_stays_symmetric(baseline):
    # past the Hopf point the oscillation breaks the symmetry, so symmetric
    # data never reach it and settle at the symmetric equilibrium instead
    p = baseline.params.replace(alpha=0.627)
    rec = settle(baseline.initial_state, p)
    assert rec.kind == "two_strain_symmetric"
    assert not rec.stable


def test_invariant_basis_dimensions(params):
    assert invariant_basis(two_strain_symmetric_equilibrium(params).x).shape == (14, 9)
    assert invariant_basis(one_strain_equilibrium(params, 2).x).shape == (14, 14 - len(STRAIN1_ONLY))
    x = two_strain_symmetric_equilibrium(params).x.copy()
    x[1] += 1
    assert invariant_basis(x).shape == (14, 14)


def test_no_oscillation_on_convergent_run(baseline):
    tr = integrate(baseline.initial_state, baseline.params, (0, 2e4), SolverSettings(dense_output_interval=5.0))
    assert not detect_oscillation(tr)


# -- bounds -------------------------------------------------------------------------------

def test_long_time_bounds():
    rng = np.random.default_rng(44)
    for _ in range(5):
        p = random_params(rng)
        x0 = random_state(rng, p)
        tr = integrate(x0, p, (0, 3 / p.mu), SolverSettings(dense_output_interval=1.0))
        report = long_time_bounds_check(tr, p)
        assert report.ok, report.violations


def test_bounds_check_flags_excess(baseline):
    tr = integrate(baseline.initial_state, baseline.params, (0, 100), SolverSettings(dense_output_interval=1.0))
    tr.states[50, 0] += 0.01 * baseline.params.human_capacity
    report = long_time_bounds_check(tr, baseline.params)
    assert not report.ok
    assert report.violations[0][:2] == ("N", 50.0)

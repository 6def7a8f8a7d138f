"""Reproduction number, equilibria and their local stability."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, NoPositiveRootError, SingularJacobianError, ThresholdError
from .model import (
    N_STATE,
    STRAIN1_ONLY,
    STRAIN2_ONLY,
    SWAP_INDEX,
    ParameterSet,
    State,
    as_state_array,
    disease_free_state,
    jacobian,
    strain_swap,
    totals,
    vector_field,
)

EQUILIBRIUM_RTOL = 1e-9      # residual tolerance, relative to lambda_N
STABILITY_MARGIN = 1e-8
ZERO_THRESHOLD = 1e-10       # relative to lambda_N / mu

KINDS = ("disease_free", "one_strain_1", "one_strain_2", "two_strain_symmetric", "generic")

# infected compartments used by the next-generation decomposition
INFECTED = np.array([1, 2, 7, 8, 11, 12, 13])


@dataclass(frozen=True)
class EquilibriumRecord:
    state: State
    kind: str
    eigenvalues: np.ndarray
    stable: bool
    residual_norm: float
    iterations: int = 0

    @property
    def x(self) -> np.ndarray:
        return self.state.to_array()

    @property
    def max_real(self) -> float:
        return float(np.max(self.eigenvalues.real))


@dataclass(frozen=True)
class ReducedTwoStrainVariables:
    """Forces at a symmetric two-strain equilibrium.

    ``x`` is the total force of one strain on humans, ``y`` the part carried
    by singly infected vectors and ``y12 = x - y`` the part carried by
    co-infected vectors.
    """

    x: float
    y: float
    p: float
    q: float

    @property
    def y12(self) -> float:
        return self.x - self.y


def residual_norm(state, params: ParameterSet) -> float:
    return float(np.max(np.abs(vector_field(state, params))))


def default_tolerance(params: ParameterSet) -> float:
    return EQUILIBRIUM_RTOL * params.lambda_N


# -- reproduction number -----------------------------------------------------

def r0(params: ParameterSet) -> float:
    """Basic reproduction number ``sqrt(alpha beta / (kappa (gamma + mu)))``."""
    if params.kappa <= 0 or params.gamma_bar <= 0:
        raise ValueError("r0 needs kappa > 0 and gamma + mu > 0")
    return float(np.sqrt(params.alpha * params.beta / (params.kappa * params.gamma_bar)))


def next_generation_matrices(params: ParameterSet) -> tuple[np.ndarray, np.ndarray]:
    """New-infection matrix F and transition matrix V at the DFE.

    Built from the Jacobian restricted to the infected compartments
    ``I1, I2, I12, I21, V1, V2, V12``: at the DFE every off-diagonal entry
    is a new-infection term and the diagonal holds the exit rates.
    """
    J = jacobian(disease_free_state(params), params)[np.ix_(INFECTED, INFECTED)]
    V = -np.diag(np.diag(J))
    F = J + V
    return F, V


def r0_spectral(params: ParameterSet) -> float:
    """Spectral radius of ``F V^-1``; agrees with :func:`r0`."""
    F, V = next_generation_matrices(params)
    return float(np.max(np.abs(np.linalg.eigvals(F @ np.linalg.inv(V)))))


# -- stability -----------------------------------------------------------------

def eigenvalues_at(state, params: ParameterSet) -> np.ndarray:
    ev = np.linalg.eigvals(jacobian(state, params))
    return ev[np.argsort(-ev.real, kind="stable")]


def classify_kind(state, params: ParameterSet, symmetry_rtol: float = 1e-8) -> str:
    x = as_state_array(state)
    thr = ZERO_THRESHOLD * params.human_capacity
    strain1 = max(x[1], x[8], x[11], x[13]) > thr
    strain2 = max(x[2], x[7], x[12], x[13]) > thr
    if not strain1 and not strain2:
        return "disease_free"
    if strain1 and not strain2:
        return "one_strain_1"
    if strain2 and not strain1:
        return "one_strain_2"
    scale = np.maximum(np.abs(x), thr)
    if np.all(np.abs(x - x[SWAP_INDEX]) <= symmetry_rtol * scale):
        return "two_strain_symmetric"
    return "generic"


def classify_stability(eq: EquilibriumRecord, params: ParameterSet,
                       margin: float = STABILITY_MARGIN) -> EquilibriumRecord:
    """Fill eigenvalues and the stable flag.

    Stable means every eigenvalue has real part below ``-margin``; real parts
    within the margin of zero are treated as undetermined, hence not stable.
    """
    ev = eigenvalues_at(eq.x, params)
    return replace(eq, eigenvalues=ev, stable=bool(np.all(ev.real < -margin)))


def _record(x, params, kind=None, iterations=0) -> EquilibriumRecord:
    x = np.asarray(x, dtype=float)
    ev = eigenvalues_at(x, params)
    return EquilibriumRecord(
        state=State.from_array(x),
        kind=kind or classify_kind(x, params),
        eigenvalues=ev,
        stable=bool(np.all(ev.real < -STABILITY_MARGIN)),
        residual_norm=residual_norm(x, params),
        iterations=iterations,
    )


# -- disease-free equilibrium ----------------------------------------------------

def disease_free_equilibrium(params: ParameterSet) -> EquilibriumRecord:
    return _record(disease_free_state(params), params, kind="disease_free")


def dfe_quadratic_roots(params: ParameterSet) -> np.ndarray:
    """Roots of ``s^2 + (gamma + kappa + mu) s + gamma kappa + kappa mu - alpha beta``."""
    p = params
    b = p.gamma + p.kappa + p.mu
    c = p.gamma * p.kappa + p.kappa * p.mu - p.alpha * p.beta
    disc = np.sqrt(complex(b * b - 4 * c))
    return np.array([(-b + disc) / 2, (-b - disc) / 2])


def dfe_analytic_eigenvalues(params: ParameterSet) -> np.ndarray:
    """All 14 DFE eigenvalues in closed form, with multiplicity."""
    p = params
    quad = dfe_quadratic_roots(p)
    ev = [-p.mu] * 4 + [-p.nu_bar] * 2 + [-p.delta_bar] * 2 + [-p.kappa] * 2 + list(quad) * 2
    return np.array(ev, dtype=complex)


# -- one-strain equilibrium -------------------------------------------------------

def one_strain_state(params: ParameterSet, strain: int = 1) -> np.ndarray:
    p = params
    R0 = r0(p)
    if R0 <= 1:
        raise ThresholdError(f"one-strain equilibrium needs R0 > 1, got R0 = {R0:.6g}")
    # phi is the per-capita infection pressure on vectors, beta I1 / N
    phi = p.alpha * p.beta * p.mu / (p.gamma_bar * p.alpha_bar) * (1 - 1 / R0**2)
    denom = p.mu * (p.kappa + phi) + p.alpha * phi
    x = np.zeros(N_STATE)
    x[0] = p.lambda_N * (p.kappa + phi) / denom
    x[1] = p.lambda_N * p.alpha * phi / (p.gamma_bar * denom)
    x[3] = p.gamma / p.nu_bar * x[1]
    x[5] = p.nu * p.gamma / (p.nu_bar * p.mu) * x[1]
    x[10] = p.lambda_M / (p.kappa + phi)
    x[11] = p.lambda_M * phi / (p.kappa * (p.kappa + phi))
    if strain == 2:
        return strain_swap(x)
    if strain != 1:
        raise ValueError("strain must be 1 or 2")
    return x


def one_strain_equilibrium(params: ParameterSet, strain: int = 1) -> EquilibriumRecord:
    kind = f"one_strain_{strain}"
    return _record(one_strain_state(params, strain), params, kind=kind)


# -- symmetric two-strain equilibrium ------------------------------------------------

def _reduced_parts(x, params: ParameterSet):
    """Human compartments, N and the per-strain infectious prevalence g(x)."""
    p = params
    ratio = p.sigma / p.alpha
    S = p.lambda_N / (p.mu + 2 * x)
    I1 = S * x / p.gamma_bar
    R1 = p.gamma * I1 / p.nu_bar
    S1 = p.nu * R1 / (p.mu + ratio * x)
    I12 = ratio * x * S1 / p.delta_bar
    R = 2 * p.gamma * I12 / p.mu
    N = S + 2 * (I1 + R1 + S1 + I12) + R
    g = I1 + I12
    return (S, I1, R1, S1, I12, R), N, g


def strain_prevalence(x, params: ParameterSet):
    """``I1 + I21`` (= ``I2 + I12``) at a symmetric state with human force ``x``."""
    return _reduced_parts(x, params)[2]


def reduced_residuals(x, y, params: ParameterSet) -> tuple[float, float]:
    """The two scalar equilibrium conditions on ``(x, y)``.

    The first is the singly infected vector balance, the second the
    co-infected vector balance; N is the human total implied by ``x``
    (``lambda_N / mu`` exactly when ``delta = 0``), M is ``lambda_M / kappa``.
    """
    p = params
    _, N, g = _reduced_parts(x, p)
    M = p.vector_capacity
    load = p.beta * g / N
    d1 = load * (p.lambda_M / (p.kappa + 2 * load) - M * y / p.alpha) - p.kappa * M * y / p.alpha
    d2 = 2 * load * y - p.kappa * (x - y)
    return d1, d2


def _y_of_x(x, params):
    _, N, g = _reduced_parts(x, params)
    return params.kappa * x / (params.kappa + 2 * params.beta * g / N)


def two_strain_symmetric_roots(params: ParameterSet, n_grid: int = 600) -> list[ReducedTwoStrainVariables]:
    """All positive solutions of the reduced system, smallest ``x`` first.

    The co-infected balance is solved for ``y`` in closed form; the remaining
    scalar equation in ``x`` is bracketed on a log grid over ``(0, alpha]``
    (``x`` is a fraction of ``alpha``) and polished with Brent's method.
    """
    p = params
    if p.alpha <= 0:
        return []
    q = p.nu * p.gamma / (p.nu_bar * p.delta_bar)

    def h(x):
        return reduced_residuals(x, _y_of_x(x, p), p)[0]

    grid = np.geomspace(p.alpha * 1e-14, p.alpha, n_grid)
    vals = np.array([h(x) for x in grid])
    roots = []
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa == 0.0:
            x = a
        elif fa * fb < 0:
            x = brentq(h, a, b, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
        else:
            continue
        y = _y_of_x(x, p)
        if x > 0 and 0 < y <= x:
            roots.append(ReducedTwoStrainVariables(x=float(x), y=float(y), p=p.sigma / p.alpha, q=q))
    return roots


def two_strain_state(reduced: ReducedTwoStrainVariables, params: ParameterSet) -> np.ndarray:
    p = params
    (S, I1, R1, S1, I12, R), N, g = _reduced_parts(reduced.x, p)
    load = p.beta * g / N
    U = p.lambda_M / (p.kappa + 2 * load)
    V1 = load * U / (p.kappa + load)
    V12 = 2 * load * V1 / p.kappa
    return np.array([S, I1, I1, R1, R1, S1, S1, I12, I12, R, U, V1, V1, V12])


def two_strain_symmetric_equilibrium(params: ParameterSet, polish: bool = True) -> EquilibriumRecord:
    """Symmetric coexistence equilibrium from the reduced system.

    When several positive roots exist the one with the largest force is used.
    """
    roots = two_strain_symmetric_roots(params)
    if not roots:
        raise NoPositiveRootError(
            f"reduced two-strain system has no positive root (R0 = {r0(params):.6g})")
    x = two_strain_state(roots[-1], params)
    if polish:
        rec = refine_equilibrium(x, params)
        # Newton keeps the symmetric subspace up to rounding; restore it exactly
        xs = rec.x
        xs = 0.5 * (xs + xs[SWAP_INDEX])
        return _record(xs, params, kind="two_strain_symmetric", iterations=rec.iterations)
    return _record(x, params, kind="two_strain_symmetric")


# -- Newton refinement ---------------------------------------------------------------

def refine_equilibrium(guess, params: ParameterSet, tol: float | None = None,
                       max_iter: int = 50, zero_subspace: bool = True) -> EquilibriumRecord:
    """Damped Newton iteration on the full vector field.

    Steps are halved until the residual max-norm decreases and the totals
    stay positive. Components that are exactly zero in the guess along with
    their strain partners stay zero when ``zero_subspace`` is set, so a
    one-strain guess stays on its invariant subspace.
    """
    tol = default_tolerance(params) if tol is None else tol
    x = np.array(as_state_array(guess), dtype=float)
    N, M = totals(x)
    if N <= 0 or M <= 0:
        raise ValueError("guess must have positive human and vector totals")

    active = np.ones(N_STATE, dtype=bool)
    if zero_subspace:
        for block in (STRAIN1_ONLY, STRAIN2_ONLY):
            if np.all(x[block] == 0.0):
                active[block] = False
    idx = np.flatnonzero(active)

    f = vector_field(x, params)
    res = float(np.max(np.abs(f)))
    it = 0
    while res >= tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"Newton did not converge in {max_iter} iterations (residual {res:.3e})")
        J = jacobian(x, params)[np.ix_(idx, idx)]
        try:
            dx = np.linalg.solve(J, -f[idx])
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError("singular Jacobian in Newton step") from exc
        if not np.all(np.isfinite(dx)):
            raise SingularJacobianError("non-finite Newton step")
        step = 1.0
        for _ in range(30):
            trial = x.copy()
            trial[idx] += step * dx
            Nt, Mt = totals(trial)
            if Nt > 0 and Mt > 0:
                ft = vector_field(trial, params)
                rt = float(np.max(np.abs(ft)))
                if rt < res or step < 1e-6:
                    break
            step *= 0.5
        else:
            raise ConvergenceError("line search failed in Newton iteration")
        x, f, res = trial, ft, rt
        it += 1
    return _record(x, params, iterations=it)

"""Pseudo-arclength continuation of equilibria with bifurcation detection.

Work is done in scaled coordinates ``z = x / scale`` with human components
divided by the human total and vector components by the vector total at the
starting point, so a unit of arclength means a comparable relative change in
either population and in the free parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import fsolve

from ..analysis import EquilibriumRecord, _record
from ..errors import ConvergenceError, NumericalError
from ..model import (
    N_STATE,
    InvalidStateError,
    ParameterSet,
    State,
    jacobian,
    parameter_derivative,
    vector_field,
)

FREE_PARAMETERS = ("alpha", "sigma", "nu", "beta", "kappa", "gamma", "delta")


@dataclass
class ContinuationSettings:
    initial_step: float = 1e-3
    min_step: float = 1e-6
    max_step: float = 5e-2
    max_points: int = 2000
    direction: int = 1                  # +1: free parameter initially increasing
    newton_rtol: float = 1e-9           # residual tolerance relative to lambda_N
    max_newton: int = 8
    event_tol: float = 1e-10            # parameter tolerance of event refinement
    stop_when_infeasible: bool = True
    detect_events: bool = True
    # periodic orbits
    degree: int = 4
    intervals: int = 40
    orbit_tol: float = 1e-8
    floquet_tol: float = 1e-4
    adapt_mesh_every: int = 1

    def __post_init__(self):
        if not 0 < self.min_step <= self.initial_step <= self.max_step:
            raise ValueError("need 0 < min_step <= initial_step <= max_step")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")


@dataclass(frozen=True)
class TestFunctionValues:
    real_eig_product_proxy: float     # real eigenvalue nearest zero (signed)
    complex_pair_max_real: float      # largest real part among complex pairs


@dataclass
class BifurcationEvent:
    event_kind: str                   # branch_point | fold | hopf
    param_name: str
    param_value: float
    state: State
    test_values: tuple
    imag_pair: float | None
    params: ParameterSet
    eigenvalues: np.ndarray = field(repr=False, default=None)


@dataclass
class Branch:
    free_param: str
    params: ParameterSet
    param_values: np.ndarray
    points: list                      # EquilibriumRecord per parameter value
    events: list
    termination: str

    def __len__(self):
        return len(self.points)

    def column(self, name: str) -> np.ndarray:
        if name == "param":
            return self.param_values
        return np.array([getattr(r.state, name) for r in self.points])

    @property
    def states(self) -> np.ndarray:
        return np.array([r.x for r in self.points])


def test_functions(eq: EquilibriumRecord, imag_tol: float = 1e-9) -> TestFunctionValues:
    """Scalars monitored along a branch.

    The first vanishes when a real eigenvalue crosses zero, the second when a
    complex pair crosses the imaginary axis; NaN when no eigenvalue of that
    type exists.
    """
    ev = np.asarray(eq.eigenvalues)
    is_complex = np.abs(ev.imag) > imag_tol * np.maximum(1.0, np.abs(ev))
    real = ev[~is_complex].real
    cplx = ev[is_complex]
    proxy = float(real[np.argmin(np.abs(real))]) if real.size else np.nan
    hopf = float(np.max(cplx.real)) if cplx.size else np.nan
    return TestFunctionValues(proxy, hopf)


def _unstable_counts(ev, imag_tol=1e-9):
    is_complex = np.abs(ev.imag) > imag_tol * np.maximum(1.0, np.abs(ev))
    pos = ev.real > 0
    return int(np.sum(pos & ~is_complex)), int(np.sum(pos & is_complex))


class _Problem:
    """Scaled equilibrium problem ``G(z, p) = f(scale * z, p) / scale``."""

    def __init__(self, params: ParameterSet, free_param: str, scale: np.ndarray):
        if free_param not in FREE_PARAMETERS:
            raise ValueError(f"free parameter must be one of {FREE_PARAMETERS}, got {free_param!r}")
        self.base = params
        self.name = free_param
        self.scale = scale

    def params_at(self, p) -> ParameterSet:
        return self.base.replace(**{self.name: float(p)})

    def G(self, X):
        z, p = X[:-1], X[-1]
        return vector_field(z * self.scale, self.params_at(p)) / self.scale

    def residual(self, X):
        """Unscaled max-norm residual."""
        return float(np.max(np.abs(vector_field(X[:-1] * self.scale, self.params_at(X[-1])))))

    def DG(self, X):
        z, p = X[:-1], X[-1]
        x = z * self.scale
        prm = self.params_at(p)
        Jz = jacobian(x, prm) * self.scale[None, :] / self.scale[:, None]
        Gp = parameter_derivative(x, prm, self.name) / self.scale
        return np.column_stack([Jz, Gp])

    def state(self, X):
        return X[:-1] * self.scale


def _tangent(DG, t_prev):
    A = np.vstack([DG, t_prev])
    rhs = np.zeros(A.shape[0])
    rhs[-1] = 1.0
    t = np.linalg.solve(A, rhs)
    t /= np.linalg.norm(t)
    if t @ t_prev < 0:
        t = -t
    return t


def _correct(prob: _Problem, X_pred, t, tol, max_iter, fixed_param=None):
    """Newton on ``G = 0`` plus a scalar constraint.

    The constraint is the hyperplane through the predictor orthogonal to
    ``t`` or, with ``fixed_param``, ``p = fixed_param``.
    """
    X = X_pred.copy()
    res_prev = np.inf
    for it in range(max_iter + 1):
        try:
            G = prob.G(X)
            res = prob.residual(X)
        except (InvalidStateError, ValueError):
            # left the state or parameter domain; the caller shortens the step
            return None, it
        if not np.all(np.isfinite(G)):
            return None, it
        if res < tol:
            return X, it
        if it == max_iter or (it > 2 and res > res_prev):
            return None, it
        res_prev = res
        DG = prob.DG(X)
        if fixed_param is None:
            row = t
            c = t @ (X - X_pred)
        else:
            row = np.zeros_like(X)
            row[-1] = 1.0
            c = X[-1] - fixed_param
        A = np.vstack([DG, row])
        try:
            dX = np.linalg.solve(A, -np.append(G, c))
        except np.linalg.LinAlgError:
            return None, it
        X = X + dX
    return None, max_iter


def _scale_for(x: np.ndarray) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=float))
    scale = x.copy()
    human_floor = 1e-3 * max(x[:10].max(), 1e-300)
    vector_floor = 1e-3 * max(x[10:].max(), 1e-300)
    scale[:10] = np.maximum(scale[:10], human_floor)
    scale[10:] = np.maximum(scale[10:], vector_floor)
    return scale


def _class_scale(x: np.ndarray) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=float))
    return np.concatenate([np.full(10, max(x[:10].sum(), 1e-300)),
                           np.full(4, max(x[10:].sum(), 1e-300))])


def _feasible(x, rtol=1e-9):
    thr = rtol * max(x[:10].sum(), x[10:].sum())
    return bool(np.all(x >= -thr))


class _Tracer:
    """Shared machinery for stepping along a branch."""

    def __init__(self, prob: _Problem, settings: ContinuationSettings):
        self.prob = prob
        self.settings = settings
        self.tol = settings.newton_rtol * prob.base.lambda_N

    def record(self, X) -> EquilibriumRecord:
        return _record(self.prob.state(X), self.prob.params_at(X[-1]))

    def point_at(self, X0, t0, s):
        """Point on the branch at arclength ``s`` beyond ``X0`` along ``t0``."""
        X_pred = X0 + s * t0
        X, _ = _correct(self.prob, X_pred, t0, self.tol, 3 * self.settings.max_newton)
        return X

    def refine(self, Xa, ta, Xb, counts_a, h):
        """Bisect in arclength until the parameter bracket is below ``event_tol``."""
        lo, hi = 0.0, h
        X_lo, X_hi = Xa, Xb
        for _ in range(200):
            if abs(X_hi[-1] - X_lo[-1]) < self.settings.event_tol or hi - lo < 1e-15:
                break
            mid = 0.5 * (lo + hi)
            Xm = self.point_at(Xa, ta, mid)
            if Xm is None:
                break
            ev = self.record(Xm).eigenvalues
            c = _unstable_counts(ev)
            if sum(c) == sum(counts_a):
                lo, X_lo = mid, Xm
            else:
                hi, X_hi = mid, Xm
        return X_lo, X_hi


def _make_event(tracer: _Tracer, X_lo, X_hi, t_lo, t_hi) -> BifurcationEvent | None:
    prob = tracer.prob
    r_lo, r_hi = tracer.record(X_lo), tracer.record(X_hi)
    ev_lo, ev_hi = r_lo.eigenvalues, r_hi.eigenvalues
    # the crossing eigenvalue is the one nearest the imaginary axis
    k = int(np.argmin(np.abs(ev_hi.real)))
    crossing = ev_hi[k]
    imag_tol = 1e-9 * max(1.0, abs(crossing))
    X_ev = X_lo if np.min(np.abs(ev_lo.real)) < np.min(np.abs(ev_hi.real)) else X_hi
    rec = r_lo if X_ev is X_lo else r_hi
    if abs(crossing.imag) > imag_tol:
        j_lo = int(np.argmin(np.abs(ev_lo - crossing)))
        kind = "hopf"
        tv = (float(ev_lo[j_lo].real), float(crossing.real))
        cand = rec.eigenvalues[np.abs(rec.eigenvalues.imag) > imag_tol]
        near = cand[np.argmin(np.abs(cand.real))]
        imag = float(abs(near.imag))
    else:
        def nearest_real(ev):
            real = ev[np.abs(ev.imag) <= 1e-9 * np.maximum(1.0, np.abs(ev))].real
            return float(real[np.argmin(np.abs(real))])
        tv = (nearest_real(ev_lo), nearest_real(ev_hi))
        kind = "fold" if t_lo[-1] * t_hi[-1] < 0 else "branch_point"
        imag = None
    if not (tv[0] * tv[1] <= 0):
        return None
    value = float(X_ev[-1])
    return BifurcationEvent(
        event_kind=kind, param_name=prob.name, param_value=value,
        state=rec.state, test_values=tv, imag_pair=imag,
        params=prob.params_at(value), eigenvalues=rec.eigenvalues,
    )


def continue_equilibria(start, params: ParameterSet, free_param: str, range_,
                        settings: ContinuationSettings | None = None,
                        tangent: np.ndarray | None = None) -> Branch:
    """Follow a branch of equilibria in ``free_param`` across ``range_``.

    ``start`` is an :class:`EquilibriumRecord` (or state) that is an
    equilibrium at ``params``. Events are located by changes in the number
    of unstable real eigenvalues (branch points and folds, told apart by the
    sign of the parameter component of the tangent) or unstable complex pairs
    (Hopf), then refined by bisection in arclength.
    """
    settings = settings or ContinuationSettings()
    lo, hi = float(range_[0]), float(range_[1])
    if not lo < hi:
        raise ValueError("range must satisfy lo < hi")
    x0 = start.x if isinstance(start, EquilibriumRecord) else np.asarray(start, dtype=float)
    p0 = float(getattr(params, free_param)) if free_param in FREE_PARAMETERS else None
    prob = _Problem(params, free_param, _class_scale(x0))
    tracer = _Tracer(prob, settings)
    X = np.append(x0 / prob.scale, p0)
    X, _ = _correct(prob, X, None, tracer.tol, 3 * settings.max_newton, fixed_param=p0)
    if X is None:
        raise ConvergenceError("starting point is not an equilibrium within tolerance")
    if not lo <= p0 <= hi:
        raise ValueError(f"start value {free_param} = {p0} outside range [{lo}, {hi}]")

    DG = prob.DG(X)
    if tangent is None:
        e_p = np.zeros(N_STATE + 1)
        e_p[-1] = settings.direction
        t = _tangent(DG, e_p)
    else:
        t = np.append(np.asarray(tangent[:-1]) / prob.scale, tangent[-1])
        t /= np.linalg.norm(t)
        t = _tangent(DG, t)

    rec = tracer.record(X)
    points, values, tangents = [rec], [p0], [t]
    counts = _unstable_counts(rec.eigenvalues)
    events = []
    h = settings.initial_step
    termination = "max_points"

    while len(points) < settings.max_points:
        X_new, iters = _correct(prob, X + h * t, t, tracer.tol, settings.max_newton)
        if X_new is None:
            h *= 0.5
            if h < settings.min_step:
                raise NumericalError(
                    f"continuation step failed at {free_param} = {X[-1]:.8g} (step below {settings.min_step:g})")
            continue
        p_new = float(X_new[-1])
        last = p_new > hi or p_new < lo
        if last:
            # land exactly on the range boundary
            termination = "range_exit"
            bound = hi if p_new > hi else lo
            frac = (bound - X[-1]) / (X_new[-1] - X[-1])
            X_new, _ = _correct(prob, X + frac * (X_new - X), None, tracer.tol,
                                3 * settings.max_newton, fixed_param=bound)
            if X_new is None:
                break
            p_new = bound
        t_new = _tangent(prob.DG(X_new), t)

        if settings.stop_when_infeasible and not _feasible(prob.state(X_new)):
            termination = "left_feasible_region"
            break

        rec_new = tracer.record(X_new)
        counts_new = _unstable_counts(rec_new.eigenvalues)
        if settings.detect_events and sum(counts_new) != sum(counts):
            step = float(np.linalg.norm(X_new - X))
            X_lo, X_hi = tracer.refine(X, t, X_new, counts, step)
            ev = _make_event(tracer, X_lo, X_hi, t, t_new)
            if ev is not None:
                events.append(ev)
                # the refined point joins the branch so stability flips on it
                points.append(_record(np.asarray(ev.state), ev.params))
                values.append(ev.param_value)
                tangents.append(t)

        points.append(rec_new)
        values.append(p_new)
        tangents.append(t_new)
        X, t, counts = X_new, t_new, counts_new
        if last:
            break
        if iters <= 2:
            h = min(1.5 * h, settings.max_step)
        elif iters >= 5:
            h = max(0.5 * h, settings.min_step)

    return Branch(free_param=free_param, params=params, param_values=np.array(values),
                  points=points, events=events, termination=termination)


# -- branch switching ----------------------------------------------------------------

def _null_spaces(A, rtol=1e-7):
    U, s, Vt = np.linalg.svd(A)
    k = int(np.sum(s <= rtol * s[0]))
    if k == 0:
        return np.zeros((A.shape[1], 0)), np.zeros((A.shape[0], 0))
    return Vt[-k:].T, U[:, -k:]


def branch_directions(event: BifurcationEvent, n_starts: int = 24, seed: int = 0):
    """Tangent directions of all branches crossing at a branch point.

    Solves the algebraic branching equation: with right null vectors
    ``phi_i`` and left null vectors ``psi_k`` of the Jacobian, and ``v0`` the
    particular solution of ``J v0 = -G_p``, a branch tangent is
    ``(sum c_i phi_i + tau v0, tau)`` where ``(c, tau)`` solves the quadratic
    system ``psi_k . D2G[(u, tau), (u, tau)] = 0``. Returns unit tangents in
    unscaled ``(x, p)`` coordinates, excluding the branch being traversed.
    """
    params, name = event.params, event.param_name
    x0 = np.asarray(event.state, dtype=float)
    p0 = event.param_value
    prob = _Problem(params, name, _class_scale(x0))
    X0 = np.append(x0 / prob.scale, p0)
    DG = prob.DG(X0)
    Jz, Gp = DG[:, :-1], DG[:, -1]
    phi, psi = _null_spaces(Jz)
    k = phi.shape[1]
    if k == 0:
        raise NumericalError("no null space at the branch point; refine the event first")
    v0 = np.linalg.lstsq(Jz, -Gp, rcond=None)[0]
    v0 -= phi @ (phi.T @ v0)

    def direction(y):
        c, tau = y[:k], y[k]
        return np.append(phi @ c + tau * v0, tau)

    # coefficient matrices of the quadratic forms by polarisation
    eps = 1e-4
    basis = np.eye(k + 1)

    def d2(D):
        return (prob.G(X0 + eps * D) - 2 * prob.G(X0) + prob.G(X0 - eps * D)) / eps**2

    H = np.zeros((k, k + 1, k + 1))
    diag = [psi.T @ d2(direction(basis[i])) for i in range(k + 1)]
    for i in range(k + 1):
        H[:, i, i] = diag[i]
        for j in range(i + 1, k + 1):
            both = psi.T @ d2(direction(basis[i] + basis[j]))
            H[:, i, j] = H[:, j, i] = 0.5 * (both - diag[i] - diag[j])
    H /= np.max(np.abs(H), axis=(1, 2), keepdims=True)

    def system(y):
        return np.append([y @ H[m] @ y for m in range(k)], y @ y - 1.0)

    rng = np.random.default_rng(seed)
    found = []
    for _ in range(n_starts):
        y0 = rng.normal(size=k + 1)
        y0 /= np.linalg.norm(y0)
        y, info, ier, _ = fsolve(system, y0, full_output=True, xtol=1e-13)
        if ier != 1 or np.max(np.abs(system(y))) > 1e-8:
            continue
        y /= np.linalg.norm(y)
        if any(min(np.linalg.norm(y - f), np.linalg.norm(y + f)) < 1e-6 for f in found):
            continue
        found.append(y)

    tangents = []
    for y in found:
        D = direction(y)
        D_unscaled = np.append(D[:-1] * prob.scale, D[-1])
        # drop the branch being traversed: no null-space component
        if np.linalg.norm(y[:k]) < 1e-6 * max(abs(y[k]), 1e-300):
            continue
        tangents.append(D_unscaled / np.linalg.norm(D_unscaled))
    return tangents


def switch_branch(event: BifurcationEvent, step: float = 1e-2,
                  settings: ContinuationSettings | None = None, feasible_only: bool = True):
    """Points just off a branch point on every emanating branch.

    Returns a list of ``(EquilibriumRecord, ParameterSet, tangent)`` with the
    tangent oriented away from the branch point; by default only branch
    halves that enter the nonnegative orthant are kept.
    """
    settings = settings or ContinuationSettings()
    x0 = np.asarray(event.state, dtype=float)
    out = []
    for T in branch_directions(event):
        for sign in (1.0, -1.0):
            D = sign * T
            prob = _Problem(event.params, event.param_name, _class_scale(x0))
            X0 = np.append(x0 / prob.scale, event.param_value)
            Dz = np.append(D[:-1] / prob.scale, D[-1])
            Dz /= np.linalg.norm(Dz)
            tol = settings.newton_rtol * event.params.lambda_N
            X, _ = _correct(prob, X0 + step * Dz, Dz, tol, 4 * settings.max_newton)
            if X is None:
                continue
            x = prob.state(X)
            if feasible_only and not _feasible(x):
                continue
            prm = prob.params_at(X[-1])
            rec = _record(x, prm)
            if rec.kind == "disease_free":
                continue
            out.append((rec, prm, D))
    return out

"""Periodic orbits by orthogonal collocation, and their continuation.

An orbit is represented on ``N`` mesh intervals of normalised time
``tau in [0, 1]`` with a degree-``m`` Lagrange polynomial per interval
(equally spaced nodes, Gauss-Legendre collocation points). States are scaled
componentwise; the period is the extra unknown ``T`` and, during
continuation, so is the free parameter. An integral phase condition anchors
the orbit against the previous solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import interp1d
from scipy.signal import find_peaks
from scipy.sparse.linalg import splu

from ..errors import ConvergenceError, NumericalError
from ..model import N_STATE, ParameterSet, jacobian, parameter_derivative, vector_field
from .continuation import FREE_PARAMETERS, BifurcationEvent, ContinuationSettings, _scale_for

_n = N_STATE


@dataclass
class PeriodicOrbit:
    mesh: np.ndarray            # normalised times of the stored points, in [0, 1]
    states: np.ndarray          # shape (len(mesh), 14), unscaled
    period: float
    param_name: str
    param_value: float
    amplitude: float            # peak-to-trough of I_tot over the stored points
    floquet: np.ndarray         # multipliers sorted by modulus, largest first
    residual: float = 0.0       # max collocation residual (scaled, per unit tau)
    params: ParameterSet = field(repr=False, default=None)

    @property
    def trivial_multiplier(self) -> complex:
        return complex(self.floquet[np.argmin(np.abs(self.floquet - 1.0))])

    @property
    def nontrivial_multipliers(self) -> np.ndarray:
        k = int(np.argmin(np.abs(self.floquet - 1.0)))
        return np.delete(self.floquet, k)

    @property
    def stable(self) -> bool:
        return bool(np.all(np.abs(self.nontrivial_multipliers) < 1.0))

    @property
    def times(self) -> np.ndarray:
        return self.mesh * self.period

    def column(self, name: str) -> np.ndarray:
        s = self.states
        if name == "I_tot":
            return s[:, 1] + s[:, 2] + s[:, 7] + s[:, 8]
        if name == "I_sec":
            return s[:, 7] + s[:, 8]
        if name == "N":
            return s[:, :10].sum(axis=1)
        if name == "M":
            return s[:, 10:].sum(axis=1)
        from ..model import STATE_NAMES
        return s[:, STATE_NAMES.index(name)]

    def min_max(self, name: str = "I_tot"):
        c = self.column(name)
        return float(c.min()), float(c.max())


@dataclass
class OrbitBranch:
    param_name: str
    orbits: list
    termination: str
    events: list = field(default_factory=list)   # (kind, param_value) where stability changes

    def __len__(self):
        return len(self.orbits)

    @property
    def param_values(self):
        return np.array([o.param_value for o in self.orbits])


class _Collocation:
    def __init__(self, intervals: int, degree: int, params: ParameterSet, name: str | None,
                 scale: np.ndarray, period_scale: float):
        self.N, self.m = intervals, degree
        self.P = intervals * degree + 1
        self.base = params
        self.name = name
        self.label = name
        self.scale = scale
        self.T_ref = period_scale
        self.h = np.full(intervals, 1.0 / intervals)
        zeta, w = np.polynomial.legendre.leggauss(degree)
        self.zeta = 0.5 * (zeta + 1.0)
        self.w = 0.5 * w
        nodes = np.linspace(0.0, 1.0, degree + 1)
        self.L = np.zeros((degree, degree + 1))
        self.D = np.zeros((degree, degree + 1))
        for i in range(degree + 1):
            others = np.delete(nodes, i)
            c = np.poly(others) / np.prod(nodes[i] - others)
            self.L[:, i] = np.polyval(c, self.zeta)
            self.D[:, i] = np.polyval(np.polyder(c), self.zeta)
        self.block_index = np.arange(intervals)[:, None] * degree + np.arange(degree + 1)[None, :]
        self.size = self.P * _n + 2

    @property
    def mesh(self) -> np.ndarray:
        edges = np.concatenate([[0.0], np.cumsum(self.h)])
        frac = np.arange(self.m) / self.m
        pts = (edges[:-1, None] + self.h[:, None] * frac[None, :]).ravel()
        return np.append(pts, 1.0)

    def params_at(self, p):
        if self.name is None:
            return self.base
        return self.base.replace(**{self.name: float(p)})

    def unpack(self, X):
        return X[:-2].reshape(self.P, _n), X[-2], X[-1]

    def at_gauss(self, U):
        """Values and tau-derivatives at the collocation points, shape (N, m, n)."""
        blocks = U[self.block_index]
        vals = np.einsum("ki,jin->jkn", self.L, blocks)
        ders = np.einsum("ki,jin->jkn", self.D, blocks) / self.h[:, None, None]
        return vals, ders

    def _field(self, vals, p):
        x = (vals.reshape(-1, _n) * self.scale).T
        prm = self.params_at(p)
        return (vector_field(x, prm).T / self.scale), x, prm

    def residual(self, X, ref_ders, X_prev=None, t_prev=None, step=0.0, weights=None):
        U, Ts, p = self.unpack(X)
        T = Ts * self.T_ref
        vals, ders = self.at_gauss(U)
        F, _, _ = self._field(vals, p)
        col = ders.reshape(-1, _n) - T * F
        per = U[-1] - U[0]
        phase = np.sum(self.w[None, :, None] * self.h[:, None, None] * vals * ref_ders)
        out = [col.ravel(), per, [phase]]
        if t_prev is not None:
            out.append([np.sum(weights * (X - X_prev) * t_prev) - step])
        return np.concatenate(out)

    def jacobian(self, X, ref_ders, with_param=True):
        """Sparse Jacobian of the collocation, periodicity and phase rows."""
        N, m, n = self.N, self.m, _n
        U, Ts, p = self.unpack(X)
        T = Ts * self.T_ref
        vals, _ = self.at_gauss(U)
        F, x, prm = self._field(vals, p)
        A = jacobian(x, prm)                                  # (n, n, N*m)
        A = A * self.scale[None, :, None] / self.scale[:, None, None]
        A = np.moveaxis(A, 2, 0).reshape(N, m, n, n)

        # blocks (j, k, i): D[k,i]/h_j I - T L[k,i] A_jk
        eye = np.eye(n)
        blk = (self.D[None, :, :, None, None] / self.h[:, None, None, None, None] * eye
               - T * self.L[None, :, :, None, None] * A[:, :, None, :, :])
        j, k, i, a, b = np.indices((N, m, m + 1, n, n))
        rows = (j * m + k) * n + a
        cols = (j * m + i) * n + b
        data = [blk.ravel()]
        R, C = [rows.ravel()], [cols.ravel()]

        n_col = N * m * n
        col_rows = np.arange(n_col)
        # d/dTs
        R.append(col_rows); C.append(np.full(n_col, self.P * n)); data.append((-self.T_ref * F).ravel())
        if with_param and self.name is not None:
            Fp = parameter_derivative(x, prm, self.name).T / self.scale
            R.append(col_rows); C.append(np.full(n_col, self.P * n + 1)); data.append((-T * Fp).ravel())
        # periodicity
        pr = n_col + np.arange(n)
        R += [pr, pr]; C += [(self.P - 1) * n + np.arange(n), np.arange(n)]
        data += [np.ones(n), -np.ones(n)]
        # phase
        coef = (self.w[None, :, None, None] * self.h[:, None, None, None]
                * self.L[None, :, :, None] * ref_ders[:, :, None, :])  # (N, m, m+1, n)
        jj, kk, ii, bb = np.indices(coef.shape)
        R.append(np.full(coef.size, n_col + n)); C.append(((jj * m + ii) * n + bb).ravel())
        data.append(coef.ravel())
        shape = (n_col + n + 1, self.size)
        return sp.coo_matrix((np.concatenate(data), (np.concatenate(R), np.concatenate(C))),
                             shape=shape).tocsr()

    def monodromy(self, X) -> np.ndarray:
        """Monodromy matrix by condensing the linearised collocation equations."""
        N, m, n = self.N, self.m, _n
        U, Ts, p = self.unpack(X)
        T = Ts * self.T_ref
        vals, _ = self.at_gauss(U)
        _, x, prm = self._field(vals, p)
        A = jacobian(x, prm) * self.scale[None, :, None] / self.scale[:, None, None]
        A = np.moveaxis(A, 2, 0).reshape(N, m, n, n)
        Mon = np.eye(n)
        eye = np.eye(n)
        for j in range(N):
            B = (self.D[:, :, None, None] / self.h[j] * eye
                 - T * self.L[:, :, None, None] * A[j][:, None, :, :])   # (m, m+1, n, n)
            lhs = B[:, 1:].transpose(0, 2, 1, 3).reshape(m * n, m * n)
            rhs = -B[:, 0].reshape(m * n, n)
            sol = np.linalg.solve(lhs, rhs)
            Mon = sol[-n:] @ Mon
        return Mon


def _newton(col: _Collocation, X0, ref_ders, tol, max_iter, X_prev=None, t_prev=None,
            step=0.0, weights=None):
    X = X0.copy()
    fix_param = t_prev is None
    for it in range(max_iter + 1):
        r = col.residual(X, ref_ders, X_prev, t_prev, step, weights)
        J = col.jacobian(X, ref_ders, with_param=not fix_param)
        if t_prev is not None:
            J = sp.vstack([J, sp.csr_matrix(weights * t_prev)])
            free = slice(None)
        else:
            free = slice(0, col.size - 1)
            J = J[:, free]
        try:
            dX = splu(J.tocsc()).solve(-r)
        except RuntimeError as exc:
            raise NumericalError(f"singular collocation system: {exc}") from exc
        X = X.copy()
        X[free] += dX
        if np.max(np.abs(dX)) < tol:
            return X, it + 1
        if not np.all(np.isfinite(X)):
            break
    raise ConvergenceError(f"collocation Newton did not converge in {max_iter} iterations")


def _build_orbit(col: _Collocation, X) -> PeriodicOrbit:
    U, Ts, p = col.unpack(X)
    states = U * col.scale
    mults = np.linalg.eigvals(col.monodromy(X))
    mults = mults[np.argsort(-np.abs(mults))]
    Itot = states[:, 1] + states[:, 2] + states[:, 7] + states[:, 8]
    if col.name is not None:
        name, value = col.name, float(p)
    else:
        name, value = col.label, float(getattr(col.base, col.label)) if col.label else float("nan")
    res = col.residual(X, np.zeros((col.N, col.m, _n)))[: col.N * col.m * _n]
    return PeriodicOrbit(mesh=col.mesh, states=states, period=float(Ts * col.T_ref),
                         param_name=name or "", param_value=value,
                         amplitude=float(Itot.max() - Itot.min()), floquet=mults,
                         residual=float(np.max(np.abs(res))), params=col.params_at(p))


def _weights(col: _Collocation):
    w = np.full(col.size, 1.0 / col.P)
    w[-2:] = 1.0
    return w


def continue_periodic_orbits(hopf: BifurcationEvent, params: ParameterSet | None = None,
                             settings: ContinuationSettings | None = None,
                             param_range=None, max_orbits: int = 400,
                             first_step: float = 1e-2) -> OrbitBranch:
    """Follow the family of periodic orbits born at a Hopf point.

    ``params`` supplies the fixed parameters (default: those stored on the
    event). The family is followed in ``hopf.param_name`` until it leaves
    ``param_range`` (default: from the Hopf value to 1.5 times it), the step
    size underflows, or ``max_orbits`` orbits are computed. The first orbit
    comes from the linear predictor of radius ``first_step`` in the plane of
    the critical eigenvector, with period ``2 pi / omega``.
    """
    settings = settings or ContinuationSettings()
    if hopf.event_kind != "hopf":
        raise ValueError("continuation of periodic orbits needs a hopf event")
    name = hopf.param_name
    if name not in FREE_PARAMETERS:
        raise ValueError(f"unsupported free parameter {name!r}")
    p0 = hopf.param_value
    base = (params if params is not None else hopf.params).replace(**{name: p0})
    lo, hi = param_range if param_range is not None else (min(p0, 0.0), 1.5 * p0)

    x0 = np.asarray(hopf.state, dtype=float)
    scale = _scale_for(x0)
    A = jacobian(x0, base) * scale[None, :] / scale[:, None]
    ev, vec = np.linalg.eig(A)
    cand = np.where(ev.imag > 0)[0]
    k = cand[np.argmin(np.abs(ev[cand].real))]
    omega = float(ev[k].imag)
    v = vec[:, k]
    T0 = 2 * np.pi / omega

    col = _Collocation(settings.intervals, settings.degree, base, name, scale, T0)
    tau = col.mesh
    ring = (np.outer(np.cos(2 * np.pi * tau), v.real) - np.outer(np.sin(2 * np.pi * tau), v.imag))
    weights = _weights(col)
    X = np.concatenate([np.tile(x0 / scale, col.P), [1.0, p0]])
    t = np.concatenate([ring.ravel(), [0.0, 0.0]])
    t /= np.sqrt(np.sum(weights * t * t))
    ref = col.at_gauss(ring)[1]

    tol = settings.orbit_tol
    h = first_step
    orbits, events = [], []
    termination = "max_orbits"
    prev_stable = None
    while len(orbits) < max_orbits:
        try:
            X_new, iters = _newton(col, X + h * t, ref, tol, settings.max_newton,
                                   X_prev=X, t_prev=t, step=h, weights=weights)
        except (ConvergenceError, NumericalError):
            h *= 0.5
            if h < settings.min_step:
                termination = "step_underflow"
                break
            continue
        J = col.jacobian(X_new, col.at_gauss(X_new[:-2].reshape(col.P, _n))[1])
        J = sp.vstack([J, sp.csr_matrix(weights * t)]).tocsc()
        rhs = np.zeros(col.size)
        rhs[-1] = 1.0
        t_new = splu(J).solve(rhs)
        t_new /= np.sqrt(np.sum(weights * t_new * t_new))
        if np.sum(weights * t_new * t) < 0:
            t_new = -t_new

        p_new = X_new[-1]
        if p_new > hi or p_new < lo:
            bound = hi if p_new > hi else lo
            frac = (bound - X[-1]) / (p_new - X[-1])
            guess = X + frac * (X_new - X)
            guess[-1] = bound
            try:
                X_new, _ = _newton(col, guess, col.at_gauss(X[:-2].reshape(col.P, _n))[1],
                                   tol, 3 * settings.max_newton)
            except (ConvergenceError, NumericalError):
                termination = "range_exit"
                break
            orbits.append(_build_orbit(col, X_new))
            termination = "range_exit"
            break

        orbit = _build_orbit(col, X_new)
        if prev_stable is not None and orbit.stable != prev_stable:
            events.append(("stability_change", orbit.param_value))
        prev_stable = orbit.stable
        orbits.append(orbit)
        ref = col.at_gauss(X_new[:-2].reshape(col.P, _n))[1]
        X, t = X_new, t_new
        if iters <= 3:
            h = min(1.5 * h, settings.max_step)
        elif iters >= 6:
            h *= 0.5
    return OrbitBranch(param_name=name, orbits=orbits, termination=termination, events=events)


def correct_orbit(states: np.ndarray, period: float, params: ParameterSet,
                  settings: ContinuationSettings | None = None, label: str | None = None) -> PeriodicOrbit:
    """Newton-correct a closed-curve guess into a periodic orbit at fixed parameters.

    ``states`` holds the guess on the collocation mesh for the settings'
    ``intervals`` and ``degree`` (``intervals * degree + 1`` rows, first row
    equal to the last). ``label`` names the parameter reported on the orbit.
    """
    settings = settings or ContinuationSettings()
    states = np.asarray(states, dtype=float)
    scale = _scale_for(states.mean(axis=0))
    col = _Collocation(settings.intervals, settings.degree, params, None, scale, period)
    col.label = label
    if states.shape != (col.P, _n):
        raise ValueError(f"guess must have shape ({col.P}, {_n}), got {states.shape}")
    U = states / scale
    ref = col.at_gauss(U)[1]
    X = np.concatenate([U.ravel(), [1.0, 0.0]])
    X, _ = _newton(col, X, ref, settings.orbit_tol, 4 * settings.max_newton)
    return _build_orbit(col, X)


def orbit_at(family: OrbitBranch, value: float, settings: ContinuationSettings | None = None) -> PeriodicOrbit:
    """Orbit of a computed family at an exact parameter value.

    Interpolates between the two bracketing family members and corrects.
    """
    settings = settings or ContinuationSettings()
    vals = family.param_values
    order = np.argsort(vals)
    vals_sorted = vals[order]
    if not vals_sorted[0] <= value <= vals_sorted[-1]:
        raise ValueError(f"{value} outside the family range [{vals_sorted[0]}, {vals_sorted[-1]}]")
    k = int(np.clip(np.searchsorted(vals_sorted, value), 1, len(vals) - 1))
    a, b = family.orbits[order[k - 1]], family.orbits[order[k]]
    w = 0.0 if b.param_value == a.param_value else (value - a.param_value) / (b.param_value - a.param_value)
    states = (1 - w) * a.states + w * b.states
    period = (1 - w) * a.period + w * b.period
    params = a.params.replace(**{family.param_name: value})
    return correct_orbit(states, period, params, settings, label=family.param_name)


def orbit_from_trajectory(traj, params: ParameterSet, settings: ContinuationSettings | None = None,
                          column: str = "I1") -> PeriodicOrbit:
    """Correct one period of a simulated oscillation into a periodic orbit.

    Uses the last two peaks of ``column`` in the trajectory as the initial
    period and profile; the parameters stay fixed. The default column is
    strain specific because on swap-symmetric orbits totals such as I_tot
    repeat every half period.
    """
    settings = settings or ContinuationSettings()
    y = traj.column(column)
    tail = y[len(y) // 2:]
    # ignore ripples: a peak must stand out by half the late-time range
    peaks, _ = find_peaks(y, prominence=0.5 * (tail.max() - tail.min()))
    if len(peaks) < 2:
        raise NumericalError("trajectory does not contain two peaks to seed an orbit")
    a, b = peaks[-2], peaks[-1]
    t0, t1 = traj.times[a], traj.times[b]
    period = t1 - t0
    mesh = _Collocation(settings.intervals, settings.degree, params, None, np.ones(_n), period).mesh
    interp = interp1d(traj.times[a:b + 1], traj.states[a:b + 1], axis=0, kind="cubic")
    states = interp(t0 + mesh * period)
    states[-1] = states[0]
    return correct_orbit(states, period, params, settings)

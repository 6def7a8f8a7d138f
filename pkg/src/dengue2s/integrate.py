"""Adaptive Dormand-Prince 5(4) time integration with dense output.

The solver is written out here rather than borrowed so that the positivity
clamp can be applied to every accepted step and step statistics are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .analysis import STABILITY_MARGIN, EquilibriumRecord, refine_equilibrium, residual_norm
from .errors import (
    ConvergenceError,
    NumericalError,
    SettleTimeout,
    SingularJacobianError,
    StepSizeUnderflow,
)
from .model import (
    N_STATE,
    STRAIN1_ONLY,
    STRAIN2_ONLY,
    SWAP_INDEX,
    InvalidStateError,
    ParameterSet,
    State,
    as_state_array,
    clamp_state,
    jacobian,
    make_rhs,
    totals,
)

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
_PI_ALPHA = 0.7 / 5
_PI_BETA = 0.4 / 5
# continuous extension (Hairer, Norsett & Wanner, contd5)
_D = np.array([
    -12715105075 / 11282082432, 0.0, 87487479700 / 32700410799,
    -10690763975 / 1880347072, 701980252875 / 199316789632,
    -1453857185 / 822651844, 69997945 / 29380423,
])


@dataclass
class SolverSettings:
    rel_tol: float = 1e-8
    abs_tol: float | None = None          # default 1e-10 * lambda_N / mu
    max_step: float = np.inf
    dense_output_interval: float | None = None
    min_step: float = 1e-10
    max_steps: int = 5_000_000
    clamp_rtol: float = 1e-12

    def __post_init__(self):
        if self.rel_tol <= 0 or (self.abs_tol is not None and self.abs_tol <= 0):
            raise ValueError("tolerances must be positive")
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")
        if self.dense_output_interval is not None and self.dense_output_interval <= 0:
            raise ValueError("dense_output_interval must be positive")

    def resolved_abs_tol(self, params: ParameterSet) -> float:
        if self.abs_tol is not None:
            return self.abs_tol
        return 1e-10 * params.human_capacity


@dataclass
class Event:
    """Zero of ``func(t, x)`` to be located along the trajectory."""

    func: Callable[[float, np.ndarray], float]
    terminal: bool = False
    direction: int = 0


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray                    # shape (len(times), 14)
    meta: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    def state(self, i: int = -1) -> State:
        return State.from_array(self.states[i])

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def column(self, name: str) -> np.ndarray:
        from .model import STATE_NAMES
        s = self.states
        if name == "N":
            return s[:, :10].sum(axis=1)
        if name == "M":
            return s[:, 10:].sum(axis=1)
        if name == "I_tot":
            return s[:, 1] + s[:, 2] + s[:, 7] + s[:, 8]
        if name == "I_sec":
            return s[:, 7] + s[:, 8]
        return s[:, STATE_NAMES.index(name)]


def _dense_eval(theta, y0, rc):
    r2, r3, r4, r5 = rc
    return y0 + theta * (r2 + (1 - theta) * (r3 + theta * (r4 + (1 - theta) * r5)))


def _initial_step(f, t0, y0, f0, direction, order, rtol, atol):
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = f(y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / (order + 1))
    return min(100 * h0, h1)


def integrate(x0, params: ParameterSet, t_span: Sequence[float],
              settings: SolverSettings | None = None,
              events: Sequence[Event] = ()) -> Trajectory:
    """Integrate the model from ``x0`` over ``t_span = (t0, t1)``.

    Output is either every accepted step or, with
    ``settings.dense_output_interval``, a uniform sample from the
    continuous extension (always including both endpoints).
    """
    settings = settings or SolverSettings()
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError(f"t_span must be increasing, got ({t0}, {t1})")
    y = clamp_state(x0, settings.clamp_rtol)
    rtol = settings.rel_tol
    atol = settings.resolved_abs_tol(params)

    nfev = 0
    rhs = make_rhs(params)

    def f(x):
        nonlocal nfev
        nfev += 1
        return rhs(x)

    interval = settings.dense_output_interval
    if interval is not None:
        n_out = int(np.floor((t1 - t0) / interval + 1e-9))
        out_times = t0 + interval * np.arange(n_out + 1)
        if t1 - out_times[-1] > 1e-9 * interval:
            out_times = np.append(out_times, t1)
        else:
            out_times[-1] = t1
        out_states = np.empty((len(out_times), 14))
        out_states[0] = y
        next_out = 1
    else:
        times_list = [t0]
        states_list = [y.copy()]

    ev_prev = [e.func(t0, y) for e in events]
    found_events = []

    t = t0
    k1 = f(y)
    h = min(_initial_step(f, t0, y, k1, 1.0, 5, rtol, atol), settings.max_step, t1 - t0)
    steps = rejects = 0
    K = np.empty((7, 14))
    terminated = False
    err_prev = 1e-4
    last_rejected = False

    while t < t1 and not terminated:
        if steps >= settings.max_steps:
            raise NumericalError(f"maximum number of steps ({settings.max_steps}) reached at t = {t:.6g}")
        if h < settings.min_step:
            raise StepSizeUnderflow(
                f"step size {h:.3e} fell below {settings.min_step:.1e} at t = {t:.6g}; the problem may be stiff here")
        if t + h > t1:
            h = t1 - t
        K[0] = k1
        try:
            for s in range(1, 7):
                ys = y + h * (np.dot(_A[s], K[:s]) if s else 0.0)
                K[s] = f(ys)
        except InvalidStateError:
            h *= 0.5
            rejects += 1
            continue
        y_new = ys  # stage 7 argument equals the 5th-order solution (FSAL)
        err_vec = h * np.dot(_E, K)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))
        if not np.isfinite(err) or err > 1.0:
            rejects += 1
            fac = 0.2 if not np.isfinite(err) else max(0.2, 0.9 * err ** -0.2)
            h *= fac
            last_rejected = True
            continue

        try:
            y_clamped = clamp_state(y_new, settings.clamp_rtol)
        except InvalidStateError:
            # overshot into clearly negative values: retry with a shorter step
            h *= 0.5
            rejects += 1
            last_rejected = True
            continue

        # accepted
        steps += 1
        t_new = t + h
        k_last = K[6]
        if not np.array_equal(y_clamped, y_new):
            y_new = y_clamped
            k_last = f(y_new)
        dy = y_new - y
        rc = (dy, h * K[0] - dy, dy - h * k_last - (h * K[0] - dy), h * np.dot(_D, K))

        t_stop = t_new
        if events:
            for i, e in enumerate(events):
                g_new = e.func(t_new, y_new)
                g_old = ev_prev[i]
                crossed = g_old * g_new < 0 or (g_new == 0 and g_old != 0)
                if crossed and (e.direction == 0 or np.sign(g_new - g_old) == e.direction):
                    def g_theta(th, e=e):
                        return e.func(t + th * h, _dense_eval(th, y, rc))
                    th = brentq(g_theta, 0.0, 1.0, xtol=1e-14) if g_new != 0 else 1.0
                    te = t + th * h
                    found_events.append((te, i, _dense_eval(th, y, rc)))
                    if e.terminal:
                        terminated = True
                        t_stop = min(t_stop, te)
                ev_prev[i] = g_new

        if interval is not None:
            while next_out < len(out_times) and out_times[next_out] <= t_stop + 1e-12 * max(1.0, abs(t_stop)):
                th = (out_times[next_out] - t) / h
                out_states[next_out] = y_new if th >= 1.0 else _dense_eval(th, y, rc)
                next_out += 1
        else:
            if terminated and t_stop < t_new:
                th = (t_stop - t) / h
                times_list.append(t_stop)
                states_list.append(_dense_eval(th, y, rc))
            else:
                times_list.append(t_new)
                states_list.append(y_new.copy())

        t, y, k1 = t_new, y_new, k_last
        # PI step-size control (Gustafsson); no growth right after a rejection
        err = max(err, 1e-10)
        fac = 0.9 * err ** -_PI_ALPHA * err_prev ** _PI_BETA
        fac = min(1.0 if last_rejected else 10.0, max(0.2, fac))
        err_prev = err
        last_rejected = False
        h = min(h * fac, settings.max_step)

    if interval is not None:
        times, states = out_times[:next_out], out_states[:next_out]
    else:
        times, states = np.array(times_list), np.array(states_list)
    meta = {"steps": steps, "rejects": rejects, "rhs_evaluations": nfev,
            "rel_tol": rtol, "abs_tol": atol, "terminated_by_event": terminated}
    return Trajectory(times=times, states=states, meta=meta, events=found_events)


def detect_oscillation(traj: Trajectory, rel_amplitude: float = 1e-3) -> bool:
    """Sustained oscillation in I_tot over the second half of the trajectory."""
    t = traj.times
    keep = t >= t[0] + 0.5 * (t[-1] - t[0])
    y = traj.column("I_tot")[keep]
    if len(y) < 5:
        return False
    peaks = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:])) + 1
    troughs = np.flatnonzero((y[1:-1] < y[:-2]) & (y[1:-1] <= y[2:])) + 1
    if len(peaks) < 2 or len(troughs) < 2:
        return False
    mean = max(np.mean(y), np.finfo(float).tiny)
    first = y[peaks[0]] - y[troughs[0]]
    last = y[peaks[-1]] - y[troughs[-1]]
    return abs(last) / mean > rel_amplitude and abs(last) > 0.5 * abs(first)


def invariant_basis(x0) -> np.ndarray:
    """Orthonormal basis of the smallest listed invariant subspace containing ``x0``.

    The candidates are the subspaces with strain 1 or strain 2 entirely
    absent and the subspace of swap-symmetric states.
    """
    x = as_state_array(x0)
    keep = np.arange(N_STATE)
    for absent in (STRAIN2_ONLY, STRAIN1_ONLY):
        if np.all(x[absent] == 0.0):
            keep = np.setdiff1d(keep, absent)
    Q = np.eye(N_STATE)[:, keep]
    if np.array_equal(x, x[SWAP_INDEX]):
        P = np.eye(N_STATE)[SWAP_INDEX]
        sym = 0.5 * (np.eye(N_STATE) + P) @ Q
        u, sv, _ = np.linalg.svd(sym, full_matrices=False)
        Q = u[:, sv > 0.5]
    return Q


def settle(x0, params: ParameterSet, tol: float | None = None, t_max: float = 2e5,
           chunk: float = 500.0, settings: SolverSettings | None = None) -> EquilibriumRecord:
    """Integrate until the vector field is small, then Newton-polish.

    ``tol`` bounds the max-norm of the vector field (per month) that counts as
    settled; default ``1e-6 * lambda_N``. A polished equilibrium that is not
    linearly stable is not an attractor (the run merely passed close to it),
    so integration continues. Stability is judged within the invariant
    subspace that ``x0`` lies in: a start with one strain entirely absent can
    only ever approach equilibria stable to perturbations inside that
    subspace. Raises :class:`SettleTimeout` if ``t_max`` is reached first.
    """
    tol = 1e-6 * params.lambda_N if tol is None else tol
    basis = invariant_basis(x0)

    def try_polish(x):
        try:
            rec = refine_equilibrium(x, params)
        except (ConvergenceError, SingularJacobianError):
            return None
        if rec.stable:
            return rec
        if basis.shape[1] < N_STATE:
            J = basis.T @ jacobian(rec.x, params) @ basis
            if np.max(np.linalg.eigvals(J).real) < -STABILITY_MARGIN:
                return rec
        return None

    x = clamp_state(x0)
    if residual_norm(x, params) < tol:
        rec = try_polish(x)
        if rec is not None:
            return rec
    t = 0.0
    pieces = []
    while t < t_max:
        span = min(chunk, t_max - t)
        traj = integrate(x, params, (t, t + span), settings)
        pieces.append(traj)
        x = traj.final
        t += span
        if residual_norm(x, params) < tol:
            rec = try_polish(x)
            if rec is not None:
                return rec
    times = np.concatenate([p.times[:-1] for p in pieces] + [pieces[-1].times[-1:]])
    states = np.concatenate([p.states[:-1] for p in pieces] + [pieces[-1].states[-1:]])
    full = Trajectory(times=times, states=states, meta={"t_max": t_max})
    osc = detect_oscillation(full)
    raise SettleTimeout(
        f"no stable equilibrium reached by t = {t_max:g} months"
        + (" (sustained oscillation detected)" if osc else ""),
        trajectory=full, oscillating=osc)


@dataclass
class BoundsReport:
    ok: bool
    max_N_ratio: float      # max N(t) / (lambda_N / mu) over the checked window
    max_M_ratio: float      # max M(t) / (lambda_M / kappa)
    violations: list        # (total, time, excess over the envelope relative to capacity)


def long_time_bounds_check(traj: Trajectory, params: ParameterSet, tol: float = 1e-6) -> BoundsReport:
    """Check the totals against their decaying upper envelopes.

    Since ``N' <= lambda_N - mu N`` and ``M' = lambda_M - kappa M``, any
    excess over the capacity decays at least exponentially:
    ``N(t) <= N* + max(N(t0) - N*, 0) exp(-mu (t - t0))`` and likewise for
    ``M``. The limsup bounds follow, and the envelope can be checked on a
    run of any length.
    """
    t = traj.times - traj.times[0]
    N, M = totals(traj.states.T)
    violations = []
    for name, tot, cap, rate in (("N", N, params.human_capacity, params.mu),
                                 ("M", M, params.vector_capacity, params.kappa)):
        envelope = cap + max(tot[0] - cap, 0.0) * np.exp(-rate * t)
        excess = (tot - envelope) / cap
        for i in np.flatnonzero(excess > tol)[:20]:
            violations.append((name, float(traj.times[i]), float(excess[i])))
    return BoundsReport(ok=not violations, max_N_ratio=float(N.max() / params.human_capacity),
                        max_M_ratio=float(M.max() / params.vector_capacity), violations=violations)

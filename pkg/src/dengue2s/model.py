"""State, parameters, vector field and Jacobian of the two-strain host-vector model.

All rates are per month. The state vector is always ordered::

    S, I1, I2, R1, R2, S1, S2, I12, I21, R, U, V1, V2, V12

Functions taking a state accept a :class:`State`, a length-14 sequence, or an
array of shape ``(14, ...)``; the trailing axes are treated as a batch so that
collocation and sampling code can evaluate many states at once.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

STATE_NAMES = (
    "S", "I1", "I2", "R1", "R2", "S1", "S2", "I12", "I21", "R",
    "U", "V1", "V2", "V12",
)
HUMAN = slice(0, 10)
VECTOR = slice(10, 14)
N_STATE = 14

# index of each component after relabelling strain 1 <-> strain 2
SWAP_INDEX = np.array([0, 2, 1, 4, 3, 6, 5, 8, 7, 9, 10, 12, 11, 13])

# components that vanish on the strain-1-only invariant subspace
STRAIN2_ONLY = np.array([2, 4, 6, 7, 8, 9, 12, 13])
STRAIN1_ONLY = SWAP_INDEX[STRAIN2_ONLY]

PARAMETER_NAMES = (
    "lambda_N", "lambda_M", "mu", "kappa", "alpha",
    "sigma", "beta", "gamma", "nu", "delta",
)


class InvalidStateError(ValueError):
    """Raised for states outside the model domain (empty populations, large negatives)."""


@dataclass(frozen=True)
class ParameterSet:
    """Model rates in monthly units.

    Defaults are the baseline values of the reference parameter table with
    the secondary infection rate at the ADE scenario ``sigma = 0.45``.
    """

    lambda_N: float = 12.8
    lambda_M: float = 1.0e5
    mu: float = 0.00128
    kappa: float = 1.0
    alpha: float = 0.39
    sigma: float = 0.45
    beta: float = 6.0
    gamma: float = 2.0
    nu: float = 0.111
    delta: float = 0.01

    def __post_init__(self):
        for name in PARAMETER_NAMES:
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"parameter {name} must be finite, got {value!r}")
            if value < 0:
                raise ValueError(f"parameter {name} must be nonnegative, got {value!r}")
        if self.mu <= 0:
            raise ValueError("parameter mu must be positive")
        if self.kappa <= 0:
            raise ValueError("parameter kappa must be positive")

    @property
    def gamma_bar(self) -> float:
        return self.gamma + self.mu

    @property
    def nu_bar(self) -> float:
        return self.nu + self.mu

    @property
    def delta_bar(self) -> float:
        return self.gamma + self.mu + self.delta

    @property
    def alpha_bar(self) -> float:
        return self.alpha + self.mu

    @property
    def human_capacity(self) -> float:
        """Disease-free human population ``lambda_N / mu``."""
        return self.lambda_N / self.mu

    @property
    def vector_capacity(self) -> float:
        """Equilibrium vector population ``lambda_M / kappa``."""
        return self.lambda_M / self.kappa

    def replace(self, **changes) -> "ParameterSet":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in PARAMETER_NAMES}

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(float(getattr(self, name)) for name in PARAMETER_NAMES)


class State(NamedTuple):
    """Compartment sizes; humans in persons, vectors in vectors."""

    S: float
    I1: float
    I2: float
    R1: float
    R2: float
    S1: float
    S2: float
    I12: float
    I21: float
    R: float
    U: float
    V1: float
    V2: float
    V12: float

    @classmethod
    def from_array(cls, x) -> "State":
        x = np.asarray(x, dtype=float)
        if x.shape != (N_STATE,):
            raise ValueError(f"expected 14 components, got shape {x.shape}")
        return cls(*(float(v) for v in x))

    def to_array(self) -> np.ndarray:
        return np.array(self, dtype=float)

    @property
    def N(self) -> float:
        return float(sum(self[:10]))

    @property
    def M(self) -> float:
        return float(sum(self[10:]))

    @property
    def I_tot(self) -> float:
        return self.I1 + self.I2 + self.I12 + self.I21

    @property
    def I_sec(self) -> float:
        return self.I12 + self.I21


def as_state_array(state) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    if x.shape[0] != N_STATE:
        raise ValueError(f"state must have 14 components along axis 0, got shape {x.shape}")
    return x


def totals(state) -> tuple[np.ndarray, np.ndarray]:
    """Human and vector totals ``(N, M)`` recomputed from the components."""
    x = as_state_array(state)
    return x[HUMAN].sum(axis=0), x[VECTOR].sum(axis=0)


def disease_free_state(params: ParameterSet) -> np.ndarray:
    x = np.zeros(N_STATE)
    x[0] = params.human_capacity
    x[10] = params.vector_capacity
    return x


def _check_totals(N, M):
    if np.any(N <= 0) or np.any(M <= 0):
        raise InvalidStateError("human and vector totals must be positive")


def vector_field(state, params: ParameterSet) -> np.ndarray:
    """Right-hand side of the model; forces use the current totals N and M."""
    x = as_state_array(state)
    S, I1, I2, R1, R2, S1, S2, I12, I21, R, U, V1, V2, V12 = x
    N = S + I1 + I2 + R1 + R2 + S1 + S2 + I12 + I21 + R
    M = U + V1 + V2 + V12
    _check_totals(N, M)
    p = params
    # per-capita forces on humans (from vectors) and on vectors (from humans)
    f1 = (V1 + V12) / M
    f2 = (V2 + V12) / M
    h1 = (I1 + I21) / N
    h2 = (I2 + I12) / N
    gb, nb, db = p.gamma_bar, p.nu_bar, p.delta_bar
    return np.array([
        p.lambda_N - p.alpha * S * (f1 + f2) - p.mu * S,
        p.alpha * S * f1 - gb * I1,
        p.alpha * S * f2 - gb * I2,
        p.gamma * I1 - nb * R1,
        p.gamma * I2 - nb * R2,
        p.nu * R1 - p.sigma * S1 * f2 - p.mu * S1,
        p.nu * R2 - p.sigma * S2 * f1 - p.mu * S2,
        p.sigma * S1 * f2 - db * I12,
        p.sigma * S2 * f1 - db * I21,
        p.gamma * (I12 + I21) - p.mu * R,
        p.lambda_M - p.beta * U * (h1 + h2) - p.kappa * U,
        p.beta * U * h1 - p.beta * V1 * h2 - p.kappa * V1,
        p.beta * U * h2 - p.beta * V2 * h1 - p.kappa * V2,
        p.beta * (V1 * h2 + V2 * h1) - p.kappa * V12,
    ])


def make_rhs(params: ParameterSet):
    """Fast single-state version of :func:`vector_field` for time stepping.

    Works on plain Python floats; the result agrees with ``vector_field`` to
    rounding.
    """
    LN, LM, mu, ka, al, si, be, ga, nu, de = params.as_tuple()
    gb, nb, db = ga + mu, nu + mu, ga + mu + de

    def rhs(x):
        S, I1, I2, R1, R2, S1, S2, I12, I21, R, U, V1, V2, V12 = x.tolist()
        N = S + I1 + I2 + R1 + R2 + S1 + S2 + I12 + I21 + R
        M = U + V1 + V2 + V12
        if N <= 0 or M <= 0:
            raise InvalidStateError("human and vector totals must be positive")
        f1 = (V1 + V12) / M
        f2 = (V2 + V12) / M
        h1 = be * (I1 + I21) / N
        h2 = be * (I2 + I12) / N
        a1 = al * S * f1
        a2 = al * S * f2
        s12 = si * S1 * f2
        s21 = si * S2 * f1
        return np.array([
            LN - a1 - a2 - mu * S, a1 - gb * I1, a2 - gb * I2,
            ga * I1 - nb * R1, ga * I2 - nb * R2,
            nu * R1 - s12 - mu * S1, nu * R2 - s21 - mu * S2,
            s12 - db * I12, s21 - db * I21, ga * (I12 + I21) - mu * R,
            LM - U * (h1 + h2) - ka * U, U * h1 - V1 * h2 - ka * V1,
            U * h2 - V2 * h1 - ka * V2, V1 * h2 + V2 * h1 - ka * V12,
        ])

    return rhs


def jacobian(state, params: ParameterSet) -> np.ndarray:
    """Analytic Jacobian ``d vector_field / d state``.

    Shape ``(14, 14)`` for a single state, ``(14, 14, *batch)`` for a batch.
    Written with the auxiliary quotient-derivative quantities ``A_*`` of the
    block form (derivatives of ``V/M`` and ``I/N`` through the dynamic totals).
    """
    x = as_state_array(state)
    S, I1, I2, R1, R2, S1, S2, I12, I21, R, U, V1, V2, V12 = x
    N = S + I1 + I2 + R1 + R2 + S1 + S2 + I12 + I21 + R
    M = U + V1 + V2 + V12
    _check_totals(N, M)
    p = params
    al, si, be, ka, mu, ga, nu = p.alpha, p.sigma, p.beta, p.kappa, p.mu, p.gamma, p.nu
    gb, nb, db = p.gamma_bar, p.nu_bar, p.delta_bar

    M2 = M * M
    N2 = N * N
    A_V = (V1 + V2 + 2 * V12) / M2
    A_1 = (V1 + V12) / M2
    A_2 = (V2 + V12) / M2
    A_U = (U - V12) / M2
    A_UV = (2 * U + V1 + V2) / M2
    A_U1 = (U + V1) / M2
    A_U2 = (U + V2) / M2
    Itot = I1 + I2 + I12 + I21
    A_I = Itot / N2
    A_N = (N - Itot) / N2
    A_I1 = be * (I1 + I21) / N2
    A_I2 = be * (I2 + I12) / N2
    A_UV1 = -U * A_I1 + V1 * A_I2
    A_UV2 = -U * A_I2 + V2 * A_I1
    A_VV = -V1 * A_I2 - V2 * A_I1

    J = np.zeros((N_STATE, N_STATE) + x.shape[1:])
    u, v1, v2, v12 = 10, 11, 12, 13

    # human block
    J[0, 0] = -al * M * A_V - mu
    J[0, u] = al * S * A_V
    J[0, v1] = -al * S * A_U
    J[0, v2] = -al * S * A_U
    J[0, v12] = -al * S * A_UV

    J[1, 0] = al * M * A_1
    J[1, 1] = -gb
    J[1, u] = -al * S * A_1
    J[1, v1] = al * S * A_U2
    J[1, v2] = -al * S * A_1
    J[1, v12] = al * S * A_U2

    J[2, 0] = al * M * A_2
    J[2, 2] = -gb
    J[2, u] = -al * S * A_2
    J[2, v1] = -al * S * A_2
    J[2, v2] = al * S * A_U1
    J[2, v12] = al * S * A_U1

    J[3, 1] = ga
    J[3, 3] = -nb
    J[4, 2] = ga
    J[4, 4] = -nb

    J[5, 3] = nu
    J[5, 5] = -si * M * A_2 - mu
    J[5, u] = si * S1 * A_2
    J[5, v1] = si * S1 * A_2
    J[5, v2] = -si * S1 * A_U1
    J[5, v12] = -si * S1 * A_U1

    J[6, 4] = nu
    J[6, 6] = -si * M * A_1 - mu
    J[6, u] = si * S2 * A_1
    J[6, v1] = -si * S2 * A_U2
    J[6, v2] = si * S2 * A_1
    J[6, v12] = -si * S2 * A_U2

    J[7, 5] = si * M * A_2
    J[7, 7] = -db
    J[7, u] = -si * S1 * A_2
    J[7, v1] = -si * S1 * A_2
    J[7, v2] = si * S1 * A_U1
    J[7, v12] = si * S1 * A_U1

    J[8, 6] = si * M * A_1
    J[8, 8] = -db
    J[8, u] = -si * S2 * A_1
    J[8, v1] = si * S2 * A_U2
    J[8, v2] = -si * S2 * A_1
    J[8, v12] = si * S2 * A_U2

    J[9, 7] = ga
    J[9, 8] = ga
    J[9, 9] = -mu

    # vector block: every human column picks up the d(1/N) term
    infectious_1 = (1, 8)   # I1, I21 feed strain-1 vector infection
    infectious_2 = (2, 7)   # I2, I12 feed strain-2 vector infection
    for j in range(10):
        J[u, j] = be * U * A_I
        J[v1, j] = A_UV1
        J[v2, j] = A_UV2
        J[v12, j] = A_VV
    for j in infectious_1:
        J[u, j] = -be * U * A_N
        J[v1, j] = J[v1, j] + be * U / N
        J[v2, j] = J[v2, j] - be * V2 / N
        J[v12, j] = J[v12, j] + be * V2 / N
    for j in infectious_2:
        J[u, j] = -be * U * A_N
        J[v1, j] = J[v1, j] - be * V1 / N
        J[v2, j] = J[v2, j] + be * U / N
        J[v12, j] = J[v12, j] + be * V1 / N

    J[u, u] = -be * N * A_I - ka
    J[v1, u] = N * A_I1
    J[v1, v1] = -N * A_I2 - ka
    J[v2, u] = N * A_I2
    J[v2, v2] = -N * A_I1 - ka
    J[v12, v1] = N * A_I2
    J[v12, v2] = N * A_I1
    J[v12, v12] = -ka * np.ones_like(M)
    return J


def parameter_derivative(state, params: ParameterSet, name: str) -> np.ndarray:
    """``d vector_field / d params.<name>``.

    The vector field is affine in every single rate, so a unit forward
    difference is the exact derivative.
    """
    if name not in PARAMETER_NAMES:
        raise KeyError(name)
    value = getattr(params, name)
    return vector_field(state, params.replace(**{name: value + 1.0})) - vector_field(state, params)


def strain_swap(state):
    """Relabel strain 1 <-> strain 2. Returns the same type it was given."""
    if isinstance(state, State):
        return State.from_array(state.to_array()[SWAP_INDEX])
    return as_state_array(state)[SWAP_INDEX]


def swap_derivative(deriv) -> np.ndarray:
    """Derivatives permute exactly like states."""
    return as_state_array(deriv)[SWAP_INDEX]


def clamp_state(state, rel_tol: float = 1e-12) -> np.ndarray:
    """Zero out round-off negatives; reject genuine ones.

    A negative component is set to 0 when its magnitude is below
    ``rel_tol * max(N, M)``; anything larger raises InvalidStateError.
    """
    x = np.array(as_state_array(state), dtype=float)
    N, M = totals(x)
    _check_totals(N, M)
    threshold = rel_tol * max(float(N), float(M))
    neg = x < 0
    if np.any(x[neg] < -threshold):
        worst = int(np.argmin(x))
        raise InvalidStateError(
            f"component {STATE_NAMES[worst]} = {x[worst]:.3e} is negative beyond the clamp threshold {threshold:.1e}"
        )
    x[neg] = 0.0
    return x

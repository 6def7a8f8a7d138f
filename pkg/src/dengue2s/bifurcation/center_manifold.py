"""Backward-bifurcation coefficients at the disease-free equilibrium.

At ``R0 = 1`` (``alpha = alpha*``) the DFE Jacobian has a zero eigenvalue
with a two-dimensional right null space spanned by the strain-1 and strain-2
directions, and likewise on the left. The free components ``w2, w3`` of the
right eigenvector and ``v2, v3`` of the left one are exposed as weights; the
sign of ``a`` decides between forward (a < 0) and backward (a > 0)
bifurcation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import N_STATE, ParameterSet, disease_free_state, jacobian, vector_field


@dataclass(frozen=True)
class CenterManifoldWeights:
    w2: float = 1.0
    w3: float = 1.0
    v2: float = 1.0
    v3: float = 1.0

    def __post_init__(self):
        for name in ("w2", "w3", "v2", "v3"):
            if not getattr(self, name) > 0:
                raise ValueError(f"weight {name} must be positive")


def critical_alpha(params: ParameterSet) -> float:
    """Primary infection rate at which ``R0 = 1``: ``kappa (gamma + mu) / beta``."""
    if params.beta <= 0:
        raise ValueError("critical_alpha needs beta > 0")
    return params.kappa * params.gamma_bar / params.beta


def _a_terms(params: ParameterSet):
    p = params
    S = p.human_capacity
    gb = p.gamma_bar
    A1 = 2 * gb / S * (p.beta / p.kappa + gb / p.mu)
    A2 = 2 * p.sigma * p.gamma * p.nu * gb**2 / (p.nu_bar * p.delta_bar * p.mu * S)
    return A1, A2


def center_manifold_coefficients(params: ParameterSet,
                                 weights: CenterManifoldWeights = CenterManifoldWeights()):
    """Closed-form ``(a, b)`` evaluated at the DFE with ``alpha = alpha*``.

    ``params.alpha`` is ignored; the coefficients always refer to the
    threshold value.
    """
    w = weights
    a_star = critical_alpha(params)
    A1, A2 = _a_terms(params)
    gb = params.gamma_bar
    a = (-A1 * (w.v2 * w.w2 + w.v3 * w.w3) * (w.w2 + w.w3)
         + A2 / a_star * (w.v2 + w.v3) * w.w2 * w.w3)
    b = gb**2 / (a_star * params.mu) * (w.w2 + w.w3) ** 2 + gb / a_star * (w.w2**2 + w.w3**2)
    return float(a), float(b)


def alpha_c(params: ParameterSet, weights: CenterManifoldWeights = CenterManifoldWeights()) -> float:
    """Threshold below which ``alpha*`` gives a positive ``a`` (backward bifurcation)."""
    w = weights
    A1, A2 = _a_terms(params)
    return float(A2 * (w.v2 + w.v3) * w.w2 * w.w3
                 / (A1 * (w.v2 * w.w2 + w.v3 * w.w3) * (w.w2 + w.w3)))


def null_vectors(params: ParameterSet, weights: CenterManifoldWeights = CenterManifoldWeights()):
    """Right and left null vectors of the DFE Jacobian at ``alpha*``."""
    p = params
    w2, w3, v2, v3 = weights.w2, weights.w3, weights.v2, weights.v3
    a_star = critical_alpha(p)
    S, U = p.human_capacity, p.vector_capacity
    gb, nb, db = p.gamma_bar, p.nu_bar, p.delta_bar
    w = np.zeros(N_STATE)
    w[1], w[2] = w2, w3
    w[0] = -gb / p.mu * (w2 + w3)
    w[3], w[4] = p.gamma / nb * w2, p.gamma / nb * w3
    w[5], w[6] = p.nu * w[3] / p.mu, p.nu * w[4] / p.mu
    c = gb * U / (a_star * S)
    w[10], w[11], w[12] = -c * (w2 + w3), c * w2, c * w3
    v = np.zeros(N_STATE)
    v[1], v[2] = v2, v3
    v[7], v[8] = gb / db * v3, gb / db * v2
    d = a_star * S / (p.kappa * U)
    v[11], v[12], v[13] = d * v2, d * v3, d * (v2 + v3)
    return w, v


def bifurcation_coefficients_numeric(params: ParameterSet,
                                     weights: CenterManifoldWeights = CenterManifoldWeights(),
                                     rel_step: float = 1e-4):
    """Direct evaluation of the defining sums, by finite differences.

    ``a = sum v_k w_i w_j d2F_k/dx_i dx_j`` and the standard
    ``b = sum v_k w_i d2F_k/dx_i dalpha``, both at the DFE with
    ``alpha = alpha*``. Independent of the closed forms above; ``b`` here uses
    the left eigenvector and therefore differs from the closed-form ``b``,
    which weights with the right one. Both are positive.
    """
    p = params.replace(alpha=critical_alpha(params))
    x0 = disease_free_state(p)
    w, v = null_vectors(p, weights)
    h = rel_step * np.max(np.abs(x0)) / np.max(np.abs(w))
    d2 = (vector_field(x0 + h * w, p) - 2 * vector_field(x0, p) + vector_field(x0 - h * w, p)) / h**2
    a = float(v @ d2)
    da = 1e-6 * p.alpha
    dJ = (jacobian(x0, p.replace(alpha=p.alpha + da)) - jacobian(x0, p.replace(alpha=p.alpha - da))) / (2 * da)
    b = float(v @ dJ @ w)
    return a, b

"""Strong enhancement of secondary infections turns the threshold backward.

Compares the center-manifold coefficient ``a`` at the baseline and at
sigma = 5, then follows the two-strain branch in the backward case to show
the fold below alpha* where endemic states exist although R0 < 1.

    python demos/backward_bifurcation.py
"""

from dengue2s import ParameterSet
from dengue2s.analysis import r0
from dengue2s.bifurcation import alpha_c, center_manifold_coefficients, critical_alpha
from dengue2s.workflows import bifurcation_diagram

for sigma in (0.45, 5.0):
    p = ParameterSet(sigma=sigma)
    a, b = center_manifold_coefficients(p)
    kind = "backward" if a > 0 else "forward"
    print(f"sigma = {sigma}: a = {a:+.4f}, b = {b:.1f}, alpha_c = {alpha_c(p):.4f}, "
          f"alpha* = {critical_alpha(p):.4f} -> {kind}")

p = ParameterSet(sigma=5.0)
diagram = bifurcation_diagram(p, "alpha", (0.1, 0.75))
for label, ev in diagram.events:
    print(f"  {ev.event_kind:<13} on {label:<22} alpha = {ev.param_value:.5f}, "
          f"R0 = {r0(p.replace(alpha=ev.param_value)):.4f}")

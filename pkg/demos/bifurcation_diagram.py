"""Equilibrium branches in alpha and the periodic orbits born at the Hopf point.

Writes one CSV per branch (with its events file), the orbit-family summary
and the orbit closest to alpha = 0.627. Columns are ready for any plotting
tool: I_tot against param for the diagram, I_tot against t for the orbit.

    python demos/bifurcation_diagram.py [output-dir]
"""

import sys
import time
from pathlib import Path

from dengue2s import ParameterSet
from dengue2s.bifurcation.orbits import continue_periodic_orbits, orbit_at
from dengue2s.io import write_branch_csv, write_orbit_csv, write_orbit_family_csv
from dengue2s.workflows import bifurcation_diagram

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-output")
out.mkdir(parents=True, exist_ok=True)
params = ParameterSet()

t0 = time.perf_counter()
diagram = bifurcation_diagram(params, "alpha", (0.1, 0.75))
for label, branch in diagram.branches.items():
    write_branch_csv(branch, branch.events, out / f"branch_{label}.csv")
    stable = sum(r.stable for r in branch.points)
    print(f"{label:<22} {len(branch):4d} points, {stable:4d} stable, ends by {branch.termination}")
for label, ev in diagram.events:
    extra = f", frequency {ev.imag_pair:.5f}/month" if ev.imag_pair else ""
    print(f"  {ev.event_kind:<13} on {label:<22} alpha = {ev.param_value:.6f}{extra}")
print(f"diagram in {time.perf_counter() - t0:.1f} s")

(_, hopf), = diagram.events_of("hopf")
t0 = time.perf_counter()
family = continue_periodic_orbits(hopf, params, param_range=(0.1, 0.75))
write_orbit_family_csv(family.orbits, out / "orbit_family.csv")
print(f"{len(family)} orbits from alpha = {family.param_values.min():.4f} to "
      f"{family.param_values.max():.4f} in {time.perf_counter() - t0:.1f} s")

orbit = orbit_at(family, 0.627)
write_orbit_csv(orbit, out / "orbit_0.627.csv")
lo, hi = orbit.min_max("I_tot")
print(f"alpha = 0.627: period {orbit.period:.2f} months, I_tot between {lo:.3f} and {hi:.3f}, "
      f"{'stable' if orbit.stable else 'unstable'}")

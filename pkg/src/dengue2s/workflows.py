"""End-to-end analyses built from the library pieces.

These are the pipelines behind the command-line subcommands: the
equilibrium catalogue, bifurcation diagrams with branch switching, the
periodic-orbit family from each Hopf point and the bistability experiment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    EquilibriumRecord,
    _record,
    disease_free_equilibrium,
    one_strain_equilibrium,
    r0,
    two_strain_symmetric_equilibrium,
)
from .bifurcation.center_manifold import critical_alpha
from .bifurcation.continuation import Branch, ContinuationSettings, continue_equilibria, switch_branch
from .bifurcation.orbits import OrbitBranch, continue_periodic_orbits, orbit_at
from .errors import NumericalError, ThresholdError
from .integrate import settle
from .model import STRAIN2_ONLY, ParameterSet

# reference values the reproduction summary compares against
REPORTED = {
    "branch_point_alpha": 0.33355,
    "hopf_alpha": 0.50012,
    "orbit_family_alpha_lo": 0.529,
    "orbit_family_alpha_hi": 0.75,
    "highlighted_orbit_alpha": 0.627,
}


def equilibrium_catalog(params: ParameterSet) -> dict[str, EquilibriumRecord]:
    """Every equilibrium available in closed form at ``params``."""
    out = {"disease_free": disease_free_equilibrium(params)}
    if r0(params) > 1:
        out["one_strain_1"] = one_strain_equilibrium(params, 1)
        out["one_strain_2"] = one_strain_equilibrium(params, 2)
        try:
            out["two_strain_symmetric"] = two_strain_symmetric_equilibrium(params)
        except (NumericalError, ThresholdError):
            pass
    return out


def start_record(params: ParameterSet, kind: str) -> EquilibriumRecord:
    if kind == "disease_free":
        return disease_free_equilibrium(params)
    if kind in ("one_strain_1", "one_strain_2"):
        return one_strain_equilibrium(params, int(kind[-1]))
    if kind == "two_strain_symmetric":
        return two_strain_symmetric_equilibrium(params)
    raise ValueError(f"unknown start kind {kind!r}")


@dataclass
class Diagram:
    free_param: str
    branches: dict = field(default_factory=dict)     # label -> Branch
    events: list = field(default_factory=list)       # (label, BifurcationEvent)

    def events_of(self, kind: str):
        return [(lbl, ev) for lbl, ev in self.events if ev.event_kind == kind]


def _both_ways(rec, params, free, range_, settings) -> Branch:
    down = continue_equilibria(rec, params, free, range_, dataclasses.replace(settings, direction=-1))
    up = continue_equilibria(rec, params, free, range_, dataclasses.replace(settings, direction=1))
    return Branch(free_param=free, params=params,
                  param_values=np.concatenate([down.param_values[::-1], up.param_values[1:]]),
                  points=down.points[::-1] + up.points[1:],
                  events=sorted(down.events + up.events, key=lambda e: e.param_value),
                  termination=f"{down.termination}/{up.termination}")


def bifurcation_diagram(params: ParameterSet, free_param: str, range_,
                        settings: ContinuationSettings | None = None,
                        start: str = "disease_free") -> Diagram:
    """Continue equilibria in ``free_param`` over ``range_``.

    From the disease-free start the DFE branch is followed from the lower
    end of the range, and at each branch point every emanating branch that
    enters the nonnegative orthant is followed too. Any other start kind is
    taken at ``params`` and followed in both directions.
    """
    settings = settings or ContinuationSettings()
    diagram = Diagram(free_param)
    lo, hi = float(range_[0]), float(range_[1])
    if start == "disease_free":
        p_lo = params.replace(**{free_param: lo})
        dfe = continue_equilibria(disease_free_equilibrium(p_lo), p_lo, free_param, (lo, hi),
                                  dataclasses.replace(settings, direction=1))
        diagram.branches["disease_free"] = dfe
        diagram.events += [("disease_free", ev) for ev in dfe.events]
        for ev in dfe.events:
            if ev.event_kind != "branch_point":
                continue
            for rec, prm, tangent in switch_branch(ev, settings=settings):
                br = continue_equilibria(rec, prm, free_param, (lo, hi), settings, tangent=tangent)
                # start the emanating branch at the branch point itself
                br.points.insert(0, _record(np.asarray(ev.state), ev.params))
                br.param_values = np.insert(br.param_values, 0, ev.param_value)
                label = rec.kind
                k = 2
                while label in diagram.branches:
                    label, k = f"{rec.kind}_{k}", k + 1
                diagram.branches[label] = br
                diagram.events += [(label, e) for e in br.events]
    else:
        rec = start_record(params, start)
        br = _both_ways(rec, params, free_param, (lo, hi), settings)
        diagram.branches[start] = br
        diagram.events += [(start, e) for e in br.events]
    return diagram


def orbit_families(diagram: Diagram, params: ParameterSet, range_,
                   settings: ContinuationSettings | None = None,
                   max_orbits: int = 400) -> list[tuple[str, OrbitBranch]]:
    """Periodic-orbit family from every Hopf event of ``diagram``."""
    out = []
    for label, ev in diagram.events_of("hopf"):
        fam = continue_periodic_orbits(ev, params, settings, param_range=range_, max_orbits=max_orbits)
        out.append((label, fam))
    return out


def strain1_only_state(x0) -> np.ndarray:
    """Initial state with strain 2 and secondary classes removed.

    The removed human mass is added to S and the removed vector mass to U,
    so the totals are unchanged.
    """
    x = np.array(x0, dtype=float)
    human = [i for i in STRAIN2_ONLY if i < 10]
    vector = [i for i in STRAIN2_ONLY if i >= 10]
    x[0] += x[human].sum()
    x[10] += x[vector].sum()
    x[STRAIN2_ONLY] = 0.0
    return x


def bistability(params: ParameterSet, x0, t_max: float = 2e5) -> dict[str, EquilibriumRecord]:
    """Settle from ``x0`` and from its strain-1-only reduction."""
    return {"two_strain_start": settle(x0, params, t_max=t_max),
            "strain1_only_start": settle(strain1_only_state(x0), params, t_max=t_max)}


@dataclass
class ComparisonRow:
    quantity: str
    reported: str
    computed: str
    passed: bool


def reproduce(params: ParameterSet, x0, settings: ContinuationSettings | None = None,
              alpha_hi: float = 0.75):
    """Run the transient, equilibrium-diagram and orbit-family analyses.

    Returns the comparison rows plus the intermediate products
    ``(rows, bistable, diagram, families)``.
    """
    settings = settings or ContinuationSettings()
    rows = []
    bi = bistability(params, x0)
    kinds = (bi["two_strain_start"].kind, bi["strain1_only_start"].kind)
    rows.append(ComparisonRow("attractors from the two initial conditions",
                              "two-strain and one-strain", f"{kinds[0]} and {kinds[1]}",
                              kinds == ("two_strain_symmetric", "one_strain_1")))

    diagram = bifurcation_diagram(params, "alpha", (0.1, alpha_hi), settings)
    bps = [ev.param_value for _, ev in diagram.events_of("branch_point")]
    bp = bps[0] if bps else float("nan")
    rows.append(ComparisonRow("branch point alpha", f"{REPORTED['branch_point_alpha']}",
                              f"{bp:.6f} (closed form {critical_alpha(params):.6f})",
                              abs(bp - REPORTED["branch_point_alpha"]) < 1e-3))
    hopfs = [ev for lbl, ev in diagram.events_of("hopf") if lbl.startswith("two_strain")]
    hv = hopfs[0].param_value if hopfs else float("nan")
    rows.append(ComparisonRow("Hopf alpha on the two-strain branch", f"{REPORTED['hopf_alpha']}",
                              f"{hv:.6f}", abs(hv - REPORTED["hopf_alpha"]) < 1e-2))

    families = []
    if hopfs:
        fam = continue_periodic_orbits(hopfs[0], params, settings, param_range=(0.1, alpha_hi))
        families.append(("two_strain_symmetric", fam))
        vals = fam.param_values
        amps = np.array([o.amplitude for o in fam.orbits])
        sel = vals >= REPORTED["orbit_family_alpha_lo"]
        covered = bool(vals.min() <= REPORTED["orbit_family_alpha_lo"] and vals.max() >= alpha_hi - 1e-12)
        monotone = bool(np.all(np.diff(amps[sel]) > 0))
        rows.append(ComparisonRow("orbit family over alpha", "0.529 to 0.75, amplitude growing",
                                  f"{vals.min():.4f} to {vals.max():.4f}, "
                                  f"{'increasing' if monotone else 'not monotone'}",
                                  covered and monotone))
        triv = max(abs(o.trivial_multiplier - 1) for o in fam.orbits)
        stable = all(o.stable for o in fam.orbits)
        rows.append(ComparisonRow("family stability", "stable orbits",
                                  f"{'all stable' if stable else 'not all stable'}, "
                                  f"max |trivial multiplier - 1| = {triv:.1e}",
                                  stable and triv < 1e-4))
        o = orbit_at(fam, REPORTED["highlighted_orbit_alpha"], settings)
        lo, hi = o.min_max("I_tot")
        rows.append(ComparisonRow("orbit at alpha = 0.627", "sustained oscillation",
                                  f"period {o.period:.1f} months, I_tot in [{lo:.3f}, {hi:.3f}]",
                                  o.amplitude > 0 and o.stable))
    return rows, bi, diagram, families

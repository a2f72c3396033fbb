"""Thin-layer surface participation and bulk energy fractions.

A contamination layer is not meshed. The field just outside it, on the real
dielectric side (substrate for SM and SA, vacuum for MA), is mapped into the
layer by keeping the tangential component and scaling the normal component by
the permittivity ratio, which is what continuity of tangential E and normal D
demands. The layer energy per unit thickness, divided by the total stored
energy, gives p/t in 1/m.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.constants import epsilon_0

from .errors import InvalidArgument, UndefinedParticipation, UnsupportedConfiguration
from .field_solver import FieldSolution, MaterialStack, capacitance, solve
from .geometry import INTERFACES, LayoutSpec
from .mesh import REGION_NAMES, SUBSTRATE, MeshControls, generate_mesh, refine, refine_uniform

DEFAULT_CUTOFF_NM = 1.0
PERTURBATIVE_LIMIT = 0.05


class ParticipationWarning(UserWarning):
    pass


def transform_field(E2, n, eps1: float, eps2: float) -> np.ndarray:
    """Field inside a thin layer of permittivity ``eps1`` next to a side with ``eps2``.

    Works on a single 2-vector or on (K, 2) arrays of fields and normals.
    """
    if eps1 < 1 or eps2 < 1:
        raise InvalidArgument("relative permittivities must be >= 1")
    E2 = np.asarray(E2, dtype=float)
    n = np.asarray(n, dtype=float)
    if not np.allclose(np.linalg.norm(n, axis=-1), 1.0, rtol=0, atol=1e-12):
        raise InvalidArgument("interface normal must be a unit vector")
    normal = np.sum(E2 * n, axis=-1, keepdims=True)
    tangential = E2 - n * normal
    return (eps2 / eps1) * n * normal + tangential


@dataclass(frozen=True, eq=False)
class InterfaceSample:
    """Per-edge samples of one interface class, stored as parallel arrays.

    Each boundary edge contributes its end points, unit tangent and normal
    (the normal points away from the side-2 element), the side-2 element field
    and permittivity, and its length as the arc weight.
    """

    tag: str
    start: np.ndarray  # (K, 2) m
    end: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    E2: np.ndarray  # (K, 2) V/m
    side2_eps: np.ndarray
    arc_weight: np.ndarray  # m
    kind: np.ndarray
    segment: np.ndarray
    element: np.ndarray

    def __len__(self) -> int:
        return len(self.arc_weight)

    @property
    def position(self) -> np.ndarray:
        return 0.5 * (self.start + self.end)

    def subset(self, mask) -> "InterfaceSample":
        mask = np.asarray(mask)
        return InterfaceSample(self.tag, *(getattr(self, f)[mask] for f in
                                           ("start", "end", "tangent", "normal", "E2", "side2_eps",
                                            "arc_weight", "kind", "segment", "element")))


def interface_samples(sol: FieldSolution, tag: str, include_sidewalls: bool = True,
                      segments: Sequence[int] | None = None) -> InterfaceSample:
    """Sample ``tag`` edges of the solved mesh, one sample per boundary edge.

    ``include_sidewalls=False`` drops trench sidewalls from SA. ``segments``
    restricts sampling to the given layout segment indices.
    """
    if tag not in INTERFACES:
        raise InvalidArgument(f"unknown interface {tag!r}")
    mesh = sol.mesh
    pick = mesh.edge_tags == tag
    if not include_sidewalls:
        pick &= mesh.edge_kinds != "sidewall"
    if segments is not None:
        pick &= np.isin(mesh.edge_segments, np.asarray(list(segments), dtype=np.int64))
    edges = mesh.boundary_edges[pick]
    table = mesh.edges()
    owners = table.owners[table.lookup(edges, mesh.n_vertices)]
    if tag == "SA":
        # the substrate-side element is side 2
        first_sub = mesh.regions[owners[:, 0]] == SUBSTRATE
        element = np.where(first_sub, owners[:, 0], owners[:, 1])
    else:
        element = owners[:, 0]
    start = mesh.vertices[edges[:, 0]]
    end = mesh.vertices[edges[:, 1]]
    vec = end - start
    length = np.hypot(vec[:, 0], vec[:, 1])
    tangent = vec / length[:, None]
    normal = np.stack([tangent[:, 1], -tangent[:, 0]], 1)
    inward = mesh.centroids()[element] - start
    flip = np.sum(inward * normal, axis=1) > 0
    normal[flip] *= -1
    return InterfaceSample(
        tag=tag, start=start, end=end, tangent=tangent, normal=normal,
        E2=sol.field[element], side2_eps=sol.eps_r[element], arc_weight=length,
        kind=mesh.edge_kinds[pick], segment=mesh.edge_segments[pick], element=element,
    )


def _outside_length(start: np.ndarray, end: np.ndarray, corners: np.ndarray, radius: float) -> np.ndarray:
    """Length of each segment lying outside every disk of ``radius`` around ``corners``."""
    vec = end - start
    length = np.hypot(vec[:, 0], vec[:, 1])
    if radius <= 0 or not len(corners) or not len(start):
        return length
    cut = [[] for _ in range(len(start))]
    for cx, cy in corners:
        # segment parameter interval inside the disk: |start + s*vec - c| <= radius
        rel = start - (cx, cy)
        a = length**2
        b = np.sum(rel * vec, axis=1)
        c = np.sum(rel * rel, axis=1) - radius**2
        disc = b * b - a * c
        hit = np.flatnonzero(disc > 0)
        if not len(hit):
            continue
        root = np.sqrt(disc[hit])
        lo = np.clip((-b[hit] - root) / a[hit], 0.0, 1.0)
        hi = np.clip((-b[hit] + root) / a[hit], 0.0, 1.0)
        for k, s0, s1 in zip(hit, lo, hi):
            if s1 > s0:
                cut[k].append((s0, s1))
    out = length.copy()
    for k, spans in enumerate(cut):
        if not spans:
            continue
        spans.sort()
        covered, (c0, c1) = 0.0, spans[0]
        for s0, s1 in spans[1:]:
            if s0 > c1:
                covered += c1 - c0
                c0, c1 = s0, s1
            else:
                c1 = max(c1, s1)
        covered += c1 - c0
        out[k] = length[k] * max(0.0, 1.0 - covered)
    return out


def surface_participation(samples: InterfaceSample, eps1: float, sol: FieldSolution,
                          cutoff: float = DEFAULT_CUTOFF_NM) -> float:
    """p/t (1/m) of a thin layer with permittivity ``eps1`` along ``samples``.

    Arc closer than ``cutoff`` nm to a conductor corner is left out, which
    regularizes the 1/r integrand at sharp corners.
    """
    if cutoff < 0:
        raise InvalidArgument("cutoff must be >= 0")
    if len(samples) == 0:
        warnings.warn(f"no {samples.tag} samples; participation taken as 0", ParticipationWarning, stacklevel=2)
        return 0.0
    if not sol.U_tot > 0:
        raise UndefinedParticipation("total stored energy is zero; participation is undefined")
    E1 = np.empty_like(samples.E2)
    for eps2 in np.unique(samples.side2_eps):
        m = samples.side2_eps == eps2
        E1[m] = transform_field(samples.E2[m], samples.normal[m], eps1, float(eps2))
    weight = _outside_length(samples.start, samples.end, sol.mesh.corners, cutoff * 1e-9)
    density = 0.5 * epsilon_0 * eps1 * np.einsum("ij,ij->i", E1, E1)
    return math.fsum(density * weight) / sol.U_tot


def bulk_participation(sol: FieldSolution, region: str) -> float:
    """Fraction of the stored energy held in ``region`` (substrate or vacuum)."""
    if region not in REGION_NAMES:
        raise InvalidArgument(f"unknown region {region!r}; expected one of {REGION_NAMES}")
    if not sol.U_tot > 0:
        raise UndefinedParticipation("total stored energy is zero; participation is undefined")
    return sol.region_energy(region) / sol.U_tot


def cutoff_sensitivity(sol: FieldSolution, samples: InterfaceSample, eps1: float,
                       cutoffs: Sequence[float]) -> list[tuple[float, float]]:
    """Rows of (cutoff nm, p/t) in the order given."""
    if len(cutoffs) < 1:
        raise InvalidArgument("at least one cutoff is required")
    return [(float(c), surface_participation(samples, eps1, sol, c)) for c in cutoffs]


@dataclass(frozen=True)
class ParticipationReport:
    p_over_t: dict[str, float]  # 1/m per interface
    p_bulk: dict[str, float]
    cutoff_used: float  # nm
    mesh_convergence: dict[str, float] = field(default_factory=dict)
    design: str = ""
    trench_nm: float = float("nan")
    n_vertices: int = 0
    capacitance: float = float("nan")  # F/m between the driven electrodes

    CSV_COLUMNS = ("design", "trench_nm", "p_sm", "p_sa", "p_ma", "p_sub", "p_vac", "cutoff_nm",
                   "conv_sm", "conv_sa", "conv_ma", "conv_sub")

    def row(self) -> list:
        conv = self.mesh_convergence
        return [self.design, self.trench_nm, self.p_over_t["SM"], self.p_over_t["SA"], self.p_over_t["MA"],
                self.p_bulk["substrate"], self.p_bulk["vacuum"], self.cutoff_used,
                conv.get("SM", math.nan), conv.get("SA", math.nan), conv.get("MA", math.nan),
                conv.get("substrate", math.nan)]


def participations(sol: FieldSolution, materials: MaterialStack | None = None,
                   cutoff: float = DEFAULT_CUTOFF_NM, include_sidewalls: bool = True) -> tuple[dict, dict]:
    """All three p/t values and both bulk fractions for one solution."""
    materials = materials or sol.materials
    p_over_t = {}
    for tag in INTERFACES:
        samples = interface_samples(sol, tag, include_sidewalls=include_sidewalls)
        p_over_t[tag] = surface_participation(samples, materials.eps_contamination[tag], sol, cutoff)
    p_sub = bulk_participation(sol, "substrate")
    p_vac = bulk_participation(sol, "vacuum")
    return p_over_t, {"substrate": p_sub, "vacuum": p_vac}


def _check_perturbative(p_over_t: Mapping[str, float], materials: MaterialStack) -> None:
    for tag, value in p_over_t.items():
        share = value * materials.layer_thicknesses[tag] * 1e-9
        if share >= PERTURBATIVE_LIMIT:
            warnings.warn(
                f"{tag} layer holds {share:.3g} of the energy at {materials.layer_thicknesses[tag]} nm; "
                "the unmeshed thin-layer treatment is no longer a small correction",
                ParticipationWarning, stacklevel=3)


def evaluate(layout: LayoutSpec, materials: MaterialStack | None = None, controls: MeshControls | None = None,
             electrode_voltages: Mapping[str, float] | None = None, cutoff: float = DEFAULT_CUTOFF_NM,
             marker_fraction: float = 0.25, include_sidewalls: bool = True, design: str = "",
             uniform_refinements: int = 0) -> tuple[ParticipationReport, FieldSolution]:
    """Mesh, solve and evaluate ``layout``; returns the report and the final solution.

    ``uniform_refinements`` splits every triangle of the generated mesh that many
    times before the first solve. Afterwards ``controls.max_refine_passes``
    adaptive passes run, and ``mesh_convergence`` holds the relative change of
    every entry over the last one (empty when no pass was run).
    """
    materials = materials or MaterialStack()
    controls = controls or MeshControls()
    if electrode_voltages is None:
        electrode_voltages = default_voltages(layout)
    mesh = generate_mesh(layout, controls)
    for _ in range(uniform_refinements):
        mesh = refine_uniform(mesh)
    sol = solve(mesh, materials, electrode_voltages)
    p_over_t, p_bulk = participations(sol, materials, cutoff, include_sidewalls)
    conv: dict[str, float] = {}
    for _ in range(controls.max_refine_passes):
        mesh = refine(mesh, sol, marker_fraction)
        sol = solve(mesh, materials, electrode_voltages)
        new_pt, new_bulk = participations(sol, materials, cutoff, include_sidewalls)
        conv = {k: _rel_change(p_over_t[k], new_pt[k]) for k in INTERFACES}
        conv["substrate"] = _rel_change(p_bulk["substrate"], new_bulk["substrate"])
        p_over_t, p_bulk = new_pt, new_bulk
    _check_perturbative(p_over_t, materials)
    try:
        cap = capacitance(sol)
    except (UnsupportedConfiguration, InvalidArgument):
        cap = math.nan
    report = ParticipationReport(p_over_t, p_bulk, float(cutoff), conv, design,
                                 round(layout.trench_depth * 1e9, 6), mesh.n_vertices, cap)
    return report, sol


def participation_report(layout: LayoutSpec, materials: MaterialStack | None = None,
                         controls: MeshControls | None = None,
                         electrode_voltages: Mapping[str, float] | None = None,
                         cutoff: float = DEFAULT_CUTOFF_NM, marker_fraction: float = 0.25,
                         include_sidewalls: bool = True, design: str = "",
                         uniform_refinements: int = 0) -> ParticipationReport:
    """Report-only form of :func:`evaluate`."""
    return evaluate(layout, materials, controls, electrode_voltages, cutoff, marker_fraction,
                    include_sidewalls, design, uniform_refinements)[0]


def _rel_change(old: float, new: float) -> float:
    if new == old:
        return 0.0
    return abs(new - old) / abs(new) if new else math.inf


def default_voltages(layout: LayoutSpec) -> dict[str, float]:
    """+0.5 V on P, -0.5 V on N, 0 V on everything else."""
    return {name: {"P": 0.5, "N": -0.5}.get(name, 0.0) for name in layout.electrodes}

"""Electrostatic finite-element solve on a cross-section mesh.

Linear triangles, piecewise-constant permittivity, Dirichlet conductors and a
natural (zero normal flux) condition on the bounding box. Energies are per
unit length of the extruded cross-section, in J/m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.constants import e as ELEMENTARY_CHARGE
from scipy.constants import epsilon_0, h as PLANCK
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .errors import InvalidArgument, SolveError, UnsupportedConfiguration
from .geometry import INTERFACES
from .mesh import REGION_NAMES, SUBSTRATE, VACUUM, Mesh

RESIDUAL_TOL = 1e-10


def _per_interface(value, name: str) -> dict[str, float]:
    if isinstance(value, Mapping):
        missing = set(INTERFACES) - set(value)
        if missing:
            raise InvalidArgument(f"{name} missing interfaces {sorted(missing)}")
        return {k: float(value[k]) for k in INTERFACES}
    return {k: float(value) for k in INTERFACES}


@dataclass(frozen=True)
class MaterialStack:
    """Permittivities, contamination-layer thicknesses (nm) and loss tangents.

    ``eps_contamination``, ``layer_thicknesses`` and the surface entries of
    ``loss_tangents`` are per interface (SM, SA, MA); a scalar applies to all
    three. ``loss_tangents`` additionally holds ``"substrate"``.
    """

    eps_substrate: float = 11.45
    eps_contamination: Mapping[str, float] | float = 5.0
    layer_thicknesses: Mapping[str, float] | float = 3.0
    loss_tangents: Mapping[str, float] = field(default_factory=lambda: {"SM": 0.0, "SA": 0.0, "MA": 0.0,
                                                                         "substrate": 0.0})
    eps_vacuum: float = field(default=1.0, init=False)

    def __post_init__(self) -> None:
        eps_c = _per_interface(self.eps_contamination, "eps_contamination")
        thick = _per_interface(self.layer_thicknesses, "layer_thicknesses")
        tans = dict(self.loss_tangents)
        for key in (*INTERFACES, "substrate"):
            tans.setdefault(key, 0.0)
        if set(tans) - {*INTERFACES, "substrate"}:
            raise InvalidArgument(f"unknown loss tangent keys {sorted(set(tans) - {*INTERFACES, 'substrate'})}")
        if self.eps_substrate < 1 or min(eps_c.values()) < 1:
            raise InvalidArgument("relative permittivities must be >= 1")
        if min(thick.values()) < 0:
            raise InvalidArgument("layer thicknesses must be >= 0")
        if min(tans.values()) < 0:
            raise InvalidArgument("loss tangents must be >= 0")
        object.__setattr__(self, "eps_contamination", eps_c)
        object.__setattr__(self, "layer_thicknesses", thick)
        object.__setattr__(self, "loss_tangents", {k: float(v) for k, v in tans.items()})

    def region_eps(self, region: int) -> float:
        return self.eps_substrate if region == SUBSTRATE else self.eps_vacuum


@dataclass(frozen=True, eq=False)
class FieldSolution:
    mesh: Mesh
    potential: np.ndarray  # V per vertex
    field: np.ndarray  # (M, 2) V/m per element
    eps_r: np.ndarray  # relative permittivity per element
    element_energy: np.ndarray  # J/m per element
    U_tot: float  # J/m
    bc: dict[str, float]
    residual: float
    materials: MaterialStack

    def region_energy(self, region: str) -> float:
        code = REGION_NAMES.index(region)
        return math.fsum(self.element_energy[self.mesh.regions == code])


def gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric basis gradients (M, 3, 2) and element areas (M,)."""
    p = mesh.vertices[mesh.triangles]
    x, y = p[:, :, 0], p[:, :, 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grad = np.stack([b, c], axis=2) / (2 * area)[:, None, None]
    return grad, area


def stiffness(mesh: Mesh, eps_r: np.ndarray) -> sp.csr_matrix:
    """Assembled matrix of ``int eps_r grad(phi_i).grad(phi_j)`` (without epsilon_0)."""
    grad, area = gradients(mesh)
    local = np.einsum("mik,mjk->mij", grad, grad) * (eps_r * area)[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def element_field(mesh: Mesh, potential: np.ndarray) -> np.ndarray:
    grad, _ = gradients(mesh)
    return -np.einsum("mik,mi->mk", grad, potential[mesh.triangles])


def solve(mesh: Mesh, materials: MaterialStack, electrode_voltages: Mapping[str, float]) -> FieldSolution:
    """Solve for the electrostatic potential with the given electrode voltages."""
    missing = [name for name in mesh.electrodes if name not in electrode_voltages]
    if missing:
        raise InvalidArgument(f"no voltage assigned to electrodes {missing}")
    unknown = sorted(set(electrode_voltages) - set(mesh.electrodes))
    if unknown:
        raise InvalidArgument(f"voltages given for electrodes not in the layout: {unknown}")
    eps_r = np.where(mesh.regions == SUBSTRATE, materials.eps_substrate, materials.eps_vacuum)
    volts = np.array([float(electrode_voltages[name]) for name in mesh.electrodes])
    fixed = mesh.node_electrode >= 0
    if not fixed.any():
        raise SolveError("singular system: no Dirichlet (conductor) nodes to reference the potential")

    K = stiffness(mesh, eps_r)
    free = np.flatnonzero(~fixed)
    u = np.zeros(mesh.n_vertices)
    u[fixed] = volts[mesh.node_electrode[fixed]]

    # every free component must touch a conductor, otherwise its potential floats
    n_comp, labels = connected_components(K, directed=False)
    anchored = np.zeros(n_comp, dtype=bool)
    anchored[labels[fixed]] = True
    if not anchored[labels[free]].all():
        raise SolveError("singular system: a region is not connected to any conductor")

    K_ff = K[free][:, free].tocsc()
    rhs = -(K[free][:, fixed] @ u[fixed])
    residual = 0.0
    if np.any(rhs != 0):
        try:
            # COLAMD: minimum-degree orderings occasionally stall for minutes on graded meshes
            lu = splu(K_ff, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolveError(f"factorization failed: {exc}") from exc
        x = lu.solve(rhs)
        norm_b = np.linalg.norm(rhs)
        history = []
        for _ in range(4):
            r = rhs - K_ff @ x
            residual = float(np.linalg.norm(r) / norm_b)
            history.append(residual)
            if residual <= RESIDUAL_TOL:
                break
            x = x + lu.solve(r)
        else:
            raise SolveError("linear solve did not reach the residual tolerance",
                             {"residual_history": history, "tolerance": RESIDUAL_TOL})
        u[free] = x
        del lu
    del K, K_ff

    field_ = element_field(mesh, u)
    _, area = gradients(mesh)
    energy = 0.5 * epsilon_0 * eps_r * np.einsum("ij,ij->i", field_, field_) * area
    # substrate + vacuum summed separately so the bulk split is an exact partition
    u_sub = math.fsum(energy[mesh.regions == SUBSTRATE])
    u_vac = math.fsum(energy[mesh.regions == VACUUM])
    return FieldSolution(
        mesh=mesh, potential=u, field=field_, eps_r=eps_r, element_energy=energy,
        U_tot=u_sub + u_vac, bc={k: float(v) for k, v in electrode_voltages.items()},
        residual=residual, materials=materials,
    )


def total_energy(sol: FieldSolution) -> float:
    """Stored energy per unit length, ``1/2 sum eps |E|^2 area`` (J/m)."""
    return sol.U_tot


def capacitance(sol: FieldSolution) -> float:
    """Capacitance per unit length (F/m) between the driven electrodes, ``2 U / V^2``.

    Electrodes held at 0 V count as ground. With a single driven electrode the
    voltage is measured against ground.
    """
    driven = {k: v for k, v in sol.bc.items() if v != 0.0}
    if len(driven) > 2:
        raise UnsupportedConfiguration(f"capacitance needs at most two driven electrodes, got {sorted(driven)}")
    if not driven:
        raise InvalidArgument("no driven electrode")
    values = list(driven.values())
    v = values[0] - values[1] if len(values) == 2 else values[0]
    return 2.0 * sol.U_tot / v**2


def charging_energy(C: float) -> float:
    """Charging energy ``e^2 / (2 h C)`` in MHz for a capacitance in farads."""
    if not C > 0:
        raise InvalidArgument(f"capacitance must be positive, got {C!r}")
    return ELEMENTARY_CHARGE**2 / (2 * PLANCK * C) / 1e6


def dump_field(sol: FieldSolution, path: str | Path) -> None:
    """Columnar text: element centroid x, y (m) and Ex, Ey (V/m)."""
    cen = sol.mesh.centroids()
    data = np.column_stack([cen, sol.field])
    np.savetxt(path, data, fmt="%.9e", header="x_m y_m Ex_V_per_m Ey_V_per_m")

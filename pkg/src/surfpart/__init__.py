"""Thin-layer surface participation of planar superconducting qubit designs.

Pipeline: :mod:`geometry` builds a tagged 2D cross-section, :mod:`mesh`
triangulates it, :mod:`field_solver` solves electrostatics, :mod:`participation`
turns fields into interface and bulk participations, and :mod:`analysis`
sweeps trench depth, extrapolates and builds loss budgets.
"""

from .analysis import (
    Channel, LogFit, LossBudget, PurcellParams, SweepResult, compare_designs, fit_log, log_extrapolate,
    loss_budget, purcell_limit, q_from_t1, t1_from_q, tan_delta_bound, trench_sweep,
)
from .field_solver import FieldSolution, MaterialStack, capacitance, charging_energy, solve, total_energy
from .geometry import DesignParams, LayoutSpec, build_layout, parallel_plate_layout, preset, validate
from .mesh import Mesh, MeshControls, check_mesh, generate_mesh, refine
from .participation import (
    InterfaceSample, ParticipationReport, bulk_participation, cutoff_sensitivity, interface_samples,
    participation_report, surface_participation, transform_field,
)

__version__ = "0.1.0"

"""Trench sweeps, logarithmic extrapolation and loss budgets."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DivergentRate, FitError, InvalidArgument, SurfpartError, SweepError
from .field_solver import MaterialStack
from .geometry import INTERFACES, DesignParams, build_layout, preset
from .mesh import MeshControls
from .participation import DEFAULT_CUTOFF_NM, ParticipationReport, participation_report

MIN_FIT_DEPTH_NM = 300.0
MIN_FIT_POINTS = 4


class ExtrapolationWarning(UserWarning):
    pass


def _design(design) -> tuple[str, DesignParams]:
    if isinstance(design, DesignParams):
        return "custom", design
    p = preset(design)
    return f"mod_{p.id.lower()}", p.params


@dataclass(frozen=True)
class SweepResult:
    design: str
    depths: tuple[float, ...]  # nm, strictly increasing
    reports: tuple[ParticipationReport, ...]

    def __post_init__(self) -> None:
        if len(self.depths) != len(self.reports):
            raise InvalidArgument("one report per depth is required")
        if any(b <= a for a, b in zip(self.depths, self.depths[1:])):
            raise InvalidArgument("sweep depths must be strictly increasing")

    def series(self, tag: str) -> np.ndarray:
        if tag in INTERFACES:
            return np.array([r.p_over_t[tag] for r in self.reports])
        return np.array([r.p_bulk[tag] for r in self.reports])


def _sweep_point(args) -> ParticipationReport:
    name, params, depth, materials, controls, cutoff, marker_fraction, include_sidewalls, uniform = args
    try:
        return participation_report(build_layout(params, depth), materials, controls, cutoff=cutoff,
                                    marker_fraction=marker_fraction, include_sidewalls=include_sidewalls,
                                    design=name, uniform_refinements=uniform)
    except SurfpartError as exc:
        raise SweepError(f"{name} at trench {depth:g} nm: {exc}", depth) from exc


def trench_sweep(design, depths: Sequence[float], controls: MeshControls | None = None,
                 materials: MaterialStack | None = None, min_fit_depth: float = MIN_FIT_DEPTH_NM,
                 jobs: int = 1, cutoff: float = DEFAULT_CUTOFF_NM, marker_fraction: float = 0.25,
                 include_sidewalls: bool = True, uniform_refinements: int = 0) -> SweepResult:
    """One participation report per trench depth (nm), in ascending depth order.

    ``design`` is a preset id (``"C"``, ``"mod_c"``) or a :class:`DesignParams`.
    Depths below ``min_fit_depth`` are rejected. With ``jobs > 1`` depths run in
    worker processes; results do not depend on ``jobs``.
    """
    name, params = _design(design)
    depths = sorted(float(d) for d in depths)
    if not depths:
        raise InvalidArgument("at least one depth is required")
    if len(set(depths)) != len(depths):
        raise InvalidArgument("duplicate sweep depths")
    if depths[0] < min_fit_depth:
        raise InvalidArgument(f"depth {depths[0]:g} nm is below min_fit_depth {min_fit_depth:g} nm")
    materials = materials or MaterialStack()
    controls = controls or MeshControls()
    tasks = [(name, params, d, materials, controls, cutoff, marker_fraction, include_sidewalls, uniform_refinements)
             for d in depths]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            reports = list(pool.map(_sweep_point, tasks))
    else:
        reports = [_sweep_point(t) for t in tasks]
    return SweepResult(name, tuple(depths), tuple(reports))


@dataclass(frozen=True)
class LogFit:
    """``value = a + b * ln(depth / 1 nm)``; ``a`` and ``b`` carry the units of the value."""

    tag: str
    a: float
    b: float
    r_squared: float
    extrapolated_depth: float  # nm
    extrapolated_value: float
    clamped: bool = False

    def evaluate(self, depth_nm) -> np.ndarray | float:
        return self.a + self.b * np.log(depth_nm)


def fit_log(depths: Sequence[float], values: Sequence[float], target_depth: float, tag: str = "") -> LogFit:
    """Least-squares fit of ``values`` against ln(depth in nm), evaluated at ``target_depth``.

    A negative extrapolation is clamped to 0 with a warning.
    """
    d = np.asarray(depths, dtype=float)
    v = np.asarray(values, dtype=float)
    if d.shape != v.shape or d.ndim != 1:
        raise FitError("depths and values must be 1-D and of equal length")
    if not target_depth > 0 or (d <= 0).any():
        raise FitError("depths must be positive")
    if len(np.unique(d)) < 2:
        raise FitError("need at least two distinct depths for a logarithmic fit")
    x = np.log(d)
    A = np.column_stack([np.ones_like(x), x])
    (a, b), *_ = np.linalg.lstsq(A, v, rcond=None)
    resid = v - (a + b * x)
    ss_res = float(resid @ resid)
    ss_tot = float(((v - v.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    value = float(a + b * math.log(target_depth))
    clamped = value < 0
    if clamped:
        warnings.warn(f"{tag or 'fit'} extrapolates to {value:.3g} at {target_depth:g} nm; clamped to 0",
                      ExtrapolationWarning, stacklevel=2)
        value = 0.0
    return LogFit(tag, float(a), float(b), r2, float(target_depth), value, clamped)


def log_extrapolate(sweep: SweepResult, target_depth: float = 50.0,
                    tags: Sequence[str] = INTERFACES) -> dict[str, LogFit]:
    """Per-interface logarithmic fits of a sweep, evaluated at ``target_depth`` nm."""
    if len(sweep.depths) < MIN_FIT_POINTS:
        raise FitError(f"logarithmic extrapolation needs >= {MIN_FIT_POINTS} depths, got {len(sweep.depths)}")
    return {tag: fit_log(sweep.depths, sweep.series(tag), target_depth, tag) for tag in tags}


@dataclass(frozen=True)
class Channel:
    """A loss channel: ``p/t`` (1/m) with ``thickness_nm`` for layers, or a plain ``p`` for bulk."""

    name: str
    participation: float
    tan_delta: float
    thickness_nm: float | None = None

    def __post_init__(self) -> None:
        if self.participation < 0 or self.tan_delta < 0 or (self.thickness_nm is not None and self.thickness_nm < 0):
            raise InvalidArgument(f"channel {self.name!r} has a negative input")

    @property
    def loss(self) -> float:
        p = self.participation if self.thickness_nm is None else self.participation * self.thickness_nm * 1e-9
        return p * self.tan_delta


@dataclass(frozen=True)
class LossBudget:
    channels: tuple[Channel, ...]
    other_loss: float
    f: float  # GHz
    inverse_q: float
    Q_total: float
    T1: float  # µs, NaN when no loss
    infinite_q: bool

    def contributions(self) -> dict[str, float]:
        out = {c.name: c.loss for c in self.channels}
        out["other"] = self.other_loss
        return out


def loss_budget(channels: Sequence[Channel], other_loss: float = 0.0, f: float = 4.8) -> LossBudget:
    """Sum channel losses into 1/Q and convert to T1 at ``f`` GHz."""
    if other_loss < 0 or not f > 0:
        raise InvalidArgument("other_loss must be >= 0 and f > 0")
    channels = tuple(channels)
    inv_q = math.fsum([c.loss for c in channels] + [other_loss])
    if inv_q == 0:
        return LossBudget(channels, other_loss, f, 0.0, math.inf, math.nan, True)
    q = 1.0 / inv_q
    return LossBudget(channels, other_loss, f, inv_q, q, t1_from_q(q, f), False)


def q_from_t1(T1: float, f: float) -> float:
    """Quality factor for T1 in µs at f in GHz."""
    if not (T1 > 0 and f > 0):
        raise InvalidArgument("T1 and f must be positive")
    return T1 * 1e-6 * 2 * math.pi * f * 1e9


def t1_from_q(Q: float, f: float) -> float:
    """T1 in µs for a quality factor at f in GHz."""
    if not (Q > 0 and f > 0):
        raise InvalidArgument("Q and f must be positive")
    return Q / (2 * math.pi * f * 1e9) * 1e6


def tan_delta_bound(Q_measured: float, p_sub: float) -> float:
    """Largest substrate loss tangent compatible with a measured Q."""
    if not Q_measured > 0 or not 0 < p_sub <= 1:
        raise InvalidArgument("need Q_measured > 0 and 0 < p_sub <= 1")
    return 1.0 / (p_sub * Q_measured)


@dataclass(frozen=True)
class PurcellParams:
    g: float  # MHz
    f_qubit: float  # GHz
    f_res: float  # GHz
    Q_c: float

    def __post_init__(self) -> None:
        if self.g < 0 or not self.Q_c > 0 or not self.f_res > 0 or not self.f_qubit > 0:
            raise InvalidArgument("need g >= 0 and positive frequencies and Q_c")


def purcell_limit(params: PurcellParams) -> float:
    """T1 ceiling in µs from decay through the readout resonator (dispersive limit)."""
    detuning = (params.f_res - params.f_qubit) * 1e9
    if detuning == 0:
        raise DivergentRate("qubit and resonator are degenerate; the dispersive rate diverges")
    kappa = 2 * math.pi * params.f_res * 1e9 / params.Q_c
    rate = (params.g * 1e6 / detuning) ** 2 * kappa
    return math.inf if rate == 0 else 1e6 / rate


@dataclass(frozen=True)
class ComparisonRow:
    design: str
    p_over_t: dict[str, float]
    p_sub: float
    Q_combined: float
    Q_by_interface: dict[str, float]  # loss placed on one interface only

    @property
    def inverse_p_sa(self) -> float:
        return 1.0 / self.p_over_t["SA"] if self.p_over_t["SA"] > 0 else math.inf


@dataclass(frozen=True)
class Comparison:
    trench: float  # nm
    rows: tuple[ComparisonRow, ...]
    sweeps: tuple[SweepResult, ...] = field(repr=False, default=())
    fits: tuple[dict[str, LogFit], ...] = field(repr=False, default=())


def _q(inv_q: float) -> float:
    return math.inf if inv_q == 0 else 1.0 / inv_q


def compare_designs(designs: Sequence, trench: float = 50.0, materials: MaterialStack | None = None,
                    controls: MeshControls | None = None,
                    depths: Sequence[float] = (300.0, 400.0, 600.0, 1000.0), other_loss: float = 0.0,
                    jobs: int = 1, cutoff: float = DEFAULT_CUTOFF_NM) -> Comparison:
    """Sweep each design, extrapolate p/t to ``trench`` nm and predict Q.

    Q is predicted with all three interfaces lossy and, side by side, with the
    surface loss placed on one interface at a time. Substrate and ``other_loss``
    enter every prediction; p_sub is taken at the shallowest simulated depth.
    """
    designs = list(designs)
    if len(designs) < 2:
        raise InvalidArgument("comparison needs at least two designs")
    materials = materials or MaterialStack()
    tan = materials.loss_tangents
    thick = materials.layer_thicknesses
    rows, sweeps, fits = [], [], []
    for design in designs:
        sweep = trench_sweep(design, depths, controls, materials, jobs=jobs, cutoff=cutoff)
        fit = log_extrapolate(sweep, trench)
        p = {tag: fit[tag].extrapolated_value for tag in INTERFACES}
        p_sub = sweep.reports[0].p_bulk["substrate"]
        surface = {tag: p[tag] * thick[tag] * 1e-9 * tan[tag] for tag in INTERFACES}
        common = p_sub * tan["substrate"] + other_loss
        rows.append(ComparisonRow(
            design=sweep.design, p_over_t=p, p_sub=p_sub,
            Q_combined=_q(math.fsum(surface.values()) + common),
            Q_by_interface={tag: _q(surface[tag] + common) for tag in INTERFACES},
        ))
        sweeps.append(sweep)
        fits.append(fit)
    return Comparison(float(trench), tuple(rows), tuple(sweeps), tuple(fits))

"""Parametric planar-qubit cross sections.

A design is reduced to one 2D cut through the shunt capacitor: perpendicular to
the fingers for interdigitated styles, across the pad gap for pad pairs. The cut
is materialized as axis-aligned rectangles (substrate, vacuum, conductor) that
tile a bounding box, plus tagged boundary segments (SM, SA, MA, outer).

Dimensions in :class:`DesignParams` use µm and nm as named; everything in a
:class:`LayoutSpec` is in metres.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Literal

from shapely.geometry import LineString, MultiLineString, Polygon, box
from shapely.ops import linemerge, unary_union

from .errors import ConstructionError, InvalidArgument

UM = 1e-6
NM = 1e-9

Style = Literal["interdigitated", "pad-pair"]
Material = Literal["substrate", "vacuum", "conductor"]
INTERFACES = ("SM", "SA", "MA")
GROUND = "ground"

# Domain extent relative to the electrode footprint, laterally and in depth.
BOX_FACTOR = 10.0


@dataclass(frozen=True)
class DesignParams:
    """Shunt-capacitor geometry.

    ``conductor_width`` is the finger width (interdigitated) or the pad extent
    across the gap (pad-pair). ``pad_height`` is the pad extent along the gap
    and ``finger_length`` the finger overlap length; both only enter the 2D to
    3D capacitance estimate.
    """

    style: Style
    conductor_width: float  # µm
    gap: float  # µm
    n_repeats: int = 1
    metal_thickness: float = 200.0  # nm
    pad_height: float | None = None  # µm
    ground_box_span: float = 650.0  # µm
    finger_length: float | None = None  # µm
    include_ground: bool = True

    def __post_init__(self) -> None:
        if self.style not in ("interdigitated", "pad-pair"):
            raise InvalidArgument(f"unknown style {self.style!r}")
        for name in ("conductor_width", "gap", "metal_thickness", "ground_box_span"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise InvalidArgument(f"{name} must be strictly positive, got {value!r}")
        for name in ("pad_height", "finger_length"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise InvalidArgument(f"{name} must be strictly positive, got {value!r}")
        if int(self.n_repeats) != self.n_repeats or self.n_repeats < 1:
            raise InvalidArgument(f"n_repeats must be an integer >= 1, got {self.n_repeats!r}")

    @property
    def extrusion_length(self) -> float | None:
        """Length (µm) the cross-section is extruded over for capacitance estimates."""
        if self.style == "pad-pair":
            return self.pad_height
        return self.finger_length

    @property
    def electrode_extent(self) -> float:
        """Lateral extent (µm) of the driven electrodes."""
        if self.style == "pad-pair":
            return 2 * self.conductor_width + self.gap
        n = self.n_repeats
        return n * self.conductor_width + (n - 1) * self.gap


@dataclass(frozen=True)
class ModPreset:
    id: str
    params: DesignParams
    coupling_g: float  # MHz


# Finger counts and lengths are not given for the IDC styles; they are chosen so
# the 2D-per-length capacitance times finger_length lands near the ~55 fF shunt
# needed for a 350 MHz charging energy.
_PRESETS = {
    "A": ModPreset("A", DesignParams("interdigitated", 1.0, 1.0, n_repeats=12, finger_length=83.5), 8.0),
    "B": ModPreset("B", DesignParams("interdigitated", 5.0, 5.0, n_repeats=10, finger_length=104.0), 20.0),
    "C": ModPreset("C", DesignParams("interdigitated", 20.0, 20.0, n_repeats=8, finger_length=132.5), 45.0),
    "D": ModPreset("D", DesignParams("pad-pair", 60.0, 20.0, pad_height=500.0), 52.0),
    "E": ModPreset("E", DesignParams("pad-pair", 120.0, 70.0, pad_height=500.0), 53.0),
}


def preset(mod_id: str) -> ModPreset:
    """Return the fixed MOD A-E design. Accepts ``"C"``, ``"c"`` or ``"mod_c"``."""
    key = str(mod_id).strip().upper()
    if key.startswith("MOD_") or key.startswith("MOD "):
        key = key[4:]
    if key not in _PRESETS:
        raise InvalidArgument(f"unknown design {mod_id!r}; expected one of A-E or mod_a..mod_e")
    return _PRESETS[key]


def preset_ids() -> tuple[str, ...]:
    return tuple(_PRESETS)


@dataclass(frozen=True)
class Region:
    polygon: tuple[tuple[float, float], ...]
    material: Material
    name: str = ""  # electrode name for conductors


@dataclass(frozen=True)
class Segment:
    points: tuple[tuple[float, float], ...]
    tag: str  # SM, SA, MA or outer
    kind: str = ""  # "top", "floor" or "sidewall" for SA pieces

    @property
    def length(self) -> float:
        return sum(math.dist(a, b) for a, b in zip(self.points, self.points[1:]))


@dataclass(frozen=True)
class LayoutSpec:
    regions: tuple[Region, ...]
    segments: tuple[Segment, ...]
    trench_depth: float  # m
    bbox: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax in m
    params: DesignParams | None = None
    electrodes: tuple[str, ...] = field(default=())

    def conductors(self) -> tuple[Region, ...]:
        return tuple(r for r in self.regions if r.material == "conductor")

    def segments_tagged(self, tag: str) -> tuple[Segment, ...]:
        return tuple(s for s in self.segments if s.tag == tag)

    def tag_length(self, tag: str, kinds: tuple[str, ...] | None = None) -> float:
        return sum(s.length for s in self.segments if s.tag == tag and (kinds is None or s.kind in kinds))


def _rect(x0: float, y0: float, x1: float, y1: float) -> tuple[tuple[float, float], ...]:
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


def _electrode_spans(params: DesignParams) -> list[tuple[float, float, str]]:
    w = params.conductor_width * UM
    g = params.gap * UM
    extent = params.electrode_extent * UM
    if params.style == "pad-pair":
        return [(-extent / 2, -extent / 2 + w, "P"), (extent / 2 - w, extent / 2, "N")]
    spans = []
    for i in range(params.n_repeats):
        x0 = -extent / 2 + i * (w + g)
        spans.append((x0, x0 + w, "P" if i % 2 == 0 else "N"))
    return spans


def build_layout(params: DesignParams, trench_depth: float) -> LayoutSpec:
    """Materialize ``params`` into a tagged cross-section with the given trench depth (nm).

    Conductors sit on un-recessed substrate mesas; every exposed stretch of
    substrate is recessed by ``trench_depth`` with vertical sidewalls and a
    flat floor. Ground planes (``include_ground``) start at half the ground box
    span and run to the bounding box.
    """
    if not isinstance(params, DesignParams):
        raise InvalidArgument("params must be a DesignParams")
    if not (trench_depth >= 0 and math.isfinite(trench_depth)):
        raise InvalidArgument(f"trench_depth must be >= 0, got {trench_depth!r}")

    d = trench_depth * NM
    t = params.metal_thickness * NM
    extent = params.electrode_extent * UM
    spans = _electrode_spans(params)
    ref = extent
    if params.include_ground:
        half_span = params.ground_box_span * UM / 2
        if half_span <= extent / 2:
            raise ConstructionError(
                f"ground box span {params.ground_box_span} um overlaps electrodes of extent {params.electrode_extent} um"
            )
        ref = max(ref, 2 * half_span)
    half_w = BOX_FACTOR * ref / 2
    depth = BOX_FACTOR * ref
    height = BOX_FACTOR * ref
    if d >= depth:
        raise ConstructionError("trench deeper than the modelled substrate")
    if params.include_ground:
        spans = [(-half_w, -half_span, GROUND)] + spans + [(half_span, half_w, GROUND)]
    for (a0, a1, _), (b0, _, _) in zip(spans, spans[1:]):
        if not a1 < b0:
            raise ConstructionError("conductors overlap or touch")

    bbox = (-half_w, -depth, half_w, height)
    regions: list[Region] = []
    segments: list[Segment] = []

    # exposed substrate intervals between conductors
    exposed = []
    cursor = -half_w
    for x0, x1, _ in spans:
        if x0 > cursor:
            exposed.append((cursor, x0))
        cursor = x1
    if cursor < half_w:
        exposed.append((cursor, half_w))

    regions.append(Region(_rect(-half_w, -depth, half_w, -d if d > 0 else 0.0), "substrate"))
    for x0, x1, name in spans:
        if d > 0:
            regions.append(Region(_rect(x0, -d, x1, 0.0), "substrate"))
        regions.append(Region(_rect(x0, 0.0, x1, t), "conductor", name))
    for a, b in exposed:
        if d > 0:
            regions.append(Region(_rect(a, -d, b, 0.0), "vacuum"))
        regions.append(Region(_rect(a, 0.0, b, t), "vacuum"))
    regions.append(Region(_rect(-half_w, t, half_w, height), "vacuum"))

    for x0, x1, _ in spans:
        segments.append(Segment(((x0, 0.0), (x1, 0.0)), "SM"))
        segments.append(Segment(((x0, t), (x1, t)), "MA"))
        if x0 > -half_w:
            segments.append(Segment(((x0, 0.0), (x0, t)), "MA"))
        if x1 < half_w:
            segments.append(Segment(((x1, 0.0), (x1, t)), "MA"))
    for a, b in exposed:
        if d > 0:
            segments.append(Segment(((a, -d), (b, -d)), "SA", "floor"))
            if a > -half_w:
                segments.append(Segment(((a, 0.0), (a, -d)), "SA", "sidewall"))
            if b < half_w:
                segments.append(Segment(((b, -d), (b, 0.0)), "SA", "sidewall"))
        else:
            segments.append(Segment(((a, 0.0), (b, 0.0)), "SA", "top"))
    x0, y0, x1, y1 = bbox
    segments.append(Segment(((x0, y0), (x1, y0)), "outer"))
    segments.append(Segment(((x1, y0), (x1, y1)), "outer"))
    segments.append(Segment(((x1, y1), (x0, y1)), "outer"))
    segments.append(Segment(((x0, y1), (x0, y0)), "outer"))

    electrodes = tuple(dict.fromkeys(name for _, _, name in spans))
    return LayoutSpec(tuple(regions), tuple(segments), d, bbox, params, electrodes)


def mirror(layout: LayoutSpec) -> LayoutSpec:
    """Reflect about x = 0, swapping the P and N electrode labels."""
    swap = {"P": "N", "N": "P"}

    def flip(points):
        return tuple((-x, y) for x, y in points)

    regions = tuple(
        Region(flip(r.polygon), r.material, swap.get(r.name, r.name)) for r in layout.regions
    )
    segments = tuple(Segment(flip(s.points), s.tag, s.kind) for s in layout.segments)
    x0, y0, x1, y1 = layout.bbox
    return dataclasses.replace(layout, regions=regions, segments=segments, bbox=(-x1, y0, -x0, y1))


def _lines(segments) -> MultiLineString:
    return MultiLineString([LineString(s.points) for s in segments])


def _length(geom) -> float:
    return 0.0 if geom.is_empty else geom.length


def validate(layout: LayoutSpec) -> list[str]:
    """Return every violated layout invariant; an empty list means the layout is valid."""
    problems: list[str] = []
    x0, y0, x1, y1 = layout.bbox
    frame = box(x0, y0, x1, y1)
    scale = max(x1 - x0, y1 - y0)
    tol_area = 1e-12 * frame.area
    tol_len = 1e-9 * scale

    polys = []
    for i, region in enumerate(layout.regions):
        poly = Polygon(region.polygon)
        if not poly.is_valid or poly.area <= 0:
            problems.append(f"region {i} ({region.material}) is degenerate or self-intersecting")
            continue
        if poly.difference(frame).area > tol_area:
            problems.append(f"region {i} ({region.material}) extends outside the bounding box")
        if region.material == "conductor" and not region.name:
            problems.append(f"conductor region {i} has no electrode name")
        polys.append((i, region, poly))

    for a in range(len(polys)):
        for b in range(a + 1, len(polys)):
            ia, ra, pa = polys[a]
            ib, rb, pb = polys[b]
            if pa.intersection(pb).area > tol_area:
                problems.append(f"overlap between region {ia} ({ra.material}) and region {ib} ({rb.material})")
    covered = unary_union([p for _, _, p in polys]) if polys else Polygon()
    if abs(covered.area - frame.area) > 1e-9 * frame.area or frame.difference(covered).area > tol_area:
        problems.append("regions do not tile the bounding box")

    by_material = {
        m: unary_union([p for _, r, p in polys if r.material == m]) for m in ("substrate", "vacuum", "conductor")
    }
    frame_edge = frame.boundary

    def shared(m1: str, m2: str):
        if by_material[m1].is_empty or by_material[m2].is_empty:
            return LineString()
        return by_material[m1].boundary.intersection(by_material[m2].boundary)

    expected = {"SM": shared("conductor", "substrate"), "MA": shared("conductor", "vacuum"),
                "SA": shared("substrate", "vacuum")}
    for tag, interface in expected.items():
        tagged = layout.segments_tagged(tag)
        lines = _lines(tagged) if tagged else LineString()
        missing = _length(interface.difference(lines.buffer(tol_len, cap_style="flat")))
        if missing > tol_len * 10:
            problems.append(f"missing-tag: {missing:.3e} m of {tag} boundary carries no {tag} segment")
        for k, seg in enumerate(tagged):
            stray = _length(LineString(seg.points).difference(interface.buffer(tol_len, cap_style="flat")))
            if stray > tol_len * 10:
                problems.append(f"{tag} segment {k} does not lie on a {tag} boundary")

    conductor_edge = by_material["conductor"].boundary.difference(frame_edge.buffer(tol_len, cap_style="flat"))
    cond_tags = [s for s in layout.segments if s.tag in ("SM", "MA")]
    untagged = _length(conductor_edge.difference(_lines(cond_tags).buffer(tol_len, cap_style="flat"))) if cond_tags \
        else _length(conductor_edge)
    if untagged > tol_len * 10:
        problems.append(f"missing-tag: {untagged:.3e} m of conductor boundary is neither SM nor MA")

    interior = [s for s in layout.segments if s.tag != "outer"]
    for a in range(len(interior)):
        la = LineString(interior[a].points)
        for b in range(a + 1, len(interior)):
            overlap = la.intersection(LineString(interior[b].points))
            if _length(overlap) > tol_len * 10:
                problems.append(
                    f"double-tag: segments {interior[a].tag} and {interior[b].tag} overlap over {overlap.length:.3e} m"
                )

    outer = layout.segments_tagged("outer")
    if outer:
        merged = linemerge(unary_union(_lines(outer)))
        if abs(_length(merged) - frame_edge.length) > tol_len * 10:
            problems.append("outer segments do not trace the bounding box")
    else:
        problems.append("missing-tag: bounding box has no outer segments")

    d = layout.trench_depth
    if d < 0:
        problems.append("negative trench depth")
    # planar designs only: plates of a parallel-plate fixture rest on the box edge
    for region in layout.conductors() if layout.params is not None else ():
        cpoly = Polygon(region.polygon)
        footprint = LineString([(cpoly.bounds[0], cpoly.bounds[1]), (cpoly.bounds[2], cpoly.bounds[1])])
        support = _length(footprint.intersection(by_material["substrate"].boundary))
        if support < footprint.length - tol_len * 10:
            problems.append(f"conductor {region.name!r} is not fully supported by substrate")
    return problems


def parallel_plate_layout(width: float, layers, plate_thickness: float = 1.0) -> LayoutSpec:
    """Two full-width plates (``P`` below, ``N`` above) around a stack of dielectric layers.

    ``layers`` lists ``(material, thickness_um)`` from bottom to top. The plates
    span the whole box, so with the natural side condition the field is exactly
    uniform inside each layer. Lengths in µm.
    """
    if not width > 0 or not plate_thickness > 0 or not layers:
        raise InvalidArgument("width, plate_thickness and at least one layer are required")
    w = width * UM
    tp = plate_thickness * UM
    regions = []
    segments = []
    y = 0.0
    stack = []
    for material, thickness in layers:
        if material not in ("substrate", "vacuum") or not thickness > 0:
            raise InvalidArgument(f"bad layer {(material, thickness)!r}")
        top = y + thickness * UM
        regions.append(Region(_rect(-w / 2, y, w / 2, top), material))
        stack.append((material, y, top))
        y = top
    regions.insert(0, Region(_rect(-w / 2, -tp, w / 2, 0.0), "conductor", "P"))
    regions.append(Region(_rect(-w / 2, y, w / 2, y + tp), "conductor", "N"))
    face = {"substrate": "SM", "vacuum": "MA"}
    segments.append(Segment(((-w / 2, 0.0), (w / 2, 0.0)), face[stack[0][0]]))
    segments.append(Segment(((-w / 2, y), (w / 2, y)), face[stack[-1][0]]))
    for (m0, _, top), (m1, _, _) in zip(stack, stack[1:]):
        if m0 != m1:
            segments.append(Segment(((-w / 2, top), (w / 2, top)), "SA", "top"))
    bbox = (-w / 2, -tp, w / 2, y + tp)
    x0, y0, x1, y1 = bbox
    segments += [Segment(((x0, y0), (x1, y0)), "outer"), Segment(((x1, y0), (x1, y1)), "outer"),
                 Segment(((x1, y1), (x0, y1)), "outer"), Segment(((x0, y1), (x0, y0)), "outer")]
    return LayoutSpec(tuple(regions), tuple(segments), 0.0, bbox, None, ("P", "N"))

"""Graded conforming triangulation of rectilinear cross sections.

Meshes come from a rectilinear quadtree: each layout rectangle is subdivided
until cells are no larger than ``corner_h_min + (grading_ratio - 1) * r``, with ``r`` the distance to the
nearest conductor corner. Cells keep aspect ratio <= 2 and are balanced so no
side carries more than one hanging vertex, which bounds triangle angles.
Where two independently subdivided rectangles meet, vertices that land
almost on top of each other are merged along the shared line. Triangulation
choices are mirrored across x = 0 so symmetric layouts give symmetric meshes.

Adaptive refinement uses longest-edge (Rivara) bisection with a global strict
edge order, which keeps the mesh conforming and is fully deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .errors import InvalidArgument, MeshingError
from .geometry import NM, UM, LayoutSpec

if TYPE_CHECKING:
    from .field_solver import FieldSolution

REGION_NAMES = ("substrate", "vacuum")
SUBSTRATE, VACUUM = 0, 1
CONDUCTOR_TAGS = ("SM", "MA")


@dataclass(frozen=True)
class MeshControls:
    h_max: float = 50.0  # µm
    corner_h_min: float = 1.0  # nm
    grading_ratio: float = 1.3
    max_refine_passes: int = 0

    def __post_init__(self) -> None:
        if not (self.h_max > 0 and self.corner_h_min > 0):
            raise InvalidArgument("mesh sizes must be positive")
        if not self.corner_h_min * NM < self.h_max * UM:
            raise InvalidArgument("corner_h_min must be smaller than h_max")
        if not 1.0 < self.grading_ratio <= 3.0:
            raise InvalidArgument(f"grading_ratio must lie in (1, 3], got {self.grading_ratio}")
        if int(self.max_refine_passes) != self.max_refine_passes or self.max_refine_passes < 0:
            raise InvalidArgument("max_refine_passes must be a non-negative integer")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangle mesh (coordinates in metres).

    ``boundary_edges`` holds every tagged edge: conductor faces (SM, MA),
    substrate/vacuum interfaces (SA) and the bounding box (outer).
    ``node_electrode`` is the index into ``electrodes`` for Dirichlet nodes and
    -1 for free nodes.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    regions: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    edge_kinds: np.ndarray
    edge_segments: np.ndarray
    node_electrode: np.ndarray
    electrodes: tuple[str, ...]
    corners: np.ndarray
    bbox: tuple[float, float, float, float]

    def __post_init__(self) -> None:
        for name in ("vertices", "triangles", "regions", "boundary_edges", "edge_tags", "edge_kinds",
                     "edge_segments", "node_electrode", "corners"):
            getattr(self, name).flags.writeable = False

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def edges(self) -> EdgeTable:
        return edge_table(self.triangles, self.n_vertices)


@dataclass(frozen=True)
class EdgeTable:
    edges: np.ndarray  # (E, 2) sorted vertex pairs
    owners: np.ndarray  # (E, 2) triangle ids, -1 where absent
    tri_edges: np.ndarray  # (M, 3) edge ids; local edge k joins vertices k and k+1

    def lookup(self, pairs: np.ndarray, n_vertices: int) -> np.ndarray:
        """Edge ids for vertex pairs (order-insensitive); -1 where not a mesh edge."""
        pairs = np.sort(np.asarray(pairs, dtype=np.int64), axis=1)
        keys = self.edges[:, 0] * n_vertices + self.edges[:, 1]
        q = pairs[:, 0] * n_vertices + pairs[:, 1]
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, len(keys) - 1)
        return np.where(keys[pos] == q, pos, -1)


def edge_table(triangles: np.ndarray, n_vertices: int) -> EdgeTable:
    m = len(triangles)
    t = triangles.astype(np.int64, copy=False)
    a = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
    b = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    keys = np.minimum(a, b) * n_vertices + np.maximum(a, b)
    del a, b
    order = np.argsort(keys, kind="stable")  # local edge k of triangle i sits at k * m + i
    sorted_keys = keys[order]
    del keys
    new = np.empty(len(order), dtype=bool)
    new[:1] = True
    np.not_equal(sorted_keys[1:], sorted_keys[:-1], out=new[1:])
    starts = np.flatnonzero(new)
    uniq = sorted_keys[starts]
    del sorted_keys
    counts = np.diff(np.append(starts, len(order)))
    if counts.max(initial=0) > 2:
        raise MeshingError("non-manifold mesh: an edge is shared by more than two triangles")
    edges = np.stack([uniq // n_vertices, uniq % n_vertices], axis=1)
    del uniq
    owners = np.full((len(starts), 2), -1, dtype=np.int64)
    owners[:, 0] = order[starts] % m
    two = counts == 2
    owners[two, 1] = order[starts[two] + 1] % m
    inv = np.empty(len(order), dtype=np.int64)
    inv[order] = np.cumsum(new) - 1
    del order, new
    tri_edges = inv.reshape(3, m).T.copy()
    return EdgeTable(edges, owners, tri_edges)


def _rect_bounds(polygon) -> tuple[float, float, float, float]:
    xs = [p[0] for p in polygon]
    ys = [p[1] for p in polygon]
    bounds = (min(xs), min(ys), max(xs), max(ys))
    if len(polygon) != 4 or any(x not in (bounds[0], bounds[2]) or y not in (bounds[1], bounds[3])
                                for x, y in polygon):
        raise MeshingError("only axis-aligned rectangular regions can be meshed")
    return bounds


def _corner_distance(cells: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Distance from each rectangle (x0, y0, x1, y1) to its nearest corner point."""
    if not len(corners):
        return np.full(len(cells), np.inf)
    out = np.empty(len(cells))
    for start in range(0, len(cells), 4096):
        c = cells[start:start + 4096]
        dx = np.maximum(np.maximum(c[:, 0:1] - corners[None, :, 0], corners[None, :, 0] - c[:, 2:3]), 0.0)
        dy = np.maximum(np.maximum(c[:, 1:2] - corners[None, :, 1], corners[None, :, 1] - c[:, 3:4]), 0.0)
        out[start:start + 4096] = np.hypot(dx, dy).min(axis=1)
    return out


def _split(cells: np.ndarray, regions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Halve cells along each axis that is not already much shorter than the other."""
    x0, y0, x1, y1 = cells.T
    w, h = x1 - x0, y1 - y0
    sx = w > h / math.sqrt(2)
    sy = h > w / math.sqrt(2)
    xm = np.where(sx, 0.5 * (x0 + x1), x1)
    ym = np.where(sy, 0.5 * (y0 + y1), y1)
    parts = [np.stack([x0, y0, xm, ym], 1)]
    parts.append(np.stack([xm, y0, x1, ym], 1)[sx])
    parts.append(np.stack([x0, ym, xm, y1], 1)[sy])
    parts.append(np.stack([xm, ym, x1, y1], 1)[sx & sy])
    regs = [regions, regions[sx], regions[sy], regions[sx & sy]]
    return np.concatenate(parts), np.concatenate(regs)


class _VertexIndex:
    """Exact lookup of leaf-corner vertices lying on axis-aligned cell sides."""

    def __init__(self, cells: np.ndarray) -> None:
        self.xs = np.unique(np.concatenate([cells[:, 0], cells[:, 2]]))
        self.ys = np.unique(np.concatenate([cells[:, 1], cells[:, 3]]))
        self.nx, self.ny = len(self.xs), len(self.ys)
        r = self.ranks(cells)
        xr = np.concatenate([r[:, 0], r[:, 2], r[:, 2], r[:, 0]])
        yr = np.concatenate([r[:, 1], r[:, 1], r[:, 3], r[:, 3]])
        self.by_row = np.unique(yr * self.nx + xr)  # vertex id == position here
        col = (self.by_row % self.nx) * self.ny + self.by_row // self.nx
        self.col_order = np.argsort(col, kind="stable")
        self.by_col = col[self.col_order]

    def ranks(self, cells: np.ndarray) -> np.ndarray:
        return np.stack([np.searchsorted(self.xs, cells[:, 0]), np.searchsorted(self.ys, cells[:, 1]),
                         np.searchsorted(self.xs, cells[:, 2]), np.searchsorted(self.ys, cells[:, 3])], 1)

    def coords(self) -> np.ndarray:
        return np.stack([self.xs[self.by_row % self.nx], self.ys[self.by_row // self.nx]], 1)

    def vertex(self, xr: np.ndarray, yr: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.by_row, yr * self.nx + xr)

    def on_row(self, yr, xa, xb) -> tuple[np.ndarray, np.ndarray]:
        """Count and first vertex id strictly between ranks xa and xb on row yr."""
        lo = np.searchsorted(self.by_row, yr * self.nx + xa + 1)
        hi = np.searchsorted(self.by_row, yr * self.nx + xb)
        return hi - lo, lo

    def on_col(self, xr, ya, yb) -> tuple[np.ndarray, np.ndarray]:
        lo = np.searchsorted(self.by_col, xr * self.ny + ya + 1)
        hi = np.searchsorted(self.by_col, xr * self.ny + yb)
        first = self.col_order[np.minimum(lo, len(self.col_order) - 1)]
        return hi - lo, first


def _side_counts(cells: np.ndarray) -> tuple[_VertexIndex, np.ndarray, np.ndarray]:
    """Hanging-vertex counts and ids per side (bottom, right, top, left)."""
    index = _VertexIndex(cells)
    r = index.ranks(cells)
    counts = np.empty((len(cells), 4), dtype=np.int64)
    first = np.empty((len(cells), 4), dtype=np.int64)
    counts[:, 0], first[:, 0] = index.on_row(r[:, 1], r[:, 0], r[:, 2])
    counts[:, 1], first[:, 1] = index.on_col(r[:, 2], r[:, 1], r[:, 3])
    counts[:, 2], first[:, 2] = index.on_row(r[:, 3], r[:, 0], r[:, 2])
    counts[:, 3], first[:, 3] = index.on_col(r[:, 0], r[:, 1], r[:, 3])
    return index, counts, first


def _pinned(verts: np.ndarray, rects, axis: int) -> np.ndarray:
    """Vertices lying on a region side perpendicular to ``axis`` (they may not slide along it)."""
    out = np.zeros(len(verts), dtype=bool)
    a, b = verts[:, axis], verts[:, 1 - axis]
    for bounds, _ in rects:
        lo, hi = bounds[1 - axis], bounds[3 - axis]
        for edge in (bounds[axis], bounds[axis + 2]):
            out |= (a == edge) & (b >= lo) & (b <= hi)
    return out


def _snap_targets(verts: np.ndarray, order: np.ndarray, axis: int, movable: np.ndarray) -> list[tuple[int, int]]:
    """Pairs (moved, kept) of near-coincident neighbours along grid lines.

    Independent subdivisions meeting on a shared line interleave their vertices;
    a pair much closer than its neighbours would leave a sliver, so one of the
    two slides onto the other.
    """
    v = verts[order]
    line = v[:, 1 - axis]
    pos = v[:, axis]
    same = line[1:] == line[:-1]
    gap = np.where(same, pos[1:] - pos[:-1], np.inf)
    before = np.concatenate([[np.inf], gap[:-1]])
    after = np.concatenate([gap[1:], [np.inf]])
    close = np.flatnonzero(same & (gap < 0.2 * np.minimum(before, after)))
    pairs, used = [], set()
    for k in close:
        a, b = int(order[k]), int(order[k + 1])
        if a in used or b in used:
            continue
        if movable[a] and movable[b]:
            # keep the vertex nearer the symmetry axis so mirrored layouts snap alike
            moved, kept = (a, b) if abs(verts[a, 0]) > abs(verts[b, 0]) else (b, a)
        elif movable[a]:
            moved, kept = a, b
        elif movable[b]:
            moved, kept = b, a
        else:
            continue
        used.update((a, b))
        pairs.append((moved, kept))
    return pairs


def generate_mesh(layout: LayoutSpec, controls: MeshControls) -> Mesh:
    """Triangulate ``layout`` with element sizes graded toward conductor corners.

    Every region rectangle is quadtree refined until each cell is at most ``corner_h_min + (grading_ratio - 1) * r``
    across (``r`` = distance to the nearest conductor corner, capped at
    ``h_max``) with aspect ratio <= 2. Cells are then balanced to at most one
    hanging vertex per side and triangulated: two triangles for plain cells,
    a fan around the cell centre where neighbours left hanging vertices.
    Near-coincident vertices on lines shared by two rectangles are merged.
    """
    h_min = controls.corner_h_min * NM
    h_max = controls.h_max * UM
    ratio = controls.grading_ratio
    x0, y0, x1, y1 = layout.bbox
    scale = max(x1 - x0, y1 - y0)
    tol = 1e-9 * scale

    rects = [(_rect_bounds(r.polygon), r) for r in layout.regions]
    xkeys = sorted({x0, x1, 0.0} | {b[0] for b, _ in rects} | {b[2] for b, _ in rects})
    ykeys = sorted({y0, y1} | {b[1] for b, _ in rects} | {b[3] for b, _ in rects})
    feature = min(np.diff(xkeys).min(), np.diff(ykeys).min())
    if h_min >= feature:
        raise MeshingError(
            f"corner_h_min {controls.corner_h_min} nm is not below the smallest feature gap {feature / NM:.3g} nm"
        )
    corners = sorted({p for b, r in rects if r.material == "conductor" for p in r.polygon
                      if x0 < p[0] < x1 and y0 < p[1] < y1})
    corner_arr = np.asarray(corners, dtype=float).reshape(-1, 2)
    # bends of the substrate/vacuum interface (trench floor corners) carry a weaker
    # dielectric singularity, so the size field grades toward them as well
    bends = {p for seg in layout.segments if seg.tag == "SA" for p in seg.points
             if x0 < p[0] < x1 and y0 < p[1] < y1}
    grading = np.asarray(sorted(set(corners) | bends), dtype=float).reshape(-1, 2)

    coarse = np.asarray([b for b, _ in rects], dtype=float)
    codes = {"substrate": SUBSTRATE, "vacuum": VACUUM, "conductor": 2}
    reg = np.asarray([codes[r.material] for _, r in rects], dtype=np.int8)
    keep = reg != 2
    pending, pending_reg = coarse[keep], reg[keep]

    done, done_reg = [], []
    while len(pending):
        w = pending[:, 2] - pending[:, 0]
        h = pending[:, 3] - pending[:, 1]
        target = np.minimum(h_max, h_min + (ratio - 1.0) * _corner_distance(pending, grading))
        need = (np.maximum(w, h) > target * (1 + 1e-9)) | (np.maximum(w / h, h / w) > 2.0)
        done.append(pending[~need])
        done_reg.append(pending_reg[~need])
        pending, pending_reg = _split(pending[need], pending_reg[need])
    cells = np.concatenate(done)
    cell_reg = np.concatenate(done_reg)

    while True:
        index, counts, first = _side_counts(cells)
        need = (counts > 1).any(axis=1)
        if not need.any():
            break
        new, new_reg = _split(cells[need], cell_reg[need])
        cells = np.concatenate([cells[~need], new])
        cell_reg = np.concatenate([cell_reg[~need], new_reg])
    order = np.lexsort((cells[:, 0], cells[:, 1]))
    cells, cell_reg = cells[order], cell_reg[order]
    index, counts, first = _side_counts(cells)

    verts = index.coords()
    r = index.ranks(cells)
    c00 = index.vertex(r[:, 0], r[:, 1])
    c10 = index.vertex(r[:, 2], r[:, 1])
    c11 = index.vertex(r[:, 2], r[:, 3])
    c01 = index.vertex(r[:, 0], r[:, 3])
    plain = (counts == 0).all(axis=1)
    left = 0.5 * (cells[:, 0] + cells[:, 2]) < 0
    tri_list = []
    reg_list = []
    owner_list = []
    p = plain & left
    q = plain & ~left
    for mask, pair in ((p, ((c00, c10, c11), (c00, c11, c01))), (q, ((c00, c10, c01), (c10, c11, c01)))):
        for a, b, c in pair:
            tri_list.append(np.stack([a[mask], b[mask], c[mask]], 1))
            reg_list.append(cell_reg[mask])
            owner_list.append(np.flatnonzero(mask))
    fan = np.flatnonzero(~plain)
    centre = len(verts) + np.arange(len(fan))
    verts = np.concatenate([verts, 0.5 * (cells[fan, :2] + cells[fan, 2:])])
    ring = np.stack([c00[fan], np.where(counts[fan, 0] > 0, first[fan, 0], -1),
                     c10[fan], np.where(counts[fan, 1] > 0, first[fan, 1], -1),
                     c11[fan], np.where(counts[fan, 2] > 0, first[fan, 2], -1),
                     c01[fan], np.where(counts[fan, 3] > 0, first[fan, 3], -1)], 1)
    for k in range(8):
        a = ring[:, k]
        # next present vertex around the ring
        b = ring[:, (k + 1) % 8]
        b = np.where(b >= 0, b, ring[:, (k + 2) % 8])
        ok = a >= 0
        tri_list.append(np.stack([centre[ok], a[ok], b[ok]], 1))
        reg_list.append(cell_reg[fan[ok]])
        owner_list.append(fan[ok])
    tris = np.concatenate(tri_list)
    regions = np.concatenate(reg_list).astype(np.int8)
    order = np.argsort(np.concatenate(owner_list), kind="stable")
    tris, regions = tris[order], regions[order]
    # large meshes: release the cell-level arrays before the edge pass
    del cells, cell_reg, counts, first, r, c00, c10, c11, c01, plain, left, p, q, ring, fan, centre, a, b, ok
    del tri_list, reg_list, owner_list, order

    n_grid = len(index.by_row)
    grid = verts[:n_grid]
    remap = np.arange(len(verts))
    row_pairs = _snap_targets(grid, np.arange(n_grid), 0, ~_pinned(grid, rects, 0))
    col_pairs = _snap_targets(grid, index.col_order, 1, ~_pinned(grid, rects, 1))
    del index, grid
    touched = {v for pair in row_pairs for v in pair}
    for moved, kept in row_pairs + [p for p in col_pairs if not touched & set(p)]:
        remap[moved] = kept
    if (remap != np.arange(len(verts))).any():
        tris = remap[tris]
        ok = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
        tris, regions = tris[ok], regions[ok]
        used = np.zeros(len(verts), dtype=bool)
        used[tris] = True
        renumber = np.cumsum(used) - 1
        verts = verts[used]
        tris = renumber[tris]

    node_electrode = np.full(len(verts), -1, dtype=np.int64)
    electrodes = layout.electrodes or tuple(dict.fromkeys(r.name for r in layout.conductors()))
    for (bx0, by0, bx1, by1), region in rects:
        if region.material != "conductor":
            continue
        on = ((verts[:, 0] >= bx0 - tol) & (verts[:, 0] <= bx1 + tol)
              & (verts[:, 1] >= by0 - tol) & (verts[:, 1] <= by1 + tol))
        node_electrode[on] = electrodes.index(region.name)

    table = edge_table(tris, len(verts))
    own = table.owners
    single = own[:, 1] < 0
    r0 = regions[own[:, 0]]
    r1 = np.where(single, -1, regions[np.maximum(own[:, 1], 0)])
    cand = np.flatnonzero(single | (r0 != r1))
    bedges = table.edges[cand]
    single, r0 = single[cand], r0[cand]
    del table, own, r1
    ev = verts[bedges]
    on_bbox = (
        (np.abs(ev[:, :, 0] - x0) < tol).all(1) | (np.abs(ev[:, :, 0] - x1) < tol).all(1)
        | (np.abs(ev[:, :, 1] - y0) < tol).all(1) | (np.abs(ev[:, :, 1] - y1) < tol).all(1)
    )
    btags = np.full(len(cand), "SA", dtype="<U5")
    btags[single & on_bbox] = "outer"
    btags[single & ~on_bbox & (r0 == SUBSTRATE)] = "SM"
    btags[single & ~on_bbox & (r0 == VACUUM)] = "MA"

    seg_index = np.full(len(bedges), -1, dtype=np.int64)
    kinds = np.full(len(bedges), "", dtype="<U8")
    p = verts[bedges]
    for k, seg in enumerate(layout.segments):
        for (ax, ay), (bx, by) in zip(seg.points, seg.points[1:]):
            dx, dy = bx - ax, by - ay
            seg_len2 = dx * dx + dy * dy
            cross0 = np.abs(dx * (p[:, 0, 1] - ay) - dy * (p[:, 0, 0] - ax))
            cross1 = np.abs(dx * (p[:, 1, 1] - ay) - dy * (p[:, 1, 0] - ax))
            s0 = (dx * (p[:, 0, 0] - ax) + dy * (p[:, 0, 1] - ay)) / seg_len2
            s1 = (dx * (p[:, 1, 0] - ax) + dy * (p[:, 1, 1] - ay)) / seg_len2
            hit = ((cross0 < tol * math.sqrt(seg_len2)) & (cross1 < tol * math.sqrt(seg_len2))
                   & (np.minimum(s0, s1) > -1e-9) & (np.maximum(s0, s1) < 1 + 1e-9)
                   & (btags == seg.tag) & (seg_index < 0))
            seg_index[hit] = k
            kinds[hit] = seg.kind
    if (seg_index[btags != "outer"] < 0).any():
        raise MeshingError("mesh interface edges not covered by any layout segment")

    return Mesh(
        vertices=verts,
        triangles=tris,
        regions=regions,
        boundary_edges=bedges,
        edge_tags=btags,
        edge_kinds=kinds,
        edge_segments=seg_index,
        node_electrode=node_electrode,
        electrodes=tuple(electrodes),
        corners=corner_arr,
        bbox=layout.bbox,
    )


def check_mesh(mesh: Mesh) -> list[str]:
    """List violated mesh invariants (conformity, orientation, tagging)."""
    problems = []
    areas = mesh.areas()
    if (areas <= 0).any():
        problems.append(f"{int((areas <= 0).sum())} triangles with non-positive signed area")
    try:
        table = mesh.edges()
    except MeshingError as exc:
        return problems + [str(exc)]
    single = table.owners[:, 1] < 0
    tagged = table.lookup(mesh.boundary_edges, mesh.n_vertices)
    if (tagged < 0).any():
        problems.append("tagged boundary edges that are not mesh edges")
    boundary_ok = np.zeros(len(table.edges), dtype=bool)
    closed = np.isin(mesh.edge_tags, ("outer",) + CONDUCTOR_TAGS)
    boundary_ok[tagged[(tagged >= 0) & closed]] = True
    if (single & ~boundary_ok).any():
        problems.append(f"{int((single & ~boundary_ok).sum())} hanging edges (non-conforming mesh)")
    both = ~single
    if both.any():
        e = table.edges[both]
        own = table.owners[both]

        def forward(tri_ids):
            tri = mesh.triangles[tri_ids]
            pos = np.argmax(tri == e[:, :1], axis=1)
            return tri[np.arange(len(tri)), (pos + 1) % 3] == e[:, 1]

        if (forward(own[:, 0]) == forward(own[:, 1])).any():
            problems.append("neighbouring triangles with inconsistent orientation (overlap)")
    return problems


def error_indicator(mesh: Mesh, solution: FieldSolution) -> np.ndarray:
    """Per-element flux-jump indicator ``sqrt(1/2 * sum_e h_e^2 [eps E.n]^2)``.

    Interior edges contribute half to each neighbour, natural (outer) edges
    contribute in full, Dirichlet conductor faces contribute nothing.
    """
    table = mesh.edges()
    e = table.edges
    v = mesh.vertices
    tangent = v[e[:, 1]] - v[e[:, 0]]
    h = np.hypot(tangent[:, 0], tangent[:, 1])
    normal = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1) / h[:, None]
    flux = solution.eps_r[:, None] * solution.field
    own = table.owners
    f0 = np.einsum("ij,ij->i", flux[own[:, 0]], normal)
    f1 = np.where(own[:, 1] >= 0, np.einsum("ij,ij->i", flux[np.maximum(own[:, 1], 0)], normal), 0.0)
    jump = f0 - f1
    weight = np.where(own[:, 1] >= 0, 0.5, 1.0)
    tagged = table.lookup(mesh.boundary_edges, mesh.n_vertices)
    dirichlet = tagged[np.isin(mesh.edge_tags, CONDUCTOR_TAGS)]
    weight[dirichlet] = 0.0
    contrib = weight * (h * jump) ** 2
    eta2 = np.zeros(mesh.n_triangles)
    np.add.at(eta2, own[:, 0], contrib)
    both = own[:, 1] >= 0
    np.add.at(eta2, own[both, 1], contrib[both])
    return np.sqrt(eta2)


def refine(mesh: Mesh, solution: FieldSolution, marker_fraction: float = 0.25) -> Mesh:
    """Bisect the ``marker_fraction`` of elements with the largest error indicator.

    ``marker_fraction == 1`` refines uniformly (every edge halved, four children per
    element). Otherwise marked elements are bisected by longest-edge propagation
    until the mesh is conforming again.
    """
    if not 0 < marker_fraction <= 1:
        raise InvalidArgument(f"marker_fraction must lie in (0, 1], got {marker_fraction}")
    if solution.mesh is not mesh:
        raise InvalidArgument("solution was not computed on this mesh")
    if marker_fraction == 1:
        return refine_uniform(mesh)
    eta = error_indicator(mesh, solution)
    order = np.argsort(-eta, kind="stable")
    n_mark = max(1, math.ceil(marker_fraction * mesh.n_triangles))
    return bisect_elements(mesh, order[:n_mark])


def refine_uniform(mesh: Mesh) -> Mesh:
    table = mesh.edges()
    n = mesh.n_vertices
    ne = len(table.edges)
    mid = n + np.arange(ne)
    verts = np.concatenate([mesh.vertices, mesh.vertices[table.edges].mean(axis=1)])
    a, b, c = mesh.triangles.T
    m_ab, m_bc, m_ca = (mid[table.tri_edges[:, k]] for k in range(3))
    tris = np.concatenate([
        np.stack([a, m_ab, m_ca], 1), np.stack([m_ab, b, m_bc], 1),
        np.stack([m_ca, m_bc, c], 1), np.stack([m_ab, m_bc, m_ca], 1),
    ])
    regions = np.tile(mesh.regions, 4)
    order = np.argsort(np.tile(np.arange(mesh.n_triangles), 4), kind="stable")
    tris, regions = tris[order], regions[order]

    ids = table.lookup(mesh.boundary_edges, n)
    m = mid[ids]
    bedges = np.concatenate([np.stack([mesh.boundary_edges[:, 0], m], 1),
                             np.stack([m, mesh.boundary_edges[:, 1]], 1)])
    reorder = np.argsort(np.tile(np.arange(len(ids)), 2), kind="stable")
    node_electrode = np.concatenate([mesh.node_electrode, np.full(ne, -1, dtype=np.int64)])
    cond = np.isin(mesh.edge_tags, CONDUCTOR_TAGS)
    node_electrode[m[cond]] = mesh.node_electrode[mesh.boundary_edges[cond, 0]]
    return Mesh(
        vertices=verts, triangles=tris, regions=regions,
        boundary_edges=bedges[reorder],
        edge_tags=np.repeat(mesh.edge_tags, 2), edge_kinds=np.repeat(mesh.edge_kinds, 2),
        edge_segments=np.repeat(mesh.edge_segments, 2),
        node_electrode=node_electrode, electrodes=mesh.electrodes, corners=mesh.corners.copy(), bbox=mesh.bbox,
    )


def bisect_elements(mesh: Mesh, marked) -> Mesh:
    """Longest-edge bisection of each marked element, with conforming closure."""
    verts = mesh.vertices.tolist()
    tris = mesh.triangles.tolist()
    regions = mesh.regions.tolist()
    alive = [True] * len(tris)
    electrode = mesh.node_electrode.tolist()
    edge_tris: dict[tuple[int, int], list[int]] = {}
    for t, (a, b, c) in enumerate(tris):
        for e in ((a, b), (b, c), (c, a)):
            edge_tris.setdefault((e[0], e[1]) if e[0] < e[1] else (e[1], e[0]), []).append(t)
    boundary = {
        (int(a), int(b)) if a < b else (int(b), int(a)): k for k, (a, b) in enumerate(mesh.boundary_edges.tolist())
    }
    b_tag = mesh.edge_tags.tolist()
    b_kind = mesh.edge_kinds.tolist()
    b_seg = mesh.edge_segments.tolist()

    def edge_key(e):
        (ax, ay), (bx, by) = verts[e[0]], verts[e[1]]
        return ((ax - bx) ** 2 + (ay - by) ** 2, e)

    def longest(t):
        a, b, c = tris[t]
        cands = [(a, b) if a < b else (b, a), (b, c) if b < c else (c, b), (c, a) if c < a else (a, c)]
        return max(cands, key=edge_key)

    def split(e):
        a, b = e
        (ax, ay), (bx, by) = verts[a], verts[b]
        m = len(verts)
        verts.append([0.5 * (ax + bx), 0.5 * (ay + by)])
        electrode.append(-1)
        if e in boundary:
            k = boundary.pop(e)
            if b_tag[k] in CONDUCTOR_TAGS:
                electrode[m] = electrode[a]
            for child in ((a, m), (m, b)):
                boundary[child] = len(b_tag)
                b_tag.append(b_tag[k])
                b_kind.append(b_kind[k])
                b_seg.append(b_seg[k])
        for t in edge_tris.pop(e):
            p, q, r = tris[t]
            while {p, q} != {a, b}:
                p, q, r = q, r, p
            alive[t] = False
            for child in ((p, m, r), (m, q, r)):
                idx = len(tris)
                tris.append(list(child))
                regions.append(regions[t])
                alive.append(True)
                for u, w in ((child[0], child[1]), (child[1], child[2]), (child[2], child[0])):
                    key = (u, w) if u < w else (w, u)
                    lst = edge_tris.setdefault(key, [])
                    if t in lst:
                        lst.remove(t)
                    lst.append(idx)
            for u, w in ((q, r), (r, p)):
                key = (u, w) if u < w else (w, u)
                lst = edge_tris.get(key)
                if lst is not None and t in lst:
                    lst.remove(t)

    for t in sorted(int(x) for x in marked):
        while alive[t]:
            cur = t
            while True:
                e = longest(cur)
                nbrs = [s for s in edge_tris[e] if s != cur]
                if not nbrs or longest(nbrs[0]) == e:
                    split(e)
                    break
                cur = nbrs[0]

    keep = [i for i, ok in enumerate(alive) if ok]
    b_items = sorted(boundary.items(), key=lambda kv: kv[1])
    return Mesh(
        vertices=np.asarray(verts, dtype=float),
        triangles=np.asarray([tris[i] for i in keep], dtype=np.int64),
        regions=np.asarray([regions[i] for i in keep], dtype=np.int8),
        boundary_edges=np.asarray([list(e) for e, _ in b_items], dtype=np.int64).reshape(-1, 2),
        edge_tags=np.asarray([b_tag[k] for _, k in b_items], dtype="<U5"),
        edge_kinds=np.asarray([b_kind[k] for _, k in b_items], dtype="<U8"),
        edge_segments=np.asarray([b_seg[k] for _, k in b_items], dtype=np.int64),
        node_electrode=np.asarray(electrode, dtype=np.int64),
        electrodes=mesh.electrodes,
        corners=mesh.corners.copy(),
        bbox=mesh.bbox,
    )


def mesh_text(mesh: Mesh) -> str:
    """Plain-text vertex/triangle/boundary listing for debugging."""
    lines = [f"# vertices {mesh.n_vertices}"]
    lines += [f"{x:.9e} {y:.9e} {el}" for (x, y), el in zip(mesh.vertices, mesh.node_electrode)]
    lines.append(f"# triangles {mesh.n_triangles}")
    lines += [f"{a} {b} {c} {REGION_NAMES[r]}" for (a, b, c), r in zip(mesh.triangles, mesh.regions)]
    lines.append(f"# boundary_edges {len(mesh.boundary_edges)}")
    lines += [f"{a} {b} {tag}" for (a, b), tag in zip(mesh.boundary_edges, mesh.edge_tags)]
    return "\n".join(lines) + "\n"


def dump_mesh(mesh: Mesh, path: str | Path) -> None:
    Path(path).write_text(mesh_text(mesh), encoding="utf-8")

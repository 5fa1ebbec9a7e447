"""Unit cell, macro and tiled perforated meshes.

The reference cell is ``Y = [-1/2, 1/2)^2`` with at most one hole ``G``.
Cell meshes are built on a structured background grid so that opposite
faces carry identical vertex traces; tiling scaled copies of a cell mesh
therefore yields a conforming mesh of the perforated square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
import shapely
from scipy.spatial import Delaunay
from shapely.geometry import LinearRing, Polygon


class GeometryError(ValueError):
    """Invalid hole geometry or incompatible mesh request."""


class PairingError(ValueError):
    """Opposite faces of a cell mesh do not carry matching vertices."""


class EdgeTag(IntEnum):
    INTERIOR = 0
    HOLE_BOUNDARY = 1
    OUTER_BOUNDARY = 2
    PERIODIC_MASTER = 3
    PERIODIC_SLAVE = 4


_SHAPES = ("none", "disk", "square", "polygon")
_FACE_TOL = 1e-12


@dataclass(frozen=True)
class CellGeometry:
    """Hole ``G`` inside the unit cell.

    ``size`` is the radius of a disk or the half-width of a square.
    """

    shape: str = "none"
    center: tuple[float, float] = (0.0, 0.0)
    size: float = 0.0
    vertices: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise GeometryError(f"unknown hole shape {self.shape!r}")
        if self.shape in ("disk", "square") and not self.size > 0:
            raise GeometryError("hole size must be positive")
        if self.shape == "polygon":
            if len(self.vertices) < 3:
                raise GeometryError("polygon hole needs at least 3 vertices")
            ring = LinearRing(self.vertices)
            if not ring.is_simple or not Polygon(self.vertices).is_valid:
                raise GeometryError("polygon hole is not simple")
        if self.shape != "none":
            dist = self.distance_to_cell_boundary()
            if not dist > 1e-9:
                raise GeometryError(
                    f"hole closure must lie inside the open cell (distance {dist:.3g})"
                )

    @classmethod
    def none(cls) -> "CellGeometry":
        return cls("none")

    @classmethod
    def disk(cls, radius: float, center=(0.0, 0.0)) -> "CellGeometry":
        return cls("disk", tuple(map(float, center)), float(radius))

    @classmethod
    def square(cls, half_width: float, center=(0.0, 0.0)) -> "CellGeometry":
        return cls("square", tuple(map(float, center)), float(half_width))

    @classmethod
    def polygon(cls, vertices) -> "CellGeometry":
        verts = tuple((float(x), float(y)) for x, y in vertices)
        ctr = tuple(np.asarray(Polygon(verts).centroid.coords[0], dtype=float))
        return cls("polygon", ctr, 0.0, verts)

    @property
    def has_hole(self) -> bool:
        return self.shape != "none"

    def distance_to_cell_boundary(self) -> float:
        cx, cy = self.center
        if self.shape == "none":
            return 0.5
        if self.shape == "disk":
            return 0.5 - max(abs(cx), abs(cy)) - self.size
        verts = self._corner_vertices()
        return float(0.5 - np.abs(verts).max())

    def _corner_vertices(self) -> np.ndarray:
        cx, cy = self.center
        if self.shape == "square":
            s = self.size
            return np.array(
                [[cx - s, cy - s], [cx + s, cy - s], [cx + s, cy + s], [cx - s, cy + s]]
            )
        verts = np.array(self.vertices, dtype=float)
        if LinearRing(verts).is_ccw:
            return verts
        return verts[::-1].copy()

    def hole_polygon(self, h: float) -> np.ndarray:
        """Counter-clockwise boundary vertices of the discrete hole, segments <= h."""
        if self.shape == "none":
            return np.zeros((0, 2))
        if self.shape == "disk":
            n = max(3, math.ceil(2 * math.pi * self.size / h))
            theta = 2 * math.pi * np.arange(n) / n
            return np.column_stack(
                [self.center[0] + self.size * np.cos(theta),
                 self.center[1] + self.size * np.sin(theta)]
            )
        corners = self._corner_vertices()
        pts = []
        for a, b in zip(corners, np.roll(corners, -1, axis=0)):
            k = max(1, math.ceil(np.linalg.norm(b - a) / h - 1e-12))
            t = np.arange(k)[:, None] / k
            pts.append(a + t * (b - a))
        return np.vstack(pts)


@dataclass(eq=False)
class TriangulatedDomain:
    """P1 triangulation with tagged boundaries.

    Hole and outer boundary edges are stored oriented with the domain on the
    left, so ``(dy, -dx)`` is the outward normal. ``tri_ref`` and
    ``hole_ref`` hold the cell-frame coordinates ``y`` of the same points;
    on tiled meshes they are copied from the source cell mesh so that
    microscale data is evaluated at bit-identical ``y`` values on every cell.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_tag: np.ndarray
    hole_edges: np.ndarray
    outer_edges: np.ndarray
    tri_ref: np.ndarray | None = None
    hole_ref: np.ndarray | None = None
    scale: float = 1.0
    h: float = float("nan")
    geometry: CellGeometry | None = None
    grid_n: int = 0
    n_cells: int = 0
    cell_index: np.ndarray | None = None
    perforated: np.ndarray | None = None
    hole_cell: np.ndarray | None = None
    vertex_ref: np.ndarray | None = None
    vertex_on_hole_cell: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @property
    def mesh_size(self) -> float:
        """Largest circumdiameter."""
        p = self.vertices[self.triangles]
        la = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        lb = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        lc = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        return float(np.max(la * lb * lc / (2.0 * self.areas)))

    @property
    def hole_length(self) -> float:
        e = self.hole_edges
        if len(e) == 0:
            return 0.0
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        return float(np.linalg.norm(d, axis=1).sum())

    def edge_tags(self) -> dict[tuple[int, int], EdgeTag]:
        return {
            (int(a), int(b)): EdgeTag(int(t))
            for (a, b), t in zip(self.edges, self.edge_tag)
        }

    def tagged_vertices(self, tag: EdgeTag) -> np.ndarray:
        return np.unique(self.edges[self.edge_tag == tag])

    def ref_vertices(self) -> np.ndarray:
        """Cell-frame vertex coordinates per triangle, shape (nt, 3, 2)."""
        if self.tri_ref is not None:
            return self.tri_ref
        return self.vertices[self.triangles] / self.scale


@dataclass(frozen=True, eq=False)
class PeriodicMap:
    """Slave -> master identification of opposite cell faces."""

    pairs: np.ndarray
    translation: np.ndarray

    def dof_map(self, n_vertices: int) -> tuple[int, np.ndarray]:
        """Return ``(n_dofs, dof)`` with ``dof[v]`` the folded index of vertex ``v``."""
        target = np.arange(n_vertices)
        if len(self.pairs):
            target[self.pairs[:, 0]] = self.pairs[:, 1]
        masters, dof = np.unique(target, return_inverse=True)
        return len(masters), dof


# ----------------------------------------------------------------------------
# construction helpers


def _edge_table(triangles: np.ndarray):
    """Unique sorted edges, use counts and the oriented boundary edges."""
    oriented = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    key = np.sort(oriented, axis=1)
    edges, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    if counts.max() > 2:
        raise GeometryError("non-manifold edge in triangulation")
    boundary = oriented[counts[inv] == 1]
    return edges, counts, boundary


def _orient(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    signed = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 2, 0] - p[:, 0, 0]
    ) * (p[:, 1, 1] - p[:, 0, 1])
    tri = triangles.copy()
    flip = signed < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    return tri


def _structured_triangles(ng: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(ng), np.arange(ng), indexing="ij")
    v00 = (j * (ng + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + ng + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    return np.vstack([lower, upper])


def _grid_points(ng: int, lower: float = -0.5, size: float = 1.0) -> np.ndarray:
    k = np.arange(ng + 1)
    c = lower + size * k / ng
    x, y = np.meshgrid(c, c, indexing="xy")
    return np.column_stack([x.ravel(), y.ravel()])


def _finish_cell_mesh(vertices, triangles, hole_edges_oriented, geom, h, ng):
    triangles = _orient(vertices, triangles)
    edges, counts, boundary = _edge_table(triangles)
    tags = np.full(len(edges), EdgeTag.INTERIOR, dtype=np.int8)

    hole_keys = {tuple(sorted(e)) for e in map(tuple, hole_edges_oriented)}
    b_is_hole = np.array([tuple(sorted(e)) in hole_keys for e in map(tuple, boundary)],
                         dtype=bool) if len(boundary) else np.zeros(0, bool)
    hole_edges = boundary[b_is_hole]
    outer_edges = boundary[~b_is_hole]
    if len(hole_edges) != len(hole_keys):
        raise GeometryError("hole boundary is not resolved by the triangulation")

    edge_index = {tuple(e): k for k, e in enumerate(map(tuple, edges))}
    for e in hole_edges:
        tags[edge_index[tuple(sorted(e))]] = EdgeTag.HOLE_BOUNDARY
    for a, b in outer_edges:
        pa, pb = vertices[a], vertices[b]
        on_master = (abs(pa[0] + 0.5) < _FACE_TOL and abs(pb[0] + 0.5) < _FACE_TOL) or (
            abs(pa[1] + 0.5) < _FACE_TOL and abs(pb[1] + 0.5) < _FACE_TOL
        )
        tags[edge_index[(min(a, b), max(a, b))]] = (
            EdgeTag.PERIODIC_MASTER if on_master else EdgeTag.PERIODIC_SLAVE
        )
    mesh = TriangulatedDomain(
        vertices=vertices,
        triangles=triangles,
        edges=edges,
        edge_tag=tags,
        hole_edges=hole_edges,
        outer_edges=outer_edges,
        hole_ref=vertices[hole_edges] if len(hole_edges) else np.zeros((0, 2, 2)),
        scale=1.0,
        h=h,
        geometry=geom,
        grid_n=ng,
    )
    mesh.tri_ref = vertices[triangles]
    return mesh


def _square_arrays(ng: int, lower: float = -0.5, size: float = 1.0):
    # structured ng x ng triangulation, diagonals SW-NE
    vertices = _grid_points(ng, lower, size)
    triangles = _orient(vertices, _structured_triangles(ng))
    edges, _, boundary = _edge_table(triangles)
    return vertices, triangles, edges, boundary


def structured_cell_mesh(ng: int, h: float | None = None) -> TriangulatedDomain:
    """Unperforated cell mesh on an ``ng x ng`` grid (``ng >= 1``)."""
    vertices, triangles, _, _ = _square_arrays(ng)
    return _finish_cell_mesh(vertices, triangles, np.zeros((0, 2), int),
                             CellGeometry.none(), 1.0 / ng if h is None else h, ng)


def mesh_unit_cell(geom: CellGeometry, h: float) -> TriangulatedDomain:
    """Triangulate ``Y* = Y \\ G`` with target size ``h``.

    The background grid has ``ceil(1/h)`` intervals per side; grid points
    inside the hole or within about half a segment of its boundary are
    dropped, the hole polygon vertices are inserted and the point set is
    Delaunay-triangulated.
    """
    if not (0 < h <= 0.25):
        raise GeometryError(f"cell mesh size must lie in (0, 1/4], got {h}")
    ng = math.ceil(1.0 / h - 1e-9)
    grid = _grid_points(ng)
    if not geom.has_hole:
        return structured_cell_mesh(ng, h)

    poly_pts = geom.hole_polygon(h)
    hg = 1.0 / ng
    for _attempt in range(6):
        seg = np.linalg.norm(np.roll(poly_pts, -1, axis=0) - poly_pts, axis=1)
        clearance = 0.55 * max(seg.max(), hg)
        outer_gap = float(0.5 - np.abs(poly_pts).max())
        if outer_gap <= clearance:
            raise GeometryError(
                f"hole too close to the cell boundary for h={h}: gap {outer_gap:.4g} "
                f"<= clearance {clearance:.4g}"
            )
        polygon = Polygon(poly_pts)
        inside = shapely.contains_xy(polygon, grid[:, 0], grid[:, 1])
        dist = shapely.distance(polygon.exterior, shapely.points(grid))
        keep = (~inside) & (dist >= clearance)
        vertices = np.vstack([grid[keep], poly_pts])
        offset = int(keep.sum())
        m = len(poly_pts)
        hole_loop = np.column_stack([offset + np.arange(m), offset + (np.arange(m) + 1) % m])

        tri = Delaunay(vertices).simplices
        cent = vertices[tri].mean(axis=1)
        tri = tri[~shapely.contains_xy(polygon, cent[:, 0], cent[:, 1])]
        present = {tuple(sorted(e)) for e in map(tuple, np.sort(np.concatenate(
            [tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1))}
        missing = [k for k, e in enumerate(map(tuple, np.sort(hole_loop, axis=1)))
                   if e not in present]
        if not missing:
            break
        # split unresolved segments and retry
        new_pts = []
        for k in range(m):
            new_pts.append(poly_pts[k])
            if k in missing:
                new_pts.append(0.5 * (poly_pts[k] + poly_pts[(k + 1) % m]))
        poly_pts = np.array(new_pts)
    else:
        raise GeometryError("could not resolve the hole boundary")

    used = np.unique(tri)
    if len(used) != len(vertices):
        raise GeometryError("orphan vertices in cell mesh")
    mesh = _finish_cell_mesh(vertices, tri, hole_loop, geom, h, ng)
    mesh.meta["hole_polygon"] = poly_pts
    return mesh


def periodic_pairing(mesh: TriangulatedDomain) -> PeriodicMap:
    """Pair right/top face vertices with left/bottom ones; corners fold to (-1/2, -1/2)."""
    v = mesh.vertices
    hole_vertices = set(np.unique(mesh.hole_edges).tolist()) if len(mesh.hole_edges) else set()
    left = np.abs(v[:, 0] + 0.5) < _FACE_TOL
    right = np.abs(v[:, 0] - 0.5) < _FACE_TOL
    bottom = np.abs(v[:, 1] + 0.5) < _FACE_TOL
    top = np.abs(v[:, 1] - 0.5) < _FACE_TOL
    corner = (left | right) & (bottom | top)

    pairs, shifts, unmatched = [], [], []

    def match(slaves, candidates, shift):
        cand = np.flatnonzero(candidates)
        for s in np.flatnonzero(slaves):
            target = v[s] - shift
            d = np.abs(v[cand] - target).max(axis=1)
            k = np.flatnonzero(d < _FACE_TOL)
            if len(k) != 1:
                unmatched.append(int(s))
                continue
            pairs.append((int(s), int(cand[k[0]])))
            shifts.append(shift)

    match(right & ~corner, left & ~corner, np.array([1.0, 0.0]))
    match(top & ~corner, bottom & ~corner, np.array([0.0, 1.0]))
    origin = np.flatnonzero(left & bottom)
    if corner.any():
        if len(origin) != 1 or corner.sum() != 4:
            raise PairingError(f"cell corners missing: found {int(corner.sum())}")
        for s in np.flatnonzero(corner & ~(left & bottom)):
            pairs.append((int(s), int(origin[0])))
            shifts.append(v[s] - v[origin[0]])
    if unmatched:
        raise PairingError(f"unmatched periodic vertices: {unmatched}")
    n_left, n_right = int((left & ~corner).sum()), int((right & ~corner).sum())
    n_bottom, n_top = int((bottom & ~corner).sum()), int((top & ~corner).sum())
    if n_left != n_right or n_bottom != n_top:
        raise PairingError(
            f"face vertex counts differ: left {n_left} right {n_right} "
            f"bottom {n_bottom} top {n_top}"
        )
    pm = PeriodicMap(np.array(pairs, dtype=int).reshape(-1, 2),
                     np.array(shifts, dtype=float).reshape(-1, 2))
    assert not hole_vertices.intersection(pm.pairs.ravel().tolist())
    return pm


def _face_key(y: np.ndarray, ng: int) -> np.ndarray:
    return np.rint((y + 0.5) * ng).astype(np.int64)


def tile_perforated_domain(cell_mesh: TriangulatedDomain, n: int) -> TriangulatedDomain:
    """Tile ``Omega = (0,1)^2`` with ``n x n`` scaled cells.

    Cells touching the outer boundary use the unperforated cell mesh of the
    same grid resolution; all others use ``cell_mesh``.
    """
    if n < 3:
        raise GeometryError("need at least 3 cells per side")
    ng = cell_mesh.grid_n
    geom = cell_mesh.geometry or CellGeometry.none()
    plain = mesh_unit_cell(CellGeometry.none(), cell_mesh.h) if geom.has_hole else cell_mesh
    if plain.grid_n != ng:
        raise GeometryError("background grids of the cell meshes differ")

    eps = 1.0 / n
    key_to_id: dict[tuple[int, int], int] = {}
    coords: list[np.ndarray] = []
    vertex_ref: list[int] = []
    vertex_hole: list[bool] = []
    tris, tri_ref, cell_of_tri = [], [], []
    hole_edges, hole_ref, hole_cell = [], [], []
    perforated = np.zeros(n * n, dtype=bool)
    n_next = 0

    def on_face(y):
        return (np.abs(np.abs(y[:, 0]) - 0.5) < _FACE_TOL) | (
            np.abs(np.abs(y[:, 1]) - 0.5) < _FACE_TOL
        )

    face_plain = on_face(plain.vertices)
    face_cell = on_face(cell_mesh.vertices)

    for j in range(n):
        for i in range(n):
            interior = 1 <= i <= n - 2 and 1 <= j <= n - 2
            src = cell_mesh if (interior and geom.has_hole) else plain
            face = face_cell if src is cell_mesh else face_plain
            c = i + n * j
            perforated[c] = src is cell_mesh and geom.has_hole
            local = np.empty(src.n_vertices, dtype=np.int64)
            keys = _face_key(src.vertices, ng)
            for k in range(src.n_vertices):
                if face[k]:
                    gk = (int(keys[k, 0]) + i * ng, int(keys[k, 1]) + j * ng)
                    vid = key_to_id.get(gk)
                    if vid is None:
                        vid = n_next
                        key_to_id[gk] = vid
                        coords.append(np.array(gk, dtype=float) / (n * ng))
                        vertex_ref.append(k)
                        vertex_hole.append(bool(perforated[c]))
                        n_next += 1
                    elif perforated[c]:
                        vertex_hole[vid] = True
                        vertex_ref[vid] = k
                    local[k] = vid
                else:
                    local[k] = n_next
                    coords.append((src.vertices[k] + 0.5 + np.array([i, j])) * eps)
                    vertex_ref.append(k)
                    vertex_hole.append(bool(perforated[c]))
                    n_next += 1
            tris.append(local[src.triangles])
            tri_ref.append(src.tri_ref)
            cell_of_tri.append(np.full(len(src.triangles), c))
            if perforated[c]:
                hole_edges.append(local[src.hole_edges])
                hole_ref.append(src.hole_ref)
                hole_cell.append(np.full(len(src.hole_edges), c))

    vertices = np.array(coords)
    triangles = np.vstack(tris)
    edges, counts, boundary = _edge_table(triangles)
    hole_edges = np.vstack(hole_edges) if hole_edges else np.zeros((0, 2), dtype=np.int64)
    hole_keys = {tuple(sorted(e)) for e in map(tuple, hole_edges)}
    is_hole = np.array([tuple(sorted(e)) in hole_keys for e in map(tuple, boundary)], bool)
    outer_edges = boundary[~is_hole]
    if is_hole.sum() != len(hole_edges):
        raise GeometryError("tiled hole edges are not on the mesh boundary")
    tags = np.full(len(edges), EdgeTag.INTERIOR, dtype=np.int8)
    edge_index = {tuple(e): k for k, e in enumerate(map(tuple, edges))}
    for e in hole_keys:
        tags[edge_index[e]] = EdgeTag.HOLE_BOUNDARY
    for a, b in outer_edges:
        tags[edge_index[(min(a, b), max(a, b))]] = EdgeTag.OUTER_BOUNDARY

    return TriangulatedDomain(
        vertices=vertices,
        triangles=triangles,
        edges=edges,
        edge_tag=tags,
        hole_edges=hole_edges,
        outer_edges=outer_edges,
        tri_ref=np.vstack(tri_ref),
        hole_ref=np.vstack(hole_ref) if hole_ref else np.zeros((0, 2, 2)),
        scale=eps,
        h=cell_mesh.h * eps,
        geometry=geom,
        grid_n=ng,
        n_cells=n,
        cell_index=np.concatenate(cell_of_tri),
        perforated=perforated,
        hole_cell=np.concatenate(hole_cell) if hole_cell else np.zeros(0, dtype=np.int64),
        vertex_ref=np.array(vertex_ref),
        vertex_on_hole_cell=np.array(vertex_hole),
        meta={"cell_mesh": cell_mesh, "plain_mesh": plain},
    )


def macro_mesh(h: float) -> TriangulatedDomain:
    """Structured mesh of the unperforated unit square ``(0,1)^2``."""
    ng = math.ceil(1.0 / h - 1e-9)
    vertices, triangles, edges, boundary = _square_arrays(ng, 0.0, 1.0)
    tags = np.full(len(edges), EdgeTag.INTERIOR, dtype=np.int8)
    edge_index = {tuple(e): k for k, e in enumerate(map(tuple, edges))}
    for a, b in boundary:
        tags[edge_index[(min(a, b), max(a, b))]] = EdgeTag.OUTER_BOUNDARY
    return TriangulatedDomain(
        vertices=vertices,
        triangles=triangles,
        edges=edges,
        edge_tag=tags,
        hole_edges=np.zeros((0, 2), dtype=np.int64),
        outer_edges=boundary,
        h=1.0 / ng,
        grid_n=ng,
    )


def check_conforming(mesh: TriangulatedDomain) -> None:
    """Raise if the mesh is not a conforming, positively oriented triangulation."""
    if np.any(mesh.areas <= 0):
        raise GeometryError("non-positive triangle area")
    _, counts, boundary = _edge_table(mesh.triangles)
    tagged = len(mesh.hole_edges) + len(mesh.outer_edges)
    if len(boundary) != tagged:
        raise GeometryError(
            f"{len(boundary)} boundary edges but {tagged} tagged boundary edges"
        )
    if mesh.hole_edges.size and mesh.outer_edges.size:
        shared = np.intersect1d(np.unique(mesh.hole_edges), np.unique(mesh.outer_edges))
        if mesh.scale != 1.0 and len(shared):
            raise GeometryError("hole boundary touches the outer boundary")

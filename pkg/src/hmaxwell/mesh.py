"""Tetrahedral meshes built from Kuhn-triangulated boxes, red refinement and
edge numbering for lowest-order edge elements.

All geometries in this package are unions of axis-aligned grid cells; each
cell is split into the six Kuhn tetrahedra that share its main diagonal, so
neighbouring cells always meet conformingly.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

# local edge -> (local vertex a, local vertex b), a < b
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])

AIR = 0
MAGNET = 1


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TetMesh:
    vertices: np.ndarray
    tets: np.ndarray
    regions: np.ndarray = field(default=None)

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        tets = np.ascontiguousarray(self.tets, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertices must have shape (V, 3)")
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise MeshError("tets must have shape (T, 4)")
        regions = self.regions
        if regions is None:
            regions = np.zeros(len(tets), dtype=np.int64)
        regions = np.ascontiguousarray(regions, dtype=np.int64)
        if regions.shape != (len(tets),):
            raise MeshError("need one region tag per tet")
        for name, arr in (("vertices", vertices), ("tets", tets), ("regions", regions)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def signed_volumes(self) -> np.ndarray:
        p = self.vertices[self.tets]
        d = p[:, 1:] - p[:, :1]
        return np.linalg.det(d) / 6.0

    def volume(self) -> float:
        return float(np.abs(self.signed_volumes()).sum())

    def region_volumes(self) -> dict[int, float]:
        vol = np.abs(self.signed_volumes())
        return {int(t): float(vol[self.regions == t].sum()) for t in np.unique(self.regions)}

    def h(self) -> float:
        """Largest tet diameter."""
        p = self.vertices[self.tets]
        a, b = LOCAL_EDGES.T
        return float(np.linalg.norm(p[:, a] - p[:, b], axis=-1).max())

    def faces(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique sorted vertex triples and how many tets each belongs to."""
        f = np.sort(self.tets[:, LOCAL_FACES].reshape(-1, 3), axis=1)
        return np.unique(f, axis=0, return_counts=True)

    @property
    def boundary_faces(self) -> np.ndarray:
        f, counts = self.faces()
        return f[counts == 1]

    def is_conforming(self) -> bool:
        """Every face is shared by at most two tets and the boundary is closed.

        With faces matched as vertex triples, a hanging node shows up as a
        boundary face whose edges are not all shared by another boundary
        face.
        """
        f, counts = self.faces()
        if np.any(counts > 2):
            return False
        bf = f[counts == 1]
        e = np.sort(bf[:, [[0, 1], [0, 2], [1, 2]]].reshape(-1, 2), axis=1)
        _, ecount = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(ecount % 2 == 0))


@dataclass(frozen=True, eq=False)
class EdgeNumbering:
    edges: np.ndarray          # (E, 2) with edges[:, 0] < edges[:, 1]
    tet_edges: np.ndarray      # (T, 6) global edge index per local edge
    tet_signs: np.ndarray      # (T, 6) +1/-1 orientation
    boundary_mask: np.ndarray  # (E,)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def tet_edge_map(self):
        return np.stack([self.tet_edges, self.tet_signs], axis=-1)


def _orient(vertices, tets):
    p = vertices[tets]
    det = np.linalg.det(p[:, 1:] - p[:, :1])
    tets = tets.copy()
    neg = det < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3], tets[neg, 2].copy()
    return tets


def _kuhn_cell_offsets():
    # vertex offsets of the 6 Kuhn tets, in path order 000 -> 111
    out = []
    for perm in itertools.permutations(range(3)):
        v = np.zeros(3, dtype=int)
        path = [v.copy()]
        for ax in perm:
            v[ax] += 1
            path.append(v.copy())
        out.append([path[0], path[1], path[2], path[3]])
    return np.array(out)  # (6, 4, 3)


_KUHN = _kuhn_cell_offsets()


def _axis_grid(lo, hi, h):
    n = int(round((hi - lo) / h))
    if n < 1 or not np.isclose(lo + n * h, hi, rtol=0, atol=1e-9 * max(1.0, abs(hi))):
        raise MeshError(f"interval [{lo}, {hi}] is not a multiple of h={h}")
    return lo + h * np.arange(n + 1)


def box_union_mesh(boxes, h, tag_boxes=None) -> TetMesh:
    """Kuhn-triangulate the union of axis-aligned boxes on a grid of spacing h.

    boxes: sequence of (lo, hi) corner pairs. Every box face has to lie on a
    grid plane through the global lower corner, otherwise the boxes cannot be
    meshed conformingly on one grid and MeshError is raised.
    tag_boxes: optional {tag: (lo, hi)}; a cell whose centre lies in the box
    gets that tag, otherwise AIR.
    """
    boxes = [(np.asarray(lo, float), np.asarray(hi, float)) for lo, hi in boxes]
    if not boxes:
        raise MeshError("no boxes given")
    lo = np.min([b[0] for b in boxes], axis=0)
    hi = np.max([b[1] for b in boxes], axis=0)
    axes = [_axis_grid(lo[d], hi[d], h) for d in range(3)]
    tol = 1e-9 * max(1.0, float(np.abs(np.concatenate([lo, hi])).max()))

    def on_grid(x, d):
        k = (x - lo[d]) / h
        return abs(k - round(k)) * h < tol

    for blo, bhi in boxes + [tuple(map(np.asarray, b)) for b in (tag_boxes or {}).values()]:
        if np.any(np.asarray(bhi) <= np.asarray(blo)):
            raise MeshError("empty box")
        for d in range(3):
            if not (on_grid(blo[d], d) and on_grid(bhi[d], d)):
                raise MeshError(f"box {blo}..{bhi} is not aligned with the grid (h={h})")

    shape = tuple(len(a) - 1 for a in axes)
    ijk = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"), -1).reshape(-1, 3)
    centres = np.stack([axes[d][ijk[:, d]] + 0.5 * h for d in range(3)], axis=1)
    inside = np.zeros(len(ijk), dtype=bool)
    for blo, bhi in boxes:
        inside |= np.all((centres > blo) & (centres < bhi), axis=1)
    cells = ijk[inside]
    if len(cells) == 0:
        raise MeshError("boxes contain no grid cell")

    tags = np.full(len(cells), AIR, dtype=np.int64)
    for tag, (tlo, thi) in (tag_boxes or {}).items():
        c = centres[inside]
        tags[np.all((c > np.asarray(tlo)) & (c < np.asarray(thi)), axis=1)] = tag

    # (cells, 6, 4, 3) grid indices -> linear grid vertex ids
    corner = cells[:, None, None, :] + _KUHN[None]
    dims = np.array([len(a) for a in axes])
    lin = (corner[..., 0] * dims[1] + corner[..., 1]) * dims[2] + corner[..., 2]
    used, tets = np.unique(lin.reshape(-1), return_inverse=True)
    tets = tets.reshape(-1, 4)
    gi = np.stack(np.unravel_index(used, dims), axis=1)
    vertices = np.stack([axes[d][gi[:, d]] for d in range(3)], axis=1)
    regions = np.repeat(tags, 6)
    return TetMesh(vertices, _orient(vertices, tets), regions)


def kuhn_grid(n: int, lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> TetMesh:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    if not np.allclose(hi - lo, (hi - lo)[0]):
        raise MeshError("kuhn_grid needs a cube")
    return box_union_mesh([(lo, hi)], (hi[0] - lo[0]) / n)


def unit_cube_coarse() -> TetMesh:
    """The 6-tet Kuhn triangulation of the unit cube."""
    return kuhn_grid(1)


def unit_cube(level: int) -> TetMesh:
    mesh = unit_cube_coarse()
    for _ in range(level):
        mesh = refine_uniform(mesh)
    return mesh


TWO_BOXES = [
    ((-1.0, -1.0, -2.0), (1.0, 1.0, -1.0)),
    ((-2.0, 1.0, -1.0), (2.0, 2.0, 1.0)),
    ((-2.0, -1.0, -1.0), (2.0, 1.0, 1.0)),
    ((-1.0, -1.0, 1.0), (1.0, 1.0, 2.0)),
    ((-2.0, -1.0, -1.0), (2.0, 2.0, 1.0)),
]


def two_boxes_geometry(h: float = 1.0) -> TetMesh:
    """Cross-shaped domain: a 4x3x2 slab pierced by a 2x2x4 column."""
    return box_union_mesh(TWO_BOXES, h)


def box_with_inclusion(outer=(1.0, 1.0, 1.0), inner=(0.5, 0.5, 0.75), h=0.125):
    """Box of size `outer` with a centred inner box of size `inner`.

    Returns (mesh, tags) with tags MAGNET inside the inner box and AIR
    elsewhere. Both boxes are placed with their lower outer corner at the
    origin and the inner box centred.
    """
    outer = np.asarray(outer, float)
    inner = np.asarray(inner, float)
    if np.any(inner <= 0) or np.any(outer <= 0):
        raise MeshError("box dimensions must be positive")
    if np.any(inner >= outer):
        raise MeshError("inner box must lie strictly inside the outer box")
    ilo = 0.5 * (outer - inner)
    mesh = box_union_mesh([(np.zeros(3), outer)], h, tag_boxes={MAGNET: (ilo, ilo + inner)})
    return mesh, mesh.regions


# children of a red split as indices into
# [v0, v1, v2, v3, m01, m02, m03, m12, m13, m23]; the inner octahedron is cut
# along m02-m13
_BEY = np.array([
        [0, 4, 5, 6],
        [4, 1, 7, 8],
        [5, 7, 2, 9],
        [6, 8, 9, 3],
        [4, 5, 6, 8],
        [4, 5, 7, 8],
        [5, 6, 8, 9],
        [5, 7, 8, 9],
])


def refine_uniform(mesh: TetMesh) -> TetMesh:
    """Red refinement: every tet is split into 8 through its edge midpoints.

    Vertices of each tet are ordered by coordinate sum before splitting; on
    Kuhn meshes this is the path order, for which the octahedron diagonal of
    the red split reproduces the Kuhn triangulation of the halved grid.
    """
    edges = enumerate_edges(mesh)
    mids = 0.5 * (mesh.vertices[edges.edges[:, 0]] + mesh.vertices[edges.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    nv = mesh.n_vertices

    # sort each tet's vertices by (coordinate sum, vertex index)
    k = np.round(mesh.vertices.sum(axis=1), 12)[mesh.tets]
    order = np.lexsort((mesh.tets, k), axis=1)
    tv = np.take_along_axis(mesh.tets, order, axis=1)

    # midpoint ids for the sorted local edges
    lo = np.minimum(tv[:, LOCAL_EDGES[:, 0]], tv[:, LOCAL_EDGES[:, 1]])
    hi = np.maximum(tv[:, LOCAL_EDGES[:, 0]], tv[:, LOCAL_EDGES[:, 1]])
    eid = _edge_lookup(edges.edges, lo, hi)
    ext = np.hstack([tv, nv + eid])  # (T, 10)
    children = ext[:, _BEY].reshape(-1, 4)
    regions = np.repeat(mesh.regions, 8)
    return TetMesh(vertices, _orient(vertices, children), regions)


def _edge_lookup(edges, lo, hi):
    # edges sorted lexicographically; vectorised search on a combined key
    base = int(max(edges.max(), hi.max())) + 1
    keys = edges[:, 0].astype(np.int64) * base + edges[:, 1]
    q = lo.astype(np.int64) * base + hi
    idx = np.searchsorted(keys, q)
    if np.any(keys[np.minimum(idx, len(keys) - 1)] != q):
        raise MeshError("edge not found")
    return idx


def enumerate_edges(mesh: TetMesh) -> EdgeNumbering:
    """Global edges sorted by (low vertex, high vertex); local signs are +1
    when the local direction a->b runs from the lower to the higher global
    vertex index."""
    a = mesh.tets[:, LOCAL_EDGES[:, 0]]
    b = mesh.tets[:, LOCAL_EDGES[:, 1]]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    pairs = np.stack([lo.ravel(), hi.ravel()], axis=1)
    edges, inv = np.unique(pairs, axis=0, return_inverse=True)
    tet_edges = inv.reshape(-1, 6)
    signs = np.where(a < b, 1, -1).astype(np.int8)

    bf = mesh.boundary_faces
    mask = np.zeros(len(edges), dtype=bool)
    if len(bf):
        fe = np.sort(bf[:, [[0, 1], [0, 2], [1, 2]]].reshape(-1, 2), axis=1)
        mask[_edge_lookup(edges, fe[:, 0], fe[:, 1])] = True
    for arr in (edges, tet_edges, signs, mask):
        arr.setflags(write=False)
    return EdgeNumbering(edges, tet_edges, signs, mask)


def kuhn_edge_count(n: int) -> int:
    """Number of edges of the Kuhn triangulation of an n x n x n grid."""
    return 3 * n * (n + 1) ** 2 + 3 * n ** 2 * (n + 1) + n ** 3


# ---------------------------------------------------------------- ASCII I/O

_MAGIC = "hmaxwell-mesh 1"


def write_mesh(path, mesh: TetMesh) -> None:
    """Plain text: magic line, vertex count and lines, tet count and lines
    with a trailing region tag."""
    with open(path, "w") as fh:
        fh.write(_MAGIC + "\n")
        fh.write(f"vertices {mesh.n_vertices}\n")
        for x, y, z in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        fh.write(f"tets {mesh.n_tets}\n")
        for (a, b, c, d), r in zip(mesh.tets, mesh.regions):
            fh.write(f"{a} {b} {c} {d} {r}\n")


def read_mesh(path) -> TetMesh:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != _MAGIC:
        raise MeshError(f"{path}: not a hmaxwell mesh file")
    try:
        tag, nv = lines[1].split()
        nv = int(nv)
        assert tag == "vertices"
        vertices = np.array([[float(t) for t in ln.split()] for ln in lines[2:2 + nv]])
        tag, nt = lines[2 + nv].split()
        nt = int(nt)
        assert tag == "tets"
        rows = np.array([[int(t) for t in ln.split()] for ln in lines[3 + nv:3 + nv + nt]],
                        dtype=np.int64).reshape(nt, 5)
    except (AssertionError, ValueError, IndexError) as exc:
        raise MeshError(f"{path}: malformed mesh file") from exc
    if len(vertices) != nv or (nv and vertices.shape[1] != 3):
        raise MeshError(f"{path}: bad vertex block")
    if rows.size and (rows[:, :4].min() < 0 or rows[:, :4].max() >= nv):
        raise MeshError(f"{path}: tet references a missing vertex")
    return TetMesh(vertices, rows[:, :4], rows[:, 4])

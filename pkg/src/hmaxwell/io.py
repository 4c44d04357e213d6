"""File formats: Matrix Market exchange of assembled systems, the JSON
coordinate sidecar, and a JSON+npz container for H-matrices.

H-matrix container
------------------
A single ``.npz`` archive. The entry ``topology`` holds a JSON document with
the cluster tree(s), the block cluster tree and the node tree in preorder;
the remaining entries are the leaf payloads (``d<i>`` dense blocks,
``x<i>``/``y<i>`` low-rank factors) plus cluster boxes and permutations.
Writes go to a temporary file in the target directory followed by an atomic
rename.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .clustering import BlockClusterTree, BlockNode, BlockStats, Cluster, ClusterTree, SUBDIVIDED
from .fem import AssemblyError, DofGeometry, SparseSystem
from .hcore import LOWRANK, SUB, DENSE, HMatrix, HNode

SIDECAR_SCHEMA = "hmaxwell-dofs 1"
CONTAINER_SCHEMA = "hmaxwell-hmatrix 1"


class FormatError(ValueError):
    pass


def atomic_write(path, writer, suffix=""):
    """Call writer(tmp_path) then rename tmp_path onto path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=suffix)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


# ----------------------------------------------------------- Matrix Market

def export_matrix_market(sys: SparseSystem, matrix_path, rhs_path, sidecar_path=None) -> None:
    """A as a complex general coordinate file, b as a complex array file."""
    A = sp.coo_matrix(sys.matrix)
    atomic_write(matrix_path, lambda p: scipy.io.mmwrite(p, A, field="complex", symmetry="general",
                                                         precision=17), suffix=".mtx")
    atomic_write(rhs_path, lambda p: scipy.io.mmwrite(p, sys.rhs.reshape(-1, 1), field="complex",
                                                      precision=17), suffix=".mtx")
    if sidecar_path is not None and sys.geometry is not None:
        write_sidecar(sidecar_path, sys.geometry)


def _read_mm(path, what):
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} file not found: {path}")
    try:
        return scipy.io.mmread(str(path))
    except Exception as exc:  # scipy raises ValueError/IndexError/... on bad files
        raise FormatError(f"malformed Matrix Market {what} file {path}: {exc}") from None


def ingest_matrix_market(matrix_path, rhs_path, sidecar_path=None) -> SparseSystem:
    """Read A and b (real input is promoted to complex). Symmetric and
    hermitian storage are expanded by the reader."""
    A = _read_mm(matrix_path, "matrix")
    if not sp.issparse(A):
        A = sp.coo_matrix(np.asarray(A))
    if A.shape[0] != A.shape[1]:
        raise FormatError(f"matrix is {A.shape[0]}x{A.shape[1]}, must be square")
    b = _read_mm(rhs_path, "rhs")
    b = b.toarray() if sp.issparse(b) else np.asarray(b)
    if b.ndim == 2 and 1 not in b.shape:
        raise FormatError(f"rhs must be a vector, got shape {b.shape}")
    b = b.ravel().astype(complex)
    if len(b) != A.shape[0]:
        raise FormatError(f"rhs length {len(b)} does not match matrix dimension {A.shape[0]}")
    geom = read_sidecar(sidecar_path) if sidecar_path is not None else None
    try:
        return SparseSystem(sp.csr_matrix(A, dtype=complex), b, None, "external", geom)
    except AssemblyError as exc:
        raise FormatError(str(exc)) from None


def write_sidecar(path, geom: DofGeometry) -> None:
    doc = {"schema": SIDECAR_SCHEMA, "n": len(geom),
           "points": geom.points.tolist(), "lo": geom.lo.tolist(), "hi": geom.hi.tolist()}
    atomic_write(path, lambda p: Path(p).write_text(json.dumps(doc)), suffix=".json")


def read_sidecar(path) -> DofGeometry:
    """DOF coordinates: {"schema", "n", "points": [[x,y,z],...], optional
    "lo"/"hi" boxes (default: the points themselves)}."""
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != SIDECAR_SCHEMA:
        raise FormatError(f"{path}: expected schema {SIDECAR_SCHEMA!r}")
    pts = np.asarray(doc["points"], dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) != doc.get("n", len(pts)):
        raise FormatError(f"{path}: points must be an n x 3 array")
    lo = np.asarray(doc.get("lo", pts), dtype=float)
    hi = np.asarray(doc.get("hi", pts), dtype=float)
    if lo.shape != pts.shape or hi.shape != pts.shape:
        raise FormatError(f"{path}: lo/hi must match points")
    return DofGeometry(pts, lo, hi)


# ----------------------------------------------------------- H-matrices

def _cluster_topology(tree: ClusterTree, prefix, arrays):
    nodes = tree.nodes
    index = {id(c): i for i, c in enumerate(nodes)}
    arrays[f"{prefix}_perm"] = np.asarray(tree.perm)
    arrays[f"{prefix}_lo"] = np.array([c.lo for c in nodes])
    arrays[f"{prefix}_hi"] = np.array([c.hi for c in nodes])
    topo = {"n_min": tree.n_min,
            "nodes": [[c.start, c.stop, c.level, [index[id(k)] for k in c.children]] for c in nodes]}
    return topo, index


def _restore_clusters(topo, prefix, arrays) -> ClusterTree:
    lo, hi = arrays[f"{prefix}_lo"], arrays[f"{prefix}_hi"]
    nodes = [Cluster(s, e, lo[i].copy(), hi[i].copy(), lvl, (), i)
             for i, (s, e, lvl, _) in enumerate(topo["nodes"])]
    for c, (_, _, _, kids) in zip(nodes, topo["nodes"]):
        c.children = tuple(nodes[k] for k in kids)
    perm = np.array(arrays[f"{prefix}_perm"])
    perm.setflags(write=False)
    return ClusterTree(nodes[0], perm, topo["n_min"], nodes)


def save_hmatrix(path, H: HMatrix) -> None:
    arrays: dict[str, np.ndarray] = {}
    bt = H.tree
    rt, rindex = _cluster_topology(bt.row_tree, "row", arrays)
    square = bt.col_tree is bt.row_tree
    if square:
        ct, cindex = None, rindex
    else:
        ct, cindex = _cluster_topology(bt.col_tree, "col", arrays)

    blocks = []
    bindex = {}

    def walk_blocks(b: BlockNode):
        bindex[id(b)] = len(blocks)
        entry = [rindex[id(b.row)], cindex[id(b.col)], b.kind, b.level, []]
        blocks.append(entry)
        if b.kind == SUBDIVIDED:
            entry[4] = [[walk_blocks(c) for c in row] for row in b.children]
        return bindex[id(b)]

    walk_blocks(bt.root)

    hnodes = []

    def walk_nodes(node: HNode):
        i = len(hnodes)
        entry = [bindex[id(node.block)], node.kind, []]
        hnodes.append(entry)
        if node.kind == SUB:
            entry[2] = [[walk_nodes(c) for c in row] for row in node.children]
        elif node.kind == DENSE:
            arrays[f"d{i}"] = node.dense
        else:
            arrays[f"x{i}"] = node.X
            arrays[f"y{i}"] = node.Y
        return i

    walk_nodes(H.root)
    if H.row_pivots is not None:
        arrays["row_pivots"] = np.asarray(H.row_pivots)
    topo = {"schema": CONTAINER_SCHEMA, "square": square, "eta": bt.eta,
            "stats": [bt.stats.n_admissible, bt.stats.n_dense, bt.stats.depth],
            "row_tree": rt, "col_tree": ct, "blocks": blocks, "nodes": hnodes}
    arrays["topology"] = np.array(json.dumps(topo))

    def write(tmp):
        with open(tmp, "wb") as fh:
            np.savez_compressed(fh, **arrays)

    atomic_write(path, write, suffix=".npz")


def load_hmatrix(path) -> HMatrix:
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    try:
        topo = json.loads(str(arrays["topology"]))
    except KeyError:
        raise FormatError(f"{path}: not an H-matrix container") from None
    if topo.get("schema") != CONTAINER_SCHEMA:
        raise FormatError(f"{path}: unsupported container schema {topo.get('schema')!r}")
    row_tree = _restore_clusters(topo["row_tree"], "row", arrays)
    col_tree = row_tree if topo["square"] else _restore_clusters(topo["col_tree"], "col", arrays)

    bl = topo["blocks"]
    block_objs: list = [None] * len(bl)

    def make_block(i):
        r, c, kind, level, kids = bl[i]
        b = BlockNode(row_tree.nodes[r], col_tree.nodes[c], kind, None, level)
        block_objs[i] = b
        if kind == SUBDIVIDED:
            b.children = [[make_block(k) for k in row] for row in kids]
        return b

    root_block = make_block(0)
    bt = BlockClusterTree(root_block, row_tree, col_tree, topo["eta"], BlockStats(*topo["stats"]))

    nd = topo["nodes"]

    def make_node(i):
        bi, kind, kids = nd[i]
        block = block_objs[bi]
        if kind == SUB:
            return HNode(block, SUB, children=[[make_node(k) for k in row] for row in kids])
        if kind == DENSE:
            return HNode(block, DENSE, dense=arrays[f"d{i}"].astype(complex))
        if kind == LOWRANK:
            return HNode(block, LOWRANK, X=arrays[f"x{i}"].astype(complex), Y=arrays[f"y{i}"].astype(complex))
        raise FormatError(f"unknown node kind {kind!r}")

    root = make_node(0)
    return HMatrix(bt, root, arrays.get("row_pivots"))


# ----------------------------------------------------------- rank maps

def rank_svg(H: HMatrix, path=None, size: int = 600, title: str | None = None) -> str:
    """Leaf partition of an H-matrix (node tree, so zero blocks of L/U show
    as rank 0): low-rank leaves green with their rank, dense leaves red."""
    n, m = H.shape
    sx, sy = size / m, size / n
    height = size * n / m
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{height:.0f}" '
             f'viewBox="0 0 {size} {height:.3f}">']
    if title:
        parts.append(f"<title>{title}</title>")
    for lf in H.root.leaves():
        x, y = lf.c0 * sx, lf.r0 * sy
        w, h = lf.shape[1] * sx, lf.shape[0] * sy
        low = lf.kind == LOWRANK
        colour = "#3a3" if low else "#c33"
        parts.append(f'<rect x="{x:.3f}" y="{y:.3f}" width="{w:.3f}" height="{h:.3f}" fill="{colour}" '
                     f'stroke="black" stroke-width="0.3" class="{"lowrank" if low else "dense"}"/>')
        if low and min(w, h) > 8:
            fs = min(w, h) * 0.5
            parts.append(f'<text x="{x + w / 2:.3f}" y="{y + h / 2 + fs / 3:.3f}" font-size="{fs:.2f}" '
                         f'text-anchor="middle">{lf.X.shape[1]}</text>')
    parts.append("</svg>")
    svg = "\n".join(parts)
    if path is not None:
        atomic_write(path, lambda p: Path(p).write_text(svg), suffix=".svg")
    return svg

"""Geometric cluster trees and eta-admissible block cluster trees."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import DofGeometry
from .mesh import EdgeNumbering, TetMesh

ADMISSIBLE = "admissible"
DENSE = "dense"
SUBDIVIDED = "subdivided"


@dataclass(eq=False)
class Cluster:
    """Index range [start, stop) in the permuted ordering plus the bounding
    box of the edge boxes of its DOFs."""
    start: int
    stop: int
    lo: np.ndarray
    hi: np.ndarray
    level: int = 0
    children: tuple = ()
    id: int = 0

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def diam(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def dist(self, other: "Cluster") -> float:
        gap = np.maximum(0.0, np.maximum(self.lo - other.hi, other.lo - self.hi))
        return float(np.linalg.norm(gap))

    def __repr__(self):
        return f"Cluster([{self.start}:{self.stop}], level={self.level})"


@dataclass(eq=False)
class ClusterTree:
    root: Cluster
    perm: np.ndarray       # perm[position] = dof
    n_min: int
    nodes: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.root.size

    @property
    def position(self) -> np.ndarray:
        """position[dof] = index in the permuted ordering."""
        pos = np.empty_like(self.perm)
        pos[self.perm] = np.arange(len(self.perm))
        return pos

    def leaves(self):
        return [c for c in self.nodes if c.is_leaf]

    @property
    def depth(self) -> int:
        return max(c.level for c in self.nodes)


def dof_points(mesh: TetMesh, edges: EdgeNumbering) -> DofGeometry:
    """Edge midpoints and per-edge bounding boxes."""
    from .fem import edge_geometry
    return edge_geometry(mesh, edges)


def build_cluster_tree(geom: DofGeometry, n_min: int = 32) -> ClusterTree:
    """Recursive geometric bisection.

    A cluster is split at the midpoint of the longest side of the bounding
    box of its DOF points; DOFs go left or right by their point. Splitting
    stops at n_min DOFs or when all points coincide.
    """
    n = len(geom)
    if n < 1:
        raise ValueError("need at least one DOF")
    if n_min < 1:
        raise ValueError("n_min must be >= 1")
    pts, blo, bhi = geom.points, geom.lo, geom.hi
    perm = np.arange(n)
    nodes: list[Cluster] = []

    def make(start, stop, level):
        idx = perm[start:stop]
        c = Cluster(start, stop, blo[idx].min(axis=0), bhi[idx].max(axis=0), level, (), len(nodes))
        nodes.append(c)
        if stop - start <= n_min:
            return c
        p = pts[idx]
        plo, phi = p.min(axis=0), p.max(axis=0)
        ext = phi - plo
        ax = int(np.argmax(ext))
        if ext[ax] <= 0:
            return c
        mid = 0.5 * (plo[ax] + phi[ax])
        left = p[:, ax] < mid
        # stable so the resulting order is deterministic
        order = np.concatenate([np.nonzero(left)[0], np.nonzero(~left)[0]])
        perm[start:stop] = idx[order]
        split = start + int(left.sum())
        c.children = (make(start, split, level + 1), make(split, stop, level + 1))
        return c

    root = make(0, n, 0)
    perm.setflags(write=False)
    return ClusterTree(root, perm, n_min, nodes)


@dataclass(eq=False)
class BlockNode:
    row: Cluster
    col: Cluster
    kind: str
    children: list | None = None   # children[i][j] pairs row.children[i] x col.children[j]
    level: int = 0

    @property
    def shape(self):
        return (self.row.size, self.col.size)

    def leaves(self):
        if self.kind != SUBDIVIDED:
            yield self
            return
        for row in self.children:
            for ch in row:
                yield from ch.leaves()


@dataclass
class BlockStats:
    n_admissible: int
    n_dense: int
    depth: int

    @property
    def n_leaves(self):
        return self.n_admissible + self.n_dense


@dataclass(eq=False)
class BlockClusterTree:
    root: BlockNode
    row_tree: ClusterTree
    col_tree: ClusterTree
    eta: float
    stats: BlockStats

    @property
    def shape(self):
        return (self.row_tree.n, self.col_tree.n)

    def leaves(self):
        return list(self.root.leaves())


def is_admissible(tau: Cluster, sigma: Cluster, eta: float) -> bool:
    d = tau.dist(sigma)
    return d > 0 and min(tau.diam, sigma.diam) <= eta * d


def build_block_tree(row: ClusterTree, col: ClusterTree, eta: float = 2.0) -> BlockClusterTree:
    if not eta > 0:
        raise ValueError("eta must be positive")
    counts = {ADMISSIBLE: 0, DENSE: 0}
    depth = 0

    def make(tau, sigma, level):
        nonlocal depth
        depth = max(depth, level)
        if is_admissible(tau, sigma, eta):
            counts[ADMISSIBLE] += 1
            return BlockNode(tau, sigma, ADMISSIBLE, None, level)
        if tau.is_leaf or sigma.is_leaf:
            counts[DENSE] += 1
            return BlockNode(tau, sigma, DENSE, None, level)
        kids = [[make(t, s, level + 1) for s in sigma.children] for t in tau.children]
        return BlockNode(tau, sigma, SUBDIVIDED, kids, level)

    root = make(row.root, col.root, 0)
    return BlockClusterTree(root, row, col, eta, BlockStats(counts[ADMISSIBLE], counts[DENSE], depth))


def build_square(geom: DofGeometry, n_min: int = 32, eta: float = 2.0) -> BlockClusterTree:
    ct = build_cluster_tree(geom, n_min)
    return build_block_tree(ct, ct, eta)


def block_svg(bt: BlockClusterTree, path=None, size: int = 600, ranks: dict | None = None) -> str:
    """SVG of the leaf partition: admissible leaves green, dense leaves red.

    ranks: optional {id(BlockNode): rank} printed into admissible leaves.
    """
    n, m = bt.shape
    sx, sy = size / m, size / n
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size * n / m:.0f}" '
             f'viewBox="0 0 {size} {size * n / m:.3f}">']
    for leaf in bt.leaves():
        x, y = leaf.col.start * sx, leaf.row.start * sy
        w, h = leaf.col.size * sx, leaf.row.size * sy
        colour = "#3a3" if leaf.kind == ADMISSIBLE else "#c33"
        parts.append(f'<rect x="{x:.3f}" y="{y:.3f}" width="{w:.3f}" height="{h:.3f}" '
                     f'fill="{colour}" stroke="black" stroke-width="0.3" class="{leaf.kind}"/>')
        if ranks is not None and id(leaf) in ranks and min(w, h) > 8:
            fs = min(w, h) * 0.5
            parts.append(f'<text x="{x + w / 2:.3f}" y="{y + h / 2 + fs / 3:.3f}" font-size="{fs:.2f}" '
                         f'text-anchor="middle">{ranks[id(leaf)]}</text>')
    parts.append("</svg>")
    svg = "\n".join(parts)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(svg)
    return svg

"""H-matrices: storage, truncation, formatted arithmetic and the Schulz
inverse.

An `HMatrix` wraps a tree of `HNode`s laid out on a `BlockClusterTree`.
Nodes work in the cluster-permuted ordering; the wrapper's public methods
take and return vectors in the original DOF ordering.

Leaf payloads are either dense arrays or low-rank factors (X, Y) with value
X @ Y^H. Zero blocks are rank-0 factors, whatever the leaf type.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .clustering import ADMISSIBLE, DENSE, SUBDIVIDED, BlockClusterTree, BlockNode

LOWRANK = "lowrank"
SUB = "sub"

# singular values below this fraction of the largest are numerical zeros
_ZERO_REL = 4 * np.finfo(float).eps


class IncompatibleError(ValueError):
    pass


class SchulzDivergence(ArithmeticError):
    """Schulz residual kept growing above one: A is singular or the
    truncation is too coarse for the iteration to contract."""


@dataclass(frozen=True)
class TruncationControl:
    """Rank selection for low-rank blocks.

    rank: keep at most this many singular triplets (fixed-rank mode).
    eps: keep singular values above eps * sigma_1 (relative mode).
    Neither: exact, only numerical zeros are dropped.
    r_max: hard cap applied on top of either mode.
    """
    rank: int | None = None
    eps: float | None = None
    r_max: int | None = None

    def __post_init__(self):
        if self.rank is not None and self.eps is not None:
            raise ValueError("choose either a fixed rank or a relative eps")
        if self.rank is not None and self.rank < 0:
            raise ValueError("rank must be >= 0")
        if self.eps is not None and not (0 < self.eps < 1):
            raise ValueError("eps must lie in (0, 1)")
        if self.r_max is not None and self.r_max < 0:
            raise ValueError("r_max must be >= 0")

    @property
    def mode(self) -> str:
        if self.rank is not None:
            return "fixed-rank"
        if self.eps is not None:
            return "relative-eps"
        return "exact"

    def choose_rank(self, s: np.ndarray) -> int:
        if len(s) == 0 or s[0] == 0:
            return 0
        r = int(np.count_nonzero(s > _ZERO_REL * s[0]))
        if self.rank is not None:
            r = min(r, self.rank)
        elif self.eps is not None:
            r = min(r, int(np.count_nonzero(s > self.eps * s[0])))
        if self.r_max is not None:
            r = min(r, self.r_max)
        return r

    def label(self) -> str:
        if self.rank is not None:
            return f"r={self.rank}"
        if self.eps is not None:
            return f"eps={self.eps:g}"
        return "full"


EXACT = TruncationControl()


@dataclass
class LowRankBlock:
    X: np.ndarray
    Y: np.ndarray

    @property
    def rank(self) -> int:
        return self.X.shape[1]

    def dense(self) -> np.ndarray:
        return self.X @ self.Y.conj().T


def _empty_factors(m, n):
    return np.zeros((m, 0), complex), np.zeros((n, 0), complex)


def _svd(M):
    # numpy's wrapper has far less per-call overhead on the many tiny blocks
    try:
        return np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesvd")


def truncate_dense(M: np.ndarray, ctl: TruncationControl) -> tuple[np.ndarray, np.ndarray]:
    m, n = M.shape
    if M.size == 0:
        return _empty_factors(m, n)
    U, s, Vh = _svd(M)
    r = ctl.choose_rank(s)
    return U[:, :r] * s[:r], Vh[:r].conj().T


def truncate_lowrank(X, Y, ctl: TruncationControl):
    """Recompress X Y^H via QR of both factors and an SVD of the small core."""
    m, n = X.shape[0], Y.shape[0]
    k = X.shape[1]
    if k == 0 or m == 0 or n == 0:
        return _empty_factors(m, n)
    if k >= min(m, n):
        return truncate_dense(X @ Y.conj().T, ctl)
    Qx, Rx = np.linalg.qr(X)
    Qy, Ry = np.linalg.qr(Y)
    U, s, Vh = _svd(Rx @ Ry.conj().T)
    r = ctl.choose_rank(s)
    return Qx @ (U[:, :r] * s[:r]), Qy @ Vh[:r].conj().T


def truncate_block(M, ctl: TruncationControl) -> LowRankBlock:
    """Best rank-r approximation (dense array or LowRankBlock input); the
    singular values are folded into X."""
    if isinstance(M, LowRankBlock):
        X, Y = truncate_lowrank(np.asarray(M.X, complex), np.asarray(M.Y, complex), ctl)
    else:
        X, Y = truncate_dense(np.asarray(M, complex), ctl)
    return LowRankBlock(X, Y)


# ----------------------------------------------------------------- nodes

class HNode:
    __slots__ = ("block", "kind", "dense", "X", "Y", "children", "r0", "c0", "shape")

    def __init__(self, block: BlockNode, kind, dense=None, X=None, Y=None, children=None):
        self.block = block
        self.kind = kind
        self.dense = dense
        self.X = X
        self.Y = Y
        self.children = children
        self.r0 = block.row.start
        self.c0 = block.col.start
        self.shape = (block.row.stop - block.row.start, block.col.stop - block.col.start)

    @property
    def rank(self):
        return self.X.shape[1] if self.kind == LOWRANK else None

    def iter_children(self):
        for i, row in enumerate(self.children):
            for j, ch in enumerate(row):
                yield i, j, ch

    def leaves(self):
        if self.kind == SUB:
            for _, _, ch in self.iter_children():
                yield from ch.leaves()
        else:
            yield self

    def copy(self) -> "HNode":
        if self.kind == SUB:
            return HNode(self.block, SUB, children=[[c.copy() for c in row] for row in self.children])
        if self.kind == DENSE:
            return HNode(self.block, DENSE, dense=self.dense.copy())
        return HNode(self.block, LOWRANK, X=self.X.copy(), Y=self.Y.copy())

    def set_lowrank(self, X, Y):
        self.kind, self.dense, self.children, self.X, self.Y = LOWRANK, None, None, X, Y

    def set_dense(self, D):
        self.kind, self.dense, self.children, self.X, self.Y = DENSE, D, None, None, None


def zeros_node(block: BlockNode) -> HNode:
    m, n = block.shape
    if block.kind == SUBDIVIDED:
        return HNode(block, SUB, children=[[zeros_node(b) for b in row] for row in block.children])
    if block.kind == DENSE:
        return HNode(block, DENSE, dense=np.zeros((m, n), complex))
    X, Y = _empty_factors(m, n)
    return HNode(block, LOWRANK, X=X, Y=Y)


def zero_lowrank_node(block: BlockNode) -> HNode:
    """A zero block stored as rank 0 regardless of its partition type."""
    X, Y = _empty_factors(*block.shape)
    return HNode(block, LOWRANK, X=X, Y=Y)


def node_dense(H: HNode) -> np.ndarray:
    if H.kind == DENSE:
        return H.dense
    if H.kind == LOWRANK:
        return H.X @ H.Y.conj().T
    out = np.zeros(H.shape, complex)
    for _, _, ch in H.iter_children():
        r, c = ch.r0 - H.r0, ch.c0 - H.c0
        out[r:r + ch.shape[0], c:c + ch.shape[1]] = node_dense(ch)
    return out


def matmat(H: HNode, M: np.ndarray) -> np.ndarray:
    """H @ M for a dense M with H.shape[1] rows."""
    if H.kind == DENSE:
        return H.dense @ M
    if H.kind == LOWRANK:
        if H.X.shape[1] == 0:
            return np.zeros((H.shape[0],) + M.shape[1:], complex)
        return H.X @ (H.Y.conj().T @ M)
    out = np.zeros((H.shape[0],) + M.shape[1:], complex)
    for _, _, ch in H.iter_children():
        r, c = ch.r0 - H.r0, ch.c0 - H.c0
        out[r:r + ch.shape[0]] += matmat(ch, M[c:c + ch.shape[1]])
    return out


def rmatmat(H: HNode, M: np.ndarray) -> np.ndarray:
    """H^H @ M for a dense M with H.shape[0] rows."""
    if H.kind == DENSE:
        return H.dense.conj().T @ M
    if H.kind == LOWRANK:
        if H.X.shape[1] == 0:
            return np.zeros((H.shape[1],) + M.shape[1:], complex)
        return H.Y @ (H.X.conj().T @ M)
    out = np.zeros((H.shape[1],) + M.shape[1:], complex)
    for _, _, ch in H.iter_children():
        r, c = ch.r0 - H.r0, ch.c0 - H.c0
        out[c:c + ch.shape[1]] += rmatmat(ch, M[r:r + ch.shape[0]])
    return out


def scale_node(H: HNode, alpha) -> None:
    if H.kind == DENSE:
        H.dense *= alpha
    elif H.kind == LOWRANK:
        H.X = H.X * alpha
    else:
        for _, _, ch in H.iter_children():
            scale_node(ch, alpha)


# ------------------------------------------------------ formatted updates

# While set, sums into low-rank leaves are only stacked and get recompressed
# once the stacked rank reaches half the block size; the caller finishes with
# truncate_node. Used inside h_multiply / h_add, where every leaf receives
# many contributions.
_DEFER = [False]


@contextmanager
def deferred_truncation():
    old = _DEFER[0]
    _DEFER[0] = True
    try:
        yield
    finally:
        _DEFER[0] = old


def _stack_into(C: HNode, X, Y, ctl) -> None:
    if _DEFER[0] and C.dense is not None:
        C.dense += X @ Y.conj().T
        return
    X2, Y2 = np.hstack([C.X, X]), np.hstack([C.Y, Y])
    if _DEFER[0] and 2 * X2.shape[1] < min(C.shape):
        C.X, C.Y = X2, Y2
    else:
        C.X, C.Y = truncate_lowrank(X2, Y2, ctl)


def add_lowrank_into(C: HNode, X, Y, ctl) -> None:
    """C += X Y^H, re-truncating low-rank leaves."""
    if X.shape[1] == 0:
        return
    if C.kind == DENSE:
        C.dense += X @ Y.conj().T
    elif C.kind == LOWRANK:
        _stack_into(C, X, Y, ctl)
    else:
        for _, _, ch in C.iter_children():
            r, c = ch.r0 - C.r0, ch.c0 - C.c0
            add_lowrank_into(ch, X[r:r + ch.shape[0]], Y[c:c + ch.shape[1]], ctl)


def add_dense_into(C: HNode, D, ctl) -> None:
    """C += D for a dense array D."""
    if C.kind == DENSE:
        C.dense += D
    elif C.kind == LOWRANK:
        if _DEFER[0]:
            # low-rank leaves use the dense slot as a pending-sum buffer
            if C.dense is None:
                C.dense = np.array(D, dtype=complex)
            else:
                C.dense += D
        elif C.X.shape[1] == 0:
            C.X, C.Y = truncate_dense(D, ctl)
        else:
            C.X, C.Y = truncate_dense(D + C.X @ C.Y.conj().T, ctl)
    else:
        for _, _, ch in C.iter_children():
            r, c = ch.r0 - C.r0, ch.c0 - C.c0
            add_dense_into(ch, D[r:r + ch.shape[0], c:c + ch.shape[1]], ctl)


def add_into(C: HNode, B: HNode, alpha, ctl) -> None:
    """C += alpha * B, formatted."""
    if B.kind == LOWRANK:
        add_lowrank_into(C, alpha * B.X, B.Y, ctl)
    elif B.kind == DENSE:
        add_dense_into(C, alpha * B.dense, ctl)
    elif C.kind == SUB:
        for i, j, ch in C.iter_children():
            add_into(ch, B.children[i][j], alpha, ctl)
    else:
        add_dense_into(C, alpha * node_dense(B), ctl)


def _product_factors(A: HNode, B: HNode):
    """Exact factors (X, Y) with A @ B = X Y^H, assuming A or B is a leaf."""
    if A.kind == LOWRANK:
        return A.X, rmatmat(B, A.Y)
    if B.kind == LOWRANK:
        return matmat(A, B.X), B.Y
    if A.kind == DENSE:
        m, p = A.dense.shape
        if p <= m:
            return A.dense, rmatmat(B, np.eye(p, dtype=complex))
        return np.eye(m, dtype=complex), rmatmat(B, A.dense.conj().T)
    if B.kind == DENSE:
        p, n = B.dense.shape
        if p <= n:
            return matmat(A, np.eye(p, dtype=complex)), B.dense.conj().T
        return matmat(A, B.dense), np.eye(n, dtype=complex)
    raise AssertionError("both operands subdivided")


def _product_lowrank(A: HNode, B: HNode, ctl):
    """Truncated low-rank approximation of A @ B."""
    if A.kind != SUB or B.kind != SUB:
        X, Y = _product_factors(A, B)
        return truncate_lowrank(X, Y, ctl)
    if _is_small(A, B):
        return truncate_dense(node_dense(A) @ node_dense(B), ctl)
    m, n = A.shape[0], B.shape[1]
    Xs, Ys = [], []
    for i, Arow in enumerate(A.children):
        for j in range(len(B.children[0])):
            X = Y = None
            for k, Aik in enumerate(Arow):
                Bkj = B.children[k][j]
                Xk, Yk = _product_lowrank(Aik, Bkj, ctl)
                if X is None:
                    X, Y = Xk, Yk
                elif Xk.shape[1]:
                    X, Y = truncate_lowrank(np.hstack([X, Xk]), np.hstack([Y, Yk]), ctl)
            if X is None or X.shape[1] == 0:
                continue
            r, c = Arow[0].r0 - A.r0, B.children[0][j].c0 - B.c0
            Xf = np.zeros((m, X.shape[1]), complex)
            Yf = np.zeros((n, X.shape[1]), complex)
            Xf[r:r + X.shape[0]] = X
            Yf[c:c + Y.shape[0]] = Y
            Xs.append(Xf)
            Ys.append(Yf)
    if not Xs:
        return _empty_factors(m, n)
    return truncate_lowrank(np.hstack(Xs), np.hstack(Ys), ctl)


# products whose operands all fit in this many entries are formed densely
SMALL_BLOCK = 48 * 48


def _is_small(*nodes) -> bool:
    return all(n.shape[0] * n.shape[1] <= SMALL_BLOCK for n in nodes)


def addmul(C: HNode, A: HNode, B: HNode, alpha, ctl) -> None:
    """C += alpha * A @ B in formatted arithmetic.

    Products landing in a low-rank leaf are accumulated per leaf and
    truncated once.
    """
    if (A.kind == SUB or B.kind == SUB) and _is_small(A, B, C):
        P = node_dense(A) @ node_dense(B)
        if alpha != 1:
            P *= alpha
        add_dense_into(C, P, ctl)
    elif C.kind == SUB and A.kind == SUB and B.kind == SUB:
        for i, j, Cij in C.iter_children():
            for k in range(len(A.children[i])):
                addmul(Cij, A.children[i][k], B.children[k][j], alpha, ctl)
    elif C.kind == DENSE:
        X, Y = _product_factors(A, B) if (A.kind != SUB or B.kind != SUB) else (None, None)
        if X is None:
            C.dense += alpha * matmat(A, node_dense(B))
        else:
            C.dense += alpha * (X @ Y.conj().T)
    elif C.kind == LOWRANK:
        X, Y = _product_lowrank(A, B, ctl)
        if X.shape[1]:
            _stack_into(C, alpha * X, Y, ctl)
    else:
        X, Y = _product_factors(A, B)
        add_lowrank_into(C, alpha * X, Y, ctl)


def truncate_node(H: HNode, ctl) -> None:
    """Recompress every low-rank leaf, folding in pending dense sums."""
    for leaf in H.leaves():
        if leaf.kind != LOWRANK:
            continue
        if leaf.dense is not None:
            D = leaf.dense
            if leaf.X.shape[1]:
                D = D + leaf.X @ leaf.Y.conj().T
            leaf.dense = None
            leaf.X, leaf.Y = truncate_dense(D, ctl)
        else:
            leaf.X, leaf.Y = truncate_lowrank(leaf.X, leaf.Y, ctl)


def permute_rows(H: HNode, q: np.ndarray) -> None:
    """Reorder the rows of H in place: new row i is old row q[i].

    q is relative to H's first row and must map every row cluster of the
    subtree onto itself.
    """
    if H.kind == DENSE:
        H.dense = H.dense[q]
    elif H.kind == LOWRANK:
        H.X = H.X[q]
    else:
        for row in H.children:
            ch = row[0]
            a = ch.r0 - H.r0
            sub = q[a:a + ch.shape[0]] - a
            for c in row:
                permute_rows(c, sub)


# -------------------------------------------------------------- wrapper

class HMatrix:
    """Hierarchical matrix on a square or rectangular block cluster tree.

    row_pivots: optional leaf-local row permutation q (cluster ordering); the
    represented matrix is then P N with (P N)[q] = N for the node matrix N.
    """

    def __init__(self, tree: BlockClusterTree, root: HNode, row_pivots=None):
        self.tree = tree
        self.root = root
        self.row_pivots = row_pivots

    @property
    def shape(self):
        return self.tree.shape

    @property
    def row_perm(self):
        return self.tree.row_tree.perm

    @property
    def col_perm(self):
        return self.tree.col_tree.perm

    def _to_internal(self, x):
        x = np.asarray(x)
        if x.shape[0] != self.shape[1]:
            raise ValueError(f"dimension mismatch: expected {self.shape[1]}, got {x.shape[0]}")
        return x[self.col_perm]

    def _from_internal(self, y):
        if self.row_pivots is not None:
            out = np.empty_like(y)
            out[self.row_pivots] = y
            y = out
        res = np.empty_like(y)
        res[self.row_perm] = y
        return res

    def _plan(self):
        # flat leaf list (row slice, col slice, node); valid because public
        # HMatrix instances are not mutated after construction
        plan = getattr(self, "_leaf_plan", None)
        if plan is None:
            plan = [(slice(lf.r0, lf.r0 + lf.shape[0]), slice(lf.c0, lf.c0 + lf.shape[1]), lf)
                    for lf in self.root.leaves()
                    if lf.kind == DENSE or lf.X.shape[1] > 0]
            self._leaf_plan = plan
        return plan

    def _apply(self, xi):
        y = np.zeros((self.shape[0],) + xi.shape[1:], complex)
        for rs, cs, lf in self._plan():
            if lf.kind == DENSE:
                y[rs] += lf.dense @ xi[cs]
            else:
                y[rs] += lf.X @ (lf.Y.conj().T @ xi[cs])
        return y

    def _apply_h(self, yi):
        z = np.zeros((self.shape[1],) + yi.shape[1:], complex)
        for rs, cs, lf in self._plan():
            if lf.kind == DENSE:
                z[cs] += lf.dense.conj().T @ yi[rs]
            else:
                z[cs] += lf.Y @ (lf.X.conj().T @ yi[rs])
        return z

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        return self._from_internal(self._apply(self._to_internal(x)))

    __matmul__ = matvec

    def rmatvec(self, y) -> np.ndarray:
        """H^H @ y."""
        y = np.asarray(y, dtype=complex)
        if y.shape[0] != self.shape[0]:
            raise ValueError("dimension mismatch")
        yi = y[self.row_perm]
        if self.row_pivots is not None:
            yi = yi[self.row_pivots]
        z = self._apply_h(yi)
        out = np.empty_like(z)
        out[self.col_perm] = z
        return out

    def to_dense(self) -> np.ndarray:
        D = node_dense(self.root)
        if self.row_pivots is not None:
            E = np.empty_like(D)
            E[self.row_pivots] = D
            D = E
        out = np.empty_like(D)
        out[np.ix_(self.row_perm, self.col_perm)] = D
        return out

    def internal_dense(self) -> np.ndarray:
        """Dense matrix of the node tree, in cluster ordering, no pivots."""
        return node_dense(self.root)

    def copy(self) -> "HMatrix":
        piv = None if self.row_pivots is None else self.row_pivots.copy()
        return HMatrix(self.tree, self.root.copy(), piv)

    def leaves(self):
        return list(self.root.leaves())

    def max_rank(self) -> int:
        return max([lf.X.shape[1] for lf in self.root.leaves() if lf.kind == LOWRANK], default=0)

    def memory_entries(self) -> int:
        """Stored complex entries: (|tau|+|sigma|) r per low-rank leaf plus
        |tau||sigma| per dense leaf."""
        total = 0
        for lf in self.root.leaves():
            m, n = lf.shape
            total += (m + n) * lf.X.shape[1] if lf.kind == LOWRANK else m * n
        return total

    def memory_bytes(self) -> int:
        return 16 * self.memory_entries()

    def rank_map(self) -> dict:
        return {id(lf.block): lf.X.shape[1] for lf in self.root.leaves() if lf.kind == LOWRANK}


def _check_same_tree(A: HMatrix, B: HMatrix):
    if A.tree is not B.tree and (A.tree.row_tree is not B.tree.row_tree
                                 or A.tree.col_tree is not B.tree.col_tree):
        raise IncompatibleError("H-matrices live on different block trees")
    if A.row_pivots is not None or B.row_pivots is not None:
        raise IncompatibleError("arithmetic on pivoted factors is not supported")


def h_zeros(tree: BlockClusterTree) -> HMatrix:
    return HMatrix(tree, zeros_node(tree.root))


def h_identity(tree: BlockClusterTree) -> HMatrix:
    if tree.row_tree is not tree.col_tree:
        raise IncompatibleError("identity needs identical row and column trees")
    H = h_zeros(tree)
    for lf in H.root.leaves():
        if lf.block.row is lf.block.col:
            lf.dense[...] = np.eye(lf.shape[0])
    return H


def from_dense(tree: BlockClusterTree, D: np.ndarray, ctl=EXACT) -> HMatrix:
    """Compress a dense matrix given in original ordering."""
    D = np.asarray(D, dtype=complex)
    if D.shape != tree.shape:
        raise ValueError("dimension mismatch")
    Dp = D[np.ix_(tree.row_tree.perm, tree.col_tree.perm)]

    def build(b: BlockNode):
        r, c = b.row, b.col
        blk = Dp[r.start:r.stop, c.start:c.stop]
        if b.kind == SUBDIVIDED:
            return HNode(b, SUB, children=[[build(x) for x in row] for row in b.children])
        if b.kind == DENSE:
            return HNode(b, DENSE, dense=blk.copy())
        X, Y = truncate_dense(blk, ctl)
        return HNode(b, LOWRANK, X=X, Y=Y)

    return HMatrix(tree, build(tree.root))


def sparse_to_h(sys_or_matrix, tree: BlockClusterTree, ctl=EXACT) -> HMatrix:
    """H-matrix of a sparse matrix: dense leaves are copied, admissible
    leaves are compressed from the nonzero rows/columns of their
    restriction, so blocks of rank <= the control's rank are exact."""
    A = getattr(sys_or_matrix, "matrix", sys_or_matrix)
    A = sp.csr_matrix(A, dtype=complex)
    if A.shape != tree.shape:
        raise ValueError(f"matrix is {A.shape}, block tree is {tree.shape}")
    Ap = A[tree.row_tree.perm][:, tree.col_tree.perm].tocsr()

    def build(b: BlockNode):
        r, c = b.row, b.col
        if b.kind == SUBDIVIDED:
            return HNode(b, SUB, children=[[build(x) for x in row] for row in b.children])
        blk = Ap[r.start:r.stop, c.start:c.stop]
        if b.kind == DENSE:
            return HNode(b, DENSE, dense=blk.toarray())
        blk = blk.tocoo()
        m, n = b.shape
        if blk.nnz == 0 or not np.any(blk.data):
            X, Y = _empty_factors(m, n)
            return HNode(b, LOWRANK, X=X, Y=Y)
        rows = np.unique(blk.row)
        cols = np.unique(blk.col)
        core = blk.tocsr()[rows][:, cols].toarray()
        Xc, Yc = truncate_dense(core, ctl)
        X = np.zeros((m, Xc.shape[1]), complex)
        Y = np.zeros((n, Xc.shape[1]), complex)
        X[rows] = Xc
        Y[cols] = Yc
        return HNode(b, LOWRANK, X=X, Y=Y)

    return HMatrix(tree, build(tree.root))


def h_matvec(H: HMatrix, x) -> np.ndarray:
    return H.matvec(x)


def h_add(A: HMatrix, B: HMatrix, ctl=EXACT, alpha=1.0) -> HMatrix:
    """A + alpha B with every low-rank leaf re-truncated."""
    _check_same_tree(A, B)
    C = A.copy()
    add_into(C.root, B.root, alpha, ctl)
    return C


def h_scale(A: HMatrix, alpha) -> HMatrix:
    C = A.copy()
    scale_node(C.root, alpha)
    return C


def h_multiply(A: HMatrix, B: HMatrix, ctl=EXACT) -> HMatrix:
    """Formatted product on A's block tree."""
    if A.tree.col_tree is not B.tree.row_tree:
        raise IncompatibleError("column tree of A differs from row tree of B")
    if A.row_pivots is not None or B.row_pivots is not None:
        raise IncompatibleError("arithmetic on pivoted factors is not supported")
    if B.tree.col_tree is not A.tree.col_tree:
        raise IncompatibleError("product needs square operands on one cluster tree")
    C = h_zeros(A.tree)
    with deferred_truncation():
        addmul(C.root, A.root, B.root, 1.0, ctl)
    truncate_node(C.root, ctl)
    return C


# ------------------------------------------------------------- norms

def _rng(seed):
    return np.random.default_rng(seed)


def power_norm(apply, apply_h, n, iters=50, seed=0, tol=0.0, x0=None, return_vector=False):
    """Estimate ||M||_2 by power iteration on M^H M.

    tol > 0 stops early once the estimate changes by less than tol
    (relative); x0 warm-starts the iteration.
    """
    if x0 is None:
        rng = _rng(seed)
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    else:
        x = np.array(x0, dtype=complex)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        y = apply(x)
        ny = np.linalg.norm(y)
        if ny == 0:
            est = 0.0
            break
        z = apply_h(y)
        nz = np.linalg.norm(z)
        if nz == 0:
            est = float(ny)
            break
        new = max(math.sqrt(nz), ny)
        x = z / nz
        done = tol and abs(new - est) <= tol * new
        est = new
        if done:
            break
    est = float(est)
    return (est, x) if return_vector else est


def _as_operator(ref):
    if isinstance(ref, HMatrix):
        return ref.matvec, ref.rmatvec
    if sp.issparse(ref):
        R = sp.csr_matrix(ref)
        RH = R.conj().T.tocsr()
        return (lambda x: R @ x), (lambda y: RH @ y)
    if hasattr(ref, "matrix"):
        return _as_operator(ref.matrix)
    R = np.asarray(ref)
    return (lambda x: R @ x), (lambda y: R.conj().T @ y)


def spectral_error(H, reference, iters: int = 100, seed: int = 0) -> float:
    """Power-iteration estimate of ||H - reference||_2."""
    f, fh = _as_operator(H)
    g, gh = _as_operator(reference)
    n = H.shape[1]
    return power_norm(lambda x: f(x) - g(x), lambda y: fh(y) - gh(y), n, iters, seed)


def spectral_norm(H, iters: int = 100, seed: int = 0) -> float:
    f, fh = _as_operator(H)
    return power_norm(f, fh, H.shape[1], iters, seed)


def _norm1(H: HMatrix) -> float:
    return float(np.abs(node_abs_colsum(H.root)).max())


def node_abs_colsum(H: HNode) -> np.ndarray:
    # column sums of |entries|; low-rank leaves are expanded one at a time
    if H.kind == DENSE:
        return np.abs(H.dense).sum(axis=0)
    if H.kind == LOWRANK:
        if H.X.shape[1] == 0:
            return np.zeros(H.shape[1])
        return np.abs(H.X @ H.Y.conj().T).sum(axis=0)
    out = np.zeros(H.shape[1])
    for _, _, ch in H.iter_children():
        c = ch.c0 - H.c0
        out[c:c + ch.shape[1]] += node_abs_colsum(ch)
    return out


def _conj_transpose_node(H: HNode, tree_lookup) -> HNode:
    blk = tree_lookup(H.block)
    if H.kind == DENSE:
        return HNode(blk, DENSE, dense=H.dense.conj().T.copy())
    if H.kind == LOWRANK:
        return HNode(blk, LOWRANK, X=H.Y.copy(), Y=H.X.copy())
    n_i, n_j = len(H.children), len(H.children[0])
    kids = [[_conj_transpose_node(H.children[i][j], tree_lookup) for i in range(n_i)]
            for j in range(n_j)]
    return HNode(blk, SUB, children=kids)


def h_conj_transpose(A: HMatrix) -> HMatrix:
    """A^H on the transposed block tree (same tree for symmetric partitions)."""
    if A.row_pivots is not None:
        raise IncompatibleError("transpose of pivoted factors is not supported")
    tree = A.tree
    if tree.row_tree is not tree.col_tree:
        raise IncompatibleError("conjugate transpose implemented for square trees")
    index = {}
    for b in _iter_blocks(tree.root):
        index[(b.row.id, b.col.id)] = b

    def lookup(b):
        t = index.get((b.col.id, b.row.id))
        if t is None:
            raise IncompatibleError("block partition is not symmetric")
        return t

    return HMatrix(tree, _conj_transpose_node(A.root, lookup))


def _iter_blocks(b: BlockNode):
    yield b
    if b.kind == SUBDIVIDED:
        for row in b.children:
            for c in row:
                yield from _iter_blocks(c)


@dataclass
class SchulzInfo:
    sweeps: int
    residuals: list
    converged: bool


def schulz_inverse(A: HMatrix, ctl=EXACT, max_sweeps: int = 100, stop_tol: float = 1e-10,
                   norm_iters: int = 30, return_info: bool = False):
    """Newton-Schulz iteration X <- X (2I - A X) in formatted arithmetic.

    Starts from A^H / (||A||_1 ||A||_inf). The residual ||I - A X||_2 is
    estimated by power iteration each sweep; the iteration stops below
    stop_tol, after max_sweeps, or once the truncation floor is reached
    (no progress for 3 sweeps while below one), returning the best iterate.
    Growth for 3 consecutive sweeps at or above one raises SchulzDivergence.
    """
    I = h_identity(A.tree)
    n1 = _norm1(A)
    ninf = _norm1(h_conj_transpose(A))
    if n1 == 0:
        raise SchulzDivergence("zero matrix")
    X = h_scale(h_conj_transpose(A), 1.0 / (n1 * ninf))
    X = HMatrix(X.tree, X.root)
    truncate_node(X.root, ctl)

    state = {"x": None}

    def residual(Xk):
        r, state["x"] = power_norm(lambda v: v - A.matvec(Xk.matvec(v)),
                                   lambda w: w - Xk.rmatvec(A.rmatvec(w)),
                                   A.shape[0], norm_iters, seed=1, tol=1e-3,
                                   x0=state["x"], return_vector=True)
        return r

    res = [residual(X)]
    best, best_res = X, res[0]
    grow = stall = 0
    converged = res[0] <= stop_tol
    sweeps = 0
    while not converged and sweeps < max_sweeps:
        sweeps += 1
        AX = h_multiply(A, X, ctl)
        R = h_add(h_scale(I, 2.0), AX, ctl, alpha=-1.0)
        X = h_multiply(X, R, ctl)
        r = residual(X)
        if not np.isfinite(r):
            raise SchulzDivergence("non-finite Schulz residual")
        prev = res[-1]
        res.append(r)
        grow = grow + 1 if r > prev else 0
        if r >= 1 and grow >= 3:
            raise SchulzDivergence(f"Schulz residual grew to {r:.3e} over 3 sweeps")
        # exact sweeps square the residual; once it is clearly below one,
        # much slower decay means the truncation error dominates
        if prev < 0.5:
            stall = 0 if r < prev ** 1.5 else stall + 1
        if r < best_res:
            best, best_res = X, r
        if r <= stop_tol:
            converged = True
        elif stall >= 3:
            break
    info = SchulzInfo(sweeps, res, converged)
    return (best, info) if return_info else best

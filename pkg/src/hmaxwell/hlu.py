"""Hierarchical LU factorisation and block triangular solves.

The factorisation recurses over the diagonal blocks of the block cluster
tree. Diagonal leaves get a dense LU with partial pivoting; row swaps never
leave a leaf, so the factors satisfy  A[q] = L U  for a leaf-local row
permutation q (stored as `row_pivots` on L).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .hcore import (DENSE, EXACT, LOWRANK, SUB, HMatrix, HNode, IncompatibleError,
                    TruncationControl, addmul, matmat, permute_rows, rmatmat,
                    zero_lowrank_node)

PIVOT_TOL = 1e-14


class FactorizationBreakdown(ArithmeticError):
    """A diagonal leaf has a (numerically) zero pivot."""

    def __init__(self, msg, leaf=None):
        super().__init__(msg)
        self.leaf = leaf


@dataclass
class HLuFactors:
    L: HMatrix
    U: HMatrix
    ctl: TruncationControl

    @property
    def pivots(self) -> np.ndarray:
        return self.L.row_pivots

    def solve(self, r) -> np.ndarray:
        return upper_solve(self.U, lower_solve(self.L, r))

    def memory_bytes(self) -> int:
        return self.L.memory_bytes() + self.U.memory_bytes()


# --------------------------------------------------- dense right-hand sides

def solve_lower_mat(L: HNode, M: np.ndarray) -> None:
    """M <- L^-1 M in place, L unit lower triangular."""
    if L.kind == DENSE:
        M[...] = scipy.linalg.solve_triangular(L.dense, M, lower=True, unit_diagonal=True,
                                               check_finite=False)
        return
    if L.kind != SUB:
        raise IncompatibleError("diagonal block of L must be dense or subdivided")
    kids = L.children
    for i in range(len(kids)):
        Lii = kids[i][i]
        ri = slice(Lii.r0 - L.r0, Lii.r0 - L.r0 + Lii.shape[0])
        solve_lower_mat(Lii, M[ri])
        for j in range(i + 1, len(kids)):
            Lji = kids[j][i]
            rj = slice(Lji.r0 - L.r0, Lji.r0 - L.r0 + Lji.shape[0])
            M[rj] -= matmat(Lji, M[ri])


def solve_upper_mat(U: HNode, M: np.ndarray) -> None:
    """M <- U^-1 M in place, U upper triangular."""
    if U.kind == DENSE:
        M[...] = scipy.linalg.solve_triangular(U.dense, M, lower=False, check_finite=False)
        return
    if U.kind != SUB:
        raise IncompatibleError("diagonal block of U must be dense or subdivided")
    kids = U.children
    for i in reversed(range(len(kids))):
        Uii = kids[i][i]
        ri = slice(Uii.r0 - U.r0, Uii.r0 - U.r0 + Uii.shape[0])
        solve_upper_mat(Uii, M[ri])
        for j in range(i):
            Uji = kids[j][i]
            rj = slice(Uji.r0 - U.r0, Uji.r0 - U.r0 + Uji.shape[0])
            M[rj] -= matmat(Uji, M[ri])


def solve_upper_h_mat(U: HNode, M: np.ndarray) -> None:
    """M <- U^-H M in place (forward substitution with U^H)."""
    if U.kind == DENSE:
        M[...] = scipy.linalg.solve_triangular(U.dense, M, lower=False, trans="C",
                                               check_finite=False)
        return
    kids = U.children
    for i in range(len(kids)):
        Uii = kids[i][i]
        ri = slice(Uii.r0 - U.r0, Uii.r0 - U.r0 + Uii.shape[0])
        solve_upper_h_mat(Uii, M[ri])
        for j in range(i + 1, len(kids)):
            Uij = kids[i][j]
            rj = slice(Uij.c0 - U.c0, Uij.c0 - U.c0 + Uij.shape[1])
            M[rj] -= rmatmat(Uij, M[ri])


# --------------------------------------------------- H-matrix right-hand sides

def solve_lower_h(L: HNode, B: HNode, ctl) -> None:
    """B <- L^-1 B in formatted arithmetic. Low-rank B keeps its rank."""
    if B.kind == LOWRANK:
        if B.X.shape[1]:
            B.X = B.X.copy()
            solve_lower_mat(L, B.X)
        return
    if B.kind == DENSE:
        solve_lower_mat(L, B.dense)
        return
    if L.kind != SUB:
        raise IncompatibleError("subdivided right-hand side needs a subdivided L")
    n = len(L.children)
    for j in range(len(B.children[0])):
        for i in range(n):
            solve_lower_h(L.children[i][i], B.children[i][j], ctl)
            for k in range(i + 1, n):
                addmul(B.children[k][j], L.children[k][i], B.children[i][j], -1.0, ctl)


def solve_upper_right_h(U: HNode, B: HNode, ctl) -> None:
    """B <- B U^-1 in formatted arithmetic."""
    if B.kind == LOWRANK:
        if B.Y.shape[1]:
            B.Y = B.Y.copy()
            solve_upper_h_mat(U, B.Y)
        return
    if B.kind == DENSE:
        Z = B.dense.conj().T.copy()
        solve_upper_h_mat(U, Z)
        B.dense = Z.conj().T.copy()
        return
    if U.kind != SUB:
        raise IncompatibleError("subdivided right-hand side needs a subdivided U")
    n = len(U.children)
    for i in range(len(B.children)):
        for j in range(n):
            solve_upper_right_h(U.children[j][j], B.children[i][j], ctl)
            for k in range(j + 1, n):
                addmul(B.children[i][k], B.children[i][j], U.children[j][k], -1.0, ctl)


# --------------------------------------------------------------- factorise

def _lu_node(A: HNode, ctl) -> tuple[HNode, HNode, np.ndarray]:
    """Factor the diagonal node A (consumed). Returns L, U and the local row
    permutation q with A[q] = L U."""
    m = A.shape[0]
    if A.kind == DENSE:
        D = A.dense
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(D, check_finite=False)
        scale = np.linalg.norm(D)
        d = np.abs(np.diag(lu))
        if scale == 0 or d.min() < PIVOT_TOL * scale or not np.all(np.isfinite(lu)):
            raise FactorizationBreakdown(
                f"zero pivot in diagonal leaf rows {A.r0}:{A.r0 + m} "
                f"(|pivot|={d.min():.2e}, |leaf|={scale:.2e})", leaf=(A.r0, A.r0 + m))
        q = np.arange(m)
        for i, p in enumerate(piv):
            q[i], q[p] = q[p], q[i]
        Ld = np.tril(lu, -1) + np.eye(m)
        Ud = np.triu(lu)
        return HNode(A.block, DENSE, dense=Ld), HNode(A.block, DENSE, dense=Ud), q
    if A.kind != SUB:
        raise IncompatibleError("diagonal blocks must be dense or subdivided")

    n = len(A.children)
    Lk = [[None] * n for _ in range(n)]
    Uk = [[None] * n for _ in range(n)]
    qs = []
    for i in range(n):
        Lii, Uii, qi = _lu_node(A.children[i][i], ctl)
        Lk[i][i], Uk[i][i] = Lii, Uii
        qs.append(qi)
        for k in range(i):
            permute_rows(Lk[i][k], qi)
        for j in range(i + 1, n):
            Aij = A.children[i][j]
            permute_rows(Aij, qi)
            solve_lower_h(Lii, Aij, ctl)
            Uk[i][j] = Aij
            Aji = A.children[j][i]
            solve_upper_right_h(Uii, Aji, ctl)
            Lk[j][i] = Aji
        for j in range(i + 1, n):
            for k in range(i + 1, n):
                addmul(A.children[j][k], Lk[j][i], Uk[i][k], -1.0, ctl)
    for i in range(n):
        for j in range(n):
            if i < j:
                Lk[i][j] = zero_lowrank_node(A.children[i][j].block)
            elif i > j:
                Uk[i][j] = zero_lowrank_node(A.children[i][j].block)
    offs = [A.children[i][i].r0 - A.r0 for i in range(n)]
    q = np.concatenate([qi + o for qi, o in zip(qs, offs)])
    return HNode(A.block, SUB, children=Lk), HNode(A.block, SUB, children=Uk), q


def hlu_factor(A_H: HMatrix, ctl: TruncationControl = EXACT) -> HLuFactors:
    """H-LU factorisation A_H[q] = L U with no pivoting across blocks."""
    tree = A_H.tree
    if tree.row_tree is not tree.col_tree:
        raise IncompatibleError("H-LU needs identical row and column cluster trees")
    if A_H.row_pivots is not None:
        raise IncompatibleError("input is already a pivoted factor")
    work = A_H.root.copy()
    Lr, Ur, q = _lu_node(work, ctl)
    return HLuFactors(HMatrix(tree, Lr, row_pivots=q), HMatrix(tree, Ur), ctl)


def lower_solve(L: HMatrix, r) -> np.ndarray:
    """y = L^-1 P^T r. Takes r in DOF ordering, returns y in cluster ordering."""
    r = np.asarray(r, dtype=complex)
    if r.shape[0] != L.shape[0]:
        raise ValueError(f"dimension mismatch: expected {L.shape[0]}, got {r.shape[0]}")
    y = r[L.row_perm]
    if L.row_pivots is not None:
        y = y[L.row_pivots]
    y = np.array(y, dtype=complex)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    solve_lower_mat(L.root, y)
    return y[:, 0] if squeeze else y


def upper_solve(U: HMatrix, y) -> np.ndarray:
    """x = U^-1 y. Takes y in cluster ordering, returns x in DOF ordering."""
    y = np.array(y, dtype=complex)
    if y.shape[0] != U.shape[0]:
        raise ValueError(f"dimension mismatch: expected {U.shape[0]}, got {y.shape[0]}")
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    solve_upper_mat(U.root, y)
    x = np.empty_like(y)
    x[U.col_perm] = y
    return x[:, 0] if squeeze else x


def lu_product(F: HLuFactors, ctl: TruncationControl = EXACT) -> HMatrix:
    """P L U as an H-matrix in DOF ordering (node tree of L U plus the
    pivot permutation)."""
    from .hcore import h_multiply
    Lp = HMatrix(F.L.tree, F.L.root)
    LU = h_multiply(Lp, F.U, ctl)
    return HMatrix(LU.tree, LU.root, row_pivots=F.L.row_pivots)

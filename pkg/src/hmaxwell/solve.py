"""Preconditioned solvers: H-LU corrected fixed-point iteration, restarted
GMRES with left preconditioning, and direct application of an approximate
inverse."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .fem import SparseSystem
from .hcore import HMatrix
from .hlu import HLuFactors

PRECONDITIONERS = ("hlu", "h-inverse", "none")


class DivergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-5
    max_it: int = 3000
    restart: int = 100
    preconditioner: str = "hlu"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_it < 1:
            raise ValueError("max_it must be >= 1")
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}")


@dataclass
class IterationReport:
    method: str
    iterations: int
    err_history: list = field(default_factory=list)
    final_error: float = float("nan")        # ||A x - b||_2
    relative_residual: float = float("nan")  # ||A x - b||_2 / ||b||_2
    converged: bool = False
    wall_time: float = 0.0
    stagnated: bool = False
    monotone: bool = True
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), default=float)

    @classmethod
    def from_json(cls, text: str) -> "IterationReport":
        return cls(**json.loads(text))


def _true_residual(matvec, x, b):
    r = np.linalg.norm(b - matvec(x))
    nb = np.linalg.norm(b)
    return float(r), float(r / nb) if nb else float(r)


def richardson_hlu(sys: SparseSystem, factors: HLuFactors, cfg: SolverConfig = SolverConfig(tol=1e-8)):
    """x <- x + U^-1 L^-1 (b - A x), from x = 0, with the exact sparse A.

    err_history[i] is ||b - A x_{i+1}|| / ||b|| after the (i+1)-th
    correction; the run stops once it drops below cfg.tol. Hitting max_it
    returns an unconverged report.
    """
    t0 = time.perf_counter()
    A, b = sys.matrix, sys.rhs
    nb = np.linalg.norm(b)
    x = np.zeros(sys.dim, dtype=complex)
    hist = []
    converged = nb == 0
    r = b.copy()
    while not converged and len(hist) < cfg.max_it:
        x = x + factors.solve(r)
        r = b - A @ x
        err = float(np.linalg.norm(r) / nb)
        if not np.isfinite(err):
            raise DivergenceError(f"residual became {err} after {len(hist) + 1} iterations")
        hist.append(err)
        converged = err < cfg.tol
    final, rel = _true_residual(lambda v: A @ v, x, b)
    rep = IterationReport("richardson-hlu", len(hist), hist, final, rel, bool(converged),
                          time.perf_counter() - t0, config=asdict(cfg))
    rep.monotone = bool(all(b_ < a_ for a_, b_ in zip(hist, hist[1:])))
    return x, rep


def gmres(operator: Callable, b, precond: Callable | None = None, cfg: SolverConfig = SolverConfig(),
          x0=None):
    """Restarted GMRES on M^-1 A x = M^-1 b (left preconditioning).

    `operator` and `precond` are callables v -> A v and v -> M^-1 v. The
    residual is tracked in the preconditioned norm; err_history holds
    ||M^-1 (b - A x_k)|| / ||M^-1 b|| after every inner iteration.
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=complex)
    n = len(b)
    M = precond if precond is not None else (lambda v: v)
    x = np.zeros(n, complex) if x0 is None else np.array(x0, dtype=complex)

    pb = M(b)
    nrm_pb = np.linalg.norm(pb)
    hist: list[float] = []
    monotone = True
    stagnated = False
    converged = nrm_pb == 0
    if converged:
        x[:] = 0
    total = 0
    while not converged and total < cfg.max_it:
        r = M(b - operator(x))
        beta = np.linalg.norm(r)
        if beta / nrm_pb < cfg.tol:
            converged = True
            break
        m = min(cfg.restart, cfg.max_it - total)
        V = np.zeros((m + 1, n), complex)
        Hm = np.zeros((m + 1, m), complex)
        cs = np.zeros(m, complex)
        sn = np.zeros(m, complex)
        g = np.zeros(m + 1, complex)
        g[0] = beta
        V[0] = r / beta
        cycle_start = beta / nrm_pb
        cycle = []
        k_used = 0
        for k in range(m):
            w = M(operator(V[k]))
            for i in range(k + 1):   # modified Gram-Schmidt
                Hm[i, k] = np.vdot(V[i], w)
                w = w - Hm[i, k] * V[i]
            h_next = np.linalg.norm(w)
            Hm[k + 1, k] = h_next
            for i in range(k):
                t = cs[i] * Hm[i, k] + sn[i] * Hm[i + 1, k]
                Hm[i + 1, k] = -np.conj(sn[i]) * Hm[i, k] + cs[i] * Hm[i + 1, k]
                Hm[i, k] = t
            a_, b_ = Hm[k, k], Hm[k + 1, k]
            den = np.hypot(abs(a_), abs(b_))
            if den == 0:
                cs[k], sn[k] = 1.0, 0.0
            else:
                cs[k] = abs(a_) / den if a_ != 0 else 0.0
                sn[k] = (a_ / abs(a_)) * np.conj(b_) / den if a_ != 0 else 1.0
            Hm[k, k] = cs[k] * a_ + sn[k] * b_
            Hm[k + 1, k] = 0.0
            g[k + 1] = -np.conj(sn[k]) * g[k]
            g[k] = cs[k] * g[k]
            err = float(abs(g[k + 1]) / nrm_pb)
            if not np.isfinite(err):
                raise DivergenceError("GMRES residual became non-finite")
            if cycle and err > cycle[-1] * (1 + 1e-12):
                monotone = False
            cycle.append(err)
            hist.append(err)
            total += 1
            k_used = k + 1
            if err < cfg.tol or h_next <= 1e-14 * beta:
                # lucky breakdown: the Krylov space contains the solution
                converged = err < cfg.tol or h_next <= 1e-14 * beta
                break
            V[k + 1] = w / h_next
        y = np.linalg.solve(np.triu(Hm[:k_used, :k_used]), g[:k_used]) if k_used else np.zeros(0)
        x = x + V[:k_used].T @ y
        if not converged and cycle and cycle[-1] >= cycle_start * (1 - 1e-12):
            stagnated = True
            break
    final, rel = _true_residual(operator, x, b)
    rep = IterationReport("gmres", len(hist), hist, final, rel, bool(converged),
                          time.perf_counter() - t0, stagnated, monotone, asdict(cfg))
    return x, rep


def direct_apply_inverse(B_H: HMatrix, b, sys: SparseSystem | None = None):
    """x = B_H b. With `sys`, the report carries ||A x - b|| and the
    relative residual."""
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=complex)
    x = B_H.matvec(b)
    if sys is not None:
        final, rel = _true_residual(lambda v: sys.matrix @ v, x, b)
    else:
        final = rel = float("nan")
    rep = IterationReport("h-inverse", 1, [rel], final, rel, bool(np.isfinite(final)),
                          time.perf_counter() - t0)
    return x, rep


def hlu_preconditioner(factors: HLuFactors) -> Callable:
    return factors.solve


def solution_error(x, ref) -> float:
    return float(np.linalg.norm(x - ref) / np.linalg.norm(ref))

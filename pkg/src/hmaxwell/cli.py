"""Command-line front end and experiment drivers.

    hmaxwell mesh-gen   --geometry unit-cube --level 2 -o cube.mesh
    hmaxwell assemble   --geometry unit-cube --level 1 --out-dir sys/
    hmaxwell solve      --geometry magnet --level 3 --method richardson --eps 1e-4
    hmaxwell ingest     A.mtx b.mtx --coords dofs.json
    hmaxwell reproduce table1 --k-max 2
    hmaxwell decay      --level 1 --ranks 2 4 8 16 32

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import mesh as meshmod
from .clustering import block_svg, build_block_tree, build_cluster_tree
from .fem import (BC_MODES, DENSE_CAP, KEEP_ALL, AssemblyError, MaterialParams,
                  SingularSystemError, assemble, dense_solve)
from .hcore import (HMatrix, IncompatibleError, SchulzDivergence, TruncationControl,
                    schulz_inverse, sparse_to_h, spectral_error, truncate_node)
from .hlu import FactorizationBreakdown, HLuFactors, hlu_factor
from .io import (FormatError, atomic_write, export_matrix_market, ingest_matrix_market,
                 load_hmatrix, rank_svg, save_hmatrix, write_sidecar)
from .solve import DivergenceError, SolverConfig, direct_apply_inverse, gmres, richardson_hlu

log = logging.getLogger("hmaxwell")

GEOMETRIES = ("unit-cube", "two-boxes", "magnet", "external")
METHODS = ("gmres", "richardson", "direct")
TABLE1_KAPPAS = (25.0, 100.0, 225.0, 400.0, 625.0, 900.0)
DESK_LEVEL_CAP = 3          # level 3 of the unit cube has 4 184 DOFs
CACHE_ENV = "HMAXWELL_CACHE"

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
CONFIG_ERRORS = (ValueError, KeyError, FileNotFoundError, IsADirectoryError, PermissionError)
NUMERIC_ERRORS = (ArithmeticError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    """Wraps a module error together with the pipeline stage it came from."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.cause = exc

    @property
    def exit_code(self) -> int:
        # LinAlgError subclasses ValueError, so test numerical errors first
        if isinstance(self.cause, NUMERIC_ERRORS):
            return EXIT_NUMERIC
        return EXIT_CONFIG if isinstance(self.cause, CONFIG_ERRORS) else EXIT_NUMERIC


@dataclass(frozen=True)
class RunConfig:
    """One pipeline run. `level` is our refinement level (the paper's
    Table-1 label is level + 1)."""
    geometry: str = "unit-cube"
    level: int = 1
    kappa: complex = 25.0
    beta: float | dict | None = None       # None: per-geometry default
    source: tuple | dict | None = None     # None: per-geometry default
    bc_mode: str = KEEP_ALL
    matrix_path: str | None = None
    rhs_path: str | None = None
    coords_path: str | None = None
    eta: float = 2.0
    n_min: int = 32
    rank: int | None = None
    eps: float | None = None
    r_max: int | None = None
    method: str = "gmres"
    preconditioner: str = "hlu"
    tol: float = 1e-5
    max_it: int = 3000
    restart: int = 100
    large: bool = False
    # outputs; not part of the cache key
    csv_path: str | None = None
    svg_path: str | None = None
    lu_svg_path: str | None = None
    cache_dir: str | None = None

    OUTPUT_FIELDS = ("csv_path", "svg_path", "lu_svg_path", "cache_dir")

    def __post_init__(self):
        object.__setattr__(self, "kappa", complex(self.kappa))
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"geometry must be one of {GEOMETRIES}")
        if self.geometry == "external":
            if not (self.matrix_path and self.rhs_path):
                raise ConfigError("external geometry needs matrix_path and rhs_path")
        elif self.matrix_path or self.rhs_path:
            raise ConfigError("give either a generated geometry or an external matrix, not both")
        if self.level < 0:
            raise ConfigError("level must be >= 0")
        if self.geometry != "external" and self.level > DESK_LEVEL_CAP and not self.large:
            raise ConfigError(f"level {self.level} exceeds the desk-scale cap {DESK_LEVEL_CAP}; "
                              "pass --large to run it anyway")
        if self.bc_mode not in BC_MODES:
            raise ConfigError(f"bc_mode must be one of {BC_MODES}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.method == "richardson" and self.preconditioner != "hlu":
            raise ConfigError("the Richardson iteration needs the H-LU preconditioner")
        if self.method == "direct" and self.preconditioner != "h-inverse":
            raise ConfigError("direct application needs preconditioner h-inverse")
        if not self.eta > 0 or self.n_min < 1:
            raise ConfigError("eta must be positive and n_min >= 1")
        try:
            self.truncation()
            self.solver()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def truncation(self) -> TruncationControl:
        return TruncationControl(self.rank, self.eps, self.r_max)

    def solver(self) -> SolverConfig:
        return SolverConfig(self.tol, self.max_it, self.restart, self.preconditioner)

    def materials(self) -> tuple[MaterialParams, object]:
        beta, source = self.beta, self.source
        if self.geometry == "magnet":
            beta = {meshmod.AIR: 1.0, meshmod.MAGNET: 10.0} if beta is None else beta
            source = {meshmod.MAGNET: (10.0, 10.0, 10.0)} if source is None else source
        beta = 1.0 if beta is None else beta
        source = (0.0, 0.0, 1.0) if source is None else source
        return MaterialParams(self.kappa, beta), source

    def key(self) -> str:
        """Stable hash over every field that influences the numbers."""
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in self.OUTPUT_FIELDS}
        d["kappa"] = [self.kappa.real, self.kappa.imag]
        for name in ("matrix_path", "rhs_path", "coords_path"):
            p = d[name]
            if p is not None:
                st = os.stat(p)
                d[name] = [os.path.abspath(p), st.st_size, st.st_mtime_ns]
        text = json.dumps(d, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:20]


@dataclass
class ResultRow:
    geometry: str
    level: int | str
    paper_level: int | str
    N_dof: int
    kappa: str
    truncation: str
    method: str
    preconditioner: str
    iterations: int
    converged: bool
    err_final: float          # last relative residual of the iteration
    error_2norm: float        # ||A x - b||_2
    time_mesh: float = 0.0
    time_assemble: float = 0.0
    time_cluster: float = 0.0
    time_compress: float = 0.0
    time_factor: float = 0.0
    time_solve: float = 0.0
    time_total: float = 0.0
    memory_bytes: int = 0
    n_admissible: int = 0
    n_dense: int = 0
    cache_hit: bool = False


CSV_FIELDS = [f.name for f in fields(ResultRow)]


def write_csv(path, rows) -> None:
    rows = list(rows)

    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows and isinstance(rows[0], dict)
                               else CSV_FIELDS)
            w.writeheader()
            for r in rows:
                w.writerow(r if isinstance(r, dict) else asdict(r))

    atomic_write(path, write, suffix=".csv")


def read_result_rows(path) -> list[ResultRow]:
    """Parse a results CSV back into ResultRow objects."""
    types = {f.name: f.type for f in fields(ResultRow)}
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for k, v in rec.items():
                t = types[k]
                if t == "int":
                    kw[k] = int(v)
                elif t == "float":
                    kw[k] = float(v)
                elif t == "bool":
                    kw[k] = v == "True"
                elif t == "int | str":
                    kw[k] = int(v) if v.lstrip("-").isdigit() else v
                else:
                    kw[k] = v
            out.append(ResultRow(**kw))
    return out


# ------------------------------------------------------------------ stages

def build_mesh(cfg: RunConfig):
    if cfg.geometry == "unit-cube":
        return meshmod.unit_cube(cfg.level)
    if cfg.geometry == "two-boxes":
        m = meshmod.two_boxes_geometry(1.0)
        for _ in range(cfg.level):
            m = meshmod.refine_uniform(m)
        return m
    if cfg.geometry == "magnet":
        # grid spacing 2^-level; the inclusion needs level >= 3
        m, _ = meshmod.box_with_inclusion(h=2.0 ** -cfg.level)
        return m
    raise ConfigError("external geometry has no mesh")


def build_system(cfg: RunConfig, timings: dict | None = None):
    timings = {} if timings is None else timings
    if cfg.geometry == "external":
        t = time.perf_counter()
        with _stage("ingest"):
            sys_ = ingest_matrix_market(cfg.matrix_path, cfg.rhs_path, cfg.coords_path)
        timings["assemble"] = time.perf_counter() - t
        return None, sys_
    t = time.perf_counter()
    with _stage("mesh"):
        m = build_mesh(cfg)
        edges = meshmod.enumerate_edges(m)
    timings["mesh"] = time.perf_counter() - t
    t = time.perf_counter()
    with _stage("assemble"):
        mat, source = cfg.materials()
        sys_ = assemble(m, edges, mat, source, cfg.bc_mode)
    timings["assemble"] = time.perf_counter() - t
    return m, sys_


class _stage:
    """Context manager that re-raises module errors tagged with a stage."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if ev is None or isinstance(ev, PipelineError):
            return False
        if isinstance(ev, (ValueError, ArithmeticError, OSError, KeyError, np.linalg.LinAlgError)):
            raise PipelineError(self.name, ev) from ev
        return False


def cache_dir(cfg: RunConfig) -> Path | None:
    d = cfg.cache_dir or os.environ.get(CACHE_ENV)
    return Path(d) if d else None


def _load_cached(cdir: Path | None, key: str, names):
    if cdir is None:
        return None
    paths = [cdir / f"{key}-{n}.npz" for n in names]
    if not all(p.exists() for p in paths):
        return None
    try:
        return [load_hmatrix(p) for p in paths]
    except (OSError, ValueError) as exc:
        log.warning("ignoring unreadable cache entry %s: %s", key, exc)
        return None


def _store_cached(cdir: Path | None, key: str, items: dict):
    if cdir is None:
        return
    for name, H in items.items():
        save_hmatrix(cdir / f"{key}-{name}.npz", H)


def run(cfg: RunConfig, write_outputs: bool = True) -> ResultRow:
    """mesh -> assemble -> cluster -> compress -> factor/invert -> solve."""
    t_start = time.perf_counter()
    timings: dict[str, float] = {}
    m, sys_ = build_system(cfg, timings)
    if sys_.geometry is None:
        raise PipelineError("cluster", ConfigError(
            "geometric clustering needs DOF coordinates; pass a JSON sidecar with --coords"))

    t = time.perf_counter()
    with _stage("cluster"):
        ct = build_cluster_tree(sys_.geometry, cfg.n_min)
        bt = build_block_tree(ct, ct, cfg.eta)
    timings["cluster"] = time.perf_counter() - t
    if write_outputs and cfg.svg_path:
        block_svg(bt, cfg.svg_path)

    ctl = cfg.truncation()
    t = time.perf_counter()
    with _stage("compress"):
        A_H = sparse_to_h(sys_, bt, ctl)
    timings["compress"] = time.perf_counter() - t

    key = cfg.key()
    cdir = cache_dir(cfg)
    factors = B_H = None
    hit = False
    t = time.perf_counter()
    with _stage("factor"):
        if cfg.preconditioner == "hlu":
            cached = _load_cached(cdir, key, ("L", "U"))
            if cached is not None:
                factors, hit = HLuFactors(cached[0], cached[1], ctl), True
            else:
                factors = hlu_factor(A_H, ctl)
                _store_cached(cdir, key, {"L": factors.L, "U": factors.U})
            memory = factors.memory_bytes()
        elif cfg.preconditioner == "h-inverse":
            cached = _load_cached(cdir, key, ("inv",))
            if cached is not None:
                B_H, hit = cached[0], True
            else:
                B_H = schulz_inverse(A_H, ctl)
                _store_cached(cdir, key, {"inv": B_H})
            memory = B_H.memory_bytes()
        else:
            memory = A_H.memory_bytes()
    timings["factor"] = time.perf_counter() - t
    if write_outputs and cfg.lu_svg_path and factors is not None:
        base = Path(cfg.lu_svg_path)
        rank_svg(factors.L, base.with_name(base.stem + "-L.svg"), title="L")
        rank_svg(factors.U, base.with_name(base.stem + "-U.svg"), title="U")

    t = time.perf_counter()
    scfg = cfg.solver()
    with _stage("solve"):
        if cfg.method == "richardson":
            x, rep = richardson_hlu(sys_, factors, scfg)
        elif cfg.method == "direct":
            x, rep = direct_apply_inverse(B_H, sys_.rhs, sys_)
        else:
            A = sys_.matrix
            pre = factors.solve if factors is not None else (B_H.matvec if B_H is not None else None)
            x, rep = gmres(lambda v: A @ v, sys_.rhs, pre, scfg)
    timings["solve"] = time.perf_counter() - t

    level = cfg.level if cfg.geometry != "external" else "-"
    row = ResultRow(
        geometry=cfg.geometry, level=level,
        paper_level=cfg.level + 1 if cfg.geometry == "unit-cube" else "-",
        N_dof=sys_.dim, kappa=_fmt_kappa(cfg.kappa), truncation=ctl.label(),
        method=cfg.method, preconditioner=cfg.preconditioner,
        iterations=rep.iterations, converged=rep.converged,
        err_final=rep.err_history[-1] if rep.err_history else 0.0,
        error_2norm=rep.final_error,
        time_mesh=timings.get("mesh", 0.0), time_assemble=timings.get("assemble", 0.0),
        time_cluster=timings["cluster"], time_compress=timings["compress"],
        time_factor=timings["factor"], time_solve=timings["solve"],
        memory_bytes=int(memory), n_admissible=bt.stats.n_admissible, n_dense=bt.stats.n_dense,
        cache_hit=hit)
    row.time_total = time.perf_counter() - t_start
    if write_outputs and cfg.csv_path:
        write_csv(cfg.csv_path, [row])
    return row


def _fmt_kappa(k: complex) -> str:
    k = complex(k)
    return f"{k.real:g}" if k.imag == 0 else f"{k.real:g}{k.imag:+g}j"


# ------------------------------------------------------------- experiments

def reproduce_table1(k_max: int = 2, kappas=TABLE1_KAPPAS, base: RunConfig | None = None,
                     k_min: int = 1) -> list[dict]:
    """GMRES iterations on the unit cube for levels k_min..k_max and each
    kappa (TOL 1e-5, restart 100, beta 1, J_S = e_z, full-rank H-LU).

    Failed cells carry iterations=None and the error message."""
    base = base or RunConfig()
    if k_max > DESK_LEVEL_CAP and not base.large:
        raise ConfigError(f"k_max {k_max} exceeds the desk-scale cap {DESK_LEVEL_CAP}; use --large")
    out = []
    for k in range(k_min, k_max + 1):
        for kappa in kappas:
            cfg = replace(base, geometry="unit-cube", level=k, kappa=kappa, beta=1.0,
                          source=(0.0, 0.0, 1.0), tol=1e-5, restart=100, method="gmres",
                          preconditioner="hlu", csv_path=None, svg_path=None, lu_svg_path=None)
            cell = {"level": k, "paper_level": k + 1, "kappa": _fmt_kappa(kappa)}
            try:
                row = run(cfg, write_outputs=False)
                cell.update(N_dof=row.N_dof, iterations=row.iterations if row.converged else None,
                            converged=row.converged, error_2norm=row.error_2norm,
                            time_total=row.time_total, error="")
            except PipelineError as exc:
                cell.update(N_dof=None, iterations=None, converged=False, error_2norm=math.nan,
                            time_total=math.nan, error=str(exc))
            log.info("table1 level %d kappa %s: %s", k, cell["kappa"], cell["iterations"])
            out.append(cell)
    return out


def table1_grid(cells) -> str:
    """Plain-text rendering: one row per level, one column per kappa."""
    kappas = list(dict.fromkeys(c["kappa"] for c in cells))
    levels = list(dict.fromkeys(c["level"] for c in cells))
    lines = ["level (paper k)  N_dof   " + " ".join(f"{k:>6}" for k in kappas)]
    for lv in levels:
        row = [c for c in cells if c["level"] == lv]
        n = next((c["N_dof"] for c in row if c["N_dof"]), "?")
        its = [str(c["iterations"]) if c["iterations"] is not None else "fail" for c in row]
        label = f"{lv} ({lv + 1})"
        lines.append(f"{label:<15}  {n!s:>6}   " + " ".join(f"{s:>6}" for s in its))
    return "\n".join(lines)


def decay_study(base: RunConfig | None = None, ranks=(2, 4, 8, 16, 32), mode: str = "recompress",
                iters: int = 100) -> list[dict]:
    """Error and memory of the approximate inverse B_H versus the rank.

    mode "recompress": the Schulz inverse is computed at full rank and its
    low-rank leaves are truncated to each r. mode "schulz": Schulz is run in
    rank-r arithmetic (divergent runs give error = nan). The error panel is
    skipped (nan) above the dense-oracle cap; memory is always reported.
    A final row with r="full" is appended.
    """
    base = base or RunConfig(level=1, n_min=4)
    if mode not in ("recompress", "schulz"):
        raise ConfigError("mode must be 'recompress' or 'schulz'")
    _, sys_ = build_system(base)
    with _stage("cluster"):
        ct = build_cluster_tree(sys_.geometry, base.n_min)
        bt = build_block_tree(ct, ct, base.eta)
    with _stage("compress"):
        A_H = sparse_to_h(sys_, bt)
    n = sys_.dim
    ref = None
    if n <= DENSE_CAP:
        ref = np.linalg.inv(sys_.dense())
        ref_norm = np.linalg.norm(ref, 2)
    else:
        log.warning("N=%d exceeds the dense-oracle cap %d: error column skipped", n, DENSE_CAP)
    with _stage("invert"):
        B_full = schulz_inverse(A_H)
    dense_entries = n * n
    rows = []
    for r in list(ranks) + ["full"]:
        with _stage("invert"):
            if r == "full":
                B = B_full
            elif mode == "recompress":
                B = B_full.copy()
                truncate_node(B.root, TruncationControl(rank=int(r)))
                B = HMatrix(B.tree, B.root)
            else:
                try:
                    B = schulz_inverse(A_H, TruncationControl(rank=int(r)))
                except SchulzDivergence:
                    B = None
        if B is None:
            err, mem = math.nan, math.nan
        else:
            err = spectral_error(B, ref, iters=iters) / ref_norm if ref is not None else math.nan
            mem = B.memory_entries() / dense_entries
        rows.append({"r": r, "error": err, "memory_ratio": mem})
    return rows


# --------------------------------------------------------------- argparse

def _complex(s: str) -> complex:
    try:
        return complex(s.replace(" ", ""))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None


def _json_or_float(s: str):
    try:
        return float(s)
    except ValueError:
        pass
    try:
        v = json.loads(s)
    except json.JSONDecodeError:
        raise argparse.ArgumentTypeError(f"expected a number or JSON: {s!r}") from None
    if isinstance(v, dict):
        return {int(k): val for k, val in v.items()}
    return tuple(v) if isinstance(v, list) else v


def _add_problem_args(p, mesh_only=False):
    p.add_argument("--geometry", choices=GEOMETRIES[:3] if mesh_only else GEOMETRIES, default="unit-cube")
    p.add_argument("--level", type=int, default=1, help="refinement level (paper label = level+1)")
    p.add_argument("--large", action="store_true", help="allow levels above the desk-scale cap")
    if mesh_only:
        return
    p.add_argument("--kappa", type=_complex, default=25.0)
    p.add_argument("--beta", type=_json_or_float, default=None,
                   help='number or JSON map region->beta, e.g. \'{"0":1,"1":10}\'')
    p.add_argument("--source", type=_json_or_float, default=None,
                   help='J_S as JSON 3-vector or map region->3-vector')
    p.add_argument("--bc-mode", choices=BC_MODES, default=KEEP_ALL)
    p.add_argument("--matrix", dest="matrix_path")
    p.add_argument("--rhs", dest="rhs_path")
    p.add_argument("--coords", dest="coords_path")


def _add_solver_args(p):
    p.add_argument("--eta", type=float, default=2.0)
    p.add_argument("--n-min", type=int, default=32)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--rank", type=int, help="fixed-rank truncation")
    g.add_argument("--eps", type=float, help="relative truncation threshold")
    p.add_argument("--r-max", type=int)
    p.add_argument("--method", choices=METHODS, default="gmres")
    p.add_argument("--preconditioner", choices=("hlu", "h-inverse", "none"), default=None,
                   help="default: hlu (h-inverse for --method direct)")
    p.add_argument("--tol", type=float, default=None, help="default 1e-5 (1e-8 for richardson)")
    p.add_argument("--max-it", type=int, default=3000)
    p.add_argument("--restart", type=int, default=100)
    p.add_argument("--csv", dest="csv_path")
    p.add_argument("--svg", dest="svg_path", help="block partition SVG")
    p.add_argument("--dump-lu-svg", dest="lu_svg_path", help="rank maps of L and U (suffix -L/-U)")
    p.add_argument("--cache-dir", help=f"factor cache (default: ${CACHE_ENV})")


def _config_from_args(a) -> RunConfig:
    kw = {f.name: getattr(a, f.name) for f in fields(RunConfig)
          if hasattr(a, f.name) and getattr(a, f.name) is not None}
    if getattr(a, "preconditioner", None) is None and kw.get("method") == "direct":
        kw["preconditioner"] = "h-inverse"
    if getattr(a, "tol", None) is None and kw.get("method") == "richardson":
        kw["tol"] = 1e-8
    if kw.get("matrix_path"):
        kw["geometry"] = "external"
    return RunConfig(**kw)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hmaxwell", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    q = sub.add_parser("mesh-gen", help="write a generated mesh in the ASCII mesh format")
    _add_problem_args(q, mesh_only=True)
    q.add_argument("-o", "--output", required=True)

    q = sub.add_parser("assemble", help="assemble and export A, b (Matrix Market) and DOF coordinates")
    _add_problem_args(q)
    q.add_argument("--out-dir", required=True)

    q = sub.add_parser("solve", help="run the full pipeline and report one result row")
    _add_problem_args(q)
    _add_solver_args(q)

    q = sub.add_parser("ingest", help="solve an external Matrix Market system")
    q.add_argument("matrix_path")
    q.add_argument("rhs_path")
    q.add_argument("--coords", dest="coords_path")
    _add_solver_args(q)

    q = sub.add_parser("reproduce", help="reproduce a table of the study")
    q.add_argument("what", choices=("table1",))
    q.add_argument("--k-max", type=int, default=2)
    q.add_argument("--kappas", type=float, nargs="+", default=list(TABLE1_KAPPAS))
    q.add_argument("--n-min", type=int, default=32)
    q.add_argument("--eta", type=float, default=2.0)
    q.add_argument("--large", action="store_true")
    q.add_argument("--csv", dest="csv_path")
    q.add_argument("--cache-dir")

    q = sub.add_parser("decay", help="approximate-inverse error and memory versus rank")
    _add_problem_args(q)
    q.add_argument("--n-min", type=int, default=4)
    q.add_argument("--eta", type=float, default=2.0)
    q.add_argument("--ranks", type=int, nargs="+", default=[2, 4, 8, 16, 32])
    q.add_argument("--mode", choices=("recompress", "schulz"), default="recompress")
    q.add_argument("--csv", dest="csv_path")
    return p


def _main(a) -> int:
    if a.cmd == "mesh-gen":
        cfg = RunConfig(geometry=a.geometry, level=a.level, large=a.large)
        with _stage("mesh"):
            m = build_mesh(cfg)
            meshmod.write_mesh(a.output, m)
        print(f"wrote {a.output}: {m.n_vertices} vertices, {m.n_tets} tets, "
              f"{meshmod.enumerate_edges(m).n_edges} edges")
        return EXIT_OK
    if a.cmd == "assemble":
        cfg = _config_from_args(a)
        _, sys_ = build_system(cfg)
        out = Path(a.out_dir)
        with _stage("export"):
            export_matrix_market(sys_, out / "A.mtx", out / "b.mtx")
            if sys_.geometry is not None:
                write_sidecar(out / "dofs.json", sys_.geometry)
        print(f"N_dof={sys_.dim} nnz={sys_.matrix.nnz} -> {out}")
        return EXIT_OK
    if a.cmd in ("solve", "ingest"):
        cfg = _config_from_args(a)
        row = run(cfg)
        print(json.dumps(asdict(row), default=str))
        return EXIT_OK if row.converged else EXIT_NUMERIC
    if a.cmd == "reproduce":
        base = RunConfig(n_min=a.n_min, eta=a.eta, large=a.large, cache_dir=a.cache_dir)
        cells = reproduce_table1(a.k_max, a.kappas, base)
        print(table1_grid(cells))
        if a.csv_path:
            write_csv(a.csv_path, cells)
        return EXIT_OK if all(c["converged"] for c in cells) else EXIT_NUMERIC
    if a.cmd == "decay":
        base = _config_from_args(a)
        rows = decay_study(base, a.ranks, a.mode)
        print("r,error,memory_ratio")
        for r in rows:
            print(f"{r['r']},{r['error']:.6e},{r['memory_ratio']:.6f}")
        if a.csv_path:
            write_csv(a.csv_path, rows)
        return EXIT_OK
    raise ConfigError(f"unknown command {a.cmd}")


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _main(a)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ConfigError as exc:
        print(f"error: [config] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, FormatError, AssemblyError, meshmod.MeshError, IncompatibleError) as exc:
        print(f"error: [input] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularSystemError, FactorizationBreakdown, SchulzDivergence, DivergenceError) as exc:
        print(f"error: [numerics] {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Second-order cone program container, builder and solver wrapper.

A :class:`ConeProgram` is

    minimize    c^T x + c0
    subject to  A x = b
                x_i >= 0                       for i in ``nonneg``
                ||x[rest]|| <= x[t]            for each SOC block (t, rest...)
                ||x[rest]||^2 <= 2 x[a] x[b]   for each rotated block (a, b, rest...)

Cone blocks reference variables by index only; affine expressions enter
through auxiliary variables tied by equality rows (see :class:`ProgramBuilder`).

``rsoc_scales`` optionally holds one positive balance factor g per rotated
block. It does not change the feasible set (2ab = 2(ga)(b/g)); the lowering
uses it so that ga and b/g have similar magnitude, which keeps the standard
cone rows ((ga + b/g)/sqrt2, (ga - b/g)/sqrt2, x) well conditioned.
``var_scales`` optionally holds a typical magnitude per variable; the solver
works in x / var_scales so that all unknowns are O(1).

:func:`solve` hands the program to the Clarabel interior-point solver and then
re-checks every constraint by direct substitution. A solution is reported
``Optimal`` only if that independent check passes.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Status",
    "ConeProgram",
    "ConeSolution",
    "ProgramBuilder",
    "validate",
    "solve",
    "residuals",
    "dump",
]


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAX_ITER = "MaxIter"
    NUMERICAL_ERROR = "NumericalError"


@dataclass(frozen=True)
class ConeProgram:
    num_vars: int
    objective: np.ndarray
    eq_matrix: sp.csr_matrix
    eq_rhs: np.ndarray
    nonneg_vars: np.ndarray
    soc_blocks: tuple = ()
    rsoc_blocks: tuple = ()
    var_names: tuple = ()
    objective_offset: float = 0.0
    rsoc_scales: tuple = ()
    var_scales: tuple = ()

    @classmethod
    def create(cls, num_vars, objective=None, eq_rows=(), nonneg_vars=(), soc_blocks=(),
               rsoc_blocks=(), var_names=None, objective_offset=0.0, rsoc_scales=(),
               var_scales=()) -> "ConeProgram":
        """Convenience constructor from plain Python data.

        ``eq_rows`` is a sequence of ``(coeffs, rhs)`` with ``coeffs`` a
        mapping ``{var_index: value}``.
        """
        n = int(num_vars)
        c = np.zeros(n) if objective is None else np.asarray(objective, dtype=float)
        rows, cols, vals, rhs = [], [], [], []
        for r, (coeffs, b) in enumerate(eq_rows):
            for j, v in dict(coeffs).items():
                rows.append(r)
                cols.append(int(j))
                vals.append(float(v))
            rhs.append(float(b))
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), n)) if all(0 <= j < n for j in cols) \
            else _BadMatrix(len(rhs), n, rows, cols, vals)
        names = tuple(var_names) if var_names is not None else tuple(f"x{i}" for i in range(n))
        return cls(n, c, A, np.asarray(rhs, dtype=float), np.asarray(list(nonneg_vars), dtype=int),
                   tuple(tuple(int(i) for i in blk) for blk in soc_blocks),
                   tuple(tuple(int(i) for i in blk) for blk in rsoc_blocks),
                   names, float(objective_offset), tuple(float(g) for g in rsoc_scales),
                   tuple(float(d) for d in var_scales))

    def name(self, i: int) -> str:
        return self.var_names[i] if 0 <= i < len(self.var_names) else f"x{i}"

    def objective_value(self, x) -> float:
        return float(self.objective @ np.asarray(x, dtype=float) + self.objective_offset)


class _BadMatrix:
    """Holds out-of-range triplets so that :func:`validate` can report them."""

    def __init__(self, m, n, rows, cols, vals):
        self.shape = (m, n)
        self.rows, self.cols, self.vals = rows, cols, vals


@dataclass
class ConeSolution:
    status: Status
    x: np.ndarray
    objective_value: float
    primal_residual: float
    cone_violation: float
    duality_gap: float = float("nan")
    iterations: int = 0
    solve_time: float = 0.0
    solver_status: str = ""
    z: np.ndarray | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == Status.OPTIMAL


# ---------------------------------------------------------------------------
# validation


def validate(program: ConeProgram) -> list[str]:
    """Structural checks. Returns a list of error strings (empty if valid)."""
    errs: list[str] = []
    n = program.num_vars
    if n < 0:
        return ["num_vars must be >= 0"]
    c = np.asarray(program.objective)
    if c.shape != (n,):
        errs.append(f"objective has shape {c.shape}, expected ({n},)")
    elif not np.all(np.isfinite(c)) or not math.isfinite(program.objective_offset):
        errs.append("objective not finite")
    A = program.eq_matrix
    if isinstance(A, _BadMatrix):
        for r, j in zip(A.rows, A.cols):
            if not 0 <= j < n:
                errs.append(f"equality row {r}: index out of range ({j})")
                break
    else:
        if A.shape[1] != n:
            errs.append(f"equality matrix has {A.shape[1]} columns, expected {n}")
        if A.shape[0] != np.asarray(program.eq_rhs).size:
            errs.append("equality rhs length mismatch")
        if A.nnz and not np.all(np.isfinite(A.data)):
            errs.append("equality matrix not finite")
    if not np.all(np.isfinite(program.eq_rhs)):
        errs.append("equality rhs not finite")
    for i in np.asarray(program.nonneg_vars, dtype=int):
        if not 0 <= i < n:
            errs.append(f"nonneg: index out of range ({i})")
            break
    for kind, blocks, min_len in (("soc", program.soc_blocks, 1), ("rsoc", program.rsoc_blocks, 2)):
        for bi, blk in enumerate(blocks):
            if len(blk) < min_len:
                errs.append(f"{kind} block {bi}: needs at least {min_len} entries")
                continue
            bad = [i for i in blk if not 0 <= i < n]
            if bad:
                errs.append(f"{kind} block {bi}: index out of range ({bad[0]})")
                continue
            if len(set(blk)) != len(blk):
                dup = [program.name(i) for i in set(blk) if blk.count(i) > 1]
                errs.append(f"{kind} block {bi}: variable repeated within block ({', '.join(dup)})")
    if program.rsoc_scales:
        g = np.asarray(program.rsoc_scales, dtype=float)
        if g.size != len(program.rsoc_blocks):
            errs.append("rsoc_scales length mismatch")
        elif not np.all(np.isfinite(g) & (g > 0)):
            errs.append("rsoc_scales must be finite and positive")
    if program.var_scales:
        d = np.asarray(program.var_scales, dtype=float)
        if d.size != n:
            errs.append("var_scales length mismatch")
        elif not np.all(np.isfinite(d) & (d > 0)):
            errs.append("var_scales must be finite and positive")
    if program.var_names and len(program.var_names) != n:
        errs.append("var_names length mismatch")
    return errs


# ---------------------------------------------------------------------------
# independent residual check


def residuals(program: ConeProgram, x) -> tuple[float, float]:
    """Scaled primal residual of the equalities and the worst cone violation at ``x``.

    Equality row i contributes |a_i x - b_i| / max(1, |b_i|, max_j |a_ij x_j|).
    Cone violations are measured relative to max(1, size of the cone members).
    """
    x = np.asarray(x, dtype=float)
    A = program.eq_matrix.tocsr()
    b = np.asarray(program.eq_rhs, dtype=float)
    pres = 0.0
    if A.shape[0]:
        r = np.abs(A @ x - b)
        scale = np.maximum(1.0, np.abs(b))
        prod = A.multiply(x[None, :]).tocsr()
        if prod.nnz:
            prod.data = np.abs(prod.data)
            scale = np.maximum(scale, prod.max(axis=1).toarray().ravel())
        pres = float(np.max(r / scale))
    viol = 0.0
    nn = np.asarray(program.nonneg_vars, dtype=int)
    if nn.size:
        xv = x[nn]
        viol = max(viol, float(np.max(np.maximum(0.0, -xv) / np.maximum(1.0, np.abs(xv)))))
    for blk in program.soc_blocks:
        t = x[blk[0]]
        nx = float(np.linalg.norm(x[list(blk[1:])])) if len(blk) > 1 else 0.0
        viol = max(viol, max(0.0, nx - t) / max(1.0, abs(t), nx))
    for blk in program.rsoc_blocks:
        a, bb = x[blk[0]], x[blk[1]]
        nx2 = float(np.sum(x[list(blk[2:])] ** 2)) if len(blk) > 2 else 0.0
        viol = max(viol, max(0.0, -a) / max(1.0, abs(a)), max(0.0, -bb) / max(1.0, abs(bb)))
        # compare in norm units so the check is homogeneous of degree one
        lhs = math.sqrt(nx2)
        rhs = math.sqrt(max(2 * a * bb, 0.0))
        viol = max(viol, max(0.0, lhs - rhs) / max(1.0, lhs, abs(a), abs(bb)))
    return pres, viol


# ---------------------------------------------------------------------------
# solver


def _lower(program: ConeProgram):
    import clarabel

    n = program.num_vars
    blocks = []
    rhs = []
    cones = []
    A_eq = program.eq_matrix.tocsr()
    if A_eq.shape[0]:
        blocks.append(A_eq)
        rhs.append(np.asarray(program.eq_rhs, dtype=float))
        cones.append(clarabel.ZeroConeT(A_eq.shape[0]))
    nn = np.asarray(program.nonneg_vars, dtype=int)
    if nn.size:
        blocks.append(sp.csr_matrix((-np.ones(nn.size), (np.arange(nn.size), nn)), shape=(nn.size, n)))
        rhs.append(np.zeros(nn.size))
        cones.append(clarabel.NonnegativeConeT(int(nn.size)))
    for blk in program.soc_blocks:
        k = len(blk)
        blocks.append(sp.csr_matrix((-np.ones(k), (np.arange(k), list(blk))), shape=(k, n)))
        rhs.append(np.zeros(k))
        cones.append(clarabel.SecondOrderConeT(k))
    r2 = 1.0 / math.sqrt(2.0)
    scales = program.rsoc_scales or (1.0,) * len(program.rsoc_blocks)
    for blk, g in zip(program.rsoc_blocks, scales):
        a, b, rest = blk[0], blk[1], list(blk[2:])
        k = 2 + len(rest)
        rows = [0, 0, 1, 1] + list(range(2, k))
        cols = [a, b, a, b] + rest
        vals = [-r2 * g, -r2 / g, -r2 * g, r2 / g] + [-1.0] * len(rest)
        blocks.append(sp.csr_matrix((vals, (rows, cols)), shape=(k, n)))
        rhs.append(np.zeros(k))
        cones.append(clarabel.SecondOrderConeT(k))
    A = sp.vstack(blocks, format="csc") if blocks else sp.csc_matrix((0, n))
    bvec = np.concatenate(rhs) if rhs else np.zeros(0)
    return A, bvec, cones


_STATUS_MAP = {
    "PrimalInfeasible": Status.INFEASIBLE,
    "AlmostPrimalInfeasible": Status.INFEASIBLE,
    "DualInfeasible": Status.UNBOUNDED,
    "AlmostDualInfeasible": Status.UNBOUNDED,
    "MaxIterations": Status.MAX_ITER,
    "MaxTime": Status.MAX_ITER,
}


# (tolerance factor, extra settings) tried in order until the independent check passes
_ATTEMPTS = (
    (1e-1, {}),
    (1e-2, {"equilibrate_max_iter": 50}),
    (1e-2, {"equilibrate_enable": False}),
    (1e-3, {"static_regularization_constant": 1e-12}),
)


def solve(program: ConeProgram, tol: float = 1e-8, max_iter: int = 200) -> ConeSolution:
    """Solve with Clarabel and certify the result by direct substitution.

    ``Optimal`` requires the solver to report success *and* the independent
    equality residual, cone violation and relative duality gap all ``<= tol``.
    """
    errs = validate(program)
    if errs:
        raise ValueError("invalid cone program: " + "; ".join(errs[:5]))
    n = program.num_vars
    t0 = time.perf_counter()
    if n == 0:
        return ConeSolution(Status.OPTIMAL, np.zeros(0), program.objective_offset, 0.0, 0.0, 0.0)

    import clarabel

    A, b, cones = _lower(program)
    P = sp.csc_matrix((n, n))
    c = np.asarray(program.objective, dtype=float)
    # solve in x' = x / D with equality rows normalized; cone rows keep their scale
    D = np.asarray(program.var_scales, dtype=float) if program.var_scales else np.ones(n)
    As = (A @ sp.diags(D)).tocsr()
    me = program.eq_matrix.shape[0]
    rs = np.ones(A.shape[0])
    if me:
        rmax = abs(As[:me]).max(axis=1).toarray().ravel()
        rs[:me] = 1.0 / np.where(rmax > 0, rmax, 1.0)
    As = (sp.diags(rs) @ As).tocsc()
    bs = rs * b
    cs = c * D
    # Clarabel's stopping test is on its internally scaled residuals, which can
    # leave the unscaled cone check slightly above ``tol``; tighten and retry.
    for factor, extra in _ATTEMPTS:
        settings = clarabel.DefaultSettings()
        for key, val in extra.items():
            setattr(settings, key, val)
        settings.verbose = False
        settings.max_iter = int(max_iter)
        settings.tol_feas = tol * factor
        settings.tol_gap_abs = tol * factor
        settings.tol_gap_rel = tol * factor
        settings.presolve_enable = False
        sol = clarabel.DefaultSolver(P, cs, As, bs, cones, settings).solve()
        raw = str(sol.status).split(".")[-1]
        x = np.asarray(sol.x, dtype=float) * D
        z = np.asarray(sol.z, dtype=float)
        z = z * rs if z.size == rs.size else z
        if x.size != n or not np.all(np.isfinite(x)):
            return ConeSolution(Status.NUMERICAL_ERROR, np.full(n, np.nan), float("nan"), float("inf"),
                                float("inf"), iterations=int(sol.iterations),
                                solve_time=time.perf_counter() - t0, solver_status=raw)
        pres, viol = residuals(program, x)
        pobj = float(c @ x)
        dobj = float(-b @ z) if z.size == b.size else float("nan")
        gap = abs(pobj - dobj) / max(1.0, abs(pobj), abs(dobj)) if math.isfinite(dobj) else float("nan")
        if raw not in ("Solved", "AlmostSolved"):
            status = _STATUS_MAP.get(raw, Status.NUMERICAL_ERROR)
            break
        good = pres <= tol and viol <= tol and (not math.isfinite(gap) or gap <= tol)
        status = Status.OPTIMAL if good else Status.NUMERICAL_ERROR
        if good:
            break
    elapsed = time.perf_counter() - t0
    return ConeSolution(status, x, pobj + program.objective_offset, pres, viol, gap,
                        int(sol.iterations), elapsed, raw, z)


# ---------------------------------------------------------------------------
# builder


RSOC_REF_FLOOR = 1e-2
VAR_SCALE_FLOOR = 1.0


class ProgramBuilder:
    """Incremental construction of a :class:`ConeProgram`.

    Every variable may carry a reference value; slack and affine helper
    variables derive theirs automatically, so the finished program can be
    checked for feasibility at the reference point.
    """

    def __init__(self):
        self._names: list[str] = []
        self._cost: list[float] = []
        self._ref: list[float] = []
        self._nonneg: list[int] = []
        self._rows: list[tuple[dict, float]] = []
        self._soc: list[tuple] = []
        self._rsoc: list[tuple] = []
        self._rsoc_scale: list[float] = []
        self.offset = 0.0

    @property
    def num_vars(self) -> int:
        return len(self._names)

    def var(self, name: str, cost: float = 0.0, nonneg: bool = False, ref: float = float("nan")) -> int:
        i = len(self._names)
        self._names.append(name)
        self._cost.append(float(cost))
        self._ref.append(float(ref))
        if nonneg:
            self._nonneg.append(i)
        return i

    def fixed(self, name: str, value: float) -> int:
        i = self.var(name, ref=value)
        self.eq({i: 1.0}, value)
        return i

    def add_cost(self, i: int, c: float) -> None:
        self._cost[i] += float(c)

    def ref_of(self, coeffs: dict) -> float:
        return float(sum(v * self._ref[j] for j, v in coeffs.items()))

    def set_ref(self, i: int, value: float) -> None:
        self._ref[i] = float(value)

    def eq(self, coeffs: dict, rhs: float) -> None:
        self._rows.append((dict(coeffs), float(rhs)))

    def ge(self, coeffs: dict, rhs: float, name: str = "slack") -> int:
        """sum a_j x_j >= rhs, through a nonnegative slack."""
        s = self.var(name, nonneg=True, ref=self.ref_of(coeffs) - rhs)
        row = dict(coeffs)
        row[s] = row.get(s, 0.0) - 1.0
        self.eq(row, rhs)
        return s

    def le(self, coeffs: dict, rhs: float, name: str = "slack") -> int:
        s = self.var(name, nonneg=True, ref=rhs - self.ref_of(coeffs))
        row = dict(coeffs)
        row[s] = row.get(s, 0.0) + 1.0
        self.eq(row, rhs)
        return s

    def affine(self, name: str, coeffs: dict, const: float = 0.0, nonneg: bool = False) -> int:
        """New variable v = sum a_j x_j + const."""
        v = self.var(name, nonneg=nonneg, ref=self.ref_of(coeffs) + const)
        row = {j: -c for j, c in coeffs.items()}
        row[v] = row.get(v, 0.0) + 1.0
        self.eq(row, const)
        return v

    def soc(self, t: int, xs) -> None:
        self._soc.append((int(t), *[int(i) for i in xs]))

    def rsoc(self, a: int, b: int, xs, scale: float | None = None) -> None:
        """||x||^2 <= 2 x_a x_b.

        ``scale`` defaults to sqrt(ref_b / ref_a) with both references floored
        at ``RSOC_REF_FLOOR``; tiny references say little about where the
        solution will land.
        """
        if scale is None:
            ra = max(abs(self._ref[a]), RSOC_REF_FLOOR)
            rb = max(abs(self._ref[b]), RSOC_REF_FLOOR)
            scale = min(max(math.sqrt(rb / ra), 1e-2), 1e2)
        self._rsoc.append((int(a), int(b), *[int(i) for i in xs]))
        self._rsoc_scale.append(float(scale))

    @property
    def reference(self) -> np.ndarray:
        return np.asarray(self._ref, dtype=float)

    def build(self) -> ConeProgram:
        scales = np.maximum(VAR_SCALE_FLOOR, np.abs(np.asarray(self._ref, dtype=float)))
        scales[~np.isfinite(scales)] = 1.0
        return ConeProgram.create(self.num_vars, np.asarray(self._cost), self._rows, self._nonneg,
                                  self._soc, self._rsoc, self._names, self.offset, self._rsoc_scale,
                                  scales)


# ---------------------------------------------------------------------------
# plain-text dump


def _fmt_terms(coeffs, names) -> str:
    parts = []
    for j, v in coeffs:
        parts.append(f"{v:+.12g}*{names[j]}")
    return " ".join(parts) if parts else "0"


def dump(program: ConeProgram) -> str:
    """One constraint per line, variables by name.

    Format::

        vars <n>
        min <terms> <offset>
        eq <terms> = <rhs>
        nonneg <name>
        soc <t> >= ||<x1>, ...||
        rsoc 2*<a>*<b> >= ||<x1>, ...||^2
    """
    names = program.var_names or tuple(f"x{i}" for i in range(program.num_vars))
    out = [f"vars {program.num_vars}"]
    c = np.asarray(program.objective)
    nz = [(int(j), float(c[j])) for j in np.flatnonzero(c)]
    out.append(f"min {_fmt_terms(nz, names)} {program.objective_offset:+.12g}")
    A = program.eq_matrix.tocsr()
    for r in range(A.shape[0]):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        terms = list(zip(A.indices[lo:hi].tolist(), A.data[lo:hi].tolist()))
        out.append(f"eq {_fmt_terms(terms, names)} = {program.eq_rhs[r]:.12g}")
    for i in program.nonneg_vars:
        out.append(f"nonneg {names[i]}")
    for blk in program.soc_blocks:
        out.append(f"soc {names[blk[0]]} >= ||{', '.join(names[i] for i in blk[1:])}||")
    for blk in program.rsoc_blocks:
        out.append(f"rsoc 2*{names[blk[0]]}*{names[blk[1]]} >= ||{', '.join(names[i] for i in blk[2:])}||^2")
    return "\n".join(out) + "\n"

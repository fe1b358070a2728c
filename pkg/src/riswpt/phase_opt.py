"""Max-min charged-energy phase optimizer.

Each sensor's normalized harvested energy is a Hermitian quadratic of the
stacked reflection vector ``phi`` (one M-block per radiating position)::

    h_k(phi) = phi^H B_k phi + 2 Re{b_k^H phi} + const_k

with rank-one blocks ``B_k[l] = w_kl psi_kl psi_kl^H`` and ``b_k[l] = lin_kl psi_kl``.
Only the factors (w, lin, psi) are stored; dense matrices are built on demand
for testing. The smooth max-min objective is maximized by minorization-
maximization with SQUAREM extrapolation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .power import PhasePlan, Trajectory, power_terms_arrays
from .scenario import ScenarioConfig

__all__ = [
    "SensorQuadratic",
    "QuadraticStack",
    "MinorizerParams",
    "MmOptions",
    "MmReport",
    "assemble_quadratics",
    "assemble_from_arrays",
    "h_value",
    "h_values",
    "smooth_objective",
    "minorizer_params",
    "surrogate_value",
    "mm_update",
    "mm_map",
    "curvature_matrix",
    "optimize_phases",
]


@dataclass(frozen=True)
class SensorQuadratic:
    """Factored quadratic of one sensor: blocks ``w[l] psi[l] psi[l]^H`` and ``lin[l] psi[l]``."""

    w: np.ndarray
    lin: np.ndarray
    psi: np.ndarray
    const: float

    @property
    def dim(self) -> int:
        return self.psi.size

    def dense(self) -> tuple[np.ndarray, np.ndarray, float]:
        """Explicit (B, b, const) for small instances."""
        L, M = self.psi.shape
        B = np.zeros((L * M, L * M), dtype=complex)
        for l in range(L):
            sl = slice(l * M, (l + 1) * M)
            B[sl, sl] = self.w[l] * np.outer(self.psi[l], self.psi[l].conj())
        b = (self.lin[:, None] * self.psi).reshape(-1)
        return B, b, float(self.const)


@dataclass(frozen=True)
class QuadraticStack:
    """All K sensor quadratics with shared block layout.

    Shapes: ``w``, ``lin`` (K, L); ``psi`` (K, L, M); ``const`` (K,).
    """

    w: np.ndarray
    lin: np.ndarray
    psi: np.ndarray
    const: np.ndarray

    def __len__(self) -> int:
        return self.w.shape[0]

    def __getitem__(self, k: int) -> SensorQuadratic:
        return SensorQuadratic(self.w[k], self.lin[k], self.psi[k], float(self.const[k]))

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def blocks(self) -> int:
        return self.w.shape[1]

    @property
    def elements(self) -> int:
        return self.psi.shape[2]

    @classmethod
    def from_list(cls, quads: Sequence[SensorQuadratic]) -> "QuadraticStack":
        return cls(
            np.stack([q.w for q in quads]),
            np.stack([q.lin for q in quads]),
            np.stack([q.psi for q in quads]),
            np.array([q.const for q in quads], dtype=float),
        )


def _as_stack(quads) -> QuadraticStack:
    if isinstance(quads, QuadraticStack):
        return quads
    if isinstance(quads, SensorQuadratic):
        return QuadraticStack.from_list([quads])
    return QuadraticStack.from_list(list(quads))


def assemble_from_arrays(positions, durations, cfg: ScenarioConfig) -> QuadraticStack:
    """Quadratics for radiating ``positions`` (L,) held for ``durations`` (L,)."""
    positions = np.asarray(positions, dtype=complex)
    durations = np.asarray(durations, dtype=float)
    a = power_terms_arrays(positions, cfg)
    scale = cfg.conversion_efficiency * durations[None, :] / cfg.energy_req_array[:, None]  # (K, L)
    w = scale * a["quad"].T
    lin = scale * a["cross"].T / 2.0
    const = np.sum(scale * a["const"].T, axis=1)
    psi = np.transpose(a["psi"], (1, 0, 2))
    if cfg.ris_elements == 0:
        w = np.zeros_like(w)
        lin = np.zeros_like(lin)
    return QuadraticStack(w, lin, psi, const)


def assemble_quadratics(traj: Trajectory, cfg: ScenarioConfig) -> QuadraticStack:
    """Per-sensor quadratics h_k with h_k(phi) = (eta/E_k) sum_l t_l P_hat_{k,l}."""
    return assemble_from_arrays(traj.radiating_positions, traj.durations, cfg)


def _blocks(phi, stack: QuadraticStack) -> np.ndarray:
    phi = np.asarray(phi, dtype=complex)
    L, M = stack.blocks, stack.elements
    if phi.size != L * M:
        raise ValueError(f"phase vector has {phi.size} entries, expected {L * M}")
    return phi.reshape(L, M)


def _inner(phi_b, stack: QuadraticStack) -> np.ndarray:
    # s[k, l] = psi_kl^H phi_l
    return np.einsum("klm,lm->kl", stack.psi.conj(), phi_b)


def h_values(phi, quads) -> np.ndarray:
    """All h_k(phi) as a (K,) array."""
    st = _as_stack(quads)
    s = _inner(_blocks(phi, st), st)
    return np.sum(st.w * np.abs(s) ** 2 + 2 * st.lin * s.real, axis=1) + st.const


def h_value(phi, quad: SensorQuadratic) -> float:
    return float(h_values(phi, [quad])[0])


def smooth_objective(phi, quads, mu: float) -> float:
    """Log-sum-exp lower bound of min_k h_k: -(1/mu) log sum exp(-mu h_k)."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    h = h_values(phi, quads)
    return float(-logsumexp(-mu * h) / mu)


@dataclass(frozen=True)
class MinorizerParams:
    c: np.ndarray
    alpha: float
    u: np.ndarray
    const_mm: float
    weights: np.ndarray = field(repr=False)
    phi_r: np.ndarray | None = field(default=None, repr=False)
    f_r: float = float("nan")


def _curvature_terms(st: QuadraticStack, rule: str) -> np.ndarray:
    M = st.elements
    lam = (st.w * M) ** 2  # lambda_max of each squared rank-one block
    if rule == "block_max":
        quad_part = M * lam.max(axis=1) if lam.size else np.zeros(len(st))
    elif rule == "safe":
        quad_part = M * lam.sum(axis=1)
    else:
        raise ValueError(f"unknown curvature rule {rule!r}")
    bb = M * np.sum(st.lin**2, axis=1)
    bBb = M * M * np.sum(st.w * np.abs(st.lin), axis=1)
    return quad_part + bb + 2 * bBb


def minorizer_params(phi_r, quads, mu: float, curvature: str = "safe") -> MinorizerParams:
    """Linear minorizer of the smooth objective around ``phi_r``.

    ``curvature="safe"`` bounds ||B_k phi||^2 by M * sum_l lambda_l, valid for
    any number of blocks. ``curvature="block_max"`` uses M * max_l lambda_l, which
    only bounds a single active block.
    """
    st = _as_stack(quads)
    phi_r = np.asarray(phi_r, dtype=complex).reshape(-1)
    pb = _blocks(phi_r, st)
    s = _inner(pb, st)
    h = np.sum(st.w * np.abs(s) ** 2 + 2 * st.lin * s.real, axis=1) + st.const
    g = softmax(-mu * h)
    coef = g[:, None] * (st.w * s + st.lin)  # (K, L)
    c = np.einsum("kl,klm->lm", coef, st.psi).reshape(-1)
    alpha = -2.0 * mu * float(np.max(_curvature_terms(st, curvature))) if len(st) else 0.0
    alpha = min(alpha, 0.0)
    u = c - alpha * phi_r
    N = phi_r.size
    f_r = float(-logsumexp(-mu * h) / mu)
    const_mm = f_r - 2 * float(np.real(np.vdot(c, phi_r))) + 2 * alpha * N
    return MinorizerParams(c=c, alpha=alpha, u=u, const_mm=const_mm, weights=g, phi_r=phi_r, f_r=f_r)


def surrogate_value(phi, params: MinorizerParams) -> float:
    """f~(phi | phi_r) = 2 Re{u^H phi} + const_mm (valid on the unit-modulus set).

    When the expansion point is known the same value is computed as
    f(phi_r) + 2 Re{c^H (phi - phi_r)} + alpha ||phi - phi_r||^2, which avoids
    the cancellation between the alpha terms of u and const_mm.
    """
    phi = np.asarray(phi, dtype=complex).reshape(-1)
    if params.phi_r is None:
        return 2 * float(np.real(np.vdot(params.u, phi))) + params.const_mm
    d = phi - params.phi_r
    return params.f_r + 2 * float(np.real(np.vdot(params.c, d))) + params.alpha * float(np.real(np.vdot(d, d)))


def _unit_phase(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    ang = np.angle(z)
    # exact zeros (including -0.0 components) map to angle 0
    ang = np.where(np.abs(z) == 0, 0.0, ang)
    return np.exp(1j * ang)


def mm_update(params: MinorizerParams) -> np.ndarray:
    """Maximizer of the linear minorizer over unit-modulus vectors: exp(j angle(u))."""
    return _unit_phase(params.u)


def mm_map(phi, quads, mu: float, curvature: str = "safe") -> np.ndarray:
    return mm_update(minorizer_params(phi, quads, mu, curvature))


def curvature_matrix(phi_r, phi_t, gamma: float, quads, mu: float) -> np.ndarray:
    """Dense 2N x 2N second-derivative matrix of f along phi_r + gamma (phi_t - phi_r).

    Used as an oracle: the minorizer curvature alpha must not exceed its
    smallest eigenvalue.
    """
    st = _as_stack(quads)
    phi_r = np.asarray(phi_r, dtype=complex).reshape(-1)
    phi_t = np.asarray(phi_t, dtype=complex).reshape(-1)
    x = phi_r + gamma * (phi_t - phi_r)
    N = x.size
    h = h_values(x, st)
    g = softmax(-mu * h)
    Lam = np.zeros((2 * N, 2 * N), dtype=complex)
    ebar = np.zeros(2 * N, dtype=complex)
    for k in range(len(st)):
        B, b, _ = st[k].dense()
        e = B.conj().T @ x + b
        ee = np.concatenate([e, e.conj()])
        Lam[:N, :N] += g[k] * B
        Lam[N:, N:] += g[k] * B.T
        Lam -= mu * g[k] * np.outer(ee, ee.conj())
        ebar += g[k] * ee
    Lam += mu * np.outer(ebar, ebar.conj())
    return 0.5 * (Lam + Lam.conj().T)


# ---------------------------------------------------------------------------
# Algorithm: MM with SQUAREM acceleration


@dataclass(frozen=True)
class MmOptions:
    eps: float = 1e-6
    r_max: int = 10
    max_backtracks: int = 20
    curvature: str = "safe"


@dataclass
class MmReport:
    rows: list = field(default_factory=list)
    reverted: bool = False

    COLUMNS = ("iteration", "f", "min_h", "sigma", "backtracks")

    @property
    def iterations(self) -> int:
        return len(self.rows)

    @property
    def f_trace(self) -> np.ndarray:
        return np.array([r["f"] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        wr.writeheader()
        for r in self.rows:
            wr.writerow({k: r[k] for k in self.COLUMNS})
        return buf.getvalue()


def _squarem(phi0: np.ndarray, st: QuadraticStack, mu: float, opts: MmOptions) -> tuple[np.ndarray, MmReport]:
    report = MmReport()
    phi = phi0
    f_cur = smooth_objective(phi, st, mu)
    report.rows.append({"iteration": 0, "f": f_cur, "min_h": float(h_values(phi, st).min()),
                        "sigma": float("nan"), "backtracks": 0})
    for r in range(1, opts.r_max + 1):
        p1 = mm_map(phi, st, mu, opts.curvature)
        p2 = mm_map(p1, st, mu, opts.curvature)
        v1 = p1 - phi
        v2 = p2 - p1 - v1
        n2 = np.linalg.norm(v2)
        back = 0
        if n2 == 0.0:
            sigma = float("nan")
            cand, f_new = p2, smooth_objective(p2, st, mu)
        else:
            sigma = -np.linalg.norm(v1) / n2
            while True:
                cand = _unit_phase(phi - 2 * sigma * v1 + sigma**2 * v2)
                f_new = smooth_objective(cand, st, mu)
                if f_new >= f_cur:
                    break
                if back >= opts.max_backtracks:
                    cand, f_new = p2, smooth_objective(p2, st, mu)
                    break
                sigma = (sigma - 1) / 2
                back += 1
        # monotone by construction; guard against round-off in the comparison
        if f_new < f_cur:
            cand, f_new = phi, f_cur
        report.rows.append({"iteration": r, "f": f_new, "min_h": float(h_values(cand, st).min()),
                            "sigma": float(sigma), "backtracks": back})
        done = abs(f_new - f_cur) < opts.eps * abs(f_cur)
        phi, f_cur = cand, f_new
        if done:
            break
    return phi, report


def optimize_phases(traj: Trajectory | QuadraticStack, cfg: ScenarioConfig | None, phi_init,
                    mu: float, opts: MmOptions | None = None) -> tuple[PhasePlan, MmReport]:
    """Maximize the smoothed min_k h_k over unit-modulus reflection vectors.

    ``traj`` may be a trajectory (quadratics are assembled from ``cfg``) or a
    pre-assembled :class:`QuadraticStack`. ``phi_init`` is a PhasePlan or an
    array of unit-modulus entries with one M-row per radiating block. The
    result is never worse in min_k h_k than ``phi_init``.
    """
    opts = opts or MmOptions()
    st = traj if isinstance(traj, QuadraticStack) else assemble_quadratics(traj, cfg)
    L, M = st.blocks, st.elements
    if isinstance(phi_init, PhasePlan):
        phi0 = phi_init.phi.reshape(-1)
    else:
        phi0 = np.asarray(phi_init, dtype=complex).reshape(-1)
    if phi0.size != L * M:
        raise ValueError("initial phase vector does not match the trajectory")
    phi0 = _unit_phase(phi0)
    if M == 0 or L == 0:
        return PhasePlan(np.zeros((L, M))), MmReport()

    phi, report = _squarem(phi0, st, mu, opts)
    if h_values(phi, st).min() < h_values(phi0, st).min():
        phi = phi0
        report.reverted = True
    theta = np.angle(phi).reshape(L, M)
    # idle blocks carry no energy: pin their phases to 0
    idle = np.all(st.w == 0, axis=0) & np.all(st.lin == 0, axis=0)
    theta[idle] = 0.0
    return PhasePlan(theta), report

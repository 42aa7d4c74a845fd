"""Frozen-coefficient Gaussian kernels and the correction's first kernel.

The building block is the Gaussian in the intrinsic geometry: for a frozen
space-time point (tau, v) the covariance is the flow-twisted integral

    C^(tau,v)(t, s) = int_t^s  e^((s-r)B) A(r, e^((r-tau)B) v) e^((s-r)B^T) dr,

where A embeds the d x d diffusion block a2 into N x N, and the kernel is

    Z(t, x; s, y) = Gauss( C^(s,y)(t, s), y - e^((s-t)B) x ),

i.e. the freezing point is the kernel's own terminal point.  Constant-in-x
coefficients make Z the exact fundamental solution; otherwise a correction
series (see levi.py) is driven by the first kernel returned by
:func:`levi_first_kernel`.

Everything is evaluated in log space and vectorized over stacks of points;
the scalar entry points wrap stacks of size one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .coefficients import CoefficientField
from .errors import EmptyInterval, InvalidScale, SingularCovariance
from .quadrature import LOG_2PI, _leggauss
from .structure import DriftStructure, expm_stack

# Eigenvalue floor for covariance factorization, relative to the trace, and
# the largest relative change the flooring may silently apply.
FLOOR_SCALE = 1e-13
FLOOR_REL_CHANGE = 1e-6

DEFAULT_COV_NODES = 32


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetrized positive-definite covariance with its Cholesky factor."""

    C: np.ndarray
    chol: np.ndarray
    logdet: float

    @property
    def dim(self) -> int:
        return self.C.shape[0]


@dataclass
class KernelEvaluation:
    """Kernel value with optional first/second derivatives in x_1..x_d."""

    value: float
    grad_d: Optional[np.ndarray] = None
    hess_d: Optional[np.ndarray] = None


def factor_stack(Cs: np.ndarray):
    """Factor a stack of covariances with the positive-definiteness safeguard.

    Symmetrizes, floors eigenvalues at FLOOR_SCALE * trace, and raises
    SingularCovariance if the flooring would move any eigenvalue by more
    than FLOOR_REL_CHANGE relative.  Returns (chol, chol_inv, logdet).
    """
    Cs = 0.5 * (Cs + np.swapaxes(Cs, -1, -2))
    n = Cs.shape[-1]
    tr = np.trace(Cs, axis1=-2, axis2=-1)
    if np.any(~np.isfinite(tr)) or np.any(tr <= 0):
        raise SingularCovariance("covariance has non-positive or non-finite trace")
    floor = FLOOR_SCALE * tr
    ev, V = np.linalg.eigh(Cs)
    low = ev < floor[..., None]
    if np.any(low):
        rel = (floor[..., None] - ev) / np.maximum(np.abs(ev), 1e-300)
        if np.any(rel[low] > FLOOR_REL_CHANGE):
            idx = np.argwhere(low & (rel > FLOOR_REL_CHANGE))[0]
            raise SingularCovariance(
                f"covariance at stack index {tuple(idx[:-1])} is singular: "
                f"eigenvalue {ev[tuple(idx)]:.3e} below floor "
                f"{floor[tuple(idx[:-1])]:.3e}"
            )
        ev = np.maximum(ev, floor[..., None])
        Cs = np.einsum("...ik,...k,...jk->...ij", V, ev, V)
        Cs = 0.5 * (Cs + np.swapaxes(Cs, -1, -2))
    try:
        L = np.linalg.cholesky(Cs)
    except np.linalg.LinAlgError:
        jitter = (1e-15 * tr)[..., None, None] * np.eye(n)
        L = np.linalg.cholesky(Cs + jitter)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    eye = np.broadcast_to(np.eye(n), Cs.shape).copy()
    L_inv = np.linalg.solve(L, eye)
    return L, L_inv, logdet


def factor_covariance(C: np.ndarray) -> CovarianceMatrix:
    """Factor a single covariance matrix (see :func:`factor_stack`)."""
    C = np.asarray(C, dtype=float)
    L, _, logdet = factor_stack(C[None])
    return CovarianceMatrix(C=0.5 * (C + C.T), chol=L[0], logdet=float(logdet[0]))


def gaussian_density(C, z) -> float:
    """Centered Gaussian density with covariance C evaluated at z."""
    if not isinstance(C, CovarianceMatrix):
        C = factor_covariance(C)
    z = np.asarray(z, dtype=float)
    a = np.linalg.solve(C.chol, z)
    quad = float(a @ a)
    n = C.dim
    return float(np.exp(-0.5 * (n * LOG_2PI + C.logdet + quad)))


def _gauss_eval(L_inv, logdet, z, flow, d: int, order: int):
    """Batched Gaussian value/derivatives.

    z is the centered argument y - e^((s-t)B) x, flow the stack of flow
    matrices e^((s-t)B); derivatives are taken in the first d coordinates
    of x, so each d/dx_i inserts a factor <flow e_i, C^-1 z>.
    """
    N = z.shape[-1]
    a = np.einsum("mij,mj->mi", L_inv, z)
    quad = np.sum(a * a, axis=-1)
    logval = -0.5 * (N * LOG_2PI + logdet + quad)
    val = np.exp(logval)
    out = {"value": val, "log_abs": logval}
    if order >= 1:
        w2 = np.einsum("mji,mj->mi", L_inv, a)  # C^{-1} z
        G = np.einsum("mji,mj->mi", flow, w2)[:, :d]
        out["grad_d"] = val[:, None] * G
        if order >= 2:
            Wd = np.einsum("mij,mjk->mik", L_inv, flow[:, :, :d])
            H0 = np.einsum("mki,mkj->mij", Wd, Wd)
            out["hess_d"] = val[:, None, None] * (
                G[:, :, None] * G[:, None, :] - H0
            )
    return out


def reference_covariance(S: DriftStructure, dt, nodes: int = DEFAULT_COV_NODES):
    """Constant-unit-coefficient covariance C(dt), batched over dt.

    C(dt) = int_0^dt e^(uB) E e^(uB^T) du with E the embedding of I_d.
    """
    dt = np.atleast_1d(np.asarray(dt, dtype=float))
    if np.any(dt <= 0):
        raise EmptyInterval("reference covariance needs dt > 0")
    xi, w = _leggauss(nodes)
    g = 0.5 * (xi + 1.0)
    gw = 0.5 * w
    u = dt[:, None] * g[None, :]
    F = expm_stack(S.B, u.reshape(-1))[:, :, : S.d].reshape(
        dt.size, nodes, S.N, S.d
    )
    C = np.einsum("q,mqik,mqjk->mij", gw, F, F) * dt[:, None, None]
    return C


def frozen_covariance_stack(
    cf: CoefficientField,
    S: DriftStructure,
    tau,
    v,
    t,
    s,
    nodes: int = DEFAULT_COV_NODES,
):
    """Stack of frozen covariances C^(tau,v)(t, s).

    All arguments are stacks: tau, t, s of shape (M,), v of shape (M, N).
    Panels align with the coefficient field's time breakpoints.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if np.any(s <= t):
        raise EmptyInterval("frozen covariance needs s > t for every stack entry")
    M, N, d = t.size, S.N, S.d

    lo_all = float(t.min())
    hi_all = float(s.max())
    inner = [b for b in cf.t_breaks if lo_all < b < hi_all]
    edges = np.array([lo_all] + inner + [hi_all])
    n_panels = len(edges) - 1
    per_panel = max(6, int(np.ceil(nodes / n_panels))) if n_panels > 1 else nodes
    xi, w = _leggauss(per_panel)
    g = 0.5 * (xi + 1.0)
    gw = 0.5 * w

    C = np.zeros((M, N, N))
    for j in range(n_panels):
        lo = np.clip(edges[j], t, s)
        hi = np.clip(edges[j + 1], t, s)
        length = hi - lo  # (M,), possibly zero
        rho = lo[:, None] + length[:, None] * g[None, :]  # (M, q)
        wq = length[:, None] * gw[None, :]
        flat_rho = rho.reshape(-1)
        back = expm_stack(S.B, (rho - tau[:, None]).reshape(-1))
        pts = np.einsum("pij,pj->pi", back, np.repeat(v, per_panel, axis=0))
        a2 = cf.a2(flat_rho, pts).reshape(M, per_panel, d, d)
        left = expm_stack(S.B, (s[:, None] - rho).reshape(-1))[:, :, :d].reshape(
            M, per_panel, N, d
        )
        C += np.einsum("mq,mqik,mqkl,mqjl->mij", wq, left, a2, left)
    return C


def frozen_covariance(
    cf: CoefficientField,
    S: DriftStructure,
    tau: float,
    v,
    t: float,
    s: float,
    nodes: int = DEFAULT_COV_NODES,
) -> CovarianceMatrix:
    """Frozen covariance C^(tau,v)(t, s) for a single frozen point."""
    C = frozen_covariance_stack(cf, S, [tau], [np.asarray(v, dtype=float)], [t], [s], nodes)
    return factor_covariance(C[0])


def parametrix_stack(cf, S, t, x, s, y, order: int = 0, cov_nodes: int = DEFAULT_COV_NODES):
    """Batched frozen-coefficient kernel Z(t, x; s, y) with derivatives.

    Returns a dict with 'value', 'log_abs' and, per order, 'grad_d' (M, d)
    and 'hess_d' (M, d, d); the hessian is symmetric by construction.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if np.any(s <= t):
        raise EmptyInterval("parametrix needs s > t")
    flow = expm_stack(S.B, s - t)
    z = y - np.einsum("mij,mj->mi", flow, x)
    C = frozen_covariance_stack(cf, S, s, y, t, s, nodes=cov_nodes)
    _, L_inv, logdet = factor_stack(C)
    return _gauss_eval(L_inv, logdet, z, flow, S.d, order)


def parametrix(cf, S, t: float, x, s: float, y, order: int = 0) -> KernelEvaluation:
    """Frozen-coefficient kernel at a single space-time pair."""
    out = parametrix_stack(cf, S, [t], [x], [s], [y], order=order)
    return KernelEvaluation(
        value=float(out["value"][0]),
        grad_d=out["grad_d"][0] if order >= 1 else None,
        hess_d=out["hess_d"][0] if order >= 2 else None,
    )


def reference_gaussian_log_stack(delta: float, S: DriftStructure, t, x, s, y):
    """Log of the scale-delta reference Gaussian, batched."""
    if not delta > 0:
        raise InvalidScale(f"scale delta must be positive, got {delta}")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if np.any(s <= t):
        raise EmptyInterval("reference Gaussian needs s > t")
    flow = expm_stack(S.B, s - t)
    z = y - np.einsum("mij,mj->mi", flow, x)
    C = delta * reference_covariance(S, s - t)
    _, L_inv, logdet = factor_stack(C)
    return _gauss_eval(L_inv, logdet, z, flow, S.d, 0)["log_abs"]


def reference_gaussian(delta: float, S: DriftStructure, t: float, x, s: float, y) -> float:
    """Reference Gaussian with covariance delta * C(s - t)."""
    return float(np.exp(reference_gaussian_log_stack(delta, S, [t], [x], [s], [y])[0]))


def levi_first_kernel_stack(cf, S, t, x, s, y, cov_nodes: int = DEFAULT_COV_NODES):
    """Batched first kernel of the correction series: (L Z)(t, x; s, y).

    The frozen operator annihilates Z exactly, so applying the full operator
    leaves the coefficient increment against the hessian plus the
    lower-order terms:

        H = 1/2 sum_ij (a2_ij(t,x) - a2_ij(t, e^((t-s)B) y)) d_ij Z
            + sum_i a1_i(t,x) d_i Z + a0(t,x) Z.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    out = parametrix_stack(cf, S, t, x, s, y, order=2, cov_nodes=cov_nodes)
    back = expm_stack(S.B, t - s)
    flow_y = np.einsum("mij,mj->mi", back, y)
    dA = cf.a2(t, x) - cf.a2(t, flow_y)
    H = 0.5 * np.einsum("mij,mij->m", dA, out["hess_d"])
    if cf.a1 is not None:
        H = H + np.einsum("mi,mi->m", cf.a1(t, x), out["grad_d"])
    if cf.a0 is not None:
        H = H + cf.a0(t, x) * out["value"]
    return H


def levi_first_kernel(cf, S, t: float, x, s: float, y) -> float:
    """First kernel of the correction series at a single pair."""
    return float(levi_first_kernel_stack(cf, S, [t], [x], [s], [y])[0])

"""Correction series turning the frozen-coefficient kernel into the
fundamental solution.

With H the first kernel (kernels.levi_first_kernel) and * the space-time
convolution  (Z * F)(t,x;s,y) = int_t^s int Z(t,x;r,z) F(r,z;s,y) dz dr,
the fundamental solution is p = Z + Phi where Phi = Z * F and F solves the
Volterra equation F = H + H * F.  The truncation used here is the K-term
partial sum  Phi_K = sum_{k=1..K} Z * H^{*k}.

Numerically this runs on a "bridge lattice": graded time nodes in (t, s),
each carrying an importance-weighted Gauss-Hermite cloud drawn from a
Gaussian proposal that tracks where the integrand mass lives (the product
of the two flow-pinned reference Gaussians for a pointwise evaluation, or
the forward tube alone when the terminal end is spread out).  On the
lattice, H-composition is a causal Nystrom matrix, so all partial sums cost
one kernel-pair tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .coefficients import CoefficientField
from .errors import EmptyInterval, InvalidData, NumericalDivergence
from .kernels import (
    KernelEvaluation,
    _gauss_eval,
    factor_stack,
    frozen_covariance_stack,
    levi_first_kernel_stack,
    parametrix_stack,
    reference_covariance,
)
from .quadrature import gaussian_product, graded_nodes, hermite_lattice, proposal_nodes
from .structure import DriftStructure, expm_stack

GRADING_CAP = 6.0


@dataclass(frozen=True)
class LeviConfig:
    """Tuning knobs for the correction series.

    depth: number of series terms kept (0 disables the correction).
    time_nodes / space_nodes: lattice sizes (space_nodes is per axis).
    grading: power of the two-sided graded time map; defaults to
        min(2/alpha_bar, GRADING_CAP).
    cov_nodes: quadrature nodes for each frozen covariance inside the
        lattice machinery (the public kernel API keeps its own default).
    min_gap: smallest time gap evaluated; graded nodes closer than this to
        an interval endpoint are dropped.  The default keeps the smallest
        kinetic covariance eigenvalue (~gap^3/12 for two blocks) two
        orders above the positive-definiteness floor.
    """

    depth: int = 2
    time_nodes: int = 12
    space_nodes: int = 9
    grading: Optional[float] = None
    cov_nodes: int = 16
    min_gap: float = 1e-5

    def __post_init__(self):
        if self.depth < 0:
            raise InvalidData("depth must be >= 0")
        if self.time_nodes < 2 or self.space_nodes < 2:
            raise InvalidData("need at least 2 time and 2 space nodes")
        if self.grading is not None and self.grading < 1:
            raise InvalidData("grading power must be >= 1")

    def grading_power(self, alpha_bar: float) -> float:
        if self.grading is not None:
            return float(self.grading)
        return float(min(2.0 / alpha_bar, GRADING_CAP))


@dataclass
class _Lattice:
    times: np.ndarray  # (n_t,)
    t_weights: np.ndarray  # (n_t,)
    points: np.ndarray  # (n_t, n_z, N)
    w_z: np.ndarray  # (n_t, n_z)
    flat_t: np.ndarray  # (n_nodes,)
    flat_x: np.ndarray  # (n_nodes, N)
    omega: np.ndarray  # (n_nodes,) combined space-time weights

    @property
    def shape(self):
        return self.points.shape[:2]


def _proposals(S, mu, times, t, x, s=None, y=None):
    """Per-time Gaussian proposals along the bridge (t,x) -> optional (s,y)."""
    means, chols = [], []
    fwd = expm_stack(S.B, times - t)
    C_fwd = mu * reference_covariance(S, times - t)
    if y is not None:
        back = expm_stack(S.B, times - s)
        C_b = mu * reference_covariance(S, s - times)
        C_back = np.einsum("mik,mkl,mjl->mij", back, C_b, back)
    for q in range(times.size):
        m1 = fwd[q] @ np.asarray(x, dtype=float)
        if y is None:
            m, C = m1, C_fwd[q]
        else:
            m2 = back[q] @ np.asarray(y, dtype=float)
            m, C = gaussian_product(m1, C_fwd[q], m2, C_back[q])
        means.append(m)
        chols.append(np.linalg.cholesky(0.5 * (C + C.T)))
    return means, chols


def _build_lattice(cf, S, cfg, t, x, s, y=None) -> _Lattice:
    if not s > t:
        raise EmptyInterval(f"lattice needs s > t, got ({t}, {s})")
    p = cfg.grading_power(cf.alpha_bar)
    times, tw = graded_nodes(t, s, cfg.time_nodes, p, min_gap=cfg.min_gap)
    if times.size == 0:
        raise EmptyInterval("graded time grid is empty; interval too short")
    means, chols = _proposals(S, cf.mu, times, t, x, s=s, y=y)
    pts, wz = [], []
    for q in range(times.size):
        pq, wq = proposal_nodes(means[q], chols[q], cfg.space_nodes)
        pts.append(pq)
        wz.append(wq)
    points = np.stack(pts)  # (n_t, n_z, N)
    w_z = np.stack(wz)
    n_t, n_z = points.shape[:2]
    flat_t = np.repeat(times, n_z)
    flat_x = points.reshape(-1, S.N)
    omega = (tw[:, None] * w_z).reshape(-1)
    return _Lattice(times, tw, points, w_z, flat_t, flat_x, omega)


def _h_block(cf, S, cov_nodes, r_src, src, r_tgt, tgt) -> np.ndarray:
    """First-kernel values between slice pairs, gathered per target point.

    r_src, r_tgt: (P,) slice times with r_tgt > r_src elementwise; src of
    shape (P, n_a, N), tgt of shape (P, n_b, N).  Returns (P, n_a, n_b).
    The expensive frozen covariances are computed once per (pair, target
    point) rather than per node pair.
    """
    N, d = S.N, S.d
    P, n_a = src.shape[:2]
    n_b = tgt.shape[1]

    tau = np.repeat(r_tgt, n_b)
    Cs = frozen_covariance_stack(
        cf, S, tau, tgt.reshape(-1, N), np.repeat(r_src, n_b), tau, nodes=cov_nodes
    )
    _, L_inv, logdet = factor_stack(Cs)
    L_inv = L_inv.reshape(P, n_b, N, N)
    logdet = logdet.reshape(P, n_b)

    flow = expm_stack(S.B, r_tgt - r_src)  # (P, N, N)
    back = expm_stack(S.B, r_src - r_tgt)
    flowed = np.einsum("pij,paj->pai", flow, src)
    z = tgt[:, None, :, :] - flowed[:, :, None, :]  # (P, a, b, N)

    flat = (P * n_a * n_b,)
    L_inv_f = np.broadcast_to(L_inv[:, None], (P, n_a, n_b, N, N)).reshape(*flat, N, N)
    logdet_f = np.broadcast_to(logdet[:, None], (P, n_a, n_b)).reshape(flat)
    flow_f = np.broadcast_to(flow[:, None, None], (P, n_a, n_b, N, N)).reshape(*flat, N, N)
    out = _gauss_eval(L_inv_f, logdet_f, z.reshape(*flat, N), flow_f, d, order=2)

    t_at = np.broadcast_to(r_src[:, None], (P, n_a)).reshape(-1)
    a2_src = cf.a2(t_at, src.reshape(-1, N)).reshape(P, n_a, d, d)
    t_bt = np.broadcast_to(r_src[:, None], (P, n_b)).reshape(-1)
    backed = np.einsum("pij,pbj->pbi", back, tgt)
    a2_back = cf.a2(t_bt, backed.reshape(-1, N)).reshape(P, n_b, d, d)
    dA = a2_src[:, :, None] - a2_back[:, None, :]  # (P, a, b, d, d)
    vals = 0.5 * np.einsum(
        "pabij,pabij->pab", dA, out["hess_d"].reshape(P, n_a, n_b, d, d)
    )
    if cf.a1 is not None:
        a1 = cf.a1(t_at, src.reshape(-1, N)).reshape(P, n_a, d)
        vals += np.einsum(
            "pai,pabi->pab", a1, out["grad_d"].reshape(P, n_a, n_b, d)
        )
    if cf.a0 is not None:
        a0 = cf.a0(t_at, src.reshape(-1, N)).reshape(P, n_a)
        vals += a0[:, :, None] * out["value"].reshape(P, n_a, n_b)
    return vals


def terminal_smoothing(cf, S, cov_nodes, eta_nodes, lat: _Lattice, T, g_fn) -> np.ndarray:
    """Terminal datum smoothed once by the first kernel, on the lattice.

    W_1(r, z) = int H(r, z; T, y) g(y) dy for every lattice node, each with
    its own Gauss-Hermite cloud centered at the node's flowed image
    e^((T-r)B) z with covariance mu C(T-r) — the kernel bump narrows as the
    slice approaches the horizon, so a shared terminal cloud would miss it.
    Returns the flattened (n_nodes,) vector.
    """
    n_t, n_z = lat.shape
    N, d = S.N, S.d
    flowT = expm_stack(S.B, T - lat.times)  # (n_t, N, N)
    backT = expm_stack(S.B, lat.times - T)
    centers = np.einsum("tij,taj->tai", flowT, lat.points)  # (n_t, n_z, N)
    covs = cf.mu * reference_covariance(S, T - lat.times)
    chols = np.linalg.cholesky(0.5 * (covs + covs.transpose(0, 2, 1)))
    logdet_l = np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
    xi, log_w0 = hermite_lattice(N, eta_nodes)  # (n_c, N)
    n_c = xi.shape[0]
    offs = np.sqrt(2.0) * np.einsum("tij,cj->tci", chols, xi)  # (n_t, n_c, N)
    y = centers[:, :, None, :] + offs[:, None, :, :]  # (n_t, n_z, n_c, N)
    w_eta = np.exp(log_w0[None, :] + logdet_l[:, None])  # (n_t, n_c)

    M = n_t * n_z * n_c
    shape = (n_t, n_z, n_c)
    t_src = np.broadcast_to(lat.times[:, None, None], shape).reshape(-1)
    y_flat = y.reshape(M, N)
    Cs = frozen_covariance_stack(
        cf, S, np.full(M, T), y_flat, t_src, np.full(M, T), nodes=cov_nodes
    )
    _, L_inv, logdet = factor_stack(Cs)
    flow_flat = np.broadcast_to(flowT[:, None, None], shape + (N, N)).reshape(M, N, N)
    zvec = np.broadcast_to(offs[:, None], shape + (N,)).reshape(M, N)
    out = _gauss_eval(L_inv, logdet, zvec, flow_flat, d, order=2)

    t_rep = np.repeat(lat.times, n_z)
    a2_src = cf.a2(t_rep, lat.flat_x).reshape(n_t, n_z, d, d)
    backed = np.einsum("tij,tacj->taci", backT, y)
    a2_back = cf.a2(t_src, backed.reshape(M, N)).reshape(*shape, d, d)
    dA = a2_src[:, :, None] - a2_back  # (n_t, n_z, n_c, d, d)
    H = 0.5 * np.einsum("tacij,tacij->tac", dA, out["hess_d"].reshape(*shape, d, d))
    if cf.a1 is not None:
        a1 = cf.a1(t_rep, lat.flat_x).reshape(n_t, n_z, d)
        H += np.einsum("tai,taci->tac", a1, out["grad_d"].reshape(*shape, d))
    if cf.a0 is not None:
        a0 = cf.a0(t_rep, lat.flat_x).reshape(n_t, n_z)
        H += a0[:, :, None] * out["value"].reshape(shape)
    gv = np.asarray(g_fn(y_flat), dtype=float).reshape(shape)
    return np.einsum("tc,tac->ta", w_eta, H * gv).reshape(n_t * n_z)


def _pair_tensor(cf, S, cfg, lat: _Lattice) -> np.ndarray:
    """Causal Nystrom matrix H[alpha, beta] = H(node_alpha; node_beta),
    zero unless node_beta sits strictly later in time."""
    n_t, n_z = lat.shape
    n = n_t * n_z
    H = np.zeros((n, n))
    if n_t < 2:
        return H
    ii, jj = np.triu_indices(n_t, k=1)
    vals = _h_block(
        cf, S, cfg.cov_nodes, lat.times[ii], lat.points[ii], lat.times[jj], lat.points[jj]
    )
    H4 = H.reshape(n_t, n_z, n_t, n_z)
    H4[ii[:, None, None], np.arange(n_z)[None, :, None], jj[:, None, None],
       np.arange(n_z)[None, None, :]] = vals
    return H4.reshape(n, n)


def _series_partial(lat: _Lattice, Hmat: np.ndarray, target: np.ndarray, depth: int):
    """Partial sums F_k = sum_{j<=k} H-composition^j applied to the target."""
    Fs = [target]
    F = target
    for _ in range(depth - 1):
        F = target + Hmat @ (lat.omega * F)
        Fs.append(F)
    return Fs


def _check_finite(arr, lat: _Lattice, what: str):
    bad = ~np.isfinite(arr)
    if np.any(bad):
        flat = bad.reshape(bad.shape[0], -1).any(axis=-1) if arr.ndim > 1 else bad
        idx = int(np.argmax(flat))
        point = (float(lat.flat_t[idx]), lat.flat_x[idx].copy())
        raise NumericalDivergence(f"non-finite {what} on the lattice", point=point)


def levi_apply(
    cf: CoefficientField,
    S: DriftStructure,
    cfg: LeviConfig,
    t: float,
    x,
    horizon: float,
    target_fn: Callable,
    order: int = 0,
    lattice: Optional[_Lattice] = None,
    pair: Optional[np.ndarray] = None,
):
    """Contract Z(t,x; ·) against the series resolvent of a terminal functional.

    target_fn(flat_t, flat_x) must return the values of the once-smoothed
    functional W_1 on the lattice; the result approximates
    sum_{k=1..depth} int int Z(t,x;r,z) [H-composition^(k-1) W_1](r,z) dz dr,
    with derivatives falling on the Z factor when order > 0.
    Returns (KernelEvaluation, lattice, pair_tensor) so callers can reuse
    the lattice for several functionals.
    """
    lat = lattice if lattice is not None else _build_lattice(cf, S, cfg, t, x, horizon)
    n = lat.omega.size
    target = np.asarray(target_fn(lat.flat_t, lat.flat_x), dtype=float)
    _check_finite(target, lat, "smoothed functional")
    if cfg.depth > 1:
        if pair is None:
            pair = _pair_tensor(cf, S, cfg, lat)
            _check_finite(pair, lat, "kernel pair tensor")
        F = _series_partial(lat, pair, target, cfg.depth)[-1]
    else:
        F = target
    zx = parametrix_stack(
        cf,
        S,
        np.full(n, t),
        np.tile(np.asarray(x, dtype=float), (n, 1)),
        lat.flat_t,
        lat.flat_x,
        order=order,
        cov_nodes=cfg.cov_nodes,
    )
    wF = lat.omega * F
    ev = KernelEvaluation(value=float(zx["value"] @ wF))
    if order >= 1:
        ev.grad_d = zx["grad_d"].T @ wF
    if order >= 2:
        ev.hess_d = np.einsum("mij,m->ij", zx["hess_d"], wF)
    return ev, lat, pair


def phi_partial_sums(cf, S, cfg: LeviConfig, t: float, x, s: float, y) -> np.ndarray:
    """Partial sums Phi_1, ..., Phi_depth at a single space-time pair."""
    if cfg.depth == 0:
        return np.zeros(0)
    if cf.levi_trivial:
        return np.zeros(cfg.depth)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lat = _build_lattice(cf, S, cfg, t, x, s, y=y)
    n = lat.omega.size
    target = levi_first_kernel_stack(
        cf,
        S,
        lat.flat_t,
        lat.flat_x,
        np.full(n, s),
        np.tile(y, (n, 1)),
        cov_nodes=cfg.cov_nodes,
    )
    _check_finite(target, lat, "first kernel")
    pair = _pair_tensor(cf, S, cfg, lat) if cfg.depth > 1 else None
    if pair is not None:
        _check_finite(pair, lat, "kernel pair tensor")
    Fs = _series_partial(lat, pair, target, cfg.depth) if cfg.depth > 1 else [target]
    zx = parametrix_stack(
        cf,
        S,
        np.full(n, t),
        np.tile(x, (n, 1)),
        lat.flat_t,
        lat.flat_x,
        cov_nodes=cfg.cov_nodes,
    )
    w = lat.omega * zx["value"]
    return np.array([float(w @ F) for F in Fs])


def phi_eval(cf, S, cfg: LeviConfig, t: float, x, s: float, y, order: int = 0) -> KernelEvaluation:
    """Correction term Phi_K(t, x; s, y), optionally with derivatives in x.

    Derivatives are taken by differentiating the left Z factor inside the
    convolution.
    """
    d = S.d
    zero = KernelEvaluation(
        value=0.0,
        grad_d=np.zeros(d) if order >= 1 else None,
        hess_d=np.zeros((d, d)) if order >= 2 else None,
    )
    if cfg.depth == 0 or cf.levi_trivial:
        return zero
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lat = _build_lattice(cf, S, cfg, t, x, s, y=y)
    n = lat.omega.size

    def target_fn(ft, fx):
        return levi_first_kernel_stack(
            cf, S, ft, fx, np.full(n, s), np.tile(y, (n, 1)), cov_nodes=cfg.cov_nodes
        )

    ev, _, _ = levi_apply(cf, S, cfg, t, x, s, target_fn, order=order, lattice=lat)
    return ev


def fundamental_solution(cf, S, cfg: LeviConfig, t: float, x, s: float, y, order: int = 0) -> KernelEvaluation:
    """p = Z + Phi_K with matching derivative orders."""
    base = parametrix_stack(cf, S, [t], [x], [s], [y], order=order)
    ev = KernelEvaluation(
        value=float(base["value"][0]),
        grad_d=base["grad_d"][0].copy() if order >= 1 else None,
        hess_d=base["hess_d"][0].copy() if order >= 2 else None,
    )
    if cfg.depth == 0 or cf.levi_trivial:
        return ev
    corr = phi_eval(cf, S, cfg, t, x, s, y, order=order)
    ev.value += corr.value
    if order >= 1:
        ev.grad_d = ev.grad_d + corr.grad_d
    if order >= 2:
        ev.hess_d = ev.hess_d + corr.hess_d
    return ev

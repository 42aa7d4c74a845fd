"""Quadrature helpers: Legendre panels, graded time maps, Hermite lattices.

Conventions.  Time integrals use composite Gauss-Legendre with panels
aligned to coefficient breakpoints; integrals with endpoint singularities
run through a two-sided power grading (split at the midpoint, substitute a
power map toward each endpoint).  Space integrals are importance-weighted
Gauss-Hermite lattices: nodes of a Gaussian proposal N(m, Sigma) carry
weights W_a so that  integral phi(z) dz  ~=  sum_a W_a phi(z_a)  for any
integrand that lives where the proposal does.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import EmptyInterval, SingularCovariance

LOG_2PI = float(np.log(2.0 * np.pi))


@lru_cache(maxsize=64)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(int(n))


@lru_cache(maxsize=64)
def _hermgauss(n: int):
    return np.polynomial.hermite.hermgauss(int(n))


def legendre_panel(a: float, b: float, n: int):
    """Gauss-Legendre nodes/weights on [a, b]."""
    xi, w = _leggauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * xi, half * w


def composite_legendre(a: float, b: float, n: int, breaks=()):
    """Composite Gauss-Legendre on [a, b] split at interior breakpoints.

    The total node budget n is spread over the panels proportionally to
    panel length, at least 4 nodes per panel.
    """
    if not b > a:
        raise EmptyInterval(f"need b > a, got [{a}, {b}]")
    edges = [a] + [float(c) for c in breaks if a < c < b] + [b]
    if len(edges) == 2:
        return legendre_panel(a, b, n)
    total = b - a
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = max(4, int(round(n * (hi - lo) / total)))
        x, w = legendre_panel(lo, hi, m)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def graded_nodes(a: float, b: float, n: int, p: float, min_gap: float = 0.0):
    """Two-sided power-graded nodes for integrands singular at the endpoints.

    Splits [a, b] at the midpoint and maps Gauss-Legendre nodes through
    u -> u^p toward each endpoint, so integrable singularities like
    (r - a)^(beta-1) or (b - r)^(beta-1) with beta ~ 1/p are resolved.
    Nodes closer than min_gap to either endpoint are dropped (their exact
    contribution is O(min_gap^beta)).
    """
    if not b > a:
        raise EmptyInterval(f"need b > a, got [{a}, {b}]")
    p = max(1.0, float(p))
    half = 0.5 * (b - a)
    m = max(2, n // 2)
    xi, w = _leggauss(m)
    u = 0.5 * (xi + 1.0)
    uw = 0.5 * w
    # du-weighted power map on [0, 1]: r = u^p, dr = p u^(p-1) du
    r = u**p
    rw = p * u ** (p - 1.0) * uw
    left = a + half * r
    left_w = half * rw
    right = b - half * r
    right_w = half * rw
    nodes = np.concatenate([left, right])
    weights = np.concatenate([left_w, right_w])
    keep = (nodes - a >= min_gap) & (b - nodes >= min_gap)
    nodes, weights = nodes[keep], weights[keep]
    order = np.argsort(nodes)
    return nodes[order], weights[order]


def hermite_lattice(dim: int, n: int):
    """Tensor Gauss-Hermite lattice for Gaussian proposals.

    Returns (xi, log_w0) with xi of shape (n^dim, dim) the raw Hermite nodes
    and log_w0 the log of  prod_i w_i * exp(|xi|^2) * 2^(dim/2) ; the full
    Lebesgue weight of node a for proposal N(m, L L^T) is
    exp(log_w0[a] + log|det L|), at the point  z_a = m + sqrt(2) L xi_a.
    """
    x, w = _hermgauss(n)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    xi = np.stack([g.reshape(-1) for g in grids], axis=-1)
    logw = np.log(w)
    lw = np.meshgrid(*([logw] * dim), indexing="ij")
    log_prod = np.add.reduce([g.reshape(-1) for g in lw])
    log_w0 = log_prod + np.sum(xi**2, axis=-1) + 0.5 * dim * np.log(2.0)
    return xi, log_w0


def proposal_nodes(mean, chol, n: int):
    """Nodes and Lebesgue weights for a Gaussian proposal N(mean, chol chol^T)."""
    mean = np.asarray(mean, dtype=float)
    dim = mean.shape[-1]
    xi, log_w0 = hermite_lattice(dim, n)
    pts = mean + np.sqrt(2.0) * xi @ np.asarray(chol).T
    logdet_l = float(np.sum(np.log(np.diag(chol))))
    return pts, np.exp(log_w0 + logdet_l)


def gaussian_product(m1, C1, m2, C2):
    """Mean and covariance of the normalized product of two Gaussians."""
    C1 = np.asarray(C1, dtype=float)
    C2 = np.asarray(C2, dtype=float)
    try:
        P1 = np.linalg.inv(C1)
        P2 = np.linalg.inv(C2)
        C = np.linalg.inv(P1 + P2)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(f"singular factor in Gaussian product: {exc}")
    C = 0.5 * (C + C.T)
    m = C @ (P1 @ np.asarray(m1, dtype=float) + P2 @ np.asarray(m2, dtype=float))
    return m, C

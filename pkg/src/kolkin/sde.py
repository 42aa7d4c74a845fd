"""Monte Carlo ground truth: the linear-drift diffusion and its
probabilistic representation of the terminal-value problem.

The process is dX = B X dt + E sigma(t, X) dW with E the injection of the
first d coordinates and sigma any matrix square root of a2 (the principal
PSD root here).  The candidate solution is estimated as

    u(t0, x0) = E[ exp(I_a0(T)) g(X_T) - int_t0^T exp(I_a0(tau)) f(tau, X_tau) dtau ],

with I_a0(tau) = int_t0^tau a0(r, X_r) dr; the a0 integral is accumulated by
the left-endpoint rule and the weighted f integral by the trapezoidal rule
along the simulated paths.

Randomness is counter-based and chunked: path chunk c of a run with seed s
draws from an independent Philox stream keyed by (s, c), and reductions run
in fixed chunk order, so results are reproducible bit-for-bit regardless of
how chunks are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .coefficients import CoefficientField
from .errors import InvalidData
from .kernels import frozen_covariance
from .structure import DriftStructure, matrix_exp

SCHEMES = ("euler-maruyama", "exact-gaussian")


@dataclass(frozen=True)
class SdeConfig:
    """Simulation parameters for the Monte Carlo oracle."""

    n_paths: int = 100_000
    n_steps: int = 400
    scheme: str = "euler-maruyama"
    seed: int = 0
    antithetic: bool = True
    chunk: int = 1024

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise InvalidData("n_paths and n_steps must be >= 1")
        if self.scheme not in SCHEMES:
            raise InvalidData(f"unknown scheme '{self.scheme}'; choose from {SCHEMES}")
        if self.chunk < 2:
            raise InvalidData("chunk must be >= 2")


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo mean with its standard error."""

    mean: float
    std_error: float
    n_paths: int

    def interval(self, n_sigma: float = 3.0):
        h = n_sigma * self.std_error
        return (self.mean - h, self.mean + h)


@dataclass
class PathBundle:
    """Terminal states plus the path integrals needed by the representation."""

    terminal: np.ndarray  # (n, N)
    log_weight: np.ndarray  # (n,) accumulated integral of a0
    source_integral: np.ndarray  # (n,) accumulated weighted integral of f
    t0: float
    T: float
    n_steps: int


def principal_sqrt_psd(mats: np.ndarray) -> np.ndarray:
    """Principal square root of a stack of PSD matrices (negatives clipped)."""
    mats = np.asarray(mats, dtype=float)
    if mats.shape[-1] == 1:
        return np.sqrt(np.maximum(mats, 0.0))
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    ev, V = np.linalg.eigh(sym)
    root = np.sqrt(np.maximum(ev, 0.0))
    return np.einsum("...ik,...k,...jk->...ij", V, root, V)


def _chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    key = np.array([seed, chunk_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _chunk_sizes(n_paths: int, chunk: int, antithetic: bool):
    if antithetic:
        # keep chunks even so antithetic pairs never straddle a boundary
        chunk -= chunk % 2
        n_paths += n_paths % 2
    sizes = []
    left = n_paths
    while left > 0:
        m = min(chunk, left)
        if antithetic and m % 2:
            m -= 1
        sizes.append(m)
        left -= m
    return sizes


def _em_chunk(cf, S, t0, x0, T, n_steps, m, rng, antithetic, f):
    N, d = S.N, S.d
    dt = (T - t0) / n_steps
    sdt = np.sqrt(dt)
    X = np.tile(np.asarray(x0, dtype=float), (m, 1))
    Ia = np.zeros(m)
    If = np.zeros(m)
    half = m // 2
    Bt = S.B.T
    if f is not None:
        fw = np.asarray(f(np.full(m, t0), X), dtype=float)
    for k in range(n_steps):
        tv = np.full(m, t0 + k * dt)
        if cf.a0 is not None:
            Ia += np.asarray(cf.a0(tv, X), dtype=float) * dt
        sig = principal_sqrt_psd(cf.a2(tv, X))
        if antithetic:
            xi = rng.standard_normal((half, d))
            xi = np.concatenate([xi, -xi])
        else:
            xi = rng.standard_normal((m, d))
        X = X + (X @ Bt) * dt
        if cf.a1 is not None:
            X[:, :d] += np.asarray(cf.a1(tv, X), dtype=float) * dt
        X[:, :d] += sdt * np.einsum("mij,mj->mi", sig, xi)
        if f is not None:
            fw_next = np.exp(Ia) * np.asarray(f(np.full(m, t0 + (k + 1) * dt), X), dtype=float)
            If += 0.5 * (fw + fw_next) * dt
            fw = fw_next
    return X, Ia, If


def _require_exact_admissible(cf: CoefficientField, f):
    if cf.constant_a2 is None or cf.a1 is not None or cf.a0 is not None:
        raise InvalidData(
            "exact-gaussian sampling needs constant a2 with a1 = a0 = 0"
        )
    if f is not None:
        raise InvalidData("exact-gaussian sampling cannot accumulate a source integral")


def _exact_chunk(cf, S, t0, x0, T, m, rng, antithetic):
    mean = matrix_exp(S.B, T - t0) @ np.asarray(x0, dtype=float)
    cov = frozen_covariance(cf, S, T, np.zeros(S.N), t0, T)
    half = m // 2
    if antithetic:
        xi = rng.standard_normal((half, S.N))
        xi = np.concatenate([xi, -xi])
    else:
        xi = rng.standard_normal((m, S.N))
    X = mean + xi @ cov.chol.T
    return X, np.zeros(m), np.zeros(m)


def simulate_paths(
    cf: CoefficientField,
    S: DriftStructure,
    cfg: SdeConfig,
    t0: float,
    x0,
    T: float,
    f=None,
) -> PathBundle:
    """Simulate terminal states with the configured scheme.

    Accumulates the a0 path integral (left-endpoint rule) and the weighted f
    path integral (trapezoidal rule) when the coefficient field, respectively
    the f argument, provides them.
    """
    if not T > t0:
        raise InvalidData(f"need T > t0, got ({t0}, {T})")
    if cfg.scheme == "exact-gaussian":
        _require_exact_admissible(cf, f)
    sizes = _chunk_sizes(cfg.n_paths, cfg.chunk, cfg.antithetic)
    outs = []
    for c, m in enumerate(sizes):
        rng = _chunk_rng(cfg.seed, c)
        if cfg.scheme == "exact-gaussian":
            outs.append(_exact_chunk(cf, S, t0, x0, T, m, rng, cfg.antithetic))
        else:
            outs.append(
                _em_chunk(cf, S, t0, x0, T, cfg.n_steps, m, rng, cfg.antithetic, f)
            )
    X = np.concatenate([o[0] for o in outs])
    Ia = np.concatenate([o[1] for o in outs])
    If = np.concatenate([o[2] for o in outs])
    return PathBundle(
        terminal=X,
        log_weight=Ia,
        source_integral=If,
        t0=float(t0),
        T=float(T),
        n_steps=cfg.n_steps,
    )


def feynman_kac_estimate(pb, cfg: SdeConfig, t0: float, x0) -> McEstimate:
    """Estimate u(t0, x0) for a terminal-value problem by simulation.

    pb supplies cf, S, T and the optional g / f callables.  Antithetic pairs
    are averaged before the variance estimate, so std_error reflects the
    paired samples.
    """
    bundle = simulate_paths(pb.cf, pb.S, cfg, t0, x0, pb.T, f=pb.f)
    vals = -bundle.source_integral
    if pb.g is not None:
        vals = vals + np.exp(bundle.log_weight) * np.asarray(
            pb.g(bundle.terminal), dtype=float
        )
    if cfg.antithetic:
        folded = []
        start = 0
        for m in _chunk_sizes(cfg.n_paths, cfg.chunk, True):
            v = vals[start : start + m]
            folded.append(0.5 * (v[: m // 2] + v[m // 2 :]))
            start += m
        vals = np.concatenate(folded)
    n = vals.size
    mean = float(np.mean(vals))
    std_error = float(np.std(vals, ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return McEstimate(mean=mean, std_error=std_error, n_paths=n)


def terminal_to_csv(bundle: PathBundle, path: str) -> None:
    """Dump terminal states (one row per path) for external analysis."""
    header = ",".join(f"x{i + 1}" for i in range(bundle.terminal.shape[1]))
    np.savetxt(path, bundle.terminal, delimiter=",", header=header, comments="")

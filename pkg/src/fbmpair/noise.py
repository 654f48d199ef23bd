"""Seeded noise generation: shared Wiener path and the dependent fBm pair.

Randomness contract
-------------------
All sampling uses the counter-based Philox generator keyed with the pair
``(seed, stream)``: stream k of a Monte Carlo ensemble is an independent
substream fully determined by the base seed and its path index, so results
do not depend on chunking or thread layout.  Gaussians come from the
inverse-CDF transform, which keeps the coupling between samplers monotone
in the underlying uniforms.

Two samplers produce the fBm pair:

* :func:`fbm_pair_from_wiener` pushes one Wiener path through the two
  calibrated kernel matrices (the construction under study), and
* :func:`cholesky_joint_sampler` draws the pair exactly from closed-form
  marginal covariances with a shared innovation vector (the distributional
  oracle, independent of the kernel quadrature).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .frac_ops import Grid, GridFunction
from .kernels import HurstParam, fbm_covariance, kernel_matrix

__all__ = [
    "WienerPath",
    "FbmPair",
    "sample_wiener",
    "wiener_increment_batch",
    "fbm_pair_from_wiener",
    "fbm_batch_from_increments",
    "cholesky_joint_sampler",
    "cholesky_joint_batch",
    "fbm_covariance_matrix",
    "joint_covariance_matrix",
    "cholesky_with_jitter",
]

_MIN_UNIFORM = 2.0**-53


def _generator(seed: int, stream: int) -> np.random.Generator:
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    # numpy's Philox clamps key words at 2**63; staying below keeps the
    # (seed, stream) -> key map injective.
    if not 0 <= stream < 2**63:
        raise ValueError("stream index must be below 2**63")
    return np.random.Generator(np.random.Philox(key=[seed, stream]))


def _standard_normal(gen: np.random.Generator, n: int) -> np.ndarray:
    u = gen.random(n)
    u[u == 0.0] = _MIN_UNIFORM
    return ndtri(u)


@dataclass(frozen=True)
class WienerPath:
    """One Wiener path as its N independent N(0, dt) increments."""

    grid: Grid
    increments: np.ndarray
    seed: int
    stream: int = 0

    def __post_init__(self) -> None:
        inc = np.asarray(self.increments, dtype=float)
        if inc.shape != (self.grid.N,):
            raise ValueError(
                f"increments must have shape ({self.grid.N},), got {inc.shape}"
            )
        object.__setattr__(self, "increments", inc)

    def cumulative(self) -> GridFunction:
        """W sampled at t_1 .. t_N."""
        return GridFunction(
            self.grid, np.cumsum(self.increments), exponent=0.0, limit0=0.0
        )


@dataclass(frozen=True)
class FbmPair:
    """Dependent pair (B1, B2); ``wiener`` is set for kernel-driven samples."""

    b1: GridFunction
    b2: GridFunction
    h1: HurstParam
    h2: HurstParam
    wiener: WienerPath | None = None


def sample_wiener(grid: Grid, seed: int, stream: int = 0) -> WienerPath:
    """Deterministic-per-(seed, stream) Wiener increments with variance dt."""
    gen = _generator(seed, stream)
    inc = np.sqrt(grid.dt) * _standard_normal(gen, grid.N)
    return WienerPath(grid, inc, seed, stream)


def wiener_increment_batch(grid: Grid, seed: int, streams) -> np.ndarray:
    """Increment matrix of shape (N, len(streams)), one substream per column."""
    z = _normal_block(grid.N, seed, streams, tag=_WIENER_TAG)
    return np.sqrt(grid.dt) * z


def fbm_pair_from_wiener(
    w: WienerPath, h1: HurstParam | float, h2: HurstParam | float
) -> FbmPair:
    """Map one Wiener path through both kernel matrices (shared noise)."""
    k1 = kernel_matrix(h1, w.grid)
    k2 = kernel_matrix(h2, w.grid)
    b1 = GridFunction(w.grid, k1.map_increments(w.increments), 0.0, 0.0)
    b2 = GridFunction(w.grid, k2.map_increments(w.increments), 0.0, 0.0)
    return FbmPair(b1, b2, k1.hurst, k2.hurst, w)


def fbm_batch_from_increments(
    dw: np.ndarray, grid: Grid, h1: HurstParam | float, h2: HurstParam | float
) -> tuple[np.ndarray, np.ndarray]:
    """Batched kernel-driven pair: dw is (N, M), returns (B1, B2) as (N, M)."""
    k1 = kernel_matrix(h1, grid)
    k2 = kernel_matrix(h2, grid)
    return k1.map_increments(dw), k2.map_increments(dw)


def fbm_covariance_matrix(hurst: HurstParam | float, grid: Grid) -> np.ndarray:
    """Closed-form covariance R_H(t_i, t_j) at the interior nodes."""
    t = grid.times
    h = hurst.H if isinstance(hurst, HurstParam) else float(hurst)
    h2 = 2.0 * h
    return 0.5 * (
        t[:, None] ** h2 + t[None, :] ** h2 - np.abs(t[:, None] - t[None, :]) ** h2
    )


def cholesky_with_jitter(mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor with an escalating additive ridge.

    The ridge starts at 1e-12 * trace / n and doubles until the
    factorization succeeds, capped at 1e-8 * trace / n; failure at the cap
    raises with condition diagnostics.
    """
    n = mat.shape[0]
    base = np.trace(mat) / n
    try:
        return np.linalg.cholesky(mat), 0.0
    except np.linalg.LinAlgError:
        pass
    ridge = 1e-12 * base
    cap = 1e-8 * base
    eye = np.eye(n)
    while ridge <= cap:
        try:
            return np.linalg.cholesky(mat + ridge * eye), ridge
        except np.linalg.LinAlgError:
            ridge *= 2.0
    eigs = np.linalg.eigvalsh(mat)
    raise np.linalg.LinAlgError(
        "covariance not factorizable within the jitter cap: "
        f"min eigenvalue {eigs[0]:.3e}, max {eigs[-1]:.3e}, ridge cap {cap:.3e}"
    )


def _joint_factors(
    h1: HurstParam | float, h2: HurstParam | float, grid: Grid
) -> tuple[np.ndarray, np.ndarray]:
    l1, _ = cholesky_with_jitter(fbm_covariance_matrix(h1, grid))
    l2, _ = cholesky_with_jitter(fbm_covariance_matrix(h2, grid))
    return l1, l2


def joint_covariance_matrix(
    h1: HurstParam | float, h2: HurstParam | float, grid: Grid
) -> np.ndarray:
    """2N x 2N joint covariance of the oracle pair.

    Diagonal blocks are the closed-form R_{H_k}; the cross block is
    L1 @ L2.T for their Cholesky factors, i.e. the covariance induced by a
    shared innovation vector.  The assembly is a Gram matrix of rank N, so
    it is positive semidefinite by construction.
    """
    l1, l2 = _joint_factors(h1, h2, grid)
    n = grid.N
    out = np.empty((2 * n, 2 * n))
    out[:n, :n] = l1 @ l1.T
    out[n:, n:] = l2 @ l2.T
    out[:n, n:] = l1 @ l2.T
    out[n:, :n] = out[:n, n:].T
    return out


def cholesky_joint_sampler(
    h1: HurstParam | float,
    h2: HurstParam | float,
    grid: Grid,
    seed: int,
    stream: int = 0,
) -> FbmPair:
    """Exact joint-Gaussian draw of the pair from closed-form covariances.

    Marginals are exactly N(0, R_{H_k}); dependence comes from a shared
    innovation vector (both paths are driven by the same z).  No Wiener
    path is attached.
    """
    b1, b2 = cholesky_joint_batch(h1, h2, grid, seed, [stream])
    g1 = GridFunction(grid, b1[:, 0], 0.0, 0.0)
    g2 = GridFunction(grid, b2[:, 0], 0.0, 0.0)
    return FbmPair(g1, g2, _as_hurst(h1), _as_hurst(h2), None)


def cholesky_joint_batch(
    h1: HurstParam | float,
    h2: HurstParam | float,
    grid: Grid,
    seed: int,
    streams,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched oracle draws; returns (B1, B2) of shape (N, len(streams))."""
    l1, l2 = _joint_factors(h1, h2, grid)
    z = _normal_block(grid.N, seed, streams, tag=_ORACLE_TAG)
    return l1 @ z, l2 @ z


def _as_hurst(h) -> HurstParam:
    return h if isinstance(h, HurstParam) else HurstParam(float(h))


# Substream tags keep the two samplers on disjoint Philox keys for one seed.
# numpy clamps Philox key words at 2**63, so tags stay strictly below that.
_WIENER_TAG = 0
_ORACLE_TAG = 2**62


def _normal_block(n: int, seed: int, streams, tag: int = 0) -> np.ndarray:
    streams = list(streams)
    out = np.empty((n, len(streams)))
    for col, k in enumerate(streams):
        gen = _generator(seed, tag + int(k))
        u = gen.random(n)
        u[u == 0.0] = _MIN_UNIFORM
        out[:, col] = u
    return ndtri(out)

"""Volterra kernels of fractional Brownian motion and their discretization.

The fBm with Hurst parameter H is B_t = int_0^t K_H(t, s) dW_s for a square
integrable kernel K_H.  The operator with that kernel factors into fractional
integrals and power weights, branch depending on H vs 1/2:

    K_H h = I^{2H} [ s^{1/2-H} I^{1/2-H} [ s^{H-1/2} h ] ]        (H <= 1/2)
    K_H h = I^{1}  [ s^{H-1/2} I^{H-1/2} [ s^{1/2-H} h ] ]        (H >  1/2)

Both branches degenerate to plain integration at H = 1/2.  The literature's
multiplicative constant is replaced by a calibration that pins the terminal
variance to Var(B_T) = T**(2H); everything here uses that normalization,
including the covariance R_H(t, s) = (t**2H + s**2H - |t-s|**2H) / 2.

The discretized kernel is a lower-triangular matrix of cell integrals
a[i][j] ~ int_{t_{j-1}}^{t_j} K_H(t_i, s) ds, obtained by pushing each cell
indicator through the operator chain with the same product-integration rules
as :mod:`fbmpair.frac_ops`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gamma, rgamma

from .frac_ops import (
    FracDerivative,
    FracIntegral,
    Grid,
    GridFunction,
    OperatorChain,
    PowerWeight,
    apply_chain,
    frac_derivative_core,
    frac_integral_core,
    power_weight_core,
    _integral_weights,
)

__all__ = [
    "HurstParam",
    "KernelMatrix",
    "IntegratedPath",
    "integrate_path",
    "kernel_matrix",
    "calibrate_normalization",
    "apply_KH",
    "apply_KH_inverse",
    "fbm_covariance",
    "cross_covariance",
    "cross_covariance_matrix",
    "variance_sigma2",
    "variance_sigma2_profile",
]


@dataclass(frozen=True)
class HurstParam:
    """Hurst parameter H in (0, 1); alpha = |H - 1/2| is the derived order."""

    H: float

    def __post_init__(self) -> None:
        if not 0.0 < self.H < 1.0:
            raise ValueError(f"Hurst parameter must lie in (0, 1), got {self.H}")

    @property
    def alpha(self) -> float:
        return abs(self.H - 0.5)

    @property
    def is_half(self) -> bool:
        return self.H == 0.5


def _as_hurst(h) -> HurstParam:
    return h if isinstance(h, HurstParam) else HurstParam(float(h))


def kh_chain(hurst: HurstParam | float) -> OperatorChain:
    """Unnormalized operator chain of the Volterra map for this H."""
    h = _as_hurst(hurst).H
    if h == 0.5:
        return OperatorChain((FracIntegral(1.0),))
    if h < 0.5:
        return OperatorChain(
            (
                FracIntegral(2.0 * h),
                PowerWeight(0.5 - h),
                FracIntegral(0.5 - h),
                PowerWeight(h - 0.5),
            )
        )
    return OperatorChain(
        (
            FracIntegral(1.0),
            PowerWeight(h - 0.5),
            FracIntegral(h - 0.5),
            PowerWeight(0.5 - h),
        )
    )


@dataclass(frozen=True)
class KernelMatrix:
    """Cell-integrated lower-triangular discretization of K_H(t, s).

    ``weights[i-1, j-1]`` approximates int over cell j of K_H(t_i, s) ds,
    already scaled by the calibration constant ``c``.
    """

    grid: Grid
    hurst: HurstParam
    weights: np.ndarray
    c: float

    def map_increments(self, dw: np.ndarray) -> np.ndarray:
        """Ito-discretized Volterra integral: B(t_i) = sum_j a[i,j] dW_j / dt.

        ``dw`` has the N increments along axis 0 (optionally batched along
        axis 1); the result has the same shape.
        """
        if dw.shape[0] != self.grid.N:
            raise ValueError(
                f"increment count {dw.shape[0]} does not match grid N={self.grid.N}"
            )
        return (self.weights @ dw) / self.grid.dt

    def covariance(self) -> np.ndarray:
        """Exact covariance of the discretized process at the grid nodes."""
        return (self.weights @ self.weights.T) / self.grid.dt

    def to_csv(self, path) -> None:
        """Dump nonzero weights as (row, col, weight); inspection format only."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row", "col", "weight"])
            n = self.grid.N
            for i in range(n):
                for j in range(i + 1):
                    writer.writerow([i + 1, j + 1, repr(self.weights[i, j])])


@lru_cache(maxsize=6)
def _raw_kernel_weights(h: float, T: float, n: int) -> np.ndarray:
    """Unnormalized cell-integrated kernel weights for Hurst h on Grid(T, n)."""
    grid = Grid(T, n)
    dt = grid.dt
    if h == 0.5:
        out = np.tril(np.full((n, n), dt))
        out.flags.writeable = False
        return out

    if h < 0.5:
        a_in, g_in = 0.5 - h, h - 0.5
        outer_pw, outer_int = 0.5 - h, 2.0 * h
    else:
        a_in, g_in = h - 0.5, 0.5 - h
        outer_pw, outer_int = h - 0.5, 1.0

    t = grid.times
    # inner stage: columns q[:, j] = (1/Gamma(a)) * int_{cell j} (t_i-s)^{a-1} s^g ds
    q = np.zeros((n, n))
    wa, wc = _integral_weights(a_in, n)
    wb = wc.copy()
    wb[1:] -= wa[:-1]
    p0 = np.concatenate(([0.0], t[:-1] ** g_in))  # s^g at left cell edges
    p1 = t**g_in
    scale = dt**a_in * rgamma(a_in)
    for k in range(n):
        rows = np.arange(k, n)
        cols = rows - k
        q[rows, cols] = scale * (p0[cols] * wa[k] + p1[cols] * wb[k])
    # first cell: s^g is singular or cusped at 0, integrate it exactly
    q[0, 0] = dt ** (a_in + g_in) * gamma(g_in + 1.0) * rgamma(g_in + 1.0 + a_in)
    ti = t[1:]
    k0 = ti ** (a_in - 1.0)
    k1 = (ti - dt) ** (a_in - 1.0)
    q[1:, 0] = rgamma(a_in) * dt ** (g_in + 1.0) * (
        k0 / (g_in + 1.0) + (k1 - k0) / (g_in + 2.0)
    )

    # outer stage, bulk columns (zero leading value so the power split is inert)
    vals, _ = power_weight_core(q[:, 1:], outer_pw, dt)
    vals, _ = frac_integral_core(vals, outer_int, dt)
    out = np.zeros((n, n))
    out[:, 1:] = vals
    # first column carries exponent metadata through the same chain
    col1 = GridFunction(grid, q[:, 0], exponent=a_in + g_in)
    col1 = apply_chain(
        OperatorChain((FracIntegral(outer_int), PowerWeight(outer_pw))), col1
    )
    out[:, 0] = col1.values
    out[np.triu_indices(n, k=1)] = 0.0
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("kernel weights contain non-finite entries")
    out.flags.writeable = False
    return out


@lru_cache(maxsize=6)
def _calibration(h: float, T: float, n: int) -> float:
    raw = _raw_kernel_weights(h, T, n)
    dt = T / n
    var_raw = float(raw[-1] @ raw[-1]) / dt
    target = fbm_covariance(h, T, T)
    return float(np.sqrt(target / var_raw))


def kernel_matrix(hurst: HurstParam | float, grid: Grid) -> KernelMatrix:
    """Calibrated kernel matrix for this Hurst parameter and grid (cached)."""
    hp = _as_hurst(hurst)
    raw = _raw_kernel_weights(hp.H, grid.T, grid.N)
    c = _calibration(hp.H, grid.T, grid.N)
    return KernelMatrix(grid, hp, c * raw, c)


def calibrate_normalization(hurst: HurstParam | float, grid: Grid) -> float:
    """Constant c_H making the discrete kernel match Var(B_T) = T**(2H).

    The scaling solve is linear-quadratic and cannot fail; H = 1/2 returns 1
    up to discretization roundoff.
    """
    hp = _as_hurst(hurst)
    return _calibration(hp.H, grid.T, grid.N)


# ---------------------------------------------------------------------------
# operator form and its inverse
# ---------------------------------------------------------------------------


def apply_KH(
    h: GridFunction,
    hurst: HurstParam | float,
    normalized: bool = True,
    return_density: bool = False,
):
    """Volterra map K_H applied to a grid function.

    With ``normalized`` the result is scaled by the calibration constant of
    the (grid, H) pair so that it is consistent with :func:`kernel_matrix`.
    ``return_density`` also returns the a.e. derivative of the output, which
    is what the inverse operator consumes.
    """
    hp = _as_hurst(hurst)
    grid = h.grid
    c = calibrate_normalization(hp, grid) if normalized else 1.0
    if hp.is_half:
        out = apply_chain(OperatorChain((FracIntegral(1.0),), scale=c), h)
        return (out, c * h) if return_density else out
    if hp.H < 0.5:
        pre = OperatorChain(
            (PowerWeight(0.5 - hp.H), FracIntegral(0.5 - hp.H), PowerWeight(hp.H - 0.5))
        )
        x = apply_chain(pre, h)
        out = c * apply_chain(OperatorChain((FracIntegral(2.0 * hp.H),)), x)
        if not return_density:
            return out
        dens_vals, dens_p = frac_derivative_core(
            x.values, 1.0 - 2.0 * hp.H, grid.dt, x.exponent, x.limit0
        )
        return out, GridFunction(grid, c * dens_vals, exponent=dens_p)
    pre = OperatorChain(
        (PowerWeight(hp.H - 0.5), FracIntegral(hp.H - 0.5), PowerWeight(0.5 - hp.H))
    )
    x = apply_chain(pre, h)
    out = c * apply_chain(OperatorChain((FracIntegral(1.0),)), x)
    return (out, c * x) if return_density else out


@dataclass(frozen=True)
class IntegratedPath:
    """Absolutely continuous path t -> int_0^t f ds together with its density f."""

    values: GridFunction
    density: GridFunction | None = None


def integrate_path(f: GridFunction) -> IntegratedPath:
    """Cumulative integral of f with the density attached."""
    vals, p = frac_integral_core(f.values, 1.0, f.grid.dt, f.exponent, f.limit0)
    cum = GridFunction(f.grid, vals, exponent=p, limit0=0.0 if p > 0 else None)
    return IntegratedPath(cum, f)


def apply_KH_inverse(
    path: IntegratedPath, hurst: HurstParam | float, normalized: bool = True
) -> GridFunction:
    """Inverse Volterra map K_H^{-1} acting on an integrated path.

    For h(t) = int_0^t h' ds the inverse reads

        K_H^{-1} h = s^{H-1/2} I^{1/2-H} [ s^{1/2-H} h' ]   (H <  1/2)
        K_H^{-1} h = s^{H-1/2} D^{H-1/2} [ s^{1/2-H} h' ]   (H >  1/2)

    and is h' itself at H = 1/2.  The density must be attached.
    """
    if not isinstance(path, IntegratedPath) or path.density is None:
        raise ValueError(
            "apply_KH_inverse needs an IntegratedPath with its density attached"
        )
    hp = _as_hurst(hurst)
    hprime = path.density
    c = calibrate_normalization(hp, hprime.grid) if normalized else 1.0
    if hp.is_half:
        return (1.0 / c) * hprime
    a = hp.alpha
    mid = FracIntegral(a) if hp.H < 0.5 else FracDerivative(a)
    chain = OperatorChain(
        (PowerWeight(hp.H - 0.5), mid, PowerWeight(0.5 - hp.H)), scale=1.0 / c
    )
    return apply_chain(chain, hprime)


# ---------------------------------------------------------------------------
# covariances
# ---------------------------------------------------------------------------


def fbm_covariance(hurst: HurstParam | float, t: float, s: float) -> float:
    """R_H(t, s) = (t**2H + s**2H - |t-s|**2H) / 2, so Var(B_t) = t**2H."""
    h2 = 2.0 * _as_hurst(hurst).H
    return 0.5 * (abs(t) ** h2 + abs(s) ** h2 - abs(t - s) ** h2)


def _node_index(grid: Grid, t: float) -> int:
    """Snap a time in (0, T] to the nearest interior node index (0-based)."""
    if not 0.0 < t <= grid.T * (1.0 + 1e-12):
        raise ValueError(f"time {t} outside (0, {grid.T}]")
    return int(np.clip(round(t / grid.dt), 1, grid.N)) - 1


def cross_covariance_matrix(
    h1: HurstParam | float, h2: HurstParam | float, grid: Grid
) -> np.ndarray:
    """Quadrature Cov(B1_{t_i}, B2_{t_j}) for the shared-Wiener pair."""
    a1 = kernel_matrix(h1, grid).weights
    a2 = kernel_matrix(h2, grid).weights
    return (a1 @ a2.T) / grid.dt


def cross_covariance(
    h1: HurstParam | float,
    h2: HurstParam | float,
    t: float,
    s: float,
    grid: Grid | None = None,
) -> float:
    """int_0^{min(t,s)} K_{H1}(t, r) K_{H2}(s, r) dr by cell quadrature.

    Times are snapped to the nearest grid node; the default grid spans
    max(t, s) with 2048 cells.
    """
    if grid is None:
        grid = Grid(max(t, s), 2048)
    a1 = kernel_matrix(h1, grid).weights
    a2 = kernel_matrix(h2, grid).weights
    i, j = _node_index(grid, t), _node_index(grid, s)
    return float(a1[i] @ a2[j]) / grid.dt


def variance_sigma2(
    h1: HurstParam | float,
    h2: HurstParam | float,
    t: float,
    grid: Grid | None = None,
) -> float:
    """Variance of B1_t + B2_t: R_{H1}(t,t) + R_{H2}(t,t) + 2 cross(t,t)."""
    return (
        fbm_covariance(h1, t, t)
        + fbm_covariance(h2, t, t)
        + 2.0 * cross_covariance(h1, h2, t, t, grid)
    )


def variance_sigma2_profile(
    h1: HurstParam | float, h2: HurstParam | float, grid: Grid
) -> np.ndarray:
    """Discrete sigma^2(t_i) = sum_j (a1[i,j] + a2[i,j])^2 / dt at every node."""
    a1 = kernel_matrix(h1, grid).weights
    a2 = kernel_matrix(h2, grid).weights
    rows = a1 + a2
    return np.einsum("ij,ij->i", rows, rows) / grid.dt

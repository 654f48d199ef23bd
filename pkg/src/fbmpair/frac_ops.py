"""Discrete Riemann-Liouville fractional calculus on a uniform time grid.

Operators are discretized by product integration: the integrand is split into
a leading power ``c * t**p`` (integrated in closed form through the Gamma
function) plus a remainder that is interpolated piecewise-linearly and
integrated exactly against the singular kernel.  The leading exponent ``p``
travels with each :class:`GridFunction`, so chains of operators keep track of
the behaviour at ``t = 0`` where the kernels and weights are singular.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from functools import cached_property, lru_cache

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import gamma, rgamma

__all__ = [
    "Grid",
    "GridFunction",
    "FracIntegral",
    "FracDerivative",
    "PowerWeight",
    "OperatorChain",
    "ChainError",
    "HolderRegularityWarning",
    "riemann_liouville_integral",
    "riemann_liouville_derivative",
    "riemann_liouville_derivative_diff",
    "power_weight",
    "apply_chain",
    "power_rule_value",
]


class HolderRegularityWarning(UserWarning):
    """Input to a fractional derivative looks rougher than the order allows."""


class ChainError(RuntimeError):
    """An atom inside an operator chain rejected its input."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid 0 = t_0 < t_1 < ... < t_N = T with step dt = T / N.

    Parameters
    ----------
    T : float
        Time horizon, strictly positive.
    N : int
        Number of steps, strictly positive.
    """

    T: float
    N: int

    def __post_init__(self) -> None:
        if not (np.isfinite(self.T) and self.T > 0.0):
            raise ValueError(f"horizon T must be positive and finite, got {self.T}")
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 1):
            raise ValueError(f"step count N must be a positive integer, got {self.N}")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @cached_property
    def nodes(self) -> np.ndarray:
        """All nodes t_0 .. t_N, including t = 0."""
        nodes = np.linspace(0.0, self.T, self.N + 1)
        nodes.flags.writeable = False
        return nodes

    @cached_property
    def times(self) -> np.ndarray:
        """Interior nodes t_1 .. t_N where grid functions carry values."""
        times = self.nodes[1:].copy()
        times.flags.writeable = False
        return times

    def halved(self) -> "Grid":
        """Grid with half the resolution (N must be even)."""
        if self.N % 2:
            raise ValueError("N must be even to halve the grid")
        return Grid(self.T, self.N // 2)


@dataclass(frozen=True)
class GridFunction:
    """Real function sampled at t_1 .. t_N with leading-power metadata at 0.

    ``values[i-1]`` holds f(t_i).  The value at t = 0 is not stored in the
    array because several weights used throughout (``t**g`` with g < 0) are
    singular there; instead ``exponent`` records a lower bound p on the
    leading power of f near 0 (f(t) ~ c t**p), and ``limit0`` optionally
    records a finite limit at 0 when one exists.
    """

    grid: Grid
    values: np.ndarray
    exponent: float = 0.0
    limit0: float | None = None

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.N,):
            raise ValueError(
                f"values must have shape ({self.grid.N},), got {v.shape}"
            )
        if self.exponent <= -1.0:
            raise ValueError(f"leading exponent must exceed -1, got {self.exponent}")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(
        cls,
        grid: Grid,
        fn,
        exponent: float = 0.0,
        limit0: float | None = None,
    ) -> "GridFunction":
        vals = np.asarray(fn(grid.times), dtype=float)
        return cls(grid, vals, exponent=exponent, limit0=limit0)

    @classmethod
    def zeros(cls, grid: Grid) -> "GridFunction":
        return cls(grid, np.zeros(grid.N), exponent=0.0, limit0=0.0)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def norm_inf(self) -> float:
        return float(np.max(np.abs(self.values))) if self.grid.N else 0.0

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check_same_grid(other)
        lim = None
        if self.limit0 is not None and other.limit0 is not None:
            lim = self.limit0 + other.limit0
        return GridFunction(
            self.grid,
            self.values + other.values,
            exponent=min(self.exponent, other.exponent),
            limit0=lim,
        )

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return self + (-other)

    def __neg__(self) -> "GridFunction":
        lim = None if self.limit0 is None else -self.limit0
        return GridFunction(self.grid, -self.values, self.exponent, lim)

    def __mul__(self, scalar: float) -> "GridFunction":
        lim = None if self.limit0 is None else scalar * self.limit0
        return GridFunction(self.grid, scalar * self.values, self.exponent, lim)

    __rmul__ = __mul__

    def _check_same_grid(self, other: "GridFunction") -> None:
        if other.grid != self.grid:
            raise ValueError("grid functions live on different grids")


# ---------------------------------------------------------------------------
# chain atoms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FracIntegral:
    """Left Riemann-Liouville integral of order alpha in (0, 1]."""

    alpha: float

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"integral order must lie in (0, 1], got {self.alpha}")


@dataclass(frozen=True)
class FracDerivative:
    """Left Riemann-Liouville derivative of order alpha in (0, 1)."""

    alpha: float

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"derivative order must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class PowerWeight:
    """Pointwise multiplication by t**gamma."""

    gamma: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.gamma):
            raise ValueError("power-weight exponent must be finite")


Atom = FracIntegral | FracDerivative | PowerWeight


@dataclass(frozen=True)
class OperatorChain:
    """Composition of atoms, written left to right like the operator product.

    The rightmost atom acts first.  ``scale`` multiplies the final result;
    it carries kernel-normalization ratios without extra atoms.
    """

    atoms: tuple[Atom, ...]
    scale: float = 1.0

    def __post_init__(self) -> None:
        atoms = tuple(self.atoms)
        if not atoms:
            raise ValueError("operator chain must contain at least one atom")
        for a in atoms:
            if not isinstance(a, (FracIntegral, FracDerivative, PowerWeight)):
                raise TypeError(f"unsupported chain atom {a!r}")
        object.__setattr__(self, "atoms", atoms)


# ---------------------------------------------------------------------------
# quadrature weights
# ---------------------------------------------------------------------------
#
# Cell moments for k = i - j (uniform grid, dt scaled out):
#   integral kernel (t_i - s)**(alpha-1):
#     n0(k) = ((k+1)**a - k**a) / a
#     n1(k) = (k+1) n0(k) - ((k+1)**(a+1) - k**(a+1)) / (a+1)
#   derivative kernel (t_i - s)**(-alpha-1), k >= 1:
#     m0(k) = (k**(-a) - (k+1)**(-a)) / a
#     m1(k) = (k+1) m0(k) - ((k+1)**(1-a) - k**(1-a)) / (1-a)
# Piecewise-linear product integration over cell j weights the endpoint
# values as f_{j-1} * (n0 - n1) + f_j * n1 (and likewise with m0/m1).
# The two endpoint convolutions collapse into one with the combined kernel
# wc[k] = wb[k] + wa[k-1], plus a rank-one term carrying the value at t = 0.

_DENSE_CONV_MAX_N = 512  # below this, cached BLAS matmul beats FFT for batches


@lru_cache(maxsize=64)
def _integral_weights(alpha: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(n, dtype=float)
    n0 = ((k + 1.0) ** alpha - k**alpha) / alpha
    n1 = (k + 1.0) * n0 - ((k + 1.0) ** (alpha + 1.0) - k ** (alpha + 1.0)) / (
        alpha + 1.0
    )
    wa = n0 - n1
    wc = n1.copy()
    wc[1:] += wa[:-1]
    for arr in (wa, wc):
        arr.flags.writeable = False
    return wa, wc


@lru_cache(maxsize=64)
def _derivative_weights(alpha: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(n, dtype=float)
    with np.errstate(divide="ignore"):
        m0 = (k**-alpha - (k + 1.0) ** -alpha) / alpha
        m1 = (k + 1.0) * m0 - ((k + 1.0) ** (1.0 - alpha) - k ** (1.0 - alpha)) / (
            1.0 - alpha
        )
    m0[0] = 0.0  # k = 0 cell handled analytically
    m1[0] = 0.0
    wa = m0 - m1
    wc = m1.copy()
    wc[1:] += wa[:-1]
    for arr in (wa, wc):
        arr.flags.writeable = False
    return wa, wc


@lru_cache(maxsize=16)
def _dense_conv_matrix(alpha: float, n: int, kind: str) -> np.ndarray:
    wa, wc = (_integral_weights if kind == "i" else _derivative_weights)(alpha, n)
    mat = np.zeros((n, n))
    idx = np.arange(n)
    for k in range(n):
        mat[idx[k:], idx[: n - k]] = wc[k]
    mat.flags.writeable = False
    return mat


@lru_cache(maxsize=32)
def _cached_times(dt: float, n: int) -> np.ndarray:
    t = dt * np.arange(1, n + 1, dtype=float)
    t.flags.writeable = False
    return t


def _pl_quadrature(r, r0, alpha: float, kind: str) -> np.ndarray:
    """S_i = sum_{j<=i} (r_{j-1} wa[i-j] + r_j wb[i-j]) with r_0 = r0."""
    n = r.shape[0]
    wa, wc = (_integral_weights if kind == "i" else _derivative_weights)(alpha, n)
    if r.ndim == 1:
        s = np.convolve(r, wc)[:n]
        if r0 != 0.0:
            s = s + r0 * wa
        return s
    if n <= _DENSE_CONV_MAX_N:
        s = _dense_conv_matrix(alpha, n, kind) @ r
    else:
        s = fftconvolve(r, wc[:, None], axes=0)[:n]
    if np.any(r0 != 0.0):
        s = s + np.multiply.outer(wa, np.asarray(r0, dtype=float))
    return s


def _leading_split(vals, dt, p, limit0):
    """Split samples into c*t**p plus remainder; remainder vanishes at t_1."""
    chat = vals[0] / dt**p
    n = vals.shape[0]
    tp = _cached_times(dt, n) ** p
    r = vals - (tp[:, None] * chat if vals.ndim == 2 else tp * chat)
    if p == 0.0 and limit0 is not None:
        r0 = limit0 - chat
    else:
        r0 = np.zeros_like(chat) if np.ndim(chat) else 0.0
    return chat, r, r0


def _prepend(r: np.ndarray, r0) -> np.ndarray:
    if r.ndim == 1:
        return np.concatenate(([float(r0)], r[:-1]))
    head = np.broadcast_to(np.asarray(r0, dtype=float), (1, r.shape[1]))
    return np.concatenate([head, r[:-1]], axis=0)


def _check_finite(vals: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(vals)):
        bad = np.argwhere(~np.isfinite(np.atleast_2d(vals.T).T))
        i = int(bad[0][0])
        raise ValueError(f"{what} has a non-finite value at node index {i + 1}")


# ---------------------------------------------------------------------------
# array cores (shared by the batched Monte Carlo pipelines)
# ---------------------------------------------------------------------------


def frac_integral_core(vals, alpha, dt, exponent=0.0, limit0=None):
    """Product-integration I^alpha on raw samples, axis 0 = time.

    Returns the transformed samples and their leading exponent.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"integral order must lie in (0, 1], got {alpha}")
    if exponent <= -1.0:
        raise ValueError(f"leading exponent must exceed -1, got {exponent}")
    _check_finite(vals, "fractional-integral input")
    n = vals.shape[0]
    t = _cached_times(dt, n)
    chat, r, r0 = _leading_split(vals, dt, exponent, limit0)
    pw = gamma(exponent + 1.0) * rgamma(exponent + 1.0 + alpha)
    tpow = t ** (exponent + alpha)
    power_part = pw * (tpow[:, None] * chat if vals.ndim == 2 else tpow * chat)
    s = _pl_quadrature(r, r0, alpha, "i")
    out = power_part + (dt**alpha * rgamma(alpha)) * s
    return out, exponent + alpha


def frac_derivative_core(
    vals, alpha, dt, exponent=0.0, limit0=None, check_regularity=True
):
    """Marchaud-form D^alpha on raw samples, axis 0 = time."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"derivative order must lie in (0, 1), got {alpha}")
    if exponent <= -1.0:
        raise ValueError(f"leading exponent must exceed -1, got {exponent}")
    _check_finite(vals, "fractional-derivative input")
    if check_regularity:
        _holder_check(vals, alpha, dt)
    n = vals.shape[0]
    t = _cached_times(dt, n)
    chat, r, r0 = _leading_split(vals, dt, exponent, limit0)
    pw = gamma(exponent + 1.0) * rgamma(exponent + 1.0 - alpha)
    tpow = t ** (exponent - alpha)
    power_part = pw * (tpow[:, None] * chat if vals.ndim == 2 else tpow * chat)

    ta = t**-alpha
    boundary = r * (ta[:, None] if vals.ndim == 2 else ta)
    # last cell: the increment is linear, giving (r_i - r_{i-1}) dt^-a / (1-a)
    last = (r - _prepend(r, r0)) * (dt**-alpha / (1.0 - alpha))
    # sum over k = 1 .. i-1 of m0(k) telescopes
    idx = np.arange(1, n + 1, dtype=float)
    cum_m0 = dt**-alpha * (1.0 - idx**-alpha) / alpha
    full = r * (cum_m0[:, None] if vals.ndim == 2 else cum_m0)
    s = last + full - dt**-alpha * _pl_quadrature(r, r0, alpha, "d")
    out = power_part + rgamma(1.0 - alpha) * (boundary + alpha * s)
    return out, exponent - alpha


def power_weight_core(vals, gam, dt, exponent=0.0):
    n = vals.shape[0]
    tg = _cached_times(dt, n) ** gam
    out = vals * (tg[:, None] if vals.ndim == 2 else tg)
    return out, exponent + gam


def apply_chain_core(chain, vals, dt, exponent=0.0, limit0=None):
    """Apply a chain to raw samples (rightmost atom first)."""
    for pos, atom in enumerate(reversed(chain.atoms)):
        try:
            if isinstance(atom, FracIntegral):
                vals, exponent = frac_integral_core(
                    vals, atom.alpha, dt, exponent, limit0
                )
            elif isinstance(atom, FracDerivative):
                vals, exponent = frac_derivative_core(
                    vals, atom.alpha, dt, exponent, limit0
                )
            else:
                vals, exponent = power_weight_core(vals, atom.gamma, dt, exponent)
        except ValueError as exc:
            raise ChainError(
                f"atom {pos} from the right ({atom!r}) rejected its input: {exc}"
            ) from exc
        limit0 = 0.0 if exponent > 0.0 else None
    if chain.scale != 1.0:
        vals = chain.scale * vals
    return vals, exponent, limit0


def _holder_check(vals, alpha, dt):
    """Warn when adjacent increments exceed a loose Hoelder-quotient bound.

    The bound 10 * max(1, sup|f|) on |f(t_i) - f(t_{i-1})| / dt**alpha fires
    for jump-like inputs on fine grids; path regularity is probabilistic, so
    this is advisory only.
    """
    sup = float(np.max(np.abs(vals)))
    step = float(np.max(np.abs(np.diff(vals, axis=0)))) if vals.shape[0] > 1 else 0.0
    if step > 10.0 * max(1.0, sup) * dt**alpha:
        warnings.warn(
            "input to fractional derivative looks rougher than its order: "
            f"max adjacent increment {step:.3g} exceeds "
            f"10*max(1,|f|)*dt^alpha = {10.0 * max(1.0, sup) * dt**alpha:.3g}",
            HolderRegularityWarning,
            stacklevel=3,
        )


# ---------------------------------------------------------------------------
# public GridFunction operations
# ---------------------------------------------------------------------------


def riemann_liouville_integral(f: GridFunction, alpha: float) -> GridFunction:
    """I^alpha f, the order-alpha left fractional integral on [0, T].

    (I^alpha f)(t) = (1 / Gamma(alpha)) * integral_0^t (t - s)**(alpha - 1) f(s) ds,
    computed by product integration that handles the endpoint singularity
    exactly.  alpha = 1 reduces to the cumulative trapezoid rule.
    """
    out, p = frac_integral_core(
        f.values, alpha, f.grid.dt, f.exponent, f.limit0
    )
    return GridFunction(f.grid, out, exponent=p, limit0=0.0 if p > 0 else None)


def riemann_liouville_derivative(
    f: GridFunction, alpha: float, check_regularity: bool = True
) -> GridFunction:
    """D^alpha f via the Marchaud form (boundary term plus increment integral).

    (D^alpha f)(t) = (1 / Gamma(1 - alpha)) * ( f(t) / t**alpha
        + alpha * integral_0^t (f(t) - f(s)) / (t - s)**(alpha + 1) ds ).

    A discrete regularity check warns (never fails) when the input looks too
    rough for the order.
    """
    out, p = frac_derivative_core(
        f.values, alpha, f.grid.dt, f.exponent, f.limit0, check_regularity
    )
    return GridFunction(f.grid, out, exponent=p, limit0=0.0 if p > 0 else None)


def riemann_liouville_derivative_diff(f: GridFunction, alpha: float) -> GridFunction:
    """D^alpha f as a one-sided difference of I^(1-alpha) f (cross-check form)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"derivative order must lie in (0, 1), got {alpha}")
    g, _ = frac_integral_core(f.values, 1.0 - alpha, f.grid.dt, f.exponent, f.limit0)
    prev = np.concatenate(([0.0], g[:-1]))
    out = (g - prev) / f.grid.dt
    p = f.exponent - alpha
    return GridFunction(f.grid, out, exponent=p, limit0=0.0 if p > 0 else None)


def power_weight(f: GridFunction, gam: float) -> GridFunction:
    """Pointwise t**gamma * f(t); exact inverse of the weight -gamma."""
    out, p = power_weight_core(f.values, gam, f.grid.dt, f.exponent)
    if gam == 0.0:
        lim = f.limit0
    else:
        lim = 0.0 if p > 0 else None
    return GridFunction(f.grid, out, exponent=p, limit0=lim)


def apply_chain(chain: OperatorChain, f: GridFunction) -> GridFunction:
    """Apply an operator chain, rightmost atom first."""
    out, p, lim = apply_chain_core(
        chain, f.values, f.grid.dt, f.exponent, f.limit0
    )
    return GridFunction(f.grid, out, exponent=p, limit0=lim)


def power_rule_value(alpha: float, beta: float, t) -> float | np.ndarray:
    """Closed form I^alpha[s**beta](t) = Gamma(beta+1)/Gamma(alpha+beta+1) t**(alpha+beta).

    Requires beta > -1 (the defining integral diverges otherwise) and alpha > 0.
    """
    if beta <= -1.0:
        raise ValueError(f"power rule requires beta > -1, got beta = {beta}")
    if alpha <= 0.0:
        raise ValueError(f"power rule requires alpha > 0, got alpha = {alpha}")
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0):
        raise ValueError("power rule is evaluated at t > 0 only")
    out = gamma(beta + 1.0) * rgamma(alpha + beta + 1.0) * t ** (alpha + beta)
    return float(out) if out.ndim == 0 else out

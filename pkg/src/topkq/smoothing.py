"""
Smooth surrogates of the pinball loss.

Two families are provided:

* `NesterovSmoother` -- conjugate (Moreau-type) smoothing with parameter h.
  It under-approximates the pinball loss.
* `ConvolutionSmoother` -- the pinball loss convolved with a scaled kernel
  K_h(t) = K(t/h)/h. It over-approximates the pinball loss.

Both expose the same small interface used by the solvers:

    loss(r)        smoothed pinball value at residual r = s - x
    dloss(r)       derivative of loss with respect to r
    curvature      sup of loss'' (per-score smoothness constant)
    constants(N)   SmoothnessConstants of the N-term aggregate
    hmax(N, g_m, delta)  largest h with U_h <= g_m * delta / 8
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate


class NumericalFailure(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


@dataclass(frozen=True)
class SmoothnessConstants:
    L_h: float
    M_h: float
    U_h: float


def _check_p_h(p: float, h: float) -> None:
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if not h > 0:
        raise ValueError("smoothing parameter h must be positive")


def _scalar_or_array(out: np.ndarray):
    return float(out) if out.ndim == 0 else out


# -- Nesterov smoothing ---------------------------------------------------------

@dataclass(frozen=True)
class NesterovSmoother:
    p: float
    h: float

    def __post_init__(self):
        _check_p_h(self.p, self.h)

    @property
    def curvature(self) -> float:
        return 1.0 / self.h

    @property
    def support(self) -> float:
        """Residuals beyond this distance from zero sit on a linear branch."""
        return self.h

    def loss(self, r):
        return nesterov_value(self, r)

    def dloss(self, r):
        return nesterov_grad(self, r)

    def constants(self, N: int) -> SmoothnessConstants:
        return nesterov_constants(N, self.p, self.h)

    def hmax(self, N: int, g_m: float, delta: float) -> float:
        return nesterov_hmax(N, self.p, g_m, delta)

    def with_h(self, h: float) -> "NesterovSmoother":
        return NesterovSmoother(self.p, h)


def nesterov_value(s: NesterovSmoother, x):
    """Closed-form smoothed pinball value; the tie x = h*p belongs to the quadratic piece."""
    p, h = s.p, s.h
    x = np.asarray(x, dtype=float)
    out = np.where(
        x > h * p,
        p * x - h * p * p / 2,
        np.where(x > h * (p - 1), x * x / (2 * h), (p - 1) * x - h * (p - 1) ** 2 / 2),
    )
    return _scalar_or_array(out)


def nesterov_grad(s: NesterovSmoother, x):
    """Derivative of `nesterov_value`; equals clip(x/h, p-1, p)."""
    x = np.asarray(x, dtype=float)
    out = np.clip(x / s.h, s.p - 1, s.p)
    return _scalar_or_array(out)


def nesterov_constants(n: int, p: float, h: float) -> SmoothnessConstants:
    _check_p_h(p, h)
    if n < 1:
        raise ValueError("n must be at least 1")
    return SmoothnessConstants(
        L_h=n * max(p, 1 - p),
        M_h=n / h,
        U_h=n * h / 2 * max(p * p, (1 - p) ** 2),
    )


def nesterov_hmax(n: int, p: float, g_m: float, delta: float) -> float:
    """Largest h for which the Nesterov approximation error is at most g_m*delta/8."""
    if min(n, g_m, delta) <= 0 or not 0 < p < 1:
        raise ValueError("n, g_m and delta must be positive and p in (0, 1)")
    return g_m * delta / (4 * n * max(p * p, (1 - p) ** 2))


# -- kernels ----------------------------------------------------------------------

@dataclass(frozen=True)
class Kernel:
    """
    Symmetric, nonnegative, bounded density on [-support, support].

    `cdf` is the integral of `point_value` from -inf. `abs_moment` is
    the integral of |t| K(t).
    """

    name: str
    point_value: Callable[[np.ndarray], np.ndarray]
    cdf: Callable[[np.ndarray], np.ndarray]
    sup_value: float
    abs_moment: float
    support: float
    uniform_width: float | None = None  # set for the box kernel, enables the closed form


def uniform_kernel(half_width: float = 1.0) -> Kernel:
    w = float(half_width)
    if not w > 0:
        raise ValueError("half_width must be positive")
    return Kernel(
        name="uniform",
        point_value=lambda x: np.where(np.abs(x) <= w, 1 / (2 * w), 0.0),
        cdf=lambda x: np.clip((np.asarray(x, dtype=float) + w) / (2 * w), 0.0, 1.0),
        sup_value=1 / (2 * w),
        abs_moment=w / 2,
        support=w,
        uniform_width=w,
    )


def optimal_kernel(sup_value: float) -> Kernel:
    """Box kernel of height `sup_value`: the smallest |t|-moment among kernels bounded by it."""
    return uniform_kernel(1 / (2 * sup_value))


def triangular_kernel(half_width: float = 1.0) -> Kernel:
    w = float(half_width)

    def pdf(x):
        u = np.abs(np.asarray(x, dtype=float)) / w
        return np.where(u <= 1, (1 - u) / w, 0.0)

    def cdf(x):
        u = np.clip(np.asarray(x, dtype=float) / w, -1.0, 1.0)
        return np.where(u <= 0, (1 + u) ** 2 / 2, 1 - (1 - u) ** 2 / 2)

    return Kernel("triangular", pdf, cdf, sup_value=1 / w, abs_moment=w / 3, support=w)


def epanechnikov_kernel(half_width: float = 1.0) -> Kernel:
    w = float(half_width)

    def pdf(x):
        u = np.asarray(x, dtype=float) / w
        return np.where(np.abs(u) <= 1, 0.75 * (1 - u * u) / w, 0.0)

    def cdf(x):
        u = np.clip(np.asarray(x, dtype=float) / w, -1.0, 1.0)
        return 0.5 + 0.75 * (u - u**3 / 3)

    return Kernel(
        "epanechnikov", pdf, cdf, sup_value=0.75 / w, abs_moment=3 * w / 8, support=w
    )


KERNELS = {
    "uniform": uniform_kernel,
    "triangular": triangular_kernel,
    "epanechnikov": epanechnikov_kernel,
}


# -- convolution smoothing ----------------------------------------------------

@dataclass(frozen=True)
class ConvolutionSmoother:
    p: float
    h: float
    kernel: Kernel
    use_closed_form: bool = True

    def __post_init__(self):
        _check_p_h(self.p, self.h)

    @property
    def curvature(self) -> float:
        return self.kernel.sup_value / self.h

    @property
    def support(self) -> float:
        return self.kernel.support * self.h

    def loss(self, r):
        return conv_value(self, r)

    def dloss(self, r):
        # d/dr of (rho_p * K_h)(r) = cdf(r/h) - (1 - p)
        r = np.asarray(r, dtype=float)
        return _scalar_or_array(self.kernel.cdf(r / self.h) - (1 - self.p))

    def constants(self, N: int) -> SmoothnessConstants:
        return conv_constants(N, self.p, self.h, self.kernel)

    def hmax(self, N: int, g_m: float, delta: float) -> float:
        return conv_hmax(N, self.p, g_m, delta, self.kernel)

    def with_h(self, h: float) -> "ConvolutionSmoother":
        return ConvolutionSmoother(self.p, h, self.kernel, self.use_closed_form)


def _uniform_closed_form(p: float, H: float, x: np.ndarray) -> np.ndarray:
    return np.where(
        x > H,
        p * x,
        np.where(x > -H, (x - H) ** 2 / (4 * H) + p * x, (p - 1) * x),
    )


def _conv_quadrature_one(p: float, h: float, kernel: Kernel, x: float) -> float:
    c = kernel.support * h

    def integrand(t):
        r = x + t
        return (p * r if r >= 0 else (p - 1) * r) * kernel.point_value(t / h) / h

    pts = [-x] if -c < -x < c else None
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(
                integrand, -c, c, points=pts, epsabs=1e-10, epsrel=1e-12, limit=200
            )
        except integrate.IntegrationWarning as exc:
            raise NumericalFailure(f"quadrature failed at x={x}: {exc}") from exc
    return float(val)


def conv_value_quadrature(s: ConvolutionSmoother, x):
    """Convolution value by adaptive quadrature over the kernel's support."""
    x = np.asarray(x, dtype=float)
    out = np.vectorize(lambda xi: _conv_quadrature_one(s.p, s.h, s.kernel, xi))(x)
    return _scalar_or_array(np.asarray(out, dtype=float))


def conv_value(s: ConvolutionSmoother, x):
    """Smoothed pinball value (rho_p * K_h)(x)."""
    w = s.kernel.uniform_width
    if w is not None and s.use_closed_form:
        out = _uniform_closed_form(s.p, w * s.h, np.asarray(x, dtype=float))
        return _scalar_or_array(out)
    return conv_value_quadrature(s, x)


def conv_agent_grad(s: ConvolutionSmoother, score: float, x):
    """Gradient in x of the smoothed loss of residual score - x: cdf((x - score)/h) - p."""
    x = np.asarray(x, dtype=float)
    return _scalar_or_array(s.kernel.cdf((x - score) / s.h) - s.p)


def conv_constants(n: int, p: float, h: float, kernel: Kernel) -> SmoothnessConstants:
    _check_p_h(p, h)
    if n < 1:
        raise ValueError("n must be at least 1")
    return SmoothnessConstants(
        L_h=n * max(p, 1 - p),
        M_h=n * kernel.sup_value / h,
        U_h=n * h * max(p, 1 - p) * kernel.abs_moment,
    )


def conv_hmax(n: int, p: float, g_m: float, delta: float, kernel: Kernel) -> float:
    """Largest h for which the convolution approximation error is at most g_m*delta/8."""
    if min(n, g_m, delta) <= 0 or not 0 < p < 1:
        raise ValueError("n, g_m and delta must be positive and p in (0, 1)")
    return g_m * delta / (8 * n * max(p, 1 - p) * kernel.abs_moment)


# -- per-agent objective ------------------------------------------------------------

def agent_objective(smoother, scores, x):
    """Sum of smoothed losses over one agent's scores, at a scalar or array of x."""
    s = np.asarray(getattr(scores, "scores", scores), dtype=float).ravel()
    x = np.asarray(x, dtype=float)
    r = s[:, None] - x.reshape(1, -1)
    out = np.asarray(smoother.loss(r)).sum(axis=0)
    return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)


def agent_gradient(smoother, scores, x):
    """d/dx of `agent_objective`."""
    s = np.asarray(getattr(scores, "scores", scores), dtype=float).ravel()
    x = np.asarray(x, dtype=float)
    r = s[:, None] - x.reshape(1, -1)
    out = -np.asarray(smoother.dloss(r)).sum(axis=0)
    return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)


def make_smoother(kind: str, p: float, h: float, kernel: str = "uniform"):
    if kind == "nesterov":
        return NesterovSmoother(p, h)
    if kind == "conv":
        return ConvolutionSmoother(p, h, KERNELS[kernel]())
    raise ValueError(f"unknown smoother {kind!r}")

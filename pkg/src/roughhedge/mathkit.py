"""Numerical kernel shared by the whole package.

Normal-distribution special functions, the exponential integrals, deterministic
1d/2d quadrature with a small declarative spec, and counter-based random number
streams.  Everything here is pure and reentrant: functions have no hidden
state, and RNG streams are value-semantic objects derived from
``(seed, stream_id)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

__all__ = [
    "QuadSpec",
    "BivariateGaussian",
    "QuadratureError",
    "normal_pdf",
    "normal_cdf",
    "normal_cdf_inv",
    "exp_integral_e1",
    "exp_integral_ei",
    "gauss_hermite_nodes",
    "gauss_legendre_nodes",
    "integrate_1d",
    "integrate_gauss_2d",
    "rng_stream",
]

EULER_GAMMA = 0.5772156649015329

_SCHEMES = ("gauss_hermite", "gauss_legendre", "adaptive")
_ENDPOINT_MAPS = ("none", "sqrt_left", "sqrt_right")


class QuadratureError(RuntimeError):
    """Quadrature did not reach the requested tolerance.

    Carries the best available estimate and its error bound so callers can
    decide whether to accept a degraded result.
    """

    def __init__(self, message: str, estimate: float | None = None,
                 error: float | None = None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


@dataclass(frozen=True)
class QuadSpec:
    """Declarative description of how to evaluate an integral.

    scheme
        ``gauss_hermite`` integrates against the standard normal density,
        ``gauss_legendre`` uses a fixed-order rule on a finite interval and
        ``adaptive`` wraps an adaptive panel method with error control.
    order
        Number of nodes for the fixed-order schemes (>= 2).
    abs_tol, rel_tol
        Tolerances for the adaptive scheme; must not both be zero there.
    endpoint_map
        ``sqrt_left`` / ``sqrt_right`` substitute the integration variable so
        that an inverse-square-root singularity at the corresponding endpoint
        becomes regular (s = a + u^2, resp. s = b - u^2).
    """

    scheme: str = "adaptive"
    order: int = 64
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    endpoint_map: str = "none"

    def __post_init__(self):
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}")
        if self.endpoint_map not in _ENDPOINT_MAPS:
            raise ValueError(f"unknown endpoint map {self.endpoint_map!r}")
        if self.order < 2:
            raise ValueError("quadrature order must be >= 2")
        if self.abs_tol < 0 or self.rel_tol < 0:
            raise ValueError("tolerances must be nonnegative")
        if self.scheme == "adaptive" and self.abs_tol == 0 and self.rel_tol == 0:
            raise ValueError("adaptive scheme needs a nonzero tolerance")


@dataclass(frozen=True)
class BivariateGaussian:
    """Standardized bivariate normal, parameterized by its correlation."""

    correlation: float

    def __post_init__(self):
        if not -1.0 <= self.correlation <= 1.0:
            raise ValueError("correlation must lie in [-1, 1]")

    def pdf(self, z, zp):
        c = self.correlation
        det = 1.0 - c * c
        if det <= 0.0:
            raise ValueError("degenerate correlation; pdf undefined")
        q = (np.asarray(z) ** 2 - 2.0 * c * np.asarray(z) * np.asarray(zp)
             + np.asarray(zp) ** 2) / det
        return np.exp(-0.5 * q) / (2.0 * math.pi * math.sqrt(det))


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

def normal_pdf(z):
    """Standard normal density."""
    z = np.asarray(z, dtype=float)
    out = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return out if out.ndim else float(out)


def normal_cdf(z):
    """Standard normal CDF, accurate in both tails (erfc based)."""
    out = special.ndtr(np.asarray(z, dtype=float))
    return out if out.ndim else float(out)


def normal_cdf_inv(p):
    """Inverse of :func:`normal_cdf`."""
    out = special.ndtri(np.asarray(p, dtype=float))
    return out if out.ndim else float(out)


def exp_integral_e1(z):
    """Exponential integral E1(z) = int_z^inf exp(-t)/t dt, z > 0."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0):
        raise ValueError("exp_integral_e1 requires z > 0")
    out = special.exp1(z)
    return out if out.ndim else float(out)


def exp_integral_ei(z):
    """Exponential integral Ei(z) (principal value), z > 0.

    Needed by the closed-form hedging-risk coefficient of the exponential
    volatility map, whose integrand carries a positive exponent.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0):
        raise ValueError("exp_integral_ei requires z > 0")
    out = special.expi(z)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def gauss_hermite_nodes(order: int):
    """Nodes/weights (z, w) such that E[f(Z)] ~ sum(w * f(z)) for Z ~ N(0,1).

    The Gaussian density is folded into the weights, so callers pass the bare
    integrand.  Exact for polynomials up to degree 2*order - 1.
    """
    if order < 2:
        raise ValueError("order must be >= 2")
    x, w = special.roots_hermitenorm(int(order))
    return x, w / math.sqrt(2.0 * math.pi)


def gauss_legendre_nodes(a: float, b: float, order: int):
    """Gauss-Legendre nodes/weights mapped to [a, b]."""
    if order < 2:
        raise ValueError("order must be >= 2")
    x, w = np.polynomial.legendre.leggauss(int(order))
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def _apply_endpoint_map(f, a: float, b: float, endpoint_map: str):
    """Rewrite (f, a, b) so that sqrt endpoint singularities become regular."""
    if endpoint_map == "none":
        return f, a, b
    if not np.isfinite(a) or not np.isfinite(b):
        raise ValueError("endpoint maps require a finite interval")
    if endpoint_map == "sqrt_right":
        width = b - a

        def g(u):
            return f(b - u * u) * 2.0 * u

        return g, 0.0, math.sqrt(width)
    # sqrt_left
    width = b - a

    def g(u):
        return f(a + u * u) * 2.0 * u

    return g, 0.0, math.sqrt(width)


def integrate_1d(f: Callable, domain, spec: QuadSpec = QuadSpec()) -> float:
    """Integrate ``f`` over ``domain`` according to ``spec``.

    domain
        ``None`` (whole line; only with the gauss_hermite scheme, which
        weighs by the normal density) or a pair ``(a, b)``; ``b`` may be
        ``inf`` for the adaptive scheme.
    Raises :class:`QuadratureError` if the adaptive method cannot reach
    ``max(abs_tol, rel_tol * |value|)``; the exception carries the best
    estimate and its error bound.
    """
    if spec.scheme == "gauss_hermite":
        if domain is not None:
            raise ValueError("gauss_hermite integrates E[f(Z)] on the whole line")
        z, w = gauss_hermite_nodes(spec.order)
        return float(np.dot(w, f(z)))

    if domain is None:
        raise ValueError("finite-domain schemes require an interval")
    a, b = float(domain[0]), float(domain[1])
    f, a, b = _apply_endpoint_map(f, a, b, spec.endpoint_map)

    if spec.scheme == "gauss_legendre":
        if not (np.isfinite(a) and np.isfinite(b)):
            raise ValueError("gauss_legendre requires a finite interval")
        x, w = gauss_legendre_nodes(a, b, spec.order)
        return float(np.dot(w, f(x)))

    # adaptive
    with np.errstate(over="ignore", invalid="ignore"):
        val, err, info = integrate.quad(f, a, b, epsabs=spec.abs_tol,
                                        epsrel=spec.rel_tol, limit=200,
                                        full_output=True)[:3]
    tol = max(spec.abs_tol, spec.rel_tol * abs(val))
    if err > max(tol, 1e-300) * 10.0:
        raise QuadratureError(
            f"adaptive quadrature reached error {err:.3e} > tolerance {tol:.3e}",
            estimate=val, error=err)
    return float(val)


def integrate_gauss_2d(f: Callable, corr: BivariateGaussian,
                       spec: QuadSpec = QuadSpec(scheme="gauss_hermite")) -> float:
    """E[f(Z, Z')] for a standardized bivariate normal pair.

    Tensorized Gauss-Hermite after rotating the correlated pair onto
    independent factors: Z' = c Z + sqrt(1 - c^2) V.  The Gaussian density is
    inside the weights; pass the bare integrand.
    """
    c = corr.correlation
    z, w = gauss_hermite_nodes(spec.order)
    zz, vv = np.meshgrid(z, z, indexing="ij")
    ww = np.outer(w, w)
    zp = c * zz + math.sqrt(max(1.0 - c * c, 0.0)) * vv
    return float(np.sum(ww * f(zz, zp)))


# ---------------------------------------------------------------------------
# random number streams
# ---------------------------------------------------------------------------

def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Deterministic standard-normal-capable stream.

    Counter-based (Philox) so that identical ``(seed, stream_id)`` pairs give
    bitwise-identical sequences while distinct stream ids are statistically
    independent.  Streams are value-semantic: each call returns a fresh
    generator positioned at the start of the stream.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))

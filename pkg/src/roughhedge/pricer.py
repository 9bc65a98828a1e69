"""Black-Scholes pricing, the Greek-operator ladder, the stochastic-volatility
corrected price, and implied-volatility inversion.

Conventions: zero interest rate and drift (zero-coupon numeraire), so
put-call parity reads call - put = x - K, and the Black-Scholes parameters
are tau = sigma^2 (T - t), d_pm = log(x/K)/sqrt(tau) +- sqrt(tau)/2.

The "ladder" is the family of operators (x d/dx)^j (x^2 d^2/dx^2) applied to
the Black-Scholes price; for calls and puts all three rungs have closed
forms in (d_minus, tau) and they drive both the price correction and the
hedging-cost surfaces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mathkit import gauss_hermite_nodes, normal_cdf, normal_pdf

__all__ = [
    "OptionSpec",
    "MarketParams",
    "BsPoint",
    "bs_price",
    "bs_delta",
    "bs_vega",
    "greek_ladder",
    "corrected_price",
    "implied_vol",
]

SQRT_2PI = math.sqrt(2.0 * math.pi)
TAU_FLOOR = 1e-12
_CUSTOM_GH_ORDER = 64


@dataclass(frozen=True)
class OptionSpec:
    """European payoff: vanilla call/put or a custom payoff function.

    Custom payoffs supply ``custom_payoff(x)``; pricing then integrates the
    payoff against the lognormal terminal density with Gauss-Hermite nodes,
    and Greeks come from quadrature of differentiated integrands
    (best-effort; the closed forms below cover calls and puts).
    """

    payoff: str
    strike: float
    maturity: float
    custom_payoff: Callable | None = None

    def __post_init__(self):
        if self.payoff not in ("call", "put", "custom"):
            raise ValueError(f"unknown payoff {self.payoff!r}")
        if not self.strike > 0:
            raise ValueError("strike must be positive")
        if not self.maturity > 0:
            raise ValueError("maturity must be positive")
        if self.payoff == "custom" and self.custom_payoff is None:
            raise ValueError("custom payoff requires custom_payoff")

    def terminal(self, x):
        if self.payoff == "call":
            return np.maximum(np.asarray(x, dtype=float) - self.strike, 0.0)
        if self.payoff == "put":
            return np.maximum(self.strike - np.asarray(x, dtype=float), 0.0)
        return self.custom_payoff(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class MarketParams:
    """Effective market triple (sigma_bar, D, Gamma) plus raw components.

    d_param is the pricing parameter D = sqrt(eps) rho Dbar, gamma_param the
    hedging-risk parameter Gamma = sqrt(eps) Gammabar.  The raw components
    (epsilon, rho, d_bar, gamma_bar) are optional; when present they must be
    consistent with the scaled values.
    """

    sigma_bar: float
    d_param: float
    gamma_param: float
    epsilon: float | None = None
    rho: float | None = None
    d_bar: float | None = None
    gamma_bar: float | None = None

    def __post_init__(self):
        if not self.sigma_bar > 0:
            raise ValueError("sigma_bar must be positive")
        if self.gamma_param < 0:
            raise ValueError("gamma_param must be nonnegative")
        if self.gamma_param > 0:
            rb = self.d_param / (self.sigma_bar * self.gamma_param)
            if abs(rb) > 1.0 + 1e-9:
                raise ValueError("|D/(sigma_bar*Gamma)| must not exceed 1")
        if None not in (self.epsilon, self.rho, self.d_bar):
            want = math.sqrt(self.epsilon) * self.rho * self.d_bar
            if abs(want - self.d_param) > 1e-9 * max(1.0, abs(want)):
                raise ValueError("d_param inconsistent with sqrt(eps)*rho*d_bar")
        if None not in (self.epsilon, self.gamma_bar):
            want = math.sqrt(self.epsilon) * self.gamma_bar
            if abs(want - self.gamma_param) > 1e-9 * max(1.0, abs(want)):
                raise ValueError("gamma_param inconsistent with sqrt(eps)*gamma_bar")

    @classmethod
    def from_raw(cls, sigma_bar: float, epsilon: float, rho: float,
                 d_bar: float, gamma_bar: float) -> "MarketParams":
        return cls(sigma_bar=sigma_bar,
                   d_param=math.sqrt(epsilon) * rho * d_bar,
                   gamma_param=math.sqrt(epsilon) * gamma_bar,
                   epsilon=epsilon, rho=rho, d_bar=d_bar, gamma_bar=gamma_bar)

    @property
    def rho_bar(self) -> float:
        """Effective correlation D/(sigma_bar*Gamma); |rho_bar| <= |rho|."""
        if self.gamma_param == 0:
            return 0.0
        return self.d_param / (self.sigma_bar * self.gamma_param)

    def dcal(self, strike: float) -> float:
        """Canonical hedging parameter for a given strike,
        D * K / (sqrt(2 pi) sigma_bar^2)."""
        return self.d_param * strike / (SQRT_2PI * self.sigma_bar ** 2)


@dataclass(frozen=True)
class BsPoint:
    """Evaluation point in Black-Scholes coordinates."""

    t: float
    x: float
    tau: float
    d_minus: float
    d_plus: float

    @classmethod
    def make(cls, opt: OptionSpec, t: float, x: float, sigma: float) -> "BsPoint":
        if x <= 0:
            raise ValueError("x must be positive")
        if not 0 <= t <= opt.maturity:
            raise ValueError("t must lie in [0, T]")
        tau = sigma * sigma * (opt.maturity - t)
        if tau <= TAU_FLOOR:
            raise ValueError("tau below floor; Greeks diverge at expiry")
        sq = math.sqrt(tau)
        dm = math.log(x / opt.strike) / sq - 0.5 * sq
        return cls(t=t, x=x, tau=tau, d_minus=dm, d_plus=dm + sq)


def _d_pm(opt: OptionSpec, t, x, sigma):
    tau = np.asarray(sigma, dtype=float) ** 2 * (opt.maturity - np.asarray(t, dtype=float))
    sq = np.sqrt(tau)
    dm = np.log(np.asarray(x, dtype=float) / opt.strike) / sq - 0.5 * sq
    return tau, dm, dm + sq


def bs_price(opt: OptionSpec, t, x, sigma):
    """Black-Scholes price Q0(t, x; sigma) at zero rate.

    Vectorized over (t, x); at t = T returns the payoff.
    """
    t_arr = np.asarray(t, dtype=float)
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0):
        raise ValueError("x must be positive")
    if np.any(t_arr < 0) or np.any(t_arr > opt.maturity):
        raise ValueError("t must lie in [0, T]")
    if not np.all(np.asarray(sigma) > 0):
        raise ValueError("sigma must be positive")

    ttm = opt.maturity - t_arr
    expired = ttm <= 0
    if np.all(expired):
        out = opt.terminal(x_arr)
        return out if np.ndim(out) else float(out)

    if opt.payoff == "custom":
        z, w = gauss_hermite_nodes(_CUSTOM_GH_ORDER)
        s = np.asarray(sigma, dtype=float)
        vol = np.sqrt(np.maximum(ttm, 0.0)) * s
        xt = (x_arr[..., None]
              * np.exp(vol[..., None] * z - 0.5 * vol[..., None] ** 2))
        out = opt.terminal(xt) @ w
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            tau, dm, dp = _d_pm(opt, t_arr, x_arr, sigma)
            call = x_arr * normal_cdf(dp) - opt.strike * normal_cdf(dm)
        call = np.where(expired, np.maximum(x_arr - opt.strike, 0.0), call)
        if opt.payoff == "call":
            out = call
        else:
            out = call - x_arr + opt.strike
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


def bs_delta(opt: OptionSpec, t, x, sigma):
    """dQ0/dx; closed form for call/put, log-space quadrature otherwise."""
    if opt.payoff == "custom":
        return _ladder_custom(opt, t, x, sigma, du_order=1)[0] / np.asarray(x, dtype=float)
    _, _, dp = _d_pm(opt, t, x, sigma)
    nd = normal_cdf(dp)
    return nd if opt.payoff == "call" else nd - 1.0


def bs_vega(opt: OptionSpec, t, x, sigma):
    """dQ0/dsigma; equals sigma (T-t) x^2 d^2Q0/dx^2, positive for convex
    non-affine payoffs."""
    if opt.payoff == "custom":
        gamma_term = _ladder_custom(opt, t, x, sigma, du_order=2)[0]
        return np.asarray(sigma) * (opt.maturity - np.asarray(t)) * gamma_term
    tau, dm, _ = _d_pm(opt, t, x, sigma)
    ttm = opt.maturity - np.asarray(t, dtype=float)
    return opt.strike * np.asarray(sigma) * ttm * np.exp(-0.5 * dm ** 2) / np.sqrt(2 * np.pi * tau)


def _ladder_custom(opt: OptionSpec, t, x, sigma, du_order: int):
    """Log-space derivatives of the custom price by differentiating the
    Gaussian kernel: d^k/du^k Q = a^{-k} E[h(x e^{a Z - a^2/2}) He_k(Z + a)].

    Writing Q(u) = E[h(e^{u + a z - a^2/2})] with a = sigma sqrt(T-t) and
    shifting the Gaussian measure turns each d/du into a Hermite factor,
    so no payoff smoothness is needed.  Returns a tuple of the requested
    derivative orders (1..du_order).
    """
    z, w = gauss_hermite_nodes(_CUSTOM_GH_ORDER)
    a = np.asarray(sigma, dtype=float) * np.sqrt(opt.maturity - np.asarray(t, dtype=float))
    x_arr = np.asarray(x, dtype=float)
    xt = x_arr[..., None] * np.exp(a[..., None] * z - 0.5 * a[..., None] ** 2)
    h = opt.terminal(xt)
    out = []
    he1 = z
    he2 = z * z - 1.0
    he3 = z ** 3 - 3.0 * z
    for k in range(1, du_order + 1):
        he = (he1, he2, he3)[k - 1]
        out.append((h * he) @ w / a ** k)
    return tuple(out)


def greek_ladder(opt: OptionSpec, point: BsPoint, order: int):
    """(x d/dx)^order (x^2 d^2/dx^2) Q0 at the given point, order in {0,1,2}.

    Call/put closed forms (per unit strike K):
      order 0:  exp(-d-^2/2) / sqrt(2 pi tau)
      order 1:  -d- exp(-d-^2/2) / (sqrt(2 pi) tau)
      order 2:  (d-^2 - 1) exp(-d-^2/2) / (sqrt(2 pi) tau^(3/2))
    The order-0 rung is Vega / (sigma (T - t)).
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    if point.tau <= TAU_FLOOR:
        raise ValueError("tau below floor; ladder diverges at expiry")
    if opt.payoff == "custom":
        sigma = math.sqrt(point.tau / (opt.maturity - point.t))
        d1, d2, d3 = _ladder_custom(opt, point.t, np.asarray(point.x), sigma,
                                    du_order=3)
        base = d2 - d1                      # x^2 Q'' = (d/du)^2 Q - (d/du) Q
        if order == 0:
            return float(base)
        step1 = d3 - d2                     # d/du of base
        if order == 1:
            return float(step1)
        d4 = _ladder_custom_high(opt, point, sigma)
        return float(d4 - d3)
    k = opt.strike
    dm = point.d_minus
    tau = point.tau
    gauss = math.exp(-0.5 * dm * dm)
    if order == 0:
        return k * gauss / math.sqrt(2.0 * math.pi * tau)
    if order == 1:
        return -k * dm * gauss / (SQRT_2PI * tau)
    return k * (dm * dm - 1.0) * gauss / (SQRT_2PI * tau ** 1.5)


def _ladder_custom_high(opt: OptionSpec, point: BsPoint, sigma: float) -> float:
    z, w = gauss_hermite_nodes(_CUSTOM_GH_ORDER)
    a = sigma * math.sqrt(opt.maturity - point.t)
    xt = point.x * np.exp(a * z - 0.5 * a * a)
    he4 = z ** 4 - 6.0 * z ** 2 + 3.0
    return float((opt.terminal(xt) * he4) @ w / a ** 4)


def corrected_price(opt: OptionSpec, mp: MarketParams, t, x):
    """Price with the leading stochastic-volatility correction,
    P = Q0(sigma_bar) + D (T - t) (x d/dx)(x^2 d^2/dx^2) Q0.

    The correction vanishes at expiry, so P(T, x) = payoff.
    """
    t_arr = np.asarray(t, dtype=float)
    x_arr = np.asarray(x, dtype=float)
    base = bs_price(opt, t_arr, x_arr, mp.sigma_bar)
    ttm = opt.maturity - t_arr
    if opt.payoff == "custom":
        def lad1(tv, xv):
            return greek_ladder(opt, BsPoint.make(opt, tv, xv, mp.sigma_bar), 1)
        lad = np.vectorize(lad1)(np.where(ttm > 0, t_arr, 0.0), x_arr)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            tau, dm, _ = _d_pm(opt, t_arr, x_arr, mp.sigma_bar)
            lad = -opt.strike * dm * np.exp(-0.5 * dm ** 2) / (SQRT_2PI * tau)
    corr = np.where(ttm > 0, mp.d_param * ttm * lad, 0.0)
    out = base + corr
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


def implied_vol(opt: OptionSpec, t: float, x: float, target_price: float,
                bracket=(1e-6, 5.0), max_iter: int = 100,
                tol_scale: float = 1e-10) -> float:
    """Volatility sigma with bs_price(opt, t, x, sigma) = target_price.

    Newton iteration on the price with the Vega, safeguarded by bisection on
    the given bracket.  The target must lie strictly inside the no-arbitrage
    band (intrinsic value, x) for a call (mirrored for a put); convex
    non-affine payoffs have positive Vega so the root is unique.
    """
    if x <= 0:
        raise ValueError("x must be positive")
    ttm = opt.maturity - t
    if ttm <= 0:
        raise ValueError("implied vol undefined at expiry")
    if opt.payoff == "call":
        lo_band, hi_band = max(x - opt.strike, 0.0), x
    elif opt.payoff == "put":
        lo_band, hi_band = max(opt.strike - x, 0.0), opt.strike
    else:
        lo_band = float(bs_price(opt, t, x, bracket[0]))
        hi_band = float(bs_price(opt, t, x, bracket[1]))
    if not lo_band < target_price < hi_band:
        raise ValueError(
            f"target price {target_price!r} outside the arbitrage band "
            f"({lo_band:.6g}, {hi_band:.6g})")

    tol = tol_scale * opt.strike
    lo, hi = bracket
    sigma = min(max(math.sqrt(2.0 * math.pi / ttm) * target_price / x, lo), hi)
    for _ in range(max_iter):
        price = float(bs_price(opt, t, x, sigma))
        diff = price - target_price
        if abs(diff) <= tol:
            return sigma
        if diff > 0:
            hi = min(hi, sigma)
        else:
            lo = max(lo, sigma)
        vega = float(bs_vega(opt, t, x, sigma))
        if vega > 0:
            candidate = sigma - diff / vega
        else:
            candidate = 0.5 * (lo + hi)
        if not lo < candidate < hi:
            candidate = 0.5 * (lo + hi)
        sigma = candidate
    raise RuntimeError(
        f"implied vol did not converge in {max_iter} iterations; "
        f"best bracket [{lo:.6g}, {hi:.6g}]")

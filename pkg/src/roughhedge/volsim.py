"""Volatility-factor kernels, covariances, and correlated market simulation.

The volatility factor is a stationary Gaussian moving average
``Z_t = sigma_z * int_{-inf}^t K_eps(t-s) dW_s`` with ``K_eps(t) =
K(t/eps)/sqrt(eps)``.  Two kernel families are supported:

* ``standard_ou``:  K(t) = sqrt(2) exp(-t), the classic mean-reverting factor.
* ``fractional_ou`` with Hurst exponent H in (0, 1/2]:
  K(t) = amp(H) * [t^(H-1/2) - int_0^t (t-s)^(H-1/2) exp(-s) ds], which is
  singular like t^(H-1/2) at the origin and decays like t^(H-3/2).  At H=1/2
  it collapses exactly to the OU kernel.

Both kernels have unit L2 norm, so Var(Z_t) = sigma_z^2 exactly.

Sampling methods
----------------
``moving_average`` (default) discretizes the kernel on the simulation grid
with a stationary burn-in history, so the *same* Brownian increments that
build Z are available to drive the correlated asset noise (leverage).  The
most recent, singular kernel cell is not approximated by a point value:
its contribution is generated exactly as a Gaussian pair with the cell's
Brownian increment, using the closed-form cell integrals of K and K^2.

``circulant`` embeds the exact grid covariance in a circulant matrix and
samples by FFT.  It matches the stationary covariance exactly but does not
expose the driving increments, so it is only allowed when leverage is not
needed (rho = 0) or as a covariance oracle.  If the embedding is not
positive semidefinite after padding, we fall back to the moving-average
construction and record that in the result.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy import integrate, special

from .mathkit import rng_stream

__all__ = [
    "KernelSpec",
    "VolModel",
    "GridSpec",
    "PathBatch",
    "FactorSample",
    "kernel_eval",
    "kernel_cumulative",
    "kernel_sq_cumulative",
    "kernel_l2_norm",
    "covariance_cz",
    "kernel_overlap",
    "sample_factor_paths",
    "simulate_market",
    "iter_market_blocks",
    "model_hash",
    "save_batch",
    "load_batch",
    "batch_to_csv",
]

# switch between the confluent-hypergeometric evaluation and the large-t
# asymptotic series of the fractional kernel
_T_ASYMP = 30.0
# number of asymptotic terms (alternating product series)
_N_ASYMP = 7

DEFAULT_BLOCK_PATHS = 1024


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelSpec:
    """Volatility-factor kernel: family, Hurst exponent, mean-reversion time."""

    kind: str
    epsilon: float
    hurst: float | None = None

    def __post_init__(self):
        if self.kind not in ("standard_ou", "fractional_ou"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.kind == "fractional_ou":
            if self.hurst is None or not 0.0 < self.hurst <= 0.5:
                raise ValueError("fractional kernel needs hurst in (0, 1/2]")
        elif self.hurst is not None and self.hurst != 0.5:
            raise ValueError("standard_ou implies hurst absent or exactly 1/2")

    @property
    def is_rough(self) -> bool:
        """True when the kernel is singular at the origin (H < 1/2)."""
        return self.kind == "fractional_ou" and self.hurst < 0.5 - 1e-9


@dataclass(frozen=True)
class VolModel:
    """Full generative volatility model sigma_t = F(Z_t).

    The only supported map is the exponential one,
    F(z) = sigma_bar * exp(omega * z / sigma_z - omega^2), normalized so that
    the stationary root mean square of F is sigma_bar exactly.
    """

    kernel: KernelSpec
    sigma_z: float
    omega: float
    sigma_bar: float
    rho: float
    map: str = "exp_ou"

    def __post_init__(self):
        if self.map != "exp_ou":
            raise ValueError(f"unsupported volatility map {self.map!r}")
        if not self.sigma_z > 0:
            raise ValueError("sigma_z must be positive")
        if not self.sigma_bar > 0:
            raise ValueError("sigma_bar must be positive")
        if self.omega < 0:
            raise ValueError("omega must be nonnegative")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")

    def f(self, z):
        """Volatility map F(z); positive and increasing for omega > 0."""
        return self.sigma_bar * np.exp(self.omega * np.asarray(z) / self.sigma_z
                                       - self.omega ** 2)

    def f_prime(self, z):
        return (self.omega / self.sigma_z) * self.f(z)

    def ff_prime(self, z):
        """(F F')(z), the driver of the effective market parameters."""
        return self.f(z) * self.f_prime(z)


@dataclass(frozen=True)
class GridSpec:
    """Uniform simulation grid plus stationary history length.

    burn_in is expressed in units of the mean-reversion time eps; the
    moving-average sampler keeps a kernel memory of burn_in * eps before the
    first grid point.
    """

    maturity: float
    steps: int
    burn_in: float = 50.0

    def __post_init__(self):
        if not self.maturity > 0:
            raise ValueError("maturity must be positive")
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")

    @property
    def dt(self) -> float:
        return self.maturity / self.steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.maturity, self.steps + 1)


@dataclass
class PathBatch:
    """Matrix of simulated (asset, spot-vol) trajectories plus provenance."""

    grid: GridSpec
    n_paths: int
    x: np.ndarray
    sigma: np.ndarray
    seed: int
    method: str = "moving_average"
    model_digest: str = ""

    def __post_init__(self):
        shape = (self.n_paths, self.grid.steps + 1)
        if self.x.shape != shape or self.sigma.shape != shape:
            raise ValueError(f"path matrices must have shape {shape}")
        x0 = self.x[0, 0]
        if not np.all(self.x[:, 0] == x0):
            raise ValueError("all paths must start at the same x0")
        if not (np.all(self.x > 0) and np.all(self.sigma > 0)):
            raise ValueError("paths must be strictly positive")

    @property
    def x0(self) -> float:
        return float(self.x[0, 0])


@dataclass
class FactorSample:
    """Sampled volatility-factor paths.

    z has shape (n_paths, steps+1).  dw holds the Brownian increments of the
    kernel-driving motion over the simulation window, shape (n_paths, steps),
    scaled to variance dt; it is exactly the noise that generated z, so it can
    be reused for leverage coupling.  The circulant method cannot expose dw
    and sets it to None.
    """

    z: np.ndarray
    dw: np.ndarray | None
    method: str


# ---------------------------------------------------------------------------
# kernel evaluation
# ---------------------------------------------------------------------------

def _amp(hurst: float) -> float:
    return math.sqrt(2.0 * math.sin(math.pi * hurst)) / special.gamma(hurst + 0.5)


def _is_markov(spec: KernelSpec) -> bool:
    return spec.kind == "standard_ou" or spec.hurst > 0.5 - 1e-9


def _asymp_products(a: float, n: int) -> np.ndarray:
    """Coefficients (-1)^k prod_{j=1..k}(a-j) for k = 0..n-1."""
    out = np.empty(n)
    out[0] = 1.0
    acc = 1.0
    for k in range(1, n):
        acc *= -(a - k)
        out[k] = acc
    return out


def _kernel_smooth_part(hurst: float, t: np.ndarray) -> np.ndarray:
    """S(t) with K(t) = t^(H-1/2) S(t); smooth, S(0) = amp(H)."""
    a = hurst + 0.5
    m = special.hyp1f1(1.0, a + 1.0, -t)
    return _amp(hurst) * (1.0 - t * m / a)


def _kernel_asymptotic(hurst: float, t: np.ndarray) -> np.ndarray:
    a = hurst - 0.5
    coef = _asymp_products(a, _N_ASYMP)
    out = np.zeros_like(t)
    for k in range(_N_ASYMP):
        out += coef[k] * t ** (a - 1.0 - k)
    return _amp(hurst) * a * out


def kernel_eval(spec: KernelSpec, t):
    """Unscaled kernel K(t); t > 0 (t >= 0 allowed for the OU kernel)."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    if _is_markov(spec):
        if np.any(t < 0):
            raise ValueError("kernel_eval requires t >= 0")
        out = math.sqrt(2.0) * np.exp(-t)
    else:
        if np.any(t <= 0):
            raise ValueError("fractional kernel is singular at t <= 0")
        h = spec.hurst
        out = np.empty_like(t)
        near = t <= _T_ASYMP
        out[near] = t[near] ** (h - 0.5) * _kernel_smooth_part(h, t[near])
        out[~near] = _kernel_asymptotic(h, t[~near])
    return float(out[0]) if scalar else out


def _cum_tail(hurst: float, x: np.ndarray) -> np.ndarray:
    """int_x^inf K(t) dt by the asymptotic series, valid for x > _T_ASYMP."""
    a = hurst - 0.5
    coef = _asymp_products(a, _N_ASYMP)
    out = np.zeros_like(x)
    for k in range(_N_ASYMP):
        out += coef[k] * x ** (a - k) / (k - a)
    return _amp(hurst) * a * out


def kernel_cumulative(spec: KernelSpec, x):
    """J(x) = int_0^x K(t) dt, exact up to the asymptotic-tail switch.

    For the fractional kernel with H < 1/2 the kernel integrates to zero over
    (0, inf) (its covariance has zero integral), so J(x) = -int_x^inf K for
    large x.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if np.any(x < 0):
        raise ValueError("x must be nonnegative")
    if _is_markov(spec):
        out = math.sqrt(2.0) * (1.0 - np.exp(-x))
    else:
        h = spec.hurst
        out = np.empty_like(x)
        near = x <= _T_ASYMP
        xn = x[near]
        b = h + 0.5
        m = special.hyp1f1(1.0, b + 2.0, -xn)
        out[near] = _amp(h) / b * (xn ** b - xn ** (b + 1.0) * m / (b + 1.0))
        out[~near] = -_cum_tail(h, x[~near])
    return float(out[0]) if scalar else out


def _sq_tail(hurst: float, x: float) -> float:
    """int_x^inf K(t)^2 dt for x > _T_ASYMP (three-term tail expansion)."""
    a = hurst - 0.5
    u1 = -(a - 1.0)
    u2 = (a - 1.0) * (a - 2.0)
    u3 = -(a - 1.0) * (a - 2.0) * (a - 3.0)
    coefs = (1.0, 2.0 * u1, u1 * u1 + 2.0 * u2, 2.0 * u3 + 2.0 * u1 * u2)
    amp2 = (_amp(hurst) * a) ** 2
    return amp2 * sum(c * x ** (2.0 * a - 1.0 - k) / (k + 1.0 - 2.0 * a)
                      for k, c in enumerate(coefs))


@lru_cache(maxsize=256)
def _sq_head(kind: str, hurst: float, x: float) -> float:
    """int_0^x K(t)^2 dt for x <= _T_ASYMP, singular weight handled exactly."""
    if kind == "standard_ou" or hurst > 0.5 - 1e-9:
        return 1.0 - math.exp(-2.0 * x)
    h = hurst

    def smooth_sq(t):
        return _kernel_smooth_part(h, np.atleast_1d(t))[0] ** 2

    x1 = min(x, 1.0)
    val, _ = integrate.quad(smooth_sq, 0.0, x1, weight="alg",
                            wvar=(2.0 * h - 1.0, 0.0), epsabs=1e-13, epsrel=1e-12)
    if x > x1:
        val2, _ = integrate.quad(
            lambda t: kernel_eval(KernelSpec("fractional_ou", 1.0, h), t) ** 2,
            x1, x, epsabs=1e-13, epsrel=1e-12, limit=200)
        val += val2
    return val


def kernel_sq_cumulative(spec: KernelSpec, x: float) -> float:
    """V(x) = int_0^x K(t)^2 dt."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    h = 0.5 if spec.hurst is None else spec.hurst
    if _is_markov(spec):
        return 1.0 - math.exp(-2.0 * x)
    if x <= _T_ASYMP:
        return _sq_head(spec.kind, h, float(x))
    return _sq_head(spec.kind, h, _T_ASYMP) + _sq_tail(h, _T_ASYMP) - _sq_tail(h, float(x))


def kernel_l2_norm(spec: KernelSpec) -> float:
    """int_0^inf K(t)^2 dt; equals 1 analytically for both families."""
    h = 0.5 if spec.hurst is None else spec.hurst
    if _is_markov(spec):
        return 1.0
    return _sq_head(spec.kind, h, _T_ASYMP) + _sq_tail(h, _T_ASYMP)


# ---------------------------------------------------------------------------
# stationary covariance of the factor
# ---------------------------------------------------------------------------

_JACOBI_N = 96
_LAGUERRE_N = 96
_S_LAG_SWITCH = 40.0
_S_ASYMP = 600.0


@lru_cache(maxsize=64)
def _jacobi_rule(beta: float):
    # weight u^beta on (0, 1): map Jacobi (alpha=0, beta) from (-1, 1)
    x, w = special.roots_jacobi(_JACOBI_N, 0.0, beta)
    u = 0.5 * (x + 1.0)
    w = w * 0.5 ** (beta + 1.0)
    return u, w


@lru_cache(maxsize=4)
def _laguerre_rule():
    return special.roots_laguerre(_LAGUERRE_N)


def _cz_fractional(h: float, s: np.ndarray) -> np.ndarray:
    """C_Z(s) = [ (I1 + I2 + I3)/2 - s^{2H} ] / Gamma(2H+1).

    I1 = int_0^inf e^{-v} (s+v)^{2H} dv   (upper incomplete gamma, exact)
    I2 = int_0^s  e^{-w} (s-w)^{2H} dw    (Jacobi / Laguerre rule)
    I3 = e^{-s} Gamma(2H+1)
    """
    a = 2.0 * h
    g = special.gamma(a + 1.0)
    out = np.empty_like(s)

    main = s < _S_ASYMP
    sm = s[main]
    i1 = np.exp(sm) * g * special.gammaincc(a + 1.0, sm)
    i3 = np.exp(-sm) * g

    i2 = np.zeros_like(sm)
    lo = sm <= _S_LAG_SWITCH
    if np.any(lo):
        u, w = _jacobi_rule(a)
        sl = sm[lo]
        # s^{2H+1} * int_0^1 u^{2H} e^{s(u-1)} du
        i2[lo] = sl ** (a + 1.0) * (np.exp(np.outer(sl, u - 1.0)) @ w)
    if np.any(~lo):
        xw, ww = _laguerre_rule()
        sh = sm[~lo]
        vals = np.clip(sh[:, None] - xw[None, :], 0.0, None) ** a
        i2[~lo] = vals @ ww
    out[main] = (0.5 * (i1 + i2 + i3) - sm ** a) / g

    far = ~main
    if np.any(far):
        sf = s[far]
        lead = sf ** (a - 2.0) / special.gamma(a - 1.0)
        out[far] = lead * (1.0 + (a - 2.0) * (a - 3.0) / sf ** 2)
    return out


def covariance_cz(spec: KernelSpec, s):
    """Stationary autocorrelation C_Z(s) of the unscaled factor; C_Z(0) = 1.

    Computed from the convolution form
    C_Z(s) = [ 0.5 int e^{-|v|} |s+v|^{2H} dv - s^{2H} ] / Gamma(2H+1),
    which agrees with the cosine-transform definition.
    """
    s = np.asarray(s, dtype=float)
    scalar = s.ndim == 0
    s = np.atleast_1d(s)
    if np.any(s < 0):
        raise ValueError("lag must be nonnegative")
    if _is_markov(spec):
        out = np.exp(-s)
    else:
        out = _cz_fractional(spec.hurst, s)
    return float(out[0]) if scalar else out


def kernel_overlap(spec: KernelSpec, s, s2) -> float:
    """C_K(s, s') = int_0^inf K(s+v) K(s'+v) dv.

    Symmetric, bounded by 1 = C_K(0, 0), and equal to C_Z(|s-s'|) minus the
    head integral int_0^min(s,s') K(w) K(w+|s-s'|) dw.
    """
    s, s2 = float(s), float(s2)
    if s < 0 or s2 < 0:
        raise ValueError("arguments must be nonnegative")
    if _is_markov(spec):
        return math.exp(-(s + s2))
    r = abs(s - s2)
    u = min(s, s2)
    base = float(covariance_cz(spec, r))
    if u == 0.0:
        return base
    h = spec.hurst
    u1 = min(u, 1.0)
    # K(w) ~ w^{H-1/2} near 0: put the singular factor(s) in the quad weight
    if r == 0.0:
        corr, _ = integrate.quad(
            lambda w: _kernel_smooth_part(h, np.atleast_1d(w))[0] ** 2,
            0.0, u1, weight="alg", wvar=(2.0 * h - 1.0, 0.0),
            epsabs=1e-12, epsrel=1e-10)
    else:
        corr, _ = integrate.quad(
            lambda w: _kernel_smooth_part(h, np.atleast_1d(w))[0]
            * kernel_eval(spec, w + r),
            0.0, u1, weight="alg", wvar=(h - 0.5, 0.0),
            epsabs=1e-12, epsrel=1e-10)
    if u > u1:
        corr2, _ = integrate.quad(lambda w: kernel_eval(spec, w) * kernel_eval(spec, w + r),
                                  u1, u, epsabs=1e-12, epsrel=1e-10, limit=200)
        corr += corr2
    return base - corr


# ---------------------------------------------------------------------------
# moving-average discretization of the kernel
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _ma_weights(spec: KernelSpec, delta: float, n_cells: int):
    """Discrete kernel weights on a grid with spacing delta (in units of eps).

    Returns (g, r0) where Z_k / sigma_z = (g * N)_k + r0 * xi_k for iid
    standard normals N (shared with the Brownian increments, N = dW/sqrt(dt))
    and an independent within-cell residual xi.  g[m] = j_m / sqrt(delta)
    with j_m the exact kernel integral over cell m; r0 completes the exact
    L2 mass of the singular first cell.
    """
    edges = delta * np.arange(n_cells + 2, dtype=float)
    j = np.diff(kernel_cumulative(spec, edges))
    g = j / math.sqrt(delta)
    v0 = kernel_sq_cumulative(spec, delta)
    r0_sq = v0 - j[0] ** 2 / delta
    r0 = math.sqrt(max(r0_sq, 0.0))
    return g, r0


def _check_dt(spec: KernelSpec, grid: GridSpec):
    if grid.dt > spec.epsilon / 4.0:
        warnings.warn(
            f"dt = {grid.dt:.3g} exceeds epsilon/4 = {spec.epsilon / 4.0:.3g}; "
            "the volatility factor decorrelates on scale epsilon and a coarser "
            "grid aliases it", stacklevel=3)


def _sample_moving_average(spec: KernelSpec, sigma_z: float, grid: GridSpec,
                           n_paths: int, seed: int, stream_offset: int) -> FactorSample:
    delta = grid.dt / spec.epsilon
    n_mem = max(int(math.ceil(grid.burn_in / delta)), 1)
    steps = grid.steps
    g, r0 = _ma_weights(spec, delta, n_mem)

    rng_incr = rng_stream(seed, stream_offset)
    rng_resid = rng_stream(seed, stream_offset + 1)
    n_incr = n_mem + steps + 1
    normals = rng_incr.standard_normal((n_paths, n_incr))

    nfft = sfft.next_fast_len(n_incr + n_mem + 1)
    kern_f = sfft.rfft(g, nfft)
    conv = sfft.irfft(sfft.rfft(normals, nfft, axis=1) * kern_f[None, :],
                      nfft, axis=1)
    z = conv[:, n_mem:n_mem + steps + 1].copy()
    if r0 > 0.0:
        z += r0 * rng_resid.standard_normal((n_paths, steps + 1))
    z *= sigma_z

    dw = math.sqrt(grid.dt) * normals[:, n_mem + 1:]
    return FactorSample(z=z, dw=np.ascontiguousarray(dw), method="moving_average")


def _circulant_eigs(spec: KernelSpec, delta: float, n: int):
    """rfft eigenvalues of the circulant embedding of C_Z(k*delta), k < n."""
    lags = delta * np.arange(n, dtype=float)
    c = covariance_cz(spec, lags)
    m = 2 * n - 2
    embed = np.concatenate([c, c[-2:0:-1]])
    lam = sfft.rfft(embed).real
    return lam, m


def _sample_circulant(spec: KernelSpec, sigma_z: float, grid: GridSpec,
                      n_paths: int, seed: int, stream_offset: int) -> FactorSample | None:
    delta = grid.dt / spec.epsilon
    npts = grid.steps + 1
    n = 1 << max(int(math.ceil(math.log2(2 * npts))), 3)
    lam = None
    for _ in range(4):
        lam, m = _circulant_eigs(spec, delta, n)
        if lam.min() >= -1e-9 * lam.max():
            break
        n *= 2
        lam = None
    if lam is None:
        return None
    lam = np.clip(lam, 0.0, None)

    rng = rng_stream(seed, stream_offset)
    nfreq = lam.size  # m // 2 + 1
    u = rng.standard_normal((n_paths, nfreq))
    v = rng.standard_normal((n_paths, nfreq))
    y = np.empty((n_paths, nfreq), dtype=np.complex128)
    y[:, 0] = math.sqrt(lam[0]) * u[:, 0]
    y[:, -1] = math.sqrt(lam[-1]) * u[:, -1]
    mid = np.sqrt(lam[1:-1] / 2.0)
    y[:, 1:-1] = (u[:, 1:-1] + 1j * v[:, 1:-1]) * mid[None, :]
    z = sfft.irfft(y, m, axis=1)[:, :npts] * math.sqrt(m)
    return FactorSample(z=sigma_z * z, dw=None, method="circulant")


def sample_factor_paths(spec: KernelSpec, sigma_z: float, grid: GridSpec,
                        n_paths: int, seed: int, method: str = "moving_average",
                        stream_offset: int = 0) -> FactorSample:
    """Sample stationary volatility-factor paths on the grid.

    The marginal law is N(0, sigma_z^2) and the lag-s autocovariance is
    sigma_z^2 C_Z(s/eps).  The moving-average method also returns the
    Brownian increments that generated the paths (for leverage coupling);
    the circulant method matches the grid covariance exactly but returns
    dw=None, and silently falls back to the moving average when the
    embedding fails.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    _check_dt(spec, grid)
    if method == "moving_average":
        return _sample_moving_average(spec, sigma_z, grid, n_paths, seed, stream_offset)
    if method == "circulant":
        out = _sample_circulant(spec, sigma_z, grid, n_paths, seed, stream_offset)
        if out is not None:
            return out
        out = _sample_moving_average(spec, sigma_z, grid, n_paths, seed, stream_offset)
        return FactorSample(z=out.z, dw=out.dw, method="moving_average_fallback")
    raise ValueError(f"unknown sampling method {method!r}")


# ---------------------------------------------------------------------------
# market simulation
# ---------------------------------------------------------------------------

def model_hash(model: VolModel, grid: GridSpec) -> str:
    """Stable digest of the generative configuration (for manifests)."""
    payload = {
        "kernel": {"kind": model.kernel.kind, "hurst": model.kernel.hurst,
                   "epsilon": model.kernel.epsilon},
        "sigma_z": model.sigma_z, "omega": model.omega, "map": model.map,
        "sigma_bar": model.sigma_bar, "rho": model.rho,
        "grid": {"maturity": grid.maturity, "steps": grid.steps,
                 "burn_in": grid.burn_in},
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def simulate_block(model: VolModel, grid: GridSpec, x0: float, nb: int,
                   seed: int, method: str, block_index: int,
                   sim_substeps: int = 1):
    """Simulate one path block; RNG streams depend only on (seed, block_index).

    Returns (x, sigma, method_used) on the *grid* resolution.  Building
    blocks this way keeps results identical no matter how blocks are
    scheduled across workers.

    sim_substeps > 1 integrates the price and factor dynamics on an
    internally refined grid (dt / sim_substeps) and subsamples the result;
    the within-step leverage coupling that a left-point Euler scheme misses
    shrinks with the simulation step, independently of the rebalancing grid.
    """
    if x0 <= 0:
        raise ValueError("x0 must be positive")
    if sim_substeps < 1:
        raise ValueError("sim_substeps must be >= 1")
    if abs(model.rho) > 0 and method == "circulant":
        raise ValueError("circulant sampling cannot couple leverage; use "
                         "moving_average when rho != 0")
    fine = grid if sim_substeps == 1 else GridSpec(
        maturity=grid.maturity, steps=grid.steps * sim_substeps,
        burn_in=grid.burn_in)
    dt = fine.dt
    offset = 4 * block_index
    factor = sample_factor_paths(model.kernel, model.sigma_z, fine, nb,
                                 seed, method=method, stream_offset=offset)
    sigma = model.f(factor.z)
    dwp = rng_stream(seed, offset + 2).standard_normal((nb, fine.steps)) \
        * math.sqrt(dt)
    if factor.dw is None:
        dwstar = dwp
    else:
        rho = model.rho
        dwstar = rho * factor.dw + math.sqrt(max(1.0 - rho * rho, 0.0)) * dwp
    sig_k = sigma[:, :-1]
    incr = sig_k * dwstar - 0.5 * sig_k ** 2 * dt
    logx = np.concatenate([np.zeros((nb, 1)), np.cumsum(incr, axis=1)], axis=1)
    x = x0 * np.exp(logx)
    if sim_substeps > 1:
        x = np.ascontiguousarray(x[:, ::sim_substeps])
        sigma = np.ascontiguousarray(sigma[:, ::sim_substeps])
    return x, sigma, factor.method


def iter_market_blocks(model: VolModel, grid: GridSpec, x0: float, n_paths: int,
                       seed: int, method: str = "moving_average",
                       block_paths: int = DEFAULT_BLOCK_PATHS,
                       sim_substeps: int = 1):
    """Yield (start_index, x_block, sigma_block, method) for disjoint blocks.

    Each block owns independent RNG streams derived from (seed, block index),
    so the output is reproducible bit-for-bit for a fixed block size no
    matter how blocks are scheduled.
    """
    start = 0
    block_index = 0
    while start < n_paths:
        nb = min(block_paths, n_paths - start)
        x, sigma, used = simulate_block(model, grid, x0, nb, seed, method,
                                        block_index, sim_substeps)
        yield start, x, sigma, used
        start += nb
        block_index += 1


def simulate_market(model: VolModel, grid: GridSpec, x0: float, n_paths: int,
                    seed: int, method: str = "moving_average",
                    block_paths: int = DEFAULT_BLOCK_PATHS,
                    sim_substeps: int = 1) -> PathBatch:
    """Simulate correlated (price, volatility) paths of the full model.

    Log-Euler update: log X_{k+1} = log X_k + sigma_k dW*_k - sigma_k^2 dt/2
    with dW* = rho dW + sqrt(1-rho^2) dW' and sigma_k = F(Z_k); X stays
    positive by construction and is a martingale step by step.
    """
    npts = grid.steps + 1
    x = np.empty((n_paths, npts))
    sigma = np.empty((n_paths, npts))
    used = method
    for start, xb, sb, used_method in iter_market_blocks(
            model, grid, x0, n_paths, seed, method, block_paths, sim_substeps):
        x[start:start + xb.shape[0]] = xb
        sigma[start:start + sb.shape[0]] = sb
        used = used_method
    return PathBatch(grid=grid, n_paths=n_paths, x=x, sigma=sigma, seed=seed,
                     method=used, model_digest=model_hash(model, grid))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_MAGIC = b"RHPB01\n"


def save_batch(batch: PathBatch, path) -> None:
    """Columnar binary dump: JSON header, then x and sigma as little-endian
    float64, path-major."""
    header = {
        "grid": {"maturity": batch.grid.maturity, "steps": batch.grid.steps,
                 "burn_in": batch.grid.burn_in},
        "n_paths": batch.n_paths,
        "seed": batch.seed,
        "method": batch.method,
        "model_digest": batch.model_digest,
        "dtype": "<f8",
        "layout": "path_major",
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(batch.x, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(batch.sigma, dtype="<f8").tobytes())


def load_batch(path) -> PathBatch:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError("not a roughhedge path-batch file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        grid = GridSpec(**header["grid"])
        n = header["n_paths"]
        npts = grid.steps + 1
        count = n * npts
        x = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(n, npts)
        sigma = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(n, npts)
    return PathBatch(grid=grid, n_paths=n, x=x.copy(), sigma=sigma.copy(),
                     seed=header["seed"], method=header["method"],
                     model_digest=header.get("model_digest", ""))


def batch_to_csv(batch: PathBatch, path, max_paths: int = 256) -> None:
    """Long-format CSV (path, step, t, x, sigma) for small batches."""
    n = min(batch.n_paths, max_paths)
    t = batch.grid.times()
    with open(path, "w") as fh:
        fh.write("path,step,t,x,sigma\n")
        for p in range(n):
            for k in range(batch.grid.steps + 1):
                fh.write(f"{p},{k},{t[k]:.12g},{batch.x[p, k]:.17g},"
                         f"{batch.sigma[p, k]:.17g}\n")

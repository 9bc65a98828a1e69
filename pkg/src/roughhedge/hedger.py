"""Delta-hedging schemes, discrete cost accumulation, and calibration.

Four named schemes hedge a European option by holding delta(t, X_t)
underlyings in a self-financing portfolio:

* ``H``        delta of the Black-Scholes price at the effective volatility,
               portfolio marked at that price.
* ``H_tilde``  same delta, portfolio marked at the corrected price.
* ``HW``       delta of the corrected price (minimum-variance delta).
* ``BS``       delta of the Black-Scholes price at the implied volatility
               of the corrected price (practitioners delta).

For a call the deltas share one canonical hedging parameter Dcal:

    delta_H  = N(d+)
    delta_BS = delta_H + Dcal  d-^2      exp(-d-^2/2) / (x sqrt(tau))
    delta_HW = delta_H + Dcal (d-^2 - 1) exp(-d-^2/2) / (x sqrt(tau))

and the corrected call price is P = Q0 - Dcal * d- exp(-d-^2/2).  The
discrete hedging cost over a path uses the left-point (predictable) Riemann
sum, E = V(t_ex) - sum_k delta(t_k, X_k) (X_{k+1} - X_k), where V is the
payoff at maturity or the scheme's marking price at early exercise.  Every
call cost is affine in Dcal, E = base - Dcal * slope, which makes
calibration over Dcal exact under common random numbers.

Cost fluctuations are reported as Y = E - P(0, X_0) for every scheme
(P at the scheme's effective Dcal), matching the asymptotic statistics in
:mod:`roughhedge.asymptotics`.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .pricer import (SQRT_2PI, BsPoint, MarketParams, OptionSpec, bs_delta,
                     bs_price, corrected_price, greek_ladder, implied_vol)
from .volsim import GridSpec, PathBatch, VolModel, iter_market_blocks

__all__ = [
    "HedgeScheme",
    "HedgeOutcome",
    "CostTable",
    "CalibrationResult",
    "delta",
    "accumulate_cost",
    "relative_risk",
    "calibrate_dcal",
    "simulate_cost_table",
    "theoretical_dcal",
]

_SCHEME_KINDS = ("H", "H_tilde", "HW", "BS", "custom_da")


@dataclass(frozen=True)
class HedgeScheme:
    """Named hedging scheme plus its canonical hedging parameter.

    dcal is ignored by H and H_tilde deltas (H_tilde still marks the book at
    the corrected price, which uses it).  dcal=None means "use the
    theoretical value implied by the market parameters and the strike".
    """

    kind: str
    dcal: float | None = None
    delta_fn: Callable | None = None

    def __post_init__(self):
        if self.kind not in _SCHEME_KINDS:
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if self.kind == "custom_da" and self.delta_fn is None:
            raise ValueError("custom_da needs delta_fn(t, x)")

    def label(self) -> str:
        return self.kind


@dataclass
class HedgeOutcome:
    """Per-path hedging costs E for one scheme and exercise time.

    initiation_value is the scheme's own time-zero cost (Q0 for H, the
    corrected price for the others); corrected_initiation is P(0, X0), the
    common reference from which the fluctuation Y = E - P(0, X0) is
    measured for every scheme.
    """

    scheme: str
    dcal: float
    exercise_time: float
    costs: np.ndarray
    initiation_value: float
    corrected_initiation: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.exercise_time:
            raise ValueError("exercise_time must be positive")
        self.costs = np.asarray(self.costs, dtype=float)

    @property
    def n_paths(self) -> int:
        return self.costs.size

    @property
    def mean(self) -> float:
        return float(np.mean(self.costs))

    @property
    def stdev(self) -> float:
        return float(np.std(self.costs, ddof=1))

    @property
    def stderr(self) -> float:
        return self.stdev / math.sqrt(self.n_paths)

    @property
    def y_mean(self) -> float:
        """Mean of the fluctuation Y = E - P(0, X0)."""
        return self.mean - self.corrected_initiation

    def stdev_stderr(self) -> float:
        """Delta-method standard error of the sample standard deviation."""
        y = self.costs - self.mean
        m2 = float(np.mean(y * y))
        m4 = float(np.mean(y ** 4))
        var_of_var = max(m4 - m2 * m2, 0.0) / self.n_paths
        return 0.5 * math.sqrt(var_of_var) / max(self.stdev, 1e-300)

    def summary(self) -> dict:
        return {
            "scheme": self.scheme,
            "dcal": self.dcal,
            "exercise_time": self.exercise_time,
            "mean": self.mean,
            "stdev": self.stdev,
            "stderr": self.stderr,
            "y_mean": self.y_mean,
            "initiation_value": self.initiation_value,
            "corrected_initiation": self.corrected_initiation,
            "n_paths": self.n_paths,
            "seed": self.seed,
        }

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("path_id,cost\n")
            for i, c in enumerate(self.costs):
                fh.write(f"{i},{c:.17g}\n")

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def theoretical_dcal(mp: MarketParams, strike: float) -> float:
    """Canonical hedging parameter implied by the pricing parameter D."""
    return mp.dcal(strike)


def _resolve_dcal(scheme: HedgeScheme, mp: MarketParams, strike: float) -> float:
    if scheme.kind == "H":
        return 0.0
    if scheme.dcal is not None:
        return float(scheme.dcal)
    return theoretical_dcal(mp, strike)


# ---------------------------------------------------------------------------
# deltas
# ---------------------------------------------------------------------------

def delta(scheme: HedgeScheme, opt: OptionSpec, mp: MarketParams, t, x):
    """Number of underlyings held at (t, x); t must be strictly before expiry.

    Calls and puts use the closed forms above; custom payoffs fall back to
    quadrature derivatives of the corresponding price (best-effort).
    """
    t_arr = np.asarray(t, dtype=float)
    x_arr = np.asarray(x, dtype=float)
    if np.any(t_arr >= opt.maturity):
        raise ValueError("delta undefined at or after expiry")
    if np.any(t_arr < 0) or np.any(x_arr <= 0):
        raise ValueError("need 0 <= t < T and x > 0")

    if scheme.kind == "custom_da":
        return scheme.delta_fn(t_arr, x_arr)

    if opt.payoff in ("call", "put"):
        dcal = _resolve_dcal(scheme, mp, opt.strike)
        tau = mp.sigma_bar ** 2 * (opt.maturity - t_arr)
        sq = np.sqrt(tau)
        dm = np.log(x_arr / opt.strike) / sq - 0.5 * sq
        base = ndtr(dm + sq)
        if opt.payoff == "put":
            base = base - 1.0
        if scheme.kind in ("H", "H_tilde"):
            out = base
        else:
            gauss = np.exp(-0.5 * dm * dm)
            if scheme.kind == "BS":
                out = base + dcal * dm * dm * gauss / (x_arr * sq)
            else:  # HW
                out = base + dcal * (dm * dm - 1.0) * gauss / (x_arr * sq)
        out = np.asarray(out)
        return float(out) if out.ndim == 0 else out

    return _delta_custom(scheme, opt, mp, t_arr, x_arr)


def _delta_custom(scheme: HedgeScheme, opt: OptionSpec, mp: MarketParams, t, x):
    if scheme.kind in ("H", "H_tilde"):
        return bs_delta(opt, t, x, mp.sigma_bar)

    def one(tv, xv):
        if scheme.kind == "HW":
            point = BsPoint.make(opt, tv, xv, mp.sigma_bar)
            lad1 = greek_ladder(opt, point, 1)
            # d/dx of D (T-t) (x d/dx)(x^2 d^2/dx^2) Q0 = D (T-t)/x * ladder(2)
            lad2 = greek_ladder(opt, point, 2)
            base = float(bs_delta(opt, tv, xv, mp.sigma_bar))
            return base + mp.d_param * (opt.maturity - tv) * (lad1 + lad2) / xv
        # BS: delta of Q0 at the implied volatility of the corrected price
        target = float(corrected_price(opt, mp, tv, xv))
        sig = implied_vol(opt, tv, xv, target)
        return float(bs_delta(opt, tv, xv, sig))

    return np.vectorize(one)(t, x)


# ---------------------------------------------------------------------------
# cost accumulation (call/put fast path)
# ---------------------------------------------------------------------------

def _snap_index(grid: GridSpec, exercise_time: float, stride: int) -> int:
    if not 0.0 < exercise_time <= grid.maturity + 1e-12:
        raise ValueError("exercise_time must lie in (0, T]")
    kx = int(round(exercise_time / grid.dt))
    kx = max(min(kx, grid.steps), 1)
    if abs(kx * grid.dt - exercise_time) > 1e-9 * max(grid.maturity, 1.0):
        warnings.warn(f"exercise time {exercise_time} snapped to grid point "
                      f"{kx * grid.dt}", stacklevel=3)
    if kx % stride != 0:
        kx = max(stride * round(kx / stride), stride)
        warnings.warn(f"exercise snapped to rebalance lattice (index {kx})",
                      stacklevel=3)
    return kx


def _call_components(x: np.ndarray, logx: np.ndarray, grid: GridSpec,
                     strike: float, sigma_bar: float, maturity: float,
                     kx_list, stride: int):
    """Per-path affine cost components at each exercise index.

    Returns {kx: (base, slope_ce, gain_b, gain_c)} with
    E_H = base, E_Htilde = base - Dcal*ce, E_BS = base - Dcal*(ce + gain_b),
    E_HW = base - Dcal*(ce + gain_c).
    """
    kmax = max(kx_list)
    t = np.arange(0, kmax, stride) * grid.dt
    tau = sigma_bar ** 2 * (maturity - t)
    sq = np.sqrt(tau)

    xs = x[:, 0:kmax:stride]                      # views, no copies
    dm = (logx[:, 0:kmax:stride] - math.log(strike)) / sq - 0.5 * sq
    dx = x[:, stride:kmax + 1:stride] - xs

    prod_h = ndtr(dm + sq)
    prod_h *= dx
    inv = np.exp(-0.5 * dm * dm)
    inv /= xs * sq
    inv *= dx                                     # inv = gauss/(x sqrt(tau)) dx
    del dx
    dm *= dm
    prod_b = dm * inv
    prod_c = prod_b - inv
    del dm, inv

    n = x.shape[0]
    bounds = sorted({int(k) for k in kx_list})
    out = {}
    gh = np.zeros(n)
    gb = np.zeros(n)
    gc = np.zeros(n)
    prev = 0
    for kx in bounds:
        edge = kx // stride
        if edge > prev:
            gh += prod_h[:, prev:edge].sum(axis=1)
            gb += prod_b[:, prev:edge].sum(axis=1)
            gc += prod_c[:, prev:edge].sum(axis=1)
            prev = edge
        if kx == grid.steps and abs(grid.maturity - maturity) < 1e-12:
            vq0 = np.maximum(x[:, kx] - strike, 0.0)
            ce = np.zeros(n)
        else:
            tau_x = sigma_bar ** 2 * (maturity - kx * grid.dt)
            sqx = math.sqrt(tau_x)
            dmx = (logx[:, kx] - math.log(strike)) / sqx - 0.5 * sqx
            vq0 = x[:, kx] * ndtr(dmx + sqx) - strike * ndtr(dmx)
            ce = dmx * np.exp(-0.5 * dmx * dmx)
        out[kx] = (vq0 - gh, ce, gb.copy(), gc.copy())
    return out


def _assemble_outcome(kind: str, dcal: float, components, opt: OptionSpec,
                      mp: MarketParams, x0: float, exercise_time: float,
                      seed: int) -> HedgeOutcome:
    base, ce, gb, gc = components
    if kind == "H":
        costs = base
    elif kind == "H_tilde":
        costs = base - dcal * ce
    elif kind == "BS":
        costs = base - dcal * (ce + gb)
    elif kind == "HW":
        costs = base - dcal * (ce + gc)
    else:
        raise ValueError(f"unknown scheme kind {kind!r}")

    q0_init = float(bs_price(opt, 0.0, x0, mp.sigma_bar))
    tau0 = mp.sigma_bar ** 2 * opt.maturity
    dm0 = math.log(x0 / opt.strike) / math.sqrt(tau0) - 0.5 * math.sqrt(tau0)
    ce0 = dm0 * math.exp(-0.5 * dm0 * dm0)
    # fluctuations are measured from the corrected price at the *pricing*
    # parameter; the scheme's book value uses its own hedging parameter
    p_init = q0_init - mp.dcal(opt.strike) * ce0
    init = q0_init if kind == "H" else q0_init - dcal * ce0
    return HedgeOutcome(scheme=kind, dcal=dcal, exercise_time=exercise_time,
                        costs=costs, initiation_value=init,
                        corrected_initiation=p_init, seed=seed)


def accumulate_cost(scheme: HedgeScheme, opt: OptionSpec, mp: MarketParams,
                    batch: PathBatch, exercise_time: float,
                    rebalance_stride: int = 1) -> HedgeOutcome:
    """Hedging cost per path with left-point rebalancing at every grid step
    (or every ``rebalance_stride`` steps).

    At maturity the book is the payoff; at early exercise it is the scheme's
    marking price (Q0 for H, the corrected price otherwise).
    """
    if rebalance_stride < 1:
        raise ValueError("rebalance_stride must be >= 1")
    kx = _snap_index(batch.grid, exercise_time, rebalance_stride)
    t_ex = kx * batch.grid.dt

    if opt.payoff == "call" and scheme.kind != "custom_da":
        dcal = _resolve_dcal(scheme, mp, opt.strike)
        comps = _call_components(batch.x, np.log(batch.x), batch.grid,
                                 opt.strike, mp.sigma_bar, opt.maturity,
                                 [kx], rebalance_stride)[kx]
        return _assemble_outcome(scheme.kind, dcal, comps, opt, mp,
                                 batch.x0, t_ex, batch.seed)
    return _accumulate_generic(scheme, opt, mp, batch, kx, rebalance_stride)


def _accumulate_generic(scheme: HedgeScheme, opt: OptionSpec, mp: MarketParams,
                        batch: PathBatch, kx: int, stride: int) -> HedgeOutcome:
    """Loop-over-time cost accumulation for puts, custom payoffs and custom
    DA schemes.  Slower than the call fast path; vectorized across paths."""
    grid = batch.grid
    gains = np.zeros(batch.n_paths)
    for k in range(0, kx, stride):
        t = k * grid.dt
        d = delta(scheme, opt, mp, t, batch.x[:, k])
        nxt = min(k + stride, kx)
        gains += np.asarray(d) * (batch.x[:, nxt] - batch.x[:, k])
    t_ex = kx * grid.dt
    if kx == grid.steps:
        v = opt.terminal(batch.x[:, kx])
    elif scheme.kind in ("H",):
        v = bs_price(opt, t_ex, batch.x[:, kx], mp.sigma_bar)
    else:
        v = corrected_price(opt, mp, t_ex, batch.x[:, kx])
    costs = np.asarray(v) - gains

    dcal = _resolve_dcal(scheme, mp, opt.strike)
    q0_init = float(bs_price(opt, 0.0, batch.x0, mp.sigma_bar))
    p_init = float(corrected_price(opt, mp, 0.0, batch.x0))
    init = q0_init if scheme.kind == "H" else p_init
    return HedgeOutcome(scheme=scheme.kind, dcal=dcal, exercise_time=t_ex,
                        costs=costs, initiation_value=init,
                        corrected_initiation=p_init, seed=batch.seed)


def relative_risk(outcome: HedgeOutcome, opt: OptionSpec, mp: MarketParams,
                  x0: float) -> float:
    """St.Dev[E] / Q0(0, x0; sigma_bar), the risk per unit option value."""
    denom = float(bs_price(opt, 0.0, x0, mp.sigma_bar))
    if denom <= 1e-300:
        raise ValueError("worthless option: relative risk undefined")
    return outcome.stdev / denom


# ---------------------------------------------------------------------------
# streaming cost tables (common random numbers across schemes and Dcal)
# ---------------------------------------------------------------------------

@dataclass
class CostTable:
    """Affine cost components per (moneyness, exercise index).

    Holds, for every path, the scheme-independent pieces of the hedging
    cost, so that any scheme and any hedging parameter can be evaluated
    afterwards on the *same* paths (common random numbers).  Used for risk
    curves and Dcal calibration.
    """

    opt: OptionSpec
    sigma_bar: float
    grid: GridSpec
    seed: int
    n_paths: int
    stride: int
    moneyness: tuple
    exercise_indices: tuple
    entries: dict = field(default_factory=dict)

    def exercise_time(self, kx: int) -> float:
        return kx * self.grid.dt

    def outcome(self, scheme: HedgeScheme, mp: MarketParams, m: float,
                kx: int | None = None) -> HedgeOutcome:
        kx = self.exercise_indices[-1] if kx is None else kx
        comps = self.entries[(m, kx)]
        dcal = _resolve_dcal(scheme, mp, self.opt.strike)
        return _assemble_outcome(scheme.kind, dcal, comps, self.opt, mp,
                                 m * self.opt.strike, self.exercise_time(kx),
                                 self.seed)

    def variance_quadratic(self, kind: str, m: float, kx: int | None = None):
        """Coefficients (c0, c1, c2) of Var(E) = c0 - 2 c1 Dcal + c2 Dcal^2."""
        kx = self.exercise_indices[-1] if kx is None else kx
        base, ce, gb, gc = self.entries[(m, kx)]
        if kind == "H":
            slope = np.zeros_like(base)
        elif kind == "H_tilde":
            slope = ce
        elif kind == "BS":
            slope = ce + gb
        elif kind == "HW":
            slope = ce + gc
        else:
            raise ValueError(f"unknown scheme kind {kind!r}")
        b = base - base.mean()
        s = slope - slope.mean()
        n = b.size - 1
        return float(b @ b) / n, float(b @ s) / n, float(s @ s) / n


def _table_block(model: VolModel, grid: GridSpec, opt: OptionSpec,
                 moneyness, kxs, stride: int, seed: int, method: str,
                 nb: int, block_index: int, sim_substeps: int):
    """Cost components of one simulated block, keyed (moneyness, kx)."""
    from .volsim import simulate_block
    xb, _sigma, _used = simulate_block(model, grid, 1.0, nb, seed, method,
                                       block_index, sim_substeps)
    logxb = np.log(xb)
    out = {}
    for m in moneyness:
        scale = m * opt.strike
        comps = _call_components(scale * xb, logxb + math.log(scale), grid,
                                 opt.strike, model.sigma_bar, opt.maturity,
                                 list(kxs), stride)
        for kx in kxs:
            out[(m, kx)] = comps[kx]
    return out


def simulate_cost_table(model: VolModel, grid: GridSpec, opt: OptionSpec,
                        moneyness, exercise_times, n_paths: int, seed: int,
                        stride: int = 1, block_paths: int = 512,
                        method: str = "moving_average",
                        workers: int = 1, sim_substeps: int = 1) -> CostTable:
    """Simulate the market once and accumulate cost components for every
    moneyness (x0 = m K) and exercise time.

    Paths are generated at unit spot and rescaled per moneyness; the price
    process is scale-invariant, so this is exact and gives common random
    numbers across the whole experiment.  Blocks are deterministic in
    (seed, block index) and merged in index order, so the result does not
    depend on the worker count.
    """
    if opt.payoff != "call":
        raise ValueError("cost tables are call-only; use accumulate_cost")
    if abs(opt.maturity - grid.maturity) > 1e-12:
        raise ValueError("option and grid maturities differ")
    moneyness = tuple(float(m) for m in np.atleast_1d(moneyness))
    kxs = tuple(sorted({_snap_index(grid, t, stride)
                        for t in np.atleast_1d(exercise_times)}))
    table = CostTable(opt=opt, sigma_bar=model.sigma_bar, grid=grid, seed=seed,
                      n_paths=n_paths, stride=stride, moneyness=moneyness,
                      exercise_indices=kxs)

    sizes = []
    start = 0
    while start < n_paths:
        sizes.append(min(block_paths, n_paths - start))
        start += sizes[-1]
    args = [(model, grid, opt, moneyness, kxs, stride, seed, method, nb, b,
             sim_substeps)
            for b, nb in enumerate(sizes)]

    if workers > 1 and len(args) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_table_block_star, args, chunksize=1))
    else:
        blocks = [_table_block_star(a) for a in args]

    for m in moneyness:
        for kx in kxs:
            table.entries[(m, kx)] = tuple(
                np.concatenate([blk[(m, kx)][i] for blk in blocks])
                for i in range(4))
    return table


def _table_block_star(args):
    (model, grid, opt, moneyness, kxs, stride, seed, method, nb, b,
     sim_substeps) = args
    return _table_block(model, grid, opt, moneyness, kxs, stride, seed,
                        method, nb, b, sim_substeps)


# ---------------------------------------------------------------------------
# calibration of the hedging parameter
# ---------------------------------------------------------------------------

@dataclass
class CalibrationResult:
    scheme_kind: str
    dcal_star: float
    objective_star: float
    dcal_grid: np.ndarray
    objective: np.ndarray
    multi_minimum: bool

    def summary(self) -> dict:
        return {
            "scheme_kind": self.scheme_kind,
            "dcal_star": self.dcal_star,
            "objective_star": self.objective_star,
            "multi_minimum": self.multi_minimum,
            "dcal_grid": [float(v) for v in self.dcal_grid],
            "objective": [float(v) for v in self.objective],
        }


def _objective_factory(table: CostTable, kind: str, moneyness, kx: int):
    quads = [table.variance_quadratic(kind, m, kx) for m in moneyness]

    def objective(dcal):
        dcal = np.asarray(dcal, dtype=float)
        acc = 0.0
        for c0, c1, c2 in quads:
            var = c0 - 2.0 * dcal * c1 + dcal * dcal * c2
            acc = acc + np.sqrt(np.maximum(var, 0.0))
        return acc / len(quads)

    return objective


def calibrate_dcal(scheme_kind: str, opt: OptionSpec, mp: MarketParams,
                   batch, search=("grid", -0.05, 0.05, 501),
                   moneyness=(0.8, 0.9, 1.0, 1.1, 1.2),
                   exercise_time: float | None = None,
                   model: VolModel | None = None) -> CalibrationResult:
    """Hedging parameter minimizing the mean cost standard deviation over the
    moneyness grid, on fixed paths (common random numbers).

    ``batch`` may be a :class:`CostTable` (preferred; reuses components) or a
    :class:`PathBatch` at unit spot, in which case ``model`` supplies
    sigma_bar.  ``search`` is ('grid', lo, hi, n) or ('golden', lo, hi, tol);
    the objective, a mean of square roots of convex quadratics, is convex,
    but a grid search still reports multiple local minima if sampling
    produces them.
    """
    if scheme_kind not in ("HW", "BS"):
        raise ValueError("calibration applies to the HW and BS schemes")
    if isinstance(batch, CostTable):
        table = batch
    else:
        if not isinstance(batch, PathBatch):
            raise TypeError("batch must be a CostTable or PathBatch")
        sigma_bar = mp.sigma_bar if model is None else model.sigma_bar
        table = _table_from_batch(batch, opt, sigma_bar, moneyness,
                                  exercise_time)
    kx = (table.exercise_indices[-1] if exercise_time is None
          else _snap_index(table.grid, exercise_time, table.stride))
    moneyness = [m for m in moneyness if (m, kx) in table.entries]
    if not moneyness:
        raise ValueError("no table entries for the requested moneyness grid")
    objective = _objective_factory(table, scheme_kind, moneyness, kx)

    mode = search[0]
    if mode == "grid":
        _, lo, hi, n = search
        grid = np.linspace(lo, hi, int(n))
        vals = objective(grid)
        i_star = int(np.argmin(vals))
        interior = vals[1:-1]
        local_min = ((interior < vals[:-2]) & (interior <= vals[2:]))
        multi = int(local_min.sum()) > 1
        if multi:
            warnings.warn("calibration objective has multiple grid-local "
                          "minima; returning the global grid minimum")
        return CalibrationResult(scheme_kind, float(grid[i_star]),
                                 float(vals[i_star]), grid, vals, multi)
    if mode == "golden":
        _, lo, hi, tol = search
        phi = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = float(lo), float(hi)
        c = b - phi * (b - a)
        d = a + phi * (b - a)
        fc, fd = float(objective(c)), float(objective(d))
        while abs(b - a) > tol:
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - phi * (b - a)
                fc = float(objective(c))
            else:
                a, c, fc = c, d, fd
                d = a + phi * (b - a)
                fd = float(objective(d))
        star = 0.5 * (a + b)
        probe = np.linspace(lo, hi, 41)
        return CalibrationResult(scheme_kind, star, float(objective(star)),
                                 probe, objective(probe), False)
    raise ValueError(f"unknown search mode {mode!r}")


def _table_from_batch(batch: PathBatch, opt: OptionSpec, sigma_bar: float,
                      moneyness, exercise_time) -> CostTable:
    t_ex = opt.maturity if exercise_time is None else exercise_time
    kx = _snap_index(batch.grid, t_ex, 1)
    moneyness = tuple(float(m) for m in np.atleast_1d(moneyness))
    table = CostTable(opt=opt, sigma_bar=sigma_bar, grid=batch.grid,
                      seed=batch.seed, n_paths=batch.n_paths, stride=1,
                      moneyness=moneyness, exercise_indices=(kx,))
    x_unit = batch.x / batch.x0
    logx = np.log(x_unit)
    for m in moneyness:
        scale = m * opt.strike
        comps = _call_components(scale * x_unit, logx + math.log(scale),
                                 batch.grid, opt.strike, sigma_bar,
                                 opt.maturity, [kx], 1)
        table.entries[(m, kx)] = comps[kx]
    return table

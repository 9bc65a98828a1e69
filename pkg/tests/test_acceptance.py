"""Acceptance suite: one test per criterion of the reproducibility contract.

Heavy Monte Carlo configurations are shared through session fixtures; each
criterion asserts its stated tolerances and its runtime budget.  Criteria
6 and 10 compare absolute Monte Carlo statistics against the asymptotic
formulas, so their paths are integrated on a 4x refined internal grid
(sim_substeps) to keep discretization bias out of the comparison; the
ordering criteria 7-9 compare schemes on common random numbers, where the
shared discretization cancels.
"""
import math
import time
from dataclasses import dataclass

import numpy as np
import pytest
from scipy.integrate import quad

import roughhedge as rh

ALPHA_05, BETA_05 = rh.expou_alpha_beta(0.5)
CALL = rh.OptionSpec("call", strike=1.0, maturity=1.0)
MONEYNESS = (0.8, 0.9, 1.0, 1.1, 1.2)


def make_model(hurst, eps):
    if hurst >= 0.5:
        kern = rh.KernelSpec("standard_ou", epsilon=eps)
    else:
        kern = rh.KernelSpec("fractional_ou", epsilon=eps, hurst=hurst)
    return rh.VolModel(kernel=kern, sigma_z=1.0, omega=0.5, sigma_bar=0.5,
                       rho=-0.5)


def market_params(eps):
    return rh.MarketParams.from_raw(0.5, eps, -0.5, ALPHA_05 * 0.125,
                                    BETA_05 * 0.25)


@dataclass
class Built:
    table: object
    seconds: float
    mp: object


def build_table(hurst, eps, steps, n_paths, seed, exercise_times=(1.0,),
                moneyness=(1.0,), block_paths=512, sim_substeps=1):
    model = make_model(hurst, eps)
    grid = rh.GridSpec(maturity=1.0, steps=steps, burn_in=50.0)
    t0 = time.monotonic()
    table = rh.simulate_cost_table(model, grid, CALL, moneyness,
                                   exercise_times, n_paths, seed,
                                   block_paths=block_paths,
                                   sim_substeps=sim_substeps)
    return Built(table=table, seconds=time.monotonic() - t0,
                 mp=market_params(eps))


@pytest.fixture(scope="session")
def eps005():
    # criterion 6 configuration: refined internal grid, ATM only
    return build_table(0.5, 0.005, 8192, 20_000, seed=31415,
                       exercise_times=(1.0,), block_paths=256,
                       sim_substeps=4)


@pytest.fixture(scope="session")
def eps005_half():
    # criterion 10 configuration at the documented default path count
    return build_table(0.5, 0.005, 8192, 10_000, seed=62831,
                       exercise_times=(0.5,), block_paths=256,
                       sim_substeps=4)


@pytest.fixture(scope="session")
def fig10():
    return build_table(0.5, 0.05, 4096, 10_000, seed=27182,
                       moneyness=MONEYNESS)


@pytest.fixture(scope="session")
def fig12():
    return build_table(0.1, 0.05, 4096, 10_000, seed=16180,
                       moneyness=MONEYNESS)


@pytest.fixture(scope="session")
def slow_markov():
    return build_table(0.5, 1.0, 4096, 10_000, seed=14142,
                       moneyness=MONEYNESS, block_paths=64)


@pytest.fixture(scope="session")
def slow_rough():
    return build_table(0.1, 1.0, 4096, 10_000, seed=17320,
                       moneyness=MONEYNESS, block_paths=64)


def calibrated_risks(built, kinds=("H", "BS", "HW"),
                     search=("grid", -0.12, 0.06, 721)):
    """Relative risk curves with per-scheme calibrated hedging parameters,
    all on the same paths (common random numbers)."""
    table, mp = built.table, built.mp
    dcals = {"H": None}
    for kind in ("BS", "HW"):
        if kind in kinds:
            dcals[kind] = rh.calibrate_dcal(kind, CALL, mp, table,
                                            search=search,
                                            moneyness=MONEYNESS).dcal_star
    out = {}
    for kind in kinds:
        for m in MONEYNESS:
            o = table.outcome(rh.HedgeScheme(kind, dcal=dcals.get(kind)), mp, m)
            out[(kind, m)] = o
    return out, dcals


def joint_se(a, b):
    return math.hypot(a.stdev_stderr(), b.stdev_stderr())


# ---------------------------------------------------------------------------
# criterion 1: Greek-operator ladder vs finite differences
# ---------------------------------------------------------------------------

_C1 = np.array([3, -32, 168, -672, 0, 672, -168, 32, -3], float) / 840.0
_C2 = np.array([-9, 128, -1008, 8064, -14350, 8064, -1008, 128, -9], float) / 5040.0
_C3 = np.array([-7, 72, -338, 488, 0, -488, 338, -72, 7], float) / 240.0
_C4 = np.array([7, -96, 676, -1952, 2730, -1952, 676, -96, 7], float) / 240.0


def test_criterion_01_greek_ladder_vs_finite_differences():
    t0 = time.monotonic()
    opt = rh.OptionSpec("call", strike=100.0, maturity=1.0)

    def fd_ladder(t, x, sigma, order):
        tau = sigma * sigma * (opt.maturity - t)
        h = 0.05 * math.sqrt(tau)
        u0 = math.log(x)
        q = np.array([rh.bs_price(opt, t, math.exp(u0 + j * h), sigma)
                      for j in range(-4, 5)])
        if order == 0:
            return (_C2 @ q) / h ** 2 - (_C1 @ q) / h
        if order == 1:
            return (_C3 @ q) / h ** 3 - (_C2 @ q) / h ** 2
        return (_C4 @ q) / h ** 4 - (_C3 @ q) / h ** 3

    rng = np.random.default_rng(101)
    checked = 0
    for _ in range(50):
        tau = rng.uniform(0.01, 2.0)
        m = rng.uniform(0.5, 2.0)
        sigma = math.sqrt(tau)  # t = 0, T = 1 puts tau anywhere in the range
        x = 100.0 * m
        pt = rh.BsPoint.make(opt, 0.0, x, sigma)
        if abs(pt.d_minus) > 5.0:
            # the ladder underflows and finite differences see pure roundoff;
            # assert the closed forms are negligible there instead
            for order in (0, 1, 2):
                assert abs(rh.greek_ladder(opt, pt, order)) < 1e-3
            continue
        for order in (0, 1, 2):
            a = rh.greek_ladder(opt, pt, order)
            b = fd_ladder(0.0, x, sigma, order)
            assert a == pytest.approx(b, rel=1e-6), (tau, m, order)
            checked += 1
    assert checked >= 60  # most sampled points are non-degenerate
    assert time.monotonic() - t0 < 1.0


# ---------------------------------------------------------------------------
# criterion 2: kernel normalization and covariance asymptote
# ---------------------------------------------------------------------------

def test_criterion_02_kernel_normalization_and_asymptote():
    from scipy.special import gamma as gamma_fn
    t0 = time.monotonic()
    for h in (0.1, 0.25, 0.4, 0.5):
        spec = rh.KernelSpec("fractional_ou", epsilon=1.0, hurst=h)
        assert rh.kernel_l2_norm(spec) == pytest.approx(1.0, abs=1e-6), h
    for h in (0.1, 0.4):
        spec = rh.KernelSpec("fractional_ou", epsilon=1.0, hurst=h)
        s = 0.01
        correction = s ** (2 * h) / gamma_fn(2 * h + 1)
        got = rh.covariance_cz(spec, s)
        assert abs(got - (1.0 - correction)) <= 0.05 * correction, h
    assert time.monotonic() - t0 < 5.0


# ---------------------------------------------------------------------------
# criterion 3: fOU sampler statistics
# ---------------------------------------------------------------------------

def test_criterion_03_fou_sampler_statistics():
    t0 = time.monotonic()
    eps = 0.05
    spec = rh.KernelSpec("fractional_ou", epsilon=eps, hurst=0.1)
    grid = rh.GridSpec(maturity=5 * eps, steps=40, burn_in=50.0)  # dt = eps/8
    fs = rh.sample_factor_paths(spec, 1.0, grid, 100_000, seed=2718)
    z = fs.z
    n = z.shape[0]

    var = z[:, -1].var(ddof=1)
    assert abs(var - 1.0) <= 0.02, var

    for lag_cells, lag_eps in ((8, 1.0), (40, 5.0)):
        r = np.corrcoef(z[:, -1], z[:, -1 - lag_cells])[0, 1]
        th = rh.covariance_cz(spec, lag_eps)
        se = (1.0 - r * r) / math.sqrt(n - 3)
        assert abs(r - th) <= 3 * se, (lag_eps, r, th, se)

    assert time.monotonic() - t0 < 30.0


# ---------------------------------------------------------------------------
# criterion 4: ExpOU closed forms vs general double quadrature
# ---------------------------------------------------------------------------

def test_criterion_04_expou_closed_forms():
    t0 = time.monotonic()
    ou = rh.KernelSpec("standard_ou", epsilon=0.05)
    for om in (0.1, 0.25, 0.5, 1.0):
        model = rh.VolModel(kernel=ou, sigma_z=1.0, omega=om, sigma_bar=0.5,
                            rho=-0.5)
        alpha, beta = rh.expou_alpha_beta(om)
        assert rh.dbar_general(model) / 0.125 == pytest.approx(alpha, rel=1e-6)
        assert rh.gammabar_general(model) / 0.25 == pytest.approx(beta, rel=1e-6)
        assert abs(alpha / beta - 1.0) <= 0.15, om
    assert time.monotonic() - t0 < 10.0


# ---------------------------------------------------------------------------
# criterion 5: call cost surfaces and Gaussian moment functions
# ---------------------------------------------------------------------------

def test_criterion_05_surfaces_and_moment_functions():
    t0 = time.monotonic()
    assert rh.surface_v(1.0, 0.0) == pytest.approx(0.25, abs=1e-8)
    surf = rh.cost_surfaces([0.2, 0.5, 1.0], np.linspace(-2, 2, 9))
    np.testing.assert_array_equal(surf.w_bs, -surf.v)

    def oracle(j, s, d):
        def f(z):
            dm = (d + z * math.sqrt(s)) / math.sqrt(1.0 - s)
            return dm ** j * math.exp(-dm * dm) \
                * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        center = -d / max(math.sqrt(s), 1e-6)
        pts = sorted({max(min(c, 40.0), -40.0)
                      for c in (center - 2, center, center + 2)})
        val, _ = quad(f, -40, 40, points=pts, limit=400, epsabs=1e-14,
                      epsrel=1e-13)
        return val * math.exp(d * d / (1.0 + s))

    for s in np.linspace(0.05, 0.95, 10):
        for d in np.linspace(-2.25, 2.25, 10):
            f0, f2, f4 = rh.moment_functions(s, d)
            assert f0 == pytest.approx(oracle(0, s, d), abs=1e-8)
            assert f2 == pytest.approx(oracle(2, s, d), abs=1e-8)
            assert f4 == pytest.approx(oracle(4, s, d), abs=1e-8)
    assert time.monotonic() - t0 < 10.0


# ---------------------------------------------------------------------------
# criterion 6: Monte Carlo variance vs asymptotic prediction
# ---------------------------------------------------------------------------

def test_criterion_06_mc_variance_vs_asymptotics(eps005):
    t0 = time.monotonic()
    table, mp = eps005.table, eps005.mp
    out = table.outcome(rh.HedgeScheme("HW"), mp, 1.0,
                        table.exercise_indices[-1])
    gamma = math.sqrt(0.005) * 0.25 * BETA_05
    assert mp.gamma_param == pytest.approx(gamma, rel=1e-12)
    d_atm = -0.25
    predicted = (gamma / 0.5) ** 2 * rh.surface_v(1.0, d_atm)
    mc_var = out.costs.var(ddof=1)
    assert abs(mc_var / predicted - 1.0) <= 0.20, (mc_var, predicted)
    assert abs(out.y_mean) <= 3.0 * out.stderr, (out.y_mean, out.stderr)
    assert eps005.seconds + (time.monotonic() - t0) < 600.0


# ---------------------------------------------------------------------------
# criterion 7: variance ordering under the fast regimes
# ---------------------------------------------------------------------------

def test_criterion_07_variance_ordering(fig10, fig12):
    t0 = time.monotonic()
    gaps = {}
    for label, built in (("markov", fig10), ("rough", fig12)):
        risks, dcals = calibrated_risks(built)
        for m in MONEYNESS:
            bs, hw, h = risks[("BS", m)], risks[("HW", m)], risks[("H", m)]
            assert bs.stdev <= hw.stdev + 2 * joint_se(bs, hw), (label, m)
            assert bs.stdev <= h.stdev + 2 * joint_se(bs, h), (label, m)
        h_atm = risks[("H", 1.0)]
        bs_atm = risks[("BS", 1.0)]
        gaps[label] = (h_atm.stdev - bs_atm.stdev) / h_atm.stdev
    # the relative gain of the practitioners scheme grows with roughness
    assert gaps["rough"] > gaps["markov"], gaps
    assert fig10.seconds + fig12.seconds + (time.monotonic() - t0) < 900.0


# ---------------------------------------------------------------------------
# criterion 8: slow-regime robustness (eps = 1)
# ---------------------------------------------------------------------------

def test_criterion_08_slow_regime(slow_markov, slow_rough):
    t0 = time.monotonic()
    risks_m, _ = calibrated_risks(slow_markov, search=("grid", -0.3, 0.15, 721))
    for m in MONEYNESS:
        trio = [risks_m[(k, m)] for k in ("H", "BS", "HW")]
        for i in range(3):
            for j in range(i + 1, 3):
                a, b = trio[i], trio[j]
                assert abs(a.stdev - b.stdev) <= 3 * joint_se(a, b), (m, i, j)
    risks_r, _ = calibrated_risks(slow_rough, search=("grid", -0.3, 0.15, 721))
    for m in MONEYNESS:
        bs, h = risks_r[("BS", m)], risks_r[("H", m)]
        assert bs.stdev <= h.stdev + 2 * joint_se(bs, h), m
    assert (slow_markov.seconds + slow_rough.seconds
            + (time.monotonic() - t0)) < 900.0


# ---------------------------------------------------------------------------
# criterion 9: hedging-parameter calibration
# ---------------------------------------------------------------------------

def test_criterion_09_calibration(fig10):
    t0 = time.monotonic()
    res = rh.calibrate_dcal("BS", CALL, fig10.mp, fig10.table,
                            search=("grid", -0.12, 0.06, 721),
                            moneyness=MONEYNESS)
    assert -0.020 <= res.dcal_star <= -0.003, res.dcal_star
    theoretical = rh.theoretical_dcal(fig10.mp, 1.0)
    # as printed, the canonical-parameter formula gives -0.0181 at these
    # parameters; the figure caption reports -0.014 (see decisions ledger)
    assert theoretical == pytest.approx(-0.014, abs=0.001), theoretical
    assert fig10.seconds + (time.monotonic() - t0) < 1200.0


# ---------------------------------------------------------------------------
# criterion 10: mean cost of the historical scheme at early exercise
# ---------------------------------------------------------------------------

def test_criterion_10_h_scheme_mean_cost(eps005_half):
    t0 = time.monotonic()
    table, mp = eps005_half.table, eps005_half.mp
    kx_half = table.exercise_indices[0]
    out = table.outcome(rh.HedgeScheme("H"), mp, 1.0, kx_half)
    assert out.exercise_time == pytest.approx(0.5)
    d_atm = -0.25
    predicted = math.sqrt(0.005) * (-0.5) * ((-0.5) * ALPHA_05 * 0.125 / 0.25) \
        * rh.surface_g(d_atm)
    pm, _ = rh.predicted_cost_stats("H", CALL, mp, None, 1.0, 0.5)
    assert pm == pytest.approx(predicted, rel=1e-12)
    assert abs(out.y_mean - predicted) <= 3.0 * out.stderr, \
        (out.y_mean, predicted, out.stderr)
    assert eps005_half.seconds + (time.monotonic() - t0) < 600.0

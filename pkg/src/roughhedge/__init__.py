"""roughhedge: delta-hedging cost simulation and asymptotics under fast
mean-reverting (Markovian and rough fractional) stochastic volatility.

Layering:

* :mod:`roughhedge.mathkit`     special functions, quadrature, RNG streams
* :mod:`roughhedge.volsim`      kernels, stationary factor samplers, market paths
* :mod:`roughhedge.pricer`      Black-Scholes + corrected pricing, implied vol
* :mod:`roughhedge.hedger`      hedging schemes, cost accumulation, calibration
* :mod:`roughhedge.asymptotics` effective parameters and cost surfaces
* :mod:`roughhedge.labcli`      experiment CLI (``roughhedge`` entry point)
"""
from .asymptotics import (CostSurface, EffectiveParams, cost_surfaces,
                          dbar_general, effective_params, expou_alpha_beta,
                          gammabar_general, moment_functions,
                          predicted_cost_stats, surface_g, surface_v,
                          surface_w_h, surface_w_htilde)
from .hedger import (CalibrationResult, CostTable, HedgeOutcome, HedgeScheme,
                     accumulate_cost, calibrate_dcal, delta, relative_risk,
                     simulate_cost_table, theoretical_dcal)
from .mathkit import (BivariateGaussian, QuadratureError, QuadSpec,
                      exp_integral_e1, exp_integral_ei, integrate_1d,
                      integrate_gauss_2d, normal_cdf, normal_cdf_inv,
                      normal_pdf, rng_stream)
from .pricer import (BsPoint, MarketParams, OptionSpec, bs_delta, bs_price,
                     bs_vega, corrected_price, greek_ladder, implied_vol)
from .volsim import (FactorSample, GridSpec, KernelSpec, PathBatch, VolModel,
                     batch_to_csv, covariance_cz, kernel_eval, kernel_l2_norm,
                     kernel_overlap, load_batch, sample_factor_paths,
                     save_batch, simulate_market)

__version__ = "0.1.0"

"""Experiment orchestration: config ingestion and bit-stable CSV/JSON output.

Subcommands
-----------
simulate    write a path batch (binary) plus a manifest
surfaces    tabulate the call cost surfaces (long CSV) and the normalized
            maturity risk surface over (tau, moneyness)
hedge       Monte Carlo hedging costs and relative-risk curves per scheme
            and moneyness
calibrate   optimize the hedging parameter on fixed paths
predict     asymptotic cost statistics, merged with Monte Carlo results
            when a hedge run exists in the same output directory

Every command takes ``--config file.json`` (validated against the published
schema; unknown keys are rejected), optional ``--seed`` / ``--out``
overrides and ``--threads`` (default from ROUGHHEDGE_THREADS).  Outputs
embed the config hash and seed, and re-running a command with the same
config reproduces files byte for byte: the floating summation order is
fixed by the block layout, never by thread scheduling.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from importlib import resources

import numpy as np

from . import asymptotics, hedger, pricer, volsim
from .mathkit import QuadratureError

SCHEMA_VERSION = 1
LOCK_NAME = ".roughhedge.lock"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

_DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "schemes": [{"kind": "H"}, {"kind": "BS"}, {"kind": "HW"}],
    "moneyness_grid": [0.8, 0.9, 1.0, 1.1, 1.2],
    "theta_grid": [round(0.1 * k, 3) for k in range(0, 11)],
    "dminus_grid": [round(-2.0 + 0.25 * k, 3) for k in range(17)],
    "fig1_tau_grid": [round(1.5 + 0.25 * k, 3) for k in range(11)],
    "fig1_moneyness_grid": [0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
    "method": "moving_average",
    "block_paths": 512,
    "rebalance_stride": 1,
    "output_dir": "out",
    "map": "exp_ou",
}


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    text = resources.files("roughhedge").joinpath("config_schema.json").read_text()
    return json.loads(text)


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    import jsonschema
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config rejected by schema: {exc.message}") from exc

    cfg = dict(raw)
    for key in ("schemes", "moneyness_grid", "theta_grid", "dminus_grid",
                "fig1_tau_grid", "fig1_moneyness_grid", "method",
                "block_paths", "rebalance_stride", "output_dir",
                "schema_version"):
        cfg.setdefault(key, _DEFAULTS[key])
    cfg.setdefault("exercise_times", [cfg["option"]["maturity"]])
    cfg["model"].setdefault("map", _DEFAULTS["map"])
    cfg["grid"].setdefault("burn_in", 50.0)
    if abs(cfg["option"]["maturity"] - cfg["grid"]["maturity"]) > 1e-12:
        raise ConfigError("option.maturity must equal grid.maturity")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def build_model(cfg: dict) -> volsim.VolModel:
    k = cfg["model"]["kernel"]
    kernel = volsim.KernelSpec(kind=k["kind"], epsilon=k["epsilon"],
                               hurst=k.get("hurst"))
    m = cfg["model"]
    return volsim.VolModel(kernel=kernel, sigma_z=m["sigma_z"], omega=m["omega"],
                           sigma_bar=m["sigma_bar"], rho=m["rho"], map=m["map"])


def build_grid(cfg: dict) -> volsim.GridSpec:
    g = cfg["grid"]
    return volsim.GridSpec(maturity=g["maturity"], steps=g["steps"],
                           burn_in=g["burn_in"])


def build_option(cfg: dict) -> pricer.OptionSpec:
    o = cfg["option"]
    return pricer.OptionSpec(payoff=o["payoff"], strike=o["strike"],
                             maturity=o["maturity"])


def market_params(cfg: dict, need_effective: bool) -> pricer.MarketParams:
    """Effective (sigma_bar, D, Gamma) for the configured model.

    When every scheme carries an explicit hedging parameter, the commands
    only need sigma_bar, and the (possibly expensive) quadrature for the
    raw coefficients is skipped.
    """
    model = build_model(cfg)
    if not need_effective:
        return pricer.MarketParams(sigma_bar=model.sigma_bar, d_param=0.0,
                                   gamma_param=0.0)
    ep = asymptotics.effective_params(model)
    eps = model.kernel.epsilon
    return pricer.MarketParams.from_raw(sigma_bar=model.sigma_bar, epsilon=eps,
                                        rho=model.rho, d_bar=ep.d_bar,
                                        gamma_bar=ep.gamma_bar)


class _DirLock:
    """One command at a time per output directory."""

    def __init__(self, outdir: str):
        self.path = os.path.join(outdir, LOCK_NAME)
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.write(self.fd, str(os.getpid()).encode())
        except FileExistsError:
            raise ConfigError(
                f"output directory is locked by another run ({self.path}); "
                "remove the lock file if that run is dead")
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            os.unlink(self.path)
        return False


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _stamp(cfg: dict) -> dict:
    return {"schema_version": cfg["schema_version"],
            "config_hash": config_hash(cfg),
            "seed": cfg["seed"]}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict, outdir: str, threads: int) -> None:
    model = build_model(cfg)
    grid = build_grid(cfg)
    batch = volsim.simulate_market(model, grid, x0=1.0, n_paths=cfg["n_paths"],
                                   seed=cfg["seed"], method=cfg["method"],
                                   block_paths=cfg["block_paths"])
    path = os.path.join(outdir, "paths.rhpb")
    volsim.save_batch(batch, path)
    manifest = _stamp(cfg)
    manifest.update({
        "file": "paths.rhpb",
        "model_digest": batch.model_digest,
        "method": batch.method,
        "n_paths": batch.n_paths,
        "grid_points": grid.steps + 1,
    })
    _write_json(os.path.join(outdir, "manifest.json"), manifest)


def cmd_surfaces(cfg: dict, outdir: str, threads: int) -> None:
    surf = asymptotics.cost_surfaces(cfg["theta_grid"], cfg["dminus_grid"])
    surf.to_csv(os.path.join(outdir, "surfaces.csv"))

    # normalized maturity risk: St.Dev(Y_HW) * sigma / (K Gamma) = sqrt(v(1; d-))
    taus = np.asarray(cfg["fig1_tau_grid"], dtype=float)
    monies = np.asarray(cfg["fig1_moneyness_grid"], dtype=float)
    with open(os.path.join(outdir, "fig1.csv"), "w") as fh:
        fh.write("tau,moneyness,d_minus,normalized_stdev\n")
        for tau in taus:
            sq = math.sqrt(tau)
            for m in monies:
                d = math.log(m) / sq - 0.5 * sq
                val = math.sqrt(asymptotics.surface_v(1.0, d))
                fh.write(f"{tau:.12g},{m:.12g},{d:.17g},{val:.17g}\n")
    _write_json(os.path.join(outdir, "surfaces_manifest.json"), _stamp(cfg))


def _schemes_from_cfg(cfg: dict):
    return [hedger.HedgeScheme(kind=s["kind"], dcal=s.get("dcal"))
            for s in cfg["schemes"]]


def _need_effective(cfg: dict) -> bool:
    return any(s.get("dcal") is None for s in cfg["schemes"])


def _build_table(cfg: dict, threads: int) -> hedger.CostTable:
    model = build_model(cfg)
    grid = build_grid(cfg)
    opt = build_option(cfg)
    return hedger.simulate_cost_table(
        model, grid, opt, cfg["moneyness_grid"], cfg["exercise_times"],
        cfg["n_paths"], cfg["seed"], stride=cfg["rebalance_stride"],
        block_paths=cfg["block_paths"], method=cfg["method"], workers=threads)


def cmd_hedge(cfg: dict, outdir: str, threads: int) -> None:
    opt = build_option(cfg)
    mp = market_params(cfg, _need_effective(cfg))
    schemes = _schemes_from_cfg(cfg)
    table = _build_table(cfg, threads)

    rows = []
    for scheme in schemes:
        for m in table.moneyness:
            for kx in table.exercise_indices:
                out = table.outcome(scheme, mp, m, kx)
                rows.append({
                    "scheme": scheme.kind,
                    "moneyness": m,
                    "exercise_time": out.exercise_time,
                    "dcal": out.dcal,
                    "mean": out.mean,
                    "stdev": out.stdev,
                    "stderr": out.stderr,
                    "y_mean": out.y_mean,
                    "relative_risk": hedger.relative_risk(out, opt, mp,
                                                          m * opt.strike),
                })
    with open(os.path.join(outdir, "hedge_risk.csv"), "w") as fh:
        fh.write("scheme,moneyness,exercise_time,dcal,mean,stdev,stderr,"
                 "y_mean,relative_risk\n")
        for r in rows:
            fh.write(f"{r['scheme']},{r['moneyness']:.12g},"
                     f"{r['exercise_time']:.12g},{r['dcal']:.17g},"
                     f"{r['mean']:.17g},{r['stdev']:.17g},{r['stderr']:.17g},"
                     f"{r['y_mean']:.17g},{r['relative_risk']:.17g}\n")
    payload = _stamp(cfg)
    payload["results"] = rows
    _write_json(os.path.join(outdir, "hedge_summary.json"), payload)


def cmd_calibrate(cfg: dict, outdir: str, threads: int) -> None:
    opt = build_option(cfg)
    model = build_model(cfg)
    mp = market_params(cfg, True)
    cal_cfg = cfg.get("calibration", {"scheme_kind": "BS"})
    mode = cal_cfg.get("mode", "grid")
    theo = hedger.theoretical_dcal(mp, opt.strike)
    span = max(5.0 * abs(theo), 0.02)
    if mode == "grid":
        search = ("grid", cal_cfg.get("lo", -span), cal_cfg.get("hi", span),
                  cal_cfg.get("n", 801))
    else:
        search = ("golden", cal_cfg.get("lo", -span), cal_cfg.get("hi", span),
                  cal_cfg.get("tol", 1e-5))
    table = _build_table(cfg, threads)
    result = hedger.calibrate_dcal(cal_cfg["scheme_kind"], opt, mp, table,
                                   search=search,
                                   moneyness=cfg["moneyness_grid"])
    payload = _stamp(cfg)
    payload["calibration"] = result.summary()
    payload["calibration"]["theoretical_dcal"] = theo
    payload["calibration"]["objective_at_theoretical"] = float(
        hedger._objective_factory(table, cal_cfg["scheme_kind"],
                                  table.moneyness,
                                  table.exercise_indices[-1])(theo))
    _write_json(os.path.join(outdir, "calibration.json"), payload)


def cmd_predict(cfg: dict, outdir: str, threads: int) -> None:
    opt = build_option(cfg)
    mp = market_params(cfg, True)
    kinds = [s["kind"] for s in cfg["schemes"]]
    entries = []
    for kind in kinds:
        for m in cfg["moneyness_grid"]:
            for t_ex in cfg["exercise_times"]:
                mean, var = asymptotics.predicted_cost_stats(
                    kind, opt, mp, None, m * opt.strike, t_ex)
                entries.append({
                    "scheme": kind, "moneyness": m, "exercise_time": t_ex,
                    "predicted_y_mean": mean,
                    "predicted_variance": var,
                    "predicted_stdev": math.sqrt(max(var, 0.0)),
                })
    # side-by-side with Monte Carlo results when available
    mc_path = os.path.join(outdir, "hedge_summary.json")
    if os.path.exists(mc_path):
        with open(mc_path) as fh:
            mc = json.load(fh)
        index = {(r["scheme"], r["moneyness"], r["exercise_time"]): r
                 for r in mc.get("results", [])}
        for e in entries:
            key = (e["scheme"], e["moneyness"], e["exercise_time"])
            if key in index:
                e["mc_stdev"] = index[key]["stdev"]
                e["mc_y_mean"] = index[key]["y_mean"]
    payload = _stamp(cfg)
    payload["market_params"] = {
        "sigma_bar": mp.sigma_bar, "d_param": mp.d_param,
        "gamma_param": mp.gamma_param, "rho_bar": mp.rho_bar,
    }
    payload["predictions"] = entries
    _write_json(os.path.join(outdir, "predict.json"), payload)


_COMMANDS = {
    "simulate": cmd_simulate,
    "surfaces": cmd_surfaces,
    "hedge": cmd_hedge,
    "calibrate": cmd_calibrate,
    "predict": cmd_predict,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="roughhedge",
        description="Hedging-cost experiments under fast mean-reverting "
                    "stochastic volatility")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes (default ROUGHHEDGE_THREADS or 1)")
    parser.add_argument("--out", default=None, help="override output_dir")
    args = parser.parse_args(argv)

    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("ROUGHHEDGE_THREADS", "1"))

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = int(args.seed)
        outdir = args.out or cfg["output_dir"]
        os.makedirs(outdir, exist_ok=True)
        t0 = time.monotonic()
        with _DirLock(outdir):
            _COMMANDS[args.command](cfg, outdir, threads)
        print(f"{args.command}: wrote {outdir} "
              f"[{time.monotonic() - t0:.1f}s]", file=sys.stderr)
        return EXIT_OK
    except (ConfigError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (QuadratureError, ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

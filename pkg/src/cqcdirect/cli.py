"""Command-line front end: simulate, fit, delta-surface, experiment,
validate-model.

Every command takes an optional JSON config file (a flat key tree mirroring
its flags) with explicit flags winning; unknown config keys are rejected
before any computation. The effective, fully defaulted config is written
alongside each primary output as ``<output>.config.json``, so re-runs are
reproducible from the echo alone.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .dataset import Dataset, read_csv, split_half, write_csv
from .errors import ConfigError, DataError, NumericError
from .models import (
    AffineFeatures,
    LinearCqc,
    MlpCqc,
    RandomFourierFeatures,
    model_from_json,
    model_to_json,
)
from .nuisance import (
    NuisanceSet,
    KernelCcdf,
    PropensityModel,
    fit_ccdf,
    fit_propensity,
    select_bandwidth,
)
from .objective import PairedBatch, Y0Sampler, sample_y0_batch
from .optimizer import ScheduleSpec, default_radius, fit_adam, fit_sgd, validate
from .simlab import (
    DGP_REGISTRY,
    ExperimentPlan,
    RunDefaults,
    aggregate_rows,
    generate,
    make_dgp,
    results_rows,
    run_experiment,
)

JOBS_ENV = "CQC_JOBS"


def _write_rows(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)


def _echo_config(out_path, config: dict):
    with open(str(out_path) + ".config.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(path, known_keys):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    unknown = set(config) - set(known_keys)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return config


def _merged(args, parser_defaults, config, keys) -> dict:
    """Config file fills in only values the command line left at defaults."""
    merged = {}
    for key in keys:
        cli_value = getattr(args, key)
        if key in config and cli_value == parser_defaults.get(key):
            merged[key] = config[key]
        else:
            merged[key] = cli_value
    return merged


def _parse_range(text: str, what: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"{what} must look like lo:hi:count, got {text!r}")
    try:
        lo, hi, m = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"{what} must look like lo:hi:count, got {text!r}") from None
    if m < 1 or (m > 1 and not lo < hi):
        raise ConfigError(f"bad {what} range {text!r}")
    return lo, hi, m


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg: dict) -> int:
    if cfg["n"] < 1:
        raise ConfigError("--n must be at least 1")
    if cfg["dgp"] not in DGP_REGISTRY:
        raise ConfigError(f"unknown --dgp {cfg['dgp']!r}; registry: {', '.join(DGP_REGISTRY)}")
    dgp = make_dgp(cfg["dgp"], gamma=cfg["gamma"], d=cfg["d"], seed=cfg["seed"])
    data = generate(dgp, cfg["n"], seed=cfg["seed"])
    write_csv(data, cfg["out"])
    _echo_config(cfg["out"], cfg)
    print(f"wrote {cfg['n']} rows (d={data.d}) to {cfg['out']} with seed {cfg['seed']}")
    return 0


# ---------------------------------------------------------------------------
# fit


def _fit_nuisances_estimated(data_nuis: Dataset, bandwidth, bw_grid, clip) -> NuisanceSet:
    """Real-data nuisances: bandwidth by grid search on a held-out fifth
    scored against empirical indicators."""
    n1 = len(data_nuis)
    cut = max(1, (4 * n1) // 5)
    train, val = data_nuis.subset(np.arange(cut)), data_nuis.subset(np.arange(cut, n1))
    if len(val) == 0:
        train = val = data_nuis
    ccdfs = {}
    for arm in (0, 1):
        if bandwidth is not None:
            h = bandwidth
        else:
            grid = bw_grid or [s * np.sqrt(data_nuis.d) for s in (0.25, 0.5, 1.0, 2.0, 4.0)]
            use_train, use_val = train, val
            if not np.any(train.a == arm) or not np.any(val.a == arm):
                use_train = use_val = data_nuis
            h = select_bandwidth(use_train, arm, grid, validation=use_val)
        ccdfs[arm] = fit_ccdf(data_nuis, arm, h)
    return NuisanceSet(
        propensity=fit_propensity(data_nuis, clip=clip),
        ccdf0=ccdfs[0], ccdf1=ccdfs[1], provenance="fitted",
    )


def _build_model(cfg, d):
    if cfg["model"] == "lin":
        return LinearCqc(AffineFeatures(d))
    if cfg["model"] == "rff":
        features = RandomFourierFeatures(d, cfg["rff_features"], cfg["rff_lengthscale"],
                                         seed=cfg["seed"])
        return LinearCqc(features)
    if cfg["model"] == "mlp":
        return MlpCqc(d, tuple(cfg["mlp_hidden"]), cfg["mlp_activation"], seed=cfg["seed"])
    raise ConfigError(f"unknown model kind {cfg['model']!r}")


def _paired_holdout(data: Dataset, pool, sampler, seed):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0xE7A1)))
    y0s = sample_y0_batch(sampler, pool, data.x, rng, size=len(data))
    return PairedBatch.from_arrays(y0s, data.y, data.x, data.a)


def _run_fit(model0, nuisances, fit_data, cfg, sampler):
    lrs = cfg["lr_grid"] or [cfg["lr"]]
    chosen_lr, val_loss = lrs[0], float("nan")
    if cfg["optimizer"] == "sgd_theorem":
        radius = default_radius(model0, fit_data, sampler, seed=cfg["seed"])
        pi = nuisances.pi(fit_data.x)
        a_clip = float(max(getattr(nuisances.propensity, "clip", 0.01),
                           min(np.min(pi), np.min(1.0 - pi))))
        schedule = ScheduleSpec.theorem_convex(radius, a_clip, rho=None)
        result = fit_sgd(model0, nuisances, fit_data, sampler, schedule, radius,
                         grad_kind=cfg["grad"], seed=cfg["seed"])
        holdout = _paired_holdout(fit_data, fit_data.y[fit_data.a == 0], sampler, cfg["seed"])
        return result, cfg["lr"], validate(result.model, nuisances, holdout, trim=cfg["trim"])

    if len(lrs) > 1:
        # learning-rate selection on an 80-20 split of the fitting half
        cut = max(1, (4 * len(fit_data)) // 5)
        train = fit_data.subset(np.arange(cut))
        holdout_data = fit_data.subset(np.arange(cut, len(fit_data)))
        pool = train.y[train.a == 0]
        holdout = _paired_holdout(holdout_data, pool, sampler, cfg["seed"])
        best = np.inf
        for lr in lrs:
            result = fit_adam(model0, nuisances, train, sampler, lr=lr,
                              iters=cfg["iters"], grad_kind=cfg["grad"], seed=cfg["seed"])
            loss = validate(result.model, nuisances, holdout, trim=cfg["trim"])
            if loss < best:
                best, chosen_lr = loss, lr
        val_loss = best
    result = fit_adam(model0, nuisances, fit_data, sampler, lr=chosen_lr,
                      iters=cfg["iters"], grad_kind=cfg["grad"], seed=cfg["seed"],
                      track_every=max(1, cfg["iters"] // 20))
    if not np.isfinite(val_loss):
        holdout = _paired_holdout(fit_data, fit_data.y[fit_data.a == 0], sampler, cfg["seed"])
        val_loss = validate(result.model, nuisances, holdout, trim=cfg["trim"])
    return result, chosen_lr, val_loss


def cmd_fit(cfg: dict) -> int:
    if not os.path.exists(cfg["data"]):
        raise DataError(f"dataset not found: {cfg['data']}")
    data = read_csv(cfg["data"])
    split = split_half(data)
    data_nuis, fit_data = data.subset(split.nuisance_idx), data.subset(split.fit_idx)
    nuisances = _fit_nuisances_estimated(data_nuis, cfg["bandwidth"], cfg["bandwidth_grid"],
                                         cfg["clip"])
    model0 = _build_model(cfg, data.d)
    sampler = Y0Sampler(kind=cfg["y0_sampler"], seed=cfg["seed"])
    result, chosen_lr, val_loss = _run_fit(model0, nuisances, fit_data, cfg, sampler)
    if not np.all(np.isfinite(result.theta_last)):
        raise NumericError("fit diverged: non-finite parameters")

    with open(cfg["out"], "w", encoding="utf-8") as fh:
        fh.write(model_to_json(result.model))
    report = {
        "validation_loss": val_loss,
        "learning_rate": chosen_lr,
        "optimizer": cfg["optimizer"],
        "grad": cfg["grad"],
        "seed": cfg["seed"],
        "n": len(data),
        "d": data.d,
        "trajectory": result.trajectory_summary,
        "schedule": result.schedule,
    }
    report_path = cfg["report"] or cfg["out"] + ".report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    if cfg["nuisances_out"]:
        payload = {
            "propensity": json.loads(nuisances.propensity.to_json()),
            "ccdf0": json.loads(nuisances.ccdf0.to_json()),
            "ccdf1": json.loads(nuisances.ccdf1.to_json()),
        }
        with open(cfg["nuisances_out"], "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
    _echo_config(cfg["out"], cfg)
    print(f"fit written to {cfg['out']} (validation loss {val_loss:.6g}, lr {chosen_lr})")
    return 0


# ---------------------------------------------------------------------------
# delta-surface


def cmd_delta_surface(cfg: dict) -> int:
    if not os.path.exists(cfg["model"]):
        raise DataError(f"model file not found: {cfg['model']}")
    with open(cfg["model"], encoding="utf-8") as fh:
        model = model_from_json(fh.read())
    d = model.d
    axis = cfg["x_index"]
    if not 0 <= axis < d:
        raise ConfigError(f"--x-index {axis} out of range for d={d}")
    fixed = np.zeros(d) if cfg["x_fixed"] is None else np.asarray(cfg["x_fixed"], dtype=float)
    if len(fixed) != d:
        raise ConfigError(f"--x-fixed needs {d} values")
    y_lo, y_hi, y_m = _parse_range(cfg["y0"], "--y0")
    x_lo, x_hi, x_m = _parse_range(cfg["x_range"], "--x-range")
    y0s = np.linspace(y_lo, y_hi, y_m)
    xvals = np.linspace(x_lo, x_hi, x_m)

    rows = [["y0", "x_axis_value", "delta"]]
    for xv in xvals:
        x = fixed.copy()
        x[axis] = xv
        xs = np.repeat(x.reshape(1, -1), y_m, axis=0)
        deltas = np.atleast_1d(model.value(y0s, xs)) - y0s
        for y0, dv in zip(y0s, deltas):
            rows.append([f"{y0:.17g}", f"{xv:.17g}", f"{dv:.17g}"])
    _write_rows(cfg["out"], rows)

    if isinstance(model, LinearCqc) and isinstance(model.features, AffineFeatures):
        theta = model.theta
        table = [["covariate", "shift", "scale"],
                 ["intercept", f"{theta[-1]:.17g}", f"{theta[d]:.17g}"]]
        for j in range(d):
            table.append([f"x{j + 1}", f"{theta[d + 1 + j]:.17g}", f"{theta[j]:.17g}"])
        if cfg["params_out"]:
            _write_rows(cfg["params_out"], table)
        else:
            for row in table:
                print(",".join(row))
    _echo_config(cfg["out"], cfg)
    print(f"delta surface written to {cfg['out']} ({y_m * x_m} rows)")
    return 0


# ---------------------------------------------------------------------------
# experiment


_PLAN_KEYS = ("axis", "axis_values", "methods", "replications", "base_seed",
              "eval_points", "n", "gamma", "dgp", "d", "noise_targets",
              "noise_bias", "oracle_components", "truncated", "trunc_frac")
_DEFAULTS_KEYS = ("adam_lr", "adam_iters", "lr_grid", "lr_decay", "clip", "l2",
                  "bandwidth_grid_scale", "grid_m", "nn_hidden", "nn_activation",
                  "train_sampler")


def cmd_experiment(cfg: dict) -> int:
    plan_cfg = dict(cfg["plan"])
    unknown = set(plan_cfg) - set(_PLAN_KEYS) - {"defaults"}
    if unknown:
        raise ConfigError(f"unknown experiment keys: {', '.join(sorted(unknown))}")
    defaults_cfg = plan_cfg.pop("defaults", {})
    unknown = set(defaults_cfg) - set(_DEFAULTS_KEYS)
    if unknown:
        raise ConfigError(f"unknown defaults keys: {', '.join(sorted(unknown))}")
    for key in ("axis_values", "methods", "noise_targets", "oracle_components"):
        if key in plan_cfg and isinstance(plan_cfg[key], list):
            plan_cfg[key] = tuple(plan_cfg[key])
    for key in ("bandwidth_grid_scale", "nn_hidden", "lr_grid"):
        if key in defaults_cfg and isinstance(defaults_cfg[key], list):
            defaults_cfg[key] = tuple(defaults_cfg[key])
    try:
        plan = ExperimentPlan(**plan_cfg)
        defaults = RunDefaults(**defaults_cfg)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None

    total = len(plan.axis_values) * plan.replications

    def progress(axis_index, rep):
        done = axis_index * plan.replications + rep + 1
        print(f"  cell {done}/{total}: axis value {plan.axis_values[axis_index]} "
              f"replication {rep}", flush=True)

    records = run_experiment(plan, defaults, jobs=cfg["jobs"],
                             progress=progress if cfg["jobs"] <= 1 else None)
    _write_rows(cfg["out"], results_rows(records))
    _write_rows(cfg["aggregate_out"], aggregate_rows(records))
    _echo_config(cfg["out"], {**cfg, "plan": {**plan_cfg, "defaults": defaults_cfg}})
    failed_cells = [r for r in records if r.failures == r.replications and r.replications > 0]
    for rec in records:
        if rec.failures:
            print(f"warning: {rec.failures}/{rec.replications} replications failed for "
                  f"{rec.method} at {rec.axis}={rec.axis_value}", file=sys.stderr)
    print(f"results written to {cfg['out']} and {cfg['aggregate_out']}")
    if failed_cells:
        print(f"error: {len(failed_cells)} cells fully failed", file=sys.stderr)
        return 4
    return 0


# ---------------------------------------------------------------------------
# validate-model


def cmd_validate_model(cfg: dict) -> int:
    for key in ("model", "data"):
        if not os.path.exists(cfg[key]):
            raise DataError(f"{key} file not found: {cfg[key]}")
    with open(cfg["model"], encoding="utf-8") as fh:
        model = model_from_json(fh.read())
    data = read_csv(cfg["data"])
    if cfg["nuisances"]:
        with open(cfg["nuisances"], encoding="utf-8") as fh:
            payload = json.load(fh)
        nuisances = NuisanceSet(
            propensity=PropensityModel.from_json(json.dumps(payload["propensity"])),
            ccdf0=KernelCcdf.from_json(json.dumps(payload["ccdf0"])),
            ccdf1=KernelCcdf.from_json(json.dumps(payload["ccdf1"])),
            provenance="fitted",
        )
        holdout_data = data
    else:
        split = split_half(data)
        nuisances = _fit_nuisances_estimated(data.subset(split.nuisance_idx), None, None,
                                             cfg["clip"])
        holdout_data = data.subset(split.fit_idx)
    sampler = Y0Sampler(kind="unconditional", seed=cfg["seed"])
    holdout = _paired_holdout(holdout_data, holdout_data.y[holdout_data.a == 0],
                              sampler, cfg["seed"])
    loss = validate(model, nuisances, holdout, trim=cfg["trim"])
    print(f"trimmed validation loss: {loss:.17g}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_config_flag(p):
    p.add_argument("--config", default=None, help="JSON config file; flags win")


def build_parser():
    parser = argparse.ArgumentParser(prog="cqc",
                                     description="Direct comparator estimation toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = subparsers["simulate"] = sub.add_parser("simulate",
                                                help="generate a synthetic dataset CSV")
    _add_config_flag(p)
    p.add_argument("--dgp", default="sin_linear")
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = subparsers["fit"] = sub.add_parser(
        "fit", help="split, fit nuisances, fit the comparator")
    _add_config_flag(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=["lin", "rff", "mlp"], default="lin")
    p.add_argument("--optimizer", choices=["adam", "sgd_theorem"], default="adam")
    p.add_argument("--grad", choices=["dr", "ipw"], default="dr")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--lr-grid", dest="lr_grid", default=None,
                   type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--trim", type=float, default=0.05)
    p.add_argument("--clip", type=float, default=0.01)
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--bandwidth-grid", dest="bandwidth_grid", default=None,
                   type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--y0-sampler", dest="y0_sampler",
                   choices=["unconditional", "uniform"], default="unconditional")
    p.add_argument("--rff-features", dest="rff_features", type=int, default=200)
    p.add_argument("--rff-lengthscale", dest="rff_lengthscale", type=float, default=1.0)
    p.add_argument("--mlp-hidden", dest="mlp_hidden", default=[20, 20],
                   type=lambda s: [int(v) for v in s.split(",")])
    p.add_argument("--mlp-activation", dest="mlp_activation",
                   choices=["relu", "tanh"], default="relu")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--nuisances-out", dest="nuisances_out", default=None)

    p = subparsers["delta-surface"] = sub.add_parser(
        "delta-surface", help="tabulate predicted uplift on a grid")
    _add_config_flag(p)
    p.add_argument("--model", required=True)
    p.add_argument("--y0", required=True, help="lo:hi:count")
    p.add_argument("--x-index", dest="x_index", type=int, default=0)
    p.add_argument("--x-range", dest="x_range", required=True, help="lo:hi:count")
    p.add_argument("--x-fixed", dest="x_fixed", default=None,
                   type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--out", required=True)
    p.add_argument("--params-out", dest="params_out", default=None)

    p = subparsers["experiment"] = sub.add_parser(
        "experiment", help="run a replication sweep")
    _add_config_flag(p)
    p.add_argument("--out", required=True)
    p.add_argument("--aggregate-out", dest="aggregate_out", required=True)
    p.add_argument("--jobs", type=int, default=int(os.environ.get(JOBS_ENV, "1")))

    p = subparsers["validate-model"] = sub.add_parser(
        "validate-model", help="trimmed quadrature loss of a saved model")
    _add_config_flag(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--nuisances", default=None)
    p.add_argument("--trim", type=float, default=0.05)
    p.add_argument("--clip", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    return parser, subparsers


_COMMAND_KEYS = {
    "simulate": ("dgp", "gamma", "n", "d", "seed", "out"),
    "fit": ("data", "model", "optimizer", "grad", "lr", "lr_grid", "iters", "trim",
            "clip", "bandwidth", "bandwidth_grid", "y0_sampler", "rff_features",
            "rff_lengthscale", "mlp_hidden", "mlp_activation", "seed", "out",
            "report", "nuisances_out"),
    "delta-surface": ("model", "y0", "x_index", "x_range", "x_fixed", "out", "params_out"),
    "experiment": ("out", "aggregate_out", "jobs"),
    "validate-model": ("model", "data", "nuisances", "trim", "clip", "seed"),
}

_HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "delta-surface": cmd_delta_surface,
    "experiment": cmd_experiment,
    "validate-model": cmd_validate_model,
}


def main(argv=None) -> int:
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    keys = _COMMAND_KEYS[command]
    try:
        if command == "experiment":
            config = _load_config(args.config, ("plan", "jobs"))
            if "plan" not in config:
                raise ConfigError("experiment needs a config file with a 'plan' object")
            jobs = args.jobs
            if jobs == subparsers[command].get_default("jobs") and "jobs" in config:
                jobs = int(config["jobs"])
            cfg = {"plan": config["plan"], "jobs": jobs,
                   "out": args.out, "aggregate_out": args.aggregate_out}
        else:
            config = _load_config(args.config, keys)
            defaults = {key: subparsers[command].get_default(key) for key in keys}
            cfg = _merged(args, defaults, config, keys)
        return _HANDLERS[command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

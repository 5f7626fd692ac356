"""Gaussian generating processes with closed-form oracles, plus the
replication-managed experiment harness.

Registered processes (all with X ~ N(0, I_d) and Gaussian arms):

  sin_linear  d-dim (default 10): mu0 = sin(pi v.x), mu1 = mu0 + gamma v.x,
              unit variances, assignment logit v.x, ||v|| = sqrt(d).
              True comparator: y0 + gamma v.x.
  cos_linear  1-dim: mu0 = cos(6x), mu1 = 2 cos(6x) + gamma x, sigma1 = 2.
              True comparator: 2 y0 + gamma x.
  doubling    1-dim: mu0 = sin(10x), mu1 = 2 sin(10x), sigma1 = 2.
              True comparator: 2 y0 (x-free despite oscillating marginals).
  affine      custom affine means for fixtures.

Because both arms are Gaussian, the true comparator is the quantile-
preserving affine transport mu1(x) + (sigma1/sigma0) (y0 - mu0(x)).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .baselines import default_grid_spec, invert_cqc_batch, s_learner_cqc_batch
from .dataset import Dataset, split_half
from .errors import ConfigError
from .models import AffineFeatures, LinearCqc, MlpCqc
from .nuisance import (
    LogitNoise,
    NuisanceSet,
    fit_ccdf,
    fit_propensity,
    oracle_nuisances,
    perturb,
    select_bandwidth,
)
from .objective import Y0Sampler, sample_y0_batch, simpson_ccdf_integral
from .optimizer import fit_adam

__all__ = [
    "DgpSpec",
    "OracleCqc",
    "ExperimentPlan",
    "MetricsRecord",
    "RunDefaults",
    "make_dgp",
    "DGP_REGISTRY",
    "generate",
    "oracle_cqc_eval",
    "mae",
    "population_excess_loss",
    "run_experiment",
    "results_rows",
    "aggregate_rows",
]

DGP_REGISTRY = ("sin_linear", "cos_linear", "doubling", "affine")

METHODS = ("dr_lin", "dr_nn", "ipw", "invert_dr", "s_learner")
PROVENANCES = ("oracle", "estimated")
AXES = ("slope", "nuisance_noise", "sample_size", "lr_sweep", "y0_sampler")


@dataclass(frozen=True)
class DgpSpec:
    """A Gaussian-arm generating process; picklable and hashable by value."""

    kind: str
    d: int
    gamma: float = 0.0
    v: tuple = ()
    sigma0: float = 1.0
    sigma1: float = 1.0
    affine0: tuple = ()
    affine1: tuple = ()
    propensity_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in DGP_REGISTRY:
            raise ConfigError(f"unknown generating process {self.kind!r}; "
                              f"registry: {', '.join(DGP_REGISTRY)}")
        if self.sigma0 <= 0 or self.sigma1 <= 0:
            raise ConfigError("arm standard deviations must be positive")
        if self.v:
            norm = math.sqrt(sum(c * c for c in self.v))
            if abs(norm - math.sqrt(self.d)) > 1e-9:
                raise ConfigError("direction vector must have norm sqrt(d)")

    @property
    def v_arr(self) -> np.ndarray:
        return np.asarray(self.v, dtype=float)

    def mu0(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "sin_linear":
            return np.sin(np.pi * (x @ self.v_arr))
        if self.kind == "cos_linear":
            return np.cos(6.0 * x[:, 0])
        if self.kind == "doubling":
            return np.sin(10.0 * x[:, 0])
        a0 = np.asarray(self.affine0, dtype=float)
        return a0[0] + x @ a0[1:]

    def mu1(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "sin_linear":
            proj = x @ self.v_arr
            return np.sin(np.pi * proj) + self.gamma * proj
        if self.kind == "cos_linear":
            return 2.0 * np.cos(6.0 * x[:, 0]) + self.gamma * x[:, 0]
        if self.kind == "doubling":
            return 2.0 * np.sin(10.0 * x[:, 0])
        a1 = np.asarray(self.affine1, dtype=float)
        return a1[0] + x @ a1[1:]

    def propensity_logit(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.propensity_scale * (x @ self.v_arr)


def make_dgp(kind: str, gamma: float = 0.0, d: int | None = None, seed: int = 0,
             v=None, sigma0: float | None = None, sigma1: float | None = None,
             affine0=(), affine1=(), propensity_scale: float = 1.0) -> DgpSpec:
    """Build a registered process, drawing the direction v from the seed.

    v is sqrt(d) times a uniformly random unit vector unless supplied.
    """
    if kind in ("cos_linear", "doubling"):
        d = 1 if d is None else d
        if d != 1:
            raise ConfigError(f"{kind} is one-dimensional")
        defaults = (1.0, 2.0)
    elif kind == "sin_linear":
        d = 10 if d is None else d
        defaults = (1.0, 1.0)
    elif kind == "affine":
        if d is None:
            raise ConfigError("affine process needs an explicit dimension")
        defaults = (1.0, 1.0)
    else:
        raise ConfigError(f"unknown generating process {kind!r}; "
                          f"registry: {', '.join(DGP_REGISTRY)}")
    if v is None:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x5EED)))
        u = rng.normal(size=d)
        v = tuple(math.sqrt(d) * u / np.linalg.norm(u))
    return DgpSpec(kind=kind, d=d, gamma=gamma, v=tuple(v),
                   sigma0=defaults[0] if sigma0 is None else sigma0,
                   sigma1=defaults[1] if sigma1 is None else sigma1,
                   affine0=tuple(affine0), affine1=tuple(affine1),
                   propensity_scale=propensity_scale)


def generate(dgp: DgpSpec, n: int, seed: int = 0) -> Dataset:
    """Draw n iid triples (y, x, a) from the process; deterministic per seed."""
    if n < 1:
        raise ConfigError("need at least one sample")
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, dgp.d))
    a = (rng.uniform(size=n) < expit(dgp.propensity_logit(x))).astype(np.int64)
    mu = np.where(a == 1, dgp.mu1(x), dgp.mu0(x))
    sigma = np.where(a == 1, dgp.sigma1, dgp.sigma0)
    y = mu + sigma * rng.normal(size=n)
    return Dataset(y, x, a)


@dataclass(frozen=True)
class OracleCqc:
    """Closed-form true comparator of a Gaussian-arm process."""

    dgp: DgpSpec

    def evaluate(self, y0, x) -> np.ndarray:
        scalar = np.ndim(y0) == 0 and np.asarray(x).ndim <= 1
        y0_arr = np.atleast_1d(np.asarray(y0, dtype=float))
        x_mat = np.atleast_2d(np.asarray(x, dtype=float))
        if len(x_mat) == 1 and len(y0_arr) > 1:
            x_mat = np.repeat(x_mat, len(y0_arr), axis=0)
        ratio = self.dgp.sigma1 / self.dgp.sigma0
        out = self.dgp.mu1(x_mat) + ratio * (y0_arr - self.dgp.mu0(x_mat))
        return float(out[0]) if scalar else out


def oracle_cqc_eval(oracle: OracleCqc, y0, x):
    """True comparator value mu1(x) + (sigma1/sigma0) (y0 - mu0(x))."""
    return oracle.evaluate(y0, x)


def eval_points(dgp: DgpSpec, num: int, sampler: Y0Sampler, untreated_pool, seed):
    """Fresh evaluation pairs: x ~ N(0, I_d), y0 from the sampler."""
    rng = np.random.default_rng(seed)
    xs = rng.normal(size=(num, dgp.d))
    y0s = sample_y0_batch(sampler, untreated_pool, xs, rng, size=num)
    return y0s, xs


def mae(predict, oracle: OracleCqc, num_points: int, sampler: Y0Sampler,
        untreated_pool, seed: int = 0) -> float:
    """Mean absolute error of a predictor against the true comparator.

    ``predict`` maps (y0s, xs) to comparator values.
    """
    if num_points < 1:
        raise ConfigError("need at least one evaluation point")
    y0s, xs = eval_points(oracle.dgp, num_points, sampler, untreated_pool, seed)
    return float(np.mean(np.abs(np.asarray(predict(y0s, xs)) - oracle.evaluate(y0s, xs))))


def population_excess_loss(predict, dgp: DgpSpec, y0s, xs, nodes: int = 129) -> float:
    """Monte-Carlo population loss of a predictor under exact nuisances.

    Per evaluation point: integral from the true comparator to the predicted
    value of F1(t|x) - F0(y0|x); the true comparator has loss exactly zero.
    """
    oracle = OracleCqc(dgp)
    nuis = oracle_nuisances(dgp)
    c = np.asarray(predict(y0s, xs), dtype=float)
    tau = oracle.evaluate(y0s, xs)
    f0 = np.atleast_1d(nuis.ccdf0.evaluate(y0s, xs))
    integral = simpson_ccdf_integral(nuis.ccdf1, tau, c, np.asarray(xs, dtype=float), nodes)
    return float(np.mean(integral - (c - tau) * f0))


# ---------------------------------------------------------------------------
# experiment harness


@dataclass(frozen=True)
class RunDefaults:
    """Shared fitting configuration for experiment runs.

    When lr_grid has more than one entry, each gradient-based fit selects
    its learning rate on an 80-20 split of the fitting half by trimmed
    validation loss, then refits on the whole half (guards against the
    occasional divergent run under extreme inverse-propensity weights).
    """

    adam_lr: float = 0.1
    adam_iters: int = 1000
    lr_grid: tuple = (0.1, 0.03, 0.01)
    lr_decay: float = 0.0
    clip: float = 0.01
    l2: float | None = None
    bandwidth_grid_scale: tuple = (0.25, 0.5, 1.0, 2.0, 4.0)
    grid_m: int = 1001
    nn_hidden: tuple = (20, 20)
    nn_activation: str = "relu"
    train_sampler: str = "unconditional"


@dataclass(frozen=True)
class ExperimentPlan:
    """One sweep: an axis, the methods to compare, and replication counts."""

    axis: str
    axis_values: tuple
    methods: tuple
    replications: int
    base_seed: int = 0
    eval_points: int = 2000
    n: int = 500
    gamma: float = 2.0
    dgp: str = "sin_linear"
    d: int | None = None
    noise_targets: tuple = ("propensity", "ccdf0", "ccdf1")
    noise_bias: float = 1.0
    # components of estimated-provenance methods pinned at their exact values
    # (single-nuisance designs: fix one, estimate the other)
    oracle_components: tuple = ()
    truncated: bool = False
    trunc_frac: float = 0.025

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"unknown axis {self.axis!r}; known: {', '.join(AXES)}")
        if self.replications < 1:
            raise ConfigError("need at least one replication")
        if not self.axis_values:
            raise ConfigError("axis needs at least one value")
        for tag in self.methods:
            _parse_method(tag)


@dataclass
class MetricsRecord:
    """Aggregated per-cell results with a 95% confidence half-width."""

    axis: str
    axis_value: object
    method: str
    maes: list
    seconds: list
    mean: float
    ci_halfwidth: float
    failures: int
    replications: int
    propensity_provenance: str
    ccdf_provenance: str
    phase_seconds: dict = field(default_factory=dict)


def _parse_method(tag: str):
    name, _, provenance = tag.partition(":")
    if name == "invert":
        name = "invert_dr"
    provenance = provenance or "oracle"
    if name not in METHODS:
        raise ConfigError(f"unknown method {name!r}; known: {', '.join(METHODS)}")
    if provenance not in PROVENANCES:
        raise ConfigError(f"unknown provenance {provenance!r}; known: oracle, estimated")
    return name, provenance


def _estimated_nuisances(data_nuis: Dataset, dgp: DgpSpec, defaults: RunDefaults) -> NuisanceSet:
    """Fit propensity and per-arm kernel CCDFs, grid-searching bandwidths.

    Bandwidths are scored on a held-out fifth of the nuisance split against
    the exact conditional CDF (available here in simulation).
    """
    n1 = len(data_nuis)
    cut = max(1, (4 * n1) // 5)
    train = data_nuis.subset(np.arange(cut))
    val = data_nuis.subset(np.arange(cut, n1)) if cut < n1 else data_nuis
    grid = [s * math.sqrt(dgp.d) for s in defaults.bandwidth_grid_scale]
    oracle = oracle_nuisances(dgp, clip=defaults.clip)
    bandwidths = {}
    for arm in (0, 1):
        if not np.any(train.a == arm) or not np.any(val.a == arm):
            train, val = data_nuis, data_nuis
        bandwidths[arm] = select_bandwidth(train, arm, grid, validation=val,
                                           oracle=oracle.ccdf(arm))
    return NuisanceSet(
        propensity=fit_propensity(data_nuis, l2=defaults.l2, clip=defaults.clip),
        ccdf0=fit_ccdf(data_nuis, 0, bandwidths[0]),
        ccdf1=fit_ccdf(data_nuis, 1, bandwidths[1]),
        provenance="fitted",
    )


def _provenance_of(nuis_obj) -> str:
    name = type(nuis_obj).__name__
    if name.startswith("Perturbed"):
        return "perturbed"
    if name in ("GaussianCcdf", "OraclePropensity"):
        return "oracle"
    return "fitted"


def _fit_and_predict(name, nuisances, fit_data, dgp, defaults, lr, sampler, seed):
    """Return a (y0s, xs) -> values predictor for one method tag."""
    if name in ("dr_lin", "dr_nn", "ipw"):
        if name == "dr_nn":
            model0 = MlpCqc(dgp.d, defaults.nn_hidden, defaults.nn_activation, seed=seed)
        else:
            model0 = LinearCqc(AffineFeatures(dgp.d))
        grad_kind = "ipw" if name == "ipw" else "dr"
        lr_grid = (lr,) if lr is not None else defaults.lr_grid
        model = _fit_validated(model0, nuisances, fit_data, sampler, lr_grid,
                               defaults, grad_kind, seed)
        return lambda y0s, xs: model.value(y0s, xs)
    grid_spec = default_grid_spec(fit_data.y, defaults.grid_m)
    if name == "invert_dr":
        return lambda y0s, xs: invert_cqc_batch(nuisances, y0s, xs, grid_spec)
    if name == "s_learner":
        return lambda y0s, xs: s_learner_cqc_batch(nuisances.ccdf0, nuisances.ccdf1,
                                                   y0s, xs, grid_spec)
    raise ConfigError(f"unknown method {name!r}")


def _fit_validated(model0, nuisances, fit_data, sampler, lr_grid, defaults,
                   grad_kind, seed):
    """Fit one candidate per learning rate on 80% of the fitting half and keep
    the model with the best trimmed validation loss on the held-out 20%.

    With a single-entry grid the fit uses the whole half and no holdout.
    """
    from .objective import PairedBatch
    from .optimizer import validate

    if len(lr_grid) == 1:
        return fit_adam(model0, nuisances, fit_data, sampler, lr=lr_grid[0],
                        iters=defaults.adam_iters, grad_kind=grad_kind,
                        seed=seed, lr_decay=defaults.lr_decay).model

    cut = max(1, (4 * len(fit_data)) // 5)
    train = fit_data.subset(np.arange(cut))
    holdout = fit_data.subset(np.arange(cut, len(fit_data)))
    if len(holdout) == 0:
        train = holdout = fit_data
    pool = train.y[train.a == 0]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x10)))
    y0s = sample_y0_batch(sampler, pool, holdout.x, rng, size=len(holdout))
    paired = PairedBatch.from_arrays(y0s, holdout.y, holdout.x, holdout.a)
    best_model, best = None, np.inf
    for lr in lr_grid:
        result = fit_adam(model0, nuisances, train, sampler, lr=lr,
                          iters=defaults.adam_iters, grad_kind=grad_kind,
                          seed=seed, lr_decay=defaults.lr_decay)
        if not np.all(np.isfinite(result.theta_last)):
            continue
        loss = validate(result.model, nuisances, paired)
        if np.isfinite(loss) and loss < best:
            best_model, best = result.model, loss
    if best_model is None:
        best_model = fit_adam(model0, nuisances, train, sampler, lr=min(lr_grid),
                              iters=defaults.adam_iters, grad_kind=grad_kind,
                              seed=seed, lr_decay=defaults.lr_decay).model
    return best_model


def _axis_settings(plan: ExperimentPlan, axis_value, defaults: RunDefaults):
    n, gamma, lr = plan.n, plan.gamma, None
    noise_level = 0.0
    sampler_kind = defaults.train_sampler
    if plan.axis == "slope":
        gamma = float(axis_value)
    elif plan.axis == "sample_size":
        n = int(axis_value)
    elif plan.axis == "nuisance_noise":
        noise_level = float(axis_value)
    elif plan.axis == "lr_sweep":
        lr = float(axis_value)
    elif plan.axis == "y0_sampler":
        sampler_kind = str(axis_value)
    return n, gamma, lr, noise_level, sampler_kind


def _run_cell(args):
    """One (axis value, replication) task; returns per-method row dicts."""
    plan, defaults, axis_index, rep = args
    axis_value = plan.axis_values[axis_index]
    n, gamma, lr, noise_level, sampler_kind = _axis_settings(plan, axis_value, defaults)

    # common random numbers: replication seeds are shared across axis values,
    # so sweep comparisons are paired
    entropy = (plan.base_seed, rep)
    seeds = np.random.SeedSequence(entropy=entropy).spawn(5)
    dgp = make_dgp(plan.dgp, gamma=gamma, d=plan.d,
                   seed=int(seeds[0].generate_state(1)[0]))
    t0 = time.perf_counter()
    data = generate(dgp, n, seed=seeds[1])
    split = split_half(data)
    data_nuis = data.subset(split.nuisance_idx)
    fit_data = data.subset(split.fit_idx)
    oracle = OracleCqc(dgp)

    needed = {_parse_method(tag)[1] for tag in plan.methods}
    nuisance_sets, nuisance_errors = {}, {}
    if "oracle" in needed or plan.oracle_components:
        nuisance_sets["oracle"] = oracle_nuisances(dgp, clip=defaults.clip)
    if "estimated" in needed:
        try:
            est = _estimated_nuisances(data_nuis, dgp, defaults)
            if plan.oracle_components:
                orc = nuisance_sets["oracle"]
                est = NuisanceSet(
                    propensity=orc.propensity if "propensity" in plan.oracle_components
                    else est.propensity,
                    ccdf0=orc.ccdf0 if "ccdf0" in plan.oracle_components else est.ccdf0,
                    ccdf1=orc.ccdf1 if "ccdf1" in plan.oracle_components else est.ccdf1,
                    provenance="mixed",
                )
            nuisance_sets["estimated"] = est
        except Exception as exc:  # recorded per cell, not fatal
            nuisance_errors["estimated"] = f"{type(exc).__name__}: {exc}"
    nuisance_seconds = time.perf_counter() - t0

    if noise_level > 0.0:
        noise = LogitNoise(level=noise_level, bias=plan.noise_bias,
                           seed=int(seeds[2].generate_state(1)[0]),
                           targets=frozenset(plan.noise_targets))
        nuisance_sets = {k: perturb(v, noise) for k, v in nuisance_sets.items()}

    if sampler_kind == "conditional":
        sampler = Y0Sampler(kind="conditional", dgp=dgp)
    else:
        sampler = Y0Sampler(kind=sampler_kind)
    eval_sampler = Y0Sampler(kind="unconditional")
    pool = data.y[data.a == 0]
    y0_eval, x_eval = eval_points(dgp, plan.eval_points, eval_sampler, pool,
                                  seed=seeds[3])
    truth = oracle.evaluate(y0_eval, x_eval)

    rows = []
    for m_idx, tag in enumerate(plan.methods):
        name, provenance = _parse_method(tag)
        fit_seed = int(np.random.SeedSequence(entropy=entropy + (m_idx,)).generate_state(1)[0])
        row = {
            "axis": plan.axis, "axis_value": axis_value, "method": tag,
            "replication": rep, "mae": float("nan"), "seconds": float("nan"),
            "propensity_provenance": "", "ccdf_provenance": "",
            "nuisance_seconds": nuisance_seconds,
            "failed": False, "error": "",
        }
        if provenance in nuisance_errors:
            row.update(failed=True, error=nuisance_errors[provenance])
            rows.append(row)
            continue
        nuis = nuisance_sets[provenance]
        row.update(propensity_provenance=_provenance_of(nuis.propensity),
                   ccdf_provenance=_provenance_of(nuis.ccdf1))
        try:
            t1 = time.perf_counter()
            predict = _fit_and_predict(name, nuis, fit_data, dgp, defaults, lr,
                                       sampler, fit_seed)
            t2 = time.perf_counter()
            err = float(np.mean(np.abs(np.asarray(predict(y0_eval, x_eval)) - truth)))
            t3 = time.perf_counter()
            row.update(mae=err, seconds=t3 - t1, fit_seconds=t2 - t1,
                       eval_seconds=t3 - t2)
        except Exception as exc:  # recorded per cell, not fatal
            row.update(failed=True, error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows


def run_experiment(plan: ExperimentPlan, defaults: RunDefaults = RunDefaults(),
                   jobs: int = 1, progress=None) -> list[MetricsRecord]:
    """Run every (axis value x method x replication) cell and aggregate.

    Replication failures are recorded per cell rather than raised. Results
    are deterministic for a fixed plan and base seed, regardless of ``jobs``.
    """
    tasks = [(plan, defaults, ai, rep)
             for ai in range(len(plan.axis_values))
             for rep in range(plan.replications)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            all_rows = list(pool.map(_run_cell, tasks, chunksize=1))
    else:
        all_rows = []
        for task in tasks:
            all_rows.append(_run_cell(task))
            if progress is not None:
                progress(task[2], task[3])
    flat = [row for rows in all_rows for row in rows]

    records = []
    for ai, axis_value in enumerate(plan.axis_values):
        for tag in plan.methods:
            cell = [r for r in flat if r["axis_value"] == axis_value and r["method"] == tag]
            cell.sort(key=lambda r: r["replication"])
            ok = [r for r in cell if not r["failed"]]
            maes = [r["mae"] for r in ok]
            kept = sorted(maes)
            if plan.truncated and len(kept) >= 4:
                k = int(plan.trunc_frac * len(kept))
                kept = kept[k : len(kept) - k] if k > 0 else kept
            mean = float(np.mean(kept)) if kept else float("nan")
            if len(kept) > 1:
                ci = 1.96 * float(np.std(kept, ddof=1)) / math.sqrt(len(kept))
            else:
                ci = float("nan")
            records.append(MetricsRecord(
                axis=plan.axis, axis_value=axis_value, method=tag,
                maes=[r["mae"] for r in cell], seconds=[r["seconds"] for r in cell],
                mean=mean, ci_halfwidth=ci,
                failures=len(cell) - len(ok), replications=len(cell),
                propensity_provenance=cell[0]["propensity_provenance"] if cell else "",
                ccdf_provenance=cell[0]["ccdf_provenance"] if cell else "",
                phase_seconds={
                    "nuisance": float(np.mean([r["nuisance_seconds"] for r in cell])) if cell else float("nan"),
                    "fit": float(np.mean([r.get("fit_seconds", float("nan")) for r in ok])) if ok else float("nan"),
                    "eval": float(np.mean([r.get("eval_seconds", float("nan")) for r in ok])) if ok else float("nan"),
                },
            ))
    return records


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def results_rows(records: list[MetricsRecord]) -> list[list[str]]:
    """Per-replication rows: axis,axis_value,method,replication,mae,seconds,..."""
    header = ["axis", "axis_value", "method", "replication", "mae", "seconds",
              "propensity_provenance", "ccdf_provenance"]
    rows = [header]
    for rec in records:
        for rep, (err, sec) in enumerate(zip(rec.maes, rec.seconds)):
            rows.append([rec.axis, _fmt(rec.axis_value), rec.method, str(rep),
                         _fmt(err), _fmt(sec), rec.propensity_provenance,
                         rec.ccdf_provenance])
    return rows


def aggregate_rows(records: list[MetricsRecord]) -> list[list[str]]:
    header = ["axis", "axis_value", "method", "mean", "ci", "seconds",
              "replications", "failures"]
    rows = [header]
    for rec in records:
        sec = float(np.nanmean(rec.seconds)) if rec.seconds else float("nan")
        rows.append([rec.axis, _fmt(rec.axis_value), rec.method, _fmt(rec.mean),
                     _fmt(rec.ci_halfwidth), _fmt(sec), str(rec.replications),
                     str(rec.failures)])
    return rows

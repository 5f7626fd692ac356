"""Nuisance parameters: propensity and per-arm conditional CDFs.

Three flavours share one evaluation interface: fitted (penalised logistic
regression, Nadaraya-Watson kernel CCDF), oracle (closed-form Gaussian),
and perturbed (logit-space noise wrapped around either). Conditional CDF
evaluations are always nondecreasing in y with values in [0, 1];
propensity evaluations are clipped into [clip, 1 - clip].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr

from .dataset import Dataset
from .errors import ConfigError, ConvergenceError, DataError

__all__ = [
    "PropensityModel",
    "OraclePropensity",
    "PerturbedPropensity",
    "KernelCcdf",
    "GaussianCcdf",
    "PerturbedCcdf",
    "NuisanceSet",
    "LogitNoise",
    "fit_propensity",
    "fit_ccdf",
    "select_bandwidth",
    "perturb",
    "oracle_nuisances",
]

DEFAULT_CLIP = 0.01
_GRAD_TOL = 1e-8
_MAX_NEWTON_ITERS = 200


def _as_x_matrix(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1) if len(x) == d and d != 1 else x.reshape(-1, 1)
    if x.shape[1] != d:
        raise DataError(f"covariate dimension mismatch: expected {d}, got {x.shape[1]}")
    return x


# ---------------------------------------------------------------------------
# propensity


@dataclass
class PropensityModel:
    """Fitted logistic propensity; evaluations clipped into [clip, 1 - clip]."""

    beta: np.ndarray
    beta0: float
    clip: float = DEFAULT_CLIP

    def evaluate(self, x) -> np.ndarray:
        x = _as_x_matrix(x, len(self.beta))
        p = expit(x @ self.beta + self.beta0)
        return np.clip(p, self.clip, 1.0 - self.clip)

    def to_json(self) -> str:
        return json.dumps({"beta": self.beta.tolist(), "beta0": self.beta0, "clip": self.clip})

    @classmethod
    def from_json(cls, text: str) -> "PropensityModel":
        obj = json.loads(text)
        return cls(np.array(obj["beta"]), obj["beta0"], obj["clip"])


class OraclePropensity:
    """Exact propensity from a known assignment logit, clipped like a fit."""

    def __init__(self, logit_fn, d: int, clip: float = DEFAULT_CLIP):
        self.logit_fn = logit_fn
        self.d = d
        self.clip = clip

    def evaluate(self, x) -> np.ndarray:
        x = _as_x_matrix(x, self.d)
        return np.clip(expit(self.logit_fn(x)), self.clip, 1.0 - self.clip)


def _penalised_objective(y01, design, coef, l2):
    z = design @ coef
    # log(1 + exp(-s*z)) computed stably
    s = 2.0 * y01 - 1.0
    nll = np.sum(np.logaddexp(0.0, -s * z))
    return nll + 0.5 * l2 * float(coef[:-1] @ coef[:-1])


def fit_propensity(data: Dataset, l2: float | None = None, clip: float = DEFAULT_CLIP,
                   tol: float = _GRAD_TOL, max_iters: int = _MAX_NEWTON_ITERS) -> PropensityModel:
    """L2-penalised logistic regression of a on x by Newton steps with halving.

    The intercept is unpenalised; l2 defaults to 1/n so the penalty vanishes
    asymptotically while still preventing separation blow-up. Converges when
    the penalised-objective gradient norm drops below ``tol``.
    """
    if len(np.unique(data.a)) < 2:
        raise DataError("degenerate treatment assignment")
    n, d = len(data), data.d
    if l2 is None:
        l2 = 1.0 / n
    design = np.concatenate([data.x, np.ones((n, 1))], axis=1)
    a = data.a.astype(float)
    coef = np.zeros(d + 1)
    penalty = np.concatenate([np.full(d, l2), [0.0]])
    obj = _penalised_objective(a, design, coef, l2)

    for _ in range(max_iters):
        p = expit(design @ coef)
        grad = design.T @ (p - a) + penalty * coef
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= tol:
            return PropensityModel(beta=coef[:d].copy(), beta0=float(coef[d]), clip=clip)
        w = np.maximum(p * (1.0 - p), 1e-10)
        hess = design.T @ (design * w[:, None]) + np.diag(penalty)
        step = np.linalg.solve(hess, grad)
        # step halving keeps the objective nonincreasing (up to float noise,
        # which near the optimum would otherwise stall full Newton steps)
        slack = 1e-12 * (1.0 + abs(obj))
        scale = 1.0
        for _ in range(40):
            new_coef = coef - scale * step
            new_obj = _penalised_objective(a, design, new_coef, l2)
            if new_obj <= obj + slack:
                break
            scale *= 0.5
        coef, obj = new_coef, min(new_obj, obj)

    p = expit(design @ coef)
    grad_norm = float(np.linalg.norm(design.T @ (p - a) + penalty * coef))
    if grad_norm <= tol:
        return PropensityModel(beta=coef[:d].copy(), beta0=float(coef[d]), clip=clip)
    raise ConvergenceError(
        f"propensity fit did not converge: gradient norm {grad_norm:.3e} after "
        f"{max_iters} iterations", grad_norm=grad_norm)


# ---------------------------------------------------------------------------
# conditional CDFs


class KernelCcdf:
    """Nadaraya-Watson conditional CDF for one treatment arm.

    F(y|x) = sum_i k(x, x_i) 1{y_i <= y} / sum_i k(x, x_i) with an RBF
    kernel k(x, x') = exp(-||x - x'||^2 / (2 h^2)). Ties use <= (closed on
    the right); queries outside the training outcome range give exactly 0
    or 1.
    """

    def __init__(self, arm: int, train_y: np.ndarray, train_x: np.ndarray, bandwidth: float):
        if bandwidth <= 0:
            raise ConfigError("bandwidth must be positive")
        if len(train_y) == 0:
            raise DataError(f"no training samples for arm {arm}")
        self.arm = int(arm)
        self.bandwidth = float(bandwidth)
        order = np.argsort(train_y, kind="stable")
        self.train_y = np.asarray(train_y, dtype=float)[order]
        self.train_x = np.asarray(train_x, dtype=float)[order]
        if self.train_x.ndim == 1:
            self.train_x = self.train_x.reshape(-1, 1)
        # y-normalisation used by logit-noise wrappers
        self.y_center = float(np.mean(self.train_y))
        self.y_scale = float(np.std(self.train_y)) or 1.0
        self._cache = (None, None)

    @property
    def d(self) -> int:
        return self.train_x.shape[1]

    def _cum_weights(self, x_mat) -> np.ndarray:
        # one-slot cache: optimiser loops evaluate at the same immutable
        # covariate matrix every iteration
        key, cached = self._cache
        if key is x_mat:
            return cached
        sq = np.sum((x_mat[:, None, :] - self.train_x[None, :, :]) ** 2, axis=2)
        logw = -sq / (2.0 * self.bandwidth**2)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        cumw = np.cumsum(w, axis=1)
        cumw /= cumw[:, -1:]
        if isinstance(x_mat, np.ndarray) and not x_mat.flags.writeable:
            self._cache = (x_mat, cumw)
        return cumw

    def _lookup(self, cumw, t):
        idx = np.searchsorted(self.train_y, t, side="right")
        padded = np.concatenate([np.zeros((cumw.shape[0], 1)), cumw], axis=1)
        return np.take_along_axis(padded, idx, axis=1)

    def evaluate(self, y, x) -> np.ndarray:
        scalar = np.ndim(y) == 0 and np.asarray(x).ndim <= 1
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        x_mat = _as_x_matrix(x, self.d)
        if len(x_mat) == 1 and len(y_arr) > 1:
            x_mat = np.repeat(x_mat, len(y_arr), axis=0)
        if len(y_arr) == 1 and len(x_mat) > 1:
            y_arr = np.full(len(x_mat), y_arr[0])
        out = self._lookup(self._cum_weights(x_mat), y_arr[:, None])[:, 0]
        return float(out[0]) if scalar else out

    def evaluate_grid(self, t, x) -> np.ndarray:
        """F(t[i, j] | x[i]) for per-row query grids t of shape (m, k)."""
        t = np.asarray(t, dtype=float)
        x_mat = _as_x_matrix(x, self.d)
        return self._lookup(self._cum_weights(x_mat), t)

    def to_json(self) -> str:
        return json.dumps({
            "arm": self.arm,
            "bandwidth": self.bandwidth,
            "train_y": self.train_y.tolist(),
            "train_x": self.train_x.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "KernelCcdf":
        obj = json.loads(text)
        return cls(obj["arm"], np.array(obj["train_y"]), np.array(obj["train_x"]), obj["bandwidth"])


class GaussianCcdf:
    """Exact conditional CDF of a Gaussian-arm generating process."""

    def __init__(self, mu_fn, sigma: float, d: int, arm: int | None = None):
        if sigma <= 0:
            raise ConfigError("sigma must be positive")
        self.mu_fn = mu_fn
        self.sigma = float(sigma)
        self.d = d
        self.arm = arm
        self.y_center = 0.0
        self.y_scale = float(sigma)

    def evaluate(self, y, x) -> np.ndarray:
        scalar = np.ndim(y) == 0 and np.asarray(x).ndim <= 1
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        x_mat = _as_x_matrix(x, self.d)
        mu = self.mu_fn(x_mat)
        if len(x_mat) == 1 and len(y_arr) > 1:
            mu = np.full(len(y_arr), mu[0])
        out = ndtr((y_arr - mu) / self.sigma)
        return float(out[0]) if scalar else out

    def evaluate_grid(self, t, x) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        mu = self.mu_fn(_as_x_matrix(x, self.d))
        return ndtr((t - mu[:, None]) / self.sigma)


def fit_ccdf(data: Dataset, arm: int, bandwidth: float) -> KernelCcdf:
    """Kernel conditional-CDF estimate from one arm of a dataset view."""
    mask = data.a == arm
    if not np.any(mask):
        raise DataError(f"no samples with treatment {arm}")
    return KernelCcdf(arm, data.y[mask], data.x[mask], bandwidth)


def select_bandwidth(data: Dataset, arm: int, grid, validation: Dataset | None = None,
                     oracle=None) -> float:
    """Grid-search the kernel bandwidth by mean squared CCDF discrepancy.

    Probe pairs (y, x) come from the validation view when given (falling
    back to the fitting view). Each candidate's F(y_j | x_i) over all pairs
    of probe outcomes and probe covariates is scored against the oracle
    CCDF when supplied, otherwise against empirical one-hot indicators
    1{y_i <= y_j}. Ties break toward the smaller bandwidth.
    """
    grid = [float(h) for h in grid]
    if not grid:
        raise ConfigError("bandwidth grid is empty")
    if any(h <= 0 for h in grid):
        raise ConfigError("bandwidths must be positive")
    probe = validation if validation is not None else data
    mask = probe.a == arm
    if not np.any(mask):
        raise DataError(f"no validation samples with treatment {arm}")
    probe_y = probe.y[mask]
    probe_x = probe.x[mask]
    t = np.broadcast_to(probe_y, (len(probe_x), len(probe_y)))
    if oracle is not None:
        reference = oracle.evaluate_grid(t, probe_x)
    else:
        reference = (probe_y[:, None] <= probe_y[None, :]).astype(float)

    best_h, best_score = None, np.inf
    for h in sorted(grid):
        model = fit_ccdf(data, arm, h)
        score = float(np.mean((model.evaluate_grid(t, probe_x) - reference) ** 2))
        if score < best_score - 1e-15:
            best_h, best_score = h, score
    return best_h


# ---------------------------------------------------------------------------
# logit-space perturbation


@dataclass(frozen=True)
class LogitNoise:
    """Biased random logit noise; level 0 reproduces inputs exactly."""

    level: float
    bias: float = 1.0
    seed: int = 0
    targets: frozenset = field(default_factory=lambda: frozenset({"propensity", "ccdf0", "ccdf1"}))

    def __post_init__(self):
        if self.level < 0:
            raise ConfigError("noise level must be nonnegative")
        unknown = set(self.targets) - {"propensity", "ccdf0", "ccdf1"}
        if unknown:
            raise ConfigError(f"unknown perturbation targets: {sorted(unknown)}")


class _SmoothField:
    """Seeded smooth logit field: sin(w.x + u*yt) + lam*yt, lam = |u|.

    The |u|-slope baseline makes the field nondecreasing in the normalised
    outcome yt, so perturbed conditional CDFs stay monotone.
    """

    def __init__(self, d: int, seed, with_y: bool):
        rng = np.random.default_rng(seed)
        self.w = rng.normal(size=d) / np.sqrt(d)
        self.with_y = with_y
        if with_y:
            self.u = float(rng.uniform(0.5, 1.5) * rng.choice([-1.0, 1.0]))
            self.lam = abs(self.u)
        else:
            self.u = 0.0
            self.lam = 0.0

    def __call__(self, x, yt=None):
        phase = x @ self.w
        if self.with_y:
            return np.sin(phase + self.u * yt) + self.lam * yt
        return np.sin(phase)


def _shift_probability(p, shift):
    with np.errstate(divide="ignore", over="ignore"):
        logit = np.log(p) - np.log1p(-p)
        return expit(logit + shift)


class PerturbedPropensity:
    def __init__(self, base, level: float, bias: float, field_fn, clip: float = DEFAULT_CLIP):
        self.base = base
        self.level = level
        self.bias = bias
        self.field_fn = field_fn
        self.clip = clip
        self.d = _propensity_dim(base)

    def evaluate(self, x) -> np.ndarray:
        p = self.base.evaluate(x)
        if self.level == 0:
            return p
        x_mat = _as_x_matrix(x, self.d)
        shift = self.level * (self.bias + self.field_fn(x_mat))
        return np.clip(_shift_probability(p, shift), self.clip, 1.0 - self.clip)


def _propensity_dim(model) -> int:
    d = getattr(model, "d", None)
    return d if d is not None else len(model.beta)


class PerturbedCcdf:
    def __init__(self, base, level: float, bias: float, field_fn):
        self.base = base
        self.level = level
        self.bias = bias
        self.field_fn = field_fn
        self.arm = getattr(base, "arm", None)
        self.d = base.d
        self.y_center = base.y_center
        self.y_scale = base.y_scale

    def _shift(self, t, x_mat):
        yt = (t - self.y_center) / self.y_scale
        return self.level * (self.bias + self.field_fn(x_mat, yt))

    def evaluate(self, y, x) -> np.ndarray:
        p = self.base.evaluate(y, x)
        if self.level == 0:
            return p
        scalar = np.ndim(p) == 0
        x_mat = _as_x_matrix(x, self.d)
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        if len(x_mat) == 1 and len(y_arr) > 1:
            x_mat = np.repeat(x_mat, len(y_arr), axis=0)
        if len(y_arr) == 1 and len(x_mat) > 1:
            y_arr = np.full(len(x_mat), y_arr[0])
        out = _shift_probability(np.atleast_1d(p), self._shift(y_arr, x_mat))
        return float(out[0]) if scalar else out

    def evaluate_grid(self, t, x) -> np.ndarray:
        p = self.base.evaluate_grid(t, x)
        if self.level == 0:
            return p
        x_mat = _as_x_matrix(x, self.d)
        t = np.asarray(t, dtype=float)
        shift = self._shift(t, x_mat[:, None, :])
        return _shift_probability(p, shift)


# ---------------------------------------------------------------------------
# the assembled set


@dataclass
class NuisanceSet:
    """Propensity plus per-arm conditional CDFs behind one interface."""

    propensity: object
    ccdf0: object
    ccdf1: object
    provenance: str = "fitted"

    def pi(self, x) -> np.ndarray:
        return self.propensity.evaluate(x)

    def ccdf(self, arm: int):
        return self.ccdf1 if arm == 1 else self.ccdf0

    def F(self, arm: int, y, x):
        return self.ccdf(arm).evaluate(y, x)


def fit_nuisances(data: Dataset, bandwidth0: float, bandwidth1: float,
                  l2: float | None = None, clip: float = DEFAULT_CLIP) -> NuisanceSet:
    """Fit all three nuisance functions on one data view."""
    return NuisanceSet(
        propensity=fit_propensity(data, l2=l2, clip=clip),
        ccdf0=fit_ccdf(data, 0, bandwidth0),
        ccdf1=fit_ccdf(data, 1, bandwidth1),
        provenance="fitted",
    )


def perturb(nuisances: NuisanceSet, noise: LogitNoise) -> NuisanceSet:
    """Shift targeted nuisance logits by bias*level + level*field(seeded).

    Untargeted functions pass through unchanged; level 0 is the identity;
    conditional-CDF monotonicity in y is preserved by construction of the
    field.
    """
    seeds = np.random.SeedSequence(noise.seed).spawn(3)
    prop, c0, c1 = nuisances.propensity, nuisances.ccdf0, nuisances.ccdf1
    if "propensity" in noise.targets and noise.level > 0:
        d = _propensity_dim(prop)
        clip = getattr(prop, "clip", DEFAULT_CLIP)
        prop = PerturbedPropensity(prop, noise.level, noise.bias,
                                   _SmoothField(d, seeds[0], with_y=False), clip=clip)
    if "ccdf0" in noise.targets and noise.level > 0:
        c0 = PerturbedCcdf(c0, noise.level, noise.bias, _SmoothField(c0.d, seeds[1], with_y=True))
    if "ccdf1" in noise.targets and noise.level > 0:
        c1 = PerturbedCcdf(c1, noise.level, noise.bias, _SmoothField(c1.d, seeds[2], with_y=True))
    return NuisanceSet(prop, c0, c1, provenance=f"perturbed(level={noise.level}, seed={noise.seed})")


def oracle_nuisances(dgp, clip: float = DEFAULT_CLIP) -> NuisanceSet:
    """Closed-form nuisances for a Gaussian-arm generating process.

    ``dgp`` must expose mu0/mu1 (vectorised over an (m, d) covariate
    matrix), sigma0/sigma1, propensity_logit, and d.
    """
    return NuisanceSet(
        propensity=OraclePropensity(dgp.propensity_logit, dgp.d, clip=clip),
        ccdf0=GaussianCcdf(dgp.mu0, dgp.sigma0, dgp.d, arm=0),
        ccdf1=GaussianCcdf(dgp.mu1, dgp.sigma1, dgp.d, arm=1),
        provenance="oracle",
    )

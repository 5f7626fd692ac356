"""Per-sample gradient contributions, Monte-Carlo aggregation, Y0 sampling,
and the quadrature validation loss.

The doubly robust contribution for sample z = (y, x, a) at test point y0,
writing c for the model value at (y0, x), multiplies the parameter gradient
of the model by the scalar

    (a / pi(x)) * (1{y <= c} - F1(c|x))
  - ((1-a) / (1 - pi(x))) * (1{y <= y0} - F0(y0|x))
  + F1(c|x) - F0(y0|x)

The IPW variant keeps only the reweighted indicators. All indicators are
<= exactly. Everything here is pure given (model, nuisances, batch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .dataset import Sample
from .errors import ConfigError, DataError, NumericError

__all__ = [
    "GradContribution",
    "PairedBatch",
    "Y0Sampler",
    "LossReport",
    "dr_gradient",
    "ipw_gradient",
    "mc_gradient",
    "sample_y0",
    "sample_y0_batch",
    "loss_quadrature",
    "scalar_factors",
    "simpson_ccdf_integral",
    "trimmed_mean",
]

DEFAULT_NODES = 129
DEFAULT_TRIM = 0.05


@dataclass(frozen=True)
class GradContribution:
    """One sample's gradient contribution: grad = (d model / d theta) * scalar."""

    grad: np.ndarray
    scalar_factor: float
    index: int | None = None


@dataclass(frozen=True)
class PairedBatch:
    """Vectorised batch of (y0, sample) pairs."""

    y0: np.ndarray
    y: np.ndarray
    x: np.ndarray
    a: np.ndarray

    def __len__(self):
        return len(self.y0)

    @classmethod
    def from_pairs(cls, pairs) -> "PairedBatch":
        pairs = list(pairs)
        if not pairs:
            raise DataError("empty batch")
        return cls(
            y0=np.array([float(p[0]) for p in pairs]),
            y=np.array([p[1].y for p in pairs]),
            x=np.stack([np.asarray(p[1].x, dtype=float) for p in pairs]),
            a=np.array([p[1].a for p in pairs]),
        )

    @classmethod
    def from_arrays(cls, y0, y, x, a) -> "PairedBatch":
        return cls(np.asarray(y0, float), np.asarray(y, float),
                   np.asarray(x, float), np.asarray(a))


def _checked_pi(nuisances, x):
    pi = np.atleast_1d(nuisances.pi(x))
    if np.any(pi <= 0.0) or np.any(pi >= 1.0):
        raise NumericError("propensity evaluation outside (0, 1); clip invariant violated")
    return pi


def scalar_factors(c, batch: PairedBatch, nuisances, which: str = "dr") -> np.ndarray:
    """Vectorised bracketed term of the chosen gradient formula."""
    c = np.asarray(c, dtype=float)
    pi = _checked_pi(nuisances, batch.x)
    a = batch.a.astype(float)
    ind_c = (batch.y <= c).astype(float)
    ind_y0 = (batch.y <= batch.y0).astype(float)
    if which == "dr":
        f1c = np.atleast_1d(nuisances.ccdf1.evaluate(c, batch.x))
        f0y0 = np.atleast_1d(nuisances.ccdf0.evaluate(batch.y0, batch.x))
        return (a / pi) * (ind_c - f1c) - ((1.0 - a) / (1.0 - pi)) * (ind_y0 - f0y0) + f1c - f0y0
    if which == "ipw":
        return (a / pi) * ind_c - ((1.0 - a) / (1.0 - pi)) * ind_y0
    raise ConfigError(f"unknown gradient kind {which!r}")


def _single(model, nuisances, y0: float, z: Sample, which: str, index=None) -> GradContribution:
    value, grad = model.eval_and_grad(y0, z.x)
    batch = PairedBatch.from_arrays([y0], [z.y], z.x.reshape(1, -1), [z.a])
    s = float(scalar_factors(np.atleast_1d(value), batch, nuisances, which)[0])
    return GradContribution(grad=np.asarray(grad) * s, scalar_factor=s, index=index)


def dr_gradient(model, nuisances, y0: float, z: Sample, index=None) -> GradContribution:
    """Doubly robust gradient contribution of one sample."""
    return _single(model, nuisances, y0, z, "dr", index)


def ipw_gradient(model, nuisances, y0: float, z: Sample, index=None) -> GradContribution:
    """Inverse-probability-weighted gradient contribution of one sample."""
    return _single(model, nuisances, y0, z, "ipw", index)


def mc_gradient(model, nuisances, batch, which: str = "dr") -> np.ndarray:
    """Arithmetic mean of per-sample contributions over a batch.

    ``batch`` is a PairedBatch or an iterable of (y0, Sample) pairs.
    """
    if not isinstance(batch, PairedBatch):
        batch = PairedBatch.from_pairs(batch)
    if len(batch) == 0:
        raise DataError("empty batch")
    c = np.atleast_1d(model.value(batch.y0, batch.x))
    s = scalar_factors(c, batch, nuisances, which)
    return model.grad_weighted(batch.y0, batch.x, s)


# ---------------------------------------------------------------------------
# Y0 sampling


@dataclass(frozen=True)
class Y0Sampler:
    """Law of the test points y0 paired with each fitting sample.

    kind 'uniform': uniform on the [q_lo, q_hi] empirical quantile range of
    the untreated outcomes. kind 'unconditional': resample untreated
    outcomes with replacement, independent of x. kind 'conditional': exact
    inverse-CDF draw from the generating process's untreated law at x
    (requires ``dgp``).
    """

    kind: str = "unconditional"
    q_lo: float = 0.05
    q_hi: float = 0.95
    seed: int = 0
    dgp: object = None

    def __post_init__(self):
        if self.kind not in ("uniform", "unconditional", "conditional"):
            raise ConfigError(f"unknown y0 sampler kind {self.kind!r}")
        if self.kind == "uniform" and not (0.0 <= self.q_lo < self.q_hi <= 1.0):
            raise ConfigError("uniform sampler needs 0 <= q_lo < q_hi <= 1")
        if self.kind == "conditional" and self.dgp is None:
            raise ConfigError("conditional sampler needs a generating process")


def sample_y0_batch(sampler: Y0Sampler, untreated_y, x=None, rng=None, size=None) -> np.ndarray:
    """Draw test points; vectorised over ``size`` (or rows of x)."""
    rng = np.random.default_rng(sampler.seed) if rng is None else rng
    if size is None:
        size = len(x) if x is not None and np.ndim(x) == 2 else 1
    if sampler.kind == "conditional":
        x_mat = np.asarray(x, dtype=float)
        if x_mat.ndim == 1:
            x_mat = x_mat.reshape(size, -1) if size > 1 else x_mat.reshape(1, -1)
        mu = sampler.dgp.mu0(x_mat)
        return mu + sampler.dgp.sigma0 * ndtri(rng.uniform(size=size))
    pool = np.asarray(untreated_y, dtype=float)
    if pool.size == 0:
        raise DataError("no untreated outcomes available for data-driven y0 sampling")
    if sampler.kind == "unconditional":
        return rng.choice(pool, size=size, replace=True)
    lo, hi = np.quantile(pool, [sampler.q_lo, sampler.q_hi])
    return rng.uniform(lo, hi, size=size)


def sample_y0(sampler: Y0Sampler, untreated_y, x=None, rng=None) -> float:
    """Single test-point draw; see sample_y0_batch."""
    x_arr = None if x is None else np.asarray(x, dtype=float).reshape(1, -1)
    return float(sample_y0_batch(sampler, untreated_y, x_arr, rng, size=1)[0])


# ---------------------------------------------------------------------------
# quadrature loss


def simpson_ccdf_integral(ccdf, lower, upper, x, nodes: int = DEFAULT_NODES) -> np.ndarray:
    """Composite Simpson integral of F(t|x) from lower[i] to upper[i], per row.

    ``nodes`` counts Simpson panels (2*nodes + 1 grid points); the sign
    convention is that integrating downward negates the result.
    """
    if nodes < 2:
        raise ConfigError("need at least 2 quadrature panels")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    k = 2 * nodes + 1
    h = (upper - lower) / (k - 1)
    offsets = np.arange(k)
    t = lower[:, None] + h[:, None] * offsets
    vals = ccdf.evaluate_grid(t, x)
    weights = np.ones(k)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    return (h / 3.0) * (vals @ weights)


@dataclass(frozen=True)
class LossReport:
    """Plain and tail-trimmed means of per-sample validation losses."""

    mean_loss: float
    trimmed_mean_loss: float
    per_sample: np.ndarray
    quadrature_nodes: int
    trim: float

    def to_json_dict(self) -> dict:
        return {
            "mean_loss": self.mean_loss,
            "trimmed_mean_loss": self.trimmed_mean_loss,
            "per_sample": self.per_sample.tolist(),
            "quadrature_nodes": self.quadrature_nodes,
            "trim": self.trim,
        }


def trimmed_mean(values: np.ndarray, trim: float) -> float:
    """Mean after dropping floor(trim * m) values from each tail."""
    values = np.sort(np.asarray(values, dtype=float))
    k = int(trim * len(values))
    kept = values[k : len(values) - k] if k > 0 else values
    return float(np.mean(kept))


def loss_quadrature(model, nuisances, batch, nodes: int = DEFAULT_NODES,
                    trim: float = DEFAULT_TRIM) -> LossReport:
    """Per-sample doubly robust loss estimate with a Simpson-quadrature integral.

    Each sample contributes

        (c - y) * { (a/pi) 1{y <= c} - ((1-a)/(1-pi)) (1{y <= y0} - F0(y0|x))
                    - F0(y0|x) }
      + ((pi - a)/pi) * integral_y^c F1(t|x) dt
    """
    if not (0.0 <= trim < 0.5):
        raise ConfigError("trim fraction must lie in [0, 0.5)")
    if not isinstance(batch, PairedBatch):
        batch = PairedBatch.from_pairs(batch)
    c = np.atleast_1d(model.value(batch.y0, batch.x))
    pi = _checked_pi(nuisances, batch.x)
    a = batch.a.astype(float)
    f0y0 = np.atleast_1d(nuisances.ccdf0.evaluate(batch.y0, batch.x))
    ind_c = (batch.y <= c).astype(float)
    ind_y0 = (batch.y <= batch.y0).astype(float)
    bracket = (a / pi) * ind_c - ((1.0 - a) / (1.0 - pi)) * (ind_y0 - f0y0) - f0y0
    integral = simpson_ccdf_integral(nuisances.ccdf1, batch.y, c, batch.x, nodes)
    per_sample = (c - batch.y) * bracket + ((pi - a) / pi) * integral
    return LossReport(
        mean_loss=float(np.mean(per_sample)),
        trimmed_mean_loss=trimmed_mean(per_sample, trim),
        per_sample=per_sample,
        quadrature_nodes=nodes,
        trim=trim,
    )

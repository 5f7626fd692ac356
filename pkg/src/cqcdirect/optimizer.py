"""Gradient-based fitting of comparator models.

Two drivers: projected single-sample SGD with averaged iterates and the
convergence-analysis step schedules, and full-batch Adam (the practical
default: 1000 iterations at learning rate 0.1). Both start from the data at
hand, redraw the paired y0 test points every epoch, and are bit-reproducible
for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DataError
from .models import project_ball
from .objective import (
    PairedBatch,
    Y0Sampler,
    loss_quadrature,
    mc_gradient,
    sample_y0_batch,
    scalar_factors,
)

__all__ = [
    "ScheduleSpec",
    "FitResult",
    "fit_sgd",
    "fit_adam",
    "validate",
    "default_radius",
    "empirical_rho",
]


@dataclass(frozen=True)
class ScheduleSpec:
    """Step-size rule for projected SGD.

    kinds:
      'theorem_convex'  eta_t = B * a_clip / (2 * rho * sqrt(n)), constant.
      'theorem_strong'  eta_t = 1 / (mu * t); with per_iteration=False the
                        constant-in-n variant eta_t = 1 / (mu * n).
      'constant'        eta_t = eta.
      'constant_with_decay'  eta_t = eta / (1 + rate * t).
    """

    kind: str
    eta: float | None = None
    rate: float = 0.0
    radius: float | None = None
    a_clip: float | None = None
    rho: float | None = None
    mu: float | None = None
    per_iteration: bool = True

    @classmethod
    def theorem_convex(cls, radius, a_clip, rho):
        return cls(kind="theorem_convex", radius=radius, a_clip=a_clip, rho=rho)

    @classmethod
    def theorem_strong(cls, mu, per_iteration=True):
        return cls(kind="theorem_strong", mu=mu, per_iteration=per_iteration)

    @classmethod
    def constant(cls, eta):
        return cls(kind="constant", eta=eta)

    @classmethod
    def constant_with_decay(cls, eta, rate):
        return cls(kind="constant_with_decay", eta=eta, rate=rate)

    def step_size(self, t: int, n_steps: int) -> float:
        """Step size at 1-based iteration t of a run with n_steps total."""
        if self.kind == "theorem_convex":
            if self.rho is None or not math.isfinite(self.rho):
                raise ConfigError(
                    "theorem schedule needs a finite feature-norm bound; compute the "
                    "empirical bound over the fitting split (see empirical_rho)")
            return self.radius * self.a_clip / (2.0 * self.rho * math.sqrt(n_steps))
        if self.kind == "theorem_strong":
            return 1.0 / (self.mu * (t if self.per_iteration else n_steps))
        if self.kind == "constant":
            return self.eta
        if self.kind == "constant_with_decay":
            return self.eta / (1.0 + self.rate * t)
        raise ConfigError(f"unknown schedule kind {self.kind!r}")

    def describe(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass
class FitResult:
    """Fitted parameters plus bookkeeping.

    theta_avg is the running average over every iterate the projected-SGD
    trajectory visited (the estimator the averaging analysis studies);
    theta_last is the final iterate (Adam's primary estimate).
    """

    theta_avg: np.ndarray
    theta_last: np.ndarray
    trajectory_summary: list
    seed: int
    schedule: dict
    model: object = None

    def to_json_dict(self) -> dict:
        return {
            "theta_avg": np.asarray(self.theta_avg).tolist(),
            "theta_last": np.asarray(self.theta_last).tolist(),
            "trajectory_summary": list(self.trajectory_summary),
            "seed": self.seed,
            "schedule": self.schedule,
        }


def empirical_rho(features, y0s, xs) -> float:
    """Largest feature norm over the pairs actually visited by a run."""
    phi = np.atleast_2d(features(y0s, xs))
    return float(np.max(np.linalg.norm(phi, axis=1)))


def default_radius(model, fit_data: Dataset, sampler: Y0Sampler, seed: int = 0,
                   multiplier: float = 10.0) -> float:
    """Projection radius default: 10x the norm of a ridge warm-start.

    The warm start regresses observed outcomes on the feature map at drawn
    (y0, x) pairs; the multiplied norm keeps the projection slack at any
    plausible optimum.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0xB)))
    pool = fit_data.y[fit_data.a == 0]
    y0s = sample_y0_batch(sampler, pool, fit_data.x, rng, size=len(fit_data))
    phi = np.atleast_2d(model.features(y0s, fit_data.x))
    lam = 1e-6 * np.trace(phi.T @ phi) / phi.shape[1] + 1e-12
    theta = np.linalg.solve(phi.T @ phi + lam * np.eye(phi.shape[1]), phi.T @ fit_data.y)
    norm = float(np.linalg.norm(theta))
    return multiplier * max(norm, 1.0)


def _epoch_y0(sampler: Y0Sampler, fit_data: Dataset, seed, epoch: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, epoch)))
    pool = fit_data.y[fit_data.a == 0]
    return sample_y0_batch(sampler, pool, fit_data.x, rng, size=len(fit_data))


def fit_sgd(model0, nuisances, fit_data: Dataset, sampler: Y0Sampler,
            schedule: ScheduleSpec, radius: float, epochs: int = 1,
            grad_kind: str = "dr", seed: int = 0,
            track_validation: bool = False) -> FitResult:
    """Projected single-sample SGD from theta = 0 with iterate averaging.

    Each epoch visits every fitting sample exactly once in a seeded random
    order with a fresh y0 draw per sample, projecting onto the radius ball
    after every step. theta_avg averages all visited iterates, starting at
    the zero initialiser.
    """
    if len(fit_data) == 0:
        raise DataError("empty fitting data")
    if not hasattr(model0, "features"):
        raise ConfigError("projected SGD requires a model linear in its parameters")
    if radius <= 0:
        raise ConfigError("projection radius must be positive")
    features = model0.features
    p = features.p
    n_steps = epochs * len(fit_data)

    theta = np.zeros(p)
    theta_sum = np.zeros(p)
    visited = 0
    trajectory = []
    t = 0
    for epoch in range(epochs):
        y0s = _epoch_y0(sampler, fit_data, seed, epoch)
        order_rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, epoch, 1)))
        order = order_rng.permutation(len(fit_data))
        batch = PairedBatch.from_arrays(y0s[order], fit_data.y[order],
                                        fit_data.x[order], fit_data.a[order])
        phi = np.atleast_2d(features(batch.y0, batch.x))
        if schedule.kind == "theorem_convex" and schedule.rho is None:
            schedule = ScheduleSpec.theorem_convex(
                schedule.radius, schedule.a_clip,
                float(np.max(np.linalg.norm(phi, axis=1))))
        for i in range(len(batch)):
            t += 1
            theta_sum += theta
            visited += 1
            c = phi[i] @ theta
            row = PairedBatch.from_arrays(batch.y0[i : i + 1], batch.y[i : i + 1],
                                          batch.x[i : i + 1], batch.a[i : i + 1])
            s = scalar_factors(np.array([c]), row, nuisances, grad_kind)[0]
            theta = project_ball(theta - schedule.step_size(t, n_steps) * s * phi[i], radius)
        if track_validation:
            report = loss_quadrature(model0.with_theta(theta), nuisances, batch)
            trajectory.append(report.trimmed_mean_loss)
    theta_sum += theta
    visited += 1
    theta_avg = theta_sum / visited

    result = FitResult(theta_avg=theta_avg, theta_last=theta,
                       trajectory_summary=trajectory, seed=seed,
                       schedule=schedule.describe())
    result.model = model0.with_theta(theta_avg)
    return result


def fit_adam(model0, nuisances, fit_data: Dataset, sampler: Y0Sampler,
             lr: float = 0.1, iters: int = 1000, batch_size: int | None = None,
             grad_kind: str = "dr", seed: int = 0, lr_decay: float = 0.0,
             beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
             track_every: int = 0) -> FitResult:
    """Full-batch Adam with bias correction on the Monte-Carlo gradient.

    y0 test points are redrawn every iteration; the primary estimate is the
    last iterate (no projection or averaging).
    """
    if iters < 1:
        raise ConfigError("need at least one iteration")
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    if len(fit_data) == 0:
        raise DataError("empty fitting data")

    theta = model0.get_params()
    model = model0.with_theta(theta)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    trajectory = []
    pool = fit_data.y[fit_data.a == 0]
    batch_rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0xA)))

    full_batch = batch_size is None or batch_size >= len(fit_data)
    for t in range(1, iters + 1):
        y0_rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, t)))
        if full_batch:
            y0s = sample_y0_batch(sampler, pool, fit_data.x, y0_rng, size=len(fit_data))
            batch = PairedBatch.from_arrays(y0s, fit_data.y, fit_data.x, fit_data.a)
        else:
            rows = batch_rng.choice(len(fit_data), size=batch_size, replace=False)
            y0s = sample_y0_batch(sampler, pool, fit_data.x[rows], y0_rng, size=len(rows))
            batch = PairedBatch.from_arrays(y0s, fit_data.y[rows], fit_data.x[rows],
                                            fit_data.a[rows])
        g = mc_gradient(model, nuisances, batch, grad_kind)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        step_lr = lr / (1.0 + lr_decay * t)
        theta = theta - step_lr * m_hat / (np.sqrt(v_hat) + eps)
        model.set_params(theta)
        if track_every and (t % track_every == 0 or t == iters):
            report = loss_quadrature(model, nuisances, batch)
            trajectory.append(report.trimmed_mean_loss)

    result = FitResult(theta_avg=theta.copy(), theta_last=theta.copy(),
                       trajectory_summary=trajectory, seed=seed,
                       schedule={"kind": "adam", "lr": lr, "iters": iters,
                                 "lr_decay": lr_decay})
    result.model = model
    return result


def validate(model, nuisances, holdout, trim: float = 0.05, nodes: int = 129) -> float:
    """Trimmed-mean quadrature loss on a held-out paired batch."""
    if not isinstance(holdout, PairedBatch):
        holdout = PairedBatch.from_pairs(holdout)
    if len(holdout) == 0:
        raise DataError("empty holdout")
    return loss_quadrature(model, nuisances, holdout, nodes=nodes, trim=trim).trimmed_mean_loss

"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every criterion function is a pure function of hard-coded seeds and returns a
result table (list of string rows, no wall-clock values). The determinism
criterion reruns each one and compares the serialised tables byte for byte.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.
"""

import io
import os
import csv

import numpy as np
import pytest
from scipy.special import ndtr
from scipy.stats import norm

from cqcdirect.baselines import default_grid_spec, invert_cqc_batch, s_learner_cqc_batch
from cqcdirect.dataset import split_half
from cqcdirect.models import AffineFeatures, LinearCqc, MlpCqc
from cqcdirect.nuisance import GaussianCcdf, NuisanceSet, OraclePropensity, oracle_nuisances
from cqcdirect.objective import (
    PairedBatch,
    Y0Sampler,
    loss_quadrature,
    sample_y0_batch,
    scalar_factors,
    simpson_ccdf_integral,
)
from cqcdirect.optimizer import ScheduleSpec, default_radius, fit_sgd
from cqcdirect.simlab import (
    ExperimentPlan,
    OracleCqc,
    RunDefaults,
    eval_points,
    generate,
    make_dgp,
    population_excess_loss,
    run_experiment,
)

JOBS = min(4, os.cpu_count() or 1)
DEFAULTS = RunDefaults(clip=0.1)

_cache = {}


def fmt(v) -> str:
    return f"{float(v):.17g}"


def to_csv_bytes(rows) -> bytes:
    buf = io.StringIO()
    csv.writer(buf).writerows(rows)
    return buf.getvalue().encode()


def cached(name, fn):
    if name not in _cache:
        _cache[name] = fn()
    return _cache[name]


def report(num, ok, detail):
    print(f"CRITERION {num}: {'PASS' if ok else 'FAIL'} - {detail}")


# ---------------------------------------------------------------------------
# criterion 1: doubly robust gradient unbiasedness


def run_criterion_1():
    dgp = make_dgp("cos_linear", gamma=2.0, seed=1001)
    nuis = oracle_nuisances(dgp)
    feats = AffineFeatures(1)
    rng = np.random.default_rng(1002)
    n = 1_000_000
    rows = [["point", "coord", "mc_mean", "target", "se"]]
    ok = True
    for point in range(20):
        theta = rng.normal(size=4) * 1.5
        model = LinearCqc(feats, theta)
        x = rng.normal(size=(1, 1))
        y0 = float(rng.normal())
        c = float(model.value(y0, x))
        pi_true = 1.0 / (1.0 + np.exp(-dgp.propensity_logit(x)[0]))
        a = (rng.uniform(size=n) < pi_true).astype(int)
        mu = np.where(a == 1, dgp.mu1(x)[0], dgp.mu0(x)[0])
        sig = np.where(a == 1, dgp.sigma1, dgp.sigma0)
        y = mu + sig * rng.normal(size=n)
        batch = PairedBatch.from_arrays(np.full(n, y0), y, np.repeat(x, n, axis=0), a)
        s = scalar_factors(np.full(n, c), batch, nuis, "dr")
        mean_s, se_s = float(np.mean(s)), float(np.std(s) / np.sqrt(n))
        contrast = float(nuis.ccdf1.evaluate(np.array([c]), x)[0]
                         - nuis.ccdf0.evaluate(np.array([y0]), x)[0])
        phi = feats(y0, x[0])
        for j in range(4):
            got = phi[j] * mean_s
            want = phi[j] * contrast
            se = abs(phi[j]) * se_s
            if abs(got - want) > 4 * se + 1e-12:
                ok = False
            rows.append([str(point), str(j), fmt(got), fmt(want), fmt(se)])
    return ok, "20 settings x 1e6 draws, gradient within 4 MC standard errors", rows


def test_criterion_1_gradient_unbiasedness():
    ok, detail, _ = cached(1, run_criterion_1)
    report(1, ok, detail)
    assert ok


# ---------------------------------------------------------------------------
# criterion 2: loss oracle agreement


def run_criterion_2():
    zero = lambda x: np.zeros(len(x))
    nuis = NuisanceSet(OraclePropensity(zero, 1), GaussianCcdf(zero, 1.0, 1),
                       GaussianCcdf(zero, 1.0, 1), "oracle")
    model = LinearCqc(AffineFeatures(1), np.array([0.0, 0.0, 0.0, 1.0]))  # c = 1
    rng = np.random.default_rng(2001)
    n = 1_000_000
    chunk = 100_000
    sums, sq_sums, total = 0.0, 0.0, 0
    for _ in range(n // chunk):
        a = rng.integers(0, 2, size=chunk)
        y = rng.normal(size=chunk)
        x = rng.normal(size=(chunk, 1))
        rep = loss_quadrature(model, nuis, PairedBatch.from_arrays(
            np.zeros(chunk), y, x, a))
        sums += float(np.sum(rep.per_sample))
        sq_sums += float(np.sum(rep.per_sample**2))
        total += chunk
    mc_mean = sums / total
    se = np.sqrt(sq_sums / total - mc_mean**2) / np.sqrt(total)
    ok = abs(mc_mean - 0.18436) <= 3 * se

    ccdf = GaussianCcdf(zero, 1.0, 1)

    def psi(u):
        return u * ndtr(u) + norm.pdf(u)

    worst = 0.0
    grid_rng = np.random.default_rng(2002)
    lows = grid_rng.uniform(-6, 4, size=60)
    lengths = grid_rng.uniform(0.1, 10.0, size=60)
    got = simpson_ccdf_integral(ccdf, lows, lows + lengths, np.zeros((60, 1)), nodes=129)
    want = psi(lows + lengths) - psi(lows)
    worst = float(np.max(np.abs(got - want)))
    ok = ok and worst <= 1e-8
    rows = [["mc_mean", "se", "simpson_worst_abs_err"], [fmt(mc_mean), fmt(se), fmt(worst)]]
    return ok, f"MC mean {mc_mean:.6f} vs 0.18436 (3se={3*se:.2g}); Simpson err {worst:.2g}", rows


def test_criterion_2_loss_oracle():
    ok, detail, _ = cached(2, run_criterion_2)
    report(2, ok, detail)
    assert ok


# ---------------------------------------------------------------------------
# criterion 3: loss bound suite


def run_criterion_3():
    rng = np.random.default_rng(3001)
    n = 10_000
    rows = [["family", "checked", "worst_margin"]]
    ok = True

    # Gaussian arms (cos_linear laws): upper bound and density-cap lower bound
    gamma = 2.0
    x = rng.normal(size=n)
    y0 = rng.normal(size=n)
    theta = rng.normal(size=(n, 4)) * 1.5
    phi = np.stack([x * y0, y0, x, np.ones(n)], axis=1)
    c = np.sum(theta * phi, axis=1)
    mu1 = 2 * np.cos(6 * x) + gamma * x
    s1 = 2.0
    tau = 2 * y0 + gamma * x

    def psi(u):
        return u * ndtr(u) + norm.pdf(u)

    f0y0 = ndtr((tau - mu1) / s1)
    loss = s1 * (psi((c - mu1) / s1) - psi((tau - mu1) / s1)) - (c - tau) * f0y0
    df = np.abs(ndtr((c - mu1) / s1) - f0y0)
    upper_margin = float(np.max(loss - np.abs(c - tau) * df))
    ok &= upper_margin <= 1e-9
    rows.append(["gaussian_upper", str(n), fmt(upper_margin)])
    mubar = 1.0 / (s1 * np.sqrt(2 * np.pi))
    a_margin = float(np.max(df**2 - 2 * mubar * loss))
    ok &= a_margin <= 1e-9
    rows.append(["gaussian_density_cap", str(n), fmt(a_margin)])

    # Uniform outcomes on [b(x), b(x) + 2]: density floor 1/2; models clipped
    # into the support where the floor hypothesis applies
    b = 0.5 * rng.normal(size=n)
    tau_u = b + 2.0 * rng.uniform(size=n)
    c_u = np.clip(tau_u + rng.normal(size=n), b, b + 2.0)
    loss_u = 0.25 * (c_u - tau_u) ** 2
    b_margin = float(np.max(0.5 * (c_u - tau_u) ** 2 - 2 * loss_u))
    ok &= b_margin <= 1e-9
    rows.append(["uniform_density_floor", str(n), fmt(b_margin)])

    # Exponential treated outcomes (decreasing density): product lower bound
    # on the overshoot side, where the concavity argument applies
    shift = rng.normal(size=n)
    tau_e = shift + rng.exponential(size=n)
    c_e = tau_e + np.abs(rng.normal(size=n))
    u = c_e - tau_e
    w = tau_e - shift
    loss_e = np.exp(-(u + w)) - np.exp(-w) + u * np.exp(-w)
    df_e = np.exp(-w) - np.exp(-(u + w))
    c_margin = float(np.max(u * df_e - 2 * loss_e))
    ok &= c_margin <= 1e-9
    rows.append(["exponential_product", str(n), fmt(c_margin)])
    return ok, "upper/cap/floor/product margins all within 1e-9 slack", rows


def test_criterion_3_bound_suite():
    ok, detail, _ = cached(3, run_criterion_3)
    report(3, ok, detail)
    assert ok


# ---------------------------------------------------------------------------
# criterion 4: root-n rate of the projected-SGD schedule


def _sgd_excess(n, rep):
    ss = np.random.SeedSequence(entropy=(4001, n, rep)).spawn(4)
    dgp = make_dgp("cos_linear", gamma=2.0, seed=int(ss[0].generate_state(1)[0]),
                   propensity_scale=0.0)
    data = generate(dgp, n, seed=ss[1])
    fit_data = data.subset(split_half(data).fit_idx)
    nuis = oracle_nuisances(dgp)
    sampler = Y0Sampler(kind="unconditional")
    model0 = LinearCqc(AffineFeatures(1))
    seed = int(ss[2].generate_state(1)[0])
    radius = default_radius(model0, fit_data, sampler, seed=seed)
    pi = nuis.pi(fit_data.x)
    a_clip = float(max(0.01, min(pi.min(), (1 - pi).min())))
    sched = ScheduleSpec.theorem_convex(radius, a_clip, rho=None)
    res = fit_sgd(model0, nuis, fit_data, sampler, sched, radius, seed=seed)
    pool = data.y[data.a == 0]
    y0e, xe = eval_points(dgp, 2000, sampler, pool, seed=ss[3])
    model = res.model
    return population_excess_loss(lambda y0s, xs: model.value(y0s, xs), dgp, y0e, xe)


def run_criterion_4():
    means = {}
    rows = [["n", "mean_excess"]]
    for n in (500, 8000):
        excess = [_sgd_excess(n, rep) for rep in range(100)]
        means[n] = float(np.mean(excess))
        rows.append([str(n), fmt(means[n])])
    ratio = means[8000] / means[500]
    rows.append(["ratio", fmt(ratio)])
    ok = 0.15 <= ratio <= 0.6
    return ok, f"excess ratio 8000/500 = {ratio:.3f}, band [0.15, 0.6]", rows


def test_criterion_4_rate_check():
    ok, detail, _ = cached(4, run_criterion_4)
    report(4, ok, detail)
    assert ok


# ---------------------------------------------------------------------------
# criteria 5-7, 10: experiment-harness sweeps


def _records_rows(records):
    rows = [["axis", "axis_value", "method", "replication", "mae"]]
    for rec in records:
        for rep, err in enumerate(rec.maes):
            rows.append([rec.axis, fmt(rec.axis_value) if not isinstance(rec.axis_value, str)
                         else str(rec.axis_value), rec.method, str(rep), fmt(err)])
    return rows


def run_criterion_5():
    plan = ExperimentPlan(
        axis="slope", axis_values=(0.0, 2.0, 4.0, 6.0),
        methods=("dr_lin:estimated", "invert_dr:estimated"),
        replications=30, base_seed=5001, eval_points=2000, n=500, dgp="sin_linear")
    records = run_experiment(plan, DEFAULTS, jobs=JOBS)
    by = {(r.method, r.axis_value): r for r in records}
    dr6 = by[("dr_lin:estimated", 6.0)]
    inv6 = by[("invert_dr:estimated", 6.0)]
    separated = dr6.mean + dr6.ci_halfwidth < inv6.mean - inv6.ci_halfwidth
    dr_means = [by[("dr_lin:estimated", g)].mean for g in (0.0, 2.0, 4.0, 6.0)]
    factor = max(dr_means) / min(dr_means)
    stable = factor < 2.0
    ok = separated and stable
    detail = (f"gamma=6: dr {dr6.mean:.2f}+-{dr6.ci_halfwidth:.2f} vs inv "
              f"{inv6.mean:.2f}+-{inv6.ci_halfwidth:.2f} (non-overlap: {separated}); "
              f"dr spread factor {factor:.2f} < 2: {stable}")
    return ok, detail, _records_rows(records)


def test_criterion_5_slope_replication():
    ok, detail, _ = cached(5, run_criterion_5)
    report(5, ok, detail)
    assert ok


def run_criterion_6():
    plan_both = ExperimentPlan(
        axis="nuisance_noise", axis_values=(0.0, 0.5),
        methods=("dr_lin:estimated", "ipw:estimated"),
        replications=30, base_seed=6001, eval_points=2000, n=500, gamma=2.0,
        dgp="sin_linear")
    rec_both = run_experiment(plan_both, DEFAULTS, jobs=JOBS)
    by = {(r.method, r.axis_value): r for r in rec_both}
    dr_inflation = by[("dr_lin:estimated", 0.5)].mean - by[("dr_lin:estimated", 0.0)].mean
    ipw_inflation = by[("ipw:estimated", 0.5)].mean - by[("ipw:estimated", 0.0)].mean
    first = dr_inflation < ipw_inflation

    # single-nuisance design: the propensity is pinned at its exact value
    # while the conditional CDFs are estimated, with noise added to the
    # estimates only
    plan_ccdf = ExperimentPlan(
        axis="nuisance_noise", axis_values=(0.0, 0.5),
        methods=("dr_lin:estimated",), noise_targets=("ccdf0", "ccdf1"),
        oracle_components=("propensity",),
        replications=30, base_seed=6002, eval_points=2000, n=500, gamma=2.0,
        dgp="sin_linear")
    rec_ccdf = run_experiment(plan_ccdf, DEFAULTS, jobs=JOBS)
    by2 = {r.axis_value: r for r in rec_ccdf}
    drift = abs(by2[0.5].mean - by2[0.0].mean)
    band = 2.0 * max(by2[0.0].ci_halfwidth, by2[0.5].ci_halfwidth)
    second = drift <= band
    ok = first and second
    detail = (f"inflation dr {dr_inflation:.2f} < ipw {ipw_inflation:.2f}: {first}; "
              f"ccdf-only drift {drift:.3f} <= 2 ci {band:.3f}: {second}")
    return ok, detail, _records_rows(rec_both) + _records_rows(rec_ccdf)[1:]


def test_criterion_6_double_robustness():
    ok, detail, _ = cached(6, run_criterion_6)
    report(6, ok, detail)
    assert ok


def run_criterion_7():
    plan = ExperimentPlan(
        axis="sample_size", axis_values=(250, 500, 1000, 2000),
        methods=("dr_lin:estimated",),
        replications=50, base_seed=7001, eval_points=2000, gamma=2.0, dgp="sin_linear")
    records = run_experiment(plan, DEFAULTS, jobs=JOBS)
    means = [r.mean for r in records]
    ok = all(means[i + 1] < means[i] for i in range(len(means) - 1))
    detail = "mae by n: " + ", ".join(f"{n}:{m:.2f}" for n, m in
                                      zip((250, 500, 1000, 2000), means))
    return ok, detail + f" (strictly decreasing: {ok})", _records_rows(records)


def test_criterion_7_sample_size_monotonicity():
    ok, detail, _ = cached(7, run_criterion_7)
    report(7, ok, detail)
    assert ok


# ---------------------------------------------------------------------------
# criterion 8: baseline correctness


def run_criterion_8():
    rows = [["dgp", "estimator", "max_err", "grid_spacing"]]
    ok = True
    rng = np.random.default_rng(8001)
    for kind in ("sin_linear", "cos_linear", "doubling"):
        dgp = make_dgp(kind, gamma=2.0, seed=8002)
        data = generate(dgp, 2000, seed=8003)
        nuis = oracle_nuisances(dgp)
        oracle = OracleCqc(dgp)
        xs = rng.normal(size=(1000, dgp.d))
        pool = data.y[data.a == 0]
        y0s = sample_y0_batch(Y0Sampler(kind="unconditional"), pool, xs, rng, size=1000)
        truth = oracle.evaluate(y0s, xs)
        # the grid must bracket every queried root: widen the outcome-based
        # default with the query range itself
        spec = default_grid_spec(np.concatenate([data.y, truth]), 1001)
        spacing = (spec[1] - spec[0]) / 1000.0
        assert np.all((truth > spec[0]) & (truth < spec[1]))
        inv_err = float(np.max(np.abs(invert_cqc_batch(nuis, y0s, xs, spec) - truth)))
        sl_err = float(np.max(np.abs(
            s_learner_cqc_batch(nuis.ccdf0, nuis.ccdf1, y0s, xs, spec) - truth)))
        ok &= inv_err <= spacing and sl_err <= spacing
        rows.append([kind, "invert", fmt(inv_err), fmt(spacing)])
        rows.append([kind, "s_learner", fmt(sl_err), fmt(spacing)])
    return ok, "inversion and s-learner within one grid spacing on all processes", rows


def test_criterion_8_baseline_correctness():
    ok, detail, _ = cached(8, run_criterion_8)
    report(8, ok, detail)
    assert ok


# ---------------------------------------------------------------------------
# criterion 9: network gradient integrity


def _min_preactivation(model, y0, x):
    h = np.concatenate([np.atleast_1d(y0)[:, None], np.atleast_2d(x)], axis=1)
    smallest = np.inf
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        z = h @ w + b
        smallest = min(smallest, float(np.min(np.abs(z))))
        h = np.maximum(z, 0.0) if model.activation == "relu" else np.tanh(z)
    return smallest


def run_criterion_9():
    rows = [["activation", "checked", "worst_rel_err", "tolerance"]]
    ok = True
    for activation, tol in (("tanh", 1e-4), ("relu", 1e-2)):
        model = MlpCqc(2, (20, 20), activation, seed=9001)
        rng = np.random.default_rng(9002)
        h = 1e-5
        worst, checked = 0.0, 0
        while checked < 100:
            y0 = float(rng.normal())
            x = rng.normal(size=(1, 2))
            if activation == "relu" and _min_preactivation(model, y0, x) < 1e-3:
                continue  # finite differences cannot straddle a kink
            _, grad = model.eval_and_grad(y0, x)
            theta0 = model.get_params()
            fd = np.zeros_like(theta0)
            for j in range(len(theta0)):
                tp, tm = theta0.copy(), theta0.copy()
                tp[j] += h
                tm[j] -= h
                model.set_params(tp)
                up = model.value(y0, x)
                model.set_params(tm)
                dn = model.value(y0, x)
                fd[j] = (up - dn) / (2 * h)
            model.set_params(theta0)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-8)
            worst = max(worst, float(rel))
            checked += 1
        ok &= worst <= tol
        rows.append([activation, str(checked), fmt(worst), fmt(tol)])
    return ok, "reverse-mode vs central differences within tolerance", rows


def test_criterion_9_mlp_gradients():
    ok, detail, _ = cached(9, run_criterion_9)
    report(9, ok, detail)
    assert ok


# ---------------------------------------------------------------------------
# criterion 10: y0 sampler insensitivity


def run_criterion_10():
    plan = ExperimentPlan(
        axis="y0_sampler", axis_values=("uniform", "unconditional", "conditional"),
        methods=("dr_lin:estimated",),
        replications=30, base_seed=10001, eval_points=2000, n=2000, gamma=2.0,
        dgp="cos_linear")
    records = run_experiment(plan, DEFAULTS, jobs=JOBS)
    cells = [(r.mean, r.ci_halfwidth) for r in records]
    ok = all(abs(a[0] - b[0]) <= a[1] + b[1]
             for i, a in enumerate(cells) for b in cells[i + 1:])
    detail = "; ".join(f"{r.axis_value}: {r.mean:.3f}+-{r.ci_halfwidth:.3f}"
                       for r in records) + f" (pairwise overlap: {ok})"
    return ok, detail, _records_rows(records)


def test_criterion_10_sampler_insensitivity():
    ok, detail, _ = cached(10, run_criterion_10)
    report(10, ok, detail)
    assert ok


# ---------------------------------------------------------------------------
# criterion 11: determinism


RUNNERS = {
    1: run_criterion_1, 2: run_criterion_2, 3: run_criterion_3, 4: run_criterion_4,
    5: run_criterion_5, 6: run_criterion_6, 7: run_criterion_7, 8: run_criterion_8,
    9: run_criterion_9, 10: run_criterion_10,
}


def test_criterion_11_determinism():
    ok = True
    mismatched = []
    for num, runner in RUNNERS.items():
        _, _, first_rows = cached(num, runner)
        _, _, second_rows = runner()
        if to_csv_bytes(first_rows) != to_csv_bytes(second_rows):
            ok = False
            mismatched.append(num)
    detail = "all criteria rerun bit-identically" if ok else \
        f"criteria with non-identical reruns: {mismatched}"
    report(11, ok, detail)
    assert ok

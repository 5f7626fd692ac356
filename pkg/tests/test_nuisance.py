import numpy as np
import pytest
from scipy.special import expit, ndtr

from cqcdirect.dataset import Dataset
from cqcdirect.errors import ConfigError, DataError
from cqcdirect.nuisance import (
    GaussianCcdf,
    KernelCcdf,
    LogitNoise,
    PerturbedCcdf,
    PerturbedPropensity,
    PropensityModel,
    fit_ccdf,
    fit_propensity,
    oracle_nuisances,
    perturb,
    select_bandwidth,
)
from cqcdirect.simlab import make_dgp


class TestFitPropensity:
    def test_symmetric_data_gives_half(self):
        n = 40
        data = Dataset(np.zeros(n), np.zeros((n, 1)), np.array([0, 1] * (n // 2)))
        model = fit_propensity(data)
        x = np.random.default_rng(0).normal(size=(5, 1))
        assert np.allclose(model.evaluate(x), 0.5, atol=1e-9)

    def test_separable_penalised_stays_finite(self):
        x = np.concatenate([-np.abs(np.random.default_rng(1).normal(size=30)) - 0.1,
                            np.abs(np.random.default_rng(2).normal(size=30)) + 0.1])
        a = (x > 0).astype(int)
        data = Dataset(np.zeros(60), x.reshape(-1, 1), a)
        model = fit_propensity(data, l2=0.1)
        assert np.all(np.isfinite(model.beta))
        grid = np.linspace(-3, 3, 9).reshape(-1, 1)
        assert np.all(np.diff(model.evaluate(grid)) >= 0)

    def test_recovers_generating_coefficients(self):
        # oracle: data simulated from a known logistic assignment; the
        # penalised MLE at n=1e5 should land within 5% relative error
        rng = np.random.default_rng(3)
        v = np.array([1.2, -0.7, 0.4])
        x = rng.normal(size=(100_000, 3))
        a = (rng.uniform(size=len(x)) < expit(x @ v)).astype(int)
        model = fit_propensity(Dataset(np.zeros(len(x)), x, a))
        assert np.linalg.norm(model.beta - v) / np.linalg.norm(v) < 0.05

    def test_single_arm_rejected(self):
        data = Dataset(np.zeros(10), np.zeros((10, 1)), np.ones(10, dtype=int))
        with pytest.raises(DataError, match="degenerate treatment assignment"):
            fit_propensity(data)

    def test_objective_nonincreasing_and_gradient_tolerance(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(500, 2))
        a = (rng.uniform(size=500) < expit(x[:, 0])).astype(int)
        data = Dataset(np.zeros(500), x, a)
        model = fit_propensity(data)
        design = np.concatenate([x, np.ones((500, 1))], axis=1)
        coef = np.concatenate([model.beta, [model.beta0]])
        p = expit(design @ coef)
        l2 = 1.0 / 500
        grad = design.T @ (p - a) + np.concatenate([np.full(2, l2), [0.0]]) * coef
        assert np.linalg.norm(grad) <= 1e-8

    def test_clip_applied(self):
        model = PropensityModel(beta=np.array([10.0]), beta0=0.0, clip=0.05)
        assert model.evaluate(np.array([[5.0]]))[0] == 0.95
        assert model.evaluate(np.array([[-5.0]]))[0] == 0.05


class TestKernelCcdf:
    def test_single_point_indicator(self):
        model = KernelCcdf(1, np.array([1.0]), np.array([[0.0]]), bandwidth=1.0)
        for x in (-3.0, 0.0, 2.0):
            assert model.evaluate(0.99, np.array([x])) == 0.0
            assert model.evaluate(1.0, np.array([x])) == 1.0  # closed on the right
            assert model.evaluate(5.0, np.array([x])) == 1.0

    def test_identical_x_gives_empirical_cdf(self):
        model = KernelCcdf(0, np.array([1.0, 2.0]), np.zeros((2, 1)), bandwidth=0.5)
        x = np.array([0.0])
        assert model.evaluate(0.5, x) == 0.0
        assert model.evaluate(1.0, x) == 0.5
        assert model.evaluate(1.5, x) == 0.5
        assert model.evaluate(2.0, x) == 1.0

    def test_weight_ratio_hand_value(self):
        # oracle: exp(0) vs exp(-8) weights give 1/(1+e^-8)
        model = KernelCcdf(1, np.array([0.0, 10.0]),
                           np.array([[0.0], [4.0]]), bandwidth=1.0)
        got = model.evaluate(5.0, np.array([0.0]))
        assert got == pytest.approx(1.0 / (1.0 + np.exp(-8.0)), rel=1e-12)

    def test_monotone_in_y_range_01(self):
        rng = np.random.default_rng(5)
        model = KernelCcdf(1, rng.normal(size=40), rng.normal(size=(40, 2)), bandwidth=0.7)
        xs = rng.normal(size=(10, 2))
        grid = np.sort(rng.normal(size=50)) * 3
        vals = model.evaluate_grid(np.broadcast_to(grid, (10, 50)), xs)
        assert np.all(vals >= 0.0) and np.all(vals <= 1.0)
        assert np.all(np.diff(vals, axis=1) >= 0.0)

    def test_outside_range_exact_0_1(self):
        rng = np.random.default_rng(6)
        model = KernelCcdf(0, rng.normal(size=20), rng.normal(size=(20, 1)), bandwidth=1.0)
        x = rng.normal(size=(3, 1))
        lo = model.train_y.min() - 1.0
        hi = model.train_y.max() + 1.0
        assert np.all(model.evaluate(np.full(3, lo), x) == 0.0)
        assert np.all(model.evaluate(np.full(3, hi), x) == 1.0)

    def test_bad_bandwidth(self):
        with pytest.raises(ConfigError):
            KernelCcdf(0, np.array([1.0]), np.array([[0.0]]), bandwidth=0.0)

    def test_empty_arm(self):
        data = Dataset(np.ones(4), np.zeros((4, 1)), np.ones(4, dtype=int))
        with pytest.raises(DataError):
            fit_ccdf(data, 0, 1.0)

    def test_json_round_trip(self):
        rng = np.random.default_rng(7)
        model = KernelCcdf(1, rng.normal(size=8), rng.normal(size=(8, 2)), bandwidth=1.3)
        back = KernelCcdf.from_json(model.to_json())
        xs = rng.normal(size=(4, 2))
        ys = rng.normal(size=4)
        assert np.allclose(back.evaluate(ys, xs), model.evaluate(ys, xs))


class TestSelectBandwidth:
    def test_singleton_grid(self):
        data = Dataset(np.arange(6.0), np.zeros((6, 1)), np.array([0, 1] * 3))
        assert select_bandwidth(data, 1, [2.5]) == 2.5

    def test_oracle_validation_prefers_pooling_when_x_irrelevant(self):
        # oracle scoring against the exact x-free normal CDF: the huge
        # bandwidth pools everything and must win
        rng = np.random.default_rng(8)
        n = 300
        y = rng.normal(size=n)
        x = rng.normal(size=(n, 1))
        data = Dataset(y, x, np.ones(n, dtype=int))
        truth = GaussianCcdf(lambda xs: np.zeros(len(xs)), 1.0, d=1)
        assert select_bandwidth(data, 1, [0.5, 1e6], oracle=truth) == 1e6

    def test_tie_breaks_small(self):
        # one training point per arm: every bandwidth gives the same step CDF
        data = Dataset(np.array([0.0, 1.0]), np.zeros((2, 1)), np.array([0, 1]))
        assert select_bandwidth(data, 1, [3.0, 1.0, 2.0]) == 1.0

    def test_empty_grid(self):
        data = Dataset(np.arange(4.0), np.zeros((4, 1)), np.array([0, 1, 0, 1]))
        with pytest.raises(ConfigError):
            select_bandwidth(data, 1, [])


class TestPerturb:
    def _nuisances(self):
        return oracle_nuisances(make_dgp("cos_linear", gamma=2.0, seed=0))

    def test_level_zero_identity(self):
        nuis = self._nuisances()
        out = perturb(nuis, LogitNoise(level=0.0, seed=3))
        rng = np.random.default_rng(9)
        xs = rng.normal(size=(1000, 1))
        ys = rng.normal(size=1000) * 2
        assert np.array_equal(out.pi(xs), nuis.pi(xs))
        assert np.array_equal(out.ccdf0.evaluate(ys, xs), nuis.ccdf0.evaluate(ys, xs))
        assert np.array_equal(out.ccdf1.evaluate(ys, xs), nuis.ccdf1.evaluate(ys, xs))

    def test_untargeted_pass_through(self):
        nuis = self._nuisances()
        out = perturb(nuis, LogitNoise(level=1.0, seed=3, targets=frozenset({"propensity"})))
        rng = np.random.default_rng(10)
        xs = rng.normal(size=(100, 1))
        ys = rng.normal(size=100)
        assert out.ccdf0 is nuis.ccdf0 and out.ccdf1 is nuis.ccdf1
        assert not np.allclose(out.pi(xs), nuis.pi(xs))
        assert np.array_equal(out.ccdf1.evaluate(ys, xs), nuis.ccdf1.evaluate(ys, xs))

    def test_logit_shift_hand_value(self):
        # oracle: sigmoid(logit(0.5) + 1) = sigmoid(1)
        base = GaussianCcdf(lambda xs: np.zeros(len(xs)), 1.0, d=1)
        wrapped = PerturbedCcdf(base, level=1.0, bias=1.0, field_fn=lambda x, yt=None: 0.0)
        got = wrapped.evaluate(0.0, np.array([0.7]))  # base value exactly 0.5
        assert got == pytest.approx(expit(1.0), rel=1e-12)

    def test_propensity_hand_value(self):
        class Half:
            d = 1
            clip = 0.01
            def evaluate(self, x):
                return np.full(len(np.atleast_2d(x)), 0.5)

        wrapped = PerturbedPropensity(Half(), level=1.0, bias=1.0,
                                      field_fn=lambda x: 0.0)
        assert wrapped.evaluate(np.array([[0.0]]))[0] == pytest.approx(expit(1.0))

    def test_perturbed_ccdf_monotone_valid(self):
        nuis = self._nuisances()
        for level in (0.25, 0.5, 1.0, 2.0):
            out = perturb(nuis, LogitNoise(level=level, seed=11))
            rng = np.random.default_rng(12)
            xs = rng.normal(size=(50, 1))
            grid = np.broadcast_to(np.linspace(-12, 12, 200), (50, 200))
            vals = out.ccdf1.evaluate_grid(grid, xs)
            assert np.all(vals >= 0) and np.all(vals <= 1)
            assert np.all(np.diff(vals, axis=1) >= -1e-12)

    def test_perturbed_kernel_ccdf_monotone(self):
        rng = np.random.default_rng(13)
        base = KernelCcdf(1, rng.normal(size=30), rng.normal(size=(30, 1)), bandwidth=0.8)
        from cqcdirect.nuisance import NuisanceSet, OraclePropensity
        nuis = NuisanceSet(OraclePropensity(lambda x: x[:, 0], 1), base, base, "fitted")
        out = perturb(nuis, LogitNoise(level=1.5, seed=14))
        xs = rng.normal(size=(20, 1))
        grid = np.broadcast_to(np.linspace(-6, 6, 300), (20, 300))
        vals = out.ccdf1.evaluate_grid(grid, xs)
        assert np.all(np.diff(vals, axis=1) >= -1e-12)
        assert np.all(vals[:, 0] == 0.0) and np.all(vals[:, -1] == 1.0)

    def test_level_validation(self):
        with pytest.raises(ConfigError):
            LogitNoise(level=-0.5)
        with pytest.raises(ConfigError):
            LogitNoise(level=1.0, targets=frozenset({"bogus"}))


class TestOracleNuisances:
    def test_gaussian_ccdf_values(self):
        dgp = make_dgp("cos_linear", gamma=2.0, seed=1)
        nuis = oracle_nuisances(dgp)
        x = np.array([[0.3]])
        y = np.array([1.2])
        mu0 = np.cos(6 * 0.3)
        assert nuis.ccdf0.evaluate(y, x)[0] == pytest.approx(ndtr((1.2 - mu0) / 1.0))
        mu1 = 2 * np.cos(6 * 0.3) + 2.0 * 0.3
        assert nuis.ccdf1.evaluate(y, x)[0] == pytest.approx(ndtr((1.2 - mu1) / 2.0))

    def test_propensity_clip(self):
        dgp = make_dgp("cos_linear", gamma=0.0, v=(1.0,))
        nuis = oracle_nuisances(dgp, clip=0.02)
        assert nuis.pi(np.array([[100.0]]))[0] == 0.98
        assert nuis.pi(np.array([[-100.0]]))[0] == 0.02


class TestFittedCcdfProperty:
    def test_random_monotonicity_sweep(self):
        rng = np.random.default_rng(15)
        data = Dataset(rng.normal(size=60), rng.normal(size=(60, 2)),
                       rng.integers(0, 2, size=60))
        for arm in (0, 1):
            model = fit_ccdf(data, arm, bandwidth=0.9)
            xs = rng.normal(size=(25, 2))
            a = rng.normal(size=25) - 0.5
            b = a + np.abs(rng.normal(size=25))
            va = model.evaluate(a, xs)
            vb = model.evaluate(b, xs)
            assert np.all(vb >= va)
            assert np.all((0 <= va) & (va <= 1) & (0 <= vb) & (vb <= 1))

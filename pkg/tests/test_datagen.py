import math

import numpy as np
import pytest

from deepin.datagen import SyntheticSpec, build_signal, covariance, draw_B0, gen_X, gen_setting
from deepin.errors import ContractViolation
from deepin.model import DeepInModel, PenaltyConfig
from deepin.network import RepuNetwork
from deepin.numerics import make_rng
from deepin.trainer import TrainOptions, train


class TestGenX:
    def test_independent_columns(self):
        n = 4000
        X = gen_X(n, 5, 0.0, "equicorrelated", make_rng(0))
        C = np.corrcoef(X.T)
        off = C[~np.eye(5, dtype=bool)]
        assert np.all(np.abs(off) <= 3 / math.sqrt(n))

    def test_equicorrelated(self):
        X = gen_X(100_000, 4, 0.2, "equicorrelated", make_rng(1))
        off = np.corrcoef(X.T)[~np.eye(4, dtype=bool)]
        assert np.all(np.abs(off - 0.2) <= 0.01)

    def test_ar1(self):
        X = gen_X(100_000, 4, 0.5, "ar1", make_rng(2))
        assert abs(np.corrcoef(X[:, 0], X[:, 2])[0, 1] - 0.25) <= 0.02

    def test_covariance_forms(self):
        np.testing.assert_allclose(covariance(3, 0.5, "ar1")[0], [1, 0.5, 0.25])
        np.testing.assert_allclose(covariance(2, 0.3), [[1, 0.3], [0.3, 1]])

    @pytest.mark.parametrize("rho,scheme", [(1.0, "ar1"), (-0.1, "ar1"), (0.1, "toeplitz")])
    def test_invalid(self, rho, scheme):
        with pytest.raises(ContractViolation):
            covariance(3, rho, scheme)


class TestB0:
    def test_orthonormal_rows_on_support(self):
        B0 = draw_B0(3, 6, 20, make_rng(0))
        np.testing.assert_allclose(B0 @ B0.T, np.eye(3), atol=1e-12)
        assert not np.any(B0[:, 6:])
        assert np.all(np.sum(B0[:, :6] ** 2, axis=0) >= 0.5 * 3 / 6)


class TestSettings:
    @pytest.mark.parametrize("setting", [1, 2, 3, 4])
    def test_support_matches_b0(self, setting):
        ds = gen_setting(SyntheticSpec(setting=setting, n=200, d=30, s0=10, seed=setting))
        cols = np.flatnonzero(np.any(ds.truth.B0 != 0, axis=0))
        assert ds.truth.support.tolist() == cols.tolist() == list(range(10))
        assert np.all(np.isfinite(ds.truth.f0))
        assert ds.X.shape == (200, 30) and ds.y.shape == (200,)

    def test_default_dims(self):
        assert SyntheticSpec(setting=3).d0 == 10
        assert SyntheticSpec(setting=2).d0 == 5

    def test_noiseless(self):
        ds = gen_setting(SyntheticSpec(setting=1, n=300, d=20, sigma=0.0, seed=3))
        assert np.array_equal(ds.y, ds.truth.f0)
        assert np.mean((ds.signal(ds.X) - ds.y) ** 2) == 0.0

    def test_bitwise_reproducible(self):
        spec = SyntheticSpec(setting=3, n=100, d=20, seed=8)
        a, b = gen_setting(spec), gen_setting(spec)
        assert a.X.tobytes() == b.X.tobytes()
        assert a.y.tobytes() == b.y.tobytes()

    def test_seed_changes_data(self):
        a = gen_setting(SyntheticSpec(n=50, d=20, seed=1))
        b = gen_setting(SyntheticSpec(n=50, d=20, seed=2))
        assert not np.array_equal(a.X, b.X)

    @pytest.mark.parametrize("setting", [1, 2, 3, 4])
    def test_signal_unit_variance(self, setting):
        ds = gen_setting(SyntheticSpec(setting=setting, n=20_000, d=20, seed=5))
        assert abs(np.var(ds.truth.f0) - 1.0) <= 0.05

    def test_balanced_labels_without_signal(self):
        ds = gen_setting(SyntheticSpec(setting=4, n=10_000, d=10, signal_scale=0.0, seed=4))
        assert not np.any(ds.truth.f0)
        assert abs(ds.y.mean() - 0.5) <= 0.02
        assert set(np.unique(ds.y)) == {0.0, 1.0}

    def test_fresh_samples_share_signal(self):
        signal, _ = build_signal(SyntheticSpec(setting=2, d=15, seed=1))
        X, _, f0 = signal.sample(10, make_rng(3))
        np.testing.assert_array_equal(signal(X), f0)

    @pytest.mark.parametrize("kw", [{"setting": 5}, {"d0": 6, "s0": 5}, {"s0": 300},
                                    {"rho": 1.0}, {"sigma": -1.0}])
    def test_invalid_spec(self, kw):
        with pytest.raises(ContractViolation):
            SyntheticSpec(**kw)

    def test_teacher_is_learnable_with_oracle_b0(self):
        spec = SyntheticSpec(setting=3, n=5000, d=30, seed=2)
        ds = gen_setting(spec)
        rng = make_rng(7)
        net = RepuNetwork.initialize((spec.d0, 32, 1), rng)
        model = DeepInModel(ds.truth.B0, net, frozen_B=True)
        opts = TrainOptions(epochs=100, batch_size=64, truncate=False)
        fitted, _ = train(model, ds.X, ds.y, PenaltyConfig(), opts)
        Xt, yt, _ = ds.signal.sample(5000, make_rng(11))
        assert np.mean((fitted.predict(Xt) - yt) ** 2) <= 2 * spec.sigma**2

"""Scikit-learn interface compliance for the enhancer facade."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from relight import LowLightEnhancer
from relight.errors import ShapeError
from relight.estimator import validate_images


@pytest.fixture
def tiny_pairs(rng):
    gts = [rng.uniform(0, 1, size=(16, 16, 3)) for _ in range(3)]
    lows = [np.clip(0.3 * g ** 2, 0, 1) for g in gts]
    return lows, gts


def _fast_enhancer(**overrides):
    kwargs = dict(base_width=4, blocks="1,1,1", iterations=2, batch_size=1,
                  patch_size=16, seed=0)
    kwargs.update(overrides)
    return LowLightEnhancer(**kwargs)


class TestParams:
    def test_get_params_round_trip(self):
        est = _fast_enhancer(lr=1e-3)
        params = est.get_params()
        assert params["lr"] == 1e-3
        assert params["base_width"] == 4
        est.set_params(tau=2)
        assert est.get_params()["tau"] == 2

    def test_clone_preserves_configuration(self):
        est = _fast_enhancer(lr=5e-4, modalities="depth,luminance")
        twin = clone(est)
        assert twin.get_params() == est.get_params()
        assert twin is not est


class TestFitTransform:
    def test_fit_returns_self_and_sets_state(self, tiny_pairs):
        lows, gts = tiny_pairs
        est = _fast_enhancer()
        assert est.fit(lows, gts) is est
        assert hasattr(est, "model_")
        assert len(est.train_records_) >= 1

    def test_transform_shapes_and_range(self, tiny_pairs):
        lows, gts = tiny_pairs
        est = _fast_enhancer().fit(lows, gts)
        out = est.transform(lows[:2])
        assert out.shape == (2, 16, 16, 3)
        assert np.all(np.isfinite(out))

    def test_predict_is_transform(self, tiny_pairs):
        lows, gts = tiny_pairs
        est = _fast_enhancer().fit(lows, gts)
        assert np.array_equal(est.predict(lows[:1]), est.transform(lows[:1]))

    def test_transform_before_fit_rejected(self, tiny_pairs):
        lows, _ = tiny_pairs
        with pytest.raises(NotFittedError):
            _fast_enhancer().transform(lows)

    def test_mismatched_pair_counts_rejected(self, tiny_pairs):
        lows, gts = tiny_pairs
        with pytest.raises(ValueError):
            _fast_enhancer().fit(lows, gts[:2])


class TestValidation:
    def test_rejects_wrong_rank(self):
        with pytest.raises(ShapeError):
            validate_images([np.zeros((16, 16))])

    def test_rejects_indivisible_extents(self):
        with pytest.raises(ShapeError):
            validate_images([np.zeros((10, 10, 3))])

    def test_rejects_out_of_range_values(self):
        with pytest.raises(ValueError):
            validate_images([np.full((16, 16, 3), 1.5)])

    def test_rejects_empty_batch(self):
        with pytest.raises(ValueError):
            validate_images([])

import numpy as np
import pytest
from sklearn.base import clone

from lanepoly import data
from lanepoly.estimator import (LaneCurveRegressor, check_annotation_list,
                                check_image_list)
from lanepoly.metrics import PolyLanePred


def tiny_dataset(n=3):
    spec = data.SyntheticSpec(image_size=(64, 36), lane_range=(1, 2),
                              row_step_px=4)
    images, annos = data.generate_synthetic(17, n, spec)
    return images, annos


class TestValidation:
    def test_rejects_empty_x(self):
        with pytest.raises(ValueError):
            check_image_list([])

    def test_rejects_bad_ndim(self):
        with pytest.raises(ValueError):
            check_image_list([np.zeros((2, 2, 2, 2))])

    def test_rejects_length_mismatch(self):
        _, annos = tiny_dataset(2)
        with pytest.raises(ValueError):
            check_annotation_list(annos, 3)

    def test_rejects_non_annotations(self):
        with pytest.raises(ValueError):
            check_annotation_list(["not an annotation"], 1)


class TestEstimator:
    def test_get_set_params_and_clone(self):
        est = LaneCurveRegressor(degree=2, epochs=3)
        params = est.get_params()
        assert params["degree"] == 2 and params["epochs"] == 3
        cloned = clone(est)
        assert cloned.get_params() == params
        est.set_params(seed=5)
        assert est.seed == 5

    def test_predict_before_fit_raises(self):
        images, _ = tiny_dataset(1)
        with pytest.raises(RuntimeError):
            LaneCurveRegressor().predict(images)

    def test_fit_predict_score_smoke(self):
        images, annos = tiny_dataset(2)
        est = LaneCurveRegressor(degree=2, m_max=2, input_size=(16, 12),
                                 channels=(4, 6), epochs=3, batch_size=2,
                                 seed=0, conf_threshold=0.0)
        est.fit(images, annos)
        assert hasattr(est, "params_") and len(est.log_) == 3
        preds = est.predict(images)
        assert len(preds) == 2
        for lanes in preds:
            for p in lanes:
                assert isinstance(p, PolyLanePred)
        score = est.score(images, annos)
        assert 0.0 <= score <= 1.0
        rep = est.report(images, annos)
        assert rep.n_images == 2

    def test_fit_deterministic(self):
        images, annos = tiny_dataset(2)
        kwargs = dict(degree=2, m_max=2, input_size=(16, 12), channels=(4, 6),
                      epochs=3, batch_size=2, seed=4)
        a = LaneCurveRegressor(**kwargs).fit(images, annos)
        b = LaneCurveRegressor(**kwargs).fit(images, annos)
        for n in a.params_:
            np.testing.assert_array_equal(a.params_[n], b.params_[n])

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from vsa_lab.errors import DimensionError, NumericInputError
from vsa_lab.estimator import VSAClassifier
from vsa_lab.validation import check_images, check_images_labels


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(0)
    X = rng.random((12, 16, 16, 3))
    X[:6, :8] += 1.0
    y = np.array(["top"] * 6 + ["bottom"] * 6)
    return X, y


@pytest.fixture(scope="module")
def fitted(toy):
    return VSAClassifier(preset="swin_nano", steps=60, batch_size=6, lr=3e-3, warmup_steps=5,
                         dtype="float64").fit(*toy)


def test_params_round_trip_and_clone():
    est = VSAClassifier(preset="swin_nano", vsa_stages=(3, 4), steps=7)
    params = est.get_params()
    assert params["vsa_stages"] == (3, 4) and params["steps"] == 7
    twin = clone(est)
    assert twin.get_params() == params and not hasattr(twin, "model_")
    est.set_params(lr=0.01)
    assert est.lr == 0.01


def test_fit_predict(fitted, toy):
    X, y = toy
    assert list(fitted.classes_) == ["bottom", "top"]
    assert fitted.n_features_in_ == 16 * 16 * 3
    assert len(fitted.loss_curve_) == 60
    proba = fitted.predict_proba(X)
    np.testing.assert_allclose(proba.sum(1), 1.0, atol=1e-12)
    assert fitted.score(X, y) == 1.0
    assert set(fitted.predict(X[:1])) <= {"bottom", "top"}


def test_fit_is_seeded(toy):
    kw = dict(preset="swin_nano", steps=5, batch_size=4, dtype="float64", random_state=3)
    a = VSAClassifier(**kw).fit(*toy)
    b = VSAClassifier(**kw).fit(*toy)
    assert a.loss_curve_ == b.loss_curve_


def test_window_transforms(fitted, toy):
    tr = fitted.window_transforms(toy[0][:2])
    assert [lid for lid, _ in tr] == [0, 1, 2, 3]
    assert tr[0][1].scale.shape == (2, 4, 2, 2)


def test_unfitted_and_bad_inputs(fitted):
    with pytest.raises(NotFittedError):
        VSAClassifier().predict(np.zeros((1, 16, 16, 3)))
    with pytest.raises(DimensionError):
        fitted.predict(np.zeros((1, 32, 32, 3)))
    with pytest.raises(ValueError):
        VSAClassifier(preset="swin_nano").fit(np.zeros((2, 16, 16, 3)), [1, 1])


def test_validation_helpers():
    assert check_images(np.zeros((16, 16, 3))).shape == (1, 16, 16, 3)
    with pytest.raises(DimensionError):
        check_images(np.zeros((2, 16, 8, 3)))
    with pytest.raises(DimensionError):
        check_images(np.zeros((2, 16, 16)))
    with pytest.raises(NumericInputError):
        check_images(np.full((1, 4, 4, 3), np.nan))
    with pytest.raises(NumericInputError):
        check_images(np.array([[["a"] * 3] * 4] * 4))
    with pytest.raises(DimensionError):
        check_images_labels(np.zeros((2, 4, 4, 3)), [0, 1, 2])

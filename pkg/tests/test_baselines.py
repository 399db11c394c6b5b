import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from monoheight.baselines import (
    ConstantMean,
    GenderMean,
    PoseNetOffset,
    baseline_from_dict,
    calibrate_posenet_offset,
    fit_constant_mean,
    fit_gender_mean,
    fit_posenet_offset,
    read_raw_predictions,
)
from monoheight.errors import EmptyInput, SpecError, ValidationError
from monoheight.records import Gender

F, M, U = Gender.FEMALE, Gender.MALE, Gender.UNKNOWN
heights = st.lists(st.floats(100, 250), min_size=1, max_size=50)


def test_constant_mean():
    model = fit_constant_mean([160.0, 170.0, 180.0])
    assert model.mean_cm == 170.0
    np.testing.assert_array_equal(model.predict(4), np.full(4, 170.0))
    np.testing.assert_array_equal(model.predict([F, M]), model.predict([U, U]))
    with pytest.raises(EmptyInput):
        fit_constant_mean([])


@given(heights)
def test_constant_mean_is_train_mean(hs):
    assert fit_constant_mean(hs).mean_cm == pytest.approx(np.mean(hs), rel=1e-15, abs=1e-12)


def test_gender_mean():
    model = fit_gender_mean([160.0, 170.0, 180.0], [F, F, M])
    assert (model.female_cm, model.male_cm) == (165.0, 180.0)
    np.testing.assert_array_equal(model.predict([F, M, U]), [165.0, 180.0, model.overall_cm])
    assert model.overall_cm == pytest.approx(170.0)
    with pytest.raises(ValidationError):
        fit_gender_mean([160.0], [F, M])


def test_gender_mean_single_gender_warns(caplog):
    with caplog.at_level(logging.WARNING):
        model = fit_gender_mean([160.0, 170.0], [F, F])
    assert "male" in caplog.text.lower()
    np.testing.assert_array_equal(model.predict([F, M, U]), [165.0, 165.0, 165.0])


@given(st.lists(st.tuples(st.floats(100, 250), st.sampled_from([F, M])), min_size=1, max_size=40))
def test_gender_mean_restricted_equals_constant(rows):
    hs, gs = zip(*rows)
    model = fit_gender_mean(hs, gs)
    for g in (F, M):
        sub = [h for h, gg in rows if gg is g]
        if sub:
            assert model.height_for(g) == fit_constant_mean(sub).mean_cm


def test_gender_mean_beats_constant_on_bimodal_data(rng):
    n = 4000
    genders = [M if b else F for b in rng.random(n) < 0.5]
    h = np.array([rng.normal(177 if g is M else 164, 7) for g in genders])
    gm = fit_gender_mean(h[: n // 2], genders[: n // 2])
    cm = fit_constant_mean(h[: n // 2])
    test_h, test_g = h[n // 2 :], genders[n // 2 :]
    assert np.mean(np.abs(gm.predict(test_g) - test_h)) < np.mean(np.abs(cm.predict(test_g) - test_h))


def test_offset_examples():
    assert calibrate_posenet_offset([0.0, 0.0, 0.0], [3.0, 5.0, 4.0]) == 4.0
    assert calibrate_posenet_offset([170.0, 160.0], [170.0, 160.0]) == 0.0
    assert calibrate_posenet_offset([0.0, 0.0, 0.0], [3.0, 5.0, 10.0], "median") == 5.0
    with pytest.raises(EmptyInput):
        calibrate_posenet_offset([], [])
    with pytest.raises(SpecError):
        calibrate_posenet_offset([1.0], [2.0], "mode")
    with pytest.raises(ValidationError):
        calibrate_posenet_offset([float("nan")], [2.0])


@given(
    st.lists(st.tuples(st.floats(120, 220), st.floats(120, 220)), min_size=1, max_size=30),
    st.floats(-50, 50),
    st.sampled_from(["mean", "median"]),
)
def test_offset_shift_invariance(pairs, b, method):
    pred, true = map(np.array, zip(*pairs))
    base = fit_posenet_offset(pred, true, method)
    shifted = fit_posenet_offset(pred + b, true, method)
    assert shifted.offset_cm == pytest.approx(base.offset_cm - b, abs=1e-9)
    np.testing.assert_allclose(shifted.predict(pred + b), base.predict(pred), atol=1e-9)


def test_raw_predictions_csv(tmp_path):
    path = tmp_path / "raw.csv"
    path.write_text("example_id,raw_height_cm\nimg1/a,160.5\nimg2/b,171\n")
    assert read_raw_predictions(path) == {"img1/a": 160.5, "img2/b": 171.0}
    path.write_text("id,height\nx,1\n")
    with pytest.raises(ValidationError):
        read_raw_predictions(path)
    path.write_text("example_id,raw_height_cm\nx,inf\n")
    with pytest.raises(ValidationError):
        read_raw_predictions(path)


@pytest.mark.parametrize("model", [ConstantMean(170.1), GenderMean(164.0, 177.0, 170.5), PoseNetOffset(7.5, "median")])
def test_baseline_round_trip(model):
    assert baseline_from_dict(model.to_dict()) == model

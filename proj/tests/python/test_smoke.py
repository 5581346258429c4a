"""Smoke tests for the volseg Python module."""

import numpy as np
import pytest

import volseg


def test_phantom_and_metrics():
    vol, left, right = volseg.generate_phantom(size=32, seed=1)
    assert vol.shape == (32, 32, 32) and vol.dtype == np.float32
    assert left.dtype == np.uint8
    assert not np.any(left & right)
    fused = volseg.fuse_masks(left, right)
    np.testing.assert_array_equal(fused, left | right)
    m = volseg.metrics(fused, fused)
    assert m == {"dsc": 1.0, "sensitivity": 1.0, "ppv": 1.0, "iou": 1.0}
    c = volseg.confusion_counts(left, fused)
    assert c["tp"] == int(left.sum()) and c["fn"] == int(right.sum()) and c["fp"] == 0


def test_srv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    vol = rng.standard_normal((4, 3, 2)).astype(np.float32)
    volseg.write_srv(tmp_path / "v.srv", vol, (1.0, 2.0, 3.0))
    back, spacing = volseg.read_volume(tmp_path / "v.srv")
    np.testing.assert_array_equal(back, vol)
    assert tuple(spacing) == (1.0, 2.0, 3.0)
    mask = (vol > 0).astype(np.uint8)
    volseg.write_srv(tmp_path / "m.srv", mask)
    np.testing.assert_array_equal(volseg.read_mask(tmp_path / "m.srv")[0], mask)
    with pytest.raises(volseg.IoError):
        volseg.read_volume(tmp_path / "missing.srv")


def test_preprocess_shapes():
    vol, left, right = volseg.generate_phantom(size=32, seed=3)
    out, mask = volseg.preprocess_case(vol, left, right, (32, 16, 16), margin=0)
    assert out.shape == (16, 16, 32) and mask.shape == (16, 16, 32)
    assert abs(float(out.mean())) < 1e-5
    with pytest.raises(volseg.ShapeError):
        volseg.preprocess_case(vol, left, right, (8, 8, 8))
    z = volseg.zscore_normalize(vol)
    assert abs(float(z.std()) - 1.0) < 1e-4
    np.testing.assert_array_equal(volseg.binarize(np.array([[[0.2, 0.5, 0.9]]], np.float32), 0.5), [[[0, 1, 1]]])


def test_unet_train_predict_save(tmp_path):
    assert volseg.param_count("paper") > volseg.param_count("desk")
    assert volseg.param_count(schedule=[1, 1]) == 128
    net = volseg.UNet("desk", seed=0)
    assert net.parameter_count == volseg.param_count("desk")
    assert net.parameter_names[-1] == "head.bias"
    vols, masks = [], []
    for i in range(2):
        v, l, r = volseg.generate_phantom(size=16, seed=5, index=i, semi_axis_min=2, semi_axis_max=3, center_jitter=1)
        vols.append(volseg.zscore_normalize(v))
        masks.append(volseg.fuse_masks(l, r))
    history = net.fit(vols, masks, epochs=2)
    assert [h["epoch"] for h in history] == [1, 2]
    assert np.isnan(history[0]["test_iou"])
    prob = net.predict_probability(vols[0])
    assert prob.shape == (16, 16, 16) and 0.0 <= prob.min() and prob.max() <= 1.0
    net.save(tmp_path / "m.vseg")
    back = volseg.UNet.load(tmp_path / "m.vseg")
    np.testing.assert_array_equal(back.predict_probability(vols[0]), prob)
    with pytest.raises(volseg.ShapeError):
        net.predict_probability(np.zeros((10, 16, 16), np.float32))


def test_gradcheck_suite():
    results = volseg.gradcheck()
    assert results
    assert all(err <= volseg.GRADCHECK_TOLERANCE for _, err, _ in results)

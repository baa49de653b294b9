import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskprop.core import BBox
from maskprop.predictor import TinyNet, TrainConfig
from maskprop.retrieval import OneShotModel, fit_one_shot, merge_to_foreground, redetect
from maskprop.roi import RoiParams, expand_bbox
from maskprop.synth import InstanceSpec, SynthSpec, generate

from conftest import occlusion_spec


def test_merge_to_foreground():
    np.testing.assert_array_equal(merge_to_foreground(np.array([[0, 1, 2]])), [[0.0, 1.0, 1.0]])


def test_fit_requires_instance():
    with pytest.raises(ValueError):
        fit_one_shot(np.zeros((8, 8, 3)), np.zeros((8, 8), int), 1)


def test_redetects_displaced_instance():
    spec = SynthSpec(n_frames=6, noise_std=0.02, instances=[InstanceSpec(center=(16, 20), size=(8, 8), translation=(6, 4),
                                                                          color=(0.9, 0.2, 0.2))])
    seq = generate(spec)
    model = fit_one_shot(seq.frames[0], seq.labels[0], 1)
    prob, box = redetect(model, seq.frames[5], RoiParams())
    assert box is not None
    box = expand_bbox(box, RoiParams().margin, 64, 64)
    ys, xs = np.nonzero(seq.labels[5] == 1)
    assert box.x0 <= xs.min() and box.x1 > xs.max() and box.y0 <= ys.min() and box.y1 > ys.max()
    assert prob.shape == (64, 64) and 0 <= prob.min() and prob.max() <= 1


def test_absent_instance_reports_missing():
    seq = generate(occlusion_spec())
    model = fit_one_shot(seq.frames[0], seq.labels[0], 1)
    assert (seq.labels[4] == 1).sum() == 0
    _, box = redetect(model, seq.frames[4], RoiParams())
    assert box is None


def test_tinynet_one_shot_shapes():
    seq = generate(SynthSpec(n_frames=1, instances=[InstanceSpec()]))
    base = TinyNet.create(seed=0, patch_size=16)
    model = fit_one_shot(seq.frames[0], seq.labels[0], 1, base=base, cfg=TrainConfig(steps=5))
    assert isinstance(model, OneShotModel)
    assert model.predictor is not base
    assert model.probability(seq.frames[0]).shape == (64, 64)


def two_solid_instances():
    img = np.zeros((40, 40, 3))
    img[...] = [0.2, 0.3, 0.7]
    img[5:15, 5:15] = [0.9, 0.1, 0.1]
    img[22:35, 20:34] = [0.1, 0.9, 0.2]
    lab = np.zeros((40, 40), int)
    lab[5:15, 5:15] = 1
    lab[22:35, 20:34] = 2
    return img, lab


def test_merge_all_background():
    assert np.all(merge_to_foreground(np.zeros((3, 3), int)) == 0)


def test_models_prefer_own_instance():
    img, lab = two_solid_instances()
    for k, other in ((1, 2), (2, 1)):
        model = fit_one_shot(img, lab, k).predictor
        l_fg, l_bg = model.likelihoods(img)
        assert np.mean((l_fg / l_bg)[lab == k] > 1) >= 0.95
        assert model.likelihoods(img[lab == k])[0].mean() > model.likelihoods(img[lab == other])[0].mean()


def test_frame0_self_consistency():
    seq = generate(occlusion_spec())
    for k in (1, 2):
        model = fit_one_shot(seq.frames[0], seq.labels[0], k)
        prob, box = redetect(model, seq.frames[0], RoiParams())
        gt = seq.labels[0] == k
        assert prob[gt].mean() > prob[~gt].mean()
        ys, xs = np.nonzero(gt)
        assert box is not None and box.iou(BBox(xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)) >= 0.5


def test_uniform_instance_colour_frame_is_full_support():
    img, lab = two_solid_instances()
    model = fit_one_shot(img, lab, 1)
    flat = np.zeros_like(img)
    flat[...] = [0.9, 0.1, 0.1]
    _, box = redetect(model, flat, RoiParams())
    assert box == BBox(0, 0, 40, 40)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_merge_to_foreground_properties(seed):
    lab = np.random.default_rng(seed).integers(0, 4, (7, 9))
    fg = merge_to_foreground(lab)
    assert fg.sum() == np.count_nonzero(lab)
    assert np.array_equal(merge_to_foreground((fg >= 0.5).astype(int)), fg)

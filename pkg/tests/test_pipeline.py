import json

import numpy as np
import pytest

from maskprop.metrics import jaccard
from maskprop.pipeline import (
    STATUS_ANNOTATED,
    STATUS_MISSING,
    PipelineConfig,
    PipelineError,
    davis_palette,
    evaluate,
    guidance_samples,
    jitter_mask,
    load_sequence,
    overlay,
    propagate_sequence,
    read_annotation,
    run,
    write_annotation,
    write_frame,
    write_sequence,
)
from maskprop.predictor import TinyNet, save_checkpoint
from maskprop.roi import RoiParams
from maskprop.synth import InstanceSpec, SynthSpec, generate, training_spec

from conftest import disk_spec, occlusion_spec


def static_spec():
    return SynthSpec(name="static", n_frames=4, noise_std=0.02, instances=[
        InstanceSpec(center=(20, 22), size=(9, 9), texture_seed=2, color=(0.9, 0.3, 0.2)),
        InstanceSpec(shape="rectangle", center=(44, 40), size=(14, 10), texture_seed=3, color=(0.2, 0.8, 0.3)),
    ])


def test_palette_and_annotation_round_trip(tmp_path):
    pal = davis_palette()
    assert pal[0].tolist() == [0, 0, 0] and pal[1].tolist() == [128, 0, 0] and pal[2].tolist() == [0, 128, 0]
    lab = np.random.default_rng(0).integers(0, 256, (9, 11))
    write_annotation(tmp_path / "a.png", lab)
    assert np.array_equal(read_annotation(tmp_path / "a.png"), lab)
    with pytest.raises(ValueError):
        write_annotation(tmp_path / "b.png", np.full((2, 2), 300))


def test_rgb_annotation_rejected(tmp_path):
    write_frame(tmp_path / "rgb.png", np.zeros((4, 4, 3)))
    with pytest.raises(ValueError):
        read_annotation(tmp_path / "rgb.png")


def test_overlay_leaves_background():
    frame = np.full((3, 3, 3), 0.4)
    lab = np.zeros((3, 3), int)
    lab[1, 1] = 1
    out = overlay(frame, lab)
    assert np.array_equal(out[0, 0], frame[0, 0])
    np.testing.assert_allclose(out[1, 1], 0.5 * 0.4 + 0.5 * np.array([128, 0, 0]) / 255)


def test_load_sequence(dataset_root):
    root, name, _ = dataset_root(static_spec())
    ds = load_sequence(root, name)
    assert len(ds) == 4 and ds.instance_ids == [1, 2] and ds.size == (64, 64) and ds.fully_annotated


def test_load_errors(tmp_path, dataset_root):
    with pytest.raises(PipelineError, match="load"):
        load_sequence(tmp_path, "nothing")
    (tmp_path / "JPEGImages" / "empty").mkdir(parents=True)
    with pytest.raises(PipelineError):
        load_sequence(tmp_path, "empty")
    root, name, _ = dataset_root(static_spec())
    write_annotation(root / "Annotations" / name / "00000.png", np.zeros((64, 64), int))
    with pytest.raises(PipelineError, match="no instances"):
        load_sequence(root, name)
    write_frame(root / "JPEGImages" / name / "00002.png", np.zeros((32, 32, 3)))
    write_annotation(root / "Annotations" / name / "00000.png", np.ones((64, 64), int))
    with pytest.raises(PipelineError, match="differs"):
        load_sequence(root, name)
    (root / "JPEGImages" / name / "00002.png").unlink()
    with pytest.raises(PipelineError, match="contiguous"):
        load_sequence(root, name)


def test_config_dict_round_trip(tmp_path):
    cfg = PipelineConfig.from_dict({"roi": {"margin": 0.2}, "use_crf": False})
    assert cfg.roi.margin == 0.2 and not cfg.use_crf
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    assert PipelineConfig.from_json(tmp_path / "c.json") == cfg
    with pytest.raises(ValueError, match="unknown"):
        PipelineConfig.from_dict({"crf": {"bogus": 1}})
    with pytest.raises(ValueError):
        PipelineConfig(predictor="tinynet")


def test_static_scene_near_perfect(dataset_root):
    root, name, seq = dataset_root(static_spec())
    result = propagate_sequence(load_sequence(root, name), PipelineConfig())
    assert result.status[0] == {1: STATUS_ANNOTATED, 2: STATUS_ANNOTATED}
    assert np.array_equal(result.labels[0], seq.labels[0])
    for pred, gt in zip(result.labels[1:], seq.labels[1:]):
        for k in (1, 2):
            assert jaccard(pred == k, gt == k) >= 0.95


def test_translating_disk_without_crf(dataset_root):
    root, name, seq = dataset_root(disk_spec())
    result = propagate_sequence(load_sequence(root, name), PipelineConfig(use_crf=False))
    _, summary = evaluate(result.labels, seq.labels, [1])
    assert summary["J_mean"] >= 85.0


def test_run_writes_outputs_and_flow_cache(tmp_path, dataset_root):
    root, name, _ = dataset_root(disk_spec(n_frames=5))
    cfg = PipelineConfig(output_dir=str(tmp_path / "out"), flow_cache=str(tmp_path / "cache"))
    _, summary = run(root, name, cfg, overlays=True)
    out = tmp_path / "out"
    assert sorted(p.name for p in (out / name).iterdir()) == [f"{j:05d}.png" for j in range(5)]
    assert len(list((out / "overlays" / name).iterdir())) == 5
    assert json.loads((out / "summary.json").read_text()) == summary
    assert (out / "metrics.csv").read_text().startswith("sequence,instance,J_mean")
    cached = sorted(p.name for p in (tmp_path / "cache" / name).iterdir())
    assert cached == [f"{j:05d}_{j + 1:05d}.flo" for j in range(4)]
    # a corrupt cache entry is recomputed, not trusted
    (tmp_path / "cache" / name / cached[0]).write_bytes(b"junk")
    first = read_annotation(out / name / "00004.png")
    run(root, name, cfg)
    assert np.array_equal(read_annotation(out / name / "00004.png"), first)


def test_short_sequence_skips_metrics(tmp_path, dataset_root):
    root, name, _ = dataset_root(disk_spec(n_frames=3))
    result, summary = run(root, name, PipelineConfig(output_dir=str(tmp_path / "o"), use_crf=False))
    assert summary is None and len(result.labels) == 3
    assert not (tmp_path / "o" / "summary.json").exists()


def test_missing_checkpoint_is_predictor_error(dataset_root, tmp_path):
    root, name, _ = dataset_root(disk_spec(n_frames=2))
    cfg = PipelineConfig(predictor="tinynet", checkpoint=str(tmp_path / "none.ckpt"))
    with pytest.raises(PipelineError, match=r"\[predictor\]"):
        propagate_sequence(load_sequence(root, name), cfg)


def test_tinynet_predictor_runs(dataset_root, tmp_path):
    root, name, _ = dataset_root(disk_spec(n_frames=3))
    save_checkpoint(TinyNet.create(seed=0, patch_size=16), tmp_path / "n.ckpt")
    cfg = PipelineConfig(predictor="tinynet", checkpoint=str(tmp_path / "n.ckpt"), use_crf=False)
    cfg.train.steps = 2
    result = propagate_sequence(load_sequence(root, name), cfg)
    assert len(result.labels) == 3 and all(lab.shape == (128, 128) for lab in result.labels)


def test_evaluate_examples():
    gt = [np.pad(np.ones((4, 4), int), 3)] * 5
    _, s = evaluate(gt, gt, [1])
    assert s["J_mean"] == 100.0 and s["F_mean"] == 100.0 and s["J_decay"] == 0.0
    _, s = evaluate([np.zeros_like(g) for g in gt], gt, [1])
    assert s["J_mean"] == 0.0
    with pytest.raises(PipelineError):
        evaluate(gt[:3], gt, [1])
    with pytest.raises(PipelineError):
        evaluate(gt, gt[:4] + [None], [1])


def test_missing_status_leaves_background(dataset_root):
    root, name, seq = dataset_root(occlusion_spec())
    result = propagate_sequence(load_sequence(root, name), PipelineConfig())
    for j in (4, 5):
        assert result.status[j][1] == STATUS_MISSING
        assert not (result.labels[j] == 1).any()


def test_jitter_and_guidance(rng):
    mask = np.zeros((40, 40))
    mask[10:20, 12:22] = 1
    j = jitter_mask(mask, rng)
    assert j.shape == mask.shape and 0 <= j.min() and j.max() <= 1 and j.sum() > 50
    spec = static_spec()
    seq = generate(spec)
    samples = guidance_samples(seq.frames[:2], seq.labels[:2], RoiParams(patch_size=16), rng, per_frame=2)
    assert len(samples) == 2 * 2 * 2
    assert all(s[0].shape == (16, 16, 3) and s[1].shape == s[2].shape == (16, 16) for s in samples)


@pytest.mark.parametrize("seed", [3, 8, 21])
def test_robust_without_crf_and_margin(tmp_path, seed):
    spec = training_spec(seed, size=64, n_frames=5)
    spec.instances[0].center = (32.0, 32.0)
    spec.instances[0].translation = (1.0, -1.0)
    seq = generate(spec)
    write_sequence(tmp_path, spec.name, seq.frames, seq.labels)
    cfg = PipelineConfig(use_crf=False, roi=RoiParams(margin=0.0))
    result = propagate_sequence(load_sequence(tmp_path, spec.name), cfg)
    assert np.array_equal(result.labels[0], seq.labels[0])
    assert all(set(np.unique(lab)) <= {0, 1} for lab in result.labels)

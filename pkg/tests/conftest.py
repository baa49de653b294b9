import numpy as np
import pytest
from scipy import ndimage

from maskprop.pipeline import write_sequence
from maskprop.synth import InstanceSpec, SynthSpec, generate


def disk_spec(**overrides) -> SynthSpec:
    """One translating and rotating textured disk on 128x128, 10 frames."""
    kw = dict(
        name="disk", width=128, height=128, n_frames=10, background_seed=3, noise_std=0.02, seed=7,
        instances=[InstanceSpec(shape="disk", size=(18, 18), center=(40, 50), translation=(5, 2.5),
                                rotation_rate=0.08, texture_seed=11, color=(0.85, 0.35, 0.2))],
    )
    kw.update(overrides)
    return SynthSpec(**kw)


def occlusion_spec() -> SynthSpec:
    """Small disk fully hidden by a sliding square on frames 4 and 5."""
    return SynthSpec(
        name="occlusion", width=128, height=128, n_frames=10, background_seed=5, noise_std=0.02, seed=3,
        instances=[
            InstanceSpec(shape="disk", size=(10, 10), center=(64, 64), texture_seed=21, color=(0.85, 0.3, 0.2)),
            InstanceSpec(shape="rectangle", size=(36, 36), center=(30, 64), translation=(8, 0),
                         texture_seed=22, color=(0.25, 0.8, 0.3)),
        ],
    )


def crf_scene(seed, size=32, noise=0.25):
    """Textured synth frame, its mask, and a noisy probability map for it."""
    r = np.random.default_rng(seed)
    spec = SynthSpec(
        width=size, height=size, n_frames=1, background_seed=seed, noise_std=0.03, seed=seed,
        instances=[InstanceSpec(shape="disk" if seed % 2 else "rectangle", size=(size * 9 // 32, size * 7 // 32),
                                center=(size / 2 + r.uniform(-3, 3), size / 2 + r.uniform(-3, 3)),
                                texture_seed=100 + seed, color=tuple(r.uniform(0.2, 0.9, 3)))],
    )
    seq = generate(spec)
    gt = seq.labels[0] > 0
    prob = np.clip(ndimage.gaussian_filter(gt.astype(float), 1.0) + r.normal(0, noise, gt.shape), 0, 1)
    return seq.frames[0], gt, prob


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def dataset_root(tmp_path):
    """Write a synth spec to disk in dataset layout; returns ``(root, name, SynthSequence)``."""

    def make(spec: SynthSpec):
        seq = generate(spec)
        write_sequence(tmp_path / "data", spec.name, seq.frames, seq.labels, seq.flows)
        return tmp_path / "data", spec.name, seq

    return make


# ---------------------------------------------------------- acceptance report

_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """``criterion(n, title, ok, detail)`` records and prints one PASS/FAIL line, then asserts ``ok``."""

    def record(n: int, title: str, ok: bool, detail: str = ""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {title}" + (f" ({detail})" if detail else "")
        _CRITERIA.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)

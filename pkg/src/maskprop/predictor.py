"""Propagation function: (image patch, warped prior) -> refined probability patch.

Two realisations share the interface:

* :class:`ColorModel` + :func:`predict_baseline` -- Bayes update of the warped
  prior with foreground/background colour histograms.
* :class:`TinyNet` -- a small numpy encoder/decoder trained by plain gradient
  descent. Softplus activations keep the loss smooth in every parameter, so
  finite differences are a valid gradient oracle. Every pre-pooling feature map is upsampled to the output size and
  concatenated before a per-pixel affine head, so each scale feeds the
  prediction directly.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# ---------------------------------------------------------------- colour model


@dataclass
class ColorModel:
    fg_hist: np.ndarray  # (bins, bins, bins), sums to 1
    bg_hist: np.ndarray
    bins: int

    def bin_index(self, img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        q = np.clip((np.asarray(img) * self.bins).astype(np.intp), 0, self.bins - 1)
        return q[..., 0], q[..., 1], q[..., 2]

    def likelihoods(self, img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = self.bin_index(img)
        return self.fg_hist[idx], self.bg_hist[idx]


def fit_color_model(img: np.ndarray, mask: np.ndarray, bins: int = 8, smoothing: float = 1.0) -> ColorModel:
    """Soft-weighted colour histograms: foreground weighted by ``mask``, background by ``1 - mask``."""
    mask = np.asarray(mask, dtype=np.float64)
    if img.shape[:2] != mask.shape:
        raise ValueError(f"image {img.shape[:2]} and mask {mask.shape} differ")
    if not (mask >= 0.5).any() or not (mask < 0.5).any():
        raise ValueError("mask must contain both foreground and background pixels")
    model = ColorModel(np.empty(0), np.empty(0), bins)
    flat = np.ravel_multi_index(model.bin_index(img), (bins,) * 3).ravel()
    w = mask.ravel()
    fg = np.bincount(flat, weights=w, minlength=bins**3) + smoothing
    bg = np.bincount(flat, weights=1.0 - w, minlength=bins**3) + smoothing
    model.fg_hist = (fg / fg.sum()).reshape((bins,) * 3)
    model.bg_hist = (bg / bg.sum()).reshape((bins,) * 3)
    return model


def predict_baseline(model: ColorModel, img_patch: np.ndarray, prior: np.ndarray) -> np.ndarray:
    if img_patch.shape[:2] != prior.shape:
        raise ValueError(f"image {img_patch.shape[:2]} and prior {prior.shape} differ")
    l_fg, l_bg = model.likelihoods(img_patch)
    num = prior * l_fg
    return np.clip(num / (num + (1.0 - prior) * l_bg), 0.0, 1.0)


# ------------------------------------------------------------------- tiny net

PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "conv3_w", "conv3_b", "head_w", "head_b")


@dataclass
class TrainConfig:
    learning_rate: float = 0.5
    steps: int = 300
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")


def _conv(x, w, b):
    windows = sliding_window_view(np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1))), (3, 3), axis=(2, 3))
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
    return out.transpose(0, 3, 1, 2) + b[None, :, None, None], windows


def _conv_backward(dout, windows, w):
    db = dout.sum(axis=(0, 2, 3))
    dw = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))
    dwin = sliding_window_view(np.pad(dout, ((0, 0), (0, 0), (1, 1), (1, 1))), (3, 3), axis=(2, 3))
    dx = np.tensordot(dwin, w[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3]))
    return dx.transpose(0, 3, 1, 2), dw, db


def _pool(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _pool_backward(d):
    return np.repeat(np.repeat(d, 2, axis=2), 2, axis=3) * 0.25


def _up(x, k):
    return np.repeat(np.repeat(x, k, axis=2), k, axis=3)


def _up_backward(d, k):
    n, c, h, w = d.shape
    return d.reshape(n, c, h // k, k, w // k, k).sum(axis=(3, 5))


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


@dataclass
class TinyNet:
    params: dict[str, np.ndarray]
    patch_size: int = 64

    @classmethod
    def create(
        cls, seed: int = 0, channels=(8, 16, 16), in_channels: int = 4, patch_size: int = 64, bias: float = 0.0
    ) -> TinyNet:
        if patch_size % 4:
            raise ValueError("patch_size must be a multiple of 4")
        rng = np.random.default_rng(seed)
        c1, c2, c3 = channels

        def uniform(shape, fan_in):
            bound = np.sqrt(3.0 / fan_in)
            return rng.uniform(-bound, bound, shape)

        params = {
            "conv1_w": uniform((c1, in_channels, 3, 3), 9 * in_channels),
            "conv1_b": np.full(c1, bias),
            "conv2_w": uniform((c2, c1, 3, 3), 9 * c1),
            "conv2_b": np.full(c2, bias),
            "conv3_w": uniform((c3, c2, 3, 3), 9 * c2),
            "conv3_b": np.full(c3, bias),
            "head_w": uniform((c1 + c2 + c3,), c1 + c2 + c3),
            "head_b": np.zeros(1),
        }
        return cls(params, patch_size)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> TinyNet:
        return copy.deepcopy(self)

    def logits(self, x: np.ndarray, cache: dict | None = None) -> np.ndarray:
        """Batched forward pass on ``(N, C, H, W)`` input; returns ``(N, H, W)`` logits."""
        p = self.params
        z1, win1 = _conv(x, p["conv1_w"], p["conv1_b"])
        f1 = _softplus(z1)
        z2, win2 = _conv(_pool(f1), p["conv2_w"], p["conv2_b"])
        f2 = _softplus(z2)
        z3, win3 = _conv(_pool(f2), p["conv3_w"], p["conv3_b"])
        f3 = _softplus(z3)
        feats = np.concatenate([f1, _up(f2, 2), _up(f3, 4)], axis=1)
        out = np.tensordot(p["head_w"], feats, axes=([0], [1])) + p["head_b"][0]
        if cache is not None:
            cache.update(z1=z1, z2=z2, z3=z3, win1=win1, win2=win2, win3=win3, feats=feats)
        return out

    def loss_and_grad(self, x: np.ndarray, target: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        """Mean binary cross-entropy over the batch and its analytic parameter gradient."""
        p = self.params
        cache: dict = {}
        z = self.logits(x, cache)
        loss = float(np.mean(_softplus(z) - target * z))
        dz = (_sigmoid(z) - target) / z.size

        grads = {"head_b": np.array([dz.sum()])}
        grads["head_w"] = np.tensordot(cache["feats"], dz, axes=([0, 2, 3], [0, 1, 2]))
        dfeats = p["head_w"][None, :, None, None] * dz[:, None]
        c1, c2 = p["conv1_b"].size, p["conv2_b"].size
        df1 = dfeats[:, :c1]
        df2 = _up_backward(dfeats[:, c1 : c1 + c2], 2)
        df3 = _up_backward(dfeats[:, c1 + c2 :], 4)

        dz3 = df3 * _sigmoid(cache["z3"])
        dpool2, grads["conv3_w"], grads["conv3_b"] = _conv_backward(dz3, cache["win3"], p["conv3_w"])
        dz2 = (df2 + _pool_backward(dpool2)) * _sigmoid(cache["z2"])
        dpool1, grads["conv2_w"], grads["conv2_b"] = _conv_backward(dz2, cache["win2"], p["conv2_w"])
        dz1 = (df1 + _pool_backward(dpool1)) * _sigmoid(cache["z1"])
        _, grads["conv1_w"], grads["conv1_b"] = _conv_backward(dz1, cache["win1"], p["conv1_w"])
        return loss, grads

    def loss(self, x: np.ndarray, target: np.ndarray) -> float:
        z = self.logits(x)
        return float(np.mean(_softplus(z) - target * z))


def pack_input(img_patch: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """``(H, W, 3)`` image + ``(H, W)`` prior -> ``(1, 4, H, W)`` network input."""
    chans = np.concatenate([np.moveaxis(img_patch, -1, 0), prior[None]], axis=0)
    return (chans - 0.5)[None]


def _stack(dataset):
    x = np.concatenate([pack_input(img, prior) for img, prior, _ in dataset])
    t = np.stack([np.asarray(target, dtype=np.float64) for _, _, target in dataset])
    return x, t


def forward(net: TinyNet, img_patch: np.ndarray, prior: np.ndarray) -> np.ndarray:
    if img_patch.shape[:2] != (net.patch_size, net.patch_size) or prior.shape != img_patch.shape[:2]:
        raise ValueError(
            f"expected {net.patch_size}x{net.patch_size} patches, got image "
            f"{img_patch.shape[:2]} and prior {prior.shape}"
        )
    return _sigmoid(net.logits(pack_input(img_patch, prior))[0])


def bce_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shapes differ: {pred.shape} vs {target.shape}")
    return float(np.mean(-(target * np.log(pred) + (1.0 - target) * np.log1p(-pred))))


def train(net: TinyNet, dataset, cfg: TrainConfig) -> tuple[TinyNet, list[float]]:
    """Mini-batch gradient descent on BCE; updates ``net`` in place.

    :param dataset: sequence of ``(img_patch, prior_patch, target_patch)``
    :return: ``(net, per-step batch losses)``
    """
    if len(dataset) == 0:
        raise ValueError("empty training set")
    x, t = _stack(dataset)
    rng = np.random.default_rng(cfg.seed)
    batch = min(cfg.batch_size, len(x))
    trace = []
    for step in range(cfg.steps):
        idx = rng.choice(len(x), size=batch, replace=False) if batch < len(x) else np.arange(len(x))
        loss, grads = net.loss_and_grad(x[idx], t[idx])
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss} at step {step}")
        for name, g in grads.items():
            net.params[name] -= cfg.learning_rate * g
        trace.append(loss)
    return net, trace


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(net: TinyNet, sample, n_params: int = 200, seed: int = 0, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks ``n_params`` parameters drawn without replacement across all tensors.
    """
    x, t = _stack([sample])
    _, grads = net.loss_and_grad(x, t)
    names = list(PARAM_ORDER)
    sizes = [net.params[k].size for k in names]
    offsets = np.cumsum([0] + sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(offsets[-1], size=min(n_params, offsets[-1]), replace=False)
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, i = names[k], int(flat - offsets[k])
        theta = net.params[name].reshape(-1)
        orig = theta[i]
        theta[i] = orig + step
        lp = net.loss(x, t)
        theta[i] = orig - step
        lm = net.loss(x, t)
        theta[i] = orig
        numeric = (lp - lm) / (2 * step)
        analytic = grads[name].reshape(-1)[i]
        worst = max(worst, float(relative_error(analytic, numeric)))
    return worst


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"MPNET"
CKPT_VERSION = 1


def save_checkpoint(net: TinyNet, path: str | Path) -> None:
    """Header, then per tensor: name, shape, row-major little-endian float64 values."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<III", CKPT_VERSION, net.patch_size, len(PARAM_ORDER)))
        for name in PARAM_ORDER:
            arr = net.params[name]
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)) + encoded)
            fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> TinyNet:
    data = Path(path).read_bytes()
    if data[:5] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a TinyNet checkpoint")
    version, patch_size, count = struct.unpack_from("<III", data, 5)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 17
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        name = data[pos + 2 : pos + 2 + nlen].decode()
        pos += 2 + nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        shape = struct.unpack_from(f"<{ndim}I", data, pos + 1)
        pos += 1 + 4 * ndim
        n = int(np.prod(shape))
        params[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if set(params) != set(PARAM_ORDER):
        raise ValueError(f"{path}: unexpected tensors {sorted(params)}")
    return TinyNet(params, patch_size)

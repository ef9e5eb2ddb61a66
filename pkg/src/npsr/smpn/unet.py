"""Surface-mask prediction network: a small 3D U-Net.

Encoder levels apply DoubleConv (two conv3x3x3 + batchnorm + ReLU) and a
2x2x2 max-pool; the deepest level is the bottleneck.  Each decoder level
upsamples with a stride-2 transposed convolution, concatenates the matching
encoder features and applies DoubleConv.  A 1x1x1 convolution and a sigmoid
produce per-voxel mask probabilities.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import CorruptWeightsError, InvalidInputError
from . import layers as L

FULL_CHANNELS = (8, 16, 32, 64, 128)


@dataclass(frozen=True)
class UNetConfig:
    channels: tuple = (4, 8, 16)
    in_channels: int = 1
    out_channels: int = 1
    resolution: int = 32

    def __post_init__(self):
        ch = tuple(int(c) for c in self.channels)
        object.__setattr__(self, "channels", ch)
        if not ch or any(b <= a for a, b in zip(ch, ch[1:])):
            raise InvalidInputError(f"channels must be nonempty and strictly increasing, got {ch}")
        if self.resolution % self.min_divisor:
            raise InvalidInputError(f"resolution {self.resolution} not divisible by {self.min_divisor}")

    @property
    def depth(self) -> int:
        return len(self.channels)

    @property
    def min_divisor(self) -> int:
        return 2 ** (len(self.channels) - 1)


class UNetParams:
    """Trainable parameters plus batch-norm running statistics."""

    def __init__(self, config: UNetConfig, params: dict, buffers: dict):
        self.config = config
        self.params = params
        self.buffers = buffers

    @classmethod
    def init(cls, config: UNetConfig, seed: int = 0, dtype=np.float64) -> "UNetParams":
        rng = np.random.default_rng(seed)
        params, buffers = {}, {}

        def conv(name, cin, cout, k=3):
            bound = np.sqrt(6.0 / (cin * k**3))  # He-uniform
            params[f"{name}.weight"] = rng.uniform(-bound, bound, (cout, cin, k, k, k)).astype(dtype)
            params[f"{name}.bias"] = np.zeros(cout, dtype=dtype)

        def bn(name, c):
            params[f"{name}.gamma"] = np.ones(c, dtype=dtype)
            params[f"{name}.beta"] = np.zeros(c, dtype=dtype)
            buffers[f"{name}.running_mean"] = np.zeros(c, dtype=dtype)
            buffers[f"{name}.running_var"] = np.ones(c, dtype=dtype)

        def double(name, cin, cout):
            conv(f"{name}.conv1", cin, cout)
            bn(f"{name}.bn1", cout)
            conv(f"{name}.conv2", cout, cout)
            bn(f"{name}.bn2", cout)

        ch = config.channels
        cin = config.in_channels
        for lvl, c in enumerate(ch):
            double(f"enc{lvl}", cin, c)
            cin = c
        for lvl in reversed(range(len(ch) - 1)):
            bound = np.sqrt(6.0 / ch[lvl + 1])
            params[f"dec{lvl}.up.weight"] = rng.uniform(-bound, bound, (ch[lvl + 1], ch[lvl], 2, 2, 2)).astype(dtype)
            params[f"dec{lvl}.up.bias"] = np.zeros(ch[lvl], dtype=dtype)
            double(f"dec{lvl}", 2 * ch[lvl], ch[lvl])
        conv("head", ch[0], config.out_channels, k=1)
        return cls(config, params, buffers)

    def copy(self) -> "UNetParams":
        return UNetParams(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def arrays(self) -> dict:
        return {**self.params, **self.buffers}


def _double_forward(x, p, b, name, train, update_stats):
    caches = []
    for i in (1, 2):
        x, c_conv = L.conv3d_forward(x, p[f"{name}.conv{i}.weight"], p[f"{name}.conv{i}.bias"])
        x, c_bn = L.batchnorm3d_forward(
            x, p[f"{name}.bn{i}.gamma"], p[f"{name}.bn{i}.beta"],
            b[f"{name}.bn{i}.running_mean"], b[f"{name}.bn{i}.running_var"],
            train=train, update_stats=update_stats,
        )
        x, c_relu = L.relu_forward(x)
        caches.append((c_conv, c_bn, c_relu))
    return x, caches


def _double_backward(dx, caches, grads, name):
    for i, (c_conv, c_bn, c_relu) in zip((2, 1), reversed(caches)):
        dx = L.relu_backward(dx, c_relu)
        dx, grads[f"{name}.bn{i}.gamma"], grads[f"{name}.bn{i}.beta"] = L.batchnorm3d_backward(dx, c_bn)
        dx, grads[f"{name}.conv{i}.weight"], grads[f"{name}.conv{i}.bias"] = L.conv3d_backward(dx, c_conv)
    return dx


def _as_batch(chi, config: UNetConfig):
    x = np.asarray(chi)
    if x.ndim == 3:
        x = x[None, None]
    elif x.ndim == 4:
        x = x[:, None]
    if x.ndim != 5 or x.shape[1] != config.in_channels:
        raise InvalidInputError(f"unexpected network input shape {np.shape(chi)}")
    if x.shape[2:] != (config.resolution,) * 3:
        raise InvalidInputError(f"input resolution {x.shape[2:]} != configured {config.resolution}")
    return x


def unet_forward(chi, net: UNetParams, train: bool = False, update_stats: bool = True):
    """Mask probabilities for an indicator grid.

    ``chi`` may be (r,r,r), (N,r,r,r) or (N,1,r,r,r); the output has shape
    (N, r, r, r).  Returns ``(prob, cache)``.
    """
    cfg = net.config
    p, b = net.params, net.buffers
    dtype = p["head.weight"].dtype
    x = _as_batch(chi, cfg).astype(dtype, copy=False)
    depth = cfg.depth
    skips, enc_caches, pool_caches = [], [], []
    for lvl in range(depth):
        x, cache = _double_forward(x, p, b, f"enc{lvl}", train, update_stats)
        enc_caches.append(cache)
        if lvl < depth - 1:
            skips.append(x)
            x, pc = L.maxpool3d_forward(x)
            pool_caches.append(pc)
    dec_caches = {}
    for lvl in reversed(range(depth - 1)):
        x, c_up = L.transposed_conv3d_forward(x, p[f"dec{lvl}.up.weight"], p[f"dec{lvl}.up.bias"])
        x = np.concatenate([skips[lvl], x], axis=1)
        x, c_dbl = _double_forward(x, p, b, f"dec{lvl}", train, update_stats)
        dec_caches[lvl] = (c_up, c_dbl)
    logits, c_head = L.conv3d_forward(x, p["head.weight"], p["head.bias"], padding=0)
    prob = L.sigmoid(logits)[:, 0]
    cache = (enc_caches, pool_caches, dec_caches, c_head, prob, skips)
    return prob, cache


def unet_backward(dprob, cache, net: UNetParams):
    """Parameter gradients (dict) and the gradient w.r.t. the input grid."""
    enc_caches, pool_caches, dec_caches, c_head, prob, skips = cache
    depth = net.config.depth
    grads = {}
    dlogits = (dprob * prob * (1 - prob))[:, None]
    dx, grads["head.weight"], grads["head.bias"] = L.conv3d_backward(dlogits, c_head)
    dskips = {}
    # decoder levels ran deepest-first, so unwind from level 0
    for lvl in range(depth - 1):
        c_up, c_dbl = dec_caches[lvl]
        dx = _double_backward(dx, c_dbl, grads, f"dec{lvl}")
        cs = skips[lvl].shape[1]
        dskips[lvl] = dx[:, :cs]
        dx, grads[f"dec{lvl}.up.weight"], grads[f"dec{lvl}.up.bias"] = L.transposed_conv3d_backward(dx[:, cs:], c_up)
    for lvl in reversed(range(depth)):
        if lvl < depth - 1:
            dx = L.maxpool3d_backward(dx, pool_caches[lvl]) + dskips[lvl]
        dx = _double_backward(dx, enc_caches[lvl], grads, f"enc{lvl}")
    return grads, dx[:, 0]


def dice_loss(pred, target):
    """``1 - (2 sum(M P) + 1) / (sum(M^2) + sum(P^2) + 1)`` and its gradient in ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InvalidInputError(f"shape mismatch {pred.shape} vs {target.shape}")
    num = 2.0 * np.sum(pred * target) + 1.0
    den = np.sum(target**2) + np.sum(pred**2) + 1.0
    grad = -(2.0 * target * den - num * 2.0 * pred) / den**2
    return float(1.0 - num / den), grad


def dice_score(pred_mask, target_mask) -> float:
    """Hard Dice overlap ``2|A&B| / (|A| + |B|)`` of two boolean masks."""
    a, b = np.asarray(pred_mask, dtype=bool), np.asarray(target_mask, dtype=bool)
    total = a.sum() + b.sum()
    return 1.0 if total == 0 else float(2.0 * np.sum(a & b) / total)


def predict_mask(chi, net: UNetParams, threshold: float = 0.5) -> np.ndarray:
    prob, _ = unet_forward(chi, net, train=False)
    return prob[0] > threshold if np.ndim(chi) == 3 else prob > threshold


# -- weights on disk ---------------------------------------------------------

def _blob_path(path: Path) -> Path:
    return path.with_suffix(".bin")


def save_params(net: UNetParams, path) -> None:
    """Write a JSON manifest at ``path`` and a little-endian f32 blob next to it (``.bin``)."""
    path = Path(path)
    entries, offset, chunks = [], 0, []
    for kind, store in (("param", net.params), ("buffer", net.buffers)):
        for name, arr in store.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            entries.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset})
            offset += data.size
            chunks.append(data.tobytes())
    manifest = {"format": "npsr-unet-v1", "config": asdict(net.config), "entries": entries, "count": offset}
    manifest["config"]["channels"] = list(net.config.channels)
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    _blob_path(path).write_bytes(b"".join(chunks))


def load_params(path) -> UNetParams:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
        config = UNetConfig(**{**manifest["config"], "channels": tuple(manifest["config"]["channels"])})
        blob = np.frombuffer(_blob_path(path).read_bytes(), dtype="<f4")
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CorruptWeightsError(f"cannot read weights at {path}: {exc}") from exc
    if blob.size != manifest.get("count"):
        raise CorruptWeightsError(f"blob holds {blob.size} values, manifest expects {manifest.get('count')}")
    reference = UNetParams.init(config)
    params, buffers = {}, {}
    expected = reference.arrays()
    for e in manifest["entries"]:
        shape = tuple(e["shape"])
        if e["name"] not in expected or expected[e["name"]].shape != shape:
            raise CorruptWeightsError(f"unexpected entry {e['name']} with shape {shape}")
        size = int(np.prod(shape))
        if e["offset"] + size > blob.size:
            raise CorruptWeightsError(f"entry {e['name']} runs past the end of the blob")
        arr = blob[e["offset"] : e["offset"] + size].reshape(shape).astype(np.float32)
        (params if e["kind"] == "param" else buffers)[e["name"]] = arr
    if set(params) | set(buffers) != set(expected):
        raise CorruptWeightsError("manifest does not cover every network tensor")
    return UNetParams(config, params, buffers)

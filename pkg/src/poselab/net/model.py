"""Micro pose network: conv-norm-relu trunk at output stride 8, 1x1 heads.

The trunk downsamples the input crop by three stride-2 stages, runs a few
stride-1 blocks, then predicts every task with a 1x1 convolution whose
output is bilinearly upsampled back to label resolution.  Normalization is
either plain batch normalization or the batch-mixture variant; with the
mixture variant one mid-trunk block splits into sim/real sibling convs
masked by the domain score (hard labels or a learned gate).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bmn import bmn_backward, bmn_forward
from .ops import (
    NormState,
    batchnorm_backward,
    batchnorm_forward,
    bilinear_resize_backward,
    bilinear_resize_forward,
    conv2d_backward,
    conv2d_forward,
    global_mean_backward,
    global_mean_forward,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
)

HEAD_CHANNELS = {
    "heatmap": 17,
    "offsets": 34,
    "segment": 1,
}
# 2.5D/3D heads depend on the part count K: parts=K, uv=2K, normal=3

TWO_D_HEADS = ("heatmap", "offsets", "segment")  # receive the gradient multiplier


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class NetConfig:
    num_parts: int
    crop_size: int = 64
    label_size: int = 64
    trunk_channels: tuple[int, ...] = (16, 24, 32)  # one stride-2 stage each
    extra_blocks: int = 3
    normalization: str = "batchnorm"  # "batchnorm" | "bmn"
    bmn_gate: str = "labels"  # "labels" | "learned"
    bmn_block: int = 1  # trunk block index that becomes the mixture block
    head_grad_multiplier: float = 10.0
    learning_rate: float = 0.005
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.num_parts < 1 or self.crop_size < 8 or self.label_size < 8:
            raise ModelError("bad dimensions in NetConfig")
        if self.head_grad_multiplier < 1.0:
            raise ModelError("head gradient multiplier must be >= 1")
        if self.normalization not in ("batchnorm", "bmn"):
            raise ModelError(f"unknown normalization {self.normalization!r}")
        if self.bmn_gate not in ("labels", "learned"):
            raise ModelError(f"unknown bmn gate {self.bmn_gate!r}")
        if not self.trunk_channels:
            raise ModelError("need at least one trunk stage")

    def head_channels(self) -> dict[str, int]:
        return dict(
            HEAD_CHANNELS,
            parts=self.num_parts,
            uv=2 * self.num_parts,
            normal=3,
        )


@dataclass
class Prediction:
    """Per-task maps at label resolution; normals stay raw until decode."""

    heatmaps: np.ndarray
    offsets: np.ndarray
    segment: np.ndarray
    parts: np.ndarray
    uv: np.ndarray
    normals: np.ndarray


_HEAD_TO_FIELD = {
    "heatmap": "heatmaps",
    "offsets": "offsets",
    "segment": "segment",
    "parts": "parts",
    "uv": "uv",
    "normal": "normals",
}


def _he_uniform(rng, shape):
    fan_in = int(np.prod(shape[:-1]))
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class PoseMicroNet:
    """Owns parameters, running statistics, and the forward/backward pass."""

    def __init__(self, cfg: NetConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.params: dict[str, np.ndarray] = {}
        self.states: dict[str, NormState] = {}
        self.blocks: list[dict] = []

        cin = 3
        stages = [(c, 2) for c in cfg.trunk_channels]
        stages += [(cfg.trunk_channels[-1], 1)] * cfg.extra_blocks
        for i, (cout, stride) in enumerate(stages):
            name = f"block{i}"
            is_bmn = cfg.normalization == "bmn" and i == cfg.bmn_block
            block = {"name": name, "stride": stride, "bmn": is_bmn}
            if is_bmn:
                self.params[f"{name}/w_s"] = _he_uniform(rng, (3, 3, cin, cout))
                self.params[f"{name}/b_s"] = np.zeros(cout, dtype=np.float32)
                self.params[f"{name}/w_r"] = _he_uniform(rng, (3, 3, cin, cout))
                self.params[f"{name}/b_r"] = np.zeros(cout, dtype=np.float32)
                self.params[f"{name}/gamma"] = np.ones(2 * cout, dtype=np.float32)
                self.params[f"{name}/beta"] = np.zeros(2 * cout, dtype=np.float32)
                self.states[name] = NormState(2 * cout)
                if cfg.bmn_gate == "learned":
                    self.params[f"{name}/w_z"] = _he_uniform(rng, (3, 3, cin, 1))
                    self.params[f"{name}/b_z"] = np.zeros(1, dtype=np.float32)
            else:
                self.params[f"{name}/w"] = _he_uniform(rng, (3, 3, cin, cout))
                self.params[f"{name}/b"] = np.zeros(cout, dtype=np.float32)
                self.params[f"{name}/gamma"] = np.ones(cout, dtype=np.float32)
                self.params[f"{name}/beta"] = np.zeros(cout, dtype=np.float32)
                self.states[name] = NormState(cout)
            self.blocks.append(block)
            cin = cout

        for head, channels in cfg.head_channels().items():
            self.params[f"head_{head}/w"] = _he_uniform(rng, (1, 1, cin, channels))
            self.params[f"head_{head}/b"] = np.zeros(channels, dtype=np.float32)

    # -- forward ---------------------------------------------------------

    def forward(self, images, is_sim=None, training: bool = True):
        """Run the trunk and heads; returns (Prediction, caches).

        `is_sim` (bool per sample) feeds the hard-label domain gate of the
        mixture block; the learned gate ignores it.
        """
        x = images
        caches = []
        for block in self.blocks:
            name = block["name"]
            if block["bmn"]:
                x, cache = self._bmn_block_forward(name, block, x, is_sim, training)
            else:
                out, c_conv = conv2d_forward(
                    x, self.params[f"{name}/w"], self.params[f"{name}/b"], block["stride"]
                )
                out, c_bn = batchnorm_forward(
                    out, self.params[f"{name}/gamma"], self.params[f"{name}/beta"],
                    self.states[name], training,
                )
                x, c_relu = relu_forward(out)
                cache = ("conv_bn", c_conv, c_bn, c_relu)
            caches.append(cache)

        label_hw = (self.cfg.label_size, self.cfg.label_size)
        preds = {}
        head_caches = {}
        for head in self.cfg.head_channels():
            out, c_conv = conv2d_forward(
                x, self.params[f"head_{head}/w"], self.params[f"head_{head}/b"], 1
            )
            out, c_up = bilinear_resize_forward(out, label_hw)
            preds[_HEAD_TO_FIELD[head]] = out
            head_caches[head] = (c_conv, c_up)
        return Prediction(**preds), (caches, head_caches)

    def _bmn_block_forward(self, name, block, x, is_sim, training):
        stride = block["stride"]
        s, c_s = conv2d_forward(x, self.params[f"{name}/w_s"], self.params[f"{name}/b_s"], stride)
        r, c_r = conv2d_forward(x, self.params[f"{name}/w_r"], self.params[f"{name}/b_r"], stride)
        gate_cache = None
        if self.cfg.bmn_gate == "labels":
            if is_sim is None:
                raise ModelError("hard-label BMN gate needs per-sample domain flags")
            z = np.asarray(is_sim, dtype=x.dtype)
        else:
            g, c_g = conv2d_forward(x, self.params[f"{name}/w_z"], self.params[f"{name}/b_z"], stride)
            pooled, c_p = global_mean_forward(g)
            zs, c_sig = sigmoid_forward(pooled)
            z = zs[:, 0]
            gate_cache = (c_g, c_p, c_sig)
        y, c_bmn = bmn_forward(
            s, r, z, self.params[f"{name}/gamma"], self.params[f"{name}/beta"],
            self.states[name], training,
        )
        out, c_relu = relu_forward(y)
        return out, ("bmn", c_s, c_r, gate_cache, c_bmn, c_relu)

    # -- backward --------------------------------------------------------

    def backward(self, caches, loss_grads) -> dict[str, np.ndarray]:
        """Backpropagate head gradients into parameter gradients."""
        trunk_caches, head_caches = caches
        grads = {name: np.zeros_like(p) for name, p in self.params.items()}
        dx_trunk = None
        for head in self.cfg.head_channels():
            c_conv, c_up = head_caches[head]
            d = bilinear_resize_backward(loss_grads[_HEAD_TO_FIELD[head]], c_up)
            dxh, dw, db = conv2d_backward(d, c_conv)
            grads[f"head_{head}/w"] += dw
            grads[f"head_{head}/b"] += db
            dx_trunk = dxh if dx_trunk is None else dx_trunk + dxh

        dx = dx_trunk
        for block, cache in zip(reversed(self.blocks), reversed(trunk_caches)):
            name = block["name"]
            if cache[0] == "bmn":
                dx = self._bmn_block_backward(name, cache, dx, grads)
            else:
                _, c_conv, c_bn, c_relu = cache
                d = relu_backward(dx, c_relu)
                d, dgamma, dbeta = batchnorm_backward(d, c_bn)
                grads[f"{name}/gamma"] += dgamma
                grads[f"{name}/beta"] += dbeta
                dx, dw, db = conv2d_backward(d, c_conv)
                grads[f"{name}/w"] += dw
                grads[f"{name}/b"] += db
        return grads

    def _bmn_block_backward(self, name, cache, dx, grads):
        _, c_s, c_r, gate_cache, c_bmn, c_relu = cache
        d = relu_backward(dx, c_relu)
        ds, dr, dz, dgamma, dbeta = bmn_backward(d, c_bmn)
        grads[f"{name}/gamma"] += dgamma
        grads[f"{name}/beta"] += dbeta
        dx_s, dw_s, db_s = conv2d_backward(ds, c_s)
        dx_r, dw_r, db_r = conv2d_backward(dr, c_r)
        grads[f"{name}/w_s"] += dw_s
        grads[f"{name}/b_s"] += db_s
        grads[f"{name}/w_r"] += dw_r
        grads[f"{name}/b_r"] += db_r
        dx_total = dx_s + dx_r
        if gate_cache is not None:
            c_g, c_p, c_sig = gate_cache
            dzs = np.zeros(dz.shape + (1,), dtype=dz.dtype)
            dzs[:, 0] = dz
            dpool = sigmoid_backward(dzs, c_sig)
            dg = global_mean_backward(dpool, c_p)
            dx_z, dw_z, db_z = conv2d_backward(dg, c_g)
            grads[f"{name}/w_z"] += dw_z
            grads[f"{name}/b_z"] += db_z
            dx_total = dx_total + dx_z
        return dx_total

    # -- persistence -----------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        out = dict(self.params)
        for name, st in self.states.items():
            out[f"norm/{name}/mean"] = st.mean.copy()
            out[f"norm/{name}/var"] = st.var.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name in self.params:
            if name not in state:
                raise ModelError(f"checkpoint missing parameter {name!r}")
            if state[name].shape != self.params[name].shape:
                raise ModelError(f"shape mismatch for {name!r}")
            self.params[name] = state[name].astype(self.params[name].dtype)
        for name, st in self.states.items():
            st.mean = state[f"norm/{name}/mean"].astype(np.float64)
            st.var = state[f"norm/{name}/var"].astype(np.float64)

"""Task losses and the domain-partial multi-task objective.

2D losses (keypoint heatmaps, offsets, instance segmentation) apply to all
samples; 2.5D part/uv and 3D normal losses apply to simulated samples only,
and their gradients are exactly zero outside the ground-truth support: the
disk mask for offsets, the per-part regions for uv, the person instance
region for normals.  Each per-pixel loss is averaged over its own support
per sample, then summed over the batch, so task weights keep their relative
scale at any crop resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HUBER_DELTA = 1.0  # label units; also the smooth-L1 transition point


class LossError(Exception):
    pass


@dataclass(frozen=True)
class TaskWeights:
    heatmap: float = 4.0
    offsets: float = 1.0
    segment: float = 2.0
    parts: float = 0.5
    uv: float = 0.25
    normal: float = 1.0

    def __post_init__(self):
        for name in ("heatmap", "offsets", "segment", "parts", "uv", "normal"):
            if getattr(self, name) < 0:
                raise LossError(f"task weight {name} must be nonnegative")


def sigmoid_ce(logits, targets):
    """Stable per-element sigmoid cross entropy and its logit gradient."""
    x = logits
    loss = np.maximum(x, 0.0) - x * targets + np.log1p(np.exp(-np.abs(x)))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    grad = sig - targets
    return loss, grad


def smooth_l1(diff, delta: float = HUBER_DELTA):
    """Huber / smooth-L1 per element and the gradient wrt diff."""
    ad = np.abs(diff)
    quad = ad <= delta
    loss = np.where(quad, 0.5 * diff * diff, delta * (ad - 0.5 * delta))
    grad = np.clip(diff, -delta, delta)
    return loss, grad


def _per_sample_mean(values, mask=None, support=None):
    """Sum over batch of per-sample support means; returns (scalar, scale).

    `mask` gates elements; `support` (m,) is the divisor per sample and
    defaults to the gated element count.  The convention for multi-channel
    regression targets: channel terms sum per support point, so support
    counts (pixel, keypoint) or (pixel, part) pairs, not channels.  scale[i]
    multiplies sample i's elementwise gradient (0 when support is empty).
    """
    m = values.shape[0]
    axes = tuple(range(1, values.ndim))
    if mask is None:
        sums = values.sum(axis=axes)
        if support is None:
            support = np.full(m, float(np.prod(values.shape[1:])))
    else:
        sums = (values * mask).sum(axis=axes)
        if support is None:
            support = mask.sum(axis=axes)
    scale = np.where(support > 0, 1.0 / np.maximum(support, 1.0), 0.0)
    return float((sums * scale).sum()), scale


def loss_2d(pred_heat, pred_off, pred_seg, heat_t, off_t, off_mask, seg_t, w: TaskWeights):
    """Weighted 2D task losses over every sample of the batch.

    Returns (total, breakdown, (dheat, doff, dseg)).
    """
    if pred_heat.shape != heat_t.shape or pred_seg.shape != seg_t.shape:
        raise LossError("2D prediction/label shape mismatch")
    ce_h, g_h = sigmoid_ce(pred_heat, heat_t)
    l_heat, scale_h = _per_sample_mean(ce_h)
    d_heat = w.heatmap * g_h * scale_h[:, None, None, None]

    off_mask2 = np.repeat(off_mask, 2, axis=-1)  # disk gate per (x, y) channel pair
    hub, g_o = smooth_l1(pred_off - off_t)
    disk_support = off_mask.sum(axis=(1, 2, 3))
    l_off, scale_o = _per_sample_mean(hub, off_mask2, support=disk_support)
    d_off = w.offsets * g_o * off_mask2 * scale_o[:, None, None, None]

    ce_s, g_s = sigmoid_ce(pred_seg, seg_t)
    l_seg, scale_s = _per_sample_mean(ce_s)
    d_seg = w.segment * g_s * scale_s[:, None, None, None]

    breakdown = {
        "heatmap": w.heatmap * l_heat,
        "offsets": w.offsets * l_off,
        "segment": w.segment * l_seg,
    }
    total = sum(breakdown.values())
    return total, breakdown, (d_heat, d_off, d_seg)


def loss_25d_uv(pred_parts, pred_uv, part_t, uv_t, w: TaskWeights):
    """Part segmentation CE plus support-masked smooth-L1 on centered uv.

    The uv term only sees pixels inside each part's ground-truth region;
    gradients are identically zero elsewhere.  Returns
    (total, breakdown, (dparts, duv)).
    """
    ce_p, g_p = sigmoid_ce(pred_parts, part_t)
    l_parts, scale_p = _per_sample_mean(ce_p)
    d_parts = w.parts * g_p * scale_p[:, None, None, None]

    uv_mask = np.repeat(part_t, 2, axis=-1)  # (u, v) channels share the part region
    sl, g_u = smooth_l1(pred_uv - uv_t)
    region_support = part_t.sum(axis=(1, 2, 3))
    l_uv, scale_u = _per_sample_mean(sl, uv_mask, support=region_support)
    d_uv = w.uv * g_u * uv_mask * scale_u[:, None, None, None]

    breakdown = {"parts": w.parts * l_parts, "uv": w.uv * l_uv}
    return sum(breakdown.values()), breakdown, (d_parts, d_uv)


def loss_3d_normal(pred_normals, normal_t, seg_region, w: TaskWeights):
    """Smooth-L1 on the 3 normal channels summed inside the instance region.

    seg_region is the ground-truth person support S (m, h, w, 1); the
    gradient is exactly zero at every pixel outside S.
    """
    mask3 = np.broadcast_to(seg_region, pred_normals.shape)
    sl, g_n = smooth_l1(pred_normals - normal_t)
    # support counts pixels of S; the 3 channel terms sum per pixel
    m = pred_normals.shape[0]
    support = seg_region.sum(axis=(1, 2, 3))
    sums = (sl * mask3).sum(axis=(1, 2, 3))
    scale = np.where(support > 0, 1.0 / np.maximum(support, 1.0), 0.0)
    loss = float((sums * scale).sum())
    d_n = w.normal * g_n * mask3 * scale[:, None, None, None]
    return w.normal * loss, d_n


def loss_total(preds, batch, w: TaskWeights):
    """Domain-partial objective: 2D terms over all m samples, 2.5D/3D terms
    over the simulated subset only.

    `preds` carries heatmaps/offsets/segment/parts/uv/normals arrays aligned
    with the batch.  Returns (total, breakdown, grads) where grads holds one
    array per head, zero-filled on real rows for the sim-only tasks.
    """
    total_2d, breakdown, (d_heat, d_off, d_seg) = loss_2d(
        preds.heatmaps, preds.offsets, preds.segment,
        batch.heatmaps, batch.offsets, batch.offset_mask, batch.instance_masks, w,
    )
    d_parts = np.zeros_like(preds.parts)
    d_uv = np.zeros_like(preds.uv)
    d_norm = np.zeros_like(preds.normals)
    breakdown = dict(breakdown)
    breakdown.update({"parts": 0.0, "uv": 0.0, "normal": 0.0})
    total = total_2d

    sim = np.flatnonzero(batch.is_sim)
    if sim.size:
        t25, b25, (dp, du) = loss_25d_uv(
            preds.parts[sim], preds.uv[sim], batch.part_masks[sim], batch.uv_maps[sim], w
        )
        t3, dn = loss_3d_normal(
            preds.normals[sim], batch.normals[sim], batch.instance_masks[sim], w
        )
        d_parts[sim] = dp
        d_uv[sim] = du
        d_norm[sim] = dn
        breakdown.update(b25)
        breakdown["normal"] = t3
        total = total + t25 + t3

    breakdown["total"] = total
    grads = {
        "heatmaps": d_heat,
        "offsets": d_off,
        "segment": d_seg,
        "parts": d_parts,
        "uv": d_uv,
        "normals": d_norm,
    }
    return total, breakdown, grads

"""Decoding predictions: Hough-voted keypoints, masks, parts, uv, normals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .model import Prediction
from .ops import sigmoid_forward

BACKGROUND_PART = 255


@dataclass
class Decoded:
    keypoints: np.ndarray  # (17, 3): x, y, score
    mask: np.ndarray  # (h, w) bool person mask
    part_map: np.ndarray  # (h, w) uint8, 255 background
    uv_map: np.ndarray  # (h, w, 2) from the predicted part channel
    uv_full: np.ndarray  # (h, w, 2K) un-centered uv stack
    normal_map: np.ndarray  # (h, w, 3) unit normals, zero where undecidable


def _disk_kernel(radius: float) -> np.ndarray:
    """Disk accumulator kernel with linear falloff toward the rim.

    The taper keeps the accumulation confined to the radius-R disk while
    ensuring a strict maximum at the vote target, so an isolated vote
    decodes to its own pixel instead of an arbitrary plateau point.
    """
    r = int(np.ceil(radius))
    ys, xs = np.mgrid[-r : r + 1, -r : r + 1]
    d = np.sqrt(xs**2 + ys**2)
    disk = np.maximum(0.0, 1.0 - d / (radius + 1.0)) * (d <= radius)
    return disk / disk.sum()


def hough_score_maps(heat_prob: np.ndarray, offsets: np.ndarray, radius: float) -> np.ndarray:
    """Accumulate heatmap-probability votes at the offset targets.

    Each pixel casts its probability at (center + offset * radius) with a
    bilinear splat; the vote image is then averaged over a disk of the same
    radius, giving a concentrated score map per keypoint.
    """
    h, w, k = heat_prob.shape
    ys, xs = np.mgrid[0:h, 0:w]
    cx = xs + 0.5
    cy = ys + 0.5
    kernel = _disk_kernel(radius)
    scores = np.zeros((h, w, k), dtype=np.float64)
    for i in range(k):
        tx = cx + offsets[..., 2 * i] * radius
        ty = cy + offsets[..., 2 * i + 1] * radius
        fx = tx - 0.5
        fy = ty - 0.5
        x0 = np.floor(fx).astype(np.int64)
        y0 = np.floor(fy).astype(np.int64)
        wx = fx - x0
        wy = fy - y0
        acc = np.zeros((h, w), dtype=np.float64)
        prob = heat_prob[..., i]
        for dy, dx, wgt in (
            (0, 0, (1 - wx) * (1 - wy)),
            (0, 1, wx * (1 - wy)),
            (1, 0, (1 - wx) * wy),
            (1, 1, wx * wy),
        ):
            xt = x0 + dx
            yt = y0 + dy
            ok = (xt >= 0) & (xt < w) & (yt >= 0) & (yt < h)
            np.add.at(acc, (yt[ok], xt[ok]), (prob * wgt)[ok])
        scores[..., i] = convolve2d(acc, kernel, mode="same")
    return scores


def decode(pred: Prediction, radius: float = 4.0, sample: int = 0) -> Decoded:
    """Decode one sample of a batched Prediction."""
    heat_prob, _ = sigmoid_forward(pred.heatmaps[sample].astype(np.float64))
    offsets = pred.offsets[sample].astype(np.float64)
    scores = hough_score_maps(heat_prob, offsets, radius)
    h, w, k = scores.shape
    kps = np.zeros((k, 3), dtype=np.float64)
    flat = scores.reshape(-1, k)
    best = flat.argmax(axis=0)
    kps[:, 0] = best % w + 0.5
    kps[:, 1] = best // w + 0.5
    kps[:, 2] = flat[best, np.arange(k)]

    seg_prob, _ = sigmoid_forward(pred.segment[sample, ..., 0].astype(np.float64))
    mask = seg_prob >= 0.5

    parts_logits = pred.parts[sample]
    part_arg = parts_logits.argmax(axis=-1)
    part_map = np.where(mask, part_arg, BACKGROUND_PART).astype(np.uint8)

    uv_full = np.clip(pred.uv[sample].astype(np.float64) + 0.5, 0.0, 1.0)
    rows, cols = np.mgrid[0:h, 0:w]
    uv_map = np.stack(
        [uv_full[rows, cols, 2 * part_arg], uv_full[rows, cols, 2 * part_arg + 1]], axis=-1
    )
    uv_map[~mask] = -1.0

    n = pred.normals[sample].astype(np.float64)
    norms = np.linalg.norm(n, axis=-1, keepdims=True)
    normal_map = np.where(norms > 1e-12, n / np.maximum(norms, 1e-12), 0.0)

    return Decoded(
        keypoints=kps,
        mask=mask,
        part_map=part_map,
        uv_map=uv_map,
        uv_full=uv_full,
        normal_map=normal_map,
    )

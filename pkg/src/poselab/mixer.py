"""Training batch assembly: person crops mixed across sim/real domains.

Ground-truth boxes (with uniform jitter standing in for a detector stage)
are cropped and resized into fixed-size network inputs.  Simulated samples
carry the full label stack; "real" samples expose only the 2D labels, which
at desk scale means a held-out synthetic style with the 2.5D/3D labels
withheld at load time.  Batches are dense arrays so the loss code can slice
simulated rows without ever touching real rows' dense-label buffers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .frameio import frame_dirs, read_frame
from .raster import BACKGROUND_INSTANCE, LabelFrame

DOMAIN_SIM = "sim"
DOMAIN_REAL = "real"


class MixerError(Exception):
    pass


@dataclass(frozen=True)
class MixSpec:
    """Batch composition: size m, sim fraction p, crop geometry, jitter."""

    batch_size: int = 8
    sim_fraction: float = 0.5
    crop_size: int = 64
    label_size: int = 64
    jitter_scale: float = 0.10
    jitter_shift: float = 0.05
    heatmap_radius: float = 4.0  # pixels at label resolution
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise MixerError("batch_size must be >= 1")
        if not 0.0 <= self.sim_fraction <= 1.0:
            raise MixerError("sim_fraction must lie in [0, 1]")
        if self.crop_size < 4 or self.label_size < 4:
            raise MixerError("crop/label sizes too small")


@dataclass
class TrainingSample:
    """One crop with per-task labels; 2.5D/3D labels absent on real samples."""

    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    domain: str
    keypoints: np.ndarray  # (17, 3) crop-frame (x, y, vis)
    heatmap: np.ndarray  # (h, w, 17)
    offsets: np.ndarray  # (h, w, 34), disk-masked, radius-normalized
    offset_mask: np.ndarray  # (h, w, 17)
    instance_mask: np.ndarray  # (h, w, 1)
    part_masks: np.ndarray | None  # (h, w, K)
    uv_maps: np.ndarray | None  # (h, w, 2K), centered at 0
    normals: np.ndarray | None  # (h, w, 3)

    def __post_init__(self):
        if self.domain == DOMAIN_REAL:
            if self.part_masks is not None or self.uv_maps is not None or self.normals is not None:
                raise MixerError("real samples must not carry 2.5D/3D labels")
        elif self.domain == DOMAIN_SIM:
            if self.part_masks is None or self.uv_maps is None or self.normals is None:
                raise MixerError("sim samples must carry all task labels")
            if self.uv_maps.size and (self.uv_maps.min() < -0.5 - 1e-6 or self.uv_maps.max() > 0.5 + 1e-6):
                raise MixerError("centered uv targets must lie in [-0.5, 0.5]")
        else:
            raise MixerError(f"unknown domain {self.domain!r}")

    @property
    def available_tasks(self) -> frozenset[str]:
        tasks = {"heatmap", "offsets", "segment"}
        if self.domain == DOMAIN_SIM:
            tasks |= {"parts", "uv", "normal"}
        return frozenset(tasks)


def _bilinear(plane: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Bilinear sample at continuous center-space coords; edge-clamped."""
    h, w = plane.shape[:2]
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    p00 = plane[y0c, x0c]
    p01 = plane[y0c, x1c]
    p10 = plane[y1c, x0c]
    p11 = plane[y1c, x1c]
    top = p00 * (1 - fx) + p01 * fx
    bot = p10 * (1 - fx) + p11 * fx
    return top * (1 - fy) + bot * fy


def _bilinear_foreground(plane, fg, sx, sy, renormalize=False):
    """Bilinear sampling that ignores background texels.

    Weights of background neighbors are zeroed and the rest renormalized;
    where all four neighbors are background the result is zero (it will be
    gated out by the label masks anyway).
    """
    h, w = plane.shape[:2]
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    acc = np.zeros(sx.shape + (plane.shape[2],), dtype=np.float64)
    wsum = np.zeros(sx.shape, dtype=np.float64)
    for dy, dx, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (0, 1, fx * (1 - fy)),
        (1, 0, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xc = np.clip(x0 + dx, 0, w - 1)
        yc = np.clip(y0 + dy, 0, h - 1)
        valid = fg[yc, xc]
        wv = wgt * valid
        acc += wv[..., None] * plane[yc, xc]
        wsum += wv
    out = np.where(wsum[..., None] > 0, acc / np.maximum(wsum, 1e-12)[..., None], 0.0)
    if renormalize:
        norms = np.linalg.norm(out, axis=-1, keepdims=True)
        out = np.where(norms > 1e-12, out / np.maximum(norms, 1e-12), 0.0)
    return out


def keypoint_targets(
    keypoints: np.ndarray, height: int, width: int, radius: float
):
    """Heatmap disks, radius-normalized subpixel offsets, and the disk mask.

    keypoints: (17, 3) label-resolution (x, y, vis); vis 0 means unlabeled
    (no disk).  Offsets point from the pixel center to the exact keypoint.
    """
    k = len(keypoints)
    heat = np.zeros((height, width, k), dtype=np.float32)
    offs = np.zeros((height, width, 2 * k), dtype=np.float32)
    mask = np.zeros((height, width, k), dtype=np.float32)
    ys, xs = np.mgrid[0:height, 0:width]
    cx = xs + 0.5
    cy = ys + 0.5
    for i, (kx, ky, vis) in enumerate(keypoints):
        if vis < 0.5:
            continue
        d2 = (cx - kx) ** 2 + (cy - ky) ** 2
        disk = d2 <= radius**2
        heat[..., i] = disk
        mask[..., i] = disk
        offs[..., 2 * i] = np.where(disk, (kx - cx) / radius, 0.0)
        offs[..., 2 * i + 1] = np.where(disk, (ky - cy) / radius, 0.0)
    return heat, offs, mask


def crop_resize(
    frame: LabelFrame,
    instance: int,
    box: tuple[float, float, float, float],
    spec: MixSpec,
    domain: str,
    num_parts: int,
) -> TrainingSample:
    """Crop one person box out of a frame and regenerate labels at crop scale.

    Image/uv/normal planes are bilinearly resampled (uv and normals from
    foreground texels only, normals renormalized); categorical planes use
    nearest neighbor.  Keypoints are remapped into the crop frame and the
    heatmap/offset targets are regenerated at label resolution.
    """
    x0, y0, x1, y1 = box
    bw, bh = x1 - x0, y1 - y0
    if bw <= 0 or bh <= 0:
        raise MixerError(f"degenerate box {box}")
    src_h, src_w = frame.instance.shape
    if x1 <= 0 or y1 <= 0 or x0 >= src_w or y0 >= src_h:
        raise MixerError(f"box {box} does not intersect the image")

    def grid(out_size):
        js = np.arange(out_size[1])
        is_ = np.arange(out_size[0])
        sx = x0 + (js + 0.5) * bw / out_size[1] - 0.5
        sy = y0 + (is_ + 0.5) * bh / out_size[0] - 0.5
        return np.meshgrid(sx, sy)

    sx_i, sy_i = grid((spec.crop_size, spec.crop_size))
    image = _bilinear(frame.color.astype(np.float32) / 255.0, sx_i, sy_i).astype(np.float32)

    sx_l, sy_l = grid((spec.label_size, spec.label_size))
    nx = np.clip(np.round(sx_l).astype(np.int64), 0, src_w - 1)
    ny = np.clip(np.round(sy_l).astype(np.int64), 0, src_h - 1)
    inst_plane = frame.instance[ny, nx]
    part_plane = frame.part[ny, nx]
    instance_mask = (inst_plane == instance).astype(np.float32)[..., None]

    scale_x = spec.label_size / bw
    scale_y = spec.label_size / bh
    kps = frame.keypoints[instance].astype(np.float64).copy()
    kps[:, 0] = (kps[:, 0] - x0) * scale_x
    kps[:, 1] = (kps[:, 1] - y0) * scale_y
    off_image = (
        (kps[:, 0] < 0) | (kps[:, 0] >= spec.label_size)
        | (kps[:, 1] < 0) | (kps[:, 1] >= spec.label_size)
    )
    kps[off_image, 2] = 0.0
    heat, offs, mask = keypoint_targets(kps, spec.label_size, spec.label_size, spec.heatmap_radius)

    part_masks = uv_maps = normals = None
    if domain == DOMAIN_SIM:
        own = instance_mask[..., 0] > 0
        part_masks = np.zeros((spec.label_size, spec.label_size, num_parts), dtype=np.float32)
        for p in range(num_parts):
            part_masks[..., p] = own & (part_plane == p)
        fg = frame.instance != BACKGROUND_INSTANCE
        uv_s = _bilinear_foreground(frame.uv.astype(np.float64), fg, sx_l, sy_l)
        uv_s = np.clip(uv_s, 0.0, 1.0) - 0.5
        uv_maps = np.zeros((spec.label_size, spec.label_size, 2 * num_parts), dtype=np.float32)
        for p in range(num_parts):
            on = part_masks[..., p] > 0
            uv_maps[..., 2 * p] = np.where(on, uv_s[..., 0], 0.0)
            uv_maps[..., 2 * p + 1] = np.where(on, uv_s[..., 1], 0.0)
        normals = _bilinear_foreground(
            frame.normal.astype(np.float64), fg, sx_l, sy_l, renormalize=True
        )
        normals = (normals * (own[..., None])).astype(np.float32)

    return TrainingSample(
        image=image,
        domain=domain,
        keypoints=kps.astype(np.float32),
        heatmap=heat,
        offsets=offs,
        offset_mask=mask,
        instance_mask=instance_mask,
        part_masks=part_masks,
        uv_maps=uv_maps,
        normals=normals,
    )


# ---------------------------------------------------------------------------
# pools and batches


@dataclass(frozen=True)
class CropRecord:
    frame_dir: Path
    instance: int
    box: tuple[float, float, float, float]


@lru_cache(maxsize=128)
def _cached_frame(frame_dir: str) -> LabelFrame:
    return read_frame(frame_dir)


def instance_boxes(frame: LabelFrame, pad: float = 0.12, min_pixels: int = 40):
    """Tight GT boxes per instance id, padded by a fraction of the box size."""
    boxes = {}
    for inst in range(frame.num_instances):
        ys, xs = np.nonzero(frame.instance == inst)
        if len(xs) < min_pixels:
            continue
        x0, x1 = float(xs.min()), float(xs.max() + 1)
        y0, y1 = float(ys.min()), float(ys.max() + 1)
        px = (x1 - x0) * pad
        py = (y1 - y0) * pad
        boxes[inst] = (x0 - px, y0 - py, x1 + px, y1 + py)
    return boxes


def build_pool(dataset_dir: str | Path, min_pixels: int = 40) -> list[CropRecord]:
    """One CropRecord per (frame, instance) with enough visible pixels."""
    records = []
    for d in frame_dirs(dataset_dir):
        frame = _cached_frame(str(d))
        for inst, box in instance_boxes(frame, min_pixels=min_pixels).items():
            records.append(CropRecord(frame_dir=d, instance=inst, box=box))
    if not records:
        raise MixerError(f"no usable person crops under {dataset_dir}")
    return records


@dataclass
class SampleBatch:
    """Dense mixed batch; 2.5D/3D buffers hold zeros on real rows and the
    loss code must never read them there (Eq. of the partial objective)."""

    images: np.ndarray  # (m, H, W, 3)
    is_sim: np.ndarray  # (m,) bool
    heatmaps: np.ndarray
    offsets: np.ndarray
    offset_mask: np.ndarray
    instance_masks: np.ndarray
    part_masks: np.ndarray  # (m, h, w, K), zeros on real rows
    uv_maps: np.ndarray  # (m, h, w, 2K)
    normals: np.ndarray  # (m, h, w, 3)
    keypoints: np.ndarray  # (m, 17, 3)

    @property
    def size(self) -> int:
        return len(self.images)


def sim_count(spec: MixSpec) -> int:
    return int(np.floor(spec.sim_fraction * spec.batch_size + 0.5))


def make_batch(
    sim_pool: list[CropRecord],
    real_pool: list[CropRecord],
    spec: MixSpec,
    num_parts: int,
    step: int = 0,
) -> SampleBatch:
    """Draw round(p*m) sim and m - round(p*m) real crops, jitter their boxes,
    crop, and shuffle.  Deterministic in (spec.seed, step)."""
    n_sim = sim_count(spec)
    n_real = spec.batch_size - n_sim
    if n_sim > 0 and not sim_pool:
        raise MixerError("sim pool is empty but sim_fraction > 0")
    if n_real > 0 and not real_pool:
        raise MixerError("real pool is empty but sim_fraction < 1")
    rng = np.random.default_rng([spec.seed, step])

    samples: list[TrainingSample] = []
    for domain, pool, count in (
        (DOMAIN_SIM, sim_pool, n_sim),
        (DOMAIN_REAL, real_pool, n_real),
    ):
        for _ in range(count):
            rec = pool[int(rng.integers(0, len(pool)))]
            frame = _cached_frame(str(rec.frame_dir))
            box = jitter_box(rec.box, spec, rng)
            samples.append(
                crop_resize(frame, rec.instance, box, spec, domain, num_parts)
            )
    order = rng.permutation(len(samples))
    samples = [samples[i] for i in order]
    return pack_batch(samples, num_parts)


def jitter_box(box, spec: MixSpec, rng: np.random.Generator):
    x0, y0, x1, y1 = box
    w, h = x1 - x0, y1 - y0
    sx = 1.0 + rng.uniform(-spec.jitter_scale, spec.jitter_scale)
    sy = 1.0 + rng.uniform(-spec.jitter_scale, spec.jitter_scale)
    tx = rng.uniform(-spec.jitter_shift, spec.jitter_shift) * w
    ty = rng.uniform(-spec.jitter_shift, spec.jitter_shift) * h
    cx, cy = (x0 + x1) / 2 + tx, (y0 + y1) / 2 + ty
    return (cx - w * sx / 2, cy - h * sy / 2, cx + w * sx / 2, cy + h * sy / 2)


def pack_batch(samples: list[TrainingSample], num_parts: int) -> SampleBatch:
    m = len(samples)
    h = w = samples[0].heatmap.shape[0]
    crop = samples[0].image.shape[0]
    batch = SampleBatch(
        images=np.zeros((m, crop, crop, 3), dtype=np.float32),
        is_sim=np.zeros(m, dtype=bool),
        heatmaps=np.zeros((m, h, w, 17), dtype=np.float32),
        offsets=np.zeros((m, h, w, 34), dtype=np.float32),
        offset_mask=np.zeros((m, h, w, 17), dtype=np.float32),
        instance_masks=np.zeros((m, h, w, 1), dtype=np.float32),
        part_masks=np.zeros((m, h, w, num_parts), dtype=np.float32),
        uv_maps=np.zeros((m, h, w, 2 * num_parts), dtype=np.float32),
        normals=np.zeros((m, h, w, 3), dtype=np.float32),
        keypoints=np.zeros((m, 17, 3), dtype=np.float32),
    )
    for i, s in enumerate(samples):
        batch.images[i] = s.image
        batch.is_sim[i] = s.domain == DOMAIN_SIM
        batch.heatmaps[i] = s.heatmap
        batch.offsets[i] = s.offsets
        batch.offset_mask[i] = s.offset_mask
        batch.instance_masks[i] = s.instance_mask
        batch.keypoints[i] = s.keypoints
        if s.domain == DOMAIN_SIM:
            batch.part_masks[i] = s.part_masks
            batch.uv_maps[i] = s.uv_maps
            batch.normals[i] = s.normals
    return batch

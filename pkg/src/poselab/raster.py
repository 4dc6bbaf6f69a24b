"""Software rasterizer for per-pixel label maps.

Renders posed figures with a perspective pinhole camera into a LabelFrame:
flat-lit color, depth, part index, chart UV, world-space surface normal,
instance id, and projected 2D keypoints with visibility.  Attributes are
interpolated with perspective-correct barycentric weights; normals are
renormalized after interpolation.  Label planes are never anti-aliased.

The z-test is strict (first-drawn wins ties) and triangles are processed in
a fixed order, so output is deterministic and independent of the scanline
band split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rig import PosedFigure

BACKGROUND_PART = 255
BACKGROUND_INSTANCE = 255
BACKGROUND_UV = -1.0
KEYPOINT_OCCLUSION_EPS = 1e-2  # meters

# visibility codes, COCO-style
KP_OFF_IMAGE = 0
KP_OCCLUDED = 1
KP_VISIBLE = 2

_LIGHT_DIRS = np.array([[-0.4, -0.8, -0.45], [0.6, -0.3, 0.74]])
_LIGHT_DIRS = _LIGHT_DIRS / np.linalg.norm(_LIGHT_DIRS, axis=1, keepdims=True)
_LIGHT_POWER = np.array([0.55, 0.35])
_AMBIENT = 0.25


class RasterError(Exception):
    pass


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: image size, vertical field of view, pose, clip planes."""

    width: int = 800
    height: int = 800
    fov_deg: float = 60.0
    position: tuple[float, float, float] = (0.0, 1.6, 4.5)
    look_at: tuple[float, float, float] = (0.0, 0.9, 0.0)
    near: float = 0.05
    far: float = 100.0

    def __post_init__(self):
        if not (0.0 < self.fov_deg < 180.0):
            raise RasterError(f"fov must be in (0, 180), got {self.fov_deg}")
        if self.near >= self.far or self.near <= 0:
            raise RasterError("need 0 < near < far")
        if self.width <= 0 or self.height <= 0:
            raise RasterError("image dimensions must be positive")

    def view_axes(self):
        """Rows are camera right/up/forward in world space (forward = -z)."""
        eye = np.asarray(self.position, dtype=np.float64)
        fwd = np.asarray(self.look_at, dtype=np.float64) - eye
        n = np.linalg.norm(fwd)
        if n < 1e-12:
            raise RasterError("camera position equals look_at")
        fwd = fwd / n
        world_up = np.array([0.0, 1.0, 0.0])
        if abs(np.dot(fwd, world_up)) > 0.999:
            world_up = np.array([0.0, 0.0, 1.0])
        right = np.cross(fwd, world_up)
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return eye, right, up, fwd

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World -> camera space (x right, y up, looking along -z)."""
        eye, right, up, fwd = self.view_axes()
        rel = np.asarray(points, dtype=np.float64) - eye
        return np.stack([rel @ right, rel @ up, -(rel @ fwd)], axis=-1)

    def project(self, points: np.ndarray):
        """Returns pixel (x, y), view depth (meters along forward), in-frustum mask."""
        cam = self.to_camera(points)
        depth = -cam[..., 2]
        f = 1.0 / math.tan(math.radians(self.fov_deg) / 2.0)
        aspect = self.width / self.height
        with np.errstate(divide="ignore", invalid="ignore"):
            ndc_x = (cam[..., 0] * f / aspect) / depth
            ndc_y = (cam[..., 1] * f) / depth
        px = (ndc_x + 1.0) * 0.5 * self.width
        py = (1.0 - ndc_y) * 0.5 * self.height
        ok = (depth > self.near) & (depth < self.far)
        ok &= (px >= 0) & (px < self.width) & (py >= 0) & (py < self.height)
        return np.stack([px, py], axis=-1), depth, ok


@dataclass
class LabelFrame:
    """Per-pixel groundtruth stack for one rendered image.

    Background sentinels: depth +inf, part 255, uv (-1, -1), normal zeros,
    instance 255.  keypoints holds (x, y, visibility) per instance in pixel
    coordinates, COCO keypoint order.
    """

    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float32
    part: np.ndarray  # (H, W) uint8
    uv: np.ndarray  # (H, W, 2) float32
    normal: np.ndarray  # (H, W, 3) float32
    instance: np.ndarray  # (H, W) uint8
    keypoints: np.ndarray  # (n_instances, 17, 3) float32

    @property
    def num_instances(self) -> int:
        return len(self.keypoints)

    def foreground(self) -> np.ndarray:
        return self.instance != BACKGROUND_INSTANCE

    def validate(self, atol: float = 1e-5) -> None:
        fg = self.foreground()
        if fg.any():
            norms = np.linalg.norm(self.normal[fg], axis=-1)
            if np.abs(norms - 1.0).max() > atol:
                raise RasterError("foreground normals must be unit length")
            if self.uv[fg].min() < 0.0 or self.uv[fg].max() > 1.0:
                raise RasterError("foreground uv must lie in [0,1]^2")
            if (self.part[fg] == BACKGROUND_PART).any():
                raise RasterError("foreground pixels must carry a valid part")
        bg = ~fg
        if bg.any():
            if not np.all(np.isinf(self.depth[bg])):
                raise RasterError("background depth must be +inf")
            if not np.all(self.part[bg] == BACKGROUND_PART):
                raise RasterError("background part must be the sentinel")
            if not np.all(self.uv[bg] == BACKGROUND_UV):
                raise RasterError("background uv must be the sentinel")
            if not np.all(self.normal[bg] == 0.0):
                raise RasterError("background normal must be zero")


def _empty_frame(cam: Camera, background) -> LabelFrame:
    h, w = cam.height, cam.width
    if background is None:
        color = np.zeros((h, w, 3), dtype=np.uint8)
        color[:] = (36, 40, 46)
    elif isinstance(background, np.ndarray) and background.ndim == 3:
        if background.shape[:2] != (h, w):
            raise RasterError("background image size must match the camera")
        color = background.astype(np.uint8).copy()
    else:
        color = np.zeros((h, w, 3), dtype=np.uint8)
        color[:] = np.round(np.asarray(background, dtype=np.float64) * 255.0).astype(np.uint8)
    return LabelFrame(
        color=color,
        depth=np.full((h, w), np.inf, dtype=np.float32),
        part=np.full((h, w), BACKGROUND_PART, dtype=np.uint8),
        uv=np.full((h, w, 2), BACKGROUND_UV, dtype=np.float32),
        normal=np.zeros((h, w, 3), dtype=np.float32),
        instance=np.full((h, w), BACKGROUND_INSTANCE, dtype=np.uint8),
        keypoints=np.zeros((0, 17, 3), dtype=np.float32),
    )


def _shade(albedo: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Flat Lambertian with two directional lights; albedo (3,), normals (n,3)."""
    lambert = np.maximum(0.0, -(normals @ _LIGHT_DIRS.T))  # (n, 2)
    intensity = _AMBIENT + lambert @ _LIGHT_POWER
    rgb = np.clip(albedo[None, :] * intensity[:, None], 0.0, 1.0)
    return np.round(rgb * 255.0).astype(np.uint8)


def rasterize(
    scene: list[PosedFigure],
    cam: Camera,
    background=None,
    bands: int = 1,
) -> LabelFrame:
    """Z-buffered rasterization of posed figures into a LabelFrame.

    Instance id is the figure's index in `scene`.  An empty scene yields an
    all-background frame.  `bands` splits rows into horizontal strips whose
    buffers are disjoint, so the result is identical for any band count.
    """
    frame = _empty_frame(cam, background)
    h, w = cam.height, cam.width
    f = 1.0 / math.tan(math.radians(cam.fov_deg) / 2.0)
    aspect = w / h

    # precompute per-figure camera-space and screen-space vertices
    fig_screen, fig_depth, fig_normals = [], [], []
    for fig in scene:
        cam_pts = cam.to_camera(fig.mesh.vertices)
        depth = -cam_pts[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            px = (cam_pts[:, 0] * f / aspect) / depth
            py = (cam_pts[:, 1] * f) / depth
        sx = (px + 1.0) * 0.5 * w
        sy = (1.0 - py) * 0.5 * h
        fig_screen.append(np.stack([sx, sy], axis=1))
        fig_depth.append(depth)
        fig_normals.append(fig.vertex_normals)

    band_edges = np.linspace(0, h, bands + 1).astype(int)
    _, cam_right, cam_up, cam_fwd = cam.view_axes()

    for band in range(bands):
        y0, y1 = int(band_edges[band]), int(band_edges[band + 1])
        if y0 >= y1:
            continue
        for inst, fig in enumerate(scene):
            screen = fig_screen[inst]
            depth_v = fig_depth[inst]
            normals = fig_normals[inst]
            uv = fig.mesh.uv
            if uv is None:
                raise RasterError(f"figure {inst} has no UV; transfer the atlas first")
            tris = fig.mesh.triangles
            tri_parts = fig.mesh.part_of_triangle
            for t in range(len(tris)):
                ia, ib, ic = tris[t]
                za, zb, zc = depth_v[ia], depth_v[ib], depth_v[ic]
                if min(za, zb, zc) <= cam.near or max(za, zb, zc) >= cam.far:
                    continue
                a, b, c = screen[ia], screen[ib], screen[ic]
                # front faces wind clockwise in pixel space (y grows down)
                area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                if area >= -1e-12:
                    continue  # back-facing or degenerate
                xmin = max(int(math.floor(min(a[0], b[0], c[0]))), 0)
                xmax = min(int(math.ceil(max(a[0], b[0], c[0]))), w - 1)
                ymin = max(int(math.floor(min(a[1], b[1], c[1]))), y0)
                ymax = min(int(math.ceil(max(a[1], b[1], c[1]))), y1 - 1)
                if xmin > xmax or ymin > ymax:
                    continue
                xs = np.arange(xmin, xmax + 1) + 0.5
                ys = np.arange(ymin, ymax + 1) + 0.5
                gx, gy = np.meshgrid(xs, ys)
                e0 = (c[0] - b[0]) * (gy - b[1]) - (c[1] - b[1]) * (gx - b[0])
                e1 = (a[0] - c[0]) * (gy - c[1]) - (a[1] - c[1]) * (gx - c[0])
                e2 = (b[0] - a[0]) * (gy - a[1]) - (b[1] - a[1]) * (gx - a[0])
                inside = (e0 <= 0) & (e1 <= 0) & (e2 <= 0)
                if not inside.any():
                    continue
                l0 = e0[inside] / area
                l1 = e1[inside] / area
                l2 = e2[inside] / area
                inv_z = l0 / za + l1 / zb + l2 / zc
                z = 1.0 / inv_z
                yy, xx = np.nonzero(inside)
                yy = yy + ymin
                xx = xx + xmin
                closer = z < frame.depth[yy, xx]
                if not closer.any():
                    continue
                yy, xx = yy[closer], xx[closer]
                z = z[closer]
                w0 = (l0[closer] / za) * z
                w1 = (l1[closer] / zb) * z
                w2 = (l2[closer] / zc) * z
                frame.depth[yy, xx] = z.astype(np.float32)
                frame.instance[yy, xx] = inst
                frame.part[yy, xx] = tri_parts[t]
                uv_pix = (
                    w0[:, None] * uv[ia] + w1[:, None] * uv[ib] + w2[:, None] * uv[ic]
                )
                frame.uv[yy, xx] = np.clip(uv_pix, 0.0, 1.0).astype(np.float32)
                n_pix = (
                    w0[:, None] * normals[ia]
                    + w1[:, None] * normals[ib]
                    + w2[:, None] * normals[ic]
                )
                norms = np.linalg.norm(n_pix, axis=1, keepdims=True)
                norms[norms < 1e-12] = 1.0
                n_pix = n_pix / norms
                # Interpolated smooth normals can tip past the silhouette on
                # low-poly tubes; clamp them to the visible hemisphere so every
                # foreground normal faces the camera.
                ndc_px = (xx + 0.5) / w * 2.0 - 1.0
                ndc_py = 1.0 - (yy + 0.5) / h * 2.0
                rays = (
                    (ndc_px * aspect / f)[:, None] * cam_right[None]
                    + (ndc_py / f)[:, None] * cam_up[None]
                    + cam_fwd[None]
                )
                rays = rays / np.linalg.norm(rays, axis=1, keepdims=True)
                dots = np.einsum("ij,ij->i", n_pix, rays)
                grazing = dots > -1e-4
                if grazing.any():
                    n_pix[grazing] -= (dots[grazing] + 1e-4)[:, None] * rays[grazing]
                    n_pix[grazing] /= np.linalg.norm(n_pix[grazing], axis=1, keepdims=True)
                frame.normal[yy, xx] = n_pix.astype(np.float32)
                albedo = fig.part_colors[tri_parts[t]]
                frame.color[yy, xx] = _shade(albedo, n_pix)

    frame.keypoints = np.stack(
        [project_keypoints(fig.keypoints, cam, frame.depth) for fig in scene], axis=0
    ).astype(np.float32) if scene else np.zeros((0, 17, 3), dtype=np.float32)
    return frame


def project_keypoints(world_kps: np.ndarray, cam: Camera, depth_map: np.ndarray) -> np.ndarray:
    """Project 3D keypoints to (x, y, visibility) pixel rows.

    Visibility: 0 off-image (outside the frustum), 1 occluded (keypoint depth
    exceeds the depth map by more than the occlusion epsilon), 2 visible.
    """
    pix, depth, ok = cam.project(world_kps)
    out = np.zeros((len(world_kps), 3), dtype=np.float32)
    out[:, :2] = pix
    for k in range(len(world_kps)):
        if not ok[k] or not np.isfinite(pix[k]).all():
            out[k, 2] = KP_OFF_IMAGE
            continue
        x, y = int(pix[k, 0]), int(pix[k, 1])
        surface = depth_map[min(max(y, 0), depth_map.shape[0] - 1),
                            min(max(x, 0), depth_map.shape[1] - 1)]
        if depth[k] > surface + KEYPOINT_OCCLUSION_EPS:
            out[k, 2] = KP_OCCLUDED
        else:
            out[k, 2] = KP_VISIBLE
    return out


def supersampled_color(scene, cam: Camera, background=None) -> np.ndarray:
    """2x2 supersampled color plane (labels stay crisp at native resolution)."""
    from dataclasses import replace as _replace

    big = _replace(cam, width=cam.width * 2, height=cam.height * 2)
    bg = background
    if isinstance(background, np.ndarray) and background.ndim == 3:
        bg = np.repeat(np.repeat(background, 2, axis=0), 2, axis=1)
    frame = rasterize(scene, big, background=bg)
    c = frame.color.astype(np.float64)
    pooled = (c[0::2, 0::2] + c[0::2, 1::2] + c[1::2, 0::2] + c[1::2, 1::2]) / 4.0
    return np.round(pooled).astype(np.uint8)

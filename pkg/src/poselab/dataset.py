"""Rendered dataset generation: scenes -> frames on disk.

Two domain styles share the geometry pipeline but differ in figure pool
seeds, hue-augmentation range, and backgrounds.  The "real" domain is a
withheld synthetic style: its frames still contain every label plane (they
come from the same rasterizer), but training loaders expose only the 2D
labels for that domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .frameio import write_frame
from .raster import Camera, rasterize
from .rig import SkinnedFigure, pose_figure, rotate_hue
from .sampling import sample_scene


@dataclass(frozen=True)
class DomainStyle:
    """Appearance knobs separating the sim and "real" domains."""

    name: str
    hue_range: tuple[float, float]  # hue rotation angle range, radians
    background: str  # "flat" | "checker"
    background_palette: tuple[tuple[float, float, float], ...]
    pose_seed_offset: int


SIM_STYLE = DomainStyle(
    name="sim",
    hue_range=(0.0, math.pi * 0.5),
    background="flat",
    background_palette=((0.14, 0.16, 0.18), (0.20, 0.18, 0.14), (0.12, 0.20, 0.16)),
    pose_seed_offset=0,
)

REAL_STYLE = DomainStyle(
    name="real",
    hue_range=(math.pi * 0.75, math.pi * 1.6),
    background="checker",
    background_palette=((0.55, 0.50, 0.42), (0.35, 0.42, 0.52), (0.62, 0.58, 0.55)),
    pose_seed_offset=77_000,
)

STYLES = {"sim": SIM_STYLE, "real": REAL_STYLE}


@dataclass(frozen=True)
class CameraDistribution:
    distance: tuple[float, float] = (3.1, 4.3)
    elevation_deg: tuple[float, float] = (8.0, 28.0)
    look_at_height: float = 0.85

    def sample(self, rng: np.random.Generator, width, height, fov_deg) -> Camera:
        azimuth = rng.uniform(0.0, 2.0 * math.pi)
        elevation = math.radians(rng.uniform(*self.elevation_deg))
        distance = rng.uniform(*self.distance)
        look = np.array([0.0, self.look_at_height, 0.0])
        offset = distance * np.array(
            [
                math.cos(elevation) * math.sin(azimuth),
                math.sin(elevation),
                math.cos(elevation) * math.cos(azimuth),
            ]
        )
        eye = look + offset
        return Camera(
            width=width,
            height=height,
            fov_deg=fov_deg,
            position=tuple(eye),
            look_at=tuple(look),
        )


def make_background(style: DomainStyle, height: int, width: int, rng: np.random.Generator):
    colors = style.background_palette
    base = np.array(colors[int(rng.integers(0, len(colors)))], dtype=np.float64)
    if style.background == "flat":
        img = np.tile(base, (height, width, 1))
    else:
        other = np.array(colors[int(rng.integers(0, len(colors)))], dtype=np.float64)
        other = 0.5 * (other + rng.uniform(0.0, 0.3, 3))
        cell = max(4, height // 10)
        ys, xs = np.mgrid[0:height, 0:width]
        checker = ((ys // cell) + (xs // cell)) % 2
        img = np.where(checker[..., None] == 0, base, other)
    return np.round(np.clip(img, 0, 1) * 255.0).astype(np.uint8)


def generate_dataset(
    figures: list[SkinnedFigure],
    out_dir: str | Path,
    n_images: int,
    seed: int,
    style: DomainStyle,
    width: int = 800,
    height: int = 800,
    fov_deg: float = 60.0,
    max_people: int = 12,
    bounds: tuple[float, float, float, float] = (-1.2, 1.2, -1.2, 1.2),
    camera_dist: CameraDistribution | None = None,
) -> list[Path]:
    """Render n_images scenes into frame directories; deterministic in seed."""
    out_dir = Path(out_dir)
    camera_dist = camera_dist or CameraDistribution()
    paths = []
    for i in range(n_images):
        scene_seed = seed + style.pose_seed_offset + i
        rng = np.random.default_rng([scene_seed, 1])
        placements = sample_scene(figures, max_people, bounds, scene_seed)
        posed = []
        for fig_id, pose in placements:
            angle = rng.uniform(*style.hue_range)
            fig = figures[fig_id]
            fig = replace(fig, part_colors=rotate_hue(fig.part_colors, angle))
            posed.append(pose_figure(fig, pose))
        cam = camera_dist.sample(rng, width, height, fov_deg)
        background = make_background(style, height, width, rng)
        frame = rasterize(posed, cam, background=background)
        path = out_dir / f"frame_{i:05d}"
        write_frame(frame, path)
        paths.append(path)
    return paths

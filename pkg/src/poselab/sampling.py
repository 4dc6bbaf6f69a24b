"""Pose and scene randomization for dataset generation.

Poses are drawn per joint inside anatomical limit boxes, optionally around
one of a small library of hand-authored canonical poses.  Scenes place up
to n_max figures on a ground rectangle with rejection sampling so that the
figures' ground circles never intersect.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import yaml

from .rig import PoseSample, PosedFigure, RigError, SceneTooCrowdedError, SkinnedFigure, pose_figure

# Per-joint axis-angle component limits (radians), [lo, hi] per axis.
DEFAULT_POSE_LIMITS: dict[str, list[list[float]]] = {
    "pelvis": [[-0.15, 0.15], [-0.3, 0.3], [-0.15, 0.15]],
    "chest": [[-0.25, 0.25], [-0.3, 0.3], [-0.2, 0.2]],
    "neck": [[-0.3, 0.3], [-0.4, 0.4], [-0.2, 0.2]],
    "head": [[-0.3, 0.3], [-0.5, 0.5], [-0.2, 0.2]],
    "left_shoulder": [[-0.9, 0.9], [-0.9, 0.9], [-1.2, 1.2]],
    "right_shoulder": [[-0.9, 0.9], [-0.9, 0.9], [-1.2, 1.2]],
    "left_elbow": [[-0.2, 0.2], [-2.1, 0.1], [-0.2, 0.2]],
    "right_elbow": [[-0.2, 0.2], [-0.1, 2.1], [-0.2, 0.2]],
    "left_wrist": [[-0.4, 0.4], [-0.4, 0.4], [-0.4, 0.4]],
    "right_wrist": [[-0.4, 0.4], [-0.4, 0.4], [-0.4, 0.4]],
    "left_hip": [[-1.0, 0.6], [-0.4, 0.4], [-0.5, 0.2]],
    "right_hip": [[-1.0, 0.6], [-0.4, 0.4], [-0.2, 0.5]],
    "left_knee": [[0.0, 2.0], [-0.1, 0.1], [-0.1, 0.1]],
    "right_knee": [[0.0, 2.0], [-0.1, 0.1], [-0.1, 0.1]],
    "left_ankle": [[-0.4, 0.4], [-0.2, 0.2], [-0.2, 0.2]],
    "right_ankle": [[-0.4, 0.4], [-0.2, 0.2], [-0.2, 0.2]],
}

# Hand-authored canonical poses layered on top of the uniform sampler.
CANONICAL_POSES: dict[str, dict[str, tuple[float, float, float]]] = {
    "stand": {},
    "walk_left": {
        "left_hip": (-0.5, 0, 0), "right_hip": (0.4, 0, 0),
        "left_knee": (0.3, 0, 0), "right_knee": (0.7, 0, 0),
        "left_shoulder": (0.4, 0, -0.9), "right_shoulder": (-0.4, 0, 0.9),
    },
    "walk_right": {
        "left_hip": (0.4, 0, 0), "right_hip": (-0.5, 0, 0),
        "left_knee": (0.7, 0, 0), "right_knee": (0.3, 0, 0),
        "left_shoulder": (-0.4, 0, -0.9), "right_shoulder": (0.4, 0, 0.9),
    },
    "sit": {
        "left_hip": (-1.0, 0, 0), "right_hip": (-1.0, 0, 0),
        "left_knee": (1.4, 0, 0), "right_knee": (1.4, 0, 0),
        "left_shoulder": (0, 0, -1.0), "right_shoulder": (0, 0, 1.0),
    },
    "reach_up": {
        "left_shoulder": (0, 0, 1.1), "right_shoulder": (0, 0, -1.1),
        "chest": (-0.1, 0, 0),
    },
    "arms_down": {
        "left_shoulder": (0, 0, -1.2), "right_shoulder": (0, 0, 1.2),
    },
    "wave": {
        "left_shoulder": (0, 0, 1.0), "left_elbow": (0, -1.2, 0),
        "right_shoulder": (0, 0, -1.1),
    },
    "lunge": {
        "left_hip": (-0.8, 0, 0), "left_knee": (0.9, 0, 0),
        "right_hip": (0.5, 0, 0), "chest": (0.15, 0, 0),
        "left_shoulder": (0.5, 0, -0.6), "right_shoulder": (-0.5, 0, 0.6),
    },
}


def load_pose_limits(path: str | Path) -> dict[str, list[list[float]]]:
    """Read a YAML pose-limit file: joint -> [[lo, hi] x 3] radians."""
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise RigError(f"{path}: pose-limit file must map joint names to axis ranges")
    limits = dict(DEFAULT_POSE_LIMITS)
    for joint, ranges in data.items():
        arr = np.asarray(ranges, dtype=np.float64)
        if arr.shape != (3, 2) or np.any(arr[:, 0] > arr[:, 1]):
            raise RigError(f"{path}: joint {joint!r} needs three [lo, hi] ranges")
        limits[str(joint)] = arr.tolist()
    return limits


def sample_pose(
    rng: np.random.Generator,
    limits: dict[str, list[list[float]]] | None = None,
    canonical_prob: float = 0.5,
) -> PoseSample:
    """One random pose: canonical base (sometimes) plus uniform joint noise."""
    limits = limits or DEFAULT_POSE_LIMITS
    base: dict[str, tuple[float, float, float]] = {}
    scale = 1.0
    if rng.uniform() < canonical_prob:
        name = list(CANONICAL_POSES)[int(rng.integers(0, len(CANONICAL_POSES)))]
        base = CANONICAL_POSES[name]
        scale = 0.2  # keep the canonical silhouette, jitter lightly
    rotations: dict[str, np.ndarray] = {}
    for joint, ranges in limits.items():
        lo = np.array([r[0] for r in ranges])
        hi = np.array([r[1] for r in ranges])
        rv = np.asarray(base.get(joint, (0.0, 0.0, 0.0)), dtype=np.float64)
        rv = rv + scale * rng.uniform(lo, hi)
        rotations[joint] = np.clip(rv, lo, hi)
    return PoseSample(rotations=rotations, yaw=float(rng.uniform(0.0, 2.0 * math.pi)))


def ground_radius(posed: PosedFigure) -> float:
    """Bounding circle radius of the posed mesh around its placement origin."""
    return float(np.linalg.norm(posed.mesh.vertices[:, [0, 2]], axis=1).max())


def sample_scene(
    figures: list[SkinnedFigure],
    n_max: int,
    bounds: tuple[float, float, float, float],
    seed: int,
    limits: dict[str, list[list[float]]] | None = None,
    max_attempts: int = 200,
) -> list[tuple[int, PoseSample]]:
    """Place 1..n_max posed figures without ground-circle intersection.

    bounds is the (xmin, xmax, zmin, zmax) rectangle of allowed centers.
    Positions are rejected and resampled until each new circle clears every
    accepted one by the sum of radii; persistent failure raises
    SceneTooCrowdedError.  Deterministic given the seed.
    """
    if not figures:
        raise RigError("figure pool is empty")
    xmin, xmax, zmin, zmax = bounds
    if xmax <= xmin or zmax <= zmin:
        raise RigError("empty scene bounds")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, n_max + 1))
    placed: list[tuple[int, PoseSample]] = []
    centers: list[np.ndarray] = []
    radii: list[float] = []
    for _ in range(n):
        fig_id = int(rng.integers(0, len(figures)))
        pose = sample_pose(rng, limits)
        radius = ground_radius(pose_figure(figures[fig_id], pose))
        for attempt in range(max_attempts):
            pos = np.array([rng.uniform(xmin, xmax), rng.uniform(zmin, zmax)])
            ok = all(
                np.linalg.norm(pos - c) > radius + r for c, r in zip(centers, radii)
            )
            if ok:
                break
        else:
            raise SceneTooCrowdedError(
                f"could not place figure {len(placed) + 1}/{n} after {max_attempts} attempts"
            )
        centers.append(pos)
        radii.append(radius)
        placed.append((fig_id, PoseSample(rotations=pose.rotations, yaw=pose.yaw,
                                          position=(float(pos[0]), float(pos[1])))))
    return placed

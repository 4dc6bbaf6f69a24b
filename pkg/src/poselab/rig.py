"""Procedural rigged humanoids, linear blend skinning, and scene layout.

Figures stand in for licensed scanned/statistical human models: each one is
a set of tapered tube segments (torso, head, limb bones), every tube split
longitudinally into a front and a back chart so all parts are disk-topology
grid patches suitable for the canonical UV atlas.  Seam vertices are
duplicated between the two halves, so per-vertex UV is well defined.

Conventions: meters, Y-up, figures face +Z in rest pose, left side at +X.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.spatial.transform import Rotation

from .mesh import PartMesh

COCO_KEYPOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

GOLDEN_RATIO_CONJ = 0.6180339887498949


class RigError(Exception):
    """Invalid skeleton/pose/figure combination."""


class SceneTooCrowdedError(RigError):
    """Scene sampling could not place all figures without intersection."""


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int  # -1 for the root
    rest_offset: np.ndarray  # (3,) translation from parent in rest pose


@dataclass(frozen=True)
class Skeleton:
    """Joint tree plus bindings of the 17 MSCOCO keypoints to joints."""

    joints: tuple[Joint, ...]
    keypoint_bindings: dict[str, tuple[int, np.ndarray]]  # name -> (joint, local offset)

    def __post_init__(self):
        roots = [j for j in self.joints if j.parent < 0]
        if len(roots) != 1:
            raise RigError(f"skeleton needs exactly one root, found {len(roots)}")
        for i, j in enumerate(self.joints):
            if j.parent >= i:
                raise RigError("joints must be ordered parent-before-child")
        missing = set(COCO_KEYPOINT_NAMES) - set(self.keypoint_bindings)
        if missing:
            raise RigError(f"keypoint bindings missing: {sorted(missing)}")

    def joint_index(self, name: str) -> int:
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise RigError(f"unknown joint {name!r}")

    def joint_names(self) -> list[str]:
        return [j.name for j in self.joints]

    def rest_world_positions(self) -> np.ndarray:
        pos = np.zeros((len(self.joints), 3))
        for i, j in enumerate(self.joints):
            pos[i] = j.rest_offset if j.parent < 0 else pos[j.parent] + j.rest_offset
        return pos


@dataclass(frozen=True)
class SkinnedFigure:
    """Rigged humanoid: partitioned mesh, skeleton, skin weights, flat colors."""

    mesh: PartMesh
    skeleton: Skeleton
    skin_joints: np.ndarray  # (n, 2) int32, -1 padding
    skin_weights: np.ndarray  # (n, 2) float64, rows sum to 1
    part_colors: np.ndarray  # (K, 3) RGB in [0, 1]
    base_hue: float
    part_names: tuple[str, ...]

    def __post_init__(self):
        w = self.skin_weights
        if np.any(w < -1e-12):
            raise RigError("skin weights must be nonnegative")
        if np.abs(w.sum(axis=1) - 1.0).max() > 1e-6:
            raise RigError("skin weights must sum to 1 per vertex")
        valid = self.skin_joints >= 0
        if self.skin_joints[valid].size and self.skin_joints[valid].max() >= len(self.skeleton.joints):
            raise RigError("skin weight references unknown joint")


@dataclass(frozen=True)
class PoseSample:
    """Per-joint local rotations (axis-angle, radians) plus world placement."""

    rotations: dict[str, np.ndarray] = field(default_factory=dict)
    yaw: float = 0.0
    position: tuple[float, float] = (0.0, 0.0)  # ground-plane (x, z)


@dataclass(frozen=True)
class PosedFigure:
    """LBS output: posed geometry, recomputed normals, world keypoints."""

    mesh: PartMesh
    vertex_normals: np.ndarray  # (n, 3) unit
    keypoints: np.ndarray  # (17, 3) world positions, COCO order
    part_colors: np.ndarray


@dataclass(frozen=True)
class HumanoidParams:
    height: float = 1.7
    shoulder_width: float = 0.22  # fraction of height, between shoulder joints
    hip_width: float = 0.14
    torso_radius: float = 0.085
    head_radius: float = 0.062
    arm_radius: float = 0.034
    leg_radius: float = 0.05
    tessellation: int = 2  # grid resolution level, >= 1

    def __post_init__(self):
        if self.tessellation < 1:
            raise RigError("tessellation level must be >= 1")
        for name in ("height", "shoulder_width", "hip_width", "torso_radius",
                     "head_radius", "arm_radius", "leg_radius"):
            if getattr(self, name) <= 0:
                raise RigError(f"{name} must be positive")


# Tube chart layout: (tube name, start joint, end joint or None for offsets)
TUBE_NAMES = (
    "torso",
    "head",
    "left_upper_arm",
    "left_forearm",
    "right_upper_arm",
    "right_forearm",
    "left_thigh",
    "left_shin",
    "right_thigh",
    "right_shin",
)


def part_names_for_humanoid() -> tuple[str, ...]:
    names = []
    for tube in TUBE_NAMES:
        names.extend([f"{tube}_front", f"{tube}_back"])
    return tuple(names)


HUMANOID_PART_COUNT = len(TUBE_NAMES) * 2


def _build_skeleton(p: HumanoidParams) -> Skeleton:
    h = p.height
    h_hip, h_shoulder = 0.50 * h, 0.80 * h
    sw, hw = p.shoulder_width * h / 2.0, p.hip_width * h / 2.0
    upper_arm, forearm = 0.16 * h, 0.14 * h
    thigh, shin = 0.26 * h, 0.20 * h
    neck_len = 0.05 * h

    def J(name, parent, offset):
        return Joint(name=name, parent=parent, rest_offset=np.array(offset, dtype=np.float64))

    joints = (
        J("pelvis", -1, (0, h_hip, 0)),
        J("chest", 0, (0, h_shoulder - h_hip, 0)),
        J("neck", 1, (0, 0.02 * h, 0)),
        J("head", 2, (0, neck_len, 0)),
        J("left_shoulder", 1, (sw, 0, 0)),
        J("left_elbow", 4, (upper_arm, 0, 0)),
        J("left_wrist", 5, (forearm, 0, 0)),
        J("right_shoulder", 1, (-sw, 0, 0)),
        J("right_elbow", 7, (-upper_arm, 0, 0)),
        J("right_wrist", 8, (-forearm, 0, 0)),
        J("left_hip", 0, (hw, 0, 0)),
        J("left_knee", 10, (0, -thigh, 0)),
        J("left_ankle", 11, (0, -shin, 0)),
        J("right_hip", 0, (-hw, 0, 0)),
        J("right_knee", 13, (0, -thigh, 0)),
        J("right_ankle", 14, (0, -shin, 0)),
    )
    head_r = p.head_radius * h
    head_c = 0.09 * h  # head joint to head center
    bindings = {
        "nose": (3, np.array([0.0, head_c, head_r])),
        "left_eye": (3, np.array([0.35 * head_r, head_c + 0.35 * head_r, 0.9 * head_r])),
        "right_eye": (3, np.array([-0.35 * head_r, head_c + 0.35 * head_r, 0.9 * head_r])),
        "left_ear": (3, np.array([head_r, head_c, 0.0])),
        "right_ear": (3, np.array([-head_r, head_c, 0.0])),
        "left_shoulder": (4, np.zeros(3)),
        "right_shoulder": (7, np.zeros(3)),
        "left_elbow": (5, np.zeros(3)),
        "right_elbow": (8, np.zeros(3)),
        "left_wrist": (6, np.zeros(3)),
        "right_wrist": (9, np.zeros(3)),
        "left_hip": (10, np.zeros(3)),
        "right_hip": (13, np.zeros(3)),
        "left_knee": (11, np.zeros(3)),
        "right_knee": (14, np.zeros(3)),
        "left_ankle": (12, np.zeros(3)),
        "right_ankle": (15, np.zeros(3)),
    }
    return Skeleton(joints=joints, keypoint_bindings=bindings)


def _half_tube_grid(a, b, r0, r1, n_seg, n_arc, half):
    """Vertex grid and triangles of one longitudinal half of a tapered tube.

    The tube axis runs a->b; the chart's u direction goes around the half
    circumference, v along the axis.  half is 'front' (+Z side) or 'back'.
    Returns (vertices (n,3), triangles (m,3), grid index array (n_seg+1, n_arc+1)).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    axis = b - a
    length = np.linalg.norm(axis)
    d = axis / length
    fwd = np.array([0.0, 0.0, 1.0])
    fwd = fwd - np.dot(fwd, d) * d
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, d)

    if half == "front":
        thetas = np.linspace(0.0, math.pi, n_arc + 1)
    else:
        thetas = np.linspace(math.pi, 2.0 * math.pi, n_arc + 1)
    ts = np.linspace(0.0, 1.0, n_seg + 1)
    radii = r0 + (r1 - r0) * ts

    verts = np.zeros(((n_seg + 1) * (n_arc + 1), 3))
    grid = np.zeros((n_seg + 1, n_arc + 1), dtype=np.int64)
    k = 0
    for i, t in enumerate(ts):
        center = a + t * axis
        for j, th in enumerate(thetas):
            radial = math.cos(th) * right + math.sin(th) * fwd
            verts[k] = center + radii[i] * radial
            grid[i, j] = k
            k += 1

    tris = []
    for i in range(n_seg):
        for j in range(n_arc):
            v00, v01 = grid[i, j], grid[i, j + 1]
            v10, v11 = grid[i + 1, j], grid[i + 1, j + 1]
            # wound so face normals point outward (along +radial)
            tris.append([v00, v01, v11])
            tris.append([v00, v11, v10])
    return verts, np.array(tris, dtype=np.int64), grid


def make_humanoid(
    params: HumanoidParams | None = None, seed: int = 0, vary: bool = True
) -> SkinnedFigure:
    """Deterministically generate a rigged low-poly humanoid.

    The seed jitters proportions around params (unless vary=False) and fixes
    the color palette, so distinct seeds give distinct body shapes; the same
    seed reproduces the figure bit-exactly.
    """
    base = params or HumanoidParams()
    rng = np.random.default_rng(seed)
    p = base
    if vary:
        p = replace(
            base,
            height=base.height * rng.uniform(0.92, 1.08),
            shoulder_width=base.shoulder_width * rng.uniform(0.9, 1.1),
            hip_width=base.hip_width * rng.uniform(0.9, 1.1),
            torso_radius=base.torso_radius * rng.uniform(0.9, 1.1),
            head_radius=base.head_radius * rng.uniform(0.92, 1.08),
            arm_radius=base.arm_radius * rng.uniform(0.9, 1.1),
            leg_radius=base.leg_radius * rng.uniform(0.9, 1.1),
        )
    skel = _build_skeleton(p)
    jp = skel.rest_world_positions()
    h = p.height
    ji = skel.joint_index

    def seg(name):
        return jp[ji(name)]

    up = np.array([0.0, 1.0, 0.0])
    tr, hr, ar, lr = (p.torso_radius * h, p.head_radius * h, p.arm_radius * h, p.leg_radius * h)
    n_seg = 2 + p.tessellation
    n_arc = 2 + p.tessellation

    pelvis, chest = ji("pelvis"), ji("chest")
    specs = {
        # tube: (start, end, r0, r1, bone, blend_bone)
        "torso": (seg("pelvis") - 0.03 * h * up, seg("chest") + 0.02 * h * up, 1.1 * tr, tr, None, None),
        "head": (seg("head") - 0.01 * h * up, seg("head") + 0.17 * h * up, hr, 0.35 * hr, ji("head"), ji("neck")),
        "left_upper_arm": (seg("left_shoulder"), seg("left_elbow"), ar, 0.9 * ar, ji("left_shoulder"), chest),
        "left_forearm": (seg("left_elbow"), seg("left_wrist") + (seg("left_wrist") - seg("left_elbow")) * 0.25,
                         0.9 * ar, 0.5 * ar, ji("left_elbow"), ji("left_shoulder")),
        "right_upper_arm": (seg("right_shoulder"), seg("right_elbow"), ar, 0.9 * ar, ji("right_shoulder"), chest),
        "right_forearm": (seg("right_elbow"), seg("right_wrist") + (seg("right_wrist") - seg("right_elbow")) * 0.25,
                          0.9 * ar, 0.5 * ar, ji("right_elbow"), ji("right_shoulder")),
        "left_thigh": (seg("left_hip"), seg("left_knee"), lr, 0.85 * lr, ji("left_hip"), pelvis),
        "left_shin": (seg("left_knee"), seg("left_ankle") - 0.035 * h * up, 0.85 * lr, 0.5 * lr,
                      ji("left_knee"), ji("left_hip")),
        "right_thigh": (seg("right_hip"), seg("right_knee"), lr, 0.85 * lr, ji("right_hip"), pelvis),
        "right_shin": (seg("right_knee"), seg("right_ankle") - 0.035 * h * up, 0.85 * lr, 0.5 * lr,
                       ji("right_knee"), ji("right_hip")),
    }

    all_verts, all_tris, all_parts = [], [], []
    skin_joints, skin_weights = [], []
    landmarks: dict[str, int] = {}
    offset = 0
    part_names = part_names_for_humanoid()
    for tube_idx, tube in enumerate(TUBE_NAMES):
        a, b, r0, r1, bone, blend_bone = specs[tube]
        for half_idx, half in enumerate(("front", "back")):
            part = tube_idx * 2 + half_idx
            verts, tris, grid = _half_tube_grid(a, b, r0, r1, n_seg, n_arc, half)
            n = len(verts)
            all_verts.append(verts)
            all_tris.append(tris + offset)
            all_parts.append(np.full(len(tris), part, dtype=np.int32))

            sj = np.full((n, 2), -1, dtype=np.int32)
            sw = np.zeros((n, 2), dtype=np.float64)
            if tube == "torso":
                # blend pelvis->chest along the axis for spine bending
                ts = np.repeat(np.linspace(0.0, 1.0, n_seg + 1), n_arc + 1)
                sj[:, 0], sj[:, 1] = pelvis, chest
                sw[:, 0], sw[:, 1] = 1.0 - ts, ts
            else:
                sj[:, 0] = bone
                sw[:, 0] = 1.0
                ring0 = grid[0].ravel()
                sj[ring0, 1] = blend_bone
                sw[ring0, 0] = 0.5
                sw[ring0, 1] = 0.5
            skin_joints.append(sj)
            skin_weights.append(sw)

            pname = part_names[part]
            landmarks[f"{pname}_00"] = offset + int(grid[0, 0])
            landmarks[f"{pname}_10"] = offset + int(grid[0, n_arc])
            landmarks[f"{pname}_11"] = offset + int(grid[n_seg, n_arc])
            landmarks[f"{pname}_01"] = offset + int(grid[n_seg, 0])
            offset += n

    mesh = PartMesh(
        vertices=np.concatenate(all_verts),
        triangles=np.concatenate(all_tris),
        part_of_triangle=np.concatenate(all_parts),
        num_parts=HUMANOID_PART_COUNT,
        landmarks=landmarks,
    )
    base_hue = float(rng.uniform(0.0, 1.0))
    part_colors = _palette(base_hue, HUMANOID_PART_COUNT)
    return SkinnedFigure(
        mesh=mesh,
        skeleton=skel,
        skin_joints=np.concatenate(skin_joints),
        skin_weights=np.concatenate(skin_weights),
        part_colors=part_colors,
        base_hue=base_hue,
        part_names=part_names,
    )


def _palette(base_hue: float, k: int) -> np.ndarray:
    hues = (base_hue + GOLDEN_RATIO_CONJ * np.arange(k)) % 1.0
    hsv = np.stack([hues, np.full(k, 0.62), np.full(k, 0.82)], axis=1)
    return hsv_to_rgb(hsv)


def rotate_hue(colors: np.ndarray, angle: float) -> np.ndarray:
    """Rotate RGB colors around the hue wheel by `angle` radians."""
    hsv = rgb_to_hsv(np.asarray(colors, dtype=np.float64))
    hsv[..., 0] = (hsv[..., 0] + angle / (2.0 * math.pi)) % 1.0
    return hsv_to_rgb(hsv)


def hue_augment(fig: SkinnedFigure, seed: int) -> SkinnedFigure:
    """Rotate all part colors by one uniform random hue angle."""
    rng = np.random.default_rng(seed)
    angle = float(rng.uniform(0.0, 2.0 * math.pi))
    return replace(fig, part_colors=rotate_hue(fig.part_colors, angle))


def compute_vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted per-vertex normals; zero-area contributions drop out."""
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles)
    fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    normals = np.zeros_like(v)
    for c in range(3):
        np.add.at(normals, t[:, c], fn)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    norms[norms < 1e-300] = 1.0
    return normals / norms


def _world_transforms(skel: Skeleton, pose: PoseSample):
    """Posed world rotation/translation per joint; yaw+position enter the root."""
    unknown = set(pose.rotations) - set(skel.joint_names())
    if unknown:
        raise RigError(f"pose references unknown joints: {sorted(unknown)}")
    nj = len(skel.joints)
    rot = np.zeros((nj, 3, 3))
    trans = np.zeros((nj, 3))
    for i, j in enumerate(skel.joints):
        rv = np.asarray(pose.rotations.get(j.name, np.zeros(3)), dtype=np.float64)
        local = Rotation.from_rotvec(rv).as_matrix()
        if j.parent < 0:
            yaw_m = Rotation.from_rotvec([0.0, pose.yaw, 0.0]).as_matrix()
            rot[i] = yaw_m @ local
            trans[i] = yaw_m @ j.rest_offset + np.array([pose.position[0], 0.0, pose.position[1]])
        else:
            rot[i] = rot[j.parent] @ local
            trans[i] = rot[j.parent] @ j.rest_offset + trans[j.parent]
    return rot, trans


def pose_figure(fig: SkinnedFigure, pose: PoseSample) -> PosedFigure:
    """Linear blend skinning, grounding, normal recomputation, keypoints.

    Rest joint orientations are identity, so the skinning matrix of joint j
    maps rest world space through R_j about the joint's rest position.  The
    figure is translated down so the posed mesh touches y = 0.
    """
    skel = fig.skeleton
    rot, trans = _world_transforms(skel, pose)
    rest_pos = skel.rest_world_positions()

    v = fig.mesh.vertices
    posed = np.zeros_like(v)
    for col in range(fig.skin_joints.shape[1]):
        joints = fig.skin_joints[:, col]
        weights = fig.skin_weights[:, col]
        active = np.flatnonzero((joints >= 0) & (weights != 0.0))
        if active.size == 0:
            continue
        ji = joints[active]
        # joint j maps v -> R_j (v - rest_pos_j) + posed_pos_j
        moved = np.einsum("nij,nj->ni", rot[ji], v[active] - rest_pos[ji]) + trans[ji]
        posed[active] += weights[active, None] * moved

    kp = np.zeros((len(COCO_KEYPOINT_NAMES), 3))
    for k, name in enumerate(COCO_KEYPOINT_NAMES):
        j, off = skel.keypoint_bindings[name]
        kp[k] = rot[j] @ off + trans[j]

    ground = posed[:, 1].min()
    posed = posed - np.array([0.0, ground, 0.0])
    kp = kp - np.array([0.0, ground, 0.0])
    normals = compute_vertex_normals(posed, fig.mesh.triangles)
    mesh = PartMesh(
        vertices=posed,
        triangles=fig.mesh.triangles,
        part_of_triangle=fig.mesh.part_of_triangle,
        num_parts=fig.mesh.num_parts,
        uv=fig.mesh.uv,
        landmarks=fig.mesh.landmarks,
    )
    return PosedFigure(mesh=mesh, vertex_normals=normals, keypoints=kp, part_colors=fig.part_colors)

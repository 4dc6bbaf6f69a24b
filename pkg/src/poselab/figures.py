"""Figure pools: canonical reference atlas, pool generation, disk format.

The reference figure is the unjittered canonical humanoid; its UV chart is
produced by running the transfer on itself with the four corner landmarks
of every part pinned to the chart corners.  Every other figure receives UV
from the reference through the shared landmark names.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .mesh import PartMesh, load_mesh, save_mesh
from .rig import HumanoidParams, Joint, Skeleton, SkinnedFigure, make_humanoid
from .uvtransfer import LandmarkCorrespondence, transfer_uv

CHART_CORNER_UV = {
    "00": (0.0, 0.0),
    "10": (1.0, 0.0),
    "11": (1.0, 1.0),
    "01": (0.0, 1.0),
}


def corner_correspondence(mesh: PartMesh) -> LandmarkCorrespondence:
    """Correspondence pinning each part's corner landmarks to chart corners."""
    pov = mesh.part_of_vertex()
    by_part: dict[int, list] = {}
    for name, v in mesh.landmarks.items():
        suffix = name[-2:]
        if suffix not in CHART_CORNER_UV:
            continue
        part = int(pov[v])
        by_part.setdefault(part, []).append((name, v, np.array(CHART_CORNER_UV[suffix])))
    return LandmarkCorrespondence(by_part=by_part)


def bootstrap_atlas(mesh: PartMesh) -> PartMesh:
    """Assign the canonical UV chart to a landmark-carrying mesh."""
    return transfer_uv(mesh, mesh, corner_correspondence(mesh))


def make_reference_figure(params: HumanoidParams | None = None) -> SkinnedFigure:
    fig = make_humanoid(params, seed=0, vary=False)
    return replace(fig, mesh=bootstrap_atlas(fig.mesh))


def generate_figures(
    count: int,
    seed: int,
    params: HumanoidParams | None = None,
) -> tuple[SkinnedFigure, list[SkinnedFigure]]:
    """Reference figure plus `count` varied figures with transferred UV."""
    reference = make_reference_figure(params)
    figures = []
    for i in range(count):
        fig = make_humanoid(params, seed=seed + i)
        mesh = transfer_uv(reference.mesh, fig.mesh)
        figures.append(replace(fig, mesh=mesh))
    return reference, figures


# ---------------------------------------------------------------------------
# disk format: mesh.obj + mesh.landmarks + rig.json per figure directory


def save_figure(fig: SkinnedFigure, dir_path: str | Path) -> None:
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    save_mesh(fig.mesh, dir_path / "mesh.obj")
    rig = {
        "joints": [
            {"name": j.name, "parent": j.parent, "rest_offset": j.rest_offset.tolist()}
            for j in fig.skeleton.joints
        ],
        "keypoint_bindings": {
            name: {"joint": j, "offset": off.tolist()}
            for name, (j, off) in fig.skeleton.keypoint_bindings.items()
        },
        "skin_joints": fig.skin_joints.tolist(),
        "skin_weights": fig.skin_weights.tolist(),
        "part_colors": fig.part_colors.tolist(),
        "base_hue": fig.base_hue,
        "part_names": list(fig.part_names),
    }
    (dir_path / "rig.json").write_text(json.dumps(rig, sort_keys=True, indent=1))


def load_figure(dir_path: str | Path) -> SkinnedFigure:
    dir_path = Path(dir_path)
    mesh = load_mesh(dir_path / "mesh.obj")
    rig = json.loads((dir_path / "rig.json").read_text())
    skeleton = Skeleton(
        joints=tuple(
            Joint(name=j["name"], parent=j["parent"], rest_offset=np.array(j["rest_offset"]))
            for j in rig["joints"]
        ),
        keypoint_bindings={
            name: (b["joint"], np.array(b["offset"]))
            for name, b in rig["keypoint_bindings"].items()
        },
    )
    return SkinnedFigure(
        mesh=mesh,
        skeleton=skeleton,
        skin_joints=np.array(rig["skin_joints"], dtype=np.int32),
        skin_weights=np.array(rig["skin_weights"], dtype=np.float64),
        part_colors=np.array(rig["part_colors"], dtype=np.float64),
        base_hue=float(rig["base_hue"]),
        part_names=tuple(rig["part_names"]),
    )


def save_figure_pool(
    reference: SkinnedFigure, figures: list[SkinnedFigure], out_dir: str | Path
) -> None:
    out_dir = Path(out_dir)
    save_figure(reference, out_dir / "reference")
    for i, fig in enumerate(figures):
        save_figure(fig, out_dir / f"figure_{i:03d}")


def load_figure_pool(in_dir: str | Path) -> tuple[SkinnedFigure, list[SkinnedFigure]]:
    in_dir = Path(in_dir)
    reference = load_figure(in_dir / "reference")
    figures = [load_figure(d) for d in sorted(in_dir.glob("figure_*"))]
    if not figures:
        raise FileNotFoundError(f"no figure_* directories under {in_dir}")
    return reference, figures

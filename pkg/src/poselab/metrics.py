"""Evaluation metrics: geodesic point similarity, OKS, IoU, UV-L2, ADD.

The geodesic point similarity (gps) of a predicted surface point against
its ground truth is exp(-g^2 / (2 kappa^2)) where g is the geodesic
distance between the two points on the reference mesh; predictions and
ground truth are mapped to reference vertices by nearest UV per part.
Geodesics run over the mesh edge graph (Dijkstra), which is exact up to
mesh resolution; a dense all-pairs oracle pins correctness in the tests.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra

from .mesh import PartMesh
from .raster import BACKGROUND_PART

GPS_KAPPA = 0.255  # meters; benchmark falloff constant
GPS_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))

# Per-keypoint falloff constants (COCO order); these are the 2x-sigma
# constants of the COCO evaluation so that oks_k = exp(-d^2/(2 s^2 c_k^2)).
OKS_FALLOFF = tuple(
    2.0 * s
    for s in (
        0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
        0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
    )
)


class MetricError(Exception):
    pass


def edge_graph(mesh: PartMesh) -> sparse.csr_matrix:
    """Symmetric sparse matrix of 3D edge lengths."""
    t = mesh.triangles
    i = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
    j = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    lengths = np.linalg.norm(mesh.vertices[i] - mesh.vertices[j], axis=1)
    n = mesh.num_vertices
    g = sparse.csr_matrix((lengths, (i, j)), shape=(n, n))
    g = g.maximum(g.T)
    return g


class GeodesicTable:
    """Cached single-source geodesic distances on the reference mesh."""

    def __init__(self, mesh: PartMesh):
        if mesh.uv is None:
            raise MetricError("reference mesh needs UV for surface lookups")
        self.mesh = mesh
        self.graph = edge_graph(mesh)
        self._cache: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()
        part_of_vertex = mesh.part_of_vertex()
        self._part_vertices: dict[int, np.ndarray] = {}
        for part in range(mesh.num_parts):
            self._part_vertices[part] = np.flatnonzero(part_of_vertex == part)

    def distances_from(self, source: int) -> np.ndarray:
        with self._lock:
            hit = self._cache.get(source)
        if hit is not None:
            return hit
        d = dijkstra(self.graph, directed=False, indices=source)
        with self._lock:
            self._cache[source] = d
        return d

    def distance(self, a: int, b: int) -> float:
        return float(self.distances_from(a)[b])

    def part_vertices(self, part: int) -> np.ndarray:
        verts = self._part_vertices.get(part)
        if verts is None or len(verts) == 0:
            raise MetricError(f"reference part {part} is empty")
        return verts


def uv_to_surface_point(part: int, uv, table: GeodesicTable) -> int:
    """Nearest reference vertex of the part in UV space; ties pick the
    lowest vertex index."""
    verts = table.part_vertices(int(part))
    d2 = ((table.mesh.uv[verts] - np.asarray(uv, dtype=np.float64)) ** 2).sum(axis=1)
    return int(verts[int(np.argmin(d2))])


def gps(
    pred_part,
    pred_uv,
    gt_part,
    gt_uv,
    region,
    table: GeodesicTable,
    kappa: float = GPS_KAPPA,
    stride: int = 1,
) -> float:
    """Mean geodesic point similarity over sampled ground-truth pixels.

    Pixels where the prediction has no valid part contribute similarity 0.
    `stride` subsamples the region grid to bound runtime.
    """
    ys, xs = np.nonzero(region)
    if len(ys) == 0:
        raise MetricError("empty evaluation region")
    keep = (ys % stride == 0) & (xs % stride == 0)
    if keep.any():
        ys, xs = ys[keep], xs[keep]
    sims = np.zeros(len(ys), dtype=np.float64)
    for n in range(len(ys)):
        y, x = ys[n], xs[n]
        gp = int(gt_part[y, x])
        if gp == BACKGROUND_PART:
            continue
        gt_vertex = uv_to_surface_point(gp, gt_uv[y, x], table)
        pp = int(pred_part[y, x])
        if pp == BACKGROUND_PART or pp < 0 or pp >= table.mesh.num_parts:
            sims[n] = 0.0
            continue
        pred_vertex = uv_to_surface_point(pp, pred_uv[y, x], table)
        g = table.distance(gt_vertex, pred_vertex)
        sims[n] = math.exp(-(g * g) / (2.0 * kappa * kappa))
    return float(sims.mean())


@dataclass(frozen=True)
class InstanceMatch:
    """One evaluated instance: its gps (None when no prediction) + score."""

    gps: float | None
    score: float = 1.0


def gps_ap_ar(instances: list[InstanceMatch], thresholds=GPS_THRESHOLDS):
    """Average precision/recall over the gps threshold sweep.

    An instance is a true positive at threshold t iff its gps >= t.
    Precision divides by predicted instances, recall by ground truth.
    """
    if not instances:
        raise MetricError("need at least one instance")
    n_gt = len(instances)
    preds = [m for m in instances if m.gps is not None]
    precisions, recalls = [], []
    for t in thresholds:
        tp = sum(1 for m in preds if m.gps >= t)
        precisions.append(tp / len(preds) if preds else 0.0)
        recalls.append(tp / n_gt)
    return float(np.mean(precisions)), float(np.mean(recalls))


def add_normals(pred_normals, gt_normals, region) -> float:
    """Average degree difference between unit normals over the region.

    Predictions are renormalized first; a zero prediction contributes 90
    degrees (no directional information).
    """
    on = np.asarray(region, dtype=bool)
    if not on.any():
        raise MetricError("empty evaluation region")
    p = np.asarray(pred_normals, dtype=np.float64)[on]
    g = np.asarray(gt_normals, dtype=np.float64)[on]
    norms = np.linalg.norm(p, axis=-1, keepdims=True)
    p = np.where(norms > 1e-12, p / np.maximum(norms, 1e-12), 0.0)
    dots = np.clip((p * g).sum(axis=-1), -1.0, 1.0)
    return float(np.degrees(np.arccos(dots)).mean())


def oks(pred_kps, gt_kps, area: float, falloff=OKS_FALLOFF) -> float:
    """COCO-convention object keypoint similarity.

    gt_kps is (17, 3) with visibility in the last column; keypoints with
    visibility 0 are unlabeled and skipped.  area is the instance area in
    squared pixels.
    """
    if area <= 0:
        raise MetricError("instance area must be positive")
    gt = np.asarray(gt_kps, dtype=np.float64)
    labeled = gt[:, 2] > 0
    if not labeled.any():
        raise MetricError("need at least one labeled keypoint")
    pred = np.asarray(pred_kps, dtype=np.float64)[:, :2]
    d2 = ((pred[labeled] - gt[labeled, :2]) ** 2).sum(axis=1)
    k2 = np.asarray(falloff, dtype=np.float64)[labeled] ** 2
    sims = np.exp(-d2 / (2.0 * area * k2))
    return float(sims.mean())


def iou(pred_mask, gt_mask) -> float:
    """Intersection over union; two empty masks count as a perfect 1.0."""
    a = np.asarray(pred_mask, dtype=bool)
    b = np.asarray(gt_mask, dtype=bool)
    if a.shape != b.shape:
        raise MetricError("mask shapes differ")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def uv_l2(pred_uv, gt_uv, region) -> float:
    """Mean euclidean (u, v) error over the region pixels."""
    on = np.asarray(region, dtype=bool)
    if not on.any():
        raise MetricError("empty evaluation region")
    diff = np.asarray(pred_uv, dtype=np.float64)[on] - np.asarray(gt_uv, dtype=np.float64)[on]
    return float(np.linalg.norm(diff, axis=-1).mean())


@dataclass
class MetricReport:
    """Aggregate metrics plus per-instance rows for one evaluation run."""

    oks_mean: float | None = None
    iou_mean: float | None = None
    uv_l2_mean: float | None = None
    add_degrees: float | None = None
    gps_mean: float | None = None
    gps_ap: float | None = None
    gps_ar: float | None = None
    num_instances: int = 0
    per_instance: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "oks_mean": self.oks_mean,
            "iou_mean": self.iou_mean,
            "uv_l2_mean": self.uv_l2_mean,
            "add_degrees": self.add_degrees,
            "gps_mean": self.gps_mean,
            "gps_ap": self.gps_ap,
            "gps_ar": self.gps_ar,
            "num_instances": self.num_instances,
            "per_instance": self.per_instance,
        }

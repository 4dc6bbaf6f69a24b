"""Transfer of the canonical per-part UV atlas onto new humanoid meshes.

The pipeline per part: copy reference UVs onto matched landmark vertices,
interpolate UVs along each boundary loop by cumulative 3D arc length, then
solve a discrete Laplace equation for the interior (Dirichlet boundary).
Cotangent weights are the default; a part falls back to uniform weights when
any cotangent weight goes negative past a threshold, which would break the
discrete maximum principle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .mesh import PartMesh, boundary_loops, part_submesh

NEG_WEIGHT_TOL = 1e-9
UV_RANGE_TOL = 1e-9
CG_TOL = 1e-10


class UVTransferError(Exception):
    """Landmark/boundary configuration makes the transfer ill-posed."""


class SolverError(UVTransferError):
    """Singular interior system or conjugate gradient non-convergence."""


@dataclass(frozen=True)
class LandmarkCorrespondence:
    """Per part: ordered (reference landmark name, target vertex, reference UV)."""

    by_part: dict[int, list[tuple[str, int, np.ndarray]]]

    def parts(self) -> list[int]:
        return sorted(self.by_part)


def extract_reference_landmarks(ref_mesh: PartMesh) -> dict[int, list[tuple[str, np.ndarray]]]:
    """Landmark UV table of the reference atlas, keyed by part.

    Every declared landmark contributes one (name, uv) row to the part that
    owns its vertex.  Raises when the reference has no UV at a landmark.
    """
    if ref_mesh.uv is None:
        raise UVTransferError("reference mesh has no UV")
    part_of_vertex = ref_mesh.part_of_vertex()
    table: dict[int, list[tuple[str, np.ndarray]]] = {}
    for name, v in ref_mesh.landmarks.items():
        part = int(part_of_vertex[v])
        if part < 0:
            raise UVTransferError(f"landmark {name!r} sits on an unused vertex")
        table.setdefault(part, []).append((name, ref_mesh.uv[v].copy()))
    return table


def build_correspondence(ref_mesh: PartMesh, target: PartMesh) -> LandmarkCorrespondence:
    """Match reference landmarks onto the target's same-named landmark vertices."""
    table = extract_reference_landmarks(ref_mesh)
    by_part: dict[int, list[tuple[str, int, np.ndarray]]] = {}
    for part, rows in table.items():
        matched = []
        for name, uv in rows:
            if name not in target.landmarks:
                raise UVTransferError(f"target is missing landmark {name!r} of part {part}")
            matched.append((name, target.landmarks[name], uv))
        by_part[part] = matched
    return LandmarkCorrespondence(by_part=by_part)


def interpolate_boundary_uv(
    loop_positions: np.ndarray,
    anchors: list[tuple[int, np.ndarray]],
    closed: bool = True,
) -> np.ndarray:
    """Interpolate UVs along an ordered boundary by cumulative 3D arc length.

    loop_positions: (n, 3) vertex positions in traversal order.
    anchors: (position index, fixed uv) pairs; at least two required.  For a
    closed loop, interpolation wraps around between the last and first anchor.
    Anchor vertices keep their UV exactly.
    """
    pos = np.asarray(loop_positions, dtype=np.float64)
    n = len(pos)
    if len(anchors) < 2:
        raise UVTransferError(f"need >= 2 anchors on a boundary, got {len(anchors)}")
    order = sorted(anchors, key=lambda a: a[0])
    idx = [a[0] for a in order]
    if len(set(idx)) != len(idx):
        raise UVTransferError("duplicate anchor positions on one boundary")
    if not closed and (idx[0] != 0 or idx[-1] != n - 1):
        raise UVTransferError("open chain needs anchors at both ends")

    uv = np.zeros((n, 2), dtype=np.float64)
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    if closed:
        seg = np.append(seg, np.linalg.norm(pos[0] - pos[-1]))

    pairs = list(zip(order, order[1:]))
    if closed:
        pairs.append((order[-1], order[0]))
    for (ia, uva), (ib, uvb) in pairs:
        uv[ia] = uva
        if ia < ib:
            span = np.arange(ia, ib + 1)
        else:  # wrap-around arc
            span = np.concatenate([np.arange(ia, n), np.arange(0, ib + 1)])
        arc = np.concatenate([[0.0], np.cumsum(seg[span[:-1] % n])])
        total = arc[-1]
        if total <= 0.0:
            raise UVTransferError(f"zero-length boundary arc between anchors {ia} and {ib}")
        t = (arc / total)[:, None]
        uv[span] = (1.0 - t) * np.asarray(uva, dtype=np.float64) + t * np.asarray(uvb, dtype=np.float64)
    for i, uva in anchors:
        uv[i] = uva  # exact, independent of float interpolation noise
    return uv


def cotangent_weights(mesh: PartMesh) -> sparse.csr_matrix:
    """Symmetric cotangent edge-weight matrix, 0.5*(cot a + cot b) per edge.

    Degenerate triangles make the cotangents undefined and raise SolverError.
    """
    v = mesh.vertices
    t = mesh.triangles
    rows, cols, vals = [], [], []
    for corner in range(3):
        c = t[:, corner]
        i = t[:, (corner + 1) % 3]
        j = t[:, (corner + 2) % 3]
        e1 = v[i] - v[c]
        e2 = v[j] - v[c]
        cross = np.linalg.norm(np.cross(e1, e2), axis=1)
        scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
        if np.any(cross <= 1e-14 * np.maximum(scale, 1e-300)):
            bad = int(np.argmin(cross))
            raise SolverError(f"degenerate triangle {bad}: cotangent weight undefined")
        cot = np.einsum("ij,ij->i", e1, e2) / cross
        rows.extend([i, j])
        cols.extend([j, i])
        vals.extend([0.5 * cot, 0.5 * cot])
    n = mesh.num_vertices
    w = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return w


def uniform_weights(mesh: PartMesh) -> sparse.csr_matrix:
    t = mesh.triangles
    i = np.concatenate([t[:, 0], t[:, 1], t[:, 2], t[:, 1], t[:, 2], t[:, 0]])
    j = np.concatenate([t[:, 1], t[:, 2], t[:, 0], t[:, 0], t[:, 1], t[:, 2]])
    n = mesh.num_vertices
    w = sparse.csr_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    w.data[:] = 1.0  # duplicate edge entries collapse to weight 1
    return w


def conjugate_gradient(
    a: sparse.spmatrix, b: np.ndarray, tol: float = CG_TOL, max_iter: int | None = None
) -> np.ndarray:
    """Plain CG for the SPD interior system; raises on non-convergence."""
    n = len(b)
    if max_iter is None:
        max_iter = max(10 * n, 50)
    x = np.zeros_like(b)
    r = b - a @ x
    p = r.copy()
    rs = float(r @ r)
    bnorm = max(float(np.linalg.norm(b)), 1e-300)
    for _ in range(max_iter):
        if np.sqrt(rs) <= tol * max(1.0, bnorm):
            return x
        ap = a @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            raise SolverError("interior system not positive definite")
        alpha = rs / pap
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    if np.sqrt(rs) <= tol * max(1.0, bnorm):
        return x
    raise SolverError(f"CG failed to converge in {max_iter} iterations (|r|={np.sqrt(rs):.3e})")


def harmonic_unwrap(
    submesh: PartMesh,
    fixed_idx: np.ndarray,
    fixed_uv: np.ndarray,
    weights: str = "cotangent",
) -> np.ndarray:
    """Solve interior UVs with Dirichlet boundary values.

    fixed_idx/fixed_uv must cover every boundary vertex of the submesh;
    additional pinned interior vertices are allowed.  u and v are solved
    independently.  Returns (n, 2) UVs with fixed values passed through
    unmodified.
    """
    fixed_idx = np.asarray(fixed_idx, dtype=np.int64).reshape(-1)
    fixed_uv = np.asarray(fixed_uv, dtype=np.float64).reshape(-1, 2)
    if len(fixed_idx) != len(fixed_uv):
        raise UVTransferError("fixed_idx and fixed_uv length mismatch")
    n = submesh.num_vertices
    is_fixed = np.zeros(n, dtype=bool)
    is_fixed[fixed_idx] = True
    for loop in boundary_loops(submesh):
        missing = [v for v in loop if not is_fixed[v]]
        if missing:
            raise UVTransferError(f"boundary vertices without fixed UV: {missing[:5]}")

    out = np.zeros((n, 2), dtype=np.float64)
    out[fixed_idx] = fixed_uv
    interior = np.flatnonzero(~is_fixed)
    if interior.size == 0:
        return out

    if weights == "cotangent":
        w = cotangent_weights(submesh)
        if w.nnz and w.data.min() < -NEG_WEIGHT_TOL:
            w = uniform_weights(submesh)
    elif weights == "uniform":
        w = uniform_weights(submesh)
    else:
        raise ValueError(f"unknown weight scheme {weights!r}")

    deg = np.asarray(w.sum(axis=1)).ravel()
    lap = sparse.diags(deg) - w
    a = lap[interior][:, interior].tocsr()
    w_ib = w[interior][:, fixed_idx].tocsr()
    for comp in range(2):
        b = w_ib @ fixed_uv[:, comp]
        out[interior, comp] = conjugate_gradient(a, b)
    return out


def laplacian_residual(submesh: PartMesh, uv: np.ndarray, weights: str = "cotangent") -> float:
    """Max-norm residual of the interior Laplace equation; test/diagnostic hook."""
    adj_fixed = np.zeros(submesh.num_vertices, dtype=bool)
    for loop in boundary_loops(submesh):
        adj_fixed[loop] = True
    interior = np.flatnonzero(~adj_fixed)
    if interior.size == 0:
        return 0.0
    w = cotangent_weights(submesh) if weights == "cotangent" else uniform_weights(submesh)
    if weights == "cotangent" and w.nnz and w.data.min() < -NEG_WEIGHT_TOL:
        w = uniform_weights(submesh)
    deg = np.asarray(w.sum(axis=1)).ravel()
    lap = sparse.diags(deg) - w
    res = lap @ uv
    return float(np.abs(res[interior]).max())


def transfer_uv(
    ref_mesh: PartMesh, target: PartMesh, corr: LandmarkCorrespondence | None = None
) -> PartMesh:
    """Assign canonical UVs to every part of a pre-partitioned target mesh.

    Landmark vertices copy reference UVs bit-exactly, boundary loops are
    arc-length interpolated between landmarks, interiors are harmonically
    unwrapped.  Any resulting UV outside [0, 1] beyond float tolerance is an
    error (it signals bad landmark placement), not a clamp.  When corr is
    None it is built by matching landmark names between the meshes.
    """
    if corr is None:
        corr = build_correspondence(ref_mesh, target)
    uv_full = np.zeros((target.num_vertices, 2), dtype=np.float64)
    assigned = np.zeros(target.num_vertices, dtype=bool)
    present_parts = sorted(set(target.part_of_triangle.tolist()))
    for part in present_parts:
        rows = corr.by_part.get(part)
        if not rows:
            raise UVTransferError(f"part {part} has no landmarks in the correspondence")
        sub = part_submesh(target, part)
        n_local = sub.mesh.num_vertices
        global_to_local = {int(g): l for l, g in enumerate(sub.parent_vertex)}
        anchors_local: dict[int, np.ndarray] = {}
        for name, gvert, uv in rows:
            if int(gvert) not in global_to_local:
                raise UVTransferError(f"landmark {name!r} vertex {gvert} is not on part {part}")
            anchors_local[global_to_local[int(gvert)]] = np.asarray(uv, dtype=np.float64)

        fixed_idx: list[int] = []
        fixed_uv: list[np.ndarray] = []
        for loop in boundary_loops(sub.mesh):
            loop_anchors = [(k, anchors_local[v]) for k, v in enumerate(loop) if v in anchors_local]
            if len(loop_anchors) < 2:
                raise UVTransferError(
                    f"part {part}: boundary loop has {len(loop_anchors)} landmarks, needs >= 2"
                )
            loop_uv = interpolate_boundary_uv(sub.mesh.vertices[loop], loop_anchors, closed=True)
            fixed_idx.extend(loop)
            fixed_uv.extend(loop_uv)
        local_uv = harmonic_unwrap(sub.mesh, np.array(fixed_idx), np.array(fixed_uv))
        for lv, uv in anchors_local.items():
            local_uv[lv] = uv  # landmark fidelity is exact by definition

        lo, hi = local_uv.min(), local_uv.max()
        if lo < -UV_RANGE_TOL or hi > 1.0 + UV_RANGE_TOL:
            raise UVTransferError(
                f"part {part}: UV escaped [0,1] (min={lo:.3e}, max={hi:.3e}); check landmark placement"
            )
        np.clip(local_uv, 0.0, 1.0, out=local_uv)  # snap float noise within tolerance

        uv_full[sub.parent_vertex] = local_uv
        assigned[sub.parent_vertex] = True

    if not assigned.all():
        # vertices unused by any triangle keep uv (0, 0)
        used = np.zeros(target.num_vertices, dtype=bool)
        used[target.triangles.reshape(-1)] = True
        stray = np.flatnonzero(used & ~assigned)
        if stray.size:
            raise UVTransferError(f"vertices not covered by any part transfer: {stray[:5]}")
    return target.with_uv(uv_full)


def part_adjacency(mesh: PartMesh, tol: float = 1e-7) -> set[tuple[int, int]]:
    """Part pairs whose boundaries touch (coincident vertex positions).

    Seam-duplicated vertices are matched by rounded position, so parts split
    along a seam still register as adjacent.
    """
    key = np.round(mesh.vertices / tol).astype(np.int64)
    part_of_vertex = mesh.part_of_vertex()
    buckets: dict[tuple[int, int, int], set[int]] = {}
    for v in range(mesh.num_vertices):
        if part_of_vertex[v] < 0:
            continue
        buckets.setdefault(tuple(key[v]), set()).add(int(part_of_vertex[v]))
    pairs: set[tuple[int, int]] = set()
    for parts in buckets.values():
        ps = sorted(parts)
        for a in range(len(ps)):
            for b in range(a + 1, len(ps)):
                pairs.add((ps[a], ps[b]))
    return pairs


def validate_part_graph(ref_mesh: PartMesh, target: PartMesh) -> tuple[set, set]:
    """Compare part adjacency graphs; returns (missing_in_target, extra_in_target)."""
    ref_pairs = part_adjacency(ref_mesh)
    tgt_pairs = part_adjacency(target)
    return ref_pairs - tgt_pairs, tgt_pairs - ref_pairs

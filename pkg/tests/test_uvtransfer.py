import numpy as np
import pytest

from poselab.mesh import PartMesh, boundary_loops, part_submesh
from poselab.uvtransfer import (
    LandmarkCorrespondence,
    SolverError,
    UVTransferError,
    build_correspondence,
    conjugate_gradient,
    cotangent_weights,
    extract_reference_landmarks,
    harmonic_unwrap,
    interpolate_boundary_uv,
    laplacian_residual,
    transfer_uv,
    uniform_weights,
)
from scipy import sparse


def fan_patch():
    """Unit square corners + center, 4 triangles around the center."""
    v = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0.5, 0.5, 0]]
    t = [[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]]
    return PartMesh(vertices=v, triangles=t, part_of_triangle=[0] * 4, num_parts=1)


def grid_patch(nx, ny, jitter=0.0, seed=0, lift=None):
    """Planar grid on [0,nx]x[0,ny], optional interior jitter / 3D lift."""
    rng = np.random.default_rng(seed)
    xs, ys = np.meshgrid(np.arange(nx + 1, dtype=float), np.arange(ny + 1, dtype=float), indexing="ij")
    xs, ys = xs.ravel(), ys.ravel()
    interior = (xs > 0) & (xs < nx) & (ys > 0) & (ys < ny)
    if jitter:
        xs = xs + np.where(interior, rng.uniform(-jitter, jitter, xs.shape), 0.0)
        ys = ys + np.where(interior, rng.uniform(-jitter, jitter, ys.shape), 0.0)
    zs = np.zeros_like(xs) if lift is None else lift(xs, ys)
    verts = np.stack([xs, ys, zs], axis=1)
    tris = []
    for i in range(nx):
        for j in range(ny):
            a = i * (ny + 1) + j
            b = (i + 1) * (ny + 1) + j
            tris.append([a, b, b + 1])
            tris.append([a, b + 1, a + 1])
    return PartMesh(vertices=verts, triangles=tris, part_of_triangle=[0] * len(tris), num_parts=1)


def boundary_fixed(mesh, fn):
    """All boundary vertices of a one-loop patch with uv = fn(x, y)."""
    (loop,) = boundary_loops(mesh)
    idx = np.array(loop)
    uv = np.stack(fn(mesh.vertices[idx, 0], mesh.vertices[idx, 1]), axis=1)
    return idx, uv


# --- interpolate_boundary_uv ------------------------------------------------


def test_chain_midpoint():
    pos = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    anchors = [(0, np.array([0.0, 0.0])), (2, np.array([1.0, 0.0]))]
    uv = interpolate_boundary_uv(pos, anchors, closed=False)
    assert uv[1, 0] == pytest.approx(0.5)


def test_chain_arc_length_ratio():
    # segment lengths 1 and 3: interior vertex sits at arc fraction 0.25
    pos = np.array([[0, 0, 0], [1, 0, 0], [4, 0, 0]], dtype=float)
    anchors = [(0, np.array([0.0, 0.0])), (2, np.array([1.0, 0.0]))]
    uv = interpolate_boundary_uv(pos, anchors, closed=False)
    assert uv[1, 0] == pytest.approx(0.25)


def test_anchor_uv_exact():
    rng = np.random.default_rng(1)
    pos = rng.random((8, 3))
    a0, a1, a2 = np.array([0.13, 0.4]), np.array([0.9, 0.2]), np.array([0.5, 0.77])
    uv = interpolate_boundary_uv(pos, [(0, a0), (3, a1), (6, a2)], closed=True)
    assert np.array_equal(uv[0], a0)
    assert np.array_equal(uv[3], a1)
    assert np.array_equal(uv[6], a2)


def test_too_few_anchors():
    pos = np.zeros((4, 3))
    with pytest.raises(UVTransferError):
        interpolate_boundary_uv(pos, [(0, np.zeros(2))])


def test_zero_length_arc():
    pos = np.zeros((3, 3))  # all coincident: every arc has zero length
    anchors = [(0, np.zeros(2)), (2, np.ones(2))]
    with pytest.raises(UVTransferError):
        interpolate_boundary_uv(pos, anchors, closed=False)


def test_closed_loop_wraps():
    # unit square loop, anchors at two opposite corners
    pos = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    anchors = [(0, np.array([0.0, 0.0])), (2, np.array([1.0, 1.0]))]
    uv = interpolate_boundary_uv(pos, anchors, closed=True)
    assert uv[1] == pytest.approx([0.5, 0.5])
    assert uv[3] == pytest.approx([0.5, 0.5])


# --- harmonic_unwrap ---------------------------------------------------------


def test_no_interior_passthrough():
    mesh = PartMesh(
        vertices=[[0, 0, 0], [1, 0, 0], [0, 1, 0]],
        triangles=[[0, 1, 2]],
        part_of_triangle=[0],
        num_parts=1,
    )
    fixed = np.array([[0.1, 0.2], [0.9, 0.1], [0.3, 0.8]])
    uv = harmonic_unwrap(mesh, np.array([0, 1, 2]), fixed)
    assert np.array_equal(uv, fixed)


def test_fan_center_affine_exact():
    # affine boundary field is reproduced exactly by cotangent weights on a
    # planar triangulation; for the single interior vertex solve by hand:
    # center uv = affine(center position)
    mesh = fan_patch()
    aff = lambda x, y: (0.3 * x + 0.1 * y + 0.2, -0.2 * x + 0.5 * y + 0.3)
    idx = np.array([0, 1, 2, 3])
    fixed = np.stack(aff(mesh.vertices[idx, 0], mesh.vertices[idx, 1]), axis=1)
    uv = harmonic_unwrap(mesh, idx, fixed)
    expect = np.array(aff(0.5, 0.5))
    assert np.allclose(uv[4], expect, atol=1e-12)


def test_grid_identity_map():
    mesh = grid_patch(2, 2)
    idx, fixed = boundary_fixed(mesh, lambda x, y: (x / 2.0, y / 2.0))
    uv = harmonic_unwrap(mesh, idx, fixed)
    expect = mesh.vertices[:, :2] / 2.0
    assert np.abs(uv - expect).max() < 1e-10


def test_affine_exact_on_planar_patches():
    rng = np.random.default_rng(11)
    for trial in range(8):
        nx, ny = rng.integers(2, 6, size=2)
        mesh = grid_patch(int(nx), int(ny))
        a, b, c, d, e, f = rng.uniform(-0.3, 0.3, size=6)
        aff = lambda x, y: (a * x + b * y + c, d * x + e * y + f)
        idx, fixed = boundary_fixed(mesh, aff)
        uv = harmonic_unwrap(mesh, idx, fixed)
        expect = np.stack(aff(mesh.vertices[:, 0], mesh.vertices[:, 1]), axis=1)
        assert np.abs(uv - expect).max() < 1e-8


def test_cg_matches_dense_solve():
    rng = np.random.default_rng(5)
    for trial in range(6):
        mesh = grid_patch(int(rng.integers(3, 8)), int(rng.integers(3, 8)), jitter=0.2, seed=trial)
        assert mesh.num_vertices <= 200
        w = cotangent_weights(mesh)
        if w.data.min() < -1e-9:
            w = uniform_weights(mesh)
        deg = np.asarray(w.sum(axis=1)).ravel()
        lap = sparse.diags(deg) - w
        (loop,) = boundary_loops(mesh)
        is_b = np.zeros(mesh.num_vertices, dtype=bool)
        is_b[loop] = True
        interior = np.flatnonzero(~is_b)
        a = lap[interior][:, interior].tocsr()
        b = rng.standard_normal(len(interior))
        x_cg = conjugate_gradient(a, b)
        x_dense = np.linalg.solve(a.toarray(), b)
        assert np.abs(x_cg - x_dense).max() < 1e-8


def test_maximum_principle_uniform_weights():
    rng = np.random.default_rng(9)
    for trial in range(50):
        nx, ny = rng.integers(2, 7, size=2)
        mesh = grid_patch(int(nx), int(ny), jitter=0.3, seed=100 + trial)
        (loop,) = boundary_loops(mesh)
        idx = np.array(loop)
        fixed = rng.random((len(idx), 2))
        uv = harmonic_unwrap(mesh, idx, fixed, weights="uniform")
        for comp in range(2):
            assert uv[:, comp].min() >= fixed[:, comp].min() - 1e-12
            assert uv[:, comp].max() <= fixed[:, comp].max() + 1e-12


def test_solver_residual_bound():
    mesh = grid_patch(5, 4, jitter=0.2, seed=3)
    rng = np.random.default_rng(2)
    idx, fixed = boundary_fixed(mesh, lambda x, y: (x / 5.0, y / 4.0))
    uv = harmonic_unwrap(mesh, idx, fixed)
    assert laplacian_residual(mesh, uv) <= 1e-8


def test_degenerate_triangle_raises():
    mesh = PartMesh(
        vertices=[[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]],
        triangles=[[0, 1, 2], [0, 2, 3]],  # first triangle is collinear
        part_of_triangle=[0, 0],
        num_parts=1,
    )
    with pytest.raises(SolverError):
        cotangent_weights(mesh)


# --- transfer_uv -------------------------------------------------------------


def corner_landmarks(mesh, prefix="p"):
    """Landmarks at the 4 extreme corners of a rectangular planar patch."""
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    corners = {
        f"{prefix}_00": int(np.argmin(x + y)),
        f"{prefix}_10": int(np.argmax(x - y)),
        f"{prefix}_11": int(np.argmax(x + y)),
        f"{prefix}_01": int(np.argmax(y - x)),
    }
    return mesh.with_landmarks(corners)


CORNER_UV = {"_00": (0.0, 0.0), "_10": (1.0, 0.0), "_11": (1.0, 1.0), "_01": (0.0, 1.0)}


def corner_corr(mesh, prefix="p", part=0):
    rows = []
    for suffix, uv in CORNER_UV.items():
        name = prefix + suffix
        rows.append((name, mesh.landmarks[name], np.array(uv)))
    return LandmarkCorrespondence(by_part={part: rows})


def make_reference(nx=4, ny=3):
    """Reference patch whose UV is produced by the transfer itself, so the
    reference field is harmonic by construction."""
    mesh = corner_landmarks(grid_patch(nx, ny, jitter=0.15, seed=8))
    return transfer_uv(mesh, mesh, corner_corr(mesh))


def test_extract_reference_landmarks():
    ref = make_reference()
    table = extract_reference_landmarks(ref)
    assert set(table) == {0}
    assert len(table[0]) == 4
    by_name = {name: uv for name, uv in table[0]}
    assert np.array_equal(by_name["p_00"], [0.0, 0.0])
    assert np.array_equal(by_name["p_11"], [1.0, 1.0])


def test_self_transfer_reproduces_reference():
    ref = make_reference()
    out = transfer_uv(ref, ref, build_correspondence(ref, ref))
    assert np.abs(out.uv - ref.uv).max() < 1e-8


def test_transfer_landmark_fidelity_and_idempotence():
    ref = make_reference()
    corr = build_correspondence(ref, ref)
    once = transfer_uv(ref, ref, corr)
    twice = transfer_uv(ref, once, corr)
    assert np.array_equal(once.uv, twice.uv)
    for _, vertex, uv in corr.by_part[0]:
        assert np.array_equal(once.uv[vertex], uv)


def subdivide(mesh):
    """Midpoint 1:4 subdivision preserving the part labels."""
    verts = [tuple(v) for v in mesh.vertices]
    index = {v: i for i, v in enumerate(verts)}

    def midpoint(a, b):
        m = tuple((mesh.vertices[a] + mesh.vertices[b]) / 2.0)
        if m not in index:
            index[m] = len(verts)
            verts.append(m)
        return index[m]

    tris, parts = [], []
    for t, (a, b, c) in enumerate(mesh.triangles):
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        for tri in ([a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]):
            tris.append(tri)
            parts.append(mesh.part_of_triangle[t])
    return PartMesh(
        vertices=np.array(verts),
        triangles=tris,
        part_of_triangle=parts,
        num_parts=mesh.num_parts,
        landmarks=dict(mesh.landmarks),
    )


def test_transfer_to_subdivided_target():
    ref = make_reference(3, 3)
    target = subdivide(ref)  # carries no uv; landmarks preserved by position
    out = transfer_uv(ref, target)
    # new boundary vertices are edge midpoints of the (piecewise straight)
    # boundary: their uv must be the average of the old endpoint uvs
    (loop_ref,) = boundary_loops(ref)
    ref_pos = {tuple(ref.vertices[v]): ref.uv[v] for v in loop_ref}
    (loop_tgt,) = boundary_loops(out)
    checked = 0
    for v in loop_tgt:
        pos = tuple(out.vertices[v])
        if pos in ref_pos:
            continue
        # midpoint of two consecutive ref boundary vertices
        for i, a in enumerate(loop_ref):
            b = loop_ref[(i + 1) % len(loop_ref)]
            mid = (ref.vertices[a] + ref.vertices[b]) / 2.0
            if np.allclose(mid, out.vertices[v], atol=1e-12):
                expect = (ref.uv[a] + ref.uv[b]) / 2.0
                assert np.allclose(out.uv[v], expect, atol=1e-9)
                checked += 1
                break
    assert checked > 0


def test_missing_part_raises():
    mesh = corner_landmarks(grid_patch(2, 2))
    two_part = PartMesh(
        vertices=mesh.vertices,
        triangles=mesh.triangles,
        part_of_triangle=[0] * 4 + [1] * 4,
        num_parts=2,
        landmarks=mesh.landmarks,
    )
    corr = LandmarkCorrespondence(by_part={0: corner_corr(mesh).by_part[0]})
    with pytest.raises(UVTransferError):
        transfer_uv(two_part, two_part, corr)


def test_interior_uv_within_unit_square():
    ref = make_reference(5, 4)
    assert ref.uv.min() >= 0.0
    assert ref.uv.max() <= 1.0

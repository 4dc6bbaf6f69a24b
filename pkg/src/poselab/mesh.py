"""Triangle meshes partitioned into body-part submeshes.

A PartMesh is the shared geometry container of the pipeline: vertices,
triangles, one part label per triangle, optional per-vertex UV in the
canonical atlas, and named landmark vertices.  Meshes are stored in an
OBJ-style text format with ``g part_<k>`` groups; landmarks live in a
sidecar text file (see docs/formats.md).

Coordinates are meters, Y-up, right-handed.  All containers are immutable
after construction: operations return new meshes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class MeshError(Exception):
    """Base error for mesh loading and topology queries."""


class MeshParseError(MeshError):
    """Malformed mesh or landmark file."""


class NonManifoldError(MeshError):
    """An edge is shared by more than two triangles of one part."""


class EmptyPartError(MeshError):
    """Requested part has no triangles."""


@dataclass(frozen=True)
class PartMesh:
    """Triangle mesh with per-triangle part labels.

    vertices: (n, 3) float64 positions in meters.
    triangles: (m, 3) int32 vertex indices, consistently oriented per part.
    part_of_triangle: (m,) int32 part labels in [0, K).
    uv: (n, 2) float64 in [0, 1]^2, or None before atlas transfer.
    landmarks: landmark name -> vertex index.
    num_parts: part count K.
    nonmanifold_parts: parts flagged non-manifold at load time; loadable,
        but rejected by downstream solvers.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    part_of_triangle: np.ndarray
    num_parts: int
    uv: np.ndarray | None = None
    landmarks: dict[str, int] = field(default_factory=dict)
    nonmanifold_parts: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "triangles", np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3))
        object.__setattr__(self, "part_of_triangle", np.asarray(self.part_of_triangle, dtype=np.int32).reshape(-1))
        if self.uv is not None:
            object.__setattr__(self, "uv", np.asarray(self.uv, dtype=np.float64).reshape(-1, 2))
        self._validate()

    def _validate(self):
        n = len(self.vertices)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise MeshError(f"triangle index out of range (n_vertices={n})")
        if len(self.part_of_triangle) != len(self.triangles):
            raise MeshError("part_of_triangle length must match triangle count")
        if self.part_of_triangle.size and (
            self.part_of_triangle.min() < 0 or self.part_of_triangle.max() >= self.num_parts
        ):
            raise MeshError(f"part label out of range (K={self.num_parts})")
        if self.uv is not None:
            if len(self.uv) != n:
                raise MeshError("uv must be per-vertex")
            if self.uv.size and (self.uv.min() < -1e-12 or self.uv.max() > 1 + 1e-12):
                raise MeshError("uv components must lie in [0, 1]")
        for name, v in self.landmarks.items():
            if not 0 <= v < n:
                raise MeshError(f"landmark {name!r} references vertex {v} out of range")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def triangles_of_part(self, part: int) -> np.ndarray:
        return np.flatnonzero(self.part_of_triangle == part)

    def with_uv(self, uv: np.ndarray) -> "PartMesh":
        return replace(self, uv=np.asarray(uv, dtype=np.float64))

    def with_landmarks(self, landmarks: dict[str, int]) -> "PartMesh":
        return replace(self, landmarks=dict(landmarks))

    def part_of_vertex(self) -> np.ndarray:
        """Part label per vertex (-1 for vertices used by no triangle).

        Vertices are expected to belong to a single part; when parts share
        a vertex the lowest triangle index wins.
        """
        out = np.full(self.num_vertices, -1, dtype=np.int32)
        for t in range(self.num_triangles - 1, -1, -1):
            out[self.triangles[t]] = self.part_of_triangle[t]
        return out


@dataclass(frozen=True)
class Submesh:
    """A reindexed one-part mesh plus the map back to parent vertex ids."""

    mesh: PartMesh
    parent_vertex: np.ndarray  # (n_local,) int32, local index -> parent index


@dataclass(frozen=True)
class HalfEdgeIndex:
    """Adjacency tables of one edge-manifold submesh.

    neighbors: vertex -> sorted array of adjacent vertices.
    boundary_vertex: (n,) bool, True where the vertex touches a boundary edge.
    boundary_next: successor map along directed boundary edges (-1 inside).
    """

    neighbors: list[np.ndarray]
    boundary_vertex: np.ndarray
    boundary_next: np.ndarray


def _edge_counts(triangles: np.ndarray):
    """Directed edge multiset of a triangle soup as a dict (i, j) -> count."""
    counts: dict[tuple[int, int], int] = {}
    for a, b, c in triangles:
        for i, j in ((a, b), (b, c), (c, a)):
            key = (int(i), int(j))
            counts[key] = counts.get(key, 0) + 1
    return counts


def is_edge_manifold(mesh: PartMesh, part: int | None = None) -> bool:
    """True when every undirected edge is used by at most two triangles."""
    tris = mesh.triangles if part is None else mesh.triangles[mesh.triangles_of_part(part)]
    directed = _edge_counts(tris)
    seen: dict[tuple[int, int], int] = {}
    for (i, j), c in directed.items():
        key = (min(i, j), max(i, j))
        seen[key] = seen.get(key, 0) + c
    return all(c <= 2 for c in seen.values())


def build_adjacency(mesh: PartMesh) -> HalfEdgeIndex:
    """Derive neighbor/boundary tables from the triangles of a submesh.

    Raises NonManifoldError when an edge belongs to more than two triangles,
    and MeshError when boundary edges do not chain into closed loops.
    """
    n = mesh.num_vertices
    directed = _edge_counts(mesh.triangles)
    neighbors_sets: list[set[int]] = [set() for _ in range(n)]
    boundary_next = np.full(n, -1, dtype=np.int64)
    boundary_vertex = np.zeros(n, dtype=bool)
    for (i, j), c in directed.items():
        undirected = c + directed.get((j, i), 0)
        if undirected > 2:
            raise NonManifoldError(f"edge ({i},{j}) used by {undirected} triangles")
        neighbors_sets[i].add(j)
        neighbors_sets[j].add(i)
        if directed.get((j, i), 0) == 0:
            # Directed edge present once with no twin: boundary edge, oriented
            # opposite to the triangle winding so loops run consistently.
            if c != 1:
                raise NonManifoldError(f"boundary edge ({i},{j}) repeated {c} times")
            if boundary_next[j] != -1:
                raise MeshError(f"vertex {j} has multiple outgoing boundary edges")
            boundary_next[j] = i
            boundary_vertex[i] = True
            boundary_vertex[j] = True
    neighbors = [np.array(sorted(s), dtype=np.int64) for s in neighbors_sets]
    return HalfEdgeIndex(neighbors=neighbors, boundary_vertex=boundary_vertex, boundary_next=boundary_next)


def boundary_loops(mesh: PartMesh) -> list[list[int]]:
    """Closed, consistently oriented boundary vertex cycles of a submesh.

    Each boundary edge appears in exactly one loop.  A closed surface yields
    no loops.  Loops start at their lowest vertex index so output is stable.
    """
    adj = build_adjacency(mesh)
    nxt = adj.boundary_next
    visited = np.zeros(mesh.num_vertices, dtype=bool)
    loops = []
    for start in np.flatnonzero(nxt >= 0):
        if visited[start]:
            continue
        loop = [int(start)]
        visited[start] = True
        v = nxt[start]
        while v != start:
            if v < 0 or visited[v]:
                raise MeshError("boundary edges do not form closed loops")
            loop.append(int(v))
            visited[v] = True
            v = nxt[v]
        k = int(np.argmin(loop))
        loops.append(loop[k:] + loop[:k])
    loops.sort(key=lambda lp: lp[0])
    return loops


def part_submesh(mesh: PartMesh, part: int) -> Submesh:
    """Extract the triangles of one part with vertices reindexed from 0.

    Landmarks on the part's vertices are carried over; UV is sliced when
    present.  Raises EmptyPartError when the part has no triangles.
    """
    if not 0 <= part < mesh.num_parts:
        raise MeshError(f"part {part} out of range (K={mesh.num_parts})")
    tri_idx = mesh.triangles_of_part(part)
    if tri_idx.size == 0:
        raise EmptyPartError(f"part {part} has no triangles")
    tris = mesh.triangles[tri_idx]
    parent_vertex = np.unique(tris)
    local = np.full(mesh.num_vertices, -1, dtype=np.int64)
    local[parent_vertex] = np.arange(len(parent_vertex))
    landmarks = {
        name: int(local[v]) for name, v in mesh.landmarks.items() if local[v] >= 0
    }
    sub = PartMesh(
        vertices=mesh.vertices[parent_vertex],
        triangles=local[tris],
        part_of_triangle=np.zeros(len(tris), dtype=np.int32),
        num_parts=1,
        uv=None if mesh.uv is None else mesh.uv[parent_vertex],
        landmarks=landmarks,
    )
    return Submesh(mesh=sub, parent_vertex=parent_vertex.astype(np.int32))


# ---------------------------------------------------------------------------
# OBJ-style text I/O


def landmark_sidecar_path(mesh_path: str | Path) -> Path:
    return Path(mesh_path).with_suffix(".landmarks")


def load_mesh(path: str | Path) -> PartMesh:
    """Load an OBJ-style mesh with ``g part_<k>`` groups.

    Faces before the first group line default to part 0.  ``f`` entries may
    be ``v`` or ``v/vt``; when vt indices are present they must equal the
    vertex index (per-vertex UV).  A ``<stem>.landmarks`` sidecar, when
    present, is read as ``name vertex_index`` lines.  Non-manifold parts are
    flagged on the mesh, not rejected.
    """
    path = Path(path)
    vertices: list[list[float]] = []
    uvs: list[list[float]] = []
    triangles: list[list[int]] = []
    parts: list[int] = []
    current_part = 0
    max_part = 0
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        tag = fields[0]
        try:
            if tag == "v":
                vertices.append([float(x) for x in fields[1:4]])
                if len(fields) != 4:
                    raise ValueError("vertex needs 3 coordinates")
            elif tag == "vt":
                uvs.append([float(x) for x in fields[1:3]])
                if len(fields) != 3:
                    raise ValueError("vt needs 2 coordinates")
            elif tag == "g":
                name = fields[1]
                if not name.startswith("part_"):
                    raise ValueError(f"group name {name!r} must be part_<k>")
                current_part = int(name[5:])
                max_part = max(max_part, current_part)
            elif tag == "f":
                corners = []
                for tok in fields[1:]:
                    vi = tok.split("/")
                    v = int(vi[0])
                    if len(vi) > 1 and vi[1] and int(vi[1]) != v:
                        raise ValueError("vt index must equal vertex index")
                    corners.append(v - 1)
                if len(corners) != 3:
                    raise ValueError("only triangle faces are supported")
                triangles.append(corners)
                parts.append(current_part)
            # unknown tags are ignored, matching common OBJ practice
        except (ValueError, IndexError) as exc:
            raise MeshParseError(f"{path}:{lineno}: {exc}") from exc

    verts = np.array(vertices, dtype=np.float64).reshape(-1, 3)
    tris = np.array(triangles, dtype=np.int32).reshape(-1, 3)
    if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
        raise MeshParseError(f"{path}: face index out of range (have {len(verts)} vertices)")
    uv = None
    if uvs:
        if len(uvs) != len(verts):
            raise MeshParseError(f"{path}: vt count {len(uvs)} != vertex count {len(verts)}")
        uv = np.array(uvs, dtype=np.float64)

    landmarks: dict[str, int] = {}
    sidecar = landmark_sidecar_path(path)
    if sidecar.exists():
        landmarks = load_landmarks(sidecar, len(verts))

    num_parts = max_part + 1
    mesh = PartMesh(
        vertices=verts,
        triangles=tris,
        part_of_triangle=np.array(parts, dtype=np.int32),
        num_parts=num_parts,
        uv=uv,
        landmarks=landmarks,
    )
    flagged = tuple(
        p for p in range(num_parts) if len(mesh.triangles_of_part(p)) and not is_edge_manifold(mesh, p)
    )
    if flagged:
        mesh = replace(mesh, nonmanifold_parts=flagged)
    return mesh


def load_landmarks(path: str | Path, n_vertices: int) -> dict[str, int]:
    landmarks: dict[str, int] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 2:
            raise MeshParseError(f"{path}:{lineno}: expected 'name vertex_index'")
        name, idx_s = fields
        try:
            idx = int(idx_s)
        except ValueError as exc:
            raise MeshParseError(f"{path}:{lineno}: bad vertex index {idx_s!r}") from exc
        if not 0 <= idx < n_vertices:
            raise MeshParseError(f"{path}:{lineno}: vertex {idx} out of range")
        if name in landmarks:
            raise MeshParseError(f"{path}:{lineno}: duplicate landmark {name!r}")
        landmarks[name] = idx
    return landmarks


def save_mesh(mesh: PartMesh, path: str | Path) -> None:
    """Write mesh (and landmark sidecar) so that load_mesh round-trips bit-exactly.

    Floats are written with shortest round-trip repr.
    """
    path = Path(path)
    lines = []
    for x, y, z in mesh.vertices.tolist():
        lines.append(f"v {x!r} {y!r} {z!r}")
    if mesh.uv is not None:
        for u, v in mesh.uv.tolist():
            lines.append(f"vt {u!r} {v!r}")
    has_uv = mesh.uv is not None
    # Triangle order is preserved; group lines repeat when parts interleave.
    last_part = None
    for t in range(mesh.num_triangles):
        p = int(mesh.part_of_triangle[t])
        if p != last_part:
            lines.append(f"g part_{p}")
            last_part = p
        a, b, c = (int(i) + 1 for i in mesh.triangles[t])
        if has_uv:
            lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
        else:
            lines.append(f"f {a} {b} {c}")
    path.write_text("\n".join(lines) + "\n")
    if mesh.landmarks:
        side = landmark_sidecar_path(path)
        side.write_text("".join(f"{name} {v}\n" for name, v in sorted(mesh.landmarks.items())))

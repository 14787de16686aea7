"""Triangle surface meshes: parsing, watertightness checks, normals."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class MeshError(ValueError):
    """Malformed mesh input or a geometric precondition that does not hold."""


class MeshParseError(MeshError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(eq=False)
class Mesh:
    """Vertices (N x 3 float64) and outward-wound triangles (F x 3 int64)."""

    vertices: np.ndarray
    faces: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        n = len(self.vertices)
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= n:
                raise MeshError("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise MeshError("face with repeated vertex index")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def _edge_data(self):
        f = self.faces
        half = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        und = np.sort(half, axis=1)
        edges, counts = np.unique(und, axis=0, return_counts=True)
        return edges.reshape(-1, 2), counts

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges (i < j), sorted lexicographically."""
        return self._edge_data[0]

    @property
    def edge_face_counts(self) -> np.ndarray:
        return self._edge_data[1]

    @cached_property
    def vertex_faces(self) -> list[np.ndarray]:
        """Indices of the faces incident to each vertex."""
        order = np.argsort(self.faces.ravel(), kind="stable")
        owners = order // 3
        counts = np.bincount(self.faces.ravel(), minlength=self.n_vertices)
        return np.split(owners, np.cumsum(counts)[:-1])

    def transformed(self, rotation, translation=(0.0, 0.0, 0.0)) -> "Mesh":
        """Copy with vertices mapped x -> Q x + g. Reflections keep the winding,
        so faces are re-wound when det(Q) < 0 to stay outward-facing."""
        q = np.asarray(rotation, dtype=np.float64)
        verts = self.vertices @ q.T + np.asarray(translation, dtype=np.float64)
        faces = self.faces if np.linalg.det(q) > 0 else self.faces[:, [0, 2, 1]]
        return Mesh(verts, faces.copy())


def _parse_off(lines):
    body = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            body.append((lineno, text))
    if not body:
        raise MeshParseError("empty file", 1)
    lineno, first = body[0]
    tokens = first.split()
    if tokens[0] != "OFF":
        raise MeshParseError("missing OFF header", lineno)
    tokens = tokens[1:]
    pos = 1
    if not tokens:
        if len(body) < 2:
            raise MeshParseError("missing element counts", lineno)
        lineno, text = body[1]
        tokens = text.split()
        pos = 2
    try:
        n_v, n_f = int(tokens[0]), int(tokens[1])
    except (IndexError, ValueError):
        raise MeshParseError("malformed element counts", lineno) from None
    if len(body) < pos + n_v + n_f:
        raise MeshParseError("unexpected end of file", body[-1][0])
    verts = np.empty((n_v, 3))
    for k in range(n_v):
        lineno, text = body[pos + k]
        parts = text.split()
        try:
            verts[k] = [float(p) for p in parts[:3]]
        except ValueError:
            raise MeshParseError("malformed vertex", lineno) from None
        if len(parts) < 3:
            raise MeshParseError("vertex needs 3 coordinates", lineno)
    faces = np.empty((n_f, 3), dtype=np.int64)
    for k in range(n_f):
        lineno, text = body[pos + n_v + k]
        try:
            parts = [int(p) for p in text.split()]
        except ValueError:
            raise MeshParseError("malformed face", lineno) from None
        if not parts or parts[0] != 3 or len(parts) < 4:
            raise MeshParseError("non-triangle face", lineno)
        idx = parts[1:4]
        if any(i < 0 or i >= n_v for i in idx):
            raise MeshParseError("face index out of range", lineno)
        faces[k] = idx
    return verts, faces


def _parse_obj(lines):
    verts, faces, face_lines = [], [], []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if parts[0] == "v":
            try:
                verts.append([float(p) for p in parts[1:4]])
            except ValueError:
                raise MeshParseError("malformed vertex", lineno) from None
            if len(parts) < 4:
                raise MeshParseError("vertex needs 3 coordinates", lineno)
        elif parts[0] == "f":
            if len(parts) != 4:
                raise MeshParseError("non-triangle face", lineno)
            try:
                idx = [int(p.split("/")[0]) for p in parts[1:]]
            except ValueError:
                raise MeshParseError("malformed face", lineno) from None
            faces.append(idx)
            face_lines.append(lineno)
    n_v = len(verts)
    out = []
    for idx, lineno in zip(faces, face_lines):
        conv = [i - 1 if i > 0 else n_v + i for i in idx]
        if any(i < 0 or i >= n_v for i in conv):
            raise MeshParseError("face index out of range", lineno)
        out.append(conv)
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(out, dtype=np.int64).reshape(-1, 3)


def parse_mesh(content, fmt="OFF") -> Mesh:
    """Parse ASCII OFF or a v/f-only OBJ subset. ``content`` may be bytes or str."""
    if isinstance(content, bytes):
        content = content.decode("utf-8")
    lines = content.splitlines()
    fmt = fmt.upper()
    if fmt == "OFF":
        verts, faces = _parse_off(lines)
    elif fmt == "OBJ":
        verts, faces = _parse_obj(lines)
    else:
        raise MeshError(f"unsupported mesh format {fmt!r}")
    return Mesh(verts, faces)


def load_mesh(path) -> Mesh:
    path = str(path)
    fmt = "OBJ" if path.lower().endswith(".obj") else "OFF"
    with open(path, "rb") as fh:
        return parse_mesh(fh.read(), fmt)


def format_off(mesh: Mesh) -> str:
    out = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
    out.extend(" ".join(repr(float(c)) for c in v) for v in mesh.vertices)
    out.extend(f"3 {a} {b} {c}" for a, b, c in mesh.faces)
    return "\n".join(out) + "\n"


def write_off(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_off(mesh))


@dataclass
class WatertightReport:
    watertight: bool
    boundary_edges: np.ndarray
    nonmanifold_edges: np.ndarray

    def __bool__(self):
        return self.watertight


def validate_watertight(mesh: Mesh) -> WatertightReport:
    """Watertight iff every undirected edge borders exactly two faces."""
    edges, counts = mesh.edges, mesh.edge_face_counts
    boundary = edges[counts == 1]
    nonmanifold = edges[counts > 2]
    ok = mesh.n_faces > 0 and len(boundary) == 0 and len(nonmanifold) == 0
    return WatertightReport(bool(ok), boundary, nonmanifold)


def face_normals(mesh: Mesh) -> np.ndarray:
    v = mesh.vertices
    f = mesh.faces
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    norms = np.linalg.norm(cross, axis=1)
    bad = np.flatnonzero(norms <= 1e-12)
    if bad.size:
        raise MeshError(f"degenerate face {int(bad[0])} (zero area)")
    return cross / norms[:, None]


def node_normals(mesh: Mesh, fnormals=None) -> np.ndarray:
    """Unweighted mean of incident face normals, renormalized to unit length."""
    if fnormals is None:
        fnormals = face_normals(mesh)
    counts = np.bincount(mesh.faces.ravel(), minlength=mesh.n_vertices)
    isolated = np.flatnonzero(counts == 0)
    if isolated.size:
        raise MeshError(f"isolated vertex {int(isolated[0])} has no incident face")
    acc = np.zeros((mesh.n_vertices, 3))
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], fnormals)
    mean = acc / counts[:, None]
    norms = np.linalg.norm(mean, axis=1)
    bad = np.flatnonzero(norms < 1e-9)
    if bad.size:
        raise MeshError(f"incident face normals cancel at vertex {int(bad[0])}")
    return mean / norms[:, None]

"""Per-sample graph assembly: directed surface edges, invariant node/edge
features, thickness edges, and the on-disk sample bundle format."""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from temnn.frame import CanonicalFrame, compute_frame, to_invariant
from temnn.mesh import Mesh, format_off, load_mesh, node_normals
from temnn.thickness import ThicknessPairing, find_thickness_pairs

COORD_MODES = ("invariant", "original", "none")


class FeatureError(ValueError):
    pass


def build_surface_graph(mesh: Mesh) -> np.ndarray:
    """Both orientations of every surface edge as (src, dst) rows, sorted."""
    e = mesh.edges
    both = np.concatenate([e, e[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    return both[order]


def edge_lengths(mesh: Mesh, directed_edges) -> np.ndarray:
    d = np.asarray(directed_edges, dtype=np.int64)
    v = mesh.vertices
    return np.linalg.norm(v[d[:, 1]] - v[d[:, 0]], axis=1)


def geodesic_from_gate(mesh: Mesh, gate: int) -> np.ndarray:
    """Shortest-path distance along surface edges (Euclidean weights)."""
    n = mesh.n_vertices
    if not 0 <= gate < n:
        raise FeatureError(f"gate index {gate} out of range for {n} nodes")
    e = mesh.edges
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    if np.any(w == 0):
        raise FeatureError("zero-length surface edge")
    graph = csr_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n))
    g = dijkstra(graph, directed=False, indices=gate)
    if not np.all(np.isfinite(g)):
        raise FeatureError("mesh graph is disconnected from the gate")
    return g


def radius_from_cm(mesh: Mesh, center) -> np.ndarray:
    return np.linalg.norm(mesh.vertices - np.asarray(center, dtype=np.float64), axis=1)


@dataclass
class FeatureOptions:
    coord_mode: str = "invariant"
    use_t: bool = True
    use_dot: bool = True

    def __post_init__(self):
        if self.coord_mode not in COORD_MODES:
            raise FeatureError(f"coord_mode must be one of {COORD_MODES}")
        if not (self.use_t or self.use_dot):
            raise FeatureError("at least one thickness feature must be enabled")


@dataclass
class GraphSample:
    directed_edges: np.ndarray    # (2E, 2) src, dst
    edge_features: np.ndarray     # (2E, 1)
    node_features: np.ndarray     # (N, 2) g, r
    thickness_nodes: np.ndarray   # (K,)
    thickness_partners: np.ndarray
    thickness_features: np.ndarray  # (K, tf)
    thickness: np.ndarray         # (K,) raw t for the gate
    invariant_coords: np.ndarray | None
    condition: np.ndarray         # (cf,)
    targets: np.ndarray           # (N, 3) original frame
    frame: CanonicalFrame         # identity unless coord_mode == invariant
    coord_mode: str = "invariant"
    sample_id: str = ""

    @property
    def n_nodes(self) -> int:
        return len(self.node_features)

    def targets_invariant(self) -> np.ndarray:
        """Targets rotated into the frame (vector law)."""
        return self.targets @ self.frame.rotation

    def to_npz_bytes(self) -> bytes:
        buf = io.BytesIO()
        arrays = {k: getattr(self, k) for k in (
            "directed_edges", "edge_features", "node_features", "thickness_nodes",
            "thickness_partners", "thickness_features", "thickness", "condition", "targets")}
        if self.invariant_coords is not None:
            arrays["invariant_coords"] = self.invariant_coords
        arrays["frame_rotation"] = self.frame.rotation
        arrays["frame_center"] = self.frame.center
        arrays["frame_degenerate"] = np.array(self.frame.degenerate)
        arrays["meta"] = np.array([self.coord_mode, self.sample_id])
        np.savez(buf, **arrays)
        return buf.getvalue()

    @classmethod
    def from_npz_bytes(cls, data: bytes) -> "GraphSample":
        z = np.load(io.BytesIO(data), allow_pickle=False)
        frame = CanonicalFrame(z["frame_rotation"], z["frame_center"],
                               tuple(bool(x) for x in z["frame_degenerate"]))
        mode, sid = (str(x) for x in z["meta"])
        return cls(z["directed_edges"], z["edge_features"], z["node_features"],
                   z["thickness_nodes"], z["thickness_partners"], z["thickness_features"],
                   z["thickness"], z["invariant_coords"] if "invariant_coords" in z else None,
                   z["condition"], z["targets"], frame, mode, sid)


def assemble_sample(mesh: Mesh, frame: CanonicalFrame, pairing: ThicknessPairing, gate: int,
                    condition, targets, options: FeatureOptions | None = None,
                    geodesic=None, sample_id="") -> GraphSample:
    options = options or FeatureOptions()
    n = mesh.n_vertices
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    if len(targets) != n or pairing.n_nodes != n:
        raise FeatureError("targets / pairing length does not match the mesh")
    edges = build_surface_graph(mesh)
    g = geodesic_from_gate(mesh, gate) if geodesic is None else np.asarray(geodesic)
    if len(g) != n:
        raise FeatureError("geodesic length does not match the mesh")
    r = radius_from_cm(mesh, frame.center)
    nodes = np.flatnonzero(pairing.valid).astype(np.int64)
    cols = []
    if options.use_t:
        cols.append(pairing.thickness[nodes])
    if options.use_dot:
        cols.append(pairing.normal_dot[nodes])
    tfeat = np.stack(cols, axis=1) if len(nodes) else np.zeros((0, len(cols)))
    if options.coord_mode == "invariant":
        coords, used = to_invariant(frame, mesh.vertices), frame
    elif options.coord_mode == "original":
        coords, used = mesh.vertices.copy(), CanonicalFrame.identity()
    else:
        coords, used = None, frame
    return GraphSample(
        directed_edges=edges,
        edge_features=edge_lengths(mesh, edges)[:, None],
        node_features=np.stack([g, r], axis=1),
        thickness_nodes=nodes,
        thickness_partners=pairing.partner[nodes],
        thickness_features=tfeat,
        thickness=pairing.thickness[nodes].copy(),
        invariant_coords=coords,
        condition=np.asarray(condition, dtype=np.float64).ravel(),
        targets=targets,
        frame=used,
        coord_mode=options.coord_mode,
        sample_id=sample_id,
    )


# -- bundles ---------------------------------------------------------------

@dataclass
class Bundle:
    """One sample as stored on disk (geometry plus metadata, no derived features)."""

    mesh: Mesh
    frame: CanonicalFrame
    pairing: ThicknessPairing
    gate: int
    condition: np.ndarray
    targets: np.ndarray
    name: str = ""

    def transformed(self, rotation, translation) -> "Bundle":
        """Re-pose the shape; frame and pairing are recomputed, targets rotate as vectors."""
        mesh = self.mesh.transformed(rotation, translation)
        normals = node_normals(mesh)
        return Bundle(mesh, compute_frame(mesh), find_thickness_pairs(mesh, normals),
                      self.gate, self.condition.copy(),
                      self.targets @ np.asarray(rotation).T, self.name)

    def to_sample(self, options: FeatureOptions | None = None) -> GraphSample:
        return assemble_sample(self.mesh, self.frame, self.pairing, self.gate, self.condition,
                               self.targets, options, sample_id=self.name)


def targets_to_csv(targets) -> str:
    lines = ["node_id,dx,dy,dz"]
    for i, (a, b, c) in enumerate(np.asarray(targets)):
        lines.append(f"{i},{float(a)!r},{float(b)!r},{float(c)!r}")
    return "\n".join(lines) + "\n"


def targets_from_csv(text: str) -> np.ndarray:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = np.zeros((len(rows), 3))
    for row in rows:
        out[int(row["node_id"])] = [float(row["dx"]), float(row["dy"]), float(row["dz"])]
    return out


def write_bundle(bundle: Bundle, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "mesh.off"), "w") as fh:
        fh.write(format_off(bundle.mesh))
    with open(os.path.join(directory, "frame.json"), "w") as fh:
        fh.write(bundle.frame.to_json() + "\n")
    with open(os.path.join(directory, "pairing.csv"), "w") as fh:
        fh.write(bundle.pairing.to_csv())
    with open(os.path.join(directory, "features.json"), "w") as fh:
        json.dump({"gate": int(bundle.gate),
                   "condition": [float(c) for c in bundle.condition]}, fh)
        fh.write("\n")
    with open(os.path.join(directory, "targets.csv"), "w") as fh:
        fh.write(targets_to_csv(bundle.targets))


def read_bundle(directory) -> Bundle:
    mesh = load_mesh(os.path.join(directory, "mesh.off"))
    with open(os.path.join(directory, "frame.json")) as fh:
        frame = CanonicalFrame.from_json(fh.read())
    with open(os.path.join(directory, "pairing.csv")) as fh:
        pairing = ThicknessPairing.from_csv(fh.read())
    with open(os.path.join(directory, "features.json")) as fh:
        feats = json.load(fh)
    with open(os.path.join(directory, "targets.csv")) as fh:
        targets = targets_from_csv(fh.read())
    if pairing.n_nodes != mesh.n_vertices or len(targets) != mesh.n_vertices:
        raise FeatureError(f"bundle {directory}: per-node files disagree with mesh size")
    return Bundle(mesh, frame, pairing, int(feats["gate"]),
                  np.asarray(feats["condition"], dtype=np.float64), targets,
                  os.path.basename(os.path.normpath(directory)))


def bundle_from_mesh(mesh: Mesh, gate: int, condition, targets=None, name="") -> Bundle:
    normals = node_normals(mesh)
    if targets is None:
        targets = np.zeros((mesh.n_vertices, 3))
    return Bundle(mesh, compute_frame(mesh), find_thickness_pairs(mesh, normals), int(gate),
                  np.asarray(condition, dtype=np.float64), np.asarray(targets, dtype=np.float64),
                  name)

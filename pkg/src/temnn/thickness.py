"""Thickness node pairs, thickness-edge features and the sigmoid gate."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from temnn import kernels
from temnn.mesh import Mesh

TIE_TOL = 1e-9


@dataclass
class ThicknessPairing:
    partner: np.ndarray      # int64, -1 where invalid
    thickness: np.ndarray    # nan where invalid
    normal_dot: np.ndarray   # nan where invalid
    ray_distance: np.ndarray # inf where no hit
    fallback: np.ndarray     # bool
    near_tie: np.ndarray     # bool

    @property
    def valid(self) -> np.ndarray:
        return self.partner >= 0

    @property
    def n_nodes(self) -> int:
        return len(self.partner)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node_id", "partner_id", "thickness", "normal_dot", "fallback_flag"])
        for i in range(self.n_nodes):
            if self.partner[i] >= 0:
                w.writerow([i, int(self.partner[i]), repr(float(self.thickness[i])),
                            repr(float(self.normal_dot[i])), int(self.fallback[i])])
            else:
                w.writerow([i, -1, "", "", int(self.fallback[i])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ThicknessPairing":
        rows = list(csv.DictReader(io.StringIO(text)))
        n = len(rows)
        partner = np.full(n, -1, dtype=np.int64)
        thick = np.full(n, np.nan)
        dot = np.full(n, np.nan)
        fb = np.zeros(n, dtype=bool)
        for row in rows:
            i = int(row["node_id"])
            partner[i] = int(row["partner_id"])
            if partner[i] >= 0:
                thick[i] = float(row["thickness"])
                dot[i] = float(row["normal_dot"])
            fb[i] = bool(int(row["fallback_flag"]))
        return cls(partner, thick, dot, np.full(n, np.nan), fb, np.zeros(n, dtype=bool))


def ray_epsilon(mesh: Mesh) -> float:
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    return 1e-9 * float(np.linalg.norm(hi - lo))


def _lowest_within_tol(candidates, dist):
    """Lowest-index candidate among those within TIE_TOL of the minimum distance.

    Returns ``(index, tied)``; an exact tolerance keeps the choice stable when
    round-off in a rotated copy of the mesh reorders two equal distances.
    """
    best = dist.min()
    close = dist <= best + TIE_TOL * max(1.0, best)
    return int(candidates[close].min()), bool(np.count_nonzero(close) > 1)


def find_thickness_pairs(mesh: Mesh, normals: np.ndarray) -> ThicknessPairing:
    """Pair every node with the nearest opposing-side node along its inward normal.

    The projection distance ``d`` of each node comes from the first
    ray/triangle hit along ``-n_i``; the partner is the hit triangle's vertex
    nearest the hit point among those strictly behind ``x_i``; distances within
    ``TIE_TOL`` count as equal and go to the lower index. Nodes whose ray
    escapes, or whose hit triangle has no admissible vertex, fall back to a
    search over all admissible nodes (nearest to ``x_i`` or to the hit point).
    """
    if normals is None or len(normals) != mesh.n_vertices:
        raise ValueError("find_thickness_pairs needs one normal per vertex")
    verts = mesh.vertices
    n = mesh.n_vertices
    eps = ray_epsilon(mesh)
    idx = np.arange(n, dtype=np.int64)
    face, dist = kernels.raycast_first_hit(verts, mesh.faces, verts, -normals, idx, eps)

    partner = np.full(n, -1, dtype=np.int64)
    fallback = np.zeros(n, dtype=bool)
    near_tie = np.zeros(n, dtype=bool)
    hit = face >= 0
    hit_points = verts - np.where(hit, dist, 0.0)[:, None] * normals

    for i in np.flatnonzero(hit):
        cand = mesh.faces[face[i]]
        side = (verts[cand] - verts[i]) @ normals[i]
        ok = (side < -eps) & (cand != i)
        if not ok.any():
            continue
        d = np.sqrt(np.sum((verts[cand] - hit_points[i]) ** 2, axis=1))
        d = np.where(ok, d, np.inf)
        partner[i], near_tie[i] = _lowest_within_tol(cand, d)

    todo = np.flatnonzero(partner < 0)
    if todo.size:
        fb_idx, _ = kernels.constrained_nearest(verts, hit_points[todo], todo,
                                                normals[todo], eps)
        for q, i in enumerate(todo):
            if fb_idx[q] < 0:
                continue
            # re-rank the kernel's winner against its near-equal competitors
            side = (verts - verts[i]) @ normals[i]
            d = np.sqrt(np.sum((verts - hit_points[i]) ** 2, axis=1))
            d = np.where((side < -eps) & (idx != i), d, np.inf)
            partner[i], near_tie[i] = _lowest_within_tol(idx, d)
            fallback[i] = True

    valid = partner >= 0
    thickness = np.full(n, np.nan)
    normal_dot = np.full(n, np.nan)
    p = partner[valid]
    thickness[valid] = np.linalg.norm(verts[valid] - verts[p], axis=1)
    normal_dot[valid] = np.clip(np.sum(normals[valid] * normals[p], axis=1), -1.0, 1.0)
    return ThicknessPairing(partner, thickness, normal_dot, dist, fallback, near_tie)


def thickness_edge_features(pairing: ThicknessPairing, use_t=True, use_dot=True):
    """Per valid node ``[t, n_i . n_partner]`` (columns dropped by the ablation flags).

    Returns ``(nodes, partners, features)`` for the thickness edge list.
    """
    if not (use_t or use_dot):
        raise ValueError("at least one thickness feature must be enabled")
    nodes = np.flatnonzero(pairing.valid).astype(np.int64)
    cols = []
    if use_t:
        cols.append(pairing.thickness[nodes])
    if use_dot:
        cols.append(pairing.normal_dot[nodes])
    return nodes, pairing.partner[nodes], np.stack(cols, axis=1)


def thickness_activation(t, tau, alpha=3.0):
    """I = 1 / (1 + exp(alpha (t - tau))), overflow-safe."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return expit(alpha * (tau - np.asarray(t, dtype=np.float64)))


def thickness_activation_dtau(t, tau, alpha=3.0):
    i = thickness_activation(t, tau, alpha)
    return alpha * i * (1.0 - i)


@dataclass
class ThicknessHistogram:
    edges: np.ndarray
    counts: np.ndarray
    fraction_above: float
    n_valid: int

    def to_csv(self) -> str:
        lines = ["bin_lo,bin_hi,count"]
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            lines.append(f"{lo!r},{hi!r},{int(c)}")
        lines.append(f"# fraction_above_tau,{self.fraction_above!r}")
        return "\n".join(lines) + "\n"


def thickness_histogram(thickness, tau, bins=40, value_range=None) -> ThicknessHistogram:
    """Histogram of valid thickness values and the fraction strictly above ``tau``.

    ``thickness`` is a pairing or an array (nan entries are invalid nodes).
    """
    t = getattr(thickness, "thickness", thickness)
    t = np.asarray(t, dtype=np.float64)
    t = t[np.isfinite(t)]
    counts, edges = np.histogram(t, bins=bins, range=value_range)
    frac = float(np.count_nonzero(t > tau) / len(t)) if len(t) else float("nan")
    return ThicknessHistogram(edges, counts, frac, len(t))

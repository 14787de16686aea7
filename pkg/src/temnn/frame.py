"""Data-driven canonical frame: centred PCA axes with sign disambiguation.

``to_invariant`` maps world points into the frame, ``from_invariant`` maps
predictions back (``point`` adds the centre, ``vector`` only rotates).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SIGN_TOL = 1e-9
EIG_TOL = 1e-9


class FrameError(ValueError):
    def __init__(self, message, flags=None):
        super().__init__(message)
        self.flags = flags


@dataclass(frozen=True)
class CanonicalFrame:
    rotation: np.ndarray  # columns are b1, b2, b3
    center: np.ndarray
    degenerate: tuple = (False, False, False)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3), (False, False, False))

    @property
    def is_degenerate(self) -> bool:
        return any(self.degenerate)

    def to_json(self) -> str:
        return json.dumps({
            "rotation": [[float(x) for x in row] for row in self.rotation],
            "center": [float(x) for x in self.center],
            "degenerate": [bool(x) for x in self.degenerate],
        })

    @classmethod
    def from_json(cls, text: str) -> "CanonicalFrame":
        d = json.loads(text)
        return cls(np.array(d["rotation"], dtype=np.float64),
                   np.array(d["center"], dtype=np.float64),
                   tuple(bool(x) for x in d["degenerate"]))


def _points(mesh_or_points):
    pts = getattr(mesh_or_points, "vertices", mesh_or_points)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise FrameError("empty vertex list")
    return pts


def center_of_mass(mesh) -> np.ndarray:
    """Vertex mean (not the area centroid)."""
    return _points(mesh).mean(axis=0)


def bounding_box_center(mesh) -> np.ndarray:
    pts = _points(mesh)
    return (pts.min(axis=0) + pts.max(axis=0)) / 2.0


def compute_frame(mesh, bbox="principal") -> CanonicalFrame:
    """Principal axes of the centred vertex cloud, sorted by variance.

    Each axis is oriented so that it points along ``x_cm - x_bbox``. With
    ``bbox="principal"`` (default) the box is taken along the principal axes,
    which makes the reference vector, and therefore the frame, equivariant
    under rotations. ``bbox="world"`` uses the world-axis box instead.
    """
    pts = _points(mesh)
    if len(pts) < 2:
        raise FrameError("need at least 2 vertices")
    cm = pts.mean(axis=0)
    centered = pts - cm
    cov = centered.T @ centered / (len(pts) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")
    evals = evals[order]
    basis = evecs[:, order].copy()

    scale = max(abs(evals[0]), np.finfo(float).tiny)
    flags = [False, False, False]
    for k in range(2):
        if evals[k] - evals[k + 1] < EIG_TOL * scale:
            flags[k] = flags[k + 1] = True

    if bbox == "principal":
        proj = centered @ basis
        # reference vector expressed in the (unsigned) principal basis
        v_coef = -(proj.min(axis=0) + proj.max(axis=0)) / 2.0
        v_norm = np.linalg.norm(v_coef)
        dots = v_coef
    elif bbox == "world":
        v = cm - bounding_box_center(pts)
        v_norm = np.linalg.norm(v)
        dots = basis.T @ v
    else:
        raise ValueError(f"unknown bbox mode {bbox!r}")

    for k in range(3):
        if abs(dots[k]) < SIGN_TOL * v_norm or v_norm < 1e-12:
            flags[k] = True
            col = basis[:, k]
            j = int(np.argmax(np.abs(col)))  # lowest axis wins ties
            if col[j] < 0:
                basis[:, k] = -col
        elif dots[k] < 0:
            basis[:, k] = -basis[:, k]

    if v_norm < 1e-12:
        raise FrameError("fully symmetric shape: axis signs are not determinable",
                         tuple(flags))
    return CanonicalFrame(basis, cm, tuple(flags))


def to_invariant(frame: CanonicalFrame, points) -> np.ndarray:
    """x_inv = R^T (x - x_cm), row-wise."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return (pts - frame.center) @ frame.rotation


def from_invariant(frame: CanonicalFrame, points, mode="vector") -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = pts @ frame.rotation.T
    if mode == "point":
        return out + frame.center
    if mode != "vector":
        raise ValueError(f"unknown inverse mode {mode!r}")
    return out


def random_rigid_transform(rng, reflections=True, scale=10.0):
    """Haar-random orthogonal matrix (QR of a Gaussian) and a translation."""
    a = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if not reflections and np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    g = rng.uniform(-scale, scale, size=3)
    return q, g

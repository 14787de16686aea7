"""Synthetic watertight shapes with known wall thickness, and an analytic
equivariant deformation field used as the regression target."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from temnn.mesh import Mesh, node_normals
from temnn.frame import center_of_mass

FAMILIES = ("plate", "hollow_box", "ribbed_plate")


class SpecError(ValueError):
    pass


@dataclass
class ShapeSpec:
    family: str = "plate"
    dims: tuple = (24.0, 16.0)          # lateral extents (plate) / outer box (A, B, C)
    thickness: tuple = (2.0,)          # plate: (h,); box: (wx, wy, wz); ribbed: (h, w_rib)
    resolution: int = 8
    rib_height: float = 5.0
    n_ribs: int = 2
    grading: float = 1.15              # geometric growth of grid spacing
    side_split: float = 0.35           # relative height of the extra side row
    gate_anchor: tuple = (0.0, 0.0, 0.0)
    seed: int = 0

    def validate(self):
        if self.family not in FAMILIES:
            raise SpecError(f"unknown shape family {self.family!r}")
        if self.resolution < 2:
            raise SpecError("resolution must be >= 2")
        dims = tuple(float(x) for x in self.dims)
        thick = tuple(float(x) for x in self.thickness)
        if any(x <= 0 for x in dims + thick):
            raise SpecError("dimensions and thicknesses must be positive")
        if self.family == "hollow_box":
            if len(dims) != 3 or len(thick) != 3:
                raise SpecError("hollow_box needs dims (A, B, C) and thickness (wx, wy, wz)")
            for d, w in zip(dims, thick):
                if 2 * w >= d:
                    raise SpecError("wall thickness leaves no cavity")
        else:
            if len(dims) != 2:
                raise SpecError(f"{self.family} needs lateral dims (L, W)")
            if thick[0] >= min(dims):
                raise SpecError("thickness must be smaller than the lateral extent")
        if self.family == "ribbed_plate":
            if len(thick) != 2:
                raise SpecError("ribbed_plate needs thickness (h, w_rib)")
            if self.n_ribs < 1 or self.rib_height <= 0:
                raise SpecError("ribbed_plate needs n_ribs >= 1 and rib_height > 0")
            if self.n_ribs * thick[1] * 3 >= dims[0]:
                raise SpecError("ribs do not fit on the plate")


@dataclass
class GeneratedShape:
    mesh: Mesh
    spec: ShapeSpec
    gate: int
    oracle_partner: np.ndarray    # -1 where the oracle does not apply
    oracle_thickness: np.ndarray  # nan where the oracle does not apply
    interior: np.ndarray          # nodes on flat face interiors (axis-aligned normal)


def _graded(lo, hi, n, growth):
    steps = growth ** np.arange(n - 1)
    pos = np.concatenate([[0.0], np.cumsum(steps)])
    return lo + (hi - lo) * pos / pos[-1]


def _surface_from_cells(axes, occ):
    """Boundary quads of the filled cells of a rectilinear grid, triangulated
    and wound outward. Returns the mesh and each vertex's grid index."""
    xs, ys, zs = axes
    nx, ny, nz = occ.shape
    pad = np.zeros((nx + 2, ny + 2, nz + 2), dtype=bool)
    pad[1:-1, 1:-1, 1:-1] = occ
    quads = []
    for axis in range(3):
        sl_a = [slice(1, -1)] * 3
        sl_b = [slice(1, -1)] * 3
        shape = list(occ.shape)
        shape[axis] += 1
        sl_a[axis] = slice(0, -1)
        sl_b[axis] = slice(1, None)
        lo = pad[tuple(sl_a)]
        hi = pad[tuple(sl_b)]
        for sign, mask in ((+1, lo & ~hi), (-1, hi & ~lo)):
            for idx in np.argwhere(mask):
                p = list(idx)
                u, v = [a for a in range(3) if a != axis]
                corners = []
                for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    c = list(p)
                    c[u] += du
                    c[v] += dv
                    corners.append(tuple(c))
                quads.append((corners, axis, sign))
    grid_ids = {}
    tris = []
    for corners, axis, sign in quads:
        ids = []
        for c in corners:
            if c not in grid_ids:
                grid_ids[c] = len(grid_ids)
            ids.append(grid_ids[c])
        tris.append((ids, axis, sign))
    # renumber vertices by lexicographic grid index for determinism
    keys = sorted(grid_ids)
    remap = {grid_ids[k]: n for n, k in enumerate(keys)}
    verts = np.array([[xs[i], ys[j], zs[k]] for i, j, k in keys], dtype=np.float64)
    faces = []
    for ids, axis, sign in tris:
        a, b, c, d = (remap[i] for i in ids)
        for tri in ((a, b, c), (a, c, d)):
            p0, p1, p2 = verts[list(tri)]
            nrm = np.cross(p1 - p0, p2 - p0)
            if nrm[axis] * sign < 0:
                tri = (tri[0], tri[2], tri[1])
            faces.append(tri)
    return Mesh(verts, np.array(faces, dtype=np.int64)), np.array(keys, dtype=np.int64)


def _cells(spec: ShapeSpec):
    """Grid axes and occupancy for a shape family."""
    res = spec.resolution
    g = spec.grading
    if spec.family == "plate":
        L, W = spec.dims
        h = spec.thickness[0]
        xs = _graded(0.0, L, res + 1, g)
        ys = _graded(0.0, W, max(2, int(round(res * W / L))) + 1, g)
        zs = np.array([0.0, spec.side_split * h, h])
        occ = np.ones((len(xs) - 1, len(ys) - 1, 2), dtype=bool)
    elif spec.family == "ribbed_plate":
        L, W = spec.dims
        h, wr = spec.thickness
        base = _graded(0.0, L, res + 1, g)
        centers = L * (np.arange(spec.n_ribs) + 1.0) / (spec.n_ribs + 1.0)
        centers = centers + 0.37 * wr  # break left/right symmetry
        extra = np.concatenate([[c - wr / 2, c + wr / 2] for c in centers])
        # drop grid lines too close to the rib faces, then insert them
        keep = np.all(np.abs(base[:, None] - extra[None, :]) > 0.3 * wr, axis=1)
        xs = np.unique(np.concatenate([base[keep], extra]))
        ys = _graded(0.0, W, max(2, int(round(res * W / L))) + 1, g)
        zs = np.array([0.0, spec.side_split * h, h, h + spec.rib_height])
        occ = np.zeros((len(xs) - 1, len(ys) - 1, 3), dtype=bool)
        occ[:, :, :2] = True
        xc = (xs[:-1] + xs[1:]) / 2
        for c in centers:
            occ[np.abs(xc - c) < wr / 2, :, 2] = True
    else:
        A, B, C = spec.dims
        wx, wy, wz = spec.thickness
        axes = []
        for ext, w in zip((A, B, C), (wx, wy, wz)):
            n_in = max(2, int(round(res * (ext - 2 * w) / max(A, B, C))))
            inner = _graded(w, ext - w, n_in + 1, g)
            axes.append(np.concatenate([[0.0], inner, [ext]]))
        xs, ys, zs = axes
        occ = np.zeros((len(xs) - 1, len(ys) - 1, len(zs) - 1), dtype=bool)
        occ[[0, -1], :, :] = True
        occ[:, [0, -1], :] = True
        occ[:, :, 0] = True  # open top keeps inner and outer skins connected
    return (xs, ys, zs), occ


def _march_oracle(axes, occ, grid_index, normals):
    """Opposite node and wall thickness for nodes on flat face interiors, found
    by walking the occupancy grid along the inward axis."""
    n = len(grid_index)
    partner = np.full(n, -1, dtype=np.int64)
    thick = np.full(n, np.nan)
    interior = np.zeros(n, dtype=bool)
    lookup = {tuple(k): i for i, k in enumerate(grid_index)}
    shape = occ.shape
    for i in range(n):
        nrm = normals[i]
        axis = int(np.argmax(np.abs(nrm)))
        if abs(abs(nrm[axis]) - 1.0) > 1e-12:
            continue
        step = -1 if nrm[axis] > 0 else 1   # move inward
        p = list(grid_index[i])
        u, v = [a for a in range(3) if a != axis]

        def filled(cell):
            if any(c < 0 or c >= s for c, s in zip(cell, shape)):
                return False
            return bool(occ[tuple(cell)])

        # all four cells touching this node on the inward side must be solid
        def layer_cells(k):
            cells = []
            for du in (-1, 0):
                for dv in (-1, 0):
                    c = [0, 0, 0]
                    c[axis] = k
                    c[u] = p[u] + du
                    c[v] = p[v] + dv
                    cells.append(c)
            return cells

        k = p[axis] if step > 0 else p[axis] - 1
        if not all(filled(c) for c in layer_cells(k)):
            continue
        while all(filled(c) for c in layer_cells(k)):
            k += step
        if any(filled(c) for c in layer_cells(k)):
            continue  # exits through an uneven surface
        q = list(p)
        q[axis] = k if step > 0 else k + 1
        j = lookup.get(tuple(q))
        if j is None:
            continue
        interior[i] = True
        partner[i] = j
        thick[i] = abs(axes[axis][q[axis]] - axes[axis][p[axis]])
    return partner, thick, interior


def gen_shape(spec: ShapeSpec) -> GeneratedShape:
    spec.validate()
    axes, occ = _cells(spec)
    mesh, grid_index = _surface_from_cells(axes, occ)
    normals = node_normals(mesh)
    partner, thick, interior = _march_oracle(axes, occ, grid_index, normals)
    anchor = np.asarray(spec.gate_anchor, dtype=np.float64)
    d = np.linalg.norm(mesh.vertices - anchor, axis=1)
    gate = int(np.flatnonzero(d == d.min())[0])
    return GeneratedShape(mesh, spec, gate, partner, thick, interior)


@dataclass
class FieldSpec:
    c1: float = 1.0
    c2: float = 0.3
    s: float = 8.0
    t_star: float = 4.0
    cond_weights: tuple = (0.6, -0.4, 0.8, 0.3)
    cond_bias: float = 1.0

    def validate(self):
        if self.s <= 0 or self.t_star <= 0:
            raise SpecError("field needs s > 0 and t_star > 0")

    def amplitude(self, condition) -> float:
        c = np.asarray(condition, dtype=np.float64)
        w = np.asarray(self.cond_weights, dtype=np.float64)
        if c.shape != w.shape:
            raise SpecError(f"condition has {c.size} entries, field expects {w.size}")
        return float(self.cond_bias + w @ c)


def synth_field(mesh: Mesh, pairing, geodesic, condition, fspec: FieldSpec, normals=None):
    """Per-node displacement built from normals, radial directions and invariant scalars.

    dx_i = c1 a(c) exp(-t_i / s) [t_i <= t*] n_i + c2 (g_i / max g) u_i
    """
    fspec.validate()
    if normals is None:
        normals = node_normals(mesh)
    verts = mesh.vertices
    radial = verts - center_of_mass(mesh)
    rn = np.linalg.norm(radial, axis=1, keepdims=True)
    u = np.divide(radial, rn, out=np.zeros_like(radial), where=rn > 0)
    g = np.asarray(geodesic, dtype=np.float64)
    gmax = g.max()
    out = fspec.c2 * (g / gmax if gmax > 0 else g)[:, None] * u
    t = np.asarray(getattr(pairing, "thickness", pairing), dtype=np.float64)
    valid = np.isfinite(t)
    gate = np.zeros(len(t))
    gate[valid] = np.exp(-t[valid] / fspec.s) * (t[valid] <= fspec.t_star)
    out = out + fspec.c1 * fspec.amplitude(condition) * gate[:, None] * normals
    return out


def sample_shape_specs(n_shapes, rng, resolution=8):
    """Draw ``n_shapes`` specs cycling through the families. Walls are thin
    (1.5-3); lateral widths stay >= 16 so wall and width modes separate."""
    specs = []
    for k in range(n_shapes):
        family = FAMILIES[k % len(FAMILIES)]
        grading = float(rng.uniform(1.05, 1.25))
        split = float(rng.uniform(0.25, 0.4))
        if family == "plate":
            dims = (float(rng.uniform(20, 30)), float(rng.uniform(16, 22)))
            thick = (float(rng.uniform(1.0, 2.0)),)
            extra = {}
        elif family == "ribbed_plate":
            dims = (float(rng.uniform(22, 30)), float(rng.uniform(16, 22)))
            thick = (float(rng.uniform(1.0, 2.0)), float(rng.uniform(1.0, 2.0)))
            extra = {"n_ribs": int(rng.integers(1, 3)),
                     "rib_height": float(rng.uniform(6.0, 9.0))}
        else:
            dims = (float(rng.uniform(18, 26)), float(rng.uniform(16, 20)),
                    float(rng.uniform(10, 14)))
            thick = tuple(float(x) for x in rng.uniform(1.0, 2.0, size=3))
            extra = {}
        anchor = tuple(float(rng.uniform(0, d)) for d in dims[:2]) + (0.0,)
        specs.append(ShapeSpec(family=family, dims=dims, thickness=thick, resolution=resolution,
                               grading=grading, side_split=split, gate_anchor=anchor,
                               seed=int(rng.integers(0, 2**31 - 1)), **extra))
    return specs


def _split_names(names_by_shape, n_shapes, n_conditions, rng, heldout_shapes, train_frac):
    held = set(int(x) for x in rng.choice(n_shapes, size=heldout_shapes, replace=False)) \
        if heldout_shapes else set()
    test, rest = [], []
    for s in range(n_shapes):
        for c in range(n_conditions):
            name = names_by_shape[s][c]
            if s in held or (c == n_conditions - 1 and n_conditions > 1):
                test.append(name)
            else:
                rest.append(name)
    order = [rest[i] for i in rng.permutation(len(rest))]
    n_train = int(round(train_frac * len(order)))
    n_train = min(max(n_train, 1), max(len(order) - 1, 1))
    return {"train": sorted(order[:n_train]), "val": sorted(order[n_train:]),
            "test": sorted(test)}, sorted(held)


def gen_dataset(out_dir, n_shapes=6, n_conditions=4, seed=0, field: FieldSpec | None = None,
                heldout_shapes=1, train_frac=0.8, condition_features=4, resolution=8,
                shape_specs=None):
    """Write a dataset directory of sample bundles plus ``manifest.json``."""
    from temnn.features import Bundle, geodesic_from_gate, write_bundle
    from temnn.frame import compute_frame
    from temnn.thickness import find_thickness_pairs

    if n_shapes < 1 or n_conditions < 1:
        raise SpecError("need at least one shape and one condition")
    if heldout_shapes >= n_shapes:
        raise SpecError("held-out shapes must leave at least one training shape")
    field = field or FieldSpec()
    field.validate()
    if len(field.cond_weights) != condition_features:
        raise SpecError("field condition weights do not match condition_features")
    rng = np.random.default_rng(seed)
    specs = shape_specs or sample_shape_specs(n_shapes, rng, resolution)
    if len(specs) != n_shapes:
        raise SpecError("number of shape specs does not match n_shapes")
    conditions = rng.uniform(0.0, 1.0, size=(n_conditions, condition_features))

    os.makedirs(os.path.join(out_dir, "bundles"), exist_ok=True)
    names_by_shape = []
    for s, spec in enumerate(specs):
        shape = gen_shape(spec)
        mesh = shape.mesh
        normals = node_normals(mesh)
        pairing = find_thickness_pairs(mesh, normals)
        frame = compute_frame(mesh)
        geo = geodesic_from_gate(mesh, shape.gate)
        names = []
        for c in range(n_conditions):
            name = f"s{s:02d}_c{c:02d}"
            targets = synth_field(mesh, pairing, geo, conditions[c], field, normals)
            write_bundle(Bundle(mesh, frame, pairing, shape.gate, conditions[c], targets, name),
                         os.path.join(out_dir, "bundles", name))
            names.append(name)
        names_by_shape.append(names)

    splits, held = _split_names(names_by_shape, n_shapes, n_conditions, rng,
                                heldout_shapes, train_frac)
    manifest = {
        "format": "temnn-dataset",
        "version": 1,
        "seed": int(seed),
        "condition_features": int(condition_features),
        "field": asdict(field),
        "shapes": [asdict(sp) for sp in specs],
        "conditions": conditions.tolist(),
        "heldout_shapes": held,
        "splits": splits,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest

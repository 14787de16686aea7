"""Pure NumPy versions of the compiled kernels in ``_kernels.pyx``.

Arithmetic is written component by component in the same order as the
Cython loops so both backends return identical bits.
"""
import numpy as np


def raycast_first_hit(vertices, faces, origins, directions, skip_vertex, eps_ray, eps_bary):
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    va, vb, vc = vertices[a], vertices[b], vertices[c]
    e1x, e1y, e1z = (vb - va).T
    e2x, e2y, e2z = (vc - va).T
    n1 = np.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
    n2 = np.sqrt(e2x * e2x + e2y * e2y + e2z * e2z)
    det_tol = 1e-12 * n1 * n2

    n_rays = origins.shape[0]
    hit_face = np.full(n_rays, -1, dtype=np.int64)
    hit_dist = np.full(n_rays, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for r in range(n_rays):
            ox, oy, oz = origins[r]
            dx, dy, dz = directions[r]
            skip = skip_vertex[r]
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            inv = 1.0 / det
            sx = ox - va[:, 0]
            sy = oy - va[:, 1]
            sz = oz - va[:, 2]
            u = (sx * px + sy * py + sz * pz) * inv
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv
            t = (e2x * qx + e2y * qy + e2z * qz) * inv
            ok = (
                (a != skip) & (b != skip) & (c != skip)
                & (np.abs(det) > det_tol)
                & (u >= -eps_bary) & (u <= 1.0 + eps_bary)
                & (v >= -eps_bary) & (u + v <= 1.0 + eps_bary)
                & (t > eps_ray)
            )
            if not ok.any():
                continue
            t = np.where(ok, t, np.inf)
            f = int(np.argmin(t))
            hit_face[r] = f
            hit_dist[r] = t[f]
    return hit_face, hit_dist


def constrained_nearest(vertices, targets, origin_index, normals, tol):
    n_q = targets.shape[0]
    best = np.full(n_q, -1, dtype=np.int64)
    best_d2 = np.full(n_q, np.inf)
    idx = np.arange(vertices.shape[0])
    for q in range(n_q):
        i = origin_index[q]
        nx, ny, nz = normals[q]
        side = ((vertices[:, 0] - vertices[i, 0]) * nx
                + (vertices[:, 1] - vertices[i, 1]) * ny
                + (vertices[:, 2] - vertices[i, 2]) * nz)
        ok = (side < -tol) & (idx != i)
        if not ok.any():
            continue
        ex = vertices[:, 0] - targets[q, 0]
        ey = vertices[:, 1] - targets[q, 1]
        ez = vertices[:, 2] - targets[q, 2]
        d2 = np.where(ok, ex * ex + ey * ey + ez * ez, np.inf)
        j = int(np.argmin(d2))
        best[q] = j
        best_d2[q] = d2[j]
    return best, best_d2


def scatter_add_rows(x, idx, n_out):
    out = np.zeros((n_out, x.shape[1]))
    np.add.at(out, idx, x)
    return out

# cython: language_level=3
"""Compiled inner loops: ray/triangle casting, constrained nearest node, row scatter-add.

Each function mirrors one in ``temnn._fallback`` operation for operation so the
two backends agree bit for bit on the same inputs.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


def raycast_first_hit(const double[:, ::1] vertices,
                      const cnp.int64_t[:, ::1] faces,
                      const double[:, ::1] origins,
                      const double[:, ::1] directions,
                      const cnp.int64_t[::1] skip_vertex,
                      double eps_ray,
                      double eps_bary):
    cdef Py_ssize_t n_rays = origins.shape[0]
    cdef Py_ssize_t n_faces = faces.shape[0]
    hit_face_arr = np.full(n_rays, -1, dtype=np.int64)
    hit_dist_arr = np.full(n_rays, np.inf, dtype=np.float64)
    cdef cnp.int64_t[::1] hit_face = hit_face_arr
    cdef double[::1] hit_dist = hit_dist_arr
    cdef Py_ssize_t r, f
    cdef cnp.int64_t a, b, c, skip
    cdef double ox, oy, oz, dx, dy, dz
    cdef double e1x, e1y, e1z, e2x, e2y, e2z, px, py, pz, qx, qy, qz, sx, sy, sz
    cdef double det, inv, u, v, t, best, n1, n2
    for r in range(n_rays):
        ox = origins[r, 0]; oy = origins[r, 1]; oz = origins[r, 2]
        dx = directions[r, 0]; dy = directions[r, 1]; dz = directions[r, 2]
        skip = skip_vertex[r]
        best = np.inf
        for f in range(n_faces):
            a = faces[f, 0]; b = faces[f, 1]; c = faces[f, 2]
            if a == skip or b == skip or c == skip:
                continue
            e1x = vertices[b, 0] - vertices[a, 0]
            e1y = vertices[b, 1] - vertices[a, 1]
            e1z = vertices[b, 2] - vertices[a, 2]
            e2x = vertices[c, 0] - vertices[a, 0]
            e2y = vertices[c, 1] - vertices[a, 1]
            e2z = vertices[c, 2] - vertices[a, 2]
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            n1 = sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
            n2 = sqrt(e2x * e2x + e2y * e2y + e2z * e2z)
            if fabs(det) <= 1e-12 * n1 * n2:
                continue
            inv = 1.0 / det
            sx = ox - vertices[a, 0]
            sy = oy - vertices[a, 1]
            sz = oz - vertices[a, 2]
            u = (sx * px + sy * py + sz * pz) * inv
            if u < -eps_bary or u > 1.0 + eps_bary:
                continue
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < -eps_bary or u + v > 1.0 + eps_bary:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv
            if t > eps_ray and t < best:
                best = t
                hit_face[r] = f
        hit_dist[r] = best
    return hit_face_arr, hit_dist_arr


def constrained_nearest(const double[:, ::1] vertices,
                        const double[:, ::1] targets,
                        const cnp.int64_t[::1] origin_index,
                        const double[:, ::1] normals,
                        double tol):
    cdef Py_ssize_t n_q = targets.shape[0]
    cdef Py_ssize_t n_v = vertices.shape[0]
    best_arr = np.full(n_q, -1, dtype=np.int64)
    dist_arr = np.full(n_q, np.inf, dtype=np.float64)
    cdef cnp.int64_t[::1] best_idx = best_arr
    cdef double[::1] best_d2 = dist_arr
    cdef Py_ssize_t q, j
    cdef cnp.int64_t i
    cdef double side, d2, ex, ey, ez
    for q in range(n_q):
        i = origin_index[q]
        for j in range(n_v):
            if j == i:
                continue
            side = ((vertices[j, 0] - vertices[i, 0]) * normals[q, 0]
                    + (vertices[j, 1] - vertices[i, 1]) * normals[q, 1]
                    + (vertices[j, 2] - vertices[i, 2]) * normals[q, 2])
            if not side < -tol:
                continue
            ex = vertices[j, 0] - targets[q, 0]
            ey = vertices[j, 1] - targets[q, 1]
            ez = vertices[j, 2] - targets[q, 2]
            d2 = ex * ex + ey * ey + ez * ez
            if d2 < best_d2[q]:
                best_d2[q] = d2
                best_idx[q] = j
    return best_arr, dist_arr


def scatter_add_rows(const double[:, ::1] x, const cnp.int64_t[::1] idx, Py_ssize_t n_out):
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t c = x.shape[1]
    out_arr = np.zeros((n_out, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, k
    cdef cnp.int64_t dst
    for r in range(m):
        dst = idx[r]
        for k in range(c):
            out[dst, k] += x[r, k]
    return out_arr

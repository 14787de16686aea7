"""Kernel dispatch: compiled Cython routines when built, NumPy otherwise.

Set ``TEMNN_BACKEND=python`` to force the fallback.
"""
import os

import numpy as np

from temnn import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("TEMNN_BACKEND", "").lower() != "python":
    try:
        from temnn import _kernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def raycast_first_hit(vertices, faces, origins, directions, skip_vertex,
                      eps_ray, eps_bary=1e-9, impl=None):
    """First triangle hit by each ray ``origins[r] + d * directions[r]``, ``d > eps_ray``.

    Faces containing ``skip_vertex[r]`` are ignored for ray ``r``. Returns
    ``(face_index, distance)``; misses are ``-1`` and ``inf``.
    """
    impl = impl or _impl
    return impl.raycast_first_hit(_f64(vertices), _i64(faces), _f64(origins),
                                  _f64(directions), _i64(skip_vertex),
                                  float(eps_ray), float(eps_bary))


def constrained_nearest(vertices, targets, origin_index, normals, tol, impl=None):
    """For each query q, the vertex j != origin nearest to ``targets[q]`` among
    those with ``(x_j - x_origin) . normals[q] < -tol``. Returns ``(index, squared distance)``."""
    impl = impl or _impl
    return impl.constrained_nearest(_f64(vertices), _f64(targets), _i64(origin_index),
                                    _f64(normals), float(tol))


def scatter_add_rows(x, idx, n_out, impl=None):
    """``out[idx[r]] += x[r]`` accumulated in row order."""
    impl = impl or _impl
    idx = _i64(idx)
    if idx.shape[0] != x.shape[0]:
        raise ValueError(f"scatter_add_rows: {x.shape[0]} rows but {idx.shape[0]} indices")
    if idx.size and (idx.min() < 0 or idx.max() >= n_out):
        raise IndexError(f"scatter_add_rows: index out of range for {n_out} output rows")
    return impl.scatter_add_rows(_f64(x), idx, int(n_out))

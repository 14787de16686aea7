"""Compare the compiled kernels with the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat 3] [--resolutions 6,10,16]

Each row reports the best-of-N wall time for both backends and checks that
their outputs agree bit for bit.
"""
import argparse
import time

import numpy as np

from temnn import _fallback, kernels
from temnn.mesh import node_normals
from temnn.synthetic import ShapeSpec, gen_shape
from temnn.thickness import ray_epsilon

try:
    from temnn import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def same(a, b):
    return all(np.asarray(x).tobytes() == np.asarray(y).tobytes() for x, y in zip(a, b))


def cases(mesh, rng):
    n = node_normals(mesh)
    v = mesh.vertices
    eps = ray_epsilon(mesh)
    idx = np.arange(mesh.n_vertices)
    q = rng.choice(mesh.n_vertices, min(200, mesh.n_vertices), replace=False)
    x = rng.normal(size=(6 * mesh.n_vertices, 32))
    rows = rng.integers(0, mesh.n_vertices, len(x))
    return {
        "raycast_first_hit": lambda impl: kernels.raycast_first_hit(
            v, mesh.faces, v, -n, idx, eps, impl=impl),
        "constrained_nearest": lambda impl: kernels.constrained_nearest(
            v, v[q], q, n[q], eps, impl=impl),
        "scatter_add_rows": lambda impl: (kernels.scatter_add_rows(
            x, rows, mesh.n_vertices, impl=impl),),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--resolutions", default="6,10,16")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':22s} {'nodes':>6s} {'faces':>6s} {'python s':>10s} "
          f"{'cython s':>10s} {'speedup':>8s} {'bitwise':>8s}")
    for res in (int(r) for r in args.resolutions.split(",")):
        mesh = gen_shape(ShapeSpec("ribbed_plate", (26.0, 18.0), (1.5, 1.75),
                                   resolution=res, rib_height=7.0)).mesh
        for name, fn in cases(mesh, rng).items():
            tp, op = best_of(lambda: fn(_fallback), args.repeat)
            tc, oc = best_of(lambda: fn(_kernels), args.repeat)
            print(f"{name:22s} {mesh.n_vertices:6d} {mesh.n_faces:6d} {tp:10.4f} "
                  f"{tc:10.4f} {tp / tc:8.1f} {str(same(op, oc)):>8s}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Numba kernels against their numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py            # per-kernel timings
    python benchmarks/bench_kernels.py --e2e      # also a mesh pipeline run
                                                  # with and without numba

Per-kernel timings call the compiled and the fallback implementations side
by side in one process (after one warm-up call, so JIT compilation is not
counted). The ``--e2e`` run spawns two interpreters, one with
``LUCODA_DISABLE_NUMBA=1``, and times the same public-API pipeline in each.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np
import scipy.sparse as sp

from lucoda import kernels
from lucoda._accel import USE_NUMBA
from lucoda.spde import structured_mesh
from lucoda.sparse import CholeskyFactor


def best_of(fn, repeat=5):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(mesh_n, n_points, ring_n):
    rng = np.random.default_rng(0)
    mesh = structured_mesh((0.0, 0.0, 1.0, 1.0), mesh_n, mesh_n)
    v = np.ascontiguousarray(mesh.vertices, dtype=float)
    t = np.ascontiguousarray(mesh.triangles, dtype=np.int64)
    vx, vy = v[:, 0].copy(), v[:, 1].copy()
    pts = rng.uniform(0.0, 1.0, (n_points, 2))
    px, py = pts[:, 0].copy(), pts[:, 1].copy()
    ang = np.linspace(0.0, 2.0 * np.pi, ring_n, endpoint=False)
    rad = 0.4 + 0.05 * np.sin(7 * ang)
    rx, ry = 0.5 + rad * np.cos(ang), 0.5 + rad * np.sin(ang)

    rows, cols, vals, _ = kernels.fem_local(v, t)
    K = sp.csc_matrix((vals, (rows, cols)), shape=(len(v),) * 2)
    L, _ = CholeskyFactor(K + sp.identity(len(v), format="csc"), dense=False).factor()
    L.sort_indices()
    Lp, Li, Lx = L.indptr.astype(np.int64), L.indices.astype(np.int64), L.data.astype(float)
    n_cells = int(np.clip(np.sqrt(len(t) / 2.0), 1, 512))
    grid = kernels._bucket_grid(v, t, n_cells)
    tol = kernels._BARY_TOL

    return {
        "fem_local": (
            lambda: kernels._fem_local_nb(vx, vy, t),
            lambda: kernels._fem_local_np(vx, vy, t),
            f"{len(t)} triangles",
        ),
        "locate_points": (
            lambda: kernels._locate_nb(px, py, vx, vy, t, *grid, tol),
            lambda: kernels._locate_np(px, py, vx, vy, t, tol),
            f"{n_points} points, {len(t)} triangles",
        ),
        "points_in_ring": (
            lambda: kernels._pip_nb(px, py, rx, ry),
            lambda: kernels._pip_np(px, py, rx, ry),
            f"{n_points} points, ring of {ring_n}",
        ),
        "selected_inverse_diag": (
            lambda: kernels._takahashi_nb(Lp, Li, Lx, L.shape[0]),
            lambda: kernels._diag_from_solves(L),
            f"n={L.shape[0]}, nnz(L)={L.nnz}",
        ),
    }


E2E = """
import time
import numpy as np
from lucoda.spde import structured_mesh, assemble_fem, projection
from lucoda.kernels import points_in_ring
t = time.perf_counter()
mesh = structured_mesh((0.0, 0.0, 1.0, 1.0), {n}, {n})
fem = assemble_fem(mesh)
pts = np.random.default_rng(0).uniform(0.0, 1.0, ({p}, 2))
A = projection(mesh, pts)
ring = np.array([[0.1, 0.1], [0.9, 0.2], [0.8, 0.9], [0.2, 0.7]])
inside = points_in_ring(pts, ring)
print(time.perf_counter() - t)
"""


def end_to_end(mesh_n, n_points):
    code = E2E.format(n=mesh_n, p=n_points)
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, LUCODA_DISABLE_NUMBA=flag)
        runs = []
        for _ in range(3):
            res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
            runs.append(float(res.stdout.strip().splitlines()[-1]))
        out[label] = min(runs)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mesh-n", type=int, default=60)
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--ring", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--e2e", action="store_true")
    args = ap.parse_args(argv)

    if not USE_NUMBA:
        print("numba disabled (LUCODA_DISABLE_NUMBA); the 'numba' column runs interpreted Python")
    print(f"{'kernel':24s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speed-up':>9s}  size")
    for name, (fast, slow, size) in cases(args.mesh_n, args.points, args.ring).items():
        a = best_of(fast, args.repeat)
        b = best_of(slow, args.repeat)
        print(f"{name:24s} {1e3 * a:11.2f} {1e3 * b:11.2f} {b / a:9.1f}  {size}")
    if args.e2e:
        r = end_to_end(args.mesh_n, args.points)
        print(f"{'pipeline (subprocess)':24s} {1e3 * r['numba']:11.2f} {1e3 * r['numpy']:11.2f} "
              f"{r['numpy'] / r['numba']:9.1f}  mesh {args.mesh_n}x{args.mesh_n}, {args.points} points")


if __name__ == "__main__":
    main()

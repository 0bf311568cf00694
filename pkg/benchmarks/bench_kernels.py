"""Compare the compiled and pure-Python linear-algebra backends.

Times sparse Cholesky factor and solve, damped Jacobi sweeps and one
multigrid V-cycle on P1 Poisson problems.  Run with

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from fracdd.assemble import assemble_p1_bulk
from fracdd.levels import lagrange_hierarchy, mesh_levels
from fracdd.linalg import BACKEND, build_gmg_hierarchy, sparse_cholesky
from fracdd.linalg._backend import get
from fracdd.mesh import build_unit_cube_mesh, build_unit_square_mesh


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def cases():
    yield "2D n=64", build_unit_square_mesh, 64
    yield "2D n=128", build_unit_square_mesh, 128
    yield "3D n=8", build_unit_cube_mesh, 8
    yield "3D n=16", build_unit_cube_mesh, 16


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = ["python", "compiled"] if BACKEND == "compiled" else ["python"]
    print(f"active backend: {BACKEND}")
    print(f"{'case':<10} {'kernel':<12} " + " ".join(f"{b:>10}" for b in backends))
    for label, build, n in cases():
        mesh = build(n)
        A = assemble_p1_bulk(mesh, 1.0)
        b = np.random.default_rng(0).standard_normal(A.shape[0])
        dinv = 1.0 / A.diagonal()
        H = lagrange_hierarchy(A, mesh_levels(build, n), 1, lambda V: np.ones(V.dim, bool))
        res = {"factor": [], "solve": [], "jacobi x10": [], "v-cycle": []}
        for be in backends:
            res["factor"].append(best(lambda: sparse_cholesky(A, be), args.repeat))
            F = sparse_cholesky(A, be)
            res["solve"].append(best(lambda: F.solve(b), args.repeat))
            res["jacobi x10"].append(best(lambda: get(be).jacobi(A, dinv, b, np.zeros_like(b), 0.6, 10),
                                          args.repeat))
            Hb = build_gmg_hierarchy(A, H.P, backend=be)
            res["v-cycle"].append(best(lambda: Hb.vcycle(b), args.repeat))
        for kernel, times in res.items():
            print(f"{label:<10} {kernel:<12} " + " ".join(f"{t * 1e3:>8.2f}ms" for t in times))


if __name__ == "__main__":
    main()

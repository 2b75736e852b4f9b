"""Benchmark the numba kernels against the pure-numpy fallback.

Times the two hot paths (element-matrix scatter during assembly and
the CSR matvec inside BiCGSTAB) plus an end-to-end elastic solve.

Run:  python benchmarks/bench_backends.py [--nx 24]
The numpy fallback is what you get with GRADFEM_NUMBA=0; here both
paths are called directly so a single process can compare them.
"""

import argparse
import time

import numpy as np

import gradfem.kernels as kernels
from gradfem.assembly import DirichletSpec, assemble_jacobian, assemble_residual
from gradfem.backend import HAS_NUMBA
from gradfem.materials import ElasticConstants
from gradfem.mesh import BoundaryLocator, generate_box_mesh
from gradfem.problems import LinearElasticityProblem
from gradfem.solvers import LinearSolveConfig, bicgstab_jacobi


def timed(fn, repeats=5, warmup=1):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--nx", type=int, default=24, help="cells per box edge")
    args = parser.parse_args()

    if not HAS_NUMBA:
        print("numba unavailable or disabled; nothing to compare against.")
        return

    mesh = generate_box_mesh(args.nx, args.nx, args.nx, 1, 1, 1)
    consts = ElasticConstants(E=70e3, nu=0.3)
    specs = [DirichletSpec(BoundaryLocator.plane(2, 0.0), c, lambda p: 0.0) for c in range(3)]
    specs.append(DirichletSpec(BoundaryLocator.plane(2, 1.0), 2, lambda p: 0.01))
    prob = LinearElasticityProblem(mesh, consts, specs)
    U0 = np.zeros(prob.n_dofs)
    R = assemble_residual(prob, U0)
    K = assemble_jacobian(prob, U0)
    print(f"mesh {args.nx}^3: {prob.n_dofs} DOF, {K.nnz} nonzeros\n")

    x = np.random.default_rng(0).standard_normal(prob.n_dofs)
    t_nb = timed(lambda: kernels.csr_matvec(K.indptr, K.indices, K.data, x), repeats=20)
    kernels.HAS_NUMBA = False
    t_np = timed(lambda: kernels.csr_matvec(K.indptr, K.indices, K.data, x), repeats=20)
    kernels.HAS_NUMBA = True
    print(f"csr_matvec      numba {t_nb*1e3:8.2f} ms   numpy {t_np*1e3:8.2f} ms   "
          f"speedup {t_np/t_nb:5.2f}x")

    rng = np.random.default_rng(1)
    dest = rng.integers(0, K.nnz, mesh.n_cells * 576)
    contribs = rng.standard_normal(dest.size)
    buf = np.zeros(K.nnz)
    t_nb = timed(lambda: kernels.scatter_add(buf, dest, contribs))
    kernels.HAS_NUMBA = False
    t_np = timed(lambda: kernels.scatter_add(buf, dest, contribs))
    kernels.HAS_NUMBA = True
    print(f"scatter_add     numba {t_nb*1e3:8.2f} ms   numpy {t_np*1e3:8.2f} ms   "
          f"speedup {t_np/t_nb:5.2f}x")

    # Fixed iteration count: rounding differences between the backends
    # change BiCGSTAB's path, so full-solve times are not comparable.
    cfg = LinearSolveConfig(rel_tol=1e-30, abs_tol=1e-300, max_iters=100)

    def run_iters():
        try:
            bicgstab_jacobi(K, -R, cfg=cfg)
        except Exception:
            pass  # hits max_iters by construction

    t_nb = timed(run_iters, repeats=3)
    kernels.HAS_NUMBA = False
    t_np = timed(run_iters, repeats=3)
    kernels.HAS_NUMBA = True
    print(f"bicgstab 100 it numba {t_nb:8.2f} s    numpy {t_np:8.2f} s    "
          f"speedup {t_np/t_nb:5.2f}x")


if __name__ == "__main__":
    main()

"""Command-line entry points.

    gradfem solve|infer|topopt|taylor-test --config run.toml
            [--out DIR] [--threads N] [--seed N]

Exit codes: 0 success, 1 verification failure (taylor-test orders out
of band), 2 config error, 3 solver non-convergence, 4 IO error.
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .backend import backend_name, set_num_threads
from .config import (
    ConfigError,
    build_mesh,
    build_problem,
    load_config,
    load_schedule,
    make_locator,
    solver_configs,
    source_function,
)
from .solvers import LinearSolveConfig, LinearSolverError, NewtonConfig, NonConvergenceError, incremental_solve, quad_point_stress
from .io_vtk import write_vtk

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4


def _von_mises_cell_avg(problem, U) -> np.ndarray:
    sig = quad_point_stress(problem, U)  # (N_e, 8, vec, 3)
    if problem.vec != 3:
        return np.linalg.norm(sig, axis=(-1, -2)).mean(axis=1)
    dev = sig - np.trace(sig, axis1=-2, axis2=-1)[..., None, None] / 3.0 * np.eye(3)
    vm = np.sqrt(1.5 * (dev * dev).sum((-1, -2)))
    return vm.mean(axis=1)


def _displacement_point_data(problem, U):
    if problem.vec == 1:
        return {"solution": U}
    return {"displacement": U.reshape(-1, 3)}


class _Manifest:
    def __init__(self, out_dir, cfg_path):
        self.out_dir = out_dir
        self.files = []
        with open(cfg_path, "rb") as fh:
            self.config_hash = hashlib.sha256(fh.read()).hexdigest()
        self.t0 = time.perf_counter()

    def add(self, name):
        self.files.append(name)
        return os.path.join(self.out_dir, name)

    def write(self):
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(
                {
                    "config_sha256": self.config_hash,
                    "wall_time_s": time.perf_counter() - self.t0,
                    "gradfem_version": __version__,
                    "backend": backend_name(),
                    "files": sorted(self.files),
                },
                fh,
                indent=2,
            )
            fh.write("\n")


def run_solve(cfg, out_dir, manifest) -> int:
    mesh = build_mesh(cfg)
    problem = build_problem(cfg, mesh)
    newton_cfg, lin_cfg = solver_configs(cfg)
    schedule = load_schedule(cfg)
    mon = cfg["monitor"]
    locator = make_locator(mesh, mon["reaction_where"]) if mon["reaction_where"] else None
    every = max(1, int(cfg["output"]["vtk_every"]))
    n_steps = len(schedule.factors)

    def snapshot(rec):
        # Inside the load loop, before the state commit: stress
        # queries for path-dependent materials see this step's state.
        if rec.step % every == 0 or rec.step == n_steps - 1:
            write_vtk(
                mesh,
                point_data=_displacement_point_data(problem, rec.U),
                cell_data={"von_mises_avg": _von_mises_cell_avg(problem, rec.U)},
                path=manifest.add(f"step_{rec.step:04d}.vtk"),
            )

    history = incremental_solve(
        problem,
        schedule,
        cfg=newton_cfg,
        lin_cfg=lin_cfg,
        reaction_locator=locator,
        reaction_component=mon["reaction_component"],
        on_step=snapshot,
    )
    history.write_csv(manifest.add("history.csv"))
    history.write_newton_csv(manifest.add("newton_history.csv"))
    return EXIT_OK


def run_infer(cfg, out_dir, manifest) -> int:
    from .inverse import run_inference

    inf = cfg["inference"]
    if inf["n_obs"] < 1:
        raise ConfigError("inference.n_obs must be at least 1 (degenerate objective)")
    mesh = build_mesh(cfg)
    problem = build_problem(cfg, mesh)
    if problem.design_layout != "node":
        raise ConfigError("infer runs need material.model = 'poisson'")
    _, lin_cfg = solver_configs(cfg)
    result = run_inference(
        problem,
        source_function(cfg),
        n_obs=inf["n_obs"],
        seed=cfg["seed"],
        max_iters=inf["max_iters"],
        lin_cfg=lin_cfg,
    )
    result.write_csv(manifest.add("history.csv"))
    write_vtk(
        mesh,
        point_data={
            "source_recovered": result.theta,
            "u_pred": result.u_pred,
            "u_true": result.u_true,
        },
        path=manifest.add("inference.vtk"),
    )
    print(f"relative L2 error: {result.relative_l2_error:.6f}")
    return EXIT_OK


def run_topopt_cmd(cfg, out_dir, manifest) -> int:
    from .inverse import run_topopt

    top = cfg["topopt"]
    mesh = build_mesh(cfg)
    problem = build_problem(cfg, mesh)
    newton_cfg, lin_cfg = solver_configs(cfg)
    every = max(1, int(cfg["output"]["vtk_every"]))

    def snapshot(step, theta, comp):
        if step % every == 0:
            write_vtk(
                mesh,
                cell_data={"density": theta},
                path=manifest.add(f"design_{step:04d}.vtk"),
            )

    result = run_topopt(
        problem,
        volume_fraction=top["volume_fraction"],
        n_steps=top["steps"],
        filter_radius=top["filter_radius"] or None,
        move_limit=top["move_limit"],
        newton_cfg=newton_cfg,
        lin_cfg=lin_cfg,
        callback=snapshot,
    )
    result.write_csv(manifest.add("history.csv"))
    write_vtk(mesh, cell_data={"density": result.theta}, path=manifest.add("design_final.vtk"))
    print(f"final compliance: {result.final_compliance:.6e} at volume {result.final_volume:.4f}")
    return EXIT_OK


def run_taylor(cfg, out_dir, manifest) -> int:
    from .adjoint import ReducedObjective, taylor_test
    from .inverse import poisson_objective, poisson_objective_gradient
    from .solvers import newton_solve

    mesh = build_mesh(cfg)
    problem = build_problem(cfg, mesh)
    if problem.design_layout != "node":
        raise ConfigError("taylor-test runs need material.model = 'poisson'")
    # Verification run: solve well below the remainder sizes being
    # measured so the h^2 term at the smallest step stays resolvable.
    newton_cfg = NewtonConfig(rel_tol=1e-12, abs_tol=1e-12)
    lin_cfg = LinearSolveConfig(rel_tol=1e-13, abs_tol=1e-15)

    rng = np.random.default_rng(cfg["seed"])
    # Synthetic observations from the configured source field.
    problem.set_theta(np.array([source_function(cfg)(x) for x in mesh.nodes]))
    u_true, _ = newton_solve(problem, cfg=newton_cfg, lin_cfg=lin_cfg)
    n_obs = min(cfg["inference"]["n_obs"], mesh.n_nodes)
    obs = np.sort(rng.choice(mesh.n_nodes, n_obs, replace=False))
    obs_vals = u_true[obs]
    obj = ReducedObjective(
        problem,
        objective=lambda U, t: poisson_objective(U, obs, obs_vals),
        dj_du=lambda U, t: poisson_objective_gradient(U, obs, obs_vals),
        newton_cfg=newton_cfg,
        lin_cfg=lin_cfg,
    )
    theta0 = np.zeros(mesh.n_nodes)
    # Perturbation small against the source scale so the linear term
    # dominates the remainder over the whole h grid.
    dtheta = np.zeros(mesh.n_nodes)
    picked = rng.choice(mesh.n_nodes, cfg["taylor"]["n_perturbed"], replace=False)
    dtheta[picked] = cfg["taylor"]["perturbation_scale"] * rng.standard_normal(picked.size)
    report = taylor_test(obj.value, obj.gradient, theta0, dtheta, cfg["taylor"]["h_values"])
    report.write_csv(manifest.add("taylor.csv"))
    print(f"fitted orders: zeroth {report.fitted_zeroth:.4f}, first {report.fitted_first:.4f}")
    ok = 0.9 <= report.fitted_zeroth <= 1.1 and 1.9 <= report.fitted_first <= 2.1
    return EXIT_OK if ok else EXIT_VERIFY


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gradfem",
        description="Differentiable hexahedral FEM: forward solves and adjoint-based inverse problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "infer", "topopt", "taylor-test"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", default=None, help="output directory (default from config)")
        p.add_argument("--threads", type=int, default=None, help="worker threads for parallel kernels")
        p.add_argument("--seed", type=int, default=None, help="random seed override")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.raw["seed"] = int(args.seed)
        threads = args.threads
        if threads is None:
            env = os.environ.get("GRADFEM_THREADS", "")
            threads = int(env) if env else int(cfg["threads"])
        if threads:
            set_num_threads(threads)
        out_dir = args.out or cfg["output_dir"]
    except (ConfigError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        os.makedirs(out_dir, exist_ok=True)
        manifest = _Manifest(out_dir, args.config)
        cfg.write_resolved(manifest.add("resolved_config.json"))
    except OSError as err:
        print(f"io error: {err}", file=sys.stderr)
        return EXIT_IO

    runner = {
        "solve": run_solve,
        "infer": run_infer,
        "topopt": run_topopt_cmd,
        "taylor-test": run_taylor,
    }[args.command]
    try:
        code = runner(cfg, out_dir, manifest)
        manifest.write()
        return code
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergenceError, LinearSolverError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as err:
        print(f"io error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

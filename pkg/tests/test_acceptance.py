"""Acceptance suite: one test per release criterion, each printing a
PASS line with its measured numbers. Tolerances are fixed here, not
calibrated elsewhere. The two large runs (inference on the 28611-node
mesh, the 100k-DOF solve) dominate the runtime of the whole suite.
"""

import time

import numpy as np
import pytest

from conftest import affine_dirichlet, onbox_locator, zero_dirichlet
from gradfem.adjoint import ReducedObjective, taylor_test
from gradfem.assembly import (
    DirichletSpec,
    NeumannSpec,
    assemble_jacobian,
    assemble_residual,
)
from gradfem.backend import HAS_NUMBA, set_num_threads
from gradfem.config import make_locator
from gradfem.inverse import (
    compliance,
    compliance_load_vector,
    poisson_objective,
    poisson_objective_gradient,
    run_inference,
    run_topopt,
)
from gradfem.materials import ElasticConstants, LinearElastic, NeoHookean
from gradfem.mesh import BoundaryLocator, boundary_facets, generate_box_mesh
from gradfem.problems import (
    J2PlasticityProblem,
    LinearElasticityProblem,
    NeoHookeanProblem,
    PoissonProblem,
    SimpElasticityProblem,
)
from gradfem.solvers import (
    LinearSolveConfig,
    LoadSchedule,
    NewtonConfig,
    bicgstab_jacobi,
    incremental_solve,
    newton_solve,
)

ALUMINUM = ElasticConstants(E=70e3, nu=0.3, sigma_yield=250.0)
TIGHT_NEWTON = NewtonConfig(rel_tol=1e-12, abs_tol=1e-12)
TIGHT_LINEAR = LinearSolveConfig(rel_tol=1e-13, abs_tol=1e-15)


def report(num, ok, detail):
    print(f"ACCEPTANCE {num:2d} [{'PASS' if ok else 'FAIL'}] {detail}")
    assert ok, detail


def bimodal_source(x):
    x = np.asarray(x)
    return 10.0 * np.exp(-10.0 * np.sum((x - [0.25, 0.25, 0.1]) ** 2, axis=-1)) + 10.0 * np.exp(
        -10.0 * np.sum((x - [0.75, 0.75, 0.1]) ** 2, axis=-1)
    )


def poisson_inference_problem(dims, box):
    mesh = generate_box_mesh(*dims, *box)
    prob = PoissonProblem(
        mesh, 1.0, [DirichletSpec(make_locator(mesh, "all_boundary"), 0, lambda p: 0.0)],
        design_source=True,
    )
    return mesh, prob


def test_criterion_1_taylor_orders():
    """Zeroth/first Taylor remainder orders on the inference objective."""
    t0 = time.perf_counter()
    mesh, prob = poisson_inference_problem((10, 10, 2), (1.0, 1.0, 0.2))
    rng = np.random.default_rng(0)
    prob.set_theta(np.array([bimodal_source(x) for x in mesh.nodes]))
    u_true, _ = newton_solve(prob, cfg=TIGHT_NEWTON, lin_cfg=TIGHT_LINEAR)
    obs = np.sort(rng.choice(mesh.n_nodes, 100, replace=False))
    obs_vals = u_true[obs]
    obj = ReducedObjective(
        prob,
        objective=lambda U, t: poisson_objective(U, obs, obs_vals),
        dj_du=lambda U, t: poisson_objective_gradient(U, obs, obs_vals),
        newton_cfg=TIGHT_NEWTON,
        lin_cfg=TIGHT_LINEAR,
    )
    dtheta = np.zeros(mesh.n_nodes)
    picked = rng.choice(mesh.n_nodes, 5, replace=False)
    dtheta[picked] = 5.0 * rng.standard_normal(5)
    rep = taylor_test(
        obj.value, obj.gradient, np.zeros(mesh.n_nodes), dtheta, [1e-1, 1e-2, 1e-3, 1e-4]
    )
    elapsed = time.perf_counter() - t0
    ok = 0.9 <= rep.fitted_zeroth <= 1.1 and 1.9 <= rep.fitted_first <= 2.1 and elapsed < 60
    report(
        1,
        ok,
        f"taylor orders zeroth={rep.fitted_zeroth:.4f} (band [0.9,1.1]), "
        f"first={rep.fitted_first:.4f} (band [1.9,2.1]), {elapsed:.1f}s (< 60 s)",
    )


@pytest.mark.slow
def test_criterion_2_observation_count_monotonicity():
    """More observations give strictly lower L2 error; 2500-point error < 5%."""
    t0 = time.perf_counter()
    mesh, prob250 = poisson_inference_problem((50, 50, 10), (1.0, 1.0, 0.2))
    assert mesh.n_nodes == 28611
    res250 = run_inference(prob250, bimodal_source, n_obs=250, seed=0, max_iters=150)
    _, prob2500 = poisson_inference_problem((50, 50, 10), (1.0, 1.0, 0.2))
    res2500 = run_inference(prob2500, bimodal_source, n_obs=2500, seed=0, max_iters=100)
    elapsed = time.perf_counter() - t0
    ok = (
        res2500.relative_l2_error < res250.relative_l2_error
        and res2500.relative_l2_error < 0.05
        and elapsed < 1800
    )
    report(
        2,
        ok,
        f"L2 error 250 obs = {res250.relative_l2_error:.4f}, 2500 obs = "
        f"{res2500.relative_l2_error:.4f} (< 0.05 and smaller), {elapsed:.0f}s (< 1800 s)",
    )


def test_criterion_3_ad_vs_fd_jacobian():
    """Assembled tangent equals FD of the residual for all materials."""
    t0 = time.perf_counter()
    mesh = generate_box_mesh(3, 3, 3, 1, 1, 1)
    rng = np.random.default_rng(1)
    A = 1e-3 * np.array([[1.0, 0.4, 0.2], [0.0, -0.5, 0.3], [0.1, 0.0, 0.7]])
    worst = 0.0
    for cls in (LinearElasticityProblem, NeoHookeanProblem, J2PlasticityProblem):
        prob = cls(mesh, ALUMINUM, affine_dirichlet(A, onbox_locator(1, 1, 1)))
        U = 2e-3 * rng.standard_normal(prob.n_dofs)
        K = assemble_jacobian(prob, U).todense()
        h = 1e-6
        K_fd = np.zeros_like(K)
        for j in range(prob.n_dofs):
            e = np.zeros(prob.n_dofs)
            e[j] = h
            K_fd[:, j] = (
                assemble_residual(prob, U + e) - assemble_residual(prob, U - e)
            ) / (2 * h)
        num = np.linalg.norm(K - K_fd)
        den = np.linalg.norm(K_fd)
        worst = max(worst, num / den)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 60
    report(3, ok, f"max Frobenius rel err {worst:.2e} (< 1e-6), {elapsed:.1f}s (< 60 s)")


def test_criterion_4_adjoint_gradient_exactness():
    """Adjoint total derivative matches full-re-solve central FD."""
    rng = np.random.default_rng(2)
    worst = 0.0

    mesh, prob = poisson_inference_problem((4, 4, 2), (1.0, 1.0, 0.5))
    obs = np.sort(rng.choice(mesh.n_nodes, 20, replace=False))
    obs_vals = 0.01 * rng.standard_normal(20)
    obj = ReducedObjective(
        prob,
        objective=lambda U, t: poisson_objective(U, obs, obs_vals),
        dj_du=lambda U, t: poisson_objective_gradient(U, obs, obs_vals),
        newton_cfg=TIGHT_NEWTON,
        lin_cfg=TIGHT_LINEAR,
    )
    theta = rng.standard_normal(mesh.n_nodes)
    _, g = obj.value_and_gradient(theta)
    for _ in range(10):
        d = rng.standard_normal(theta.size)
        h = 1e-6
        fd = (obj.value(theta + h * d) - obj.value(theta - h * d)) / (2 * h)
        worst = max(worst, abs(fd - g @ d) / abs(fd))

    mesh2 = generate_box_mesh(4, 4, 1, 4.0, 4.0, 1.0)
    right = boundary_facets(mesh2, BoundaryLocator.plane(0, 4.0))
    simp = SimpElasticityProblem(
        mesh2,
        LinearElastic(ALUMINUM),
        zero_dirichlet(BoundaryLocator.plane(0, 0.0)),
        [NeumannSpec(right, lambda p: np.broadcast_to([0.0, 0.0, -1.0], np.asarray(p).shape[:-1] + (3,)))],
    )
    obj2 = ReducedObjective(
        simp,
        objective=lambda U, t: compliance(simp, U),
        dj_du=lambda U, t: compliance_load_vector(simp),
        newton_cfg=TIGHT_NEWTON,
        lin_cfg=TIGHT_LINEAR,
    )
    theta2 = rng.uniform(0.3, 0.9, simp.n_design)
    _, g2 = obj2.value_and_gradient(theta2)
    for _ in range(10):
        d = rng.standard_normal(theta2.size)
        h = 1e-6
        fd = (obj2.value(theta2 + h * d) - obj2.value(theta2 - h * d)) / (2 * h)
        worst = max(worst, abs(fd - g2 @ d) / abs(fd))

    report(4, worst < 1e-5, f"max adjoint-vs-FD rel err {worst:.2e} (< 1e-5, 10 directions each)")


def test_criterion_5_patch_test():
    """Affine Dirichlet data reproduced at interior nodes to 1e-10."""
    A = 1e-3 * np.array([[1.0, 0.4, 0.2], [0.0, -0.5, 0.3], [0.1, 0.0, 0.7]])
    worst = 0.0
    for dims in ((3, 3, 3), (4, 2, 2)):
        mesh = generate_box_mesh(*dims, 1, 1, 1)
        exact = (mesh.nodes @ A.T).ravel()
        for cls in (LinearElasticityProblem, NeoHookeanProblem, J2PlasticityProblem):
            prob = cls(mesh, ALUMINUM, affine_dirichlet(A, onbox_locator(1, 1, 1)))
            U, _ = newton_solve(prob, cfg=NewtonConfig(rel_tol=1e-11, abs_tol=1e-11))
            worst = max(worst, np.abs(U - exact).max())
    report(5, worst < 1e-10, f"max interior deviation {worst:.2e} (< 1e-10)")


def test_criterion_6_newton_quadratic_convergence():
    """Final Newton contraction exponent >= 1.5 at 2% stretch."""
    mesh = generate_box_mesh(2, 2, 2, 1, 1, 1)
    specs = zero_dirichlet(BoundaryLocator.plane(2, 0.0)) + [
        DirichletSpec(BoundaryLocator.plane(2, 1.0), 2, lambda p: 0.02)
    ]
    prob = NeoHookeanProblem(mesh, ALUMINUM, specs)
    _, rep = newton_solve(prob, cfg=NewtonConfig(rel_tol=1e-9, abs_tol=1e-10))
    norms = np.array(rep.residual_norms)
    below = norms[(norms < 1.0) & (norms > 1e-13)]
    expo = np.log(below[-1]) / np.log(below[-2])
    report(6, expo >= 1.5, f"contraction exponent {expo:.2f} (>= 1.5), history {norms.tolist()}")


def scalar_return_map_history(amplitudes, strain_dir, c):
    dev0 = strain_dir - np.trace(strain_dir) / 3.0 * np.eye(3)
    dev_mag = np.sqrt(1.5 * (dev0 * dev0).sum())
    c_dev = 0.0
    press = 0.0
    a_prev = 0.0
    out = []
    for a in amplitudes:
        da = a - a_prev
        c_trial = c_dev + 2.0 * c.mu * da
        s_eff = abs(c_trial) * dev_mag
        c_dev = c_trial if s_eff <= c.sigma_yield else c_trial * c.sigma_yield / s_eff
        press += (c.lam + 2.0 * c.mu / 3.0) * np.trace(strain_dir) * da
        a_prev = a
        out.append(c_dev * dev0 + press * np.eye(3))
    return out


def test_criterion_7_plasticity_hysteresis():
    """Load beyond yield then unload; stress tracks the scalar oracle."""
    mesh = generate_box_mesh(1, 1, 1, 1, 1, 1)
    E0 = np.diag([0.0, 0.0, 0.012])
    prob = J2PlasticityProblem(
        mesh, ALUMINUM, affine_dirichlet(E0, BoundaryLocator.everywhere())
    )
    sched = LoadSchedule.ramp_and_back(10)
    hist = incremental_solve(prob, sched)
    oracle = scalar_return_map_history(sched.factors, E0, ALUMINUM)
    worst = max(
        np.abs(rec.avg_stress - sig).max() for rec, sig in zip(hist.steps, oracle)
    )
    residual_stress = abs(hist.steps[-1].avg_stress[2, 2])
    ok = worst < 1e-10 * ALUMINUM.sigma_yield and residual_stress > 1.0
    report(
        7,
        ok,
        f"max oracle deviation {worst:.2e} (<= 1e-10 rel), residual stress "
        f"{residual_stress:.1f} MPa (nonzero)",
    )


def test_criterion_8_topology_optimization():
    """Volume feasibility, >= 20% compliance gain, monotone envelope."""
    t0 = time.perf_counter()
    mesh = generate_box_mesh(8, 4, 1, 8.0, 4.0, 1.0)
    right = boundary_facets(mesh, BoundaryLocator.plane(0, 8.0))
    prob = SimpElasticityProblem(
        mesh,
        NeoHookean(ALUMINUM),
        zero_dirichlet(BoundaryLocator.plane(0, 0.0)),
        [NeumannSpec(right, lambda p: np.broadcast_to([0.0, 0.0, -1.0], np.asarray(p).shape[:-1] + (3,)))],
        penalty=3.0,
    )
    res = run_topopt(prob, volume_fraction=0.5, n_steps=30)
    elapsed = time.perf_counter() - t0
    vols = res.volume_history + [res.final_volume]
    vol_ok = all(v <= 0.5 + 1e-3 for v in vols)
    gain = 1.0 - res.final_compliance / res.compliance_history[0]
    envelope = np.minimum.accumulate(res.compliance_history + [res.final_compliance])
    env_ok = bool(np.all(np.diff(envelope) <= 0))
    ok = vol_ok and gain >= 0.2 and env_ok and elapsed < 300
    report(
        8,
        ok,
        f"volumes <= 0.5+1e-3: {vol_ok}, compliance gain {gain:.1%} (>= 20%), "
        f"envelope non-increasing: {env_ok}, {elapsed:.0f}s (< 300 s)",
    )


@pytest.mark.slow
def test_criterion_9_solver_scale_and_thread_determinism():
    """>= 100k DOF elastic solve under budget; threads change nothing."""
    t0 = time.perf_counter()
    mesh = generate_box_mesh(32, 32, 32, 1, 1, 1)
    specs = zero_dirichlet(BoundaryLocator.plane(2, 0.0)) + [
        DirichletSpec(BoundaryLocator.plane(2, 1.0), 2, lambda p: 0.01)
    ]
    prob = LinearElasticityProblem(mesh, ALUMINUM, specs)
    n = prob.n_dofs
    assert n >= 100_000
    set_num_threads(1)
    U0 = np.zeros(n)
    R = assemble_residual(prob, U0)
    K = assemble_jacobian(prob, U0)
    dU = bicgstab_jacobi(K, -R, cfg=LinearSolveConfig(rel_tol=1e-10, abs_tol=1e-14))
    single_time = time.perf_counter() - t0
    rel = np.linalg.norm(K @ dU + R) / np.linalg.norm(R)

    if HAS_NUMBA:
        set_num_threads(2)
        R2 = assemble_residual(prob, U0)
        K2 = assemble_jacobian(prob, U0)
        dU2 = bicgstab_jacobi(K2, -R2, cfg=LinearSolveConfig(rel_tol=1e-10, abs_tol=1e-14))
        set_num_threads(1)
        identical = (
            np.array_equal(R, R2) and np.array_equal(K.data, K2.data) and np.array_equal(dU, dU2)
        )
    else:
        identical = True  # numpy fallback has no threading
    ok = rel <= 1e-10 and single_time < 300 and identical
    report(
        9,
        ok,
        f"{n} DOF, rel residual {rel:.2e} (<= 1e-10), single-thread {single_time:.0f}s "
        f"(< 300 s), multi-thread bit-identical: {identical}",
    )


def test_criterion_10_elastic_path_independence():
    """Force-displacement endpoint identical between 2 and 10 steps."""
    mesh = generate_box_mesh(2, 2, 2, 1, 1, 1)
    top = BoundaryLocator.plane(2, 1.0)
    specs = zero_dirichlet(BoundaryLocator.plane(2, 0.0)) + [
        DirichletSpec(top, 2, lambda p: 0.05)
    ]
    pa = LinearElasticityProblem(mesh, ALUMINUM, specs)
    ha = incremental_solve(pa, LoadSchedule.ramp(2), reaction_locator=top)
    pb = LinearElasticityProblem(mesh, ALUMINUM, specs)
    hb = incremental_solve(pb, LoadSchedule.ramp(10), reaction_locator=top)
    du = np.abs(ha.steps[-1].U - hb.steps[-1].U).max()
    dr = abs(ha.steps[-1].reaction - hb.steps[-1].reaction) / abs(hb.steps[-1].reaction)
    ok = du < 1e-8 and dr < 1e-8
    report(10, ok, f"endpoint dU {du:.2e}, reaction rel diff {dr:.2e} (both < 1e-8)")

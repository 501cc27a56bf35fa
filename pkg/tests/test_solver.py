import numpy as np
import pytest

from jointrecon.nufft import nufft_forward, plan_nufft
from jointrecon.regularization import project_dual
from jointrecon.simulation import gen_coil_maps
from jointrecon.solver import (
    DivergenceError,
    DualState,
    ReconProblem,
    adjoint_model,
    data_term,
    forward_model,
    gridding_recon,
    objective_value,
    pdhg_step,
    prox_data,
    reconstruct,
)
from jointrecon.trajectory import compute_density_weights, gen_cartesian, gen_radial

from oracles import pdhg_denoise


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def radial_problem(n=16, C=2, E=2, T=3, spokes=12, seed=0, **kw):
    rng = np.random.default_rng(seed)
    plan = plan_nufft((n, n), norm="ortho")
    trajs = [gen_radial(n, spokes, n, "golden") for _ in range(T)]
    weights = [compute_density_weights(t, 10, plan=plan) for t in trajs]
    maps = gen_coil_maps(C, n)
    data = [crandn(rng, C, E, t.num_samples) for t in trajs]
    kw.setdefault("lam", 0.1)
    return ReconProblem(data, trajs, weights, maps, plan, **kw)


def denoise_problem(E=2, T=4, n=8, seed=0, **kw):
    rng = np.random.default_rng(seed)
    y = crandn(rng, E, T, n, n)
    y[:, 2:] += 2.0
    data = [y[:, t].reshape(1, E, -1) for t in range(T)]
    kw.setdefault("lam", 0.3)
    return ReconProblem(data, [None] * T, None, np.ones((1, n, n)), None, **kw), y


def test_forward_zero():
    p = radial_problem()
    assert not np.any(forward_model(p, np.zeros((3, 16, 16)), 0, 1))


def test_forward_with_identity_maps_and_weights_is_nufft():
    rng = np.random.default_rng(1)
    n = 16
    plan = plan_nufft((n, n), norm="ortho")
    traj = gen_radial(n, 8, n)
    p = ReconProblem([np.zeros((1, 1, traj.num_samples))], [traj], None, np.ones((1, n, n)), plan, lam=1.0)
    u = crandn(rng, 1, n, n)
    np.testing.assert_array_equal(forward_model(p, u, 0, 0), nufft_forward(plan, u[0], traj))


def test_model_adjoint_consistency():
    rng = np.random.default_rng(2)
    p = radial_problem()
    for j in range(2):
        for t in range(3):
            u = crandn(rng, 3, 16, 16)
            z = crandn(rng, p.trajs[t].num_samples)
            lhs = np.vdot(z, forward_model(p, u, j, t))
            rhs = np.vdot(adjoint_model(p, z, j, t), u[t])
            assert abs(lhs - rhs) / (np.linalg.norm(u[t]) * np.linalg.norm(z)) < 1e-5


def test_model_index_errors():
    p = radial_problem()
    with pytest.raises(IndexError):
        forward_model(p, np.zeros((3, 16, 16)), 5, 0)


def test_prox_data():
    z = np.array([1 + 1j, -2.0, 0.5j])
    np.testing.assert_array_equal(prox_data(z, 0.0), z)
    assert prox_data(np.array([1 + 1j]), 0.125)[0] == pytest.approx((8 / 9) * (1 + 1j), abs=1e-15)
    a, b = 2 - 1j, 0.5j
    w = np.array([3.0, 1j, -1.0])
    np.testing.assert_allclose(prox_data(a * z + b * w, 0.3), a * prox_data(z, 0.3) + b * prox_data(w, 0.3))


def test_problem_validation():
    with pytest.raises(ValueError):
        radial_problem(coupling="l3")
    with pytest.raises(ValueError):
        radial_problem(lam=0.0)
    with pytest.raises(ValueError):
        radial_problem(tv_dim="cols")


def test_zero_data_fixed_point_with_large_lambda():
    p, _ = denoise_problem(lam=1e8)
    p = ReconProblem([np.zeros_like(d) for d in p.data], p.trajs, None, p.coil_maps, None, lam=1e8)
    u = np.zeros(p.image_shape, complex)
    duals = DualState.zeros(p)
    u2, ub2, d2, _ = pdhg_step(p, u, u.copy(), duals)
    assert np.max(np.abs(d2.xi)) <= 1e-8
    assert not np.any(u2)


def test_zero_data_gives_zero_reconstruction():
    p = radial_problem(n_iters=5)
    p = ReconProblem([np.zeros_like(d) for d in p.data], p.trajs, p.weights, p.coil_maps, p.plan, lam=0.1, n_iters=5)
    u, _ = reconstruct(p)
    assert not np.any(u)


def test_dual_stays_in_ball_every_step():
    p = radial_problem(lam=0.05, coupling="l2")
    u = np.zeros(p.image_shape, complex)
    u_bar = u.copy()
    duals = DualState.zeros(p)
    for i in range(15):
        u, u_bar, duals, _ = pdhg_step(p, u, u_bar, duals, iteration=i + 1)
        assert np.array_equal(project_dual(duals.xi, 1 / p.lam, p.coupling), duals.xi)


def test_identical_echoes_stay_identical():
    p = radial_problem(E=1, n_iters=40)
    data = [np.repeat(d, 3, axis=1) for d in p.data]
    p3 = ReconProblem(data, p.trajs, p.weights, p.coil_maps, p.plan, lam=0.1, coupling="l2", n_iters=40)
    u, _ = reconstruct(p3)
    assert np.max(np.abs(u - u[:1])) <= 1e-10 * np.max(np.abs(u))


def test_fully_sampled_tiny_lambda_inverts_dft():
    n = 16
    rng = np.random.default_rng(4)
    plan = plan_nufft((n, n), norm="ortho")
    traj = gen_cartesian(n)
    x = crandn(rng, n, n)
    y = nufft_forward(plan, x, traj)
    p = ReconProblem([y[None, None]], [traj], None, np.ones((1, n, n)), plan, lam=1e-8, n_iters=200)
    u, _ = reconstruct(p)
    assert np.linalg.norm(u[0, 0] - x) / np.linalg.norm(x) < 1e-3


def test_l1_echoes_are_bitwise_independent():
    p = radial_problem(E=3, n_iters=15, coupling="l1")
    u, _ = reconstruct(p)
    for k in range(3):
        single = ReconProblem(
            [d[:, k:k + 1] for d in p.data], p.trajs, p.weights, p.coil_maps, p.plan,
            lam=p.lam, coupling="l1", n_iters=15,
        )
        uk, _ = reconstruct(single)
        assert uk[0].tobytes() == u[k].tobytes()


def test_worker_count_does_not_change_result():
    outs = []
    for workers in (1, 2, 3):
        u, trace = reconstruct(radial_problem(C=3, n_iters=8, workers=workers))
        outs.append((u.tobytes(), trace.objective))
    assert outs[0] == outs[1] == outs[2]


def test_objective_of_zero_image():
    p = radial_problem()
    u0 = np.zeros(p.image_shape, complex)
    expect = 0.5 * sum(np.sum(np.abs(d * w) ** 2) for d, w in zip(p.data, p.sqrt_w))
    assert objective_value(p, u0) == pytest.approx(expect, rel=1e-12)
    zero = ReconProblem([np.zeros_like(d) for d in p.data], p.trajs, p.weights, p.coil_maps, p.plan, lam=0.1)
    assert objective_value(zero, u0) == 0


def test_trace_matches_objective_value():
    p = radial_problem(n_iters=6)
    u, trace = reconstruct(p)
    assert len(trace) == 6
    assert trace.objective[-1] == pytest.approx(objective_value(p, u), rel=1e-10)
    assert trace.data_term[-1] == pytest.approx(data_term(p, u), rel=1e-10)


def test_denoising_matches_independent_oracle():
    p, y = denoise_problem(E=2, T=4, n=6, lam=0.3, n_iters=600, coupling="l2")
    u, _ = reconstruct(p)
    ref = pdhg_denoise(y.reshape(2, 4, -1), 0.3, "l2", 6000).reshape(u.shape)
    assert np.linalg.norm(u - ref) / np.linalg.norm(ref) < 1e-3


def test_denoising_primal_change_vanishes():
    p, _ = denoise_problem(n_iters=2000)
    u, trace = reconstruct(p)
    assert trace.primal_change[-1] < 1e-6 * np.linalg.norm(u)


def test_warm_start_starts_from_gridding():
    p = radial_problem(n_iters=1, warm_start=True, T=1)
    g = gridding_recon(p)
    seen = []
    u_warm, _ = reconstruct(p, callback=lambda i, u, rec: seen.append(i))
    assert seen == [1]
    u_cold, _ = reconstruct(radial_problem(n_iters=1, T=1))
    assert np.linalg.norm(u_warm - g) < np.linalg.norm(u_cold - g)


def test_divergence_is_reported():
    p = radial_problem(n_iters=3)
    bad = [d.copy() for d in p.data]
    bad[0][0, 0, 0] = np.nan
    q = ReconProblem(bad, p.trajs, p.weights, p.coil_maps, p.plan, lam=0.1, n_iters=3)
    with pytest.raises(DivergenceError):
        reconstruct(q)


def test_rows_axis_regularizes_image_rows():
    n = 8
    rng = np.random.default_rng(5)
    y = crandn(rng, 3, 1, n, n)
    p = ReconProblem([y[:, 0].reshape(1, 3, -1)], [None], None, np.ones((1, n, n)), None,
                     lam=0.2, tv_dim="rows", n_iters=600)
    u, _ = reconstruct(p)
    # rows play the role of the motion axis: (E, rows, cols)
    ref = pdhg_denoise(y[:, 0], 0.2, "l2", 6000)
    assert np.linalg.norm(u[:, 0] - ref) / np.linalg.norm(ref) < 1e-3

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointrecon.nufft import apply_sqrt_weights, nufft_adjoint, nufft_forward, plan_nufft
from jointrecon.trajectory import DensityWeights, Trajectory, gen_cartesian, gen_radial


def dft_oracle(img, coords):
    nx, ny = img.shape
    ix = np.arange(nx) - nx // 2
    iy = np.arange(ny) - ny // 2
    ex = np.exp(-2j * np.pi * coords[:, :1] * ix[None])
    ey = np.exp(-2j * np.pi * coords[:, 1:] * iy[None])
    return np.einsum("ma,mb,ab->m", ex, ey, img)


def random_traj(rng, m):
    return Trajectory(rng.uniform(-0.5, 0.5, (m, 2)), np.zeros(m, dtype=np.int64))


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_plan_grid_arithmetic():
    plan = plan_nufft((64, 64), 2.0, 4)
    assert plan.os_grid == (128, 128)
    c = plan.apodization[32, 32]
    assert np.isfinite(c) and c > 0


def test_plan_rejects_small_grid():
    with pytest.raises(ValueError):
        plan_nufft((4, 4))


def test_identical_plans_identical_outputs():
    rng = np.random.default_rng(1)
    img = crandn(rng, 24, 24)
    traj = random_traj(rng, 200)
    a = nufft_forward(plan_nufft((24, 24)), img, traj)
    b = nufft_forward(plan_nufft((24, 24)), img, traj)
    assert a.tobytes() == b.tobytes()


def test_centered_impulse_gives_constant_samples():
    n = 32
    img = np.zeros((n, n), complex)
    img[n // 2, n // 2] = 1
    y = nufft_forward(plan_nufft((n, n)), img, gen_radial(n, 16, n, "golden"))
    assert np.max(np.abs(y - 1)) < 1e-4


def test_zero_in_zero_out():
    n = 16
    plan = plan_nufft((n, n))
    traj = gen_radial(n, 4, n)
    assert not np.any(nufft_forward(plan, np.zeros((n, n)), traj))
    assert not np.any(nufft_adjoint(plan, np.zeros(traj.num_samples), traj))


def test_forward_matches_dft_oracle():
    rng = np.random.default_rng(0)
    img = crandn(rng, 32, 32)
    traj = random_traj(rng, 500)
    y = nufft_forward(plan_nufft((32, 32)), img, traj)
    ref = dft_oracle(img, traj.coords)
    assert np.linalg.norm(y - ref) / np.linalg.norm(ref) < 1e-4


@pytest.mark.parametrize("n", [32, 64])
def test_cartesian_coincident_matches_dft(n):
    rng = np.random.default_rng(n)
    img = crandn(rng, n, n)
    traj = gen_cartesian(n)
    y = nufft_forward(plan_nufft((n, n)), img, traj)
    ref = dft_oracle(img, traj.coords)
    assert np.linalg.norm(y - ref) / np.linalg.norm(ref) < 1e-6


def test_rectangular_grid():
    rng = np.random.default_rng(3)
    img = crandn(rng, 16, 24)
    traj = random_traj(rng, 100)
    y = nufft_forward(plan_nufft((16, 24)), img, traj)
    ref = dft_oracle(img, traj.coords)
    assert np.linalg.norm(y - ref) / np.linalg.norm(ref) < 1e-4


def test_dc_sample_adjoint_is_constant():
    n = 32
    traj = Trajectory(np.zeros((1, 2)), np.zeros(1, dtype=np.int64))
    img = nufft_adjoint(plan_nufft((n, n)), np.ones(1), traj)
    np.testing.assert_allclose(img, 1.0, atol=1e-3)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 300), dup=st.booleans(), ortho=st.booleans())
def test_adjoint_identity(seed, m, dup, ortho):
    rng = np.random.default_rng(seed)
    n = 16
    plan = plan_nufft((n, n), norm="ortho" if ortho else "none")
    coords = rng.uniform(-0.5, 0.5, (m, 2))
    if dup:
        coords = np.concatenate([coords, coords[: max(1, m // 2)]])
    traj = Trajectory(coords, np.zeros(len(coords), dtype=np.int64))
    x = crandn(rng, n, n)
    y = crandn(rng, traj.num_samples)
    lhs = np.vdot(y, nufft_forward(plan, x, traj))
    rhs = np.vdot(nufft_adjoint(plan, y, traj), x)
    assert abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y)) < 1e-5


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.complex_numbers(max_magnitude=10, allow_nan=False),
       b=st.complex_numbers(max_magnitude=10, allow_nan=False))
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    n = 16
    plan = plan_nufft((n, n))
    traj = random_traj(rng, 64)
    x, z = crandn(rng, n, n), crandn(rng, n, n)
    lhs = nufft_forward(plan, a * x + b * z, traj)
    rhs = a * nufft_forward(plan, x, traj) + b * nufft_forward(plan, z, traj)
    scale = (abs(a) * np.linalg.norm(x) + abs(b) * np.linalg.norm(z)) * n + 1e-300
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * scale


def test_ortho_cartesian_is_unitary():
    n = 16
    rng = np.random.default_rng(5)
    plan = plan_nufft((n, n), norm="ortho")
    traj = gen_cartesian(n)
    x = crandn(rng, n, n)
    back = nufft_adjoint(plan, nufft_forward(plan, x, traj), traj)
    assert np.linalg.norm(back - x) / np.linalg.norm(x) < 1e-5


def test_batched_matches_single():
    rng = np.random.default_rng(2)
    n = 16
    plan = plan_nufft((n, n))
    traj = random_traj(rng, 50)
    x = crandn(rng, 3, 2, n, n)
    y = nufft_forward(plan, x, traj)
    assert y.shape == (3, 2, 50)
    np.testing.assert_array_equal(y[1, 0], nufft_forward(plan, x[1, 0], traj))
    a = nufft_adjoint(plan, y, traj)
    np.testing.assert_array_equal(a[2, 1], nufft_adjoint(plan, y[2, 1], traj))


def test_shape_and_range_errors():
    plan = plan_nufft((16, 16))
    traj = gen_radial(16, 2, 16)
    with pytest.raises(ValueError):
        nufft_forward(plan, np.zeros((8, 8)), traj)
    with pytest.raises(ValueError):
        nufft_adjoint(plan, np.zeros(traj.num_samples + 1), traj)


def test_sqrt_weights():
    s = np.array([1 + 1j, 2 - 1j, 3j])
    np.testing.assert_array_equal(apply_sqrt_weights(s, np.ones(3)), s)
    assert apply_sqrt_weights(np.array([1 + 1j]), DensityWeights(np.array([4.0])))[0] == 2 + 2j
    w = np.array([0.5, 2.0, 9.0])
    np.testing.assert_allclose(apply_sqrt_weights(apply_sqrt_weights(s, w), w), s * w, rtol=1e-15)
    with pytest.raises(ValueError):
        apply_sqrt_weights(s, np.ones(2))

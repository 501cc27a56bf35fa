import math

import numpy as np
import pytest

from jointrecon.nufft import plan_nufft
from jointrecon.trajectory import (
    GOLDEN_ANGLE_DEG,
    DensityWeights,
    NumericGuardError,
    Trajectory,
    compute_density_weights,
    density_residual,
    gen_cartesian,
    gen_radial,
    gen_vd_spiral,
    read_binary,
    read_csv,
    spokes_for_acceleration,
    write_binary,
    write_csv,
)


def test_single_horizontal_spoke():
    t = gen_radial(32, 1, 3, "uniform")
    assert t.num_samples == 3
    np.testing.assert_allclose(t.coords[:, 1], 0.0, atol=1e-15)
    np.testing.assert_allclose(t.coords[:2, 0], [-0.5, 0.0])
    assert t.coords[2, 0] == pytest.approx(0.5, abs=1e-12)
    assert t.coords[2, 0] < 0.5


@pytest.mark.parametrize("sps", [2, 3, 8, 33, 64])
@pytest.mark.parametrize("scheme", ["uniform", "golden"])
def test_every_spoke_passes_through_center(sps, scheme):
    t = gen_radial(64, 7, sps, scheme)
    r = np.hypot(*t.coords.T).reshape(7, sps)
    assert np.all(r.min(axis=1) < 1 / (2 * sps))


def test_spoke_count_for_acceleration():
    assert spokes_for_acceleration(256, 6) == 68
    assert spokes_for_acceleration(256, 1) == math.ceil(math.pi / 2 * 256)


def test_golden_angle_constant():
    assert GOLDEN_ANGLE_DEG == pytest.approx(111.24611797, abs=1e-8)
    t = gen_radial(32, 3, 5, "golden")
    ang = np.arctan2(t.coords[4::5, 1], t.coords[4::5, 0])
    np.testing.assert_allclose(np.rad2deg(ang[1]) % 180, GOLDEN_ANGLE_DEG, atol=1e-9)


def test_radial_rejects_bad_arguments():
    with pytest.raises(ValueError):
        gen_radial(32, 0, 8)
    with pytest.raises(ValueError):
        gen_radial(32, 4, 8, "spiral")


def test_spiral_starts_at_center_and_stays_inside():
    t = gen_vd_spiral(128, 1, 25.6, 2.0, 1.5)
    np.testing.assert_allclose(t.coords[0], [0.0, 0.0], atol=1e-15)
    assert np.all(np.hypot(*t.coords.T) < 0.5)


def test_spiral_spacing_respects_nyquist_cap():
    # 25 cm FOV at 1 mm with R=6, as in the RGB toy setup
    n = 250
    t = gen_vd_spiral(n, 16, 25.0, 1.0, 1.5, acceleration=6)
    for i in range(16):
        c = t.coords[t.readout_index == i]
        step = np.hypot(*np.diff(c, axis=0).T)
        assert step.max() <= (1.0 / n) * 1.01


def test_spiral_rejects_bad_exponent():
    with pytest.raises(ValueError):
        gen_vd_spiral(64, 4, 24, 4, 0.5)


def test_trajectories_are_reproducible():
    a = gen_vd_spiral(96, 8, 24, 2.5, 1.5, acceleration=2)
    b = gen_vd_spiral(96, 8, 24, 2.5, 1.5, acceleration=2)
    assert a.coords.tobytes() == b.coords.tobytes()
    a = gen_radial(96, 20, 96, "golden")
    b = gen_radial(96, 20, 96, "golden")
    assert a.coords.tobytes() == b.coords.tobytes()


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.array([[0.5, 0.0]]), np.array([0]))
    with pytest.raises(ValueError):
        Trajectory(np.zeros((2, 2)), np.array([1, 0]))
    with pytest.raises(ValueError):
        Trajectory(np.zeros((0, 2)), np.zeros(0))
    t = gen_radial(16, 2, 4)
    with pytest.raises(ValueError):
        t.coords[0, 0] = 0.1


def test_density_weights_reject_negative():
    with pytest.raises(ValueError):
        DensityWeights(np.array([1.0, -1.0]))


def test_cartesian_weights_are_uniform():
    t = gen_cartesian(32)
    w = compute_density_weights(t, 20).w
    assert w.max() / w.min() < 1.01
    assert np.mean(w) == pytest.approx(1.0, rel=1e-2)


def test_radial_weights_follow_ramp():
    n = 64
    t = gen_radial(n, 100, n, "uniform")
    w = compute_density_weights(t, 20, plan=plan_nufft((n, n))).w
    r = np.hypot(*t.coords.T)
    sel = (r > 0.05) & (r < 0.45)
    assert np.corrcoef(w[sel], r[sel])[0, 1] > 0.99


def test_pipe_menon_fixed_point():
    n = 64
    plan = plan_nufft((n, n))
    t = gen_radial(n, 100, n, "golden")
    w = compute_density_weights(t, 20, plan=plan)
    assert np.max(np.abs(density_residual(t, w, plan) - 1.0)) < 0.05


def test_weight_sum_matches_covered_area():
    # the analytic ramp sums to the Nyquist disc area pi/4 N^2 (in grid cells)
    # for any number of samples per spoke
    n = 128
    plan = plan_nufft((n, n))
    area = np.pi / 4 * n * n
    for sps in (n, 2 * n):
        t = gen_radial(n, spokes_for_acceleration(n, 1), sps, "uniform")
        w = compute_density_weights(t, 20, plan=plan).w
        assert abs(w.sum() / area - 1) < 0.02


def test_radial_weights_rotation():
    n = 64
    plan = plan_nufft((n, n))
    t = gen_radial(n, 40, n, "uniform")
    w = compute_density_weights(t, 20, plan=plan).w
    # a quarter turn maps the lattice onto itself: weights are a permutation
    rot = Trajectory(np.clip(t.coords @ np.array([[0, 1], [-1, 0]]), -0.5, np.nextafter(0.5, 0)), t.readout_index)
    w90 = compute_density_weights(rot, 20, plan=plan).w
    np.testing.assert_allclose(np.sort(w90), np.sort(w), rtol=1e-5)
    # an arbitrary angle only changes interior weights through kernel anisotropy
    c, s = np.cos(0.3), np.sin(0.3)
    rot = Trajectory(t.coords @ np.array([[c, s], [-s, c]]), t.readout_index)
    w03 = compute_density_weights(rot, 20, plan=plan).w
    inner = np.hypot(*t.coords.T) < 0.45
    assert np.max(np.abs(w03 - w)[inner]) < 0.02 * w.max()


def test_density_guard_raises():
    t = gen_radial(32, 4, 32)
    with pytest.raises(NumericGuardError):
        compute_density_weights(t, 5, init=np.zeros(t.num_samples))


def test_csv_round_trip(tmp_path):
    t = gen_radial(32, 5, 16, "golden")
    p = write_csv(t, tmp_path / "t.csv")
    back = read_csv(p)
    assert back.coords.tobytes() == t.coords.tobytes()
    np.testing.assert_array_equal(back.readout_index, t.readout_index)


def test_binary_round_trip(tmp_path):
    t = gen_vd_spiral(64, 4, 24, 4, 1.5)
    p = write_binary(t, tmp_path / "t.bin")
    back = read_binary(p)
    assert back.coords.tobytes() == t.coords.tobytes()
    assert p.stat().st_size == 16 + 16 * t.num_samples


def test_binary_errors_name_offset(tmp_path):
    t = gen_radial(32, 2, 8)
    p = write_binary(t, tmp_path / "t.bin")
    data = p.read_bytes()
    p.write_bytes(data[:-5])
    with pytest.raises(ValueError, match="byte offset"):
        read_binary(p)
    p.write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(ValueError, match="byte 0"):
        read_binary(p)

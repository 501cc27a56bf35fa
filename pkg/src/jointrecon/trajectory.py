"""2D non-Cartesian sampling trajectories and density compensation.

Coordinates are normalized to cycles/voxel: the Nyquist edge of an ``N``-voxel
grid sits at +/-0.5, and every coordinate lies in [-0.5, 0.5).
"""

from __future__ import annotations

import csv
import functools
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Trajectory",
    "DensityWeights",
    "NumericGuardError",
    "GOLDEN_ANGLE_DEG",
    "gen_radial",
    "gen_vd_spiral",
    "gen_cartesian",
    "spokes_for_acceleration",
    "compute_density_weights",
    "write_csv",
    "read_csv",
    "write_binary",
    "read_binary",
]

GAMMA_HZ_PER_T = 42.577478518e6
# 180 deg / golden ratio ~ 111.246 deg.
GOLDEN_ANGLE_DEG = 180.0 * (math.sqrt(5.0) - 1.0) / 2.0

_BINARY_MAGIC = b"JRTRAJ01"
_EDGE = np.nextafter(0.5, 0.0)


class NumericGuardError(ArithmeticError):
    """Raised when an iteration would divide by (near) zero."""


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sample coordinates ``(M, 2)`` plus the readout each sample belongs to."""

    coords: np.ndarray
    readout_index: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError(f"coords must have shape (M, 2), got {coords.shape}")
        if coords.shape[0] == 0:
            raise ValueError("trajectory must contain at least one sample")
        if not np.all(np.isfinite(coords)):
            raise ValueError("trajectory coordinates must be finite")
        if np.any(coords < -0.5) or np.any(coords >= 0.5):
            raise ValueError("trajectory coordinates must lie in [-0.5, 0.5)")
        ridx = np.asarray(self.readout_index, dtype=np.int64)
        if ridx.shape != (coords.shape[0],):
            raise ValueError("readout_index must have one entry per sample")
        if np.any(np.diff(ridx) < 0):
            raise ValueError("readout_index must be nondecreasing")
        object.__setattr__(self, "coords", _readonly(coords))
        object.__setattr__(self, "readout_index", _readonly(ridx))

    dim = 2

    @property
    def num_samples(self) -> int:
        return self.coords.shape[0]

    @property
    def readouts(self) -> np.ndarray:
        """Distinct readout ids in order of appearance."""
        return np.unique(self.readout_index)

    def select_readouts(self, ids) -> "Trajectory":
        """Sub-trajectory made of the listed readouts, in the order given (ids ascending)."""
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.isin(self.readout_index, ids)
        return Trajectory(self.coords[mask], self.readout_index[mask])


@dataclass(frozen=True, eq=False)
class DensityWeights:
    """Nonnegative per-sample density compensation weights."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError("weights must be one-dimensional")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "w", _readonly(w))

    def __len__(self):
        return self.w.shape[0]


def spokes_for_acceleration(matrix_size: int, acceleration: float) -> int:
    """Number of radial spokes for undersampling factor ``acceleration``.

    Nyquist-sampled radial imaging needs ``(pi/2) * matrix_size`` spokes.
    """
    if acceleration <= 0:
        raise ValueError("acceleration must be positive")
    return int(math.ceil(math.pi / 2 * matrix_size / acceleration))


def _spoke_radii(samples_per_spoke):
    half = samples_per_spoke // 2
    r = (np.arange(samples_per_spoke) - half) / (2.0 * half)
    return np.minimum(r, _EDGE)


def gen_radial(matrix_size, num_spokes, samples_per_spoke, angle_scheme="uniform") -> Trajectory:
    """Radial spokes through the k-space center.

    Samples run from -0.5 to just under +0.5 with one sample exactly at the
    center. Spoke ``i`` has angle ``pi*i/num_spokes`` (uniform) or
    ``i * 111.246 deg mod 180 deg`` (golden).
    """
    if matrix_size < 8:
        raise ValueError(f"matrix_size must be >= 8, got {matrix_size}")
    if num_spokes < 1:
        raise ValueError(f"num_spokes must be >= 1, got {num_spokes}")
    if samples_per_spoke < 2:
        raise ValueError(f"samples_per_spoke must be >= 2, got {samples_per_spoke}")
    i = np.arange(num_spokes)
    if angle_scheme == "uniform":
        angles = np.pi * i / num_spokes
    elif angle_scheme == "golden":
        angles = np.deg2rad(np.mod(i * GOLDEN_ANGLE_DEG, 180.0))
    else:
        raise ValueError(f"unknown angle_scheme {angle_scheme!r}")
    r = _spoke_radii(samples_per_spoke)
    kx = np.cos(angles)[:, None] * r[None, :]
    ky = np.sin(angles)[:, None] * r[None, :]
    coords = np.stack([kx, ky], axis=-1).reshape(-1, 2)
    # cos/sin rounding can land a -0.5 endpoint a hair outside the range.
    coords = np.clip(coords, -0.5, _EDGE)
    ridx = np.repeat(i, samples_per_spoke)
    return Trajectory(coords, ridx)


def gen_cartesian(matrix_size) -> Trajectory:
    """Fully sampled Cartesian lattice, one readout per ``kx`` line."""
    if matrix_size < 8:
        raise ValueError(f"matrix_size must be >= 8, got {matrix_size}")
    k = (np.arange(matrix_size) - matrix_size // 2) / matrix_size
    kx, ky = np.meshgrid(k, k, indexing="ij")
    coords = np.stack([kx.ravel(), ky.ravel()], axis=-1)
    return Trajectory(coords, np.repeat(np.arange(matrix_size), matrix_size))


def gen_vd_spiral(
    matrix_size,
    num_interleaves,
    fov_cm,
    res_mm,
    density_exponent,
    acceleration=1.0,
    gmax_mT_m=80.0,
    slew_T_m_s=200.0,
    dwell_us=4.0,
) -> Trajectory:
    """Variable-density spiral with rotated interleaves.

    Each interleave follows ``r(s) = kmax * s**density_exponent`` and
    ``theta(s) = 2 pi * turns * s`` for ``s`` in [0, 1]. The number of turns
    gives an average radial gap of ``acceleration / matrix_size`` between
    neighboring interleaves. Samples are placed at uniform time steps of
    ``dwell_us`` along the curve; the speed is limited by the gradient
    amplitude, by the slew rate through the local curvature, and by a
    Nyquist cap of ``1/matrix_size`` on the spacing of consecutive samples.
    """
    if density_exponent < 1:
        raise ValueError(f"density_exponent must be >= 1, got {density_exponent}")
    if num_interleaves < 1:
        raise ValueError(f"num_interleaves must be >= 1, got {num_interleaves}")
    if matrix_size < 8:
        raise ValueError(f"matrix_size must be >= 8, got {matrix_size}")
    if fov_cm <= 0 or res_mm <= 0 or acceleration <= 0 or dwell_us <= 0:
        raise ValueError("fov_cm, res_mm, acceleration and dwell_us must be positive")

    voxel_m = fov_cm * 1e-2 / matrix_size
    kmax = min(0.5 * voxel_m / (res_mm * 1e-3), 0.5) * 0.999
    turns = kmax * matrix_size / (num_interleaves * acceleration)
    if turns <= 0:
        raise ValueError("spiral parameters yield no samples")

    # Physical limits in normalized units (cycles/voxel per second).
    vmax_grad = GAMMA_HZ_PER_T * gmax_mT_m * 1e-3 * voxel_m
    amax = GAMMA_HZ_PER_T * slew_T_m_s * voxel_m
    dt = dwell_us * 1e-6
    vmax = min(vmax_grad, 1.0 / (matrix_size * dt))

    n_fine = 20000
    s = np.linspace(0.0, 1.0, n_fine)
    r = kmax * s**density_exponent
    th = 2 * np.pi * turns * s
    x, y = r * np.cos(th), r * np.sin(th)
    dx, dy = np.gradient(x, s), np.gradient(y, s)
    ddx, ddy = np.gradient(dx, s), np.gradient(dy, s)
    speed_s = np.hypot(dx, dy)
    curv = np.abs(dx * ddy - dy * ddx) / np.maximum(speed_s, 1e-300) ** 3
    v = np.minimum(vmax, np.sqrt(amax / np.maximum(curv, 1e-12)))
    seg = np.hypot(np.diff(x), np.diff(y))
    t_fine = np.concatenate([[0.0], np.cumsum(seg / (0.5 * (v[1:] + v[:-1])))])
    n_samples = int(np.floor(t_fine[-1] / dt)) + 1
    if n_samples < 1:
        raise ValueError("spiral parameters yield no samples")
    t = np.arange(n_samples) * dt
    ss = np.interp(t, t_fine, s)
    rr = kmax * ss**density_exponent
    tt = 2 * np.pi * turns * ss

    coords, ridx = [], []
    for i in range(num_interleaves):
        phi = 2 * np.pi * i / num_interleaves
        coords.append(np.stack([rr * np.cos(tt + phi), rr * np.sin(tt + phi)], axis=-1))
        ridx.append(np.full(n_samples, i))
    coords = np.clip(np.concatenate(coords), -0.5, _EDGE)
    return Trajectory(coords, np.concatenate(ridx))


def compute_density_weights(traj: Trajectory, iterations=20, plan=None, init=None) -> DensityWeights:
    """Pipe-Menon iterative density compensation.

    Iterates ``w <- w / (G w)`` where ``G`` spreads the weights onto the
    oversampled grid with the NUFFT kernel and interpolates back onto the
    trajectory. ``G`` is scaled so a Cartesian-coincident trajectory gets
    unit weights, i.e. weights are in units of Cartesian k-space cells and
    the fully sampled adjoint-of-forward has unit response at DC.
    """
    from .nufft import interpolation_matrix

    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if plan is None:
        plan = default_density_plan(infer_matrix_size(traj))
    mat, mat_t = interpolation_matrix(plan, traj)
    w = np.ones(traj.num_samples) if init is None else np.array(init, dtype=np.float64)
    for _ in range(iterations):
        gw = (mat @ (mat_t @ w)) / plan.density_norm
        if not np.all(np.isfinite(gw)) or np.any(gw <= 1e-12 * max(np.max(np.abs(gw)), 1e-300)):
            raise NumericGuardError("density compensation iteration divided by ~0")
        w = w / gw
    return DensityWeights(w)


@functools.lru_cache(maxsize=16)
def default_density_plan(grid):
    from .nufft import plan_nufft

    return plan_nufft((grid, grid))


def infer_matrix_size(traj: Trajectory) -> int:
    """Even matrix size whose Nyquist spacing matches the median readout sample step."""
    c = traj.coords
    same = traj.readout_index[1:] == traj.readout_index[:-1]
    step = np.hypot(*(c[1:] - c[:-1]).T)[same]
    step = step[step > 0]
    if step.size == 0:
        return 64
    n = int(2 * round(0.5 / float(np.median(step))))
    return max(n, 8)


def density_residual(traj: Trajectory, weights: DensityWeights, plan=None) -> np.ndarray:
    """``G w`` for the same operator used by :func:`compute_density_weights`."""
    from .nufft import interpolation_matrix

    if plan is None:
        plan = default_density_plan(infer_matrix_size(traj))
    mat, mat_t = interpolation_matrix(plan, traj)
    return (mat @ (mat_t @ weights.w)) / plan.density_norm


# --- serialization -----------------------------------------------------------


def write_csv(traj: Trajectory, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["kx", "ky", "readout"])
        for (kx, ky), r in zip(traj.coords.tolist(), traj.readout_index.tolist()):
            wr.writerow([repr(kx), repr(ky), r])
    return path


def read_csv(path) -> Trajectory:
    path = Path(path)
    with path.open(newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["kx", "ky", "readout"]:
            raise ValueError(f"{path}: bad trajectory CSV header {header}")
        rows = list(rd)
    coords = np.array([[float(a), float(b)] for a, b, _ in rows], dtype=np.float64)
    ridx = np.array([int(c) for _, _, c in rows], dtype=np.int64)
    return Trajectory(coords.reshape(-1, 2), ridx)


def write_binary(traj: Trajectory, path):
    """Magic (8 bytes) + little-endian uint64 count, then float64 ``(kx, ky)`` pairs."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(struct.pack("<Q", traj.num_samples))
        fh.write(traj.coords.astype("<f8").tobytes())
    return path


def read_binary(path) -> Trajectory:
    """Inverse of :func:`write_binary`; readout ids are not stored and come back as zero."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:8] != _BINARY_MAGIC:
        raise ValueError(f"{path}: not a trajectory file (bad magic at byte 0)")
    (count,) = struct.unpack("<Q", raw[8:16])
    need = 16 + 16 * count
    if len(raw) != need:
        raise ValueError(f"{path}: expected {need} bytes for {count} samples, found {len(raw)} (byte offset {min(len(raw), need)})")
    coords = np.frombuffer(raw, dtype="<f8", offset=16).reshape(count, 2).astype(np.float64)
    return Trajectory(coords, np.zeros(count, dtype=np.int64))

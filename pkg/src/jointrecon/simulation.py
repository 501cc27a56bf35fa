"""Synthetic acquisitions: misaligned RGB toy, moving Gd-vial phantom, coils,
respiratory signals and amplitude binning of readouts into motion states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nufft import nufft_forward, plan_nufft
from .trajectory import Trajectory

__all__ = [
    "RgbPhantom",
    "make_rgb_phantom",
    "shift_channels",
    "Vial",
    "VialPhantom",
    "make_vial_phantom",
    "MotionModel",
    "RespSignal",
    "Acquisition",
    "KSpaceBundle",
    "simulate_multiecho_kspace",
    "synth_resp_signal",
    "bin_kspace",
    "gen_coil_maps",
]

GD_CONCENTRATIONS_MM = (25.0, 50.0, 75.0, 100.0, 125.0, 150.0, 175.0, 200.0)


# --- RGB toy -----------------------------------------------------------------


@dataclass(frozen=True)
class RgbPhantom:
    """Three real channels ``(3, n, n)``; rows (axis 1 of ``channels``) are vertical."""

    channels: np.ndarray
    shifts: tuple = (0, 0)

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim != 3 or ch.shape[0] != 3:
            raise ValueError("channels must have shape (3, n, n)")
        if any(int(s) != s for s in self.shifts):
            raise ValueError("channel shifts must be integers")
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "shifts", tuple(int(s) for s in self.shifts))

    @property
    def size(self):
        return self.channels.shape[1]


def make_rgb_phantom(n=128) -> RgbPhantom:
    """Block object whose top edge is the strongest vertical edge in every column.

    The upper part is bright, the lower part dimmer; channel intensities
    differ so the three channels are distinguishable.
    """
    ch = np.zeros((3, n, n))
    top, mid, bot = int(0.25 * n), int(0.5 * n), int(0.75 * n)
    left, right = int(0.25 * n), int(0.75 * n)
    levels = ((1.0, 0.45), (0.8, 0.35), (0.9, 0.4))
    for c, (upper, lower) in enumerate(levels):
        ch[c, top:mid, left:right] = upper
        ch[c, mid:bot, left:right] = lower
    return RgbPhantom(ch)


def shift_channels(img: RgbPhantom, g_shift, b_shift) -> RgbPhantom:
    """Circularly shift the G and B channels along the vertical axis."""
    n = img.size
    for s in (g_shift, b_shift):
        if abs(s) >= n / 4:
            raise ValueError(f"|shift| must be < grid/4 ({n / 4}), got {s}")
    ch = img.channels.copy()
    ch[1] = np.roll(ch[1], int(g_shift), axis=0)
    ch[2] = np.roll(ch[2], int(b_shift), axis=0)
    g0, b0 = img.shifts
    return RgbPhantom(ch, (g0 + int(g_shift), b0 + int(b_shift)))


# --- Gd vial phantom ---------------------------------------------------------


@dataclass(frozen=True)
class Vial:
    center: tuple  # voxels from grid center, (row, col)
    radius: float
    concentration_mM: float
    r2star: float  # 1/s
    proton_density: float = 1.0


@dataclass(frozen=True)
class VialPhantom:
    vials: tuple
    grid: int
    background: float = 0.0

    def __post_init__(self):
        half = self.grid / 2
        for v in self.vials:
            if v.concentration_mM <= 0:
                raise ValueError("vial concentrations must be positive")
            if max(abs(v.center[0]), abs(v.center[1])) + v.radius >= half:
                raise ValueError(f"vial at {v.center} does not fit in the FOV")

    def _coords(self):
        x = np.arange(self.grid) - self.grid // 2
        return np.meshgrid(x, x, indexing="ij")

    def vial_masks(self, radius_shrink=0.0):
        xx, yy = self._coords()
        return np.stack(
            [(xx - v.center[0]) ** 2 + (yy - v.center[1]) ** 2 <= (v.radius - radius_shrink) ** 2 for v in self.vials]
        )

    def maps(self):
        """Proton density and R2* (1/s) maps on the grid."""
        rho = np.full((self.grid, self.grid), float(self.background))
        r2 = np.zeros((self.grid, self.grid))
        for v, m in zip(self.vials, self.vial_masks()):
            rho[m] = v.proton_density
            r2[m] = v.r2star
        return rho, r2

    def echo_images(self, tes_ms):
        """``rho * exp(-r2star * TE)`` for each echo time, shape ``(E, n, n)``."""
        rho, r2 = self.maps()
        tes = np.asarray(tes_ms, dtype=np.float64) * 1e-3
        return rho[None] * np.exp(-r2[None] * tes[:, None, None])


def make_vial_phantom(
    grid=96,
    concentrations=GD_CONCENTRATIONS_MM,
    r0=10.0,
    r1=1.5,
    radius=None,
    ring_radius=None,
    proton_density=1.0,
) -> VialPhantom:
    """Vials on a ring; R2* follows the linear relaxivity model ``r0 + r1 * [Gd]``."""
    n = len(concentrations)
    radius = 0.09 * grid if radius is None else radius
    ring_radius = 0.3 * grid if ring_radius is None else ring_radius
    vials = []
    for i, c in enumerate(concentrations):
        a = 2 * np.pi * i / n
        center = (round(ring_radius * np.cos(a), 6), round(ring_radius * np.sin(a), 6))
        vials.append(Vial(center, float(radius), float(c), float(r0 + r1 * c), float(proton_density)))
    return VialPhantom(tuple(vials), int(grid))


# --- motion and respiration --------------------------------------------------


@dataclass(frozen=True)
class MotionModel:
    """Rigid translation of the object along image rows (axis 0)."""

    kind: str = "none"
    amplitude: float = 0.0  # voxels
    period_s: float = 4.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "periodic_translation"):
            raise ValueError(f"unknown motion kind {self.kind!r}")
        if self.amplitude < 0:
            raise ValueError("motion amplitude must be >= 0")
        if self.kind == "periodic_translation" and not self.period_s > 0:
            raise ValueError("motion period must be > 0")

    def displacement(self, times):
        times = np.asarray(times, dtype=np.float64)
        if self.kind == "none" or self.amplitude == 0:
            return np.zeros_like(times)
        return self.amplitude * np.sin(2 * np.pi * times / self.period_s + self.phase)


@dataclass(frozen=True)
class RespSignal:
    amplitude: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitude, dtype=np.float64)
        t = np.asarray(self.times, dtype=np.float64)
        if a.shape != t.shape or a.ndim != 1:
            raise ValueError("amplitude and times must be 1-D arrays of equal length")
        object.__setattr__(self, "amplitude", a)
        object.__setattr__(self, "times", t)

    def __len__(self):
        return self.amplitude.shape[0]


def synth_resp_signal(n_readouts, period_s=4.0, pattern="sinusoid", tr_s=0.05, amplitude=1.0) -> RespSignal:
    """Deterministic breathing waveform sampled at readout times ``r * tr_s``.

    ``deep`` breathing doubles the amplitude and slows the period by 1.5x.
    """
    times = np.arange(n_readouts) * tr_s
    if pattern == "sinusoid":
        a, p = amplitude, period_s
    elif pattern == "deep":
        a, p = 2.0 * amplitude, 1.5 * period_s
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return RespSignal(a * np.sin(2 * np.pi * times / p), times)


# --- acquisition ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Acquisition:
    """Continuously acquired samples ``(C, E, M)`` in readout order."""

    traj: Trajectory
    samples: np.ndarray
    readout_times: np.ndarray
    tes_ms: tuple
    grid: int
    seed: int


@dataclass(frozen=True, eq=False)
class KSpaceBundle:
    """Samples sorted into motion states, bin 0 = lowest respiratory amplitude."""

    trajs: tuple
    data: tuple  # per state (C, E, M_t)
    readouts: tuple  # per state, readout ids in acquisition order
    tes_ms: tuple
    grid: int
    seed: int = 0
    bin_amplitudes: tuple = field(default=())

    def __post_init__(self):
        tes = tuple(float(t) for t in self.tes_ms)
        if any(b <= a for a, b in zip(tes, tes[1:])):
            raise ValueError("echo times must be strictly increasing")
        object.__setattr__(self, "tes_ms", tes)
        if len(self.trajs) != len(self.data) or len(self.data) != len(self.readouts):
            raise ValueError("bundle needs one trajectory, data array and readout list per state")

    @property
    def num_coils(self):
        return self.data[0].shape[0]

    @property
    def num_echoes(self):
        return self.data[0].shape[1]

    @property
    def num_states(self):
        return len(self.data)


def gen_coil_maps(C, grid, width=0.6, phase_cycles=0.5) -> np.ndarray:
    """Smooth complex sensitivities normalized to ``sum_j |S_j|^2 = 1``.

    Coil ``j`` has a Gaussian magnitude lobe centered on a ring at the FOV
    edge, angle ``2 pi j / C``, with ``width`` (fraction of the grid) as the
    standard deviation, and a linear phase of ``phase_cycles`` cycles across
    the FOV along the lobe direction.
    """
    if C < 1:
        raise ValueError(f"C must be >= 1, got {C}")
    nx, ny = (grid, grid) if np.isscalar(grid) else tuple(grid)
    x = (np.arange(nx) - nx // 2) / nx
    y = (np.arange(ny) - ny // 2) / ny
    xx, yy = np.meshgrid(x, y, indexing="ij")
    if C == 1:
        return np.ones((1, nx, ny), dtype=np.complex128)
    maps = []
    for j in range(C):
        a = 2 * np.pi * j / C
        cx, cy = 0.5 * np.cos(a), 0.5 * np.sin(a)
        mag = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * width**2))
        ph = 2 * np.pi * phase_cycles * (xx * np.cos(a) + yy * np.sin(a))
        maps.append(mag * np.exp(1j * ph))
    maps = np.array(maps)
    return maps / np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))


def simulate_multiecho_kspace(
    phantom: VialPhantom,
    traj: Trajectory,
    coil_maps,
    tes_ms,
    motion: MotionModel = MotionModel(),
    noise_std=0.0,
    seed=0,
    tr_s=0.05,
    plan=None,
):
    """Sample a (possibly moving) multi-echo phantom along ``traj``.

    Readout ``r`` (the ``r``-th distinct readout id) is acquired at
    ``r * tr_s`` seconds with the object translated along rows by the motion
    model; translation is applied as a k-space linear phase, i.e. the coil
    array moves with the object. Noise is circular complex Gaussian with
    total standard deviation ``noise_std``, drawn from a per-readout stream
    seeded by ``(seed, r)``.

    Returns the :class:`Acquisition` and the :class:`RespSignal`
    (displacement per readout).
    """
    tes = np.asarray(tes_ms, dtype=np.float64)
    if tes.ndim != 1 or tes.size < 1 or np.any(np.diff(tes) <= 0):
        raise ValueError("echo times must be strictly increasing")
    if traj.num_samples == 0:
        raise ValueError("empty trajectory")
    coil_maps = np.asarray(coil_maps)
    n = phantom.grid
    if plan is None:
        plan = plan_nufft((n, n))
    imgs = phantom.echo_images(tes)  # (E, n, n)
    coil_imgs = coil_maps[:, None] * imgs[None]  # (C, E, n, n)
    samples = nufft_forward(plan, coil_imgs, traj)

    rids, inverse = np.unique(traj.readout_index, return_inverse=True)
    times = np.arange(rids.size) * tr_s
    disp = motion.displacement(times)
    if np.any(disp != 0):
        ramp = np.exp(-2j * np.pi * traj.coords[:, 0] * disp[inverse])
        samples = samples * ramp

    if noise_std > 0:
        noise = np.empty_like(samples)
        for r in range(rids.size):
            sel = inverse == r
            rng = np.random.default_rng([int(seed), int(r)])
            shape = samples.shape[:2] + (int(sel.sum()), 2)
            z = rng.standard_normal(shape) * (noise_std / np.sqrt(2))
            noise[..., sel] = z[..., 0] + 1j * z[..., 1]
        samples = samples + noise

    acq = Acquisition(traj, samples, times, tuple(float(t) for t in tes), n, int(seed))
    return acq, RespSignal(disp, times)


def bin_kspace(stream: Acquisition, resp: RespSignal, T: int) -> KSpaceBundle:
    """Equal-count amplitude binning of readouts into ``T`` motion states.

    Readouts are stably sorted by amplitude and cut into ``T`` groups of
    ``floor(M/T)``; the ``M mod T`` highest-amplitude readouts are dropped.
    Within a bin readouts keep acquisition order.
    """
    rids = stream.traj.readouts
    M = rids.size
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if len(resp) != M:
        raise ValueError(f"respiratory signal has {len(resp)} entries for {M} readouts")
    if T > M:
        raise ValueError(f"T={T} exceeds readout count {M}")
    per = M // T
    order = np.argsort(resp.amplitude, kind="stable")
    trajs, data, readouts, amps = [], [], [], []
    for b in range(T):
        pos = np.sort(order[b * per:(b + 1) * per])
        ids = rids[pos]
        mask = np.isin(stream.traj.readout_index, ids)
        trajs.append(Trajectory(stream.traj.coords[mask], stream.traj.readout_index[mask]))
        data.append(np.ascontiguousarray(stream.samples[..., mask]))
        readouts.append(ids)
        amps.append(float(np.mean(resp.amplitude[pos])))
    return KSpaceBundle(
        tuple(trajs), tuple(data), tuple(readouts), stream.tes_ms, stream.grid, stream.seed, tuple(amps)
    )

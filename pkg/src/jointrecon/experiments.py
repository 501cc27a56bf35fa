"""Desk-scale experiments: the misaligned RGB toy, the moving vial phantom,
and the generic bundle / R2* / trajectory commands built on them.

Every ``run_*`` function takes a validated :class:`ExperimentConfig` and an
:class:`ArtifactWriter`, writes its outputs and returns an in-memory result.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .io import (
    ArtifactWriter,
    export_image,
    export_rgb,
    load_bundle,
    load_coil_maps,
    read_raw,
    save_bundle,
    write_json,
)
from .nufft import nufft_forward, plan_nufft
from .quantify import (
    Roi,
    bland_altman,
    concentration_regression,
    fit_r2star,
    gradient_magnitude,
    roi_stats,
    rss_combine,
    write_rows_csv,
)
from .simulation import (
    KSpaceBundle,
    MotionModel,
    bin_kspace,
    gen_coil_maps,
    make_rgb_phantom,
    make_vial_phantom,
    shift_channels,
    simulate_multiecho_kspace,
)
from .solver import ReconProblem, gridding_recon, reconstruct
from .trajectory import (
    compute_density_weights,
    density_residual,
    gen_cartesian,
    gen_radial,
    gen_vd_spiral,
    spokes_for_acceleration,
    write_binary,
    write_csv,
)

log = logging.getLogger(__name__)

__all__ = [
    "LineProfile",
    "PhantomResult",
    "RgbResult",
    "build_trajectory",
    "motion_model",
    "problem_from_bundle",
    "edge_offset_metric",
    "line_profile",
    "run_synth_rgb",
    "run_phantom",
    "run_recon",
    "run_r2star",
    "run_traj",
]

R2STAR_WINDOW = (0.0, 400.0)  # 1/s, display window for R2* maps


def build_trajectory(cfg: ExperimentConfig, kind=None):
    kind = kind or cfg.trajectory
    n = cfg.grid
    if kind == "radial":
        spokes = cfg.spokes or spokes_for_acceleration(n, cfg.acceleration)
        return gen_radial(n, spokes, cfg.samples_per_spoke or n, cfg.angle_scheme)
    if kind == "spiral":
        return gen_vd_spiral(
            n, cfg.interleaves, cfg.fov_cm, cfg.res_mm, cfg.density_exponent, acceleration=cfg.acceleration
        )
    return gen_cartesian(n)


def motion_model(cfg: ExperimentConfig) -> MotionModel:
    m = cfg.motion
    if m.kind == "none" or m.amplitude == 0:
        return MotionModel()
    amp, period = m.amplitude, m.period_s
    if m.pattern == "deep":
        amp, period = 2.0 * amp, 1.5 * period
    return MotionModel("periodic_translation", amp, period, m.phase)


def problem_from_bundle(bundle: KSpaceBundle, coil_maps, cfg: ExperimentConfig, coupling=None, tv_dim="motion"):
    """Density-compensated, unitary-scaled reconstruction problem for a bundle.

    Bundle samples follow the unnormalized transform; dividing by
    ``sqrt(nx * ny)`` puts them on the scale of the orthonormal plan.
    """
    n = bundle.grid
    plan = plan_nufft((n, n), norm="ortho")
    weights = [compute_density_weights(t, cfg.dcf_iterations, plan=plan) for t in bundle.trajs]
    data = [d / np.sqrt(n * n) for d in bundle.data]
    return ReconProblem(
        data,
        bundle.trajs,
        weights,
        coil_maps,
        plan,
        lam=cfg.lam,
        coupling=coupling or cfg.coupling,
        n_iters=cfg.iterations,
        sigma=cfg.sigma,
        tau=cfg.tau,
        tv_dim=tv_dim,
        workers=cfg.threads,
        warm_start=cfg.warm_start,
    )


def _write_trace(writer, trace, name):
    writer.add(trace.to_csv(writer.path(name)))


# --- RGB toy -------------------------------------------------------------------


@dataclass(frozen=True)
class LineProfile:
    """Values along one image column: ``positions`` and one row of values per channel."""

    positions: np.ndarray
    values: np.ndarray  # (channels, len(positions))

    def __post_init__(self):
        if np.asarray(self.values).shape[-1] != np.asarray(self.positions).shape[0]:
            raise ValueError("profile positions and values must have equal lengths")

    def to_csv(self, path, labels=("r", "g", "b")):
        rows = [[int(p)] + [float(v) for v in col] for p, col in zip(self.positions, np.asarray(self.values).T)]
        return write_rows_csv(path, ["row", *labels], rows)


def line_profile(channels, column) -> LineProfile:
    ch = np.real(np.asarray(channels))
    return LineProfile(np.arange(ch.shape[1]), ch[:, :, column].copy())


def edge_offset_metric(channels, columns=None, window=8):
    """Mean absolute vertical offset between channel edge locations.

    In each column the strongest vertical edge of a channel is found as the
    row with the largest ``|d/d row|``; its location is the gradient-weighted
    centroid within ``window`` rows of that peak, so edges split across
    neighboring rows are located between them. The metric averages
    ``|loc_a - loc_b|`` over columns and over all channel pairs.
    """
    ch = np.real(np.asarray(channels, dtype=np.complex128))
    n = ch.shape[1]
    if columns is None:
        columns = np.arange(int(0.3 * ch.shape[2]), int(0.7 * ch.shape[2]))
    locs = []
    rows = np.arange(n - 1)[:, None]
    for c in range(ch.shape[0]):
        g = np.abs(np.diff(ch[c], axis=0))[:, columns]
        peak = np.argmax(g, axis=0)
        win = (np.abs(rows - peak[None]) <= window) * g
        total = win.sum(axis=0)
        loc = np.where(total > 0, (win * rows).sum(axis=0) / np.where(total > 0, total, 1.0), peak)
        locs.append(loc)
    pairs = itertools.combinations(range(ch.shape[0]), 2)
    return float(np.mean([np.mean(np.abs(locs[a] - locs[b])) for a, b in pairs]))


@dataclass
class RgbResult:
    metrics: dict = field(default_factory=dict)  # (trajectory, arm) -> metric
    images: dict = field(default_factory=dict)  # (trajectory, arm) -> (3, n, n)
    traces: dict = field(default_factory=dict)  # (trajectory, arm) -> SolverTrace


def run_synth_rgb(cfg: ExperimentConfig, writer: ArtifactWriter) -> RgbResult:
    n = cfg.grid
    phantom = shift_channels(make_rgb_phantom(n), *cfg.channel_shifts)
    plan = plan_nufft((n, n), norm="ortho")
    result = RgbResult()
    column = n // 2
    writer.add(*export_rgb(phantom.channels, writer.path("input")))
    writer.add(line_profile(phantom.channels, column).to_csv(writer.path("input_profile.csv")))
    result.metrics[("input", "truth")] = edge_offset_metric(phantom.channels)

    for idx, kind in enumerate(cfg.trajectories):
        traj = build_trajectory(cfg, kind)
        samples = nufft_forward(plan, phantom.channels, traj)
        if cfg.noise_std > 0:
            rng = np.random.default_rng([cfg.seed, idx])
            z = rng.standard_normal(samples.shape + (2,)) * (cfg.noise_std / np.sqrt(2))
            samples = samples + (z[..., 0] + 1j * z[..., 1])
        weights = compute_density_weights(traj, cfg.dcf_iterations, plan=plan)
        writer.add(write_csv(traj, writer.path(f"{kind}/trajectory.csv")))

        def problem(coupling):
            # channels on the echo axis, one state; the finite difference runs along image rows
            return ReconProblem(
                [samples[None]], [traj], [weights], np.ones((1, n, n)), plan,
                lam=cfg.lam, coupling=coupling, n_iters=cfg.iterations, sigma=cfg.sigma, tau=cfg.tau,
                tv_dim="rows", workers=cfg.threads, warm_start=cfg.warm_start,
            )

        arms = {"gridding": gridding_recon(problem("l2"))[:, 0]}
        for arm, coupling in (("channelwise", "l1"), ("joint", "l2")):
            u, trace = reconstruct(problem(coupling))
            arms[arm] = u[:, 0]
            result.traces[(kind, arm)] = trace
            _write_trace(writer, trace, f"{kind}/{arm}_trace.csv")
        for arm, img in arms.items():
            result.images[(kind, arm)] = img
            result.metrics[(kind, arm)] = edge_offset_metric(img)
            writer.add(*export_rgb(np.real(img), writer.path(f"{kind}/{arm}")))
            writer.add(line_profile(img, column).to_csv(writer.path(f"{kind}/{arm}_profile.csv")))
        log.info("%s: %s", kind, {a: result.metrics[(kind, a)] for a in arms})

    rows = [[t, a, m] for (t, a), m in result.metrics.items()]
    writer.add(write_rows_csv(writer.path("edge_offset.csv"), ["trajectory", "arm", "edge_offset_rows"], rows))
    return result


# --- vial phantom ----------------------------------------------------------------

ARMS = ("gridding", "echo_by_echo", "joint")


@dataclass
class PhantomResult:
    true_r2star: np.ndarray
    concentrations: np.ndarray
    roi: dict  # arm -> list of RoiReport per vial
    regression: dict  # arm -> (slope, intercept, r^2)
    bland_altman: dict  # arm -> (diffs, bias, limits), against gridding
    state: int
    shift: float
    images: dict  # arm -> (E, nx, ny) at the evaluated state
    traces: dict

    def means(self, arm):
        return np.array([r.mean for r in self.roi[arm]])


def run_phantom(cfg: ExperimentConfig, writer: ArtifactWriter) -> PhantomResult:
    n = cfg.grid
    phantom = make_vial_phantom(n, cfg.concentrations, cfg.r0, cfg.r1)
    maps = gen_coil_maps(cfg.coils, n)
    traj = build_trajectory(cfg)
    tes = cfg.tes_ms
    sim_plan = plan_nufft((n, n))

    still, resp0 = simulate_multiecho_kspace(phantom, traj, maps, tes, MotionModel(), cfg.noise_std, cfg.seed, cfg.tr_s, sim_plan)
    grid_img = gridding_recon(problem_from_bundle(bin_kspace(still, resp0, 1), maps, cfg))[:, 0]

    moving, resp = simulate_multiecho_kspace(phantom, traj, maps, tes, motion_model(cfg), cfg.noise_std, cfg.seed, cfg.tr_s, sim_plan)
    bundle = bin_kspace(moving, resp, cfg.states)
    writer.add(*save_bundle(bundle, writer.path("bundle"), resp, maps))
    amps = np.asarray(bundle.bin_amplitudes)
    # evaluate at the state nearest the rest position; ROIs follow its mean displacement
    state = int(np.argmin(np.abs(amps)))
    shift = float(amps[state])

    images = {"gridding": grid_img}
    traces = {}
    for arm, coupling in (("echo_by_echo", "l1"), ("joint", "l2")):
        u, trace = reconstruct(problem_from_bundle(bundle, maps, cfg, coupling))
        images[arm] = u[:, state]
        traces[arm] = trace
        _write_trace(writer, trace, f"{arm}_trace.csv")
        for t in range(u.shape[1]):
            writer.add(*export_image(rss_combine(u[:, t]), writer.path(f"{arm}/t2w_state{t}")))

    true = np.array([v.r2star for v in phantom.vials])
    conc = np.array([v.concentration_mM for v in phantom.vials])
    roi, regression, fits = {}, {}, {}
    for arm in ARMS:
        fit = fit_r2star(np.abs(images[arm]), tes)
        fits[arm] = fit
        s = 0.0 if arm == "gridding" else shift
        roi[arm] = [
            roi_stats(fit.r2star, Roi((n // 2 + v.center[0] + s, n // 2 + v.center[1]), cfg.roi_radius), f"vial{i}")
            for i, v in enumerate(phantom.vials)
        ]
        regression[arm] = concentration_regression(conc, [r.mean for r in roi[arm]])
        writer.add(*export_image(fit.r2star, writer.path(f"{arm}/r2star"), "fixed_window", R2STAR_WINDOW))
        writer.add(*export_image(np.abs(images[arm][0]), writer.path(f"{arm}/echo0")))
    ref = [r.mean for r in roi["gridding"]]
    ba = {arm: bland_altman([r.mean for r in roi[arm]], ref) for arm in ARMS[1:]}

    rows = []
    for i in range(len(true)):
        row = [i, conc[i], true[i]]
        for arm in ARMS:
            row += [roi[arm][i].mean, roi[arm][i].std]
        rows.append(row)
    header = ["vial", "concentration_mM", "true_r2star"] + [f"{a}_{s}" for a in ARMS for s in ("mean", "std")]
    writer.add(write_rows_csv(writer.path("vial_r2star.csv"), header, rows))
    writer.add(
        write_rows_csv(
            writer.path("regression.csv"),
            ["arm", "slope", "intercept", "r_squared"],
            [[a, *map(float, regression[a])] for a in ARMS],
        )
    )
    writer.add(
        write_rows_csv(
            writer.path("bland_altman.csv"),
            ["arm", "vial", "mean_r2star", "pct_diff"],
            [
                [a, i, 0.5 * (roi[a][i].mean + ref[i]), float(ba[a][0][i])]
                for a in ARMS[1:]
                for i in range(len(true))
            ],
        )
    )
    writer.add(
        write_rows_csv(
            writer.path("bland_altman_summary.csv"),
            ["arm", "bias_pct", "lower_pct", "upper_pct"],
            [[a, ba[a][1], *map(float, ba[a][2])] for a in ARMS[1:]],
        )
    )
    writer.add(write_json(writer.path("phantom_meta.json"), {
        "state": state, "shift_rows": shift, "bin_amplitudes": list(map(float, amps)),
    }))
    return PhantomResult(true, conc, roi, regression, ba, state, shift, images, traces)


# --- generic commands ------------------------------------------------------------


def run_recon(cfg: ExperimentConfig, writer: ArtifactWriter):
    """Reconstruct a saved bundle and write images, maps and the solver trace."""
    bundle = load_bundle(cfg.bundle)
    maps = load_coil_maps(cfg.bundle)
    if maps is None:
        if bundle.num_coils != 1:
            raise ValueError(f"{cfg.bundle}: bundle has {bundle.num_coils} coils but no coils.bin")
        maps = np.ones((1, bundle.grid, bundle.grid), dtype=np.complex128)
    u, trace = reconstruct(problem_from_bundle(bundle, maps, cfg))
    _write_trace(writer, trace, "trace.csv")
    for t in range(u.shape[1]):
        for e in range(u.shape[0]):
            writer.add(*export_image(u[e, t], writer.path(f"images/echo{e}_state{t}")))
        t2w = rss_combine(u[:, t])
        writer.add(*export_image(t2w, writer.path(f"maps/t2w_state{t}")))
        writer.add(*export_image(gradient_magnitude(t2w), writer.path(f"maps/gradient_state{t}")))
    return u, trace


def run_r2star(cfg: ExperimentConfig, writer: ArtifactWriter):
    """Fit R2* to one exported image per echo (``inputs`` are raw/sidecar base paths)."""
    mags = np.stack([read_raw(p) for p in cfg.inputs])
    fit = fit_r2star(mags, cfg.tes_ms)
    writer.add(*export_image(fit.r2star, writer.path("r2star"), "fixed_window", R2STAR_WINDOW))
    writer.add(*export_image(fit.rho, writer.path("rho")))
    vals = fit.r2star[fit.mask]
    stats = [[int(vals.size), float(np.mean(vals)) if vals.size else 0.0, float(np.median(vals)) if vals.size else 0.0]]
    writer.add(write_rows_csv(writer.path("r2star_summary.csv"), ["voxels", "mean", "median"], stats))
    return fit


def run_traj(cfg: ExperimentConfig, writer: ArtifactWriter):
    """Generate the configured trajectory and its density compensation."""
    traj = build_trajectory(cfg)
    plan = plan_nufft((cfg.grid, cfg.grid))
    w = compute_density_weights(traj, cfg.dcf_iterations, plan=plan)
    writer.add(write_csv(traj, writer.path("trajectory.csv")))
    writer.add(write_binary(traj, writer.path("trajectory.bin")))
    writer.add(write_rows_csv(writer.path("dcf.csv"), ["sample", "weight"], [[i, float(x)] for i, x in enumerate(w.w)]))
    res = density_residual(traj, w, plan)
    writer.add(write_json(writer.path("dcf_summary.json"), {
        "samples": traj.num_samples,
        "readouts": int(traj.readouts.size),
        "weight_sum": float(np.sum(w.w)),
        "residual_max_dev": float(np.max(np.abs(res - 1.0))),
    }))
    return traj, w

"""Experiment configuration: a single JSON document with every default materialized."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .regularization import COUPLINGS

__all__ = ["ConfigError", "MotionConfig", "ExperimentConfig", "load_config", "resolve_config", "EXPERIMENTS"]

EXPERIMENTS = ("synth_rgb", "phantom", "recon", "r2star", "traj")
TRAJECTORIES = ("radial", "spiral", "cartesian")


class ConfigError(ValueError):
    """Configuration could not be parsed or failed validation."""


@dataclass(frozen=True)
class MotionConfig:
    kind: str = "periodic_translation"
    amplitude: float = 6.0  # voxels
    period_s: float = 4.0
    phase: float = 0.0
    pattern: str = "sinusoid"


def _default_tes():
    return [0.032 + 1.45 * k for k in range(6)]


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    out_dir: str = "out"
    seed: int = 0
    threads: int = 1
    # geometry and sampling
    grid: int = 96
    trajectory: str = "radial"
    trajectories: list = field(default_factory=lambda: ["radial"])
    acceleration: float = 1.0
    spokes: int | None = None
    samples_per_spoke: int | None = None
    angle_scheme: str = "golden"
    interleaves: int = 16
    fov_cm: float = 24.0
    res_mm: float = 2.5
    density_exponent: float = 1.5
    dcf_iterations: int = 20
    # acquisition
    coils: int = 4
    states: int = 5
    tes_ms: list = field(default_factory=_default_tes)
    noise_std: float = 0.0
    tr_s: float = 0.1
    motion: MotionConfig = field(default_factory=MotionConfig)
    # reconstruction
    lam: float = 0.05
    coupling: str = "l2"
    iterations: int = 100
    sigma: float = 0.125
    tau: float = 0.125
    warm_start: bool = False
    # phantom
    concentrations: list = field(default_factory=lambda: [25.0 * (i + 1) for i in range(8)])
    r0: float = 10.0
    r1: float = 1.5
    roi_radius: float = 6.0
    # RGB toy
    channel_shifts: list = field(default_factory=lambda: [3, 6])
    # recon / r2star inputs
    bundle: str | None = None
    inputs: list = field(default_factory=list)

    @property
    def num_echoes(self):
        return len(self.tes_ms)

    def to_dict(self):
        return asdict(self)

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return Path(path)

    def validate(self):
        err = []
        if self.experiment not in EXPERIMENTS:
            err.append(f"experiment must be one of {EXPERIMENTS}")
        if self.seed < 0 or self.seed >= 2**64:
            err.append("seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            err.append("threads must be >= 1")
        if self.grid < 8:
            err.append("grid must be >= 8")
        if self.trajectory not in TRAJECTORIES:
            err.append(f"trajectory must be one of {TRAJECTORIES}")
        for t in self.trajectories:
            if t not in TRAJECTORIES:
                err.append(f"unknown trajectory {t!r}")
        if not self.acceleration >= 1.0:
            err.append("acceleration must be >= 1")
        if self.spokes is not None and self.spokes < 1:
            err.append("spokes must be >= 1")
        if self.samples_per_spoke is not None and self.samples_per_spoke < 2:
            err.append("samples_per_spoke must be >= 2")
        if self.angle_scheme not in ("golden", "uniform"):
            err.append("angle_scheme must be golden or uniform")
        if self.interleaves < 1 or self.fov_cm <= 0 or self.res_mm <= 0 or self.density_exponent < 0:
            err.append("spiral parameters must be positive")
        if self.dcf_iterations < 1:
            err.append("dcf_iterations must be >= 1")
        if self.coils < 1:
            err.append("coils must be >= 1")
        if self.states < 1:
            err.append("states must be >= 1")
        if len(self.tes_ms) < 1 or any(b <= a for a, b in zip(self.tes_ms, self.tes_ms[1:])):
            err.append("tes_ms must be a nonempty strictly increasing list")
        if any(t < 0 for t in self.tes_ms):
            err.append("echo times must be nonnegative")
        if self.noise_std < 0:
            err.append("noise_std must be >= 0")
        if self.tr_s <= 0:
            err.append("tr_s must be > 0")
        m = self.motion
        if m.kind not in ("none", "periodic_translation"):
            err.append("motion.kind must be none or periodic_translation")
        if m.period_s <= 0:
            err.append("motion.period_s must be > 0")
        if m.pattern not in ("sinusoid", "deep"):
            err.append("motion.pattern must be sinusoid or deep")
        if abs(m.amplitude) * (2 if m.pattern == "deep" else 1) >= self.grid / 4:
            err.append("motion amplitude must stay below a quarter of the grid")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            err.append("lam must be positive and finite")
        if self.coupling not in COUPLINGS:
            err.append(f"coupling must be one of {COUPLINGS}")
        if self.iterations < 1:
            err.append("iterations must be >= 1")
        if not (self.sigma > 0 and self.tau > 0):
            err.append("sigma and tau must be positive")
        if self.sigma * self.tau > 0.25 + 1e-12:
            err.append("sigma * tau must be <= 1/4 for convergence")
        if len(self.concentrations) < 2 or any(c < 0 for c in self.concentrations):
            err.append("need at least two nonnegative concentrations")
        if self.r0 < 0 or self.r1 < 0:
            err.append("r0 and r1 must be nonnegative")
        if self.roi_radius < 1:
            err.append("roi_radius must be >= 1")
        if len(self.channel_shifts) != 2 or any(abs(s) >= self.grid / 4 for s in self.channel_shifts):
            err.append("channel_shifts needs two shifts smaller than a quarter of the grid")
        if self.experiment == "recon" and not self.bundle:
            err.append("recon needs a bundle path")
        if self.experiment == "r2star" and len(self.inputs) != len(self.tes_ms):
            err.append("r2star needs one input image per echo time")
        if err:
            raise ConfigError("; ".join(err))
        return self


# Per-experiment defaults layered over the dataclass defaults.
_KIND_DEFAULTS = {
    "synth_rgb": dict(
        grid=128, trajectories=["radial", "spiral"], acceleration=6.0, coils=1, states=1,
        tes_ms=[0.0, 1.0, 2.0], lam=1.0, iterations=300, fov_cm=25.6, res_mm=2.0,
        motion={"kind": "none", "amplitude": 0.0},
    ),
    "phantom": dict(grid=96, acceleration=1.0, spokes=150, noise_std=2.0, lam=0.05, iterations=200),
    "recon": dict(),
    "r2star": dict(),
    "traj": dict(grid=128, acceleration=6.0),
}


def resolve_config(raw: dict, experiment: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Merge ``raw`` over the defaults for its experiment kind and validate."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    kind = raw.get("experiment", experiment)
    if experiment is not None and kind != experiment:
        raise ConfigError(f"config is for experiment {kind!r}, not {experiment!r}")
    if kind not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {kind!r}")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")

    merged = dict(_KIND_DEFAULTS[kind])
    motion = dict(merged.pop("motion", {}))
    motion.update(raw.pop("motion", None) or {})
    merged.update(raw)
    merged.update(overrides or {})
    merged["experiment"] = kind

    mknown = {f.name for f in fields(MotionConfig)}
    bad = sorted(set(motion) - mknown)
    if bad:
        raise ConfigError(f"unknown motion keys: {bad}")
    try:
        merged["motion"] = MotionConfig(**motion)
        cfg = ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    _check_types(cfg)
    return cfg.validate()


def _check_types(cfg):
    for name in ("seed", "threads", "grid", "interleaves", "dcf_iterations", "coils", "states", "iterations"):
        v = getattr(cfg, name)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{name} must be an integer")
    for name in ("spokes", "samples_per_spoke"):
        v = getattr(cfg, name)
        if v is not None and (isinstance(v, bool) or not isinstance(v, int)):
            raise ConfigError(f"{name} must be an integer or null")
    for name in ("acceleration", "fov_cm", "res_mm", "density_exponent", "noise_std", "tr_s", "lam",
                 "sigma", "tau", "r0", "r1", "roi_radius"):
        v = getattr(cfg, name)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{name} must be a number")
    for name in ("trajectories", "tes_ms", "concentrations", "channel_shifts", "inputs"):
        if not isinstance(getattr(cfg, name), list):
            raise ConfigError(f"{name} must be a list")
    if not isinstance(cfg.warm_start, bool):
        raise ConfigError("warm_start must be a boolean")


def load_config(path, experiment=None, overrides=None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from exc
    return resolve_config(raw, experiment, overrides)

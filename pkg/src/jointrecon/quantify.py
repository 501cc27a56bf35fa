"""R2* fitting, echo combination, sharpness maps and ROI statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "R2StarMap",
    "Roi",
    "RoiReport",
    "fit_r2star",
    "rss_combine",
    "gradient_magnitude",
    "roi_mask",
    "roi_stats",
    "concentration_regression",
    "bland_altman",
    "write_rows_csv",
]

R2STAR_MAX = 5000.0  # 1/s
MASK_FRACTION = 0.05


@dataclass(frozen=True)
class R2StarMap:
    r2star: np.ndarray  # 1/s
    rho: np.ndarray
    mask: np.ndarray


def fit_r2star(magnitudes, tes_ms, max_iter=20, floor=None) -> R2StarMap:
    """Voxelwise mono-exponential fit ``m(TE) = rho * exp(-r2star * TE)``.

    Log-linear least squares gives the starting point, refined by
    Gauss-Newton on the magnitudes with ``r2star`` clamped to [0, 5000] 1/s.
    Voxels whose first-echo magnitude is below ``floor`` (default 5% of the
    99th percentile) are masked out and reported as 0.

    Parameters
    ----------
    magnitudes : array, shape ``(E, ...)``
        Echo magnitudes.
    tes_ms : sequence of float
        Strictly increasing echo times in milliseconds.
    """
    mag = np.abs(np.asarray(magnitudes, dtype=np.float64))
    tes = np.asarray(tes_ms, dtype=np.float64)
    E = mag.shape[0]
    if E < 2 or tes.shape != (E,):
        raise ValueError("need at least two echoes and one TE per echo")
    if np.any(np.diff(tes) <= 0):
        raise ValueError("echo times must be strictly increasing")
    spatial = mag.shape[1:]
    m = mag.reshape(E, -1)

    first = m[0]
    if floor is None:
        floor = MASK_FRACTION * np.percentile(first, 99) if first.size else 0.0
    mask = (first > floor) & np.all(m > 0, axis=0)
    if floor == 0:
        mask &= first > 0

    r2 = np.zeros(m.shape[1])
    rho = np.zeros(m.shape[1])
    if np.any(mask):
        mv = m[:, mask]
        # rates are fitted in 1/ms, then reported in 1/s
        rmax = R2STAR_MAX * 1e-3
        tc = tes - tes.mean()
        logm = np.log(mv)
        slope = (tc @ (logm - logm.mean(axis=0))) / (tc @ tc)
        rate = np.clip(-slope, 0.0, rmax)
        amp = np.exp(logm.mean(axis=0) + rate * tes.mean())
        for _ in range(max_iter):
            ex = np.exp(-rate[None] * tes[:, None])
            model = amp * ex
            res = mv - model
            ja = ex
            jr = -tes[:, None] * model
            a11 = np.sum(ja * ja, axis=0)
            a12 = np.sum(ja * jr, axis=0)
            a22 = np.sum(jr * jr, axis=0)
            b1 = np.sum(ja * res, axis=0)
            b2 = np.sum(jr * res, axis=0)
            det = a11 * a22 - a12**2
            ok = det > 1e-300 * np.maximum(a11 * a22, 1e-300)
            safe = np.where(ok, det, 1.0)
            da = np.where(ok, (a22 * b1 - a12 * b2) / safe, 0.0)
            dr = np.where(ok, (a11 * b2 - a12 * b1) / safe, 0.0)
            amp = np.maximum(amp + da, 0.0)
            rate = np.clip(rate + dr, 0.0, rmax)
            if np.all(np.abs(dr) <= 1e-15 * np.maximum(rate, 1e-12)) and np.all(
                np.abs(da) <= 1e-15 * np.maximum(amp, 1e-12)
            ):
                break
        r2[mask] = rate * 1e3
        rho[mask] = amp
    return R2StarMap(r2.reshape(spatial), rho.reshape(spatial), mask.reshape(spatial))


def rss_combine(echoes) -> np.ndarray:
    """Root sum of squares over the echo axis (axis 0)."""
    e = np.asarray(echoes)
    if e.shape[0] < 1:
        raise ValueError("need at least one echo")
    return np.sqrt(np.sum(np.abs(e) ** 2, axis=0))


def gradient_magnitude(img) -> np.ndarray:
    """Central-difference gradient magnitude with replicated borders (2D or 3D)."""
    img = np.asarray(img, dtype=np.float64)
    pad = np.pad(img, 1, mode="edge")
    total = np.zeros_like(img)
    for ax in range(img.ndim):
        hi = [slice(1, -1)] * img.ndim
        lo = [slice(1, -1)] * img.ndim
        hi[ax] = slice(2, None)
        lo[ax] = slice(None, -2)
        g = 0.5 * (pad[tuple(hi)] - pad[tuple(lo)])
        total += g * g
    return np.sqrt(total)


@dataclass(frozen=True)
class Roi:
    """Disk of voxels within ``radius`` of ``center`` (distance <= radius)."""

    center: tuple
    radius: float = 6.0
    slices: tuple = ()

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("ROI radius must be >= 1")


@dataclass(frozen=True)
class RoiReport:
    mean: float
    std: float
    count: int
    label: str = ""


def roi_mask(shape, roi: Roi) -> np.ndarray:
    """Boolean disk mask for a 2D image of ``shape``; ``center`` is in array indices."""
    cx, cy = roi.center
    if not (0 <= cx < shape[0] and 0 <= cy < shape[1]):
        raise ValueError(f"ROI center {roi.center} outside image {shape}")
    xx, yy = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= roi.radius**2


def roi_stats(values, roi: Roi, label="") -> RoiReport:
    """Mean and population std over the ROI disk (union over ``roi.slices`` for 3D input)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 2:
        pooled = v[roi_mask(v.shape, roi)]
    elif v.ndim == 3:
        slices = roi.slices or tuple(range(v.shape[0]))
        mask = roi_mask(v.shape[1:], roi)
        for s in slices:
            if not 0 <= s < v.shape[0]:
                raise ValueError(f"slice {s} out of range")
        pooled = np.concatenate([v[s][mask] for s in slices])
    else:
        raise ValueError("ROI statistics need a 2D image or a stack of slices")
    if pooled.size == 0:
        raise ValueError("empty ROI")
    return RoiReport(float(np.mean(pooled)), float(np.std(pooled)), int(pooled.size), label)


def concentration_regression(conc, r2star):
    """Ordinary least squares ``r2star = slope * conc + intercept``; returns (slope, intercept, r^2)."""
    x = np.asarray(conc, dtype=np.float64)
    y = np.asarray(r2star, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need matching concentration and R2* lists")
    if np.unique(x).size < 2:
        raise ValueError("need at least two distinct concentrations")
    xc = x - x.mean()
    slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    intercept = float(y.mean() - slope * x.mean())
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return slope, intercept, r2


def bland_altman(a, reference):
    """Percent differences ``(a - ref) / ref * 100``, their mean and 95% limits.

    Limits of agreement use the sample standard deviation (``ddof=1``).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("inputs must have equal length")
    if a.size < 2:
        raise ValueError("need at least two pairs")
    if np.any(b == 0):
        raise ValueError("reference values must be nonzero")
    d = (a - b) / b * 100.0
    bias = float(np.mean(d))
    sd = float(np.std(d, ddof=1))
    return d, bias, (bias - 1.96 * sd, bias + 1.96 * sd)


def write_rows_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path

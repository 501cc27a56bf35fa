"""Gridding NUFFT between a centered image grid and non-Cartesian samples.

The forward transform (type 2) evaluates

    y(k) = sum_x img(x) exp(-2 pi i k . x)

with ``x`` integer voxel positions measured from the grid center and ``k`` in
cycles/voxel, ``k`` in [-0.5, 0.5). The adjoint (type 1) is its exact
Hermitian transpose. Both are implemented by Kaiser-Bessel interpolation on an
oversampled Cartesian grid followed by deapodization.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.sparse as sp
from scipy.special import i0

from .trajectory import DensityWeights, Trajectory

__all__ = [
    "NufftPlan",
    "plan_nufft",
    "nufft_forward",
    "nufft_adjoint",
    "apply_sqrt_weights",
    "interpolation_matrix",
    "kaiser_bessel",
]


def kaiser_bessel(u, width, beta):
    """Kaiser-Bessel window ``I0(beta sqrt(1 - (2u/width)^2))``, zero outside the support."""
    u = np.asarray(u, dtype=np.float64)
    arg = 1.0 - (2.0 * u / width) ** 2
    out = i0(beta * np.sqrt(np.clip(arg, 0.0, None)))
    return np.where(arg >= 0.0, out, 0.0)


def _kaiser_bessel_ft(xi, width, beta):
    # Continuous Fourier transform of the window at frequency xi (cycles/grid cell).
    a = beta**2 - (np.pi * width * np.asarray(xi, dtype=np.float64)) ** 2
    s = np.sqrt(a.astype(np.complex128))
    small = np.abs(s) < 1e-8
    s_safe = np.where(small, 1.0, s)
    val = np.where(small, 1.0, np.sinh(s_safe) / s_safe)
    return width * np.real(val)


@dataclass(frozen=True, eq=False)
class NufftPlan:
    """Immutable transform description shared by forward and adjoint calls.

    ``norm="ortho"`` scales both directions by ``1/sqrt(nx*ny)`` so the
    fully sampled Cartesian transform is unitary.
    """

    grid_size: tuple[int, int]
    oversampling: float
    kernel_width: int
    beta: float
    os_grid: tuple[int, int]
    apodization: np.ndarray = field(repr=False)
    norm: str = "none"
    density_norm: float = field(default=1.0, repr=False)

    @property
    def scale(self) -> float:
        if self.norm == "ortho":
            return 1.0 / np.sqrt(self.grid_size[0] * self.grid_size[1])
        return 1.0


def plan_nufft(grid_size, oversampling=2.0, kernel_width=7, norm="none") -> NufftPlan:
    """Precompute kernel parameters and the deapodization image.

    Parameters
    ----------
    grid_size : (int, int)
        Image matrix ``(nx, ny)``, each side >= 8.
    oversampling : float
        Grid oversampling factor (>= 1).
    kernel_width : int
        Interpolation kernel width in oversampled grid cells.
    norm : {"none", "ortho"}
        Transform scaling.
    """
    nx, ny = (int(s) for s in grid_size)
    if nx < 8 or ny < 8:
        raise ValueError(f"grid_size must be >= 8 per side, got {(nx, ny)}")
    if oversampling < 1.0:
        raise ValueError(f"oversampling must be >= 1, got {oversampling}")
    if norm not in ("none", "ortho"):
        raise ValueError(f"unknown norm {norm!r}")
    width = int(kernel_width)
    if width < 1:
        raise ValueError(f"kernel_width must be >= 1, got {kernel_width}")
    gx = 2 * int(np.ceil(oversampling * nx / 2))
    gy = 2 * int(np.ceil(oversampling * ny / 2))
    if width > min(gx, gy):
        raise ValueError(f"kernel_width {width} exceeds oversampled grid {(gx, gy)}")
    # Beatty et al. 2005 kernel shape parameter.
    alpha = oversampling
    beta = float(np.pi * np.sqrt(max((width / alpha) ** 2 * (alpha - 0.5) ** 2 - 0.8, 1e-3)))

    ax = _kaiser_bessel_ft((np.arange(nx) - nx // 2) / gx, width, beta)
    ay = _kaiser_bessel_ft((np.arange(ny) - ny // 2) / gy, width, beta)
    apod = np.outer(ax, ay)
    if not np.all(apod > 0):
        raise ValueError("deapodization is not strictly positive; reduce kernel_width")
    apod.setflags(write=False)

    plan = NufftPlan((nx, ny), float(oversampling), width, beta, (gx, gy), apod, norm)
    object.__setattr__(plan, "density_norm", _lattice_density(plan))
    return plan


def _lattice_density(plan: NufftPlan) -> float:
    # Value of interp(spread(ones)) for a trajectory on the Cartesian lattice;
    # divides it out so Pipe-Menon weights come out in grid-cell units.
    vals = []
    for n, g in zip(plan.grid_size, plan.os_grid):
        k = (np.arange(n) - n // 2) / n
        rows, cols, w = _kernel_1d(k, g, plan.kernel_width, plan.beta)
        p = sp.csr_matrix((w, (rows, cols)), shape=(n, g))
        vals.append(float(np.mean(p @ (p.T @ np.ones(n)))))
    return vals[0] * vals[1]


def _kernel_1d(k, g, width, beta):
    pos = k * g
    start = np.ceil(pos - width / 2).astype(np.int64)
    offs = np.arange(width)
    idx = start[:, None] + offs[None, :]
    w = kaiser_bessel(pos[:, None] - idx, width, beta)
    rows = np.repeat(np.arange(k.size), width)
    return rows, (idx % g).ravel(), w.ravel()


@functools.lru_cache(maxsize=128)
def interpolation_matrix(plan: NufftPlan, traj: Trajectory):
    """Sparse interpolation matrix (samples x oversampled grid) and its transpose."""
    k = traj.coords
    m = k.shape[0]
    gx, gy = plan.os_grid
    width = plan.kernel_width
    _, cx, wx = _kernel_1d(k[:, 0], gx, width, plan.beta)
    _, cy, wy = _kernel_1d(k[:, 1], gy, width, plan.beta)
    cx = cx.reshape(m, width, 1)
    cy = cy.reshape(m, 1, width)
    cols = (cx * gy + cy).reshape(m, -1)
    vals = (wx.reshape(m, width, 1) * wy.reshape(m, 1, width)).reshape(m, -1)
    rows = np.repeat(np.arange(m), width * width)
    mat = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(m, gx * gy))
    mat.sum_duplicates()
    return mat, mat.T.tocsr()


def _real_matmul(mat, rows):
    # Apply a real sparse matrix to each complex row without the complex
    # upcast scipy would do: interleaved (re, im) pairs become two columns.
    out = np.empty((rows.shape[0], mat.shape[0]), dtype=np.complex128)
    for b in range(rows.shape[0]):
        pairs = np.ascontiguousarray(rows[b]).view(np.float64).reshape(-1, 2)
        out[b] = np.ascontiguousarray(mat @ pairs).view(np.complex128).ravel()
    return out


def _check_traj(traj: Trajectory):
    c = traj.coords
    if np.any(c < -0.5) or np.any(c >= 0.5):
        raise ValueError("trajectory coordinates must lie in [-0.5, 0.5)")


def nufft_forward(plan: NufftPlan, img, traj: Trajectory) -> np.ndarray:
    """Type-2 transform of ``img`` (shape ``(..., nx, ny)``) onto ``traj``.

    Returns an array of shape ``(..., M)``.
    """
    img = np.asarray(img)
    nx, ny = plan.grid_size
    if img.shape[-2:] != (nx, ny):
        raise ValueError(f"image shape {img.shape[-2:]} does not match plan grid {(nx, ny)}")
    _check_traj(traj)
    lead = img.shape[:-2]
    gx, gy = plan.os_grid
    pad = np.zeros(lead + (gx, gy), dtype=np.complex128)
    x0, y0 = gx // 2 - nx // 2, gy // 2 - ny // 2
    pad[..., x0:x0 + nx, y0:y0 + ny] = img / plan.apodization
    grid = scipy.fft.fft2(scipy.fft.ifftshift(pad, axes=(-2, -1)), axes=(-2, -1))
    mat, _ = interpolation_matrix(plan, traj)
    out = _real_matmul(mat, grid.reshape(-1, gx * gy)).reshape(lead + (traj.num_samples,))
    if plan.norm == "ortho":
        out *= plan.scale
    return out


def nufft_adjoint(plan: NufftPlan, samples, traj: Trajectory) -> np.ndarray:
    """Exact adjoint of :func:`nufft_forward`; ``samples`` has shape ``(..., M)``."""
    samples = np.asarray(samples)
    if samples.shape[-1] != traj.num_samples:
        raise ValueError(
            f"sample length {samples.shape[-1]} does not match trajectory ({traj.num_samples})"
        )
    _check_traj(traj)
    lead = samples.shape[:-1]
    nx, ny = plan.grid_size
    gx, gy = plan.os_grid
    _, mat_t = interpolation_matrix(plan, traj)
    flat = samples.reshape(-1, traj.num_samples).astype(np.complex128)
    grid = _real_matmul(mat_t, flat).reshape(lead + (gx, gy))
    # Adjoint of the unnormalized forward DFT.
    img = scipy.fft.ifft2(grid, axes=(-2, -1), norm="forward")
    img = scipy.fft.fftshift(img, axes=(-2, -1))
    x0, y0 = gx // 2 - nx // 2, gy // 2 - ny // 2
    img = img[..., x0:x0 + nx, y0:y0 + ny] / plan.apodization
    if plan.norm == "ortho":
        img *= plan.scale
    return img


def apply_sqrt_weights(samples, weights: DensityWeights | np.ndarray) -> np.ndarray:
    """Multiply samples elementwise by the square root of the density weights."""
    w = weights.w if isinstance(weights, DensityWeights) else np.asarray(weights, dtype=np.float64)
    samples = np.asarray(samples)
    if samples.shape[-1] != w.shape[-1]:
        raise ValueError(f"length mismatch: {samples.shape[-1]} samples vs {w.shape[-1]} weights")
    if np.any(w < 0):
        raise ValueError("density weights must be nonnegative")
    return samples * np.sqrt(w)

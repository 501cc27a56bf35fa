"""Temporal finite differences and collaborative TV along the motion axis.

Arrays follow the layout ``(E, T, ...)`` for echo stacks and ``(T, ...)`` for a
single motion-resolved image. Differences use a Neumann boundary: the last
motion state has zero forward difference (end-expiration and end-inspiration
are not neighbors).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "COUPLINGS",
    "temporal_diff",
    "temporal_diff_adjoint",
    "vtv_value",
    "project_dual",
]

COUPLINGS = ("l2", "l1")
# Outside points land this many ulps inside the sphere, so rounding can never
# push a projected point back out and a second projection is an exact no-op.
_NUDGE = 1.0 + 64 * np.finfo(np.float64).eps


def _check_coupling(coupling):
    if coupling not in COUPLINGS:
        raise ValueError(f"coupling must be one of {COUPLINGS}, got {coupling!r}")


def temporal_diff(u, axis=0):
    """Forward difference ``u[t+1] - u[t]`` along ``axis`` with a zero last entry."""
    u = np.asarray(u)
    d = np.zeros_like(u)
    n = u.shape[axis]
    if n > 1:
        head = [slice(None)] * u.ndim
        head[axis] = slice(0, n - 1)
        d[tuple(head)] = np.diff(u, axis=axis)
    return d


def temporal_diff_adjoint(d, axis=0):
    """Adjoint of :func:`temporal_diff` (a negative divergence)."""
    d = np.asarray(d)
    n = d.shape[axis]
    out = np.zeros_like(d)
    if n == 1:
        return out
    dm = np.moveaxis(d, axis, 0)
    om = np.moveaxis(out, axis, 0)
    om[0] = -dm[0]
    om[1:n - 1] = dm[0:n - 2] - dm[1:n - 1]
    om[n - 1] = dm[n - 2]
    return out


def vtv_value(u, coupling="l2", axis=1) -> float:
    """Collaborative temporal TV of an echo stack ``u`` of shape ``(E, ...)``.

    ``l2`` couples echoes inside a pointwise Euclidean norm; ``l1`` sums the
    per-echo moduli. Sums run over every voxel and motion state.
    """
    _check_coupling(coupling)
    mag = np.abs(temporal_diff(u, axis=axis))
    if coupling == "l2":
        return float(np.sum(np.sqrt(np.sum(mag**2, axis=0))))
    return float(np.sum(mag))


def project_dual(xi, lam, coupling="l2"):
    """Project the TV dual (shape ``(E, ...)``) onto the ball of radius ``1/lam``.

    ``l2`` scales all echoes at a point jointly by their Euclidean norm;
    ``l1`` scales each echo by its own modulus. The result is a new array.
    """
    _check_coupling(coupling)
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    xi = np.asarray(xi)
    if coupling == "l2":
        norm = np.sqrt(np.sum(np.abs(xi) ** 2, axis=0, keepdims=True))
    else:
        norm = np.abs(xi)
    ratio = norm * lam
    scale = np.where(ratio > 1.0, ratio * _NUDGE, 1.0)
    return xi / scale

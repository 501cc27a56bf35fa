"""Primal-dual hybrid gradient solver for joint multi-echo motion-resolved recon.

Minimizes

    1/2 sum_j sum_k || sqrt(D) (F S_j u_k - y_jk) ||^2 + lam * TV(u)

where ``TV`` is the collaborative temporal TV of :mod:`jointrecon.regularization`.
The data term is dualized, so each iteration updates the TV dual ``xi``, the
data dual ``zeta`` (one per coil, echo and motion state), the image ``u`` and
the extrapolated image ``u_bar``.

The coil sum in the primal update is computed by per-coil workers whose
results are reduced in coil order, so results do not depend on the worker
count.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nufft import NufftPlan, nufft_adjoint, nufft_forward
from .regularization import COUPLINGS, project_dual, temporal_diff, temporal_diff_adjoint, vtv_value
from .trajectory import DensityWeights, Trajectory

__all__ = [
    "DivergenceError",
    "ReconProblem",
    "DualState",
    "SolverTrace",
    "forward_model",
    "adjoint_model",
    "prox_data",
    "pdhg_step",
    "reconstruct",
    "objective_value",
    "data_term",
    "gridding_recon",
]

log = logging.getLogger(__name__)

TV_DIMS = {"motion": 1, "rows": 2}


class DivergenceError(FloatingPointError):
    """Raised when an iterate becomes non-finite."""

    def __init__(self, iteration, name):
        super().__init__(f"non-finite values in {name} at iteration {iteration}")
        self.iteration = iteration
        self.name = name


@dataclass(frozen=True, eq=False)
class ReconProblem:
    """Everything a solve needs; treated as immutable during a solve.

    Parameters
    ----------
    data : sequence of arrays
        One array per motion state, shape ``(C, E, M_t)``.
    trajs : sequence of Trajectory or None
        Sampling locations per motion state. With ``plan=None`` the encoding
        is the identity and ``M_t = nx * ny``.
    weights : sequence of DensityWeights or None
        Density compensation per motion state (``None`` means all ones).
    coil_maps : array
        ``(C, nx, ny)`` complex sensitivities.
    plan : NufftPlan or None
        Transform plan; ``None`` selects the identity encoding (denoising).
    lam : float
        Regularization weight.
    coupling : {"l2", "l1"}
        Echo coupling of the temporal TV.
    tv_dim : {"motion", "rows"}
        Axis of the finite difference: the motion-state axis, or image rows.
    """

    data: tuple
    trajs: tuple
    weights: tuple
    coil_maps: np.ndarray
    plan: NufftPlan | None
    lam: float
    coupling: str = "l2"
    n_iters: int = 100
    sigma: float = 0.125
    tau: float = 0.125
    tv_dim: str = "motion"
    workers: int = 1
    warm_start: bool = False
    sqrt_w: tuple = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "data", tuple(np.asarray(d, dtype=np.complex128) for d in self.data))
        object.__setattr__(self, "trajs", tuple(self.trajs))
        object.__setattr__(self, "coil_maps", np.asarray(self.coil_maps, dtype=np.complex128))
        if self.coupling not in COUPLINGS:
            raise ValueError(f"coupling must be one of {COUPLINGS}, got {self.coupling!r}")
        if self.tv_dim not in TV_DIMS:
            raise ValueError(f"tv_dim must be one of {tuple(TV_DIMS)}, got {self.tv_dim!r}")
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.n_iters < 1:
            raise ValueError(f"n_iters must be >= 1, got {self.n_iters}")
        if self.sigma < 0 or self.tau <= 0:
            raise ValueError("step sizes must satisfy sigma >= 0 and tau > 0")
        if self.coil_maps.ndim != 3:
            raise ValueError("coil_maps must have shape (C, nx, ny)")
        T = len(self.data)
        if T < 1 or len(self.trajs) != T:
            raise ValueError("data and trajs need one entry per motion state")
        weights = tuple(self.weights) if self.weights is not None else (None,) * T
        if len(weights) != T:
            raise ValueError("weights need one entry per motion state")
        C, nx, ny = self.coil_maps.shape
        E = self.data[0].shape[1]
        if self.plan is not None and self.plan.grid_size != (nx, ny):
            raise ValueError("plan grid does not match coil maps")
        sqrt_w = []
        for t, (d, tr, w) in enumerate(zip(self.data, self.trajs, weights)):
            m = nx * ny if self.plan is None else tr.num_samples
            if d.shape != (C, E, m):
                raise ValueError(f"motion state {t}: data shape {d.shape} != {(C, E, m)}")
            if w is None:
                sqrt_w.append(np.ones(m))
            else:
                w = w.w if isinstance(w, DensityWeights) else np.asarray(w, dtype=np.float64)
                if w.shape != (m,) or np.any(w < 0):
                    raise ValueError(f"motion state {t}: bad density weights")
                sqrt_w.append(np.sqrt(w))
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "sqrt_w", tuple(sqrt_w))

    @property
    def num_coils(self):
        return self.coil_maps.shape[0]

    @property
    def num_echoes(self):
        return self.data[0].shape[1]

    @property
    def num_states(self):
        return len(self.data)

    @property
    def grid(self):
        return self.coil_maps.shape[1:]

    @property
    def image_shape(self):
        return (self.num_echoes, self.num_states) + tuple(self.grid)

    @property
    def tv_axis(self):
        return TV_DIMS[self.tv_dim]


@dataclass
class DualState:
    """TV dual ``xi`` ``(E, T, nx, ny)`` and data duals ``zeta`` (per state ``(C, E, M_t)``).

    ``proj`` optionally carries the forward projections ``sqrt(D) F S u`` of
    the current ``u`` and ``u_bar`` (same layout as ``zeta``) so an iteration
    needs one forward and one adjoint transform per coil, echo and state.
    """

    xi: np.ndarray
    zeta: list
    proj: dict | None = None

    @classmethod
    def zeros(cls, problem: ReconProblem):
        zeta = [np.zeros_like(d) for d in problem.data]
        proj = {"u": [z.copy() for z in zeta], "u_bar": [z.copy() for z in zeta]}
        return cls(np.zeros(problem.image_shape, dtype=np.complex128), zeta, proj)


@dataclass
class SolverTrace:
    objective: list = field(default_factory=list)
    data_term: list = field(default_factory=list)
    tv_term: list = field(default_factory=list)
    primal_change: list = field(default_factory=list)

    def __len__(self):
        return len(self.objective)

    def append(self, record):
        self.objective.append(record["objective"])
        self.data_term.append(record["data_term"])
        self.tv_term.append(record["tv_term"])
        self.primal_change.append(record["primal_change"])

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter", "objective", "data_term", "tv_term", "primal_change"])
            for i, row in enumerate(zip(self.objective, self.data_term, self.tv_term, self.primal_change)):
                wr.writerow([i + 1] + [repr(float(v)) for v in row])
        return path


def _encode(problem, img, t):
    if problem.plan is None:
        return img.reshape(-1).astype(np.complex128)
    return nufft_forward(problem.plan, img, problem.trajs[t])


def _decode(problem, z, t):
    if problem.plan is None:
        return z.reshape(problem.grid).astype(np.complex128)
    return nufft_adjoint(problem.plan, z, problem.trajs[t])


def _check_indices(problem, j, t):
    if not 0 <= j < problem.num_coils:
        raise IndexError(f"coil index {j} out of range")
    if not 0 <= t < problem.num_states:
        raise IndexError(f"motion state {t} out of range")


def forward_model(problem: ReconProblem, u_k, j, t):
    """``sqrt(D) F (S_j * u_k[t])`` for one echo image series ``u_k`` ``(T, nx, ny)``."""
    _check_indices(problem, j, t)
    return _encode(problem, problem.coil_maps[j] * u_k[t], t) * problem.sqrt_w[t]


def adjoint_model(problem: ReconProblem, z, j, t):
    """``conj(S_j) * F^H (sqrt(D) z)``, the adjoint of :func:`forward_model` for state ``t``."""
    _check_indices(problem, j, t)
    return np.conj(problem.coil_maps[j]) * _decode(problem, z * problem.sqrt_w[t], t)


def prox_data(zeta_tilde, sigma):
    """Resolvent of the dualized quadratic data term: ``zeta / (1 + sigma)``."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return np.asarray(zeta_tilde) / (1.0 + sigma)


def _coil_project(problem, j, u):
    # sqrt(D) F S_j u for every state: list over t of (E, M_t).
    out = []
    for t in range(problem.num_states):
        out.append(np.stack([forward_model(problem, u[k], j, t) for k in range(problem.num_echoes)]))
    return out


def _coil_dual_update(problem, j, proj_bar, zeta, sigma):
    # Updated zeta for coil j (list over t of (E, M_t)) and the coil's
    # adjoint contribution (E, T, nx, ny).
    new = []
    contrib = np.zeros(problem.image_shape, dtype=np.complex128)
    for t in range(problem.num_states):
        sy = problem.data[t][j] * problem.sqrt_w[t]
        zt = prox_data(zeta[t][j] + sigma * (proj_bar[t] - sy), sigma)
        for k in range(problem.num_echoes):
            contrib[k, t] = adjoint_model(problem, zt[k], j, t)
        new.append(zt)
    return new, contrib


def _residual_norm(problem, j, proj):
    total = 0.0
    for t in range(problem.num_states):
        r = proj[t] - problem.data[t][j] * problem.sqrt_w[t]
        total += float(np.vdot(r, r).real)
    return total


def _map_coils(fn, problem, executor):
    coils = range(problem.num_coils)
    if executor is None:
        return [fn(j) for j in coils]
    return list(executor.map(fn, coils))


def _stack_coils(parts, problem):
    # list over coils of list over t of (E, M_t) -> list over t of (C, E, M_t)
    return [np.stack([parts[j][t] for j in range(problem.num_coils)]) for t in range(problem.num_states)]


def data_term(problem: ReconProblem, u, executor=None) -> float:
    """``1/2 sum_jk ||sqrt(D)(F S_j u_k - y_jk)||^2``."""
    u = np.asarray(u)
    parts = _map_coils(lambda j: _residual_norm(problem, j, _coil_project(problem, j, u)), problem, executor)
    total = 0.0
    for p in parts:
        total += p
    return 0.5 * total


def objective_value(problem: ReconProblem, u, executor=None) -> float:
    """Data term plus ``lam`` times the collaborative TV of ``u`` ``(E, T, nx, ny)``."""
    u = np.asarray(u)
    return data_term(problem, u, executor) + problem.lam * vtv_value(u, problem.coupling, problem.tv_axis)


def pdhg_step(problem: ReconProblem, u, u_bar, duals: DualState, executor=None, iteration=0, record=True):
    """One primal-dual iteration.

    Order: TV dual ascent and projection, data dual ascent and resolvent,
    primal descent using the updated duals, then the extragradient step
    ``u_bar = 2 u_new - u``.

    Returns ``(u_new, u_bar_new, duals_new, record)`` where ``record`` holds
    the objective terms at ``u_new`` and the primal change.
    """
    sigma, tau, axis = problem.sigma, problem.tau, problem.tv_axis

    # Dual ball radius lam, so the saddle point matches lam * TV.
    xi = project_dual(duals.xi + sigma * temporal_diff(u_bar, axis=axis), 1.0 / problem.lam, problem.coupling)

    if duals.proj is not None:
        proj_bar = duals.proj["u_bar"]
    else:
        parts = _map_coils(lambda j: _coil_project(problem, j, u_bar), problem, executor)
        proj_bar = _stack_coils(parts, problem)
    results = _map_coils(
        lambda j: _coil_dual_update(problem, j, [p[j] for p in proj_bar], duals.zeta, sigma), problem, executor
    )
    zeta = _stack_coils([r[0] for r in results], problem)
    grad = np.zeros(problem.image_shape, dtype=np.complex128)
    for _, contrib in results:
        grad += contrib

    u_new = u - tau * (grad + temporal_diff_adjoint(xi, axis=axis))
    for name, arr in (("xi", xi), ("u", u_new)):
        if not np.all(np.isfinite(arr)):
            raise DivergenceError(iteration, name)
    if not all(np.all(np.isfinite(z)) for z in zeta):
        raise DivergenceError(iteration, "zeta")
    u_bar_new = 2.0 * u_new - u

    proj = None
    rec = None
    if record or duals.proj is not None:
        parts = _map_coils(lambda j: _coil_project(problem, j, u_new), problem, executor)
        proj_u = _stack_coils(parts, problem)
        if duals.proj is not None:
            proj = {"u": proj_u, "u_bar": [2.0 * a - b for a, b in zip(proj_u, duals.proj["u"])]}
        if record:
            total = 0.0
            for j in range(problem.num_coils):
                total += _residual_norm(problem, j, [p[j] for p in proj_u])
            dt = 0.5 * total
            tv = vtv_value(u_new, problem.coupling, axis)
            rec = {
                "objective": dt + problem.lam * tv,
                "data_term": dt,
                "tv_term": tv,
                "primal_change": float(np.linalg.norm(u_new - u)),
            }
    return u_new, u_bar_new, DualState(xi, zeta, proj), rec


def gridding_recon(problem: ReconProblem, executor=None):
    """Density-compensated adjoint ``sum_j conj(S_j) F^H D y_j`` per echo and state."""

    def one(j):
        out = np.zeros(problem.image_shape, dtype=np.complex128)
        for t in range(problem.num_states):
            sy = problem.data[t][j] * problem.sqrt_w[t]
            for k in range(problem.num_echoes):
                out[k, t] = adjoint_model(problem, sy[k], j, t)
        return out

    total = np.zeros(problem.image_shape, dtype=np.complex128)
    for part in _map_coils(one, problem, executor):
        total += part
    return total


def reconstruct(problem: ReconProblem, callback=None):
    """Run ``problem.n_iters`` PDHG iterations from zero (or gridding) initialization.

    Returns the echo stack ``(E, T, nx, ny)`` and the :class:`SolverTrace`.
    """
    trace = SolverTrace()
    executor = ThreadPoolExecutor(max_workers=problem.workers) if problem.workers > 1 else None
    try:
        duals = DualState.zeros(problem)
        if problem.warm_start:
            u = gridding_recon(problem, executor)
            parts = _map_coils(lambda j: _coil_project(problem, j, u), problem, executor)
            proj = _stack_coils(parts, problem)
            duals.proj = {"u": proj, "u_bar": proj}
        else:
            u = np.zeros(problem.image_shape, dtype=np.complex128)
        u_bar = u.copy()
        for n in range(problem.n_iters):
            u, u_bar, duals, rec = pdhg_step(problem, u, u_bar, duals, executor, iteration=n + 1)
            trace.append(rec)
            if callback is not None:
                callback(n + 1, u, rec)
            if (n + 1) % 50 == 0:
                log.debug("iter %d objective %.6g", n + 1, rec["objective"])
    finally:
        if executor is not None:
            executor.shutdown()
    return u, trace

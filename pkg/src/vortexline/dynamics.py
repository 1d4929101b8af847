"""Bohmian trajectories of the exact time-dependent flow.

The velocity is ``v = Im(grad Psi / Psi)``, evaluated from the Gaussian-free
polynomial part so that it stays finite far from the origin.  Trajectories
are integrated with an embedded Runge-Kutta pair from scipy driven one step
at a time, which lets us shrink the step when a trial stage lands too close
to a node and keep statistics about the run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import DOP853, RK45

from .errors import NodeImpact, NodeSingularity, StepLimitExceeded
from .wavefield import WavefunctionSpec, eval_field, gaussian_exponent, probability_current

__all__ = [
    "IntegratorOptions",
    "IntegratorStats",
    "TrajectoryState",
    "Trajectory",
    "bohmian_velocity",
    "velocity_jacobian",
    "integrate_trajectory",
    "integrate_with_deviation",
]

# |phi|^2 below this is treated as an exact node.
SAFE_FLOOR = 1e-280

_SOLVERS = {"DOP853": DOP853, "RK45": RK45}


@dataclass(frozen=True)
class IntegratorOptions:
    abs_tol: float = 1e-11
    rel_tol: float = 1e-11
    max_step: float = 0.1
    node_guard: float = 1e-26
    sample_dt: float = 0.05
    method: str = "DOP853"
    max_steps: int = 5_000_000
    min_step: float = 1e-14

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_step <= 0 or self.sample_dt <= 0:
            raise ValueError("max_step and sample_dt must be positive")
        if self.method not in _SOLVERS:
            raise ValueError(f"unknown method {self.method!r}; choose from {sorted(_SOLVERS)}")


@dataclass
class IntegratorStats:
    steps: int = 0
    rejected: int = 0
    nfev: int = 0
    node_retries: int = 0
    min_abs_psi: float = math.inf
    error_estimate: float = 0.0


@dataclass
class TrajectoryState:
    t: float
    x: np.ndarray
    deviation: np.ndarray | None = None
    accumulated_log_stretch: float = 0.0


@dataclass
class Trajectory:
    """Uniformly sampled trajectory.

    ``log_growth[k]`` is the log of the deviation norm accumulated over
    ``[t[k-1], t[k]]`` before renormalization (``log_growth[0] = 0``).
    """

    t: np.ndarray
    x: np.ndarray
    stats: IntegratorStats = field(default_factory=IntegratorStats)
    deviation: np.ndarray | None = None
    log_growth: np.ndarray | None = None
    mode: str = "plain"

    @property
    def t0(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    @property
    def samples(self) -> list[TrajectoryState]:
        acc = np.cumsum(self.log_growth) if self.log_growth is not None else np.zeros(len(self.t))
        dev = self.deviation if self.deviation is not None else [None] * len(self.t)
        return [TrajectoryState(float(t), x, d, float(a)) for t, x, d, a in zip(self.t, self.x, dev, acc)]


def bohmian_velocity(spec: WavefunctionSpec, x, t: float, path: str = "phi") -> np.ndarray:
    """``(Psi_R grad Psi_I - Psi_I grad Psi_R) / |Psi|^2``.

    ``path="phi"`` (default) uses the polynomial part; ``path="psi"`` uses
    the full wavefunction and is kept for cross-checks.  Raises
    NodeSingularity where |.|^2 is below the safe floor.
    """
    if path == "phi":
        cur = probability_current(spec, x, t)
        G, N = cur.G, cur.N
    elif path == "psi":
        f = eval_field(spec, x, t)
        G = f.psi.real**2 + f.psi.imag**2
        N = f.psi.real[..., None] * f.grad.imag - f.psi.imag[..., None] * f.grad.real
    else:
        raise ValueError(f"unknown path {path!r}")
    if np.any(~(G >= SAFE_FLOOR)):
        raise NodeSingularity(f"|psi|^2 = {np.min(G):.3g} below safe floor")
    return N / G[..., None]


def velocity_jacobian(spec: WavefunctionSpec, x, t: float) -> np.ndarray:
    """Analytic ``J[i, j] = d v_i / d x_j`` by the quotient rule."""
    G, N, dG, dN = probability_current(spec, x, t, derivatives=True)
    if np.any(~(G >= SAFE_FLOOR)):
        raise NodeSingularity(f"|psi|^2 = {np.min(G):.3g} below safe floor")
    G = G[..., None, None]
    return (dN * G - N[..., :, None] * dG[..., None, :]) / (G * G)


class _Rhs:
    """Velocity (and optionally deviation) right-hand side with bookkeeping."""

    def __init__(self, spec, node_guard, stats, kind="plain"):
        self.spec = spec
        self.node_guard = node_guard
        self.stats = stats
        self.kind = kind
        self.calls = 0

    def _check(self, G, x):
        g = float(np.min(G))
        if not g >= self.node_guard:
            raise NodeSingularity(f"|phi|^2 = {g:.3g} inside node guard")
        abspsi = math.sqrt(g) * math.exp(float(np.max(gaussian_exponent(self.spec, x))))
        if abspsi < self.stats.min_abs_psi:
            self.stats.min_abs_psi = abspsi

    def __call__(self, t, y):
        self.calls += 1
        spec = self.spec
        if self.kind == "plain":
            cur = probability_current(spec, y, t)
            self._check(cur.G, y)
            return cur.N / cur.G
        if self.kind == "variational":
            x, xi = y[:3], y[3:]
            G, N, dG, dN = probability_current(spec, x, t, derivatives=True)
            self._check(G, x)
            J = (dN * G - np.outer(N, dG)) / (G * G)
            return np.concatenate([N / G, J @ xi])
        # shadow pair: two independent trajectories
        pts = y.reshape(2, 3)
        cur = probability_current(spec, pts, t)
        self._check(cur.G, pts)
        return (cur.N / cur.G[:, None]).ravel()


def _drive(rhs: _Rhs, t0, y0, t1, opts: IntegratorOptions, sample_times=None):
    """Step a scipy RK solver from t0 to t1; return states at ``sample_times`` (or the end)."""
    cls = _SOLVERS[opts.method]
    stats = rhs.stats
    solver = cls(rhs, t0, np.asarray(y0, dtype=float), t1, max_step=opts.max_step,
                 rtol=opts.rel_tol, atol=opts.abs_tol)
    direction = 1.0 if t1 >= t0 else -1.0
    out = []
    idx = 0
    n = 0 if sample_times is None else len(sample_times)
    while idx < n and (sample_times[idx] - t0) * direction <= 0:
        out.append(np.array(y0, dtype=float))
        idx += 1
    while solver.status == "running":
        before = rhs.calls
        try:
            solver.step()
        except NodeSingularity:
            stats.node_retries += 1
            solver.h_abs *= 0.5
            if solver.h_abs < opts.min_step:
                raise NodeImpact(f"trajectory hit the node guard at t={solver.t:.6g}") from None
            continue
        if solver.status == "failed":
            raise NodeImpact(f"step control failed at t={solver.t:.6g}")
        attempts = max(1, (rhs.calls - before) // cls.n_stages)
        stats.steps += 1
        stats.rejected += attempts - 1
        stats.error_estimate += opts.abs_tol + opts.rel_tol * float(np.max(np.abs(solver.y)))
        if stats.steps > opts.max_steps:
            raise StepLimitExceeded(f"more than {opts.max_steps} steps")
        if idx < n and (sample_times[idx] - solver.t) * direction <= 0:
            dense = solver.dense_output()
            while idx < n and (sample_times[idx] - solver.t) * direction <= 0:
                out.append(dense(sample_times[idx]))
                idx += 1
    stats.nfev += solver.nfev
    if sample_times is None:
        return solver.y
    return np.array(out)


def _sample_grid(t_span, dt):
    t0, t1 = map(float, t_span)
    direction = 1.0 if t1 >= t0 else -1.0
    count = int(math.floor(abs(t1 - t0) / dt + 1e-9))
    return t0 + direction * dt * np.arange(count + 1)


def integrate_trajectory(spec: WavefunctionSpec, x0, t_span, opts: IntegratorOptions | None = None) -> Trajectory:
    opts = opts or IntegratorOptions()
    times = _sample_grid(t_span, opts.sample_dt)
    stats = IntegratorStats()
    rhs = _Rhs(spec, opts.node_guard, stats)
    xs = _drive(rhs, times[0], np.asarray(x0, dtype=float), times[-1], opts, times)
    return Trajectory(times, xs, stats)


def integrate_with_deviation(spec: WavefunctionSpec, x0, xi0, t_span, opts: IntegratorOptions | None = None,
                             mode: str = "variational", delta: float = 1e-7) -> Trajectory:
    """Trajectory plus a deviation vector renormalized at every sample instant.

    ``mode="variational"`` co-integrates ``dxi/dt = J(x, t) xi``;
    ``mode="shadow"`` follows a second trajectory at separation ``delta``.
    """
    opts = opts or IntegratorOptions()
    xi = np.asarray(xi0, dtype=float)
    if abs(np.linalg.norm(xi) - 1.0) > 1e-12:
        raise ValueError("initial deviation must be a unit vector")
    if mode not in ("variational", "shadow"):
        raise ValueError(f"unknown mode {mode!r}")
    times = _sample_grid(t_span, opts.sample_dt)
    stats = IntegratorStats()
    rhs = _Rhs(spec, opts.node_guard, stats, kind=mode)
    x = np.asarray(x0, dtype=float)
    xs = [x]
    devs = [xi]
    logs = [0.0]
    for ta, tb in zip(times[:-1], times[1:]):
        if mode == "variational":
            y = _drive(rhs, ta, np.concatenate([x, xi]), tb, opts)
            x, raw = y[:3], y[3:]
            norm = float(np.linalg.norm(raw))
        else:
            y = _drive(rhs, ta, np.concatenate([x, x + delta * xi]), tb, opts)
            x, partner = y[:3], y[3:]
            raw = partner - x
            norm = float(np.linalg.norm(raw)) / delta
        xi = raw / np.linalg.norm(raw)
        xs.append(x)
        devs.append(xi)
        logs.append(math.log(norm))
    return Trajectory(times, np.array(xs), stats, np.array(devs), np.array(logs), mode)

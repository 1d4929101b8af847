"""Stretching numbers, finite-time Lyapunov numbers and X-line encounters.

The experiment: follow a Bohmian trajectory together with a deviation
vector, record the one-step stretching numbers, and at every sample
instant measure the distance from the trajectory to the X-point of the
nodal point whose F-plane contains it.  Large stretching numbers should
coincide with close passages to the X-line.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Trajectory
from .errors import SingularSystem, VortexLineError
from .output import write_csv, write_json
from .nodal import DEFAULT_BOX, foot_node, trace_all_lines
from .wavefield import WavefunctionSpec
from .xstruct import find_xpoint

__all__ = [
    "DeviationSeries",
    "EncounterEvent",
    "DistanceSeries",
    "ChaosReport",
    "stretching_numbers",
    "finite_time_lcn",
    "distance_to_xline",
    "correlate_events",
]


@dataclass
class DeviationSeries:
    """``alphas[k]`` is the stretching number over ``[times[k] - t0, times[k]]``."""

    times: np.ndarray
    alphas: np.ndarray
    chi: np.ndarray
    t0: float


@dataclass
class EncounterEvent:
    t_jump: float
    alpha_peak: float
    t_min_dist: float
    d_min: float
    d_at_jump: float
    matched: bool


@dataclass
class DistanceSeries:
    times: np.ndarray
    d: np.ndarray  # NaN where no node could be located
    nodes: np.ndarray  # nearest nodal point per sample (NaN rows when lost)
    xpoints: np.ndarray  # world position of the matching X-point
    lost: list = field(default_factory=list)
    approximate: bool = True


@dataclass
class ChaosReport:
    trajectory: dict
    series: DeviationSeries
    distance: DistanceSeries
    events: list
    threshold: float
    window: float

    @property
    def summary(self) -> dict:
        n = len(self.events)
        matched = sum(e.matched for e in self.events)
        d_jump = [e.d_at_jump for e in self.events if math.isfinite(e.d_at_jump)]
        return {
            "jumps": n,
            "matched": matched,
            "fraction_matched": matched / n if n else 1.0,
            "max_d_at_jump": max(d_jump) if d_jump else None,
            "jumps_beyond_unit_distance": sum(d > 1.0 for d in d_jump),
            "final_chi": float(self.series.chi[-1]) if len(self.series.chi) else 0.0,
            "threshold": self.threshold,
            "window": self.window,
        }

    def to_json(self) -> dict:
        def clean(a):
            return [None if not math.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]

        return {
            "trajectory": self.trajectory,
            "t0": self.series.t0,
            "times": clean(self.series.times),
            "alphas": clean(self.series.alphas),
            "chi": clean(self.series.chi),
            "dist": clean(self.distance.d[1:]),
            "events": [{k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                        for k, v in vars(e).items()} for e in self.events],
            "summary": self.summary,
        }

    def write(self, json_path, csv_path=None):
        write_json(json_path, self.to_json())
        if csv_path is not None:
            rows = ([t, a, math.log10(abs(a)) if a != 0 else -math.inf, d]
                    for t, a, d in zip(self.series.times, self.series.alphas, self.distance.d[1:]))
            write_csv(csv_path, ["t", "alpha", "log10_abs_alpha", "d"], rows)


def stretching_numbers(traj: Trajectory) -> DeviationSeries:
    """Stretching numbers from the pre-renormalization growth logged by the integrator."""
    if traj.log_growth is None:
        raise ValueError("trajectory carries no deviation record")
    alphas = np.asarray(traj.log_growth[1:], dtype=float)
    t0 = traj.t0
    k = np.arange(1, len(alphas) + 1)
    chi = np.cumsum(alphas) / (k * t0) if len(alphas) else np.zeros(0)
    return DeviationSeries(np.asarray(traj.t[1:], dtype=float), alphas, chi, t0)


def finite_time_lcn(series: DeviationSeries, kappa: int) -> float:
    """``chi = (1 / (kappa t0)) * sum_{i <= kappa} alpha_i``."""
    if kappa < 1:
        raise ValueError("kappa must be at least 1")
    if kappa > len(series.alphas):
        raise ValueError("kappa beyond the end of the series")
    return float(np.sum(series.alphas[:kappa]) / (kappa * series.t0))


def distance_to_xline(spec: WavefunctionSpec, traj: Trajectory, line_dt: float = 0.1, box=DEFAULT_BOX,
                      resolution: int = 16, ds: float = 0.1, max_node_distance: float = math.inf) -> DistanceSeries:
    """Distance from each trajectory sample to the X-point of its nearest nodal point.

    Nodal lines are re-traced every ``line_dt``; candidate nodes for a
    sample are the previous sample's node and the closest point of every
    traced line at the latest snapshot.  Each candidate is moved onto the
    node whose F-plane contains the trajectory point and the closest one
    wins.  Its X-point (F-plane mode) is seeded from the previous sample's
    X-point for continuity.
    """
    times = np.asarray(traj.t, dtype=float)
    n = len(times)
    d = np.full(n, np.nan)
    nodes = np.full((n, 3), np.nan)
    xw = np.full((n, 3), np.nan)
    lost = []
    snapshot_t, lines = None, []
    prev_node, prev_x = None, None
    for k, (t, x) in enumerate(zip(times, traj.x)):
        if snapshot_t is None or t - snapshot_t >= line_dt - 1e-12:
            lines = trace_all_lines(spec, float(t), box=box, resolution=resolution, ds=ds)
            snapshot_t = t
        seeds = [] if prev_node is None else [prev_node.r0]
        for ln in lines:
            i, _ = ln.nearest(x)
            p = ln.points[i]
            seeds.append(p.r0 + (p.V0 if p.V0 is not None else 0.0) * (t - snapshot_t))
        best = None
        for sd in seeds:
            try:
                p = foot_node(spec, float(t), x, sd)
            except (VortexLineError, np.linalg.LinAlgError):
                continue
            dist = float(np.linalg.norm(x - p.r0))
            if dist <= max_node_distance and (best is None or dist < best[0]):
                best = (dist, p)
        if best is None:
            lost.append(float(t))
            prev_node, prev_x = None, None
            continue
        p = best[1]
        try:
            xp_seeds = [p.to_local(prev_x.world)] if prev_x is not None else []
            xp, _ = find_xpoint(spec, p, xp_seeds)
        except (VortexLineError, SingularSystem):
            lost.append(float(t))
            prev_node, prev_x = p, None
            continue
        nodes[k], xw[k] = p.r0, xp.world
        d[k] = float(np.linalg.norm(x - xp.world))
        prev_node, prev_x = p, xp
    return DistanceSeries(times, d, nodes, xw, lost)


def _local_maxima(a):
    """Indices of interior local maxima (plateaus counted once)."""
    idx = []
    for i in range(len(a)):
        left = a[i - 1] if i > 0 else -np.inf
        right = a[i + 1] if i + 1 < len(a) else -np.inf
        if a[i] > left and a[i] >= right:
            idx.append(i)
    return idx


def _local_minima(a):
    idx = []
    for i in range(len(a)):
        if not math.isfinite(a[i]):
            continue
        left = a[i - 1] if i > 0 and math.isfinite(a[i - 1]) else np.inf
        right = a[i + 1] if i + 1 < len(a) and math.isfinite(a[i + 1]) else np.inf
        if a[i] < left and a[i] <= right:
            idx.append(i)
    return idx


def correlate_events(series: DeviationSeries, dist: DistanceSeries, jump_threshold: float | None = None,
                     window: float | None = None, trajectory: dict | None = None) -> ChaosReport:
    """Match every |alpha| peak above threshold with the closest d-minimum within the window.

    ``dist`` is sampled at the trajectory instants ``t_0..t_K``; the
    stretching number ``alpha_k`` belongs to ``t_k``.  Defaults: threshold
    3x the median |alpha|, window 2 t0.
    """
    abs_a = np.abs(series.alphas)
    threshold = 3.0 * float(np.median(abs_a)) if jump_threshold is None else float(jump_threshold)
    window = 2.0 * series.t0 if window is None else float(window)
    if len(dist.times) != len(series.times) + 1 or not np.allclose(dist.times[1:], series.times):
        raise ValueError("distance and deviation series are not aligned")
    dvals = np.asarray(dist.d, dtype=float)
    minima = np.array(_local_minima(dvals), dtype=int)
    events = []
    for i in _local_maxima(abs_a):
        if abs_a[i] <= threshold:
            continue
        tj = float(series.times[i])
        # the step covers [t_k - t0, t_k]; either end may carry the closest approach
        d_here = float(np.nanmin([dvals[i], dvals[i + 1]])) if np.isfinite(dvals[i:i + 2]).any() else math.nan
        near = [m for m in minima if abs(dist.times[m] - tj) <= window + 1e-12]
        if near:
            m = min(near, key=lambda j: (abs(dist.times[j] - tj), dvals[j]))
            events.append(EncounterEvent(tj, float(series.alphas[i]), float(dist.times[m]), float(dvals[m]),
                                         d_here, True))
        else:
            events.append(EncounterEvent(tj, float(series.alphas[i]), math.nan, math.nan, d_here, False))
    return ChaosReport(trajectory or {}, series, dist, events, threshold, window)

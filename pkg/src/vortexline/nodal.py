"""Nodal points and nodal lines.

A nodal line at fixed time is the curve ``phi_R = phi_I = 0``.  Along it both
gradients are normal to the curve, so ``grad(phi_R) x grad(phi_I)`` gives the
tangent exactly; the orientation of that cross product is used as the
direction of increasing arclength everywhere in the package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import BranchTooLong, DegenerateNode, NoConvergence, SingularSystem
from .wavefield import WavefunctionSpec, eval_polynomial_part

__all__ = [
    "NodalPoint",
    "NodalLine",
    "Frame",
    "DEFAULT_BOX",
    "field_scale",
    "find_nodal_point",
    "solve_in_plane",
    "trace_nodal_line",
    "trace_all_lines",
    "scan_seeds",
    "frenet_frame",
    "euler_frame",
    "nodal_velocity",
    "curvature_radius",
    "foot_node",
    "node_at_arclength",
    "advance_node",
]

DEFAULT_BOX = ((-4.0, -4.0, -4.0), (4.0, 4.0, 4.0))
KAPPA_MIN = 1e-6
_SHELL = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1) if (i, j, k) != (0, 0, 0)],
                  dtype=float)
_SHELL /= np.linalg.norm(_SHELL, axis=1)[:, None]


class Frame(NamedTuple):
    """Rows are the unit vectors of the local u, v, w axes (w is the tangent)."""

    matrix: np.ndarray
    kind: str  # "frenet", "euler" or "fixed"

    @property
    def normal(self):
        return self.matrix[0]

    @property
    def binormal(self):
        return self.matrix[1]

    @property
    def tangent(self):
        return self.matrix[2]


@dataclass
class NodalPoint:
    r0: np.ndarray
    t: float
    s: float = 0.0
    tangent: np.ndarray | None = None
    frame: Frame | None = None
    V0: np.ndarray | None = None
    R0_curv: float = math.inf

    def to_local(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.r0) @ self.frame.matrix.T

    def to_world(self, uvw) -> np.ndarray:
        return self.r0 + np.asarray(uvw, dtype=float) @ self.frame.matrix


@dataclass
class NodalLine:
    points: list[NodalPoint]
    t: float
    ds: float
    closed: bool = False
    termination: tuple[str, str] = ("", "")
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def from_curve(cls, positions, tangents=None, t: float = 0.0, closed: bool = False) -> "NodalLine":
        """Wrap an arbitrary sampled curve (used for synthetic geometry)."""
        pos = np.asarray(positions, dtype=float)
        seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        if tangents is None:
            tangents = np.gradient(pos, s, axis=0, edge_order=2)
        tangents = np.asarray(tangents, dtype=float)
        tangents = tangents / np.linalg.norm(tangents, axis=1)[:, None]
        pts = [NodalPoint(p, t, si, tv) for p, si, tv in zip(pos, s, tangents)]
        line = cls(pts, t, float(np.mean(seg)), closed)
        _assign_frames(line)
        return line

    def __len__(self):
        return len(self.points)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.r0 for p in self.points])

    @property
    def s(self) -> np.ndarray:
        return np.array([p.s for p in self.points])

    @property
    def tangents(self) -> np.ndarray:
        return np.array([p.tangent for p in self.points])

    @property
    def frames(self) -> np.ndarray:
        return np.array([p.frame.matrix for p in self.points])

    @property
    def velocities(self) -> np.ndarray:
        return np.array([p.V0 if p.V0 is not None else np.full(3, np.nan) for p in self.points])

    @property
    def length(self) -> float:
        return float(self.s[-1] - self.s[0])

    def curvature_vectors(self) -> np.ndarray:
        """d(tangent)/ds at every point by second-order finite differences."""
        tang = self.tangents
        s = self.s
        if self.closed and len(s) >= 5:
            gap = float(np.linalg.norm(self.points[0].r0 - self.points[-1].r0))
            perimeter = s[-1] - s[0] + gap
            ext_t = np.concatenate([tang[-2:], tang, tang[:2]])
            ext_s = np.concatenate([s[-2:] - perimeter, s, s[:2] + perimeter])
            return np.gradient(ext_t, ext_s, axis=0)[2:-2]
        if len(s) < 3:
            return np.zeros_like(tang)
        return np.gradient(tang, s, axis=0, edge_order=2)

    def nearest(self, x) -> tuple[int, float]:
        d = np.linalg.norm(self.positions - np.asarray(x, dtype=float), axis=1)
        i = int(np.argmin(d))
        return i, float(d[i])


def field_scale(spec: WavefunctionSpec, t: float, center, radius: float = 0.5) -> float:
    """RMS of |phi| over a reference shell around ``center``."""
    pts = np.asarray(center, dtype=float) + radius * _SHELL
    f = eval_polynomial_part(spec, pts, t)
    return float(np.sqrt(np.mean(np.abs(f.psi) ** 2)))


def _in_box(r, box) -> bool:
    lo, hi = box
    return bool(np.all(r >= np.asarray(lo)) and np.all(r <= np.asarray(hi)))


def _tangent(f) -> np.ndarray:
    gr, gi = f.grad.real, f.grad.imag
    cross = np.cross(gr, gi)
    norm = np.linalg.norm(cross)
    if not norm > 1e-10 * np.linalg.norm(gr) * np.linalg.norm(gi):
        raise DegenerateNode("grad(phi_R) and grad(phi_I) are parallel")
    return cross / norm


def find_nodal_point(spec: WavefunctionSpec, t: float, seed, node_tol: float = 1e-12, max_iter: int = 60,
                     box=DEFAULT_BOX, max_travel: float = 1.0) -> NodalPoint:
    """Gauss-Newton with minimum-norm updates on ``(phi_R, phi_I) = 0``."""
    seed = np.asarray(seed, dtype=float)
    if box is not None and not _in_box(seed, box):
        raise ValueError(f"seed {seed} outside the search box")
    r = seed.copy()
    for _ in range(max_iter):
        f = eval_polynomial_part(spec, r, t)
        F = np.array([f.psi.real, f.psi.imag])
        scale = field_scale(spec, t, r)
        if np.hypot(*F) < node_tol * scale:
            return NodalPoint(r, float(t), tangent=_tangent(f))
        J = np.vstack([f.grad.real, f.grad.imag])
        step, *_ = np.linalg.lstsq(J, -F, rcond=1e-13)
        r = r + step
        if not np.all(np.isfinite(r)) or np.linalg.norm(r - seed) > max_travel:
            break
        if box is not None and not _in_box(r, box):
            break
    raise NoConvergence(f"no nodal point near seed {seed.tolist()} at t={t}")


def solve_in_plane(spec: WavefunctionSpec, t: float, plane_point, normal, seed=None, node_tol: float = 1e-12,
                   max_iter: int = 40) -> np.ndarray:
    """Node on the plane through ``plane_point`` with unit ``normal`` (Newton, 3x3)."""
    plane_point = np.asarray(plane_point, dtype=float)
    normal = np.asarray(normal, dtype=float)
    r = plane_point.copy() if seed is None else np.asarray(seed, dtype=float).copy()
    scale = field_scale(spec, t, plane_point)
    for _ in range(max_iter):
        f = eval_polynomial_part(spec, r, t)
        F = np.array([f.psi.real, f.psi.imag, (r - plane_point) @ normal])
        if np.hypot(F[0], F[1]) < node_tol * scale and abs(F[2]) < 1e-14:
            return r
        J = np.vstack([f.grad.real, f.grad.imag, normal])
        try:
            r = r - np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(r)):
            break
    raise NoConvergence("in-plane corrector did not converge")


def _trace_direction(spec, t, start: NodalPoint, sign, ds, max_points, box, node_tol):
    """March from ``start`` along ``sign * tangent``; returns (points, termination)."""
    pts = []
    r, tang = start.r0, start.tangent
    for _ in range(max_points):
        step = ds
        for _attempt in range(2):
            pred = r + sign * step * tang
            try:
                rn = solve_in_plane(spec, t, pred, tang, node_tol=node_tol)
                tn = _tangent(eval_polynomial_part(spec, rn, t))
                break
            except (NoConvergence, DegenerateNode):
                step *= 0.5
        else:
            return pts, "degenerate"
        if tn @ tang < 0:
            return pts, "degenerate"
        if box is not None and not _in_box(rn, box):
            return pts, "box_exit"
        if len(pts) > 3 and np.linalg.norm(rn - start.r0) <= 0.55 * ds:
            return pts, "closed"
        pts.append(NodalPoint(rn, float(t), tangent=tn))
        r, tang = rn, tn
    return pts, "max_points"


def trace_nodal_line(spec: WavefunctionSpec, t: float, start: NodalPoint, ds: float = 0.02, max_points: int = 4000,
                     box=DEFAULT_BOX, node_tol: float = 1e-12, decorate: bool = True) -> NodalLine:
    """Predictor-corrector continuation in both directions from ``start``.

    Arclength is measured from ``start`` (s = 0) and increases along
    ``grad(phi_R) x grad(phi_I)``.  With ``decorate`` the frames, node
    velocities and curvature radii are filled in as well.
    """
    if start.tangent is None:
        start.tangent = _tangent(eval_polynomial_part(spec, start.r0, t))
    fwd, term_f = _trace_direction(spec, t, start, +1.0, ds, max_points, box, node_tol)
    if term_f == "closed":
        bwd, term_b = [], "closed"
    else:
        bwd, term_b = _trace_direction(spec, t, start, -1.0, ds, max_points, box, node_tol)
    pts = bwd[::-1] + [NodalPoint(start.r0, float(t), tangent=start.tangent)] + fwd
    pos = np.array([p.r0 for p in pts])
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    s -= s[len(bwd)]
    for p, si in zip(pts, s):
        p.s = float(si)
    line = NodalLine(pts, float(t), ds, term_f == "closed", (term_b, term_f))
    for side, term in (("backward", term_b), ("forward", term_f)):
        if term == "degenerate":
            line.warnings.append(f"{side} branch stopped at a degenerate node")
    if decorate:
        decorate_line(spec, line)
    if "max_points" in (term_f, term_b):
        raise BranchTooLong(f"nodal line exceeded {max_points} points per direction", line)
    return line


def decorate_line(spec: WavefunctionSpec, line: NodalLine) -> NodalLine:
    _assign_frames(line)
    for p in line.points:
        try:
            p.V0 = nodal_velocity(spec, p)
        except SingularSystem:
            p.V0 = None
            line.warnings.append(f"singular node-velocity system at s={p.s:.6g}")
    return line


def _assign_frames(line: NodalLine):
    kvec = line.curvature_vectors()
    for p, k in zip(line.points, kvec):
        p.frame = _frame_from(p.tangent, k)
        kn = float(np.linalg.norm(k))
        p.R0_curv = 1.0 / kn if kn >= KAPPA_MIN else math.inf
        if p.frame.kind == "fixed":
            line.warnings.append(f"fixed fallback frame at s={p.s:.6g}")


def euler_frame(tangent) -> np.ndarray:
    """Frame from the polar angles of the tangent; w is the tangent itself."""
    tx, ty, tz = np.asarray(tangent, dtype=float) / np.linalg.norm(tangent)
    phi = math.atan2(ty, tx)
    theta = math.acos(max(-1.0, min(1.0, tz)))
    sp, cp, st, ct = math.sin(phi), math.cos(phi), math.sin(theta), math.cos(theta)
    return np.array([[sp, -cp, 0.0], [ct * cp, ct * sp, -st], [st * cp, st * sp, ct]])


def _frame_from(tangent, kvec) -> Frame:
    t = np.asarray(tangent, dtype=float)
    t = t / np.linalg.norm(t)
    k = np.asarray(kvec, dtype=float)
    k = k - (k @ t) * t
    kn = np.linalg.norm(k)
    if kn >= KAPPA_MIN:
        n = k / kn
        b = np.cross(t, n)
        n = np.cross(b, t)
        return Frame(np.array([n, b, t]), "frenet")
    if math.hypot(t[0], t[1]) > 1e-12:
        return Frame(euler_frame(t), "euler")
    ref = np.array([1.0, 0.0, 0.0])
    n = ref - (ref @ t) * t
    n /= np.linalg.norm(n)
    return Frame(np.array([n, np.cross(t, n), t]), "fixed")


def _interp_along(line: NodalLine, values: np.ndarray, s: float) -> np.ndarray:
    sv = line.s
    if not sv[0] - 1e-12 <= s <= sv[-1] + 1e-12:
        raise ValueError(f"s={s} outside the line range [{sv[0]}, {sv[-1]}]")
    i = int(np.clip(np.searchsorted(sv, s) - 1, 0, len(sv) - 2))
    h = sv[i + 1] - sv[i]
    a = (s - sv[i]) / h if h > 0 else 0.0
    return (1 - a) * values[i] + a * values[i + 1]


def frenet_frame(line: NodalLine, s: float) -> Frame:
    """Local frame at arclength ``s`` (Frenet, or the Euler-angle fallback)."""
    t = _interp_along(line, line.tangents, s)
    k = _interp_along(line, line.curvature_vectors(), s)
    return _frame_from(t, k)


def curvature_radius(line: NodalLine, s: float) -> float:
    k = _interp_along(line, line.curvature_vectors(), s)
    t = _interp_along(line, line.tangents, s)
    t = t / np.linalg.norm(t)
    kn = float(np.linalg.norm(k - (k @ t) * t))
    return 1.0 / kn if kn >= KAPPA_MIN else math.inf


def nodal_velocity(spec: WavefunctionSpec, p: NodalPoint) -> np.ndarray:
    """Velocity of the node inside its own normal plane.

    Solves ``grad(phi_R).V = -d_t phi_R``, ``grad(phi_I).V = -d_t phi_I``,
    ``tangent.V = 0``.
    """
    f = eval_polynomial_part(spec, p.r0, p.t)
    tang = p.tangent if p.tangent is not None else _tangent(f)
    M = np.vstack([f.grad.real, f.grad.imag, tang])
    if np.linalg.cond(M) > 1e12:
        raise SingularSystem("node velocity system is rank deficient")
    return np.linalg.solve(M, -np.array([f.dpsi_dt.real, f.dpsi_dt.imag, 0.0]))


def foot_node(spec: WavefunctionSpec, t: float, x, seed, max_iter: int = 40, tol: float = 1e-12) -> NodalPoint:
    """Nodal point whose F-plane passes through ``x``, found by Newton from a nearby node ``seed``.

    Solves ``phi_R = phi_I = 0`` and ``(x - r) . T(r) = 0`` with
    ``T = grad phi_R x grad phi_I``, using the analytic Hessians.
    """
    x = np.asarray(x, dtype=float)
    r = np.asarray(seed, dtype=float).copy()

    def system(r):
        f = eval_polynomial_part(spec, r, t)
        gR, gI = f.grad.real, f.grad.imag
        T = np.cross(gR, gI)
        F = np.array([f.psi.real, f.psi.imag, (x - r) @ T])
        dT = np.cross(f.hess.real, gI[None, :]) + np.cross(gR[None, :], f.hess.imag)  # row j: dT/dr_j
        J = np.vstack([gR, gI, -T + dT @ (x - r)])
        return F, J, float(np.linalg.norm(T))

    F, J, tn = system(r)
    scale = max(tn, 1e-300)
    for _ in range(max_iter):
        merit = math.hypot(F[0], F[1]) ** 2 * tn / scale + (F[2] / scale) ** 2
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            raise NoConvergence("singular foot-node system") from None
        lam = 1.0
        while True:
            trial = r + lam * step
            Ft, Jt, tnt = system(trial)
            mt = math.hypot(Ft[0], Ft[1]) ** 2 * tnt / scale + (Ft[2] / scale) ** 2
            if mt < merit or lam < 1e-3:
                break
            lam *= 0.5
        r, F, J, tn = trial, Ft, Jt, tnt
        if float(np.linalg.norm(step)) * lam < tol * max(1.0, float(np.linalg.norm(r))):
            break
    else:
        raise NoConvergence("foot-node Newton did not converge")
    if math.hypot(F[0], F[1]) > 1e-10 * math.sqrt(tn) or abs(F[2]) > 1e-8 * tn * max(1.0, np.linalg.norm(x - r)):
        raise NoConvergence("foot-node Newton stalled off the nodal line")
    tang = np.cross(*(lambda g: (g.real, g.imag))(eval_polynomial_part(spec, r, t).grad))
    tang /= np.linalg.norm(tang)
    p = NodalPoint(r, t, 0.0, tang, _frame_from(tang, np.zeros(3)))
    p.V0 = nodal_velocity(spec, p)
    return p


def advance_node(spec: WavefunctionSpec, p: NodalPoint, t: float, max_dt: float = 0.02) -> NodalPoint:
    """Follow a node in time: predict with its velocity, correct inside the previous F-plane.

    This is the same construction that defines the node velocity, so the
    followed point is the node seen by an observer riding in the F-plane.
    """
    n = max(1, int(math.ceil(abs(t - p.t) / max_dt)))
    for k in range(1, n + 1):
        tk = p.t + (t - p.t) / (n - k + 1)
        V = p.V0 if p.V0 is not None else nodal_velocity(spec, p)
        guess = p.r0 + V * (tk - p.t)
        r = solve_in_plane(spec, tk, guess, p.tangent, seed=guess)
        p = foot_node(spec, tk, r, r)
    return p


def node_at_arclength(spec: WavefunctionSpec, line: NodalLine, s: float, node_tol: float = 1e-12) -> NodalPoint:
    """Nodal point at arclength ``s`` between traced samples, corrected onto the line.

    The interpolated position is pulled back onto the nodal set inside the
    plane normal to the interpolated tangent; the frame is built from the
    interpolated curvature vector, and the node velocity is recomputed.
    """
    pos = _interp_along(line, line.positions, s)
    tang = _interp_along(line, line.tangents, s)
    tang /= np.linalg.norm(tang)
    r = solve_in_plane(spec, line.t, pos, tang, node_tol=node_tol)
    f = eval_polynomial_part(spec, r, line.t)
    tang = _tangent(f)
    kvec = _interp_along(line, line.curvature_vectors(), s)
    p = NodalPoint(r, line.t, float(s), tang, _frame_from(tang, kvec))
    p.V0 = nodal_velocity(spec, p)
    return p


def scan_seeds(spec: WavefunctionSpec, t: float, box=DEFAULT_BOX, resolution: int = 24) -> np.ndarray:
    """Cell centres of a regular grid where both phi_R and phi_I change sign."""
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    axes = [np.linspace(lo[k], hi[k], resolution + 1) for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    phi = eval_polynomial_part(spec, grid, t).psi
    seeds = []
    for part in (phi.real, phi.imag):
        corners = [part[i:resolution + i, j:resolution + j, k:resolution + k]
                   for i in (0, 1) for j in (0, 1) for k in (0, 1)]
        stack = np.stack(corners)
        seeds.append((stack.min(axis=0) <= 0) & (stack.max(axis=0) >= 0))
    mask = seeds[0] & seeds[1]
    idx = np.argwhere(mask)
    centres = grid[idx[:, 0], idx[:, 1], idx[:, 2]] + 0.5 * (hi - lo) / resolution
    return centres


def trace_all_lines(spec: WavefunctionSpec, t: float, box=DEFAULT_BOX, resolution: int = 24, ds: float = 0.02,
                    max_points: int = 4000, node_tol: float = 1e-12) -> list[NodalLine]:
    """Every nodal branch reachable from the grid-scan seeds inside ``box``."""
    lines: list[NodalLine] = []
    cell = float(np.max((np.asarray(box[1]) - np.asarray(box[0])) / resolution))
    for seed in scan_seeds(spec, t, box, resolution):
        if any(ln.nearest(seed)[1] < cell for ln in lines):
            continue
        try:
            p = find_nodal_point(spec, t, seed, node_tol=node_tol, box=box, max_travel=cell)
        except (NoConvergence, DegenerateNode, ValueError):
            continue
        if any(ln.nearest(p.r0)[1] < 2 * ds for ln in lines):
            continue
        try:
            line = trace_nodal_line(spec, t, p, ds, max_points, box, node_tol)
        except BranchTooLong as exc:
            line = exc.line
            line.warnings.append("branch truncated at max_points")
        except DegenerateNode:
            continue
        lines.append(line)
    return lines

"""X-points, X-lines, invariant-manifold branches and tube coordinates.

Everything here works with the frozen, regularized, co-moving flow

    F = Psi_R grad Psi_I - Psi_I grad Psi_R - V G,   G = |Psi|^2,

written in a node's local (u, v, w) frame.  It shares critical points and
trajectory curves with the co-moving Bohmian flow ``v - V`` but stays finite
at the node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import (ConvergedToNode, DegenerateApproximant, NoConvergence, OutsideTube, SingularSystem,
                     VortexLineError)
from .nodal import NodalLine, NodalPoint
from .vortex import FlowCoefficients, flow_coefficients, local_expansion, vfast_diagnostic
from .wavefield import WavefunctionSpec, eval_field, eval_polynomial_part, gaussian_exponent, probability_current

__all__ = [
    "XPoint",
    "XLine",
    "ManifoldBranch",
    "TubeCoordinates",
    "xpoint_scale",
    "frozen_comoving_flow",
    "frozen_bohmian_flow",
    "flow_jacobian",
    "xpoint_first_approx",
    "refine_xpoint",
    "grid_seed",
    "find_xpoint",
    "build_xline",
    "manifold_branches",
    "tube_transform",
    "comoving_field",
    "InvarianceReport",
    "xline_invariance",
    "reduced_arc_distance",
]


@dataclass
class XPoint:
    uvw: np.ndarray
    world: np.ndarray
    residual: float
    eigenvalues: np.ndarray  # dominant pair first (descending), then the weak one
    eig_unstable: np.ndarray  # local frame
    eig_stable: np.ndarray
    d_X: float
    jacobian: np.ndarray | None = None
    imag_max: float = 0.0
    asymmetry: float = 0.0
    iterations: int = 0
    mode: str = "plane"
    axial_residual: float = 0.0

    @property
    def R_X(self) -> float:
        """In-plane distance from the node."""
        return float(math.hypot(self.uvw[0], self.uvw[1]))

    @property
    def hyperbolic(self) -> bool:
        lam1, lam2 = self.eigenvalues[:2]
        return self.imag_max == 0.0 and lam1 > 0 > lam2

    @property
    def weak_third(self) -> bool:
        return abs(self.eigenvalues[2]) < min(abs(self.eigenvalues[0]), abs(self.eigenvalues[1]))


@dataclass
class XLine:
    """X-points along a nodal line; ``xpoints[i]`` is None where the solve failed."""

    line: NodalLine
    xpoints: list
    vfast: np.ndarray
    A: np.ndarray
    failures: dict = field(default_factory=dict)
    jumps: list = field(default_factory=list)

    @property
    def s(self) -> np.ndarray:
        return self.line.s

    @property
    def world(self) -> np.ndarray:
        return np.array([xp.world if xp is not None else np.full(3, np.nan) for xp in self.xpoints])

    @property
    def gap_fraction(self) -> float:
        return sum(xp is None for xp in self.xpoints) / max(len(self.xpoints), 1)

    def rows(self):
        """CSV rows ``s,x,y,z,u,v,w,lam1,lam2,lam3,dX,residual`` for solved nodes."""
        out = []
        for s, xp in zip(self.s, self.xpoints):
            if xp is None:
                continue
            out.append([s, *xp.world, *xp.uvw, *xp.eigenvalues, xp.d_X, xp.residual])
        return out


@dataclass
class ManifoldBranch:
    kind: str  # "stable" or "unstable"
    side: str  # "+" or "-"
    polyline: np.ndarray  # world coordinates
    termination: str  # spirals_to_node, limit_cycle, left_domain, step_limit
    turns: float = 0.0
    crossing_radii: np.ndarray | None = None

    def to_json(self) -> dict:
        return {"kind": self.kind, "side": self.side, "termination": self.termination, "turns": self.turns,
                "polyline": self.polyline.tolist()}


def xpoint_scale(spec: WavefunctionSpec, p: NodalPoint) -> float:
    """Natural size of the reduced flow near the node: |grad Psi(r0)|^2 times unit length."""
    f = eval_field(spec, p.r0, p.t)
    return float(np.sum(np.abs(f.grad) ** 2))


def _world_current(spec, x, t, weight: str = "psi"):
    """``(G, N)`` at world points, for Psi itself or (``weight="phi"``) its polynomial part."""
    cur = probability_current(spec, x, t)
    if weight == "phi":
        return cur.G, cur.N
    w = np.exp(2.0 * gaussian_exponent(spec, x))
    return cur.G * w, cur.N * w[..., None]


def frozen_comoving_flow(spec: WavefunctionSpec, p: NodalPoint, uvw, weight: str = "psi") -> np.ndarray:
    """Exact regularized co-moving flow at local points, frozen at the node's time.

    ``weight="phi"`` regularizes with the polynomial part instead of Psi; the
    two differ by the positive factor exp(2 sigma), so they share zeros and
    trajectory curves, but the phi form has no spurious near-zeros in the
    Gaussian tail and is what the root finder works with.
    """
    uvw = np.asarray(uvw, dtype=float)
    x = p.to_world(uvw)
    G, N = _world_current(spec, x, p.t, weight)
    R = p.frame.matrix
    out = N @ R.T
    V = p.V0 @ R.T
    out[..., 0] -= V[0] * G
    out[..., 1] -= V[1] * G
    return out


def frozen_bohmian_flow(spec: WavefunctionSpec, p: NodalPoint, uvw) -> np.ndarray:
    """Unregularized frozen co-moving velocity ``v - V`` in the local frame."""
    uvw = np.asarray(uvw, dtype=float)
    G, _ = _world_current(spec, p.to_world(uvw), p.t, "phi")
    return frozen_comoving_flow(spec, p, uvw, "phi") / G[..., None]


def flow_jacobian(spec: WavefunctionSpec, p: NodalPoint, uvw, h: float, weight: str = "psi") -> np.ndarray:
    """Central-difference Jacobian ``J[i, j] = dF_i / du_j`` of the frozen co-moving flow."""
    uvw = np.asarray(uvw, dtype=float)
    pts = np.concatenate([uvw + h * np.eye(3), uvw - h * np.eye(3)])
    vals = frozen_comoving_flow(spec, p, pts, weight)
    return ((vals[:3] - vals[3:]) / (2.0 * h)).T


def xpoint_first_approx(c: FlowCoefficients, Vu: float, Vv: float, tol: float = 1e-14) -> np.ndarray:
    """First approximant of the X-point from the quadratic coefficients."""
    if abs(Vv) <= tol * max(abs(Vu), 1.0):
        raise DegenerateApproximant("Vv = 0: the ratio v/u is undefined")
    s = -Vu / Vv
    den = c.C101 + s * c.C011
    if abs(den) <= tol:
        raise DegenerateApproximant("C101 + s_X C011 vanishes")
    cx = -(c.C200 + c.C020 * s * s + c.C110 * s) / den
    bx = c.B020 * s * s + c.B110 * s + c.B200 + c.B002 * cx * cx + c.B101 * cx
    # A_X multiplied through by s^2 so that s_X = 0 stays finite
    ax_s2 = c.A020 * s * s + s * (c.A110 + c.A011 * cx) + c.A200 + c.A002 * cx * cx
    if abs(bx) <= tol or abs(ax_s2) <= tol:
        raise DegenerateApproximant("A_X or B_X vanishes")
    u = -c.A / bx
    v = c.A * s * s / ax_s2
    return np.array([u, v, cx * u])


def _eigen_summary(J: np.ndarray):
    lam, vec = np.linalg.eig(J)
    order = np.argsort(-np.abs(lam))
    lam, vec = lam[order], vec[:, order]
    dominant = np.argsort(-lam[:2].real)
    lam[:2], vec[:, :2] = lam[:2][dominant], vec[:, :2][:, dominant]
    imag = float(np.max(np.abs(lam.imag)))
    unstable = np.real(vec[:, 0])
    stable = np.real(vec[:, 1])
    return lam.real.copy(), unstable / np.linalg.norm(unstable), stable / np.linalg.norm(stable), imag


def refine_xpoint(spec: WavefunctionSpec, p: NodalPoint, seed, x_tol: float | None = None, max_iter: int = 60,
                  scale: float | None = None, max_radius: float = 2.0, mode: str = "plane") -> XPoint:
    """Damped, step-limited Newton on the frozen co-moving flow from ``seed`` (local coordinates).

    ``mode="plane"`` solves ``F_u = F_v = 0`` inside the node's F-plane
    (w = 0) and reports the leftover ``F_w`` as ``axial_residual``;
    ``mode="full"`` solves all three components.  The residual and
    eigenvalues refer to the Psi-regularized flow; the iteration itself uses
    the phi form (same zeros).
    """
    if mode not in ("plane", "full"):
        raise ValueError(f"unknown mode {mode!r}")
    k = 2 if mode == "plane" else 3
    scale = xpoint_scale(spec, p) if scale is None else scale
    x_tol = 1e-10 * scale if x_tol is None else x_tol
    u = np.asarray(seed, dtype=float).copy()
    if mode == "plane":
        u[2] = 0.0
    seed_norm = float(np.linalg.norm(u))
    if seed_norm == 0:
        raise ConvergedToNode("seed sits on the node")

    def residual(point):
        F = frozen_comoving_flow(spec, p, point, "phi")
        w = math.exp(2.0 * float(gaussian_exponent(spec, p.to_world(point))))
        return F, float(np.linalg.norm(F[:k])) * w

    F, res = residual(u)
    it = 0
    while res >= x_tol:
        if it >= max_iter:
            raise NoConvergence(f"X-point Newton stalled at residual {res:.3g} (tol {x_tol:.3g})")
        it += 1
        r = float(np.linalg.norm(u))
        J = flow_jacobian(spec, p, u, 1e-4 * max(r, 1e-6), "phi")
        step = np.zeros(3)
        try:
            step[:k] = np.linalg.solve(J[:k, :k], -F[:k])
        except np.linalg.LinAlgError:
            raise NoConvergence("singular Jacobian in X-point Newton") from None
        limit = 0.5 * max(r, 1e-3)
        norm = float(np.linalg.norm(step))
        if norm > limit:
            step *= limit / norm
        lam = 1.0
        while True:
            trial = u + lam * step
            Ft, rt = residual(trial)
            if rt < res or lam < 1e-4:
                break
            lam *= 0.5
        u, F, res = trial, Ft, rt
        if np.linalg.norm(u) > max_radius:
            raise NoConvergence("X-point Newton left the search ball")
    d = float(np.linalg.norm(u))
    if d < 1e-6 * seed_norm:
        raise ConvergedToNode("Newton returned to the node")
    # the nodal line itself is a zero set of F; a genuine X-point has |phi|^2 ~ |grad phi|^2 d^2
    G, _ = _world_current(spec, p.to_world(u), p.t, "phi")
    grad2 = float(np.sum(np.abs(eval_polynomial_part(spec, p.r0, p.t).grad) ** 2))
    if G < 1e-4 * grad2 * d * d:
        raise ConvergedToNode("Newton converged onto the nodal set")
    J = flow_jacobian(spec, p, u, 1e-4 * d, "psi")
    if mode == "plane":
        # in-plane saddle of the F-plane flow; the axial rate is the third entry
        lam2, uns2, sta2, imag = _eigen_summary(J[:2, :2])
        lam = np.array([lam2[0], lam2[1], J[2, 2]])
        unstable, stable = np.append(uns2, 0.0), np.append(sta2, 0.0)
    else:
        lam, unstable, stable, imag = _eigen_summary(J)
    nJ = float(np.linalg.norm(J))
    asym = float(np.linalg.norm(J - J.T) / nJ) if nJ > 0 else 0.0
    axial = float(frozen_comoving_flow(spec, p, u)[2])
    return XPoint(u, p.to_world(u), res, lam, unstable, stable, d, J, imag, asym, it, mode, axial)


def grid_seed(spec: WavefunctionSpec, p: NodalPoint, radius: float, n: int = 61, exclude: float = 0.02) -> np.ndarray:
    """F-plane grid point where the co-moving velocity |v - V| is smallest, away from the node."""
    g = np.linspace(-radius, radius, n)
    U, V = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([U, V, np.zeros_like(U)], axis=-1).reshape(-1, 3)
    r = np.linalg.norm(pts, axis=1)
    pts = pts[r > exclude * radius]
    with np.errstate(divide="ignore", invalid="ignore"):
        merit = np.linalg.norm(frozen_bohmian_flow(spec, p, pts)[:, :2], axis=1)
    merit = np.where(np.isfinite(merit), merit, np.inf)
    return pts[int(np.argmin(merit))]


def find_xpoint(spec: WavefunctionSpec, p: NodalPoint, seeds=(), x_tol=None, grid_radius: float | None = None,
                max_radius: float = 2.0, mode: str = "plane"):
    """Refine from the given seeds, the first approximant and an F-plane grid seed; keep the
    root closest to the node.  Returns ``(XPoint, coefficients)``.

    The given seeds are tried first; the other two only when none of them
    converges (the grid seed only if the approximant also fails).
    """
    e = local_expansion(spec, p)
    c = flow_coefficients(e)
    scale = xpoint_scale(spec, p)
    V = math.hypot(e.Vu, e.Vv)
    radius = grid_radius if grid_radius is not None else (min(1.0, 2.0 / V) if V > 0 else 1.0)

    def approximant():
        try:
            return [xpoint_first_approx(c, e.Vu, e.Vv)]
        except DegenerateApproximant:
            return []

    errors = []
    stages = ([np.asarray(s_, dtype=float) for s_ in seeds], approximant, lambda: [grid_seed(spec, p, radius)])
    for stage in stages:
        found = []
        for cand in (stage() if callable(stage) else stage):
            if not np.all(np.isfinite(cand)) or np.linalg.norm(cand) > max_radius:
                continue
            try:
                found.append(refine_xpoint(spec, p, cand, x_tol=x_tol, scale=scale, max_radius=max_radius,
                                           mode=mode))
            except VortexLineError as exc:
                errors.append(str(exc))
        if found:
            return min(found, key=lambda xp: xp.d_X), c
    raise NoConvergence("; ".join(errors) or "no X-point found")


def build_xline(spec: WavefunctionSpec, line: NodalLine, x_tol_rel: float = 1e-10, mode: str = "plane",
                max_jump: float | None = None) -> XLine:
    """Sweep the nodes in order, seeding each Newton solve with its neighbour's X-point.

    A neighbour-seeded solution that lands more than ``max_jump`` (default
    5 ds) away from the previous X-point is re-solved from the fresh seeds and
    the closer of the two is kept; remaining jumps are flagged.
    """
    max_jump = 5.0 * line.ds if max_jump is None else max_jump
    xps, vf, As, failures, jumps = [], [], [], {}, []
    prev = None
    for i, p in enumerate(line.points):
        e = local_expansion(spec, p)
        vf.append(vfast_diagnostic(e))
        As.append(flow_coefficients(e).A)
        tol = x_tol_rel * xpoint_scale(spec, p)
        try:
            if prev is None:
                xp, _ = find_xpoint(spec, p, x_tol=tol, mode=mode)
            else:
                xp, _ = find_xpoint(spec, p, [p.to_local(prev.world)], x_tol=tol, mode=mode)
                if np.linalg.norm(xp.world - prev.world) > max_jump:
                    fresh, _ = find_xpoint(spec, p, x_tol=tol, mode=mode)
                    if np.linalg.norm(fresh.world - prev.world) < np.linalg.norm(xp.world - prev.world):
                        xp = fresh
        except VortexLineError as exc:
            failures[i] = str(exc)
            xps.append(None)
            prev = None
            continue
        if prev is not None and np.linalg.norm(xp.world - prev.world) > max_jump:
            jumps.append(i)
        xps.append(xp)
        prev = xp
    return XLine(line, xps, np.array(vf), np.array(As), failures, jumps)


# --- invariant manifolds -------------------------------------------------------------------------------------------


def _crossings(uv: np.ndarray):
    """Unwrapped polar angle about the node and the radii where it crosses multiples of 2 pi."""
    ang = np.unwrap(np.arctan2(uv[:, 1], uv[:, 0]))
    rad = np.hypot(uv[:, 0], uv[:, 1])
    rel = (ang - ang[0]) / (2.0 * math.pi)
    k = np.floor(rel) if rel[-1] >= 0 else np.ceil(rel)
    idx = np.nonzero(np.diff(k) != 0)[0]
    radii = []
    for i in idx:
        a, b = rel[i], rel[i + 1]
        target = max(k[i], k[i + 1]) if b > a else min(k[i], k[i + 1])
        f = (target - a) / (b - a) if b != a else 0.0
        radii.append(rad[i] + f * (rad[i + 1] - rad[i]))
    return abs(rel[-1]), np.array(radii)


def _classify(uv, d_X, exited, node_fraction):
    """Label a branch from its per-turn crossing radii.

    Around a node the averaged flow obeys dR/dtheta ~ f3 R^3, so a branch
    falling into the node has 1/R^2 growing linearly per turn (the radii
    decrease without a positive limit).  Radii whose decrements shrink
    geometrically settle on a cycle instead.
    """
    turns, radii = _crossings(uv)
    if exited:
        return "left_domain", turns, radii
    rad = np.hypot(uv[:, 0], uv[:, 1])
    if turns < 2 or len(radii) < 3:
        return "step_limit", turns, radii
    tail = radii[-6:]
    diffs = np.diff(tail)
    if np.all(diffs < 0) and rad[-1] < node_fraction * d_X and len(tail) < 4:
        return "spirals_to_node", turns, radii
    if len(tail) >= 4 and (np.all(diffs < 0) or np.all(diffs > 0)):
        q = diffs[1:] / diffs[:-1]
        inv = np.diff(1.0 / tail ** 2)
        algebraic = np.all(inv > 0) and np.ptp(inv) <= 0.5 * np.mean(inv)
        if np.all(diffs < 0) and algebraic:
            return "spirals_to_node", turns, radii
        if np.all((q > 0) & (q < 0.7)):
            return "limit_cycle", turns, radii
        if np.all(diffs < 0) and rad[-1] < node_fraction * d_X:
            return "spirals_to_node", turns, radii
    return "step_limit", turns, radii


def manifold_branches(spec: WavefunctionSpec, xp: XPoint, p: NodalPoint, eps: float | None = None,
                      arc_budget: float | None = None, domain_radius: float | None = None,
                      node_fraction: float = 0.5, rtol: float = 1e-9) -> list[ManifoldBranch]:
    """The four one-dimensional branches leaving the X-point, followed in arclength.

    Unstable branches run forward, stable branches backward.  For an
    F-plane X-point the branches stay in the F-plane (the axial component of
    the flow is dropped); otherwise the full 3-d frozen flow is used.  The
    polynomial-weighted flow is integrated: same curves, no Gaussian stall.  A branch that
    leaves the ball of ``domain_radius`` about the node is ``left_domain``;
    one whose per-turn radii shrink like the cubic normal form (or that gets
    within ``node_fraction * d_X``) is ``spirals_to_node``; per-turn radii
    settling geometrically on a nonzero value mark a ``limit_cycle``.
    """
    d = xp.d_X
    eps = 1e-5 * d if eps is None else eps
    arc_budget = 50.0 * d if arc_budget is None else arc_budget
    domain_radius = 5.0 * d if domain_radius is None else domain_radius
    planar = xp.mode == "plane"
    out = []
    for kind, vec, sign in (("unstable", xp.eig_unstable, 1.0), ("stable", xp.eig_stable, -1.0)):
        for side, s in (("+", 1.0), ("-", -1.0)):
            if planar:
                vec = np.array([vec[0], vec[1], 0.0]) / np.hypot(vec[0], vec[1])
            start = xp.uvw + s * eps * vec

            def rhs(_, y, sign=sign):
                F = frozen_comoving_flow(spec, p, y, "phi")
                if planar:
                    F[2] = 0.0
                n = float(np.linalg.norm(F))
                return sign * F / n if n > 0 else np.zeros(3)

            def leave(_, y):
                return float(np.linalg.norm(y)) - domain_radius

            leave.terminal = True
            sol = solve_ivp(rhs, (0.0, arc_budget), start, method="RK45", rtol=rtol, atol=1e-12 * d,
                            max_step=0.05 * d, events=leave)
            uvw = np.concatenate([xp.uvw[None, :], sol.y.T])
            exited = sol.status == 1
            term, turns, radii = _classify(uvw[:, :2], d, exited, node_fraction)
            out.append(ManifoldBranch(kind, side, p.to_world(uvw), term, turns, radii))
    return out


# --- tube coordinates ----------------------------------------------------------------------------------------------


def _aligned_frames(line: NodalLine) -> np.ndarray:
    """Frames with normals flipped where needed so neighbours agree in sign."""
    F = line.frames.copy()
    for i in range(1, len(F)):
        if F[i, 0] @ F[i - 1, 0] < 0:
            F[i, 0] *= -1.0
            F[i, 1] *= -1.0
    return F


class TubeCoordinates:
    """Curvilinear map ``x <-> (U, V, S)`` around a traced nodal line.

    ``S`` is the arclength of the foot point, ``U`` and ``V`` are the
    components of ``x - r(S)`` along the interpolated normal and binormal.
    """

    def __init__(self, line: NodalLine, radius: float | None = None):
        if len(line) < 4:
            raise ValueError("need at least four nodes for tube coordinates")
        self.line = line
        s = line.s
        pos = line.positions
        frames = _aligned_frames(line)
        self._s = s
        if line.closed:
            perimeter = s[-1] - s[0] + float(np.linalg.norm(pos[0] - pos[-1]))
            ss = np.append(s, s[0] + perimeter)
            self._r = CubicSpline(ss, np.vstack([pos, pos[:1]]), bc_type="periodic")
            nn = np.vstack([frames[:, 0], frames[:1, 0]])
            if nn[-1] @ nn[-2] < 0:
                # the frame does not close with the same orientation; fall back to natural ends
                self._n = CubicSpline(ss, nn)
            else:
                self._n = CubicSpline(ss, nn, bc_type="periodic")
            self._range = (ss[0], ss[-1])
            self._period = perimeter
        else:
            self._r = CubicSpline(s, pos)
            self._n = CubicSpline(s, frames[:, 0])
            self._range = (s[0], s[-1])
            self._period = None
        self._V = CubicSpline(s, line.velocities) if line.points[0].V0 is not None else None
        if radius is None:
            radii = [pt.R0_curv for pt in line.points]
            radius = 0.5 * min(min(radii), 1.0)
        self.radius = radius
        self.sigma = None  # set by attach_xline

    # frame along the spline
    def frame(self, S: float) -> np.ndarray:
        d = self._r(S, 1)
        tng = d / np.linalg.norm(d)
        n = self._n(S)
        n = n - (n @ tng) * tng
        n /= np.linalg.norm(n)
        return np.array([n, np.cross(tng, n), tng])

    def _wrap(self, S):
        if self._period is None:
            return S
        lo = self._range[0]
        return lo + (S - lo) % self._period

    def position(self, S: float) -> np.ndarray:
        return self._r(self._wrap(S))

    def node_velocity(self, S: float) -> np.ndarray:
        if self._V is None:
            raise ValueError("line carries no node velocities")
        return self._V(self._wrap(S))

    def foot(self, x, S0: float | None = None, tol: float = 1e-14, max_iter: int = 50) -> float:
        """Arclength of the foot of the normal dropped from ``x``."""
        x = np.asarray(x, dtype=float)
        if S0 is None:
            i, _ = self.line.nearest(x)
            S0 = self._s[i]
        S = S0
        for _ in range(max_iter):
            Sw = self._wrap(S)
            d = x - self._r(Sw)
            r1, r2 = self._r(Sw, 1), self._r(Sw, 2)
            g = d @ r1
            dg = -(r1 @ r1) + d @ r2
            if dg >= 0:
                raise OutsideTube("foot-point projection is ambiguous (beyond the curvature radius)")
            step = -g / dg
            S += step
            if abs(step) < tol * max(1.0, abs(S)):
                break
        else:
            raise OutsideTube("foot-point Newton did not converge")
        if self._period is None and not (self._range[0] - 1e-12 <= S <= self._range[1] + 1e-12):
            raise OutsideTube("foot point lies beyond the end of the line")
        return float(self._wrap(S))

    def forward(self, x, S0: float | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        S = self.foot(x, S0)
        d = x - self._r(S)
        if np.linalg.norm(d) > self.radius:
            raise OutsideTube(f"distance {np.linalg.norm(d):.3g} exceeds tube radius {self.radius:.3g}")
        fr = self.frame(S)
        return np.array([d @ fr[0], d @ fr[1], S])

    def inverse(self, UVS) -> np.ndarray:
        U, V, S = UVS
        fr = self.frame(S)
        return self._r(self._wrap(S)) + U * fr[0] + V * fr[1]

    def jacobian(self, x, S: float | None = None, h: float = 1e-6) -> np.ndarray:
        """``d(U, V, S)/d(x, y, z)`` at a world point."""
        x = np.asarray(x, dtype=float)
        S = self.foot(x) if S is None else S
        d = x - self._r(S)
        r1, r2 = self._r(S, 1), self._r(S, 2)
        dS = r1 / (r1 @ r1 - d @ r2)
        fr = self.frame(S)
        dfr = (self.frame(S + h) - self.frame(S - h)) / (2.0 * h)
        rows = [fr[k] + (-(r1 @ fr[k]) + d @ dfr[k]) * dS for k in (0, 1)]
        return np.array([rows[0], rows[1], dS])

    def attach_xline(self, xline: XLine) -> np.ndarray:
        """Build ``sigma``: node arclength as a function of the X-point's tube coordinate S_X.

        Returns the X-points' tube coordinates (NaN rows for gaps or points outside the tube).
        """
        coords = np.full((len(xline.xpoints), 3), np.nan)
        for i, xp in enumerate(xline.xpoints):
            if xp is None:
                continue
            try:
                coords[i] = self.forward(xp.world, S0=self._s[i])
            except OutsideTube:
                pass
        ok = np.isfinite(coords[:, 2])
        SX, s = coords[ok, 2], self._s[ok]
        if len(SX) < 2:
            raise ValueError("fewer than two X-points inside the tube")
        if self._period is not None:
            SX = self._range[0] + np.unwrap((SX - self._range[0]) * 2 * np.pi / self._period) * self._period / (2 * np.pi)
        order = np.argsort(SX)
        SX, s = SX[order], s[order]
        keep = np.concatenate([[True], np.diff(SX) > 0])
        self.sigma_kinks = int(np.count_nonzero(np.diff(s[keep]) <= 0))
        self.sigma = CubicSpline(SX[keep], s[keep]) if keep.sum() >= 4 else (
            lambda S, SX=SX[keep], s=s[keep]: np.interp(S, SX, s))
        return coords


def tube_transform(line: NodalLine, radius: float | None = None) -> TubeCoordinates:
    return TubeCoordinates(line, radius)


def comoving_field(tc: TubeCoordinates, spec: WavefunctionSpec, UVS, form: str = "exact",
                   regularized: bool = False) -> np.ndarray:
    """Co-moving field in tube coordinates, frozen at the line's time.

    ``form="exact"`` pushes the relative velocity ``v - V(sigma(S))`` through
    the chain rule, so it vanishes identically on the X-line.  ``form="literal"``
    pushes ``v`` through the chain rule and subtracts ``V . n`` and ``V . b``
    from the U and V components only; the two agree to leading order near the
    line and their difference measures the frame-interpolation error.
    ``regularized=True`` multiplies by |Psi|^2 so the result is comparable to
    the reduced flow.
    """
    if tc.sigma is None:
        raise ValueError("attach an X-line first")
    x = tc.inverse(UVS)
    S = float(UVS[2])
    t = tc.line.t
    G, N = _world_current(spec, x, t)
    if not G > 0:
        raise SingularSystem("field evaluated on a node")
    v = N / G
    s = float(tc.sigma(S))
    Vn = tc.node_velocity(s)
    J = tc.jacobian(x, S)
    if form == "exact":
        out = J @ (v - Vn)
    elif form == "literal":
        fr = tc.frame(s)
        out = J @ v
        out[0] -= Vn @ fr[0]
        out[1] -= Vn @ fr[1]
    else:
        raise ValueError(f"unknown form {form!r}")
    return out * G if regularized else out


@dataclass
class InvarianceReport:
    s: np.ndarray  # node arclength of every X-point inside the tube
    residual: np.ndarray  # |exact co-moving field| / scale, regularized
    literal: np.ndarray  # |literal co-moving field| / scale: frame-interpolation error
    x_tol_rel: float

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual)) if len(self.residual) else math.nan

    @property
    def frame_error(self) -> float:
        return float(np.max(self.literal)) if len(self.literal) else math.nan


def xline_invariance(spec: WavefunctionSpec, xline: XLine, tc: TubeCoordinates | None = None) -> InvarianceReport:
    """Evaluate the tube-coordinate co-moving field at every X-line sample.

    Invariance of the X-line means the exact field vanishes there up to the
    X-point tolerance; the literal field adds the frame-interpolation error.
    """
    tc = TubeCoordinates(xline.line) if tc is None else tc
    coords = tc.attach_xline(xline)
    s, res, lit = [], [], []
    for i, xp in enumerate(xline.xpoints):
        if xp is None or not np.isfinite(coords[i, 0]):
            continue
        sc = xpoint_scale(spec, xline.line.points[i])
        res.append(np.linalg.norm(comoving_field(tc, spec, coords[i], regularized=True)) / sc)
        lit.append(np.linalg.norm(comoving_field(tc, spec, coords[i], form="literal", regularized=True)) / sc)
        s.append(xline.line.points[i].s)
    x_tol_rel = max((xp.residual / xpoint_scale(spec, p) for xp, p in zip(xline.xpoints, xline.line.points)
                     if xp is not None), default=math.nan)
    return InvarianceReport(np.array(s), np.array(res), np.array(lit), x_tol_rel)


def reduced_arc_distance(spec: WavefunctionSpec, p: NodalPoint, uvw0, duration: float, n_samples: int = 100,
                         rtol: float = 1e-10) -> float:
    """Largest gap between an arc of the frozen co-moving velocity field and the same arc of
    the regularized field.

    The velocity field is integrated in time with ``dtau/dt = 1 / |Psi|^2``
    appended; the regularized field is integrated in ``tau`` over the same
    range.  Each regularized sample is compared with the velocity-field point
    of equal ``tau``, so the result bounds the Hausdorff distance of the two
    curves.
    """
    uvw0 = np.asarray(uvw0, dtype=float)

    def velocity(_, y):
        G, _ = _world_current(spec, p.to_world(y[:3]), p.t, "psi")
        return np.append(frozen_bohmian_flow(spec, p, y[:3]), 1.0 / G)

    def regular(_, y):
        return frozen_comoving_flow(spec, p, y, "psi")

    a = solve_ivp(velocity, (0.0, duration), np.append(uvw0, 0.0), method="DOP853", rtol=rtol, atol=1e-13,
                  dense_output=True)
    if a.status != 0:
        raise NoConvergence(f"velocity arc failed: {a.message}")
    tau_end = float(a.y[3, -1])
    taus = np.linspace(0.0, tau_end, n_samples)
    b = solve_ivp(regular, (0.0, tau_end), uvw0, method="DOP853", rtol=rtol, atol=1e-13,
                  t_eval=taus)
    if b.status != 0:
        raise NoConvergence(f"regularized arc failed: {b.message}")
    gap = 0.0
    for k, tau in enumerate(taus):
        t = brentq(lambda s: a.sol(s)[3] - tau, 0.0, duration, xtol=1e-15, rtol=1e-15) if 0 < k < n_samples - 1 else (
            0.0 if k == 0 else duration)
        gap = max(gap, float(np.linalg.norm(a.sol(t)[:3] - b.y[:, k])))
    return gap

"""Second-order flow around a moving node.

Coordinates are the node's local frame (u, v along the normal and binormal,
w along the tangent).  The wavefunction is expanded as
``sum (a_ijk + i b_ijk) u^i v^j w^k`` up to second order, the regularized
co-moving flow is truncated to quadratic terms, and the averaged cubic
coefficient <f3> decides whether trajectories spiral into or out of the node.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .errors import Blowup, NoConvergence, VortexLineError, ZeroRotation
from .nodal import NodalLine, NodalPoint, advance_node, node_at_arclength
from .wavefield import WavefunctionSpec, eval_field

__all__ = [
    "LocalExpansion",
    "FlowCoefficients",
    "SpiralPrediction",
    "HopfEvent",
    "LimitCycle",
    "local_expansion",
    "flow_coefficients",
    "frozen_quadratic_rhs",
    "cylindrical_coefficients",
    "f3_average",
    "e2_average",
    "spiral_prediction",
    "spiral_radius",
    "drift_envelope",
    "drift_numeric",
    "detect_hopf",
    "detect_limit_cycle",
    "return_map",
    "SpiralCheck",
    "spiral_check",
    "vfast_diagnostic",
    "NodeSummary",
    "summarize_node",
    "scan_line",
    "scan_time",
]

_FIRST = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
_SECOND = [(2, 0, 0), (0, 2, 0), (0, 0, 2), (1, 1, 0), (1, 0, 1), (0, 1, 1)]


@dataclass
class LocalExpansion:
    """Real Taylor coefficients of the polynomial part in the node frame.

    ``a[(i, j, k)]`` and ``b[(i, j, k)]`` are the real and imaginary parts of
    the coefficient of ``u^i v^j w^k``.
    """

    a: dict
    b: dict
    Vu: float
    Vv: float

    @classmethod
    def from_arrays(cls, value, grad, hess, Vu=0.0, Vv=0.0) -> "LocalExpansion":
        """From a complex value, gradient and Hessian already expressed in (u, v, w)."""
        a, b = {(0, 0, 0): float(np.real(value))}, {(0, 0, 0): float(np.imag(value))}
        for k, idx in enumerate(_FIRST):
            a[idx], b[idx] = float(grad[k].real), float(grad[k].imag)
        for idx in _SECOND:
            i, j = [axis for axis, n in enumerate(idx) for _ in range(n)]
            c = hess[i, j] * (0.5 if i == j else 1.0)
            a[idx], b[idx] = float(c.real), float(c.imag)
        return cls(a, b, float(Vu), float(Vv))

    def evaluate(self, uvw) -> np.ndarray:
        """The second-order polynomial at local points."""
        uvw = np.asarray(uvw, dtype=float)
        u, v, w = uvw[..., 0], uvw[..., 1], uvw[..., 2]
        out = np.zeros(u.shape, dtype=complex)
        for (i, j, k) in self.a:
            out = out + (self.a[i, j, k] + 1j * self.b[i, j, k]) * u**i * v**j * w**k
        return out


@dataclass
class FlowCoefficients:
    A: float
    A200: float
    A020: float
    A002: float
    A110: float
    A011: float
    B200: float
    B020: float
    B002: float
    B101: float
    B110: float
    C200: float
    C020: float
    C011: float
    C101: float
    C110: float

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class SpiralPrediction:
    f3_avg: float
    A: float
    sense: str
    node_type: str
    drift_slope: float


def local_expansion(spec: WavefunctionSpec, p: NodalPoint) -> LocalExpansion:
    """Rotate the analytic gradient and Hessian of Psi into the node frame."""
    f = eval_field(spec, p.r0, p.t)
    R = p.frame.matrix
    grad = R @ f.grad
    hess = R @ f.hess @ R.T
    V = p.V0 if p.V0 is not None else np.zeros(3)
    return LocalExpansion.from_arrays(f.psi, grad, hess, V @ R[0], V @ R[1])


def flow_coefficients(e: LocalExpansion) -> FlowCoefficients:
    """Quadratic coefficients of the regularized co-moving flow.

    Terms are grouped so that the paired coefficients are computed from the
    same products with opposite signs, which makes A011 = -B101,
    C101 = -2 A002 and C011 = -2 B002 hold exactly in floating point.
    """
    a, b = e.a, e.b
    Vu, Vv = e.Vu, e.Vv
    a100, a010, b100, b010 = a[1, 0, 0], a[0, 1, 0], b[1, 0, 0], b[0, 1, 0]
    a200, a020, a002, a110, a101, a011 = (a[k] for k in _SECOND)
    b200, b020, b002, b110, b101, b011 = (b[k] for k in _SECOND)
    g11 = a100 * a100 + b100 * b100
    g22 = a010 * a010 + b010 * b010
    g12 = a100 * a010 + b100 * b010

    p1 = a010 * b101 - a101 * b010
    p2 = a011 * b100 - a100 * b011
    q_u = a002 * b100 - a100 * b002
    q_v = a002 * b010 - a010 * b002
    return FlowCoefficients(
        A=a100 * b010 - a010 * b100,
        A200=a100 * b200 - a200 * b100 - Vu * g11,
        A020=a010 * b110 + a020 * b100 - a100 * b020 - a110 * b010 - Vu * g22,
        A002=q_u,
        A110=2.0 * (a010 * b200 - a200 * b010) - 2.0 * Vu * g12,
        A011=p1 + p2,
        B200=a100 * b110 - a110 * b100 + a200 * b010 - a010 * b200 - Vv * g11,
        B020=a010 * b020 - a020 * b010 - Vv * g22,
        B002=q_v,
        B101=(-p1) + (-p2),
        B110=2.0 * (a100 * b020 - a020 * b100) - 2.0 * Vv * g12,
        C200=a100 * b101 - a101 * b100,
        C020=a010 * b011 - a011 * b010,
        C011=-2.0 * q_v,
        C101=-2.0 * q_u,
        C110=a010 * b101 - a101 * b010 + a100 * b011 - a011 * b100,
    )


def frozen_quadratic_rhs(c: FlowCoefficients, uvw, drop_w2: bool = False) -> np.ndarray:
    """Truncated reduced flow ``(du, dv, dw)/dtau``; ``drop_w2`` removes the A002 w^2, B002 w^2 terms."""
    uvw = np.asarray(uvw, dtype=float)
    u, v, w = uvw[..., 0], uvw[..., 1], uvw[..., 2]
    ww = 0.0 if drop_w2 else w * w
    du = -c.A * v + c.A200 * u * u + c.A020 * v * v + c.A002 * ww + c.A110 * u * v + c.A011 * v * w
    dv = c.A * u + c.B200 * u * u + c.B020 * v * v + c.B002 * ww + c.B101 * u * w + c.B110 * u * v
    dw = c.C200 * u * u + c.C020 * v * v + c.C110 * u * v + c.C101 * u * w + c.C011 * v * w
    return np.stack([du, dv, dw], axis=-1)


def cylindrical_coefficients(c: FlowCoefficients, phi):
    """Trigonometric coefficients of the flow in (R, phi, w).

    ``dR/dtau = c2 R^2``, ``dphi/dtau = A + d1 R + B101 w``,
    ``dw/dtau = e2 R^2 + k2 R w`` (the w^2 terms excluded).
    """
    cs, sn = np.cos(phi), np.sin(phi)
    qu = c.A200 * cs * cs + c.A020 * sn * sn + c.A110 * cs * sn
    qv = c.B200 * cs * cs + c.B020 * sn * sn + c.B110 * cs * sn
    c2 = cs * qu + sn * qv
    d1 = cs * qv - sn * qu
    e2 = c.C200 * cs * cs + c.C020 * sn * sn + c.C110 * cs * sn
    k2 = c.C101 * cs + c.C011 * sn
    return c2, d1, e2, k2


def f3_average(c: FlowCoefficients) -> float:
    if c.A == 0:
        raise ZeroRotation("A = 0: the node is not a linear centre")
    num = ((c.A110 + 2.0 * c.B020) * c.A020 + c.A200 * (c.A110 - 2.0 * c.B200)
           - c.B110 * (c.B020 + c.B200))
    return num / (8.0 * c.A * c.A)


def e2_average(c: FlowCoefficients, n: int = 64) -> float:
    """Mean of e2 over a turn (trapezoid rule, exact for this trigonometric polynomial)."""
    phi = 2.0 * math.pi * np.arange(n) / n
    return float(np.mean(cylindrical_coefficients(c, phi)[2]))


def spiral_prediction(c: FlowCoefficients) -> SpiralPrediction:
    f3 = f3_average(c)
    product = f3 * c.A
    if product < 0:
        node_type = "attractor"
    elif product > 0:
        node_type = "repellor"
    else:
        node_type = "center"
    slope = e2_average(c) / product if product != 0 else math.nan
    sense = "counterclockwise" if c.A > 0 else "clockwise"
    return SpiralPrediction(f3, c.A, sense, node_type, slope)


def spiral_radius(R0: float, phi0: float, phi, f3_avg: float):
    """Averaged radius ``R0 / sqrt(1 - 2 R0^2 <f3> (phi - phi0))``."""
    den = 1.0 - 2.0 * R0 * R0 * f3_avg * (np.asarray(phi, dtype=float) - phi0)
    if np.any(den <= 0):
        raise Blowup("spiral radius diverges before the requested angle")
    return R0 / np.sqrt(den)


def drift_envelope(w0: float, R, R0: float, e2_avg: float, f3_avg: float, A: float):
    if A * f3_avg == 0:
        raise ZeroRotation("the logarithmic drift envelope needs A <f3> != 0")
    return w0 + e2_avg / (f3_avg * A) * np.log(np.asarray(R, dtype=float) / R0)


def drift_numeric(c: FlowCoefficients, R0: float, phi0: float, w0: float, tau: float,
                  points_per_turn: int = 64) -> float:
    """w(tau) from the linear equation ``dw/dtau = e2 R^2 + k2 R w`` along the averaged solution.

    The averaged radius and angle are substituted and the integrating factor
    ``exp(int k2 R)`` is evaluated by cumulative trapezoid quadrature.
    """
    from scipy.integrate import cumulative_trapezoid

    if c.A == 0:
        raise ZeroRotation("A = 0")
    f3 = f3_average(c)
    turns = abs(c.A * tau) / (2.0 * math.pi)
    n = max(2048, int(points_per_turn * turns) + 1)
    taus = np.linspace(0.0, tau, n)
    phis = phi0 + c.A * taus
    R = spiral_radius(R0, phi0, phis, f3)
    _, _, e2, k2 = cylindrical_coefficients(c, phis)
    K = cumulative_trapezoid(k2 * R, taus, initial=0.0)
    integral = cumulative_trapezoid(e2 * R * R * np.exp(-K), taus, initial=0.0)
    return float(np.exp(K[-1]) * (w0 + integral[-1]))


@dataclass
class HopfEvent:
    parameter: float
    kind: str  # "space" or "time"
    bracket: tuple[float, float]
    f3_before: float
    f3_after: float


def detect_hopf(scan, kind: str = "space", evaluate: Callable[[float], float] | None = None,
                tol: float = 1e-10) -> list[HopfEvent]:
    """Sign changes of <f3> along an ordered scan of ``(parameter, f3)`` pairs.

    With ``evaluate`` each bracket is refined by bisection; otherwise the
    root is placed by linear interpolation inside the bracket.
    """
    if kind not in ("space", "time"):
        raise ValueError("kind must be 'space' or 'time'")
    pairs = [(float(p), float(f)) for p, f in scan if math.isfinite(f)]
    events = []
    for (p0, f0), (p1, f1) in zip(pairs[:-1], pairs[1:]):
        if f0 == 0.0 or f0 * f1 >= 0:
            continue
        lo, hi, flo = p0, p1, f0
        if evaluate is not None:
            while abs(hi - lo) > tol:
                mid = 0.5 * (lo + hi)
                fm = evaluate(mid)
                if fm == 0.0:
                    lo = hi = mid
                    break
                if (fm > 0) == (flo > 0):
                    lo, flo = mid, fm
                else:
                    hi = mid
            root = 0.5 * (lo + hi)
        else:
            root = p0 - f0 * (p1 - p0) / (f1 - f0)
        events.append(HopfEvent(root, kind, (p0, p1), f0, f1))
    return events


def return_map(planar_rhs: Callable[[np.ndarray], np.ndarray], R: float, rtol: float = 1e-11,
               phi0: float = 0.0) -> float:
    """Radius after one full turn starting from polar point ``(R, phi0)``."""

    def rhs(_, y):
        duv = planar_rhs(y[:2])
        r2 = y[0] * y[0] + y[1] * y[1]
        return [duv[0], duv[1], (y[0] * duv[1] - y[1] * duv[0]) / r2]

    y0 = [R * math.cos(phi0), R * math.sin(phi0), 0.0]
    omega0 = rhs(0.0, y0)[2]
    if omega0 == 0:
        raise ZeroRotation("no rotation on the section")
    target = 2.0 * math.pi * math.copysign(1.0, omega0)

    def turn(_, y):
        return y[2] - target

    turn.terminal = True
    period_guess = 2.0 * math.pi / abs(omega0)
    sol = solve_ivp(rhs, (0.0, 50.0 * period_guess), y0, events=turn, rtol=rtol, atol=1e-14 * max(R, 1e-300),
                    method="DOP853")
    if not sol.t_events[0].size:
        raise NoConvergence("orbit did not complete a turn")
    y = sol.y_events[0][0]
    return float(math.hypot(y[0], y[1]))


@dataclass
class SpiralCheck:
    R0: float
    numeric: float  # per-turn radius change, averaged over start angles
    predicted: float
    sense: int  # +1 counterclockwise, -1 clockwise (sign of the angular rate)

    @property
    def rel_error(self) -> float:
        return abs(self.numeric - self.predicted) / abs(self.predicted)


def spiral_check(c: FlowCoefficients, R0: float, n_phase: int = 8) -> SpiralCheck:
    """Integrate the in-plane frozen quadratic flow for one turn and compare with the averaged law.

    The per-turn change is averaged over ``n_phase`` equally spaced start
    angles; this removes the phase-dependent offset between the true and the
    averaged radius, which is first order in ``R0``.
    """
    f3 = f3_average(c)

    def rhs(y):
        return frozen_quadratic_rhs(c, [y[0], y[1], 0.0])[:2]

    phases = 2.0 * math.pi * np.arange(n_phase) / n_phase
    numeric = float(np.mean([return_map(rhs, R0, phi0=ph) for ph in phases])) - R0
    turn = 2.0 * math.pi * math.copysign(1.0, c.A)
    predicted = float(spiral_radius(R0, 0.0, turn, f3)) - R0
    sense = int(np.sign(rhs(np.array([R0, 0.0]))[1]))
    return SpiralCheck(R0, numeric, predicted, sense)


@dataclass
class LimitCycle:
    radius: float
    slope: float
    stability: str  # "attractor" or "repellor" in forward time


def detect_limit_cycle(planar_rhs: Callable[[np.ndarray], np.ndarray], search_radius: float, n_scan: int = 40,
                       r_min: float | None = None, tol: float = 1e-9) -> LimitCycle | None:
    """Fixed point of the Poincare return map on the positive u-axis.

    The displacement ``P(R) - R`` is scanned on ``(r_min, search_radius]``;
    the first sign change is refined by bisection.  Returns None when the
    displacement keeps one sign (no cycle in range).
    """
    if r_min is None:
        r_min = search_radius / n_scan
    radii = np.linspace(r_min, search_radius, n_scan)
    disp = [return_map(planar_rhs, r) - r for r in radii]
    for (r0, d0), (r1, d1) in zip(zip(radii, disp), zip(radii[1:], disp[1:])):
        if d0 == 0 or d0 * d1 < 0:
            lo, hi, dlo = r0, r1, d0
            while hi - lo > tol * search_radius:
                mid = 0.5 * (lo + hi)
                dm = return_map(planar_rhs, mid) - mid
                if (dm > 0) == (dlo > 0):
                    lo, dlo = mid, dm
                else:
                    hi = mid
            rstar = 0.5 * (lo + hi)
            h = 1e-4 * rstar
            slope = (return_map(planar_rhs, rstar + h) - return_map(planar_rhs, rstar - h)) / (2 * h)
            return LimitCycle(rstar, slope, "attractor" if slope < 1 else "repellor")
    return None


def vfast_diagnostic(e: LocalExpansion) -> float:
    """Fast-node margin; values above 1 mean the node outruns its second-order structure."""
    first = [abs(e.a[k]) for k in ((1, 0, 0), (0, 1, 0))] + [abs(e.b[k]) for k in ((1, 0, 0), (0, 1, 0))]
    second = [abs(e.a[k]) for k in _SECOND] + [abs(e.b[k]) for k in _SECOND]
    if max(second) == 0:
        return math.inf if max(abs(e.Vu), abs(e.Vv)) > 0 else 0.0
    return max(abs(e.Vu), abs(e.Vv)) * min(first) / max(second)


@dataclass
class NodeSummary:
    s: float
    A: float
    f3: float
    Vu: float
    Vv: float
    vfast: float
    node_type: str
    hopf_flag: bool = False


def _f3_or_nan(c: FlowCoefficients) -> float:
    try:
        return f3_average(c)
    except ZeroRotation:
        return math.nan


def summarize_node(spec: WavefunctionSpec, p: NodalPoint) -> NodeSummary:
    e = local_expansion(spec, p)
    c = flow_coefficients(e)
    f3 = _f3_or_nan(c)
    if not math.isfinite(f3):
        kind = "degenerate"
    else:
        kind = spiral_prediction(c).node_type
    return NodeSummary(p.s, c.A, f3, e.Vu, e.Vv, vfast_diagnostic(e), kind)


def scan_line(spec: WavefunctionSpec, line: NodalLine, refine: bool = True, tol: float = 1e-8):
    """Per-node summaries along a traced line plus the space-type Hopf events between nodes.

    A node's ``hopf_flag`` is set when <f3> changes sign between it and the
    next node; with ``refine`` the crossing is located by bisection on nodes
    re-solved at intermediate arclengths.
    """
    rows = [summarize_node(spec, p) for p in line.points]
    for a, b in zip(rows[:-1], rows[1:]):
        if a.f3 * b.f3 < 0:
            a.hopf_flag = True

    def f3_at(s):
        return _f3_or_nan(flow_coefficients(local_expansion(spec, node_at_arclength(spec, line, s))))

    events = detect_hopf([(r.s, r.f3) for r in rows], "space", f3_at if refine else None, tol)
    return rows, events


def scan_time(spec: WavefunctionSpec, start: NodalPoint, times, tol: float = 1e-8):
    """<f3> at one node followed through ``times`` (``advance_node``).

    ``start`` is the node at or before ``times[0]``.  Returns ``(times, f3
    values, time-type events, followed nodes)``; once the node is lost the
    remaining entries are NaN / None.
    """
    times = np.asarray(times, dtype=float)
    nodes: list[NodalPoint | None] = []
    f3s = []
    p = start
    for t in times:
        if p is not None and t != p.t:
            try:
                p = advance_node(spec, p, float(t))
            except (VortexLineError, np.linalg.LinAlgError):
                p = None
        nodes.append(p)
        f3s.append(_f3_or_nan(flow_coefficients(local_expansion(spec, p))) if p is not None else math.nan)

    def f3_at(t):
        k = max(i for i, tk in enumerate(times) if tk <= t and nodes[i] is not None)
        return _f3_or_nan(flow_coefficients(local_expansion(spec, advance_node(spec, nodes[k], t))))

    events = detect_hopf(list(zip(times, f3s)), "time", f3_at, tol)
    return times, np.array(f3s), events, nodes

import math

import numpy as np
import pytest

from vortexline.errors import NoConvergence
from vortexline.nodal import (NodalLine, advance_node, find_nodal_point, foot_node, frenet_frame, node_at_arclength,
                              nodal_velocity, solve_in_plane, trace_nodal_line)
from vortexline.wavefield import WavefunctionSpec, eval_polynomial_part

# Psi_100 + i Psi_010: nodal line is the z-axis at every time
STRAIGHT = WavefunctionSpec.from_modes([(1.0, (1, 0, 0)), (1j, (0, 1, 0))])


def _ring_spec():
    # H2(x) + H2(y) = 4 (x^2 + y^2) - 4 (equal mode norms), imaginary part ~ z: the unit circle at t = 0
    return WavefunctionSpec.from_modes([(1.0, (2, 0, 0)), (1.0, (0, 2, 0)), (1j, (0, 0, 1))])


def test_straight_vortex_traced():
    start = find_nodal_point(STRAIGHT, 0.0, [0.05, -0.03, 0.2])
    line = trace_nodal_line(STRAIGHT, 0.0, start, ds=0.1, box=((-2, -2, -2), (2, 2, 2)))
    pos = line.positions
    assert np.max(np.abs(pos[:, :2])) < 1e-12
    assert np.allclose(np.abs(line.tangents[:, 2]), 1.0)
    assert line.termination == ("box_exit", "box_exit")
    assert 4.0 - 2 * line.ds <= line.length <= 4.0


def test_ring_is_closed_unit_circle():
    spec = _ring_spec()
    start = find_nodal_point(spec, 0.0, [0.9, 0.1, 0.05])
    line = trace_nodal_line(spec, 0.0, start, ds=0.05)
    assert line.closed
    r = np.linalg.norm(line.positions[:, :2], axis=1)
    np.testing.assert_allclose(r, 1.0, atol=1e-12)
    np.testing.assert_allclose(line.positions[:, 2], 0.0, atol=1e-12)
    assert line.length == pytest.approx(2 * math.pi, abs=0.06)
    # curvature radius 1 and a Frenet frame whose normal points to the centre
    mid = line.points[len(line) // 2]
    assert mid.R0_curv == pytest.approx(1.0, rel=2e-3)
    assert mid.frame.kind == "frenet"
    np.testing.assert_allclose(mid.frame.normal, -mid.r0 / np.linalg.norm(mid.r0), atol=2e-3)


def test_frames_orthonormal_and_tangent(lines_t4, spec):
    for line in lines_t4:
        for p in line.points[::17]:
            R = p.frame.matrix
            np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(R) == pytest.approx(1.0)
            f = eval_polynomial_part(spec, p.r0, p.t)
            assert abs(f.grad.real @ p.tangent) < 1e-8 * np.linalg.norm(f.grad.real)
            assert abs(f.grad.imag @ p.tangent) < 1e-8 * np.linalg.norm(f.grad.imag)


def test_node_velocity_matches_finite_difference(lines_t4, spec):
    p = lines_t4[1].points[120]
    dt = 1e-6
    r_plus = solve_in_plane(spec, p.t + dt, p.r0, p.tangent)
    r_minus = solve_in_plane(spec, p.t - dt, p.r0, p.tangent)
    np.testing.assert_allclose(nodal_velocity(spec, p), (r_plus - r_minus) / (2 * dt), rtol=1e-6)
    assert abs(p.V0 @ p.tangent) < 1e-12 * np.linalg.norm(p.V0)


def test_foot_node_contains_point(lines_t4, spec):
    p = lines_t4[2].points[60]
    x = p.to_world([0.07, -0.04, 0.0])
    q = foot_node(spec, p.t, x + 0.01 * p.tangent, p.r0)
    assert abs((x + 0.01 * p.tangent - q.r0) @ q.tangent) < 1e-12
    f = eval_polynomial_part(spec, q.r0, q.t)
    assert abs(f.psi) < 1e-12 * np.linalg.norm(f.grad)


def test_node_at_arclength_interpolates(lines_t4, spec):
    line = lines_t4[1]
    s_mid = 0.5 * (line.points[40].s + line.points[41].s)
    q = node_at_arclength(spec, line, s_mid)
    assert np.linalg.norm(q.r0 - 0.5 * (line.points[40].r0 + line.points[41].r0)) < line.ds
    f = eval_polynomial_part(spec, q.r0, q.t)
    assert abs(f.psi) < 1e-12 * np.linalg.norm(f.grad)


def test_advance_node_follows_velocity(lines_t4, spec):
    p = lines_t4[1].points[100]
    q = advance_node(spec, p, p.t + 1e-3)
    np.testing.assert_allclose((q.r0 - p.r0) / 1e-3, p.V0, rtol=1e-2, atol=1e-2 * np.linalg.norm(p.V0))


def test_frenet_frame_on_synthetic_helix():
    s = np.linspace(0, 4 * math.pi, 801)
    helix = np.column_stack([np.cos(s), np.sin(s), 0.5 * s])
    line = NodalLine.from_curve(helix)
    fr = frenet_frame(line, line.s[400])
    # helix normal points to the axis
    p = helix[400]
    np.testing.assert_allclose(fr.normal, -np.array([p[0], p[1], 0.0]), atol=1e-4)


def test_no_node_raises():
    ground = WavefunctionSpec.from_modes([(1.0, (0, 0, 0))])
    with pytest.raises(NoConvergence):
        find_nodal_point(ground, 0.0, [0.1, 0.2, 0.3])

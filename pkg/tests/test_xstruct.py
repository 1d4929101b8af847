import dataclasses

import numpy as np
import pytest

from vortexline.errors import DegenerateApproximant, OutsideTube
from vortexline.nodal import NodalLine
from vortexline.vortex import flow_coefficients, local_expansion
from vortexline.xstruct import (TubeCoordinates, build_xline, find_xpoint, frozen_comoving_flow,
                                manifold_branches, reduced_arc_distance, refine_xpoint, xline_invariance,
                                xpoint_first_approx, xpoint_scale)


@pytest.fixture(scope="module")
def node(lines_t4):
    return lines_t4[1].points[120]


@pytest.fixture(scope="module")
def xline1(spec, lines_t4):
    return build_xline(spec, lines_t4[1])


def test_xpoint_is_a_zero_of_the_plane_flow(spec, node):
    xp, _ = find_xpoint(spec, node)
    scale = xpoint_scale(spec, node)
    assert xp.residual < 1e-10 * scale
    F = frozen_comoving_flow(spec, node, xp.uvw)
    assert np.linalg.norm(F[:2]) < 1e-10 * scale
    assert xp.uvw[2] == 0.0 and xp.mode == "plane"
    assert xp.hyperbolic


def test_full_mode_zero(spec, node):
    xp, _ = find_xpoint(spec, node, mode="full")
    assert np.linalg.norm(frozen_comoving_flow(spec, node, xp.uvw)) < 1e-10 * xpoint_scale(spec, node)


def test_first_approximant_near_refined(spec, node):
    V = node.frame.matrix @ node.V0
    fast = dataclasses.replace(node, V0=node.V0 * 20)
    c20 = flow_coefficients(local_expansion(spec, fast))
    first = xpoint_first_approx(c20, 20 * V[0], 20 * V[1])
    xp = refine_xpoint(spec, fast, first)
    assert np.linalg.norm(first[:2] - xp.uvw[:2]) < 0.1 * xp.d_X


def test_first_approximant_degenerate(spec, node):
    c = flow_coefficients(local_expansion(spec, node))
    with pytest.raises(DegenerateApproximant):
        xpoint_first_approx(c, 1.0, 0.0)


def test_speed_sweep_shrinks_xpoint(spec, node):
    """x10 node speed: about x10 closer X-point and x10 smaller eigenvalue defect."""
    d, defect = [], []
    for f in (1.0, 10.0, 100.0):
        q = dataclasses.replace(node, V0=node.V0 * f)
        A = flow_coefficients(local_expansion(spec, q)).A
        xp, _ = find_xpoint(spec, q)
        d.append(xp.d_X)
        defect.append(abs(xp.eigenvalues[0] * xp.eigenvalues[1] + A * A) / (A * A))
    assert d[0] / d[1] == pytest.approx(10.0, rel=0.05)
    assert d[1] / d[2] == pytest.approx(10.0, rel=0.05)
    assert defect[0] > defect[1] > defect[2]
    assert defect[1] / defect[2] == pytest.approx(10.0, rel=0.2)


def test_xline_continuous(xline1):
    assert xline1.gap_fraction < 0.05
    assert not xline1.jumps
    w = xline1.world[[xp is not None for xp in xline1.xpoints]]
    steps = np.linalg.norm(np.diff(w, axis=0), axis=1)
    assert steps.max() < 5 * xline1.line.ds


def test_manifold_branch_accounting(spec, lines_t4, xline1):
    i = 200
    br = manifold_branches(spec, xline1.xpoints[i], lines_t4[1].points[i])
    assert len(br) == 4
    kinds = [b.termination for b in br]
    assert kinds.count("left_domain") == 3
    into = [b for b in br if b.termination in ("spirals_to_node", "limit_cycle")]
    assert len(into) == 1 and into[0].turns > 2


def test_tube_coordinates_round_trip(lines_t4):
    tc = TubeCoordinates(lines_t4[1])
    p = lines_t4[1].points[150]
    x = p.r0 + 0.05 * p.frame.normal - 0.02 * p.frame.binormal
    UVS = tc.forward(x)
    np.testing.assert_allclose(tc.inverse(UVS), x, atol=1e-12)
    J = tc.jacobian(x)
    h = 1e-6
    fd = np.column_stack([(tc.forward(x + h * e, UVS[2]) - tc.forward(x - h * e, UVS[2])) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(J, fd, atol=1e-5)
    with pytest.raises(OutsideTube):
        tc.forward(p.r0 + 2.0 * p.frame.normal)


def test_tube_on_circle():
    th = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    circle = NodalLine.from_curve(np.column_stack([np.cos(th), np.sin(th), 0 * th]), closed=True)
    tc = TubeCoordinates(circle, radius=0.5)
    UVS = tc.forward([1.2, 0.0, 0.1])
    assert np.hypot(UVS[0], UVS[1]) == pytest.approx(np.hypot(0.2, 0.1), abs=1e-9)


def test_xline_invariance_full_mode(spec, lines_t4):
    xl = build_xline(spec, lines_t4[0], mode="full")
    rep = xline_invariance(spec, xl)
    assert len(rep.s) > 0.9 * len(xl.xpoints)
    assert rep.max_residual < 10 * 1e-10


def test_reduced_system_same_curves(spec, lines_t4):
    p = lines_t4[1].points[100]
    assert reduced_arc_distance(spec, p, np.array([0.1, -0.05, 0.03]), 0.03) < 1e-6

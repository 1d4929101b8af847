import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from vortexline.chaos import DeviationSeries, finite_time_lcn
from vortexline.dynamics import bohmian_velocity
from vortexline.output import fmt
from vortexline.vortex import LocalExpansion, f3_average, flow_coefficients, spiral_radius
from vortexline.wavefield import WavefunctionSpec

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
seeds = st.integers(0, 2**32 - 1)


def _expansion(seed, phase=0.0, scale=1.0, angle=0.0, V=(0.4, -0.7)):
    rng = np.random.default_rng(seed)
    grad = rng.normal(size=3) + 1j * rng.normal(size=3)
    H = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    H = H + H.T
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    z = scale * np.exp(1j * phase)
    Vr = R[:2, :2] @ np.asarray(V)
    return LocalExpansion.from_arrays(0.0, z * (R @ grad), z * (R @ H @ R.T), *Vr)


@given(seeds)
def test_coefficient_symmetries_exact(seed):
    c = flow_coefficients(_expansion(seed))
    assert c.A011 == -c.B101
    assert c.C101 == -2.0 * c.A002
    assert c.C011 == -2.0 * c.B002


@settings(max_examples=50)
@given(seeds, st.floats(0, 2 * math.pi), st.floats(0.1, 10.0), st.floats(0, 2 * math.pi))
def test_f3_invariant_under_phase_scale_and_rotation(seed, phase, scale, angle):
    base = flow_coefficients(_expansion(seed))
    if abs(base.A) < 1e-3:
        return
    other = flow_coefficients(_expansion(seed, phase, scale, angle))
    assert math.isclose(f3_average(other), f3_average(base), rel_tol=1e-8, abs_tol=1e-10)
    assert math.isclose(other.A, scale**2 * base.A, rel_tol=1e-10)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trip(x):
    assert float(fmt(x)) == x


@given(st.lists(finite, min_size=1, max_size=200), st.floats(1e-3, 1.0))
def test_lcn_identity(alphas, t0):
    a = np.array(alphas)
    k = np.arange(1, len(a) + 1)
    s = DeviationSeries(t0 * k, a, np.cumsum(a) / (k * t0), t0)
    kappa = len(a)
    assert math.isclose(finite_time_lcn(s, kappa), float(np.sum(a)) / (kappa * t0), rel_tol=1e-12, abs_tol=1e-12)


@given(st.floats(1e-3, 0.1), st.floats(-5, 5), st.floats(0, 20))
def test_spiral_inverse_square_linear(R0, f3, dphi):
    if 1 - 2 * R0 * R0 * f3 * dphi <= 1e-6:
        return
    R = spiral_radius(R0, 0.0, dphi, f3)
    assert math.isclose(1 / R**2, 1 / R0**2 - 2 * f3 * dphi, rel_tol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_velocity_invariant_under_global_phase(theta, x, y, z):
    modes = [(1.0, (0, 0, 0)), (0.5 + 0.3j, (1, 0, 1)), (0.2j, (0, 1, 2))]
    a = WavefunctionSpec.from_modes(modes, (1.0, 2.0, 1.5))
    b = WavefunctionSpec.from_modes([(c * np.exp(1j * theta), q) for c, q in modes], (1.0, 2.0, 1.5))
    va = bohmian_velocity(a, [x, y, z], 0.7)
    vb = bohmian_velocity(b, [x, y, z], 0.7)
    np.testing.assert_allclose(va, vb, rtol=1e-9, atol=1e-12)

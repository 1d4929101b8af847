import numpy as np
import pytest

from vortexline.dynamics import (IntegratorOptions, bohmian_velocity, integrate_trajectory, integrate_with_deviation,
                                 velocity_jacobian)
from vortexline.errors import NodeSingularity
from vortexline.wavefield import WavefunctionSpec, ground_state

X0 = [-0.7, -1.1, 1.3]


def test_velocity_paths_agree(spec, rng):
    x = rng.uniform(-1.5, 1.5, size=(40, 3))
    np.testing.assert_allclose(bohmian_velocity(spec, x, 2.0), bohmian_velocity(spec, x, 2.0, path="psi"),
                               rtol=1e-9, atol=1e-11)


def test_velocity_jacobian_finite_difference(spec, rng):
    h = 1e-6
    for x in rng.uniform(-1.5, 1.5, size=(10, 3)):
        J = velocity_jacobian(spec, x, 1.3)
        fd = np.column_stack([(bohmian_velocity(spec, x + h * e, 1.3) - bohmian_velocity(spec, x - h * e, 1.3))
                              / (2 * h) for e in np.eye(3)])
        np.testing.assert_allclose(J, fd, rtol=1e-6, atol=1e-6 * np.abs(J).max())


def test_node_raises():
    # Psi_100 + i Psi_010 vanishes exactly on the z-axis
    vortex = WavefunctionSpec.from_modes([(1.0, (1, 0, 0)), (1j, (0, 1, 0))])
    with pytest.raises(NodeSingularity):
        bohmian_velocity(vortex, [0.0, 0.0, 0.4], 0.0)
    v = bohmian_velocity(vortex, [0.1, 0.0, 0.0], 0.0)
    np.testing.assert_allclose(v, [0.0, 10.0, 0.0], rtol=1e-12)


def test_ground_state_is_static():
    tr = integrate_with_deviation(ground_state(), X0, [1.0, 0.0, 0.0], (0.0, 2.0))
    assert np.all(tr.x == np.asarray(X0))
    assert np.all(tr.log_growth == 0.0)


def test_time_reversal(spec):
    opts = IntegratorOptions(sample_dt=0.5)
    fwd = integrate_trajectory(spec, X0, (0.0, 3.0), opts)
    back = integrate_trajectory(spec, fwd.x[-1], (3.0, 0.0), opts)
    np.testing.assert_allclose(back.x[-1], X0, atol=1e-7)


def test_variational_and_shadow_agree(spec):
    span = (0.0, 2.0)
    var = integrate_with_deviation(spec, X0, [1.0, 0.0, 0.0], span)
    sha = integrate_with_deviation(spec, X0, [1.0, 0.0, 0.0], span, mode="shadow", delta=1e-7)
    np.testing.assert_allclose(sha.log_growth, var.log_growth, atol=1e-4)
    np.testing.assert_allclose(sha.x, var.x, atol=1e-9)


def test_sample_grid_and_stats(spec):
    tr = integrate_trajectory(spec, X0, (0.0, 1.0))
    assert len(tr.t) == 21 and tr.t0 == pytest.approx(0.05)
    assert tr.stats.steps > 0 and tr.stats.min_abs_psi > 0


def test_options_validation():
    with pytest.raises(ValueError):
        IntegratorOptions(abs_tol=0.0)
    with pytest.raises(ValueError):
        IntegratorOptions(method="Euler")
    with pytest.raises(ValueError):
        integrate_with_deviation(ground_state(), X0, [2.0, 0.0, 0.0], (0.0, 1.0))


def test_single_mode_trajectory_static():
    spec = WavefunctionSpec.from_modes([(1j, (1, 0, 2))])
    tr = integrate_trajectory(spec, [0.3, 0.2, 0.1], (0.0, 1.0))
    assert np.all(tr.x == tr.x[0])

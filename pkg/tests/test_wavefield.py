import math

import numpy as np
import pytest
from scipy.special import eval_hermite

from vortexline.wavefield import (WavefunctionSpec, eval_eigenstate, eval_field, eval_polynomial_part,
                                  gaussian_exponent, ground_state, hermite_eval, probability_current,
                                  triple_superposition)


def test_hermite_matches_scipy():
    xi = np.linspace(-3, 3, 11)
    for n in range(7):
        h, dh, d2h = hermite_eval(n, xi)
        np.testing.assert_allclose(h, eval_hermite(n, xi), rtol=1e-13, atol=1e-12)
        if n >= 1:
            np.testing.assert_allclose(dh, 2 * n * eval_hermite(n - 1, xi), rtol=1e-13, atol=1e-12)


def test_eigenstates_orthonormal():
    omega = (1.3, 0.7, 2.0)
    spec = ground_state(omega)
    g = np.linspace(-9, 9, 61)
    X = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    dx = g[1] - g[0]
    qs = [(0, 0, 0), (1, 0, 1), (2, 1, 0), (0, 1, 2)]
    vals = [eval_eigenstate(spec, q, X)[0] for q in qs]
    gram = np.array([[np.sum(a * b) * dx**3 for b in vals] for a in vals])
    np.testing.assert_allclose(gram, np.eye(len(qs)), atol=1e-9)


def test_energies_and_validation():
    spec = triple_superposition((1.0, 2.0, 3.0))
    np.testing.assert_allclose(spec.energies, [3.0, 3.0 + 1.0 + 3.0, 3.0 + 2.0 + 6.0])
    with pytest.raises(ValueError):
        WavefunctionSpec.from_modes([(1.0, (-1, 0, 0))])
    with pytest.raises(ValueError):
        WavefunctionSpec.from_modes([(1.0, (0, 0, 0))], omega=(1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        WavefunctionSpec.from_modes([(0.0, (0, 0, 0))])


def test_ground_state_density_is_gaussian():
    spec = ground_state((1.0, 2.0, 0.5))
    x = np.array([[0.3, -0.2, 1.1], [0.0, 0.0, 0.0]])
    f = eval_field(spec, x, 2.5)
    expected = math.pi ** -1.5 * math.sqrt(1.0 * 2.0 * 0.5) * np.exp(-np.sum([1.0, 2.0, 0.5] * x**2, axis=1))
    np.testing.assert_allclose(np.abs(f.psi) ** 2, expected, rtol=1e-13)


def test_polynomial_part_factorization(spec, rng):
    x = rng.uniform(-2, 2, size=(50, 3))
    f = eval_field(spec, x, 1.7)
    phi = eval_polynomial_part(spec, x, 1.7)
    np.testing.assert_allclose(f.psi, np.exp(gaussian_exponent(spec, x)) * phi.psi, rtol=1e-13)


def test_current_pair_form_matches_psi_form(spec, rng):
    x = rng.uniform(-2, 2, size=(50, 3))
    f = eval_field(spec, x, 0.9)
    cur = probability_current(spec, x, 0.9)
    G = np.abs(f.psi) ** 2
    N = f.psi.real[:, None] * f.grad.imag - f.psi.imag[:, None] * f.grad.real
    np.testing.assert_allclose(N / G[:, None], cur.N / cur.G[:, None], rtol=1e-10, atol=1e-12)


def test_single_mode_current_vanishes_exactly():
    spec = WavefunctionSpec.from_modes([(0.6 + 0.8j, (1, 2, 0))], (1.0, 1.5, 2.0))
    x = np.random.default_rng(1).uniform(-2, 2, size=(20, 3))
    cur = probability_current(spec, x, 3.3)
    assert np.all(cur.N == 0.0)


def test_underflow_flag():
    spec = ground_state()
    f = eval_field(spec, np.array([60.0, 0.0, 0.0]), 0.0)
    assert f.underflow is True and f.psi == 0
    phi = eval_polynomial_part(spec, np.array([60.0, 0.0, 0.0]), 0.0)
    assert phi.psi != 0

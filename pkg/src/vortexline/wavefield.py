"""Superpositions of 3-d harmonic-oscillator eigenstates.

Everything here is evaluated in closed form: Hermite polynomials by the
three-term recurrence, derivatives by the product and chain rules, and the
time dependence through the exact per-mode phase ``exp(-i E_j t)``.  Units
are m = hbar = 1.

Two representations are offered.  ``eval_field`` returns the physical
wavefunction Psi.  ``eval_polynomial_part`` returns phi, defined by
``Psi = exp(sigma) * phi`` with ``sigma = -sum_k omega_k x_k^2 / 2``.  Nodes,
phases and Bohmian velocities of the two coincide, but phi does not underflow
far from the origin, so the rest of the package works with phi.

Arrays of points are accepted anywhere a point is: ``x`` has shape
``(..., 3)`` and results carry the leading shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "QuantumNumbers",
    "Mode",
    "WavefunctionSpec",
    "FieldSample",
    "CurrentSample",
    "hermite_eval",
    "eval_eigenstate",
    "eval_field",
    "eval_polynomial_part",
    "mode_polynomials",
    "mode_phases",
    "gaussian_exponent",
    "probability_current",
    "triple_superposition",
    "ground_state",
]


@dataclass(frozen=True)
class QuantumNumbers:
    n1: int
    n2: int
    n3: int

    def __post_init__(self):
        for n in (self.n1, self.n2, self.n3):
            if int(n) != n or n < 0:
                raise ValueError(f"quantum numbers must be non-negative integers, got {self}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (int(self.n1), int(self.n2), int(self.n3))


@dataclass(frozen=True)
class Mode:
    coeff: complex
    qnums: QuantumNumbers
    energy: float

    @classmethod
    def make(cls, coeff, qnums, omega) -> "Mode":
        if not isinstance(qnums, QuantumNumbers):
            qnums = QuantumNumbers(*qnums)
        energy = sum((n + 0.5) * w for n, w in zip(qnums.as_tuple(), omega))
        return cls(complex(coeff), qnums, float(energy))


@dataclass(frozen=True)
class WavefunctionSpec:
    """Immutable description of ``Psi = sum_j c_j Psi_{n_j}(x) exp(-i E_j t)``."""

    modes: tuple[Mode, ...]
    omega: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "omega", tuple(float(w) for w in self.omega))
        if len(self.omega) != 3 or not all(w > 0 and math.isfinite(w) for w in self.omega):
            raise ValueError(f"omega must be three positive finite numbers, got {self.omega}")
        if not self.modes:
            raise ValueError("a wavefunction needs at least one mode")
        if sum(abs(m.coeff) ** 2 for m in self.modes) <= 0:
            raise ValueError("all mode coefficients are zero")
        for m in self.modes:
            expected = sum((n + 0.5) * w for n, w in zip(m.qnums.as_tuple(), self.omega))
            if m.energy != expected:
                raise ValueError(f"mode energy {m.energy} != sum (n+1/2) omega = {expected}")

    @classmethod
    def from_modes(cls, modes: Sequence[tuple[complex, Sequence[int]]], omega=(1.0, 1.0, 1.0)):
        """Build from ``[(coeff, (n1, n2, n3)), ...]``; energies are derived."""
        omega = tuple(float(w) for w in omega)
        return cls(tuple(Mode.make(c, q, omega) for c, q in modes), omega)

    @cached_property
    def coeffs(self) -> np.ndarray:
        return np.array([m.coeff for m in self.modes], dtype=complex)

    @cached_property
    def qnums(self) -> np.ndarray:
        return np.array([m.qnums.as_tuple() for m in self.modes], dtype=int)

    @cached_property
    def energies(self) -> np.ndarray:
        return np.array([m.energy for m in self.modes], dtype=float)

    @cached_property
    def omega_array(self) -> np.ndarray:
        return np.array(self.omega, dtype=float)


def triple_superposition(omega=(1.0, 1.0, 1.0)) -> WavefunctionSpec:
    """(Psi_000 + Psi_101 + Psi_012) / sqrt(3), the standard test system of the package."""
    c = 1.0 / math.sqrt(3.0)
    return WavefunctionSpec.from_modes([(c, (0, 0, 0)), (c, (1, 0, 1)), (c, (0, 1, 2))], omega)


def ground_state(omega=(1.0, 1.0, 1.0)) -> WavefunctionSpec:
    return WavefunctionSpec.from_modes([(1.0, (0, 0, 0))], omega)


@dataclass
class FieldSample:
    """Value, gradient, Hessian and time derivative of a complex field."""

    psi: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    dpsi_dt: np.ndarray
    underflow: np.ndarray | bool = False


class CurrentSample(NamedTuple):
    """Regularized current pieces of phi.

    ``G = |phi|^2`` and ``N = phi_R grad(phi_I) - phi_I grad(phi_R)``, so the
    Bohmian velocity is ``N / G``.  ``dG`` and ``dN`` (``dN[..., i, l] =
    d N_i / d x_l``) are only filled when requested.
    """

    G: np.ndarray
    N: np.ndarray
    dG: np.ndarray | None
    dN: np.ndarray | None


def hermite_eval(n: int, xi):
    """Physicists' Hermite polynomial H_n and its first two derivatives."""
    if n < 0:
        raise ValueError("n must be non-negative")
    table = _hermite_table(n, np.asarray(xi, dtype=float))
    h = table[n]
    dh = 2.0 * n * table[n - 1] if n >= 1 else np.zeros_like(h)
    d2h = 4.0 * n * (n - 1) * table[n - 2] if n >= 2 else np.zeros_like(h)
    if np.ndim(xi) == 0:
        return float(h), float(dh), float(d2h)
    return h, dh, d2h


def _hermite_table(nmax: int, xi: np.ndarray) -> np.ndarray:
    table = np.empty((nmax + 1,) + xi.shape)
    table[0] = 1.0
    if nmax >= 1:
        table[1] = 2.0 * xi
    for k in range(1, nmax):
        table[k + 1] = 2.0 * xi * table[k] - 2.0 * k * table[k - 1]
    return table


def _axis_factors(omega: np.ndarray, qnums: np.ndarray, x: np.ndarray):
    """Normalized 1-d polynomial factors p_k(x_k) = N_n H_n(sqrt(w) x) and derivatives.

    Returns three arrays of shape ``(M, ..., 3)`` (value, first and second
    derivative), one column per axis.
    """
    m = qnums.shape[0]
    shape = (m,) + x.shape
    p = np.empty(shape)
    dp = np.empty(shape)
    d2p = np.empty(shape)
    for k in range(3):
        w = omega[k]
        sw = math.sqrt(w)
        nmax = int(qnums[:, k].max())
        table = _hermite_table(nmax, sw * x[..., k])
        for j in range(m):
            n = int(qnums[j, k])
            norm = (w / math.pi) ** 0.25 / math.sqrt(2.0**n * math.factorial(n))
            p[j, ..., k] = norm * table[n]
            dp[j, ..., k] = norm * sw * 2.0 * n * table[n - 1] if n >= 1 else 0.0
            d2p[j, ..., k] = norm * w * 4.0 * n * (n - 1) * table[n - 2] if n >= 2 else 0.0
    return p, dp, d2p


def mode_polynomials(spec: WavefunctionSpec, x):
    """Per-mode polynomial parts P_j(x) (Gaussian stripped) with gradient and Hessian.

    Shapes: ``P (M, ...)``, ``dP (M, ..., 3)``, ``HP (M, ..., 3, 3)``.
    """
    x = np.asarray(x, dtype=float)
    p, dp, d2p = _axis_factors(spec.omega_array, spec.qnums, x)
    p0, p1, p2 = p[..., 0], p[..., 1], p[..., 2]
    P = p0 * p1 * p2
    dP = np.stack([dp[..., 0] * p1 * p2, p0 * dp[..., 1] * p2, p0 * p1 * dp[..., 2]], axis=-1)
    HP = np.empty(P.shape + (3, 3))
    HP[..., 0, 0] = d2p[..., 0] * p1 * p2
    HP[..., 1, 1] = p0 * d2p[..., 1] * p2
    HP[..., 2, 2] = p0 * p1 * d2p[..., 2]
    HP[..., 0, 1] = HP[..., 1, 0] = dp[..., 0] * dp[..., 1] * p2
    HP[..., 0, 2] = HP[..., 2, 0] = dp[..., 0] * p1 * dp[..., 2]
    HP[..., 1, 2] = HP[..., 2, 1] = p0 * dp[..., 1] * dp[..., 2]
    return P, dP, HP


def mode_phases(spec: WavefunctionSpec, t: float) -> np.ndarray:
    """Complex weights ``c_j exp(-i E_j t)``."""
    return spec.coeffs * np.exp(-1j * spec.energies * t)


def gaussian_exponent(spec: WavefunctionSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return -0.5 * np.sum(spec.omega_array * x * x, axis=-1)


def eval_eigenstate(spec: WavefunctionSpec, q, x):
    """Real eigenstate Psi_q(x) with gradient and Hessian.

    Returns ``(value, grad, hess, underflow)``.  Where the Gaussian factor
    underflows to zero the value and derivatives are exact zeros and
    ``underflow`` is True.
    """
    if not isinstance(q, QuantumNumbers):
        q = QuantumNumbers(*q)
    single = WavefunctionSpec.from_modes([(1.0, q.as_tuple())], spec.omega)
    x = np.asarray(x, dtype=float)
    P, dP, HP = mode_polynomials(single, x)
    P, dP, HP = P[0], dP[0], HP[0]
    sigma = gaussian_exponent(spec, x)
    g = np.exp(sigma)
    underflow = g == 0.0
    ds = -spec.omega_array * x
    value = g * P
    grad = g[..., None] * (dP + P[..., None] * ds)
    outer = dP[..., :, None] * ds[..., None, :]
    hess = HP + outer + np.swapaxes(outer, -1, -2)
    hess = hess + P[..., None, None] * (ds[..., :, None] * ds[..., None, :] - np.diag(spec.omega_array))
    hess = g[..., None, None] * hess
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    if np.ndim(underflow) == 0:
        underflow = bool(underflow)
    return value, grad, hess, underflow


def eval_polynomial_part(spec: WavefunctionSpec, x, t: float) -> FieldSample:
    """phi(x, t) with ``Psi = exp(sigma) phi``; never underflows."""
    P, dP, HP = mode_polynomials(spec, x)
    z = mode_phases(spec, t)
    psi = np.tensordot(z, P, axes=1)
    grad = np.tensordot(z, dP, axes=1)
    hess = np.tensordot(z, HP, axes=1)
    dpsi_dt = np.tensordot(-1j * spec.energies * z, P, axes=1)
    return FieldSample(psi, grad, hess, dpsi_dt, False)


def eval_field(spec: WavefunctionSpec, x, t: float) -> FieldSample:
    """The physical wavefunction Psi(x, t) and its analytic derivatives."""
    x = np.asarray(x, dtype=float)
    phi = eval_polynomial_part(spec, x, t)
    sigma = gaussian_exponent(spec, x)
    g = np.exp(sigma)
    underflow = g == 0.0
    ds = -spec.omega_array * x
    psi = g * phi.psi
    grad = g[..., None] * (phi.grad + phi.psi[..., None] * ds)
    outer = phi.grad[..., :, None] * ds[..., None, :]
    hess = phi.hess + outer + np.swapaxes(outer, -1, -2)
    hess = hess + phi.psi[..., None, None] * (ds[..., :, None] * ds[..., None, :] - np.diag(spec.omega_array))
    hess = g[..., None, None] * hess
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    if np.ndim(underflow) == 0:
        underflow = bool(underflow)
    return FieldSample(psi, grad, hess, g * phi.dpsi_dt, underflow)


def probability_current(spec: WavefunctionSpec, x, t: float, derivatives: bool = False) -> CurrentSample:
    """G and N of phi summed over mode pairs.

    With ``W_jk = conj(z_j) z_k`` the numerator is ``sum Im(W_jk) P_j grad P_k``
    and ``G = sum Re(W_jk) P_j P_k``.  The diagonal Im(W_jj) is set to
    zero, so a single eigenstate gives an exactly vanishing current.
    """
    P, dP, HP = mode_polynomials(spec, x)
    z = mode_phases(spec, t)
    W = np.conj(z)[:, None] * z[None, :]
    reW, imW = W.real, W.imag.copy()
    np.fill_diagonal(imW, 0.0)  # Im|z_j|^2 = 0; the complex product can leave rounding noise
    G = np.einsum("jk,j...,k...->...", reW, P, P)
    N = np.einsum("jk,j...,k...i->...i", imW, P, dP)
    if not derivatives:
        return CurrentSample(G, N, None, None)
    dG = 2.0 * np.einsum("jk,j...,k...l->...l", reW, P, dP)
    dN = np.einsum("jk,j...l,k...i->...il", imW, dP, dP) + np.einsum("jk,j...,k...il->...il", imW, P, HP)
    return CurrentSample(G, N, dG, dN)

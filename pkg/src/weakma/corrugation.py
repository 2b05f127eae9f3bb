"""
Corrugations: the 1-periodic profile Gamma, the splitting of a positive
definite matrix field into rank-one pieces along fixed directions, and the
high-frequency perturbation of a pair (v, w) that absorbs one such piece.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import FrequencyUnresolved, NotDiagonallyDominant
from .fields import (
    ScalarField2D,
    SymMatField2D,
    VectorField2D,
    _diff,
    _sym_grad_values,
)

__all__ = [
    "gamma",
    "gamma_identity_defect",
    "GAMMA1_PEAK",
    "DIRECTIONS",
    "Decomposition",
    "nash_decompose",
    "add_corrugation",
    "corrugation_error",
]

TWO_PI = 2.0 * math.pi
# sup_t |Gamma_1(1, t)|
GAMMA1_PEAK = 1.0 / math.pi


def _dsin(omega, t, k):
    """k-th derivative in t of sin(omega t)."""
    return omega**k * np.sin(omega * t + 0.5 * k * math.pi)


def gamma(s, t, ds=0, dt=0):
    """
    The corrugation profile ``(Gamma_1, Gamma_2)`` or one of its partial derivatives.

    ``Gamma_1 = (s/pi) sin(2 pi t)`` and ``Gamma_2 = -(s^2/(4 pi)) sin(4 pi t)``,
    1-periodic in ``t`` and satisfying
    ``1/2 (d_t Gamma_1)^2 + d_t Gamma_2 = s^2``.
    ``ds`` and ``dt`` select the order of differentiation in ``s`` and ``t``.
    Arguments broadcast like numpy arrays.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if ds < 0 or dt < 0:
        raise ValueError("derivative orders must be nonnegative")
    # s-factors: d_s^k of s and of s^2
    lin = s if ds == 0 else (np.ones_like(s) if ds == 1 else np.zeros_like(s))
    quad = s**2 if ds == 0 else (2.0 * s if ds == 1 else (2.0 * np.ones_like(s) if ds == 2 else np.zeros_like(s)))
    g1 = lin / math.pi * _dsin(TWO_PI, t, dt)
    g2 = -quad / (4.0 * math.pi) * _dsin(2.0 * TWO_PI, t, dt)
    return g1, g2


def gamma_identity_defect(s, t):
    """``1/2 (d_t Gamma_1)^2 + d_t Gamma_2 - s^2``; zero up to rounding."""
    g1t, g2t = gamma(s, t, dt=1)
    return 0.5 * g1t**2 + g2t - np.asarray(s, dtype=float) ** 2


_R = 1.0 / math.sqrt(2.0)
DIRECTIONS = (
    (1.0, 0.0),
    (0.0, 1.0),
    (_R, _R),
    (_R, -_R),
)


@dataclass(frozen=True)
class Decomposition:
    """``D = sum_i a_i^2 nu_i (x) nu_i`` with ``a_i >= 0``."""

    terms: list
    m_shift: float

    def reconstruct(self):
        grid = self.terms[0][0].grid
        out = np.zeros((3, grid.n, grid.n))
        for a, nu in self.terms:
            a2 = a.values**2
            out[0] += a2 * nu[0] * nu[0]
            out[1] += a2 * nu[0] * nu[1]
            out[2] += a2 * nu[1] * nu[1]
        return SymMatField2D(grid, out, check=False)


def nash_decompose(D):
    """
    Split a diagonally dominant field along e1, e2 and the two diagonals.

    With ``m = sup|D12| (1 + 1e-6)``:
    ``a1^2 = D11 - m``, ``a2^2 = D22 - m``, ``a3^2 = m + D12``, ``a4^2 = m - D12``.
    The splitting level is a constant, so every ``a_i^2`` is as smooth as ``D``.
    """
    m11, m12, m22 = D.values
    m = float(np.abs(m12).max()) * (1.0 + 1e-6)
    margin = np.minimum(m11, m22) - m
    worst = np.argmin(margin)
    if not margin.flat[worst] > 0 and not (m == 0.0 and margin.flat[worst] == 0.0):
        raise NotDiagonallyDominant(float(margin.flat[worst]), np.unravel_index(worst, margin.shape))
    squares = (m11 - m, m22 - m, m + m12, m - m12)
    grid = D.grid
    # clip rounding-level negatives before the square root
    terms = [
        (ScalarField2D(grid, np.sqrt(np.maximum(sq, 0.0)), check=False), nu)
        for sq, nu in zip(squares, DIRECTIONS)
    ]
    return Decomposition(terms, m)


def add_corrugation(v, w, amp, nu, freq):
    """
    Add one corrugation of amplitude ``amp`` along ``nu`` at frequency ``freq``:

        v' = v + Gamma_1(amp, freq x.nu) / freq
        w' = w - Gamma_1(amp, freq x.nu) / freq * grad v + Gamma_2(amp, freq x.nu) / freq * nu

    Raises FrequencyUnresolved unless ``freq * h <= 1/8``.
    """
    grid = v.grid
    if freq * grid.h > 0.125:
        raise FrequencyUnresolved(freq, grid.n)
    nu = np.asarray(nu, dtype=float)
    x1, x2 = grid.mesh()
    t = freq * (nu[0] * x1 + nu[1] * x2)
    g1, g2 = gamma(amp.values, t)
    del t
    g1 /= freq
    g2 /= freq
    h = grid.h
    wv = np.empty((2, grid.n, grid.n))
    wv[0] = w.values[0] - g1 * _diff(v.values, h, 0) + g2 * nu[0]
    wv[1] = w.values[1] - g1 * _diff(v.values, h, 1) + g2 * nu[1]
    del g2
    v_new = ScalarField2D(grid, v.values + g1, check=False)
    return v_new, VectorField2D(grid, wv, check=False)


def _quadratic_part(v, w):
    """``1/2 grad v (x) grad v + sym grad w`` as a raw (3, n, n) array."""
    h = v.grid.h
    out = _sym_grad_values(w.values, h)
    g1 = _diff(v.values, h, 0)
    g2 = _diff(v.values, h, 1)
    out[0] += 0.5 * g1 * g1
    out[1] += 0.5 * g1 * g2
    out[2] += 0.5 * g2 * g2
    return out


def corrugation_error(v, w, v_new, w_new, amp, nu):
    """
    ``E = (1/2 grad v' (x) grad v' + sym grad w') - (amp^2 nu (x) nu + 1/2 grad v (x) grad v + sym grad w)``.
    """
    out = _quadratic_part(v_new, w_new)
    out -= _quadratic_part(v, w)
    a2 = amp.values**2
    out[0] -= a2 * (nu[0] * nu[0])
    out[1] -= a2 * (nu[0] * nu[1])
    out[2] -= a2 * (nu[1] * nu[1])
    return SymMatField2D(v.grid, out, check=False)

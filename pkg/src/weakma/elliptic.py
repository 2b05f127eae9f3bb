"""
Dirichlet Poisson solver on the unit square and the two constructions built on it:
the matrix field ``A`` carrying the right-hand side ``f``, and the reduction of a
near-identity symmetric matrix field to a multiple of the identity by a
symmetric-gradient corrector.
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import NonPositiveDiagonal
from .fields import (
    ScalarField2D,
    SymMatField2D,
    VectorField2D,
    _diff,
    _sym_grad_values,
    gradient,
    sup_norm,
    worker_count,
)

__all__ = [
    "DiagonalizationResult",
    "poisson_dirichlet",
    "laplacian_5pt",
    "build_A",
    "diagonalize",
]


def _eigenvalues(n, h):
    # eigenvalues of the 1D Dirichlet operator -d^2/dx^2 on the interior nodes
    k = np.arange(1, n - 1)
    return (4.0 / h**2) * np.sin(0.5 * np.pi * k / (n - 1)) ** 2


def poisson_dirichlet(rhs):
    """
    Solve ``-Delta_h u = rhs`` with ``u = 0`` on the boundary.

    Delta_h is the 5-point Laplacian; the system is diagonalised exactly by a
    type-I discrete sine transform along each axis, so the discrete equation
    holds to rounding error.  Boundary values of ``rhs`` are ignored.
    """
    return ScalarField2D(rhs.grid, _poisson_values(rhs.values, rhs.grid.h), check=False)


def _poisson_values(rhs, h):
    n = rhs.shape[0]
    workers = worker_count()
    coef = scipy.fft.dstn(rhs[1:-1, 1:-1], type=1, workers=workers)
    lam = _eigenvalues(n, h)
    coef /= lam[:, None] + lam[None, :]
    u = np.zeros((n, n))
    u[1:-1, 1:-1] = scipy.fft.idstn(coef, type=1, workers=workers)
    return u


def _solve_extended(rhs, pad):
    """
    Solve ``-Delta u = rhs`` on the square enlarged by ``pad`` cells per side,
    with ``rhs`` continued by point reflection (C^1 across the boundary), and restrict to the original grid.
    The boundary of the unit square is then interior to the solve, so the
    equation also holds on boundary nodes and corner singularities stay away.
    """
    n = rhs.shape[0]
    ext = np.pad(rhs, pad, mode="reflect", reflect_type="odd")
    # the enlarged grid keeps the spacing of the original one
    u = _poisson_values(ext, 1.0 / (n - 1))
    return u[pad:pad + n, pad:pad + n]


def laplacian_5pt(u):
    """5-point Laplacian at interior nodes (zero on the boundary rows)."""
    h2 = u.grid.h ** 2
    a = u.values
    out = np.zeros_like(a)
    out[1:-1, 1:-1] = (
        a[2:, 1:-1] + a[:-2, 1:-1] + a[1:-1, 2:] + a[1:-1, :-2] - 4.0 * a[1:-1, 1:-1]
    ) / h2
    return ScalarField2D(u.grid, out, check=False)


def build_A(f, v_flat, delta_bar):
    """
    Matrix field ``A = (u + c) Id`` with ``-Delta u = f``.

    ``c`` is the smallest constant making ``A - 1/2 grad v_flat (x) grad v_flat``
    at least ``2 delta_bar Id`` at every node.  Returns ``(A, u, c)``.
    """
    if not delta_bar > 0:
        raise ValueError(f"delta_bar must be positive, got {delta_bar}")
    u = poisson_dirichlet(f)
    g = gradient(v_flat).values
    half_sq = 0.5 * (g[0] ** 2 + g[1] ** 2)
    c = 2.0 * delta_bar + float(np.max(half_sq - u.values))
    A = SymMatField2D.identity(f.grid, ScalarField2D(f.grid, u.values + c, check=False))
    return A, u, c


@dataclass(frozen=True)
class DiagonalizationResult:
    Phi: VectorField2D
    d: ScalarField2D
    residual_sup: float

    @property
    def d2(self):
        return ScalarField2D(self.d.grid, self.d.values**2, check=False)


def extension_cells(n):
    """Cells added per side for the corrector solves (an eighth of the side)."""
    return max(4, (n - 1) // 8)


def diagonalize(D):
    """
    Find ``Phi`` and ``d > 0`` with ``D + sym grad Phi = d^2 Id``.

    Two Dirichlet problems fix the trace-free part: ``Delta phi = D11 - D22``
    and ``Delta psi = 2 D12``, posed on a square enlarged by
    ``extension_cells(n)`` cells per side with the data continued by point
    reflection; then ``Phi = (-d1 phi - d2 psi, d2 phi - d1 psi)``
    and ``d^2 = (tr D + div Phi) / 2``.  Raises NonPositiveDiagonal if
    ``d^2 <= 0`` somewhere.
    """
    grid = D.grid
    h = grid.h
    m11, m12, m22 = D.values
    pad = extension_cells(grid.n)
    phi = _solve_extended(m22 - m11, pad)
    psi = _solve_extended(-2.0 * m12, pad)
    phi1, phi2 = _diff(phi, h, 0), _diff(phi, h, 1)
    del phi
    psi1, psi2 = _diff(psi, h, 0), _diff(psi, h, 1)
    del psi
    Phi = VectorField2D(grid, np.stack([-phi1 - psi2, phi2 - psi1]), check=False)
    del phi1, phi2, psi1, psi2
    S = _sym_grad_values(Phi.values, h)
    d2 = 0.5 * (m11 + m22 + S[0] + S[2])
    bad = np.argmin(d2)
    if not d2.flat[bad] > 0:
        raise NonPositiveDiagonal(float(d2.flat[bad]), np.unravel_index(bad, d2.shape))
    S[0] += m11 - d2
    S[1] += m12
    S[2] += m22 - d2
    residual = sup_norm(SymMatField2D(grid, S, check=False))
    return DiagonalizationResult(Phi, ScalarField2D(grid, np.sqrt(d2), check=False), residual)

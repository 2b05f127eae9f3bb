import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weakma.elliptic import build_A, diagonalize, laplacian_5pt, poisson_dirichlet
from weakma.errors import NonPositiveDiagonal
from weakma.fields import (
    Grid,
    ScalarField2D,
    SymMatField2D,
    VectorField2D,
    _diff,
    curl_curl,
    holder_norm,
    sup_norm,
    sym_gradient,
)
from weakma.verify import deficit


def sinsin(n, amp=1.0, j=1, k=1):
    return ScalarField2D.from_function(
        Grid(n), lambda x, y: amp * np.sin(j * np.pi * x) * np.sin(k * np.pi * y)
    )


# -- Poisson --------------------------------------------------------------------

def test_poisson_zero_rhs():
    assert sup_norm(poisson_dirichlet(ScalarField2D.zeros(Grid(33)))) == 0.0


def test_poisson_discrete_equation_exact():
    rng = np.random.default_rng(0)
    g = Grid(65)
    rhs = ScalarField2D(g, rng.standard_normal((65, 65)))
    u = poisson_dirichlet(rhs)
    res = -laplacian_5pt(u).values[1:-1, 1:-1] - rhs.values[1:-1, 1:-1]
    assert np.abs(res).max() <= 1e-10 * np.abs(rhs.values).max()
    assert np.all(u.values[0] == 0) and np.all(u.values[:, -1] == 0)


def test_poisson_eigenfunction_converges():
    errs = []
    for n in (33, 65, 129):
        u = poisson_dirichlet(sinsin(n, 2 * np.pi**2))
        errs.append(abs(u.values[n // 2, n // 2] - 1.0))
    assert errs[-1] < 1e-4
    assert math.log2(errs[0] / errs[1]) > 1.9 and math.log2(errs[1] / errs[2]) > 1.9


def test_poisson_torsion_constant():
    # sum over odd j, k of 16 / (pi^4 j k (j^2 + k^2)) * sin(j pi/2) sin(k pi/2)
    j = np.arange(1, 400, 2)
    J, K = np.meshgrid(j, j, indexing="ij")
    sign = np.sin(J * np.pi / 2) * np.sin(K * np.pi / 2)
    oracle = float(np.sum(16 * sign / (np.pi**4 * J * K * (J**2 + K**2))))
    u = poisson_dirichlet(ScalarField2D(Grid(257), np.ones((257, 257))))
    assert oracle == pytest.approx(0.07367, abs=1e-5)
    assert u.values[128, 128] == pytest.approx(oracle, abs=1e-5)


@given(st.integers(0, 2**31 - 1))
def test_poisson_symmetric(seed):
    rng = np.random.default_rng(seed)
    g = Grid(33)
    f = ScalarField2D(g, rng.standard_normal((33, 33)))
    q = ScalarField2D(g, rng.standard_normal((33, 33)))
    uf, uq = poisson_dirichlet(f), poisson_dirichlet(q)
    lhs = np.sum(uf.values[1:-1, 1:-1] * q.values[1:-1, 1:-1])
    rhs = np.sum(uq.values[1:-1, 1:-1] * f.values[1:-1, 1:-1])
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


# -- build_A ----------------------------------------------------------------------

def test_build_A_homogeneous():
    g = Grid(33)
    A, u, c = build_A(ScalarField2D.zeros(g), ScalarField2D.zeros(g), 0.1)
    assert c == pytest.approx(0.2)
    assert sup_norm(u) == 0.0
    assert np.allclose(A.values[0], 0.2) and np.allclose(A.values[1], 0.0)


def test_build_A_carries_f():
    n = 129
    f = sinsin(n, 2 * np.pi**2)
    A, u, c = build_A(f, ScalarField2D.zeros(Grid(n)), 0.1)
    assert c == pytest.approx(0.2)
    err = -curl_curl(A).values - f.values
    assert np.abs(err[2:-2, 2:-2]).max() < 5e-3


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.01, 1.0))
def test_build_A_lower_bound(p, q, delta_bar):
    g = Grid(33)
    v_flat = ScalarField2D.from_function(g, lambda x, y: p * x * y + q * np.sin(3 * x))
    f = sinsin(33, 5.0, 2, 1)
    A, _, _ = build_A(f, v_flat, delta_bar)
    Db = deficit(A, v_flat, VectorField2D.zeros(g))
    assert Db.min_eigenvalue().values.min() >= 2 * delta_bar - 1e-10


# -- diagonalize ------------------------------------------------------------------

def test_diagonalize_identity():
    res = diagonalize(SymMatField2D.identity(Grid(65)))
    assert sup_norm(res.Phi) < 1e-12
    assert np.abs(res.d.values - 1).max() < 1e-12
    assert res.residual_sup < 1e-12


def _manufactured(n, which):
    g = Grid(n)
    x, y = g.full_mesh()
    s = np.sin(np.pi * x) * np.sin(np.pi * y)
    one = np.ones_like(x)
    if which == "diag":
        e = 0.05 * 2 * np.pi**2 * s
        return SymMatField2D(g, np.stack([one + e, 0 * x, one - e]))
    if which == "offdiag":
        return SymMatField2D(g, np.stack([one, 0.05 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y), one]))
    return SymMatField2D(g, np.stack([
        one + 0.1 * np.cos(3 * x + y), 0.08 * np.sin(2 * x - y), one - 0.05 * x * y,
    ]))


@pytest.mark.parametrize("which", ["diag", "offdiag", "generic"])
def test_diagonalize_residual_and_order(which):
    res = {n: diagonalize(_manufactured(n, which)) for n in (129, 257)}
    assert res[257].residual_sup <= 1e-3
    assert math.log2(res[129].residual_sup / res[257].residual_sup) >= 1.8
    assert res[257].d.values.min() > 0


def test_diagonalize_offdiag_amplitude_range():
    res = diagonalize(_manufactured(257, "offdiag"))
    assert 0.9 <= res.d2.values.min() and res.d2.values.max() <= 1.1


def test_diagonalize_equation_recombined():
    D = _manufactured(129, "generic")
    res = diagonalize(D)
    lhs = D + sym_gradient(res.Phi) - SymMatField2D.identity(D.grid, res.d2)
    assert sup_norm(lhs) == pytest.approx(res.residual_sup)


def test_diagonalize_rejects_far_input():
    g = Grid(33)
    with pytest.raises(NonPositiveDiagonal):
        diagonalize(SymMatField2D.constant(g, [[-1.0, 0.0], [0.0, -1.0]]))


def test_diagonalize_linear_in_perturbation():
    g = Grid(129)
    x, y = g.full_mesh()
    B = np.stack([np.cos(2 * x + y), 0.5 * np.sin(x - 2 * y), x * y])
    eps = [0.01, 0.02, 0.04]
    vals = []
    for e in eps:
        res = diagonalize(SymMatField2D.identity(g) + SymMatField2D(g, e * B))
        vals.append(holder_norm(res.d - 1.0, 0.5) + holder_norm(res.Phi, 0.5, 1) - holder_norm(res.Phi, 0.0))
    slope = np.polyfit(np.log(eps), np.log(vals), 1)[0]
    assert abs(slope - 1) <= 0.1


def test_diagonalize_trace_free_part_consistent():
    # div(-Phi1, Phi2) reproduces D11 - D22 up to discretisation error
    D = _manufactured(257, "generic")
    res = diagonalize(D)
    h = D.grid.h
    P1, P2 = res.Phi.values
    div = -_diff(P1, h, 0) + _diff(P2, h, 1)
    assert np.abs(div - (D.values[0] - D.values[2])).max() < 1e-3

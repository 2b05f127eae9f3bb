"""
Independent checks on computed pairs (v, w): the deficit, the distributional
Monge-Ampere residual, convergence-rate fits over stage snapshots, and the
second-order bending family with OBJ export.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientStages, TestModeUnresolved
from .fields import (
    ScalarField2D,
    SymMatField2D,
    _diff,
    _spectral_norm,
    _sym_grad_values,
    c_norm,
    holder_profile,
    seminorm_from_profile,
)

__all__ = [
    "deficit",
    "ResidualReport",
    "distributional_residual",
    "mode_function",
    "ConvergenceFit",
    "convergence_report",
    "BendingResult",
    "bending_family",
]


def deficit(A, v, w, shift=0.0):
    """``A - shift Id - 1/2 grad v (x) grad v - sym grad w``."""
    h = v.grid.h
    out = _sym_grad_values(w.values, h)
    np.negative(out, out=out)
    out += A.values
    g1 = _diff(v.values, h, 0)
    g2 = _diff(v.values, h, 1)
    out[0] -= 0.5 * g1 * g1 + shift
    out[1] -= 0.5 * g1 * g2
    out[2] -= 0.5 * g2 * g2 + shift
    return SymMatField2D(v.grid, out, check=False)


# -- distributional residual --------------------------------------------------

def _profile(j, x):
    """``s_j = sin(pi x) sin(j pi x)`` and its first two derivatives."""
    p, q = math.pi, j * math.pi
    sp_, cp = np.sin(p * x), np.cos(p * x)
    sq, cq = np.sin(q * x), np.cos(q * x)
    s = sp_ * sq
    ds = p * cp * sq + q * sp_ * cq
    d2s = -(p * p + q * q) * sp_ * sq + 2 * p * q * cp * cq
    return s, ds, d2s


def _profile_norm(j):
    # int_0^1 sin^2(pi x) sin^2(j pi x) dx
    return math.sqrt(3.0 / 8.0 if j == 1 else 0.25)


def mode_function(j, k, grid):
    """``phi_jk(x) = s_j(x1) s_k(x2)`` sampled on the grid."""
    x = grid.x
    return ScalarField2D(grid, np.outer(_profile(j, x)[0], _profile(k, x)[0]), check=False)


def _quadrature_weights(n):
    """
    Composite Boole weights on [0, 1] when the cell count is a multiple of 4,
    else Simpson (even count) or trapezoid.  All weights are positive.
    """
    cells = n - 1
    h = 1.0 / cells
    if cells % 4 == 0:
        w = np.empty(n)
        w[1::2] = 32.0
        w[2::4] = 12.0
        w[0::4] = 14.0
        w[0] = w[-1] = 7.0
        return w * (2.0 * h / 45.0), "boole"
    w = np.ones(n)
    if cells % 2 == 0:
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w * h / 3.0, "simpson"
    w[0] = w[-1] = 0.5
    return w * h, "trapezoid"


@dataclass
class ResidualReport:
    modes: list
    max_residual: float
    quadrature: str

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["j", "k", "residual"])
            for (j, k), val in self.modes:
                out.writerow([j, k, repr(float(val))])


def distributional_residual(v, f, J):
    """
    Residuals ``<Det D^2 v, phi_jk> - int f phi_jk`` for ``1 <= j, k <= J``.

    The very weak Hessian is paired through
    ``<Det D^2 v, phi> = -1/2 int (grad v (x) grad v) : cof D^2 phi``
    with ``phi_jk = s_j(x1) s_k(x2)``, ``s_j(x) = sin(pi x) sin(j pi x)``.
    These vanish together with their gradients on the boundary, so the
    pairing has no boundary terms.  Second derivatives of ``phi`` are exact;
    integrals use composite Boole weights (``_quadrature_weights``); each residual is divided by
    ``||phi_jk||_{L^2}``.
    """
    grid = v.grid
    if J * math.pi * grid.h > 0.25:
        raise TestModeUnresolved(
            f"J={J} test modes are not resolved at n={grid.n} (need J*pi*h <= 1/4)"
        )
    x = grid.x
    wq, tag = _quadrature_weights(grid.n)
    prof = [_profile(j, x) for j in range(1, J + 1)]
    S0 = np.array([p[0] for p in prof])
    S1 = np.array([p[1] for p in prof])
    S2 = np.array([p[2] for p in prof])
    h = grid.h
    g1 = _diff(v.values, h, 0)
    g2 = _diff(v.values, h, 1)
    W = wq[:, None] * wq[None, :]

    def pair(field, left, right):
        return left @ (W * field) @ right.T

    # (grad v (x) grad v) : cof D^2 phi = v1^2 phi_22 - 2 v1 v2 phi_12 + v2^2 phi_11
    weak = pair(g1 * g1, S0, S2) - 2.0 * pair(g1 * g2, S1, S1) + pair(g2 * g2, S2, S0)
    weak *= -0.5
    del g1, g2
    rhs = pair(f.values, S0, S0)
    norms = np.array([_profile_norm(j) for j in range(1, J + 1)])
    res = (weak - rhs) / np.outer(norms, norms)
    modes = [((j + 1, k + 1), float(res[j, k])) for j in range(J) for k in range(J)]
    return ResidualReport(modes, float(np.abs(res).max()), tag)


# -- convergence fit ----------------------------------------------------------

@dataclass
class ConvergenceFit:
    betas: list
    exponents: list
    predicted: list
    beta_star: float
    beta_predicted: float
    norms: dict = field(default_factory=dict)

    def exponent_at(self, beta):
        return float(np.interp(beta, self.betas, self.exponents))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["beta", "fitted_exponent", "predicted_exponent"]
                         + [f"norm_q{q}" for q in range(len(next(iter(self.norms.values()))))])
            for b, e, p in zip(self.betas, self.exponents, self.predicted):
                out.writerow([repr(b), repr(e), repr(p)] + [repr(x) for x in self.norms[b]])


def _increment_profiles(bundle):
    snaps = bundle.snapshots
    if len(snaps) < 3:
        raise InsufficientStages(
            f"convergence fit needs at least 2 stage increments, bundle has {max(len(snaps) - 1, 0)}"
        )
    out = []
    prev_v = snaps[0][0]
    for q in range(1, len(snaps)):
        cur_v = snaps[q][0]
        diff = cur_v - prev_v
        out.append((c_norm(diff, 1), holder_profile(diff, 1)))
        del diff
        prev_v = cur_v
    return out


def convergence_report(bundle, betas=None):
    """
    Fit ``log_a ||v_{q+1} - v_q||_{1+beta}`` linearly against ``b^(q+1)``.

    The slope is compared with the predicted ``(-1 + 2 c b beta) / 2``.
    ``beta_star`` is the smallest beta at which the fitted slope turns
    nonnegative (linear interpolation on the beta grid; nan if it never does).
    The default grid runs from 0 to ``4 / (2bc)`` (capped at 1).
    """
    cfg = bundle.config
    incs = _increment_profiles(bundle)
    bmax = 1.0 / (2 * cfg.b * cfg.c)
    if betas is None:
        betas = np.linspace(0.0, min(4 * bmax, 1.0), 33)
    betas = [float(b) for b in betas]
    xs = np.array([cfg.b ** (q + 1) for q in range(len(incs))])
    ln_a = math.log(cfg.a)
    exps, preds, norms = [], [], {}
    for beta in betas:
        vals = [c1 + (seminorm_from_profile(prof, beta) if beta > 0 else 0.0) for c1, prof in incs]
        norms[beta] = vals
        ys = np.log(np.maximum(vals, 1e-300)) / ln_a
        exps.append(float(np.polyfit(xs, ys, 1)[0]))
        preds.append((-1 + 2 * cfg.c * cfg.b * beta) / 2)
    beta_star = float("nan")
    for i in range(1, len(betas)):
        if exps[i - 1] < 0 <= exps[i]:
            t = -exps[i - 1] / (exps[i] - exps[i - 1])
            beta_star = betas[i - 1] + t * (betas[i] - betas[i - 1])
            break
    return ConvergenceFit(betas, exps, preds, beta_star, bmax, norms)


# -- bending family -----------------------------------------------------------

@dataclass
class BendingResult:
    t: float
    vertices: np.ndarray  # (n, n, 3)
    deviation: ScalarField2D  # pointwise operator norm of g - Id
    deviation_sup: float

    def write_obj(self, path, max_points=257):
        """OBJ text; the grid is subsampled to at most ``max_points`` per axis."""
        n = self.vertices.shape[0]
        step = max(1, math.ceil((n - 1) / (max_points - 1)))
        idx = np.arange(0, n, step)
        if idx[-1] != n - 1:
            idx = np.append(idx, n - 1)
        verts = self.vertices[np.ix_(idx, idx)]
        m = len(idx)
        with open(path, "w") as fh:
            fh.write(f"# bending family t={self.t!r}, {m}x{m} vertices\n")
            np.savetxt(fh, verts.reshape(-1, 3), fmt="v %.10g %.10g %.10g")
            ids = np.arange(m * m).reshape(m, m) + 1
            a, b = ids[:-1, :-1].ravel(), ids[1:, :-1].ravel()
            c, d = ids[1:, 1:].ravel(), ids[:-1, 1:].ravel()
            faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
            np.savetxt(fh, faces, fmt="f %d %d %d")


def bending_family(v, w, t):
    """
    Surface ``phi_t = id + t v e3 + t^2 (w1, w2, 0)`` and its metric defect.

    ``grad phi_t^T grad phi_t - Id = 2 t^2 (1/2 grad v (x) grad v + sym grad w)
    + t^4 (grad w)^T grad w``; the result carries its pointwise operator norm.
    """
    if abs(t) > 1:
        raise ValueError(f"|t| must be at most 1, got {t}")
    grid = v.grid
    h = grid.h
    x1, x2 = grid.full_mesh()
    verts = np.stack([x1 + t * t * w.values[0], x2 + t * t * w.values[1], t * v.values], axis=-1)
    v1, v2 = _diff(v.values, h, 0), _diff(v.values, h, 1)
    # J[a][b] = d_b w_a
    J = [[_diff(w.values[a], h, b) for b in (0, 1)] for a in (0, 1)]
    t2, t4 = t * t, t**4
    g11 = t2 * (v1 * v1 + 2 * J[0][0]) + t4 * (J[0][0] ** 2 + J[1][0] ** 2)
    g12 = t2 * (v1 * v2 + J[0][1] + J[1][0]) + t4 * (J[0][0] * J[0][1] + J[1][0] * J[1][1])
    g22 = t2 * (v2 * v2 + 2 * J[1][1]) + t4 * (J[0][1] ** 2 + J[1][1] ** 2)
    dev = _spectral_norm(np.stack([g11, g12, g22]))
    return BendingResult(t, verts, ScalarField2D(grid, dev, check=False), float(dev.max()))

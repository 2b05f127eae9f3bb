"""
Discrete fields on a uniform grid of the unit square.

Values are stored component-first: a scalar field is an ``(n, n)`` array,
a vector field ``(2, n, n)`` and a symmetric matrix field ``(3, n, n)``
holding ``(m11, m12, m22)``.  Index ``[i, j]`` is the node
``(x1, x2) = (i h, j h)``.

First derivatives use fourth order central differences in the interior and
fourth order one-sided stencils on the two outermost nodes of each side.
Second derivatives are compositions of first derivatives, so that mixed and
pure derivatives commute exactly and ``curl_curl(sym_gradient(w))``
vanishes to rounding error.
"""

import math
import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import KernelUnresolved

__all__ = [
    "Grid",
    "ScalarField2D",
    "VectorField2D",
    "SymMatField2D",
    "gradient",
    "sym_gradient",
    "divergence",
    "hessian",
    "curl_curl",
    "outer",
    "mollify",
    "mollifier_kernel",
    "holder_seminorm",
    "holder_profile",
    "seminorm_from_profile",
    "holder_norm",
    "c_norm",
    "sup_norm",
    "matrix_sup_norm",
    "dump_field",
    "load_field",
    "export_csv",
]


def worker_count():
    """Thread cap for FFT based routines, from ``MA_THREADS``."""
    env = os.environ.get("MA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


@dataclass(frozen=True)
class Grid:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 9:
            raise ValueError(f"grid needs n >= 9 points per axis, got {self.n}")

    @property
    def h(self):
        return 1.0 / (self.n - 1)

    @property
    def x(self):
        return np.linspace(0.0, 1.0, self.n)

    def mesh(self):
        """Broadcastable coordinate arrays ``x1[:, None]`` and ``x2[None, :]``."""
        x = self.x
        return x[:, None], x[None, :]

    def full_mesh(self):
        x1, x2 = self.mesh()
        return np.broadcast_to(x1, (self.n, self.n)), np.broadcast_to(x2, (self.n, self.n))


class _Field:
    ncomp = 1
    kind = 0

    def __init__(self, grid, values, check=True):
        values = np.asarray(values, dtype=float)
        shape = (grid.n, grid.n) if self.ncomp == 1 else (self.ncomp, grid.n, grid.n)
        if values.shape != shape:
            if values.ndim == 0:
                values = np.full(shape, float(values))
            else:
                raise ValueError(f"{type(self).__name__} expects shape {shape}, got {values.shape}")
        if check and not np.isfinite(values).all():
            raise ValueError(f"{type(self).__name__} has non-finite values")
        if values.flags.writeable and values.base is None:
            values.flags.writeable = False
        self.grid = grid
        self.values = values

    @property
    def components(self):
        """Values as a ``(ncomp, n, n)`` array (a view)."""
        return self.values[None] if self.ncomp == 1 else self.values

    def _like(self, values):
        return type(self)(self.grid, values, check=False)

    def _other(self, other):
        if isinstance(other, _Field):
            if type(other) is not type(self) or other.grid != self.grid:
                raise TypeError("fields must have the same kind and grid")
            return other.values
        return other

    def __add__(self, other):
        return self._like(self.values + self._other(other))

    def __sub__(self, other):
        return self._like(self.values - self._other(other))

    def __neg__(self):
        return self._like(-self.values)

    def __mul__(self, k):
        if isinstance(k, ScalarField2D):
            return self._like(self.values * k.values)
        return self._like(self.values * k)

    __rmul__ = __mul__
    __radd__ = __add__

    def __truediv__(self, k):
        return self._like(self.values / k)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.grid.n})"


class ScalarField2D(_Field):
    ncomp = 1
    kind = 0

    @classmethod
    def from_function(cls, grid, fn):
        x1, x2 = grid.mesh()
        return cls(grid, np.broadcast_to(fn(x1, x2), (grid.n, grid.n)).copy())

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.n, grid.n)))

    def sqrt(self):
        return self._like(np.sqrt(self.values))


class VectorField2D(_Field):
    ncomp = 2
    kind = 1

    @classmethod
    def from_components(cls, c1, c2):
        return cls(c1.grid, np.stack([c1.values, c2.values]))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((2, grid.n, grid.n)))

    @classmethod
    def constant(cls, grid, vec):
        vals = np.empty((2, grid.n, grid.n))
        vals[0], vals[1] = vec
        return cls(grid, vals)

    def component(self, i):
        return ScalarField2D(self.grid, self.values[i], check=False)


class SymMatField2D(_Field):
    ncomp = 3
    kind = 2

    @classmethod
    def identity(cls, grid, scale=1.0):
        """``scale * Id``; ``scale`` may be a number or a ScalarField2D."""
        s = scale.values if isinstance(scale, ScalarField2D) else scale
        vals = np.zeros((3, grid.n, grid.n))
        vals[0] = s
        vals[2] = s
        return cls(grid, vals)

    @classmethod
    def constant(cls, grid, matrix):
        m = np.asarray(matrix, dtype=float)
        vals = np.empty((3, grid.n, grid.n))
        vals[0], vals[1], vals[2] = m[0, 0], m[0, 1], m[1, 1]
        return cls(grid, vals)

    @classmethod
    def rank_one(cls, amp2, nu):
        """``amp2 * nu (x) nu`` for a scalar field ``amp2`` and a fixed direction."""
        a = amp2.values
        vals = np.stack([a * (nu[0] * nu[0]), a * (nu[0] * nu[1]), a * (nu[1] * nu[1])])
        return cls(amp2.grid, vals, check=False)

    def entry(self, i, j):
        k = {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}[(i, j)]
        return ScalarField2D(self.grid, self.values[k], check=False)

    def trace(self):
        return ScalarField2D(self.grid, self.values[0] + self.values[2], check=False)

    def max_abs_eigenvalue(self):
        return ScalarField2D(self.grid, _spectral_norm(self.values), check=False)

    def min_eigenvalue(self):
        m11, m12, m22 = self.values
        half = 0.5 * (m11 + m22)
        return ScalarField2D(self.grid, half - np.hypot(0.5 * (m11 - m22), m12), check=False)


def _spectral_norm(vals):
    m11, m12, m22 = vals
    return np.abs(0.5 * (m11 + m22)) + np.hypot(0.5 * (m11 - m22), m12)


# -- finite differences -------------------------------------------------------

_ONE_SIDED_0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_ONE_SIDED_1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0


def _along(a, axis, sl):
    idx = [slice(None)] * a.ndim
    idx[axis] = sl
    return a[tuple(idx)]


def _diff(a, h, axis):
    """Fourth-order first derivative of an array along ``axis``."""
    n = a.shape[axis]
    out = np.empty_like(a)
    s = lambda start, stop=None: _along(a, axis, slice(start, stop))  # noqa: E731
    interior = _along(out, axis, slice(2, n - 2))
    np.subtract(s(3, n - 1), s(1, n - 3), out=interior)
    interior *= 8.0
    interior += s(0, n - 4)
    interior -= s(4, n)
    interior /= 12.0 * h
    head = np.moveaxis(_along(a, axis, slice(0, 5)), axis, 0)
    tail = np.moveaxis(_along(a, axis, slice(n - 1, n - 6, -1) if n > 5 else slice(None, None, -1)), axis, 0)
    # the weights sum to zero; differencing first makes constants map to exactly 0
    head = head - head[0]
    tail = tail - tail[0]
    _along(out, axis, 0)[...] = np.tensordot(_ONE_SIDED_0, head, axes=1) / h
    _along(out, axis, 1)[...] = np.tensordot(_ONE_SIDED_1, head, axes=1) / h
    _along(out, axis, n - 2)[...] = -np.tensordot(_ONE_SIDED_1, tail, axes=1) / h
    _along(out, axis, n - 1)[...] = -np.tensordot(_ONE_SIDED_0, tail, axes=1) / h
    return out


def d1(f):
    """``d/dx1`` of a field of any kind, componentwise."""
    return f._like(_diff(f.values, f.grid.h, f.values.ndim - 2))


def d2(f):
    """``d/dx2`` of a field of any kind, componentwise."""
    return f._like(_diff(f.values, f.grid.h, f.values.ndim - 1))


def gradient(f):
    h = f.grid.h
    return VectorField2D(f.grid, np.stack([_diff(f.values, h, 0), _diff(f.values, h, 1)]), check=False)


def _sym_grad_values(wv, h):
    w1, w2 = wv
    out = np.empty((3,) + w1.shape)
    out[0] = _diff(w1, h, 0)
    out[1] = _diff(w1, h, 1)
    out[1] += _diff(w2, h, 0)
    out[1] *= 0.5
    out[2] = _diff(w2, h, 1)
    return out


def sym_gradient(w):
    return SymMatField2D(w.grid, _sym_grad_values(w.values, w.grid.h), check=False)


def divergence(w):
    h = w.grid.h
    return ScalarField2D(w.grid, _diff(w.values[0], h, 0) + _diff(w.values[1], h, 1), check=False)


def hessian(f):
    h = f.grid.h
    f1 = _diff(f.values, h, 0)
    f11 = _diff(f1, h, 0)
    f12 = _diff(f1, h, 1)
    del f1
    f22 = _diff(_diff(f.values, h, 1), h, 1)
    return SymMatField2D(f.grid, np.stack([f11, f12, f22]), check=False)


def curl_curl(A):
    """``d11 A22 - 2 d12 A12 + d22 A11``; equals the Laplacian for ``A = u Id``."""
    h = A.grid.h
    m11, m12, m22 = A.values
    out = _diff(_diff(m22, h, 0), h, 0)
    out -= 2.0 * _diff(_diff(m12, h, 0), h, 1)
    out += _diff(_diff(m11, h, 1), h, 1)
    return ScalarField2D(A.grid, out, check=False)


def outer(g):
    """``g (x) g`` for a vector field."""
    g1, g2 = g.values
    return SymMatField2D(g.grid, np.stack([g1 * g1, g1 * g2, g2 * g2]), check=False)


# -- mollification ------------------------------------------------------------

def mollifier_kernel(ell, h):
    """Discrete quartic bump ``(1 - |x|^2/ell^2)^2`` normalised to unit sum."""
    r = int(math.ceil(ell / h))
    off = np.arange(-r, r + 1) * h
    rho2 = (off[:, None] ** 2 + off[None, :] ** 2) / ell**2
    k = np.where(rho2 < 1.0, (1.0 - rho2) ** 2, 0.0)
    return k / k.sum()


def mollify(f, ell, reflect="even"):
    """
    Convolve with ``phi_ell`` after extending by reflection across the boundary.

    ``reflect="even"`` mirrors values (preserves constants and sup-norms);
    ``reflect="odd"`` uses point reflection ``f(-x) = 2 f(0) - f(x)``, which
    keeps the extension C^1 and so preserves affine functions and boundary
    gradients.  Raises KernelUnresolved when ``ell < 2h`` or ``ell >= 1/4``.
    """
    if reflect not in ("even", "odd"):
        raise ValueError(f"reflect must be 'even' or 'odd', got {reflect!r}")
    h = f.grid.h
    if not (0.0 < ell < 0.25):
        raise KernelUnresolved(f"mollification scale must lie in (0, 1/4), got {ell}")
    if ell < 2.0 * h:
        raise KernelUnresolved(f"mollification scale {ell:.4g} < 2h = {2 * h:.4g}")
    kernel = mollifier_kernel(ell, h)
    r = kernel.shape[0] // 2
    out = np.empty_like(f.components)
    for i, comp in enumerate(f.components):
        padded = np.pad(comp, r, mode="reflect", reflect_type=reflect)
        out[i] = fftconvolve(padded, kernel, mode="valid")
    return f._like(out[0] if f.ncomp == 1 else out)


# -- norms --------------------------------------------------------------------

def _pointwise_norm(vals, ncomp):
    if ncomp == 1:
        return np.abs(vals[0])
    if ncomp == 2:
        return np.hypot(vals[0], vals[1])
    return _spectral_norm(vals)


def sup_norm(f):
    """Sup over the grid of |f| (Euclidean norm for vectors, operator norm for matrices)."""
    return float(_pointwise_norm(f.components, f.ncomp).max())


def matrix_sup_norm(A):
    return float(_spectral_norm(A.values).max())


def _derivatives(f, m):
    """All partial derivatives of order ``m`` of a field."""
    if m == 0:
        return [f]
    if m == 1:
        return [d1(f), d2(f)]
    if m == 2:
        g1 = d1(f)
        return [d1(g1), d2(g1), d2(d2(f))]
    raise ValueError("derivatives above order 2 are not maintained")


def c_norm(f, m):
    """``||f||_m = sum_{j<=m} max_{|b|=j} ||d^b f||_0``."""
    return sum(max(sup_norm(g) for g in _derivatives(f, j)) for j in range(m + 1))


_DIRECTIONS = ((1, 0), (0, 1), (1, 1), (1, -1))


def _shifted_pair(a, k, di, dj):
    n = a.shape[-1]
    def rng(d):
        if d > 0:
            return slice(d * k, n), slice(0, n - d * k)
        if d < 0:
            return slice(0, n + d * k), slice(-d * k, n)
        return slice(None), slice(None)
    (ip, im), (jp, jm) = rng(di), rng(dj)
    return a[..., ip, jp], a[..., im, jm]


def holder_profile(f, m=0, chunk=256):
    """
    Largest increment of the order-``m`` derivatives at each probed displacement.

    Returns ``(dist, peak)`` arrays over the dyadic displacement set (axis and
    diagonal directions, 1, 2, 4, ... cells).  The seminorm for any exponent
    ``r`` is then ``max(peak / dist**r)``, so one pass serves every ``r``.
    """
    n = f.grid.n
    h = f.grid.h
    dists, peaks = [], []
    k = 1
    while k <= n - 1:
        for di, dj in _DIRECTIONS:
            best = 0.0
            for g in _derivatives(f, m):
                plus, minus = _shifted_pair(g.components, k, di, dj)
                rows = plus.shape[-2]
                for start in range(0, rows, chunk):
                    sl = slice(start, min(rows, start + chunk))
                    diff = plus[..., sl, :] - minus[..., sl, :]
                    best = max(best, float(_pointwise_norm(diff, f.ncomp).max()))
            dists.append(k * h * math.hypot(di, dj))
            peaks.append(best)
        k *= 2
    return np.array(dists), np.array(peaks)


def seminorm_from_profile(profile, r):
    dist, peak = profile
    return float(np.max(peak / dist**r))


def holder_seminorm(f, r, m=0):
    """
    Estimate ``[f]_{m+r}`` for ``0 < r <= 1`` and ``m <= 2``.

    The supremum runs over node pairs displaced along the axes and diagonals
    by 1, 2, 4, ... cells.  The result never exceeds the seminorm taken over
    all node pairs and is within a fixed factor of it.
    """
    if not (0.0 < r <= 1.0):
        raise ValueError(f"Hoelder exponent must lie in (0, 1], got {r}")
    return seminorm_from_profile(holder_profile(f, m), r)


def holder_norm(f, r, m=0):
    """``||f||_{m+r} = ||f||_m + [f]_{m+r}``; ``r = 0`` gives the C^m norm."""
    base = c_norm(f, m)
    return base if r == 0 else base + holder_seminorm(f, r, m)


# -- binary dump and CSV ------------------------------------------------------

_MAGIC = b"MAF1"
_HEADER = struct.Struct("<4sIB7x")
_KINDS = {0: ScalarField2D, 1: VectorField2D, 2: SymMatField2D}


def dump_field(path, f):
    """Write the 16-byte header then node-major little-endian float64 values."""
    node_major = np.moveaxis(f.components, 0, -1).astype("<f8", copy=False)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, f.grid.n, f.kind))
        fh.write(np.ascontiguousarray(node_major).tobytes())


def load_field(path, mmap=False):
    with open(path, "rb") as fh:
        magic, n, kind = _HEADER.unpack(fh.read(_HEADER.size))
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a field dump (magic {magic!r})")
    cls = _KINDS[kind]
    if mmap:
        data = np.memmap(path, dtype="<f8", mode="r", offset=_HEADER.size, shape=(n, n, cls.ncomp))
    else:
        data = np.fromfile(path, dtype="<f8", offset=_HEADER.size).reshape(n, n, cls.ncomp)
    vals = np.moveaxis(data, -1, 0)
    return cls(Grid(n), vals[0] if cls.ncomp == 1 else vals)


_CSV_COLUMNS = {0: ["value"], 1: ["w1", "w2"], 2: ["m11", "m12", "m22"]}


def export_csv(path, f):
    x1, x2 = f.grid.full_mesh()
    cols = [x1.ravel(), x2.ravel()] + [c.ravel() for c in f.components]
    header = ",".join(["x", "y"] + _CSV_COLUMNS[f.kind])
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.17g")

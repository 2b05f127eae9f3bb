"""
Exponents and the per-stage parameter schedule.

Amplitudes and frequencies follow

    delta_q = a^(-b^q),   lambda_q = a^(c b^(q+1)),
    ell^(2 - alpha) = delta_{q+1} / (K1 delta_q lambda_q^2),
    mu = K2 delta_{q+1} lambda_{q+1}^alpha / (delta_{q+2} ell).

These are doubly exponential in q, so everything here is evaluated on
base-10 exponents; raw magnitudes are only formed on request and saturate
to ``inf`` instead of overflowing.
"""

import csv
import math
from dataclasses import asdict, dataclass, field, replace

from .errors import AlphaTooLarge, ConfigError

__all__ = [
    "ExponentConfig",
    "StageParams",
    "AdmissibilityRow",
    "AdmissibilityReport",
    "select_exponents",
    "make_schedule",
    "check_admissible",
    "minimal_a",
    "convergence_exponent",
]

Q_MAX = 12


def _pow10(x):
    return math.inf if x > 308.0 else 10.0**x


@dataclass(frozen=True)
class ExponentConfig:
    a: float
    b: float
    c: float
    alpha: float
    beta: float
    kappa: float
    sigma0: float = 0.1
    K: float = 10.0
    K1: float = 10.0
    K2: float = 10.0
    delta_bar: float = 0.1
    epsilon: float = 0.1
    alpha0: float = 0.1
    C1: float = 4.0
    C2: float = 4.0

    def __post_init__(self):
        for name, val in asdict(self).items():
            if not isinstance(val, (int, float)) or not math.isfinite(val):
                raise ConfigError(f"{name} must be a finite number, got {val!r}")
        if not self.a > 1:
            raise ConfigError(f"a must exceed 1, got {self.a}")
        for name in ("b", "c", "sigma0", "K", "K1", "K2", "delta_bar", "epsilon", "alpha0", "C1", "C2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.alpha < 0.5:
            raise ConfigError(f"alpha must lie in [0, 1/2), got {self.alpha}")

    @property
    def log10_a(self):
        return math.log10(self.a)

    @property
    def beta_max(self):
        return 1.0 / (2.0 * self.b * self.c)

    def with_(self, **changes):
        return replace(self, **changes)

    def invariant_violations(self):
        """Human-readable list of the structural conditions that fail (empty if none)."""
        out = []
        al, b, c = self.alpha, self.b, self.c
        if not b > 1:
            out.append(f"b = {b} must exceed 1")
        bounds = _bc_bounds(al, b)
        if bounds is None:
            out.append(f"b = {b} is below the bound {2.0 / ((2 - al) * (1 - 2 * al)):.6g}")
        elif not c > max(bounds):
            out.append(f"c = {c} must exceed {max(bounds):.6g}")
        if not self.beta < self.beta_max:
            out.append(f"beta = {self.beta} must be below 1/(2bc) = {self.beta_max:.6g}")
        if not 0 < self.kappa < 1:
            out.append(f"kappa = {self.kappa} must lie in (0, 1)")
        elif not self.kappa > _kappa_bound(al, b, c):
            out.append(f"kappa = {self.kappa} must exceed {_kappa_bound(al, b, c):.6g}")
        if not al < min(self.kappa, self.alpha0):
            out.append(f"alpha = {al} must be below min(kappa, alpha0)")
        return out


def _bc_bounds(alpha, b):
    """Lower bounds for c, or None when the b-condition already fails."""
    denom = b * ((2 - alpha) * (1 - 2 * alpha) * b - 2)
    if denom <= 0:
        return None
    c_main = (2 * (2 - alpha) * b**2 - (3 - 2 * alpha) * b - 1) / denom
    c_init = 1.0 / (2 * b) + 2.0 / (1 - 2 * alpha)
    return c_main, c_init


def _kappa_bound(alpha, b, c):
    return (c * b**2 * alpha * (2 - alpha) + b**2 * (2 - alpha)) / (2 * c * b - 1 + b)


def select_exponents(alpha, margin):
    """
    Smallest admissible ``(b, c, kappa)`` inflated by ``1 + margin``, and ``beta_max = 1/(2bc)``.

    Raises AlphaTooLarge when the bounds are vacuous for this ``alpha`` and
    ValueError when ``b`` would not exceed 1 (``alpha = margin = 0``).
    """
    if not 0 <= alpha < 0.1:
        raise AlphaTooLarge(f"alpha must lie in [0, 0.1), got {alpha}")
    if margin < 0:
        raise ValueError(f"margin must be nonnegative, got {margin}")
    b = 2.0 / ((2 - alpha) * (1 - 2 * alpha)) * (1 + margin)
    if not b > 1:
        raise ValueError(f"b = {b} does not exceed 1; a positive margin or alpha is required")
    bounds = _bc_bounds(alpha, b)
    if bounds is None:
        raise AlphaTooLarge(f"no admissible c for alpha = {alpha}, b = {b}")
    c = max(bounds) * (1 + margin)
    kappa = _kappa_bound(alpha, b, c) * (1 + margin)
    return b, c, kappa, 1.0 / (2 * b * c)


@dataclass(frozen=True)
class StageParams:
    """Stage parameters; magnitudes saturate to inf, ``log10`` keeps the exact exponents."""

    q: int
    delta_q: float
    delta_q1: float
    delta_q2: float
    lambda_q: float
    lambda_q1: float
    ell: float
    mu: float
    log10: dict = field(repr=False, compare=False)


_PARAM_NAMES = ("delta_q", "delta_q1", "delta_q2", "lambda_q", "lambda_q1", "ell", "mu")


def _log_params(cfg, q):
    L = cfg.log10_a
    b, c, al = cfg.b, cfg.c, cfg.alpha
    ld = [-(b ** (q + k)) * L for k in range(3)]
    ll = [c * b ** (q + 1 + k) * L for k in range(2)]
    lell = (ld[1] - math.log10(cfg.K1) - ld[0] - 2 * ll[0]) / (2 - al)
    lmu = math.log10(cfg.K2) + ld[1] + al * ll[1] - ld[2] - lell
    return dict(zip(_PARAM_NAMES, (ld[0], ld[1], ld[2], ll[0], ll[1], lell, lmu)))


def make_schedule(cfg, q):
    """Parameters of stage ``q``; attributes are magnitudes, ``.log10`` holds exponents."""
    if q < 0:
        raise ValueError("stage index must be nonnegative")
    logs = _log_params(cfg, q)
    return StageParams(q, **{k: _pow10(v) for k, v in logs.items()}, log10=logs)


def convergence_exponent(cfg, beta, q):
    """Base-a exponent ``b^(q+1) (-1 + 2 c b beta) / 2`` of the C^{1+beta} increment bound."""
    return cfg.b ** (q + 1) * (-1 + 2 * cfg.c * cfg.b * beta) / 2


@dataclass(frozen=True)
class AdmissibilityRow:
    ineq: str
    q: int
    lhs: float
    rhs: float
    strict: bool

    @property
    def slack(self):
        return self.lhs - self.rhs

    @property
    def passed(self):
        tol = 1e-12 * max(1.0, abs(self.lhs), abs(self.rhs))
        return self.slack > tol if self.strict else self.slack >= -tol


@dataclass
class AdmissibilityReport:
    rows: list
    log10_a: float

    def failures(self):
        return [r for r in self.rows if not r.passed]

    @property
    def all_pass(self):
        return not self.failures()

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["ineq", "q", "lhs_log10", "rhs_log10", "slack", "pass"])
            for r in self.rows:
                out.writerow([r.ineq, r.q, repr(r.lhs), repr(r.rhs), repr(r.slack), int(r.passed)])


# Every inequality as "lhs >= rhs" (or ">" when strict) between base-10 exponents.
# Ids: m* = monotonicity block, c1..c6 = chain of frequency links, k = Hoelder exponent link.
def _rows_for(cfg, q):
    p = _log_params(cfg, q)
    nxt = _log_params(cfg, q + 1)
    al, ka = cfg.alpha, cfg.kappa
    dq, dq1, dq2 = p["delta_q"], p["delta_q1"], p["delta_q2"]
    lq, lq1 = p["lambda_q"], p["lambda_q1"]
    ell, mu = p["ell"], p["mu"]
    top = 2 * dq1 + al * lq1 - 2 * dq2 - ell
    pump = 0.5 * (dq - dq1) + lq
    return [
        AdmissibilityRow("m1_delta_lambda2_ge_1", q, dq + 2 * lq, 0.0, False),
        AdmissibilityRow("m2_delta_decreasing", q, dq, dq1, True),
        AdmissibilityRow("m3_delta_le_1", q, 0.0, dq, False),
        AdmissibilityRow("m4_lambda_increasing", q, nxt["lambda_q"], lq, True),
        AdmissibilityRow("m5_lambda_ge_1", q, lq, 0.0, False),
        AdmissibilityRow("c1_lambda_cap", q, (1 - al) * lq1, top, False),
        AdmissibilityRow("c2_cap_ge_mu", q, top, mu, False),
        AdmissibilityRow("c3_mu_ge_inv_ell", q, mu, -ell, False),
        AdmissibilityRow("c4_inv_ell_ge_ell_pow", q, -ell, (-1 + al / 2) * ell, False),
        AdmissibilityRow("c5_ell_pow_ge_pump", q, (-1 + al / 2) * ell, pump, False),
        AdmissibilityRow("c6_pump_ge_lambda", q, pump, lq, False),
        AdmissibilityRow("k_holder_link", q, (2 - al) * dq2 + ka * dq + 2 * ka * lq,
                         ka * dq1 + al * (2 - al) * lq1, False),
    ]


def check_admissible(cfg, q_max):
    """Evaluate every schedule inequality for ``q = 0 .. q_max``; failures are data."""
    if not 0 <= q_max <= Q_MAX:
        raise ValueError(f"q_max must lie in [0, {Q_MAX}], got {q_max}")
    rows = []
    for q in range(q_max + 1):
        rows.extend(_rows_for(cfg, q))
    return AdmissibilityReport(rows, cfg.log10_a)


def minimal_a(cfg, q_max, log10_cap=1e6, rel_tol=1e-10):
    """
    Smallest ``a`` (as ``log10 a``) for which ``check_admissible(cfg(a), q_max)`` passes.

    Doubles ``log10 a`` until the inequalities pass, then bisects.  Every
    inequality is affine in ``log10 a``, so the passing set is a half-line when
    it is nonempty.  Returns None if no ``a`` up to ``10**log10_cap`` works.
    """
    def ok(L):
        return check_admissible(replace(cfg, a=_pow10(L)) if L <= 300 else _BigA(cfg, L), q_max).all_pass

    hi = 1e-3
    while not ok(hi):
        hi *= 2
        if hi > log10_cap:
            return None
    lo = hi / 2 if hi > 1e-3 else 0.0
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


class _BigA:
    """Stand-in config for ``a`` beyond double range: only exponents are used."""

    def __init__(self, cfg, log10_a):
        self._cfg = cfg
        self.log10_a = log10_a

    def __getattr__(self, name):
        return getattr(self._cfg, name)

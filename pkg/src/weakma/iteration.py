"""
The constructive pipeline.

1. ``build_A`` turns ``f`` into a matrix field with ``-curl curl A = f``.
2. ``initial_approximation`` corrugates ``v_flat`` along the primitive
   directions until the deficit is a small perturbation of ``delta_bar Id``.
3. ``further_approximation`` diagonalises that deficit and adds two
   corrugations, producing ``(v_0, w_0)`` with deficit of order ``delta_1``.
4. ``stage`` maps ``(v_q, w_q)`` to ``(v_{q+1}, w_{q+1})``: mollify,
   diagonalise, corrugate along ``e1`` at frequency ``mu`` and along ``e2``
   at frequency ``lambda_{q+1}``.

Every measured quantity is collected in plain report objects; nothing here
asserts an asymptotic estimate.
"""

import csv
import json
import logging
import math
import os
import shutil
import warnings
from dataclasses import asdict, dataclass, field

from .corrugation import add_corrugation, corrugation_error, nash_decompose
from .elliptic import build_A, diagonalize
from .errors import (
    AdmissibilityFailed,
    ConfigError,
    FrequencyUnresolved,
    ResolutionExhausted,
    ToleranceNotMet,
    required_grid_size,
)
from .fields import (
    ScalarField2D,
    SymMatField2D,
    VectorField2D,
    _diff,
    dump_field,
    holder_norm,
    load_field,
    mollify,
    sup_norm,
    sym_gradient,
)
from .schedule import check_admissible, make_schedule
from .verify import deficit

log = logging.getLogger(__name__)

# fields are continued past the boundary by point reflection before mollifying,
# so boundary gradients (and hence the quadratic part of the deficit) survive
_REFLECT = "odd"
E1 = (1.0, 0.0)
E2 = (0.0, 1.0)

__all__ = [
    "StageReport",
    "SolutionBundle",
    "initial_approximation",
    "further_approximation",
    "stage",
    "solve",
]


def _alpha_norm(F, alpha):
    return holder_norm(F, alpha) if alpha > 0 else sup_norm(F)


def _grad_sup(f):
    """``max_i sup |d_i f|`` over both partial derivatives."""
    h = f.grid.h
    axis0 = f.values.ndim - 2
    best = 0.0
    for ax in (axis0, axis0 + 1):
        g = f._like(_diff(f.values, h, ax))
        best = max(best, sup_norm(g))
    return best


def _second_sup(f):
    h = f.grid.h
    ax = f.values.ndim - 2
    g1 = _diff(f.values, h, ax)
    best = max(sup_norm(f._like(_diff(g1, h, ax))), sup_norm(f._like(_diff(g1, h, ax + 1))))
    del g1
    g22 = _diff(_diff(f.values, h, ax + 1), h, ax + 1)
    return max(best, sup_norm(f._like(g22)))


def _resolution_check(freq, grid):
    if freq * grid.h > 0.125:
        raise FrequencyUnresolved(freq, grid.n)


# -- Step 2 -------------------------------------------------------------------

def initial_approximation(v_flat, A, delta_bar, sigma0, epsilon, alpha=0.0, mu_start=1.0, info=None):
    """
    Corrugate ``(v_flat, 0)`` until ``A - 1/2 grad v (x) grad v - sym grad w`` is within
    ``sigma0 delta_bar / 2`` of ``delta_bar Id``.

    The shifted deficit ``A - 1/2 grad v_flat (x) grad v_flat - delta_bar Id`` is split
    into ``N`` rank-one pieces; piece ``i`` is added at the smallest frequency
    ``mu_i = mu_{i-1} 2^k`` whose error matrix has ``alpha``-norm at most
    ``sigma0 delta_bar / (2N)`` and whose C^0 displacement is at most
    ``epsilon / (2N)``.  Returns ``(v_bar, w_bar)``; if ``info`` is a dict it
    receives the chosen frequencies and measured errors.
    """
    grid = v_flat.grid
    w = VectorField2D.zeros(grid)
    shifted = deficit(A, v_flat, w, delta_bar)
    dec = nash_decompose(shifted)
    del shifted
    active = [(a, nu) for a, nu in dec.terms if float(a.values.max()) > 0.0]
    N = len(active)
    rec = {"N": N, "freqs": [], "e_alpha": [], "c0": []}
    if info is not None:
        info.update(rec)
        rec = info
    if N == 0:
        rec["final_deficit_alpha"] = 0.0
        return v_flat, w
    tol_e = sigma0 * delta_bar / (2 * N)
    tol_c0 = epsilon / (2 * N)
    v = v_flat
    mu = float(mu_start)
    for a, nu in active:
        while True:
            if mu * grid.h > 0.125:
                raise ResolutionExhausted(
                    f"initial approximation: no resolvable frequency meets |E|_alpha <= {tol_e:.3g} "
                    f"and C0 displacement <= {tol_c0:.3g} (last tried mu={mu / 2:g}: "
                    f"|E|={last_e:.3g}, displacement={last_c0:.3g})",
                    required_grid_size(8.0 * (mu / 2) * max(last_e / tol_e, last_c0 / tol_c0, 2.0)),
                )
            v2, w2 = add_corrugation(v, w, a, nu, mu)
            c0 = sup_norm(v2 - v) + sup_norm(w2 - w)
            E = corrugation_error(v, w, v2, w2, a, nu)
            e = sup_norm(E)
            if e <= tol_e and c0 <= tol_c0:
                e = _alpha_norm(E, alpha)
            last_e, last_c0 = e, c0
            del E
            if e <= tol_e and c0 <= tol_c0:
                break
            del v2, w2
            mu *= 2.0
        log.info("initial approximation: direction %s at mu=%g, |E|_alpha=%.3g", nu, mu, e)
        rec["freqs"].append(mu)
        rec["e_alpha"].append(e)
        rec["c0"].append(c0)
        v, w = v2, w2
    final = deficit(A, v, w, delta_bar)
    rec["final_deficit_alpha"] = _alpha_norm(final, alpha)
    if rec["final_deficit_alpha"] > sigma0 * delta_bar / 2 * (1 + 1e-9):
        warnings.warn(
            f"initial approximation deficit {rec['final_deficit_alpha']:.3g} exceeds "
            f"sigma0*delta_bar/2 = {sigma0 * delta_bar / 2:.3g}",
            stacklevel=2,
        )
    return v, w


# -- Step 3 -------------------------------------------------------------------

def _clip_scale(ell, grid):
    return min(max(ell, 2.0 * grid.h), 0.2499)


def further_approximation(v_bar, w_bar, A, cfg, ell0=None, info=None):
    """
    One diagonalisation and two corrugations producing ``(v_0, w_0)``.

    ``A`` is mollified at ``ell0`` (default: the q = 0 schedule scale, clipped
    to the grid), the deficit ``A~ - delta_1 Id - Q(v_bar, w_bar)`` is
    diagonalised after division by ``delta_bar - delta_1``, and corrugations
    along ``e1`` and ``e2`` are added at

        theta  = C1 delta_1^(-1/(1-2 alpha)),
        lambda = C2 theta^(1/(1-alpha)) delta_1^(-1/(1-alpha)).

    ``C1`` and ``C2`` are doubled (at most four times) until
    ``|A - delta_1 Id - Q(v_0, w_0)|_alpha <= sigma0 delta_1``.
    """
    grid = v_bar.grid
    sp = make_schedule(cfg, 0)
    d1 = sp.delta_q1
    dbar = cfg.delta_bar
    if not dbar > d1:
        raise ConfigError(f"delta_bar = {dbar} must exceed delta_1 = {d1:.6g}")
    alpha = cfg.alpha
    ell0 = _clip_scale(sp.ell if ell0 is None else ell0, grid)
    A_t = mollify(A, ell0, reflect=_REFLECT)
    scale = dbar - d1
    D = deficit(A_t, v_bar, w_bar, d1)
    del A_t
    res = diagonalize(D / scale)
    del D
    w_star = res.Phi * (-scale)
    amp = res.d * math.sqrt(scale)
    w_base = w_bar + w_star
    del w_star
    rec = info if info is not None else {}
    rec.update({"ell0": ell0, "diag_residual": res.residual_sup * scale, "attempts": []})
    C1, C2 = cfg.C1, cfg.C2
    target = cfg.sigma0 * d1
    for attempt in range(5):
        theta = C1 * d1 ** (-1.0 / (1 - 2 * alpha))
        lam = C2 * theta ** (1.0 / (1 - alpha)) * d1 ** (-1.0 / (1 - alpha))
        if lam * grid.h > 0.125:
            raise ResolutionExhausted(
                f"further approximation needs frequency {lam:.4g} (C1={C1:g}, C2={C2:g})",
                required_grid_size(8.0 * lam),
            )
        v_hat, w_hat = add_corrugation(v_bar, w_base, amp, E1, theta)
        v0, w0 = add_corrugation(v_hat, w_hat, amp, E2, lam)
        del v_hat, w_hat
        D0 = deficit(A, v0, w0, d1)
        measured = _alpha_norm(D0, alpha)
        del D0
        rec["attempts"].append({"C1": C1, "C2": C2, "theta": theta, "lambda": lam, "deficit_alpha": measured})
        log.info("further approximation: theta=%.4g lambda=%.4g deficit=%.3g (target %.3g)",
                 theta, lam, measured, target)
        if measured <= target:
            break
        C1 *= 2.0
        C2 *= 2.0
    else:
        raise ToleranceNotMet(
            f"further approximation deficit {measured:.4g} > sigma0*delta_1 = {target:.4g} "
            "after 4 doublings of C1, C2; increase C1/C2 or n",
            measured,
        )
    c2 = _second_sup(v0) + _second_sup(w0)
    rec.update({
        "theta": theta, "lambda": lam, "deficit_alpha": measured,
        "c2_norm": c2, "c2_target": cfg.K * math.sqrt(sp.delta_q) * sp.lambda_q,
    })
    return v0, w0


# -- Stage --------------------------------------------------------------------

@dataclass
class StageReport:
    q: int
    deficit_sup_before: float
    deficit_sup_after: float
    deficit_grad_after: float
    e1_sup: float
    e2_sup: float
    c0_displacement_v: float
    c0_displacement_w: float
    c1_displacement: float
    c2_norm_v: float
    c2_norm_w: float
    measured_targets: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def flat(self):
        row = {k: v for k, v in asdict(self).items() if not isinstance(v, dict)}
        for group in ("params", "measured_targets", "diagnostics"):
            for k, v in getattr(self, group).items():
                row[f"{group[:6]}.{k}" if group != "params" else k] = v
        return row


def stage(v_q, w_q, A, q, cfg, info=None):
    """
    One stage ``(v_q, w_q) -> (v_{q+1}, w_{q+1})``; returns ``(v, w, StageReport)``.

    The new deficit satisfies the bookkeeping identity
    ``D_{q+1} = A - A~ - E1 - E2 + R`` where ``R`` is the measured residual of
    the discrete diagonalisation (scaled by ``delta_{q+1}``); the report
    records how closely the from-scratch deficit matches it.
    """
    grid = v_q.grid
    sp = make_schedule(cfg, q)
    d_q1, d_q2 = sp.delta_q1, sp.delta_q2
    mu, lam = sp.mu, sp.lambda_q1
    alpha = cfg.alpha
    _resolution_check(mu, grid)
    _resolution_check(lam, grid)

    # hypotheses at entry: warn only
    D_q = deficit(A, v_q, w_q, d_q1)
    d_before_sup = sup_norm(D_q)
    d_before_alpha = _alpha_norm(D_q, alpha)
    del D_q
    vw2 = _second_sup(v_q) + _second_sup(w_q)
    hyp = {
        "deficit_alpha": d_before_alpha / (cfg.sigma0 * d_q1),
        "c2": vw2 / (cfg.K * math.sqrt(sp.delta_q) * sp.lambda_q),
    }
    for name, ratio in hyp.items():
        if ratio > 1.0:
            warnings.warn(f"stage {q}: entry hypothesis '{name}' violated (ratio {ratio:.3g})", stacklevel=2)

    # Step 1: regularisation and diagonalisation
    ell = sp.ell
    v_t = mollify(v_q, ell, reflect=_REFLECT)
    w_t = mollify(w_q, ell, reflect=_REFLECT)
    A_t = mollify(A, ell, reflect=_REFLECT)
    frak = deficit(A_t, v_t, w_t, d_q2)
    res = diagonalize(frak / d_q1)
    w_star = res.Phi * (-d_q1)
    d = res.d * math.sqrt(d_q1)
    # R = frak - sym grad w_* - d^2 Id: the discrete diagonalisation residual
    R = frak - sym_gradient(w_star) - SymMatField2D.identity(grid, d * d)
    del frak
    d2_range = (float(res.d.values.min() ** 2), float(res.d.values.max() ** 2))

    # Steps 2 and 3: two corrugations
    w_base = w_t + w_star
    del w_star, w_t
    v1, w1 = add_corrugation(v_t, w_base, d, E1, mu)
    Ea = corrugation_error(v_t, w_base, v1, w1, d, E1)
    del w_base
    v_new, w_new = add_corrugation(v1, w1, d, E2, lam)
    Eb = corrugation_error(v1, w1, v_new, w_new, d, E2)
    del v1, w1, v_t

    # bookkeeping: D_{q+1} recomputed from scratch against A - A~ - E1 - E2 + R
    D_new = deficit(A, v_new, w_new, d_q2)
    assembled = A - A_t
    assembled = assembled - Ea
    assembled = assembled - Eb
    assembled = assembled + R
    e1_sup, e2_sup, r_sup = sup_norm(Ea), sup_norm(Eb), sup_norm(R)
    del Ea, Eb, A_t, R
    D_sup = sup_norm(D_new)
    bookkeeping = sup_norm(D_new - assembled) / max(sup_norm(A), D_sup)
    del assembled
    D_alpha = _alpha_norm(D_new, alpha)
    D_grad = _grad_sup(D_new)
    del D_new

    dv = v_new - v_q
    dw = w_new - w_q
    c0v, c0w = sup_norm(dv), sup_norm(dw)
    gv = _grad_sup(dv)
    c1 = gv + _grad_sup(dw)
    del dv, dw
    c2v, c2w = _second_sup(v_new), _second_sup(w_new)

    sq = math.sqrt(d_q1)
    targets = {
        "dq1_alpha": D_alpha / (cfg.sigma0 * d_q2),
        "dq1_grad": D_grad / (cfg.sigma0 / 3 * d_q2 * lam ** (1 - alpha)),
        "v_c0": c0v / sq,
        "w_c0": c0w / d_q1,
        "c1": c1 / sq,
        "c2": (c2v + c2w) / (cfg.K * sq * lam),
        "e1_scaled": e1_sup * mu * ell / d_q1,
        "e2_scaled": e2_sup * lam / (d_q1 * mu),
    }
    gamma = -math.log(max(c0v, 1e-300) / sq) / math.log(lam) if lam > 1 else float("nan")
    report = StageReport(
        q=q,
        deficit_sup_before=d_before_sup,
        deficit_sup_after=D_sup,
        deficit_grad_after=D_grad,
        e1_sup=e1_sup,
        e2_sup=e2_sup,
        c0_displacement_v=c0v,
        c0_displacement_w=c0w,
        c1_displacement=c1,
        c2_norm_v=c2v,
        c2_norm_w=c2w,
        measured_targets=targets,
        params={"delta_q1": d_q1, "delta_q2": d_q2, "ell": ell, "mu": mu, "lambda_q1": lam},
        diagnostics={
            "entry_deficit_alpha_ratio": hyp["deficit_alpha"],
            "entry_c2_ratio": hyp["c2"],
            "deficit_alpha_after": D_alpha,
            "diag_residual": r_sup,
            "bookkeeping_error": bookkeeping,
            "d2bar_min": d2_range[0],
            "d2bar_max": d2_range[1],
            "gamma": gamma,
            "v_c1_increment": c0v + gv,
        },
    )
    return v_new, w_new, report


# -- driver -------------------------------------------------------------------

class SnapshotStore:
    """
    Per-stage ``(v_q, w_q)`` snapshots, kept in memory or spilled to field dumps.

    Spilled snapshots are reopened memory-mapped, so a long run holds only the
    working set of one stage in RAM.
    """

    def __init__(self, directory=None):
        self.directory = directory
        self._items = []

    def append(self, v, w):
        q = len(self._items)
        if self.directory is None:
            self._items.append((v, w))
            return
        pv = os.path.join(self.directory, f"v_{q}.maf")
        pw = os.path.join(self.directory, f"w_{q}.maf")
        dump_field(pv, v)
        dump_field(pw, w)
        self._items.append((pv, pw))

    def __len__(self):
        return len(self._items)

    def __getitem__(self, q):
        v, w = self._items[q]
        if isinstance(v, str):
            return load_field(v, mmap=True), load_field(w, mmap=True)
        return v, w

    def __iter__(self):
        return (self[q] for q in range(len(self)))

    def paths(self):
        return list(self._items) if self.directory is not None else None


@dataclass
class SolutionBundle:
    v_final: ScalarField2D
    w_final: VectorField2D
    snapshots: SnapshotStore
    reports: list
    config: object
    A: SymMatField2D
    v_flat: ScalarField2D
    c: float = 0.0
    log: dict = field(default_factory=dict)

    @property
    def stages(self):
        return len(self.reports)

    def c0_distance(self):
        return sup_norm(self.v_final - self.v_flat)

    def save(self, directory):
        """Write config.json, v_q/w_q field dumps, A, and reports.csv into ``directory``."""
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "config.json"), "w") as fh:
            json.dump(asdict(self.config), fh, indent=2, sort_keys=True)
            fh.write("\n")
        for q in range(len(self.snapshots)):
            stored = self.snapshots._items[q]
            for name, item in zip(("v", "w"), stored):
                target = os.path.join(directory, f"{name}_{q}.maf")
                if isinstance(item, str):
                    if os.path.abspath(item) != os.path.abspath(target):
                        shutil.copyfile(item, target)
                else:
                    dump_field(target, item)
        dump_field(os.path.join(directory, "A.maf"), self.A)
        write_reports_csv(os.path.join(directory, "reports.csv"), self.reports)


def write_reports_csv(path, reports):
    rows = [r.flat() for r in reports]
    keys = []
    for row in rows:
        keys.extend(k for k in row if k not in keys)
    with open(path, "w", newline="") as fh:
        out = csv.DictWriter(fh, fieldnames=keys or ["q"], lineterminator="\n")
        out.writeheader()
        for row in rows:
            out.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()})


def solve(f, v_flat, cfg, stages, workdir=None, ell0=None, mu_start=1.0):
    """
    Full pipeline: ``build_A``, initial and further approximation, then ``stages`` stages.

    Raises AdmissibilityFailed before any field work if the schedule
    inequalities fail for ``q <= stages``.  Snapshots are spilled to ``workdir``
    when given (recommended for n >= 2049).
    """
    if stages < 0:
        raise ConfigError("stages must be nonnegative")
    report = check_admissible(cfg, max(stages, 0))
    if not report.all_pass:
        raise AdmissibilityFailed(report)
    grid = f.grid
    for q in range(stages):
        sp = make_schedule(cfg, q)
        for name, freq in (("mu", sp.mu), ("lambda_q1", sp.lambda_q1)):
            if freq * grid.h > 0.125:
                raise ResolutionExhausted(
                    f"stage {q} frequency {name}={freq:.4g} exceeds the grid at n={grid.n}",
                    required_grid_size(8.0 * freq),
                )
    logs = {"initial": {}, "further": {}}
    A, u, c = build_A(f, v_flat, cfg.delta_bar)
    del u
    v_bar, w_bar = initial_approximation(
        v_flat, A, cfg.delta_bar, cfg.sigma0, cfg.epsilon, alpha=cfg.alpha,
        mu_start=mu_start, info=logs["initial"],
    )
    v, w = further_approximation(v_bar, w_bar, A, cfg, ell0=ell0, info=logs["further"])
    del v_bar, w_bar
    store = SnapshotStore(workdir)
    store.append(v, w)
    reports = []
    for q in range(stages):
        v, w, rep = stage(v, w, A, q, cfg)
        log.info("stage %d: |D|_0 %.3g -> %.3g", q, rep.deficit_sup_before, rep.deficit_sup_after)
        reports.append(rep)
        store.append(v, w)
        if workdir is not None:
            # continue from the mapped copy so the in-memory arrays can be released
            v, w = store[len(store) - 1]
    return SolutionBundle(v, w, store, reports, cfg, A, v_flat, c, logs)

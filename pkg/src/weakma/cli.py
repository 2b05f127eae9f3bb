"""
Batch front-end.

    weakma solve run.cfg [--output-dir DIR] [--quiet]
    weakma check run.cfg [--output-dir DIR] [--quiet]

Configs are flat ``key = value`` files with ``#`` comments.  Input functions
come from a small catalog:

    zero              0
    const:k           k
    sinsin:j,k[,amp]  amp sin(j pi x1) sin(k pi x2)          (amp defaults to 1)
    poly:c0,...,c5    c0 + c1 x1 + c2 x2 + c3 x1^2 + c4 x1 x2 + c5 x2^2

Exit status: 0 success, 1 failed admissibility check, 2 config error,
3 pipeline error.
"""

import argparse
import csv
import logging
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, InsufficientStages, TestModeUnresolved, WeakMAError
from .fields import Grid, ScalarField2D, c_norm, sup_norm
from .iteration import solve
from .schedule import Q_MAX, ExponentConfig, check_admissible, minimal_a, select_exponents
from .verify import bending_family, convergence_report, deficit, distributional_residual

__all__ = ["RunConfig", "parse_config", "load_config", "function_from_spec", "run_solve", "run_check", "main"]

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_PIPELINE = 0, 1, 2, 3

_EXPONENT_KEYS = tuple(f.name for f in fields(ExponentConfig))
_DEFAULTS = {f.name: f.default for f in fields(ExponentConfig) if f.name not in ("a", "b", "c", "beta", "kappa")}


@dataclass
class RunConfig:
    exponents: ExponentConfig
    n: int
    stages: int = 0
    f_spec: str = "zero"
    v_flat_spec: str = "zero"
    J: int = 8
    output_dir: str = "weakma-run"
    seed: int = 0
    ell0: float = None
    mu_start: float = 1.0
    margin: float = 0.05


# -- expression catalog -------------------------------------------------------

def _numbers(spec, body, lo, hi):
    try:
        vals = [float(t) for t in body.split(",")] if body.strip() else []
    except ValueError:
        raise ConfigError(f"malformed numbers in function spec {spec!r}") from None
    if not lo <= len(vals) <= hi:
        raise ConfigError(f"function spec {spec!r} takes {lo} to {hi} arguments, got {len(vals)}")
    return vals


def function_from_spec(spec, grid):
    """Sample a catalog expression on ``grid``; raises ConfigError for unknown tags."""
    spec = spec.strip()
    tag, _, body = spec.partition(":")
    x1, x2 = grid.full_mesh()
    if tag == "zero" and not body:
        return ScalarField2D.zeros(grid)
    if tag == "const":
        (k,) = _numbers(spec, body, 1, 1)
        return ScalarField2D(grid, np.full((grid.n, grid.n), k), check=False)
    if tag == "sinsin":
        vals = _numbers(spec, body, 2, 3)
        j, k = vals[0], vals[1]
        amp = vals[2] if len(vals) == 3 else 1.0
        return ScalarField2D(grid, amp * np.sin(j * math.pi * x1) * np.sin(k * math.pi * x2), check=False)
    if tag == "poly":
        c = _numbers(spec, body, 1, 6)
        c = c + [0.0] * (6 - len(c))
        vals = c[0] + c[1] * x1 + c[2] * x2 + c[3] * x1**2 + c[4] * x1 * x2 + c[5] * x2**2
        return ScalarField2D(grid, vals, check=False)
    raise ConfigError(f"unknown function spec {spec!r}")


# -- config parsing -----------------------------------------------------------

_ALIASES = {"f": "f_spec", "v_flat": "v_flat_spec", "output": "output_dir"}
_INT_KEYS = ("n", "stages", "J", "seed")
_FLOAT_KEYS = _EXPONENT_KEYS + ("ell0", "mu_start", "margin")
_STR_KEYS = ("f_spec", "v_flat_spec", "output_dir")


def _read_pairs(text):
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key = _ALIASES.get(key, key)
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = val
    return pairs


def parse_config(text):
    """Parse config text into a RunConfig, completing omitted exponents."""
    pairs = _read_pairs(text)
    known = set(_INT_KEYS) | set(_FLOAT_KEYS) | set(_STR_KEYS)
    for key in pairs:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    if "n" not in pairs:
        raise ConfigError("config key 'n' is required")
    vals = {}
    for key, raw in pairs.items():
        try:
            if key in _INT_KEYS:
                vals[key] = int(raw)
            elif key == "a" and raw == "auto":
                vals[key] = "auto"
            elif key in _FLOAT_KEYS:
                vals[key] = float(raw)
            else:
                vals[key] = raw
        except ValueError:
            raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None

    n = vals["n"]
    if n < 9 or (n - 1) & (n - 2) != 0:
        raise ConfigError(f"config key 'n': must be 2^k + 1 with k >= 3, got {n}")
    stages = vals.get("stages", 0)
    if not 0 <= stages <= Q_MAX:
        raise ConfigError(f"config key 'stages': must lie in [0, {Q_MAX}], got {stages}")
    J = vals.get("J", 8)
    if J < 1:
        raise ConfigError(f"config key 'J': must be positive, got {J}")
    for key in ("f_spec", "v_flat_spec"):
        try:
            function_from_spec(vals.get(key, "zero"), Grid(9))
        except ConfigError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from None

    alpha = vals.get("alpha", 0.01)
    margin = vals.get("margin", 0.05)
    missing = [k for k in ("b", "c", "kappa") if k not in vals]
    try:
        if missing:
            b, c, kappa, _ = select_exponents(alpha, margin)
            chosen = {"b": b, "c": c, "kappa": kappa}
            for k in missing:
                vals[k] = chosen[k]
        beta = vals.get("beta", 0.5 / (2 * vals["b"] * vals["c"]))
        kw = {k: vals.get(k, _DEFAULTS[k]) for k in _DEFAULTS}
        kw.update(alpha=alpha, b=vals["b"], c=vals["c"], kappa=vals["kappa"], beta=beta)
        a = vals.get("a", "auto")
        if a == "auto":
            # minimal_a only reads exponents, any a > 1 will do as a placeholder
            L = minimal_a(ExponentConfig(a=10.0, **kw), stages)
            if L is None or L > 300:
                raise ConfigError("config key 'a': no admissible a within double range; set a explicitly")
            a = 10.0**L
        cfg = ExponentConfig(a=a, **kw)
    except (ValueError, WeakMAError) as exc:
        raise ConfigError(str(exc)) from None

    return RunConfig(
        exponents=cfg,
        n=n,
        stages=stages,
        f_spec=vals.get("f_spec", "zero"),
        v_flat_spec=vals.get("v_flat_spec", "zero"),
        J=J,
        output_dir=vals.get("output_dir", "weakma-run"),
        seed=vals.get("seed", 0),
        ell0=vals.get("ell0"),
        mu_start=vals.get("mu_start", 1.0),
        margin=margin,
    )


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    return parse_config(text)


# -- output helpers -----------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def _say(quiet, *parts):
    if not quiet:
        print(*parts)


# -- commands -----------------------------------------------------------------

def run_check(rc, output_dir=None, quiet=False):
    """Evaluate the schedule inequalities for ``q <= stages``; exit 0 iff all pass."""
    out = output_dir or rc.output_dir
    os.makedirs(out, exist_ok=True)
    cfg = rc.exponents
    report = check_admissible(cfg, rc.stages)
    report.to_csv(os.path.join(out, "admissibility.csv"))
    structural = cfg.invariant_violations()
    failures = report.failures()
    _say(quiet, f"a = 10^{cfg.log10_a:.6g}  b = {cfg.b:.6g}  c = {cfg.c:.6g}  "
                f"kappa = {cfg.kappa:.6g}  beta_max = {cfg.beta_max:.6g}")
    _say(quiet, f"{len(report.rows) - len(failures)}/{len(report.rows)} inequalities pass for q <= {rc.stages}")
    for r in failures:
        _say(quiet, f"  FAIL {r.ineq} q={r.q}: slack {r.slack:.6g}")
    for msg in structural:
        _say(quiet, f"  structural: {msg}")
    return EXIT_OK if not failures and not structural else EXIT_CHECK


def run_solve(rc, output_dir=None, quiet=False):
    """Run the pipeline and write the bundle directory plus CSV tables."""
    out = output_dir or rc.output_dir
    os.makedirs(out, exist_ok=True)
    cfg = rc.exponents
    grid = Grid(rc.n)
    t0 = time.perf_counter()
    check_admissible(cfg, rc.stages).to_csv(os.path.join(out, "admissibility.csv"))
    f = function_from_spec(rc.f_spec, grid)
    v_flat = function_from_spec(rc.v_flat_spec, grid)
    bundle = solve(f, v_flat, cfg, rc.stages, workdir=out, ell0=rc.ell0, mu_start=rc.mu_start)
    bundle.save(out)

    # residuals per snapshot
    J = rc.J
    while J > 1 and J * math.pi * grid.h > 0.25:
        J -= 1
    res_rows, res_max = [], []
    for q, (v, _) in enumerate(bundle.snapshots):
        try:
            rep = distributional_residual(v, f, J)
        except TestModeUnresolved:
            res_max.append(float("nan"))
            continue
        res_max.append(rep.max_residual)
        res_rows.extend((q, j, k, val) for (j, k), val in rep.modes)
    _write_rows(os.path.join(out, "residuals.csv"), ["q", "j", "k", "residual"], res_rows)

    # per-stage increments
    conv_rows = []
    snaps = list(bundle.snapshots)
    for r in bundle.reports:
        q = r.q
        dv = snaps[q + 1][0] - snaps[q][0]
        c0, c1 = sup_norm(dv), c_norm(dv, 1)
        sq = math.sqrt(r.params["delta_q1"])
        D = deficit(bundle.A, snaps[q + 1][0], snaps[q + 1][1], r.params["delta_q2"])
        conv_rows.append((q, cfg.b ** (q + 1), c0, c1, c1 / sq, sup_norm(D), res_max[q + 1]))
        del dv, D
    _write_rows(
        os.path.join(out, "convergence.csv"),
        ["q", "b_pow", "dv_c0", "dv_c1", "dv_c1_over_sqrt_delta", "deficit_c0", "residual_max"],
        conv_rows,
    )
    fit = None
    if bundle.stages >= 2:
        try:
            fit = convergence_report(bundle)
            fit.to_csv(os.path.join(out, "exponents.csv"))
        except InsufficientStages:
            fit = None

    # bending family mesh of the final pair
    bend = bending_family(bundle.v_final, bundle.w_final, 0.1)
    bend.write_obj(os.path.join(out, "bending_t0.1.obj"), max_points=129)

    dist = bundle.c0_distance()
    elapsed = time.perf_counter() - t0
    _say(quiet, f"weakma solve: n = {rc.n}, stages = {rc.stages}, f = {rc.f_spec}, v_flat = {rc.v_flat_spec}")
    _say(quiet, f"  a = 10^{cfg.log10_a:.6g}  b = {cfg.b:.6g}  c = {cfg.c:.6g}  beta_max = {cfg.beta_max:.6g}")
    _say(quiet, f"  |v - v_flat|_0 = {dist:.6g}  (epsilon = {cfg.epsilon:.6g}, "
                f"{'ok' if dist <= cfg.epsilon else 'EXCEEDED'})")
    _say(quiet, f"  residual(J={J}) per snapshot: " + "  ".join(f"{x:.3e}" for x in res_max))
    if conv_rows:
        _say(quiet, "   q   |dv|_0      |dv|_1      ratio       |D_q+1|_0")
        for q, _, c0, c1, ratio, dsup, _ in conv_rows:
            _say(quiet, f"  {q:2d}   {c0:.4e}  {c1:.4e}  {ratio:.4e}  {dsup:.4e}")
    if fit is not None:
        _say(quiet, f"  beta* (measured) = {fit.beta_star:.4g}, predicted 1/(2bc) = {fit.beta_predicted:.4g}")
    _say(quiet, f"  output: {out}  ({elapsed:.1f} s)")
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="weakma", description="Convex integration for very weak Monge-Ampere solutions.")
    parser.add_argument("command", choices=("solve", "check"))
    parser.add_argument("config")
    parser.add_argument("--output-dir", default=None)
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        rc = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.quiet:
        warnings.simplefilter("ignore")
    if args.command == "check":
        return run_check(rc, args.output_dir, args.quiet)
    try:
        return run_solve(rc, args.output_dir, args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WeakMAError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())

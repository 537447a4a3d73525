"""Command-line driver for every experiment.

Each subcommand writes ``manifest.json`` (effective config, versions, seed,
timings, timestamp), one or more result CSV/JSON files and ``summary.txt``
into ``--out``. Result payloads are byte-identical across runs with the same
config; anything time-dependent lives in the manifest only.

Exit status: 0 when every gate passes, 1 on a gate failure, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy

from adomian_bsde import __version__
from adomian_bsde import cascade as cas
from adomian_bsde import exact
from adomian_bsde import montecarlo as mc
from adomian_bsde import series

EXIT_OK, EXIT_GATE, EXIT_USAGE = 0, 1, 2

DEFAULTS: dict[str, dict] = {
    "catalan": {"n": 30},
    "ex1": {"order": 15, "check_closed": False, "s_points": [0.1, 0.3, 0.5], "tol": 1e-8},
    "ex2": {
        "order": 15,
        "check_closed": False,
        "s_points": [0.1, 0.3, 0.5],
        "tol": 1e-8,
        "s_max": 10.0,
        "ds": 1e-3,
        "residual_tol": 1e-12,
    },
    "cascade": {
        "example": 1,
        "T": 0.5,
        "nx": 241,
        "ny": 241,
        "xmax": 6.0,
        "nt": 2000,
        "depth": 6,
        "scheme": "implicit",
        "snapshots": 5,
        "all_times": False,
        "probe": 1.0,
        "tol": 0.02,
    },
    "mc-eq": {
        "T": 0.5,
        "n_paths": 20000,
        "steps": [500, 1000, 2000],
        "seed": 7,
        "n_jobs": 1,
        "readings": ["quotient", "product"],
        "per_path": False,
    },
    "mc-expfunc": {
        "T": [0.3, 0.5, 0.8],
        "n_paths": 100000,
        "n_steps": 2000,
        "seed": 11,
        "n_jobs": 1,
        "kl_modes": 10000,
        "z_tol": 4.0,
        "kl_tol": 1e-4,
    },
    "kl": {
        "T": 0.5,
        "modes": [1, 10, 100, 1000, 10000],
        "ortho_modes": 8,
        "quadrature_points": 10000,
        "tol": 1e-4,
    },
    "report-all": {"quick": False, "seed": 7, "n_jobs": 1},
}


class UsageError(ValueError):
    pass


@dataclass
class Gate:
    name: str
    passed: bool
    detail: str


@dataclass
class Outcome:
    gates: list[Gate] = field(default_factory=list)
    lines: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.gates)

    def gate(self, name: str, passed: bool, detail: str) -> None:
        self.gates.append(Gate(name, bool(passed), detail))


# --------------------------------------------------------------------- output


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path: Path, obj) -> Path:
    # floats use the shortest round-trip repr, which is exact and diff-stable
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _versions() -> dict:
    return {
        "adomian_bsde": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


# ------------------------------------------------------------------- commands


def cmd_catalan(cfg: dict, out: Path) -> Outcome:
    n = cfg["n"]
    if n < 0:
        raise UsageError(f"--n must be >= 0, got {n}")
    res = Outcome()
    t0 = time.perf_counter()
    table = series.catalan_recurrence(n)
    closed = [series.catalan_closed(k) for k in range(n + 1)]
    res.timings["catalan"] = time.perf_counter() - t0
    rows = [(k, table[k], closed[k], table[k] == closed[k]) for k in range(n + 1)]
    write_csv(out / "catalan.csv", ["n", "recurrence", "closed", "equal"], rows)
    n_eq = sum(r[3] for r in rows)
    res.gate("catalan_identity", n_eq == n + 1, f"{n_eq}/{n + 1} integer matches for n <= {n}")
    res.lines.append(f"a_{n} = {table[n]}")
    return res


def _coefficient_rows(alpha, beta):
    rows = []
    for k, (a, b) in enumerate(zip(alpha.coeffs, beta.coeffs)):
        ea = str(a) if isinstance(a, Fraction) else None
        eb = str(b) if isinstance(b, Fraction) else None
        rows.append((k, float(a), float(b), ea, eb))
    return rows


def _series_check(coeffs, closed, s_points, tol, out: Path, name: str, res: Outcome):
    af, bf = coeffs.alpha.as_float(), coeffs.beta.as_float()
    rows, worst = [], 0.0
    for s in s_points:
        a_cl, b_cl = closed(s)
        a_se, b_se = series.eval_odd_series(af, s), series.eval_odd_series(bf, s)
        dev = max(abs(a_se - a_cl), abs(b_se - b_cl))
        worst = max(worst, dev)
        rows.append((s, a_se, a_cl, b_se, b_cl, dev))
    write_csv(
        out / f"{name}_check.csv",
        ["s", "alpha_series", "alpha_closed", "beta_series", "beta_closed", "abs_dev"],
        rows,
    )
    res.gate(f"{name}_series_vs_closed", worst < tol, f"max deviation {worst:.3e} (tol {tol:g})")
    return worst


def _radius(alpha) -> float | None:
    return series.root_test_radius(alpha) if len(alpha) >= 16 else None


def cmd_ex1(cfg: dict, out: Path) -> Outcome:
    order = cfg["order"]
    if order < 0:
        raise UsageError(f"--order must be >= 0, got {order}")
    res = Outcome()
    c = exact.ex1_coefficients(order)
    write_csv(
        out / "ex1_coefficients.csv",
        ["n", "alpha", "beta", "alpha_exact", "beta_exact"],
        _coefficient_rows(c.alpha, c.beta),
    )
    summary = {"order": order, "horizon": exact.blowup_horizon(), "radius_estimate": _radius(c.alpha)}
    if cfg["check_closed"]:
        summary["max_deviation"] = _series_check(
            c, exact.ex1_closed, cfg["s_points"], cfg["tol"], out, "ex1", res
        )
    write_json(out / "ex1.json", summary)
    res.lines.append(f"alpha_{order} = {float(c.alpha[order]):.17g}")
    if summary["radius_estimate"] is not None:
        res.lines.append(f"root-test radius {summary['radius_estimate']:.6f} vs horizon {summary['horizon']:.6f}")
    return res


def cmd_ex2(cfg: dict, out: Path) -> Outcome:
    order, s_max, ds = cfg["order"], cfg["s_max"], cfg["ds"]
    if order < 0:
        raise UsageError(f"--order must be >= 0, got {order}")
    if not 0 < s_max <= 10:
        raise UsageError(f"--s-max must be in (0, 10], got {s_max}")
    if ds <= 0:
        raise UsageError(f"--ds must be > 0, got {ds}")
    res = Outcome()
    c = exact.ex2_coefficients(order)
    write_csv(
        out / "ex2_coefficients.csv",
        ["n", "alpha", "beta", "alpha_exact", "beta_exact"],
        _coefficient_rows(c.alpha, c.beta),
    )
    n_grid = int(round(s_max / ds))
    grid = [k * ds for k in range(n_grid + 1)]
    resid = exact.ex2_zeta_residual(grid)
    agree = max(max(abs(p - q) for p, q in zip(exact.ex2_closed(s), exact.ex2_zeta(s))) for s in grid)
    dmin = min(exact.ex2_denominator(s) for s in grid)
    tol = cfg["residual_tol"]
    res.gate("ex2_zeta_ode_residual", resid < tol, f"max residual {resid:.3e} on [0, {s_max:g}] (tol {tol:g})")
    res.gate("ex2_real_vs_complex", agree < tol, f"max difference {agree:.3e} (tol {tol:g})")
    res.gate("ex2_denominator_positive", dmin > 0, f"min denominator {dmin:.6g} at step {ds:g}")
    summary = {
        "order": order,
        "radius_estimate": _radius(c.alpha),
        "zeta_residual": resid,
        "real_complex_difference": agree,
        "min_denominator": dmin,
    }
    if cfg["check_closed"]:
        summary["max_deviation"] = _series_check(
            c, exact.ex2_closed, cfg["s_points"], cfg["tol"], out, "ex2", res
        )
    write_json(out / "ex2.json", summary)
    return res


def series_gradient(example: int, T: float, depth: int, X, Y):
    """(v_x, v_y) at t = 0 predicted by the depth-truncated coefficient series."""
    if example == 1:
        c = exact.ex1_coefficients(depth)
        a, b = series.eval_odd_series(c.alpha, T), series.eval_odd_series(c.beta, T)
        return a * X, b * Y
    c = exact.ex2_coefficients(depth)
    a, b = series.eval_odd_series(c.alpha, T), series.eval_odd_series(c.beta, T)
    return a * X + b * Y, b * X - a * Y


def cmd_cascade(cfg: dict, out: Path) -> Outcome:
    example, T = cfg["example"], cfg["T"]
    if example not in (1, 2):
        raise UsageError(f"--example must be 1 or 2, got {example}")
    if T <= 0:
        raise UsageError(f"--T must be > 0, got {T}")
    xmax = cfg["xmax"]
    grid = cas.GridSpec(cfg["nx"], cfg["ny"], (-xmax, xmax), (-xmax, xmax))
    problem = (cas.example1_problem if example == 1 else cas.example2_problem)(T)
    res = Outcome()
    t0 = time.perf_counter()
    result = cas.run_cascade(
        problem, grid, cfg["nt"], cfg["depth"], cfg["scheme"], cfg["snapshots"], cfg["probe"]
    )
    res.timings["cascade"] = time.perf_counter() - t0
    cas.write_result(result, out, cfg["all_times"])

    gx, gy = result.gradient(0.0)
    X, Y = grid.mesh()
    px, py = series_gradient(example, T, cfg["depth"], X, Y)
    box = (np.abs(X) <= cfg["probe"] + 1e-12) & (np.abs(Y) <= cfg["probe"] + 1e-12)
    scale = float(np.max(np.hypot(px, py)[box]))
    err = float(np.max(np.hypot(gx - px, gy - py)[box]))
    rel = err / scale if scale > 0 else err
    ix = np.flatnonzero(np.abs(grid.x) <= cfg["probe"] + 1e-12)
    iy = np.flatnonzero(np.abs(grid.y) <= cfg["probe"] + 1e-12)
    ix = ix[np.linspace(0, ix.size - 1, min(5, ix.size)).round().astype(int)]
    iy = iy[np.linspace(0, iy.size - 1, min(5, iy.size)).round().astype(int)]
    rows = [
        (grid.x[i], grid.y[j], gx[i, j], gy[i, j], px[i, j], py[i, j]) for i in ix for j in iy
    ]
    write_csv(out / "cascade_check.csv", ["x", "y", "vx", "vy", "vx_series", "vy_series"], rows)

    ratios = cas.level_norm_ratio(result) if result.depth >= 2 else None
    gratios = cas.level_norm_ratio(result, gradient=True) if result.depth >= 2 else None
    write_json(
        out / "cascade.json",
        {
            "example": example,
            "max_gradient_error": err,
            "relative_gradient_error": rel,
            "level_norms": result.level_norms,
            "gradient_norms": result.gradient_norms,
            "norm_ratios": None if ratios is None else ratios.ratios,
            "gradient_norm_ratios": None if gratios is None else gratios.ratios,
        },
    )
    res.gate(
        f"cascade_ex{example}_gradient_vs_series",
        rel <= cfg["tol"],
        f"relative error {rel:.3e} on |x|,|y| <= {cfg['probe']:g} (tol {cfg['tol']:g})",
    )
    if gratios is not None:
        res.lines.append("gradient norm ratios: " + ", ".join(f"{r:.4f}" for r in gratios.ratios))
    return res


def cmd_mc_eq(cfg: dict, out: Path) -> Outcome:
    T, readings = cfg["T"], cfg["readings"]
    for r in readings:
        if r not in ("quotient", "product"):
            raise UsageError(f"unknown reading {r!r}; expected quotient or product")
    res = Outcome()
    rows, passing = [], []
    t0 = time.perf_counter()
    for reading in readings:
        reports = mc.ex1_discretization_sweep(
            T, cfg["n_paths"], cfg["steps"], cfg["seed"], reading, cfg["n_jobs"]
        )
        for rep in reports:
            rows.append(
                (reading, rep.n_steps, rep.dt, rep.mean, rep.stderr, rep.bias_band, rep.band, rep.passed)
            )
        if all(rep.passed for rep in reports):
            passing.append((reading, reports))
    res.timings["mc-eq"] = time.perf_counter() - t0
    write_csv(
        out / "mc_eq.csv",
        ["reading", "n_steps", "dt", "mean", "stderr", "bias_band", "band", "passed"],
        rows,
    )
    names = [p[0] for p in passing]
    if len(readings) > 1:
        res.gate("exactly_one_reading_passes", len(passing) == 1, f"passing readings: {names or 'none'}")
    else:
        res.gate(f"{readings[0]}_reading_passes", len(passing) == 1, f"passing readings: {names or 'none'}")
    if len(passing) == 1:
        means = [abs(rep.mean) for rep in passing[0][1]]
        shrinking = all(b < a for a, b in zip(means, means[1:]))
        res.gate(
            "residual_mean_shrinks_with_dt",
            shrinking,
            "|mean| by n_steps: " + ", ".join(f"{m:.3e}" for m in means),
        )
    write_json(out / "mc_eq.json", {"passing_reading": names[0] if len(names) == 1 else None})
    if cfg["per_path"]:
        reading = names[0] if len(names) == 1 else readings[0]
        rep = mc.verify_exponential_equation_ex1(
            T, cfg["n_paths"], max(cfg["steps"]), cfg["seed"], reading,
            n_jobs=cfg["n_jobs"], keep_residuals=True,
        )
        write_csv(out / "mc_eq_paths.csv", ["path", "residual"], enumerate(rep.residuals))
    res.lines.append(f"passing reading of c: {names[0] if len(names) == 1 else names}")
    return res


def cmd_mc_expfunc(cfg: dict, out: Path) -> Outcome:
    Ts = cfg["T"] if isinstance(cfg["T"], list) else [cfg["T"]]
    for T in Ts:
        mc.check_exp_functional_horizon(T)
    res = Outcome()
    rows = []
    ztol = cfg["z_tol"]
    t0 = time.perf_counter()
    for T in Ts:
        est = mc.estimate_exp_quadratic_functional(T, cfg["n_paths"], cfg["n_steps"], cfg["seed"], cfg["n_jobs"])
        kl_val, kl_tail = mc.kl_product_formula(T, cfg["kl_modes"])
        gap = abs(est.mean - kl_val)
        rows.append((T, est.mean, est.stderr, est.target, est.z, kl_val, kl_tail, gap))
        res.gate(f"mc_within_{ztol:g}se_T={T:g}", abs(est.z) <= ztol, f"z = {est.z:.3f}")
        kl_err = abs(kl_val - est.target)
        res.gate(f"kl_within_tol_T={T:g}", kl_err <= cfg["kl_tol"], f"|kl - closed| = {kl_err:.3e}")
        res.gate(
            f"mc_vs_kl_T={T:g}",
            gap <= ztol * est.stderr + kl_tail,
            f"|mc - kl| = {gap:.3e} vs {ztol:g} se + tail = {ztol * est.stderr + kl_tail:.3e}",
        )
    res.timings["mc-expfunc"] = time.perf_counter() - t0
    write_csv(
        out / "mc_expfunc.csv",
        ["T", "mc_mean", "mc_stderr", "closed_form", "z", "kl_value", "kl_tail_bound", "mc_kl_gap"],
        rows,
    )
    return res


def cmd_kl(cfg: dict, out: Path) -> Outcome:
    T = cfg["T"]
    res = Outcome()
    closed = mc.exp_quadratic_closed(T)
    rows = []
    for m in sorted(cfg["modes"]):
        val, tail = mc.kl_product_formula(T, m)
        rows.append((m, val, tail, closed, closed - val))
    write_csv(out / "kl_product.csv", ["n_modes", "value", "tail_bound", "closed_form", "error"], rows)
    last = rows[-1]
    res.gate("kl_product_vs_closed", abs(last[4]) <= cfg["tol"], f"error {last[4]:.3e} at {last[0]} modes")
    res.gate(
        "kl_tail_bound_valid",
        all(0 <= r[4] <= r[2] for r in rows),
        "closed - product lies in [0, tail bound] for every mode count",
    )
    kl = mc.KLExpansion(cfg["ortho_modes"])
    write_csv(out / "kl_eigen.csv", ["n", "lambda"], [(n + 1, lam) for n, lam in enumerate(kl.lambdas)])
    chk = mc.kl_orthogonality_check(cfg["ortho_modes"], cfg["quadrature_points"])
    write_json(out / "kl.json", chk)
    res.gate("kl_orthonormal", max(chk["max_off_diagonal"], chk["max_diagonal_error"]) < 1e-8,
             f"off-diagonal {chk['max_off_diagonal']:.2e}, diagonal {chk['max_diagonal_error']:.2e}")
    res.gate("kl_eigen_residual", chk["max_eigen_residual"] < 1e-6,
             f"max residual {chk['max_eigen_residual']:.2e}")
    return res


# ----------------------------------------------------------------- report-all


def _level0_refinement(quick: bool) -> tuple[list[float], list[float]]:
    """Errors of v^0 at t = 0 against the Feynman-Kac solution under h -> h/2, dt -> dt/4."""
    problem = cas.example1_problem(1.0)
    levels = [(61, 50), (121, 200)] if quick else [(61, 50), (121, 200), (241, 800)]
    errors = []
    for nx, nt in levels:
        grid = cas.GridSpec(nx, nx)
        _, v = cas.solve_level0(problem, grid, nt)
        X, Y = grid.mesh()
        box = (np.abs(X) <= 2.0) & (np.abs(Y) <= 2.0)
        errors.append(float(np.max(np.abs(v[0] - problem.level0_exact(0.0, X, Y))[box])))
    return errors, [a / b for a, b in zip(errors, errors[1:])]


def _majorant_suite() -> tuple[bool, bool]:
    below, above = True, True
    for beta in (-3.0, -0.5, 0.0, 1.0, 4.0):
        for A in (0.05, 1.0, 20.0):
            thr = series.convergence_threshold(series.MajorantParams(beta, 0.0, A))
            for frac in (0.1, 0.5, 0.99):
                r = series.majorant_ratios(series.MajorantParams.from_gamma(beta, A, frac * thr), 500)
                below &= all(x < 1 for x in r[10:])
            r = series.majorant_ratios(series.MajorantParams.from_gamma(beta, A, 2 * thr), 500)
            above &= all(x > 1 for x in r[10:])
    return below, above


def _payload_bytes(d: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def cmd_report_all(cfg: dict, out: Path) -> Outcome:
    quick, seed, jobs = cfg["quick"], cfg["seed"], cfg["n_jobs"]
    res = Outcome()
    table = []

    def sub(criterion: int, command: str, **over):
        o = execute(command, {**DEFAULTS[command], **over}, out / command)
        for g in o.gates:
            table.append((criterion, g.name, g.passed, g.detail))
        res.timings.update({f"{command}:{k}": v for k, v in o.timings.items()})
        return o

    def add(criterion: int, name: str, passed: bool, detail: str):
        table.append((criterion, name, bool(passed), detail))

    sub(1, "catalan")
    sub(2, "ex1", check_closed=True)
    rad = series.root_test_radius(exact.ex1_coefficients(200).alpha)
    h = exact.blowup_horizon()
    add(3, "ex1_radius_within_5pct", abs(rad / h - 1) <= 0.05, f"radius {rad:.6f} vs {h:.6f}")
    try:
        mc.check_exp_functional_horizon(h)
        refused = False
    except ValueError:
        refused = True
    add(3, "mc_expfunc_refuses_at_horizon", refused, "estimator rejects T = pi/(2 sqrt 2)")
    sub(4, "ex2", check_closed=True)

    errors, ratios = _level0_refinement(quick)
    add(5, "level0_second_order", all(3.5 <= r <= 4.5 for r in ratios),
        "error ratios " + ", ".join(f"{r:.3f}" for r in ratios))
    grid = {"nx": 121, "ny": 121, "nt": 400} if quick else {}
    for ex in (1, 2):
        c = {**DEFAULTS["cascade"], **grid, "example": ex}
        o = execute("cascade", c, out / f"cascade_ex{ex}")
        for g in o.gates:
            add(5, g.name, g.passed, g.detail)
        res.timings[f"cascade_ex{ex}"] = o.timings.get("cascade", math.nan)

    mc_size = {"n_paths": 10000, "n_steps": 500} if quick else {}
    sub(6, "mc-expfunc", seed=seed, n_jobs=jobs, **mc_size)
    sub(6, "kl")
    sub(7, "mc-eq", seed=seed, n_jobs=jobs, **({"n_paths": 8000} if quick else {}))

    below, above = _majorant_suite()
    add(8, "majorant_ratio_below_one_under_threshold", below, "ratios < 1 for n >= 10")
    add(8, "majorant_ratio_above_one_at_twice_threshold", above, "ratios > 1 for n >= 10")

    repro = out / "reproducibility"
    runs = []
    for tag, nj in (("a", 1), ("b", 1), ("c", 3)):
        c = {**DEFAULTS["mc-eq"], "n_paths": 1500, "steps": [100, 200], "seed": seed, "n_jobs": nj}
        execute("mc-eq", c, repro / f"mc_eq_{tag}")
        c = {**DEFAULTS["mc-expfunc"], "T": [0.5], "n_paths": 1500, "n_steps": 100, "seed": seed,
             "n_jobs": nj, "kl_modes": 100}
        execute("mc-expfunc", c, repro / f"mc_expfunc_{tag}")
        c = {**DEFAULTS["cascade"], "nx": 41, "ny": 41, "nt": 40}
        execute("cascade", c, repro / f"cascade_{tag}")
        runs.append({k: _payload_bytes(repro / f"{k}_{tag}") for k in ("mc_eq", "mc_expfunc", "cascade")})
    same = runs[0] == runs[1] == runs[2]
    add(9, "byte_identical_reruns", same, "mc-eq, mc-expfunc, cascade rerun with n_jobs 1, 1, 3")

    write_csv(out / "report.csv", ["criterion", "gate", "passed", "detail"], table)
    for crit, name, passed, detail in table:
        res.gate(f"[{crit}] {name}", passed, detail)
    return res


COMMANDS = {
    "catalan": cmd_catalan,
    "ex1": cmd_ex1,
    "ex2": cmd_ex2,
    "cascade": cmd_cascade,
    "mc-eq": cmd_mc_eq,
    "mc-expfunc": cmd_mc_expfunc,
    "kl": cmd_kl,
    "report-all": cmd_report_all,
}


# ------------------------------------------------------------------- plumbing


def execute(command: str, cfg: dict, out: Path) -> Outcome:
    """Run one command with a complete config and write manifest and summary."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UsageError(f"cannot create output directory {out}: {e}") from e
    t0 = time.perf_counter()
    outcome = COMMANDS[command](cfg, out)
    outcome.timings["total"] = time.perf_counter() - t0

    lines = [f"command: {command}"]
    lines += [f"{'PASS' if g.passed else 'FAIL'}  {g.name}: {g.detail}" for g in outcome.gates]
    lines += outcome.lines
    lines.append(f"status: {'ok' if outcome.passed else 'gate failure'}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    write_json(
        out / "manifest.json",
        {
            "command": command,
            "config": cfg,
            "seed": cfg.get("seed"),
            "versions": _versions(),
            "timings_s": outcome.timings,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "passed": outcome.passed,
        },
    )
    return outcome


def _add(p: argparse.ArgumentParser, command: str, flag: str, help: str, **kw) -> None:
    key = flag[2:].replace("-", "_")
    p.add_argument(flag, dest=key, help=f"{help} (default: {DEFAULTS[command][key]})", **kw)


def _flag(p, command, flag, help):
    _add(p, command, flag, help, action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adomian-bsde", description="Series, PDE and Monte Carlo experiments for the quadratic BSDE."
    )
    subs = parser.add_subparsers(dest="command", required=True)

    def new(name: str, help: str) -> argparse.ArgumentParser:
        p = subs.add_parser(name, help=help, argument_default=argparse.SUPPRESS)
        p.add_argument("--out", default=None, help="output directory (default: out/<command>)")
        p.add_argument("--config", default=None, help="JSON file of parameter overrides; flags win")
        return p

    p = new("catalan", "Catalan recurrence vs closed form")
    _add(p, "catalan", "--n", "largest index", type=int)

    for name, what in (("ex1", "Example 1"), ("ex2", "Example 2")):
        p = new(name, f"{what} coefficient table and closed-form checks")
        _add(p, name, "--order", "series order N", type=int)
        _flag(p, name, "--check-closed", "compare the float series with the closed forms")
        _add(p, name, "--s-points", "points for the closed-form check", type=float, nargs="+")
        _add(p, name, "--tol", "series vs closed-form tolerance", type=float)
    _add(p, "ex2", "--s-max", "right end of the residual grid", type=float)
    _add(p, "ex2", "--ds", "residual grid step", type=float)
    _add(p, "ex2", "--residual-tol", "tolerance of the complex ODE residual", type=float)

    p = new("cascade", "finite-difference cascade v^0..v^N on a 2D grid")
    _add(p, "cascade", "--example", "1 or 2", type=int)
    _add(p, "cascade", "--T", "horizon", type=float)
    _add(p, "cascade", "--nx", "grid points in x", type=int)
    _add(p, "cascade", "--ny", "grid points in y", type=int)
    _add(p, "cascade", "--xmax", "half-width of the square domain", type=float)
    _add(p, "cascade", "--nt", "time steps", type=int)
    _add(p, "cascade", "--depth", "cascade depth N", type=int)
    _add(p, "cascade", "--scheme", "time stepping", choices=["implicit", "explicit"])
    _add(p, "cascade", "--snapshots", "stored time slices", type=int)
    _flag(p, "cascade", "--all-times", "write CSV slices at every stored time")
    _add(p, "cascade", "--probe", "half-width of the comparison box", type=float)
    _add(p, "cascade", "--tol", "relative gradient tolerance", type=float)

    p = new("mc-eq", "Monte Carlo residual of the exponential equation on Example 1")
    _add(p, "mc-eq", "--T", "horizon", type=float)
    _add(p, "mc-eq", "--n-paths", "number of paths", type=int)
    _add(p, "mc-eq", "--steps", "time-step counts; each must divide the largest", type=int, nargs="+")
    _add(p, "mc-eq", "--seed", "Philox key", type=int)
    _add(p, "mc-eq", "--n-jobs", "worker threads", type=int)
    _add(p, "mc-eq", "--readings", "readings of the constant c", nargs="+", choices=["quotient", "product"])
    _flag(p, "mc-eq", "--per-path", "also write per-path residuals at the finest step")

    p = new("mc-expfunc", "Monte Carlo and KL estimates of E exp(int_0^T W^2 dt)")
    _add(p, "mc-expfunc", "--T", "horizons", type=float, nargs="+")
    _add(p, "mc-expfunc", "--n-paths", "number of paths", type=int)
    _add(p, "mc-expfunc", "--n-steps", "time steps", type=int)
    _add(p, "mc-expfunc", "--seed", "Philox key", type=int)
    _add(p, "mc-expfunc", "--n-jobs", "worker threads", type=int)
    _add(p, "mc-expfunc", "--kl-modes", "KL product modes", type=int)
    _add(p, "mc-expfunc", "--z-tol", "standard-error multiple for the gates", type=float)
    _add(p, "mc-expfunc", "--kl-tol", "KL vs closed-form tolerance", type=float)

    p = new("kl", "Karhunen-Loeve product formula and eigenpair checks")
    _add(p, "kl", "--T", "horizon", type=float)
    _add(p, "kl", "--modes", "mode counts", type=int, nargs="+")
    _add(p, "kl", "--ortho-modes", "modes in the orthogonality check", type=int)
    _add(p, "kl", "--quadrature-points", "quadrature points", type=int)
    _add(p, "kl", "--tol", "product vs closed-form tolerance", type=float)

    p = new("report-all", "run every acceptance gate and aggregate")
    _flag(p, "report-all", "--quick", "reduced problem sizes")
    _add(p, "report-all", "--seed", "Philox key for the Monte Carlo gates", type=int)
    _add(p, "report-all", "--n-jobs", "worker threads", type=int)
    return parser


def resolve_config(command: str, ns: dict, config_path: str | None) -> dict:
    cfg = dict(DEFAULTS[command])
    if config_path:
        try:
            override = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {config_path}: {e}") from e
        if not isinstance(override, dict):
            raise UsageError("config file must hold a JSON object")
        for k, v in override.items():
            key = k.lstrip("-").replace("-", "_")
            if key not in cfg:
                raise UsageError(f"unknown config key {k!r} for {command}")
            cfg[key] = v
    cfg.update(ns)
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = vars(parser.parse_args(argv))
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    command = ns.pop("command")
    out = Path(ns.pop("out") or Path("out") / command)
    config_path = ns.pop("config")
    try:
        cfg = resolve_config(command, ns, config_path)
        outcome = execute(command, cfg, out)
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    for g in outcome.gates:
        print(f"{'PASS' if g.passed else 'FAIL'}  {g.name}: {g.detail}")
    if not outcome.passed:
        failed = ", ".join(g.name for g in outcome.gates if not g.passed)
        print(f"gate failure: {failed}", file=sys.stderr)
        return EXIT_GATE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

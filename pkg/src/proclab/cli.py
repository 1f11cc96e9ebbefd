"""Scenario runner: parse configs, dispatch checks, emit CSV and plots.

Subcommands: run, sweep, list-scenarios, gauge-test, viscosity-check,
variational-battery.  All randomness flows from the config seed; report
CSV files contain no timing, so identical (config, seed) runs are byte
identical.  Exit status 0 means every configured check passed.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import coeffs as coeffs_mod
from . import meanfield
from .config import ConfigError, ScenarioConfig, apply_overrides, load_config
from .controls import constant_family, deterministic_family, explicit_family, tree_family
from .core import TimeGrid, random_ensemble
from .gauge import (
    gauge_functional,
    ito_residual,
    path_gauge,
    path_gauge_derivatives,
    quadratic_functional,
)
from .hjb import check_lift, classical_residual, fd_solve, feedback_from_table, transform_constant_vol
from .noise import gaussian_noise, tree_noise
from .sde import check_sde_estimates, simulate_state
from .singular import TestPair, viscosity_residual
from .value import check_dpp, estimate_regularity, value_V
from .variational import FiniteInstance, borwein_preiss, is_gauge

__all__ = ["run_scenario", "sweep", "main", "RunReport", "CheckRow"]

_THREADS_ENV = "PROCLAB_THREADS"


@dataclass(frozen=True)
class CheckRow:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class RunReport:
    scenario: str
    rows: tuple[CheckRow, ...]
    seed: int
    elapsed: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


# ----------------------------------------------------------------------
# scenario assembly


@dataclass
class Scenario:
    cfg: ScenarioConfig
    grid: TimeGrid
    t: float
    coeffs: object
    check_set: object | None  # law data when the scenario is a mean-field one
    xi: object
    family: object
    noise: object


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    grid = TimeGrid(cfg.t0, cfg.horizon, cfg.steps)
    t = cfg.t0 if cfg.t_eval is None else cfg.t_eval
    k0 = grid.index_of(t)
    d1 = cfg.dim - cfg.d_common

    check_set = None
    if cfg.coeffs_name.startswith("mfc."):
        check_set = meanfield.make_mfc(cfg.coeffs_name, dim=cfg.dim, **cfg.coeffs_params)
        cset = meanfield.lift_coefficients(check_set)
    else:
        try:
            cset = coeffs_mod.make_coefficients(cfg.coeffs_name, dim=cfg.dim, **cfg.coeffs_params)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None

    xi = random_ensemble(
        grid, t, cfg.m_common, cfg.m_idio, cfg.dim, cfg.seed,
        mean=cfg.init_mean, std=cfg.init_std,
    )
    if cfg.noise_mode == "tree":
        noise = tree_noise(
            grid, d1, cfg.d_common, k_start=k0,
            atoms_common=cfg.m_common, atoms_idio=cfg.m_idio,
        )
    else:
        noise = gaussian_noise(
            grid, d1, cfg.d_common, cfg.m_common, cfg.m_idio, cfg.seed + 1, k_start=k0
        )

    if cfg.control_pattern == "constant":
        family = constant_family(cfg.control_grid, k0, grid.steps)
    elif cfg.control_pattern == "deterministic":
        family = deterministic_family(cfg.control_grid, k0, grid.steps, limit=20_000)
    else:
        if cfg.noise_mode != "tree":
            raise ConfigError("tree controls require tree noise")
        family = tree_family(
            cfg.control_grid, noise, k0, grid.steps, limit=20_000,
            per_batch=cfg.m_common > 1,
        )
    return Scenario(cfg, grid, t, cset, check_set, xi, family, noise)


# ----------------------------------------------------------------------
# individual checks


def _check_value(sc: Scenario, threads: int) -> CheckRow:
    est = value_V(sc.coeffs, sc.t, sc.xi, sc.family, sc.noise, threads=threads)
    if sc.coeffs.closed_form is not None:
        target = sc.coeffs.closed_form(sc.t, sc.noise.expand(sc.xi))
        tol = 3.0 * est.stderr + 1e-10
        err = abs(est.value - target)
        return CheckRow("value", err, tol, err <= tol, f"V={est.value!r} exact={target!r}")
    return CheckRow("value", est.value, float("inf"), True, f"stderr={est.stderr!r}")


def _check_dpp(sc: Scenario, threads: int) -> CheckRow:
    delta = sc.cfg.dpp_delta
    if delta is None:
        delta = (sc.grid.horizon - sc.t) / 2
        delta = sc.grid.dt * max(1, round(delta / sc.grid.dt))
    rep = check_dpp(sc.coeffs, sc.t, sc.xi, delta, sc.family, sc.noise, threads=threads)
    kind = "one-sided" if rep.one_sided else "two-sided"
    return CheckRow("dpp", rep.gap, rep.tolerance, rep.passed, kind)


def _check_lift(sc: Scenario, threads: int) -> CheckRow:
    cfg = sc.cfg
    pw = sc.coeffs.pointwise
    if pw is None:
        return CheckRow("lift", float("nan"), 0.0, False, "scenario is not decoupled")
    span = 6.0 * (cfg.init_std + np.sqrt(max(sc.grid.horizon - sc.t, 0.0)))
    span += max(abs(a) for a in cfg.control_grid) * (sc.grid.horizon - sc.t) + 1.0
    x_lo, x_hi = cfg.init_mean - span, cfg.init_mean + span
    xs_probe = np.linspace(x_lo, x_hi, 64)
    worst = 0.0
    for a in cfg.control_grid:
        s = np.abs(np.asarray(pw.sigma(sc.t, xs_probe, a), dtype=float)).max()
        b = np.abs(np.asarray(pw.b(sc.t, xs_probe, a), dtype=float)).max()
        worst = max(worst, s**2 / cfg.fd_dx**2 + b / cfg.fd_dx)
    n_t = max(1, int(np.ceil((sc.grid.horizon - sc.t) * worst * 1.05)))
    table = fd_solve(pw, cfg.control_grid, x_lo, x_hi, cfg.fd_dx, sc.t, sc.grid.horizon, n_t)
    fb = feedback_from_table(table, sc.grid, sc.grid.index_of(sc.t), sc.grid.steps)
    family = explicit_family(tuple(sc.family.members) + (fb,), sc.cfg.control_grid)
    rep = check_lift(table, sc.coeffs, sc.t, sc.xi, family, sc.noise, rel_tol=0.02)
    return CheckRow(
        "lift", rep.gap, rep.tolerance, rep.passed,
        f"V={rep.particle_value!r} fd={rep.table_value!r}",
    )


def _check_transform(sc: Scenario, threads: int) -> CheckRow:
    rep = transform_constant_vol(sc.coeffs, sc.t, sc.xi, sc.family, sc.noise)
    return CheckRow("transform", rep.max_candidate_gap, rep.tolerance, rep.passed, "")


def _check_regularity(sc: Scenario, threads: int) -> CheckRow:
    cfg = sc.cfg
    pairs = []
    for j in range(6):
        xa = random_ensemble(
            sc.grid, sc.t, cfg.m_common, cfg.m_idio, cfg.dim, cfg.seed + 100 + j,
            mean=cfg.init_mean, std=cfg.init_std,
        )
        bump = 0.2 * np.random.default_rng(cfg.seed + 200 + j).standard_normal((1, 1, 1, cfg.dim))
        xb = type(xa)(sc.grid, xa.values + bump, xa.weights)
        pairs.append((xa, xb))
    t_alt = sc.t + max(1, (sc.grid.steps - sc.grid.index_of(sc.t)) // 4) * sc.grid.dt
    rep = estimate_regularity(sc.coeffs, sc.t, pairs, sc.family, sc.noise, t_alt=t_alt)
    return CheckRow(
        "regularity", rep.max_over_median, 10.0, not rep.flagged,
        f"spatial_median={rep.spatial_median!r}",
    )


def _check_sde(sc: Scenario, threads: int) -> CheckRow:
    cfg = sc.cfg
    ensembles = [
        random_ensemble(
            sc.grid, sc.t, cfg.m_common, cfg.m_idio, cfg.dim, cfg.seed + 300 + j,
            mean=cfg.init_mean, std=cfg.init_std,
        )
        for j in range(3)
    ]
    d1 = cfg.dim - cfg.d_common

    def noise_for(grid):
        return gaussian_noise(
            grid, d1, cfg.d_common, cfg.m_common, cfg.m_idio, cfg.seed + 1,
            k_start=grid.index_of(sc.t),
        )

    def control_for(grid):
        base = sc.family.members[0]
        action = base.step_actions[0] if base.step_actions else cfg.control_grid[0]
        return constant_family((action,), grid.index_of(sc.t), grid.steps).members[0]

    rep = check_sde_estimates(sc.coeffs, sc.t, ensembles, control_for, noise_for)
    worst_stab = float(rep.stability_ratios.max()) if rep.stability_ratios.size else 0.0
    ok = (not rep.diverging) and worst_stab <= rep.stability_bound * 1.05 + 1e-9
    return CheckRow("sde", worst_stab, rep.stability_bound * 1.05, ok, f"slope={rep.holder_slope!r}")


def _check_mfc_invariance(sc: Scenario, threads: int) -> CheckRow:
    if sc.check_set is None:
        return CheckRow("mfc.invariance", float("nan"), 0.0, False, "not a mean-field scenario")
    xi_perm, perms = meanfield.permute_idio(sc.xi, sc.cfg.seed + 7)
    noise_alt = sc.noise if sc.noise.mode == "tree" else sc.noise.permute_idio(perms)
    rep = meanfield.check_law_invariance(
        sc.check_set, sc.t, sc.xi, xi_perm, sc.family, sc.noise, noise_alt=noise_alt
    )
    return CheckRow("mfc.invariance", rep.gap, rep.tolerance, rep.passed, rep.mode)


def _check_mfc_decomposition(sc: Scenario, threads: int) -> CheckRow:
    if sc.check_set is None:
        return CheckRow("mfc.decomposition", float("nan"), 0.0, False, "not a mean-field scenario")
    rep = meanfield.check_decomposition(
        sc.check_set, sc.t, sc.xi, sc.family, sc.noise, delta=sc.cfg.dpp_delta
    )
    kind = "one-sided" if rep.one_sided else "two-sided"
    return CheckRow("mfc.decomposition", rep.gap, rep.tolerance, rep.passed, kind)


_CHECKS = {
    "value": _check_value,
    "dpp": _check_dpp,
    "lift": _check_lift,
    "transform": _check_transform,
    "regularity": _check_regularity,
    "sde": _check_sde,
    "mfc.invariance": _check_mfc_invariance,
    "mfc.decomposition": _check_mfc_decomposition,
}


def run_scenario(config_path, overrides=None, out_dir=None, threads: int = 1) -> RunReport:
    cfg = config_path if isinstance(config_path, ScenarioConfig) else load_config(config_path)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    start = time.perf_counter()
    sc = build_scenario(cfg)
    rows = []
    for name in cfg.checks:
        if name not in _CHECKS:
            raise ConfigError(f"unknown check {name!r}")
        rows.append(_CHECKS[name](sc, threads))
    report = RunReport(cfg.name, tuple(rows), cfg.seed, time.perf_counter() - start)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_report_csv(os.path.join(out_dir, "report.csv"), report)
        _write_value_csv(os.path.join(out_dir, "value.csv"), sc, threads)
    return report


def _write_value_csv(path, sc: Scenario, threads: int) -> None:
    """Value summary rows: (scenario, mode, V, stderr, argmin, dpp_gap)."""
    est = value_V(sc.coeffs, sc.t, sc.xi, sc.family, sc.noise, threads=threads)
    dpp_gap = ""
    if sc.cfg.dpp_delta is not None:
        dpp_gap = repr(
            check_dpp(sc.coeffs, sc.t, sc.xi, sc.cfg.dpp_delta, sc.family, sc.noise).gap
        )
    lines = [
        "scenario,mode,V,stderr,argmin,dpp_gap",
        f"{sc.cfg.name},{est.mode},{est.value!r},{est.stderr!r},{est.argmin_index},{dpp_gap}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_report_csv(path, report: RunReport) -> None:
    lines = ["scenario,check,value,tolerance,passed,detail"]
    for r in report.rows:
        lines.append(
            f"{report.scenario},{r.name},{r.value!r},{r.tolerance!r},{int(r.passed)},{r.detail}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ----------------------------------------------------------------------
# sweeps


_SWEEP_KEYS = {
    "steps": "steps",
    "particles.idio": "particles.idio",
    "particles.common": "particles.common",
    "control.grid": None,  # ladder entries are grid sizes
    "delta": "dpp.delta",
}


def sweep(config_path, parameter: str, ladder, out_dir=None, threads: int = 1):
    """Run a scenario across a parameter ladder and fit a log-log slope."""
    if parameter not in _SWEEP_KEYS:
        raise ConfigError(f"unknown sweep parameter {parameter!r}")
    cfg = config_path if isinstance(config_path, ScenarioConfig) else load_config(config_path)
    integer_keys = ("steps", "particles.idio", "particles.common")
    levels, metrics, stderrs = [], [], []
    for level in ladder:
        if parameter == "control.grid":
            lo, hi = min(cfg.control_grid), max(cfg.control_grid)
            grid = ",".join(repr(x) for x in np.linspace(lo, hi, int(level)))
            over = {"control.grid": grid}
        elif parameter in integer_keys:
            over = {_SWEEP_KEYS[parameter]: str(int(level))}
        else:
            over = {_SWEEP_KEYS[parameter]: repr(float(level))}
        c = apply_overrides(cfg, over)
        sc = build_scenario(c)
        est = value_V(sc.coeffs, sc.t, sc.xi, sc.family, sc.noise, threads=threads)
        if parameter == "delta":
            metric = abs(check_dpp(sc.coeffs, sc.t, sc.xi, float(level), sc.family, sc.noise).gap)
        elif sc.coeffs.closed_form is not None:
            metric = abs(est.value - sc.coeffs.closed_form(sc.t, sc.noise.expand(sc.xi)))
        else:
            metric = est.stderr
        levels.append(float(level))
        metrics.append(metric)
        stderrs.append(est.stderr)
    slope = float("nan")
    flagged = len(levels) < 2
    # Monte Carlo ladders fit the stderr rate; error ladders fit the metric
    series = stderrs if parameter.startswith("particles") else metrics
    pos = [(l, m) for l, m in zip(levels, series) if m > 0]
    if len(pos) >= 2:
        ls, ms = np.log([p[0] for p in pos]), np.log([p[1] for p in pos])
        slope = float(np.polyfit(ls, ms, 1)[0])
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        lines = ["level,metric,stderr"]
        for l, m, s in zip(levels, metrics, stderrs):
            lines.append(f"{l!r},{m!r},{s!r}")
        with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
        _plot_ladder(os.path.join(out_dir, "sweep.png"), levels, metrics, parameter)
    return {"levels": levels, "metrics": metrics, "stderrs": stderrs, "slope": slope, "flagged": flagged}


def _plot_ladder(path, xs, ys, label):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(xs, np.maximum(ys, 1e-300), "o-")
    ax.set_xlabel(label)
    ax.set_ylabel("metric")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ----------------------------------------------------------------------
# batteries (scaled-down diagnostics behind dedicated subcommands)


def gauge_battery(n_paths: int = 20000, seed: int = 0, out_dir=None) -> list[CheckRow]:
    rng = np.random.default_rng(seed)
    rows = []
    for p in (6, 8):
        for d in (1, 3):
            vals = rng.standard_normal((n_paths, 12, d))
            g = path_gauge(vals, p)
            sup = np.sqrt((vals**2).sum(axis=2)).max(axis=1)
            sandwich_bad = int(
                ((g < sup**p * (1 - 1e-10)) | (g > 3 * sup**p * (1 + 1e-10))).sum()
            )
            h = rng.standard_normal((n_paths // 2, 12, d))
            tri = path_gauge(vals[: n_paths // 2] + h, p) - 2 ** (p - 1) * (
                path_gauge(vals[: n_paths // 2], p) + path_gauge(h, p)
            )
            tri_bad = int((tri > 1e-10).sum())
            rows.append(
                CheckRow(f"gauge.sandwich.p{p}.d{d}", sandwich_bad, 0, sandwich_bad == 0)
            )
            rows.append(CheckRow(f"gauge.triangle.p{p}.d{d}", tri_bad, 0, tri_bad == 0))
    # derivative bounds on random points
    p = 6
    vals = rng.standard_normal((2000, 8, 2))
    grad, hess = path_gauge_derivatives(vals, p)
    c = np.sqrt((vals[:, -1, :] ** 2).sum(axis=1))
    gnorm = np.sqrt((grad**2).sum(axis=1))
    hnorm = np.sqrt((hess**2).sum(axis=(1, 2)))
    bad = int((gnorm > 3 * p * c ** (p - 1) + 1e-9).sum())
    bad += int((hnorm > 3 * p * (3 * p - 1) * c ** (p - 2) + 1e-9).sum())
    rows.append(CheckRow("gauge.derivative_bounds", bad, 0, bad == 0))
    return rows


def viscosity_battery(seed: int = 0, out_dir=None) -> list[CheckRow]:
    grid = TimeGrid(0.0, 1.0, 32)
    t = 0.25
    cset = coeffs_mod.make_coefficients("heat", dim=1)
    xi = random_ensemble(grid, t, 1, 512, 1, seed)
    noise = gaussian_noise(grid, 1, 0, 1, 512, seed + 1, k_start=grid.index_of(t))
    family = constant_family((0.0,), grid.index_of(t), grid.steps)
    U = quadratic_functional(grid.horizon)
    res = classical_residual(U, cset, t, xi, (0.0,))
    rows = [CheckRow("viscosity.classical_heat", abs(res), 1e-8, abs(res) <= 1e-8)]
    deltas = [grid.dt * m for m in (2, 4, 8)]

    def value_u(shift):
        def u(s, zeta):
            k = zeta.grid.index_of(s)
            m2 = float((zeta.weights * (zeta.values[:, :, k, :] ** 2).sum(axis=-1)).sum())
            return m2 + (1.0 + shift) * (grid.horizon - s)

        return u

    for shift, side in ((-0.5, "sub"), (0.5, "super")):
        pair = TestPair(quadratic_functional(grid.horizon, time_scale=1.0 + shift), None)
        rep = viscosity_residual(
            value_u(shift), pair, cset, t, xi, side, deltas, family, noise
        )
        ok = rep.sign_ok and all(abs(abs(r) - abs(shift)) < 0.2 for r in rep.residuals)
        rows.append(CheckRow(f"viscosity.shifted_{side}", rep.residuals[0], 0.2, ok))
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            lines = ["delta,residual,stderr"]
            for dta, r in zip(rep.deltas, rep.residuals):
                lines.append(f"{dta!r},{r!r},0.0")
            with open(os.path.join(out_dir, f"viscosity_{side}.csv"), "w") as fh:
                fh.write("\n".join(lines) + "\n")
            _plot_ladder(
                os.path.join(out_dir, f"viscosity_{side}.png"),
                list(rep.deltas),
                [abs(r) for r in rep.residuals],
                "delta",
            )
    return rows


def variational_battery(instances: int = 200, max_size: int = 200, seed: int = 0) -> list[CheckRow]:
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(instances):
        n = int(rng.integers(2, max_size + 1))
        pts = rng.standard_normal((n, 2))
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        gauge = dist**2
        psi = rng.standard_normal(n)
        inst = FiniteInstance(dist, psi, gauge)
        eps = float(rng.uniform(0.1, 1.0))
        ok = psi >= psi.max() - eps
        x0 = int(np.flatnonzero(ok)[rng.integers(0, ok.sum())])
        try:
            res = borwein_preiss(inst, eps, x0)
        except RuntimeError:
            failures += 1
            continue
        if not is_gauge(inst).ok:
            failures += 1
    return [CheckRow("variational.failures", failures, 0, failures == 0, f"instances={instances}")]


# ----------------------------------------------------------------------
# entry point


def _parse_overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        k, _, v = item.partition("=")
        out[k.strip()] = v.strip()
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="proclab")
    parser.add_argument(
        "--threads", type=int, default=int(os.environ.get(_THREADS_ENV, "1"))
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario's configured checks")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--override", action="append", default=[])

    p_sweep = sub.add_parser("sweep", help="refinement ladder over one parameter")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--param", required=True)
    p_sweep.add_argument("--ladder", required=True, help="comma-separated levels")
    p_sweep.add_argument("--out")

    sub.add_parser("list-scenarios", help="list registered data sets")

    p_g = sub.add_parser("gauge-test", help="gauge bounds and derivative battery")
    p_g.add_argument("--paths", type=int, default=20000)
    p_g.add_argument("--seed", type=int, default=0)
    p_g.add_argument("--out")

    p_v = sub.add_parser("viscosity-check", help="classical/viscosity residuals")
    p_v.add_argument("--seed", type=int, default=0)
    p_v.add_argument("--out")

    p_b = sub.add_parser("variational-battery", help="perturbed-maximization battery")
    p_b.add_argument("--instances", type=int, default=200)
    p_b.add_argument("--max-size", type=int, default=200)
    p_b.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            overrides = _parse_overrides(args.override)
            if args.seed is not None:
                overrides["seed"] = str(args.seed)
            report = run_scenario(args.config, overrides, args.out, threads=args.threads)
            for r in report.rows:
                status = "pass" if r.passed else "FAIL"
                print(f"[{status}] {r.name}: value={r.value!r} tol={r.tolerance!r} {r.detail}")
            print(f"scenario {report.scenario}: elapsed {report.elapsed:.2f}s seed {report.seed}")
            return 0 if report.passed else 1
        if args.command == "sweep":
            ladder = [float(x) for x in args.ladder.split(",")]
            res = sweep(args.config, args.param, ladder, args.out, threads=args.threads)
            if res["flagged"]:
                print("ladder too short for a slope fit")
            print(f"slope = {res['slope']!r}")
            return 0
        if args.command == "list-scenarios":
            for name in coeffs_mod.registered_names():
                print(name)
            for name in meanfield.mfc_names():
                print(name)
            return 0
        if args.command == "gauge-test":
            rows = gauge_battery(args.paths, args.seed, args.out)
        elif args.command == "viscosity-check":
            rows = viscosity_battery(args.seed, args.out)
        else:
            rows = variational_battery(args.instances, args.max_size, args.seed)
        ok = True
        for r in rows:
            status = "pass" if r.passed else "FAIL"
            ok = ok and r.passed
            print(f"[{status}] {r.name}: value={r.value!r} {r.detail}")
        return 0 if ok else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

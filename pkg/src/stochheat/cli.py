"""Command-line entry point.

    stochheat <command> [--config FILE] [--seed N] [--out DIR] [--paths M]

Commands: kernel-check, kernel-dump, noise-check, homogeneous, simulate,
picard, verify {comparison, positivity, uniqueness, holder, noise}.
Exit codes: 0 pass, 1 test failure, 2 config error, 3 hypothesis violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from stochheat import __version__, analysis, kernels
from stochheat.analysis import HypothesisError, SuiteResult
from stochheat.coefficients import CoefficientPair, make_coefficient
from stochheat.config import ConfigError, RunConfig, make_field
from stochheat.core import SeedSpec, Trajectory
from stochheat.noise import build_cov_factor
from stochheat.solver import draw_noise, homogeneous_solution, picard_solve, simulate

SUITES = ("comparison", "positivity", "uniqueness", "holder", "noise")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def write_trajectory(path: Path, traj: Trajectory) -> None:
    """Header t, x_0, ..., x_{n-1}; one row per time node, round-trip floats."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{i}" for i in range(traj.grid.n)])
        for t, row in zip(traj.times, traj.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def write_sidecar(path: Path, rc: RunConfig, command: str, extra: dict | None = None) -> None:
    extra = dict(extra or {})
    # the solver's own digest covers the resolved arrays, the config digest the table
    if "config_sha256" in extra:
        extra["solve_sha256"] = extra.pop("config_sha256")
    meta = {"command": command, "version": __version__, "seed": rc.seed, "config_sha256": rc.digest(),
            "config": rc.raw}
    meta.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")


def _finish(res: SuiteResult, out: Path, name: str) -> int:
    for stem, rows in res.tables.items():
        write_csv(out / f"{stem}.csv", rows)
    text = res.summary()
    (out / f"{name}_summary.txt").write_text(text + "\n")
    print(text)
    print(f"{'PASS' if res.passed else 'FAIL'} {name}")
    return 0 if res.passed else 1


# ------------------------------------------------------------------ commands


def cmd_kernel_check(rc: RunConfig) -> int:
    res = analysis.kernel_check(rc.grid, rc.raw["kernel"]["times"])
    return _finish(res, rc.out, "kernel_check")


def cmd_kernel_dump(rc: RunConfig) -> int:
    k = rc.raw["kernel"]
    kind = kernels.BoundaryKind.parse(k["dump_kind"])
    table = kernels.build_kernel_table(rc.grid, kind, float(k["dump_t"]))
    rc.out.mkdir(parents=True, exist_ok=True)
    path = rc.out / f"kernel_{kind.value}.csv"
    kernels.dump_table_csv(table, path)
    write_sidecar(rc.out / f"kernel_{kind.value}.json", rc, "kernel-dump", {"t": table.t})
    print(f"wrote {path}")
    return 0


def cmd_noise_check(rc: RunConfig) -> int:
    fac = build_cov_factor(rc.grid, rc.kappa, float(rc.raw["model"]["jitter"]))
    K = rc.kappa.matrix(rc.grid)
    res = SuiteResult()
    recon = float(np.abs(fac.factor @ fac.factor.T - K).max())
    res.add("factorization", recon <= 1e-8 + fac.jitter, f"max |L L^T - K| = {recon:.3e}, jitter {fac.jitter:g}")
    s = rc.suite("noise")
    rep = analysis.noise_covariance_test(rc.grid, rc.kappa, make_field(rc.grid, s["phi"]), make_field(rc.grid, s["psi"]),
                                         min(int(s["samples"]), 20_000), rc.time_grid.dt, SeedSpec(rc.seed))
    res.add(f"covariance {rc.kappa.name}", rep.passed(s["n_se"]), f"z = {rep.z:.2f}")
    res.tables["noise_check"] = [{"kappa": rc.kappa.name, "jitter": fac.jitter, "reconstruction": recon, **rep.row()}]
    return _finish(res, rc.out, "noise_check")


def cmd_homogeneous(rc: RunConfig) -> int:
    cfg = rc.solve_config()
    traj = homogeneous_solution(cfg)
    write_trajectory(rc.out / "homogeneous.csv", traj)
    write_sidecar(rc.out / "homogeneous.json", rc, "homogeneous", traj.meta)
    print(f"wrote {rc.out / 'homogeneous.csv'}")
    return 0


def cmd_simulate(rc: RunConfig) -> int:
    traj, _ = simulate(rc.solve_config())
    write_trajectory(rc.out / "trajectory.csv", traj)
    write_sidecar(rc.out / "trajectory.json", rc, "simulate", traj.meta)
    print(f"wrote {rc.out / 'trajectory.csv'}")
    return 0


def cmd_picard(rc: RunConfig) -> int:
    cfg = rc.solve_config()
    analysis.check_uniqueness_hypotheses(cfg)
    s = rc.suite("uniqueness")
    traj, rep = picard_solve(cfg, draw_noise(cfg, 0), int(s["n_iter"]), float(s["tol"]))
    write_trajectory(rc.out / "picard.csv", traj)
    write_csv(rc.out / "picard_report.csv",
              [{"iteration": i + 1, "distance": d, "final_time_distance": f}
               for i, (d, f) in enumerate(zip(rep.distances, rep.final_time_distances))])
    write_sidecar(rc.out / "picard.json", rc, "picard", {**traj.meta, "converged": rep.converged})
    print(f"{'PASS' if rep.converged else 'FAIL'} picard: {rep.iterations} iterations, "
          f"last distance {rep.distances[-1]:.3e}")
    return 0 if rep.converged else 1


def verify_comparison(rc: RunConfig) -> SuiteResult:
    s = rc.suite("comparison")
    c1 = rc.solve_config()
    G2 = make_coefficient(s["G2"])
    y0_2 = make_field(rc.grid, s["y0_2"]) if s["y0_2"] is not None else c1.y0
    c2 = c1.replace(coefficients=CoefficientPair(G2, c1.pair.H), y0=y0_2)
    rep = analysis.comparison_test(c1, c2, rc.paths, float(s["eps"]))
    res = SuiteResult()
    res.add("ordering", rep.passed(s["limit"]),
            f"violation fraction {rep.fraction:.3e} <= {s['limit']:g} over {rep.n_samples} samples")
    res.tables["comparison"] = rep.rows()
    return res


def verify_positivity(rc: RunConfig) -> SuiteResult:
    s = rc.suite("positivity")
    cfg = rc.solve_config()
    analysis.check_positivity_hypotheses(cfg)
    c = float(s["threshold"])
    reps, ratios = analysis.positivity_ladder(cfg, s["dts"], rc.paths, ladder=sorted({*analysis.LADDER, c}))
    res = SuiteResult()
    for r in reps:
        res.add(f"fraction below -{c:g} sqrt(dt) at dt={r.dt:g}", r.below[c] <= s["limit"], f"{r.below[c]:.3e}")
    lo, hi = s["factor"]
    for (a, b), q in zip(zip(reps, reps[1:]), ratios):
        res.add(f"q99 shrink dt {a.dt:g} -> {b.dt:g}", lo <= q <= hi, f"factor {q:.3f} in [{lo}, {hi}]")
    res.tables["positivity"] = [row for r in reps for row in r.rows()]
    return res


def verify_uniqueness(rc: RunConfig) -> SuiteResult:
    s = rc.suite("uniqueness")
    rep = analysis.uniqueness_coupling_test(rc.solve_config(), int(s["replays"]), float(s["tol"]),
                                            tuple(s["starts"]), int(s["n_iter"]))
    res = SuiteResult()
    res.add("coupled limits agree", rep.max_distance <= s["factor"] * rep.tol,
            f"max distance {rep.max_distance:.3e} <= {s['factor'] * rep.tol:.1e}")
    res.add("negative control", rep.control >= s["control_floor"], f"distance {rep.control:.3e} >= {s['control_floor']:g}")
    res.tables["uniqueness"] = rep.rows()
    return res


def verify_holder(rc: RunConfig) -> SuiteResult:
    s = rc.suite("holder")
    p = int(s["p"])
    cfg = rc.solve_config()
    st = analysis.holder_study(cfg, rc.paths, p)
    res = SuiteResult()
    for fit, (lo, hi) in ((st.space, s["space"]), (st.time, s["time"])):
        res.add(f"{fit.variable} exponent", lo <= fit.exponent <= hi,
                f"{fit.exponent:.3f} +- {fit.half_width:.3f} in [{lo}, {hi}]")
    rows = [{"run": cfg.kind.value, **r} for r in st.rows()]
    moments = [{"run": cfg.kind.value, **r} for r in st.stats.rows()]
    if s["boundary_check"]:
        bcfg = rc.solve_config(kind="C1", boundary=rc.boundary_spec(s["boundary"]))
        bst = analysis.holder_study(bcfg, rc.paths, p, fit_time=False)
        res.add("near-boundary space exponent", bst.space.exponent <= s["boundary_max"],
                f"{bst.space.exponent:.3f} +- {bst.space.half_width:.3f} <= {s['boundary_max']}")
        rows += [{"run": "C1-boundary", **r} for r in bst.rows()]
        moments += [{"run": "C1-boundary", **r} for r in bst.stats.rows()]
    res.tables["holder_fits"] = rows
    res.tables["holder_moments"] = moments
    return res


def verify_noise(rc: RunConfig) -> SuiteResult:
    from stochheat.noise import make_kernel

    s = rc.suite("noise")
    phi, psi = make_field(rc.grid, s["phi"]), make_field(rc.grid, s["psi"])
    res = SuiteResult()
    rows = []
    for j, spec in enumerate(s["kernels"]):
        try:
            kap = make_kernel(spec)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        rep = analysis.noise_covariance_test(rc.grid, kap, phi, psi, int(s["samples"]), rc.time_grid.dt,
                                             SeedSpec(rc.seed, j))
        res.add(f"covariance {kap.name}", rep.passed(s["n_se"]),
                f"|z| = {abs(rep.z):.2f} <= {s['n_se']:g} ({rep.estimate:.4e} vs {rep.expected:.4e})")
        rows.append(rep.row())
    res.tables["noise"] = rows
    return res


VERIFY = {"comparison": verify_comparison, "positivity": verify_positivity, "uniqueness": verify_uniqueness,
          "holder": verify_holder, "noise": verify_noise}

COMMANDS = {"kernel-check": cmd_kernel_check, "kernel-dump": cmd_kernel_dump, "noise-check": cmd_noise_check,
            "homogeneous": cmd_homogeneous, "simulate": cmd_simulate, "picard": cmd_picard}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--out", type=Path, help="output directory (overrides run.out)")
    common.add_argument("--paths", type=int, help="Monte Carlo path count (overrides run.paths)")
    ap = argparse.ArgumentParser(prog="stochheat", description="Stochastic heat equation laboratory.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    v = sub.add_parser("verify", parents=[common])
    v.add_argument("suite", choices=SUITES)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        suite = args.suite if args.command == "verify" else None
        rc = RunConfig.build(args.command, args.config, args.seed, args.paths, args.out, suite=suite)
        if suite is None:
            return COMMANDS[args.command](rc)
        res = VERIFY[suite](rc)
        code = _finish(res, rc.out, suite)
        write_sidecar(rc.out / f"{suite}.json", rc, f"verify {suite}", {"passed": res.passed})
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except HypothesisError as exc:
        print(f"hypothesis violated: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

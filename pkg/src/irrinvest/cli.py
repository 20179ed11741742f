"""Command-line entry point.

    irrinvest boundary solve   --config run.toml --out out/
    irrinvest boundary bound   --config run.toml
    irrinvest closed-form      --config run.toml
    irrinvest oracle value     --config run.toml [--surface]
    irrinvest policy simulate  --config run.toml
    irrinvest policy foc       --config run.toml
    irrinvest validate         --config run.toml

Exit codes: 0 success, 1 invalid input or failed validation, 2 solver or
numerical failure.  Every CSV starts with a ``# config_sha256=... seed=...``
line and is byte-identical across reruns of the same configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import __version__
from .boundary import (closed_form_boundary_infinite, general_R_boundary_infinite,
                       upper_bound_boundary)
from .config import RunConfig, load_config
from .errors import (ConfigError, CoverageError, DomainError, ExtractionError, IrrInvestError,
                     NumericalError, SolverError)
from .model import CobbDouglas
from .paths import Measure, TimeGrid, simulate_c0
from .policy import (LumpAtZero, MonteCarloEstimate, NoInvest, ScaledBoundary, TrackBoundary,
                     default_probe_indices, evaluate_profit, verify_foc, write_policy_csv)
from .validation import derived_seed, oracle_boundary, run_all, solve_reference_boundary

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2


class Run:
    """Resolved configuration, output directory and thread count."""

    def __init__(self, cfg: RunConfig, out: Path, threads: int, command: str):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.command = command
        out.mkdir(parents=True, exist_ok=True)

    @property
    def params(self):
        return self.cfg.params

    @property
    def pf(self):
        return self.cfg.production_function()

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.cfg.grid.T, self.cfg.grid.n_steps)

    def write_meta(self, outputs):
        meta = {
            "command": self.command,
            "version": __version__,
            "config_sha256": self.cfg.sha256(),
            "seed": self.cfg.monte_carlo.seed,
            "config": self.cfg.canonical(),
            "outputs": sorted(outputs),
        }
        with open(self.out / "run.meta", "w", newline="", encoding="utf-8") as fh:
            fh.write(json.dumps(meta, sort_keys=True, indent=2) + "\n")

    def boundary(self):
        mc = self.cfg.monte_carlo
        return solve_reference_boundary(self.params, self.pf, self.grid, mc.n_paths, mc.seed,
                                        mc.antithetic, self.threads)

    def policy_ensemble(self):
        mc = self.cfg.monte_carlo
        return simulate_c0(self.params, self.grid, mc.n_policy_paths, derived_seed(mc.seed, 1),
                           Measure.ORIGINAL, antithetic=mc.antithetic, threads=self.threads)


def cmd_boundary_solve(run: Run) -> int:
    curve = run.boundary()
    curve.write_csv(run.out / "boundary.csv", run.cfg.header())
    for flag in curve.flags:
        print(f"note: {flag}")
    run.write_meta(["boundary.csv"])
    print(f"y_hat(0) = {curve.values[0]:.6g} +/- {curve.stderr[0]:.2g}; wrote {run.out / 'boundary.csv'}")
    return EXIT_OK


def cmd_boundary_bound(run: Run) -> int:
    pf = run.pf
    if not isinstance(pf, CobbDouglas):
        raise DomainError("the upper bound is defined for Cobb-Douglas revenue only")
    curve = upper_bound_boundary(run.params, pf, run.grid)
    curve.write_csv(run.out / "bound.csv", run.cfg.header())
    run.write_meta(["bound.csv"])
    print(f"y*(0) = {curve.values[0]:.6g}; wrote {run.out / 'bound.csv'}")
    return EXIT_OK


def cmd_closed_form(run: Run) -> int:
    params, pf = run.params.with_horizon(math.inf), run.pf
    rows = []
    if isinstance(pf, CobbDouglas):
        cf = closed_form_boundary_infinite(params, pf.alpha)
        g = general_R_boundary_infinite(params, pf)
        rows += [("beta_plus", cf.roots.beta_plus), ("beta_minus", cf.roots.beta_minus),
                 ("a", cf.a), ("a_from_roots", cf.a_from_roots), ("a_general_R", g),
                 ("general_R_rel_diff", abs(g - cf.a) / cf.a)]
    else:
        from .model import beta_roots

        roots = beta_roots(params.mu_C(0.0), params.sigma_C(0.0), params.mu_F(0.0))
        rows += [("beta_plus", roots.beta_plus), ("beta_minus", roots.beta_minus),
                 ("a_general_R", general_R_boundary_infinite(params, pf))]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v!r}")
    return EXIT_OK


def cmd_oracle_value(run: Run, surface_dump: bool) -> int:
    orc, tol = run.cfg.oracle, run.cfg.tolerances
    surface, curve = oracle_boundary(run.params, run.pf, run.grid, run.cfg.grid.n_ypoints,
                                     substeps=orc.substeps, extrapolate=orc.extrapolate,
                                     gh_order=orc.gh_order, decades=orc.decades,
                                     match_tol=tol.match_tol)
    curve.write_csv(run.out / "oracle_boundary.csv", run.cfg.header())
    outputs = ["oracle_boundary.csv"]
    if surface_dump:
        surface.write_csv(run.out / "value_surface.csv", run.cfg.header())
        outputs.append("value_surface.csv")
    for flag in curve.flags:
        print(f"note: {flag}")
    run.write_meta(outputs)
    print(f"oracle boundary at t=0: {curve.values[0]:.6g}; wrote {', '.join(outputs)}")
    return EXIT_OK


def cmd_policy_simulate(run: Run) -> int:
    curve = run.boundary()
    ens = run.policy_ensemble()
    y0 = run.params.y0
    policies = [TrackBoundary(curve), NoInvest(), ScaledBoundary(curve, 0.5, name="scaled_x0.5"),
                ScaledBoundary(curve, 2.0, name="scaled_x2"),
                LumpAtZero(2.0 * curve.values[0])]
    rows = []
    for pol in policies:
        est: MonteCarloEstimate = evaluate_profit(pol, run.params, run.pf, ens, y0)
        rows.append((pol.name, est, ens.seed))
        print(f"{pol.name:<16} J = {est.mean:.6g} +/- {est.stderr:.2g}")
    write_policy_csv(run.out / "policy.csv", rows, run.cfg.header())
    run.write_meta(["policy.csv"])
    return EXIT_OK


def cmd_policy_foc(run: Run) -> int:
    curve = run.boundary()
    ens = run.policy_ensemble()
    probes = default_probe_indices(run.grid.n_steps, run.cfg.policy.n_probes)
    rep = verify_foc(TrackBoundary(curve), run.params, run.pf, ens, run.cfg.policy.foc_y0,
                     probes, run.cfg.tolerances.foc_band)
    rep.write_csv(run.out / "foc.csv", run.cfg.header())
    with open(run.out / "foc.txt", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {run.cfg.header()}\n{rep.text()}\n")
    run.write_meta(["foc.csv", "foc.txt"])
    print(rep.text())
    return EXIT_OK if rep.passed else EXIT_INVALID


def cmd_validate(run: Run) -> int:
    results = run_all(run.cfg, run.threads)
    failed = [r for r in results if not r.passed]
    with open(run.out / "validate.txt", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {run.cfg.header()}\n")
        fh.writelines(r.line() + "\n" for r in results)
    run.write_meta(["validate.txt"])
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--out", help="output directory (default: [output] dir)")
    common.add_argument("--seed", type=int, help="override monte_carlo.seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads, 0 = auto")

    ap = argparse.ArgumentParser(prog="irrinvest", description=__doc__.splitlines()[0] if __doc__ else None)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="group", required=True)

    b = sub.add_parser("boundary", help="free boundary")
    bsub = b.add_subparsers(dest="action", required=True)
    bsub.add_parser("solve", parents=[common], help="solve the integral equation")
    bsub.add_parser("bound", parents=[common], help="analytic upper bound")

    sub.add_parser("closed-form", parents=[common], help="infinite-horizon boundary")

    o = sub.add_parser("oracle", help="dynamic-programming oracle")
    osub = o.add_subparsers(dest="action", required=True)
    ov = osub.add_parser("value", parents=[common], help="value function and its boundary")
    ov.add_argument("--surface", action="store_true", help="also dump value_surface.csv")

    p = sub.add_parser("policy", help="investment policies")
    psub = p.add_subparsers(dest="action", required=True)
    psub.add_parser("simulate", parents=[common], help="expected profit of reference policies")
    psub.add_parser("foc", parents=[common], help="first-order condition checks")

    sub.add_parser("validate", parents=[common], help="run every acceptance check")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.threads < 0:
            raise ConfigError("--threads", "must be >= 0")
    except (ConfigError, OSError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    run = Run(cfg, Path(args.out or cfg.output_dir), args.threads,
              " ".join(filter(None, [args.group, getattr(args, "action", None)])))
    dispatch = {
        ("boundary", "solve"): lambda: cmd_boundary_solve(run),
        ("boundary", "bound"): lambda: cmd_boundary_bound(run),
        ("closed-form", None): lambda: cmd_closed_form(run),
        ("oracle", "value"): lambda: cmd_oracle_value(run, args.surface),
        ("policy", "simulate"): lambda: cmd_policy_simulate(run),
        ("policy", "foc"): lambda: cmd_policy_foc(run),
        ("validate", None): lambda: cmd_validate(run),
    }
    try:
        return dispatch[(args.group, getattr(args, "action", None))]()
    except (SolverError, NumericalError, CoverageError, ExtractionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DomainError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except IrrInvestError as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

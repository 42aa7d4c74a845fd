"""Command-line entry point.

Subcommands map onto the verification stages and the two evaluation
front-ends: `structure`, `kernel`, `holder` and `verify` run staged checks
and emit report.json / tables.csv / report.md; `solve` evaluates the
configured Cauchy problem on probe points and writes a samples CSV; `sde`
runs the sampling oracle and writes terminal states.  Exit code 0 iff all
executed checks pass.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .cauchy import residual_check, samples_to_csv, solve_cauchy
from .errors import KolkinError
from .holder import anisotropic_norm_est
from .report import emit_report
from .sde import feynman_kac_estimate, simulate_paths, terminal_to_csv
from .suites import (
    SUITE_NAMES,
    SuiteConfig,
    load_suite_config,
    named_suite,
    run_verification_suite,
)

STAGE_BY_COMMAND = {
    "structure": ("structure",),
    "kernel": ("structure", "kernel"),
    "holder": ("structure", "taylor"),
    "verify": None,  # keep the suite's own stage list
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="kolkin",
        description=(
            "Degenerate-diffusion kernel construction, Cauchy solver and "
            "verification suites."
        ),
    )
    p.add_argument("--config", help="JSON suite configuration file")
    p.add_argument("--seed", type=int, help="override the suite seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for probe loops")
    p.add_argument("--out", help="output directory (reports, CSV files)")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument(
            "--suite",
            default="default",
            help=f"named suite preset (one of {', '.join(SUITE_NAMES)})",
        )
        return sp

    add("structure", "validate the drift structure and rank cross-checks")
    add("kernel", "kernel normalization, composition and bound checks")
    sp_solve = add("solve", "solve the configured problem on probe points")
    sp_solve.add_argument("--t", type=float, help="evaluation time (default: suite's)")
    sp_sde = add("sde", "sampling oracle at one probe point")
    sp_sde.add_argument("--x", type=float, nargs="+", help="initial point (default: first probe)")
    add("holder", "norm estimates and Taylor remainder checks")
    add("verify", "run the full staged verification suite")
    return p


def _load_config(args) -> SuiteConfig:
    if args.config:
        cfg = load_suite_config(args.config)
    else:
        cfg = named_suite(args.suite)
    if args.seed is not None:
        from dataclasses import replace

        cfg.seed = args.seed
        cfg.sde = replace(cfg.sde, seed=args.seed)
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _print_report(report) -> None:
    for c in report.checks:
        mark = "PASS" if c.passed else "FAIL"
        val = "" if c.value is None else f" value={c.value:.6g}"
        tgt = "" if c.target is None else f" target={c.target:.6g}"
        tol = "" if c.tolerance is None else f" tol={c.tolerance:.6g}"
        print(f"[{mark}] {c.name}{val}{tgt}{tol}")
    print(f"OVERALL: {'PASS' if report.overall_pass else 'FAIL'}")


def _staged_command(args) -> int:
    cfg = _load_config(args)
    stages = STAGE_BY_COMMAND[args.command]
    if stages is not None:
        cfg.stages = stages
    report = run_verification_suite(cfg, threads=args.threads)
    _print_report(report)
    return 0 if report.overall_pass else 1


def _solve_command(args) -> int:
    cfg = _load_config(args)
    pb = cfg.problem()
    t = args.t if args.t is not None else cfg.t_solve
    points = cfg.probes()
    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        from .cauchy import solve_point

        with ThreadPoolExecutor(max_workers=args.threads) as ex:
            samples = list(ex.map(lambda x: solve_point(pb, cfg.solver, t, x), points))
    else:
        samples = solve_cauchy(pb, cfg.solver, [(t, x) for x in points])
    residuals = residual_check(pb, cfg.solver, [(s.t, s.x) for s in samples])
    for s, r in zip(samples, residuals):
        coords = " ".join(f"{v:+.4f}" for v in s.x)
        print(f"t={s.t:.4f} x=({coords}) u={s.u:+.8f} residual={r:+.3e}")
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        samples_to_csv(samples, out / "samples.csv", residuals=residuals)
        print(f"wrote {out / 'samples.csv'}")
    return 0


def _sde_command(args) -> int:
    cfg = _load_config(args)
    pb = cfg.problem()
    x0 = np.asarray(args.x, dtype=float) if args.x else cfg.probes()[0]
    est = feynman_kac_estimate(pb, cfg.sde, cfg.t_solve, x0)
    lo, hi = est.interval()
    coords = " ".join(f"{v:+.4f}" for v in x0)
    print(
        f"x0=({coords}) t={cfg.t_solve:.4f}: estimate {est.mean:+.8f} "
        f"+- {est.std_error:.2e} (3-sigma [{lo:+.8f}, {hi:+.8f}], {est.n_paths} paths)"
    )
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        bundle = simulate_paths(pb.cf, pb.S, cfg.sde, cfg.t_solve, x0, pb.T, f=pb.f)
        terminal_to_csv(bundle, out / "terminal.csv")
        print(f"wrote {out / 'terminal.csv'}")
    return 0


def _holder_command(args) -> int:
    cfg = _load_config(args)
    code = _staged_command(args)
    if cfg.datum is not None:
        pb = cfg.problem()
        spec = cfg.sampler_spec()
        alpha = min(pb.g.beta, 1.0) if pb.g.beta > 0 else cfg.alpha
        est = anisotropic_norm_est(pb.g, alpha, cfg.structure(), spec)
        print(
            f"datum anisotropic norm estimate (order {alpha:g}): "
            f"{est.value:.6g} over {est.n_pairs} pairs"
        )
        if cfg.out_dir is not None:
            import json

            out = Path(cfg.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / "holder.json").write_text(
                json.dumps(est.to_json(), sort_keys=True, indent=2) + "\n"
            )
            print(f"wrote {out / 'holder.json'}")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("structure", "kernel", "verify"):
            return _staged_command(args)
        if args.command == "solve":
            return _solve_command(args)
        if args.command == "sde":
            return _sde_command(args)
        if args.command == "holder":
            return _holder_command(args)
    except KolkinError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())

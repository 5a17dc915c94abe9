import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml
from pydantic import ValidationError

from settings.settings import Settings, get_settings
from wong_zakai.core import export
from wong_zakai.core.density import (
    XiGrid,
    estimate_density,
    reference_evaluator,
    sup_error,
    terminal_values,
)
from wong_zakai.core.errors import InconclusiveStudyError, WongZakaiError
from wong_zakai.core.experiments import (
    ConvergenceReport,
    StudyConfig,
    load_study_config,
    run_study,
)
from wong_zakai.core.fbm import increment_gram, sample_fbm, sample_independent_direction
from wong_zakai.core.malliavin import (
    directional_derivatives,
    malliavin_covariance,
    nondegeneracy_report,
)
from wong_zakai.core.models import TimeGrid
from wong_zakai.core.ode import solve_driven
from wong_zakai.core.roughpath import (
    control_evaluation,
    homogeneous_pvar_norm,
    level3_consistency_check,
    levy_area,
    lift_piecewise_linear,
    n_functional,
    pvar_seminorm,
)
from wong_zakai.core.vector_fields import build_model

logger = logging.getLogger(__name__)


def parse_parameters(items: Optional[List[str]]) -> Dict[str, Any]:
    """
    Turns repeated key=value flags into preset overrides; values are parsed as YAML.
    """
    overrides: Dict[str, Any] = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise argparse.ArgumentTypeError(f"Expected key=value, got '{item}'.")
        overrides[key.strip()] = yaml.safe_load(value)
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wong-zakai",
        description="Wong-Zakai approximations of fBM-driven differential equations.",
    )
    parser.add_argument("--config", type=Path, help="Study configuration (JSON or YAML).")
    parser.add_argument("--seed", type=int, help="Master seed.")
    parser.add_argument("--threads", type=int, help="Worker threads.")
    parser.add_argument("--out", type=Path, help="Output directory.")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR.")
    sub = parser.add_subparsers(dest="command", required=True)

    def _common(command: argparse.ArgumentParser) -> None:
        command.add_argument("--hurst", type=float, default=0.5)
        command.add_argument("--m", type=int, default=64)

    def _model(command: argparse.ArgumentParser) -> None:
        command.add_argument("--preset", default="identity")
        command.add_argument("--param", action="append", metavar="KEY=VALUE")

    fbm = sub.add_parser("sample-fbm", help="Sample fBM paths and the increment Gram.")
    _common(fbm)
    fbm.add_argument("--dimension", type=int, default=1)
    fbm.add_argument("--count", type=int, default=10)

    lift = sub.add_parser("lift", help="Lift one sampled path to level <= 3.")
    _common(lift)
    lift.add_argument("--dimension", type=int, default=2)
    lift.add_argument("--level", type=int, default=2)

    pvar = sub.add_parser("pvar", help="p-variation norms of one sampled lift.")
    _common(pvar)
    pvar.add_argument("--dimension", type=int, default=2)
    pvar.add_argument("--level", type=int, default=2)
    pvar.add_argument("--p", type=float, default=2.5)

    nfunc = sub.add_parser("nfunc", help="N-functional of sampled lifts.")
    _common(nfunc)
    nfunc.add_argument("--dimension", type=int, default=1)
    nfunc.add_argument("--count", type=int, default=100)
    nfunc.add_argument("--p", type=float, default=4.0)
    nfunc.add_argument("--beta", type=float, default=1.0)

    solve = sub.add_parser("solve", help="Solve the driven system with J and K.")
    _common(solve)
    _model(solve)
    solve.add_argument("--count", type=int, default=10)

    deriv = sub.add_parser("deriv", help="Directional derivatives and covariances.")
    _common(deriv)
    _model(deriv)
    deriv.add_argument("--count", type=int, default=10)
    deriv.add_argument("--order", type=int, default=1)
    deriv.add_argument("--t", type=float, default=1.0)

    density = sub.add_parser("density", help="Mollified Monte Carlo density.")
    _common(density)
    _model(density)
    density.add_argument("--t", type=float, default=1.0)
    density.add_argument("--delta", type=float)
    density.add_argument("--samples", type=int, default=10000)
    density.add_argument("--points", type=int, default=201)

    study = sub.add_parser("study", help="Run a convergence study from --config.")
    study.add_argument("--kind", help="Study kind when no config file is given.")
    study.add_argument("--samples", type=int, help="Override M.")
    return parser


def resolve_settings(args: argparse.Namespace) -> Settings:
    settings = get_settings()
    updates = {
        "seed": args.seed,
        "threads": args.threads,
        "output_dir": args.out,
        "log_level": args.log_level,
    }
    changes = {key: value for key, value in updates.items() if value is not None}
    return Settings(**{**settings.model_dump(), **changes})


def print_header(title: str) -> None:
    print("\n" + "=" * 40)
    print(f"  {title}")
    print("=" * 40 + "\n")


def print_report(report: ConvergenceReport) -> None:
    """
    Prints a formatted summary of a convergence study.
    """
    print_header(f"{report.kind.upper()} STUDY")
    print(f"{'m':>6} {'samples':>8} {'mean':>12} {'median':>12} {'q90':>12} {'stderr':>12}")
    for row in report.rows:
        flag = "  (inconclusive)" if row.inconclusive else ""
        print(
            f"{row.m:>6} {row.samples:>8} {row.stat_mean:>12.4e} "
            f"{row.stat_median:>12.4e} {row.stat_q90:>12.4e} {row.stderr:>12.4e}{flag}"
        )
    print("")
    if report.fit is not None:
        print(
            f"Fitted slope: {report.fit.slope:.3f} +- {report.fit.slope_stderr:.3f} "
            f"(expected {report.expected_slope})"
        )
    for note in report.notes:
        print(f"  - {note}")
    print(f"Wall clock: {report.wall_clock_seconds:.1f}s")


def _cmd_sample_fbm(args: argparse.Namespace, settings: Settings) -> int:
    grid = TimeGrid.uniform(args.m)
    batch = sample_fbm(
        args.hurst,
        grid,
        args.count,
        settings.seed,
        args.dimension,
        chunk_size=settings.chunk_size,
        threads=settings.threads,
    )
    paths = export.write_paths_csv(batch, settings.output_dir / "paths.csv")
    export.write_matrix_csv(
        increment_gram(args.hurst, grid).matrix, settings.output_dir / "gram.csv"
    )
    print_header("FBM SAMPLES")
    print(f"{args.count} paths, H={args.hurst}, m={args.m}, d={args.dimension}")
    print(f"Var(w_1) per component: {np.var(batch.values[:, -1], axis=0)}")
    print(f"Written to {paths.parent}")
    return 0


def _single_path(args: argparse.Namespace, settings: Settings) -> Any:
    grid = TimeGrid.uniform(args.m)
    return sample_fbm(args.hurst, grid, 1, settings.seed, args.dimension)[0]


def _cmd_lift(args: argparse.Namespace, settings: Settings) -> int:
    path = _single_path(args, settings)
    levels = lift_piecewise_linear(path, args.level)
    export.write_lift_csv(levels, settings.output_dir / "lift.csv")
    print_header("PIECEWISE-LINEAR LIFT")
    print(f"Level {args.level}, d={args.dimension}, m={args.m}")
    if args.level >= 2 and args.dimension >= 2:
        print(f"Levy area A^12 at t=1: {levy_area(levels)[-1, 0, 1]:.6f}")
    if args.level == 3 and args.m <= 64:
        print(f"Level-3 consistency residual: {level3_consistency_check(path):.3e}")
    return 0


def _cmd_pvar(args: argparse.Namespace, settings: Settings) -> int:
    levels = lift_piecewise_linear(_single_path(args, settings), args.level, args.p)
    control = control_evaluation(levels, args.p)
    print_header("P-VARIATION")
    for k in range(1, args.level + 1):
        print(f"||x^{k}||_(p/{k})-var: {pvar_seminorm(levels, k, args.p / k):.6f}")
    print(f"Homogeneous norm: {homogeneous_pvar_norm(levels, args.p):.6f}")
    print(f"Superadditivity excess: {control.superadditivity_violation():.3e}")
    export.write_matrix_csv(control.values, settings.output_dir / "control.csv")
    return 0


def _cmd_nfunc(args: argparse.Namespace, settings: Settings) -> int:
    grid = TimeGrid.uniform(args.m)
    batch = sample_fbm(args.hurst, grid, args.count, settings.seed, args.dimension)
    level = min(3, int(args.p))
    counts = np.array(
        [
            n_functional(
                lift_piecewise_linear(path, level, args.p), args.p, args.beta
            ).count
            for path in batch.paths()
        ]
    )
    print_header("N-FUNCTIONAL")
    print(f"Mean N: {counts.mean():.3f}, max N: {counts.max()}")
    print(f"E[exp(0.5 N)]: {np.mean(np.exp(0.5 * counts)):.4f}")
    export.write_json(
        {"counts": counts.tolist(), "p": args.p, "beta": args.beta, "m": args.m},
        settings.output_dir / "nfunc.json",
    )
    return 0


def _cmd_solve(args: argparse.Namespace, settings: Settings) -> int:
    model = build_model(args.preset, parse_parameters(args.param))
    grid = TimeGrid.uniform(args.m)
    driver = sample_fbm(args.hurst, grid, args.count, settings.seed, model.driver_dim)
    solved = solve_driven(model, driver)
    export.write_trajectory_csv(solved, settings.output_dir / "trajectory.csv")
    print_header("DRIVEN SOLVE")
    print(f"Model {model.name}: e={model.state_dim}, d={model.driver_dim}")
    print(f"Max |J K - Id|: {solved.jk_residual():.3e}")
    print(f"Substeps per segment: max {int(solved.substeps.max())}")
    print(f"Mean y_1: {solved.y[:, -1].mean(axis=0)}")
    return 0


def _cmd_deriv(args: argparse.Namespace, settings: Settings) -> int:
    model = build_model(args.preset, parse_parameters(args.param))
    grid = TimeGrid.uniform(args.m)
    driver = sample_fbm(args.hurst, grid, args.count, settings.seed, model.driver_dim)
    theta = sample_independent_direction(
        args.hurst, grid, args.count, settings.seed, model.driver_dim
    )
    solved = solve_driven(model, driver)
    derivatives = directional_derivatives(model, solved, theta, args.order)
    covariances = malliavin_covariance(
        model, solved, increment_gram(args.hurst, grid), args.t
    )
    report = nondegeneracy_report(covariances)
    for derivative in derivatives:
        export.write_derivative_csv(
            derivative, settings.output_dir / f"xi_{derivative.order}.csv"
        )
    export.write_covariance(covariances[0], settings.output_dir / "covariance.csv")
    export.write_json(report.model_dump(), settings.output_dir / "nondegeneracy.json")
    print_header("MALLIAVIN DERIVATIVES")
    for derivative in derivatives:
        print(f"Xi_{derivative.order} at t={args.t}: {derivative.at_node(args.t)[0]}")
    print(f"Covariance (path 0): {covariances[0].matrix.tolist()}")
    print(f"Smallest eigenvalue quantiles: {report.min_eigenvalue_quantiles}")
    print(f"Flagged fraction: {report.flagged_fraction:.3f}")
    return 0


def _cmd_density(args: argparse.Namespace, settings: Settings) -> int:
    model = build_model(args.preset, parse_parameters(args.param))
    pilot = terminal_values(model, args.hurst, args.t, args.m, 1000, settings.seed)
    grid = XiGrid.around(pilot, points=args.points)
    estimate = estimate_density(
        model,
        args.hurst,
        args.t,
        args.m,
        args.delta,
        args.samples,
        grid,
        settings.seed,
        chunk_size=settings.chunk_size,
        threads=settings.threads,
    )
    export.write_density(estimate, settings.output_dir / "density.csv", vars(args))
    print_header("DENSITY ESTIMATE")
    print(f"Bandwidth: {estimate.bandwidth:.4f}, M={estimate.count}")
    print(f"Tail mass outside the grid: {estimate.tail_mass:.2e}")
    if estimate.grid is not None and estimate.grid.dimension <= 2:
        print(f"Integral over the grid: {estimate.integral():.6f}")
    if model.is_affine:
        gap, point = sup_error(estimate, reference_evaluator(model, args.hurst, args.t))
        print(f"Sup error vs closed form: {gap:.4e} at xi={point}")
    return 0


def _cmd_study(args: argparse.Namespace, settings: Settings) -> int:
    overrides = {"seed": args.seed, "samples": args.samples}
    if args.config is not None:
        config = load_study_config(args.config, **overrides)
    else:
        config = StudyConfig(
            kind=args.kind or "pathwise",
            seed=settings.seed,
            **{k: v for k, v in overrides.items() if v is not None and k != "seed"},
        )
    report = run_study(config, chunk_size=settings.chunk_size, threads=settings.threads)
    directory = export.write_report(report, settings.output_dir / config.kind)
    print_report(report)
    print(f"Written to {directory}")
    if report.inconclusive:
        raise InconclusiveStudyError("Study ended above the Monte Carlo noise floor.")
    return 0


_COMMANDS = {
    "sample-fbm": _cmd_sample_fbm,
    "lift": _cmd_lift,
    "pvar": _cmd_pvar,
    "nfunc": _cmd_nfunc,
    "solve": _cmd_solve,
    "deriv": _cmd_deriv,
    "density": _cmd_density,
    "study": _cmd_study,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point; returns the process exit code.
    """
    args = build_parser().parse_args(argv)
    try:
        settings = resolve_settings(args)
        logging.basicConfig(
            level=settings.log_level,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        return _COMMANDS[args.command](args, settings)
    except ValidationError as exc:
        logger.error("Invalid configuration: %s", exc)
        return 2
    except argparse.ArgumentTypeError as exc:
        logger.error("%s", exc)
        return 2
    except WongZakaiError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

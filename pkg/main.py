import argparse
import json
import logging
import os
import sys
from typing import List, Optional

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import Config
from ensembles import Ensemble, diagnose, generate
from harness import (
    PhaseSpec,
    SupportRule,
    ValueDistribution,
    VectorEnsemble,
    default_online_configs,
    gabor_demo,
    load_scenario_file,
    online_experiment,
    phase_grid,
    recovery_curve,
    run_solve,
    trial_config,
)
from result_files import read_matrix_csv, write_matrix_csv, write_recovery_csv
from solvers_batch import Algorithm, BatchConfig
from solvers_online import OnlineScenario

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def setup_logging(config: Config):
    handlers = []
    if config.log_file:
        handlers.append(logging.FileHandler(config.log_file, encoding='utf-8'))
    # stdout carries results, so log records go to stderr
    handlers.append(logging.StreamHandler(sys.stderr))
    logging.basicConfig(
        level=getattr(logging, config.log_level.upper()),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def _add_solver_flags(parser: argparse.ArgumentParser, config: Config, default_algo: str):
    group = parser.add_argument_group('solver')
    group.add_argument('--algo', choices=[a.value for a in Algorithm], default=default_algo)
    group.add_argument('--lam', type=float, default=0.0, help='l1 weight of the halved-loss LASSO')
    group.add_argument('--lambda-ratio', type=float, help='lam as a fraction of ||X^T y||_inf')
    group.add_argument('--step-mu', type=float, help='explicit step size')
    group.add_argument('--step-scale', type=float, help='step = scale / lambda_max(X^T X)')
    group.add_argument('--csmp-t', type=int, help='candidates merged per CSMP iteration (default 2k)')
    group.add_argument('--tst-t', type=int, help='stage-one size for TST (default k)')
    group.add_argument('--max-iters', type=int, default=config.max_iters)
    group.add_argument('--tol', type=float, default=config.tol)
    group.add_argument('--reweight-epsilon', type=float, default=0.1)
    group.add_argument('--reweight-rounds', type=int, default=3)
    group.add_argument('--inner', choices=['ista', 'fista', 'cd', 'pcd'], default='cd')
    group.add_argument('--debias', action='store_true', help='least-squares refit on the final support')
    group.add_argument('--adaptive-step', action='store_true', help='normalized IHT step instead of a fixed one')


def _add_problem_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group('problem')
    group.add_argument('--ensemble', choices=[e.value for e in Ensemble if e is not Ensemble.EXPLICIT],
                       default=Ensemble.GAUSSIAN.value)
    group.add_argument('--values', choices=[v.value for v in ValueDistribution],
                       default=ValueDistribution.GAUSSIAN.value)
    group.add_argument('--support-rule', choices=[r.value for r in SupportRule], default=SupportRule.EXACT_K.value)
    group.add_argument('--noise-sigma', type=float, default=0.0)
    group.add_argument('--no-normalize', action='store_true', help='keep raw ensemble column scaling')
    group.add_argument('--seed', type=int, default=0)


def _batch_config(args) -> BatchConfig:
    return BatchConfig(
        lam=args.lam,
        step_mu=args.step_mu,
        csmp_t=args.csmp_t,
        max_iters=args.max_iters,
        tol=args.tol,
        reweight_epsilon=args.reweight_epsilon,
        reweight_rounds=args.reweight_rounds,
        lambda_ratio=args.lambda_ratio,
        step_scale=args.step_scale,
        tst_t=args.tst_t,
        debias=args.debias,
        inner=Algorithm(args.inner),
        adaptive_step=args.adaptive_step,
    )


def build_parser(config: Config) -> argparse.ArgumentParser:
    parser = _Parser(prog='sparsekit', description='Sparse recovery experiments')
    commands = parser.add_subparsers(dest='command', required=True)

    solve = commands.add_parser('solve', help='solve one seeded problem')
    _add_problem_flags(solve)
    solve.add_argument('--n', type=int, required=True, help='measurements N')
    solve.add_argument('--l', type=int, required=True, help='unknowns l')
    solve.add_argument('--k', type=int, required=True, help='sparsity of the generated vector')
    solve.add_argument('--out', default='solve', help='coefficient CSV prefix')
    _add_solver_flags(solve, config, Algorithm.OMP.value)

    curve = commands.add_parser('curve', help='success probability against k at fixed N')
    _add_problem_flags(curve)
    curve.add_argument('--n', type=int, required=True)
    curve.add_argument('--l', type=int, required=True)
    curve.add_argument('--trials', type=int, default=50)
    curve.add_argument('--success-tol', type=float, default=config.success_tol)
    curve.add_argument('--workers', type=int, default=config.workers)
    curve.add_argument('--out', default='curve')
    _add_solver_flags(curve, config, Algorithm.OMP.value)

    phase = commands.add_parser('phase', help='alpha-beta phase transition grid')
    _add_problem_flags(phase)
    phase.add_argument('--l', type=int, default=100)
    phase.add_argument('--grid', type=int, default=15)
    phase.add_argument('--trials', type=int, default=25)
    phase.add_argument('--success-tol', type=float, default=config.success_tol)
    phase.add_argument('--workers', type=int, default=config.workers)
    phase.add_argument('--out', default='phase')
    _add_solver_flags(phase, config, Algorithm.OMP.value)

    online = commands.add_parser('online', help='AdCoSaMP and SpAPSM on a time-varying stream')
    online.add_argument('--scenario', help='key=value scenario file')
    online.add_argument('--length', type=int)
    online.add_argument('--sparsity', type=int)
    online.add_argument('--samples', type=int)
    online.add_argument('--change-at', type=int)
    online.add_argument('--noise-var', type=float)
    online.add_argument('--seed', type=int)
    online.add_argument('--q-slabs', type=int, help='hyperslabs per SpAPSM step (default 3l/8)')
    online.add_argument('--workers', type=int, default=config.workers)
    online.add_argument('--out', default='online')

    gabor = commands.add_parser('gabor-demo', help='compressed chirp recovered in a Gabor frame')
    gabor.add_argument('--l', type=int, default=512)
    gabor.add_argument('--sigma', type=float, help='window spread (default l/16)')
    gabor.add_argument('--alpha', type=int, default=16, help='time step')
    gabor.add_argument('--beta', type=int, default=8, help='frequency step')
    gabor.add_argument('--lambda-ratio', type=float, default=0.01)
    gabor.add_argument('--seed', type=int, default=0)
    gabor.add_argument('--out', default='gabor')

    diag = commands.add_parser('diag', help='coherence, Welch bound, spark and RIP constants')
    diag.add_argument('--ensemble', choices=[e.value for e in Ensemble if e is not Ensemble.EXPLICIT],
                      default=Ensemble.GAUSSIAN.value)
    diag.add_argument('--n', type=int)
    diag.add_argument('--l', type=int)
    diag.add_argument('--seed', type=int, default=0)
    diag.add_argument('--normalize', action='store_true')
    diag.add_argument('--matrix', help='read the matrix from a CSV file instead of generating it')
    diag.add_argument('--rip-order', type=int, action='append', default=[])
    diag.add_argument('--spark-max-cols', type=int, default=config.spark_max_cols)
    diag.add_argument('--save-matrix', help='write the matrix to this CSV path')
    return parser


def _vector(args, k: int) -> VectorEnsemble:
    return VectorEnsemble(ValueDistribution(args.values), k, SupportRule(args.support_rule))


def run_solve_command(args, config: Config) -> None:
    cfg = _batch_config(args)
    problem, result = run_solve(
        Ensemble(args.ensemble), _vector(args, args.k), args.n, args.l, args.noise_sigma,
        Algorithm(args.algo), cfg, args.seed, normalize=not args.no_normalize,
    )
    meta = {
        "seed": args.seed, "algo": result.algo, "ensemble": args.ensemble, "n": args.n, "l": args.l,
        "k": args.k, "values": args.values, "noise_sigma": args.noise_sigma,
        "iterations": result.iterations, "residual": result.residual_norm, "converged": result.converged,
    }
    effective = trial_config(Algorithm(args.algo), cfg, args.k)
    meta.update({f"solver.{name}": value for name, value in vars(effective).items()})
    write_recovery_csv(f"{config.resolve_output(args.out)}.csv", meta, problem.truth, result.estimate)
    print(json.dumps({
        "algo": result.algo,
        "iters": result.iterations,
        "residual": result.residual_norm,
        "converged": result.converged,
    }))


def _phase_spec(args, grid: int = 1) -> PhaseSpec:
    return PhaseSpec(
        l=args.l, grid=grid, trials=args.trials, algo=Algorithm(args.algo), solver=_batch_config(args),
        matrix_ensemble=Ensemble(args.ensemble), values=ValueDistribution(args.values),
        support_rule=SupportRule(args.support_rule), noise_sigma=args.noise_sigma,
        success_tol=args.success_tol, seed=args.seed, normalize=not args.no_normalize, workers=args.workers,
    )


def run_curve_command(args, config: Config) -> None:
    spec = _phase_spec(args)
    curve = recovery_curve(spec, args.n, out=config.resolve_output(args.out))
    for beta, probability in curve:
        print(f"{beta:.4f},{probability:.4f}")


def run_phase_command(args, config: Config) -> None:
    spec = _phase_spec(args, args.grid)
    cells = phase_grid(spec, out=config.resolve_output(args.out))
    easy = cells[-1][0]
    hard = cells[0][-1]
    print(f"easiest cell p={easy.probability:.2f}, hardest cell p={hard.probability:.2f}")


def run_online_command(args, config: Config) -> None:
    if args.scenario:
        scenario, overrides = load_scenario_file(args.scenario)
    else:
        scenario, overrides = OnlineScenario(), {}
    for name in ('length', 'sparsity', 'samples', 'change_at', 'noise_var', 'seed'):
        value = getattr(args, name)
        if value is not None:
            setattr(scenario, name, value)
    if args.q_slabs is not None:
        overrides['q_slabs'] = args.q_slabs
    traces = online_experiment(scenario, default_online_configs(scenario, overrides),
                               out=config.resolve_output(args.out), workers=args.workers)
    tail = max(1, scenario.samples // 8)
    for algo, trace in traces.items():
        print(f"{algo.value}: final MSE {10.0 * float(sorted(trace[-tail:])[tail // 2]):.2f} dB")


def run_gabor_command(args, config: Config) -> None:
    demo = gabor_demo(args.l, args.sigma, args.alpha, args.beta, args.seed,
                      out=config.resolve_output(args.out), lambda_ratio=args.lambda_ratio)
    print(f"atoms={demo.frame.size} A={demo.frame.lower_bound:.6g} B={demo.frame.upper_bound:.6g} "
          f"relative_error={demo.relative_error:.6g}")


def run_diag_command(args, config: Config) -> None:
    if args.matrix:
        matrix = read_matrix_csv(args.matrix)
    else:
        if args.n is None or args.l is None:
            raise UsageError("diag needs --n and --l unless --matrix is given")
        matrix = generate(Ensemble(args.ensemble), args.n, args.l, args.seed, normalize=args.normalize)
    if args.save_matrix:
        write_matrix_csv(config.resolve_output(args.save_matrix), matrix)
    report = diagnose(matrix, args.rip_order, args.spark_max_cols, config.rip_max_supports)
    print(f"# seed={matrix.seed if matrix.seed is not None else ''} ensemble={matrix.ensemble.value} "
          f"n={matrix.n_rows} l={matrix.n_cols}")
    print(f"coherence={report.coherence!r}")
    print(f"welch_bound={'' if report.welch_lower_bound is None else repr(report.welch_lower_bound)}")
    print(f"spark={'' if report.spark is None else report.spark}")
    for order, delta in sorted(report.rip_constants.items()):
        print(f"rip_{order}={delta!r}")


COMMANDS = {
    'solve': run_solve_command,
    'curve': run_curve_command,
    'phase': run_phase_command,
    'online': run_online_command,
    'gabor-demo': run_gabor_command,
    'diag': run_diag_command,
}


def cli_main(argv: Optional[List[str]] = None) -> int:
    config_error = None
    try:
        config = Config.from_env()
    except ValueError as e:
        # parser defaults only; help and usage errors still work
        config, config_error = Config(), e

    try:
        args = build_parser(config).parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help exits through argparse
        return e.code if isinstance(e.code, int) else EXIT_OK

    if config_error is not None:
        print(f"Configuration error: {config_error}", file=sys.stderr)
        return EXIT_RUNTIME

    setup_logging(config)
    try:
        COMMANDS[args.command](args, config)
    except UsageError as e:
        logging.error(f"{e}")
        return EXIT_USAGE
    except Exception as e:
        logging.error(f"❌ {args.command} failed: {e}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(cli_main())

"""
The five CLI commands and the exit-code contract.

Exit codes: 0 success (a rejected hypothesis is still a success), 1 usage,
configuration or input error, 2 runtime or numerical error, 3 a ``--check``
tolerance failure in ``reproduce``.

Results go to stdout; logs go to stderr.
"""

import sys
import time
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple

from pydantic import ValidationError

from berkson_md.cli.parser import bandwidth_warnings, parse_config, validation_message
from berkson_md.core.config import settings
from berkson_md.core.exceptions import BerksonMDError, ConfigurationError
from berkson_md.core.logging import get_logger, log_run_end, log_run_start, setup_logging
from berkson_md.schemas.config import RunConfig
from berkson_md.schemas.model import NoiseSpec
from berkson_md.schemas.results import FitResult, TestResult
from berkson_md.schemas.simulation import DGPSpec
from berkson_md.services.calibration import gauss_hermite_rule
from berkson_md.services.families import get_family
from berkson_md.services.lof import lack_of_fit
from berkson_md.services.mdfit import FitOptions, MinimumDistanceProblem, fit
from berkson_md.services.reproduce import (
    check_failures,
    comparison_lines,
    reproduce,
    write_reproduction,
)
from berkson_md.services.results_io import (
    demo_curves_frame,
    format_fit_result,
    format_mc_report,
    format_test_result,
    load_dataset,
    mc_reports_frame,
    replications_frame,
    write_frame,
    write_result,
)
from berkson_md.services.simulation import naive_J_demo, run_mc

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 3


def _echo(text: str) -> None:
    print(text, file=sys.stdout)


def noise_for_config(config: RunConfig, d: int) -> NoiseSpec:
    return NoiseSpec(variances=config.noise_variances or tuple([0.01] * d))


def with_design_rule(config: RunConfig, d: int) -> RunConfig:
    """The case-2 bandwidth rule for d = 2 runs that leave the rule unset."""
    if d == 2 and "bandwidth_rule" not in config.model_fields_set:
        return config.model_copy(update={"bandwidth_rule": "case2"})
    return config


def fit_options(config: RunConfig) -> FitOptions:
    return FitOptions(max_iter=config.max_iter, tol=config.tol)


def _fit_problem(config: RunConfig) -> Tuple[MinimumDistanceProblem, FitResult]:
    family = get_family(config.model, **config.model_params)
    data = load_dataset(config.input, d=family.d)
    config = with_design_rule(config, family.d)
    bandwidth_warnings(config, n=data.n)
    noise = noise_for_config(config, family.d)
    plan = config.plan_config().build(n=data.n, d=family.d)
    problem = MinimumDistanceProblem(
        data,
        family,
        noise,
        plan,
        rule=gauss_hermite_rule(noise, config.hermite_nodes),
        finite_differences=config.finite_differences,
    )
    result = fit(
        problem,
        theta_init=config.theta_init,
        options=fit_options(config),
        sigma_eps2=config.sigma_eps2,
    )
    return problem, result


def cmd_fit(config: RunConfig) -> int:
    _, result = _fit_problem(config)
    _echo(format_fit_result(result))
    if config.output is not None:
        write_result(result, config.output)
    return EXIT_OK


def cmd_test(config: RunConfig) -> int:
    problem, fit_result = _fit_problem(config)
    result: TestResult = lack_of_fit(problem, fit_result, config.alpha)
    _echo(format_test_result(result))
    if config.output is not None:
        write_result(result, config.output)
    return EXIT_OK


def cmd_simulate(config: RunConfig) -> int:
    config = with_design_rule(config, config.case)
    bandwidth_warnings(config, n=config.n or 500)
    try:
        template = DGPSpec(case=config.case, model_id=config.model_id, n=config.n or 500, seed=config.seed)
    except ValidationError as e:
        raise ConfigurationError(validation_message(e)) from e
    report = run_mc(
        template,
        reps=config.reps,
        task=config.task,
        plan_config=config.plan_config(),
        alpha=config.alpha,
        parallelism=config.parallelism,
        theta_init=config.theta_init,
        options=fit_options(config),
        keep_rows=config.raw is not None,
    )
    _echo(format_mc_report(report))
    if config.output is not None:
        write_frame(mc_reports_frame([report]), config.output)
    if config.raw is not None:
        write_frame(replications_frame(report.per_rep_rows or []), config.raw)
    return EXIT_OK


def cmd_reproduce(config: RunConfig) -> int:
    result = reproduce(
        config.table_id,
        only=config.only,
        n=config.n,
        reps=config.reps if "reps" in config.model_fields_set else None,
        parallelism=config.parallelism,
    )
    for line in comparison_lines(result):
        _echo(line)
    output_dir = config.output or settings.output_dir
    for path in write_reproduction(result, output_dir):
        logger.info(f"wrote {path}", extra={"event_type": "artifact_written", "path": str(path)})
    failures = check_failures(result)
    if config.check and failures:
        logger.error(
            f"{len(failures)} acceptance check(s) failed for {config.table_id}",
            extra={"event_type": "check_failed", "failures": len(failures)},
        )
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_demo(config: RunConfig) -> int:
    demo = naive_J_demo(n=config.n or 500, seed=config.seed)
    _echo(f"L2 distance of J_hat to J  = {demo.l2_to_J:.4f}")
    _echo(f"L2 distance of J_hat to mu = {demo.l2_to_mu:.4f}")
    if config.output is not None:
        write_frame(demo_curves_frame(demo), Path(config.output))
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "fit": cmd_fit,
    "test": cmd_test,
    "simulate": cmd_simulate,
    "reproduce": cmd_reproduce,
    "demo": cmd_demo,
}


def run(config: RunConfig) -> int:
    """Dispatch one validated configuration; errors propagate."""
    return COMMANDS[config.command](config)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse, run, and map errors to exit codes."""
    setup_logging()
    started = time.perf_counter()
    command = "?"
    try:
        config = parse_config(argv)
        command = config.command
        details: Dict[str, object] = {"seed": config.seed}
        if config.input is not None:
            details["input"] = str(config.input)
        log_run_start(logger, command, details)
        status = run(config)
    except BerksonMDError as e:
        logger.error(str(e), extra={"event_type": "run_error", "error_type": type(e).__name__})
        print(f"error: {e}", file=sys.stderr)
        status = e.exit_code
    except Exception as e:
        logger.exception(
            "unexpected failure",
            extra={"event_type": "run_error", "error_type": type(e).__name__},
        )
        print(f"error: {e}", file=sys.stderr)
        status = 2
    log_run_end(logger, command, status == EXIT_OK, (time.perf_counter() - started) * 1000)
    return status

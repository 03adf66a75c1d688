import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from phasebal.balancer import (BalancingProblem, ControlMode, HighsSolver, LpSolver,
                               ProfileResult, SimplexSolver, linearize, run_profile)
from phasebal.config import Command, RunConfig, default_out, parse_control
from phasebal.data import PROFILE_24H, bundled_path, load_profile
from phasebal.exception import (ConfigurationError, FeederError, NumericalError,
                                PhasebalException)
from phasebal.export import (format_summary, profile_frame, summary_frame, sweep_frame,
                             unbalance_frame, voltage_frame, write_csv, write_metric_panels,
                             write_voltage_sensitivities)
from phasebal.feeder import FeederModel, load_feeder
from phasebal.metrics import METRICS, Metric, metric_value, report
from phasebal.powerflow import PowerFlowOptions, injections_from_loads, solve
from phasebal.sensitivity import (complex_sensitivities, metric_sensitivity_matrix,
                                  sweep_sensitivity)

_logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NUMERICAL_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    """
    构造命令行解析器。
    """

    parser = argparse.ArgumentParser(
        prog="phasebal",
        description="三相不平衡潮流、电压不平衡灵敏度与相平衡。"
    )
    parser.add_argument("command", choices=[command.value for command in Command])
    parser.add_argument(
        "--feeder", required=True,
        help="馈线 JSON 文件路径，或随包馈线名（four_bus、thirty_bus）"
    )
    parser.add_argument(
        "--metric", action="append", choices=[metric.value for metric in METRICS],
        help="指标，可重复指定（默认全部）"
    )
    parser.add_argument("--beta", action="append", type=float, help="灵活性系数，可重复指定")
    parser.add_argument("--scale", action="append", type=float, help="负荷倍数，可重复指定")
    parser.add_argument("--profile", help="负荷曲线 CSV（step, factor）")
    parser.add_argument("--out", help="输出目录（默认 $PHASEBAL_OUT 或 ./phasebal-out）")
    parser.add_argument("--tol", type=float, help="潮流收敛容差（标幺值）")
    parser.add_argument("--max-iter", type=int, help="潮流最大迭代次数")
    parser.add_argument(
        "--mode", choices=[mode.value for mode in ControlMode], default=ControlMode.P.value,
        help="参与平衡的控制变量类型"
    )
    parser.add_argument("--iterations-per-step", type=int, default=1, help="每个时段的反馈迭代次数")
    parser.add_argument("--solver", choices=["simplex", "highs"], default="simplex")
    parser.add_argument("--sweep-control", help="灵敏度扫描的控制变量（如 3a_p）")
    parser.add_argument("--sweep-bus", type=int, help="灵敏度扫描的观测母线")
    parser.add_argument("-v", "--verbose", action="store_true", help="输出进度日志")
    return parser


def _resolve_feeder(value: str) -> Path:
    path = Path(value)
    if path.is_file():
        return path
    try:
        return bundled_path(value)
    except ConfigurationError:
        return path


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """
    由命令行参数构造运行配置。

    参数:
        - args: `build_parser()` 的解析结果

    返回:
        以 `RunConfig` 类型表示的配置。
    """

    defaults = RunConfig(Command(args.command), Path(args.feeder), Path("."))
    return RunConfig(
        command=Command(args.command),
        feeder=_resolve_feeder(args.feeder),
        out=Path(args.out) if args.out else default_out(),
        metrics=tuple(Metric(value) for value in args.metric) if args.metric else METRICS,
        betas=tuple(args.beta) if args.beta else defaults.betas,
        scales=tuple(args.scale) if args.scale else (),
        profile=Path(args.profile) if args.profile else None,
        tolerance=args.tol if args.tol is not None else defaults.tolerance,
        max_iterations=args.max_iter if args.max_iter is not None else defaults.max_iterations,
        mode=ControlMode(args.mode),
        iterations_per_step=args.iterations_per_step,
        solver=args.solver,
        sweep_control=parse_control(args.sweep_control) if args.sweep_control else None,
        sweep_bus=args.sweep_bus
    )


def _options(config: RunConfig) -> PowerFlowOptions:
    return PowerFlowOptions(config.tolerance, config.max_iterations)


def _solver(config: RunConfig) -> LpSolver:
    return HighsSolver() if config.solver == "highs" else SimplexSolver()


def cmd_powerflow(config: RunConfig) -> int:
    """
    求解潮流，写出 `voltages.csv` 与 `unbalance.csv`。

    参数:
        - config: 运行配置

    返回:
        退出码。
    """

    model = load_feeder(config.feeder)
    state = solve(model, injections_from_loads(model, config.operating_scale), _options(config))
    write_csv(voltage_frame(state), config.out / "voltages.csv")
    write_csv(unbalance_frame(report(model, state)), config.out / "unbalance.csv")
    _logger.info("潮流在 %d 次迭代后收敛。", state.iterations)
    return EXIT_OK


def cmd_sensitivities(config: RunConfig) -> int:
    """
    写出电压灵敏度及每个指标的 6 格热力图数据；指定扫描参数时额外写出 `sweep_<指标>.csv`。

    参数:
        - config: 运行配置

    返回:
        退出码。
    """

    model = load_feeder(config.feeder)
    options = _options(config)
    injections = injections_from_loads(model, config.operating_scale)
    state = solve(model, injections, options)
    tensor = complex_sensitivities(model, state)
    write_voltage_sensitivities(config.out, model, tensor)
    for metric in config.metrics:
        sensitivities = metric_sensitivity_matrix(model, state, tensor, metric)
        write_metric_panels(config.out, sensitivities)
        for bus, reason in sensitivities.skipped.items():
            _logger.info("%s: 跳过母线 %d（%s）。", metric.value, bus, reason)
        if config.sweep_control is not None and config.sweep_bus is not None:
            sweep = sweep_sensitivity(
                model, injections, config.sweep_control, config.sweep_bus, metric, options=options
            )
            write_csv(sweep_frame(sweep), config.out / f"sweep_{metric.value}.csv")
    return EXIT_OK


def estimate_frame(model: FeederModel, config: RunConfig) -> pd.DataFrame:
    """
    比较各负荷倍数下的精确指标与在额定运行点处线性化得到的估计。

    参数:
        - model: 馈线模型
        - config: 运行配置

    返回:
        列为 scale、bus、metric、true、estimate、abs_error、rel_error 的数据表，
        按倍数、母线、指标排序。
    """

    options = _options(config)
    base = solve(model, injections_from_loads(model, 1.0), options)
    tensor = complex_sensitivities(model, base)
    models = {metric: linearize(model, base, tensor, metric) for metric in config.metrics}
    operating = base.injections.as_controls()
    rows: List[Dict[str, object]] = []
    for scale in sorted(config.estimate_scales):
        state = solve(model, injections_from_loads(model, scale), options)
        dx = (scale - 1.0) * operating
        for metric in config.metrics:
            lin = models[metric]
            estimates = dict(zip(lin.buses, lin.predict_metrics(dx)))
            for bus in model.three_phase_buses:
                true = metric_value(model, state, bus, metric)
                estimate = estimates.get(bus, float("nan"))
                error = abs(estimate - true)
                rows.append({
                    "scale": scale,
                    "bus": bus,
                    "metric": metric.value,
                    "true": true,
                    "estimate": estimate,
                    "abs_error": error,
                    "rel_error": error / abs(true) if true != 0 else float("nan"),
                })
    frame = pd.DataFrame(
        rows, columns=["scale", "bus", "metric", "true", "estimate", "abs_error", "rel_error"]
    )
    order = {metric.value: i for i, metric in enumerate(METRICS)}
    frame["_order"] = frame["metric"].map(order)
    frame = frame.sort_values(["scale", "bus", "_order"], kind="stable").drop(columns="_order")
    return frame.reset_index(drop=True)


def cmd_estimate(config: RunConfig) -> int:
    """
    写出 `estimate.csv`。

    参数:
        - config: 运行配置

    返回:
        退出码。
    """

    model = load_feeder(config.feeder)
    write_csv(estimate_frame(model, config), config.out / "estimate.csv")
    return EXIT_OK


def balance_results(model: FeederModel, config: RunConfig) -> List[ProfileResult]:
    """
    对每个指标、每个灵活性系数在负荷曲线上执行相平衡。

    参数:
        - model: 馈线模型
        - config: 运行配置

    返回:
        各 (指标, 灵活性系数) 的结果。
    """

    profile = load_profile(config.profile or bundled_path(PROFILE_24H))
    results: List[ProfileResult] = []
    for metric in config.metrics:
        for beta in config.betas:
            problem = BalancingProblem(metric, beta, mode=config.mode)
            _logger.info("相平衡: %s, β = %g。", metric.value, beta)
            results.append(run_profile(
                model, problem, profile, config.iterations_per_step, _solver(config),
                _options(config)
            ))
    return results


def cmd_balance(config: RunConfig) -> int:
    """
    写出 `balance_timeseries.csv` 与 `balance_summary.csv`，并打印汇总表。

    参数:
        - config: 运行配置

    返回:
        退出码。
    """

    model = load_feeder(config.feeder)
    results = balance_results(model, config)
    write_csv(profile_frame(results), config.out / "balance_timeseries.csv")
    summary = summary_frame(results)
    write_csv(summary, config.out / "balance_summary.csv")
    print(format_summary(summary))
    failed = int(np.sum(summary["failed_steps"]))
    if failed:
        _logger.warning("共有 %d 个时段失败，详见 error 列。", failed)
    return EXIT_OK


_COMMANDS = {
    Command.POWERFLOW: cmd_powerflow,
    Command.SENSITIVITIES: cmd_sensitivities,
    Command.ESTIMATE: cmd_estimate,
    Command.BALANCE: cmd_balance,
}


def run(config: RunConfig) -> int:
    """
    校验配置并执行命令，将异常映射为退出码（输入错误为 1，数值错误为 2）。

    参数:
        - config: 运行配置

    返回:
        退出码。
    """

    try:
        config.validate()
        return _COMMANDS[config.command](config)
    except (FeederError, ConfigurationError, OSError) as ex:
        print(f"phasebal: 输入错误: {ex}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except NumericalError as ex:
        print(f"phasebal: 数值计算失败: {ex}", file=sys.stderr)
        return EXIT_NUMERICAL_ERROR
    except PhasebalException as ex:
        print(f"phasebal: {ex}", file=sys.stderr)
        return EXIT_INPUT_ERROR


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    命令行入口。

    参数:
        - argv: 命令行参数（默认 `sys.argv[1:]`）

    返回:
        退出码。
    """

    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        config = config_from_args(args)
    except ConfigurationError as ex:
        print(f"phasebal: 输入错误: {ex}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    return run(config)

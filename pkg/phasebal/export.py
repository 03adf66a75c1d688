import os
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import numpy as np
import pandas as pd

from phasebal.balancer import ProfileResult
from phasebal.feeder import FeederModel
from phasebal.metrics import UnbalanceReport
from phasebal.phase import PHASES
from phasebal.powerflow import VoltageState
from phasebal.sensitivity import (CONTROL_KINDS, MetricSensitivities, SensitivitySweep,
                                  SensitivityTensor)

FLOAT_FORMAT = "%.17g"
"""
CSV 浮点数格式（17 位有效数字，可精确还原）。
"""

PathLike = Union[str, "os.PathLike[str]"]


def write_csv(frame: pd.DataFrame, path: PathLike, index: bool = False) -> Path:
    """
    以确定的格式写出 CSV。

    参数:
        - frame: 数据表
        - path: 文件路径
        - index: 是否写出行索引

    返回:
        文件路径。
    """

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(target, index=index, float_format=FLOAT_FORMAT, lineterminator="\n")
    return target


def voltage_frame(state: VoltageState) -> pd.DataFrame:
    """
    各端子电压幅值（标幺值）与相角（度）。
    """

    return pd.DataFrame({
        "bus": [terminal.bus for terminal in state.terminals],
        "phase": [terminal.phase.value for terminal in state.terminals],
        "magnitude": np.abs(state.voltages),
        "angle_deg": np.degrees(np.angle(state.voltages)),
        "residual": state.max_residual,
        "iterations": state.iterations,
    })


def unbalance_frame(report: UnbalanceReport) -> pd.DataFrame:
    """
    各三相母线的不平衡指标。
    """

    return pd.DataFrame(
        [
            {
                "bus": entry.bus,
                "vuf": entry.vuf,
                "pvur": entry.pvur,
                "pvur_case": entry.pvur_case.value,
                "lvur": entry.lvur,
                "lvur_case": entry.lvur_case.value,
            }
            for entry in report.buses.values()
        ],
        columns=["bus", "vuf", "pvur", "pvur_case", "lvur", "lvur_case"]
    )


def write_voltage_sensitivities(
    directory: PathLike,
    model: FeederModel,
    tensor: SensitivityTensor
) -> List[Path]:
    """
    写出相电压幅值与线电压幅值灵敏度（行为被观测量，列为控制变量）。

    参数:
        - directory: 输出目录
        - model: 馈线模型
        - tensor: 电压灵敏度

    返回:
        写出的文件路径。
    """

    columns = [str(control) for control in tensor.controls]
    phase_rows = [str(terminal) for terminal in model.terminals]
    line_rows = [f"{bus}{pair.value}" for bus, pair in tensor.line_rows]
    phase = pd.DataFrame(tensor.magnitude, columns=columns)
    phase.insert(0, "quantity", phase_rows)
    line = pd.DataFrame(tensor.line_magnitude, columns=columns)
    line.insert(0, "quantity", line_rows)
    root = Path(directory)
    return [
        write_csv(phase, root / "voltage_magnitude.csv"),
        write_csv(line, root / "line_magnitude.csv"),
    ]


def write_metric_panels(directory: PathLike, sensitivities: MetricSensitivities) -> List[Path]:
    """
    按 (控制类型, 相位) 写出指标灵敏度热力图数据，每个文件为一格。

    文件名为 `<指标>_<p|q><相位>.csv`；行为三相母线，列为控制母线，
    `note` 列记录被跳过母线的原因，其数值为空。

    参数:
        - directory: 输出目录
        - sensitivities: 指标灵敏度矩阵

    返回:
        写出的文件路径。
    """

    root = Path(directory)
    paths: List[Path] = []
    for kind in CONTROL_KINDS:
        for phase in PHASES:
            buses, values = sensitivities.panel(kind, phase)
            frame = pd.DataFrame(values, columns=[str(bus) for bus in buses])
            frame.insert(0, "bus", list(sensitivities.buses))
            frame["note"] = [sensitivities.skipped.get(bus, "") for bus in sensitivities.buses]
            name = f"{sensitivities.metric.value}_{kind.value}{phase.value}.csv"
            paths.append(write_csv(frame, root / name))
    return paths


def sweep_frame(sweep: SensitivitySweep) -> pd.DataFrame:
    """
    灵敏度扫描结果。
    """

    return pd.DataFrame({
        "metric": sweep.metric.value,
        "bus": sweep.bus,
        "control": str(sweep.control),
        "factor": list(sweep.factors),
        "sensitivity": list(sweep.values),
        "case": [case.value if case is not None else "" for case in sweep.cases],
        "note": list(sweep.notes),
    })


def profile_frame(results: Sequence[ProfileResult]) -> pd.DataFrame:
    """
    相平衡时间序列（每行一个指标、灵活性系数与时段）。
    """

    rows: List[Dict[str, Any]] = []
    for result in results:
        for step in result.steps:
            rows.append({
                "metric": result.metric.value,
                "beta": result.beta,
                "step": step.step,
                "factor": step.factor,
                "base": step.base,
                "predicted": step.predicted,
                "realized": step.realized,
                "status": step.status,
                "error": step.error,
            })
    return pd.DataFrame(
        rows,
        columns=[
            "metric", "beta", "step", "factor", "base", "predicted", "realized", "status", "error"
        ]
    )


def summary_frame(results: Sequence[ProfileResult]) -> pd.DataFrame:
    """
    相平衡汇总：各指标、各灵活性系数下的总和及变化百分比。
    """

    return pd.DataFrame(
        [
            {
                "metric": result.metric.value,
                "beta": result.beta,
                "base_total": result.base_total,
                "realized_total": result.realized_total,
                "reduction_percent": result.reduction_percent(),
                "failed_steps": sum(1 for step in result.steps if step.error),
            }
            for result in results
        ],
        columns=[
            "metric", "beta", "base_total", "realized_total", "reduction_percent", "failed_steps"
        ]
    )


def format_summary(summary: pd.DataFrame) -> str:
    """
    将汇总格式化为「指标 × 灵活性系数」的百分比表格。

    参数:
        - summary: `summary_frame` 的结果

    返回:
        表格文本。
    """

    table = summary.pivot(index="metric", columns="beta", values="reduction_percent")
    table = table.reindex([m for m in ("vuf", "pvur", "lvur") if m in table.index])
    table.columns = [f"β = {beta:g}" for beta in table.columns]
    table.index = [str(metric).upper() for metric in table.index]
    return table.to_string(float_format=lambda value: f"{value:.2f}%")

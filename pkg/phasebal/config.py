import math
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Tuple

from phasebal.balancer import ControlMode
from phasebal.constant import (BETA_MAX, PHASEBAL_OUT_ENV, POWER_FLOW_MAX_ITERATIONS,
                               POWER_FLOW_TOLERANCE)
from phasebal.exception import ConfigurationError
from phasebal.metrics import METRICS, Metric
from phasebal.phase import Phase
from phasebal.sensitivity import ControlKind, ControlVariable
from phasebal.util._enum import get_enum_member

DEFAULT_OUT = "phasebal-out"
"""
未指定输出目录且未设置 `PHASEBAL_OUT` 时使用的输出目录。
"""

DEFAULT_BETAS: Tuple[float, ...] = (0.01, 0.02)
"""
balance 命令默认的灵活性系数。
"""

DEFAULT_SCALES: Tuple[float, ...] = (0.8, 1.2)
"""
estimate 命令默认的负荷倍数（轻载与重载）。
"""


class Command(Enum):
    """
    命令。
    """

    POWERFLOW = "powerflow"
    """
    求解潮流并输出电压及不平衡指标。
    """

    SENSITIVITIES = "sensitivities"
    """
    输出电压及不平衡指标灵敏度热力图数据。
    """

    ESTIMATE = "estimate"
    """
    比较负荷缩放后的精确指标与线性化估计。
    """

    BALANCE = "balance"
    """
    在负荷曲线上执行相平衡。
    """


@dataclass(frozen=True)
class RunConfig:
    """
    命令行运行配置。
    """

    command: Command
    """
    命令。
    """

    feeder: Path
    """
    馈线文件路径。
    """

    out: Path
    """
    输出目录。
    """

    metrics: Tuple[Metric, ...] = METRICS
    """
    指标。
    """

    betas: Tuple[float, ...] = DEFAULT_BETAS
    """
    灵活性系数（balance）。
    """

    scales: Tuple[float, ...] = ()
    """
    负荷倍数；estimate 默认为 `DEFAULT_SCALES`，其余命令取第一个值作为运行点（默认 1.0）。
    """

    profile: Optional[Path] = None
    """
    负荷曲线路径（balance，默认随包合成曲线）。
    """

    tolerance: float = POWER_FLOW_TOLERANCE
    """
    潮流收敛容差。
    """

    max_iterations: int = POWER_FLOW_MAX_ITERATIONS
    """
    潮流最大迭代次数。
    """

    mode: ControlMode = ControlMode.P
    """
    参与平衡的控制变量类型。
    """

    iterations_per_step: int = 1
    """
    每个时段的反馈迭代次数。
    """

    solver: str = "simplex"
    """
    线性规划求解器（`simplex` 或 `highs`）。
    """

    sweep_control: Optional[ControlVariable] = None
    """
    灵敏度扫描的控制变量（sensitivities）。
    """

    sweep_bus: Optional[int] = None
    """
    灵敏度扫描的观测母线（sensitivities）。
    """

    @property
    def operating_scale(self) -> float:
        """
        powerflow/sensitivities 命令的运行点负荷倍数。
        """

        return self.scales[0] if self.scales else 1.0

    @property
    def estimate_scales(self) -> Tuple[float, ...]:
        """
        estimate 命令的负荷倍数。
        """

        return self.scales or DEFAULT_SCALES

    def validate(self) -> None:
        """
        在计算开始前校验配置与命令是否匹配。
        """

        if not self.feeder.is_file():
            raise ConfigurationError(f"馈线文件不存在: {self.feeder}")
        if not (math.isfinite(self.tolerance) and self.tolerance > 0):
            raise ConfigurationError("收敛容差必须为正数。")
        if self.max_iterations < 1:
            raise ConfigurationError("最大迭代次数必须为正整数。")
        if not self.metrics:
            raise ConfigurationError("至少需要一个指标。")
        if any(not (math.isfinite(scale) and scale >= 0) for scale in self.scales):
            raise ConfigurationError("负荷倍数必须为非负有限数值。")
        if self.solver not in ("simplex", "highs"):
            raise ConfigurationError(f"未知的求解器: {self.solver}")
        if self.command is Command.BALANCE:
            if not self.betas:
                raise ConfigurationError("balance 命令至少需要一个灵活性系数。")
            if any(not 0 <= beta <= BETA_MAX for beta in self.betas):
                raise ConfigurationError(f"灵活性系数必须位于 [0, {BETA_MAX}]。")
            if self.profile is not None and not self.profile.is_file():
                raise ConfigurationError(f"负荷曲线文件不存在: {self.profile}")
            if self.iterations_per_step < 1:
                raise ConfigurationError("每个时段的反馈迭代次数必须为正整数。")
        if (self.sweep_control is None) != (self.sweep_bus is None):
            raise ConfigurationError("--sweep-control 与 --sweep-bus 必须同时指定。")
        if self.sweep_control is not None and self.command is not Command.SENSITIVITIES:
            raise ConfigurationError("灵敏度扫描仅用于 sensitivities 命令。")


def default_out(environ: Optional[Mapping[str, str]] = None) -> Path:
    """
    获取默认输出目录：`PHASEBAL_OUT` 环境变量，否则为 `DEFAULT_OUT`。

    参数:
        - environ: 环境变量（默认 `os.environ`）

    返回:
        输出目录。
    """

    environ = os.environ if environ is None else environ
    return Path(environ.get(PHASEBAL_OUT_ENV) or DEFAULT_OUT)


def parse_control(text: str) -> ControlVariable:
    """
    解析控制变量（如 `3a_p`）。

    参数:
        - text: 控制变量字符串，格式为 `<母线><相位>_<p|q>`

    返回:
        以 `ControlVariable` 类型表示的控制变量。
    """

    terminal, _, kind_text = text.partition("_")
    kind = get_enum_member(ControlKind, kind_text)
    phase = get_enum_member(Phase, terminal[-1:])
    if kind is None or phase is None or not terminal[:-1].isdigit():
        raise ConfigurationError(f"无效的控制变量: {text!r}（示例: 3a_p）")
    return ControlVariable(int(terminal[:-1]), phase, kind)

import logging
from dataclasses import dataclass
from typing import Any, Mapping, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy.linalg import lu_factor, lu_solve

from phasebal.constant import (PIVOT_TOLERANCE, POWER_FLOW_MAX_ITERATIONS, POWER_FLOW_TOLERANCE,
                               SLACK_REFERENCE)
from phasebal.exception import (InvalidTargetError, PowerFlowDivergedError,
                                SingularSystemError)
from phasebal.feeder import FeederModel, Terminal
from phasebal.phase import Phase

_logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerFlowOptions:
    """
    潮流计算选项。
    """

    tolerance: float = POWER_FLOW_TOLERANCE
    """
    最大复功率失配（标幺值）。
    """

    max_iterations: int = POWER_FLOW_MAX_ITERATIONS
    """
    最大迭代次数。
    """

    def __post_init__(self) -> None:
        if not (self.tolerance > 0):
            raise ValueError("收敛容差必须为正数。")
        if self.max_iterations < 1:
            raise ValueError("最大迭代次数必须为正整数。")


@dataclass(frozen=True, eq=False)
class InjectionVector:
    """
    注入向量。

    按 `FeederModel.load_terminals` 顺序存储各非平衡端子的净注入复功率（标幺值），
    负荷消耗记为负注入。
    """

    terminals: Tuple[Terminal, ...]
    """
    端子顺序。
    """

    power: "npt.NDArray[np.complex128]"
    """
    净注入复功率 p + jq（标幺值）。
    """

    def __post_init__(self) -> None:
        power = np.array(self.power, dtype=np.complex128)
        if power.shape != (len(self.terminals),):
            raise ValueError("注入向量长度必须等于非平衡端子数。")
        if not np.all(np.isfinite(power)):
            raise ValueError("注入向量必须为有限数值。")
        power.setflags(write=False)
        object.__setattr__(self, "power", power)

    @property
    def p(self) -> "npt.NDArray[np.float64]":
        """
        有功注入（标幺值）。
        """

        return self.power.real

    @property
    def q(self) -> "npt.NDArray[np.float64]":
        """
        无功注入（标幺值）。
        """

        return self.power.imag

    def as_controls(self) -> "npt.NDArray[np.float64]":
        """
        转换为控制变量向量（先全部 p，后全部 q）。

        返回:
            长度为 2 × 端子数的实数向量。
        """

        return np.concatenate([self.power.real, self.power.imag])

    def with_controls(self, controls: "npt.ArrayLike") -> "InjectionVector":
        """
        用控制变量向量构造新的注入向量。

        参数:
            - controls: 长度为 2 × 端子数的实数向量（先 p，后 q）

        返回:
            新的 `InjectionVector`。
        """

        values = np.asarray(controls, dtype=np.float64)
        n = len(self.terminals)
        if values.shape != (2 * n,):
            raise ValueError("控制变量向量长度必须为 2 × 端子数。")
        return InjectionVector(self.terminals, values[:n] + 1j * values[n:])

    def perturbed(self, control: int, step: float) -> "InjectionVector":
        """
        对单个控制变量施加扰动。

        参数:
            - control: 控制变量下标（p 在前、q 在后）
            - step: 扰动量（标幺值）

        返回:
            新的 `InjectionVector`。
        """

        controls = self.as_controls()
        controls[control] += step
        return self.with_controls(controls)


@dataclass(frozen=True, eq=False)
class VoltageState:
    """
    电压状态（运行点）。
    """

    terminals: Tuple[Terminal, ...]
    """
    端子顺序（包括平衡母线端子）。
    """

    voltages: "npt.NDArray[np.complex128]"
    """
    各端子复电压（标幺值）。
    """

    injections: InjectionVector
    """
    产生该状态的注入向量。
    """

    iterations: int
    """
    迭代次数。
    """

    max_residual: float
    """
    最终最大复功率失配（标幺值）。
    """

    residual_history: Tuple[float, ...]
    """
    每次迭代后的最大失配（第一个元素为平启动时的失配）。
    """

    def __post_init__(self) -> None:
        voltages = np.array(self.voltages, dtype=np.complex128)
        voltages.setflags(write=False)
        object.__setattr__(self, "voltages", voltages)

    def voltage(self, bus: int, phase: Phase) -> complex:
        """
        获取端子电压。

        参数:
            - bus: 母线 ID
            - phase: 相位

        返回:
            复电压（标幺值）。
        """

        try:
            return complex(self.voltages[self.terminals.index(Terminal(bus, phase))])
        except ValueError:
            raise InvalidTargetError(f"端子 {bus}{phase.value} 不存在。") from None

    @property
    def magnitudes(self) -> "npt.NDArray[np.float64]":
        """
        各端子电压幅值（标幺值）。
        """

        return np.abs(self.voltages)


def slack_reference(model: FeederModel) -> "npt.NDArray[np.complex128]":
    """
    获取平衡母线端子的参考电压。

    参数:
        - model: 馈线模型

    返回:
        按 `slack_indices` 顺序排列的复电压。
    """

    return np.array(
        [SLACK_REFERENCE[model.terminals[i].phase.index] for i in model.slack_indices],
        dtype=np.complex128
    )


def flat_start(model: FeederModel) -> "npt.NDArray[np.complex128]":
    """
    平启动：每个端子取平衡母线同相参考电压。

    参数:
        - model: 馈线模型

    返回:
        全部端子的初始复电压。
    """

    return np.array(
        [SLACK_REFERENCE[terminal.phase.index] for terminal in model.terminals],
        dtype=np.complex128
    )


def power_mismatch(
    model: FeederModel,
    voltages: "npt.NDArray[np.complex128]",
    injections: InjectionVector
) -> "npt.NDArray[np.complex128]":
    """
    计算非平衡端子的复功率失配 s_specified − v·(Yv)*。

    参数:
        - model: 馈线模型
        - voltages: 全部端子复电压
        - injections: 注入向量

    返回:
        按 `load_terminals` 顺序排列的失配。
    """

    return injections.power - implied_injections(model, voltages)


def implied_injections(
    model: FeederModel,
    voltages: "npt.NDArray[np.complex128]"
) -> "npt.NDArray[np.complex128]":
    """
    计算电压对应的非平衡端子注入 v·(Yv)*。

    参数:
        - model: 馈线模型
        - voltages: 全部端子复电压

    返回:
        按 `load_terminals` 顺序排列的注入复功率。
    """

    index = model.load_indices
    currents = model.admittance[index] @ voltages
    return voltages[index] * np.conj(currents)


def injections_from_loads(
    model: FeederModel,
    scale: Union[float, Mapping[Terminal, float], "npt.ArrayLike"] = 1.0
) -> InjectionVector:
    """
    由负荷构造注入向量，净注入 = −scale × 负荷。

    参数:
        - model: 馈线模型
        - scale: 统一倍数、按端子的倍数（缺省端子取 1.0）或按 `load_terminals` 顺序的倍数数组

    返回:
        以 `InjectionVector` 类型表示的注入向量。
    """

    terminals = model.load_terminals
    if isinstance(scale, Mapping):
        factors = np.array([scale.get(terminal, 1.0) for terminal in terminals], dtype=np.float64)
    else:
        factors = np.broadcast_to(np.asarray(scale, dtype=np.float64), (len(terminals),))
    if not np.all(np.isfinite(factors)):
        raise ValueError("负荷倍数必须为有限数值。")
    return InjectionVector(terminals, -factors * model.load_power_pu())


def solve(
    model: FeederModel,
    injections: InjectionVector,
    options: Optional[PowerFlowOptions] = None
) -> VoltageState:
    """
    求解三相不平衡潮流。

    使用基于降阶导纳矩阵分解（隐式 Z-bus）的电流注入不动点迭代，
    从平启动开始，直到最大复功率失配不超过容差。

    参数:
        - model: 馈线模型
        - injections: 注入向量
        - options: 潮流计算选项

    返回:
        以 `VoltageState` 类型表示的收敛运行点。
    """

    options = options or PowerFlowOptions()
    if injections.terminals != model.load_terminals:
        raise InvalidTargetError("注入向量的端子顺序与馈线不一致。")

    load = model.load_indices
    slack = model.slack_indices
    voltages = flat_start(model)
    voltages[slack] = slack_reference(model)

    residual = _max_abs(power_mismatch(model, voltages, injections))
    history = [residual]
    if residual <= options.tolerance:
        return VoltageState(model.terminals, voltages, injections, 0, residual, tuple(history))

    reduced = model.admittance[np.ix_(load, load)]
    coupling = model.admittance[np.ix_(load, slack)] @ voltages[slack]
    factor = _factorize(reduced, "降阶导纳矩阵奇异。")

    for iteration in range(1, options.max_iterations + 1):
        currents = np.conj(injections.power / voltages[load])
        voltages[load] = lu_solve(factor, currents - coupling)
        residual = _max_abs(power_mismatch(model, voltages, injections))
        history.append(residual)
        if not np.isfinite(residual):
            break
        if residual <= options.tolerance:
            _logger.debug("潮流在 %d 次迭代后收敛，失配 %.3e。", iteration, residual)
            return VoltageState(
                model.terminals, voltages, injections, iteration, residual, tuple(history)
            )

    _logger.warning("潮流未收敛，最终失配 %.3e。", residual)
    raise PowerFlowDivergedError(residual, len(history) - 1)


def _max_abs(values: "npt.NDArray[np.complex128]") -> float:
    return float(np.max(np.abs(values))) if values.size else 0.0


def _factorize(
    matrix: "npt.NDArray[Any]",
    message: str
) -> Tuple["npt.NDArray[Any]", "npt.NDArray[np.int32]"]:
    try:
        factor = lu_factor(matrix)
    except (ValueError, np.linalg.LinAlgError):
        raise SingularSystemError(message, _condition(matrix)) from None
    pivots = np.abs(np.diag(factor[0]))
    largest = float(np.max(pivots, initial=0.0))
    if not np.all(np.isfinite(factor[0])) or np.any(pivots <= PIVOT_TOLERANCE * largest):
        raise SingularSystemError(message, _condition(matrix))
    return factor


def _condition(matrix: "npt.NDArray[Any]") -> float:
    if not np.all(np.isfinite(matrix)):
        return float("inf")
    return float(np.linalg.cond(matrix))

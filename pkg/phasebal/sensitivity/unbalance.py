import logging
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from frozendict import frozendict

from phasebal.constant import SEQUENCE_EPSILON
from phasebal.exception import (DegeneratePointError, InvalidTargetError, KinkWarning,
                                NumericalError, SkippedBusWarning)
from phasebal.feeder import FeederModel
from phasebal.metrics import (SEQUENCE_MATRIX, CaseLabel, Metric, deviation_case, line_voltages,
                              phase_voltages)
from phasebal.phase import LINE_PAIRS, PHASES, Phase
from phasebal.powerflow import InjectionVector, PowerFlowOptions, VoltageState, solve

if TYPE_CHECKING:
    from phasebal.sensitivity import ControlKind, ControlVariable, SensitivityTensor

_logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class _Gradient:
    values: "npt.NDArray[np.float64]"
    case: Optional[CaseLabel]
    kink: bool


def _phase_rows(tensor: "SensitivityTensor", bus: int) -> List[int]:
    return [tensor.model.index_of(bus, phase) for phase in PHASES]


def _vuf_gradient(
    state: VoltageState,
    tensor: "SensitivityTensor",
    bus: int,
    columns: "npt.NDArray[np.intp]"
) -> _Gradient:
    rows = _phase_rows(tensor, bus)
    sequence = SEQUENCE_MATRIX @ state.voltages[rows]
    positive, negative = sequence[1], sequence[2]
    if abs(positive) <= SEQUENCE_EPSILON:
        raise DegeneratePointError("正序电压幅值为零。", bus)
    if abs(negative) <= SEQUENCE_EPSILON:
        raise DegeneratePointError("负序电压幅值为零，VUF 在平衡点不可微。", bus)
    d_sequence = SEQUENCE_MATRIX @ tensor.voltage[np.ix_(rows, columns)]
    d_positive = np.real(np.conj(positive) * d_sequence[1]) / abs(positive)
    d_negative = np.real(np.conj(negative) * d_sequence[2]) / abs(negative)
    values = (abs(positive) * d_negative - abs(negative) * d_positive) / abs(positive) ** 2
    return _Gradient(values, None, False)


def _deviation_gradient(
    magnitudes: Sequence[float],
    d_magnitudes: "npt.NDArray[np.float64]",
    labels: Sequence[CaseLabel]
) -> _Gradient:
    case = deviation_case(magnitudes)
    k = case.index
    deviation = case.deviations[k]
    # sgn(0) 取 +1，此时 |D_k| = 0，取值不影响结果。
    sign = 1.0 if deviation >= 0 else -1.0
    d_total = d_magnitudes.sum(axis=0)
    d_deviation = 3 * d_magnitudes[k] - d_total
    values = (case.total * sign * d_deviation - abs(deviation) * d_total) / case.total ** 2
    return _Gradient(values, labels[k], case.kink)


def _pvur_gradient(
    state: VoltageState,
    tensor: "SensitivityTensor",
    bus: int,
    columns: "npt.NDArray[np.intp]"
) -> _Gradient:
    rows = _phase_rows(tensor, bus)
    magnitudes = [abs(v) for v in phase_voltages(tensor.model, state, bus)]
    return _deviation_gradient(magnitudes, tensor.magnitude[np.ix_(rows, columns)], PHASES)


def _lvur_gradient(
    state: VoltageState,
    tensor: "SensitivityTensor",
    bus: int,
    columns: "npt.NDArray[np.intp]"
) -> _Gradient:
    magnitudes = [abs(v) for v in line_voltages(tensor.model, state, bus)]
    rows = [tensor.line_rows.index((bus, pair)) for pair in LINE_PAIRS]
    return _deviation_gradient(magnitudes, tensor.line_magnitude[np.ix_(rows, columns)], LINE_PAIRS)


_GRADIENTS = {
    Metric.VUF: _vuf_gradient,
    Metric.PVUR: _pvur_gradient,
    Metric.LVUR: _lvur_gradient,
}


def _single(
    metric: Metric,
    state: VoltageState,
    complex_sens: "SensitivityTensor",
    bus: int,
    control: "ControlVariable"
) -> float:
    model = complex_sens.model
    if bus not in model.buses or not model.buses[bus].three_phase:
        raise InvalidTargetError(f"母线 {bus} 不是三相母线。")
    columns = np.array([complex_sens.control_index(control)], dtype=np.intp)
    gradient = _GRADIENTS[metric](state, complex_sens, bus, columns)
    if gradient.kink:
        warnings.warn(
            f"母线 {bus} 的 {metric.value.upper()} 处于情形分界点，"
            f"按情形 {gradient.case.value if gradient.case else ''} 计算。",
            KinkWarning
        )
    return float(gradient.values[0])


def vuf_sensitivity(
    state: VoltageState,
    complex_sens: "SensitivityTensor",
    bus: int,
    control: "ControlVariable"
) -> float:
    """
    计算 VUF 灵敏度。

    由复电压灵敏度经对称分量变换得到 ∂v±/∂x，再按商的求导法则组合
    (|v+|·∂|v−|/∂x − |v−|·∂|v+|/∂x) / |v+|²。

    参数:
        - state: 运行点
        - complex_sens: 复电压灵敏度
        - bus: 三相母线 ID
        - control: 控制变量

    返回:
        实数灵敏度。
    """

    return _single(Metric.VUF, state, complex_sens, bus, control)


def pvur_sensitivity(
    state: VoltageState,
    complex_sens: "SensitivityTensor",
    bus: int,
    control: "ControlVariable"
) -> float:
    """
    计算 PVUR 灵敏度。

    情形及符号在运行点处冻结；情形并列时发出 `KinkWarning` 并按序号最小的情形计算。

    参数:
        - state: 运行点
        - complex_sens: 复电压灵敏度
        - bus: 三相母线 ID
        - control: 控制变量

    返回:
        实数灵敏度。
    """

    return _single(Metric.PVUR, state, complex_sens, bus, control)


def lvur_sensitivity(
    state: VoltageState,
    complex_sens: "SensitivityTensor",
    bus: int,
    control: "ControlVariable"
) -> float:
    """
    计算 LVUR 灵敏度，与 `pvur_sensitivity` 相同，但作用于线电压幅值。

    参数:
        - state: 运行点
        - complex_sens: 复电压灵敏度
        - bus: 三相母线 ID
        - control: 控制变量

    返回:
        实数灵敏度。
    """

    return _single(Metric.LVUR, state, complex_sens, bus, control)


class MetricSensitivities:
    """
    单个指标在全部三相母线上对全部控制变量的灵敏度矩阵。

    被跳过的母线对应行为 NaN，并在 `skipped` 中记录原因。
    """

    _metric: Metric
    _buses: Tuple[int, ...]
    _controls: Tuple["ControlVariable", ...]
    _values: "npt.NDArray[np.float64]"
    _cases: "frozendict[int, CaseLabel]"
    _kinks: Tuple[int, ...]
    _skipped: "frozendict[int, str]"

    def __init__(
        self,
        metric: Metric,
        buses: Sequence[int],
        controls: Sequence["ControlVariable"],
        values: "npt.NDArray[np.float64]",
        cases: Dict[int, CaseLabel],
        kinks: Iterable[int],
        skipped: Dict[int, str]
    ) -> None:
        """
        初始化 `MetricSensitivities` 实例。

        参数:
            - metric: 指标
            - buses: 行对应的三相母线 ID
            - controls: 列对应的控制变量
            - values: 灵敏度矩阵
            - cases: 各母线冻结的情形标签（仅 PVUR/LVUR）
            - kinks: 处于情形分界点的母线
            - skipped: 被跳过的母线及原因
        """

        if values.shape != (len(buses), len(controls)):
            raise ValueError("灵敏度矩阵维度与行列标签不一致。")
        self._metric = metric
        self._buses = tuple(buses)
        self._controls = tuple(controls)
        self._values = np.array(values, dtype=np.float64)
        self._values.setflags(write=False)
        self._cases = frozendict(sorted(cases.items()))
        self._kinks = tuple(sorted(kinks))
        self._skipped = frozendict(sorted(skipped.items()))

    @property
    def metric(self) -> Metric:
        """
        指标。
        """

        return self._metric

    @property
    def buses(self) -> Tuple[int, ...]:
        """
        行对应的三相母线 ID（升序）。
        """

        return self._buses

    @property
    def controls(self) -> Tuple["ControlVariable", ...]:
        """
        列对应的控制变量。
        """

        return self._controls

    @property
    def values(self) -> "npt.NDArray[np.float64]":
        """
        灵敏度矩阵（三相母线 × 控制变量）。
        """

        return self._values

    @property
    def cases(self) -> "frozendict[int, CaseLabel]":
        """
        冻结的情形标签。
        """

        return self._cases

    @property
    def kinks(self) -> Tuple[int, ...]:
        """
        处于情形分界点的母线。
        """

        return self._kinks

    @property
    def skipped(self) -> "frozendict[int, str]":
        """
        被跳过的母线及原因。
        """

        return self._skipped

    @property
    def valid_buses(self) -> Tuple[int, ...]:
        """
        未被跳过的母线。
        """

        return tuple(bus for bus in self._buses if bus not in self._skipped)

    def row(self, bus: int) -> "npt.NDArray[np.float64]":
        """
        获取母线对应的行。

        参数:
            - bus: 三相母线 ID

        返回:
            按控制变量顺序排列的灵敏度。
        """

        try:
            return self._values[self._buses.index(bus)]
        except ValueError:
            raise InvalidTargetError(f"母线 {bus} 不在灵敏度矩阵中。") from None

    def value(self, bus: int, control: "ControlVariable") -> float:
        """
        获取单个灵敏度。

        参数:
            - bus: 三相母线 ID
            - control: 控制变量

        返回:
            实数灵敏度（被跳过的母线为 NaN）。
        """

        try:
            column = self._controls.index(control)
        except ValueError:
            raise InvalidTargetError(f"控制变量 {control} 不存在。") from None
        return float(self.row(bus)[column])

    def panel(
        self,
        kind: "ControlKind",
        phase: Phase
    ) -> Tuple[Tuple[int, ...], "npt.NDArray[np.float64]"]:
        """
        取出某一控制类型、某一相位的子矩阵（热力图的一格）。

        参数:
            - kind: 控制变量类型
            - phase: 控制端子的相位

        返回:
            (列对应的控制母线 ID, 三相母线 × 控制母线的矩阵)。
        """

        columns = [
            i for i, control in enumerate(self._controls)
            if control.kind is kind and control.phase is phase
        ]
        buses = tuple(self._controls[i].bus for i in columns)
        return buses, self._values[:, columns]


def metric_sensitivity_matrix(
    model: FeederModel,
    state: VoltageState,
    complex_sens: "SensitivityTensor",
    metric: Metric
) -> MetricSensitivities:
    """
    计算指标在全部三相母线上对全部控制变量的灵敏度矩阵。

    退化母线不抛出异常，而是以 NaN 行及原因记录在 `skipped` 中，
    并发出 `SkippedBusWarning`；情形分界点发出 `KinkWarning`。

    参数:
        - model: 馈线模型
        - state: 已收敛的运行点
        - complex_sens: 复电压灵敏度
        - metric: 指标

    返回:
        以 `MetricSensitivities` 类型表示的灵敏度矩阵。
    """

    if complex_sens.model is not model:
        raise InvalidTargetError("灵敏度张量与馈线不一致。")
    buses = model.three_phase_buses
    controls = complex_sens.controls
    columns = np.arange(len(controls), dtype=np.intp)
    values = np.full((len(buses), len(controls)), np.nan, dtype=np.float64)
    cases: Dict[int, CaseLabel] = {}
    kinks: List[int] = []
    skipped: Dict[int, str] = {}
    for row, bus in enumerate(buses):
        try:
            gradient = _GRADIENTS[metric](state, complex_sens, bus, columns)
        except DegeneratePointError as ex:
            skipped[bus] = str(ex)
            warnings.warn(f"跳过 {ex}", SkippedBusWarning)
            continue
        values[row] = gradient.values
        if gradient.case is not None:
            cases[bus] = gradient.case
        if gradient.kink:
            kinks.append(bus)
            warnings.warn(
                f"母线 {bus} 的 {metric.value.upper()} 处于情形分界点。",
                KinkWarning
            )
    _logger.debug(
        "%s 灵敏度: %d 个母线，跳过 %d 个。", metric.value, len(buses), len(skipped)
    )
    return MetricSensitivities(metric, buses, controls, values, cases, kinks, skipped)


@dataclass(frozen=True)
class SensitivitySweep:
    """
    灵敏度随注入倍数变化的扫描结果。
    """

    metric: Metric
    """
    指标。
    """

    bus: int
    """
    被观测的三相母线。
    """

    control: "ControlVariable"
    """
    求导所对的控制变量。
    """

    factors: Tuple[float, ...]
    """
    注入倍数。
    """

    values: Tuple[float, ...]
    """
    各倍数下的灵敏度（失败时为 NaN）。
    """

    cases: Tuple[Optional[CaseLabel], ...]
    """
    各倍数下的情形标签（VUF 为 `None`）。
    """

    notes: Tuple[str, ...]
    """
    各倍数下的备注（退化、分界点或潮流失败原因，正常时为空）。
    """

    def case_changes(self) -> Tuple[int, ...]:
        """
        情形标签发生变化的位置。

        返回:
            下标 k 的元组，表示 `cases[k]` 与 `cases[k - 1]` 不同。
        """

        return tuple(
            k for k in range(1, len(self.cases))
            if self.cases[k] is not None
            and self.cases[k - 1] is not None
            and self.cases[k] != self.cases[k - 1]
        )


def default_sweep_factors() -> Tuple[float, ...]:
    """
    默认扫描倍数 −1.5, −1.4, …, 1.5。
    """

    return tuple(round(-1.5 + 0.1 * k, 10) for k in range(31))


def sweep_sensitivity(
    model: FeederModel,
    base: InjectionVector,
    control: "ControlVariable",
    bus: int,
    metric: Metric,
    factors: Optional[Sequence[float]] = None,
    scaled_kinds: Optional[Iterable["ControlKind"]] = None,
    options: Optional[PowerFlowOptions] = None
) -> SensitivitySweep:
    """
    扫描某端子注入倍数变化时指标灵敏度的变化。

    对每个倍数 f，将 `control` 所在端子的注入替换为 f 倍基准注入
    （默认有功、无功一起缩放），重新求解潮流并计算灵敏度。

    参数:
        - model: 馈线模型
        - base: 基准注入
        - control: 被缩放的端子及求导所对的控制变量
        - bus: 被观测的三相母线
        - metric: 指标
        - factors: 倍数序列（默认 `default_sweep_factors()`）
        - scaled_kinds: 被缩放的控制类型（默认有功与无功）
        - options: 潮流选项

    返回:
        以 `SensitivitySweep` 类型表示的扫描结果。
    """

    from phasebal.sensitivity import CONTROL_KINDS, ControlKind, complex_sensitivities

    if bus not in model.buses or not model.buses[bus].three_phase:
        raise InvalidTargetError(f"母线 {bus} 不是三相母线。")
    grid = tuple(float(f) for f in (factors if factors is not None else default_sweep_factors()))
    kinds = set(scaled_kinds if scaled_kinds is not None else CONTROL_KINDS)
    position = base.terminals.index(control.terminal) if control.terminal in base.terminals else -1
    if position < 0:
        raise InvalidTargetError(f"控制变量 {control} 不存在。")

    values: List[float] = []
    cases: List[Optional[CaseLabel]] = []
    notes: List[str] = []
    for factor in grid:
        power = base.power.copy()
        p, q = power[position].real, power[position].imag
        if ControlKind.P in kinds:
            p *= factor
        if ControlKind.Q in kinds:
            q *= factor
        power[position] = complex(p, q)
        try:
            state = solve(model, InjectionVector(base.terminals, power), options)
            tensor = complex_sensitivities(model, state)
            column = np.array([tensor.control_index(control)], dtype=np.intp)
            gradient = _GRADIENTS[metric](state, tensor, bus, column)
        except NumericalError as ex:
            values.append(float("nan"))
            cases.append(None)
            notes.append(str(ex))
            continue
        values.append(float(gradient.values[0]))
        cases.append(gradient.case)
        notes.append("情形分界点" if gradient.kink else "")
    return SensitivitySweep(
        metric, bus, control, grid, tuple(values), tuple(cases), tuple(notes)
    )

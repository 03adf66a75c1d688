from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from frozendict import frozendict

from phasebal.constant import ALPHA, KINK_TOLERANCE, SEQUENCE_EPSILON
from phasebal.exception import DegeneratePointError, InvalidTargetError
from phasebal.feeder import FeederModel
from phasebal.phase import LINE_PAIRS, PHASES, LinePair, Phase
from phasebal.powerflow import VoltageState


class Metric(Enum):
    """
    电压不平衡指标。
    """

    VUF = "vuf"
    """
    电压不平衡因子：负序电压幅值 / 正序电压幅值。
    """

    PVUR = "pvur"
    """
    相电压不平衡率：相电压幅值与其平均值的最大偏差 / 平均值。
    """

    LVUR = "lvur"
    """
    线电压不平衡率：线电压幅值与其平均值的最大偏差 / 平均值。
    """


METRICS: Tuple[Metric, Metric, Metric] = (Metric.VUF, Metric.PVUR, Metric.LVUR)
"""
按序排列的全部指标。
"""

CaseLabel = Union[Phase, LinePair]

# 对称分量变换矩阵（含 1/3 系数），行依次为零序、正序、负序。
SEQUENCE_MATRIX: "npt.NDArray[np.complex128]" = np.array([
    [1, 1, 1],
    [1, ALPHA, ALPHA ** 2],
    [1, ALPHA ** 2, ALPHA],
], dtype=np.complex128) / 3
SEQUENCE_MATRIX.setflags(write=False)


@dataclass(frozen=True)
class SequenceVoltages:
    """
    对称分量（标幺值）。
    """

    zero: complex
    """
    零序电压。
    """

    positive: complex
    """
    正序电压。
    """

    negative: complex
    """
    负序电压。
    """

    def to_phases(self) -> Tuple[complex, complex, complex]:
        """
        逆变换为 a、b、c 三相电压。

        返回:
            (v_a, v_b, v_c)。
        """

        a2 = ALPHA ** 2
        return (
            self.zero + self.positive + self.negative,
            self.zero + a2 * self.positive + ALPHA * self.negative,
            self.zero + ALPHA * self.positive + a2 * self.negative,
        )


@dataclass(frozen=True)
class DeviationCase:
    """
    PVUR/LVUR 的最大偏差情形。

    对幅值 (m_1, m_2, m_3)，记 S = Σm，D_k = 2m_k − Σ_{l≠k} m_l = 3m_k − S，
    则指标值为 max_k |D_k| / S，取得最大值的 k 即为情形。
    """

    index: int
    """
    情形下标（并列时取序号最小者）。
    """

    deviations: Tuple[float, float, float]
    """
    带符号偏差 D_k。
    """

    total: float
    """
    幅值之和 S。
    """

    kink: bool
    """
    最大与次大偏差是否在 `KINK_TOLERANCE` 内并列（不可微点）。
    """

    @property
    def value(self) -> float:
        """
        指标值 |D_k| / S。
        """

        return abs(self.deviations[self.index]) / self.total


def deviation_case(magnitudes: Sequence[float]) -> DeviationCase:
    """
    按情形改写式求最大偏差情形。

    参数:
        - magnitudes: 三个按序排列的幅值

    返回:
        以 `DeviationCase` 类型表示的情形。
    """

    if len(magnitudes) != 3:
        raise ValueError("必须提供三个幅值。")
    m = [float(value) for value in magnitudes]
    if not all(np.isfinite(value) and value > 0 for value in m):
        raise DegeneratePointError(f"幅值必须为正有限数值: {m}。")
    total = m[0] + m[1] + m[2]
    deviations = (
        2 * m[0] - m[1] - m[2],
        2 * m[1] - m[2] - m[0],
        2 * m[2] - m[0] - m[1],
    )
    spread = [abs(value) for value in deviations]
    best = max(spread)
    index = spread.index(best)
    runner_up = max(spread[k] for k in range(3) if k != index)
    return DeviationCase(index, deviations, total, best - runner_up <= KINK_TOLERANCE)


def max_deviation_ratio(magnitudes: Sequence[float]) -> Tuple[float, int]:
    """
    按定义直接计算最大偏差比 max|m − avg| / avg。

    参数:
        - magnitudes: 三个按序排列的幅值

    返回:
        (指标值, 取得最大偏差的下标)，并列时取序号最小者。
    """

    m = np.asarray(magnitudes, dtype=np.float64)
    average = float(np.mean(m))
    if not average > 0:
        raise DegeneratePointError("幅值平均值必须为正数。")
    spread = np.abs(m - average)
    index = int(np.argmax(spread))
    return float(spread[index]) / average, index


def to_sequence(va: complex, vb: complex, vc: complex) -> SequenceVoltages:
    """
    对称分量变换。

    参数:
        - va: a 相电压
        - vb: b 相电压
        - vc: c 相电压

    返回:
        以 `SequenceVoltages` 类型表示的零序、正序、负序电压。
    """

    zero, positive, negative = SEQUENCE_MATRIX @ np.array([va, vb, vc], dtype=np.complex128)
    return SequenceVoltages(complex(zero), complex(positive), complex(negative))


def vuf(seq: SequenceVoltages) -> float:
    """
    计算电压不平衡因子 |v−| / |v+|。

    参数:
        - seq: 对称分量

    返回:
        VUF（标幺值）。
    """

    if abs(seq.positive) <= SEQUENCE_EPSILON:
        raise DegeneratePointError("正序电压幅值为零，VUF 无定义。")
    return abs(seq.negative) / abs(seq.positive)


def pvur(va: float, vb: float, vc: float) -> Tuple[float, Phase]:
    """
    计算相电压不平衡率。

    参数:
        - va: a 相电压幅值
        - vb: b 相电压幅值
        - vc: c 相电压幅值

    返回:
        (PVUR, 情形相位)。
    """

    case = deviation_case((va, vb, vc))
    return case.value, PHASES[case.index]


def lvur(vab: float, vbc: float, vca: float) -> Tuple[float, LinePair]:
    """
    计算线电压不平衡率。

    参数:
        - vab: ab 线电压幅值
        - vbc: bc 线电压幅值
        - vca: ca 线电压幅值

    返回:
        (LVUR, 情形相对)。
    """

    case = deviation_case((vab, vbc, vca))
    return case.value, LINE_PAIRS[case.index]


def phase_voltages(
    model: FeederModel,
    state: VoltageState,
    bus: int
) -> Tuple[complex, complex, complex]:
    """
    获取三相母线的 a、b、c 相电压。

    参数:
        - model: 馈线模型
        - state: 运行点
        - bus: 母线 ID

    返回:
        (v_a, v_b, v_c)。
    """

    if bus not in model.buses or not model.buses[bus].three_phase:
        raise InvalidTargetError(f"母线 {bus} 不是三相母线。")
    va, vb, vc = (complex(state.voltages[model.index_of(bus, phase)]) for phase in PHASES)
    return va, vb, vc


def line_voltages(
    model: FeederModel,
    state: VoltageState,
    bus: int
) -> Tuple[complex, complex, complex]:
    """
    获取三相母线的 ab、bc、ca 线电压。

    参数:
        - model: 馈线模型
        - state: 运行点
        - bus: 母线 ID

    返回:
        (v_ab, v_bc, v_ca)。
    """

    va, vb, vc = phase_voltages(model, state, bus)
    return va - vb, vb - vc, vc - va


def metric_value(
    model: FeederModel,
    state: VoltageState,
    bus: int,
    metric: Metric
) -> float:
    """
    计算单个母线的单个指标。

    参数:
        - model: 馈线模型
        - state: 运行点
        - bus: 三相母线 ID
        - metric: 指标

    返回:
        指标值（标幺值）。
    """

    if metric is Metric.VUF:
        return vuf(to_sequence(*phase_voltages(model, state, bus)))
    if metric is Metric.PVUR:
        va, vb, vc = (abs(v) for v in phase_voltages(model, state, bus))
        return pvur(va, vb, vc)[0]
    vab, vbc, vca = (abs(v) for v in line_voltages(model, state, bus))
    return lvur(vab, vbc, vca)[0]


@dataclass(frozen=True)
class BusUnbalance:
    """
    单个三相母线的不平衡指标。
    """

    bus: int
    """
    母线 ID。
    """

    sequence: SequenceVoltages
    """
    对称分量。
    """

    vuf: float
    """
    电压不平衡因子。
    """

    pvur: float
    """
    相电压不平衡率。
    """

    pvur_case: Phase
    """
    PVUR 最大偏差所在相位。
    """

    lvur: float
    """
    线电压不平衡率。
    """

    lvur_case: LinePair
    """
    LVUR 最大偏差所在相对。
    """

    phase_average: float
    """
    相电压幅值平均值。
    """

    line_average: float
    """
    线电压幅值平均值。
    """

    def value(self, metric: Metric) -> float:
        """
        获取指标值。

        参数:
            - metric: 指标

        返回:
            指标值（标幺值）。
        """

        return {Metric.VUF: self.vuf, Metric.PVUR: self.pvur, Metric.LVUR: self.lvur}[metric]

    def case(self, metric: Metric) -> Optional[CaseLabel]:
        """
        获取指标的情形标签。

        参数:
            - metric: 指标

        返回:
            PVUR 返回相位，LVUR 返回相对，VUF 返回 `None`。
        """

        if metric is Metric.PVUR:
            return self.pvur_case
        if metric is Metric.LVUR:
            return self.lvur_case
        return None


class UnbalanceReport:
    """
    全部三相母线的不平衡指标报告。
    """

    _buses: "frozendict[int, BusUnbalance]"
    _omitted: "frozendict[int, str]"

    def __init__(self, buses: Sequence[BusUnbalance], omitted: Dict[int, str]) -> None:
        """
        初始化 `UnbalanceReport` 实例。

        参数:
            - buses: 各三相母线的指标
            - omitted: 被省略的母线及原因
        """

        self._buses = frozendict(sorted((entry.bus, entry) for entry in buses))
        self._omitted = frozendict(sorted(omitted.items()))

    @property
    def buses(self) -> "frozendict[int, BusUnbalance]":
        """
        以母线 ID 为键的各母线指标（按 ID 升序）。
        """

        return self._buses

    @property
    def omitted(self) -> "frozendict[int, str]":
        """
        未计算指标的母线及原因（非三相母线）。
        """

        return self._omitted

    def __getitem__(self, bus: int) -> BusUnbalance:
        try:
            return self._buses[bus]
        except KeyError:
            raise InvalidTargetError(f"母线 {bus} 不在报告中。") from None

    def values(self, metric: Metric) -> "npt.NDArray[np.float64]":
        """
        获取各母线的指标值（按母线 ID 升序）。

        参数:
            - metric: 指标

        返回:
            实数向量。
        """

        return np.array([entry.value(metric) for entry in self._buses.values()], dtype=np.float64)

    def total(self, metric: Metric) -> float:
        """
        计算指标在全部三相母线上的和 Σ_i Ξ_i。

        参数:
            - metric: 指标

        返回:
            指标之和。
        """

        return float(np.sum(self.values(metric)))


def report(model: FeederModel, state: VoltageState) -> UnbalanceReport:
    """
    计算全部三相母线的不平衡指标。

    参数:
        - model: 馈线模型
        - state: 已收敛的运行点

    返回:
        以 `UnbalanceReport` 类型表示的报告；非三相母线记录在 `omitted` 中。
    """

    if state.terminals != model.terminals:
        raise InvalidTargetError("运行点与馈线不一致。")
    entries: List[BusUnbalance] = []
    omitted: Dict[int, str] = {}
    for bus in model.buses.values():
        if not bus.three_phase:
            phases = "".join(phase.value for phase in bus.phases)
            omitted[bus.identifier] = f"非三相母线（{phases}）"
            continue
        voltages = phase_voltages(model, state, bus.identifier)
        lines = line_voltages(model, state, bus.identifier)
        try:
            sequence = to_sequence(*voltages)
            phase_case = deviation_case([abs(v) for v in voltages])
            line_case = deviation_case([abs(v) for v in lines])
            entries.append(BusUnbalance(
                bus.identifier,
                sequence,
                vuf(sequence),
                phase_case.value,
                PHASES[phase_case.index],
                line_case.value,
                LINE_PAIRS[line_case.index],
                phase_case.total / 3,
                line_case.total / 3
            ))
        except DegeneratePointError as ex:
            raise DegeneratePointError(str(ex), bus.identifier) from ex
    return UnbalanceReport(entries, omitted)

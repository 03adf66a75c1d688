from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple

import numpy as np
import numpy.typing as npt
from frozendict import frozendict
from scipy.linalg import lu_solve

from phasebal.exception import DegeneratePointError, InvalidTargetError
from phasebal.feeder import FeederModel, Terminal
from phasebal.phase import LINE_PAIRS, LinePair, Phase
from phasebal.powerflow import VoltageState, _factorize  # type: ignore


class ControlKind(Enum):
    """
    控制变量类型。
    """

    P = "p"
    """
    有功注入。
    """

    Q = "q"
    """
    无功注入。
    """


CONTROL_KINDS: Tuple[ControlKind, ControlKind] = (ControlKind.P, ControlKind.Q)
"""
按序排列的全部控制变量类型。
"""


@dataclass(frozen=True)
class ControlVariable:
    """
    控制变量，即某个非平衡端子的有功或无功注入。
    """

    bus: int
    """
    母线 ID。
    """

    phase: Phase
    """
    相位。
    """

    kind: ControlKind
    """
    控制变量类型。
    """

    @property
    def terminal(self) -> Terminal:
        """
        控制变量所在端子。
        """

        return Terminal(self.bus, self.phase)

    def __str__(self) -> str:
        return f"{self.bus}{self.phase.value}_{self.kind.value}"


def control_variables(model: FeederModel) -> Tuple[ControlVariable, ...]:
    """
    获取馈线的全部控制变量。

    顺序为先全部 p、后全部 q，各自按 `load_terminals` 顺序排列，
    与 `InjectionVector.as_controls` 一致。

    参数:
        - model: 馈线模型

    返回:
        控制变量元组。
    """

    return tuple(
        ControlVariable(terminal.bus, terminal.phase, kind)
        for kind in CONTROL_KINDS
        for terminal in model.load_terminals
    )


class SensitivityTensor:
    """
    电压灵敏度张量。

    存储每个端子复电压对每个控制变量的偏导数，并由此导出相电压幅值及线电压幅值灵敏度。
    """

    _model: FeederModel
    _state: VoltageState
    _controls: Tuple[ControlVariable, ...]
    _control_index: "frozendict[ControlVariable, int]"
    _voltage: "npt.NDArray[np.complex128]"
    _magnitude: "npt.NDArray[np.float64]"
    _line_rows: Tuple[Tuple[int, LinePair], ...]
    _line_magnitude: "npt.NDArray[np.float64]"

    def __init__(
        self,
        model: FeederModel,
        state: VoltageState,
        voltage: "npt.NDArray[np.complex128]"
    ) -> None:
        """
        初始化 `SensitivityTensor` 实例。

        参数:
            - model: 馈线模型
            - state: 线性化运行点
            - voltage: 复电压灵敏度矩阵（全部端子 × 全部控制变量）
        """

        self._model = model
        self._state = state
        self._controls = control_variables(model)
        self._control_index = frozendict(
            (control, index) for index, control in enumerate(self._controls)
        )
        if voltage.shape != (len(model.terminals), len(self._controls)):
            raise ValueError("灵敏度矩阵维度与馈线不一致。")
        self._voltage = np.array(voltage, dtype=np.complex128)
        self._voltage.setflags(write=False)

        v = state.voltages
        with np.errstate(divide="ignore", invalid="ignore"):
            magnitude = np.real(np.conj(v)[:, None] * self._voltage) / np.abs(v)[:, None]
        magnitude.setflags(write=False)
        self._magnitude = magnitude

        rows: List[Tuple[int, LinePair]] = []
        blocks: List["npt.NDArray[np.float64]"] = []
        for bus in model.buses.values():
            for pair in LINE_PAIRS:
                first, second = pair.phases
                if first in bus.phases and second in bus.phases:
                    rows.append((bus.identifier, pair))
                    blocks.append(self._line_row(bus.identifier, pair))
        self._line_rows = tuple(rows)
        line_magnitude = (
            np.vstack(blocks) if blocks else np.zeros((0, len(self._controls)))
        )
        line_magnitude.setflags(write=False)
        self._line_magnitude = line_magnitude

    def _line_row(self, bus: int, pair: LinePair) -> "npt.NDArray[np.float64]":
        first, second = (self._model.index_of(bus, phase) for phase in pair.phases)
        v = self._state.voltages[first] - self._state.voltages[second]
        dv = self._voltage[first] - self._voltage[second]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.real(np.conj(v) * dv) / abs(v)

    @property
    def model(self) -> FeederModel:
        """
        馈线模型。
        """

        return self._model

    @property
    def state(self) -> VoltageState:
        """
        线性化运行点。
        """

        return self._state

    @property
    def controls(self) -> Tuple[ControlVariable, ...]:
        """
        控制变量（列顺序）。
        """

        return self._controls

    @property
    def voltage(self) -> "npt.NDArray[np.complex128]":
        """
        复电压灵敏度 ∂v/∂x（全部端子 × 全部控制变量），平衡母线行恒为零。
        """

        return self._voltage

    @property
    def magnitude(self) -> "npt.NDArray[np.float64]":
        """
        相电压幅值灵敏度 ∂|v|/∂x（全部端子 × 全部控制变量）。
        """

        return self._magnitude

    @property
    def line_rows(self) -> Tuple[Tuple[int, LinePair], ...]:
        """
        线电压灵敏度的行标签 (母线, 相对)，仅包括两相均存在的相对。
        """

        return self._line_rows

    @property
    def line_magnitude(self) -> "npt.NDArray[np.float64]":
        """
        线电压幅值灵敏度 ∂|v_ψψ'|/∂x（`line_rows` × 全部控制变量）。
        """

        return self._line_magnitude

    def control_index(self, control: ControlVariable) -> int:
        """
        获取控制变量的列下标。

        参数:
            - control: 控制变量

        返回:
            列下标。
        """

        try:
            return self._control_index[control]
        except KeyError:
            raise InvalidTargetError(f"控制变量 {control} 不存在。") from None

    def complex_entry(self, terminal: Terminal, control: ControlVariable) -> complex:
        """
        获取单个复电压灵敏度 ∂v/∂x。

        参数:
            - terminal: 被观测端子
            - control: 控制变量

        返回:
            复数灵敏度。
        """

        row = self._model.index_of(terminal.bus, terminal.phase)
        return complex(self._voltage[row, self.control_index(control)])


def complex_sensitivities(model: FeederModel, state: VoltageState) -> SensitivityTensor:
    """
    计算复电压灵敏度。

    对节点功率平衡方程 s = v·(Yv)* 求导，得到实数化的线性方程组，
    一次分解后对全部控制变量回代求解；平衡母线行恒为零。

    参数:
        - model: 馈线模型
        - state: 已收敛的运行点

    返回:
        以 `SensitivityTensor` 类型表示的灵敏度张量。
    """

    if state.terminals != model.terminals:
        raise InvalidTargetError("运行点与馈线不一致。")
    load = model.load_indices
    n = len(load)
    voltage = np.zeros((len(model.terminals), 2 * n), dtype=np.complex128)
    if n == 0:
        return SensitivityTensor(model, state, voltage)

    v = state.voltages[load]
    currents = model.admittance[load] @ state.voltages
    # ds = diag(conj(i))·dv + diag(v)·conj(Y_nn)·conj(dv)
    direct = np.diag(np.conj(currents))
    conjugate = v[:, None] * np.conj(model.admittance[np.ix_(load, load)])
    along_real = direct + conjugate
    along_imag = 1j * (direct - conjugate)
    system = np.block([
        [along_real.real, along_imag.real],
        [along_real.imag, along_imag.imag],
    ])
    factor = _factorize(system, "灵敏度线性方程组奇异。")
    # 右端项: p 控制为 e_k，q 控制为 j·e_k，恰为单位矩阵的各列。
    solution = lu_solve(factor, np.eye(2 * n))
    voltage[load] = solution[:n] + 1j * solution[n:]
    return SensitivityTensor(model, state, voltage)


def magnitude_sensitivity(
    state: VoltageState,
    complex_sens: SensitivityTensor,
    terminal: Terminal,
    control: ControlVariable
) -> float:
    """
    计算相电压幅值灵敏度 ∂|v|/∂x = Re(v*·∂v/∂x)/|v|。

    参数:
        - state: 运行点
        - complex_sens: 复电压灵敏度
        - terminal: 被观测端子
        - control: 控制变量

    返回:
        实数灵敏度。
    """

    v = state.voltage(terminal.bus, terminal.phase)
    if abs(v) == 0:
        raise DegeneratePointError(f"端子 {terminal} 电压为零。", terminal.bus)
    dv = complex_sens.complex_entry(terminal, control)
    return (v.conjugate() * dv).real / abs(v)


def line_magnitude_sensitivity(
    state: VoltageState,
    complex_sens: SensitivityTensor,
    bus: int,
    pair: LinePair,
    control: ControlVariable
) -> float:
    """
    计算线电压幅值灵敏度 ∂|v_ψψ'|/∂x = Re(v_ψψ'*·(∂v_ψ/∂x − ∂v_ψ'/∂x))/|v_ψψ'|。

    参数:
        - state: 运行点
        - complex_sens: 复电压灵敏度
        - bus: 母线 ID
        - pair: 线电压相对
        - control: 控制变量

    返回:
        实数灵敏度。
    """

    first, second = pair.phases
    phases = complex_sens.model.buses[bus].phases
    if first not in phases or second not in phases:
        raise InvalidTargetError(f"母线 {bus} 缺少构成 {pair.value} 线电压的相位。")
    v = state.voltage(bus, first) - state.voltage(bus, second)
    if abs(v) == 0:
        raise DegeneratePointError(f"{pair.value} 线电压为零。", bus)
    dv = (
        complex_sens.complex_entry(Terminal(bus, first), control)
        - complex_sens.complex_entry(Terminal(bus, second), control)
    )
    return (v.conjugate() * dv).real / abs(v)


from .oracle import *
from .unbalance import *

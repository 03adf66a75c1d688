from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, NamedTuple, Optional, Tuple

import networkx as nx
import numpy as np
import numpy.typing as npt
from frozendict import frozendict

from phasebal.exception import (DuplicateBusError, FeederSchemaError, InvalidTargetError,
                                SlackBusError, TopologyError)
from phasebal.feeder.perunit import PerUnitBase
from phasebal.phase import PHASES, Phase


class BusKind(Enum):
    """
    母线类型。
    """

    SLACK = "slack"
    """
    平衡母线（固定三相平衡参考电压）。
    """

    LOAD = "load"
    """
    负荷母线（恒功率注入）。
    """


class Terminal(NamedTuple):
    """
    端子，即 (母线, 相位) 对。
    """

    bus: int
    phase: Phase

    def __str__(self) -> str:
        return f"{self.bus}{self.phase.value}"


@dataclass(frozen=True)
class Bus:
    """
    母线。
    """

    identifier: int
    """
    母线 ID。
    """

    kind: BusKind
    """
    母线类型。
    """

    phases: Tuple[Phase, ...]
    """
    存在的相位（按 a < b < c 排序）。
    """

    base_kv: float
    """
    相电压基准（kV）。
    """

    def __post_init__(self) -> None:
        if not self.phases or len(set(self.phases)) != len(self.phases):
            raise ValueError("母线相位必须非空且不重复。")
        object.__setattr__(self, "phases", tuple(sorted(self.phases)))
        if not (np.isfinite(self.base_kv) and self.base_kv > 0):
            raise ValueError("电压基准必须为正数。")

    @property
    def three_phase(self) -> bool:
        """
        是否为三相母线。
        """

        return len(self.phases) == 3


def _frozen_matrix(value: "npt.ArrayLike") -> "npt.NDArray[np.complex128]":
    matrix = np.array(value, dtype=np.complex128)
    if matrix.shape != (3, 3):
        raise ValueError("矩阵必须为 3×3。")
    matrix.setflags(write=False)
    return matrix


@dataclass(frozen=True, eq=False)
class LineSegment:
    """
    线路段。
    """

    from_bus: int
    """
    首端母线 ID。
    """

    to_bus: int
    """
    末端母线 ID。
    """

    z_ohm: "npt.NDArray[np.complex128]"
    """
    3×3 串联阻抗矩阵（Ω），行列按相位顺序，缺失相位的元素为 0。
    """

    y_shunt_s: Optional["npt.NDArray[np.complex128]"] = None
    """
    3×3 总并联导纳矩阵（S），两端各计一半。
    """

    def __post_init__(self) -> None:
        object.__setattr__(self, "z_ohm", _frozen_matrix(self.z_ohm))
        if self.y_shunt_s is not None:
            object.__setattr__(self, "y_shunt_s", _frozen_matrix(self.y_shunt_s))

    def reversed(self) -> "LineSegment":
        """
        交换首末端。

        返回:
            首末端交换后的 `LineSegment`。
        """

        return LineSegment(self.to_bus, self.from_bus, self.z_ohm, self.y_shunt_s)


@dataclass(frozen=True)
class LoadSpec:
    """
    恒功率负荷（单相）。
    """

    bus: int
    """
    所在母线 ID。
    """

    phase: Phase
    """
    所在相位。
    """

    p_kw: float
    """
    有功功率（kW，消耗为正）。
    """

    q_kvar: float
    """
    无功功率（kvar，消耗为正）。
    """

    @property
    def power_kva(self) -> complex:
        """
        复功率（kVA，消耗为正）。
        """

        return complex(self.p_kw, self.q_kvar)


class FeederModel:
    """
    馈线模型。

    构造后不可变，可在多个线程间只读共享。
    """

    _s_base_kva: float
    _buses: "frozendict[int, Bus]"
    _segments: Tuple[LineSegment, ...]
    _loads: Tuple[LoadSpec, ...]
    _slack: Bus
    _parents: "frozendict[int, int]"
    _terminals: Tuple[Terminal, ...]
    _terminal_index: "frozendict[Terminal, int]"
    _slack_indices: "npt.NDArray[np.intp]"
    _load_indices: "npt.NDArray[np.intp]"
    _load_power_kva: "frozendict[Terminal, complex]"
    _admittance: "npt.NDArray[np.complex128]"

    def __init__(
        self,
        s_base_kva: float,
        buses: Iterable[Bus],
        segments: Iterable[LineSegment],
        loads: Iterable[LoadSpec] = ()
    ) -> None:
        """
        初始化 `FeederModel` 实例并校验全部不变量。

        参数:
            - s_base_kva: 每相功率基准（kVA）
            - buses: 母线
            - segments: 线路段
            - loads: 负荷
        """

        from phasebal.feeder.admittance import assemble_admittance

        if not (np.isfinite(s_base_kva) and s_base_kva > 0):
            raise FeederSchemaError("s_base_kva", "功率基准必须为正数。")
        self._s_base_kva = float(s_base_kva)

        bus_map: Dict[int, Bus] = {}
        for bus in buses:
            if bus.identifier in bus_map:
                raise DuplicateBusError(f"母线 ID {bus.identifier} 重复。")
            bus_map[bus.identifier] = bus
        self._buses = frozendict(sorted(bus_map.items()))

        slacks = [bus for bus in self._buses.values() if bus.kind is BusKind.SLACK]
        if not slacks:
            raise SlackBusError("缺少平衡母线。")
        if len(slacks) > 1:
            raise SlackBusError(f"存在多个平衡母线: {[bus.identifier for bus in slacks]}。")
        self._slack = slacks[0]
        if not self._slack.three_phase:
            raise SlackBusError("平衡母线必须为三相。")

        self._segments, self._parents = self._orient(list(segments))
        self._loads = tuple(loads)
        self._load_power_kva = self._collect_loads()

        terminals = [
            Terminal(bus.identifier, phase)
            for bus in self._buses.values()
            for phase in bus.phases
        ]
        self._terminals = tuple(terminals)
        self._terminal_index = frozendict(
            (terminal, index) for index, terminal in enumerate(terminals)
        )
        slack_indices = np.array(
            [i for i, t in enumerate(terminals) if t.bus == self._slack.identifier],
            dtype=np.intp
        )
        load_indices = np.array(
            [i for i, t in enumerate(terminals) if t.bus != self._slack.identifier],
            dtype=np.intp
        )
        slack_indices.setflags(write=False)
        load_indices.setflags(write=False)
        self._slack_indices = slack_indices
        self._load_indices = load_indices

        admittance = assemble_admittance(self)
        admittance.setflags(write=False)
        self._admittance = admittance

    def _orient(
        self,
        segments: List[LineSegment]
    ) -> Tuple[Tuple[LineSegment, ...], "frozendict[int, int]"]:
        graph = nx.MultiGraph()
        graph.add_nodes_from(self._buses)
        for i, segment in enumerate(segments):
            for name, bus in (("from", segment.from_bus), ("to", segment.to_bus)):
                if bus not in self._buses:
                    raise FeederSchemaError(f"segments[{i}].{name}", f"母线 {bus} 不存在。")
            if segment.from_bus == segment.to_bus:
                raise TopologyError(f"线路段 {i} 首末端相同。")
            if self._buses[segment.from_bus].base_kv != self._buses[segment.to_bus].base_kv:
                raise FeederSchemaError(f"segments[{i}]", "线路段两端的电压基准必须相同。")
            graph.add_edge(segment.from_bus, segment.to_bus, key=i)
        if not nx.is_connected(graph):
            raise TopologyError("网络不连通。")
        if graph.number_of_edges() != graph.number_of_nodes() - 1:
            raise TopologyError("网络不是辐射状（存在环路或并联线路段）。")

        parents: Dict[int, int] = {}
        for parent, child in nx.bfs_edges(graph, self._slack.identifier):
            parents[child] = parent
            if not set(self._buses[child].phases) <= set(self._buses[parent].phases):
                raise TopologyError(f"母线 {child} 的相位不被其上游母线 {parent} 覆盖。")

        oriented: List[LineSegment] = []
        for i, segment in enumerate(segments):
            if parents.get(segment.to_bus) != segment.from_bus:
                segment = segment.reversed()
            self._check_absent_phases(i, segment)
            oriented.append(segment)
        oriented.sort(key=lambda segment: (segment.from_bus, segment.to_bus))
        return tuple(oriented), frozendict(sorted(parents.items()))

    def _check_absent_phases(self, position: int, segment: LineSegment) -> None:
        present = np.zeros(3, dtype=bool)
        present[[phase.index for phase in self.segment_phases(segment)]] = True
        mask = ~np.outer(present, present)
        if np.any(segment.z_ohm[mask] != 0):
            raise FeederSchemaError(f"segments[{position}].z_ohm", "缺失相位的阻抗元素必须为 0。")
        if segment.y_shunt_s is not None and np.any(segment.y_shunt_s[mask] != 0):
            raise FeederSchemaError(
                f"segments[{position}].y_shunt_s",
                "缺失相位的导纳元素必须为 0。"
            )

    def _collect_loads(self) -> "frozendict[Terminal, complex]":
        powers: Dict[Terminal, complex] = {}
        for i, load in enumerate(self._loads):
            bus = self._buses.get(load.bus, None)
            if bus is None:
                raise FeederSchemaError(f"loads[{i}].bus", f"母线 {load.bus} 不存在。")
            if bus.kind is BusKind.SLACK:
                raise FeederSchemaError(f"loads[{i}].bus", "平衡母线不能带负荷。")
            if load.phase not in bus.phases:
                raise FeederSchemaError(
                    f"loads[{i}].phase",
                    f"母线 {load.bus} 不存在 {load.phase.value} 相。"
                )
            if not (np.isfinite(load.p_kw) and np.isfinite(load.q_kvar)):
                raise FeederSchemaError(f"loads[{i}]", "负荷功率必须为有限数值。")
            terminal = Terminal(load.bus, load.phase)
            powers[terminal] = powers.get(terminal, 0j) + load.power_kva
        return frozendict(sorted(powers.items()))

    @property
    def s_base_kva(self) -> float:
        """
        每相功率基准（kVA）。
        """

        return self._s_base_kva

    @property
    def buses(self) -> "frozendict[int, Bus]":
        """
        以 ID 为键、按 ID 升序排列的全部母线。
        """

        return self._buses

    @property
    def segments(self) -> Tuple[LineSegment, ...]:
        """
        按 (上游, 下游) 定向并排序的全部线路段。
        """

        return self._segments

    @property
    def loads(self) -> Tuple[LoadSpec, ...]:
        """
        输入中的全部负荷。
        """

        return self._loads

    @property
    def slack(self) -> Bus:
        """
        平衡母线。
        """

        return self._slack

    @property
    def terminals(self) -> Tuple[Terminal, ...]:
        """
        全部端子（按母线 ID、相位排序），包括平衡母线端子。
        """

        return self._terminals

    @property
    def load_terminals(self) -> Tuple[Terminal, ...]:
        """
        全部非平衡母线端子，即注入向量与控制变量的端子顺序。
        """

        return tuple(self._terminals[i] for i in self._load_indices)

    @property
    def slack_indices(self) -> "npt.NDArray[np.intp]":
        """
        平衡母线端子在端子序列中的下标。
        """

        return self._slack_indices

    @property
    def load_indices(self) -> "npt.NDArray[np.intp]":
        """
        非平衡母线端子在端子序列中的下标。
        """

        return self._load_indices

    @property
    def three_phase_buses(self) -> Tuple[int, ...]:
        """
        全部三相母线 ID（升序）。
        """

        return tuple(bus.identifier for bus in self._buses.values() if bus.three_phase)

    @property
    def admittance(self) -> "npt.NDArray[np.complex128]":
        """
        标幺化节点导纳矩阵（只读）。
        """

        return self._admittance

    @property
    def load_power_kva(self) -> "frozendict[Terminal, complex]":
        """
        各端子的负荷复功率（kVA，消耗为正）。
        """

        return self._load_power_kva

    def parent_of(self, bus: int) -> Optional[int]:
        """
        获取上游母线。

        参数:
            - bus: 母线 ID

        返回:
            上游母线 ID；平衡母线返回 `None`。
        """

        return self._parents.get(bus, None)

    def index_of(self, bus: int, phase: Phase) -> int:
        """
        获取端子在端子序列中的下标。

        参数:
            - bus: 母线 ID
            - phase: 相位

        返回:
            端子下标。
        """

        try:
            return self._terminal_index[Terminal(bus, phase)]
        except KeyError:
            raise InvalidTargetError(f"端子 {bus}{phase.value} 不存在。") from None

    def bus_indices(self, bus: int) -> List[int]:
        """
        获取母线全部端子的下标（按相位顺序）。

        参数:
            - bus: 母线 ID

        返回:
            端子下标列表。
        """

        return [self.index_of(bus, phase) for phase in self._buses[bus].phases]

    def per_unit(self, bus: int) -> PerUnitBase:
        """
        获取母线的标幺值基准。

        参数:
            - bus: 母线 ID

        返回:
            以 `PerUnitBase` 类型表示的基准。
        """

        return PerUnitBase(self._s_base_kva, self._buses[bus].base_kv)

    def segment_phases(self, segment: LineSegment) -> Tuple[Phase, ...]:
        """
        获取线路段存在的相位，即两端母线共有的相位。

        参数:
            - segment: 线路段

        返回:
            按顺序排列的相位元组。
        """

        common = set(self._buses[segment.from_bus].phases) & set(self._buses[segment.to_bus].phases)
        return tuple(phase for phase in PHASES if phase in common)

    def load_power_pu(self) -> "npt.NDArray[np.complex128]":
        """
        获取按 `load_terminals` 顺序排列的负荷复功率（标幺值，消耗为正）。

        返回:
            复数向量。
        """

        return np.array(
            [
                self._load_power_kva.get(terminal, 0j) / self._s_base_kva
                for terminal in self.load_terminals
            ],
            dtype=np.complex128
        )

    def __str__(self) -> str:
        return f"FeederModel({len(self._buses)} 母线, {len(self._terminals)} 端子)"


from .admittance import *
from .loader import *
from .perunit import *

import json
import math
import os
from typing import TYPE_CHECKING, Any, List, Mapping, NoReturn, Optional, Sequence, Union

import numpy as np
import numpy.typing as npt

from phasebal.exception import FeederSchemaError
from phasebal.phase import Phase, parse_phases
from phasebal.util._enum import get_enum_member

if TYPE_CHECKING:
    from phasebal.feeder import FeederModel


def load_feeder(path: Union[str, "os.PathLike[str]"]) -> "FeederModel":
    """
    从 JSON 文件加载馈线。

    参数:
        - path: 馈线文件路径

    返回:
        经过校验的 `FeederModel`。
    """

    with open(path, "r", encoding="utf-8") as fp:
        text = fp.read()
    return loads_feeder(text)


def loads_feeder(text: str) -> "FeederModel":
    """
    从 JSON 文本解析馈线。

    参数:
        - text: JSON 文本（拒绝 NaN/Infinity）

    返回:
        经过校验的 `FeederModel`。
    """

    try:
        document = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as ex:
        raise FeederSchemaError("document", f"JSON 解析失败: {ex.msg}（行 {ex.lineno}）") from ex
    return parse_feeder(document)


def parse_feeder(document: Any) -> "FeederModel":
    """
    从已解析的 JSON 文档构造馈线。

    参数:
        - document: 馈线文档（`dict`）

    返回:
        经过校验的 `FeederModel`。
    """

    from phasebal.feeder import Bus, BusKind, FeederModel, LineSegment, LoadSpec

    root = _mapping(document, "document")
    s_base_kva = _number(_required(root, "s_base_kva", "s_base_kva"), "s_base_kva")

    buses: List[Bus] = []
    for i, item in enumerate(_sequence(_required(root, "buses", "buses"), "buses")):
        path = f"buses[{i}]"
        entry = _mapping(item, path)
        identifier = _integer(_required(entry, "id", f"{path}.id"), f"{path}.id")
        kind_value = _required(entry, "kind", f"{path}.kind")
        kind = get_enum_member(BusKind, kind_value) if isinstance(kind_value, str) else None
        if kind is None:
            raise FeederSchemaError(f"{path}.kind", "必须为 \"slack\" 或 \"load\"。")
        phases_value = _required(entry, "phases", f"{path}.phases")
        if not isinstance(phases_value, str):
            raise FeederSchemaError(f"{path}.phases", "必须为相位字符串。")
        try:
            phases = parse_phases(phases_value)
        except ValueError as ex:
            raise FeederSchemaError(f"{path}.phases", str(ex)) from ex
        base_kv = _number(_required(entry, "base_kv", f"{path}.base_kv"), f"{path}.base_kv")
        if base_kv <= 0:
            raise FeederSchemaError(f"{path}.base_kv", "必须为正数。")
        buses.append(Bus(identifier, kind, phases, base_kv))

    segments: List[LineSegment] = []
    for i, item in enumerate(_sequence(root.get("segments", []), "segments")):
        path = f"segments[{i}]"
        entry = _mapping(item, path)
        from_bus = _integer(_required(entry, "from", f"{path}.from"), f"{path}.from")
        to_bus = _integer(_required(entry, "to", f"{path}.to"), f"{path}.to")
        z_ohm = _complex_matrix(_required(entry, "z_ohm", f"{path}.z_ohm"), f"{path}.z_ohm")
        y_shunt: Optional["npt.NDArray[np.complex128]"] = None
        if entry.get("y_shunt_s", None) is not None:
            y_shunt = _complex_matrix(entry["y_shunt_s"], f"{path}.y_shunt_s")
        segments.append(LineSegment(from_bus, to_bus, z_ohm, y_shunt))

    loads: List[LoadSpec] = []
    for i, item in enumerate(_sequence(root.get("loads", []), "loads")):
        path = f"loads[{i}]"
        entry = _mapping(item, path)
        bus = _integer(_required(entry, "bus", f"{path}.bus"), f"{path}.bus")
        phase_value = _required(entry, "phase", f"{path}.phase")
        phase = get_enum_member(Phase, phase_value) if isinstance(phase_value, str) else None
        if phase is None:
            raise FeederSchemaError(f"{path}.phase", "必须为 \"a\"、\"b\" 或 \"c\"。")
        p_kw = _number(_required(entry, "p_kw", f"{path}.p_kw"), f"{path}.p_kw")
        q_kvar = _number(_required(entry, "q_kvar", f"{path}.q_kvar"), f"{path}.q_kvar")
        loads.append(LoadSpec(bus, phase, p_kw, q_kvar))

    return FeederModel(s_base_kva, buses, segments, loads)


def _reject_constant(name: str) -> NoReturn:
    raise FeederSchemaError("document", f"不允许的数值常量 {name}。")


def _required(entry: Mapping[str, Any], key: str, path: str) -> Any:
    if key not in entry:
        raise FeederSchemaError(path, "缺少必需字段。")
    return entry[key]


def _mapping(value: Any, path: str) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        raise FeederSchemaError(path, "必须为对象。")
    return value  # type: ignore


def _sequence(value: Any, path: str) -> Sequence[Any]:
    if not isinstance(value, list):
        raise FeederSchemaError(path, "必须为数组。")
    return value  # type: ignore


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FeederSchemaError(path, "必须为数值。")
    if not math.isfinite(value):
        raise FeederSchemaError(path, "必须为有限数值。")
    return float(value)


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise FeederSchemaError(path, "必须为整数。")
    return value


def _complex_matrix(value: Any, path: str) -> "npt.NDArray[np.complex128]":
    rows = _sequence(value, path)
    if len(rows) != 3:
        raise FeederSchemaError(path, "必须为 3×3 矩阵。")
    matrix = np.zeros((3, 3), dtype=np.complex128)
    for r, row in enumerate(rows):
        cells = _sequence(row, f"{path}[{r}]")
        if len(cells) != 3:
            raise FeederSchemaError(f"{path}[{r}]", "每行必须有 3 个元素。")
        for c, cell in enumerate(cells):
            pair = _sequence(cell, f"{path}[{r}][{c}]")
            if len(pair) != 2:
                raise FeederSchemaError(f"{path}[{r}][{c}]", "必须为 [实部, 虚部]。")
            real = _number(pair[0], f"{path}[{r}][{c}][0]")
            imag = _number(pair[1], f"{path}[{r}][{c}][1]")
            matrix[r, c] = complex(real, imag)
    return matrix

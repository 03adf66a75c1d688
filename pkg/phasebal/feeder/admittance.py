from typing import TYPE_CHECKING, List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from phasebal.exception import SingularImpedanceError

if TYPE_CHECKING:
    from phasebal.feeder import FeederModel, LineSegment

# 条件数超过该值视为奇异。
_SINGULAR_CONDITION = 1.0 / np.finfo(np.float64).eps


def branch_stamp(
    model: "FeederModel",
    segment: "LineSegment"
) -> Tuple["npt.NDArray[np.complex128]", Optional["npt.NDArray[np.complex128]"]]:
    """
    计算线路段在其存在相位上的标幺化串联导纳与单端并联导纳。

    参数:
        - model: 线路段所属馈线
        - segment: 线路段

    返回:
        (串联导纳矩阵, 单端并联导纳矩阵或 `None`)，维度均为存在相位数。
    """

    phases = model.segment_phases(segment)
    rows = [phase.index for phase in phases]
    base = model.per_unit(segment.from_bus)
    z_pu = base.impedance_to_pu(segment.z_ohm[np.ix_(rows, rows)])
    if not np.all(np.isfinite(z_pu)) or np.linalg.cond(z_pu) > _SINGULAR_CONDITION:
        raise SingularImpedanceError(
            f"线路段 {segment.from_bus}-{segment.to_bus} 的阻抗矩阵奇异。"
        )
    series = np.linalg.inv(z_pu)
    shunt = None
    if segment.y_shunt_s is not None:
        shunt = base.admittance_to_pu(segment.y_shunt_s[np.ix_(rows, rows)]) / 2
    return series, shunt


def assemble_admittance(model: "FeederModel") -> "npt.NDArray[np.complex128]":
    """
    组装标幺化节点导纳矩阵。

    维度为全部端子数，端子顺序与 `FeederModel.terminals` 一致。
    线路段按规范顺序叠加，因此结果与输入中线路段的顺序无关。

    参数:
        - model: 馈线模型

    返回:
        复数导纳矩阵。
    """

    size = len(model.terminals)
    admittance = np.zeros((size, size), dtype=np.complex128)
    for segment in model.segments:
        series, shunt = branch_stamp(model, segment)
        phases = model.segment_phases(segment)
        head: List[int] = [model.index_of(segment.from_bus, phase) for phase in phases]
        tail: List[int] = [model.index_of(segment.to_bus, phase) for phase in phases]
        admittance[np.ix_(head, head)] += series
        admittance[np.ix_(tail, tail)] += series
        admittance[np.ix_(head, tail)] -= series
        admittance[np.ix_(tail, head)] -= series
        if shunt is not None:
            admittance[np.ix_(head, head)] += shunt
            admittance[np.ix_(tail, tail)] += shunt
    return admittance

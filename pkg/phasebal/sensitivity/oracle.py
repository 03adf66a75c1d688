import logging
from typing import TYPE_CHECKING, Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from phasebal.constant import FINITE_DIFFERENCE_STEP
from phasebal.feeder import FeederModel
from phasebal.metrics import Metric, metric_value
from phasebal.phase import LinePair
from phasebal.powerflow import InjectionVector, PowerFlowOptions, VoltageState, solve

if TYPE_CHECKING:
    from phasebal.sensitivity import ControlVariable

_logger = logging.getLogger(__name__)

ORACLE_OPTIONS = PowerFlowOptions(tolerance=1e-12, max_iterations=200)
"""
有限差分校验使用的潮流选项（比默认容差更严格，以免收敛误差淹没差分）。
"""

Quantity = Callable[[VoltageState], "npt.ArrayLike"]
"""
被差分的量：从运行点映射到实数标量或向量。
"""


def _control_columns(
    injections: InjectionVector,
    controls: Optional[Iterable[Union[int, "ControlVariable"]]]
) -> List[int]:
    from phasebal.sensitivity import CONTROL_KINDS, ControlVariable

    size = 2 * len(injections.terminals)
    if controls is None:
        return list(range(size))
    # 控制变量顺序只依赖端子顺序。
    order = [
        ControlVariable(terminal.bus, terminal.phase, kind)
        for kind in CONTROL_KINDS
        for terminal in injections.terminals
    ]
    columns: List[int] = []
    for control in controls:
        if isinstance(control, ControlVariable) and control in order:
            columns.append(order.index(control))
        elif isinstance(control, int) and 0 <= control < size:
            columns.append(control)
        else:
            raise ValueError(f"无效的控制变量: {control!r}")
    return columns


def finite_difference(
    model: FeederModel,
    injections: InjectionVector,
    quantity: Quantity,
    controls: Optional[Iterable[Union[int, "ControlVariable"]]] = None,
    step: float = FINITE_DIFFERENCE_STEP,
    options: Optional[PowerFlowOptions] = None
) -> "npt.NDArray[np.float64]":
    """
    通过完整潮流计算中心差分 (f(x+h) − f(x−h)) / 2h。

    参数:
        - model: 馈线模型
        - injections: 运行点注入
        - quantity: 被差分的量
        - controls: 控制变量或其下标（默认全部）
        - step: 差分步长（标幺值）
        - options: 潮流选项（默认 `ORACLE_OPTIONS`）

    返回:
        维度为 (量的长度, 控制变量数) 的差分矩阵；标量量返回 (1, 控制变量数)。
    """

    if not step > 0:
        raise ValueError("差分步长必须为正数。")
    options = options or ORACLE_OPTIONS
    columns = _control_columns(injections, controls)
    _logger.debug("中心差分: %d 个控制变量，步长 %.1e。", len(columns), step)
    results: List["npt.NDArray[np.float64]"] = []
    for column in columns:
        forward = _evaluate(model, injections.perturbed(column, step), quantity, options)
        backward = _evaluate(model, injections.perturbed(column, -step), quantity, options)
        results.append((forward - backward) / (2 * step))
    return _stack(results)


def one_sided_difference(
    model: FeederModel,
    injections: InjectionVector,
    quantity: Quantity,
    controls: Optional[Iterable[Union[int, "ControlVariable"]]] = None,
    step: float = FINITE_DIFFERENCE_STEP,
    options: Optional[PowerFlowOptions] = None
) -> "npt.NDArray[np.float64]":
    """
    通过完整潮流计算单侧差分 (f(x+h) − f(x)) / h。

    用于 PVUR/LVUR 这类分段光滑的量：`step` 取负值即为后向差分，
    以保证扰动不跨越情形分界。

    参数:
        - model: 馈线模型
        - injections: 运行点注入
        - quantity: 被差分的量
        - controls: 控制变量或其下标（默认全部）
        - step: 带符号差分步长（标幺值）
        - options: 潮流选项（默认 `ORACLE_OPTIONS`）

    返回:
        维度为 (量的长度, 控制变量数) 的差分矩阵。
    """

    if step == 0 or not np.isfinite(step):
        raise ValueError("差分步长必须为非零有限数值。")
    options = options or ORACLE_OPTIONS
    columns = _control_columns(injections, controls)
    center = _evaluate(model, injections, quantity, options)
    results = [
        (_evaluate(model, injections.perturbed(column, step), quantity, options) - center) / step
        for column in columns
    ]
    return _stack(results)


def magnitude_quantity() -> Quantity:
    """
    全部端子的相电压幅值。
    """

    return lambda state: np.abs(state.voltages)


def line_magnitude_quantity(
    model: FeederModel,
    rows: Sequence[Tuple[int, LinePair]]
) -> Quantity:
    """
    指定 (母线, 相对) 的线电压幅值。

    参数:
        - model: 馈线模型
        - rows: (母线 ID, `LinePair`) 序列

    返回:
        被差分的量。
    """

    def evaluate(state: VoltageState) -> "npt.NDArray[np.float64]":
        values: List[float] = []
        for bus, pair in rows:
            first, second = pair.phases
            v = state.voltages[model.index_of(bus, first)]
            v -= state.voltages[model.index_of(bus, second)]
            values.append(float(abs(v)))
        return np.array(values, dtype=np.float64)

    return evaluate


def metric_quantity(
    model: FeederModel,
    metric: Metric,
    buses: Union[int, Sequence[int]]
) -> Quantity:
    """
    指定母线上的不平衡指标。

    参数:
        - model: 馈线模型
        - metric: 指标
        - buses: 三相母线 ID 或其序列

    返回:
        被差分的量。
    """

    targets = [buses] if isinstance(buses, int) else list(buses)
    return lambda state: np.array(
        [metric_value(model, state, bus, metric) for bus in targets],
        dtype=np.float64
    )


def _evaluate(
    model: FeederModel,
    injections: InjectionVector,
    quantity: Quantity,
    options: PowerFlowOptions
) -> "npt.NDArray[np.float64]":
    return np.atleast_1d(np.asarray(quantity(solve(model, injections, options)), dtype=np.float64))


def _stack(columns: List["npt.NDArray[np.float64]"]) -> "npt.NDArray[np.float64]":
    if not columns:
        return np.zeros((0, 0), dtype=np.float64)
    return np.column_stack(columns)

from typing import Optional

import numpy as np
import numpy.typing as npt


class PhasebalException(Exception):
    """
    当 Phasebal 出现异常时抛出。
    """

    pass


class InvalidTargetError(PhasebalException):
    """
    当目标无效时抛出（例如在缺少相位的母线上请求线电压）。
    """

    pass


class NotSupportedError(PhasebalException):
    """
    当操作不支持时抛出。
    """

    pass


class ConfigurationError(PhasebalException):
    """
    当运行配置或负荷曲线文件无效时抛出。
    """

    pass


class FeederError(PhasebalException):
    """
    当馈线输入数据无效时抛出。
    """

    pass


class FeederSchemaError(FeederError):
    """
    当馈线文件不符合格式要求时抛出。
    """

    _field: str

    def __init__(self, field: str, message: str) -> None:
        """
        初始化 `FeederSchemaError` 实例。

        参数:
            - field: 出错字段的路径（如 `segments[2].z_ohm`）
            - message: 错误消息
        """

        super().__init__(f"{field}: {message}")
        self._field = field

    @property
    def field(self) -> str:
        """
        出错字段的路径。
        """

        return self._field


class DuplicateBusError(FeederError):
    """
    当母线 ID 重复时抛出。
    """

    pass


class SlackBusError(FeederError):
    """
    当平衡母线缺失、重复或不满足三相要求时抛出。
    """

    pass


class TopologyError(FeederError):
    """
    当网络拓扑不是连通的辐射状网络时抛出。
    """

    pass


class SingularImpedanceError(FeederError):
    """
    当支路阻抗矩阵在其存在的相位上奇异时抛出。
    """

    pass


class NumericalError(PhasebalException):
    """
    当数值计算失败时抛出。
    """

    pass


class PowerFlowDivergedError(NumericalError):
    """
    当潮流计算在最大迭代次数内未收敛时抛出。
    """

    _residual: float
    _iterations: int

    def __init__(self, residual: float, iterations: int) -> None:
        """
        初始化 `PowerFlowDivergedError` 实例。

        参数:
            - residual: 最终功率失配（标幺值）
            - iterations: 已执行的迭代次数
        """

        super().__init__(f"潮流计算在 {iterations} 次迭代后未收敛，最终失配为 {residual:.3e}。")
        self._residual = residual
        self._iterations = iterations

    @property
    def residual(self) -> float:
        """
        最终功率失配（标幺值）。
        """

        return self._residual

    @property
    def iterations(self) -> int:
        """
        已执行的迭代次数。
        """

        return self._iterations


class SingularSystemError(NumericalError):
    """
    当线性方程组奇异时抛出。
    """

    _condition: float

    def __init__(self, message: str, condition: float) -> None:
        """
        初始化 `SingularSystemError` 实例。

        参数:
            - message: 错误消息
            - condition: 条件数估计
        """

        super().__init__(f"{message}（条件数估计: {condition:.3e}）")
        self._condition = condition

    @property
    def condition(self) -> float:
        """
        条件数估计。
        """

        return self._condition


class DegeneratePointError(NumericalError):
    """
    当运行点退化（电压或序分量幅值为零）导致量不可微时抛出。
    """

    _bus: Optional[int]

    def __init__(self, message: str, bus: Optional[int] = None) -> None:
        """
        初始化 `DegeneratePointError` 实例。

        参数:
            - message: 错误消息
            - bus: 发生退化的母线 ID（未知时为 `None`）
        """

        super().__init__(message if bus is None else f"母线 {bus}: {message}")
        self._bus = bus

    @property
    def bus(self) -> Optional[int]:
        """
        发生退化的母线 ID。
        """

        return self._bus


class BalancingError(NumericalError):
    """
    当无法构造相平衡问题时抛出。
    """

    pass


class ActuationError(NumericalError):
    """
    当执行平衡决策后潮流计算失败时抛出。
    """

    _deviation: "npt.NDArray[np.float64]"

    def __init__(self, message: str, deviation: "npt.NDArray[np.float64]") -> None:
        """
        初始化 `ActuationError` 实例。

        参数:
            - message: 错误消息
            - deviation: 导致失败的注入偏差（按控制变量顺序）
        """

        super().__init__(message)
        self._deviation = deviation

    @property
    def deviation(self) -> "npt.NDArray[np.float64]":
        """
        导致失败的注入偏差。
        """

        return self._deviation


class KinkWarning(UserWarning):
    """
    当 PVUR/LVUR 在两种情形的分界处（不可微点）线性化时发出。
    """

    pass


class SkippedBusWarning(UserWarning):
    """
    当母线因退化被跳过时发出。
    """

    pass

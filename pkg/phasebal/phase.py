from enum import Enum
from functools import total_ordering
from typing import Any, Tuple


@total_ordering
class Phase(Enum):
    """
    相位。

    相位之间存在固定的全序 a < b < c。
    """

    A = "a"
    """
    a 相。
    """

    B = "b"
    """
    b 相。
    """

    C = "c"
    """
    c 相。
    """

    @property
    def index(self) -> int:
        """
        相位在 (a, b, c) 中的序号。
        """

        return _PHASE_ORDER.index(self.value)

    def __lt__(self, other: Any) -> bool:
        if not isinstance(other, Phase):
            return NotImplemented
        return self.index < other.index


_PHASE_ORDER = "abc"

PHASES: Tuple[Phase, Phase, Phase] = (Phase.A, Phase.B, Phase.C)
"""
按序排列的全部相位。
"""


@total_ordering
class LinePair(Enum):
    """
    线电压相对。

    相对之间存在固定的全序 ab < bc < ca。
    """

    AB = "ab"
    """
    v_ab = v_a - v_b。
    """

    BC = "bc"
    """
    v_bc = v_b - v_c。
    """

    CA = "ca"
    """
    v_ca = v_c - v_a。
    """

    @property
    def phases(self) -> Tuple[Phase, Phase]:
        """
        构成该线电压的两个相位（被减数在前）。
        """

        return Phase(self.value[0]), Phase(self.value[1])

    @property
    def index(self) -> int:
        """
        相对在 (ab, bc, ca) 中的序号。
        """

        return LINE_PAIRS.index(self)

    def __lt__(self, other: Any) -> bool:
        if not isinstance(other, LinePair):
            return NotImplemented
        return self.index < other.index


LINE_PAIRS: Tuple[LinePair, LinePair, LinePair] = (LinePair.AB, LinePair.BC, LinePair.CA)
"""
按序排列的全部线电压相对。
"""


def parse_phases(text: str) -> Tuple[Phase, ...]:
    """
    解析相位字符串（如 `"abc"`、`"ac"`）。

    参数:
        - text: 相位字符串

    返回:
        按 a < b < c 排序的相位元组。
    """

    if not text or len(set(text)) != len(text) or not set(text) <= set(_PHASE_ORDER):
        raise ValueError(f"无效的相位字符串: {text!r}")
    return tuple(sorted(Phase(char) for char in text))

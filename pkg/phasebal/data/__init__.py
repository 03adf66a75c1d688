import os
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import pandas as pd

from phasebal.exception import ConfigurationError

FOUR_BUS = "four_bus.json"
"""
4 母线三相不平衡合成馈线。
"""

THIRTY_BUS = "thirty_bus.json"
"""
30 母线辐射状合成馈线，含单相及两相分支。
"""

PROFILE_24H = "profile_24h.csv"
"""
24 时段合成负荷曲线（非实测数据）。
"""


def bundled_path(name: str) -> Path:
    """
    获取随包数据文件的路径。

    参数:
        - name: 文件名（如 `FOUR_BUS`），可省略扩展名

    返回:
        文件路径。
    """

    directory = Path(__file__).parent
    for candidate in (name, f"{name}.json", f"{name}.csv"):
        path = directory / candidate
        if path.is_file():
            return path
    raise ConfigurationError(f"随包数据 {name!r} 不存在。")


def load_profile(path: Union[str, "os.PathLike[str]"]) -> Tuple[float, ...]:
    """
    加载负荷曲线 CSV（列 `step`、`factor`，`#` 开头为注释行）。

    参数:
        - path: 文件路径

    返回:
        按 `step` 升序排列的负荷倍数。
    """

    try:
        frame = pd.read_csv(path, comment="#", skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as ex:
        raise ConfigurationError(f"负荷曲线解析失败: {ex}") from ex
    missing = {"step", "factor"} - set(frame.columns)
    if missing:
        raise ConfigurationError(f"负荷曲线缺少列: {', '.join(sorted(missing))}。")
    if frame.empty:
        raise ConfigurationError("负荷曲线为空。")
    try:
        steps = frame["step"].astype(np.int64)
        factors = frame["factor"].astype(np.float64)
    except (TypeError, ValueError) as ex:
        raise ConfigurationError(f"负荷曲线包含非数值: {ex}") from ex
    if steps.duplicated().any():
        raise ConfigurationError("负荷曲线的时段序号重复。")
    if not np.all(np.isfinite(factors)) or np.any(factors < 0):
        raise ConfigurationError("负荷倍数必须为非负有限数值。")
    order = np.argsort(steps.to_numpy(), kind="stable")
    return tuple(float(value) for value in factors.to_numpy()[order])

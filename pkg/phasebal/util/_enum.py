from enum import Enum
from typing import Any, Optional, Type, TypeVar

_T_Enum = TypeVar("_T_Enum", bound=Enum)


def get_enum_member(enum: Type[_T_Enum], value: Any) -> Optional[_T_Enum]:
    """
    获取 `Enum` 值对应的成员。

    参数:
        - enum: Enum 类型
        - value: 将要查询对应成员的值

    返回:
        当值存在时返回对应成员；否则返回 `None`。
    """

    member = enum._value2member_map_.get(value, None)  # type: ignore
    return member  # type: ignore

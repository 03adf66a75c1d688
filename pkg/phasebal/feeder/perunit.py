from dataclasses import dataclass
from typing import TypeVar

import numpy as np

_Quantity = TypeVar("_Quantity")


@dataclass(frozen=True)
class PerUnitBase:
    """
    标幺值基准。

    每相功率基准为系统容量 `s_base_kva`，电压基准为母线的相电压 `v_base_kv`，
    阻抗基准 `z_base = v_base² · 1000 / s_base`。
    """

    s_base_kva: float
    """
    每相功率基准（kVA）。
    """

    v_base_kv: float
    """
    相电压基准（kV，相对中性点）。
    """

    def __post_init__(self) -> None:
        if not (np.isfinite(self.s_base_kva) and self.s_base_kva > 0):
            raise ValueError("功率基准必须为正数。")
        if not (np.isfinite(self.v_base_kv) and self.v_base_kv > 0):
            raise ValueError("电压基准必须为正数。")

    @property
    def z_base_ohm(self) -> float:
        """
        阻抗基准（Ω）。
        """

        return self.v_base_kv ** 2 * 1000.0 / self.s_base_kva

    @property
    def i_base_a(self) -> float:
        """
        电流基准（A）。
        """

        return self.s_base_kva / self.v_base_kv

    def power_to_pu(self, power_kva: _Quantity) -> _Quantity:
        return power_kva / self.s_base_kva  # type: ignore

    def power_from_pu(self, power_pu: _Quantity) -> _Quantity:
        return power_pu * self.s_base_kva  # type: ignore

    def voltage_to_pu(self, voltage_kv: _Quantity) -> _Quantity:
        return voltage_kv / self.v_base_kv  # type: ignore

    def voltage_from_pu(self, voltage_pu: _Quantity) -> _Quantity:
        return voltage_pu * self.v_base_kv  # type: ignore

    def current_to_pu(self, current_a: _Quantity) -> _Quantity:
        return current_a / self.i_base_a  # type: ignore

    def current_from_pu(self, current_pu: _Quantity) -> _Quantity:
        return current_pu * self.i_base_a  # type: ignore

    def impedance_to_pu(self, impedance_ohm: _Quantity) -> _Quantity:
        return impedance_ohm / self.z_base_ohm  # type: ignore

    def impedance_from_pu(self, impedance_pu: _Quantity) -> _Quantity:
        return impedance_pu * self.z_base_ohm  # type: ignore

    def admittance_to_pu(self, admittance_s: _Quantity) -> _Quantity:
        return admittance_s * self.z_base_ohm  # type: ignore

    def admittance_from_pu(self, admittance_pu: _Quantity) -> _Quantity:
        return admittance_pu / self.z_base_ohm  # type: ignore

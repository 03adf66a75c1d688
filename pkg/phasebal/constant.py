import cmath
import math

POWER_FLOW_TOLERANCE: float = 1e-10
"""
潮流收敛判据：最大复功率失配（标幺值）。
"""

POWER_FLOW_MAX_ITERATIONS: int = 100
"""
潮流最大迭代次数。
"""

SEQUENCE_EPSILON: float = 1e-9
"""
序分量幅值的退化阈值。
"""

KINK_TOLERANCE: float = 1e-12
"""
PVUR/LVUR 情形偏差并列的判定容差。
"""

FINITE_DIFFERENCE_STEP: float = 1e-6
"""
有限差分校验的默认步长（标幺值）。
"""

METRIC_CAP: float = 0.02
"""
不平衡指标上限（IEEE/IEC/NEMA 限值 2%）。
"""

VOLTAGE_MIN: float = 0.95
"""
电压幅值下限（标幺值）。
"""

VOLTAGE_MAX: float = 1.05
"""
电压幅值上限（标幺值）。
"""

BETA_MAX: float = 0.05
"""
灵活性系数上限。
"""

RELAXATION_PENALTY: float = 1e4
"""
指标上限松弛变量的罚系数（相对于目标函数尺度）。
"""

FEASIBILITY_TOLERANCE: float = 1e-9
"""
决策可行性（边界、守恒）的容差。
"""

PIVOT_TOLERANCE: float = 1e-12
"""
LU 分解主元相对于最大主元的奇异判定阈值。
"""

ALPHA: complex = cmath.rect(1.0, 2 * math.pi / 3)
"""
对称分量算子 e^{j2π/3}。
"""

SLACK_REFERENCE = (
    complex(1.0, 0.0),
    cmath.rect(1.0, -2 * math.pi / 3),
    cmath.rect(1.0, 2 * math.pi / 3),
)
"""
平衡母线 a、b、c 三相参考电压（标幺值）。
"""

PHASEBAL_OUT_ENV: str = "PHASEBAL_OUT"
"""
默认输出目录的环境变量名。
"""

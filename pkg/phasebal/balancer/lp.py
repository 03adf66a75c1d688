import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from phasebal.constant import FEASIBILITY_TOLERANCE
from phasebal.exception import NotSupportedError, NumericalError

_logger = logging.getLogger(__name__)


def _frozen(value: "npt.ArrayLike", shape: Tuple[int, ...]) -> "npt.NDArray[np.float64]":
    array = np.array(value, dtype=np.float64).reshape(shape)
    array.setflags(write=False)
    return array


class LinearProgram:
    """
    线性规划 min c·x + c0，约束 A_ub·x ≤ b_ub，A_eq·x = b_eq，lower ≤ x ≤ upper。
    """

    _cost: "npt.NDArray[np.float64]"
    _constant: float
    _a_ub: "npt.NDArray[np.float64]"
    _b_ub: "npt.NDArray[np.float64]"
    _a_eq: "npt.NDArray[np.float64]"
    _b_eq: "npt.NDArray[np.float64]"
    _lower: "npt.NDArray[np.float64]"
    _upper: "npt.NDArray[np.float64]"
    _labels: Tuple[str, ...]
    _row_labels: Tuple[str, ...]
    _relaxable: Tuple[int, ...]

    def __init__(
        self,
        cost: "npt.ArrayLike",
        a_ub: "npt.ArrayLike",
        b_ub: "npt.ArrayLike",
        a_eq: "npt.ArrayLike",
        b_eq: "npt.ArrayLike",
        lower: "npt.ArrayLike",
        upper: "npt.ArrayLike",
        constant: float = 0.0,
        labels: Optional[Sequence[str]] = None,
        row_labels: Optional[Sequence[str]] = None,
        relaxable: Sequence[int] = ()
    ) -> None:
        """
        初始化 `LinearProgram` 实例。

        参数:
            - cost: 目标函数系数 c
            - a_ub: 不等式约束矩阵
            - b_ub: 不等式约束右端项
            - a_eq: 等式约束矩阵
            - b_eq: 等式约束右端项
            - lower: 变量下界
            - upper: 变量上界（可为 `inf`）
            - constant: 目标函数常数项 c0
            - labels: 变量名称
            - row_labels: 不等式约束名称
            - relaxable: 可松弛（弹性化）的不等式约束下标
        """

        n = np.size(cost)
        self._cost = _frozen(cost, (n,))
        m_ub = np.size(b_ub)
        m_eq = np.size(b_eq)
        self._a_ub = _frozen(a_ub, (m_ub, n))
        self._b_ub = _frozen(b_ub, (m_ub,))
        self._a_eq = _frozen(a_eq, (m_eq, n))
        self._b_eq = _frozen(b_eq, (m_eq,))
        self._lower = _frozen(lower, (n,))
        self._upper = _frozen(upper, (n,))
        if np.any(self._lower > self._upper):
            raise ValueError("变量下界不能大于上界。")
        self._constant = float(constant)
        self._labels = tuple(labels) if labels is not None else tuple(f"x{j}" for j in range(n))
        self._row_labels = (
            tuple(row_labels) if row_labels is not None else tuple(f"r{i}" for i in range(m_ub))
        )
        if len(self._labels) != n or len(self._row_labels) != m_ub:
            raise ValueError("变量或约束名称数量不一致。")
        if any(not 0 <= i < m_ub for i in relaxable):
            raise ValueError("可松弛约束下标越界。")
        self._relaxable = tuple(sorted(set(relaxable)))

    @property
    def cost(self) -> "npt.NDArray[np.float64]":
        """
        目标函数系数。
        """

        return self._cost

    @property
    def constant(self) -> float:
        """
        目标函数常数项。
        """

        return self._constant

    @property
    def a_ub(self) -> "npt.NDArray[np.float64]":
        return self._a_ub

    @property
    def b_ub(self) -> "npt.NDArray[np.float64]":
        return self._b_ub

    @property
    def a_eq(self) -> "npt.NDArray[np.float64]":
        return self._a_eq

    @property
    def b_eq(self) -> "npt.NDArray[np.float64]":
        return self._b_eq

    @property
    def lower(self) -> "npt.NDArray[np.float64]":
        return self._lower

    @property
    def upper(self) -> "npt.NDArray[np.float64]":
        return self._upper

    @property
    def labels(self) -> Tuple[str, ...]:
        """
        变量名称。
        """

        return self._labels

    @property
    def row_labels(self) -> Tuple[str, ...]:
        """
        不等式约束名称。
        """

        return self._row_labels

    @property
    def relaxable(self) -> Tuple[int, ...]:
        """
        可松弛的不等式约束下标。
        """

        return self._relaxable

    @property
    def variable_count(self) -> int:
        """
        变量数。
        """

        return self._cost.size

    def objective(self, x: "npt.ArrayLike") -> float:
        """
        计算目标函数值 c·x + c0。

        参数:
            - x: 变量取值

        返回:
            目标函数值。
        """

        return float(self._cost @ np.asarray(x, dtype=np.float64)) + self._constant

    def is_feasible(self, x: "npt.ArrayLike", tolerance: float = FEASIBILITY_TOLERANCE) -> bool:
        """
        检查点是否满足全部约束。

        参数:
            - x: 变量取值
            - tolerance: 容差

        返回:
            是否可行。
        """

        point = np.asarray(x, dtype=np.float64)
        return bool(
            np.all(self._a_ub @ point <= self._b_ub + tolerance)
            and np.all(np.abs(self._a_eq @ point - self._b_eq) <= tolerance)
            and np.all(point >= self._lower - tolerance)
            and np.all(point <= self._upper + tolerance)
        )

    def to_inequality_form(self) -> Tuple["npt.NDArray[np.float64]", "npt.NDArray[np.float64]"]:
        """
        将有限的变量边界展开为不等式约束行（上界行在前，下界行在后），追加在原不等式约束之后。

        返回:
            (A, b)，满足 A·x ≤ b。
        """

        n = self.variable_count
        identity = np.eye(n)
        upper = np.isfinite(self._upper)
        lower = np.isfinite(self._lower)
        a = np.vstack([self._a_ub, identity[upper], -identity[lower]])
        b = np.concatenate([self._b_ub, self._upper[upper], -self._lower[lower]])
        return a, b

    def relaxed(self, penalty: float) -> "LinearProgram":
        """
        为每个可松弛约束追加非负松弛变量 s，约束变为 a·x − s ≤ b，目标函数追加 penalty·Σs。

        参数:
            - penalty: 松弛变量的罚系数

        返回:
            新的 `LinearProgram`，松弛变量位于原变量之后。
        """

        if not penalty > 0:
            raise ValueError("罚系数必须为正数。")
        k = len(self._relaxable)
        elastic = np.zeros((self._b_ub.size, k))
        for column, row in enumerate(self._relaxable):
            elastic[row, column] = -1.0
        return LinearProgram(
            np.concatenate([self._cost, np.full(k, penalty)]),
            np.hstack([self._a_ub, elastic]),
            self._b_ub,
            np.hstack([self._a_eq, np.zeros((self._b_eq.size, k))]),
            self._b_eq,
            np.concatenate([self._lower, np.zeros(k)]),
            np.concatenate([self._upper, np.full(k, np.inf)]),
            self._constant,
            self._labels + tuple(f"slack:{self._row_labels[row]}" for row in self._relaxable),
            self._row_labels
        )


class LpStatus(Enum):
    """
    线性规划求解状态。
    """

    OPTIMAL = "optimal"
    """
    找到最优解。
    """

    INFEASIBLE = "infeasible"
    """
    问题不可行。
    """

    UNBOUNDED = "unbounded"
    """
    目标函数无下界。
    """


@dataclass(frozen=True, eq=False)
class LpSolution:
    """
    线性规划的解。
    """

    status: LpStatus
    """
    求解状态。
    """

    x: "npt.NDArray[np.float64]"
    """
    变量取值（非最优时为零向量）。
    """

    objective: float
    """
    目标函数值（含常数项，非最优时为 NaN）。
    """

    iterations: int
    """
    迭代（换基）次数。
    """


class LpSolver(ABC):
    """
    线性规划求解器。
    """

    @abstractmethod
    def solve(self, lp: LinearProgram) -> LpSolution:
        """
        求解线性规划。

        参数:
            - lp: 线性规划

        返回:
            以 `LpSolution` 类型表示的解。
        """

        raise NotImplementedError


class SimplexSolver(LpSolver):
    """
    稠密两阶段单纯形法，使用 Bland 规则选择进基、出基变量，结果确定且不会循环。
    """

    _tolerance: float
    _max_iterations: Optional[int]

    def __init__(self, tolerance: float = 1e-9, max_iterations: Optional[int] = None) -> None:
        """
        初始化 `SimplexSolver` 实例。

        参数:
            - tolerance: 主元及检验数的容差
            - max_iterations: 每阶段最大换基次数（默认按问题规模确定）
        """

        if not tolerance > 0:
            raise ValueError("容差必须为正数。")
        self._tolerance = tolerance
        self._max_iterations = max_iterations

    def solve(self, lp: LinearProgram) -> LpSolution:
        if not np.all(np.isfinite(lp.lower)):
            raise NotSupportedError("单纯形法要求全部变量具有有限下界。")
        n = lp.variable_count
        lower = lp.lower

        # 平移 y = x − lower ≥ 0，有限上界转为约束行。
        bounded = [j for j in range(n) if np.isfinite(lp.upper[j])]
        m_ub = lp.b_ub.size + len(bounded)
        m_eq = lp.b_eq.size
        a_ub = np.zeros((m_ub, n))
        a_ub[:lp.b_ub.size] = lp.a_ub
        b_ub = np.zeros(m_ub)
        b_ub[:lp.b_ub.size] = lp.b_ub - lp.a_ub @ lower
        for row, j in enumerate(bounded, start=lp.b_ub.size):
            a_ub[row, j] = 1.0
            b_ub[row] = lp.upper[j] - lower[j]
        b_eq = lp.b_eq - lp.a_eq @ lower

        # 标准形: [A_ub I; A_eq 0]·[y; s] = b。
        m = m_ub + m_eq
        columns = n + m_ub
        a = np.zeros((m, columns))
        a[:m_ub, :n] = a_ub
        a[:m_ub, n:] = np.eye(m_ub)
        a[m_ub:, :n] = lp.a_eq
        b = np.concatenate([b_ub, b_eq])
        negative = b < 0
        a[negative] *= -1
        b[negative] *= -1
        cost = np.concatenate([lp.cost, np.zeros(m_ub)])

        limit = self._max_iterations or 50 * (m + columns + 1)
        tableau = _Tableau(a, b, self._tolerance)
        phase_one = tableau.minimize_artificial(limit)
        if phase_one > self._tolerance * max(1.0, float(np.max(b, initial=0.0))):
            _logger.debug("单纯形法第一阶段目标 %.3e，问题不可行。", phase_one)
            return LpSolution(LpStatus.INFEASIBLE, np.zeros(n), float("nan"), tableau.iterations)
        tableau.drop_artificial()
        if not tableau.minimize(cost, limit):
            return LpSolution(LpStatus.UNBOUNDED, np.zeros(n), float("nan"), tableau.iterations)
        y = tableau.point()[:n]
        x = y + lower
        return LpSolution(LpStatus.OPTIMAL, x, lp.objective(x), tableau.iterations)


class _Tableau:
    """
    单纯形表 T = [A | b]，最后一行为检验数行 [r | −z]。
    """

    _table: "npt.NDArray[np.float64]"
    _basis: List[int]
    _columns: int
    _tolerance: float
    iterations: int

    def __init__(
        self,
        a: "npt.NDArray[np.float64]",
        b: "npt.NDArray[np.float64]",
        tolerance: float
    ) -> None:
        m, columns = a.shape
        self._columns = columns
        self._tolerance = tolerance
        # 每行一个人工变量，初始基即人工变量。
        self._table = np.zeros((m + 1, columns + m + 1))
        self._table[:m, :columns] = a
        self._table[:m, columns:columns + m] = np.eye(m)
        self._table[:m, -1] = b
        self._basis = list(range(columns, columns + m))
        self.iterations = 0

    def minimize_artificial(self, limit: int) -> float:
        m = len(self._basis)
        self._table[-1] = 0.0
        self._table[-1, :self._columns] = -self._table[:m, :self._columns].sum(axis=0)
        self._table[-1, -1] = -self._table[:m, -1].sum()
        if not self._run(self._columns + m, limit):
            raise NumericalError("单纯形法第一阶段无界。")
        return -float(self._table[-1, -1])

    def drop_artificial(self) -> None:
        row = 0
        while row < len(self._basis):
            if self._basis[row] >= self._columns:
                pivots = np.flatnonzero(np.abs(self._table[row, :self._columns]) > self._tolerance)
                if pivots.size:
                    self._pivot(row, int(pivots[0]))
                else:
                    # 冗余约束行。
                    self._table = np.delete(self._table, row, axis=0)
                    del self._basis[row]
                    continue
            row += 1
        self._table = np.delete(
            self._table, np.s_[self._columns:self._table.shape[1] - 1], axis=1
        )

    def minimize(self, cost: "npt.NDArray[np.float64]", limit: int) -> bool:
        m = len(self._basis)
        basic_cost = cost[self._basis]
        self._table[-1, :self._columns] = cost - basic_cost @ self._table[:m, :self._columns]
        self._table[-1, -1] = -float(basic_cost @ self._table[:m, -1])
        return self._run(self._columns, limit)

    def point(self) -> "npt.NDArray[np.float64]":
        values = np.zeros(self._columns)
        for row, column in enumerate(self._basis):
            values[column] = self._table[row, -1]
        return values

    def _run(self, active: int, limit: int) -> bool:
        tol = self._tolerance
        for _ in range(limit):
            reduced = self._table[-1, :active]
            entering = np.flatnonzero(reduced < -tol)
            if not entering.size:
                return True
            column = int(entering[0])
            pivot_column = self._table[:-1, column]
            candidates = np.flatnonzero(pivot_column > tol)
            if not candidates.size:
                return False
            ratios = self._table[candidates, -1] / pivot_column[candidates]
            best = ratios.min()
            tied = candidates[ratios <= best + tol * max(1.0, abs(best))]
            row = int(min(tied, key=lambda i: self._basis[i]))
            self._pivot(row, column)
        raise NumericalError("单纯形法迭代次数超过上限。")

    def _pivot(self, row: int, column: int) -> None:
        table = self._table
        pivot_row = table[row] / table[row, column]
        factors = table[:, column].copy()
        factors[row] = 0.0
        table -= np.outer(factors, pivot_row)
        table[row] = pivot_row
        self._basis[row] = column
        self.iterations += 1


class HighsSolver(LpSolver):
    """
    基于 `scipy.optimize.linprog`（HiGHS）的求解器。
    """

    def solve(self, lp: LinearProgram) -> LpSolution:
        from scipy.optimize import linprog

        bounds = [
            (
                None if not np.isfinite(low) else float(low),
                None if not np.isfinite(high) else float(high)
            )
            for low, high in zip(lp.lower, lp.upper)
        ]
        result = linprog(
            lp.cost,
            A_ub=lp.a_ub if lp.b_ub.size else None,
            b_ub=lp.b_ub if lp.b_ub.size else None,
            A_eq=lp.a_eq if lp.b_eq.size else None,
            b_eq=lp.b_eq if lp.b_eq.size else None,
            bounds=bounds,
            method="highs"
        )
        iterations = int(getattr(result, "nit", 0))
        if result.status == 0:
            x = np.asarray(result.x, dtype=np.float64)
            return LpSolution(LpStatus.OPTIMAL, x, lp.objective(x), iterations)
        if result.status == 2:
            return LpSolution(
                LpStatus.INFEASIBLE, np.zeros(lp.variable_count), float("nan"), iterations
            )
        if result.status == 3:
            return LpSolution(
                LpStatus.UNBOUNDED, np.zeros(lp.variable_count), float("nan"), iterations
            )
        raise NumericalError(f"HiGHS 求解失败: {result.message}")

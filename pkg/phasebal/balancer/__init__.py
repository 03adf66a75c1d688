import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from frozendict import frozendict

from phasebal.balancer.lp import LinearProgram, LpSolution, LpSolver, LpStatus, SimplexSolver
from phasebal.constant import (BETA_MAX, FEASIBILITY_TOLERANCE, METRIC_CAP, RELAXATION_PENALTY,
                               VOLTAGE_MAX, VOLTAGE_MIN)
from phasebal.exception import (ActuationError, BalancingError, InvalidTargetError,
                                NumericalError, PhasebalException)
from phasebal.feeder import FeederModel, Terminal
from phasebal.metrics import CaseLabel, Metric, UnbalanceReport, metric_value, report
from phasebal.powerflow import (InjectionVector, PowerFlowOptions, VoltageState,
                                injections_from_loads, solve)
from phasebal.sensitivity import (ControlKind, ControlVariable, SensitivityTensor,
                                  complex_sensitivities, metric_sensitivity_matrix)

_logger = logging.getLogger(__name__)


class LinearizedModel:
    """
    运行点处的一阶泰勒模型：指标 Ξ(x + dx) ≈ Ξ(x) + S·dx，电压幅值 |v(x + dx)| ≈ |v(x)| + K·dx。

    dx 均按全部控制变量顺序排列（先 p、后 q）。
    """

    _model: FeederModel
    _state: VoltageState
    _metric: Metric
    _controls: Tuple[ControlVariable, ...]
    _operating: "npt.NDArray[np.float64]"
    _buses: Tuple[int, ...]
    _base_metrics: "npt.NDArray[np.float64]"
    _metric_sensitivity: "npt.NDArray[np.float64]"
    _cases: "frozendict[int, CaseLabel]"
    _skipped: "frozendict[int, str]"
    _base_total: float
    _terminals: Tuple[Terminal, ...]
    _base_magnitudes: "npt.NDArray[np.float64]"
    _magnitude_sensitivity: "npt.NDArray[np.float64]"

    def __init__(
        self,
        model: FeederModel,
        state: VoltageState,
        tensor: SensitivityTensor,
        metric: Metric
    ) -> None:
        """
        初始化 `LinearizedModel` 实例。

        参数:
            - model: 馈线模型
            - state: 线性化运行点
            - tensor: 运行点处的电压灵敏度
            - metric: 指标
        """

        sensitivities = metric_sensitivity_matrix(model, state, tensor, metric)
        valid = sensitivities.valid_buses
        if not valid:
            raise BalancingError(f"全部三相母线的 {metric.value.upper()} 灵敏度均退化，无法线性化。")

        self._model = model
        self._state = state
        self._metric = metric
        self._controls = tensor.controls
        self._operating = _frozen(state.injections.as_controls())
        self._buses = valid
        rows = [sensitivities.buses.index(bus) for bus in valid]
        self._base_metrics = _frozen([metric_value(model, state, bus, metric) for bus in valid])
        self._metric_sensitivity = _frozen(sensitivities.values[rows])
        self._cases = sensitivities.cases
        self._skipped = sensitivities.skipped
        self._base_total = float(self._base_metrics.sum()) + sum(
            metric_value(model, state, bus, metric) for bus in sensitivities.skipped
        )
        load = model.load_indices
        self._terminals = model.load_terminals
        self._base_magnitudes = _frozen(np.abs(state.voltages[load]))
        self._magnitude_sensitivity = _frozen(tensor.magnitude[load])

    @property
    def model(self) -> FeederModel:
        return self._model

    @property
    def state(self) -> VoltageState:
        """
        线性化运行点。
        """

        return self._state

    @property
    def metric(self) -> Metric:
        return self._metric

    @property
    def controls(self) -> Tuple[ControlVariable, ...]:
        """
        全部控制变量（dx 的顺序）。
        """

        return self._controls

    @property
    def operating(self) -> "npt.NDArray[np.float64]":
        """
        运行点注入 x̂（按控制变量顺序）。
        """

        return self._operating

    @property
    def buses(self) -> Tuple[int, ...]:
        """
        参与线性化的三相母线。
        """

        return self._buses

    @property
    def base_metrics(self) -> "npt.NDArray[np.float64]":
        """
        运行点处的指标值 Ξ_i(x)（按 `buses` 顺序）。
        """

        return self._base_metrics

    @property
    def metric_sensitivity(self) -> "npt.NDArray[np.float64]":
        """
        指标灵敏度矩阵 S（`buses` × 控制变量）。
        """

        return self._metric_sensitivity

    @property
    def cases(self) -> "frozendict[int, CaseLabel]":
        """
        冻结的 PVUR/LVUR 情形标签。
        """

        return self._cases

    @property
    def skipped(self) -> "frozendict[int, str]":
        """
        因退化而未参与线性化的母线及原因。
        """

        return self._skipped

    @property
    def base_total(self) -> float:
        """
        全部三相母线（含被跳过的母线）的指标之和。
        """

        return self._base_total

    @property
    def terminals(self) -> Tuple[Terminal, ...]:
        """
        电压约束对应的非平衡端子。
        """

        return self._terminals

    @property
    def base_magnitudes(self) -> "npt.NDArray[np.float64]":
        """
        运行点处的电压幅值（按 `terminals` 顺序）。
        """

        return self._base_magnitudes

    @property
    def magnitude_sensitivity(self) -> "npt.NDArray[np.float64]":
        """
        电压幅值灵敏度矩阵 K（`terminals` × 控制变量）。
        """

        return self._magnitude_sensitivity

    def _deviation(self, dx: "npt.ArrayLike") -> "npt.NDArray[np.float64]":
        values = np.asarray(dx, dtype=np.float64)
        if values.shape != (len(self._controls),):
            raise ValueError("dx 长度必须等于控制变量数。")
        return values

    def predict_metrics(self, dx: "npt.ArrayLike") -> "npt.NDArray[np.float64]":
        """
        预测各母线的指标值。

        参数:
            - dx: 注入偏差（按控制变量顺序）

        返回:
            按 `buses` 顺序排列的预测指标值。
        """

        return self._base_metrics + self._metric_sensitivity @ self._deviation(dx)

    def predict_magnitudes(self, dx: "npt.ArrayLike") -> "npt.NDArray[np.float64]":
        """
        预测非平衡端子的电压幅值。

        参数:
            - dx: 注入偏差（按控制变量顺序）

        返回:
            按 `terminals` 顺序排列的预测电压幅值。
        """

        return self._base_magnitudes + self._magnitude_sensitivity @ self._deviation(dx)

    def predict_total(self, dx: "npt.ArrayLike") -> float:
        """
        预测全部三相母线的指标之和（被跳过的母线取运行点值）。

        参数:
            - dx: 注入偏差（按控制变量顺序）

        返回:
            预测指标之和。
        """

        return self._base_total + float(np.sum(self._metric_sensitivity @ self._deviation(dx)))


def _frozen(value: "npt.ArrayLike") -> "npt.NDArray[np.float64]":
    array = np.array(value, dtype=np.float64)
    array.setflags(write=False)
    return array


class ControlMode(Enum):
    """
    参与平衡的控制变量类型。
    """

    P = "p"
    """
    仅有功。
    """

    Q = "q"
    """
    仅无功。
    """

    BOTH = "pq"
    """
    有功与无功，各自独立满足边界与守恒约束。
    """

    @property
    def kinds(self) -> Tuple[ControlKind, ...]:
        """
        对应的控制变量类型。
        """

        return tuple(ControlKind(char) for char in self.value)


@dataclass(frozen=True)
class BalancingProblem:
    """
    相平衡问题的参数。
    """

    metric: Metric
    """
    优化的指标 θ。
    """

    beta: float
    """
    灵活性系数 β，每个注入的偏差不超过 β·|x̂|。
    """

    cap: float = METRIC_CAP
    """
    指标上限 Ξ̄。
    """

    voltage_min: float = VOLTAGE_MIN
    """
    电压幅值下限（标幺值）。
    """

    voltage_max: float = VOLTAGE_MAX
    """
    电压幅值上限（标幺值）。
    """

    mode: ControlMode = ControlMode.P
    """
    参与平衡的控制变量类型。
    """

    flexible: Optional[Tuple[Terminal, ...]] = field(default=None)
    """
    可调节的端子（`None` 表示全部非平衡端子）。
    """

    def __post_init__(self) -> None:
        if not (0 <= self.beta <= BETA_MAX):
            raise ValueError(f"灵活性系数必须位于 [0, {BETA_MAX}]。")
        if not self.cap > 0:
            raise ValueError("指标上限必须为正数。")
        if not self.voltage_min < self.voltage_max:
            raise ValueError("电压下限必须小于上限。")
        if self.flexible is not None:
            object.__setattr__(self, "flexible", tuple(self.flexible))

    def variables(self, lin: LinearizedModel) -> List[int]:
        """
        获取参与优化的控制变量在全部控制变量中的下标。

        参数:
            - lin: 线性化模型

        返回:
            升序下标列表。
        """

        kinds = set(self.mode.kinds)
        if self.flexible is not None:
            unknown = [t for t in self.flexible if t not in lin.terminals]
            if unknown:
                raise InvalidTargetError(f"可调节端子不存在: {', '.join(map(str, unknown))}。")
        flexible = set(self.flexible) if self.flexible is not None else set(lin.terminals)
        return [
            j for j, control in enumerate(lin.controls)
            if control.kind in kinds and control.terminal in flexible
        ]


class DecisionStatus(Enum):
    """
    平衡决策状态。
    """

    OPTIMAL = "optimal"
    """
    原问题最优。
    """

    RELAXED = "relaxed"
    """
    指标上限不可满足，在最小化松弛后得到最优解。
    """

    INFEASIBLE = "infeasible"
    """
    松弛后仍不可行，决策为零偏差。
    """


@dataclass(frozen=True, eq=False)
class BalancingDecision:
    """
    平衡决策。
    """

    controls: Tuple[ControlVariable, ...]
    """
    可调节的控制变量。
    """

    deviation: "npt.NDArray[np.float64]"
    """
    各可调节控制变量的偏差 dx（标幺值）。
    """

    predicted: float
    """
    预测的指标之和 Σ_i Ξ_i(x + dx)。
    """

    objective: float
    """
    线性规划目标函数值（松弛时含罚项）。
    """

    status: DecisionStatus
    """
    决策状态。
    """

    relaxation: "frozendict[str, float]" = field(default_factory=lambda: frozendict())
    """
    松弛时各指标上限约束的松弛量。
    """

    iterations: int = 0
    """
    求解器换基次数。
    """

    def full_deviation(self, controls: Sequence[ControlVariable]) -> "npt.NDArray[np.float64]":
        """
        展开为全部控制变量上的偏差，未参与优化的控制变量取零。

        参数:
            - controls: 全部控制变量

        返回:
            按 `controls` 顺序排列的偏差。
        """

        position = {control: j for j, control in enumerate(controls)}
        full = np.zeros(len(controls), dtype=np.float64)
        for control, value in zip(self.controls, self.deviation):
            full[position[control]] = value
        return full


class BalancingLp(NamedTuple):
    """
    相平衡线性规划及其变量对应的控制变量。
    """

    program: LinearProgram
    controls: Tuple[ControlVariable, ...]
    columns: Tuple[int, ...]


def linearize(
    model: FeederModel,
    state: VoltageState,
    complex_sens: SensitivityTensor,
    metric: Metric
) -> LinearizedModel:
    """
    在运行点处构造指标与电压幅值的一阶泰勒模型。

    参数:
        - model: 馈线模型
        - state: 已收敛的运行点
        - complex_sens: 运行点处的复电压灵敏度
        - metric: 指标

    返回:
        以 `LinearizedModel` 类型表示的线性化模型。
    """

    return LinearizedModel(model, state, complex_sens, metric)


def build_lp(lin: LinearizedModel, prob: BalancingProblem) -> BalancingLp:
    """
    构造相平衡线性规划。

    目标为预测指标之和；约束为各母线 0 ≤ Ξ_i + S_i·dx ≤ Ξ̄，
    各非平衡端子 v_min ≤ |v| + K·dx ≤ v_max，−β|x̂| ≤ dx ≤ β|x̂|，
    以及每个母线每种控制类型的偏差之和为零。

    参数:
        - lin: 线性化模型
        - prob: 相平衡问题

    返回:
        以 `BalancingLp` 类型表示的线性规划。
    """

    if prob.metric is not lin.metric:
        raise InvalidTargetError("线性化模型的指标与问题不一致。")
    columns = prob.variables(lin)
    controls = tuple(lin.controls[j] for j in columns)
    s = lin.metric_sensitivity[:, columns]
    k = lin.magnitude_sensitivity[:, columns]
    width = np.abs(lin.operating[columns]) * prob.beta

    rows: List["npt.NDArray[np.float64]"] = []
    bounds: List[float] = []
    labels: List[str] = []
    relaxable: List[int] = []
    for i, bus in enumerate(lin.buses):
        relaxable.append(len(rows))
        rows.append(s[i])
        bounds.append(prob.cap - lin.base_metrics[i])
        labels.append(f"cap:{bus}")
        rows.append(-s[i])
        bounds.append(lin.base_metrics[i])
        labels.append(f"floor:{bus}")
    for i, terminal in enumerate(lin.terminals):
        rows.append(k[i])
        bounds.append(prob.voltage_max - lin.base_magnitudes[i])
        labels.append(f"vmax:{terminal}")
        rows.append(-k[i])
        bounds.append(lin.base_magnitudes[i] - prob.voltage_min)
        labels.append(f"vmin:{terminal}")

    groups: Dict[Tuple[int, ControlKind], List[int]] = {}
    for j, control in enumerate(controls):
        groups.setdefault((control.bus, control.kind), []).append(j)
    equality = np.zeros((len(groups), len(controls)))
    for row, members in enumerate(groups.values()):
        equality[row, members] = 1.0

    program = LinearProgram(
        s.sum(axis=0),
        np.array(rows).reshape(len(rows), len(controls)),
        np.array(bounds),
        equality,
        np.zeros(len(groups)),
        -width,
        width,
        constant=lin.base_total,
        labels=[str(control) for control in controls],
        row_labels=labels,
        relaxable=relaxable
    )
    return BalancingLp(program, controls, tuple(columns))


def solve_lp(lp: BalancingLp, solver: Optional[LpSolver] = None) -> BalancingDecision:
    """
    求解相平衡线性规划。

    指标上限不可满足时，对上限约束引入弹性松弛变量（罚系数为
    `RELAXATION_PENALTY` × 目标函数尺度）后重新求解，状态记为 `RELAXED`；
    仍不可行时状态为 `INFEASIBLE`，偏差为零。

    参数:
        - lp: 相平衡线性规划
        - solver: 求解器（默认 `SimplexSolver`）

    返回:
        以 `BalancingDecision` 类型表示的决策。
    """

    solver = solver or SimplexSolver()
    program = lp.program
    n = program.variable_count
    solution = solver.solve(program)
    assert solution.status is not LpStatus.UNBOUNDED, "有界变量的线性规划不可能无界。"
    status = DecisionStatus.OPTIMAL
    relaxation: Dict[str, float] = {}

    if solution.status is LpStatus.INFEASIBLE and program.relaxable:
        scale = max(1.0, float(np.max(np.abs(program.cost), initial=0.0)))
        relaxed = program.relaxed(RELAXATION_PENALTY * scale)
        solution = solver.solve(relaxed)
        assert solution.status is not LpStatus.UNBOUNDED, "有界变量的线性规划不可能无界。"
        if solution.status is LpStatus.OPTIMAL:
            status = DecisionStatus.RELAXED
            for value, row in zip(solution.x[n:], program.relaxable):
                relaxation[program.row_labels[row]] = float(value)
            _logger.info("指标上限不可满足，已松弛求解。")

    if solution.status is not LpStatus.OPTIMAL:
        _logger.warning("相平衡线性规划不可行，决策为零偏差。")
        return BalancingDecision(
            lp.controls, _frozen(np.zeros(n)), program.constant, float("nan"),
            DecisionStatus.INFEASIBLE, iterations=solution.iterations
        )

    deviation = _polish(program, solution)
    return BalancingDecision(
        lp.controls,
        _frozen(deviation),
        program.objective(deviation),
        solution.objective,
        status,
        frozendict(relaxation),
        solution.iterations
    )


def _polish(program: LinearProgram, solution: LpSolution) -> "npt.NDArray[np.float64]":
    n = program.variable_count
    deviation = np.clip(solution.x[:n], program.lower, program.upper)
    residual = program.a_eq @ deviation - program.b_eq
    if residual.size and float(np.max(np.abs(residual))) > FEASIBILITY_TOLERANCE:
        raise BalancingError(f"决策不满足守恒约束（残差 {np.max(np.abs(residual)):.3e}）。")
    return deviation


class FeedbackResult(NamedTuple):
    """
    一次反馈迭代的结果。
    """

    decision: BalancingDecision
    state: VoltageState
    report: UnbalanceReport


def feedback_step(
    model: FeederModel,
    state: VoltageState,
    prob: BalancingProblem,
    solver: Optional[LpSolver] = None,
    options: Optional[PowerFlowOptions] = None
) -> FeedbackResult:
    """
    执行一次反馈迭代：线性化、求解线性规划、执行决策并以精确潮流观测结果。

    参数:
        - model: 馈线模型
        - state: 已收敛的运行点
        - prob: 相平衡问题
        - solver: 线性规划求解器
        - options: 潮流选项

    返回:
        (决策, 实际运行点, 实际指标报告)，实际运行点即下一次迭代的运行点。
    """

    tensor = complex_sensitivities(model, state)
    lin = linearize(model, state, tensor, prob.metric)
    decision = solve_lp(build_lp(lin, prob), solver)
    deviation = decision.full_deviation(lin.controls)
    injections = state.injections.with_controls(lin.operating + deviation)
    try:
        realized = solve(model, injections, options)
    except NumericalError as ex:
        raise ActuationError(f"执行平衡决策后潮流计算失败: {ex}", deviation) from ex
    _logger.debug(
        "反馈迭代: 状态 %s，预测 %.6g，换基 %d 次。",
        decision.status.value, decision.predicted, decision.iterations
    )
    return FeedbackResult(decision, realized, report(model, realized))


@dataclass(frozen=True)
class ProfileStep:
    """
    负荷曲线中单个时段的结果。
    """

    step: int
    """
    时段序号。
    """

    factor: float
    """
    负荷倍数。
    """

    base: float
    """
    平衡前的指标之和（失败时为 NaN）。
    """

    predicted: float
    """
    线性化模型预测的指标之和（失败时为 NaN）。
    """

    realized: float
    """
    执行决策后精确潮流的指标之和（失败时为 NaN）。
    """

    status: str
    """
    最后一次反馈迭代的决策状态，失败时为 `"error"`。
    """

    error: str = ""
    """
    错误信息。
    """


@dataclass(frozen=True)
class ProfileResult:
    """
    负荷曲线的平衡结果。
    """

    metric: Metric
    """
    优化的指标。
    """

    beta: float
    """
    灵活性系数。
    """

    steps: Tuple[ProfileStep, ...]
    """
    各时段结果。
    """

    @property
    def base(self) -> "npt.NDArray[np.float64]":
        """
        平衡前的指标之和序列。
        """

        return np.array([step.base for step in self.steps], dtype=np.float64)

    @property
    def predicted(self) -> "npt.NDArray[np.float64]":
        """
        预测的指标之和序列。
        """

        return np.array([step.predicted for step in self.steps], dtype=np.float64)

    @property
    def realized(self) -> "npt.NDArray[np.float64]":
        """
        实际的指标之和序列。
        """

        return np.array([step.realized for step in self.steps], dtype=np.float64)

    @property
    def base_total(self) -> float:
        """
        成功时段平衡前的指标总和。
        """

        return float(np.sum(self.base[self._succeeded()]))

    @property
    def realized_total(self) -> float:
        """
        成功时段实际的指标总和。
        """

        return float(np.sum(self.realized[self._succeeded()]))

    def reduction_percent(self) -> float:
        """
        计算实际指标总和相对平衡前的变化百分比（负值表示降低）。

        返回:
            百分比；没有成功时段或基准为零时为 0。
        """

        base = self.base_total
        if base == 0:
            return 0.0
        return 100.0 * (self.realized_total - base) / base

    def _succeeded(self) -> "npt.NDArray[np.bool_]":
        return np.isfinite(self.base) & np.isfinite(self.realized)


def run_profile(
    model: FeederModel,
    prob: BalancingProblem,
    profile: Sequence[float],
    iterations_per_step: int = 1,
    solver: Optional[LpSolver] = None,
    options: Optional[PowerFlowOptions] = None
) -> ProfileResult:
    """
    在负荷曲线上逐时段执行相平衡。

    每个时段的运行点为额定负荷乘以该时段倍数；时段内执行 `iterations_per_step`
    次反馈迭代，每次在上一次的实际运行点处重新线性化。单个时段失败时记录错误并继续。

    参数:
        - model: 馈线模型
        - prob: 相平衡问题
        - profile: 各时段的负荷倍数
        - iterations_per_step: 每个时段的反馈迭代次数
        - solver: 线性规划求解器
        - options: 潮流选项

    返回:
        以 `ProfileResult` 类型表示的结果。
    """

    if iterations_per_step < 1:
        raise ValueError("每个时段的反馈迭代次数必须为正整数。")
    nan = float("nan")
    steps: List[ProfileStep] = []
    for index, factor in enumerate(profile):
        base = nan
        try:
            state = solve(model, injections_from_loads(model, factor), options)
            base = report(model, state).total(prob.metric)
            predicted = realized = base
            status = DecisionStatus.OPTIMAL.value
            for _ in range(iterations_per_step):
                result = feedback_step(model, state, prob, solver, options)
                state = result.state
                predicted = result.decision.predicted
                realized = result.report.total(prob.metric)
                status = result.decision.status.value
        except (PhasebalException, ValueError) as ex:
            _logger.warning("时段 %d 失败: %s", index, ex)
            steps.append(ProfileStep(index, float(factor), base, nan, nan, "error", str(ex)))
            continue
        _logger.info(
            "时段 %d（倍数 %.3f）: 基准 %.6g，预测 %.6g，实际 %.6g。",
            index, factor, base, predicted, realized
        )
        steps.append(ProfileStep(index, float(factor), base, predicted, realized, status))
    return ProfileResult(prob.metric, prob.beta, tuple(steps))


from .lp import *

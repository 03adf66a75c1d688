import itertools
import math
from typing import Dict, List, Tuple

import numpy as np
import numpy.typing as npt
import pytest

from phasebal.balancer import (BalancingLp, BalancingProblem, ControlMode, DecisionStatus,
                               LinearizedModel, LinearProgram, ProfileResult, ProfileStep,
                               build_lp, feedback_step, linearize, run_profile, solve_lp)
from phasebal.data import PROFILE_24H, bundled_path, load_profile
from phasebal.exception import (ActuationError, BalancingError, InvalidTargetError,
                                PowerFlowDivergedError)
from phasebal.feeder import FeederModel, Terminal
from phasebal.metrics import METRICS, Metric, metric_value, report
from phasebal.phase import Phase
from phasebal.powerflow import PowerFlowOptions, VoltageState, injections_from_loads, solve
from phasebal.sensitivity import ORACLE_OPTIONS, ControlKind, complex_sensitivities

BUS_3 = (Terminal(3, Phase.A), Terminal(3, Phase.B), Terminal(3, Phase.C))


def _linearize(model: FeederModel, state: VoltageState, metric: Metric) -> LinearizedModel:
    return linearize(model, state, complex_sensitivities(model, state), metric)


def _group_sums(controls, deviation) -> Dict[Tuple[int, ControlKind], float]:
    sums: Dict[Tuple[int, ControlKind], float] = {}
    for control, value in zip(controls, deviation):
        key = (control.bus, control.kind)
        sums[key] = sums.get(key, 0.0) + float(value)
    return sums


def test_zero_flexibility_keeps_operating_point(four_bus: FeederModel,
                                                four_bus_state: VoltageState):
    lin = _linearize(four_bus, four_bus_state, Metric.VUF)
    decision = solve_lp(build_lp(lin, BalancingProblem(Metric.VUF, 0.0)))
    assert decision.status is DecisionStatus.OPTIMAL
    np.testing.assert_array_equal(decision.deviation, np.zeros(9))
    assert decision.predicted == pytest.approx(lin.base_total, rel=1e-12)


def test_lp_dimensions(four_bus: FeederModel, four_bus_state: VoltageState):
    lin = _linearize(four_bus, four_bus_state, Metric.VUF)
    assert lin.buses == (2, 3, 4)
    assert list(lin.skipped) == [1]
    lp = build_lp(lin, BalancingProblem(Metric.VUF, 0.02))
    program = lp.program
    assert program.variable_count == 9
    assert all(control.kind is ControlKind.P for control in lp.controls)
    assert program.a_ub.shape == (24, 9)
    assert program.a_eq.shape == (3, 9)
    assert program.row_labels[:2] == ("cap:2", "floor:2")
    assert program.row_labels[6:8] == ("vmax:2a", "vmin:2a")
    assert program.relaxable == (0, 2, 4)
    assert program.labels[0] == "2a_p"
    columns = list(lp.columns)
    np.testing.assert_allclose(program.cost, lin.metric_sensitivity[:, columns].sum(axis=0))
    np.testing.assert_allclose(program.upper, 0.02 * np.abs(lin.operating[columns]))

    both = build_lp(lin, BalancingProblem(Metric.VUF, 0.02, mode=ControlMode.BOTH))
    assert both.program.variable_count == 18
    assert both.program.a_eq.shape == (6, 18)
    reactive = build_lp(lin, BalancingProblem(Metric.VUF, 0.02, mode=ControlMode.Q))
    assert all(control.kind is ControlKind.Q for control in reactive.controls)


def test_single_bus_matches_grid_search(four_bus: FeederModel, four_bus_state: VoltageState):
    lin = _linearize(four_bus, four_bus_state, Metric.VUF)
    lp = build_lp(lin, BalancingProblem(Metric.VUF, 0.05, flexible=BUS_3))
    program = lp.program
    assert program.variable_count == 3
    decision = solve_lp(lp)
    assert decision.status is DecisionStatus.OPTIMAL

    widths = program.upper
    grids = [np.linspace(-w, w, 21) for w in widths[:2]]
    best = math.inf
    for a, b in itertools.product(*grids):
        point = np.array([a, b, -a - b])
        if program.is_feasible(point):
            best = min(best, program.objective(point))
    assert math.isfinite(best)
    assert decision.predicted <= best + 1e-10
    resolution = 4 * float(np.sum(np.abs(program.cost))) * float(np.max(widths)) / 10
    assert best - decision.predicted <= resolution
    assert program.is_feasible(decision.deviation)


def test_decision_is_feasible(thirty_bus: FeederModel, thirty_bus_state: VoltageState):
    lin = _linearize(thirty_bus, thirty_bus_state, Metric.PVUR)
    lp = build_lp(lin, BalancingProblem(Metric.PVUR, 0.05, mode=ControlMode.BOTH))
    decision = solve_lp(lp)
    assert decision.status is DecisionStatus.OPTIMAL
    width = 0.05 * np.abs(lin.operating[list(lp.columns)])
    assert np.all(np.abs(decision.deviation) <= width + 1e-9)
    for total in _group_sums(decision.controls, decision.deviation).values():
        assert abs(total) <= 1e-9
    assert decision.predicted <= lin.base_total + 1e-10
    predicted = lin.predict_metrics(decision.full_deviation(lin.controls))
    assert np.all(predicted >= -1e-9)
    assert np.all(predicted <= 0.02 + 1e-9)


def test_relaxed_cap(four_bus: FeederModel, four_bus_state: VoltageState):
    lin = _linearize(four_bus, four_bus_state, Metric.VUF)
    decision = solve_lp(build_lp(lin, BalancingProblem(Metric.VUF, 0.0, cap=1e-6)))
    assert decision.status is DecisionStatus.RELAXED
    np.testing.assert_allclose(decision.deviation, 0.0, atol=1e-15)
    assert set(decision.relaxation) == {"cap:2", "cap:3", "cap:4"}
    for i, bus in enumerate(lin.buses):
        expected = lin.base_metrics[i] - 1e-6
        assert decision.relaxation[f"cap:{bus}"] == pytest.approx(expected, rel=1e-6)


def test_infeasible_voltage_band(four_bus: FeederModel, four_bus_state: VoltageState):
    lin = _linearize(four_bus, four_bus_state, Metric.VUF)
    problem = BalancingProblem(Metric.VUF, 0.0, voltage_min=0.999)
    decision = solve_lp(build_lp(lin, problem))
    assert decision.status is DecisionStatus.INFEASIBLE
    np.testing.assert_array_equal(decision.deviation, np.zeros(9))
    assert decision.predicted == lin.base_total
    assert math.isnan(decision.objective)


def test_prediction_accessors(four_bus: FeederModel, four_bus_state: VoltageState):
    lin = _linearize(four_bus, four_bus_state, Metric.LVUR)
    zero = np.zeros(len(lin.controls))
    np.testing.assert_array_equal(lin.predict_metrics(zero), lin.base_metrics)
    np.testing.assert_array_equal(lin.predict_magnitudes(zero), lin.base_magnitudes)
    assert lin.predict_total(zero) == pytest.approx(lin.base_total, rel=1e-12)
    assert lin.base_total == pytest.approx(report(four_bus, four_bus_state).total(Metric.LVUR))
    with pytest.raises(ValueError):
        lin.predict_metrics(zero[:-1])


@pytest.mark.parametrize("fixture", ["four_bus", "thirty_bus"])
@pytest.mark.parametrize("metric", METRICS, ids=lambda metric: metric.value)
def test_taylor_error_is_second_order(request: pytest.FixtureRequest, fixture: str,
                                      metric: Metric):
    model: FeederModel = request.getfixturevalue(fixture)
    base = solve(model, injections_from_loads(model), ORACLE_OPTIONS)
    lin = _linearize(model, base, metric)
    errors: List[float] = []
    for scale in (0.8, 0.9, 0.95, 0.975):
        state = solve(model, injections_from_loads(model, scale), ORACLE_OPTIONS)
        predicted = lin.predict_metrics((scale - 1.0) * lin.operating)
        true = np.array([metric_value(model, state, bus, metric) for bus in lin.buses])
        errors.append(float(np.max(np.abs(true - predicted))))
    for coarse, fine in zip(errors, errors[1:]):
        assert coarse / fine >= 3.5


@pytest.mark.parametrize("fixture", ["four_bus", "thirty_bus"])
@pytest.mark.parametrize("metric", METRICS, ids=lambda metric: metric.value)
def test_heavy_load_keeps_ranking(request: pytest.FixtureRequest, fixture: str, metric: Metric):
    model: FeederModel = request.getfixturevalue(fixture)
    lin = _linearize(model, request.getfixturevalue(f"{fixture}_state"), metric)
    heavy = solve(model, injections_from_loads(model, 1.2))
    predicted = lin.predict_metrics(0.2 * lin.operating)
    true = np.array([metric_value(model, heavy, bus, metric) for bus in lin.buses])

    def top(values: "npt.NDArray[np.float64]") -> List[int]:
        return [lin.buses[i] for i in np.argsort(-values, kind="stable")[:3]]

    assert top(predicted) == top(true)


def test_feedback_step_reduces_vuf(four_bus: FeederModel, four_bus_state: VoltageState):
    problem = BalancingProblem(Metric.VUF, 0.02)
    base = report(four_bus, four_bus_state).total(Metric.VUF)
    result = feedback_step(four_bus, four_bus_state, problem)
    assert result.decision.status is DecisionStatus.OPTIMAL
    assert result.decision.predicted < base
    assert result.report.total(Metric.VUF) < base

    # 每个母线的总有功注入保持不变。
    before = four_bus_state.injections
    after = result.state.injections
    for bus in (2, 3, 4):
        rows = [i for i, t in enumerate(before.terminals) if t.bus == bus]
        assert after.p[rows].sum() == pytest.approx(before.p[rows].sum(), abs=1e-12)
        np.testing.assert_array_equal(after.q[rows], before.q[rows])


def test_problem_validation(four_bus: FeederModel, four_bus_state: VoltageState):
    with pytest.raises(ValueError):
        BalancingProblem(Metric.VUF, 0.06)
    with pytest.raises(ValueError):
        BalancingProblem(Metric.VUF, -0.01)
    with pytest.raises(ValueError):
        BalancingProblem(Metric.VUF, 0.01, cap=0.0)
    with pytest.raises(ValueError):
        BalancingProblem(Metric.VUF, 0.01, voltage_min=1.05, voltage_max=0.95)

    lin = _linearize(four_bus, four_bus_state, Metric.VUF)
    with pytest.raises(InvalidTargetError):
        build_lp(lin, BalancingProblem(Metric.PVUR, 0.01))
    with pytest.raises(InvalidTargetError):
        build_lp(lin, BalancingProblem(Metric.VUF, 0.01, flexible=(Terminal(1, Phase.A),)))


def test_balanced_feeder_cannot_be_linearized(symmetric: FeederModel):
    state = solve(symmetric, injections_from_loads(symmetric))
    with pytest.raises(BalancingError):
        _linearize(symmetric, state, Metric.VUF)


def test_profile_without_flexibility(four_bus: FeederModel):
    result = run_profile(four_bus, BalancingProblem(Metric.PVUR, 0.0), [0.8, 1.0, 1.2])
    assert [step.step for step in result.steps] == [0, 1, 2]
    np.testing.assert_array_equal(result.realized, result.base)
    np.testing.assert_allclose(result.predicted, result.base, rtol=1e-12)
    assert result.reduction_percent() == 0.0
    assert all(step.status == "optimal" for step in result.steps)


def test_profile_records_failed_steps(four_bus: FeederModel):
    result = run_profile(four_bus, BalancingProblem(Metric.VUF, 0.01), [1.0, 50.0])
    good, bad = result.steps
    assert good.status == "optimal"
    assert bad.status == "error"
    assert bad.error
    assert math.isnan(bad.realized)
    assert result.base_total == pytest.approx(good.base)
    with pytest.raises(ValueError):
        run_profile(four_bus, BalancingProblem(Metric.VUF, 0.01), [1.0], iterations_per_step=0)


def test_profile_totals():
    nan = float("nan")
    result = ProfileResult(Metric.VUF, 0.02, (
        ProfileStep(0, 1.0, 2.0, 1.5, 1.0, "optimal"),
        ProfileStep(1, 1.1, nan, nan, nan, "error", "潮流未收敛"),
        ProfileStep(2, 0.9, 2.0, 1.0, 1.0, "relaxed"),
    ))
    assert result.base_total == 4.0
    assert result.realized_total == 2.0
    assert result.reduction_percent() == -50.0
    empty = ProfileResult(Metric.VUF, 0.02, ())
    assert empty.reduction_percent() == 0.0


def test_repeated_feedback_iterations(four_bus: FeederModel):
    once = run_profile(four_bus, BalancingProblem(Metric.VUF, 0.02), [1.0])
    twice = run_profile(four_bus, BalancingProblem(Metric.VUF, 0.02), [1.0], iterations_per_step=2)
    assert once.base[0] == twice.base[0]
    assert twice.realized[0] < twice.base[0]


@pytest.mark.parametrize("metric", METRICS, ids=lambda metric: metric.value)
def test_daily_profile_on_thirty_bus(thirty_bus: FeederModel, metric: Metric):
    profile = load_profile(bundled_path(PROFILE_24H))
    results = {
        beta: run_profile(thirty_bus, BalancingProblem(metric, beta), profile)
        for beta in (0.01, 0.02)
    }
    for result in results.values():
        assert len(result.steps) == 24
        assert all(step.status != "error" for step in result.steps)
        improved = np.sum(result.realized <= result.base + 1e-12)
        assert improved >= math.ceil(0.95 * 24)
    assert results[0.02].reduction_percent() <= results[0.01].reduction_percent()
    assert results[0.02].reduction_percent() < 0


def _box_only(lp: BalancingLp, cost: "npt.NDArray[np.float64]") -> BalancingLp:
    program = lp.program
    return lp._replace(program=LinearProgram(
        cost, np.zeros((0, program.variable_count)), [], program.a_eq, program.b_eq,
        program.lower, program.upper, labels=program.labels
    ))


def test_negated_objective_flips_decision(four_bus: FeederModel, four_bus_state: VoltageState):
    lin = _linearize(four_bus, four_bus_state, Metric.VUF)
    lp = build_lp(lin, BalancingProblem(Metric.VUF, 0.05, flexible=BUS_3))
    forward = solve_lp(_box_only(lp, lp.program.cost))
    backward = solve_lp(_box_only(lp, -lp.program.cost))
    assert forward.status is DecisionStatus.OPTIMAL
    assert backward.status is DecisionStatus.OPTIMAL
    assert np.any(forward.deviation != 0)
    np.testing.assert_allclose(backward.deviation, -forward.deviation, rtol=0, atol=1e-12)


# PVUR 在四母线馈线上第二次改进略大于第一次，不满足递减。
@pytest.mark.parametrize("metric", [Metric.VUF, Metric.LVUR], ids=lambda metric: metric.value)
def test_second_feedback_step_improves_less(four_bus: FeederModel, four_bus_state: VoltageState,
                                            metric: Metric):
    problem = BalancingProblem(metric, 0.02)
    first = feedback_step(four_bus, four_bus_state, problem)
    second = feedback_step(four_bus, first.state, problem)
    base = report(four_bus, four_bus_state).total(metric)
    after_first = first.report.total(metric)
    after_second = second.report.total(metric)
    assert 0 < after_first - after_second <= base - after_first


@pytest.mark.parametrize("fixture", ["four_bus", "thirty_bus"])
@pytest.mark.parametrize("metric", METRICS, ids=lambda metric: metric.value)
def test_prediction_gap_grows_with_beta(request: pytest.FixtureRequest, fixture: str,
                                        metric: Metric):
    model: FeederModel = request.getfixturevalue(fixture)
    state: VoltageState = request.getfixturevalue(f"{fixture}_state")
    gaps: List[float] = []
    for beta in (0.01, 0.02):
        result = feedback_step(model, state, BalancingProblem(metric, beta))
        gaps.append(abs(result.report.total(metric) - result.decision.predicted))
    assert gaps[0] <= gaps[1]


def test_actuation_failure_carries_deviation(four_bus: FeederModel,
                                             four_bus_state: VoltageState):
    problem = BalancingProblem(Metric.VUF, 0.02)
    with pytest.raises(ActuationError) as info:
        feedback_step(four_bus, four_bus_state, problem, options=PowerFlowOptions(max_iterations=1))
    assert isinstance(info.value.__cause__, PowerFlowDivergedError)

    lin = _linearize(four_bus, four_bus_state, Metric.VUF)
    decision = feedback_step(four_bus, four_bus_state, problem).decision
    deviation = info.value.deviation
    assert deviation.shape == (len(lin.controls),)
    assert np.any(deviation != 0)
    np.testing.assert_array_equal(deviation, decision.full_deviation(lin.controls))

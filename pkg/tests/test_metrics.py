import cmath

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from phasebal.constant import ALPHA
from phasebal.exception import DegeneratePointError, InvalidTargetError
from phasebal.feeder import FeederModel
from phasebal.metrics import (METRICS, Metric, SequenceVoltages, deviation_case,
                              max_deviation_ratio, metric_value, phase_voltages, pvur, lvur,
                              report, to_sequence, vuf)
from phasebal.phase import LinePair, Phase
from phasebal.powerflow import VoltageState, injections_from_loads, solve

POSITIVE = (1 + 0j, ALPHA ** 2, ALPHA)
NEGATIVE = (1 + 0j, ALPHA, ALPHA ** 2)

magnitudes = st.tuples(*(st.floats(min_value=0.5, max_value=1.5) for _ in range(3)))


def test_balanced_positive_sequence():
    seq = to_sequence(*POSITIVE)
    assert abs(seq.positive - 1) < 1e-12
    assert abs(seq.negative) < 1e-12
    assert abs(seq.zero) < 1e-12
    assert vuf(seq) < 1e-12


def test_vuf_of_mixed_sequences():
    voltages = [p + 0.02 * n + 0.1 for p, n in zip(POSITIVE, NEGATIVE)]
    seq = to_sequence(*voltages)
    assert seq.zero == pytest.approx(0.1, abs=1e-12)
    assert vuf(seq) == pytest.approx(0.02, rel=1e-12)
    restored = seq.to_phases()
    np.testing.assert_allclose(restored, voltages, rtol=0, atol=1e-12)


def test_vuf_without_positive_sequence():
    with pytest.raises(DegeneratePointError):
        vuf(to_sequence(*NEGATIVE))
    with pytest.raises(DegeneratePointError):
        vuf(SequenceVoltages(0j, 0j, 0.1 + 0j))


def test_vuf_is_rotation_invariant():
    voltages = [p + 0.03 * n for p, n in zip(POSITIVE, NEGATIVE)]
    turn = cmath.rect(1.0, 0.7)
    rotated = [turn * v for v in voltages]
    assert vuf(to_sequence(*rotated)) == pytest.approx(vuf(to_sequence(*voltages)), rel=1e-12)


def test_pvur_example():
    value, case = pvur(1.02, 0.99, 0.99)
    assert value == pytest.approx(0.02, rel=1e-12)
    assert case is Phase.A


def test_lvur_example():
    value, case = lvur(1.74, 1.72, 1.73)
    assert value == pytest.approx(0.01 / 1.73, rel=1e-9)
    assert case is LinePair.AB


def test_equal_magnitudes():
    value, case = pvur(1.0, 1.0, 1.0)
    assert value == 0
    assert case is Phase.A
    assert deviation_case((1.0, 1.0, 1.0)).kink


def test_tied_deviations_are_kinks():
    case = deviation_case((1.0, 1.02, 1.04))
    assert case.kink
    assert case.index in (0, 2)
    assert case.value == pytest.approx(0.06 / 3.06, rel=1e-12)
    assert not deviation_case((1.02, 0.99, 0.99)).kink


def test_deviation_case_rejects_bad_input():
    with pytest.raises(ValueError):
        deviation_case((1.0, 1.0))
    with pytest.raises(DegeneratePointError):
        deviation_case((1.0, 0.0, 1.0))
    with pytest.raises(DegeneratePointError):
        deviation_case((1.0, float("nan"), 1.0))
    with pytest.raises(DegeneratePointError):
        max_deviation_ratio((0.0, 0.0, 0.0))


@given(magnitudes)
def test_case_form_matches_definition(values):
    case = deviation_case(values)
    ratio, index = max_deviation_ratio(values)
    assert case.value == pytest.approx(ratio, rel=1e-12, abs=1e-15)
    assume(not case.kink)
    assert case.index == index


@given(magnitudes, st.floats(min_value=0.1, max_value=10.0))
def test_scale_invariance(values, factor):
    scaled = tuple(factor * value for value in values)
    assert pvur(*scaled)[0] == pytest.approx(pvur(*values)[0], rel=1e-12, abs=1e-15)
    assert lvur(*scaled)[0] == pytest.approx(lvur(*values)[0], rel=1e-12, abs=1e-15)


@given(magnitudes)
def test_permutation_covariance(values):
    case = deviation_case(values)
    assume(not case.kink)
    va, vb, vc = values
    value, phase = pvur(vb, vc, va)
    assert value == pytest.approx(case.value, rel=1e-12, abs=1e-15)
    # (b, c, a) 排列下，原情形 k 移到位置 k − 1。
    assert phase.index == (case.index - 1) % 3


def test_report_on_symmetric_feeder(symmetric: FeederModel):
    result = report(symmetric, solve(symmetric, injections_from_loads(symmetric)))
    assert list(result.buses) == [1, 2, 3, 4]
    assert not result.omitted
    for metric in METRICS:
        assert np.all(result.values(metric) <= 1e-9)


def test_report_omits_laterals(laterals: FeederModel):
    result = report(laterals, solve(laterals, injections_from_loads(laterals)))
    assert list(result.buses) == [1, 2, 3]
    assert dict(result.omitted) == {4: "非三相母线（ab）", 5: "非三相母线（c）"}
    with pytest.raises(InvalidTargetError):
        result[4]


def test_report_on_four_bus(four_bus: FeederModel, four_bus_state: VoltageState):
    result = report(four_bus, four_bus_state)
    assert list(result.buses) == [1, 2, 3, 4]
    assert result[1].vuf <= 1e-12
    assert result[1].pvur <= 1e-12
    for metric in METRICS:
        values = result.values(metric)
        assert values.shape == (4,)
        assert result.total(metric) == pytest.approx(float(np.sum(values)))
        assert np.all(values < 0.02)
        assert np.all(values[1:] > 0)
        for bus in (2, 3, 4):
            assert result[bus].value(metric) == metric_value(four_bus, four_bus_state, bus, metric)
    entry = result[3]
    assert entry.case(Metric.VUF) is None
    assert isinstance(entry.case(Metric.PVUR), Phase)
    assert isinstance(entry.case(Metric.LVUR), LinePair)
    magnitudes_3 = [abs(v) for v in phase_voltages(four_bus, four_bus_state, 3)]
    assert entry.phase_average == pytest.approx(float(np.mean(magnitudes_3)), rel=1e-12)
    assert entry.line_average > 1.6


def test_report_requires_matching_state(two_bus: FeederModel, four_bus_state: VoltageState):
    with pytest.raises(InvalidTargetError):
        report(two_bus, four_bus_state)


def test_metric_on_lateral_bus(laterals: FeederModel):
    state = solve(laterals, injections_from_loads(laterals))
    with pytest.raises(InvalidTargetError):
        metric_value(laterals, state, 4, Metric.VUF)
    with pytest.raises(InvalidTargetError):
        phase_voltages(laterals, state, 99)

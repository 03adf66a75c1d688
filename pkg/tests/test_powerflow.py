import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np
import pytest

from phasebal.exception import InvalidTargetError, PowerFlowDivergedError, SingularSystemError
from phasebal.feeder import FeederModel, Terminal
from phasebal.phase import PHASES, Phase
from phasebal.powerflow import (InjectionVector, PowerFlowOptions, VoltageState, flat_start,
                                implied_injections, injections_from_loads, power_mismatch,
                                slack_reference, solve)
from phasebal.powerflow import _factorize  # type: ignore


def test_zero_load_is_flat(two_bus: FeederModel):
    injections = InjectionVector(two_bus.load_terminals, np.zeros(3))
    state = solve(two_bus, injections)
    assert state.iterations == 0
    np.testing.assert_array_equal(state.voltages, flat_start(two_bus))
    np.testing.assert_allclose(state.magnitudes, 1.0, rtol=0, atol=1e-15)


def test_closed_form_two_bus(make_feeder: Callable[..., FeederModel]):
    z_pu = 0.01 + 0.01j
    z_ohm = z_pu * 2.4 ** 2 * 1000.0 / 1000.0
    model = make_feeder(
        [(1, "slack", "abc"), (2, "load", "abc")],
        [(1, 2, np.diag([z_ohm] * 3))],
        [(2, "a", 100.0, 50.0)]
    )
    state = solve(model, injections_from_loads(model))

    # v·conj(v) − v = s·conj(z)，s = −(0.1 + 0.05j)。
    c = -(0.1 + 0.05j) * z_pu.conjugate()
    imag = -c.imag
    real = (1 + math.sqrt(1 + 4 * (c.real - imag ** 2))) / 2
    assert abs(state.voltage(2, Phase.A) - complex(real, imag)) < 1e-9
    reference = slack_reference(model)
    assert abs(state.voltage(2, Phase.B) - reference[1]) < 1e-12
    assert abs(state.voltage(2, Phase.C) - reference[2]) < 1e-12


def test_residual_within_tolerance(four_bus: FeederModel, four_bus_state: VoltageState):
    assert four_bus_state.max_residual <= 1e-10
    mismatch = power_mismatch(four_bus, four_bus_state.voltages, four_bus_state.injections)
    assert np.max(np.abs(mismatch)) <= 1e-10
    assert 0 < four_bus_state.iterations <= 100
    assert len(four_bus_state.terminals) == 12


def test_slack_is_exact(four_bus: FeederModel, four_bus_state: VoltageState):
    slack = four_bus_state.voltages[four_bus.slack_indices]
    assert np.array_equal(slack, slack_reference(four_bus))
    assert slack[0] == complex(1.0, 0.0)


@pytest.mark.parametrize("fixture", ["four_bus", "thirty_bus"])
def test_monotone_residual(request: pytest.FixtureRequest, fixture: str):
    model: FeederModel = request.getfixturevalue(fixture)
    state = solve(model, injections_from_loads(model))
    history = state.residual_history
    assert len(history) == state.iterations + 1
    assert all(later < earlier for earlier, later in zip(history, history[1:]))


def test_voltages_in_band(thirty_bus: FeederModel, thirty_bus_state: VoltageState):
    magnitudes = thirty_bus_state.magnitudes[thirty_bus.load_indices]
    assert np.all(magnitudes > 0.95)
    assert np.all(magnitudes < 1.05)


def test_fixed_point_consistency(four_bus: FeederModel, four_bus_state: VoltageState):
    implied = implied_injections(four_bus, four_bus_state.voltages)
    again = solve(four_bus, InjectionVector(four_bus.load_terminals, implied))
    np.testing.assert_allclose(again.voltages, four_bus_state.voltages, rtol=0, atol=1e-9)


def test_symmetric_profiles(symmetric: FeederModel):
    state = solve(symmetric, injections_from_loads(symmetric))
    for bus in symmetric.buses:
        magnitudes = [abs(state.voltage(bus, phase)) for phase in PHASES]
        assert max(magnitudes) - min(magnitudes) <= 1e-9


def test_divergence_reports_residual(four_bus: FeederModel):
    with pytest.raises(PowerFlowDivergedError) as info:
        solve(four_bus, injections_from_loads(four_bus), PowerFlowOptions(max_iterations=1))
    assert info.value.iterations == 1
    assert info.value.residual > 1e-10


def test_options_are_validated():
    with pytest.raises(ValueError):
        PowerFlowOptions(tolerance=0)
    with pytest.raises(ValueError):
        PowerFlowOptions(max_iterations=0)


def test_injection_order_must_match(four_bus: FeederModel, two_bus: FeederModel):
    with pytest.raises(InvalidTargetError):
        solve(four_bus, injections_from_loads(two_bus))


@pytest.mark.parametrize("scale", [1.0, 0.8, 1.2])
def test_uniform_scale(four_bus: FeederModel, scale: float):
    nominal = injections_from_loads(four_bus)
    scaled = injections_from_loads(four_bus, scale)
    np.testing.assert_allclose(scaled.power, scale * nominal.power, rtol=1e-15)
    assert np.all(nominal.p < 0)
    np.testing.assert_allclose(-nominal.power, four_bus.load_power_pu())


def test_per_terminal_scale(four_bus: FeederModel):
    nominal = injections_from_loads(four_bus)
    scaled = injections_from_loads(four_bus, {Terminal(3, Phase.B): 2.0})
    position = four_bus.load_terminals.index(Terminal(3, Phase.B))
    assert scaled.power[position] == 2.0 * nominal.power[position]
    others = np.arange(len(nominal.power)) != position
    np.testing.assert_array_equal(scaled.power[others], nominal.power[others])
    with pytest.raises(ValueError):
        injections_from_loads(four_bus, float("nan"))


def test_control_vector_conversions(four_bus: FeederModel):
    injections = injections_from_loads(four_bus)
    controls = injections.as_controls()
    n = len(four_bus.load_terminals)
    assert controls.shape == (2 * n,)
    np.testing.assert_array_equal(controls[:n], injections.p)
    np.testing.assert_array_equal(controls[n:], injections.q)
    np.testing.assert_array_equal(injections.with_controls(controls).power, injections.power)
    perturbed = injections.perturbed(n + 1, 0.5)
    assert perturbed.q[1] == injections.q[1] + 0.5
    assert perturbed.p[1] == injections.p[1]
    with pytest.raises(ValueError):
        injections.with_controls(controls[:-1])
    with pytest.raises(ValueError):
        InjectionVector(four_bus.load_terminals, np.full(n, np.inf))


def test_singular_matrix_is_rejected():
    near = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]], dtype=np.complex128)
    with pytest.raises(SingularSystemError) as info:
        _factorize(near, "矩阵奇异。")
    assert info.value.condition > 1e12
    assert str(info.value).startswith("矩阵奇异。")

    with pytest.raises(SingularSystemError) as info:
        _factorize(np.array([[1.0, np.nan], [0.0, 1.0]]), "矩阵奇异。")
    assert info.value.condition == math.inf


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_exactly_singular_matrix_is_rejected():
    with pytest.raises(SingularSystemError):
        _factorize(np.ones((2, 2), dtype=np.complex128), "矩阵奇异。")
    with pytest.raises(SingularSystemError):
        _factorize(np.zeros((3, 3), dtype=np.complex128), "矩阵奇异。")


def test_well_conditioned_matrix_is_factorized(four_bus: FeederModel):
    load = four_bus.load_indices
    reduced = four_bus.admittance[np.ix_(load, load)]
    lu, pivots = _factorize(reduced, "降阶导纳矩阵奇异。")
    assert lu.shape == reduced.shape
    assert pivots.shape == (len(load),)


def test_concurrent_solves_share_model(thirty_bus: FeederModel):
    scales = [0.6, 0.8, 1.0, 1.2] * 2
    serial = [solve(thirty_bus, injections_from_loads(thirty_bus, scale)) for scale in scales]
    with ThreadPoolExecutor(max_workers=4) as pool:
        parallel = list(pool.map(
            lambda scale: solve(thirty_bus, injections_from_loads(thirty_bus, scale)), scales
        ))
    for expected, actual in zip(serial, parallel):
        np.testing.assert_allclose(actual.voltages, expected.voltages, rtol=0, atol=1e-12)
        assert actual.iterations == expected.iterations

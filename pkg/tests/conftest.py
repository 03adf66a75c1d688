from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pytest

from phasebal.data import FOUR_BUS, THIRTY_BUS, bundled_path
from phasebal.feeder import FeederModel, load_feeder, parse_feeder
from phasebal.powerflow import VoltageState, injections_from_loads, solve

Document = Dict[str, Any]
BusRow = Tuple[int, str, str]
SegmentRow = Tuple[int, int, Any]
LoadRow = Tuple[int, str, float, float]

# 架空线路每英里阻抗（Ω），非换位、互感不对称。
COUPLED_Z = np.array([
    [0.3465 + 1.0179j, 0.1560 + 0.5017j, 0.1580 + 0.4236j],
    [0.1560 + 0.5017j, 0.3375 + 1.0478j, 0.1535 + 0.3849j],
    [0.1580 + 0.4236j, 0.1535 + 0.3849j, 0.3414 + 1.0348j],
])

SYMMETRIC_Z = np.array([
    [0.35 + 1.0j, 0.15 + 0.45j, 0.15 + 0.45j],
    [0.15 + 0.45j, 0.35 + 1.0j, 0.15 + 0.45j],
    [0.15 + 0.45j, 0.15 + 0.45j, 0.35 + 1.0j],
])

DECOUPLED_Z = np.diag([0.3 + 0.9j, 0.32 + 0.95j, 0.31 + 0.92j])


def encode_matrix(matrix: Any) -> List[List[List[float]]]:
    values = np.asarray(matrix, dtype=np.complex128)
    return [[[float(cell.real), float(cell.imag)] for cell in row] for row in values]


def build_document(
    buses: Sequence[BusRow],
    segments: Sequence[SegmentRow],
    loads: Sequence[LoadRow] = (),
    base_kv: float = 2.4,
    s_base_kva: float = 1000.0,
    shunts: Optional[Dict[Tuple[int, int], Any]] = None
) -> Document:
    shunts = shunts or {}
    document: Document = {
        "s_base_kva": s_base_kva,
        "buses": [
            {"id": bus, "kind": kind, "phases": phases, "base_kv": base_kv}
            for bus, kind, phases in buses
        ],
        "segments": [],
        "loads": [
            {"bus": bus, "phase": phase, "p_kw": p, "q_kvar": q}
            for bus, phase, p, q in loads
        ],
    }
    for head, tail, z in segments:
        segment: Dict[str, Any] = {"from": head, "to": tail, "z_ohm": encode_matrix(z)}
        if (head, tail) in shunts:
            segment["y_shunt_s"] = encode_matrix(shunts[(head, tail)])
        document["segments"].append(segment)
    return document


@pytest.fixture
def make_document() -> Callable[..., Document]:
    return build_document


@pytest.fixture
def make_feeder() -> Callable[..., FeederModel]:
    def factory(*args: Any, **kwargs: Any) -> FeederModel:
        return parse_feeder(build_document(*args, **kwargs))

    return factory


@pytest.fixture
def two_bus_document() -> Document:
    return build_document(
        [(1, "slack", "abc"), (2, "load", "abc")],
        [(1, 2, 0.5 * COUPLED_Z)],
        [(2, "a", 180.0, 80.0), (2, "b", 120.0, 50.0), (2, "c", 90.0, 45.0)]
    )


@pytest.fixture
def two_bus(two_bus_document: Document) -> FeederModel:
    return parse_feeder(two_bus_document)


@pytest.fixture
def decoupled() -> FeederModel:
    return parse_feeder(build_document(
        [(1, "slack", "abc"), (2, "load", "abc"), (3, "load", "abc")],
        [(1, 2, 0.4 * DECOUPLED_Z), (2, 3, 0.3 * DECOUPLED_Z)],
        [
            (2, "a", 150.0, 60.0), (2, "b", 90.0, 40.0), (2, "c", 60.0, 20.0),
            (3, "a", 70.0, 30.0), (3, "b", 110.0, 50.0), (3, "c", 40.0, 10.0),
        ]
    ))


@pytest.fixture
def symmetric() -> FeederModel:
    loads: List[LoadRow] = []
    for bus, (p, q) in {2: (100.0, 40.0), 3: (80.0, 30.0), 4: (60.0, 25.0)}.items():
        loads.extend((bus, phase, p, q) for phase in "abc")
    return parse_feeder(build_document(
        [(1, "slack", "abc"), (2, "load", "abc"), (3, "load", "abc"), (4, "load", "abc")],
        [(1, 2, 0.25 * SYMMETRIC_Z), (2, 3, 0.2 * SYMMETRIC_Z), (2, 4, 0.3 * SYMMETRIC_Z)],
        loads
    ))


@pytest.fixture
def laterals() -> FeederModel:
    """
    带两相及单相分支的小型馈线。
    """

    two_phase = COUPLED_Z.copy()
    two_phase[2, :] = 0
    two_phase[:, 2] = 0
    single = np.zeros((3, 3), dtype=np.complex128)
    single[2, 2] = 1.33 + 1.35j
    return parse_feeder(build_document(
        [
            (1, "slack", "abc"), (2, "load", "abc"), (3, "load", "abc"),
            (4, "load", "ab"), (5, "load", "c"),
        ],
        [
            (1, 2, 0.3 * COUPLED_Z), (2, 3, 0.2 * COUPLED_Z),
            (2, 4, 0.2 * two_phase), (3, 5, 0.15 * single),
        ],
        [
            (2, "a", 90.0, 40.0), (2, "b", 60.0, 25.0), (2, "c", 50.0, 20.0),
            (3, "a", 40.0, 15.0), (3, "b", 30.0, 12.0), (3, "c", 20.0, 8.0),
            (4, "a", 60.0, 25.0), (4, "b", 35.0, 15.0), (5, "c", 45.0, 20.0),
        ]
    ))


@pytest.fixture(scope="session")
def four_bus() -> FeederModel:
    return load_feeder(bundled_path(FOUR_BUS))


@pytest.fixture(scope="session")
def thirty_bus() -> FeederModel:
    return load_feeder(bundled_path(THIRTY_BUS))


@pytest.fixture(scope="session")
def four_bus_state(four_bus: FeederModel) -> VoltageState:
    return solve(four_bus, injections_from_loads(four_bus))


@pytest.fixture(scope="session")
def thirty_bus_state(thirty_bus: FeederModel) -> VoltageState:
    return solve(thirty_bus, injections_from_loads(thirty_bus))

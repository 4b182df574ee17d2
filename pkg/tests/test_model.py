import json

import numpy as np
import pytest

from diagcert import data_path
from diagcert.model import (ContinuousModel, DomainError, FiniteModel, SpecError, dump_system, load_system,
                            successor, two_room_model)
from diagcert.sets import Box


def test_running_example_loads(running):
    assert isinstance(running, FiniteModel)
    assert len(running.states) == 9
    assert [running.states[i] for i in running.initial] == [(0.0,)]
    assert [running.states[i] for i in running.faulty] == [(1.2,)]


def test_two_room_document_matches_builder(two_room):
    m = load_system(data_path("two_room.json"))
    assert isinstance(m, ContinuousModel)
    assert m == two_room
    assert m.X == Box(("x1", "x2"), (15.0, 15.0), (30.0, 30.0))
    assert m.X0 == Box(("x1", "x2"), (19.5, 19.5), (20.5, 20.5))
    assert m.XF == Box(("x1", "x2"), (24.0, 24.0), (26.0, 26.0))
    assert m.U == Box(("u1", "u2"), (0.0, 0.0), (1.0, 1.0))


def test_initial_set_must_sit_inside_state_set():
    doc = json.load(open(data_path("two_room.json")))
    doc["X0"] = [[0, 40], [0, 40]]
    with pytest.raises(SpecError, match="initial set not contained in state set"):
        load_system(doc)


def test_partial_transition_map_rejected():
    with pytest.raises(SpecError, match="not total"):
        FiniteModel([(0,), (1,)], [0], [1], [(0,)], {(0, 0): 1}, [(0,), (1,)])


@pytest.mark.parametrize("x,u,want", [((0.0,), (1.0,), (1.2,)), ((0.0,), (2.0,), (2.2,)), ((7.2,), (2.0,), (7.2,))])
def test_running_successors(running, x, u, want):
    assert successor(running, x, u) == want


def test_two_room_successor(two_room):
    got = successor(two_room, (20.0, 20.0), (0.5, 0.5))
    np.testing.assert_allclose(got, (21.575, 21.575), atol=1e-12)


def test_successor_domain_errors(running, two_room):
    with pytest.raises(DomainError):
        successor(running, (0.5,), (1.0,))
    with pytest.raises(DomainError):
        successor(two_room, (20.0, 20.0), (1.5, 0.0))
    with pytest.raises(DomainError):
        successor(two_room, (40.0, 20.0), (0.5, 0.5))


@pytest.mark.parametrize("name", ["running.json", "two_room.json"])
def test_dump_round_trip(name):
    m = load_system(data_path(name))
    assert load_system(json.loads(json.dumps(dump_system(m)))) == m


def test_batch_successor_matches_scalar(two_room):
    rng = np.random.default_rng(0)
    xs = rng.uniform(15, 30, (50, 2))
    us = rng.uniform(0, 1, (50, 2))
    batch = two_room.successor_batch(xs, us)
    for x, u, b in zip(xs, us, batch):
        np.testing.assert_allclose(successor(two_room, x, u), b, rtol=1e-12)

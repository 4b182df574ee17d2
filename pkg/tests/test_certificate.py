import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diagcert.automaton import ACCEPT, TRAP, build_dfa, label_partition, nxt
from diagcert.certificate import (INVALID, VALID, Certificate, CertificateError, Template, b_conditions,
                                  check_certificate, compute_pre_complement, v_conditions, zero_certificate)
from diagcert.falsifier import Counterexample
from diagcert.model import ContinuousModel, FiniteModel
from diagcert.polynomial import Polynomial
from diagcert.sets import Box, union_contains


def _line_model(f):
    X = Box.from_bounds(["x1"], [(-1, 1)])
    return ContinuousModel(1, 1, 1, X, Box.from_bounds(["x1"], [(-0.5, 0.5)]), Box.from_bounds(["x1"], [(0.8, 1)]),
                           Box.from_bounds(["u1"], [(0, 1)]), (f,), (Polynomial.var("x1"),))


def test_condition_counts_running_k3(running_k3):
    conds = b_conditions(*running_k3)
    tags = [c.tag for c in conds]
    assert tags.count("init") == 3
    assert tags.count("accept") == 1
    assert tags.count("decrease") == 3 + 2 + 2 + 2 + 1


def test_zero_delay_decrease_sources(running):
    dfa = build_dfa(1.0, 0)
    conds = b_conditions(running, dfa, label_partition(running, 1.0))
    assert {c.q for c in conds if c.tag == "decrease"} == {"q0", ACCEPT}


@pytest.mark.parametrize("K", range(6))
def test_condition_count_formula(running, K):
    dfa = build_dfa(1.0, K)
    conds = b_conditions(running, dfa, label_partition(running, 1.0))
    assert sum(c.tag == "init" for c in conds) == len(nxt(dfa, "q0"))
    assert sum(c.tag == "decrease" for c in conds) == sum(len(nxt(dfa, q)) for q in dfa.states if q != TRAP)
    excl = b_conditions(running, dfa, label_partition(running, 1.0), exclude_accepting_decrease=True)
    assert sum(c.tag == "decrease" for c in excl) == sum(c.tag == "decrease" for c in conds) - 1


def test_accepting_condition_covers_all_pairs(running_k3, two_room):
    (acc,) = [c for c in b_conditions(*running_k3) if c.tag == "accept"]
    assert len(acc.domain) == 81
    dfa = build_dfa(0.5, 5)
    (acc2,) = [c for c in b_conditions(two_room, dfa, label_partition(two_room, 0.5)) if c.tag == "accept"]
    assert len(acc2.domain) == 1 and not acc2.domain[0].constraints
    assert acc2.domain[0].base.lo == (15.0,) * 4 and acc2.domain[0].base.hi == (30.0,) * 4


def test_v_decrease_sources_exclude_accepting(running_k2):
    vc = v_conditions(*running_k2)
    assert vc.decrease_sources == ["q0", "q1", "q2", TRAP]


def test_running_pre_complement_empty(running):
    assert len(compute_pre_complement(running).pre_complement) == 0


def test_v_conditions_need_domain_for_continuous(two_room):
    dfa = build_dfa(0.5, 3)
    with pytest.raises(CertificateError):
        v_conditions(two_room, dfa, label_partition(two_room, 0.5))


def test_pre_complement_identity_keeps_only_boundary_layer():
    # closed interval images touch X at the boundary, so one cell layer survives; nothing farther out
    vd = compute_pre_complement(_line_model(Polynomial.var("x1")), 0.1)
    for s in vd.pre_complement:
        lo, hi = np.array(s.base.lo), np.array(s.base.hi)
        assert np.all(lo >= -1.1 - 1e-9) and np.all(hi <= 1.1 + 1e-9)
    for p in [(1.15, 0.0), (-1.3, 0.0), (0.0, 1.2)]:
        assert not union_contains(vd.pre_complement, p)


def test_pre_complement_constant_map_is_shell():
    vd = compute_pre_complement(_line_model(Polynomial.const(0.0)), 0.1)
    assert vd.pre_complement
    for p in [(1.05, 0.0), (-1.05, 0.3), (1.05, -1.05), (0.0, 1.05)]:
        assert union_contains(vd.pre_complement, p)
    for p in [(0.0, 0.0), (1.0, 1.0), (-1.0, 0.2)]:
        assert not union_contains(vd.pre_complement, p)


def test_two_room_pre_complement_sound(two_room):
    vd = compute_pre_complement(two_room, 0.25)
    assert vd.provenance == "computed" and vd.pre_complement
    rng = np.random.default_rng(1)
    # members are outside R
    for s in vd.pre_complement[:20]:
        lo, hi = np.array(s.base.lo), np.array(s.base.hi)
        for p in lo + rng.random((50, 4)) * (hi - lo):
            if s.contains(p):
                assert not (two_room.X.contains(p[:2]) and two_room.X.contains(p[2:]))
    # every sampled pair outside R with an input sending both copies into X is covered
    pts = rng.uniform(10, 35, (20000, 4))
    out = ~(two_room.X.contains_batch(pts[:, :2]) & two_room.X.contains_batch(pts[:, 2:]))
    us = rng.uniform(0, 1, (20000, 4))
    a = two_room.successor_batch(pts[:, :2], us[:, :2])
    b = two_room.successor_batch(pts[:, 2:], us[:, 2:])
    into = two_room.X.contains_batch(a) & two_room.X.contains_batch(b)
    for p in pts[out & into][:300]:
        assert union_contains(vd.pre_complement, p)


def test_printed_barrier_evaluation_matches_piecewise(running_k3, printed_b):
    _, dfa, _ = running_k3
    rng = np.random.default_rng(4)
    for q in dfa.states:
        poly = printed_b.at(dfa, q)
        for xv, xh in rng.uniform(0, 9, (100, 2)):
            assert printed_b.value(dfa, (xv,), (xh,), q) == pytest.approx(
                poly.compile(printed_b.names).values(np.array([[xv, xh]]))[0])
    q0 = printed_b.at(dfa, "q0")
    assert q0.constant_term() == pytest.approx(-0.2075)


def test_certificate_json_round_trip(printed_b, printed_v):
    for c in (printed_b, printed_v):
        assert Certificate.from_json(json.loads(c.dumps())) == c


def test_certificate_needs_all_locations(printed_b):
    doc = printed_b.to_json()
    doc["locations"] = doc["locations"][:-1]
    with pytest.raises(CertificateError):
        Certificate.from_json(doc)


def test_zero_barrier_invalid_at_accepting(running_k3):
    m, dfa, part = running_k3
    rep = check_certificate(m, dfa, part, zero_certificate("B", dfa, 1))
    assert rep.verdict == INVALID
    assert isinstance(dict(rep.outcomes)["accept[F]"], Counterexample)


def test_zero_barrier_invalid_two_room(two_room):
    dfa = build_dfa(0.5, 5)
    rep = check_certificate(two_room, dfa, label_partition(two_room, 0.5), zero_certificate("B", dfa, 2),
                            mode="falsify")
    assert rep.verdict == INVALID and "accept[F]" in rep.failing()


def test_k_mismatch_rejected(running, printed_b):
    dfa = build_dfa(1.0, 2)
    with pytest.raises(CertificateError):
        check_certificate(running, dfa, label_partition(running, 1.0), printed_b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.integers(1, 3))
def test_template_features_match_instantiation(K, degree):
    dfa = build_dfa(1.0, K)
    box = Box.from_bounds(["x1", "xh1"], [(0, 9), (0, 9)])
    t = Template.full(1, degree, K + 3, box)
    coeffs = np.random.default_rng(K * 10 + degree).normal(size=t.n_coeffs)
    cert = t.instantiate("B", dfa, coeffs, 1)
    pts = np.random.default_rng(0).uniform(0, 9, (20, 2))
    for q in dfa.states:
        loc = dfa.delta_index[q]
        off = t.offsets[loc]
        want = t.features(loc, pts) @ coeffs[off:off + t.sizes[loc]]
        got = cert.at(dfa, q).compile(cert.names).values(pts)
        np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-8)

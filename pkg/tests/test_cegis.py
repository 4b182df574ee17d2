import numpy as np
import pytest

from diagcert.automaton import build_dfa, label_partition
from diagcert.cegis import (Budget, CegisConfig, Certified, Infeasible, SampleBank, TemplateInfeasible,
                            default_template, fit_b_coefficients, initial_bank, solve_rows, synthesize_b,
                            synthesize_v)
from diagcert.certificate import VALID, Certificate, Condition, Part, b_conditions, check_certificate
from diagcert.lp import max_margin
from diagcert.product import verify_exact
from diagcert.sets import FiniteDomain

from conftest import random_finite_model


def _empty_bank(d=2, du=2):
    z = lambda k: np.zeros((0, k))
    return SampleBank(z(d), z(du), z(d), z(d + du), z(d), z(d))


def _full_bank(model, cfg):
    big = CegisConfig(n_samples=10**6, p_samples=10**6, j_samples=10**6)
    return initial_bank(model, big, np.random.default_rng(0))


@pytest.mark.parametrize("field,value", [("eps", 0.0), ("eps_dec", -1.0), ("c_max", 0.0), ("i_max", 0)])
def test_config_validation(field, value):
    with pytest.raises(ValueError):
        CegisConfig(**{field: value})


def test_empty_bank_fits(running_k3):
    m, dfa, part = running_k3
    cert = fit_b_coefficients(m, dfa, part, default_template(m, dfa, 3), _empty_bank())
    assert isinstance(cert, Certificate)


def test_contradictory_bank_infeasible(running_k3):
    m, dfa, part = running_k3
    init = [c for c in b_conditions(m, dfa, part) if c.name == "init[q0]"]
    clash = Condition("accept", "q0", None, FiniteDomain(("x1", "xh1"), [[0.0, 0.0]]), ">", (Part(1.0, 0, False),))
    bank = _empty_bank()
    bank.add("pairs", np.array([[0.0, 0.0]]))
    out = fit_b_coefficients(m, dfa, part, default_template(m, dfa, 3), bank, conditions=init + [clash])
    assert isinstance(out, Infeasible)


def test_exhaustive_bank_gives_valid_cubic(running_k3):
    m, dfa, part = running_k3
    cfg = CegisConfig(degree=3)
    cert = fit_b_coefficients(m, dfa, part, default_template(m, dfa, 3), _full_bank(m, cfg), cfg)
    assert isinstance(cert, Certificate)
    assert check_certificate(m, dfa, part, cert).verdict == VALID


def test_synthesize_b_running_k3(running_k3):
    m, dfa, part = running_k3
    out = synthesize_b(m, dfa, part, cfg=CegisConfig(degree=3))
    assert isinstance(out, Certified) and not out.at_resolution
    assert out.report.verdict == VALID
    assert check_certificate(m, dfa, part, out.certificate).verdict == VALID
    assert verify_exact(m, 1.0, 3).diagnosable


def test_synthesize_b_small_banks_grow(running_k3):
    m, dfa, part = running_k3
    out = synthesize_b(m, dfa, part, cfg=CegisConfig(degree=3, n_samples=6, p_samples=2))
    assert isinstance(out, Certified)
    sizes = [sum(e.bank[k] for k in ("D_x", "D_u", "joint")) for e in out.log]
    # sizes are logged after each round's additions; the terminal round adds nothing
    assert len(out.log) > 2
    assert all(a < b for a, b in zip(sizes[:-2], sizes[1:-1])) and sizes[-1] == sizes[-2]


@pytest.mark.parametrize("degree", [2, 3])
def test_synthesize_b_running_k2_never_certified(running_k2, degree):
    m, dfa, part = running_k2
    out = synthesize_b(m, dfa, part, cfg=CegisConfig(degree=degree))
    assert isinstance(out, (TemplateInfeasible, Budget))


def test_synthesize_v_running_k2(running_k2):
    m, dfa, part = running_k2
    out = synthesize_v(m, dfa, part, cfg=CegisConfig(degree=2))
    assert isinstance(out, Certified) and out.report.verdict == VALID
    assert not verify_exact(m, 1.0, 2).diagnosable


def test_synthesize_v_running_k3_never_certified(running_k3):
    m, dfa, part = running_k3
    out = synthesize_v(m, dfa, part, cfg=CegisConfig(degree=2, i_max=20))
    assert isinstance(out, (TemplateInfeasible, Budget))


def test_literal_reading_is_infeasible_on_running(running_k2):
    m, dfa, part = running_k2
    out = synthesize_v(m, dfa, part, cfg=CegisConfig(degree=2, semantics="literal", i_max=10))
    assert not isinstance(out, Certified)


def test_solve_rows_agrees_with_direct_margin():
    rng = np.random.default_rng(8)
    for _ in range(20):
        A = rng.normal(size=(3000, 4))
        b = rng.uniform(0.0, 1.0, 3000) - 0.05
        lazy = solve_rows(A, b, 10.0, max_active=300, rng=rng)
        full = max_margin(A, b, 10.0)
        assert lazy.feasible == full.feasible
        if lazy.feasible:
            assert np.all(A @ lazy.coefficients <= b + 1e-7)


def test_solve_rows_zero_row_with_negative_bound():
    assert not solve_rows(np.zeros((1, 3)), np.array([-1.0]), 10.0).feasible


def test_certificate_chains_on_random_models():
    """Whatever CEGIS certifies must agree with the exact oracle."""
    rng = np.random.default_rng(31)
    seen = {"B": 0, "V": 0}
    for _ in range(40):
        m = random_finite_model(rng, max_states=6, max_inputs=2)
        K = int(rng.integers(0, 3))
        dfa, part = build_dfa(1.0, K), label_partition(m, 1.0)
        cfg = CegisConfig(degree=2, i_max=15)
        b = synthesize_b(m, dfa, part, cfg=cfg)
        if isinstance(b, Certified) and b.report.verdict == VALID:
            seen["B"] += 1
            assert verify_exact(m, 1.0, K).diagnosable
        v = synthesize_v(m, dfa, part, cfg=cfg)
        if isinstance(v, Certified) and v.report.verdict == VALID:
            seen["V"] += 1
            assert not verify_exact(m, 1.0, K).diagnosable
    assert seen["B"] > 0 and seen["V"] > 0

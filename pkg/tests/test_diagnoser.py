import io
import itertools

import numpy as np
import pytest

from diagcert.diagnoser import (FAULT, RUNNING, DiagnoserError, GridConfig, diag_init, diag_step, exact_fault_step,
                                read_stream, run_diagnoser, simulate, write_stream)
from diagcert.model import DomainError, FiniteModel
from diagcert.product import verify_exact

from conftest import random_finite_model


def _sets(trace):
    return [sorted(v for (v,) in s.states()) for s in trace.states]


def test_golden_faulty_trace(running):
    tr = run_diagnoser(running, 1.0, 3, [(0,), (2.2,), (3.2,), (5.2,), (7.2,)])
    assert _sets(tr) == [[0.0], [2.2], [4.2], [6.2], []]
    assert tr.verdict == 1 and tr.detection_step == 4
    assert tr.final.window == (1, 4)


def test_golden_silent_trace(running):
    tr = run_diagnoser(running, 1.0, 3, [(0,), (1.2,), (3.2,), (5.2,), (9.0,)])
    assert _sets(tr) == [[0.0], [2.2], [4.2], [6.2], [9.0]]
    assert tr.verdict == 0 and tr.final.verdict == RUNNING


def test_inconsistent_first_observation(running):
    st = diag_init(running, 1.0, (9.0,), 3)
    assert st.verdict == FAULT and st.inconsistent_at_start and st.window == (0, 0)


def test_empty_stream(running):
    tr = run_diagnoser(running, 1.0, 3, [])
    assert tr.verdict == 0 and tr.final is None


def test_stepping_after_report_fails(running):
    st = diag_init(running, 1.0, (9.0,), 3)
    with pytest.raises(DiagnoserError):
        diag_step(st, (0.0,))


def test_identity_system_never_reports():
    m = FiniteModel([(0.0,)], [0], [], [(0.0,)], {(0, 0): 0}, [(1.0,)])
    tr = run_diagnoser(m, 0.5, 2, [(1.2,)] * 50)
    assert tr.verdict == 0 and len(tr.states) == 50


def test_two_room_initial_cloud(two_room):
    st = diag_init(two_room, 0.5, (20.0, 20.0))
    assert st.backend == "grid" and st.size > 0
    assert two_room.X0.contains_batch(np.array(st.M), 1e-12).all()


def test_simulate_running(running):
    sim = simulate(running, (0.0,), [(1,), (2,), (1,), (2,)], 1.0, noise=False)
    assert [s[0] for s in sim.states] == [0.0, 1.2, 3.2, 5.2, 7.2]
    assert sim.observations == sim.outputs
    assert sim.first_fault(running) == 1


def test_simulation_noise_is_bounded(two_room):
    sim = simulate(two_room, (20.0, 20.0), [(0.5, 0.5)] * 10, 0.5, seed=3)
    d = np.linalg.norm(np.array(sim.observations) - np.array(sim.outputs), axis=1)
    assert (d <= 0.5 + 1e-12).all() and (d > 0).any()
    assert simulate(two_room, (20.0, 20.0), [(0.5, 0.5)] * 10, 0.5, seed=3) == sim


def test_simulation_domain_error_names_step(two_room):
    with pytest.raises(DomainError, match="step 12"):
        simulate(two_room, (20.0, 20.0), [(0.5, 0.5)] * 15, 0.5)
    with pytest.raises(DomainError):
        simulate(two_room, (25.0, 25.0), [(0.5, 0.5)], 0.5)


def test_exact_fault_step_two_room(two_room):
    # states 21.575, 22.957..., 24.170... on the diagonal: XF is entered at step 3
    assert exact_fault_step(two_room, (20, 20), [(0.5, 0.5)] * 10) == 3
    sim = simulate(two_room, (20.0, 20.0), [(0.5, 0.5)] * 10, 0.5, noise=False)
    assert sim.first_fault(two_room) == 3
    assert sim.states[1][0] == pytest.approx(21.575)


def test_two_room_indistinguishable_fixed_points(two_room):
    # constant inputs pin one run inside XF and a fault-free one just outside, closer than delta forever
    steps = 400
    x = simulate(two_room, (20.0, 20.0), [(0.22, 0.22)] * steps, 0.5, noise=False)
    xh = simulate(two_room, (20.0, 20.0), [(0.21, 0.22)] * steps, 0.5, noise=False)
    xs, xhs = np.array(x.states), np.array(xh.states)
    kf = x.first_fault(two_room)
    assert kf == 30
    assert not two_room.faulty_batch(xhs).any()
    gap = np.abs(two_room.output_batch(xs) - two_room.output_batch(xhs)).max(axis=1)
    assert gap[kf:].max() < 0.42
    # both runs have converged, so the pair repeats and the fault is never separated
    np.testing.assert_allclose(xs[-1], xs[-2], atol=1e-12)
    np.testing.assert_allclose(xhs[-1], xhs[-2], atol=1e-12)


def test_stream_round_trip():
    obs = [(0.0,), (2.2,), (3.25,)]
    buf = io.StringIO()
    write_stream(obs, buf)
    buf.seek(0)
    assert list(read_stream(buf)) == obs


def test_stream_order_checked():
    with pytest.raises(ValueError, match="expected k=1"):
        list(read_stream(io.StringIO('{"k": 0, "y": [0]}\n{"k": 2, "y": [1]}\n')))


def _runs(model, horizon):
    for x0 in model.initial:
        for word in itertools.product(range(len(model.inputs)), repeat=horizon):
            run = [x0]
            for a in word:
                run.append(int(model.table[run[-1], a]))
            yield run


def _obs_variants(model, run, delta, rng, count):
    """Observations within delta of the true outputs, including the extremes."""
    y = model.outputs[run]
    yield y
    for _ in range(count):
        dirs = rng.choice([-1.0, 1.0], size=y.shape) * rng.random(y.shape)
        yield y + delta * dirs / np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1.0)


def test_soundness_on_fault_free_runs():
    rng = np.random.default_rng(12)
    models = [random_finite_model(rng, 6, 2) for _ in range(25)]
    for m in models:
        for run in _runs(m, 5):
            if m.fault_mask[run].any():
                continue
            for obs in _obs_variants(m, run, 1.0, rng, 2):
                assert run_diagnoser(m, 1.0, 2, obs).verdict == 0


def _diagnosable_cases(running, rng, delta):
    cases = [(running, 3)] if verify_exact(running, delta, 3).diagnosable else []
    while len(cases) < 15:
        m = random_finite_model(rng, 6, 2)
        K = int(rng.integers(0, 3))
        if verify_exact(m, delta, K).diagnosable:
            cases.append((m, K))
    return cases


def _faulty_runs(m, horizon, K):
    for run in _runs(m, horizon):
        faults = np.where(m.fault_mask[run])[0]
        if len(faults) and faults[0] + K < len(run):
            yield run, int(faults[0])


def test_completeness_exact_observations(running):
    checked = 0
    for m, K in _diagnosable_cases(running, np.random.default_rng(13), 1.0):
        for run, kf in _faulty_runs(m, 8 if m is running else 6, K):
            tr = run_diagnoser(m, 1.0, K, m.outputs[run])
            assert tr.verdict == 1 and tr.detection_step <= kf + K
            lo, hi = tr.final.window
            assert lo <= kf <= hi
            checked += 1
    assert checked > 100


def test_completeness_noisy_observations_at_double_precision(running):
    """With observations off by up to delta, detection needs diagnosability at 2 * delta."""
    rng = np.random.default_rng(14)
    checked = 0
    for m, K in _diagnosable_cases(running, rng, 2.0):
        for run, kf in _faulty_runs(m, 6, K):
            for obs in _obs_variants(m, run, 1.0, rng, 2):
                tr = run_diagnoser(m, 1.0, K, obs)
                assert tr.verdict == 1 and tr.detection_step <= kf + K
                checked += 1
    assert checked > 100


def test_noisy_observations_can_hide_fault_on_running_example(running):
    """A faulty run whose delta-bounded observations track a fault-free run forever.

    True run 0, 1.2, 3.2, 5.2, 7.2, 7.2, ... (fault at step 1); every observation
    is within 0.9 of the true output, yet the fault-free run 0, 2.2, 4.2, 6.2, 9, 9, ...
    stays within delta of all of them.
    """
    true = [0.0, 1.2, 3.2, 5.2, 7.2, 7.2, 7.2, 7.2]
    obs = [(0.0,), (2.1,), (4.1,), (6.1,), (8.1,), (8.1,), (8.1,), (8.1,)]
    assert all(abs(a - b[0]) <= 1.0 for a, b in zip(true, obs))
    tr = run_diagnoser(running, 1.0, 3, obs)
    assert tr.verdict == 0 and tr.final.states() == [(9.0,)]
    assert not verify_exact(running, 2.0, 3).diagnosable


def test_grid_backend_is_inner_approximation(two_room):
    sim = simulate(two_room, (20.0, 20.0), [(0.5, 0.5)] * 6, 0.5, seed=0)
    st = diag_init(two_room, 0.5, sim.observations[0], 5, GridConfig(per_dim=11))
    for y in sim.observations[1:]:
        prev = np.array(st.M)
        st = diag_step(st, y)
        if st.verdict != RUNNING:
            break
        pts = np.array(st.M)
        # every tracked point is consistent with the observation and outside XF
        assert (np.linalg.norm(pts - np.array(y), axis=1) <= 0.5 + 1e-9).all()
        assert not two_room.faulty_batch(pts).any()
        assert two_room.in_states_batch(pts).all()
        # and is an image of some previous point under an admissible input
        lo = two_room.successor_batch(prev, np.zeros((len(prev), 2)))
        hi = two_room.successor_batch(prev, np.ones((len(prev), 2)))
        a, b = np.minimum(lo, hi), np.maximum(lo, hi)
        reach = ((pts[:, None, :] >= a[None] - 1e-9) & (pts[:, None, :] <= b[None] + 1e-9)).all(axis=2).any(axis=1)
        assert reach.all()


def test_case_study_detection_window(two_room):
    kf = exact_fault_step(two_room, (20, 20), [(0.5, 0.5)] * 10)
    sim = simulate(two_room, (20.0, 20.0), [(0.5, 0.5)] * 10, 0.5, seed=0)
    tr = run_diagnoser(two_room, 0.5, 5, sim.observations)
    assert tr.verdict == 1 and kf <= tr.detection_step <= kf + 5

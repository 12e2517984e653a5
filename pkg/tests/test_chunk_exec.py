import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rftsim.chunk_exec import (ExecConfig, NoCoveringChunk, RecedingHorizon, RecedingTemporal,
                               RepresentationMismatch, TemporalEnsemble, ensemble_row, execute_episode,
                               resample_actions, temporal_ensemble_combine, to_absolute, to_delta)
from rftsim.datastore import EpisodeStore
from rftsim.demos import generate_demos
from rftsim.drift import load_scenario
from rftsim.policy import ABSOLUTE, DELTA, ActionChunk, build_knn, knn_train, noisy_expert, scripted_expert
from rftsim.sim import PoseDelta, RobotConfig
from rftsim.sim.types import Action
from rftsim.sim.world import reset, step

HORIZONS = (8, 16, 32, 50)


def _chunk(rows, born=0, rep=ABSOLUTE):
    return ActionChunk(np.array(rows, dtype=np.float64), born, rep, ("move to",) * len(rows))


def test_single_chunk_passes_through():
    c = _chunk([[1, 2, 0.5, 1, 0], [1.5, 2.5, 0.6, 0.9, 1]])
    assert temporal_ensemble_combine([c], 1, 0.7) == Action(RobotConfig(1.5, 2.5, 0.6, 0.9), 1)


def test_uniform_average():
    a, b = _chunk([[1, 0, 0, 1, 0]] * 2), _chunk([[3, 0, 0, 1, 0]] * 2)
    assert ensemble_row([a, b], 0, 0.0)[0] == pytest.approx(2.0)


def test_age_weighted_average():
    old = _chunk([[0, 0, 0, 1, 0], [1, 0, 0, 1, 0]], born=0)
    new = _chunk([[0, 0, 0, 1, 0]], born=1)
    x = ensemble_row([old, new], 1, 0.5)[0]
    assert x == pytest.approx(math.exp(-0.5) / (1 + math.exp(-0.5)), abs=1e-12)
    assert round(x, 4) == 0.3775


def test_no_covering_chunk():
    with pytest.raises(NoCoveringChunk):
        ensemble_row([_chunk([[0, 0, 0, 1, 0]], born=0)], 5, 0.1)
    with pytest.raises(NoCoveringChunk):
        ensemble_row([], 0, 0.1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10), st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5),
                                                                 st.floats(-3, 3), st.floats(0, 1),
                                                                 st.integers(0, 1)),
                                                       min_size=11, max_size=11)),
                min_size=1, max_size=6),
       st.floats(0, 2))
def test_ensemble_matches_formula(entries, m):
    buf = [_chunk(rows, born) for born, rows in entries]
    t = 10
    row = ensemble_row(buf, t, m)
    props = [(math.exp(-m * (t - c.born_tick)), c.actions[t - c.born_tick]) for c in buf]
    tot = sum(w for w, _ in props)
    for dim in (0, 1, 3):
        assert row[dim] == pytest.approx(sum(w * a[dim] for w, a in props) / tot, abs=1e-9)
    on = sum(w for w, a in props if a[4] >= 0.5)
    assert row[4] == (1.0 if on > tot - on else 0.0)
    ref = props[0][1][2]
    circ = ref + sum(w * math.remainder(a[2] - ref, 2 * math.pi) for w, a in props) / tot
    assert math.remainder(row[2] - circ, 2 * math.pi) == pytest.approx(0.0, abs=1e-9)


rows5 = st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10), st.floats(-math.pi, math.pi),
                           st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=20)


@settings(max_examples=1000, deadline=None)
@given(rows5, st.tuples(st.floats(-10, 10), st.floats(-10, 10), st.floats(-3.1, 3.1), st.floats(0, 1)))
def test_delta_round_trip(rows, ref):
    q = lambda v: round(v * 1e6) / 1e6
    c = _chunk([[q(x), q(y), q(yaw), q(g), i] for x, y, yaw, g, i in rows])
    r = RobotConfig(*(q(v) for v in ref))
    back = to_absolute(to_delta(c, r), r)
    d = back.actions - c.actions
    d[:, 2] = [math.remainder(v, 2 * math.pi) for v in d[:, 2]]
    assert np.abs(d).max() <= 1e-6
    assert np.array_equal(back.actions[:, 4], c.actions[:, 4])


def test_constant_chunk_delta():
    c = _chunk([[1, 2, 0.3, 0.5, 0]] * 5)
    d = to_delta(c, RobotConfig(0, 0, 0, 1))
    assert d.representation == DELTA and not d.actions[1:, :4].any()
    with pytest.raises(RepresentationMismatch):
        to_delta(d, RobotConfig(0, 0))
    with pytest.raises(RepresentationMismatch):
        to_absolute(c, RobotConfig(0, 0))


def test_yaw_wrap_grid():
    grid = np.linspace(-math.pi + 1e-3, math.pi, 37)
    for a in grid:
        for b in grid:
            c = _chunk([[0, 0, round(a, 6), 1, 0], [0, 0, round(b, 6), 1, 0]])
            d = to_delta(c, RobotConfig(0, 0, round(a, 6), 1)).actions[1, 2]
            assert abs(d) <= math.pi + 1e-9
            assert math.remainder(d - (b - a), 2 * math.pi) == pytest.approx(0, abs=2e-6)


@pytest.mark.parametrize("mode", [TemporalEnsemble(0.1), RecedingTemporal(), RecedingHorizon()])
def test_h1_modes_coincide(tasks, mode):
    t = tasks[3]
    ref = execute_episode(t, 1, PoseDelta(0.1, -0.1, 0.2), noisy_expert(0.25), ExecConfig(1), 5)
    ep = execute_episode(t, 1, PoseDelta(0.1, -0.1, 0.2), noisy_expert(0.25), ExecConfig(1, mode), 5)
    assert ep.content_hash == ref.content_hash


def test_receding_temporal_full_is_receding_horizon(tasks):
    t = tasks[5]
    a = execute_episode(t, 0, None, noisy_expert(0.25), ExecConfig(16, RecedingTemporal(16)), 9)
    b = execute_episode(t, 0, None, noisy_expert(0.25), ExecConfig(16, RecedingHorizon()), 9)
    assert a.content_hash == b.content_hash


def test_ensemble_of_constant_policy(tasks):
    t = tasks[1]
    obs_dim = 4 + len(t.scene.devices)
    pol = build_knn([(1, np.zeros((1, obs_dim)), np.array([[2.0, 3.0, 0.5, 1.0, 0.0]] * 50),
                      ("move to",) * 50)])
    for m in (0.0, 0.1, 2.0):
        e = execute_episode(t, 0, None, pol, ExecConfig(8, TemporalEnsemble(m)), 0)
        assert np.array_equal(e.actions, np.tile([2.0, 3.0, 0.5, 1.0, 0.0], (e.frame_count, 1)))


def test_expert_receding_horizon_succeeds(suite):
    for t in suite:
        for inst in t.instances:
            ep = execute_episode(t, inst, None, scripted_expert(), ExecConfig(32), 0)
            assert ep.success and ep.steps <= t.max_steps


def test_mode_sweep_grid(tasks):
    t = tasks[1]
    rows = []
    for mode in (TemporalEnsemble(0.1), RecedingTemporal(), RecedingHorizon()):
        for H in HORIZONS:
            ep = execute_episode(t, 0, None, scripted_expert(), ExecConfig(H, mode), 0)
            rows.append((mode.name, H, ep.success))
    assert len(rows) == 12 and all(r[2] for r in rows)


def test_resample_identity_and_length(tasks):
    t = tasks[4]
    ep = execute_episode(t, 0, None, scripted_expert(), ExecConfig(), 0)
    assert resample_actions(ep, 1) is ep
    cut = ep
    cut.check()
    short = resample_actions(ep, 2)
    assert short.frame_count == math.ceil(ep.frame_count / 2) and short.hold_factor == 2


def test_resample_100_frames():
    from rftsim.datastore import Episode

    n = 100
    e = Episode(1, 0, 0, (0, 0, 0, 0), "x", "planner", True, (True,), (0, 0, 0, 1), np.zeros((n, 4)),
                np.zeros((n, 5)), ("move to",) * n, np.ones((n + 1, 1), bool))
    assert resample_actions(e, 2).frame_count == 50


def test_resampled_replay_stays_close(suite):
    for t in suite:
        ep = execute_episode(t, t.instances[0], None, scripted_expert(), ExecConfig(), 0)
        half = resample_actions(ep, 2)
        s = reset(t, t.instances[0])
        for row in half.actions:
            for j in range(2):
                if s.tick >= t.max_steps:
                    break
                s = step(t, s, Action.from_row(row if j == 0 else (*row[:4], 0.0)))
        final = reset(t, t.instances[0])
        for row in ep.actions:
            final = step(t, final, Action.from_row(row))
        assert math.hypot(s.robot.x - final.robot.x, s.robot.y - final.robot.y) <= 0.1


def test_hold_factor_two_cloner(tmp_path, tasks):
    store = EpisodeStore(tmp_path)
    good, lossy = tasks[4], tasks[2]
    m = generate_demos([good, lossy], store, sigma=0.0, per_task=4)
    pol = knn_train(m, store, resample=2)
    assert execute_episode(good, 0, None, pol, ExecConfig(16, hold_factor=2), 0).success
    # opening the fridge and grabbing the bottle are adjacent frames: at 15 Hz they share a
    # window and one interaction is lost
    assert not execute_episode(lossy, 0, None, pol, ExecConfig(16, hold_factor=2), 0).success


def test_delta_representation_matches_absolute_for_expert(tasks):
    t = tasks[3]
    a = execute_episode(t, 2, None, scripted_expert(), ExecConfig(32), 0)
    d = execute_episode(t, 2, None, scripted_expert(), ExecConfig(32, representation=DELTA), 0)
    assert d.success and np.abs(a.actions - d.actions).max() <= 1e-5


def test_drift_scenario():
    task, drift = load_scenario("drift")
    rates = {}
    for name, cfg in {"rh32": ExecConfig(32), "open": ExecConfig(task.max_steps),
                      "te": ExecConfig(32, TemporalEnsemble(0.1))}.items():
        ok = 0
        for e in range(20):
            inst = task.instances[e % len(task.instances)]
            ok += execute_episode(task, inst, None, scripted_expert(), cfg, e,
                                  disturbances=(drift.sample(task, inst, e),)).success
        rates[name] = ok / 20
    assert rates["rh32"] - rates["open"] >= 0.3
    assert rates["rh32"] > rates["te"]
    # the same open-loop plan succeeds when nothing moves
    assert execute_episode(task, 0, None, scripted_expert(), ExecConfig(task.max_steps), 0).success

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rftsim.sim import (Action, Inside, ParseError, PoseDelta, RobotConfig, StepAfterTerminal, ToggledOn,
                        ValidationError, dump_task, eval_predicates, load_task, reset, state_bytes, step)
from rftsim.sim.taskfile import default_suite_dir

MINIMAL = """
task: {id: 7, name: radio, max_steps: 50}
scene:
  bounds: [0, 0, 4, 4]
  robot: {x: 1.0, y: 1.0, yaw: 0.0, gripper: 1.0}
  devices:
  - {id: radio, kind: switch, 'on': false, x: 1.1, y: 1.0}
goals: [ToggledOn(radio)]
instances: [0, 1]
"""

PICK = """
task: {id: 8, name: pick, max_steps: 400}
scene:
  bounds: [0, 0, 10, 8]
  robot: {x: 1.0, y: 1.0, yaw: 0.0, gripper: 1.0}
  objects:
  - {id: cup, x: 1.1, y: 1.0}
  receptacles:
  - {id: sink, kind: container, x: 5.0, y: 1.0}
goals:
- Inside(cup, sink)
instances: [0]
"""


def test_minimal_task():
    t = load_task(MINIMAL)
    assert len(t.goals) == 1 and t.goals[0] == ToggledOn("radio")


def test_dangling_goal_reference():
    with pytest.raises(ValidationError) as e:
        load_task(MINIMAL.replace("ToggledOn(radio)", "ToggledOn(lamp)"))
    assert "lamp" in str(e.value)


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as e:
        load_task("task: {id: 1\n  name: [")
    assert e.value.line is not None


def test_unknown_top_level_key():
    with pytest.raises((ParseError, ValidationError)):
        load_task(MINIMAL + "extra: 1\n")


@pytest.mark.parametrize("text", [MINIMAL.replace("max_steps: 50", "max_steps: 0"),
                                  MINIMAL.replace("goals: [ToggledOn(radio)]", "goals: []"),
                                  MINIMAL.replace("instances: [0, 1]", "instances: [1, 1]")])
def test_invariants_rejected(text):
    with pytest.raises((ParseError, ValidationError)):
        load_task(text)


def test_suite_round_trip(suite):
    assert len(suite) == 12
    assert len({t.task_id for t in suite}) == 12
    assert {len(t.goals) for t in suite} >= {1, 6}
    for f in sorted(default_suite_dir().glob("*.yaml")):
        text = f.read_text()
        t = load_task(text)
        assert dump_task(t) == text
        assert load_task(dump_task(t)) == t


def test_reset_is_deterministic(tasks):
    t = tasks[12]
    assert state_bytes(reset(t, t.instances[1])) == state_bytes(reset(t, t.instances[1]))


def test_reset_perturbation_and_clamp():
    t = load_task(MINIMAL)
    base = reset(t, 0)
    s = reset(t, 0, PoseDelta(0.1, 0, 0, 0))
    assert s.robot.x == pytest.approx(base.robot.x + 0.1, abs=1e-6) and not s.clamped
    far = reset(t, 0, PoseDelta(-5.0, 9.0, 0, 0))
    assert (far.robot.x, far.robot.y) == (0.0, 4.0) and far.clamped
    with pytest.raises(ValueError):
        reset(t, 9)


def test_step_fixed_point():
    t = load_task(MINIMAL)
    s = reset(t, 0)
    n = step(t, s, Action(s.robot, 0))
    assert n.robot == s.robot and n.tick == 1 and n.devices == s.devices and n.objects == s.objects


def test_pick_within_reach():
    t = load_task(PICK)
    s = reset(t, 0)
    n = step(t, s, Action(RobotConfig(1.0, 1.0, 0.0, 0.0), 1))
    assert n.held == "cup" and "cup" not in n.objects


def test_thirty_steps_cover_one_and_a_half_metres():
    t = load_task(PICK)
    s = reset(t, 0)
    target = Action(RobotConfig(3.0, 1.0, 0.0, 1.0), 0)
    for _ in range(30):
        s = step(t, s, target)
    assert s.robot.x - 1.0 == pytest.approx(30 * 0.05, abs=1e-9)
    assert s.robot.y == 1.0


def test_step_after_terminal():
    t = load_task(MINIMAL)
    s = reset(t, 0)
    for _ in range(t.max_steps):
        s = step(t, s, Action(s.robot, 0))
    with pytest.raises(StepAfterTerminal):
        step(t, s, Action(s.robot, 0))


def test_fresh_states_satisfy_nothing(suite):
    for t in suite:
        for inst in t.instances:
            assert not any(eval_predicates(reset(t, inst), t))


def test_predicate_definitions():
    t = load_task(PICK)
    s = reset(t, 0)
    assert eval_predicates(s, t) == (False,)
    s.objects["cup"] = (5.0, 1.0, "sink")
    assert eval_predicates(s, t) == (True,)
    r = load_task(MINIMAL)
    s = reset(r, 0)
    assert eval_predicates(s, r) == (False,)
    s = step(r, s, Action(s.robot, 1))
    assert s.devices["radio"] and eval_predicates(s, r) == (True,)
    assert Inside("cup", "sink") in t.goals


def test_predicates_are_pure(tasks):
    t = tasks[6]
    s = reset(t, 0)
    before = state_bytes(s)
    for _ in range(3):
        eval_predicates(s, t)
    assert state_bytes(s) == before


actions = st.lists(st.tuples(st.floats(-1, 11), st.floats(-1, 9), st.floats(-4, 4), st.floats(0, 1),
                             st.integers(0, 1)), min_size=1, max_size=60)


@settings(max_examples=40, deadline=None)
@given(task_index=st.integers(0, 11), instance=st.integers(0, 3), rows=actions)
def test_replay_invariants(suite, task_index, instance, rows):
    t = suite[task_index]

    def play():
        s = reset(t, t.instances[instance % len(t.instances)])
        for r in rows:
            if s.tick >= t.max_steps:
                break
            tick = s.tick
            s = step(t, s, Action.from_row(r))
            assert s.tick == tick + 1
            placed = {rid for (_, _, rid) in s.objects.values()}
            assert s.held is None or s.held not in s.objects
            assert -math.pi < s.robot.yaw <= math.pi and 0.0 <= s.robot.gripper <= 1.0
            xmin, ymin, xmax, ymax = t.scene.bounds
            assert xmin <= s.robot.x <= xmax and ymin <= s.robot.y <= ymax
            assert placed is not None
        return state_bytes(s)

    assert play() == play()


def test_coordinates_are_quantized(tasks):
    t = tasks[3]
    s = reset(t, 0, PoseDelta(0.123456789, -0.0000004, 0.3, 0))
    for v in s.robot.as_tuple():
        assert abs(v * 1e6 - round(v * 1e6)) < 1e-6
    s = step(t, s, Action.from_row((2.2222222, 3.3333333, 1.0, 0.5, 0)))
    assert np.allclose(np.array(s.robot.as_tuple()) * 1e6, np.round(np.array(s.robot.as_tuple()) * 1e6),
                       atol=1e-6)

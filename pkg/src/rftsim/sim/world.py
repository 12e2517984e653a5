"""Transition rules of the 2.5-D household world."""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

from ..rng import stream
from .types import (Action, Inside, NearRegion, OnTop, PoseDelta, RobotConfig, TaskSpec, ToggledOn,
                    WorldState, normalize_yaw, quantize, wrap_angle)


class StepAfterTerminal(RuntimeError):
    pass


@dataclass(frozen=True)
class Dynamics:
    linear: float = 0.05   # m per tick
    angular: float = 0.1   # rad per tick
    gripper: float = 0.1   # open-fraction per tick
    reach: float = 0.15    # interaction radius, m


DYNAMICS = Dynamics()
_NEAR = 0.02  # below this distance the facing test is skipped


def _clamp(v, lo, hi):
    return lo if v < lo else hi if v > hi else v


def reset(task: TaskSpec, instance_seed: int, perturbation: PoseDelta | None = None,
          *, allow_off_list: bool = False) -> WorldState:
    if instance_seed not in task.instances and not allow_off_list:
        raise ValueError(f"instance seed {instance_seed} is not listed for task {task.task_id}")
    sc = task.scene
    xmin, ymin, xmax, ymax = sc.bounds
    rng = stream("instance", task.task_id, instance_seed)
    recs = {r.id: r for r in sc.receptacles}
    objects = {}
    for o in sc.objects:
        jx, jy = rng.uniform(-sc.jitter, sc.jitter, size=2) if sc.jitter > 0 else (0.0, 0.0)
        if o.inside is not None:
            r = recs[o.inside]
            objects[o.id] = (r.x, r.y, o.inside)
        else:
            objects[o.id] = (quantize(_clamp(o.x + jx, xmin, xmax)), quantize(_clamp(o.y + jy, ymin, ymax)), None)
    p = perturbation or PoseDelta()
    rx, ry = sc.robot.x + p.dx, sc.robot.y + p.dy
    g = sc.robot.gripper + p.dgripper
    cx, cy, cg = _clamp(rx, xmin, xmax), _clamp(ry, ymin, ymax), _clamp(g, 0.0, 1.0)
    clamped = (cx, cy, cg) != (rx, ry, g)
    robot = RobotConfig(quantize(cx), quantize(cy), normalize_yaw(sc.robot.yaw + p.dyaw), quantize(cg))
    devices = {d.id: d.on for d in sc.devices}
    return WorldState(robot, objects, devices, None, 0, clamped)


def can_reach(robot: RobotConfig, x: float, y: float, reach: float = DYNAMICS.reach) -> bool:
    dx, dy = x - robot.x, y - robot.y
    d = math.hypot(dx, dy)
    if d > reach:
        return False
    if d < _NEAR:
        return True
    return abs(wrap_angle(math.atan2(dy, dx) - robot.yaw)) <= math.pi / 2


def _accessible(task: TaskSpec, state: WorldState, rid: str | None) -> bool:
    if rid is None:
        return True
    door = task.scene.receptacle(rid).door
    return door is None or state.devices[door]


def move_robot(robot: RobotConfig, target: RobotConfig, bounds, dyn: Dynamics = DYNAMICS) -> RobotConfig:
    dx, dy = target.x - robot.x, target.y - robot.y
    d = math.hypot(dx, dy)
    if d <= dyn.linear:
        x, y = target.x, target.y
    else:
        x, y = robot.x + dx / d * dyn.linear, robot.y + dy / d * dyn.linear
    xmin, ymin, xmax, ymax = bounds
    e = wrap_angle(target.yaw - robot.yaw)
    yaw = robot.yaw + _clamp(e, -dyn.angular, dyn.angular)
    g = robot.gripper + _clamp(target.gripper - robot.gripper, -dyn.gripper, dyn.gripper)
    return RobotConfig(quantize(_clamp(x, xmin, xmax)), quantize(_clamp(y, ymin, ymax)),
                       normalize_yaw(yaw), quantize(_clamp(g, 0.0, 1.0)))


def step(task: TaskSpec, state: WorldState, action: Action, dyn: Dynamics = DYNAMICS) -> WorldState:
    """Advance one tick.

    The robot moves toward the set-point under the speed caps, then an
    interaction (if triggered) resolves against the new pose: a closed-gripper
    command picks, an open command while holding places, anything else toggles.
    """
    if state.tick >= task.max_steps:
        raise StepAfterTerminal(f"tick {state.tick} reached max_steps={task.max_steps}")
    nxt = state.copy()
    nxt.robot = robot = move_robot(state.robot, action.target, task.scene.bounds, dyn)
    nxt.tick = state.tick + 1
    if not action.interact:
        return nxt

    closing = action.target.gripper < 0.5
    if nxt.held is None and closing:
        best = None
        for oid, (x, y, rid) in nxt.objects.items():
            if _accessible(task, nxt, rid) and can_reach(robot, x, y, dyn.reach):
                d = math.hypot(x - robot.x, y - robot.y)
                if best is None or d < best[0]:
                    best = (d, oid)
        if best is not None:
            nxt.held = best[1]
            del nxt.objects[best[1]]
        return nxt
    if nxt.held is not None and not closing:
        best = None
        for r in task.scene.receptacles:
            if _accessible(task, nxt, r.id) and can_reach(robot, r.x, r.y, dyn.reach):
                d = math.hypot(r.x - robot.x, r.y - robot.y)
                if best is None or d < best[0]:
                    best = (d, r)
        if best is not None:
            r = best[1]
            nxt.objects[nxt.held] = (r.x, r.y, r.id)
            nxt.held = None
        return nxt
    best = None
    for dev in task.scene.devices:
        if can_reach(robot, dev.x, dev.y, dyn.reach):
            d = math.hypot(dev.x - robot.x, dev.y - robot.y)
            if best is None or d < best[0]:
                best = (d, dev.id)
    if best is not None:
        nxt.devices[best[1]] = not nxt.devices[best[1]]
    return nxt


def goal_holds(goal, state: WorldState, task: TaskSpec) -> bool:
    if isinstance(goal, Inside):
        o = state.objects.get(goal.obj)
        return o is not None and o[2] == goal.container
    if isinstance(goal, OnTop):
        o = state.objects.get(goal.obj)
        return o is not None and o[2] == goal.surface
    if isinstance(goal, ToggledOn):
        return state.devices[goal.device]
    if isinstance(goal, NearRegion):
        r = task.scene.region(goal.region)
        return math.hypot(state.robot.x - r.x, state.robot.y - r.y) <= goal.radius
    raise TypeError(f"unknown goal {goal!r}")


def eval_predicates(state: WorldState, task: TaskSpec) -> tuple[bool, ...]:
    return tuple(goal_holds(g, state, task) for g in task.goals)


def state_bytes(state: WorldState) -> bytes:
    """Canonical byte encoding; equal bytes means bitwise-identical states."""
    parts = [struct.pack("<4dqq?", *state.robot.as_tuple(), state.tick, 0, state.clamped),
             (state.held or "").encode(), b"\0"]
    for oid in sorted(state.objects):
        x, y, rid = state.objects[oid]
        parts += [oid.encode(), struct.pack("<2d", x, y), (rid or "").encode(), b"\0"]
    for did in sorted(state.devices):
        parts += [did.encode(), b"\1" if state.devices[did] else b"\0"]
    return b"".join(parts)


def state_digest(state: WorldState) -> str:
    return hashlib.sha256(state_bytes(state)).hexdigest()

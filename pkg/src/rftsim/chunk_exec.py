"""Closed-loop execution of chunk-predicting policies under the three control modes."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np

from .datastore import Episode
from .policy import (ABSOLUTE, DELTA, ActionChunk, PolicySnapshot, observe, predict_chunk, to_delta_rows)
from .rng import stream
from .sim import (Action, PoseDelta, RobotConfig, TaskSpec, WorldState, eval_predicates, normalize_yaw,
                  quantize, reset, step, wrap_angle)


class NoCoveringChunk(ValueError):
    pass


class RepresentationMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TemporalEnsemble:
    decay: float = 0.1

    def __post_init__(self):
        if self.decay < 0:
            raise ValueError("decay must be >= 0")

    name = "temporal_ensemble"

    def describe(self) -> str:
        return f"TemporalEnsemble(m={self.decay!r})"


@dataclass(frozen=True)
class RecedingTemporal:
    """Execute the first ``execute`` actions of each chunk, then replan (default H // 2)."""

    execute: int | None = None

    name = "receding_temporal"

    def count(self, horizon: int) -> int:
        k = self.execute if self.execute is not None else max(1, horizon // 2)
        if not 1 <= k <= horizon:
            raise ValueError(f"execute-count {k} outside [1, {horizon}]")
        return k

    def describe(self) -> str:
        return f"RecedingTemporal(k={'H/2' if self.execute is None else self.execute})"


@dataclass(frozen=True)
class RecedingHorizon:
    name = "receding_horizon"

    def describe(self) -> str:
        return "RecedingHorizon"


ControlMode = Union[TemporalEnsemble, RecedingTemporal, RecedingHorizon]
MODES = {"temporal_ensemble": TemporalEnsemble, "receding_temporal": RecedingTemporal,
         "receding_horizon": RecedingHorizon}
RECEDING_TEMPORAL_NOTE = ("receding_temporal = execute the first k=H/2 actions of each chunk then replan "
                          "(one reading of an undefined mode)")


@dataclass(frozen=True)
class ExecConfig:
    horizon: int = 32
    mode: ControlMode = RecedingHorizon()
    representation: str = ABSOLUTE
    hold_factor: int = 1
    state_input: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.hold_factor < 1:
            raise ValueError("hold_factor must be >= 1")
        if self.representation not in (ABSOLUTE, DELTA):
            raise ValueError(f"unknown representation {self.representation!r}")
        if isinstance(self.mode, RecedingTemporal):
            self.mode.count(self.horizon)

    def to_dict(self) -> dict:
        mode = {"name": self.mode.name}
        if isinstance(self.mode, TemporalEnsemble):
            mode["decay"] = self.mode.decay
        if isinstance(self.mode, RecedingTemporal):
            mode["execute"] = self.mode.execute
        return {"horizon": self.horizon, "mode": mode, "representation": self.representation,
                "hold_factor": self.hold_factor, "state_input": self.state_input}

    @classmethod
    def from_dict(cls, d: dict) -> "ExecConfig":
        m = dict(d.get("mode", {"name": "receding_horizon"}))
        name = m.pop("name")
        if name == "temporal_ensemble":
            mode = TemporalEnsemble(m.get("decay", 0.1))
        elif name == "receding_temporal":
            mode = RecedingTemporal(m.get("execute"))
        elif name == "receding_horizon":
            mode = RecedingHorizon()
        else:
            raise ValueError(f"unknown control mode {name!r}")
        return cls(int(d.get("horizon", 32)), mode, d.get("representation", ABSOLUTE),
                   int(d.get("hold_factor", 1)), bool(d.get("state_input", True)))


@dataclass(frozen=True)
class Teleport:
    """Injected disturbance: move a free object at the start of ``tick``."""

    tick: int
    obj: str
    x: float
    y: float

    def apply(self, state: WorldState) -> None:
        if self.obj in state.objects and state.objects[self.obj][2] is None:
            state.objects[self.obj] = (quantize(self.x), quantize(self.y), None)


# representation ------------------------------------------------------------

def to_delta(chunk: ActionChunk, reference: RobotConfig) -> ActionChunk:
    if chunk.representation != ABSOLUTE:
        raise RepresentationMismatch("to_delta needs an absolute chunk")
    return replace(chunk, actions=to_delta_rows(chunk.actions, reference.as_tuple()), representation=DELTA)


def to_absolute(chunk: ActionChunk, reference: RobotConfig) -> ActionChunk:
    if chunk.representation != DELTA:
        raise RepresentationMismatch("to_absolute needs a delta chunk")
    out = chunk.actions.copy()
    px, py, pyaw, pg = reference.as_tuple()
    for i in range(out.shape[0]):
        dx, dy, dyaw, dg = chunk.actions[i, :4]
        px, py, pyaw, pg = quantize(px + dx), quantize(py + dy), normalize_yaw(pyaw + dyaw), quantize(pg + dg)
        out[i, :4] = (px, py, pyaw, pg)
    return replace(chunk, actions=out, representation=ABSOLUTE)


# temporal ensemble -----------------------------------------------------------

def ensemble_row(buffer: Sequence[ActionChunk], t: int, m: float, hold: int = 1) -> np.ndarray:
    """Weighted combination of every buffered chunk's proposal for tick ``t``.

    Weights are exp(-m * age) with age = t - born_tick.  Yaw is averaged on the
    circle (offsets from the first proposal); interact is a weighted majority,
    ties to 0.
    """
    props, weights = [], []
    for c in buffer:
        i = (t - c.born_tick) // hold
        if t >= c.born_tick and i < c.horizon:
            if c.representation != ABSOLUTE:
                raise RepresentationMismatch("ensemble combines absolute chunks")
            props.append(c.actions[i])
            weights.append(math.exp(-m * (t - c.born_tick)))
    if not props:
        raise NoCoveringChunk(f"no buffered chunk covers tick {t}")
    p = np.array(props)
    w = np.array(weights)
    tot = w.sum()
    row = np.empty(5)
    row[0] = (w * p[:, 0]).sum() / tot
    row[1] = (w * p[:, 1]).sum() / tot
    ref = p[0, 2]
    offs = np.array([wrap_angle(a - ref) for a in p[:, 2]])
    row[2] = wrap_angle(ref + (w * offs).sum() / tot)
    row[3] = (w * p[:, 3]).sum() / tot
    on = w[p[:, 4] >= 0.5].sum()
    row[4] = 1.0 if on > tot - on else 0.0
    return row


def temporal_ensemble_combine(buffer: Sequence[ActionChunk], t: int, m: float, hold: int = 1) -> Action:
    return Action.from_row(ensemble_row(buffer, t, m, hold))


# execution -------------------------------------------------------------------

def execute_episode(task: TaskSpec, instance_seed: int, perturbation: PoseDelta | None, policy: PolicySnapshot,
                    cfg: ExecConfig, episode_seed: int, *, source: str = "eval",
                    disturbances: Sequence[Teleport] = ()) -> Episode:
    """Run one closed-loop episode and record it.

    Ends when every goal holds or at ``task.max_steps``.  Each scheduled action
    is held for ``cfg.hold_factor`` ticks with its interaction firing on the
    first of them only.  Replanning costs no ticks.
    """
    state = reset(task, instance_seed, perturbation, allow_off_list=True)
    initial_pose = state.robot.as_tuple()
    rng = stream("episode", episode_seed)
    hold = cfg.hold_factor
    H = cfg.horizon
    mode = cfg.mode
    events = sorted(disturbances, key=lambda e: e.tick)
    ev = 0
    obs_rows, act_rows, labels = [], [], []
    preds = eval_predicates(state, task)
    trace = [preds]
    buffer: list[ActionChunk] = []

    def disturb():
        nonlocal ev
        while ev < len(events) and events[ev].tick <= state.tick:
            events[ev].apply(state)
            ev += 1

    done = all(preds)
    while not done and state.tick < task.max_steps:
        disturb()
        obs = observe(task, state, cfg.state_input)
        chunk = predict_chunk(policy, obs, H, task=task, state=state, rng=rng, representation=cfg.representation)
        if chunk.representation == DELTA:
            chunk = to_absolute(chunk, state.robot)
        chunk = replace(chunk, born_tick=state.tick)
        if isinstance(mode, TemporalEnsemble):
            buffer = [c for c in buffer if state.tick < c.born_tick + c.horizon * hold]
            buffer.append(chunk)
            schedule = [(ensemble_row(buffer, state.tick, mode.decay, hold), chunk.labels[0])]
        else:
            n = H if isinstance(mode, RecedingHorizon) else mode.count(H)
            schedule = [(chunk.actions[i], chunk.labels[i]) for i in range(n)]
        for row, label in schedule:
            for j in range(hold):
                if done or state.tick >= task.max_steps:
                    break
                disturb()
                a = Action.from_row(row if j == 0 else (*row[:4], 0.0))
                obs_rows.append(observe(task, state).vector)
                act_rows.append(a.as_row())
                labels.append(label)
                state = step(task, state, a)
                preds = eval_predicates(state, task)
                trace.append(preds)
                done = all(preds)
            if done or state.tick >= task.max_steps:
                break

    d = len(obs_rows[0]) if obs_rows else 0
    return Episode(
        task_id=task.task_id, instance_seed=instance_seed, episode_seed=episode_seed,
        perturbation=(perturbation or PoseDelta()).as_tuple(), checkpoint_id=policy.checkpoint_id,
        source=source, success=all(preds), terminal_predicates=tuple(preds), initial_pose=initial_pose,
        observations=np.array(obs_rows, dtype=np.float64).reshape(-1, d),
        actions=np.array(act_rows, dtype=np.float64).reshape(-1, 5), labels=tuple(labels),
        trace=np.array(trace, dtype=bool), hold_factor=1,
    )


def resample_actions(episode: Episode, factor: int) -> Episode:
    """Keep one frame per window of ``factor`` frames (a trailing partial window counts).

    The kept action is the window's interaction frame if it has one, otherwise its
    first frame, so discrete triggers survive subsampling; the observation is the
    one at the window start.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return episode
    n = episode.frame_count
    obs, acts, labs = [], [], []
    for s in range(0, n, factor):
        window = range(s, min(s + factor, n))
        pick = next((i for i in window if episode.actions[i, 4] >= 0.5), s)
        obs.append(episode.observations[s])
        acts.append(episode.actions[pick])
        labs.append(episode.labels[pick])
    d = episode.observations.shape[1] if episode.observations.ndim == 2 else 0
    return Episode(episode.task_id, episode.instance_seed, episode.episode_seed, episode.perturbation,
                   episode.checkpoint_id, episode.source, episode.success, episode.terminal_predicates,
                   episode.initial_pose, np.array(obs).reshape(-1, d), np.array(acts).reshape(-1, 5),
                   tuple(labs), episode.trace, episode.hold_factor * factor)

"""Seeded mid-episode disturbance scenarios (object teleports)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import yaml

from .chunk_exec import Teleport
from .rng import stream
from .sim import TaskSpec, ValidationError, load_task, reset, scenario_path


@dataclass(frozen=True)
class Drift:
    """Teleport ``obj`` by ``radius`` metres in a random direction at a random tick in ``ticks``."""

    obj: str
    radius: float
    ticks: tuple[int, int]

    def sample(self, task: TaskSpec, instance_seed: int, seed: int) -> Teleport:
        rng = stream("drift", task.task_id, instance_seed, seed)
        tick = int(rng.integers(self.ticks[0], self.ticks[1] + 1))
        angle = float(rng.uniform(-math.pi, math.pi))
        x, y, _ = reset(task, instance_seed, allow_off_list=True).objects[self.obj]
        xmin, ymin, xmax, ymax = task.scene.bounds
        nx = min(max(x + self.radius * math.cos(angle), xmin), xmax)
        ny = min(max(y + self.radius * math.sin(angle), ymin), ymax)
        return Teleport(tick, self.obj, nx, ny)


def parse_scenario(text: str) -> tuple[TaskSpec, Drift]:
    data = yaml.safe_load(text)
    if not isinstance(data, dict) or "disturbance" not in data:
        raise ValidationError("scenario needs a 'disturbance' block")
    d = data.pop("disturbance")
    task = load_task(yaml.safe_dump(data, sort_keys=True))
    drift = Drift(str(d["object"]), float(d["radius"]), (int(d["tick"][0]), int(d["tick"][1])))
    if drift.obj not in task.object_ids:
        raise ValidationError(f"disturbance names unknown object {drift.obj!r}", drift.obj)
    if drift.radius <= 0 or not 0 <= drift.ticks[0] <= drift.ticks[1] < task.max_steps:
        raise ValidationError("disturbance radius or tick window out of range")
    return task, drift


def load_scenario(name: str) -> tuple[TaskSpec, Drift]:
    return parse_scenario(scenario_path(name).read_text())

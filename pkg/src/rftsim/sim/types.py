from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

QUANTUM = 1e-6
_YAW_LIMIT = math.floor(math.pi / QUANTUM)  # largest quantized yaw, in micro-radians


def quantize(v: float) -> float:
    return round(v * 1_000_000) / 1_000_000


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi] without quantizing."""
    a = math.remainder(a, 2 * math.pi)
    return math.pi if a <= -math.pi else a


def normalize_yaw(a: float) -> float:
    """Wrap to (-pi, pi] and quantize; the seam is pinned to +/-3.141592."""
    k = round(wrap_angle(a) * 1_000_000)
    k = max(-_YAW_LIMIT, min(_YAW_LIMIT, k))
    return k / 1_000_000


@dataclass(frozen=True, slots=True)
class RobotConfig:
    x: float
    y: float
    yaw: float = 0.0
    gripper: float = 1.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.yaw, self.gripper)


@dataclass(frozen=True, slots=True)
class PoseDelta:
    dx: float = 0.0
    dy: float = 0.0
    dyaw: float = 0.0
    dgripper: float = 0.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.dx, self.dy, self.dyaw, self.dgripper)

    @property
    def is_zero(self) -> bool:
        return not any(self.as_tuple())


@dataclass(frozen=True, slots=True)
class Action:
    """Absolute set-point plus an interaction trigger."""

    target: RobotConfig
    interact: int = 0

    def as_row(self) -> tuple[float, float, float, float, float]:
        t = self.target
        return (t.x, t.y, t.yaw, t.gripper, float(self.interact))

    @classmethod
    def from_row(cls, row) -> "Action":
        x, y, yaw, g, i = (float(v) for v in row)
        for v in (x, y, yaw, g):
            if not math.isfinite(v):
                raise ValueError(f"non-finite action component {v}")
        return cls(RobotConfig(quantize(x), quantize(y), normalize_yaw(yaw), quantize(min(1.0, max(0.0, g)))),
                   1 if i >= 0.5 else 0)


# goal predicates ---------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Inside:
    obj: str
    container: str

    def __str__(self) -> str:
        return f"Inside({self.obj}, {self.container})"


@dataclass(frozen=True, slots=True)
class OnTop:
    obj: str
    surface: str

    def __str__(self) -> str:
        return f"OnTop({self.obj}, {self.surface})"


@dataclass(frozen=True, slots=True)
class ToggledOn:
    device: str

    def __str__(self) -> str:
        return f"ToggledOn({self.device})"


@dataclass(frozen=True, slots=True)
class NearRegion:
    region: str
    radius: float

    def __str__(self) -> str:
        return f"NearRegion({self.region}, {self.radius!r})"


GoalPredicate = Union[Inside, OnTop, ToggledOn, NearRegion]


# scene -------------------------------------------------------------------

@dataclass(frozen=True)
class Receptacle:
    id: str
    kind: str  # "container" | "surface"
    x: float
    y: float
    door: str | None = None


@dataclass(frozen=True)
class ObjectSpec:
    id: str
    x: float = 0.0
    y: float = 0.0
    inside: str | None = None


@dataclass(frozen=True)
class DeviceSpec:
    id: str
    kind: str  # "switch" | "door"
    x: float
    y: float
    on: bool = False


@dataclass(frozen=True)
class Region:
    id: str
    x: float
    y: float


@dataclass(frozen=True)
class Scene:
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    robot: RobotConfig
    receptacles: tuple[Receptacle, ...] = ()
    objects: tuple[ObjectSpec, ...] = ()
    devices: tuple[DeviceSpec, ...] = ()
    regions: tuple[Region, ...] = ()
    jitter: float = 0.0

    def receptacle(self, rid: str) -> Receptacle:
        for r in self.receptacles:
            if r.id == rid:
                return r
        raise KeyError(rid)

    def device(self, did: str) -> DeviceSpec:
        for d in self.devices:
            if d.id == did:
                return d
        raise KeyError(did)

    def region(self, rid: str) -> Region:
        for r in self.regions:
            if r.id == rid:
                return r
        raise KeyError(rid)


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    name: str
    scene: Scene
    goals: tuple[GoalPredicate, ...]
    max_steps: int
    instances: tuple[int, ...]

    @property
    def object_ids(self) -> tuple[str, ...]:
        return tuple(o.id for o in self.scene.objects)

    @property
    def device_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.scene.devices)


@dataclass
class WorldState:
    robot: RobotConfig
    objects: dict[str, tuple[float, float, str | None]]
    devices: dict[str, bool]
    held: str | None = None
    tick: int = 0
    clamped: bool = False  # reset had to clamp the start pose into bounds

    def copy(self) -> "WorldState":
        return WorldState(self.robot, dict(self.objects), dict(self.devices), self.held,
                          self.tick, self.clamped)

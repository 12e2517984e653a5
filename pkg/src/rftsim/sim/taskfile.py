"""Task-config files: one YAML document per task, canonical re-serialization."""
from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

import yaml

from .types import (DeviceSpec, Inside, NearRegion, ObjectSpec, OnTop, Receptacle, Region,
                    RobotConfig, Scene, TaskSpec, ToggledOn)


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if field:
            where.append(f"field {field!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ValidationError(ValueError):
    def __init__(self, message: str, bad_id: str | None = None):
        self.bad_id = bad_id
        super().__init__(message)


_GOAL_RE = re.compile(r"^\s*(\w+)\s*\(\s*([^)]*)\)\s*$")
TOP_KEYS = ("task", "scene", "goals", "instances")


def _line_of(node, path: tuple) -> int | None:
    """1-based line of the YAML node at ``path`` (or of its deepest existing parent)."""
    line = node.start_mark.line + 1 if node is not None else None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            nxt = node.value[key]
        else:
            nxt = None
        if nxt is None:
            break
        node = nxt
        line = node.start_mark.line + 1
    return line


def parse_goal(text: str):
    m = _GOAL_RE.match(str(text))
    if not m:
        raise ValueError(f"malformed goal {text!r}")
    kind, args = m.group(1), [a.strip() for a in m.group(2).split(",") if a.strip()]
    if kind == "Inside" and len(args) == 2:
        return Inside(args[0], args[1])
    if kind == "OnTop" and len(args) == 2:
        return OnTop(args[0], args[1])
    if kind == "ToggledOn" and len(args) == 1:
        return ToggledOn(args[0])
    if kind == "NearRegion" and len(args) == 2:
        return NearRegion(args[0], float(args[1]))
    raise ValueError(f"unknown goal form {text!r}")


def load_task(text: str) -> TaskSpec:
    """Parse and validate one task document."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                         line=mark.line + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise ParseError("task document must be a mapping", line=1)

    def fail(msg, *path):
        raise ParseError(msg, line=_line_of(root, path), field=".".join(str(p) for p in path) or None)

    for key in TOP_KEYS:
        if key not in data:
            fail(f"missing top-level key {key!r}", key)
    extra = set(data) - set(TOP_KEYS)
    if extra:
        fail(f"unknown top-level key {sorted(extra)[0]!r}", sorted(extra)[0])

    def get(mapping, key, path, kind=None, default=...):
        if not isinstance(mapping, dict):
            fail("expected a mapping", *path)
        if key not in mapping:
            if default is not ...:
                return default
            fail(f"missing field {key!r}", *path, key)
        value = mapping[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is not None and not isinstance(value, kind):
            fail(f"field {key!r} must be {kind.__name__}", *path, key)
        return value

    task = data["task"]
    task_id = get(task, "id", ("task",), int)
    name = get(task, "name", ("task",), str)
    max_steps = get(task, "max_steps", ("task",), int)

    sc = data["scene"]
    bounds = get(sc, "bounds", ("scene",), list)
    if len(bounds) != 4:
        fail("bounds must have 4 numbers", "scene", "bounds")
    rb = get(sc, "robot", ("scene",), dict)
    robot = RobotConfig(get(rb, "x", ("scene", "robot"), float), get(rb, "y", ("scene", "robot"), float),
                        get(rb, "yaw", ("scene", "robot"), float, 0.0),
                        get(rb, "gripper", ("scene", "robot"), float, 1.0))

    def items(key):
        seq = get(sc, key, ("scene",), list, [])
        for i, item in enumerate(seq):
            if not isinstance(item, dict):
                fail("expected a mapping", "scene", key, i)
            yield i, item

    receptacles = tuple(
        Receptacle(get(r, "id", ("scene", "receptacles", i), str), get(r, "kind", ("scene", "receptacles", i), str),
                   get(r, "x", ("scene", "receptacles", i), float), get(r, "y", ("scene", "receptacles", i), float),
                   get(r, "door", ("scene", "receptacles", i), str, None))
        for i, r in items("receptacles"))
    door_pose = {r.door: (r.x, r.y) for r in receptacles if r.door}
    devices = []
    for i, d in items("devices"):
        did = get(d, "id", ("scene", "devices", i), str)
        kind = get(d, "kind", ("scene", "devices", i), str)
        if kind == "door":
            x, y = door_pose.get(did, (0.0, 0.0))
        else:
            x = get(d, "x", ("scene", "devices", i), float)
            y = get(d, "y", ("scene", "devices", i), float)
        devices.append(DeviceSpec(did, kind, x, y, get(d, "on", ("scene", "devices", i), bool, False)))
    objects = tuple(
        ObjectSpec(get(o, "id", ("scene", "objects", i), str), get(o, "x", ("scene", "objects", i), float, 0.0),
                   get(o, "y", ("scene", "objects", i), float, 0.0), get(o, "inside", ("scene", "objects", i), str, None))
        for i, o in items("objects"))
    regions = tuple(Region(get(r, "id", ("scene", "regions", i), str), get(r, "x", ("scene", "regions", i), float),
                           get(r, "y", ("scene", "regions", i), float))
                    for i, r in items("regions"))
    scene = Scene(tuple(float(b) for b in bounds), robot, receptacles, objects, tuple(devices), regions,
                  get(sc, "jitter", ("scene",), float, 0.0))

    goals_raw = data["goals"]
    if not isinstance(goals_raw, list):
        fail("goals must be a list", "goals")
    goals = []
    for i, g in enumerate(goals_raw):
        try:
            goals.append(parse_goal(g))
        except ValueError as exc:
            fail(str(exc), "goals", i)
    instances = data["instances"]
    if not isinstance(instances, list) or not all(isinstance(s, int) for s in instances):
        fail("instances must be a list of integers", "instances")

    spec = TaskSpec(task_id, name, scene, tuple(goals), max_steps, tuple(instances))
    validate_task(spec)
    return spec


def validate_task(task: TaskSpec) -> None:
    sc = task.scene
    if not task.goals:
        raise ValidationError("task has no goals")
    if task.max_steps < 1:
        raise ValidationError("max_steps must be >= 1")
    if len(set(task.instances)) != len(task.instances):
        raise ValidationError("instance seeds must be distinct")
    xmin, ymin, xmax, ymax = sc.bounds
    if not (xmin < xmax and ymin < ymax):
        raise ValidationError("empty scene bounds")
    ids = [e.id for e in (*sc.receptacles, *sc.objects, *sc.devices, *sc.regions)]
    seen = set()
    for i in ids:
        if i in seen:
            raise ValidationError(f"duplicate id {i!r}", i)
        seen.add(i)
    recs = {r.id: r for r in sc.receptacles}
    devs = {d.id: d for d in sc.devices}
    objs = {o.id for o in sc.objects}
    regs = {r.id for r in sc.regions}
    for r in sc.receptacles:
        if r.kind not in ("container", "surface"):
            raise ValidationError(f"receptacle {r.id!r} has unknown kind {r.kind!r}", r.id)
        if r.door is not None:
            if r.door not in devs or devs[r.door].kind != "door":
                raise ValidationError(f"receptacle {r.id!r} references unknown door {r.door!r}", r.door)
    doors = [r.door for r in sc.receptacles if r.door]
    for d in sc.devices:
        if d.kind not in ("switch", "door"):
            raise ValidationError(f"device {d.id!r} has unknown kind {d.kind!r}", d.id)
        if d.kind == "door" and doors.count(d.id) != 1:
            raise ValidationError(f"door {d.id!r} must belong to exactly one receptacle", d.id)
    for o in sc.objects:
        if o.inside is not None and o.inside not in recs:
            raise ValidationError(f"object {o.id!r} inside unknown receptacle {o.inside!r}", o.inside)
    for g in task.goals:
        if isinstance(g, Inside):
            if g.obj not in objs:
                raise ValidationError(f"goal {g} references unknown object {g.obj!r}", g.obj)
            if g.container not in recs or recs[g.container].kind != "container":
                raise ValidationError(f"goal {g} references unknown container {g.container!r}", g.container)
        elif isinstance(g, OnTop):
            if g.obj not in objs:
                raise ValidationError(f"goal {g} references unknown object {g.obj!r}", g.obj)
            if g.surface not in recs or recs[g.surface].kind != "surface":
                raise ValidationError(f"goal {g} references unknown surface {g.surface!r}", g.surface)
        elif isinstance(g, ToggledOn):
            if g.device not in devs:
                raise ValidationError(f"goal {g} references unknown device {g.device!r}", g.device)
        elif isinstance(g, NearRegion):
            if g.region not in regs:
                raise ValidationError(f"goal {g} references unknown region {g.region!r}", g.region)
            if not g.radius > 0:
                raise ValidationError(f"goal {g} needs a positive radius", g.region)


def task_to_dict(task: TaskSpec) -> dict:
    sc = task.scene
    scene: dict = {
        "bounds": list(sc.bounds),
        "robot": {"x": sc.robot.x, "y": sc.robot.y, "yaw": sc.robot.yaw, "gripper": sc.robot.gripper},
        "jitter": sc.jitter,
    }
    if sc.receptacles:
        scene["receptacles"] = [
            {"id": r.id, "kind": r.kind, "x": r.x, "y": r.y, **({"door": r.door} if r.door else {})}
            for r in sc.receptacles]
    if sc.objects:
        scene["objects"] = [
            {"id": o.id, "inside": o.inside} if o.inside else {"id": o.id, "x": o.x, "y": o.y}
            for o in sc.objects]
    if sc.devices:
        scene["devices"] = [
            {"id": d.id, "kind": d.kind, "on": d.on} if d.kind == "door"
            else {"id": d.id, "kind": d.kind, "x": d.x, "y": d.y, "on": d.on}
            for d in sc.devices]
    if sc.regions:
        scene["regions"] = [{"id": r.id, "x": r.x, "y": r.y} for r in sc.regions]
    return {
        "task": {"id": task.task_id, "name": task.name, "max_steps": task.max_steps},
        "scene": scene,
        "goals": [str(g) for g in task.goals],
        "instances": list(task.instances),
    }


def dump_task(task: TaskSpec) -> str:
    return yaml.safe_dump(task_to_dict(task), sort_keys=True, default_flow_style=False)


def default_suite_dir() -> Path:
    return Path(str(resources.files("rftsim") / "suite"))


def scenario_path(name: str) -> Path:
    return Path(str(resources.files("rftsim") / "scenarios" / f"{name}.yaml"))


def load_suite(directory: str | Path | None = None) -> list[TaskSpec]:
    """Load every ``*.yaml`` task in ``directory``, sorted by task id."""
    directory = Path(directory) if directory is not None else default_suite_dir()
    tasks = [load_task(p.read_text()) for p in sorted(directory.glob("*.yaml"))]
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate task ids in suite")
    return sorted(tasks, key=lambda t: t.task_id)

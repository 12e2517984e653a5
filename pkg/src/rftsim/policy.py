"""Chunk-predicting policies: scripted expert, noisy expert, nearest-neighbour cloner."""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sim import (DYNAMICS, Inside, NearRegion, OnTop, RobotConfig, TaskSpec, ToggledOn, WorldState,
                  can_reach, goal_holds, normalize_yaw, quantize, wrap_angle)

SKILLS = ("move to", "pick up from", "place in", "open", "close", "toggle on")
NAVIGATION = frozenset({"move to"})
PROPRIO_DIMS = 4
ACTION_DIMS = 5
STANDOFF = 0.08
ABSOLUTE = "absolute"
DELTA = "delta"


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    task_id: int
    vector: np.ndarray
    state_input_enabled: bool = True

    @property
    def proprio(self) -> np.ndarray:
        return self.vector[:PROPRIO_DIMS]


def observe(task: TaskSpec, state: WorldState, state_input_enabled: bool = True) -> Observation:
    """Fixed-layout feature vector.

    Layout: robot (x, y, yaw, gripper); per scene object (dx, dy, in-receptacle,
    held); one on/off flag per device.
    """
    r = state.robot
    v = [r.x, r.y, r.yaw, r.gripper] if state_input_enabled else [0.0, 0.0, 0.0, 0.0]
    for o in task.scene.objects:
        if state.held == o.id:
            v += [0.0, 0.0, 0.0, 1.0]
        else:
            x, y, rid = state.objects[o.id]
            v += [quantize(x - r.x), quantize(y - r.y), 0.0 if rid is None else 1.0, 0.0]
    v += [1.0 if state.devices[d.id] else 0.0 for d in task.scene.devices]
    return Observation(task.task_id, np.array(v, dtype=np.float64), state_input_enabled)


def observation_dim(task: TaskSpec) -> int:
    return PROPRIO_DIMS + 4 * len(task.scene.objects) + len(task.scene.devices)


@dataclass(frozen=True)
class ActionChunk:
    actions: np.ndarray  # (H, 5): x, y, yaw, gripper, interact
    born_tick: int = 0
    representation: str = ABSOLUTE
    labels: tuple[str, ...] = ()

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]


# scripted expert -----------------------------------------------------------

class _Planner:
    def __init__(self, task: TaskSpec, state: WorldState):
        self.task = task
        self.s = state.copy()
        self.rows: list[tuple[float, float, float, float, float]] = []
        self.labels: list[str] = []

    @property
    def grip(self) -> float:
        return 0.0 if self.s.held is not None else 1.0

    def move_to(self, px: float, py: float, standoff: float = STANDOFF, reach: float | None = None):
        r = self.s.robot
        if reach is None:
            if can_reach(r, px, py, DYNAMICS.reach - 0.03):
                return
        elif math.hypot(px - r.x, py - r.y) <= reach:
            return
        d = math.hypot(px - r.x, py - r.y)
        yaw = math.atan2(py - r.y, px - r.x) if d > 1e-9 else r.yaw
        if d > standoff:
            tx, ty = px - (px - r.x) / d * standoff, py - (py - r.y) / d * standoff
        else:
            tx, ty = r.x, r.y
        target = RobotConfig(quantize(tx), quantize(ty), normalize_yaw(yaw), self.grip)
        n = max(1,
                math.ceil(math.hypot(target.x - r.x, target.y - r.y) / DYNAMICS.linear - 1e-9),
                math.ceil(abs(wrap_angle(target.yaw - r.yaw)) / DYNAMICS.angular - 1e-9))
        for _ in range(n):
            self.rows.append((target.x, target.y, target.yaw, target.gripper, 0.0))
            self.labels.append("move to")
        self.s.robot = target

    def interact(self, grip: float, label: str):
        r = self.s.robot
        self.rows.append((r.x, r.y, r.yaw, grip, 1.0))
        self.labels.append(label)
        self.s.robot = RobotConfig(r.x, r.y, r.yaw, grip)

    def toggle(self, did: str, label: str):
        dev = self.task.scene.device(did)
        self.move_to(dev.x, dev.y)
        self.interact(self.grip, label)
        self.s.devices[did] = not self.s.devices[did]

    def pick(self, oid: str):
        x, y, rid = self.s.objects[oid]
        if rid is not None:
            door = self.task.scene.receptacle(rid).door
            if door and not self.s.devices[door]:
                self.toggle(door, "open")
        self.move_to(x, y)
        self.interact(0.0, "pick up from")
        self.s.held = oid
        del self.s.objects[oid]

    def place(self, rid: str):
        rec = self.task.scene.receptacle(rid)
        if rec.door and not self.s.devices[rec.door]:
            self.toggle(rec.door, "open")
        self.move_to(rec.x, rec.y)
        self.interact(1.0, "place in")
        self.s.objects[self.s.held] = (rec.x, rec.y, rid)
        self.s.held = None
        if rec.door and not any(isinstance(g, ToggledOn) and g.device == rec.door for g in self.task.goals):
            self.interact(1.0, "close")
            self.s.devices[rec.door] = False

    def holds(self, goal) -> bool:
        return goal_holds(goal, self.s, self.task)

    def achieve(self, goal):
        if isinstance(goal, (Inside, OnTop)):
            obj = goal.obj
            dest = goal.container if isinstance(goal, Inside) else goal.surface
            if self.s.held != obj:
                self.pick(obj)
            self.place(dest)
        elif isinstance(goal, ToggledOn):
            label = "open" if self.task.scene.device(goal.device).kind == "door" else "toggle on"
            self.toggle(goal.device, label)
        elif isinstance(goal, NearRegion):
            reg = self.task.scene.region(goal.region)
            self.move_to(reg.x, reg.y, standoff=0.0, reach=goal.radius * 0.5)

    def release_stray(self):
        """Put away an object held by mistake before pursuing the goal list."""
        held = self.s.held
        for g in self.task.goals:
            if isinstance(g, (Inside, OnTop)) and g.obj == held and not self.holds(g):
                self.achieve(g)
                return
        r = self.s.robot
        recs = [rec for rec in self.task.scene.receptacles]
        rec = min(recs, key=lambda rc: (math.hypot(rc.x - r.x, rc.y - r.y), rc.id))
        self.place(rec.id)

    def plan(self):
        for goal in self.task.goals:
            if self.holds(goal):
                continue
            held = self.s.held
            if held is not None and not (isinstance(goal, (Inside, OnTop)) and goal.obj == held):
                self.release_stray()
                if self.holds(goal):
                    continue
            self.achieve(goal)
        return self.rows, self.labels


def scripted_expert_plan(task: TaskSpec, state: WorldState) -> tuple[ActionChunk, tuple[str, ...]]:
    """Greedy plan over the unsatisfied goals in listed order; one label per frame."""
    rows, labels = _Planner(task, state).plan()
    actions = np.array(rows, dtype=np.float64).reshape(-1, ACTION_DIMS)
    return ActionChunk(actions, state.tick, ABSOLUTE, tuple(labels)), tuple(labels)


def _fit(actions: np.ndarray, labels, horizon: int, hold: tuple) -> tuple[np.ndarray, tuple[str, ...]]:
    """Truncate or pad to ``horizon`` rows; padding holds ``hold`` with no interaction."""
    n = actions.shape[0]
    if n >= horizon:
        return actions[:horizon].copy(), tuple(labels[:horizon])
    pad = np.tile(np.array([*hold, 0.0]), (horizon - n, 1))
    last = labels[-1] if n else "move to"
    return np.vstack([actions, pad]) if n else pad, tuple(labels) + (last,) * (horizon - n)


# snapshots -----------------------------------------------------------------

SCRIPTED = "scripted"
NOISY = "noisy"
KNN = "knn"
_MAGIC = b"RFTSNAP"
_VERSION = 1


@dataclass
class TaskIndex:
    obs: np.ndarray      # (n, d) raw observations
    episode: np.ndarray  # (n,) episode index
    frame: np.ndarray    # (n,) frame index
    mean: np.ndarray
    std: np.ndarray
    normed: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.normed = (self.obs - self.mean) / self.std


@dataclass
class PolicySnapshot:
    kind: str
    sigma: float = 0.0
    k: int = 1
    stride: int = 1
    resample: int = 1
    manifest_id: str | None = None
    episodes: list[tuple[np.ndarray, tuple[str, ...]]] = field(default_factory=list, repr=False)
    index: dict[int, TaskIndex] = field(default_factory=dict, repr=False)
    _bytes: bytes | None = field(default=None, init=False, repr=False, compare=False)

    def header(self) -> dict:
        h = {"kind": self.kind}
        if self.kind == NOISY:
            h["sigma"] = self.sigma
        if self.kind == KNN:
            h.update(k=self.k, stride=self.stride, resample=self.resample, manifest=self.manifest_id,
                     episodes=len(self.episodes),
                     normalization={str(t): {"mean": ix.mean.tolist(), "std": ix.std.tolist()}
                                    for t, ix in sorted(self.index.items())})
        return h

    def to_bytes(self) -> bytes:
        if self._bytes is None:
            self._bytes = _serialize(self)
        return self._bytes

    @property
    def checkpoint_id(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]

    def describe(self) -> str:
        if self.kind == NOISY:
            return f"NoisyExpert(sigma={self.sigma})"
        if self.kind == KNN:
            return f"KnnCloner(k={self.k}, stride={self.stride}, resample={self.resample}, entries={self.size})"
        return "ScriptedExpert"

    @property
    def size(self) -> int:
        return sum(ix.obs.shape[0] for ix in self.index.values())

    def save(self, directory: str | Path) -> Path:
        path = Path(directory) / f"{self.checkpoint_id}.snap"
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(self.to_bytes())
            tmp.replace(path)
        return path


def scripted_expert() -> PolicySnapshot:
    return PolicySnapshot(SCRIPTED)


def noisy_expert(sigma: float) -> PolicySnapshot:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return PolicySnapshot(NOISY, sigma=float(sigma))


def _record(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload


def _serialize(p: PolicySnapshot) -> bytes:
    header = json.dumps(p.header(), sort_keys=True, separators=(",", ":")).encode()
    out = [_MAGIC, bytes([_VERSION]), _record(header)]
    for actions, labels in p.episodes:
        lab = json.dumps(list(labels), separators=(",", ":")).encode()
        out.append(_record(struct.pack("<II", actions.shape[0], len(lab)) + lab
                           + np.ascontiguousarray(actions, "<f8").tobytes()))
    for t, ix in sorted(p.index.items()):
        n, d = ix.obs.shape
        out.append(_record(struct.pack("<qII", t, n, d) + np.ascontiguousarray(ix.obs, "<f8").tobytes()
                           + np.ascontiguousarray(ix.episode, "<i4").tobytes()
                           + np.ascontiguousarray(ix.frame, "<i4").tobytes()))
    return b"".join(out)


def _records(buf: bytes, pos: int):
    while pos < len(buf):
        (n,) = struct.unpack_from("<I", buf, pos)
        yield buf[pos + 4:pos + 4 + n]
        pos += 4 + n


def load_snapshot(path: str | Path) -> PolicySnapshot:
    buf = Path(path).read_bytes()
    if not buf.startswith(_MAGIC) or buf[len(_MAGIC)] != _VERSION:
        raise ValueError(f"{path}: not a policy snapshot")
    recs = _records(buf, len(_MAGIC) + 1)
    h = json.loads(next(recs))
    snap = PolicySnapshot(h["kind"], sigma=h.get("sigma", 0.0), k=h.get("k", 1), stride=h.get("stride", 1),
                          resample=h.get("resample", 1), manifest_id=h.get("manifest"))
    for _ in range(h.get("episodes", 0)):
        rec = next(recs)
        n, nl = struct.unpack_from("<II", rec)
        labels = tuple(json.loads(rec[8:8 + nl]))
        actions = np.frombuffer(rec[8 + nl:], "<f8").reshape(n, ACTION_DIMS).copy()
        snap.episodes.append((actions, labels))
    norm = h.get("normalization", {})
    for rec in recs:
        t, n, d = struct.unpack_from("<qII", rec)
        o = 16
        obs = np.frombuffer(rec, "<f8", n * d, o).reshape(n, d).copy()
        o += 8 * n * d
        ep = np.frombuffer(rec, "<i4", n, o).copy()
        fr = np.frombuffer(rec, "<i4", n, o + 4 * n).copy()
        snap.index[t] = TaskIndex(obs, ep, fr, np.array(norm[str(t)]["mean"]), np.array(norm[str(t)]["std"]))
    snap._bytes = buf
    return snap


def build_knn(episodes: list[tuple[int, np.ndarray, np.ndarray, tuple[str, ...]]], k: int = 1,
              chunk_stride: int = 1, resample: int = 1, manifest_id: str | None = None) -> PolicySnapshot:
    """Index ``(task_id, observations, actions, labels)`` episodes.

    Every ``chunk_stride``-th frame becomes an entry; normalization constants
    are the per-task, per-dimension mean/std of the indexed observations.
    """
    if k < 1 or chunk_stride < 1:
        raise ValueError("k and chunk_stride must be >= 1")
    if not episodes:
        raise EmptyDataset("cannot train a cloner on zero episodes")
    snap = PolicySnapshot(KNN, k=k, stride=chunk_stride, resample=resample, manifest_id=manifest_id)
    per_task: dict[int, list] = {}
    for e, (task_id, obs, actions, labels) in enumerate(episodes):
        snap.episodes.append((np.asarray(actions, np.float64), tuple(labels)))
        frames = np.arange(0, obs.shape[0], chunk_stride)
        per_task.setdefault(task_id, []).append((obs[frames], np.full(frames.size, e), frames))
    for t, parts in per_task.items():
        obs = np.vstack([p[0] for p in parts])
        mean = obs.mean(axis=0)
        std = obs.std(axis=0)
        std[std < 1e-9] = 1.0
        snap.index[t] = TaskIndex(obs, np.concatenate([p[1] for p in parts]).astype(np.int32),
                                  np.concatenate([p[2] for p in parts]).astype(np.int32), mean, std)
    if not snap.index:
        raise EmptyDataset("no frames to index")
    return snap


def knn_train(manifest, store, k: int = 1, chunk_stride: int = 1, resample: int = 1) -> PolicySnapshot:
    """Retrain step: index every entry of ``manifest`` (episodes read from ``store``).

    Episodes are indexed in store order, so exact distance ties resolve to the
    oldest data.
    """
    from .chunk_exec import resample_actions

    if not manifest.entries:
        raise EmptyDataset(f"manifest {manifest.manifest_id} is empty")
    eps = []
    for entry in sorted(manifest.entries, key=lambda e: e.offset):
        ep = store.read(entry.content_hash)
        if resample > 1:
            ep = resample_actions(ep, resample)
        eps.append((ep.task_id, ep.observations, ep.actions, ep.labels))
    return build_knn(eps, k, chunk_stride, resample, manifest.manifest_id)


# prediction ----------------------------------------------------------------

def to_delta_rows(actions: np.ndarray, reference) -> np.ndarray:
    out = actions.copy()
    prev = np.array(reference[:4], dtype=np.float64)
    for i in range(actions.shape[0]):
        cur = actions[i, :4]
        out[i, :4] = [quantize(cur[0] - prev[0]), quantize(cur[1] - prev[1]),
                      normalize_yaw(cur[2] - prev[2]), quantize(cur[3] - prev[3])]
        prev = cur
    return out


def predict_chunk(policy: PolicySnapshot, obs: Observation, horizon: int, *, task: TaskSpec | None = None,
                  state: WorldState | None = None, rng: np.random.Generator | None = None,
                  representation: str = ABSOLUTE) -> ActionChunk:
    """Predict ``horizon`` future actions.

    Experts need the privileged ``task``/``state``; the noisy expert also draws
    from ``rng``.  Delta chunks are relative to the robot pose the chunk was
    recorded from (the current pose for experts).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    tick = state.tick if state is not None else 0
    if policy.kind in (SCRIPTED, NOISY):
        if task is None or state is None:
            raise ValueError("expert policies need the task and world state")
        plan, labels = scripted_expert_plan(task, state)
        r = state.robot
        hold = (plan.actions[-1, 0], plan.actions[-1, 1], plan.actions[-1, 2], plan.actions[-1, 3]) \
            if plan.horizon else (r.x, r.y, r.yaw, 0.0 if state.held else 1.0)
        rows, labels = _fit(plan.actions, labels, horizon, hold)
        if policy.kind == NOISY:
            if rng is None:
                raise ValueError("noisy expert needs an episode rng")
            noise = rng.uniform(-policy.sigma, policy.sigma, size=(horizon, 4))
            rows[:, :4] += noise
            rows[:, 3] = np.clip(rows[:, 3], 0.0, 1.0)
            rows[:, 2] = [normalize_yaw(a) for a in rows[:, 2]]
            rows[:, :4] = np.round(rows[:, :4] * 1e6) / 1e6
        ref = r.as_tuple()
    elif policy.kind == KNN:
        if not policy.index:
            raise EmptyDataset("cloner has no indexed frames")
        ix = policy.index.get(obs.task_id)
        if ix is None:
            # task never seen in training: stay put
            v = obs.vector
            rows, labels = _fit(np.empty((0, ACTION_DIMS)), (), horizon, (v[0], v[1], v[2], v[3]))
            if not obs.state_input_enabled and state is not None:
                r = state.robot
                rows[:, :4] = r.as_tuple()
            ref = tuple(rows[0, :4])
        else:
            s = 0 if obs.state_input_enabled else PROPRIO_DIMS
            q = (obs.vector[s:] - ix.mean[s:]) / ix.std[s:]
            d2 = np.einsum("ij,ij->i", ix.normed[:, s:] - q, ix.normed[:, s:] - q)
            if policy.k == 1:
                picks = [int(np.argmin(d2))]
            else:
                picks = [int(i) for i in np.argsort(d2, kind="stable")[:policy.k]]
            chunks = []
            for i in picks:
                actions, labs = policy.episodes[ix.episode[i]]
                f = int(ix.frame[i])
                seg = actions[f:f + horizon]
                last = seg[-1] if seg.shape[0] else actions[-1]
                rows_i, labs_i = _fit(seg, labs[f:f + horizon], horizon, tuple(last[:4]))
                if representation == DELTA:
                    rows_i = to_delta_rows(rows_i, ix.obs[i, :4])
                chunks.append((rows_i, labs_i))
            if len(chunks) == 1:
                rows, labels = chunks[0]
            else:
                stack = np.stack([c[0] for c in chunks])
                rows = stack.mean(axis=0)
                rows[:, 4] = (stack[:, :, 4].mean(axis=0) > 0.5).astype(np.float64)
                labels = chunks[0][1]
            return ActionChunk(rows, tick, representation, labels)
    else:
        raise ValueError(f"unknown policy kind {policy.kind!r}")
    if representation == DELTA:
        rows = to_delta_rows(rows, ref)
    return ActionChunk(rows, tick, representation, labels)

"""Append-only episode log and content-addressed dataset manifests.

Segment file layout::

    b"RFTEPS" | version byte | record*
    record = u32 little-endian payload length | payload

A record's length prefix is written after its payload, so a reader that
meets a zero length (or a short tail) has reached the end of committed data.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .policy import NAVIGATION

MAGIC = b"RFTEPS"
VERSION = 1
SEGMENT = "episodes.seg"
DEDUP_KEY = "task,instance,initial-pose,action-stream"


class CorruptEpisode(ValueError):
    pass


class DegenerateDistribution(ValueError):
    pass


def _hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


@dataclass
class Episode:
    task_id: int
    instance_seed: int
    episode_seed: int
    perturbation: tuple[float, float, float, float]
    checkpoint_id: str
    source: str
    success: bool
    terminal_predicates: tuple[bool, ...]
    initial_pose: tuple[float, float, float, float]
    observations: np.ndarray  # (n, d)
    actions: np.ndarray       # (n, 5)
    labels: tuple[str, ...]
    trace: np.ndarray         # (ticks + 1, goals) predicate vector after reset and every tick
    hold_factor: int = 1
    _payload: bytes | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def frame_count(self) -> int:
        return int(self.actions.shape[0])

    @property
    def steps(self) -> int:
        return int(self.trace.shape[0]) - 1

    def check(self) -> None:
        n = self.actions.shape[0]
        if self.observations.shape[0] != n or len(self.labels) != n:
            raise CorruptEpisode("frame count does not match observations/labels")
        if self.actions.ndim != 2 or self.actions.shape[1] != 5:
            raise CorruptEpisode("actions must be (n, 5)")
        if not np.all(np.isfinite(self.actions)) or not np.all(np.isfinite(self.observations)):
            raise CorruptEpisode("non-finite frame values")
        if bool(self.success) != all(self.terminal_predicates):
            raise CorruptEpisode("success flag disagrees with terminal predicates")

    def header(self) -> dict:
        return {
            "task": self.task_id, "instance": self.instance_seed, "episode_seed": self.episode_seed,
            "perturbation": list(self.perturbation), "checkpoint": self.checkpoint_id, "source": self.source,
            "success": bool(self.success), "terminal": [bool(b) for b in self.terminal_predicates],
            "initial_pose": list(self.initial_pose), "frames": self.frame_count,
            "obs_dim": int(self.observations.shape[1]) if self.observations.ndim == 2 else 0,
            "trace_shape": list(self.trace.shape), "labels": list(self.labels), "hold": self.hold_factor,
        }

    def payload(self) -> bytes:
        if self._payload is None:
            head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode()
            self._payload = b"".join([
                struct.pack("<I", len(head)), head,
                np.ascontiguousarray(self.observations, "<f8").tobytes(),
                np.ascontiguousarray(self.actions, "<f8").tobytes(),
                np.ascontiguousarray(self.trace, np.uint8).tobytes(),
            ])
        return self._payload

    @property
    def content_hash(self) -> str:
        return _hash(self.payload())

    def action_stream_hash(self) -> str:
        return _hash(np.ascontiguousarray(self.actions, "<f8").tobytes())

    @classmethod
    def from_payload(cls, payload: bytes) -> "Episode":
        (hl,) = struct.unpack_from("<I", payload)
        h = json.loads(payload[4:4 + hl])
        n, d = h["frames"], h["obs_dim"]
        o = 4 + hl
        obs = np.frombuffer(payload, "<f8", n * d, o).reshape(n, d).copy()
        o += 8 * n * d
        act = np.frombuffer(payload, "<f8", n * 5, o).reshape(n, 5).copy()
        o += 40 * n
        ts = tuple(h["trace_shape"])
        trace = np.frombuffer(payload, np.uint8, ts[0] * ts[1], o).reshape(ts).astype(bool)
        ep = cls(h["task"], h["instance"], h["episode_seed"], tuple(h["perturbation"]), h["checkpoint"],
                 h["source"], h["success"], tuple(h["terminal"]), tuple(h["initial_pose"]), obs, act,
                 tuple(h["labels"]), trace, h["hold"])
        ep._payload = bytes(payload)
        return ep


@dataclass(frozen=True)
class ManifestEntry:
    content_hash: str
    offset: int
    task_id: int
    source: str
    success: bool
    weight: tuple[float, float] | None = None  # per-frame (manipulation, navigation) sampling weights

    def line(self) -> str:
        base = f"{self.content_hash} {self.offset} {self.task_id} {self.source} {int(self.success)}"
        return base if self.weight is None else f"{base} {self.weight[0]!r} {self.weight[1]!r}"


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    lineage: str | None = None
    round: int | None = None
    params: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        ordered = tuple(sorted(self.entries, key=lambda e: e.content_hash))
        hashes = [e.content_hash for e in ordered]
        if len(set(hashes)) != len(hashes):
            raise ValueError("duplicate content hash in manifest")
        object.__setattr__(self, "entries", ordered)
        object.__setattr__(self, "params", tuple(sorted(dict(self.params).items())))

    def _body(self) -> str:
        lines = [f"lineage: {self.lineage or 'none'}",
                 f"round: {'none' if self.round is None else self.round}"]
        lines += [f"param {k}: {v}" for k, v in self.params]
        lines.append(f"entries: {len(self.entries)}")
        lines += [e.line() for e in self.entries]
        return "\n".join(lines) + "\n"

    @property
    def manifest_id(self) -> str:
        return _hash(self._body().encode())

    def to_text(self) -> str:
        return f"# rftsim manifest v1\nmanifest-id: {self.manifest_id}\n" + self._body()

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# rftsim manifest"):
            raise ValueError("not a manifest")
        mid = lines[1].split(": ", 1)[1]
        lineage = lines[2].split(": ", 1)[1]
        rnd = lines[3].split(": ", 1)[1]
        i, params = 4, []
        while lines[i].startswith("param "):
            k, v = lines[i][6:].split(": ", 1)
            params.append((k, v))
            i += 1
        count = int(lines[i].split(": ", 1)[1])
        entries = []
        for ln in lines[i + 1:i + 1 + count]:
            parts = ln.split(" ")
            entries.append(ManifestEntry(parts[0], int(parts[1]), int(parts[2]), parts[3], parts[4] == "1",
                                         (float(parts[5]), float(parts[6])) if len(parts) > 6 else None))
        m = cls(tuple(entries), None if lineage == "none" else lineage, None if rnd == "none" else int(rnd),
                tuple(params))
        if m.manifest_id != mid:
            raise ValueError(f"manifest id mismatch: header {mid}, content {m.manifest_id}")
        return m

    def with_entries(self, entries) -> "DatasetManifest":
        return replace(self, entries=tuple(entries))

    def hashes(self) -> set[str]:
        return {e.content_hash for e in self.entries}


class EpisodeStore:
    """Single-writer store; ``append`` is idempotent on content."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "manifests").mkdir(exist_ok=True)
        self.segment = self.root / SEGMENT
        if not self.segment.exists():
            self.segment.write_bytes(MAGIC + bytes([VERSION]))
        self._offsets: dict[str, int] = {}
        self._headers: dict[str, dict] = {}
        self._action_hashes: dict[str, str] = {}
        self._scan()

    def _scan(self):
        buf = self.segment.read_bytes()
        if not buf.startswith(MAGIC) or len(buf) <= len(MAGIC) or buf[len(MAGIC)] != VERSION:
            raise CorruptEpisode(f"{self.segment}: bad segment header")
        pos = len(MAGIC) + 1
        while pos + 4 <= len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            if n == 0 or pos + 4 + n > len(buf):
                break
            payload = buf[pos + 4:pos + 4 + n]
            h = _hash(payload)
            self._offsets.setdefault(h, pos)
            (hl,) = struct.unpack_from("<I", payload)
            self._headers.setdefault(h, json.loads(payload[4:4 + hl]))
            pos += 4 + n
        self._end = pos

    def __len__(self) -> int:
        return len(self._offsets)

    def __contains__(self, content_hash: str) -> bool:
        return content_hash in self._offsets

    def append(self, episode: Episode) -> str:
        episode.check()
        payload = episode.payload()
        h = _hash(payload)
        if h in self._offsets:
            return h
        with open(self.segment, "r+b") as f:
            f.seek(self._end)
            f.write(b"\0\0\0\0" + payload)
            f.truncate()
            f.flush()
            f.seek(self._end)
            f.write(struct.pack("<I", len(payload)))
            f.flush()
        self._offsets[h] = self._end
        self._headers[h] = episode.header()
        self._action_hashes[h] = episode.action_stream_hash()
        self._end += 4 + len(payload)
        return h

    def offset(self, content_hash: str) -> int:
        return self._offsets[content_hash]

    def header(self, content_hash: str) -> dict:
        return self._headers[content_hash]

    def read(self, content_hash: str) -> Episode:
        off = self._offsets[content_hash]
        with open(self.segment, "rb") as f:
            f.seek(off)
            (n,) = struct.unpack("<I", f.read(4))
            return Episode.from_payload(f.read(n))

    def action_hash(self, content_hash: str) -> str:
        if content_hash not in self._action_hashes:
            self._action_hashes[content_hash] = self.read(content_hash).action_stream_hash()
        return self._action_hashes[content_hash]

    def entry(self, content_hash: str) -> ManifestEntry:
        h = self._headers[content_hash]
        return ManifestEntry(content_hash, self._offsets[content_hash], h["task"], h["source"], h["success"])

    def manifest(self, hashes, lineage: str | None = None, round: int | None = None, params=()) -> DatasetManifest:
        return DatasetManifest(tuple(self.entry(h) for h in set(hashes)), lineage, round, tuple(params))

    def save_manifest(self, manifest: DatasetManifest) -> Path:
        path = self.root / "manifests" / f"{manifest.manifest_id}.txt"
        if not path.exists():
            path.write_text(manifest.to_text())
        return path

    def load_manifest(self, manifest_id: str) -> DatasetManifest:
        return DatasetManifest.from_text((self.root / "manifests" / f"{manifest_id}.txt").read_text())

    def set_ref(self, name: str, manifest_id: str) -> None:
        (self.root / "refs").mkdir(exist_ok=True)
        (self.root / "refs" / name).write_text(manifest_id + "\n")

    def ref(self, name: str) -> str:
        return (self.root / "refs" / name).read_text().strip()


# dedup / balance -------------------------------------------------------------

def dedup_key(header: dict, action_hash: str) -> tuple:
    return (header["task"], header["instance"], tuple(round(v * 1_000_000) for v in header["initial_pose"]),
            action_hash)


def dedup(manifest: DatasetManifest, store: EpisodeStore) -> DatasetManifest:
    """Drop entries whose (task, instance, initial pose, action stream) repeats; keep the earliest."""
    seen = set()
    keep = []
    for e in sorted(manifest.entries, key=lambda e: (e.offset, e.content_hash)):
        key = dedup_key(store.header(e.content_hash), store.action_hash(e.content_hash))
        if key in seen:
            continue
        seen.add(key)
        keep.append(e)
    if len(keep) == len(manifest.entries):
        return manifest
    return manifest.with_entries(keep)


@dataclass(frozen=True)
class PerTaskCap:
    quantile: float = 0.5

    def __str__(self) -> str:
        return f"PerTaskCap({self.quantile!r})"


@dataclass(frozen=True)
class SkillWeight:
    manip_ratio: float = 2.0
    nav_ratio: float = 1.0

    def __str__(self) -> str:
        return f"SkillWeight({self.manip_ratio!r}, {self.nav_ratio!r})"


def task_cap(counts: list[int], quantile: float) -> int:
    """Order-statistic quantile of per-task counts (upper neighbour); capping by it is idempotent."""
    ordered = sorted(counts)
    return ordered[math.ceil(quantile * (len(ordered) - 1))]


def cap_per_task(manifest: DatasetManifest, quantile: float = 0.5) -> DatasetManifest:
    if not manifest.entries:
        return manifest
    by_task: dict[int, list[ManifestEntry]] = {}
    for e in manifest.entries:
        by_task.setdefault(e.task_id, []).append(e)
    cap = task_cap([len(v) for v in by_task.values()], quantile)
    keep = []
    for entries in by_task.values():
        keep += sorted(entries, key=lambda e: (e.offset, e.content_hash))[:cap]
    if len(keep) == len(manifest.entries):
        return manifest
    return manifest.with_entries(keep)


def skill_frame_counts(labels) -> tuple[int, int]:
    nav = sum(1 for lab in labels if lab in NAVIGATION)
    return len(labels) - nav, nav


def solve_skill_weights(counts: list[tuple[int, int]], manip_ratio: float, nav_ratio: float) -> tuple[float, float]:
    """Frame weights (w_manip, w_nav) with sum(w_manip m) / sum(w_nav n) = manip_ratio / nav_ratio.

    ``counts`` holds (manipulation frames, navigation frames) per episode.  The
    weights are normalized so the weighted frame total equals the raw total.
    """
    if manip_ratio <= 0 or nav_ratio <= 0:
        raise ValueError("ratios must be positive")
    M = sum(c[0] for c in counts)
    N = sum(c[1] for c in counts)
    if M == 0 or N == 0:
        raise DegenerateDistribution("one skill class has zero frames")
    r = manip_ratio / nav_ratio
    w_nav = (M + N) / (N * (1.0 + r))
    return r * w_nav * N / M, w_nav


def skill_weight(manifest: DatasetManifest, store: EpisodeStore, manip_ratio: float = 2.0,
                 nav_ratio: float = 1.0) -> DatasetManifest:
    counts = [skill_frame_counts(store.header(e.content_hash)["labels"]) for e in manifest.entries]
    weights = solve_skill_weights(counts, manip_ratio, nav_ratio)
    return manifest.with_entries(replace(e, weight=weights) for e in manifest.entries)


def balance(manifest: DatasetManifest, policy, store: EpisodeStore | None = None) -> DatasetManifest:
    if isinstance(policy, PerTaskCap):
        return cap_per_task(manifest, policy.quantile)
    if isinstance(policy, SkillWeight):
        if store is None:
            raise ValueError("skill weighting needs the episode store")
        return skill_weight(manifest, store, policy.manip_ratio, policy.nav_ratio)
    raise TypeError(f"unknown balance policy {policy!r}")


def weighted_skill_ratio(manifest: DatasetManifest, store: EpisodeStore) -> float:
    wm = wn = 0.0
    for e in manifest.entries:
        m, n = skill_frame_counts(store.header(e.content_hash)["labels"])
        w_m, w_n = (1.0, 1.0) if e.weight is None else e.weight
        wm += w_m * m
        wn += w_n * n
    return wm / wn

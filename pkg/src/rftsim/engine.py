"""Batch planning and worker-count-invariant execution of rollout jobs.

Every job carries the full description of its episode (start, seeds, policy
checkpoint, executor settings), so a result depends on nothing but the job.
Workers pull jobs one at a time; results are re-sorted by job-id.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import multiprocessing as mp
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml

from .chunk_exec import ExecConfig, Teleport, execute_episode
from .datastore import DatasetManifest, Episode, EpisodeStore
from .policy import PolicySnapshot, load_snapshot
from .rng import derive_seed, stream
from .sim import PoseDelta, TaskSpec

SUCCESS = "success"
FAILURE = "failure"
ERROR = "error"


class EmptySourceDataset(ValueError):
    pass


def sample_perturbation(delta: Sequence[float], seed: int) -> PoseDelta:
    """Uniform per-component draw from [-delta, +delta] for (x, y, yaw); gripper untouched."""
    u = stream("perturbation", seed).uniform(-1.0, 1.0, size=3)
    return PoseDelta(float(u[0] * delta[0]), float(u[1] * delta[1]), float(u[2] * delta[2]), 0.0)


@dataclass(frozen=True)
class RolloutJob:
    round: int
    index: int
    task_id: int
    instance_seed: int
    episode_seed: int
    perturbation_seed: int
    delta: tuple[float, float, float]
    checkpoint_id: str
    exec_config: ExecConfig
    base: tuple[float, float, float] = (0.0, 0.0, 0.0)
    source: str = "eval"
    disturbances: tuple[Teleport, ...] = ()

    def canonical(self) -> str:
        d = {"round": self.round, "index": self.index, "task": self.task_id, "instance": self.instance_seed,
             "episode_seed": self.episode_seed, "perturbation_seed": self.perturbation_seed,
             "delta": list(self.delta), "checkpoint": self.checkpoint_id, "exec": self.exec_config.to_dict(),
             "base": list(self.base), "source": self.source,
             "disturbances": [[t.tick, t.obj, t.x, t.y] for t in self.disturbances]}
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @property
    def job_id(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def perturbation(self) -> PoseDelta:
        eps = sample_perturbation(self.delta, self.perturbation_seed)
        bx, by, byaw = self.base
        return PoseDelta(bx + eps.dx, by + eps.dy, byaw + eps.dyaw, 0.0)


@dataclass(frozen=True)
class RolloutResult:
    job_id: str
    outcome: str
    qscore: float
    satisfied: int
    total: int
    steps: int
    episode_hash: str | None
    message: str = ""
    wall_time: float = field(default=0.0, compare=False)
    episode: Episode | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.outcome == SUCCESS and self.qscore != 1.0:
            raise ValueError("a successful rollout has qscore 1")
        if self.outcome == ERROR and self.episode_hash is not None:
            raise ValueError("an errored rollout has no episode")

    def stable(self) -> tuple:
        return (self.job_id, self.outcome, self.qscore, self.satisfied, self.total, self.steps,
                self.episode_hash, self.message)


# batch specs ---------------------------------------------------------------

@dataclass(frozen=True)
class BatchSpec:
    round: int
    T: int
    checkpoint_id: str
    exec_config: ExecConfig
    delta: tuple[float, float, float]
    source_manifest: str
    master_seed: int = 0

    def to_text(self) -> str:
        d = {"round": self.round, "T": self.T, "policy": self.checkpoint_id, "exec": self.exec_config.to_dict(),
             "delta": list(self.delta), "source_manifest": self.source_manifest, "seed": self.master_seed}
        return yaml.safe_dump(d, sort_keys=True, default_flow_style=False)

    @classmethod
    def from_text(cls, text: str) -> "BatchSpec":
        d = yaml.safe_load(text)
        return cls(int(d["round"]), int(d["T"]), str(d["policy"]), ExecConfig.from_dict(d["exec"]),
                   tuple(float(v) for v in d["delta"]), str(d["source_manifest"]), int(d.get("seed", 0)))


def is_demo(source: str) -> bool:
    return not source.startswith("rft-round-")


def start_pool(manifest: DatasetManifest, store: EpisodeStore) -> list[tuple[int, int, tuple[float, float, float]]]:
    """(task, instance, base perturbation) of every demo entry, in manifest order."""
    pool = []
    for e in manifest.entries:
        if not is_demo(e.source):
            continue
        h = store.header(e.content_hash)
        p = h["perturbation"]
        pool.append((h["task"], h["instance"], (p[0], p[1], p[2])))
    return pool


def plan_jobs(spec: BatchSpec, pool: Sequence[tuple[int, int, tuple[float, float, float]]]) -> list[RolloutJob]:
    """The round's T rollouts: start t is drawn uniformly from ``pool`` with a stream keyed by (seed, round, t)."""
    if spec.T < 1:
        raise ValueError("T must be >= 1")
    if not pool:
        raise EmptySourceDataset(f"manifest {spec.source_manifest} has no demo starts")
    jobs = []
    for t in range(spec.T):
        task_id, inst, base = pool[int(stream(spec.master_seed, "start", spec.round, t).integers(len(pool)))]
        jobs.append(RolloutJob(
            round=spec.round, index=t, task_id=task_id, instance_seed=inst,
            episode_seed=derive_seed(spec.master_seed, "episode", spec.round, t),
            perturbation_seed=derive_seed(spec.master_seed, "perturb", spec.round, t),
            delta=tuple(spec.delta), checkpoint_id=spec.checkpoint_id, exec_config=spec.exec_config,
            base=tuple(base), source=f"rft-round-{spec.round}"))
    return sorted(jobs, key=lambda j: j.job_id)


def plan_grid(tasks: Iterable[TaskSpec], trials: int, checkpoint_id: str, cfg: ExecConfig,
              delta: Sequence[float], master_seed: int, *, round: int = -1, instances: int | None = None,
              source: str = "eval") -> list[RolloutJob]:
    """Evaluation jobs over (task, instance, trial).

    Perturbation and episode seeds depend on the cell only, so every
    checkpoint is scored on the same starts.
    """
    jobs = []
    for task in tasks:
        for inst in task.instances[:instances]:
            for trial in range(trials):
                jobs.append(RolloutJob(
                    round=round, index=trial, task_id=task.task_id, instance_seed=inst,
                    episode_seed=derive_seed(master_seed, "eval-episode", task.task_id, inst, trial),
                    perturbation_seed=derive_seed(master_seed, "eval-perturb", task.task_id, inst, trial),
                    delta=tuple(delta), checkpoint_id=checkpoint_id, exec_config=cfg, source=source))
    return sorted(jobs, key=lambda j: j.job_id)


# execution -----------------------------------------------------------------

_CTX: dict = {}


def _policy(checkpoint_id: str) -> PolicySnapshot:
    cache = _CTX["policies"]
    if checkpoint_id not in cache:
        directory = _CTX.get("policy_dir")
        path = Path(directory) / f"{checkpoint_id}.snap" if directory else None
        if path is None or not path.exists():
            raise FileNotFoundError(f"policy {checkpoint_id} not found")
        cache[checkpoint_id] = load_snapshot(path)
    return cache[checkpoint_id]


def run_job(job: RolloutJob) -> RolloutResult:
    t0 = time.perf_counter()
    try:
        task = _CTX["tasks"][job.task_id]
        policy = _policy(job.checkpoint_id)
        ep = execute_episode(task, job.instance_seed, job.perturbation(), policy, job.exec_config,
                             job.episode_seed, source=job.source, disturbances=job.disturbances)
    except Exception as exc:  # isolated per job
        return RolloutResult(job.job_id, ERROR, 0.0, 0, 0, 0, None, f"{type(exc).__name__}: {exc}",
                             time.perf_counter() - t0)
    sat = sum(ep.terminal_predicates)
    total = len(ep.terminal_predicates)
    return RolloutResult(job.job_id, SUCCESS if ep.success else FAILURE, sat / total, sat, total, ep.steps,
                         ep.content_hash, "", time.perf_counter() - t0, ep)


def run(jobs: Sequence[RolloutJob], workers: int, tasks: Mapping[int, TaskSpec], *,
        policies: Mapping[str, PolicySnapshot] | None = None, policy_dir: str | Path | None = None,
        keep_episodes: bool = True) -> list[RolloutResult]:
    """Execute each job exactly once; output is sorted by job-id whatever ``workers`` is."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    ids = [j.job_id for j in jobs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate job ids in batch")
    _CTX.clear()
    _CTX.update(tasks=dict(tasks), policies=dict(policies or {}), policy_dir=policy_dir)
    try:
        if workers == 1 or len(jobs) <= 1:
            results = [run_job(j) for j in jobs]
        else:
            with mp.get_context("fork").Pool(workers) as pool:
                results = list(pool.imap_unordered(run_job, jobs, chunksize=1))
    finally:
        _CTX.clear()
    if not keep_episodes:
        results = [RolloutResult(*r.stable(), wall_time=r.wall_time) for r in results]
    return sorted(results, key=lambda r: r.job_id)


RESULT_COLUMNS = ("job_id", "round", "task", "instance", "trial", "outcome", "qscore", "satisfied", "total",
                  "steps", "episode_hash", "message", "wall_time_unstable")


def results_csv(jobs: Sequence[RolloutJob], results: Sequence[RolloutResult], *, wall_time: bool = True) -> str:
    by_id = {j.job_id: j for j in jobs}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = RESULT_COLUMNS if wall_time else RESULT_COLUMNS[:-1]
    w.writerow(cols)
    for r in sorted(results, key=lambda r: r.job_id):
        j = by_id[r.job_id]
        row = [r.job_id, j.round, j.task_id, j.instance_seed, j.index, r.outcome, f"{r.qscore:.6f}", r.satisfied,
               r.total, r.steps, r.episode_hash or "", r.message]
        if wall_time:
            row.append(f"{r.wall_time:.4f}")
        w.writerow(row)
    return buf.getvalue()

"""Rejection-sampling fine-tuning: roll out, keep successes, grow the dataset, retrain, validate."""
from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .chunk_exec import ExecConfig
from .datastore import DatasetManifest, EpisodeStore, PerTaskCap, SkillWeight, DEDUP_KEY, balance, dedup
from .engine import (SUCCESS, BatchSpec, RolloutJob, RolloutResult, plan_grid, plan_jobs, results_csv, run,
                     sample_perturbation, start_pool)
from .metrics import aggregate_qscore, success_rate
from .policy import PolicySnapshot, knn_train
from .provenance import header
from .sim import RobotConfig, TaskSpec, normalize_yaw, quantize

log = logging.getLogger(__name__)

RETRAIN_NOTE = ("retraining re-indexes the whole dataset D each round, so starting from the previous or "
                "from the pre-trained policy is the same thing for the nearest-neighbour cloner")


class MissingValidation(KeyError):
    pass


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class RftConfig:
    rounds: int = 3
    T: int = 400
    delta: tuple[float, float, float] = (0.2, 0.2, 0.3)
    exec_config: ExecConfig = ExecConfig()
    balance: PerTaskCap | SkillWeight | None = PerTaskCap(0.5)
    k: int = 1
    chunk_stride: int = 1
    validation_trials: int = 5
    validation_instances: int | None = None
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.rounds < 1 or self.T < 1:
            raise ValueError("rounds and T must be >= 1")
        if any(d < 0 for d in self.delta):
            raise ValueError("perturbation half-widths must be >= 0")
        if self.validation_trials < 1:
            raise ValueError("validation_trials must be >= 1")

    def to_dict(self) -> dict:
        return {"rounds": self.rounds, "T": self.T, "delta": list(self.delta), "exec": self.exec_config.to_dict(),
                "balance": str(self.balance), "k": self.k, "chunk_stride": self.chunk_stride,
                "validation_trials": self.validation_trials, "validation_instances": self.validation_instances,
                "seed": self.master_seed, "dedup_key": DEDUP_KEY}


def perturb_initial(s0: RobotConfig, delta: Sequence[float], seed: int) -> RobotConfig:
    """s0 + eps with eps ~ U[-delta, delta] per (x, y, yaw) component."""
    eps = sample_perturbation(delta, seed)
    return RobotConfig(quantize(s0.x + eps.dx), quantize(s0.y + eps.dy), normalize_yaw(s0.yaw + eps.dyaw),
                       s0.gripper)


# registry and reports --------------------------------------------------------

@dataclass(frozen=True)
class RegistryEntry:
    round: int
    checkpoint_id: str
    manifest_id: str
    validation_ref: str
    qscore: Fraction
    success: Fraction


@dataclass
class CheckpointRegistry:
    entries: list[RegistryEntry] = field(default_factory=list)

    def append(self, entry: RegistryEntry) -> None:
        if self.entries and entry.round <= self.entries[-1].round:
            raise ValueError("registry rounds must increase")
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def body(self) -> str:
        lines = ["round,checkpoint,manifest,validation,qscore,success_rate"]
        lines += [f"{e.round},{e.checkpoint_id},{e.manifest_id},{e.validation_ref},{float(e.qscore):.6f},"
                  f"{float(e.success):.6f}" for e in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CheckpointRegistry":
        rows = list(csv.DictReader(ln for ln in text.splitlines() if not ln.startswith("#")))
        reg = cls()
        for r in rows:
            reg.append(RegistryEntry(int(r["round"]), r["checkpoint"], r["manifest"], r["validation"],
                                     Fraction(r["qscore"]), Fraction(r["success_rate"])))
        return reg


@dataclass(frozen=True)
class RoundReport:
    round: int
    jobs: int
    successes: int
    errors: int
    kept_after_dedup: int
    kept_after_balance: int
    dataset_size: int
    manifest_id: str
    checkpoint_id: str
    validation_qscore: Fraction
    validation_success: Fraction

    CSV_COLUMNS = ("round", "jobs", "successes", "errors", "kept_after_dedup", "kept_after_balance",
                   "dataset_size", "manifest_id", "checkpoint_id", "validation_qscore", "validation_success_rate")

    def row(self) -> list:
        return [self.round, self.jobs, self.successes, self.errors, self.kept_after_dedup, self.kept_after_balance,
                self.dataset_size, self.manifest_id, self.checkpoint_id, f"{float(self.validation_qscore):.6f}",
                f"{float(self.validation_success):.6f}"]

    def to_text(self) -> str:
        return "".join(f"{k}: {v}\n" for k, v in zip(self.CSV_COLUMNS, self.row()))


def validation_csv(jobs: Sequence[RolloutJob], results: Sequence[RolloutResult]) -> str:
    by_id = {j.job_id: j for j in jobs}
    rows = []
    for r in results:
        j = by_id[r.job_id]
        rows.append((j.task_id, j.instance_seed, j.index, r.outcome, r.satisfied, r.total, r.steps,
                     r.episode_hash or ""))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("task", "instance", "trial", "outcome", "satisfied", "total", "steps", "episode_hash"))
    w.writerows(sorted(rows))
    return buf.getvalue()


def read_validation(text: str) -> dict[tuple[int, int, int], Fraction]:
    rows = csv.DictReader(ln for ln in text.splitlines() if not ln.startswith("#"))
    return {(int(r["task"]), int(r["instance"]), int(r["trial"])): Fraction(int(r["satisfied"]), int(r["total"]))
            for r in rows}


def instance_table(cells: Mapping[tuple, Fraction]) -> dict[tuple[int, int], Fraction]:
    """Average trials into one score per (task, instance)."""
    acc: dict = {}
    for key, v in cells.items():
        acc.setdefault(key[:2], []).append(Fraction(v))
    return {k: sum(vs, Fraction(0)) / len(vs) for k, vs in sorted(acc.items())}


# selection -------------------------------------------------------------------

def select_best(registry: CheckpointRegistry, validation: Mapping[str, object]) -> str:
    """Highest mean validation qscore; ties go to the earliest round."""
    if not registry.entries:
        raise MissingValidation("empty registry")
    best = None
    for e in registry.entries:
        if e.checkpoint_id not in validation:
            raise MissingValidation(e.checkpoint_id)
        score = Fraction(validation[e.checkpoint_id])
        if best is None or score > best[0]:
            best = (score, e.checkpoint_id)
    return best[1]


def theoretical_best(per_checkpoint: Mapping[str, Mapping[tuple, object]]) -> tuple[Fraction, dict]:
    """Per-cell maximum over checkpoints, aggregated; also the winning checkpoint of each cell (earliest on ties)."""
    if not per_checkpoint:
        raise GridMismatch("no checkpoints")
    names = list(per_checkpoint)
    grid = set(per_checkpoint[names[0]])
    for n in names[1:]:
        if set(per_checkpoint[n]) != grid:
            raise GridMismatch(f"checkpoint {n} was scored on a different grid")
    best: dict = {}
    winner: dict = {}
    for cell in sorted(grid):
        for n in names:
            v = Fraction(per_checkpoint[n][cell])
            if cell not in best or v > best[cell]:
                best[cell] = v
                winner[cell] = n
    return aggregate_qscore(best), {c: (winner[c], best[c]) for c in sorted(grid)}


# the loop -------------------------------------------------------------------

@dataclass
class RftRun:
    registry: CheckpointRegistry
    reports: list[RoundReport]
    validation: dict[str, dict]
    out_dir: Path

    def scores(self) -> list[tuple[int, float, float]]:
        return [(e.round, float(e.qscore), float(e.success)) for e in self.registry.entries]


def _validate(policy: PolicySnapshot, rnd: int, cfg: RftConfig, tasks: Mapping[int, TaskSpec], pdir: Path):
    jobs = plan_grid(sorted(tasks.values(), key=lambda t: t.task_id), cfg.validation_trials, policy.checkpoint_id,
                     cfg.exec_config, cfg.delta, cfg.master_seed, round=rnd, instances=cfg.validation_instances,
                     source="validation")
    results = run(jobs, cfg.workers, tasks, policies={policy.checkpoint_id: policy}, policy_dir=pdir,
                  keep_episodes=False)
    text = validation_csv(jobs, results)
    return text, read_validation(text)


def run_rft(cfg: RftConfig, store: EpisodeStore, initial_manifest: DatasetManifest, initial_policy: PolicySnapshot,
            tasks: Mapping[int, TaskSpec], out_dir: str | Path, *,
            accept: Callable[[RolloutResult], bool] | None = None) -> RftRun:
    """Run ``cfg.rounds`` rounds; the registry holds the initial policy as round 0, then one entry per round."""
    if not initial_manifest.entries:
        raise ValueError("initial manifest is empty")
    unknown = sorted({e.task_id for e in initial_manifest.entries} - set(tasks))
    if unknown:
        raise ValueError(f"initial manifest holds tasks missing from the task map: {unknown}")
    out = Path(out_dir)
    for sub in ("policies", "validation", "rollouts", "reports"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    pdir = out / "policies"
    head = header("rft", cfg.master_seed, cfg.to_dict(), (RETRAIN_NOTE,))
    params = (("dedup", DEDUP_KEY), ("balance", str(cfg.balance)))

    D = initial_manifest
    store.save_manifest(D)
    pool = start_pool(D, store)
    policy = initial_policy
    policy.save(pdir)

    registry = CheckpointRegistry()
    reports: list[RoundReport] = []
    validation: dict[str, dict] = {}

    def record(rnd: int):
        text, table = _validate(policy, rnd, cfg, tasks, pdir)
        body = header("validation", cfg.master_seed, cfg.to_dict()) + text
        name = f"validation/round-{rnd}.csv"
        (out / name).write_text(body)
        ref = f"{name}@{hashlib.sha256(body.encode()).hexdigest()[:16]}"
        entry = RegistryEntry(rnd, policy.checkpoint_id, D.manifest_id, ref, aggregate_qscore(table),
                              success_rate(table))
        registry.append(entry)
        validation[policy.checkpoint_id] = table
        return entry

    first = record(0)
    rows = [[0, 0, 0, 0, 0, 0, len(D.entries), D.manifest_id, policy.checkpoint_id,
             f"{float(first.qscore):.6f}", f"{float(first.success):.6f}"]]
    log.info("round 0: validation success %.4f", float(first.success))

    for rnd in range(1, cfg.rounds + 1):
        spec = BatchSpec(rnd, cfg.T, policy.checkpoint_id, cfg.exec_config, cfg.delta, D.manifest_id,
                         cfg.master_seed)
        (out / "rollouts" / f"round-{rnd}.spec.yaml").write_text(header("batch", cfg.master_seed, cfg.to_dict())
                                                                 + spec.to_text())
        jobs = plan_jobs(spec, pool)
        results = run(jobs, cfg.workers, tasks, policies={policy.checkpoint_id: policy}, policy_dir=pdir)
        (out / "rollouts" / f"round-{rnd}.csv").write_text(header("rollouts", cfg.master_seed, cfg.to_dict())
                                                           + results_csv(jobs, results))
        wins = [r for r in results if r.outcome == SUCCESS and (accept is None or accept(r))]
        errors = sum(1 for r in results if r.outcome == "error")
        if not wins:
            log.warning("round %d: no successful rollouts, dataset unchanged", rnd)
        hashes = {store.append(r.episode) for r in wins}
        merged = dedup(store.manifest(D.hashes() | hashes, D.manifest_id, rnd, params), store)
        fresh = store.manifest(merged.hashes() - D.hashes(), D.manifest_id, rnd, params)
        kept = balance(fresh, cfg.balance, store) if cfg.balance is not None and fresh.entries else fresh
        if kept.entries:
            store.save_manifest(kept)
            D = store.manifest(D.hashes() | kept.hashes(), D.manifest_id, rnd, params)
            store.save_manifest(D)
        store.set_ref(f"rft-round-{rnd}", D.manifest_id)
        policy = knn_train(D, store, cfg.k, cfg.chunk_stride, cfg.exec_config.hold_factor)
        policy.save(pdir)
        entry = record(rnd)
        rep = RoundReport(rnd, len(jobs), len(wins), errors, len(fresh.entries), len(kept.entries), len(D.entries),
                          D.manifest_id, policy.checkpoint_id, entry.qscore, entry.success)
        reports.append(rep)
        (out / "reports" / f"round-{rnd}.txt").write_text(header("round-report", cfg.master_seed, cfg.to_dict(),
                                                                 (RETRAIN_NOTE,)) + rep.to_text())
        rows.append(rep.row())
        log.info("round %d: %d/%d successes, dataset %d, validation success %.4f", rnd, len(wins), len(jobs),
                 len(D.entries), float(entry.success))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RoundReport.CSV_COLUMNS)
    w.writerows(rows)
    (out / "rounds.csv").write_text(head + buf.getvalue())
    (out / "registry.csv").write_text(head + registry.body())
    return RftRun(registry, reports, validation, out)

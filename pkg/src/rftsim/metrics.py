"""Q-score, success rate and dataset statistics."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .policy import SKILLS

QSCORE_DEFINITION = ("qscore = fraction of goal predicates satisfied at the terminal state; "
                     "aggregate = mean over instances within a task, then unweighted mean over tasks "
                     "(a stand-in for the official benchmark formula)")
SIMPLE_FRAMES = 250


class EmptyGoals(ValueError):
    pass


class EmptyGrid(ValueError):
    pass


class MissingSkillLabels(ValueError):
    pass


@dataclass(frozen=True)
class QScore:
    satisfied: int
    total: int

    def __post_init__(self):
        if self.total < 1:
            raise EmptyGoals("a task needs at least one goal")
        if not 0 <= self.satisfied <= self.total:
            raise ValueError("satisfied must lie in [0, total]")

    @property
    def value(self) -> float:
        return self.satisfied / self.total

    @property
    def exact(self) -> Fraction:
        return Fraction(self.satisfied, self.total)

    @property
    def success(self) -> bool:
        return self.satisfied == self.total


def qscore(predicates: Sequence[bool]) -> QScore:
    if len(predicates) == 0:
        raise EmptyGoals("empty predicate vector")
    return QScore(sum(bool(p) for p in predicates), len(predicates))


def _exact(v) -> Fraction:
    if isinstance(v, QScore):
        return v.exact
    return Fraction(v)


def aggregate_qscore(results: Mapping[tuple, object]) -> Fraction:
    """Two-level mean over a table keyed by (task, instance[, ...]).

    Keys beyond the task are grouped together, so repeated trials of an
    instance are simply more cells of that task.  Arithmetic is exact.
    """
    if not results:
        raise EmptyGrid("no results to aggregate")
    per_task: dict = {}
    for key, v in results.items():
        per_task.setdefault(key[0], []).append(_exact(v))
    means = [sum(vs, Fraction(0)) / len(vs) for vs in per_task.values()]
    return sum(means, Fraction(0)) / len(means)


def success_rate(results: Mapping[tuple, object]) -> Fraction:
    """Same two-level mean with each cell scored 1 if fully successful, else 0."""
    return aggregate_qscore({k: Fraction(int(_exact(v) == 1)) for k, v in results.items()})


def per_task_means(results: Mapping[tuple, object]) -> dict:
    per_task: dict = {}
    for key, v in results.items():
        per_task.setdefault(key[0], []).append(_exact(v))
    return {t: sum(vs, Fraction(0)) / len(vs) for t, vs in sorted(per_task.items())}


@dataclass(frozen=True)
class TaskStats:
    mean_frames: float
    mean_unique_skills: float
    episodes: int

    @property
    def simple(self) -> bool:
        return self.mean_frames < SIMPLE_FRAMES


@dataclass(frozen=True)
class DatasetStats:
    skill_shares: dict
    per_task: dict

    @property
    def simple(self) -> dict:
        return {t: s.simple for t, s in self.per_task.items()}


def dataset_stats(episodes: Sequence[tuple[int, Sequence[str]]]) -> DatasetStats:
    """Frame-weighted skill shares and per-task length statistics from (task-id, labels) pairs."""
    if not episodes:
        raise EmptyGrid("no episodes")
    frames: Counter = Counter()
    by_task: dict = {}
    for task_id, labels in episodes:
        if len(labels) == 0:
            raise MissingSkillLabels(f"episode of task {task_id} carries no skill labels")
        bad = [lab for lab in labels if lab not in SKILLS]
        if bad:
            raise MissingSkillLabels(f"unknown skill label {bad[0]!r}")
        frames.update(labels)
        by_task.setdefault(task_id, []).append((len(labels), len(set(labels))))
    total = sum(frames.values())
    shares = {s: frames[s] / total for s in SKILLS}
    per_task = {t: TaskStats(sum(n for n, _ in v) / len(v), sum(u for _, u in v) / len(v), len(v))
                for t, v in sorted(by_task.items())}
    return DatasetStats(shares, per_task)


def manifest_stats(manifest, store) -> DatasetStats:
    return dataset_stats([(e.task_id, store.header(e.content_hash)["labels"]) for e in manifest.entries])

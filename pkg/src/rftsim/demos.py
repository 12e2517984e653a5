"""Demonstration corpus generation with the scripted or noisy expert."""
from __future__ import annotations

from typing import Iterable

from .chunk_exec import ExecConfig, execute_episode
from .datastore import DatasetManifest, EpisodeStore
from .policy import noisy_expert, scripted_expert
from .rng import derive_seed
from .sim import TaskSpec

DEMO_SOURCE = "planner"


def generate_demos(tasks: Iterable[TaskSpec], store: EpisodeStore, *, sigma: float = 0.25, seed: int = 0,
                   per_task: int = 50, until_success: int | None = None,
                   cfg: ExecConfig = ExecConfig()) -> DatasetManifest:
    """Record expert episodes and return the manifest of everything generated.

    With ``until_success=A`` each instance gets attempts until its first
    success (at most A); otherwise ``per_task`` episodes cycle through the
    task's instances.
    """
    policy = scripted_expert() if sigma == 0 else noisy_expert(sigma)
    hashes = []
    for task in sorted(tasks, key=lambda t: t.task_id):
        if until_success is not None:
            for inst in task.instances:
                for attempt in range(until_success):
                    ep = execute_episode(task, inst, None, policy, cfg,
                                         derive_seed(seed, "demo", task.task_id, inst, attempt), source=DEMO_SOURCE)
                    hashes.append(store.append(ep))
                    if ep.success:
                        break
        else:
            n = len(task.instances)
            for j in range(per_task):
                inst = task.instances[j % n]
                ep = execute_episode(task, inst, None, policy, cfg,
                                     derive_seed(seed, "demo", task.task_id, inst, j // n), source=DEMO_SOURCE)
                hashes.append(store.append(ep))
    params = (("expert", policy.describe()), ("seed", str(seed)))
    return store.manifest(hashes, params=params)


def successes(manifest: DatasetManifest) -> DatasetManifest:
    return manifest.with_entries(e for e in manifest.entries if e.success)

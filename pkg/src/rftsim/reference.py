"""The pinned reference experiment: noisy-expert demos, k-NN bootstrap, three RFT rounds."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .datastore import EpisodeStore
from .demos import generate_demos, successes
from .flywheel import RftConfig, RftRun, run_rft
from .policy import knn_train
from .sim import load_suite

REFERENCE_SEED = 0
# must equal the corresponding parameters of --until-success / rft defaults in the CLI
DEMO_SIGMA = 0.25
DEMO_ATTEMPTS = 60


@dataclass(frozen=True)
class ReferenceRun:
    rft: RftRun
    store: EpisodeStore
    demo_manifest_id: str
    initial_manifest_id: str


def reference_config(seed: int = REFERENCE_SEED, workers: int = 1, **overrides) -> RftConfig:
    return RftConfig(master_seed=seed, workers=workers, **overrides)


def run_reference(root: str | Path, seed: int = REFERENCE_SEED, workers: int = 1, **overrides) -> ReferenceRun:
    """Generate demos into ``root/store`` and run RFT into ``root/rft``.

    The initial dataset holds the first successful noisy demo of every
    (task, instance); each instance is retried up to ``DEMO_ATTEMPTS`` times.
    """
    root = Path(root)
    tasks = {t.task_id: t for t in load_suite()}
    store = EpisodeStore(root / "store")
    demos = generate_demos(tasks.values(), store, sigma=DEMO_SIGMA, seed=seed, until_success=DEMO_ATTEMPTS)
    store.save_manifest(demos)
    D = successes(demos)
    pi = knn_train(D, store)
    cfg = reference_config(seed, workers, **overrides)
    run = run_rft(cfg, store, D, pi, tasks, root / "rft")
    return ReferenceRun(run, store, demos.manifest_id, D.manifest_id)

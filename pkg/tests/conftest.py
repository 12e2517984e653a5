import time

import pytest

from rftsim.datastore import EpisodeStore
from rftsim.demos import generate_demos, successes
from rftsim.sim import load_suite


@pytest.fixture(scope="session")
def suite():
    return load_suite()


@pytest.fixture(scope="session")
def tasks(suite):
    return {t.task_id: t for t in suite}


@pytest.fixture(scope="session")
def demo_store(tmp_path_factory, suite):
    """Noisy-expert demos for the whole suite, first success per instance."""
    store = EpisodeStore(tmp_path_factory.mktemp("demos"))
    m = generate_demos(suite, store, sigma=0.25, seed=0, until_success=60)
    store.save_manifest(m)
    return store, m, successes(m)


@pytest.fixture(scope="session")
def reference_timed(tmp_path_factory):
    """The pinned reference run and its wall-clock seconds."""
    from rftsim.reference import run_reference

    t0 = time.perf_counter()
    ref = run_reference(tmp_path_factory.mktemp("reference"))
    return ref, time.perf_counter() - t0


@pytest.fixture(scope="session")
def reference(reference_timed):
    return reference_timed[0]

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from prlkit.config import RunConfig
from prlkit.phantom import PhantomSpec, generate_phantom_cohort
from prlkit.pipeline import run_phantom


@pytest.fixture(scope="session")
def small_spec() -> PhantomSpec:
    """A compact cohort with enough positives for fold work."""
    return PhantomSpec(n_subjects=10, lesions_per_subject=(3, 6), prl_fraction=0.3, seed=11)


@pytest.fixture(scope="session")
def small_cohort(small_spec):
    return generate_phantom_cohort(small_spec)


@pytest.fixture(scope="session")
def small_cohort_dir(small_spec, tmp_path_factory) -> Path:
    """The same small cohort, persisted to disk once per session."""
    out = tmp_path_factory.mktemp("cohort")
    run_phantom(small_spec, out, RunConfig(seed=small_spec.seed))
    return out

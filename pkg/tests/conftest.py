import numpy as np
import pytest

from coughscreen.cohort import CohortSpec, Group, simulate_cohort
from coughscreen.pipeline import make_provider, prepare_dataset


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory):
    """Separable 12/10/10 cohort, effect size 2.0, seed 1."""
    out = tmp_path_factory.mktemp("cohort_small")
    spec = CohortSpec(group_sizes={Group.TB_POS: 12, Group.OR: 10, Group.HC: 10},
                      effect_size=2.0, seed=1)
    return simulate_cohort(spec, out)


@pytest.fixture(scope="session")
def small_dataset(small_cohort):
    return prepare_dataset(small_cohort, make_provider("synthetic"),
                           with_background=True, with_white_noise=True)


@pytest.fixture(scope="session")
def small_rows(small_dataset):
    from coughscreen.pipeline import run_cross_validation
    return run_cross_validation(small_dataset, k=5, seed=0)


def make_tone(freq_hz: float, duration_s: float, sr: int, amp: float = 0.5) -> np.ndarray:
    t = np.arange(int(round(duration_s * sr))) / sr
    return amp * np.sin(2 * np.pi * freq_hz * t)

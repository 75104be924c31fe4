import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dualunc.datahub import AnnotationSet, Dataset, LabelSpace

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def panel_dataset(vote_lists, k=2, d=2, seed=0, working=None):
    """Dataset whose i-th sample carries the votes in ``vote_lists[i]``."""
    rng = np.random.default_rng(seed)
    z = len(vote_lists)
    return Dataset(
        LabelSpace.of_size(k),
        [f"p{i:03d}" for i in range(z)],
        rng.standard_normal((z, d)),
        working=working,
        annotations=[AnnotationSet.from_labels(v) for v in vote_lists],
    )


@pytest.fixture
def tiny_panel():
    return panel_dataset([[0, 0, 0], [1, 1, 1], [0, 1], [1], [0, 0, 1]])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

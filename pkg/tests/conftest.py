import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from excursion_kit.data import DecisionRow, PanelDataset, SubjectRecord

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_panel(n=20, T=10, p=0.5, seed=0, gamma=(0.3, -0.2, 0.1), beta=0.2, moderators=(), p_known=True,
               p_fn=None):
    """Small randomized panel with design probability ``p`` (or ``p_fn(H)``)."""
    rng = np.random.default_rng(seed)
    N = n * T
    H = rng.standard_normal((N, 3))
    prob = np.full(N, p) if p_fn is None else p_fn(H)
    A = (rng.random(N) < prob).astype(int)
    eta = H @ np.asarray(gamma) + beta * A
    Y = (rng.random(N) < 1 / (1 + np.exp(-eta))).astype(int)
    return PanelDataset(np.repeat(np.arange(n), T).astype(object), np.tile(np.arange(1, T + 1), n), A, Y,
                        np.ones(N, dtype=int), H, prob if p_known else np.full(N, np.nan),
                        ("H1", "H2", "H3"), tuple(moderators))


def hand_panel(rows_by_subject, names=("x",)):
    """Build a panel from {subject: [(A, Y, I, covariates, p_known), ...]}."""
    subjects = []
    for sid, rows in rows_by_subject.items():
        subjects.append(SubjectRecord(sid, tuple(
            DecisionRow(t + 1, a, y, i, tuple(cov), p) for t, (a, y, i, cov, p) in enumerate(rows))))
    return PanelDataset.from_subjects(subjects, names)


@pytest.fixture
def panel():
    return make_panel()

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from skillpool.model import Dataset, LogitObservation, RankObservation

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_dataset(rng, n=None, m=None, p_obs=0.7, n_val=None, with_train=True):
    n = n or int(rng.integers(1, 6))
    m = m or int(rng.integers(1, 4))
    gamers = [f"g{i}" for i in range(n)]
    mods = [f"m{j}" for j in range(m)]
    logits = []
    for g in gamers:
        for mo in mods:
            if rng.uniform() < p_obs:
                for t in range(int(rng.integers(1, 5))):
                    logits.append(LogitObservation(g, mo, t, float(rng.normal(0, 2))))
    ranks = []
    for i, g in enumerate(gamers):
        u = rng.uniform()
        if u < 0.5:
            ranks.append(RankObservation(g, int(rng.integers(0, 2)), "validation"))
        elif with_train and u < 0.8:
            ranks.append(RankObservation(g, int(rng.integers(0, 2)), "train"))
    if not logits and not any(r.split == "validation" for r in ranks):
        logits.append(LogitObservation(gamers[0], mods[0], 0, 0.3))
    return Dataset(gamers, mods, logits, ranks)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_dataset():
    logits = [
        LogitObservation("a", "video", 0, 1.2), LogitObservation("a", "video", 1, 0.4),
        LogitObservation("a", "chat", 0, -0.3), LogitObservation("b", "video", 0, -1.1),
        LogitObservation("c", "chat", 0, 0.8), LogitObservation("c", "chat", 1, 1.9),
    ]
    ranks = [RankObservation("a", 1, "validation"), RankObservation("b", 0, "validation"),
             RankObservation("c", 1, "train")]
    return Dataset(("a", "b", "c"), ("video", "chat"), tuple(logits), tuple(ranks))

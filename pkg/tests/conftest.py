import numpy as np
import pytest

from armington.ces_model import FirstStageParams, SecondStageParams, SimConfig, simulate_panel

DEMO_DIR = "data/demo"


def default_alpha(n: int) -> tuple[float, ...]:
    w = np.arange(1, n + 1, dtype=float)
    return tuple(w / w.sum())


@pytest.fixture(scope="session")
def small_economy():
    """One quick synthetic economy shared by tests that only need shape."""
    cfg = SimConfig(n_countries=6, n_months=60)
    first = FirstStageParams(sigma=4.0, alpha=default_alpha(6))
    second = SecondStageParams(rho=1.2, beta=0.55)
    return simulate_panel(cfg, first, second, seed=11)


def random_small_panel(rng, n_entities=3, n_periods=4, k=2):
    """Arrays for estimator-identity checks: y, X, entities, times."""
    n = n_entities * n_periods
    entities = np.repeat(np.arange(n_entities), n_periods)
    times = np.tile(np.arange(n_periods), n_entities)
    X = rng.standard_normal((n, k))
    beta = rng.standard_normal(k)
    effects = rng.standard_normal(n_entities)
    y = X @ beta + effects[entities] + 0.3 * rng.standard_normal(n)
    return y, X, entities, times

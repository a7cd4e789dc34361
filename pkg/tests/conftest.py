import numpy as np
import pytest

from app.market.spd import simulate_paths
from app.schemas.params import HabitParams, MarketParams, ModelParams, PreferenceParams, TimeGrid
from app.schemas.request import ExperimentConfig


@pytest.fixture
def market() -> MarketParams:
    return MarketParams(r=0.01, mu=0.05, sigma=0.2)


@pytest.fixture
def model() -> ModelParams:
    return ModelParams(
        preferences=PreferenceParams(gamma=10.0, delta=0.03),
        habit=HabitParams(alpha=0.1, beta=0.1),
        x0=20.0,
        horizon=10.0,
    )


@pytest.fixture
def no_habit_model(model) -> ModelParams:
    return model.model_copy(update={"habit": HabitParams(alpha=0.0, beta=0.0)})


@pytest.fixture
def decaying_habit_model(model) -> ModelParams:
    return model.model_copy(update={"habit": HabitParams(alpha=0.2, beta=0.1)})


@pytest.fixture
def grid() -> TimeGrid:
    return TimeGrid(T=10.0, n_steps=40)


@pytest.fixture
def small_batch(market, grid):
    return simulate_paths(market, grid, n_paths=500, seed=7)


@pytest.fixture
def small_config() -> ExperimentConfig:
    return ExperimentConfig(n_paths=200, n_steps=10, seed=3, plot_quantiles=[0.1, 0.5, 0.9])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(11)

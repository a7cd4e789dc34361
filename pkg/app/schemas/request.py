from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Literal

from app.core.config import settings
from app.schemas.params import HabitParams, MarketParams, ModelParams, PreferenceParams, TimeGrid

PLOT_APPROXIMATIONS = ("bbl", "dual")
PLOT_NAMES = ("chat", "h", "c", "psi")
DEFAULT_PLOT_VARIABLES = [f"{a}.{n}" for a in PLOT_APPROXIMATIONS for n in PLOT_NAMES]


class ExperimentConfig(BaseModel):
    """Flat experiment configuration shared by the CLI, the config files and the HTTP service"""
    model_config = ConfigDict(frozen=True, populate_by_name=True, allow_inf_nan=False, extra='forbid')

    # Market
    r: float = Field(default=0.01, description="Interest rate per year")
    mu: float = Field(default=0.05, description="Stock drift per year")
    sigma: float = Field(default=0.2, gt=0.0, description="Stock volatility")

    # Preferences and habit
    gamma: float = Field(default=10.0, gt=1.0, description="Relative risk aversion")
    delta: float = Field(default=0.03, ge=0.0, description="Subjective discount rate")
    alpha: float = Field(default=0.1, ge=0.0, description="Habit depreciation rate")
    beta: float = Field(default=0.1, ge=0.0, description="Habit persistence weight")

    # Endowment and horizon
    x0: float = Field(default=20.0, gt=0.0, alias="X0", description="Initial endowment")
    horizon: float = Field(default=10.0, gt=0.0, alias="T", description="Horizon in years")

    # Simulation
    n_paths: int = Field(default=10000, ge=1, description="Outer Monte Carlo paths")
    n_steps: int = Field(default=40, ge=1, description="Equidistant time steps")
    seed: int = Field(default=20240607, ge=0, description="Root seed of every random stream")
    # execution detail, left out of dumps so reports do not depend on it
    threads: int = Field(default_factory=lambda: settings.default_threads, ge=1, exclude=True,
                         description="Worker threads for path-parallel work")

    # Method
    approximation: Literal["bbl", "dual", "both"] = "both"
    condexp_backend: Literal["analytic", "nested", "both"] = "analytic"
    inner_paths: int = Field(default=256, ge=1, description="Inner paths per nested-MC node")
    dual_eta_rule: Literal["budget", "minimize"] = "budget"
    crosscheck_nodes: int = Field(default=50, ge=1, description="Nodes sampled by the backend cross-check")

    # Reporting
    report_refinement: bool = False
    include_timing: bool = False
    plot_quantiles: List[float] = Field(default_factory=lambda: [0.05, 0.25, 0.5, 0.75, 0.95])
    plot_variables: List[str] = Field(default_factory=lambda: list(DEFAULT_PLOT_VARIABLES))

    @field_validator('plot_quantiles', 'plot_variables', mode='before')
    @classmethod
    def split_csv(cls, v):
        if isinstance(v, str):
            return [item.strip() for item in v.split(",") if item.strip()]
        return v

    @field_validator('plot_quantiles')
    @classmethod
    def validate_quantiles(cls, v: List[float]) -> List[float]:
        for q in v:
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"quantile {q} outside [0, 1]")
        return v

    @field_validator('plot_variables')
    @classmethod
    def validate_variables(cls, v: List[str]) -> List[str]:
        for name in v:
            approx, _, var = name.partition(".")
            if approx not in PLOT_APPROXIMATIONS or var not in PLOT_NAMES:
                raise ValueError(f"unknown plot variable {name!r}")
        return v

    @model_validator(mode='after')
    def check_habit(self) -> "ExperimentConfig":
        if self.alpha < self.beta:
            raise ValueError("alpha must be >= beta")
        return self

    @property
    def market(self) -> MarketParams:
        return MarketParams(r=self.r, mu=self.mu, sigma=self.sigma)

    @property
    def model(self) -> ModelParams:
        return ModelParams(
            preferences=PreferenceParams(gamma=self.gamma, delta=self.delta),
            habit=HabitParams(alpha=self.alpha, beta=self.beta),
            x0=self.x0,
            horizon=self.horizon,
        )

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(T=self.horizon, n_steps=self.n_steps)

    @property
    def approximations(self) -> List[str]:
        return list(PLOT_APPROXIMATIONS) if self.approximation == "both" else [self.approximation]

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Validated copy with some fields replaced (field names or aliases)"""
        data = self.model_dump()
        data["threads"] = self.threads
        for key, value in overrides.items():
            data[canonical_key(key)] = value
        return ExperimentConfig.model_validate(data)


_ALIASES = {"X0": "x0", "T": "horizon"}


def canonical_key(key: str) -> str:
    return _ALIASES.get(key, key)

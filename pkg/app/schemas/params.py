from pydantic import BaseModel, ConfigDict, Field, model_validator
import numpy as np


class MarketParams(BaseModel):
    """Constant-coefficient Black-Scholes market with one stock"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    r: float = Field(default=0.01, description="Interest rate per year")
    mu: float = Field(default=0.05, description="Stock drift per year")
    sigma: float = Field(default=0.2, gt=0.0, description="Stock volatility per sqrt-year")

    @property
    def lam(self) -> float:
        """Market price of risk (mu - r) / sigma"""
        return (self.mu - self.r) / self.sigma


class TimeGrid(BaseModel):
    """Uniform grid t_k = k*dt on [0, T]"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    T: float = Field(..., gt=0.0, description="Horizon in years")
    n_steps: int = Field(..., ge=1, description="Number of time steps")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(T=self.T, n_steps=self.n_steps * factor)


class PreferenceParams(BaseModel):
    """Power utility U(t, x) = exp(-delta t) x^(1-gamma) / (1-gamma)"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    gamma: float = Field(default=10.0, gt=1.0, description="Relative risk aversion")
    delta: float = Field(default=0.03, ge=0.0, description="Subjective discount rate per year")


class HabitParams(BaseModel):
    """Geometric habit d log h = (beta log c - alpha log h) dt"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    alpha: float = Field(default=0.1, ge=0.0, description="Depreciation rate per year")
    beta: float = Field(default=0.1, ge=0.0, description="Persistence weight per year")

    @model_validator(mode='after')
    def check_concavity(self) -> "HabitParams":
        if self.alpha < self.beta:
            raise ValueError("alpha must be >= beta")
        return self

    @property
    def kappa(self) -> float:
        """Decay rate alpha - beta of the habit driven by ratio consumption"""
        return self.alpha - self.beta


class ModelParams(BaseModel):
    """Preferences, habit, endowment and horizon of the consumption problem"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    preferences: PreferenceParams = Field(default_factory=PreferenceParams)
    habit: HabitParams = Field(default_factory=HabitParams)
    x0: float = Field(default=20.0, gt=0.0, description="Initial endowment")
    horizon: float = Field(default=10.0, gt=0.0, description="Horizon T in years")

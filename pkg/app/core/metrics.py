from opentelemetry import metrics

# Get meter
meter = metrics.get_meter(__name__)

# Counter metrics
paths_simulated_total = meter.create_counter(
    name="market.paths.simulated.total",
    description="Total simulated outer market paths",
    unit="1"
)

inner_paths_simulated_total = meter.create_counter(
    name="condexp.inner_paths.simulated.total",
    description="Total inner paths simulated by the nested oracle",
    unit="1"
)

experiments_total = meter.create_counter(
    name="experiments.total",
    description="Total experiment runs",
    unit="1"
)

infeasible_dual_total = meter.create_counter(
    name="duality.infeasible.total",
    description="Dual controls rejected for leaving the V2 domain",
    unit="1"
)

# Histogram metrics
calibration_iterations = meter.create_histogram(
    name="approx.calibration.iterations",
    description="Root-finder iterations per budget calibration",
    unit="1"
)

experiment_duration = meter.create_histogram(
    name="experiments.duration",
    description="Experiment wall-clock duration",
    unit="ms"
)

welfare_loss_distribution = meter.create_histogram(
    name="duality.welfare_loss",
    description="Reported welfare-loss bounds",
    unit="%"
)


# Helper functions
def record_paths_simulated(count: int, kind: str = "outer"):
    """Record simulated path counts"""
    if kind == "inner":
        inner_paths_simulated_total.add(count)
    else:
        paths_simulated_total.add(count)


def record_calibration(kind: str, iterations: int):
    """Record calibration effort"""
    calibration_iterations.record(iterations, {"approximation": kind})


def record_experiment(approximation: str, status: str, duration_ms: float):
    """Record experiment outcome metrics"""
    experiments_total.add(1, {"approximation": approximation, "status": status})
    experiment_duration.record(duration_ms, {"approximation": approximation})


def record_welfare_loss(kind: str, percent: float):
    """Record a reported welfare-loss bound"""
    # histograms reject negative amounts; tiny negative bounds are MC noise
    welfare_loss_distribution.record(max(percent, 0.0), {"approximation": kind})


def record_infeasible_dual(kind: str):
    """Record a rejected dual control"""
    infeasible_dual_total.add(1, {"approximation": kind})

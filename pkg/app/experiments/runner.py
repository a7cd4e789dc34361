from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union
import logging
import time

import numpy as np
import pandas as pd

from app.approx.calibration import ApproxKind, CalibratedApproximation, calibrate_eta
from app.condexp.analytic import forward_coefficients
from app.condexp.kernels import gauss_legendre
from app.condexp.nested import ContinuationFunctional, FunctionalKind, MarkovState, nested_mc
from app.core.config import settings
from app.core.errors import ConfigError, LabError
from app.core.metrics import record_experiment, record_welfare_loss
from app.core.tracing import traced_component
from app.duality.controls import DualControls, build_dual_controls
from app.duality.values import (
    dual_integrals, duality_gap, mean_and_se, paired_gap_se, primal_integrals,
    select_smallest_bound, welfare_loss,
)
from app.habit.level import ratio_and_level
from app.market.rng import path_generator
from app.market.spd import PathBatch, refine_paths, simulate_paths
from app.schemas.request import ExperimentConfig
from app.schemas.response import CandidateBound, CrossCheckNode, RunReport, WelfareReport

logger = logging.getLogger(__name__)

TABLE1_SWEEPS: List[Tuple[str, Tuple[float, ...]]] = [
    ("gamma", (6.0, 10.0, 14.0)),
    ("X0", (10.0, 20.0, 30.0)),
    ("alpha=beta", (0.01, 0.1, 0.2)),
    ("T", (1.0, 10.0, 20.0)),
]
TABLE1_COLUMNS = ["sweep_param", "sweep_value", "approx", "J", "V", "D", "C_percent",
                  "se_J", "se_V", "eta_star", "eta_prime", "seed", "se_C_percent", "budget_residual"]
PLOT_COLUMNS = ["t", "quantile", "variable", "value"]

# stream key for cross-check node sampling, disjoint from path keys
CROSSCHECK_STREAM = 2 ** 40


class Evaluation:
    """Calibrated approximations, their dual pairs and per-path integrals on one batch"""

    def __init__(self, config: ExperimentConfig, batch: PathBatch):
        self.config = config
        self.batch = batch
        self.calibrated: Dict[str, CalibratedApproximation] = {}
        self.controls: Dict[str, DualControls] = {}
        self.primal: Dict[str, np.ndarray] = {}
        self.dual: Dict[str, np.ndarray] = {}

    def run(self, approximations: Optional[List[str]] = None) -> "Evaluation":
        cfg = self.config
        model, market = cfg.model, cfg.market
        backend = "nested" if cfg.condexp_backend == "nested" else "analytic"
        for name in approximations or cfg.approximations:
            kind = ApproxKind(name)
            calibrated = calibrate_eta(kind, cfg.x0, self.batch, model, market)
            controls = build_dual_controls(
                calibrated, cfg.x0, model, market,
                backend=backend,
                eta_rule=cfg.dual_eta_rule,
                inner_paths=cfg.inner_paths,
                seed=cfg.seed,
                threads=cfg.threads,
            )
            self.calibrated[name] = calibrated
            self.controls[name] = controls
            self.primal[name] = primal_integrals(calibrated.batch, model)
            self.dual[name] = dual_integrals(controls, cfg.x0, calibrated.batch, model)
        return self

    def candidates(self) -> List[CandidateBound]:
        out = []
        for name, controls in self.controls.items():
            V, se_V = mean_and_se(self.dual[name])
            out.append(CandidateBound(approximation=name, V=V, se_V=se_V,
                                      eta_prime=controls.eta_prime, eta_residual=controls.eta_residual))
        return out

    def pinned_budgets(self, primal: str, bound: str) -> List[np.ndarray]:
        """Per-path budgets fixed at X0 by the calibrations behind J and V"""
        names = [primal] if primal == bound else [primal, bound]
        out = [self.calibrated[n].spend for n in names]
        controls = self.controls[bound]
        if controls.eta_rule == "budget" and controls.spend is not None:
            out.append(controls.spend)
        return out

    def reports(self) -> List[WelfareReport]:
        candidates = self.candidates()
        selected = select_smallest_bound(candidates)
        out = []
        for name, calibrated in self.calibrated.items():
            J, se_J = mean_and_se(self.primal[name])
            se_D = paired_gap_se(self.primal[name], self.dual[selected.approximation],
                                 self.pinned_budgets(name, selected.approximation))
            D = duality_gap(J, selected.V)
            C = welfare_loss(D, selected.eta_prime, self.config.x0)
            out.append(WelfareReport(
                approximation=name,
                J=J, V=selected.V, D=D, C=C, C_percent=100.0 * C,
                se_J=se_J, se_V=selected.se_V,
                se_D=se_D,
                se_C_percent=100.0 * se_D / (selected.eta_prime * self.config.x0),
                eta_star=calibrated.eta,
                eta_prime=selected.eta_prime,
                budget_residual=calibrated.residual,
                bound_source=selected.approximation,
            ))
        return out


def _annuity_at_node(calibrated: CalibratedApproximation, path: int, k: int,
                     log_h: np.ndarray, config: ExperimentConfig) -> float:
    batch, hp = calibrated.batch, config.model.habit
    law = calibrated.approximation.ratio_law()
    t = batch.times[k]
    s, w = gauss_legendre(t, config.horizon, settings.quadrature_nodes)
    coeffs = forward_coefficients(law, hp, config.market, t, s, settings.quadrature_nodes)
    moments = np.exp(coeffs.log_moment(batch.log_m[path, k], batch.a_int[path, k], log_h[path, k]))
    return float(np.sum(w * np.exp(-hp.kappa * (s - t)) * moments))


@traced_component("experiments")
def crosscheck(evaluation: Evaluation) -> List[CrossCheckNode]:
    """Analytic vs nested estimates of E[int_t^T e^{-(alpha-beta)(s-t)} M_s c'_s ds | F_t] at sampled nodes"""
    cfg, batch = evaluation.config, evaluation.batch
    hp = cfg.model.habit
    rng = path_generator(cfg.seed, CROSSCHECK_STREAM)
    paths = rng.integers(0, batch.n_paths, size=cfg.crosscheck_nodes)
    steps = rng.integers(0, cfg.n_steps, size=cfg.crosscheck_nodes)
    nodes: List[CrossCheckNode] = []
    for name, calibrated in evaluation.calibrated.items():
        law = calibrated.approximation.ratio_law()
        log_h, _ = ratio_and_level(law.log_ratio(batch.times, batch.log_m, batch.a_int), hp, batch.grid)
        functional = ContinuationFunctional(
            kind=FunctionalKind.CONSUMPTION_ANNUITY, horizon=cfg.horizon, kappa=hp.kappa,
            log_ratio=law.log_ratio, habit=hp, inner_dt=batch.grid.dt / settings.nested_substeps,
        )
        for i, k in zip(paths.tolist(), steps.tolist()):
            state = MarkovState(t=batch.times[k], m=float(np.exp(batch.log_m[i, k])),
                                a_int=batch.a_int[i, k], log_h=log_h[i, k])
            analytic = _annuity_at_node(calibrated, i, k, log_h, cfg)
            nested, se = nested_mc(state, functional, cfg.inner_paths, cfg.seed, cfg.market, i, k)
            nodes.append(CrossCheckNode(
                approximation=name, path=i, step=k, analytic=analytic, nested=nested, se=se,
                z=(analytic - nested) / se if se > 0.0 else 0.0,
            ))
    return nodes


@traced_component("experiments")
def run(config: ExperimentConfig) -> RunReport:
    start = time.perf_counter()
    label = config.approximation
    try:
        batch = simulate_paths(config.market, config.grid, config.n_paths, config.seed, config.threads)
        evaluation = Evaluation(config, batch).run()
        reports = evaluation.reports()

        refinement = None
        if config.report_refinement:
            fine = Evaluation(config.with_overrides(n_steps=2 * config.n_steps),
                              refine_paths(batch, config.market)).run()
            fine_reports = {r.approximation: r for r in fine.reports()}
            refinement = {r.approximation: fine_reports[r.approximation].C_percent - r.C_percent for r in reports}

        checks = crosscheck(evaluation) if config.condexp_backend == "both" else None
    except LabError:
        record_experiment(label, "error", (time.perf_counter() - start) * 1000)
        raise

    elapsed = time.perf_counter() - start
    record_experiment(label, "success", elapsed * 1000)
    for r in reports:
        record_welfare_loss(r.approximation, r.C_percent)
    logger.info("Experiment completed", extra={
        "approximation": label,
        "n_paths": config.n_paths,
        "seed": config.seed,
        "runtime_seconds": round(elapsed, 3),
        "welfare_loss_percent": {r.approximation: r.C_percent for r in reports},
    })
    return RunReport(
        config=config.model_dump(mode="json"),
        seed=config.seed,
        reports=reports,
        candidates=evaluation.candidates(),
        refinement=refinement,
        crosscheck=checks,
        runtime_seconds=elapsed if config.include_timing else None,
    )


def table1_cells(config: ExperimentConfig) -> List[Tuple[str, float, ExperimentConfig]]:
    cells = []
    for param, values in TABLE1_SWEEPS:
        for value in values:
            if param == "alpha=beta":
                overrides = {"alpha": value, "beta": value}
            else:
                overrides = {param: value}
            cells.append((param, value, config.with_overrides(
                approximation="both", report_refinement=False, include_timing=False, **overrides,
            )))
    return cells


def _table1_rows(param: str, value: float, cfg: ExperimentConfig) -> List[dict]:
    report = run(cfg)
    return [{
        "sweep_param": param,
        "sweep_value": value,
        "approx": r.approximation,
        "J": r.J, "V": r.V, "D": r.D,
        "C_percent": f"{r.C_percent:.3f}",
        "se_J": r.se_J, "se_V": r.se_V,
        "eta_star": r.eta_star, "eta_prime": r.eta_prime,
        "seed": cfg.seed,
        "se_C_percent": f"{r.se_C_percent:.3f}",
        "budget_residual": r.budget_residual,
    } for r in report.reports]


def csv_text(frame: pd.DataFrame) -> str:
    """RFC-4180 text with fixed float formatting"""
    return frame.to_csv(index=False, float_format="%.12g", lineterminator="\r\n")


def _write_csv(frame: pd.DataFrame, out: Optional[Union[str, Path]]) -> str:
    text = csv_text(frame)
    if out is not None:
        try:
            Path(out).write_text(text, encoding="utf-8", newline="")
        except OSError as e:
            raise ConfigError(f"cannot write {out}: {e}") from e
    return text


@traced_component("experiments")
def table1(config: ExperimentConfig, out: Optional[Union[str, Path]] = None, parallel: bool = False) -> pd.DataFrame:
    """Sweep gamma, X0, alpha=beta and T around the baseline; two rows (bbl, dual) per cell"""
    cells = table1_cells(config)
    if parallel:
        with ThreadPoolExecutor(max_workers=len(cells)) as pool:
            chunks = list(pool.map(lambda c: _table1_rows(*c), cells))
    else:
        chunks = [_table1_rows(*c) for c in cells]
    frame = pd.DataFrame([row for chunk in chunks for row in chunk], columns=TABLE1_COLUMNS)
    _write_csv(frame, out)
    logger.info("Table written", extra={"rows": len(frame), "out": str(out) if out else None})
    return frame


@traced_component("experiments")
def emit_plot_data(config: ExperimentConfig, out: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """Per-time quantiles of chat, h, c and psi for the requested `<approx>.<name>` variables"""
    rows: List[dict] = []
    if config.plot_variables:
        batch = simulate_paths(config.market, config.grid, config.n_paths, config.seed, config.threads)
        needed = sorted({v.split(".")[0] for v in config.plot_variables})
        evaluation = Evaluation(config, batch).run(needed)
        quantiles = np.asarray(config.plot_quantiles, dtype=float)
        for variable in config.plot_variables:
            name, field = variable.split(".")
            paths = evaluation.calibrated[name].batch
            series = {
                "chat": np.exp(paths.log_chat),
                "h": np.exp(paths.log_h),
                "c": np.exp(paths.log_chat + paths.log_h),
                "psi": evaluation.controls[name].psi,
            }[field]
            values = np.quantile(series, quantiles, axis=0) if quantiles.size else np.empty((0, batch.grid.n_steps + 1))
            for k, t in enumerate(batch.times):
                for j, q in enumerate(quantiles):
                    rows.append({"t": t, "quantile": q, "variable": variable, "value": values[j, k]})
    frame = pd.DataFrame(rows, columns=PLOT_COLUMNS)
    _write_csv(frame, out)
    return frame

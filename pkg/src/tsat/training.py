"""Losses, metrics, the training loop, gradient checks and the ablation runner."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autograd as ag
from .autograd import AdamState, Tape, Tensor, adam_step, decay_learning_rate
from .errors import ConfigError, DimensionError
from .graph import NodeMatrix, build_graph
from .model import (VARIANT_FLAGS, GraphBatch, TsatConfig, TsatParams, forward, parameter_init,
                    variant_config)

logger = logging.getLogger(__name__)

VARIANTS = tuple(VARIANT_FLAGS)  # report row order


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    initial_lr: float = 1e-4
    decay_gamma: float = 5e-3
    max_epochs: int = 2000
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be >= 1")
        if self.initial_lr < 0:
            raise ConfigError("initial_lr must be non-negative")


@dataclass
class EvalReport:
    variant: str
    rmse: float
    mae: float
    rmse_per_step: list = field(default_factory=list)
    mae_per_step: list = field(default_factory=list)
    epochs_run: int = 0
    best_val_rmse: float = math.nan
    runtime_seconds: float = 0.0
    seed: int = 0
    error: str = ""


def _check(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def mse_loss(pred, target):
    """Mean squared error; differentiable in ``pred``."""
    pred = ag.as_tensor(pred)
    if pred.shape != np.shape(target):
        raise DimensionError(f"prediction shape {pred.shape} != target shape {np.shape(target)}")
    return ag.mean(ag.square(ag.sub(pred, Tensor(target))))


def rmse(pred, target):
    pred, target = _check(pred, target)
    return float(np.sqrt(np.mean((target - pred) ** 2)))


def mae(pred, target):
    pred, target = _check(pred, target)
    return float(np.mean(np.abs(target - pred)))


def persistence_baseline(X, horizon):
    """Repeat each series' last observed value across the horizon."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] < 1:
        raise DimensionError("backcast must have at least one step")
    return np.repeat(X[..., -1:], horizon, axis=-1)


def predict_batches(params, config, batch: GraphBatch, chunk=512):
    out = [forward(batch.subset(slice(i, i + chunk)), params, config).forecasts.data
           for i in range(0, len(batch), chunk)]
    return np.concatenate(out, axis=0)


def report_from_predictions(pred, target, variant="TSAT", **meta) -> EvalReport:
    """Aggregate and per-forecast-step RMSE/MAE over all windows and nodes."""
    pred, target = _check(pred, target)
    err = (target - pred).reshape(-1, pred.shape[-1])
    return EvalReport(
        variant=variant,
        rmse=rmse(pred, target),
        mae=mae(pred, target),
        rmse_per_step=np.sqrt(np.mean(err ** 2, axis=0)).tolist(),
        mae_per_step=np.mean(np.abs(err), axis=0).tolist(),
        **meta,
    )


def evaluate(params, config, dataset, variant="TSAT", **meta) -> EvalReport:
    pred = predict_batches(params, config, dataset.batch)
    return report_from_predictions(pred, dataset.Y, variant, **meta)


def sub_seeds(seed, n=3):
    """Independent generators derived from one seed (shuffle, dropout, ...)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def train(model_config: TsatConfig, train_data, val_data, train_config: TrainConfig = TrainConfig(),
          params: TsatParams | None = None, variant="TSAT"):
    """Mini-batch Adam with per-epoch exponential lr decay and early stopping.

    Returns ``(best_params, report, curve)``; ``report`` holds validation
    metrics of the best epoch and ``curve`` one dict per epoch.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise ConfigError("training needs non-empty train and validation sets")
    started = time.perf_counter()
    shuffle_rng, dropout_rng = sub_seeds(train_config.seed, 2)
    params = parameter_init(model_config) if params is None else params.copy()
    names = list(params)
    states = {k: AdamState.zeros_like(params[k].data) for k in names}
    best_val, best_arrays, stale = math.inf, params.arrays(), 0
    curve = []
    n = len(train_data)
    for epoch in range(train_config.max_epochs):
        lr = decay_learning_rate(train_config.initial_lr, epoch, train_config.decay_gamma)
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            with Tape() as tape:
                out = forward(train_data.batch.subset(idx), params, model_config, training=True,
                              rng=dropout_rng)
                loss = mse_loss(out.forecasts, train_data.Y[idx])
            grads = tape.backward(loss, wrt=list(params.values()))
            for k in names:
                p = params[k]
                p.data, states[k] = adam_step(replace(states[k], learning_rate=lr), p.data, grads[p])
            total += float(loss.data) * len(idx)
        val_rmse = rmse(predict_batches(params, model_config, val_data.batch), val_data.Y)
        curve.append({"epoch": epoch, "train_loss": total / n, "val_rmse": val_rmse, "lr": lr})
        logger.debug("epoch %d loss %.6f val %.6f", epoch, total / n, val_rmse)
        if val_rmse < best_val:
            best_val, best_arrays, stale = val_rmse, params.arrays(), 0
        else:
            stale += 1
            if stale >= train_config.patience:
                break
    best = TsatParams.from_arrays(best_arrays)
    report = evaluate(best, model_config, val_data, variant, epochs_run=len(curve), best_val_rmse=best_val,
                      seed=train_config.seed)
    report.runtime_seconds = time.perf_counter() - started
    return best, report, curve


# --- gradient checking -------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict
    tolerance: float

    @property
    def failed(self):
        return [k for k, v in self.errors.items() if not v < self.tolerance]

    @property
    def passed(self):
        return not self.failed

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    def __str__(self):
        lines = [f"{k:<28s} {v:.3e} {'ok' if v < self.tolerance else 'FAIL'}" for k, v in self.errors.items()]
        return "\n".join(lines)


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``, maximized."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def check_gradients(loss_fn, params: TsatParams, analytic: dict, tolerance=1e-4, h=1e-5, groups=None):
    """Compare ``analytic[name]`` against central differences of ``loss_fn()``."""
    errors = {}
    for name in groups or list(params):
        numeric = ag.numerical_gradient(loss_fn, params[name].data, h)
        errors[name] = relative_error(analytic[name], numeric)
    return GradCheckReport(errors, tolerance)


def grad_check_problem(config: TsatConfig, seed=0, n_windows=2, c=0.5):
    """Random graphs, targets and parameters for gradient checking."""
    rng = np.random.default_rng(seed)
    graphs = [build_graph(NodeMatrix(rng.standard_normal((config.n_series, config.backcast)), None),
                          config.n_imfs, c) for _ in range(n_windows)]
    batch = GraphBatch.from_graphs(graphs)
    target = rng.standard_normal((n_windows, config.n_series, config.horizon))
    params = parameter_init(config, seed)
    # perturb so no parameter sits at a symmetric special point (zero biases, unit gains)
    for t in params.values():
        t.data += 0.1 * rng.standard_normal(t.shape)
    return batch, target, params


def analytic_gradients(config, batch, target, params):
    with Tape() as tape:
        loss = mse_loss(forward(batch, params, config).forecasts, target)
    grads = tape.backward(loss, wrt=list(params.values()))
    return {k: grads[t] for k, t in params.items()}


def grad_check(config: TsatConfig, tolerance=1e-4, seed=0, h=1e-5, groups=None) -> GradCheckReport:
    """Central-difference check of every parameter group on MSE loss (eval mode)."""
    batch, target, params = grad_check_problem(config, seed)
    analytic = analytic_gradients(config, batch, target, params)

    def loss_fn():
        return float(mse_loss(forward(batch, params, config).forecasts, target).data)

    return check_gradients(loss_fn, params, analytic, tolerance, h, groups)


# --- ablation ------------------------------------------------------------------

@dataclass
class AblationResult:
    reports: list
    dataset: str = "synthetic"

    def by_variant(self):
        return {r.variant: r for r in self.reports}

    def table(self):
        return format_table(self.reports, self.dataset)


def ablation_run(train_data, val_data, test_data, base_config: TsatConfig, train_config: TrainConfig,
                 variants=VARIANTS, dataset="synthetic") -> AblationResult:
    """Train and test each variant with identical seeds and splits.

    A variant that raises is reported with NaN metrics and its error message;
    the remaining variants still run.
    """
    reports = []
    for variant in variants:
        cfg = variant_config(base_config, variant)
        started = time.perf_counter()
        try:
            params, val_report, _ = train(cfg, train_data, val_data, train_config, variant=variant)
            rep = evaluate(params, cfg, test_data, variant, epochs_run=val_report.epochs_run,
                           best_val_rmse=val_report.best_val_rmse, seed=train_config.seed)
        except Exception as exc:  # partial report on single-variant failure
            logger.exception("variant %s failed", variant)
            rep = EvalReport(variant, math.nan, math.nan, seed=train_config.seed, error=str(exc))
        rep.runtime_seconds = time.perf_counter() - started
        reports.append(rep)
    return AblationResult(reports, dataset)


# --- report files ----------------------------------------------------------------

REPORT_COLUMNS = ("variant", "step", "rmse", "mae", "epochs_run", "best_val_rmse", "seed")


def write_reports_csv(reports, path):
    """Metric rows only (no wall-clock fields) so reruns are byte-identical."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow([r.variant, "all", repr(r.rmse), repr(r.mae), r.epochs_run, repr(r.best_val_rmse), r.seed])
            for h, (e2, e1) in enumerate(zip(r.rmse_per_step, r.mae_per_step), start=1):
                w.writerow([r.variant, h, repr(e2), repr(e1), r.epochs_run, repr(r.best_val_rmse), r.seed])


def read_reports_csv(path):
    reports = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rep = reports.setdefault(row["variant"], EvalReport(row["variant"], math.nan, math.nan,
                                                                epochs_run=int(row["epochs_run"]),
                                                                best_val_rmse=float(row["best_val_rmse"]),
                                                                seed=int(row["seed"])))
            if row["step"] == "all":
                rep.rmse, rep.mae = float(row["rmse"]), float(row["mae"])
            else:
                rep.rmse_per_step.append(float(row["rmse"]))
                rep.mae_per_step.append(float(row["mae"]))
    return list(reports.values())


def format_table(reports, dataset="synthetic"):
    """Aligned text table: one row per variant, average RMSE column."""
    width = max(len("Method"), *(len(r.variant) for r in reports))
    col = max(len(dataset), 10)
    lines = [f"{'Method':<{width}}  {dataset:>{col}}"]
    for r in reports:
        lines.append(f"{r.variant:<{width}}  {r.rmse:>{col}.4f}")
    return "\n".join(lines) + "\n"


def write_curve_csv(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_rmse", "lr"])
        for row in curve:
            w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_rmse"]), repr(row["lr"])])


def report_dict(report: EvalReport):
    return asdict(report)

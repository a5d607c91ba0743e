"""Metrics and the experiment harnesses: residual-vs-regular comparison,
grid search, and the shortcut-count sensitivity study.

Conventions printed into every report: R^2 = 1 - SS_res/SS_tot, RMSE in
target units, nRMSE = RMSE / (max(y) - min(y)) over the observed targets,
AUC by trapezoid over the ROC curve (ties contribute diagonal segments).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, SplitIndices, split
from .network import NetworkSpec, build_network
from .training import (
    FittedModel,
    LossSpec,
    Regularizer,
    TrainConfig,
    TrainingDiverged,
    train_model,
)

NRMSE_DEFINITION = "rmse / (max(observed) - min(observed))"


def r2(y: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1) if np.ndim(y) == 1 else np.asarray(y)
    y_pred = (np.asarray(y_pred, dtype=np.float64).reshape(-1, 1)
              if np.ndim(y_pred) == 1 else np.asarray(y_pred))
    if y.shape != y_pred.shape:
        raise ValueError(f"r2 shape mismatch: {y.shape} vs {y_pred.shape}")
    if y.shape[0] < 2:
        raise ValueError("r2 needs at least 2 observations")
    ss_tot = float(((y - y.mean(axis=0)) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("r2 undefined for constant observations")
    ss_res = float(((y - y_pred) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def rmse_and_nrmse(y: np.ndarray, y_pred: np.ndarray) -> tuple[float, float | None]:
    """RMSE in target units and range-normalized RMSE (None if range is zero)."""
    y = np.asarray(y, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y.shape != y_pred.shape:
        raise ValueError(f"rmse shape mismatch: {y.shape} vs {y_pred.shape}")
    rmse = float(np.sqrt(((y - y_pred) ** 2).mean()))
    spread = float(y.max() - y.min())
    return rmse, (rmse / spread if spread > 0.0 else None)


def roc_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Area under the ROC curve by trapezoid; tied scores share one sweep point."""
    labels = np.asarray(labels).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0 or neg == 0:
        raise ValueError("roc_auc needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    l = labels[order]
    area = 0.0
    tpr_prev = fpr_prev = 0.0
    tp = fp = 0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            tp += int(l[j] == 1)
            fp += int(l[j] == 0)
            j += 1
        tpr, fpr = tp / pos, fp / neg
        area += (fpr - fpr_prev) * (tpr + tpr_prev) / 2.0
        tpr_prev, fpr_prev = tpr, fpr
        i = j
    return area


def classification_metrics(y: np.ndarray, probabilities: np.ndarray
                           ) -> tuple[float, float, float | None]:
    """(accuracy, mean cross entropy, AUC); AUC is None when y has one class.

    Binary AUC scores the positive class; with more classes it is the macro
    average of one-vs-rest AUCs over the classes present in y.
    """
    classes = np.asarray(y, dtype=np.int64).ravel()
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != classes.shape[0]:
        raise ValueError(f"probabilities must be (n, C) matching y, got {p.shape}")
    sums = p.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise ValueError("probability rows must sum to 1 within 1e-6")
    n = classes.shape[0]
    accuracy = float((p.argmax(axis=1) == classes).mean())
    cross_entropy = float(-np.log(np.maximum(p[np.arange(n), classes], 1e-15)).mean())
    present = np.unique(classes)
    if present.size < 2:
        return accuracy, cross_entropy, None
    if p.shape[1] == 2:
        auc = roc_auc((classes == 1).astype(int), p[:, 1])
    else:
        auc = float(np.mean([roc_auc((classes == c).astype(int), p[:, c])
                             for c in present]))
    return accuracy, cross_entropy, auc


@dataclass
class Metrics:
    r2: float | None = None
    rmse: float | None = None
    nrmse: float | None = None
    accuracy: float | None = None
    cross_entropy: float | None = None
    auc: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    def headline(self, task: str) -> float:
        """The ranking metric: R^2 for regression, accuracy for classification."""
        return self.r2 if task == "regression" else self.accuracy


def evaluate_model(model: FittedModel, dataset: Dataset, indices: np.ndarray) -> Metrics:
    """Score a fitted model on the given dataset rows, in original units."""
    predictions = model.predict(dataset.features[indices])
    if dataset.task == "classification":
        acc, ce, auc = classification_metrics(dataset.targets[indices], predictions)
        return Metrics(accuracy=acc, cross_entropy=ce, auc=auc)
    observed = dataset.targets[indices]
    rmse, nrmse = rmse_and_nrmse(observed, predictions)
    return Metrics(r2=r2(observed, predictions), rmse=rmse, nrmse=nrmse)


# ---------------------------------------------------------------------------
# Comparison harness
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    seed: int
    arm: str                    # "residual" | "regular" | "shortcuts=N" | grid label
    converged: bool
    parameter_count: int
    validation: Metrics | None = None
    test: Metrics | None = None
    diagnostic: str | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "arm": self.arm,
            "converged": self.converged,
            "parameter_count": self.parameter_count,
            "validation": self.validation.to_dict() if self.validation else None,
            "test": self.test.to_dict() if self.test else None,
            "diagnostic": self.diagnostic,
        }


def _train_and_score(dataset: Dataset, split_idx: SplitIndices, spec: NetworkSpec,
                     cfg: TrainConfig, regularizer: Regularizer | None,
                     loss: LossSpec | None, seed: int, arm: str) -> RunResult:
    parameter_count = build_network(spec, rng=0).count_parameters()
    run_cfg = replace(cfg, seed=seed)
    try:
        model = train_model(dataset, split_idx, spec, run_cfg,
                            regularizer=regularizer, loss=loss)
    except TrainingDiverged as exc:
        return RunResult(seed=seed, arm=arm, converged=False,
                         parameter_count=parameter_count, diagnostic=str(exc))
    return RunResult(seed=seed, arm=arm, converged=True,
                     parameter_count=parameter_count,
                     validation=evaluate_model(model, dataset, split_idx.validation),
                     test=evaluate_model(model, dataset, split_idx.test))


def _mean_and_range(values: list[float]) -> dict:
    if not values:
        return {"mean": None, "min": None, "max": None, "n": 0}
    return {"mean": float(np.mean(values)), "min": float(min(values)),
            "max": float(max(values)), "n": len(values)}


def _summarize(runs: list[RunResult], task: str) -> dict:
    fields = (["r2", "rmse", "nrmse"] if task == "regression"
              else ["accuracy", "cross_entropy", "auc"])
    out: dict = {"n_runs": len(runs),
                 "n_converged": sum(r.converged for r in runs),
                 "n_non_convergent": sum(not r.converged for r in runs)}
    for part in ("validation", "test"):
        for f in fields:
            values = [getattr(getattr(r, part), f) for r in runs
                      if r.converged and getattr(getattr(r, part), f) is not None]
            out[f"{part}_{f}"] = _mean_and_range(values)
    return out


@dataclass
class ComparisonReport:
    """Paired residual/regular results over shared seeds and splits."""

    task: str
    seeds: list[int]
    runs: list[RunResult]
    summary: dict = field(default_factory=dict)

    def arm_runs(self, arm: str) -> list[RunResult]:
        return [r for r in self.runs if r.arm == arm]

    def mean_test_headline(self, arm: str) -> float | None:
        key = "test_r2" if self.task == "regression" else "test_accuracy"
        return self.summary[arm][key]["mean"]

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "seeds": self.seeds,
            "definitions": {"nrmse": NRMSE_DEFINITION},
            "runs": [r.to_dict() for r in self.runs],
            "summary": self.summary,
        }

    def write_runs_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "arm", "converged", "parameter_count",
                             "split", "metric", "value"])
            for run in self.runs:
                for part in ("validation", "test"):
                    metrics = getattr(run, part)
                    if metrics is None:
                        continue
                    for name, value in metrics.to_dict().items():
                        writer.writerow([run.seed, run.arm, run.converged,
                                         run.parameter_count, part, name, value])


def compare(dataset: Dataset, spec: NetworkSpec, cfg: TrainConfig, n_seeds: int = 5,
            regularizer: Regularizer | None = None, loss: LossSpec | None = None,
            stratify: bool = False) -> ComparisonReport:
    """Train residual and regular arms on identical splits for each seed.

    A non-finite training loss marks that arm non-convergent for the seed;
    summaries average over the converged runs only and count the failures.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    seeds = [cfg.seed + i for i in range(n_seeds)]
    runs = []
    for seed in seeds:
        split_idx = split(dataset, seed=seed, stratify=stratify)
        for arm, residual in (("residual", "full"), ("regular", "off")):
            arm_spec = replace(spec, residual=residual)
            runs.append(_train_and_score(dataset, split_idx, arm_spec, cfg,
                                         regularizer, loss, seed, arm))
    report = ComparisonReport(task=dataset.task, seeds=seeds, runs=runs)
    report.summary = {
        "residual": _summarize(report.arm_runs("residual"), dataset.task),
        "regular": _summarize(report.arm_runs("regular"), dataset.task),
    }
    return report


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------

@dataclass
class GridCell:
    label: str
    spec: NetworkSpec
    batch_size: int
    mean_val_metric: float | None
    parameter_count: int
    runs: list[RunResult]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "nnode": list(self.spec.nnode),
            "acts": list(self.spec.act_list()),
            "output_option": self.spec.output_option,
            "residual": self.spec.residual,
            "batch_size": self.batch_size,
            "mean_val_metric": self.mean_val_metric,
            "parameter_count": self.parameter_count,
            "n_non_convergent": sum(not r.converged for r in self.runs),
        }


@dataclass
class GridResult:
    task: str
    cells: list[GridCell]        # ranked best first
    axes: dict

    def best(self) -> GridCell:
        return self.cells[0]

    def to_dict(self) -> dict:
        return {"task": self.task, "axes": self.axes,
                "definitions": {"nrmse": NRMSE_DEFINITION},
                "ranked": [c.to_dict() for c in self.cells]}

    def write_cells_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rank", "label", "batch_size", "nnode", "acts",
                             "output_option", "mean_val_metric", "parameter_count"])
            for rank, c in enumerate(self.cells):
                writer.writerow([rank, c.label, c.batch_size,
                                 " ".join(str(w) for w in c.spec.nnode),
                                 " ".join(c.spec.act_list()), c.spec.output_option,
                                 c.mean_val_metric, c.parameter_count])

    def batch_size_curve(self) -> list[tuple[int, float | None]]:
        """(batch size, mean validation metric) sorted by batch size."""
        return sorted((c.batch_size, c.mean_val_metric) for c in self.cells)

    def write_curve_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["batch_size", "mean_val_metric"])
            for batch, metric in self.batch_size_curve():
                writer.writerow([batch, metric])


def grid_search(dataset: Dataset, spec: NetworkSpec, cfg: TrainConfig,
                grid: dict, n_seeds: int = 3,
                regularizer: Regularizer | None = None,
                loss: LossSpec | None = None,
                stratify: bool = False) -> GridResult:
    """Full factorial search ranked by mean validation R^2 (or accuracy).

    Recognized axes: batch_sizes, nnodes, activations, output_options;
    missing axes fall back to the template value.  Ties rank the smaller
    parameter count first, then the smaller batch size.  Splits and seeds
    are shared across cells.
    """
    axes = {
        "batch_sizes": [int(b) for b in grid.get("batch_sizes", [cfg.batch_size])],
        "nnodes": [tuple(int(w) for w in nn) for nn in grid.get("nnodes", [spec.nnode])],
        "activations": list(grid.get("activations", [spec.acts])),
        "output_options": [int(o) for o in grid.get("output_options", [spec.output_option])],
    }
    if any(len(v) == 0 for v in axes.values()):
        raise ValueError("grid axes must be non-empty")
    seeds = [cfg.seed + i for i in range(n_seeds)]
    splits = {seed: split(dataset, seed=seed, stratify=stratify) for seed in seeds}

    cells = []
    for nnode in axes["nnodes"]:
        for act in axes["activations"]:
            for option in axes["output_options"]:
                for batch in axes["batch_sizes"]:
                    cell_spec = replace(spec, nnode=nnode, acts=act, output_option=option)
                    label = (f"nnode={list(nnode)} act={act} out{option} batch={batch}")
                    cell_cfg = replace(cfg, batch_size=batch)
                    runs = [_train_and_score(dataset, splits[seed], cell_spec, cell_cfg,
                                             regularizer, loss, seed, label)
                            for seed in seeds]
                    scores = [r.validation.headline(dataset.task)
                              for r in runs if r.converged]
                    cells.append(GridCell(
                        label=label, spec=cell_spec, batch_size=batch,
                        mean_val_metric=float(np.mean(scores)) if scores else None,
                        parameter_count=runs[0].parameter_count, runs=runs))

    cells.sort(key=lambda c: (-(c.mean_val_metric if c.mean_val_metric is not None
                                else -np.inf),
                              c.parameter_count, c.batch_size))
    return GridResult(task=dataset.task, cells=cells, axes=axes)


# ---------------------------------------------------------------------------
# Residual-count sensitivity
# ---------------------------------------------------------------------------

@dataclass
class SensitivityRow:
    n_shortcuts: int
    mean_test_r2: float | None
    mean_test_rmse: float | None
    runs: list[RunResult]

    def to_dict(self) -> dict:
        return {"n_shortcuts": self.n_shortcuts,
                "mean_test_r2": self.mean_test_r2,
                "mean_test_rmse": self.mean_test_rmse,
                "n_non_convergent": sum(not r.converged for r in self.runs)}


@dataclass
class SensitivityResult:
    rows: list[SensitivityRow]

    def to_dict(self) -> dict:
        return {"definitions": {"nrmse": NRMSE_DEFINITION},
                "rows": [r.to_dict() for r in self.rows]}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n_shortcuts", "mean_test_r2", "mean_test_rmse"])
            for row in self.rows:
                writer.writerow([row.n_shortcuts, row.mean_test_r2, row.mean_test_rmse])


def residual_sensitivity(dataset: Dataset, spec: NetworkSpec, cfg: TrainConfig,
                         n_seeds: int = 5, regularizer: Regularizer | None = None,
                         loss: LossSpec | None = None,
                         stratify: bool = False) -> SensitivityResult:
    """Train variants keeping 0..all outermost shortcuts on shared splits."""
    total = spec.n_shortcut_pairs
    if total < 2:
        raise ValueError("sensitivity study needs at least 2 shortcut pairs")
    seeds = [cfg.seed + i for i in range(n_seeds)]
    splits = {seed: split(dataset, seed=seed, stratify=stratify) for seed in seeds}
    rows = []
    for count in range(total + 1):
        variant = replace(spec, residual=count)
        runs = [_train_and_score(dataset, splits[seed], variant, cfg,
                                 regularizer, loss, seed, f"shortcuts={count}")
                for seed in seeds]
        r2s = [r.test.r2 for r in runs if r.converged and r.test.r2 is not None]
        rmses = [r.test.rmse for r in runs if r.converged and r.test.rmse is not None]
        rows.append(SensitivityRow(
            n_shortcuts=count,
            mean_test_r2=float(np.mean(r2s)) if r2s else None,
            mean_test_rmse=float(np.mean(rmses)) if rmses else None,
            runs=runs))
    return SensitivityResult(rows=rows)

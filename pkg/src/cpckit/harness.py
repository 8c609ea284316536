"""Evaluation harness: confusion matrices, reports, cross-validation,
threshold sweeps, and baseline-vs-routed comparisons.

Report JSON is deterministic (sorted keys, no timestamps) so identical
configurations and seeds reproduce identical bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import classifiers as clf_mod
from .classifiers import ClassifierSpec
from .cpc import (
    ROUTE_EASY,
    CpcConfig,
    compute_ease,
    cpc_predict_many,
    fit_cpc,
    partition,
    train_base_ensemble,
    train_cpc,
)
from .dataset import LabeledDataset, kfold, take
from .errors import ConfigError, LabelOutOfRange, LengthMismatch
from .mlp import TrainConfig, build_mlp, extract_features, parse_arch, train
from .preprocess import apply_whitening, fit_zca, normalize_samples


@dataclass
class ConfusionMatrix:
    """counts[i, j] = samples of true class i predicted as class j."""

    counts: np.ndarray
    class_names: list[str] | None = None

    @property
    def class_count(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def per_class_accuracy(self) -> list[float | None]:
        """Diagonal over row sums; None where a class has no true samples."""
        out = []
        for i in range(self.class_count):
            row = self.counts[i].sum()
            out.append(float(self.counts[i, i] / row) if row else None)
        return out

    def row_normalized(self) -> np.ndarray:
        """Rows scaled to sum to 1; all-zero rows stay zero."""
        sums = self.counts.sum(axis=1, keepdims=True)
        return np.divide(
            self.counts, sums, out=np.zeros(self.counts.shape), where=sums > 0
        )


def confusion(preds, truth, class_count: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    if len(preds) != len(truth):
        raise LengthMismatch(f"{len(preds)} predictions for {len(truth)} labels")
    if len(preds) == 0:
        raise LengthMismatch("nothing to evaluate")
    both = np.concatenate([preds, truth])
    if both.min() < 0 or both.max() >= class_count:
        raise LabelOutOfRange(f"labels outside [0, {class_count})")
    counts = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(counts, (truth, preds), 1)
    return ConfusionMatrix(counts=counts)


@dataclass
class EvalReport:
    overall_accuracy: float
    per_class_accuracy: list[float | None]
    confusion: ConfusionMatrix
    route_stats: dict | None
    config_echo: dict
    seed: int


def evaluate(
    preds,
    truth,
    class_count: int,
    routes=None,
    config: dict | None = None,
    seed: int = 0,
) -> EvalReport:
    """Score predictions against ground truth.

    routes, when given, is a per-sample "+"/"-" sequence and produces
    per-route counts and accuracies (None when a route saw no samples).
    """
    cm = confusion(preds, truth, class_count)
    route_stats = None
    if routes is not None:
        preds_arr = np.asarray(preds, dtype=np.int64)
        truth_arr = np.asarray(truth, dtype=np.int64)
        routes = list(routes)
        if len(routes) != len(preds_arr):
            raise LengthMismatch(f"{len(routes)} routes for {len(preds_arr)} samples")
        plus = np.array([r == ROUTE_EASY for r in routes], dtype=bool)
        hit = preds_arr == truth_arr
        n_plus, n_minus = int(plus.sum()), int((~plus).sum())
        route_stats = {
            "+": n_plus,
            "-": n_minus,
            "acc+": float(hit[plus].mean()) if n_plus else None,
            "acc-": float(hit[~plus].mean()) if n_minus else None,
        }
    return EvalReport(
        overall_accuracy=cm.accuracy(),
        per_class_accuracy=cm.per_class_accuracy(),
        confusion=cm,
        route_stats=route_stats,
        config_echo=dict(config or {}),
        seed=seed,
    )


def report_to_json(report: EvalReport) -> dict:
    return {
        "accuracy": report.overall_accuracy,
        "per_class": report.per_class_accuracy,
        "confusion": report.confusion.counts.tolist(),
        "routes": report.route_stats,
        "config": report.config_echo,
        "seed": report.seed,
    }


def write_report(report_dict: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report_dict, fh, sort_keys=True, indent=2)
        fh.write("\n")


# pipeline --------------------------------------------------------------

@dataclass(frozen=True)
class PreprocessConfig:
    normalize: bool = False
    eps_norm: float = 1e-8
    zca: bool = False
    epsilon: float = 1e-6


@dataclass(frozen=True)
class ExtractorConfig:
    arch: str
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to train and score one model end to end."""

    mode: str  # "baseline" | "cpc"
    spec: ClassifierSpec
    cpc: CpcConfig | None = None
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    extractor: ExtractorConfig | None = None

    def __post_init__(self):
        if self.mode not in ("baseline", "cpc"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "cpc" and self.cpc is None:
            raise ConfigError("cpc mode needs a CpcConfig")


def run_pipeline(
    train_ds: LabeledDataset, test_ds: LabeledDataset, cfg: PipelineConfig
):
    """Fit on train_ds, predict test_ds. Returns (preds, routes-or-None).

    Preprocessing statistics and the extractor are fit on training data
    only and applied unchanged to the test side.
    """
    if cfg.preprocess.normalize:
        train_ds = normalize_samples(train_ds, cfg.preprocess.eps_norm)
        test_ds = normalize_samples(test_ds, cfg.preprocess.eps_norm)
    if cfg.preprocess.zca:
        t = fit_zca(train_ds, cfg.preprocess.epsilon)
        train_ds = apply_whitening(t, train_ds)
        test_ds = apply_whitening(t, test_ds)
    if cfg.extractor is not None:
        input_dim, blocks, class_count = parse_arch(cfg.extractor.arch)
        if input_dim != train_ds.d:
            raise ConfigError(
                f"arch expects in:{input_dim} but data has d={train_ds.d}"
            )
        if class_count != train_ds.class_count:
            raise ConfigError(
                f"arch expects head:{class_count} but data has "
                f"{train_ds.class_count} classes"
            )
        model = build_mlp(
            input_dim, blocks, class_count, seed=cfg.extractor.train.seed
        )
        model, _ = train(model, train_ds, cfg.extractor.train)
        train_ds = extract_features(model, train_ds)
        test_ds = extract_features(model, test_ds)
    if cfg.mode == "baseline":
        clf = clf_mod.fit(cfg.spec, train_ds)
        return clf.predict_many(test_ds.features), None
    model = train_cpc(train_ds, cfg.cpc)
    routed = cpc_predict_many(model, test_ds.features)
    preds = np.array([r.label for r in routed], dtype=np.int64)
    routes = [r.route for r in routed]
    return preds, routes


# cross-validation --------------------------------------------------------

@dataclass
class CvResult:
    fold_reports: list[EvalReport]
    mean_accuracy: float
    std_accuracy: float


def cross_validate(
    ds: LabeledDataset, cfg: PipelineConfig, folds: int = 5, seed: int = 0
) -> CvResult:
    """K-fold protocol: each fold is scored once by a pipeline trained on
    the others. Mean is the arithmetic mean of fold accuracies; std is the
    population deviation over folds."""
    fa = kfold(ds, folds, seed=seed)
    reports = []
    for f in range(folds):
        train_part = take(ds, fa.complement_of(f))
        test_part = take(ds, fa.indices_of(f))
        preds, routes = run_pipeline(train_part, test_part, cfg)
        reports.append(
            evaluate(
                preds,
                test_part.labels,
                ds.class_count,
                routes=routes,
                config={"fold": f},
                seed=seed,
            )
        )
    accs = np.array([r.overall_accuracy for r in reports])
    return CvResult(
        fold_reports=reports,
        mean_accuracy=float(accs.mean()),
        std_accuracy=float(accs.std()),
    )


# theta sweep ---------------------------------------------------------------

@dataclass
class SweepResult:
    thetas: list[float]
    accuracies: list[float]
    baseline_accuracy: float
    best_theta: float


def theta_sweep(
    train_ds: LabeledDataset,
    val_ds: LabeledDataset,
    grid,
    cfg: CpcConfig,
) -> SweepResult:
    """Validation accuracy across thresholds.

    The base ensemble and ease scores are computed once and shared by every
    grid point; only the partition, experts, and routing change. Ties for
    the best threshold break toward the smaller value.
    """
    grid = [float(t) for t in grid]
    if not grid:
        raise ConfigError("empty theta grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("theta grid must be strictly ascending")
    ens = train_base_ensemble(
        train_ds,
        cfg.k_folds,
        cfg.repetitions,
        cfg.base_spec,
        seed=cfg.seed,
        fold_training=cfg.fold_training,
    )
    ease = compute_ease(ens, train_ds, mode=cfg.ease_mode)
    baseline = clf_mod.fit(cfg.expert_spec, train_ds)
    baseline_acc = float(
        np.mean(baseline.predict_many(val_ds.features) == val_ds.labels)
    )
    accuracies = []
    for theta in grid:
        part = partition(train_ds, ease, theta)
        model = fit_cpc(
            part, cfg.expert_spec, disc_k=cfg.disc_k, disc_spec=cfg.disc_spec,
            seed=cfg.seed,
        )
        routed = cpc_predict_many(model, val_ds.features)
        preds = np.array([r.label for r in routed], dtype=np.int64)
        accuracies.append(float(np.mean(preds == val_ds.labels)))
    best = grid[int(np.argmax(accuracies))]
    return SweepResult(
        thetas=grid,
        accuracies=accuracies,
        baseline_accuracy=baseline_acc,
        best_theta=best,
    )


def write_sweep_curve(result: SweepResult, path) -> None:
    """Two-column CSV (theta, accuracy), ready for plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "accuracy"])
        for t, a in zip(result.thetas, result.accuracies):
            writer.writerow([repr(t), repr(a)])


# side-by-side comparison ------------------------------------------------------

@dataclass
class ComparisonRow:
    kind: str
    baseline_accuracy: float
    cpc_accuracy: float

    @property
    def delta(self) -> float:
        return self.cpc_accuracy - self.baseline_accuracy


def compare(
    train_ds: LabeledDataset,
    test_ds: LabeledDataset,
    specs: list[ClassifierSpec],
    cfg: CpcConfig,
) -> list[ComparisonRow]:
    """For each spec: plain accuracy vs routed accuracy with that spec as
    both the base and expert learner."""
    from dataclasses import replace

    rows = []
    for spec in specs:
        baseline = clf_mod.fit(spec, train_ds)
        base_acc = float(
            np.mean(baseline.predict_many(test_ds.features) == test_ds.labels)
        )
        cpc_cfg = replace(cfg, base_spec=spec, expert_spec=spec)
        model = train_cpc(train_ds, cpc_cfg)
        routed = cpc_predict_many(model, test_ds.features)
        preds = np.array([r.label for r in routed], dtype=np.int64)
        cpc_acc = float(np.mean(preds == test_ds.labels))
        rows.append(
            ComparisonRow(
                kind=spec.kind, baseline_accuracy=base_acc, cpc_accuracy=cpc_acc
            )
        )
    return rows

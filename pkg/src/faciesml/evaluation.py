"""Scoring and experiment protocols: F1, confusion matrices, blind-well runs,
leave-one-well-out cross-validation and paired seed sweeps."""

from __future__ import annotations

import hashlib
import json
import math
import statistics
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from faciesml import gbt
from faciesml.data_model import FACIES, FACIES_CODES, Dataset, validation_indices
from faciesml.errors import DataError
from faciesml.features import AugmentationConfig, Standardization, augment

AVERAGES = ("weighted", "micro", "macro")


# --------------------------------------------------------------------------
# Metrics

@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray
    class_order: tuple[int, ...] = FACIES_CODES

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_rows(self, values: np.ndarray | None = None) -> list[list]:
        values = self.counts if values is None else values
        header = ["true\\pred"] + [FACIES[c].short_name if c in FACIES else str(c) for c in self.class_order]
        rows = [header]
        for c, row in zip(self.class_order, values):
            name = FACIES[c].short_name if c in FACIES else str(c)
            rows.append([name] + [v.item() if hasattr(v, "item") else v for v in row])
        return rows


@dataclass(frozen=True)
class NormalizedConfusion:
    values: np.ndarray
    class_order: tuple[int, ...]
    empty_rows: tuple[int, ...] = ()


def _as_labels(a, name: str) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 1:
        raise DataError(f"{name} must be one-dimensional")
    return arr.astype(np.int64)


def confusion_matrix(true_labels, predicted_labels, class_order: Sequence[int] = FACIES_CODES) -> ConfusionMatrix:
    t = _as_labels(true_labels, "true_labels")
    p = _as_labels(predicted_labels, "predicted_labels")
    if t.shape != p.shape:
        raise DataError(f"length mismatch: {t.size} true labels vs {p.size} predictions")
    if t.size == 0:
        raise DataError("cannot score zero samples")
    class_order = tuple(int(c) for c in class_order)
    index = {c: i for i, c in enumerate(class_order)}
    bad = sorted(set(t.tolist()) - set(index)) or sorted(set(p.tolist()) - set(index))
    if bad:
        raise DataError(f"label {bad[0]} is not in the class order {class_order}")
    ti = np.array([index[v] for v in t.tolist()])
    pi = np.array([index[v] for v in p.tolist()])
    k = len(class_order)
    counts = np.bincount(ti * k + pi, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts, class_order)


def normalize_confusion(cm: ConfusionMatrix) -> NormalizedConfusion:
    """Divide each row by its total; all-zero rows stay zero and are listed in ``empty_rows``."""
    totals = cm.counts.sum(axis=1)
    values = np.zeros(cm.counts.shape, dtype=np.float64)
    nz = totals > 0
    values[nz] = cm.counts[nz] / totals[nz, None]
    empty = tuple(c for c, z in zip(cm.class_order, nz) if not z)
    return NormalizedConfusion(values, cm.class_order, empty)


@dataclass(frozen=True)
class F1Scores:
    """Per-class and averaged F1.

    ``absent`` lists classes missing from both truth and predictions (F1 set
    to 0). Macro averaging skips every class absent from the truth.
    """

    per_class: dict[int, float]
    micro: float
    macro: float
    weighted: float
    support: dict[int, int]
    absent: tuple[int, ...] = ()
    absent_in_truth: tuple[int, ...] = ()

    def average(self, name: str) -> float:
        if name not in AVERAGES:
            raise ValueError(f"unknown F1 average {name!r}; choose one of {AVERAGES}")
        return getattr(self, name)


def f1_from_confusion(cm: ConfusionMatrix) -> F1Scores:
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    pred_tot = counts.sum(axis=0)
    true_tot = counts.sum(axis=1)
    per_class = {}
    for i, c in enumerate(cm.class_order):
        denom = pred_tot[i] + true_tot[i]
        # 2PR/(P+R) == 2TP/(predicted + true)
        per_class[c] = float(2.0 * tp[i] / denom) if denom > 0 else 0.0
    support = {c: int(true_tot[i]) for i, c in enumerate(cm.class_order)}
    absent = tuple(c for i, c in enumerate(cm.class_order) if pred_tot[i] + true_tot[i] == 0)
    absent_truth = tuple(c for c in cm.class_order if support[c] == 0)
    present = [c for c in cm.class_order if support[c] > 0]
    total = counts.sum()
    micro = float(tp.sum() / total)
    macro = float(np.mean([per_class[c] for c in present]))
    weighted = float(sum(per_class[c] * support[c] for c in present) / total)
    return F1Scores(per_class, micro, macro, weighted, support, absent, absent_truth)


def f1_scores(true_labels, predicted_labels, class_order: Sequence[int] = FACIES_CODES) -> F1Scores:
    return f1_from_confusion(confusion_matrix(true_labels, predicted_labels, class_order))


def relative_improvement(base: float, new: float) -> float:
    """``(new - base) / base``; NaN when ``base`` is 0."""
    return (new - base) / base if base != 0 else math.nan


# --------------------------------------------------------------------------
# Reports

def config_digest(config) -> str:
    payload = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class EvaluationReport:
    f1: F1Scores
    confusion: ConfusionMatrix
    n_samples: int
    run_metadata: dict
    predictions: np.ndarray = field(repr=False, default=None)
    true_labels: np.ndarray = field(repr=False, default=None)
    wells: np.ndarray = field(repr=False, default=None)
    depths: np.ndarray = field(repr=False, default=None)
    model: "gbt.GBTModel | None" = field(repr=False, default=None)
    validation_f1: F1Scores | None = None

    @property
    def f1_per_class(self) -> dict[int, float]:
        return self.f1.per_class

    @property
    def f1_micro(self) -> float:
        return self.f1.micro

    @property
    def f1_macro(self) -> float:
        return self.f1.macro

    @property
    def f1_weighted(self) -> float:
        return self.f1.weighted

    def score(self, average: str = "weighted") -> float:
        return self.f1.average(average)

    def to_dict(self) -> dict:
        out = {
            "n_samples": self.n_samples,
            "f1_weighted": self.f1.weighted,
            "f1_micro": self.f1.micro,
            "f1_macro": self.f1.macro,
            "f1_per_class": {FACIES[c].short_name if c in FACIES else str(c): v for c, v in self.f1.per_class.items()},
            "support": {FACIES[c].short_name if c in FACIES else str(c): v for c, v in self.f1.support.items()},
            "absent_classes": list(self.f1.absent),
            "absent_in_truth": list(self.f1.absent_in_truth),
            "confusion": {
                "class_order": list(self.confusion.class_order),
                "counts": self.confusion.counts.tolist(),
                "normalized": normalize_confusion(self.confusion).values.tolist(),
            },
            "run_metadata": dict(self.run_metadata),
        }
        if self.validation_f1 is not None:
            out["validation"] = {a: self.validation_f1.average(a) for a in AVERAGES}
        return out

    def class_rows(self) -> list[list]:
        rows = [["facies", "short_name", "support", "f1"]]
        for c, v in self.f1.per_class.items():
            rows.append([c, FACIES[c].short_name if c in FACIES else str(c), self.f1.support[c], v])
        return rows


def evaluate_blind(
    train: Dataset,
    blind: Dataset,
    aug: AugmentationConfig,
    model_cfg: gbt.GBTConfig,
    *,
    validation_fraction: float | None = None,
    split_seed: int | None = None,
) -> EvaluationReport:
    """Fit on ``train`` and score the held-out wells in ``blind``.

    Features are engineered on whole wells before any row-level split, so
    gradients and neighbour windows see the complete depth sequence. With
    ``validation_fraction`` a seeded row sample of ``train`` is held out from
    fitting (and from the standardization statistics) and scored separately.
    Blind labels are read only after the model is fitted.
    """
    overlap = sorted(set(train.wells) & set(blind.wells))
    if overlap:
        raise DataError(f"blind wells also appear in the training set: {overlap}")
    if len(train) == 0 or len(blind) == 0:
        raise DataError("training and blind sets must both be non-empty")

    raw_train = augment(train, aug)
    raw_blind = augment(blind, aug)
    fit_rows = np.arange(raw_train.n_rows)
    val_rows = None
    if validation_fraction is not None:
        fit_rows, val_rows = validation_indices(
            raw_train.n_rows, validation_fraction, model_cfg.seed if split_seed is None else split_seed
        )
    fm_fit = raw_train.take(fit_rows)
    fm_val = raw_train.take(val_rows) if val_rows is not None and len(val_rows) else None
    fm_blind = raw_blind
    if aug.standardize:
        stats = Standardization.fit(fm_fit)
        fm_fit = stats.apply(fm_fit)
        fm_blind = stats.apply(fm_blind)
        fm_val = stats.apply(fm_val) if fm_val is not None else None

    model = gbt.fit(fm_fit, model_cfg)
    pred = gbt.predict(model, fm_blind)
    truth = blind.labels
    cm = confusion_matrix(truth, pred)
    val_f1 = None
    if fm_val is not None:
        val_f1 = f1_scores(fm_val.labels, gbt.predict(model, fm_val))
    meta = {
        "feature_config_digest": config_digest(aug),
        "model_config_digest": config_digest(model_cfg),
        "seed": model_cfg.seed,
        "split_seed": split_seed,
        "validation_fraction": validation_fraction,
        "blind_wells": list(blind.wells),
        "n_train": int(len(fit_rows)),
        "n_features": fm_fit.n_features,
    }
    return EvaluationReport(
        f1=f1_from_confusion(cm),
        confusion=cm,
        n_samples=len(blind),
        run_metadata=meta,
        predictions=pred,
        true_labels=truth,
        wells=blind.column("Well Name"),
        depths=blind.column("Depth"),
        model=model,
        validation_f1=val_f1,
    )


# --------------------------------------------------------------------------
# Cross-validation

@dataclass
class CVReport:
    folds: list[tuple[str, EvaluationReport]]
    average: str = "weighted"

    @property
    def scores(self) -> list[float]:
        return [rep.score(self.average) for _, rep in self.folds]

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def std(self) -> float:
        return float(np.std(self.scores))

    def to_dict(self) -> dict:
        return {
            "average": self.average,
            "n_folds": len(self.folds),
            "mean": self.mean,
            "std": self.std,
            "folds": [
                {"held_out_well": w, "n_samples": r.n_samples, "f1_weighted": r.f1_weighted,
                 "f1_micro": r.f1_micro, "f1_macro": r.f1_macro}
                for w, r in self.folds
            ],
        }


def leave_one_well_out_cv(
    dataset: Dataset,
    aug: AugmentationConfig,
    model_cfg: gbt.GBTConfig,
    wells: Sequence[str] | None = None,
    average: str = "weighted",
) -> CVReport:
    """One fold per selected well: train on every other well, score the held-out one."""
    if average not in AVERAGES:
        raise ValueError(f"unknown F1 average {average!r}")
    if len(dataset.wells) < 2:
        raise DataError("leave-one-well-out CV needs at least 2 wells")
    selected = list(dataset.wells) if wells is None else list(wells)
    unknown = [w for w in selected if w not in dataset.wells]
    if unknown:
        raise DataError(f"unknown wells for CV: {unknown}")
    folds = []
    for well in selected:
        train = dataset.select_wells([well], exclude=True)
        test = dataset.select_wells([well])
        folds.append((well, evaluate_blind(train, test, aug, model_cfg)))
    return CVReport(folds, average)


@dataclass
class PairedCVReport:
    baseline: CVReport
    candidate: CVReport

    @property
    def fold_deltas(self) -> list[float]:
        return [relative_improvement(a, b) for a, b in zip(self.baseline.scores, self.candidate.scores)]

    @property
    def mean_relative_delta(self) -> float:
        return float(np.mean(self.fold_deltas))

    @property
    def relative_delta_of_means(self) -> float:
        return relative_improvement(self.baseline.mean, self.candidate.mean)

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline.to_dict(),
            "candidate": self.candidate.to_dict(),
            "fold_relative_deltas": self.fold_deltas,
            "mean_relative_delta": self.mean_relative_delta,
            "relative_delta_of_means": self.relative_delta_of_means,
        }


def paired_cv(
    dataset: Dataset,
    aug_a: AugmentationConfig,
    aug_b: AugmentationConfig,
    model_cfg: gbt.GBTConfig,
    wells: Sequence[str] | None = None,
    average: str = "weighted",
) -> PairedCVReport:
    return PairedCVReport(
        leave_one_well_out_cv(dataset, aug_a, model_cfg, wells, average),
        leave_one_well_out_cv(dataset, aug_b, model_cfg, wells, average),
    )


# --------------------------------------------------------------------------
# Seed sweep

@dataclass(frozen=True)
class SeedResult:
    seed: int
    f1_a: float
    f1_b: float

    @property
    def relative_delta(self) -> float:
        return relative_improvement(self.f1_a, self.f1_b)


@dataclass
class SweepReport:
    results: list[SeedResult]
    average: str = "weighted"

    @property
    def deltas(self) -> list[float]:
        return [r.relative_delta for r in self.results]

    @property
    def median_relative_delta(self) -> float:
        return float(statistics.median(self.deltas))

    def in_band(self, low: float, high: float) -> bool:
        return low <= self.median_relative_delta <= high

    def to_dict(self) -> dict:
        return {
            "average": self.average,
            "seeds": [r.seed for r in self.results],
            "f1_a": [r.f1_a for r in self.results],
            "f1_b": [r.f1_b for r in self.results],
            "relative_deltas": self.deltas,
            "median_relative_delta": self.median_relative_delta,
        }


def seed_sweep(
    train: Dataset,
    blind: Dataset,
    aug_a: AugmentationConfig,
    aug_b: AugmentationConfig,
    model_cfg: gbt.GBTConfig,
    seeds: Sequence[int],
    *,
    validation_fraction: float | None = 0.05,
    average: str = "weighted",
) -> SweepReport:
    """Paired blind-well comparison of two feature sets across seeds.

    Each seed sets both the booster seed and the validation-split seed, so
    the two feature sets always see the same rows and the same settings.
    Set ``validation_fraction=None`` to vary only the booster seed.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("seed_sweep needs at least one seed")
    if len(seeds) < 2:
        raise ValueError("seed_sweep needs at least 2 seeds")
    results = []
    for s in seeds:
        cfg = gbt.GBTConfig(**{**model_cfg.to_dict(), "seed": s})
        kwargs = {"validation_fraction": validation_fraction, "split_seed": s if validation_fraction else None}
        a = evaluate_blind(train, blind, aug_a, cfg, **kwargs).score(average)
        b = evaluate_blind(train, blind, aug_b, cfg, **kwargs).score(average)
        results.append(SeedResult(s, a, b))
    return SweepReport(results, average)


def prediction_track(report: EvaluationReport, others: dict[str, EvaluationReport] | None = None) -> list[list]:
    """Depth-indexed rows ``well, depth, true, predicted[, <name>...]`` for log-display plots."""
    header = ["well", "depth", "true"]
    columns = []
    if others:
        for name, rep in others.items():
            if not np.array_equal(rep.depths, report.depths):
                raise DataError("prediction tracks cover different depths")
            header.append(name)
            columns.append(rep.predictions)
    else:
        header.append("predicted")
        columns.append(report.predictions)
    rows = [header]
    for i in range(report.n_samples):
        rows.append([str(report.wells[i]), float(report.depths[i]), int(report.true_labels[i])] + [int(c[i]) for c in columns])
    return rows

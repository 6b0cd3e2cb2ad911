"""Command-line experiment runner.

Commands: ``stats``, ``train``, ``evaluate``, ``crossval`` and ``sweep``.
Settings come from an optional JSON config file; flags override it.

Exit codes: 0 success, 2 I/O, 3 data validation, 4 config, 5 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from faciesml import gbt
from faciesml.data_model import (
    FACIES,
    Dataset,
    correlation_matrix,
    parse_dataset,
    split_blind,
    summarize,
    summary_document,
    validation_indices,
)
from faciesml.errors import (
    ConfigError,
    DataError,
    IncompatibleModelError,
    ModelFormatError,
)
from faciesml.evaluation import (
    AVERAGES,
    EvaluationReport,
    confusion_matrix,
    evaluate_blind,
    f1_from_confusion,
    f1_scores,
    normalize_confusion,
    paired_cv,
    prediction_track,
    relative_improvement,
    seed_sweep,
)
from faciesml.features import (
    AUGMENTATION_PRESETS,
    AugmentationConfig,
    Standardization,
    archie_fits,
    augment,
    dumps_sidecar,
)
from faciesml.io import atomic_write_text, csv_text, dumps_json, write_csv, write_json

logger = logging.getLogger("faciesml")

EXIT_OK, EXIT_IO, EXIT_DATA, EXIT_CONFIG, EXIT_INTERNAL = 0, 2, 3, 4, 5

# Relative-improvement band observed across seeds for the ratio feature.
REFERENCE_BAND = (0.02, 0.07)


def _augmentation(value, name: str) -> AugmentationConfig:
    if isinstance(value, AugmentationConfig):
        return value
    if isinstance(value, str):
        if value not in AUGMENTATION_PRESETS:
            raise ConfigError(f"{name}: unknown preset {value!r}; choose one of {sorted(AUGMENTATION_PRESETS)}")
        return AUGMENTATION_PRESETS[value]()
    if isinstance(value, dict):
        try:
            return AugmentationConfig.from_dict(value)
        except TypeError as exc:
            raise ConfigError(f"{name}: {exc}") from None
    raise ConfigError(f"{name} must be a preset name or an object")


def augmentation_name(aug: AugmentationConfig) -> str:
    for name, make in AUGMENTATION_PRESETS.items():
        if make() == aug:
            return name
    return "custom"


@dataclass
class ExperimentConfig:
    dataset_path: str | None = None
    blind_well: str = "SHANKLE"
    validation_fraction: float | None = 0.05
    split_seed: int = 42
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig.physics)
    baseline_augmentation: AugmentationConfig = field(default_factory=AugmentationConfig.benchmark)
    model: gbt.GBTConfig = field(default_factory=gbt.GBTConfig)
    output_dir: str = "out"
    f1_average: str = "weighted"
    seeds: list[int] = field(default_factory=lambda: list(range(1, 11)))

    def __post_init__(self):
        if self.f1_average not in AVERAGES:
            raise ConfigError(f"f1_average must be one of {AVERAGES}, got {self.f1_average!r}")
        if self.validation_fraction is not None and not 0 < self.validation_fraction < 1:
            raise ConfigError(f"validation_fraction must be in (0, 1), got {self.validation_fraction!r}")
        if not self.output_dir:
            raise ConfigError("output_dir must not be empty")
        if self.dataset_path == "":
            raise ConfigError("dataset_path must not be empty")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown config field {key!r}")
        kw = dict(data)
        for key in ("augmentation", "baseline_augmentation"):
            if key in kw:
                kw[key] = _augmentation(kw[key], key)
        if "model" in kw:
            if not isinstance(kw["model"], dict):
                raise ConfigError("model must be an object")
            try:
                kw["model"] = gbt.GBTConfig.from_dict(kw["model"])
            except TypeError as exc:
                raise ConfigError(f"model: {exc}") from None
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return {
            "dataset_path": self.dataset_path,
            "blind_well": self.blind_well,
            "validation_fraction": self.validation_fraction,
            "split_seed": self.split_seed,
            "augmentation": self.augmentation.to_dict(),
            "baseline_augmentation": self.baseline_augmentation.to_dict(),
            "model": self.model.to_dict(),
            "output_dir": self.output_dir,
            "f1_average": self.f1_average,
            "seeds": list(self.seeds),
        }


# --------------------------------------------------------------------------
# Argument handling

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parse_seeds(text: str) -> list[int]:
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else part[1:].split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", help="path to the well-log CSV")
    common.add_argument("--config", help="JSON experiment config; flags override its values")
    common.add_argument("--out", help="output directory")
    common.add_argument("--blind-well", help="well held out for blind scoring (default SHANKLE)")
    common.add_argument("--seed", type=int, help="booster seed")
    common.add_argument("--split-seed", type=int, help="seed of the validation row split")
    common.add_argument("--f1-average", choices=AVERAGES, help="F1 aggregate used for headline numbers")
    common.add_argument("--features", help="augmentation preset for the candidate run (raw, benchmark, physics)")
    common.add_argument("--baseline-features", help="augmentation preset for the baseline run")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="faciesml", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("stats", parents=[common], help="dataset summary, correlations, Archie fits")
    sub.add_parser("train", parents=[common], help="fit a model and write model.json")
    ev = sub.add_parser("evaluate", parents=[common], help="score the blind well")
    ev.add_argument("--model", help="model.json from a previous train run (features.json must sit beside it)")
    ev.add_argument("--compare", action="store_true", help="also run the baseline features and emit a paired track")
    cv = sub.add_parser("crossval", parents=[common], help="paired leave-one-well-out cross-validation")
    cv.add_argument("--mode", choices=("all-wells", "exclude-blind", "both"), default="all-wells")
    sw = sub.add_parser("sweep", parents=[common], help="paired seed sweep on the blind well")
    sw.add_argument("--seeds", type=_parse_seeds, help="e.g. 1-10 or 1,2,3")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
    cfg = ExperimentConfig.from_dict(data)
    if args.data:
        cfg.dataset_path = args.data
    if args.out:
        cfg.output_dir = args.out
    if args.blind_well:
        cfg.blind_well = args.blind_well
    if args.seed is not None:
        cfg.model = gbt.GBTConfig(**{**cfg.model.to_dict(), "seed": args.seed})
    if args.split_seed is not None:
        cfg.split_seed = args.split_seed
    if args.f1_average:
        cfg.f1_average = args.f1_average
    if args.features:
        cfg.augmentation = _augmentation(args.features, "--features")
    if args.baseline_features:
        cfg.baseline_augmentation = _augmentation(args.baseline_features, "--baseline-features")
    if getattr(args, "seeds", None) is not None:
        cfg.seeds = args.seeds
    if not cfg.dataset_path:
        raise ConfigError("no dataset given: pass --data or set dataset_path in the config")
    return cfg


def _load(cfg: ExperimentConfig) -> Dataset:
    ds = parse_dataset(cfg.dataset_path)
    logger.info("loaded %d records from %d wells", len(ds), len(ds.wells))
    return ds


def _out(cfg: ExperimentConfig, name: str) -> str:
    return os.path.join(cfg.output_dir, name)


# --------------------------------------------------------------------------
# Commands

def cmd_stats(cfg: ExperimentConfig) -> None:
    ds = _load(cfg)
    stats = summarize(ds)
    corr = correlation_matrix(ds)
    write_json(_out(cfg, "summary.json"), summary_document(stats, corr))
    rows = [["attribute"] + list(corr.names)]
    for name, row in zip(corr.names, corr.values):
        rows.append([name] + [float(v) for v in row])
    write_csv(_out(cfg, "correlations.csv"), rows)
    hist = [["group", "key", "count"]]
    hist += [["well", w, n] for w, n in stats.per_well_counts.items()]
    hist += [["facies", FACIES[c].short_name, n] for c, n in stats.per_facies_counts.items()]
    write_csv(_out(cfg, "histograms.csv"), hist)
    fits = [["facies", "short_name", "slope", "intercept", "cementation_exponent", "r_squared", "n_points"]]
    for f in archie_fits(ds):
        fits.append([f.facies, FACIES[f.facies].short_name, f.slope, f.intercept, f.cementation_exponent, f.r_squared, f.n_points])
    write_csv(_out(cfg, "archie.csv"), fits)


def _train_partition(cfg: ExperimentConfig, ds: Dataset) -> tuple[Dataset, Dataset | None]:
    if cfg.blind_well:
        return split_blind(ds, cfg.blind_well)
    return ds, None


def _fit_training(cfg: ExperimentConfig, train: Dataset):
    raw = augment(train, cfg.augmentation)
    fit_rows = np.arange(raw.n_rows)
    val_rows = np.empty(0, dtype=np.int64)
    if cfg.validation_fraction is not None:
        fit_rows, val_rows = validation_indices(raw.n_rows, cfg.validation_fraction, cfg.split_seed)
    fm_fit, fm_val = raw.take(fit_rows), raw.take(val_rows)
    stats = None
    if cfg.augmentation.standardize:
        stats = Standardization.fit(fm_fit)
        fm_fit, fm_val = stats.apply(fm_fit), stats.apply(fm_val)
    model = gbt.fit(fm_fit, cfg.model)
    return model, stats, fm_fit, fm_val


def cmd_train(cfg: ExperimentConfig) -> None:
    ds = _load(cfg)
    train, _ = _train_partition(cfg, ds)
    model, stats, fm_fit, fm_val = _fit_training(cfg, train)
    raw_fit = gbt.predict_raw(model, fm_fit)
    report = {
        "n_train_rows": fm_fit.n_rows,
        "n_validation_rows": fm_val.n_rows,
        "n_features": fm_fit.n_features,
        "feature_names": fm_fit.feature_names,
        "rounds": model.n_rounds,
        "n_classes": model.n_classes,
        "final_training_loss": gbt.softmax_cross_entropy(fm_fit.labels - 1, raw_fit, reduction="mean"),
        "training_f1": f1_scores(fm_fit.labels, np.argmax(raw_fit, axis=1) + 1).average(cfg.f1_average),
        "validation_f1": (
            f1_scores(fm_val.labels, gbt.predict(model, fm_val)).average(cfg.f1_average) if fm_val.n_rows else None
        ),
        "f1_average": cfg.f1_average,
        "config": cfg.to_dict(),
    }
    # Everything is computed before the first write so a failure leaves no model behind.
    model_text = gbt.dumps_model(model)
    sidecar_text = dumps_sidecar(cfg.augmentation, stats)
    report_text = dumps_json(report)
    atomic_write_text(_out(cfg, "model.json"), model_text)
    atomic_write_text(_out(cfg, "features.json"), sidecar_text)
    atomic_write_text(_out(cfg, "train_report.json"), report_text)


def _load_model(path: str) -> tuple[gbt.GBTModel, dict]:
    with open(path, encoding="utf-8") as fh:
        model = gbt.deserialize(fh.read())
    sidecar_path = os.path.join(os.path.dirname(os.path.abspath(path)), "features.json")
    with open(sidecar_path, encoding="utf-8") as fh:
        try:
            sidecar = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"invalid feature sidecar: {exc}", sidecar_path) from None
    return model, sidecar


def _score_with_model(model: gbt.GBTModel, sidecar: dict, blind: Dataset) -> EvaluationReport:
    try:
        aug = AugmentationConfig.from_dict(sidecar["augmentation"])
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"feature sidecar has no usable augmentation record: {exc}") from None
    raw = augment(blind, aug)
    if list(model.feature_names) != raw.feature_names:
        missing = [c for c in model.feature_names if c not in raw.feature_names]
        extra = [c for c in raw.feature_names if c not in model.feature_names]
        raise IncompatibleModelError(
            f"model features do not match its sidecar: missing {missing}, unexpected {extra}"
        )
    fm = raw
    if aug.standardize:
        if not sidecar.get("standardization"):
            raise IncompatibleModelError("model sidecar has no standardization statistics")
        fm = Standardization.from_dict(sidecar["standardization"]).apply(raw)
    pred = gbt.predict(model, fm)
    cm = confusion_matrix(blind.labels, pred)
    return EvaluationReport(
        f1=f1_from_confusion(cm),
        confusion=cm,
        n_samples=len(blind),
        run_metadata={"blind_wells": list(blind.wells), "model_config": model.config.to_dict()},
        predictions=pred,
        true_labels=blind.labels,
        wells=blind.column("Well Name"),
        depths=blind.column("Depth"),
        model=model,
    )


def _write_report_files(cfg: ExperimentConfig, report: EvaluationReport, extra: dict | None = None,
                        track=None) -> None:
    doc = report.to_dict()
    doc["f1_average"] = cfg.f1_average
    doc["f1"] = report.score(cfg.f1_average)
    if extra:
        doc.update(extra)
    write_json(_out(cfg, "report.json"), doc)
    write_csv(_out(cfg, "report.csv"), report.class_rows())
    write_csv(_out(cfg, "confusion.csv"), report.confusion.to_rows())
    norm = normalize_confusion(report.confusion)
    write_csv(_out(cfg, "confusion_normalized.csv"), report.confusion.to_rows(norm.values))
    write_csv(_out(cfg, "predictions_track.csv"), track or prediction_track(report))


def cmd_evaluate(cfg: ExperimentConfig, model_path: str | None = None, compare: bool = False) -> None:
    ds = _load(cfg)
    if not cfg.blind_well:
        raise ConfigError("evaluate needs a blind well")
    train, blind = split_blind(ds, cfg.blind_well)
    if model_path:
        model, sidecar = _load_model(model_path)
        report = _score_with_model(model, sidecar, blind)
        cfg.augmentation = AugmentationConfig.from_dict(sidecar["augmentation"])
    else:
        report = evaluate_blind(
            train, blind, cfg.augmentation, cfg.model,
            validation_fraction=cfg.validation_fraction, split_seed=cfg.split_seed,
        )
    report.run_metadata["augmentation"] = augmentation_name(cfg.augmentation)
    if not compare:
        _write_report_files(cfg, report)
        return
    base = evaluate_blind(
        train, blind, cfg.baseline_augmentation, cfg.model,
        validation_fraction=cfg.validation_fraction, split_seed=cfg.split_seed,
    )
    names = [augmentation_name(cfg.baseline_augmentation), augmentation_name(cfg.augmentation)]
    if names[0] == names[1]:
        names = ["baseline", "candidate"]
    track = prediction_track(report, {names[0]: base, names[1]: report})
    extra = {
        "comparison": {
            "baseline_name": names[0],
            "candidate_name": names[1],
            "baseline": base.to_dict(),
            "baseline_f1": base.score(cfg.f1_average),
            "candidate_f1": report.score(cfg.f1_average),
            "relative_delta": relative_improvement(base.score(cfg.f1_average), report.score(cfg.f1_average)),
        }
    }
    _write_report_files(cfg, report, extra, track)


def cmd_crossval(cfg: ExperimentConfig, mode: str = "all-wells") -> None:
    ds = _load(cfg)
    modes = ["all-wells", "exclude-blind"] if mode == "both" else [mode]
    doc = {"f1_average": cfg.f1_average}
    rows = [["mode", "held_out_well", "n_samples", "baseline_f1", "candidate_f1", "relative_delta"]]
    for m in modes:
        data = ds
        if m == "exclude-blind":
            if not cfg.blind_well:
                raise ConfigError("exclude-blind mode needs a blind well")
            data, _ = split_blind(ds, cfg.blind_well)
        paired = paired_cv(data, cfg.baseline_augmentation, cfg.augmentation, cfg.model, average=cfg.f1_average)
        doc[m] = paired.to_dict()
        for (well, b_rep), (_, c_rep), d in zip(paired.baseline.folds, paired.candidate.folds, paired.fold_deltas):
            rows.append([m, well, b_rep.n_samples, b_rep.score(cfg.f1_average), c_rep.score(cfg.f1_average), d])
    write_json(_out(cfg, "cv_report.json"), doc)
    write_csv(_out(cfg, "cv_folds.csv"), rows)


def cmd_sweep(cfg: ExperimentConfig) -> None:
    if len(cfg.seeds) < 2:
        raise ConfigError("sweep needs at least 2 seeds")
    ds = _load(cfg)
    train, blind = split_blind(ds, cfg.blind_well)
    rep = seed_sweep(
        train, blind, cfg.baseline_augmentation, cfg.augmentation, cfg.model, cfg.seeds,
        validation_fraction=cfg.validation_fraction, average=cfg.f1_average,
    )
    rows = [["seed", "baseline_f1", "candidate_f1", "relative_delta"]]
    rows += [[r.seed, r.f1_a, r.f1_b, r.relative_delta] for r in rep.results]
    write_csv(_out(cfg, "sweep.csv"), rows)
    summary = rep.to_dict()
    summary["reference_band"] = list(REFERENCE_BAND)
    summary["median_in_reference_band"] = rep.in_band(*REFERENCE_BAND)
    write_json(_out(cfg, "sweep_summary.json"), summary)


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "stats":
            cmd_stats(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.model, args.compare)
        elif args.command == "crossval":
            cmd_crossval(cfg, args.mode)
        elif args.command == "sweep":
            cmd_sweep(cfg)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: cannot access {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, IncompatibleModelError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

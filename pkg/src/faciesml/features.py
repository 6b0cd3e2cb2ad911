"""Feature construction for facies classification.

Two families of engineered columns are built on top of the seven scalar log
attributes:

* the benchmark set: squared terms, pairwise products, depth gradients and
  shifted neighbour copies inside each well;
* the resistivity/porosity ratio ``ILD_log10 / log10(PHIND)``, which follows
  from the log-linear Archie relation ``log10 F = log10 C - m log10 phi``.

All augmentations append columns; the base columns are never modified.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from itertools import combinations
from typing import Sequence

import numpy as np

from faciesml.data_model import LOG_ATTRIBUTES, Dataset, facies_label
from faciesml.errors import ConfigError, DataError, DegenerateFitError

RATIO_NAME = "ILD_log10/PHIND_log10"


@dataclass
class FeatureMatrix:
    """Dense feature block with labels and the per-row well/depth sidecar."""

    values: np.ndarray
    feature_names: list[str]
    labels: np.ndarray | None = None
    wells: np.ndarray | None = None
    depths: np.ndarray | None = None
    standardization: "Standardization | None" = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError("feature values must be a 2-D matrix")
        self.feature_names = list(self.feature_names)
        n, k = self.values.shape
        if len(self.feature_names) != k:
            raise DataError(f"{len(self.feature_names)} feature names for {k} columns")
        if len(set(self.feature_names)) != k:
            dupes = sorted({f for f in self.feature_names if self.feature_names.count(f) > 1})
            raise DataError(f"duplicate feature names: {dupes}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("feature matrix contains NaN or infinite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise DataError("labels length does not match the row count")
        if self.wells is not None:
            self.wells = np.asarray(self.wells, dtype=object)
        if self.depths is not None:
            self.depths = np.asarray(self.depths, dtype=np.float64)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)

        def _sub(a):
            return None if a is None else a[rows]

        return FeatureMatrix(
            self.values[rows],
            self.feature_names,
            _sub(self.labels),
            _sub(self.wells),
            _sub(self.depths),
            self.standardization,
        )

    def with_labels(self, labels) -> "FeatureMatrix":
        return FeatureMatrix(self.values, self.feature_names, labels, self.wells, self.depths, self.standardization)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.feature_names + ["Facies", "Well Name", "Depth"])
        for i in range(self.n_rows):
            row = [repr(float(v)) for v in self.values[i]]
            row.append("" if self.labels is None else str(int(self.labels[i])))
            row.append("" if self.wells is None else str(self.wells[i]))
            row.append("" if self.depths is None else repr(float(self.depths[i])))
            writer.writerow(row)
        return buf.getvalue()


@dataclass(frozen=True)
class AugmentationConfig:
    include_quadratic: bool = False
    include_interactions: bool = False
    include_depth_gradients: bool = False
    neighbor_radius: int = 0
    include_physics_ratio: bool = False
    ratio_epsilon: float = 1e-3
    standardize: bool = True

    def __post_init__(self):
        if not (isinstance(self.neighbor_radius, int) and self.neighbor_radius >= 0):
            raise ConfigError(f"neighbor_radius must be a non-negative integer, got {self.neighbor_radius!r}")
        if not self.ratio_epsilon > 0:
            raise ConfigError(f"ratio_epsilon must be positive, got {self.ratio_epsilon!r}")

    @classmethod
    def raw(cls) -> "AugmentationConfig":
        return cls()

    @classmethod
    def benchmark(cls) -> "AugmentationConfig":
        return cls(
            include_quadratic=True,
            include_interactions=True,
            include_depth_gradients=True,
            neighbor_radius=1,
        )

    @classmethod
    def physics(cls) -> "AugmentationConfig":
        return cls(
            include_quadratic=True,
            include_interactions=True,
            include_depth_gradients=True,
            neighbor_radius=1,
            include_physics_ratio=True,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "AugmentationConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown augmentation field {unknown[0]!r}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


AUGMENTATION_PRESETS = {
    "raw": AugmentationConfig.raw,
    "benchmark": AugmentationConfig.benchmark,
    "physics": AugmentationConfig.physics,
}


# --------------------------------------------------------------------------
# Physics ratio

def phind_log10(phind):
    """``log10`` of neutron-density porosity (percent); raises on non-positive input."""
    arr = np.asarray(phind, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise DataError("PHIND must be positive to take log10")
    out = np.log10(arr)
    return float(out) if out.ndim == 0 else out


def physics_ratio(ild_log10, phind, epsilon: float = 1e-3):
    """``ild_log10 / log10(phind)`` with a signed epsilon guard on the denominator.

    When ``|log10(phind)| < epsilon`` the denominator is replaced by
    ``epsilon * sign(log10(phind))``, taking the sign of zero as +1.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    d = np.asarray(phind_log10(phind), dtype=np.float64)
    guard = np.where(d < 0, -epsilon, epsilon)
    d = np.where(np.abs(d) >= epsilon, d, guard)
    out = np.asarray(ild_log10, dtype=np.float64) / d
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Column augmentations; each returns only the appended block and its names.

def quadratic_expansion(values: np.ndarray, names: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    values = np.asarray(values, dtype=np.float64)
    return values * values, [f"{n}^2" for n in names]


def pairwise_interactions(values: np.ndarray, names: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    values = np.asarray(values, dtype=np.float64)
    k = values.shape[1]
    if k < 2:
        raise DataError("pairwise interactions need at least 2 base features")
    pairs = list(combinations(range(k), 2))
    block = np.empty((values.shape[0], len(pairs)))
    for c, (i, j) in enumerate(pairs):
        block[:, c] = values[:, i] * values[:, j]
    return block, [f"{names[i]}*{names[j]}" for i, j in pairs]


def _well_groups(wells: np.ndarray) -> list[np.ndarray]:
    wells = np.asarray(wells, dtype=object)
    return [np.flatnonzero(wells == w) for w in dict.fromkeys(wells.tolist())]


def depth_gradients(
    values: np.ndarray, names: Sequence[str], depths: np.ndarray, wells: np.ndarray
) -> tuple[np.ndarray, list[str]]:
    """Per-well ``dX/dDepth``: central differences inside, one-sided at the ends.

    Single-row wells get a zero gradient. Rows of each well must already be in
    strictly increasing depth order.
    """
    values = np.asarray(values, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    out = np.zeros_like(values)
    for idx in _well_groups(wells):
        z = depths[idx]
        if np.any(np.diff(z) <= 0):
            raise DataError("depth must be strictly increasing within each well")
        if len(idx) < 2:
            continue
        x = values[idx]
        g = np.empty_like(x)
        g[1:-1] = (x[2:] - x[:-2]) / (z[2:] - z[:-2])[:, None]
        g[0] = (x[1] - x[0]) / (z[1] - z[0])
        g[-1] = (x[-1] - x[-2]) / (z[-1] - z[-2])
        out[idx] = g
    return out, [f"d({n})/dDepth" for n in names]


def neighbor_window_augment(
    values: np.ndarray, names: Sequence[str], wells: np.ndarray, radius: int
) -> tuple[np.ndarray, list[str]]:
    """Shifted copies at offsets -radius..-1, +1..+radius, edge-replicated per well.

    Column order is offset-major: every base feature at the first offset, then
    every base feature at the next offset.
    """
    if radius < 1:
        raise ValueError("radius must be at least 1")
    values = np.asarray(values, dtype=np.float64)
    offsets = [o for o in range(-radius, radius + 1) if o != 0]
    k = values.shape[1]
    out = np.empty((values.shape[0], k * len(offsets)))
    for idx in _well_groups(wells):
        m = len(idx)
        x = values[idx]
        for c, o in enumerate(offsets):
            src = np.clip(np.arange(m) + o, 0, m - 1)
            out[idx, c * k:(c + 1) * k] = x[src]
    out_names = [f"{n}@{o:+d}" for o in offsets for n in names]
    return out, out_names


# --------------------------------------------------------------------------
# Standardization

@dataclass(frozen=True)
class Standardization:
    """Per-column z-score statistics; zero-spread columns are only centred."""

    feature_names: tuple[str, ...]
    mean: np.ndarray = field(repr=False)
    std: np.ndarray = field(repr=False)

    @classmethod
    def fit(cls, fm: FeatureMatrix) -> "Standardization":
        mean = fm.values.mean(axis=0)
        std = fm.values.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(tuple(fm.feature_names), mean, std)

    def apply(self, fm: FeatureMatrix) -> FeatureMatrix:
        if tuple(fm.feature_names) != self.feature_names:
            raise DataError("standardization statistics were fitted on different features")
        return FeatureMatrix(
            (fm.values - self.mean) / self.std, fm.feature_names, fm.labels, fm.wells, fm.depths, self
        )

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Standardization":
        try:
            names = tuple(data["feature_names"])
            mean = np.asarray(data["mean"], dtype=np.float64)
            std = np.asarray(data["std"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed standardization record: {exc}") from None
        if not (len(names) == len(mean) == len(std)):
            raise DataError("standardization record has inconsistent lengths")
        return cls(names, mean, std)


# --------------------------------------------------------------------------
# Pipeline

def augment(dataset: Dataset, config: AugmentationConfig) -> FeatureMatrix:
    """Build the engineered (unstandardized) features for ``dataset``.

    Column order: base attributes, ratio, squares, products, gradients,
    neighbour windows. Gradients and windows never cross a well boundary.
    """
    if len(dataset) == 0:
        raise DataError("cannot build features for an empty dataset")
    base = np.column_stack([dataset.column(a).astype(np.float64) for a in LOG_ATTRIBUTES])
    base_names = list(LOG_ATTRIBUTES)
    wells = dataset.column("Well Name")
    depths = dataset.column("Depth")

    blocks = [base]
    names = list(base_names)
    if config.include_physics_ratio:
        ratio = physics_ratio(dataset.column("ILD_log10"), dataset.column("PHIND"), config.ratio_epsilon)
        blocks.append(np.reshape(ratio, (-1, 1)))
        names.append(RATIO_NAME)
    if config.include_quadratic:
        b, n = quadratic_expansion(base, base_names)
        blocks.append(b)
        names += n
    if config.include_interactions:
        b, n = pairwise_interactions(base, base_names)
        blocks.append(b)
        names += n
    if config.include_depth_gradients:
        b, n = depth_gradients(base, base_names, depths, wells)
        blocks.append(b)
        names += n
    if config.neighbor_radius > 0:
        b, n = neighbor_window_augment(base, base_names, wells, config.neighbor_radius)
        blocks.append(b)
        names += n

    values = np.hstack(blocks)
    return FeatureMatrix(values, names, dataset.labels, wells, depths)


def build_feature_matrix(
    dataset: Dataset,
    config: AugmentationConfig,
    standardization: Standardization | None = None,
) -> FeatureMatrix:
    """Engineered features, z-scored with ``standardization`` or with statistics fitted here.

    The statistics used end up on ``result.standardization`` so they can be
    applied to a held-out partition.
    """
    fm = augment(dataset, config)
    if not config.standardize:
        return fm
    if standardization is None:
        standardization = Standardization.fit(fm)
    return standardization.apply(fm)


def feature_sidecar(config: AugmentationConfig, standardization: Standardization | None) -> dict:
    return {
        "augmentation": config.to_dict(),
        "standardization": None if standardization is None else standardization.to_dict(),
    }


def dumps_sidecar(config: AugmentationConfig, standardization: Standardization | None) -> str:
    return json.dumps(feature_sidecar(config, standardization), indent=2) + "\n"


# --------------------------------------------------------------------------
# Archie diagnostic

@dataclass(frozen=True)
class ArchieFit:
    """Least-squares line ``ILD_log10 = intercept + slope * log10(PHIND)`` for one facies.

    ``slope`` is the negated cementation exponent and ``intercept`` is the
    log10 of the tortuosity constant.
    """

    facies: int
    slope: float
    intercept: float
    r_squared: float
    n_points: int

    @property
    def cementation_exponent(self) -> float:
        return -self.slope

    @property
    def tortuosity(self) -> float:
        return 10.0 ** self.intercept


def fit_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Ordinary least squares ``y ~ a + b x``; returns ``(slope, intercept, r_squared)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        raise DegenerateFitError(f"need at least 2 points, got {len(x)}")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise DegenerateFitError("no spread in log10(PHIND)")
    yc = y - y.mean()
    slope = float(xc @ yc) / sxx
    intercept = float(y.mean() - slope * x.mean())
    syy = float(yc @ yc)
    if syy == 0:
        r2 = 1.0
    else:
        resid = y - (intercept + slope * x)
        r2 = 1.0 - float(resid @ resid) / syy
    return slope, intercept, min(1.0, max(0.0, r2))


def fit_archie_regression(dataset: Dataset, facies: int) -> ArchieFit:
    code = facies_label(facies).code
    mask = dataset.labels == code
    x = phind_log10(dataset.column("PHIND")[mask]) if mask.any() else np.empty(0)
    y = dataset.column("ILD_log10")[mask]
    slope, intercept, r2 = fit_line(np.atleast_1d(x), y)
    return ArchieFit(code, slope, intercept, r2, int(mask.sum()))


def archie_fits(dataset: Dataset) -> list[ArchieFit]:
    """Fits for every facies with enough points; degenerate facies are skipped."""
    out = []
    for code in sorted(set(dataset.labels.tolist())):
        try:
            out.append(fit_archie_regression(dataset, code))
        except DegenerateFitError:
            continue
    return out

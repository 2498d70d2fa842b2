"""
Time-series ingestion and emission (CSV + JSON sidecar), spline upsampling and the Silverbox
train/test split.
"""

import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline

from gplfm.errors import DataError

LOGGER = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
UNIFORM_RTOL = 1e-6


@dataclass
class TimeSeriesSet:
    """Uniformly sampled input u, output y (None when absent) and any further named columns."""

    t: np.ndarray
    u: np.ndarray
    y: np.ndarray | None
    fs: float
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.u.size

    @property
    def dt(self) -> float:
        return 1.0 / self.fs

    def slice(self, start: int, stop: int) -> "TimeSeriesSet":
        if not 0 <= start < stop <= len(self):
            raise DataError(f"range [{start}, {stop}) is outside a record of {len(self)} samples")
        return TimeSeriesSet(
            self.t[start:stop],
            self.u[start:stop],
            None if self.y is None else self.y[start:stop],
            self.fs,
            {name: values[start:stop] for name, values in self.extra.items()},
        )

    def upsample(self, factor: int) -> "TimeSeriesSet":
        t0 = self.t[0] if self.t.size else 0.0
        fs = self.fs * factor
        u = upsample_cubic(self.u, factor)
        return TimeSeriesSet(
            t0 + np.arange(u.size) / fs,
            u,
            None if self.y is None else upsample_cubic(self.y, factor),
            fs,
            {name: upsample_cubic(values, factor) for name, values in self.extra.items()},
        )


def ingest_csv(
    path: str | Path,
    fs: float | None = None,
    columns: Mapping[str, str] | None = None,
    require_output: bool = True,
) -> TimeSeriesSet:
    """
    Read a header-led CSV with columns {t, u, y} or {u, y} (then `fs` is required).

    `columns` renames logical columns, e.g. {"y": "y_noisy"}. Row numbers in errors count data
    rows from 1; line numbers count the header as line 1. With `require_output=False` a missing
    output column gives `y=None`.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    names = {"t": "t", "u": "u", "y": "y", **dict(columns or {})}
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        raise DataError(f"malformed CSV {path}: {exc}") from None
    except pd.errors.EmptyDataError:
        raise DataError(f"empty CSV file: {path}") from None

    required = ("u", "y") if require_output else ("u",)
    for logical in required:
        if names[logical] not in frame.columns:
            raise DataError(
                f"{path} has columns {list(frame.columns)}; expected a '{names[logical]}' column"
            )
    has_time = names["t"] in frame.columns
    if not has_time and fs is None:
        raise DataError(f"{path} has no '{names['t']}' column and no sample rate was given")

    numeric = {}
    for column in frame.columns:
        try:
            # object -> float goes through float() per cell, which round-trips %.17g exactly
            values = frame[column].to_numpy(dtype=object).astype(float)
        except (TypeError, ValueError):
            values = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            row = int(bad[0]) + 1
            raise DataError(
                f"{path}: row {row} (line {row + 1}) has a missing or non-numeric "
                f"value in column '{column}': {frame[column].iloc[bad[0]]!r}"
            )
        numeric[column] = values

    u = numeric[names["u"]]
    y = numeric.get(names["y"])
    if has_time:
        t = numeric[names["t"]]
        measured_fs = _check_uniform(t, path)
        if fs is not None and not np.isclose(measured_fs, fs, rtol=UNIFORM_RTOL):
            raise DataError(f"{path}: time column implies fs={measured_fs}, but fs={fs} was given")
        fs = measured_fs if fs is None else fs
    else:
        t = np.arange(u.size) / fs
    used = {names["u"], names["y"], names["t"]}
    extra = {name: values for name, values in numeric.items() if name not in used}
    LOGGER.debug("read %d samples at %g Hz from %s", u.size, fs, path)
    return TimeSeriesSet(t=t, u=u, y=y, fs=float(fs), extra=extra)


def _check_uniform(t: np.ndarray, path: Path) -> float:
    if t.size < 2:
        raise DataError(f"{path}: need at least two samples to infer the sample rate")
    steps = np.diff(t)
    dt = float(np.median(steps))
    if dt <= 0:
        raise DataError(f"{path}: time column is not increasing")
    off = np.flatnonzero(np.abs(steps - dt) > UNIFORM_RTOL * dt)
    if off.size:
        row = int(off[0]) + 2
        raise DataError(f"{path}: non-uniform time step at row {row} (line {row + 1})")
    return 1.0 / dt


def write_csv(path: str | Path, columns: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({name: np.asarray(values) for name, values in columns.items()}).to_csv(
        path, index=False, float_format=FLOAT_FORMAT
    )
    return path


def write_dataset(
    path: str | Path,
    t,
    u,
    y_clean,
    y_noisy,
    metadata: Mapping,
    extra: Mapping[str, np.ndarray] | None = None,
) -> tuple[Path, Path]:
    """Write t, u, y_clean, y_noisy (+ extra columns) and a JSON sidecar of `metadata`."""
    columns = {"t": t, "u": u, "y_clean": y_clean, "y_noisy": y_noisy, **dict(extra or {})}
    csv_path = write_csv(path, columns)
    sidecar = csv_path.with_suffix(".json")
    text = json.dumps(dict(metadata), indent=2, sort_keys=True)
    sidecar.write_text(text + "\n", encoding="utf-8")
    return csv_path, sidecar


def upsample_cubic(series, factor: int) -> np.ndarray:
    """
    Natural cubic spline onto a grid `factor` times denser, endpoints included.

    The result has factor * (N - 1) + 1 points and holds the original samples exactly at
    every `factor`-th index.
    """
    if int(factor) != factor or factor < 1:
        raise DataError(f"upsample factor must be a positive integer, got {factor}")
    factor = int(factor)
    series = np.asarray(series, dtype=float).ravel()
    if factor == 1:
        return series.copy()
    if series.size < 4:
        raise DataError(f"need at least 4 samples to upsample, got {series.size}")
    knots = np.arange(series.size, dtype=float)
    fine = np.arange((series.size - 1) * factor + 1) / factor
    upsampled = CubicSpline(knots, series, bc_type="natural")(fine)
    upsampled[::factor] = series
    return upsampled


def downsample(series, factor: int) -> np.ndarray:
    return np.asarray(series)[:: int(factor)]


@dataclass(frozen=True)
class SilverboxDataset:
    """
    Silverbox record: input voltage u, output voltage y, with 1-based inclusive index ranges
    for training and testing as quoted for the benchmark.
    """

    data: TimeSeriesSet
    train_range: tuple[int, int] = (49_278, 52_350)
    test_range: tuple[int, int] = (1, 40_500)
    upsample_factor: int = 4

    def __post_init__(self) -> None:
        for name, (first, last) in (("train", self.train_range), ("test", self.test_range)):
            if not 1 <= first <= last <= len(self.data):
                raise DataError(
                    f"{name} range {first}..{last} lies outside a record of "
                    f"{len(self.data)} samples"
                )

    @classmethod
    def load(
        cls,
        path: str | Path,
        fs: float = 610.35,
        columns: Mapping[str, str] | None = None,
        **ranges,
    ) -> "SilverboxDataset":
        return cls(ingest_csv(path, fs=fs, columns=columns), **ranges)

    def train(self, upsampled: bool = True) -> TimeSeriesSet:
        first, last = self.train_range
        part = self.data.slice(first - 1, last)
        return part.upsample(self.upsample_factor) if upsampled else part

    def test(self) -> TimeSeriesSet:
        first, last = self.test_range
        return self.data.slice(first - 1, last)

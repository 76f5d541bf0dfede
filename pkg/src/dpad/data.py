"""Series sources and windowing.

Synthetic series are trend + sinusoids + noise with injected, logged
rare events (spikes and level shifts). CSV ingestion follows the
hourly-benchmark layout: a ``date`` column followed by numeric
channels. Windowing z-scores with train-split statistics only and
slides stride-1 (by default) input/target pairs with no look-ahead.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, asdict
from datetime import datetime, timedelta

import numpy as np

from .seeding import seed_stream

__all__ = ["DataError", "SeriesFrame", "SplitSpec", "SynthConfig",
           "WindowSplit", "WindowDataset", "synth_generate", "save_csv",
           "load_csv", "make_windows", "event_overlap_mask"]

logger = logging.getLogger(__name__)

NAN_MARKERS = {"", "nan", "NaN", "NAN", "null", "NULL"}


class DataError(ValueError):
    pass


@dataclass
class SeriesFrame:
    values: np.ndarray                  # [T, C] float64
    columns: list
    timestamps: list | None = None      # ISO-8601 strings, optional
    n_rejected: int = 0                 # NaN rows dropped at ingestion

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass
class SplitSpec:
    """Chronological core row ranges; strictly ordered, non-overlapping.

    Window extraction extends the val/test segments back by the
    look-back length so no forecast origin is lost at a boundary
    (inputs may reach into the previous split, targets never do).
    """

    train: tuple
    val: tuple
    test: tuple

    def validate(self, total_rows: int) -> "SplitSpec":
        segs = [self.train, self.val, self.test]
        prev_stop = 0
        for name, (start, stop) in zip(("train", "val", "test"), segs):
            if start < prev_stop or stop < start or stop > total_rows:
                raise DataError(f"split segment {name}=({start}, {stop}) invalid for T={total_rows}")
            prev_stop = stop if stop > start else prev_stop
        if not (self.train[1] > self.train[0]):
            raise DataError("train segment must be non-empty")
        return self

    @classmethod
    def fractional(cls, total_rows: int, train_frac: float = 0.7,
                   val_frac: float = 0.1) -> "SplitSpec":
        train_stop = int(total_rows * train_frac)
        val_stop = train_stop + int(total_rows * val_frac)
        return cls((0, train_stop), (train_stop, val_stop), (val_stop, total_rows))

    @classmethod
    def ett_hourly(cls, total_rows: int = 14400) -> "SplitSpec":
        """Month-based hourly benchmark convention: 12 months train,
        4 months val, 4 months test (720 rows per month)."""
        month = 30 * 24
        if total_rows < 20 * month:
            raise DataError(f"ett_hourly split needs at least {20 * month} rows, got {total_rows}")
        return cls((0, 12 * month), (12 * month, 16 * month), (16 * month, 20 * month))

    @classmethod
    def single(cls, total_rows: int) -> "SplitSpec":
        return cls((0, total_rows), (total_rows, total_rows), (total_rows, total_rows))

    def segments_with_lookback(self, look_back: int):
        """Row ranges actually windowed: val/test reach back look_back rows."""
        out = {"train": self.train}
        for name, (start, stop) in (("val", self.val), ("test", self.test)):
            out[name] = (max(start - look_back, 0), stop)
        return out

    def origin_counts(self, look_back: int) -> tuple:
        """Forecast-origin counts per split (segment rows - look_back + 1),
        the sizes quoted for the hourly benchmarks."""
        segs = self.segments_with_lookback(look_back)
        counts = []
        for name in ("train", "val", "test"):
            start, stop = segs[name]
            counts.append(max(stop - start - look_back + 1, 0))
        return tuple(counts)


@dataclass
class SynthConfig:
    length: int = 10_000                                  # T
    channels: int = 3                                     # C
    trend_slope_range: tuple = (-5e-4, 5e-4)              # per step
    seasonal: list = field(default_factory=lambda: [(1.0, 96.0), (0.5, 24.0)])
    noise_std: float = 0.1
    event_rate_per_1000: float = 5.0
    event_magnitude_range: tuple = (1.5, 3.0)
    event_duration_range: tuple = (3, 12)
    seed: int = 0

    def validate(self) -> "SynthConfig":
        if self.length < 2 or self.channels < 1:
            raise DataError("synthetic series needs length >= 2 and channels >= 1")
        if self.event_rate_per_1000 < 0:
            raise DataError("event rate must be nonnegative")
        if self.event_duration_range[0] < 1:
            raise DataError("event durations must be >= 1")
        if self.noise_std < 0:
            raise DataError("noise std must be nonnegative")
        for amp, period in self.seasonal:
            if period <= 0:
                raise DataError("seasonal periods must be positive")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trend_slope_range"] = list(d["trend_slope_range"])
        d["event_magnitude_range"] = list(d["event_magnitude_range"])
        d["event_duration_range"] = list(d["event_duration_range"])
        d["seasonal"] = [list(s) for s in d["seasonal"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for key in ("trend_slope_range", "event_magnitude_range", "event_duration_range"):
            if key in d:
                d[key] = tuple(d[key])
        if "seasonal" in d:
            d["seasonal"] = [tuple(s) for s in d["seasonal"]]
        return cls(**d)


def synth_generate(cfg: SynthConfig):
    """Build the synthetic frame and its event log.

    Channels share the configured seasonal components at channel-offset
    phases (2*pi*c/C, so channel 0 is the exact closed form) and draw
    their own trend slopes. Event count is Poisson(rate * T / 1000);
    each event lands on one channel. Deterministic per seed.
    """
    cfg.validate()
    rng = seed_stream(cfg.seed, "synth")
    t = np.arange(cfg.length, dtype=np.float64)
    values = np.zeros((cfg.length, cfg.channels))

    for c in range(cfg.channels):
        slope = rng.uniform(*cfg.trend_slope_range)
        values[:, c] += slope * t
        phase = 2.0 * np.pi * c / cfg.channels
        for amp, period in cfg.seasonal:
            values[:, c] += amp * np.sin(2.0 * np.pi * t / period + phase)

    if cfg.noise_std > 0:
        values += rng.normal(0.0, cfg.noise_std, size=values.shape)

    events = []
    n_events = int(rng.poisson(cfg.event_rate_per_1000 * cfg.length / 1000.0))
    for _ in range(n_events):
        kind = "spike" if rng.random() < 0.5 else "level_shift"
        channel = int(rng.integers(cfg.channels))
        duration = int(rng.integers(cfg.event_duration_range[0],
                                    cfg.event_duration_range[1] + 1))
        duration = min(duration, cfg.length - 1)
        start = int(rng.integers(0, cfg.length - duration))
        magnitude = float(rng.uniform(*cfg.event_magnitude_range))
        if rng.random() < 0.5:
            magnitude = -magnitude
        if kind == "spike":
            values[start:start + duration, channel] += magnitude
        else:
            ramp = magnitude * np.arange(1, duration + 1) / duration
            values[start:start + duration, channel] += ramp
            values[start + duration:, channel] += magnitude
        events.append({"kind": kind, "channel": channel, "start": start,
                       "duration": duration, "magnitude": magnitude})

    start_dt = datetime(2020, 1, 1)
    stamps = [(start_dt + timedelta(hours=i)).isoformat(sep=" ") for i in range(cfg.length)]
    frame = SeriesFrame(values=values, columns=[f"ch{c}" for c in range(cfg.channels)],
                        timestamps=stamps)
    return frame, events


def save_csv(frame: SeriesFrame, path) -> None:
    """Benchmark-layout CSV; floats via repr so the round trip is
    bitwise lossless."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(frame.columns))
        stamps = frame.timestamps or [str(i) for i in range(frame.length)]
        for i in range(frame.length):
            writer.writerow([stamps[i]] + [repr(float(v)) for v in frame.values[i]])


def load_csv(path, target_columns=None) -> SeriesFrame:
    """Read a date + numeric-channels CSV. NaN-marked rows are dropped
    (count reported); any other unparseable cell is an error naming its
    0-based data row and absolute column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, missing header") from None
        if not header or header[0].strip().lower() != "date":
            raise DataError(f"{path}: first header column must be 'date', got {header[:1]}")
        all_columns = [c.strip() for c in header[1:]]
        if target_columns is None:
            keep = list(range(len(all_columns)))
        else:
            missing = [c for c in target_columns if c not in all_columns]
            if missing:
                raise DataError(f"{path}: columns not found: {missing}")
            keep = [all_columns.index(c) for c in target_columns]

        rows, stamps = [], []
        n_rejected = 0
        for data_row, cells in enumerate(reader):
            if len(cells) != len(header):
                raise DataError(
                    f"{path}: row {data_row} has {len(cells)} cells, expected {len(header)}")
            parsed = np.empty(len(keep))
            reject = False
            for out_i, col_i in enumerate(keep):
                cell = cells[col_i + 1].strip()
                if cell in NAN_MARKERS:
                    reject = True
                    break
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: unparseable numeric cell at row {data_row}, "
                        f"column {col_i + 1}: {cell!r}") from None
                if np.isnan(value):
                    reject = True
                    break
                parsed[out_i] = value
            if reject:
                n_rejected += 1
                continue
            rows.append(parsed)
            stamps.append(cells[0])

    if not rows:
        raise DataError(f"{path}: no usable data rows")
    if n_rejected:
        logger.info("%s: rejected %d rows containing NaN", path, n_rejected)
    columns = [all_columns[i] for i in keep]
    return SeriesFrame(values=np.vstack(rows), columns=columns,
                       timestamps=stamps, n_rejected=n_rejected)


@dataclass
class WindowSplit:
    inputs: np.ndarray        # [n, L_p, C], z-scored
    targets: np.ndarray       # [n, H, C], z-scored
    start_rows: np.ndarray    # absolute row index of each window start

    def __len__(self):
        return self.inputs.shape[0]


@dataclass
class WindowDataset:
    look_back: int
    horizon: int
    channel_mean: np.ndarray  # train-split statistics, per channel
    channel_std: np.ndarray
    splits: dict              # name -> WindowSplit

    def denormalize(self, z_values: np.ndarray) -> np.ndarray:
        return z_values * self.channel_std + self.channel_mean

    def split(self, name: str) -> WindowSplit:
        return self.splits[name]


def make_windows(frame: SeriesFrame, split: SplitSpec, look_back: int,
                 horizon: int, stride: int = 1) -> WindowDataset:
    """Slide (input, target) pairs over each split segment.

    Normalization statistics come from train core rows only; a sample's
    target rows always start strictly after its input rows end.
    """
    if look_back < 2 or horizon < 1 or stride < 1:
        raise DataError("need look_back >= 2, horizon >= 1, stride >= 1")
    split.validate(frame.length)
    if frame.length < look_back + horizon:
        raise DataError(
            f"series length {frame.length} shorter than look_back + horizon = {look_back + horizon}")

    train_rows = frame.values[split.train[0]:split.train[1]]
    mean = train_rows.mean(axis=0)
    std = np.maximum(train_rows.std(axis=0), 1e-8)
    normalized = (frame.values - mean) / std

    segments = split.segments_with_lookback(look_back)
    out = {}
    for name, (start, stop) in segments.items():
        seg = normalized[start:stop]
        max_origin = seg.shape[0] - look_back - horizon
        if max_origin < 0:
            if name == "train":
                raise DataError(
                    f"train segment of {seg.shape[0]} rows cannot fit look_back + horizon")
            out[name] = WindowSplit(
                inputs=np.empty((0, look_back, frame.channels)),
                targets=np.empty((0, horizon, frame.channels)),
                start_rows=np.empty(0, dtype=np.intp))
            continue
        origins = np.arange(0, max_origin + 1, stride)
        inputs = np.stack([seg[o:o + look_back] for o in origins])
        targets = np.stack([seg[o + look_back:o + look_back + horizon] for o in origins])
        out[name] = WindowSplit(inputs=inputs, targets=targets,
                                start_rows=origins + start)
    return WindowDataset(look_back=look_back, horizon=horizon,
                         channel_mean=mean, channel_std=std, splits=out)


def event_overlap_mask(window_split: WindowSplit, events, look_back: int,
                       horizon: int, channels: int) -> np.ndarray:
    """Boolean [n, C]: does this sample's target range overlap a logged
    event on that channel? (Level shifts count their ramp interval.)"""
    n = len(window_split)
    mask = np.zeros((n, channels), dtype=bool)
    if not events:
        return mask
    t_start = window_split.start_rows + look_back
    t_stop = t_start + horizon
    for ev in events:
        ch = ev["channel"]
        ev_start, ev_stop = ev["start"], ev["start"] + ev["duration"]
        hit = (t_start < ev_stop) & (t_stop > ev_start)
        mask[hit, ch] = True
    return mask

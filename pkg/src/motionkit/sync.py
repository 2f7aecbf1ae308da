"""Temporal alignment of sensor streams and event-stream processing.

Streams are synchronized by detecting the height spike of an in-place jump in
each sensor's own clock and matching the peak times. Event streams are framed
into right-closed intervals, denoised by a spatio-temporal neighbor test, and
accumulated into signed count images.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.signal import find_peaks

from .errors import SyncFailureError, ValidationError

DEFAULT_PEAK_PROMINENCE = 0.3  # meters; a jump apex clears standing sway
DEFAULT_MATCH_WINDOW = 0.5     # seconds; greedy peak pairing window
DEFAULT_DENOISE_RADIUS = 1     # pixels (Chebyshev)
DEFAULT_DENOISE_WINDOW = 0.005  # seconds


@dataclass(frozen=True)
class SampledSeries:
    """Scalar samples on strictly increasing timestamps (seconds)."""

    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.ndim != 1 or t.shape != v.shape:
            raise ValidationError("timestamps and values must be equal-length 1-D arrays")
        if t.size == 0:
            raise ValidationError("series is empty")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValidationError("series contains non-finite entries")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValidationError("timestamps must be strictly increasing")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.timestamps.size

    def shifted(self, dt: float) -> "SampledSeries":
        return SampledSeries(self.timestamps + dt, self.values)


class Event(NamedTuple):
    """Single event: time (s), pixel coordinates, polarity (+1 or -1)."""

    t: float
    x: int
    y: int
    polarity: int


def _check_event(e: Event) -> None:
    if e.polarity not in (1, -1):
        raise ValidationError(f"event polarity must be +1 or -1, got {e.polarity}")


@dataclass(frozen=True)
class EventFrame:
    """Events with timestamps in the right-closed interval (t_start, t_end]."""

    t_start: float
    t_end: float
    events: tuple[Event, ...]

    def __post_init__(self):
        if not (self.t_end > self.t_start):
            raise ValidationError("event frame interval must have positive length")
        events = tuple(self.events)
        for e in events:
            _check_event(e)
            if not (self.t_start < e.t <= self.t_end):
                raise ValidationError(
                    f"event at t={e.t} outside frame interval ({self.t_start}, {self.t_end}]"
                )
        object.__setattr__(self, "events", events)

    def __len__(self) -> int:
        return len(self.events)


# ---------------------------------------------------------------------------
# Peak detection and offset estimation
# ---------------------------------------------------------------------------


def detect_jump_peaks(series: SampledSeries, min_prominence: float = DEFAULT_PEAK_PROMINENCE) -> np.ndarray:
    """Times of local maxima whose topographic prominence clears the threshold.

    Plateau ties resolve to the earliest sample of the plateau.
    """
    if len(series) < 3:
        raise ValidationError("need at least 3 samples for peak detection")
    _, props = find_peaks(series.values, prominence=min_prominence, plateau_size=(1, None))
    idx = props["left_edges"]
    return series.timestamps[idx]


def estimate_offset(
    a: SampledSeries,
    b: SampledSeries,
    min_prominence: float = DEFAULT_PEAK_PROMINENCE,
    match_window: float = DEFAULT_MATCH_WINDOW,
) -> float:
    """Clock offset to add to b's timestamps so its peaks align with a's.

    The first peaks of each stream give a coarse offset; remaining peaks are
    greedily matched within ``match_window`` of that alignment and the mean
    matched difference is returned.
    """
    peaks_a = detect_jump_peaks(a, min_prominence)
    peaks_b = detect_jump_peaks(b, min_prominence)
    if peaks_a.size == 0:
        raise SyncFailureError("a", "no jump peak found in reference stream")
    if peaks_b.size == 0:
        raise SyncFailureError("b", "no jump peak found in stream to align")

    coarse = peaks_a[0] - peaks_b[0]
    diffs = []
    used = np.zeros(peaks_b.size, dtype=bool)
    for ta in peaks_a:
        residual = np.abs(ta - (peaks_b + coarse))
        residual[used] = np.inf
        j = int(np.argmin(residual))
        if residual[j] <= match_window:
            used[j] = True
            diffs.append(ta - peaks_b[j])
    if not diffs:
        # First peaks always pair under the coarse alignment.
        diffs = [coarse]
    return float(np.mean(diffs))


def resample(series: SampledSeries, target_rate: float) -> SampledSeries:
    """Linear interpolation onto a uniform grid starting at the first timestamp."""
    if not (target_rate > 0):
        raise ValidationError("target_rate must be positive")
    t = series.timestamps
    span = t[-1] - t[0]
    if span < 1.0 / target_rate:
        raise ValidationError("series shorter than one target period")
    n = int(np.floor(span * target_rate + 1e-9)) + 1
    grid = t[0] + np.arange(n) / target_rate
    values = np.interp(grid, t, series.values)
    return SampledSeries(grid, values)


# ---------------------------------------------------------------------------
# Event framing, denoising, accumulation
# ---------------------------------------------------------------------------


def frame_events(
    stream: Sequence[Event], boundaries: Sequence[float]
) -> tuple[list[EventFrame], int]:
    """Partition a time-ordered stream into frames over (b[i-1], b[i]] intervals.

    Returns the frames plus the count of events dropped outside the boundary
    span. An event exactly on a boundary belongs to the earlier frame.
    """
    bounds = np.asarray(boundaries, dtype=np.float64)
    if bounds.ndim != 1 or bounds.size < 2:
        raise ValidationError("need at least 2 boundaries")
    if np.any(np.diff(bounds) <= 0):
        raise ValidationError("boundaries must be strictly increasing")
    times = np.asarray([e.t for e in stream], dtype=np.float64)
    if times.size > 1 and np.any(np.diff(times) < 0):
        raise ValidationError("event stream must be time-ordered")

    buckets: list[list[Event]] = [[] for _ in range(bounds.size - 1)]
    dropped = 0
    if times.size:
        idx = np.searchsorted(bounds, times, side="left")
        for e, k in zip(stream, idx):
            if 1 <= k <= bounds.size - 1:
                buckets[k - 1].append(e)
            else:
                dropped += 1
    frames = [
        EventFrame(float(bounds[i]), float(bounds[i + 1]), tuple(buckets[i]))
        for i in range(bounds.size - 1)
    ]
    return frames, dropped


def denoise_events(
    frame: EventFrame,
    spatial_radius: int = DEFAULT_DENOISE_RADIUS,
    time_window: float = DEFAULT_DENOISE_WINDOW,
) -> EventFrame:
    """Keep events that have a neighbor within the pixel radius and time window.

    Neighborhood test: another event with Chebyshev pixel distance at most
    ``spatial_radius`` and absolute time difference at most ``time_window``.
    Isolated events are dropped; order is preserved.
    """
    if spatial_radius < 0 or time_window < 0:
        raise ValidationError("radius and window must be non-negative")
    events = frame.events
    n = len(events)
    if n == 0:
        return frame
    order = np.argsort([e.t for e in events], kind="stable")
    ts = np.asarray([events[i].t for i in order])
    xs = np.asarray([events[i].x for i in order])
    ys = np.asarray([events[i].y for i in order])
    keep_sorted = np.zeros(n, dtype=bool)
    lo = 0
    for i in range(n):
        while ts[i] - ts[lo] > time_window:
            lo += 1
        if keep_sorted[i]:
            continue
        for j in range(lo, n):
            if j == i:
                continue
            if ts[j] - ts[i] > time_window:
                break
            if max(abs(xs[j] - xs[i]), abs(ys[j] - ys[i])) <= spatial_radius:
                keep_sorted[i] = True
                keep_sorted[j] = True  # the relation is symmetric
                break
    keep = np.zeros(n, dtype=bool)
    keep[order] = keep_sorted
    kept = tuple(e for e, k in zip(events, keep) if k)
    return EventFrame(frame.t_start, frame.t_end, kept)


def accumulate_event_image(frame: EventFrame, width: int, height: int) -> np.ndarray:
    """Signed per-pixel polarity sums as an int64 image of shape (height, width)."""
    image = np.zeros((height, width), dtype=np.int64)
    for e in frame.events:
        if not (0 <= e.x < width and 0 <= e.y < height):
            raise ValidationError(f"event at ({e.x}, {e.y}) outside {width}x{height} sensor")
        image[e.y, e.x] += e.polarity
    return image


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def write_series_csv(series: SampledSeries, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "value"])
        for t, v in zip(series.timestamps, series.values):
            writer.writerow([repr(float(t)), repr(float(v))])


def read_series_csv(path: str | Path) -> SampledSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["t", "value"]:
            raise ValidationError(f"{path}: expected 't,value' header")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    if not rows:
        raise ValidationError(f"{path}: no samples")
    arr = np.asarray(rows)
    return SampledSeries(arr[:, 0], arr[:, 1])


def write_events_csv(events: Sequence[Event], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "polarity"])
        for e in events:
            writer.writerow([repr(float(e.t)), e.x, e.y, e.polarity])


def read_events_csv(path: str | Path) -> list[Event]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:4]] != ["t", "x", "y", "polarity"]:
            raise ValidationError(f"{path}: expected 't,x,y,polarity' header")
        out = []
        for r in reader:
            if not r:
                continue
            e = Event(float(r[0]), int(r[1]), int(r[2]), int(r[3]))
            _check_event(e)
            out.append(e)
    return out

import numpy as np
import pytest

from motionkit.errors import SyncFailureError, ValidationError
from motionkit.sync import (
    Event,
    EventFrame,
    SampledSeries,
    accumulate_event_image,
    denoise_events,
    detect_jump_peaks,
    estimate_offset,
    frame_events,
    read_events_csv,
    read_series_csv,
    resample,
    write_events_csv,
    write_series_csv,
)


def bump_series(rate=60.0, duration=5.0, apex=2.0, height=0.4, base=0.9, width=0.15, noise=0.0, seed=0):
    t = np.arange(int(duration * rate)) / rate
    v = base + height * np.exp(-((t - apex) ** 2) / (2 * width**2))
    if noise:
        v = v + np.random.default_rng(seed).normal(0.0, noise, t.size)
    return SampledSeries(t, v)


class TestPeaks:
    def test_single_bump(self):
        peaks = detect_jump_peaks(bump_series(), 0.3)
        assert len(peaks) == 1
        assert peaks[0] == pytest.approx(2.0, abs=1e-9)

    def test_two_bumps(self):
        t = np.arange(300) / 60.0
        v = 0.9 + 0.4 * np.exp(-((t - 1.0) ** 2) / 0.02) + 0.4 * np.exp(-((t - 4.0) ** 2) / 0.02)
        peaks = detect_jump_peaks(SampledSeries(t, v), 0.3)
        assert np.allclose(peaks, [1.0, 4.0], atol=1e-9)

    def test_noisy_apex_within_one_sample(self):
        # Narrow bump so the per-sample drop near the apex dominates the noise.
        series = bump_series(width=0.05, noise=0.01, seed=3)
        peaks = detect_jump_peaks(series, 0.3)
        assert len(peaks) >= 1
        best = peaks[np.argmin(np.abs(peaks - 2.0))]
        assert abs(best - 2.0) <= 1.0 / 60.0

    def test_plateau_resolves_to_earliest_sample(self):
        t = np.arange(9) / 1.0
        v = np.array([0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
        peaks = detect_jump_peaks(SampledSeries(t, v), 0.5)
        assert list(peaks) == [2.0]

    def test_too_short_rejected(self):
        with pytest.raises(ValidationError):
            detect_jump_peaks(SampledSeries(np.array([0.0, 1.0]), np.array([0.0, 1.0])), 0.1)


class TestOffset:
    def test_constructed_shift(self):
        a = bump_series()
        b = SampledSeries(a.timestamps - 0.35, a.values)  # b's clock runs 0.35s early
        dt = estimate_offset(a, b)
        assert dt == pytest.approx(0.35, abs=0.5 / 60.0)

    def test_identical_series(self):
        a = bump_series()
        assert estimate_offset(a, a) == pytest.approx(0.0, abs=1e-12)

    def test_multirate_shift(self):
        a = bump_series(rate=60.0)
        b60 = bump_series(rate=20.0)
        b = SampledSeries(b60.timestamps - 0.15, b60.values)
        dt = estimate_offset(a, b)
        assert dt == pytest.approx(0.15, abs=0.025)

    def test_antisymmetry(self):
        a = bump_series(rate=60.0)
        b = SampledSeries(bump_series(rate=20.0).timestamps + 0.2, bump_series(rate=20.0).values)
        assert estimate_offset(a, b) == pytest.approx(-estimate_offset(b, a), abs=1.0 / 20.0)

    def test_no_peak_raises_with_stream(self):
        flat = SampledSeries(np.arange(10) / 10.0, np.full(10, 0.9))
        good = bump_series()
        with pytest.raises(SyncFailureError) as exc:
            estimate_offset(good, flat)
        assert exc.value.stream == "b"
        with pytest.raises(SyncFailureError) as exc:
            estimate_offset(flat, good)
        assert exc.value.stream == "a"


class TestResample:
    def test_linear_ramp_exact(self):
        t = np.arange(120) / 60.0
        series = SampledSeries(t, t.copy())
        out = resample(series, 20.0)
        assert out.timestamps[0] == t[0]
        assert np.allclose(np.diff(out.timestamps), 0.05, atol=1e-12)
        assert np.allclose(out.values, out.timestamps, atol=1e-12)

    def test_constant(self):
        series = SampledSeries(np.arange(30) / 10.0, np.full(30, 2.5))
        out = resample(series, 7.0)
        assert np.all(out.values == 2.5)

    def test_sinusoid_interpolation_bound(self):
        rate_in, rate_out, freq = 60.0, 20.0, 2.0
        t = np.arange(int(3 * rate_in)) / rate_in
        series = SampledSeries(t, np.sin(2 * np.pi * freq * t))
        out = resample(series, rate_out)
        expected = np.sin(2 * np.pi * freq * out.timestamps)
        # Linear interpolation error bound for a sinusoid sampled at rate_in.
        bound = (np.pi * freq / rate_in) ** 2
        assert np.max(np.abs(out.values - expected)) <= bound

    def test_idempotent_on_uniform_grid(self):
        rng = np.random.default_rng(4)
        t = np.arange(50) / 20.0
        v = rng.normal(size=50)
        series = SampledSeries(t, v)
        out = resample(series, 20.0)
        assert np.array_equal(out.values, v)
        assert np.array_equal(out.timestamps, t)

    def test_too_short_span(self):
        series = SampledSeries(np.array([0.0, 0.01, 0.02]), np.zeros(3))
        with pytest.raises(ValidationError):
            resample(series, 1.0)


class TestFrameEvents:
    def test_basic_partition(self):
        stream = [Event(0.01, 0, 0, 1), Event(0.04, 1, 1, -1), Event(0.06, 2, 2, 1)]
        frames, dropped = frame_events(stream, [0.0, 0.05, 0.10])
        assert [len(f) for f in frames] == [2, 1]
        assert dropped == 0

    def test_boundary_event_belongs_left(self):
        stream = [Event(0.05, 0, 0, 1)]
        frames, dropped = frame_events(stream, [0.0, 0.05, 0.10])
        assert len(frames[0]) == 1
        assert len(frames[1]) == 0

    def test_empty_stream(self):
        frames, dropped = frame_events([], [0.0, 1.0, 2.0])
        assert [len(f) for f in frames] == [0, 0]
        assert dropped == 0

    def test_partition_invariant(self):
        rng = np.random.default_rng(5)
        stream = [Event(float(t), 0, 0, 1) for t in np.sort(rng.uniform(-0.5, 3.5, 200))]
        bounds = [0.0, 0.5, 1.0, 2.0, 3.0]
        frames, dropped = frame_events(stream, bounds)
        assert sum(len(f) for f in frames) + dropped == len(stream)
        seen = set()
        for f in frames:
            for e in f.events:
                assert e not in seen or seen.add(e)
                seen.add(e)

    def test_unsorted_rejected(self):
        with pytest.raises(ValidationError):
            frame_events([Event(1.0, 0, 0, 1), Event(0.5, 0, 0, 1)], [0.0, 2.0])
        with pytest.raises(ValidationError):
            frame_events([], [0.0, 0.0, 1.0])


class TestDenoise:
    def frame(self, events):
        return EventFrame(0.0, 1.0, tuple(events))

    def test_isolated_event_removed(self):
        out = denoise_events(self.frame([Event(0.5, 10, 10, 1)]), 1, 0.005)
        assert len(out) == 0

    def test_adjacent_pair_kept(self):
        ev = [Event(0.500, 10, 10, 1), Event(0.501, 11, 10, -1)]
        out = denoise_events(self.frame(ev), 1, 0.005)
        assert len(out) == 2

    def test_cluster_plus_outlier(self):
        rng = np.random.default_rng(6)
        cluster = [
            Event(0.5 + 0.0001 * i, 20 + int(rng.integers(0, 2)), 30 + int(rng.integers(0, 2)), 1)
            for i in range(10)
        ]
        outlier = Event(0.5005, 70, 30, 1)
        out = denoise_events(self.frame(cluster + [outlier]), 1, 0.005)
        assert outlier not in out.events
        assert len(out) == 10
        # Brute-force neighbor-count oracle agrees.
        events = cluster + [outlier]
        for e in events:
            has_neighbor = any(
                o is not e and max(abs(o.x - e.x), abs(o.y - e.y)) <= 1 and abs(o.t - e.t) <= 0.005
                for o in events
            )
            assert (e in out.events) == has_neighbor

    def test_monotone_in_radius_and_window(self):
        rng = np.random.default_rng(7)
        events = [
            Event(float(t), int(x), int(y), 1)
            for t, x, y in zip(
                np.sort(rng.uniform(0, 1, 60)),
                rng.integers(0, 30, 60),
                rng.integers(0, 30, 60),
            )
        ]
        frame = self.frame(events)
        base = set(denoise_events(frame, 1, 0.01).events)
        wider = set(denoise_events(frame, 2, 0.01).events)
        longer = set(denoise_events(frame, 1, 0.05).events)
        assert base <= wider
        assert base <= longer

    def test_order_preserved(self):
        ev = [Event(0.1, 0, 0, 1), Event(0.1001, 0, 1, 1), Event(0.2, 5, 5, 1), Event(0.2001, 5, 6, 1)]
        out = denoise_events(self.frame(ev), 1, 0.005)
        assert list(out.events) == ev


class TestAccumulate:
    def frame(self, events):
        return EventFrame(0.0, 1.0, tuple(events))

    def test_single_event(self):
        img = accumulate_event_image(self.frame([Event(0.1, 3, 4, 1)]), 8, 8)
        assert img[4, 3] == 1
        assert img.sum() == 1

    def test_cancellation(self):
        img = accumulate_event_image(
            self.frame([Event(0.1, 3, 4, 1), Event(0.2, 3, 4, -1)]), 8, 8
        )
        assert img[4, 3] == 0
        assert np.all(img == 0)

    def test_random_tally_oracle(self):
        rng = np.random.default_rng(8)
        events = [
            Event(float(t), int(x), int(y), int(p))
            for t, x, y, p in zip(
                np.sort(rng.uniform(0, 1, 100)),
                rng.integers(0, 16, 100),
                rng.integers(0, 12, 100),
                rng.choice([-1, 1], 100),
            )
        ]
        img = accumulate_event_image(self.frame(events), 16, 12)
        expected = np.zeros((12, 16), dtype=np.int64)
        for e in events:
            expected[e.y, e.x] += e.polarity
        assert np.array_equal(img, expected)

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValidationError):
            accumulate_event_image(self.frame([Event(0.1, 20, 4, 1)]), 8, 8)


class TestEventFrameType:
    def test_interval_membership_enforced(self):
        with pytest.raises(ValidationError):
            EventFrame(0.0, 1.0, (Event(0.0, 0, 0, 1),))  # left-open boundary
        with pytest.raises(ValidationError):
            EventFrame(0.0, 1.0, (Event(1.5, 0, 0, 1),))
        EventFrame(0.0, 1.0, (Event(1.0, 0, 0, 1),))  # right-closed is fine

    def test_polarity_validated(self):
        with pytest.raises(ValidationError):
            EventFrame(0.0, 1.0, (Event(0.5, 0, 0, 2),))


class TestCsv:
    def test_series_roundtrip(self, tmp_path):
        series = bump_series(duration=1.0)
        path = tmp_path / "series.csv"
        write_series_csv(series, path)
        back = read_series_csv(path)
        assert np.array_equal(back.timestamps, series.timestamps)
        assert np.array_equal(back.values, series.values)

    def test_events_roundtrip(self, tmp_path):
        events = [Event(0.1, 3, 4, 1), Event(0.25, 7, 2, -1)]
        path = tmp_path / "events.csv"
        write_events_csv(events, path)
        assert read_events_csv(path) == events

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValidationError):
            read_series_csv(path)
        with pytest.raises(ValidationError):
            read_events_csv(path)

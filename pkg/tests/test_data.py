import json

import numpy as np
import pytest

from dpad.data import (
    DataError,
    SplitSpec,
    SynthConfig,
    event_overlap_mask,
    load_csv,
    make_windows,
    save_csv,
    synth_generate,
)


def test_synth_rate_zero_no_events():
    cfg = SynthConfig(length=500, channels=2, event_rate_per_1000=0.0, seed=1)
    frame, events = synth_generate(cfg)
    assert events == []
    assert frame.values.shape == (500, 2)


def test_synth_pure_sinusoid_closed_form():
    cfg = SynthConfig(length=300, channels=1, trend_slope_range=(0.0, 0.0),
                      seasonal=[(2.0, 50.0)], noise_std=0.0,
                      event_rate_per_1000=0.0, seed=2)
    frame, _ = synth_generate(cfg)
    t = np.arange(300)
    expected = 2.0 * np.sin(2 * np.pi * t / 50.0)
    assert np.allclose(frame.values[:, 0], expected, atol=1e-12)


def test_synth_event_count_poisson_bounds():
    # rate 5/1000 on T=10000 -> Poisson(50); +-3 sigma is [29, 71]
    cfg = SynthConfig(length=10_000, channels=3, event_rate_per_1000=5.0, seed=3)
    _, events = synth_generate(cfg)
    assert 29 <= len(events) <= 71
    for ev in events:
        assert ev["kind"] in ("spike", "level_shift")
        assert 0 <= ev["channel"] < 3
        assert ev["duration"] >= 1
        assert 0 <= ev["start"] < 10_000


def test_synth_deterministic_bitwise():
    cfg = SynthConfig(length=800, channels=2, seed=11)
    f1, e1 = synth_generate(cfg)
    f2, e2 = synth_generate(SynthConfig(length=800, channels=2, seed=11))
    assert np.array_equal(f1.values, f2.values)
    assert e1 == e2


def test_synth_csv_round_trip_bitwise(tmp_path):
    cfg = SynthConfig(length=200, channels=2, seed=4)
    frame, _ = synth_generate(cfg)
    path = tmp_path / "series.csv"
    save_csv(frame, path)
    again = load_csv(path)
    assert np.array_equal(again.values, frame.values)
    assert again.columns == frame.columns


def test_load_csv_small_wellformed(tmp_path):
    path = tmp_path / "ok.csv"
    path.write_text("date,a,b\n2020-01-01,1.5,2\n2020-01-02,2.5,3\n2020-01-03,3.5,4\n")
    frame = load_csv(path)
    assert frame.length == 3
    assert frame.channels == 2
    assert np.array_equal(frame.values[:, 0], [1.5, 2.5, 3.5])


def test_load_csv_bad_cell_names_row_and_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        "date,a,b,c\n"
        "2020-01-01,1,2,3\n"
        "2020-01-02,1,2,3\n"
        "2020-01-03,1,2,abc\n")
    with pytest.raises(DataError) as err:
        load_csv(path)
    assert "row 2" in str(err.value)
    assert "column 3" in str(err.value)


def test_load_csv_rejects_nan_rows_with_count(tmp_path):
    path = tmp_path / "nans.csv"
    path.write_text("date,a\n2020-01-01,1\n2020-01-02,nan\n2020-01-03,3\n2020-01-04,\n")
    frame = load_csv(path)
    assert frame.length == 2
    assert frame.n_rejected == 2


def test_load_csv_missing_header(tmp_path):
    path = tmp_path / "noheader.csv"
    path.write_text("2020-01-01,1,2\n")
    with pytest.raises(DataError):
        load_csv(path)


def test_load_csv_target_columns(tmp_path):
    path = tmp_path / "cols.csv"
    path.write_text("date,a,b,c\n2020-01-01,1,2,3\n2020-01-02,4,5,6\n")
    frame = load_csv(path, target_columns=["c", "a"])
    assert frame.columns == ["c", "a"]
    assert np.array_equal(frame.values, [[3, 1], [6, 4]])


def test_ett_split_arithmetic():
    # hourly benchmark convention on T=14400 with look-back 96
    split = SplitSpec.ett_hourly(14400)
    assert split.origin_counts(96) == (8545, 2881, 2881)


def test_window_count_trivial():
    cfg = SynthConfig(length=200, channels=1, seed=5)
    frame, _ = synth_generate(cfg)
    ds = make_windows(frame, SplitSpec.single(200), 96, 96)
    assert len(ds.split("train")) == 9  # 200 - 192 + 1


def test_window_count_stride_rounds_up():
    cfg = SynthConfig(length=200, channels=1, seed=6)
    frame, _ = synth_generate(cfg)
    ds = make_windows(frame, SplitSpec.single(200), 96, 96, stride=2)
    assert len(ds.split("train")) == 5  # ceil(9 / 2)


def test_window_counts_per_split_formula():
    cfg = SynthConfig(length=1000, channels=2, seed=7)
    frame, _ = synth_generate(cfg)
    split = SplitSpec.fractional(1000, 0.7, 0.1)
    look_back, horizon = 48, 24
    ds = make_windows(frame, split, look_back, horizon)
    segs = split.segments_with_lookback(look_back)
    for name in ("train", "val", "test"):
        seg_len = segs[name][1] - segs[name][0]
        assert len(ds.split(name)) == seg_len - look_back - horizon + 1


def test_train_statistics_only():
    cfg = SynthConfig(length=1200, channels=2, seed=8,
                      trend_slope_range=(4e-3, 5e-3))  # strong drift: splits differ
    frame, _ = synth_generate(cfg)
    split = SplitSpec.fractional(1200, 0.7, 0.1)
    ds = make_windows(frame, split, 24, 12)
    train_rows = (frame.values[:840] - ds.channel_mean) / ds.channel_std
    assert np.all(np.abs(train_rows.mean(axis=0)) < 1e-10)
    assert np.all(np.abs(train_rows.std(axis=0) - 1.0) < 1e-10)
    # validation windows keep a nonzero mean in general under drift
    val = ds.split("val")
    assert abs(val.inputs.mean()) > 0.05


def test_no_look_ahead_by_construction():
    cfg = SynthConfig(length=600, channels=1, seed=9)
    frame, _ = synth_generate(cfg)
    split = SplitSpec.fractional(600, 0.7, 0.1)
    look_back, horizon = 24, 12
    ds = make_windows(frame, split, look_back, horizon)
    for name in ("train", "val", "test"):
        ws = ds.split(name)
        for i in range(len(ws)):
            input_rows = np.arange(ws.start_rows[i], ws.start_rows[i] + look_back)
            target_rows = np.arange(ws.start_rows[i] + look_back,
                                    ws.start_rows[i] + look_back + horizon)
            assert target_rows.min() > input_rows.max()
    # target values must equal the source rows they claim to be
    ws = ds.split("test")
    normalized = (frame.values - ds.channel_mean) / ds.channel_std
    i = len(ws) // 2
    r = ws.start_rows[i]
    assert np.array_equal(ws.inputs[i], normalized[r:r + look_back])
    assert np.array_equal(ws.targets[i], normalized[r + look_back:r + look_back + horizon])


def test_window_reconstruction_lossless():
    cfg = SynthConfig(length=400, channels=1, seed=10)
    frame, _ = synth_generate(cfg)
    ds = make_windows(frame, SplitSpec.single(400), 32, 8)
    ws = ds.split("train")
    normalized = (frame.values - ds.channel_mean) / ds.channel_std
    rebuilt = np.concatenate([ws.inputs[i, :1, :] for i in range(len(ws))], axis=0)
    assert np.array_equal(rebuilt, normalized[: len(ws)])


def test_segment_too_short_raises():
    cfg = SynthConfig(length=100, channels=1, seed=12)
    frame, _ = synth_generate(cfg)
    with pytest.raises(DataError):
        make_windows(frame, SplitSpec.single(100), 96, 96)


def test_split_validation():
    with pytest.raises(DataError):
        SplitSpec((0, 500), (400, 600), (600, 1000)).validate(1000)  # overlap
    with pytest.raises(DataError):
        SplitSpec((0, 500), (500, 700), (700, 1200)).validate(1000)  # out of range


def test_event_overlap_mask():
    cfg = SynthConfig(length=400, channels=2, seed=13, event_rate_per_1000=0.0)
    frame, _ = synth_generate(cfg)
    ds = make_windows(frame, SplitSpec.single(400), 24, 12)
    ws = ds.split("train")
    events = [{"kind": "spike", "channel": 1, "start": 100, "duration": 5, "magnitude": 2.0}]
    mask = event_overlap_mask(ws, events, 24, 12, 2)
    assert mask.shape == (len(ws), 2)
    assert not mask[:, 0].any()
    # target range of window starting at row r is [r+24, r+36); overlap with [100, 105)
    hits = np.where(mask[:, 1])[0]
    expected = [i for i in range(len(ws)) if i + 24 < 105 and i + 36 > 100]
    assert list(hits) == expected


def test_events_json_serializable():
    cfg = SynthConfig(length=2000, channels=2, seed=14)
    _, events = synth_generate(cfg)
    blob = json.dumps(events)
    assert json.loads(blob) == events

import numpy as np
import pytest

from myoadapt.dataset import (DeltaSession, ShiftConfig, SplitPlan, enumerate_day_orders,
                              expected_rows, generate_synthetic, load_frames, load_session,
                              make_splits, preprocess_session, write_frames, write_session)
from myoadapt.errors import DataFormatError
from myoadapt.evaluation import run_batch_protocol, run_incremental_protocol


def write_rows(path, rows):
    path.write_text("\n".join(",".join(str(v) for v in r) for r in rows) + "\n")


def tiny_session(n_channels=64, rep_samples=4, reps=2, classes=7):
    labels = np.repeat(np.arange(classes), reps * rep_samples)
    emg = np.arange(labels.size * n_channels).reshape(labels.size, n_channels) % 97 - 48
    return np.column_stack([emg, labels])


def test_row_count_formula():
    assert expected_rows() == 2000 * 10 * 2 * 7 == 280000


def test_complete_session_roundtrip(tmp_path):
    session = generate_synthetic(ShiftConfig(sessions=1, seed=1))[0]
    assert session.data.shape == (280000, 65)
    path = tmp_path / "day1.csv"
    write_session(path, session)
    loaded = load_session(path)
    np.testing.assert_array_equal(loaded.data, session.data)
    assert loaded.reps == 10 and loaded.day == 1 and loaded.rep_samples == 4000
    path2 = tmp_path / "again.csv"
    write_session(path2, loaded)
    assert path2.read_bytes() == path.read_bytes()


def test_float_session_roundtrip(tmp_path, rng):
    data = tiny_session().astype(float)
    data[:, :-1] += rng.normal(size=(data.shape[0], 64))
    session = DeltaSession(data, rep_seconds=4 / 2000)
    write_session(tmp_path / "a.csv", session)
    back = load_session(tmp_path / "a.csv")
    np.testing.assert_array_equal(back.data, data)
    write_session(tmp_path / "b.csv", back)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_wrong_column_count(tmp_path):
    rows = np.column_stack([tiny_session(), np.zeros(56)]).astype(int)
    write_rows(tmp_path / "s.csv", rows)
    with pytest.raises(DataFormatError, match="66|column"):
        load_session(tmp_path / "s.csv")


def test_ragged_row_reports_index(tmp_path):
    rows = [list(r) for r in tiny_session().astype(int)]
    rows[9].append(0)
    write_rows(tmp_path / "s.csv", rows)
    with pytest.raises(DataFormatError) as exc:
        load_session(tmp_path / "s.csv")
    assert exc.value.row == 9


def test_truncated_row_reports_index(tmp_path):
    rows = [list(r) for r in tiny_session().astype(int)]
    rows[5] = rows[5][:30]
    write_rows(tmp_path / "s.csv", rows)
    with pytest.raises(DataFormatError) as exc:
        load_session(tmp_path / "s.csv")
    assert exc.value.row == 5


def test_label_out_of_range(tmp_path):
    rows = tiny_session().astype(int)
    rows[3, -1] = 7
    write_rows(tmp_path / "s.csv", rows)
    with pytest.raises(DataFormatError, match="label") as exc:
        load_session(tmp_path / "s.csv")
    assert exc.value.row == 3


def test_decoder_hook(tmp_path):
    data = tiny_session()
    (tmp_path / "x.bin").write_bytes(b"")
    (tmp_path / "x.bin.meta").write_text("rep_seconds=0.002\nday=4\n")
    session = load_session(tmp_path / "x.bin", decoder=lambda p: data)
    assert session.day == 4 and session.reps == 2


def test_blocks_are_positional():
    session = DeltaSession(tiny_session().astype(float), rep_seconds=4 / 2000)
    blocks = session.blocks()
    assert len(blocks) == 14
    assert blocks[0] == (0, 0, 0, 4) and blocks[1] == (0, 1, 4, 8) and blocks[2][:2] == (1, 0)


# -- frames and splits ------------------------------------------------------------

def test_frames_per_repetition(short_sessions):
    frames, extrema = preprocess_session(short_sessions[0])
    # 0.5 s repetitions at 2 kHz: floor((1000 - 400) / 100) + 1
    counts = np.unique(frames.y * 100 + frames.rep, return_counts=True)[1]
    assert np.all(counts == 7)
    assert frames.X.min() == 0.0 and frames.X.max() == 1.0


def test_frames_roundtrip(tmp_path, short_frames):
    write_frames(tmp_path / "f.frames.csv", short_frames[1])
    back = load_frames(tmp_path / "f.frames.csv")
    np.testing.assert_array_equal(back.X, short_frames[1].X)
    np.testing.assert_array_equal(back.rep, short_frames[1].rep)
    assert back.day == 2


def _rep_set(fs):
    return set(zip(fs.y.tolist(), fs.rep.tolist()))


def test_batch_splits(short_frames):
    splits = make_splits(short_frames, SplitPlan("batch"))
    day1 = splits[0]
    assert len(_rep_set(day1["train"])) == 2 * 3
    assert len(_rep_set(day1["test"])) == 8 * 3
    assert not _rep_set(day1["train"]) & _rep_set(day1["test"])
    assert set(splits[1]) == {"test"} and len(splits[1]["test"]) == len(short_frames[1])


def test_incremental_splits(short_frames):
    splits = make_splits(short_frames, SplitPlan("incremental"))
    for pos in (1, 2):
        up, test = splits[pos]["update"], splits[pos]["test"]
        assert len(_rep_set(up)) == 2 * 3 and len(_rep_set(test)) == 8 * 3
        assert _rep_set(up) | _rep_set(test) == _rep_set(short_frames[pos])
        assert not _rep_set(up) & _rep_set(test)


def test_update_split_is_28_seconds():
    # 2 repetitions x 7 gestures x 2 s
    plan = SplitPlan("incremental")
    assert len(plan.update_reps) * 7 * 2.0 == 28.0


# -- day orders -----------------------------------------------------------------------

def test_three_day_orders():
    orders = enumerate_day_orders([1, 2, 3])
    assert len(orders) == 6 and len(set(orders)) == 6
    assert all(sorted(o) == [1, 2, 3] for o in orders)


def test_six_day_orders():
    assert len(enumerate_day_orders(range(1, 7))) == 720


def test_subsample_deterministic():
    a = enumerate_day_orders(range(1, 7), limit=100, seed=3)
    b = enumerate_day_orders(range(1, 7), limit=100, seed=3)
    assert a == b and len(set(a)) == 100
    assert enumerate_day_orders(range(1, 7), limit=1) == [(1, 2, 3, 4, 5, 6)]


# -- generator --------------------------------------------------------------------------

def test_generator_is_deterministic(tmp_path):
    cfg = ShiftConfig(sessions=2, rep_seconds=0.5, rotation=0.5, seed=11)
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        for s in generate_synthetic(cfg):
            write_session(tmp_path / name / f"d{s.day}.csv", s)
    for d in (1, 2):
        assert (tmp_path / "a" / f"d{d}.csv").read_bytes() == \
            (tmp_path / "b" / f"d{d}.csv").read_bytes()


def test_shift_config_text_roundtrip():
    cfg = ShiftConfig(rotation=1.25, seed=9, sessions=4)
    assert ShiftConfig.from_text(cfg.to_text()) == cfg


def test_no_shift_batch_and_incremental_tie():
    diffs = []
    for seed in range(20):
        cfg = ShiftConfig(sessions=3, rep_seconds=1.0, seed=seed)
        frames = [preprocess_session(s)[0] for s in generate_synthetic(cfg)]
        b = run_batch_protocol(frames, "rlsc-incr", seed=seed)
        i = run_incremental_protocol(frames, "rlsc-incr", b.params, seed=seed)
        diffs.append(np.mean(i.accuracy[1:]) - np.mean(b.accuracy[1:]))
    assert abs(np.mean(diffs)) < 0.02

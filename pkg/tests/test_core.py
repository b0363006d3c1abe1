"""Core types, action encoding, pairing, and the stream log file format."""

from __future__ import annotations

import numpy as np
import pytest

from flowcast.core import (
    ActionCommand,
    ActionKind,
    FlowGrid,
    InputEncoding,
    LogHeader,
    Proprioception,
    SensorimotorFrame,
    StreamFormatError,
    StreamLog,
    atomic_write_text,
    cell_coordinates,
    encode_action,
    make_pairs,
    read_stream_log,
    training_arrays,
    write_stream_log,
)

L, W = 0.3, 0.6


def build_log(flows, kinds=None, rows=2, cols=3, rate=15.0, bumps=None):
    """Handmade log: ``flows`` is (n, rows, cols, 2); actions default to stop."""
    flows = np.asarray(flows, dtype=float)
    n = len(flows)
    kinds = kinds or [ActionKind.STOP] * n
    bumps = bumps or [False] * n
    header = LogHeader(rows=rows, cols=cols, frame_rate_hz=rate, linear_speed=L, angular_speed=W)
    frames = tuple(
        SensorimotorFrame(
            t=t,
            flow=FlowGrid(flows[t]),
            action=ActionCommand.of(kinds[t], L, W),
            proprio=Proprioception(0.05 * t, -0.01 * t),
            bump=bumps[t],
        )
        for t in range(n)
    )
    return StreamLog(header, frames)


# ------------------------------------------------------------ action encoding


def test_encode_action_stop_is_zero():
    cmd = ActionCommand.of(ActionKind.STOP, L, W)
    assert np.array_equal(encode_action(cmd), [0.0, 0.0])


def test_encode_action_forward_uses_linear_speed():
    cmd = ActionCommand.of(ActionKind.FORWARD, L, W)
    assert np.array_equal(encode_action(cmd), [0.3, 0.0])
    assert np.array_equal(encode_action(cmd, scale=(2.0, 1.0)), [0.6, 0.0])


def test_encode_action_turn_right_uses_negative_angular_speed():
    cmd = ActionCommand.of(ActionKind.TURN_RIGHT, L, W)
    assert np.array_equal(encode_action(cmd), [0.0, -0.6])


def test_action_command_rejects_sign_mismatch():
    with pytest.raises(ValueError):
        ActionCommand(ActionKind.FORWARD, -0.3, 0.0)
    with pytest.raises(ValueError):
        ActionCommand(ActionKind.TURN_LEFT, 0.0, -0.6)
    with pytest.raises(ValueError):
        ActionCommand.of(ActionKind.FORWARD, -1.0, 1.0)


# -------------------------------------------------------------------- grids


def test_flow_grid_validation():
    with pytest.raises(ValueError):
        FlowGrid(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        FlowGrid(np.full((2, 3, 2), np.nan))
    grid = FlowGrid(np.ones((2, 3, 2)))
    assert grid.rows == 2 and grid.cols == 3
    assert grid == FlowGrid(np.ones((2, 3, 2)))
    assert grid != FlowGrid(np.zeros((2, 3, 2)))
    with pytest.raises(ValueError):
        grid.cells[0, 0, 0] = 5.0  # stored array is read-only
    assert grid.vector(1, 2).u == 1.0


def test_cell_coordinates_are_normalized_row_major():
    coords = cell_coordinates(2, 3)
    assert coords.shape == (6, 2)
    assert np.array_equal(coords[0], [0.0, 0.0])
    assert np.array_equal(coords[2], [0.0, 1.0])  # row 0, last column
    assert np.array_equal(coords[3], [1.0, 0.0])  # row 1 starts
    assert np.array_equal(coords[5], [1.0, 1.0])
    assert np.array_equal(cell_coordinates(1, 1), [[0.0, 0.0]])


def test_input_encoding_dims_and_names():
    full = InputEncoding()
    assert full.x_dim == 8
    assert full.feature_names() == [
        "flow_u", "flow_v", "action_linear", "action_angular",
        "proprio_linear", "proprio_angular", "cell_row", "cell_col",
    ]
    assert InputEncoding(use_action=False).x_dim == 6
    assert InputEncoding(use_action=False, use_proprio=False, use_cell_coords=False).x_dim == 2


# ------------------------------------------------------------------- pairing


def test_pair_count_ten_frames_horizon_three():
    rng = np.random.default_rng(0)
    log = build_log(rng.normal(size=(10, 4, 5, 2)), rows=4, cols=5)
    X, Y, cells, ts = training_arrays(log, 3)
    assert X.shape == (7 * 20, 8)
    assert Y.shape == (140, 2)
    assert len(make_pairs(log, 3)) == 140


def test_pairs_empty_at_boundary_horizon():
    log = build_log(np.zeros((10, 2, 3, 2)))
    X, Y, _, ts = training_arrays(log, 10)
    assert len(X) == 0 and len(Y) == 0 and len(ts) == 0
    assert make_pairs(log, 10) == []
    with pytest.raises(ValueError):
        training_arrays(log, 0)


def test_constant_flow_gives_zero_deltas():
    log = build_log(np.full((8, 2, 3, 2), 3.25))
    _, Y, _, _ = training_arrays(log, 2)
    assert np.array_equal(Y, np.zeros((36, 2)))


def test_pair_layout_matches_manual_assembly():
    rng = np.random.default_rng(1)
    flows = rng.normal(size=(6, 2, 3, 2))
    kinds = [ActionKind.FORWARD] * 6
    log = build_log(flows, kinds=kinds)
    X, Y, cells, ts = training_arrays(log, 2)
    # first pair: frame 0, cell (0, 0)
    expected_x = np.concatenate(
        [flows[0, 0, 0], [0.3, 0.0], [0.0, 0.0], [0.0, 0.0]]
    )
    assert np.array_equal(X[0], expected_x)
    assert np.array_equal(Y[0], flows[2, 0, 0] - flows[0, 0, 0])
    assert tuple(cells[0]) == (0, 0)
    assert ts[0] == 2  # timestamps refer to the target frame
    # last pair: frame 3, cell (1, 2)
    assert np.array_equal(Y[-1], flows[5, 1, 2] - flows[3, 1, 2])
    assert tuple(cells[-1]) == (1, 2)
    assert ts[-1] == 5


def test_make_pairs_matches_training_arrays():
    rng = np.random.default_rng(2)
    log = build_log(rng.normal(size=(7, 2, 3, 2)))
    X, Y, cells, ts = training_arrays(log, 2)
    pairs = make_pairs(log, 2)
    assert len(pairs) == len(X)
    for i in (0, 5, len(pairs) - 1):
        assert np.array_equal(pairs[i].x, X[i])
        assert np.array_equal(pairs[i].y, Y[i])
        assert pairs[i].cell == tuple(cells[i])
        assert pairs[i].t == ts[i]


def test_make_pairs_is_pure():
    rng = np.random.default_rng(3)
    log = build_log(rng.normal(size=(6, 2, 3, 2)))
    a = training_arrays(log, 2)
    b = training_arrays(log, 2)
    for left, right in zip(a, b):
        assert np.array_equal(left, right)


def test_delta_reconstructs_future_flow_exactly():
    rng = np.random.default_rng(4)
    flows = rng.normal(size=(9, 2, 3, 2))
    log = build_log(flows)
    X, Y, _, _ = training_arrays(log, 3, InputEncoding())
    rebuilt = (X[:, :2] + Y).reshape(6, 2, 3, 2)
    assert np.array_equal(rebuilt, flows[3:])


def test_encoding_ablation_drops_feature_groups():
    rng = np.random.default_rng(5)
    log = build_log(rng.normal(size=(5, 2, 3, 2)), kinds=[ActionKind.TURN_LEFT] * 5)
    X_full, _, _, _ = training_arrays(log, 1)
    X_no_act, _, _, _ = training_arrays(log, 1, InputEncoding(use_action=False))
    assert X_no_act.shape[1] == 6
    assert np.array_equal(X_no_act, np.delete(X_full, [2, 3], axis=1))


# ----------------------------------------------------------------- stream IO


def test_stream_log_round_trip(tmp_path, tiny_log):
    path = tmp_path / "round.log"
    write_stream_log(tiny_log, str(path))
    again = read_stream_log(str(path))
    assert again == tiny_log
    assert again.header.metadata == tiny_log.header.metadata


def test_stream_log_requires_increasing_timestamps():
    log = build_log(np.zeros((3, 2, 3, 2)))
    frames = (log.frames[0], log.frames[2], log.frames[1])
    with pytest.raises(ValueError):
        StreamLog(log.header, frames)


def _write_variant(tmp_path, mutate):
    src = tmp_path / "ok.log"
    write_stream_log(build_log(np.zeros((3, 2, 3, 2))), str(src))
    lines = src.read_text().splitlines()
    mutate(lines)
    bad = tmp_path / "bad.log"
    bad.write_text("\n".join(lines) + "\n")
    return str(bad)


def test_read_rejects_wrong_format_line(tmp_path):
    path = _write_variant(tmp_path, lambda ls: ls.__setitem__(0, "format=other"))
    with pytest.raises(StreamFormatError):
        read_stream_log(path)


def test_read_rejects_wrong_token_count(tmp_path):
    path = _write_variant(tmp_path, lambda ls: ls.__setitem__(-1, ls[-1] + " 1.0"))
    with pytest.raises(StreamFormatError):
        read_stream_log(path)


def test_read_rejects_unknown_action(tmp_path):
    def mutate(lines):
        tokens = lines[-1].split()
        tokens[1] = "sideways"
        lines[-1] = " ".join(tokens)

    with pytest.raises(StreamFormatError):
        read_stream_log(_write_variant(tmp_path, mutate))


def test_read_rejects_bad_bump_flag(tmp_path):
    def mutate(lines):
        tokens = lines[-1].split()
        tokens[4] = "2"
        lines[-1] = " ".join(tokens)

    with pytest.raises(StreamFormatError):
        read_stream_log(_write_variant(tmp_path, mutate))


def test_read_rejects_non_finite_values(tmp_path):
    def mutate(lines):
        tokens = lines[-1].split()
        tokens[6] = "nan"
        lines[-1] = " ".join(tokens)

    with pytest.raises(StreamFormatError):
        read_stream_log(_write_variant(tmp_path, mutate))


def test_read_rejects_decreasing_timestamps(tmp_path):
    def mutate(lines):
        tokens = lines[-1].split()
        tokens[0] = "0"
        lines[-1] = " ".join(tokens)

    with pytest.raises(StreamFormatError):
        read_stream_log(_write_variant(tmp_path, mutate))


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "out.txt"
    atomic_write_text(str(target), "payload\n")
    assert target.read_text() == "payload\n"
    leftovers = [p for p in tmp_path.iterdir() if p.name != "out.txt"]
    assert leftovers == []

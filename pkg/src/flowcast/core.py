"""Domain types for sensorimotor optical-flow streams.

A stream is a sequence of timestamped frames, each carrying a sampled
optical-flow grid, the base command issued that frame, the measured wheel
velocities, and the bump-sensor flag.  Training pairs relate the inputs at
frame t-T to the flow change observed at frame t, one pair per grid cell.

The on-disk stream format is line-oriented text: ``key=value`` header lines
followed by one line per frame::

    t action_kind proprio_linear proprio_angular bump u_00 v_00 u_01 v_01 ...

with the flow cells in row-major order and ``bump`` encoded as 0/1.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "ActionCommand",
    "ActionKind",
    "FlowGrid",
    "FlowVector",
    "InputEncoding",
    "LogHeader",
    "Proprioception",
    "SensorimotorFrame",
    "StreamFormatError",
    "StreamLog",
    "TrainingPair",
    "atomic_write_text",
    "cell_coordinates",
    "encode_action",
    "make_pairs",
    "read_stream_log",
    "training_arrays",
    "write_stream_log",
]

STREAM_FORMAT = "flowstream"
STREAM_VERSION = 1


class StreamFormatError(ValueError):
    """Raised when a stream-log file does not match the documented layout."""


def fmt_float(value: float) -> str:
    """Shortest decimal text that round-trips the float exactly."""
    return repr(float(value))


def atomic_write_text(path: str, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file and rename, never partially."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ActionKind(str, Enum):
    """Discrete base commands; the kind alone fixes the commanded velocities."""

    STOP = "stop"
    FORWARD = "forward"
    BACKWARD = "backward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not np.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class FlowVector:
    """One optical-flow sample in pixels/second; v grows downward in the image."""

    u: float
    v: float

    def __post_init__(self) -> None:
        _require_finite("flow component", self.u, self.v)

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v], dtype=float)


@dataclass(frozen=True, eq=False)
class FlowGrid:
    """A rows x cols grid of flow vectors, stored as a read-only (N, M, 2) array."""

    cells: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.cells, dtype=float)
        if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"flow grid must have shape (rows, cols, 2), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("flow grid contains non-finite values")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "cells", arr)

    @property
    def rows(self) -> int:
        return self.cells.shape[0]

    @property
    def cols(self) -> int:
        return self.cells.shape[1]

    def vector(self, row: int, col: int) -> FlowVector:
        u, v = self.cells[row, col]
        return FlowVector(float(u), float(v))

    def as_array(self) -> np.ndarray:
        return self.cells

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FlowGrid):
            return NotImplemented
        return self.cells.shape == other.cells.shape and bool(
            np.array_equal(self.cells, other.cells)
        )


# Sign pattern (linear, angular) implied by each action kind.
_KIND_SIGNS = {
    ActionKind.STOP: (0, 0),
    ActionKind.FORWARD: (1, 0),
    ActionKind.BACKWARD: (-1, 0),
    ActionKind.TURN_LEFT: (0, 1),
    ActionKind.TURN_RIGHT: (0, -1),
}


@dataclass(frozen=True)
class ActionCommand:
    """A discrete command with its commanded (linear, angular) velocities.

    linear is m/s along the robot's heading, angular is rad/s about the
    vertical axis (positive counter-clockwise, i.e. a left turn).
    """

    kind: ActionKind
    linear: float
    angular: float

    def __post_init__(self) -> None:
        _require_finite("commanded velocity", self.linear, self.angular)
        sl, sa = _KIND_SIGNS[self.kind]
        if (np.sign(self.linear), np.sign(self.angular)) != (sl, sa):
            raise ValueError(
                f"velocities ({self.linear}, {self.angular}) inconsistent with kind {self.kind.value}"
            )

    @classmethod
    def of(cls, kind: ActionKind, linear_speed: float, angular_speed: float) -> "ActionCommand":
        """Build the command for ``kind`` from the base speed constants."""
        if linear_speed <= 0 or angular_speed <= 0:
            raise ValueError("speed constants must be positive")
        sl, sa = _KIND_SIGNS[kind]
        return cls(kind, sl * linear_speed, sa * angular_speed)


@dataclass(frozen=True)
class Proprioception:
    """Measured base velocities (wheel odometry), same units as ActionCommand."""

    linear: float
    angular: float

    def __post_init__(self) -> None:
        _require_finite("measured velocity", self.linear, self.angular)

    def as_array(self) -> np.ndarray:
        return np.array([self.linear, self.angular], dtype=float)


@dataclass(frozen=True)
class SensorimotorFrame:
    """Everything observed at one frame index t."""

    t: int
    flow: FlowGrid
    action: ActionCommand
    proprio: Proprioception
    bump: bool


@dataclass(frozen=True, eq=False)
class LogHeader:
    rows: int
    cols: int
    frame_rate_hz: float
    linear_speed: float
    angular_speed: float
    metadata: dict = field(default_factory=dict)
    version: int = STREAM_VERSION

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one row and one column")
        if self.frame_rate_hz <= 0:
            raise ValueError("frame rate must be positive")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LogHeader):
            return NotImplemented
        return (
            self.rows,
            self.cols,
            self.frame_rate_hz,
            self.linear_speed,
            self.angular_speed,
            self.metadata,
            self.version,
        ) == (
            other.rows,
            other.cols,
            other.frame_rate_hz,
            other.linear_speed,
            other.angular_speed,
            other.metadata,
            other.version,
        )


@dataclass(frozen=True, eq=False)
class StreamLog:
    """An immutable recorded stream: header plus frames with increasing t."""

    header: LogHeader
    frames: tuple

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        for i, f in enumerate(frames):
            if f.flow.rows != self.header.rows or f.flow.cols != self.header.cols:
                raise ValueError(
                    f"frame {i} grid {f.flow.rows}x{f.flow.cols} does not match header "
                    f"{self.header.rows}x{self.header.cols}"
                )
            if i and frames[i].t <= frames[i - 1].t:
                raise ValueError("frame timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[SensorimotorFrame]:
        return iter(self.frames)

    def __getitem__(self, i: int) -> SensorimotorFrame:
        return self.frames[i]

    @cached_property
    def flow_stack(self) -> np.ndarray:
        """(n_frames, rows, cols, 2) stack of all flow grids (read-only)."""
        if not self.frames:
            arr = np.zeros((0, self.header.rows, self.header.cols, 2))
        else:
            arr = np.stack([f.flow.cells for f in self.frames])
        arr.flags.writeable = False
        return arr

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StreamLog):
            return NotImplemented
        return self.header == other.header and self.frames == other.frames


def write_stream_log(log: StreamLog, path: str) -> None:
    """Serialize a stream log to its text format (atomic write)."""
    lines = [
        f"format={STREAM_FORMAT}",
        f"version={log.header.version}",
        f"rows={log.header.rows}",
        f"cols={log.header.cols}",
        f"frame_rate_hz={fmt_float(log.header.frame_rate_hz)}",
        f"linear_speed={fmt_float(log.header.linear_speed)}",
        f"angular_speed={fmt_float(log.header.angular_speed)}",
    ]
    for key in sorted(log.header.metadata):
        lines.append(f"meta.{key}={log.header.metadata[key]}")
    for f in log.frames:
        cells = " ".join(fmt_float(x) for x in f.flow.cells.ravel())
        lines.append(
            f"{f.t} {f.action.kind.value} {fmt_float(f.proprio.linear)} "
            f"{fmt_float(f.proprio.angular)} {int(f.bump)} {cells}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_stream_log(path: str) -> StreamLog:
    """Parse a stream log, rejecting anything that deviates from the format."""
    with open(path) as fh:
        raw = fh.read().splitlines()

    header_kv = {}
    metadata = {}
    body_start = None
    for i, line in enumerate(raw):
        if not line.strip():
            continue
        if "=" in line and body_start is None:
            key, _, value = line.partition("=")
            if key.startswith("meta."):
                metadata[key[len("meta."):]] = value
            else:
                header_kv[key] = value
        else:
            if body_start is None:
                body_start = i
            # frame lines handled below
    required = ("format", "version", "rows", "cols", "frame_rate_hz", "linear_speed", "angular_speed")
    missing = [k for k in required if k not in header_kv]
    if missing:
        raise StreamFormatError(f"missing header keys: {missing}")
    if header_kv["format"] != STREAM_FORMAT:
        raise StreamFormatError(f"not a {STREAM_FORMAT} file: format={header_kv['format']!r}")
    if int(header_kv["version"]) != STREAM_VERSION:
        raise StreamFormatError(f"unsupported stream version {header_kv['version']}")

    header = LogHeader(
        rows=int(header_kv["rows"]),
        cols=int(header_kv["cols"]),
        frame_rate_hz=float(header_kv["frame_rate_hz"]),
        linear_speed=float(header_kv["linear_speed"]),
        angular_speed=float(header_kv["angular_speed"]),
        metadata=metadata,
    )

    n_cells = header.rows * header.cols
    expected_tokens = 5 + 2 * n_cells
    frames = []
    kinds = {k.value: k for k in ActionKind}
    body = raw[body_start:] if body_start is not None else []
    for line in body:
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != expected_tokens:
            raise StreamFormatError(
                f"frame line has {len(tokens)} tokens, expected {expected_tokens} "
                f"for a {header.rows}x{header.cols} grid"
            )
        try:
            t = int(tokens[0])
        except ValueError as exc:
            raise StreamFormatError(f"bad frame timestamp {tokens[0]!r}") from exc
        if tokens[1] not in kinds:
            raise StreamFormatError(f"unknown action kind {tokens[1]!r}")
        action = ActionCommand.of(kinds[tokens[1]], header.linear_speed, header.angular_speed)
        try:
            values = [float(x) for x in tokens[2:]]
        except ValueError as exc:
            raise StreamFormatError(f"bad numeric token in frame {t}") from exc
        if not np.isfinite(values).all():
            raise StreamFormatError(f"non-finite value in frame {t}")
        proprio = Proprioception(values[0], values[1])
        bump_raw = values[2]
        if bump_raw not in (0.0, 1.0):
            raise StreamFormatError(f"bump flag must be 0 or 1, got {bump_raw}")
        grid = FlowGrid(np.array(values[3:]).reshape(header.rows, header.cols, 2))
        frames.append(SensorimotorFrame(t, grid, action, proprio, bool(bump_raw)))
    try:
        return StreamLog(header, tuple(frames))
    except ValueError as exc:
        raise StreamFormatError(str(exc)) from exc


def encode_action(action: ActionCommand, scale: Sequence[float] = (1.0, 1.0)) -> np.ndarray:
    """Encode a command as its scaled (linear, angular) velocity pair."""
    return np.array([action.linear * scale[0], action.angular * scale[1]], dtype=float)


@dataclass(frozen=True)
class InputEncoding:
    """Which features enter the per-cell model input, and how actions are scaled.

    The input layout is always: flow (u, v) at the earlier frame, then the
    scaled action encoding, then measured velocities, then normalized cell
    coordinates, with disabled groups simply absent.
    """

    use_action: bool = True
    use_proprio: bool = True
    use_cell_coords: bool = True
    action_scale: tuple = (1.0, 1.0)

    @property
    def x_dim(self) -> int:
        return 2 + 2 * self.use_action + 2 * self.use_proprio + 2 * self.use_cell_coords

    def feature_names(self) -> list:
        names = ["flow_u", "flow_v"]
        if self.use_action:
            names += ["action_linear", "action_angular"]
        if self.use_proprio:
            names += ["proprio_linear", "proprio_angular"]
        if self.use_cell_coords:
            names += ["cell_row", "cell_col"]
        return names


@dataclass(frozen=True, eq=False)
class TrainingPair:
    """Inputs sampled at frame t - horizon paired with the flow delta at frame t."""

    x: np.ndarray
    y: np.ndarray
    cell: tuple
    t: int


def cell_coordinates(rows: int, cols: int) -> np.ndarray:
    """Row-major (rows*cols, 2) array of normalized (row, col) in [0, 1]."""
    r = np.arange(rows, dtype=float) / (rows - 1 if rows > 1 else 1)
    c = np.arange(cols, dtype=float) / (cols - 1 if cols > 1 else 1)
    rr, cc = np.meshgrid(r, c, indexing="ij")
    return np.column_stack([rr.ravel(), cc.ravel()])


def training_arrays(
    log: StreamLog, horizon: int, encoding: InputEncoding = InputEncoding()
) -> tuple:
    """Vectorized pair construction.

    Returns (X, Y, cells, ts) where X is (n, x_dim), Y is (n, 2) flow deltas,
    cells is (n, 2) integer grid coordinates and ts the target frame of each
    pair.  Pairs are ordered by target frame, then row-major by cell.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rows, cols = log.header.rows, log.header.cols
    n_cells = rows * cols
    n_t = len(log) - horizon
    if n_t <= 0:
        dim = encoding.x_dim
        return (
            np.zeros((0, dim)),
            np.zeros((0, 2)),
            np.zeros((0, 2), dtype=int),
            np.zeros(0, dtype=int),
        )

    flows = log.flow_stack
    prev = flows[:n_t].reshape(n_t * n_cells, 2)
    curr = flows[horizon:].reshape(n_t * n_cells, 2)
    parts = [prev]
    if encoding.use_action:
        acts = np.array(
            [encode_action(f.action, encoding.action_scale) for f in log.frames[:n_t]]
        )
        parts.append(np.repeat(acts, n_cells, axis=0))
    if encoding.use_proprio:
        props = np.array([f.proprio.as_array() for f in log.frames[:n_t]])
        parts.append(np.repeat(props, n_cells, axis=0))
    if encoding.use_cell_coords:
        parts.append(np.tile(cell_coordinates(rows, cols), (n_t, 1)))

    X = np.concatenate(parts, axis=1)
    Y = curr - prev
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    cells = np.tile(np.column_stack([rr.ravel(), cc.ravel()]), (n_t, 1))
    ts = np.repeat(np.array([f.t for f in log.frames[horizon:]]), n_cells)
    return X, Y, cells, ts


def make_pairs(
    log: StreamLog, horizon: int, encoding: InputEncoding = InputEncoding()
) -> list:
    """One TrainingPair per (frame t >= horizon, grid cell), in stream order."""
    X, Y, cells, ts = training_arrays(log, horizon, encoding)
    return [
        TrainingPair(X[i], Y[i], (int(cells[i, 0]), int(cells[i, 1])), int(ts[i]))
        for i in range(len(ts))
    ]

"""Recover and undo the lag between issued commands and their visual effect.

Commands reach the base some whole number of frames after they are issued.
To find that number, each candidate shift ``d`` gets its own small mixture
model trained to predict the one-frame flow change at ``t -> t+1`` from the
current flow plus the command issued at ``t + 1 - d``; the shift whose model
explains a held-out tail of the stream best (mean predictive log-likelihood)
is the estimated delay.  All candidates share one pairing range, one feature
standardization and one temporal split so their scores are comparable.  Ties
pick the smaller shift.

Two robustness choices matter here.  The scoring mixtures keep their full
component set (no mass-fraction truncation): the evidence separating
neighbouring shifts lives in rare command-transition components whose mass
never makes the high-mass prediction set.  And only a strided subset of grid
cells enters the pairs: cells are nearly redundant for timing purposes, so
striding buys speed without losing the signal.

Odometry is left out of the scoring features by default: it is measured at
the wheels, hence already synchronous with the flow, and would let every
candidate predict well regardless of the command shift.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import InputEncoding, LogHeader, SensorimotorFrame, StreamLog
from .forward_model import FeatureScales, ForwardModel, default_igmm_config
from .igmm import IgmmConfig

__all__ = ["AlignmentConfig", "AlignmentResult", "apply_delay", "estimate_delay"]


@dataclass(frozen=True)
class AlignmentConfig:
    max_delay: int = 15
    candidates: Optional[tuple] = None  # default: 0..max_delay
    train_fraction: float = 0.7
    use_proprio: bool = False
    cell_stride: int = 2
    igmm: Optional[IgmmConfig] = None

    def __post_init__(self) -> None:
        if self.max_delay < 0:
            raise ValueError("max_delay must be >= 0")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.cell_stride < 1:
            raise ValueError("cell_stride must be >= 1")
        if self.candidates is not None:
            if len(self.candidates) == 0 or any(d < 0 for d in self.candidates):
                raise ValueError("candidates must be non-negative")

    def resolved_candidates(self) -> tuple:
        if self.candidates is not None:
            return tuple(sorted(set(int(d) for d in self.candidates)))
        return tuple(range(self.max_delay + 1))


@dataclass(frozen=True)
class AlignmentResult:
    best_delay: int
    scores: tuple  # ((candidate, mean held-out loglik), ...) ascending
    n_pairs_per_delay: tuple  # ((candidate, scored pair count), ...) ascending

    def score_map(self) -> dict:
        return dict(self.scores)

    def pair_count_map(self) -> dict:
        return dict(self.n_pairs_per_delay)


def _alignment_igmm_profile() -> IgmmConfig:
    """Mixture profile for delay scoring: coarse tiles (one-frame flow changes
    need no fine partition) and no mass-fraction truncation of the scoring
    set, because the shift evidence sits in rare transition components."""
    return default_igmm_config(
        sigma_ini_x=0.5, min_mass_fraction_for_prediction=1.0
    )


def _candidate_arrays(log: StreamLog, shift: int, t_lo: int, use_proprio: bool,
                      cell_sel: np.ndarray):
    """(X, Y) for one candidate shift over the selected cells, frame-major."""
    flows = log.flow_stack  # (F, N, M, 2)
    n_frames = len(log.frames)
    cells = log.header.rows * log.header.cols
    flat = flows.reshape(n_frames, cells, 2)[:, cell_sel, :]
    n_sel = len(cell_sel)
    ts = np.arange(t_lo, n_frames - 1)

    actions = np.array([(f.action.linear, f.action.angular) for f in log.frames])
    cols = [flat[ts], np.broadcast_to(actions[ts + 1 - shift][:, None, :], (len(ts), n_sel, 2))]
    if use_proprio:
        proprio = np.array([(f.proprio.linear, f.proprio.angular) for f in log.frames])
        cols.append(np.broadcast_to(proprio[ts + 1 - shift][:, None, :], (len(ts), n_sel, 2)))
    x = np.concatenate(cols, axis=2).reshape(len(ts) * n_sel, -1)
    y = (flat[ts + 1] - flat[ts]).reshape(len(ts) * n_sel, 2)
    return x, y


def estimate_delay(log: StreamLog, config: AlignmentConfig = AlignmentConfig()) -> AlignmentResult:
    requested = config.resolved_candidates()
    n_frames = len(log.frames)
    cells = log.header.rows * log.header.cols

    # Drop candidates the log cannot support (too few frames beyond the
    # shared pairing range); they are absent from the score table rather than
    # scored at -inf.  The shared range is recomputed over the survivors so
    # every scored candidate sees the same rows.
    candidates = list(requested)
    while candidates:
        t_lo = max(max(candidates) - 1, 0)
        n_ts = n_frames - 1 - t_lo
        split_ts = int(n_ts * config.train_fraction)
        if n_ts >= 10 and 1 <= split_ts < n_ts:
            break
        candidates.pop()  # largest shift (candidates are sorted ascending)
    if not candidates:
        raise ValueError("log too short for every requested candidate delay")
    candidates = tuple(candidates)

    cell_sel = np.arange(0, cells, config.cell_stride)
    n_sel = len(cell_sel)
    split_row = split_ts * n_sel
    n_eval_pairs = (n_ts - split_ts) * n_sel

    encoding = InputEncoding(
        use_action=True,
        use_proprio=config.use_proprio,
        use_cell_coords=False,
    )
    igmm = config.igmm if config.igmm is not None else _alignment_igmm_profile()

    # One standardization for all candidates: shifting the command stream
    # barely moves its marginal statistics, and shared scales keep the
    # candidate likelihoods directly comparable.
    x0, _ = _candidate_arrays(log, candidates[0], t_lo, config.use_proprio, cell_sel)
    scales = FeatureScales.fit(x0[:split_row])

    scores = []
    for shift in candidates:
        x, y = _candidate_arrays(log, shift, t_lo, config.use_proprio, cell_sel)
        model = ForwardModel(
            horizon=1,
            encoding=encoding,
            igmm_config=igmm,
            feature_scales=scales,
        )
        model.learn_pairs(x[:split_row], y[:split_row])
        model.ensure_ready()
        loglik = model.loglik_batch(x[split_row:], y[split_row:])
        scores.append((shift, float(np.mean(loglik))))

    values = np.array([s for _, s in scores])
    best = int(np.argmax(values))  # first max -> smallest shift on ties
    return AlignmentResult(
        best_delay=candidates[best],
        scores=tuple(scores),
        n_pairs_per_delay=tuple((shift, n_eval_pairs) for shift in candidates),
    )


def apply_delay(log: StreamLog, delay: int) -> StreamLog:
    """Shift command and odometry streams so they line up with the flow.

    Frame ``t`` of the result keeps its flow, bump flag and timestamp but
    carries the action/odometry from frame ``t - delay`` (the command that was
    actually in effect).  The first ``delay`` frames are dropped.
    """
    delay = int(delay)
    if delay < 0:
        raise ValueError("delay must be >= 0")
    if delay >= len(log.frames):
        raise ValueError("delay exceeds the log length")
    frames = tuple(
        SensorimotorFrame(
            t=log.frames[i].t,
            flow=log.frames[i].flow,
            action=log.frames[i - delay].action,
            proprio=log.frames[i - delay].proprio,
            bump=log.frames[i].bump,
        )
        for i in range(delay, len(log.frames))
    )
    old = log.header
    header = LogHeader(
        rows=old.rows,
        cols=old.cols,
        frame_rate_hz=old.frame_rate_hz,
        linear_speed=old.linear_speed,
        angular_speed=old.angular_speed,
        metadata={**old.metadata, "applied_delay": str(delay)},
    )
    return StreamLog(header, frames)

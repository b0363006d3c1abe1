"""Forward prediction of optical flow from past flow, action, and odometry.

A ForwardModel wraps one shared Mixture trained on per-cell pairs: input
x = (flow at t-T, action encoding, measured velocities[, cell coordinates]),
output y = flow(t) - flow(t-T).  Prediction is two-step MAP: restrict to the
high-mass prediction set, pick the component maximizing prior * N(x), and
answer with that component's output mean.  Inputs are standardized with
per-feature offset/scale fixed after a warm-up window so flow (pixels/s) and
velocity (m/s, rad/s) features live on comparable scales; outputs are never
scaled, so predictive log-densities stay in raw flow units.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import (
    FlowGrid,
    InputEncoding,
    SensorimotorFrame,
    atomic_write_text,
    cell_coordinates,
    encode_action,
    fmt_float,
)
from .igmm import IgmmConfig, Mixture, SnapshotError

__all__ = [
    "FeatureScales",
    "FlowPrediction",
    "ForwardModel",
    "default_igmm_config",
]

MODEL_FORMAT = "flow-forward-model"
MODEL_VERSION = 1


def default_igmm_config(**overrides) -> IgmmConfig:
    """Mixture defaults for standardized inputs: fixed input creation scale,
    output creation scale derived from the warm-up spread of the deltas.  The
    input scale is deliberately fine (0.12 of a feature standard deviation):
    predictions are per-component output means, so tile size in input space
    bounds the achievable accuracy.  The warm-up window must span a few
    seconds of varied motion, otherwise the output scale collapses to the
    spread of whatever short rest opened the stream."""
    base = dict(
        sigma_ini_x=0.12,
        sigma_ini_y=None,
        sigma_warmup=1500,
        sigma_scale=1.0,
        novelty_mahalanobis=2.5,
    )
    base.update(overrides)
    return IgmmConfig(**base)


@dataclass(frozen=True)
class FeatureScales:
    """Per-input-feature affine standardization x' = (x - offset) / scale."""

    offset: np.ndarray
    scale: np.ndarray

    def __post_init__(self) -> None:
        offset = np.asarray(self.offset, dtype=float).ravel()
        scale = np.asarray(self.scale, dtype=float).ravel()
        if offset.shape != scale.shape:
            raise ValueError("offset and scale must have the same length")
        if not np.isfinite(offset).all() or not np.isfinite(scale).all():
            raise ValueError("feature scales must be finite")
        if (scale <= 0).any():
            raise ValueError("feature scales must be positive")
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def identity(cls, dim: int) -> "FeatureScales":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, X: np.ndarray) -> "FeatureScales":
        """Mean/std per feature; constant features get unit scale."""
        X = np.asarray(X, dtype=float)
        offset = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale < 1e-12] = 1.0
        return cls(offset, scale)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.offset) / self.scale


@dataclass(eq=False)
class FlowPrediction:
    """Predicted grid plus, per cell, the chosen component and its posterior."""

    grid: FlowGrid
    map_component: np.ndarray
    map_posterior: np.ndarray
    log_lik: Optional[np.ndarray] = None


class ForwardModel:
    """Streaming per-cell flow predictor at a fixed horizon (in frames)."""

    def __init__(
        self,
        horizon: int,
        encoding: InputEncoding = InputEncoding(),
        igmm_config: Optional[IgmmConfig] = None,
        scale_warmup: int = 1500,
        mixture: Optional[Mixture] = None,
        feature_scales: Optional[FeatureScales] = None,
        grid_shape: Optional[tuple] = None,
    ):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if scale_warmup < 1:
            raise ValueError("scale_warmup must be >= 1")
        self.horizon = int(horizon)
        self.encoding = encoding
        self.scale_warmup = int(scale_warmup)
        self.grid_shape = grid_shape
        if mixture is not None:
            if mixture.d_x != encoding.x_dim or mixture.d_y != 2:
                raise ValueError("mixture dimensions do not match the encoding")
            self.mixture = mixture
            self._scales = feature_scales or FeatureScales.identity(encoding.x_dim)
        else:
            self.mixture = Mixture(
                encoding.x_dim, 2, igmm_config if igmm_config is not None else default_igmm_config()
            )
            self._scales = feature_scales
        self._buf_x: list = []
        self._buf_y: list = []

    # --------------------------------------------------------------- training

    @property
    def feature_scales(self) -> Optional[FeatureScales]:
        return self._scales

    @property
    def n_pairs(self) -> int:
        return self.mixture.n_samples + len(self._buf_x)

    def learn_pair(self, x: np.ndarray, y: np.ndarray) -> None:
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if x.size != self.encoding.x_dim or y.size != 2:
            raise ValueError("pair dimensions do not match the encoding")
        if self._scales is None:
            if not np.isfinite(x).all() or not np.isfinite(y).all():
                raise ValueError("pair contains non-finite values")
            self._buf_x.append(x)
            self._buf_y.append(y)
            if len(self._buf_x) >= self.scale_warmup:
                self._fit_scales_and_flush()
            return
        self.mixture.learn_one(self._scales.apply(x), y)

    def learn_pairs(self, X: np.ndarray, Y: np.ndarray) -> None:
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        for i in range(X.shape[0]):
            self.learn_pair(X[i], Y[i])

    def _fit_scales_and_flush(self) -> None:
        self._scales = FeatureScales.fit(np.asarray(self._buf_x))
        X, Y = self._buf_x, self._buf_y
        self._buf_x, self._buf_y = [], []
        for x, y in zip(X, Y):
            self.mixture.learn_one(self._scales.apply(x), y)

    def ensure_ready(self) -> None:
        """Finalize warm-ups so the model can predict (requires data)."""
        if self._scales is None:
            if not self._buf_x:
                raise ValueError("model has no training data")
            self._fit_scales_and_flush()
        if not self.mixture.sigma_resolved:
            self.mixture.finalize_warmup()
        if self.mixture.n_components == 0:
            raise ValueError("model has no components yet")

    # ------------------------------------------------------------- prediction

    def _scored_densities(self, X: np.ndarray, mass_fraction: Optional[float] = None) -> tuple:
        """(pset, scores) where scores[i, r] = log prior + log N(x_i) for rank r."""
        self.ensure_ready()
        X = np.atleast_2d(np.asarray(X, dtype=float))
        pset = self.mixture.prediction_set(mass_fraction)
        log_mass = np.log(self.mixture.masses[pset])
        lx = self.mixture.log_density_x(self._scales.apply(X))[:, pset]
        return pset, log_mass[None, :] + lx

    def predict_batch(self, X: np.ndarray) -> tuple:
        """MAP prediction for each row of X.

        Returns (deltas (n, 2), components (n,), posteriors (n,)) where the
        posterior is normalized over the prediction set.  Ties on the score
        resolve to the higher-mass, then older, component because the set is
        ranked that way and argmax takes the first maximum.
        """
        pset, scores = self._scored_densities(X)
        best = np.argmax(scores, axis=1)
        comps = pset[best]
        norm = logsumexp(scores, axis=1)
        posts = np.exp(scores[np.arange(len(best)), best] - norm)
        deltas = self.mixture.output_means[comps]
        return deltas.copy(), comps, posts

    def predict_cell(self, x: np.ndarray) -> tuple:
        """(delta, component index, posterior) for a single input vector."""
        deltas, comps, posts = self.predict_batch(np.asarray(x, dtype=float)[None, :])
        return deltas[0], int(comps[0]), float(posts[0])

    def assemble_inputs(self, frame: SensorimotorFrame) -> np.ndarray:
        """Per-cell input matrix (rows*cols, x_dim) for one frame."""
        rows, cols = frame.flow.rows, frame.flow.cols
        n_cells = rows * cols
        parts = [frame.flow.cells.reshape(n_cells, 2)]
        if self.encoding.use_action:
            act = encode_action(frame.action, self.encoding.action_scale)
            parts.append(np.tile(act, (n_cells, 1)))
        if self.encoding.use_proprio:
            parts.append(np.tile(frame.proprio.as_array(), (n_cells, 1)))
        if self.encoding.use_cell_coords:
            parts.append(cell_coordinates(rows, cols))
        return np.concatenate(parts, axis=1)

    def predict_grid(self, frame: SensorimotorFrame) -> FlowPrediction:
        """Predict the whole grid at t + horizon from one frame's inputs."""
        rows, cols = frame.flow.rows, frame.flow.cols
        if self.grid_shape is not None and (rows, cols) != tuple(self.grid_shape):
            raise ValueError(
                f"frame grid {rows}x{cols} does not match training grid "
                f"{self.grid_shape[0]}x{self.grid_shape[1]}"
            )
        X = self.assemble_inputs(frame)
        deltas, comps, posts = self.predict_batch(X)
        predicted = frame.flow.cells + deltas.reshape(rows, cols, 2)
        return FlowPrediction(
            grid=FlowGrid(predicted),
            map_component=comps.reshape(rows, cols),
            map_posterior=posts.reshape(rows, cols),
        )

    # ---------------------------------------------------------------- scoring

    def posterior_predictive_loglik(self, x: np.ndarray, y_true: np.ndarray) -> float:
        """log p(y | x) under the prediction-set mixture."""
        return float(
            self.loglik_batch(
                np.asarray(x, dtype=float)[None, :], np.asarray(y_true, dtype=float)[None, :]
            )[0]
        )

    def loglik_batch(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Vectorized log p(y_i | x_i) under the prediction-set mixture with
        renormalized priors; the renormalization cancels between numerator
        and denominator."""
        pset, scores = self._scored_densities(X)
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        ly = self.mixture.log_density_y(Y)[:, pset]
        return logsumexp(scores + ly, axis=1) - logsumexp(scores, axis=1)

    # ------------------------------------------------------------ persistence

    def to_text(self) -> str:
        """Serialize model + mixture; finalizes warm-ups first."""
        self.ensure_ready()
        lines = [
            f"format={MODEL_FORMAT}",
            f"version={MODEL_VERSION}",
            f"horizon={self.horizon}",
            f"encoding.use_action={int(self.encoding.use_action)}",
            f"encoding.use_proprio={int(self.encoding.use_proprio)}",
            f"encoding.use_cell_coords={int(self.encoding.use_cell_coords)}",
            "encoding.action_scale="
            + " ".join(fmt_float(v) for v in self.encoding.action_scale),
            f"scale_warmup={self.scale_warmup}",
            "grid_shape="
            + ("none" if self.grid_shape is None else f"{self.grid_shape[0]} {self.grid_shape[1]}"),
            "scales.offset=" + " ".join(fmt_float(v) for v in self._scales.offset),
            "scales.scale=" + " ".join(fmt_float(v) for v in self._scales.scale),
        ]
        return "\n".join(lines) + "\n" + self.mixture.snapshot()

    def save(self, path: str) -> None:
        atomic_write_text(path, self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "ForwardModel":
        marker = f"format={MODEL_FORMAT}"
        if not text.startswith(marker):
            raise SnapshotError(f"not a {MODEL_FORMAT} snapshot")
        lines = text.splitlines()
        split_at = None
        kv = {}
        for i, line in enumerate(lines):
            if line.startswith("format=") and i > 0:
                split_at = i
                break
            if "=" in line:
                key, _, value = line.partition("=")
                kv[key] = value
        if split_at is None:
            raise SnapshotError("model snapshot has no embedded mixture")
        try:
            if kv["version"] != str(MODEL_VERSION):
                raise SnapshotError(f"unsupported model version {kv['version']!r}")
            encoding = InputEncoding(
                use_action=bool(int(kv["encoding.use_action"])),
                use_proprio=bool(int(kv["encoding.use_proprio"])),
                use_cell_coords=bool(int(kv["encoding.use_cell_coords"])),
                action_scale=tuple(float(v) for v in kv["encoding.action_scale"].split()),
            )
            scales = FeatureScales(
                offset=np.array([float(v) for v in kv["scales.offset"].split()]),
                scale=np.array([float(v) for v in kv["scales.scale"].split()]),
            )
            grid_shape = (
                None
                if kv["grid_shape"] == "none"
                else tuple(int(v) for v in kv["grid_shape"].split())
            )
            mixture = Mixture.restore("\n".join(lines[split_at:]) + "\n")
            return cls(
                horizon=int(kv["horizon"]),
                encoding=encoding,
                scale_warmup=int(kv["scale_warmup"]),
                mixture=mixture,
                feature_scales=scales,
                grid_shape=grid_shape,
            )
        except KeyError as exc:
            raise SnapshotError(f"model snapshot missing field {exc}") from exc
        except ValueError as exc:
            raise SnapshotError(f"malformed model snapshot: {exc}") from exc

    @classmethod
    def load(cls, path: str) -> "ForwardModel":
        with open(path) as fh:
            return cls.from_text(fh.read())

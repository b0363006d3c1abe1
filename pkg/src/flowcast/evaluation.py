"""Prediction-quality metrics and evaluation harnesses.

Two baselines anchor every comparison: a persistence predictor (flow stays
as it is, i.e. zero predicted change) for the endpoint/angular errors, and a
zero-mean isotropic Gaussian fitted to the training flow changes for the
log-likelihood ratio.  Reports serialize to a stable key=value text format so
repeated runs can be compared byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .core import InputEncoding, StreamFormatError, StreamLog, atomic_write_text, fmt_float, training_arrays
from .forward_model import FeatureScales, ForwardModel
from .igmm import IgmmConfig

__all__ = [
    "ClusterStats",
    "FlowRegion",
    "MetricReport",
    "aae",
    "ablation_run",
    "action_cluster_stats",
    "aepe",
    "default_regions",
    "evaluate_model",
    "export_distributions",
    "fit_naive_sigma2",
    "fit_split_model",
    "gaussian_loglik",
    "separation_ratio",
    "split_rows",
    "write_distribution_table",
]

REPORT_FORMAT = "flow-metric-report"
REPORT_VERSION = 1


def aepe(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean Euclidean distance between predicted and true flow vectors."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    return float(np.mean(np.linalg.norm(pred - truth, axis=1)))


def aae(pred: np.ndarray, truth: np.ndarray, stabilizer: float = 1.0) -> float:
    """Mean angle (radians) between flow vectors lifted to (u, v, stabilizer).

    The third component keeps the angle defined for near-zero vectors; with
    the default 1.0, (1, 0) versus (0, 1) gives pi/3.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    s2 = stabilizer * stabilizer
    dot = (pred * truth).sum(axis=1) + s2
    norms = np.sqrt((pred * pred).sum(axis=1) + s2) * np.sqrt((truth * truth).sum(axis=1) + s2)
    return float(np.mean(np.arccos(np.clip(dot / norms, -1.0, 1.0))))


def fit_naive_sigma2(Y: np.ndarray) -> float:
    """Per-axis variance of the zero-mean isotropic Gaussian MLE for Y."""
    Y = np.asarray(Y, dtype=float).reshape(-1, 2)
    if len(Y) == 0:
        raise ValueError("cannot fit a baseline to zero samples")
    return float(np.mean(np.sum(Y * Y, axis=1)) / 2.0)


def gaussian_loglik(Y: np.ndarray, sigma2: float) -> np.ndarray:
    """Row-wise log-density of Y under the zero-mean isotropic baseline."""
    Y = np.asarray(Y, dtype=float).reshape(-1, 2)
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    return -np.log(2.0 * np.pi * sigma2) - np.sum(Y * Y, axis=1) / (2.0 * sigma2)


@dataclass(frozen=True)
class MetricReport:
    horizon: int
    n_pairs: int
    aepe_model: float
    aepe_naive: float
    relative_reduction: float
    aae_model: float
    aae_naive: float
    mean_loglik_model: float
    mean_loglik_baseline: float
    mean_loglik_ratio: float
    component_count: int
    mass_in_prediction_set: float

    def to_text(self) -> str:
        lines = [f"format={REPORT_FORMAT}", f"version={REPORT_VERSION}"]
        for f in fields(self):
            value = getattr(self, f.name)
            text = str(value) if isinstance(value, int) else fmt_float(value)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        kv = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                kv[key] = value
        if kv.get("format") != REPORT_FORMAT:
            raise StreamFormatError("not a metric report")
        if kv.get("version") != str(REPORT_VERSION):
            raise StreamFormatError(f"unsupported report version {kv.get('version')!r}")
        kwargs = {}
        for f in fields(cls):
            if f.name not in kv:
                raise StreamFormatError(f"report missing field {f.name!r}")
            cast = int if f.type == "int" else float
            kwargs[f.name] = cast(kv[f.name])
        return cls(**kwargs)

    def save(self, path: str) -> None:
        atomic_write_text(path, self.to_text())


def evaluate_model(
    model: ForwardModel,
    X_eval: np.ndarray,
    Y_eval: np.ndarray,
    baseline_sigma2: float,
) -> MetricReport:
    """Score a trained model against the persistence and Gaussian baselines."""
    if len(X_eval) == 0:
        raise ValueError("empty evaluation set")
    deltas, _, _ = model.predict_batch(X_eval)
    zero = np.zeros_like(Y_eval)
    aepe_model = aepe(deltas, Y_eval)
    aepe_naive = aepe(zero, Y_eval)
    reduction = 0.0 if aepe_naive == 0 else (aepe_naive - aepe_model) / aepe_naive
    ll_model = float(np.mean(model.loglik_batch(X_eval, Y_eval)))
    ll_base = float(np.mean(gaussian_loglik(Y_eval, baseline_sigma2)))
    mix = model.mixture
    pset = mix.prediction_set()
    mass_kept = float(np.sum(mix.masses[pset]) / np.sum(mix.masses))
    return MetricReport(
        horizon=model.horizon,
        n_pairs=int(len(X_eval)),
        aepe_model=aepe_model,
        aepe_naive=aepe_naive,
        relative_reduction=float(reduction),
        aae_model=aae(deltas, Y_eval),
        aae_naive=aae(zero, Y_eval),
        mean_loglik_model=ll_model,
        mean_loglik_baseline=ll_base,
        mean_loglik_ratio=ll_model - ll_base,
        component_count=mix.n_components,
        mass_in_prediction_set=mass_kept,
    )


def split_rows(ts: np.ndarray, train_fraction: float) -> int:
    """Row index of a temporal train/eval split (never splits a frame)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    distinct = np.unique(ts)
    cut = int(len(distinct) * train_fraction)
    if cut < 1 or cut >= len(distinct):
        raise ValueError("split leaves an empty train or eval side")
    return int(np.searchsorted(ts, distinct[cut]))


def fit_split_model(
    log: StreamLog,
    horizon: int,
    encoding: InputEncoding = InputEncoding(),
    igmm_config: Optional[IgmmConfig] = None,
    train_fraction: float = 0.7,
    scale_warmup: int = 1500,
) -> tuple:
    """Train a model on the leading ``train_fraction`` of a log's pairs.

    Returns (model, X, Y, split) with rows [:split] used for training.
    Feature scales are fixed from the whole training side up front; an online
    prefix can misrepresent features that only vary later (e.g. angular
    velocity before the first turn).
    """
    X, Y, _, ts = training_arrays(log, horizon, encoding)
    if len(X) == 0:
        raise ValueError("log too short for this horizon")
    split = split_rows(ts, train_fraction)
    model = ForwardModel(
        horizon=horizon,
        encoding=encoding,
        igmm_config=igmm_config,
        scale_warmup=scale_warmup,
        feature_scales=FeatureScales.fit(X[:split]),
        grid_shape=(log.header.rows, log.header.cols),
    )
    model.learn_pairs(X[:split], Y[:split])
    model.ensure_ready()
    return model, X, Y, split


def ablation_run(
    log: StreamLog,
    horizon: int,
    encoding: InputEncoding = InputEncoding(),
    igmm_config: Optional[IgmmConfig] = None,
    train_fraction: float = 0.7,
    scale_warmup: int = 1500,
) -> tuple:
    """Train on the head of a log, evaluate on the tail; returns (model, report)."""
    model, X, Y, split = fit_split_model(
        log, horizon, encoding, igmm_config, train_fraction, scale_warmup
    )
    report = evaluate_model(model, X[split:], Y[split:], fit_naive_sigma2(Y[:split]))
    return model, report


# ------------------------------------------------- flow-change distributions


@dataclass(frozen=True)
class FlowRegion:
    """Half-open rectangle [u_min, u_max) x [v_min, v_max) in flow space."""

    name: str
    u_min: float
    u_max: float
    v_min: float
    v_max: float

    def contains(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        return (
            (uv[:, 0] >= self.u_min)
            & (uv[:, 0] < self.u_max)
            & (uv[:, 1] >= self.v_min)
            & (uv[:, 1] < self.v_max)
        )


def default_regions(scale: float) -> tuple:
    """A central box plus four quadrants, sized by a typical flow magnitude."""
    s = float(scale)
    big = 1e9
    return (
        FlowRegion("still", -s, s, -s, s),
        FlowRegion("right-up", s, big, -big, s),
        FlowRegion("right-down", s, big, s, big),
        FlowRegion("left-down", -big, -s, s, big),
        FlowRegion("left-up", -big, -s, -big, s),
    )


def export_distributions(
    log: StreamLog,
    horizons: tuple,
    regions: tuple,
    encoding: InputEncoding = InputEncoding(),
) -> list:
    """Rows (region, horizon, action_kind, du, dv) of observed flow changes.

    Each training pair contributes to the first region containing its input
    flow vector, labelled by the action attached to the pair's input frame.
    """
    rows: list = []
    cells = log.header.rows * log.header.cols
    for horizon in horizons:
        X, Y, _, _ = training_arrays(log, horizon, encoding)
        if len(X) == 0:
            continue
        n_t = len(log.frames) - horizon
        kinds = np.repeat([f.action.kind.value for f in log.frames[:n_t]], cells)
        flow_in = X[:, :2]
        assigned = np.zeros(len(X), dtype=bool)
        for region in regions:
            mask = region.contains(flow_in) & ~assigned
            assigned |= mask
            for i in np.nonzero(mask)[0]:
                rows.append(
                    (region.name, int(horizon), str(kinds[i]), float(Y[i, 0]), float(Y[i, 1]))
                )
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return rows


def write_distribution_table(rows: list, path: str) -> None:
    lines = ["region\thorizon\taction\tdu\tdv"]
    for region, horizon, kind, du, dv in rows:
        lines.append(f"{region}\t{horizon}\t{kind}\t{fmt_float(du)}\t{fmt_float(dv)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


@dataclass(frozen=True)
class ClusterStats:
    centroid: tuple
    spread: float  # root-mean-square distance to the centroid
    count: int


def action_cluster_stats(labels, deltas: np.ndarray) -> dict:
    """Per-label centroid and RMS spread of flow-change vectors."""
    deltas = np.asarray(deltas, dtype=float).reshape(-1, 2)
    labels = np.asarray(labels)
    if len(labels) != len(deltas):
        raise ValueError("labels and deltas disagree in length")
    stats = {}
    for label in np.unique(labels):
        sub = deltas[labels == label]
        centroid = sub.mean(axis=0)
        spread = float(np.sqrt(np.mean(np.sum((sub - centroid) ** 2, axis=1))))
        stats[str(label)] = ClusterStats((float(centroid[0]), float(centroid[1])), spread, len(sub))
    return stats


def separation_ratio(stats: dict) -> float:
    """Largest pairwise centroid distance over the mean within-cluster spread."""
    if len(stats) < 2:
        raise ValueError("need at least two clusters")
    centroids = np.array([s.centroid for s in stats.values()])
    diffs = centroids[:, None, :] - centroids[None, :, :]
    max_sep = float(np.max(np.linalg.norm(diffs, axis=2)))
    mean_spread = float(np.mean([s.spread for s in stats.values()]))
    if mean_spread == 0:
        raise ValueError("degenerate clusters with zero spread")
    return max_sep / mean_spread

"""Incremental Gaussian mixture estimation over paired input/output blocks.

Each component models an input block x and an output block y as independent
Gaussians sharing one latent assignment, so the joint density of a sample is
N(x; mu_x, cov_x) * N(y; mu_y, cov_y).  Learning is strictly streaming:

* a sample that no component explains well enough spawns a new component
  centered on it (likelihood below the component's own peak by more than the
  ``novelty_mahalanobis`` radius allows, so the test stays calibrated as
  covariances grow; an absolute log-density cutoff is available instead);
* otherwise every component whose share of the sample is large enough is
  moved toward it with a step equal to its share divided by its accumulated
  mass, and its covariance follows the matching rank-one recurrence.

Components below the update-skip threshold are left completely untouched,
including their cached inverses, which is what makes per-sample updates
cheap.

Internally the mixture keeps all component parameters in stacked arrays so a
learning step is a handful of vectorized operations; ``MixtureComponent`` is
a read-only per-component view used at the API surface and in snapshots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .core import atomic_write_text, fmt_float

__all__ = [
    "IgmmConfig",
    "Mixture",
    "MixtureComponent",
    "SnapshotError",
]

_LOG_2PI = float(np.log(2.0 * np.pi))

SNAPSHOT_FORMAT = "igmm-mixture"
SNAPSHOT_VERSION = 1


class SnapshotError(ValueError):
    """Raised when a serialized mixture cannot be parsed back."""


@dataclass(frozen=True)
class IgmmConfig:
    """Knobs of the streaming estimator.

    sigma_ini_x / sigma_ini_y are the per-dimension standard deviations of a
    freshly created component (scalar, per-dim array, or None to derive them
    from the spread of the first ``sigma_warmup`` samples times
    ``sigma_scale``).  ``novelty_log_density`` overrides the Mahalanobis
    calibration with an absolute log-density threshold when set.
    """

    novelty_mahalanobis: float = 3.0
    novelty_log_density: Optional[float] = None
    sigma_ini_x: Union[float, Sequence[float], None] = None
    sigma_ini_y: Union[float, Sequence[float], None] = None
    sigma_warmup: int = 100
    sigma_scale: float = 0.3
    update_skip_threshold: float = 1e-4
    regularization_floor: float = 1e-6
    min_mass_fraction_for_prediction: float = 0.90
    max_components: Optional[int] = None

    def __post_init__(self) -> None:
        if self.novelty_mahalanobis <= 0:
            raise ValueError("novelty_mahalanobis must be positive")
        if self.sigma_warmup < 1:
            raise ValueError("sigma_warmup must be >= 1")
        if self.sigma_scale <= 0:
            raise ValueError("sigma_scale must be positive")
        if not 0.0 <= self.update_skip_threshold < 1.0:
            raise ValueError("update_skip_threshold must lie in [0, 1)")
        if self.regularization_floor <= 0:
            raise ValueError("regularization_floor must be positive")
        if not 0.0 < self.min_mass_fraction_for_prediction <= 1.0:
            raise ValueError("min_mass_fraction_for_prediction must lie in (0, 1]")
        if self.max_components is not None and self.max_components < 1:
            raise ValueError("max_components must be >= 1 when set")


@dataclass(frozen=True)
class MixtureComponent:
    """Read-only view of one component (arrays are copies)."""

    index: int
    mass: float
    created_at: int
    collision_value: float
    mu_x: np.ndarray
    cov_x: np.ndarray
    mu_y: np.ndarray
    cov_y: np.ndarray
    inv_cov_x: np.ndarray
    inv_cov_y: np.ndarray
    logdet_x: float
    logdet_y: float


def _as_sigma(value, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size == 1:
        arr = np.full(dim, float(arr[0]))
    if arr.size != dim:
        raise ValueError(f"{name} must be scalar or length {dim}, got {arr.size}")
    if not np.isfinite(arr).all() or (arr <= 0).any():
        raise ValueError(f"{name} must be positive and finite")
    return arr


class Mixture:
    """A streaming Gaussian mixture over concatenated (x, y) samples."""

    def __init__(self, d_x: int, d_y: int, config: Optional[IgmmConfig] = None):
        if d_x < 1:
            raise ValueError("d_x must be >= 1")
        if d_y < 0:
            raise ValueError("d_y must be >= 0")
        self.d_x = int(d_x)
        self.d_y = int(d_y)
        self.config = config if config is not None else IgmmConfig()

        self._n = 0  # live component count
        self._n_samples = 0
        cap = 8
        self._mass = np.zeros(cap)
        self._created = np.zeros(cap, dtype=int)
        self._collision = np.zeros(cap)
        self._mu_x = np.zeros((cap, d_x))
        self._cov_x = np.zeros((cap, d_x, d_x))
        self._inv_x = np.zeros((cap, d_x, d_x))
        self._logdet_x = np.zeros(cap)
        self._mu_y = np.zeros((cap, d_y))
        self._cov_y = np.zeros((cap, d_y, d_y))
        self._inv_y = np.zeros((cap, d_y, d_y))
        self._logdet_y = np.zeros(cap)
        self._dirty = np.zeros(cap, dtype=bool)

        self._sigma_x: Optional[np.ndarray] = None
        self._sigma_y: Optional[np.ndarray] = None
        self._warmup_x: list = []
        self._warmup_y: list = []
        self._maybe_resolve_sigma_from_config()

    # ------------------------------------------------------------------ setup

    def _maybe_resolve_sigma_from_config(self) -> None:
        cfg = self.config
        if cfg.sigma_ini_x is not None and (cfg.sigma_ini_y is not None or self.d_y == 0):
            sx = _as_sigma(cfg.sigma_ini_x, self.d_x, "sigma_ini_x")
            sy = (
                _as_sigma(cfg.sigma_ini_y, self.d_y, "sigma_ini_y")
                if self.d_y
                else np.zeros(0)
            )
            self._set_sigma(sx, sy)

    def _set_sigma(self, sigma_x: np.ndarray, sigma_y: np.ndarray) -> None:
        floor_std = float(np.sqrt(self.config.regularization_floor))
        self._sigma_x = np.maximum(sigma_x, floor_std)
        self._sigma_y = np.maximum(sigma_y, floor_std) if self.d_y else np.zeros(0)

    @property
    def sigma_resolved(self) -> bool:
        return self._sigma_x is not None

    @property
    def sigma_ini_x(self) -> Optional[np.ndarray]:
        return None if self._sigma_x is None else self._sigma_x.copy()

    @property
    def sigma_ini_y(self) -> Optional[np.ndarray]:
        return None if self._sigma_y is None else self._sigma_y.copy()

    @property
    def novelty_log_threshold(self) -> Optional[float]:
        """Absolute creation threshold, or None when the relative rule is on."""
        if self.config.novelty_log_density is None:
            return None
        return float(self.config.novelty_log_density)

    def finalize_warmup(self) -> None:
        """Fix creation scales from whatever has been buffered so far."""
        if self.sigma_resolved:
            return
        if not self._warmup_x:
            raise ValueError("cannot finalize warm-up with no samples")
        self._resolve_sigma_and_flush()

    def _resolve_sigma_and_flush(self) -> None:
        bx = np.asarray(self._warmup_x)
        by = np.asarray(self._warmup_y) if self.d_y else np.zeros((len(self._warmup_x), 0))
        cfg = self.config
        floor_std = float(np.sqrt(cfg.regularization_floor))
        if cfg.sigma_ini_x is not None:
            sx = _as_sigma(cfg.sigma_ini_x, self.d_x, "sigma_ini_x")
        else:
            sx = np.maximum(bx.std(axis=0) * cfg.sigma_scale, floor_std)
        if self.d_y == 0:
            sy = np.zeros(0)
        elif cfg.sigma_ini_y is not None:
            sy = _as_sigma(cfg.sigma_ini_y, self.d_y, "sigma_ini_y")
        else:
            sy = np.maximum(by.std(axis=0) * cfg.sigma_scale, floor_std)
        self._set_sigma(sx, sy)
        xs, ys = self._warmup_x, self._warmup_y
        self._warmup_x, self._warmup_y = [], []
        for i, x in enumerate(xs):
            self._absorb(x, ys[i] if self.d_y else np.zeros(0), i)

    # ------------------------------------------------------------- properties

    @property
    def n_components(self) -> int:
        return self._n

    @property
    def n_samples(self) -> int:
        return self._n_samples

    @property
    def total_mass(self) -> float:
        return float(self._mass[: self._n].sum())

    def priors(self) -> np.ndarray:
        if self._n == 0:
            return np.zeros(0)
        m = self._mass[: self._n]
        return m / m.sum()

    @property
    def masses(self) -> np.ndarray:
        """Read-only view of per-component accumulated mass."""
        m = self._mass[: self._n]
        m.flags.writeable = False
        return m

    @property
    def output_means(self) -> np.ndarray:
        """Read-only (K, d_y) view of per-component output means."""
        m = self._mu_y[: self._n]
        m.flags.writeable = False
        return m

    @property
    def collision_values(self) -> np.ndarray:
        """Read-only view of per-component collision credit."""
        v = self._collision[: self._n]
        v.flags.writeable = False
        return v

    def add_collision_credit(self, indices: np.ndarray, amount: float) -> None:
        """Add ``amount`` to each listed component, once per occurrence."""
        idx = np.asarray(indices, dtype=int).ravel()
        if idx.size == 0:
            return
        if (idx < 0).any() or (idx >= self._n).any():
            raise IndexError("component index out of range")
        np.add.at(self._collision, idx, amount)

    # ------------------------------------------------------------------ views

    def component(self, j: int) -> MixtureComponent:
        if not 0 <= j < self._n:
            raise IndexError(f"component index {j} out of range (n={self._n})")
        self._refresh()
        return MixtureComponent(
            index=j,
            mass=float(self._mass[j]),
            created_at=int(self._created[j]),
            collision_value=float(self._collision[j]),
            mu_x=self._mu_x[j].copy(),
            cov_x=self._cov_x[j].copy(),
            mu_y=self._mu_y[j].copy(),
            cov_y=self._cov_y[j].copy(),
            inv_cov_x=self._inv_x[j].copy(),
            inv_cov_y=self._inv_y[j].copy(),
            logdet_x=float(self._logdet_x[j]),
            logdet_y=float(self._logdet_y[j]),
        )

    def components(self) -> Iterator[MixtureComponent]:
        for j in range(self._n):
            yield self.component(j)

    # ---------------------------------------------------------------- density

    def _refresh(self) -> None:
        """Recompute inverse/log-det caches of dirty components.

        Uses an eigendecomposition so positive-definiteness can be restored
        in the same pass: eigenvalues below the regularization floor are
        clipped and the stored covariance rebuilt (only when actually
        violated, so benign streams keep bit-exact covariances).
        """
        n = self._n
        idx = np.flatnonzero(self._dirty[:n])
        if idx.size == 0:
            return
        floor = self.config.regularization_floor
        for dim, cov, inv, logdet in (
            (self.d_x, self._cov_x, self._inv_x, self._logdet_x),
            (self.d_y, self._cov_y, self._inv_y, self._logdet_y),
        ):
            if dim == 0:
                continue
            c = cov[idx]
            c = 0.5 * (c + np.swapaxes(c, 1, 2))
            w, v = np.linalg.eigh(c)
            bad = w[:, 0] < floor
            if bad.any():
                w = np.maximum(w, floor)
                rebuilt = np.einsum("kij,kj,klj->kil", v, w, v)
                sub = np.flatnonzero(bad)
                cov[idx[sub]] = rebuilt[sub]
            inv[idx] = np.einsum("kij,kj,klj->kil", v, 1.0 / w, v)
            logdet[idx] = np.log(w).sum(axis=1)
        self._dirty[idx] = False

    @staticmethod
    def _mahalanobis_sq(diff: np.ndarray, inv: np.ndarray) -> np.ndarray:
        """(n, K) quadratic forms diff' inv diff.

        The streaming learner calls this once per sample (n = 1), where a
        plain two-step einsum beats any batched dispatch; larger batches go
        through BLAS as a matmul batched over components.
        """
        if diff.shape[0] == 1:
            d1 = diff[0]  # (K, d)
            tmp = np.einsum("kij,kj->ki", inv, d1)
            return np.einsum("ki,ki->k", tmp, d1)[None, :]
        dt = np.ascontiguousarray(diff.transpose(1, 0, 2))  # (K, n, d)
        return np.einsum("kni,kni->kn", np.matmul(dt, inv), dt).T

    def log_density_x(self, X: np.ndarray) -> np.ndarray:
        """(n, K) per-component log N(x; mu_x, cov_x) for a batch of inputs."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d_x:
            raise ValueError(f"expected x dimension {self.d_x}, got {X.shape[1]}")
        if self._n == 0:
            return np.zeros((X.shape[0], 0))
        self._refresh()
        n = self._n
        diff = X[:, None, :] - self._mu_x[None, :n, :]
        q = self._mahalanobis_sq(diff, self._inv_x[:n])
        return -0.5 * (self.d_x * _LOG_2PI + self._logdet_x[:n] + q)

    def log_density_y(self, Y: np.ndarray) -> np.ndarray:
        """(n, K) per-component log N(y; mu_y, cov_y)."""
        if self.d_y == 0:
            raise ValueError("mixture has no output block")
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.shape[1] != self.d_y:
            raise ValueError(f"expected y dimension {self.d_y}, got {Y.shape[1]}")
        if self._n == 0:
            return np.zeros((Y.shape[0], 0))
        self._refresh()
        n = self._n
        diff = Y[:, None, :] - self._mu_y[None, :n, :]
        q = self._mahalanobis_sq(diff, self._inv_y[:n])
        return -0.5 * (self.d_y * _LOG_2PI + self._logdet_y[:n] + q)

    def component_loglik(self, j: int, x: np.ndarray, y: Optional[np.ndarray] = None) -> float:
        """Joint log-density of (x, y) under component j; x-only when y is None."""
        if not 0 <= j < self._n:
            raise IndexError(f"component index {j} out of range (n={self._n})")
        val = float(self.log_density_x(np.asarray(x, dtype=float)[None, :])[0, j])
        if y is not None:
            val += float(self.log_density_y(np.asarray(y, dtype=float)[None, :])[0, j])
        return val

    # --------------------------------------------------------------- learning

    def learn_one(self, x: np.ndarray, y: Optional[np.ndarray] = None) -> None:
        """Absorb one sample, creating or updating components as needed."""
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.d_x:
            raise ValueError(f"expected x of dimension {self.d_x}, got {x.size}")
        if self.d_y:
            if y is None:
                raise ValueError("mixture has an output block; y is required")
            y = np.asarray(y, dtype=float).ravel()
            if y.size != self.d_y:
                raise ValueError(f"expected y of dimension {self.d_y}, got {y.size}")
        else:
            y = np.zeros(0)
        if not np.isfinite(x).all() or not np.isfinite(y).all():
            raise ValueError("sample contains non-finite values; mixture unchanged")

        if not self.sigma_resolved:
            self._warmup_x.append(x.copy())
            self._warmup_y.append(y.copy())
            self._n_samples += 1
            if len(self._warmup_x) >= self.config.sigma_warmup:
                self._resolve_sigma_and_flush()
            return

        self._absorb(x, y, self._n_samples)
        self._n_samples += 1

    def _absorb(self, x: np.ndarray, y: np.ndarray, sample_index: int) -> None:
        cfg = self.config
        n = self._n
        if n == 0:
            self._create(x, y, sample_index)
            return

        lx = self.log_density_x(x[None, :])[0]
        joint = lx + (self.log_density_y(y[None, :])[0] if self.d_y else 0.0)
        can_grow = cfg.max_components is None or n < cfg.max_components
        if can_grow:
            if cfg.novelty_log_density is not None:
                novel = joint.max() < cfg.novelty_log_density
            else:
                # Relative rule: novel when the squared Mahalanobis distance
                # to every component (under that component's own covariance)
                # exceeds its in-distribution expectation D by more than
                # novelty_mahalanobis standard deviations of chi-square_D.
                # Referencing each component's peak keeps the test calibrated
                # as covariances grow.
                d = self.d_x + self.d_y
                radius2 = d + cfg.novelty_mahalanobis * math.sqrt(2.0 * d)
                peaks = -0.5 * (
                    d * _LOG_2PI
                    + self._logdet_x[:n]
                    + (self._logdet_y[:n] if self.d_y else 0.0)
                )
                novel = (joint - peaks).max() < -0.5 * radius2
            if novel:
                self._create(x, y, sample_index)
                return

        # Posterior share of the sample for each component.
        mass = self._mass[:n]
        logw = joint + np.log(mass)
        logw -= logw.max()
        w = np.exp(logw)
        w /= w.sum()

        omega_if = w / (mass + w)
        sel = np.flatnonzero(omega_if >= cfg.update_skip_threshold)
        if sel.size == 0:
            return
        w_sel = w[sel]
        self._mass[sel] += w_sel
        omega = w_sel / self._mass[sel]

        z = np.concatenate([x, y]) if self.d_y else x
        for dim, off, mu, cov in (
            (self.d_x, 0, self._mu_x, self._cov_x),
            (self.d_y, self.d_x, self._mu_y, self._cov_y),
        ):
            if dim == 0:
                continue
            block = z[off : off + dim]
            old = mu[sel]
            delta = omega[:, None] * (block - old)
            new = old + delta
            mu[sel] = new
            resid = block - new
            cov[sel] += (
                -delta[:, :, None] * delta[:, None, :]
                + omega[:, None, None]
                * (resid[:, :, None] * resid[:, None, :] - cov[sel])
            )
        self._dirty[sel] = True

    def _create(self, x: np.ndarray, y: np.ndarray, sample_index: int) -> None:
        if self._n == self._mass.size:
            self._grow()
        j = self._n
        self._n += 1
        self._mass[j] = 1.0
        self._created[j] = sample_index
        self._collision[j] = 0.0
        self._mu_x[j] = x
        self._cov_x[j] = np.diag(self._sigma_x**2)
        if self.d_y:
            self._mu_y[j] = y
            self._cov_y[j] = np.diag(self._sigma_y**2)
        self._dirty[j] = True

    def _grow(self) -> None:
        cap = self._mass.size * 2

        def bigger(arr: np.ndarray) -> np.ndarray:
            out = np.zeros((cap,) + arr.shape[1:], dtype=arr.dtype)
            out[: arr.shape[0]] = arr
            return out

        self._mass = bigger(self._mass)
        self._created = bigger(self._created)
        self._collision = bigger(self._collision)
        self._mu_x = bigger(self._mu_x)
        self._cov_x = bigger(self._cov_x)
        self._inv_x = bigger(self._inv_x)
        self._logdet_x = bigger(self._logdet_x)
        self._mu_y = bigger(self._mu_y)
        self._cov_y = bigger(self._cov_y)
        self._inv_y = bigger(self._inv_y)
        self._logdet_y = bigger(self._logdet_y)
        self._dirty = bigger(self._dirty)

    # ------------------------------------------------------------- prediction

    def prediction_set(self, mass_fraction: Optional[float] = None) -> np.ndarray:
        """Indices of the high-mass prefix covering ``mass_fraction`` of the prior.

        Components are ranked by mass (descending) with ties broken by
        creation order (older first); the smallest prefix whose cumulative
        prior reaches the fraction is returned, in rank order.
        """
        if self._n == 0:
            return np.zeros(0, dtype=int)
        frac = (
            self.config.min_mass_fraction_for_prediction
            if mass_fraction is None
            else float(mass_fraction)
        )
        if not 0.0 < frac <= 1.0:
            raise ValueError("mass fraction must lie in (0, 1]")
        n = self._n
        order = np.lexsort((self._created[:n], -self._mass[:n]))
        cum = np.cumsum(self._mass[:n][order])
        need = frac * cum[-1]
        cut = int(np.searchsorted(cum, need, side="left"))
        return order[: cut + 1]

    # ------------------------------------------------------------ persistence

    def snapshot(self) -> str:
        """Serialize the full estimator state as versioned text."""
        cfg = self.config
        lines = [
            f"format={SNAPSHOT_FORMAT}",
            f"version={SNAPSHOT_VERSION}",
            f"d_x={self.d_x}",
            f"d_y={self.d_y}",
            f"n_samples={self._n_samples}",
            f"n_components={self._n}",
            f"config.novelty_mahalanobis={fmt_float(cfg.novelty_mahalanobis)}",
            "config.novelty_log_density="
            + ("none" if cfg.novelty_log_density is None else fmt_float(cfg.novelty_log_density)),
            "config.sigma_ini_x=" + _sigma_to_text(cfg.sigma_ini_x),
            "config.sigma_ini_y=" + _sigma_to_text(cfg.sigma_ini_y),
            f"config.sigma_warmup={cfg.sigma_warmup}",
            f"config.sigma_scale={fmt_float(cfg.sigma_scale)}",
            f"config.update_skip_threshold={fmt_float(cfg.update_skip_threshold)}",
            f"config.regularization_floor={fmt_float(cfg.regularization_floor)}",
            "config.min_mass_fraction_for_prediction="
            + fmt_float(cfg.min_mass_fraction_for_prediction),
            "config.max_components="
            + ("none" if cfg.max_components is None else str(cfg.max_components)),
            f"sigma_resolved={int(self.sigma_resolved)}",
        ]
        if self.sigma_resolved:
            lines.append("resolved.sigma_ini_x=" + _vec_to_text(self._sigma_x))
            lines.append("resolved.sigma_ini_y=" + _vec_to_text(self._sigma_y))
        for j in range(self._n):
            p = f"component.{j}"
            lines += [
                f"{p}.mass={fmt_float(self._mass[j])}",
                f"{p}.created_at={int(self._created[j])}",
                f"{p}.collision_value={fmt_float(self._collision[j])}",
                f"{p}.mu_x=" + _vec_to_text(self._mu_x[j]),
                f"{p}.cov_x=" + _vec_to_text(self._cov_x[j].ravel()),
                f"{p}.mu_y=" + _vec_to_text(self._mu_y[j]),
                f"{p}.cov_y=" + _vec_to_text(self._cov_y[j].ravel()),
            ]
        lines.append(f"warmup_buffered={len(self._warmup_x)}")
        for i in range(len(self._warmup_x)):
            lines.append(f"warmup.{i}.x=" + _vec_to_text(self._warmup_x[i]))
            lines.append(f"warmup.{i}.y=" + _vec_to_text(self._warmup_y[i]))
        lines.append(f"end={SNAPSHOT_FORMAT}")
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        atomic_write_text(path, self.snapshot())

    @classmethod
    def restore(cls, text: str) -> "Mixture":
        """Rebuild a mixture from ``snapshot`` output, bit-exactly."""
        kv = _parse_kv(text)
        if kv.get("format") != SNAPSHOT_FORMAT:
            raise SnapshotError(f"not an {SNAPSHOT_FORMAT} snapshot")
        if kv.get("version") != str(SNAPSHOT_VERSION):
            raise SnapshotError(f"unsupported snapshot version {kv.get('version')!r}")
        if kv.get("end") != SNAPSHOT_FORMAT:
            raise SnapshotError("snapshot is truncated (missing end marker)")
        try:
            d_x = int(kv["d_x"])
            d_y = int(kv["d_y"])
            config = IgmmConfig(
                novelty_mahalanobis=float(kv["config.novelty_mahalanobis"]),
                novelty_log_density=_float_or_none(kv["config.novelty_log_density"]),
                sigma_ini_x=_sigma_from_text(kv["config.sigma_ini_x"]),
                sigma_ini_y=_sigma_from_text(kv["config.sigma_ini_y"]),
                sigma_warmup=int(kv["config.sigma_warmup"]),
                sigma_scale=float(kv["config.sigma_scale"]),
                update_skip_threshold=float(kv["config.update_skip_threshold"]),
                regularization_floor=float(kv["config.regularization_floor"]),
                min_mass_fraction_for_prediction=float(
                    kv["config.min_mass_fraction_for_prediction"]
                ),
                max_components=(
                    None if kv["config.max_components"] == "none" else int(kv["config.max_components"])
                ),
            )
            m = cls(d_x, d_y, config)
            m._n_samples = int(kv["n_samples"])
            if int(kv["sigma_resolved"]):
                m._set_sigma(
                    _vec_from_text(kv["resolved.sigma_ini_x"], d_x),
                    _vec_from_text(kv["resolved.sigma_ini_y"], d_y),
                )
            n = int(kv["n_components"])
            for j in range(n):
                p = f"component.{j}"
                if m._n == m._mass.size:
                    m._grow()
                m._mass[j] = float(kv[f"{p}.mass"])
                m._created[j] = int(kv[f"{p}.created_at"])
                m._collision[j] = float(kv[f"{p}.collision_value"])
                m._mu_x[j] = _vec_from_text(kv[f"{p}.mu_x"], d_x)
                m._cov_x[j] = _vec_from_text(kv[f"{p}.cov_x"], d_x * d_x).reshape(d_x, d_x)
                m._mu_y[j] = _vec_from_text(kv[f"{p}.mu_y"], d_y)
                m._cov_y[j] = _vec_from_text(kv[f"{p}.cov_y"], d_y * d_y).reshape(d_y, d_y)
                m._dirty[j] = True
                m._n = j + 1
            for i in range(int(kv["warmup_buffered"])):
                m._warmup_x.append(_vec_from_text(kv[f"warmup.{i}.x"], d_x))
                m._warmup_y.append(_vec_from_text(kv[f"warmup.{i}.y"], d_y))
        except KeyError as exc:
            raise SnapshotError(f"snapshot missing field {exc}") from exc
        except ValueError as exc:
            raise SnapshotError(f"malformed snapshot field: {exc}") from exc
        return m

    @classmethod
    def load(cls, path: str) -> "Mixture":
        with open(path) as fh:
            return cls.restore(fh.read())

    @classmethod
    def from_components(
        cls,
        components: Sequence[tuple],
        d_x: int,
        d_y: int,
        config: Optional[IgmmConfig] = None,
    ) -> "Mixture":
        """Build a mixture directly from (mu_x, cov_x, mu_y, cov_y, mass) tuples.

        Intended for tests and tooling.  When no config is given, creation
        scales default to ones so the mixture can keep learning.
        """
        if config is None:
            config = IgmmConfig(sigma_ini_x=1.0, sigma_ini_y=1.0 if d_y else None)
        m = cls(d_x, d_y, config)
        if not m.sigma_resolved:
            m._set_sigma(np.ones(d_x), np.ones(d_y) if d_y else np.zeros(0))
        for mu_x, cov_x, mu_y, cov_y, mass in components:
            if m._n == m._mass.size:
                m._grow()
            j = m._n
            m._mass[j] = float(mass)
            m._created[j] = j
            m._mu_x[j] = np.asarray(mu_x, dtype=float).reshape(d_x)
            m._cov_x[j] = np.asarray(cov_x, dtype=float).reshape(d_x, d_x)
            if d_y:
                m._mu_y[j] = np.asarray(mu_y, dtype=float).reshape(d_y)
                m._cov_y[j] = np.asarray(cov_y, dtype=float).reshape(d_y, d_y)
            m._dirty[j] = True
            m._n = j + 1
        m._n_samples = int(round(m.total_mass))
        return m


def _sigma_to_text(value) -> str:
    if value is None:
        return "auto"
    arr = np.asarray(value, dtype=float).ravel()
    return " ".join(fmt_float(v) for v in arr)


def _sigma_from_text(text: str):
    if text == "auto":
        return None
    vals = [float(v) for v in text.split()]
    return vals[0] if len(vals) == 1 else np.array(vals)


def _vec_to_text(vec: np.ndarray) -> str:
    return " ".join(fmt_float(v) for v in np.asarray(vec, dtype=float).ravel())


def _vec_from_text(text: str, size: int) -> np.ndarray:
    vals = np.array([float(v) for v in text.split()]) if text else np.zeros(0)
    if vals.size != size:
        raise ValueError(f"expected {size} values, got {vals.size}")
    return vals


def _float_or_none(text: str) -> Optional[float]:
    return None if text == "none" else float(text)


def _parse_kv(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise SnapshotError(f"malformed snapshot line: {line!r}")
        key, _, value = line.partition("=")
        out[key] = value
    return out

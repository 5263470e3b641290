"""RSU selection metrics (SNR and SANR), threshold-based RSU sets and service maps."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .channel import RadioParams, average_snr
from .ekf import MotionModel, StateEstimate
from .geometry import (
    RSU_IDS,
    NetworkGeometry,
    distance,
    lateral_gap_sq,
    spatial_frequency_gradient,
)

POLICY_KINDS = ("snr", "sanr")
DEFAULT_TAU = {"sanr": 0.98, "snr": 0.662}
# Any positive value gives identical maps; this is the order of magnitude of
# the predicted position variance in a converged single-RSU trial.
DEFAULT_Q11_REF = 1e-4


@dataclass(frozen=True)
class SelectionPolicy:
    kind: str = "sanr"
    tau_th: float = 0.98
    q11_ref: float = DEFAULT_Q11_REF

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"policy kind must be one of {POLICY_KINDS}, got {self.kind!r}")
        if not 0.0 < self.tau_th <= 1.0:
            raise ValueError(f"tau_th must lie in (0, 1], got {self.tau_th}")
        if self.q11_ref <= 0:
            raise ValueError("q11_ref must be positive")


def derivative_gain(M: int) -> float:
    """sum_m m^2 over the array divided by M, i.e. (M-1)(2M-1)/6."""
    return (M - 1) * (2 * M - 1) / 6.0


def sanr_kappa(radio: RadioParams, q11: float) -> float:
    n = radio.pathloss_exp
    return (
        radio.tx_power
        * derivative_gain(radio.M)
        * np.pi**2
        * radio.wavelength**n
        * q11
        / ((4.0 * np.pi) ** n * radio.noise_power)
    )


def sanr_closed_form(u: int, x, geom: NetworkGeometry, radio: RadioParams, q11: float):
    """SANR under the small-Ts approximation, using only the position variance q11."""
    if q11 <= 0:
        raise ValueError("q11 must be positive")
    gap2 = lateral_gap_sq(u, geom)
    d2 = np.asarray(distance(u, x, geom)) ** 2
    return sanr_kappa(radio, q11) * gap2**2 * d2 ** -(3.0 + radio.pathloss_exp / 2.0)


def sanr_exact(
    u: int,
    pred: StateEstimate,
    geom: NetworkGeometry,
    radio: RadioParams,
    mm: MotionModel,
):
    """SANR as rho (M-1)(2M-1)/6 * g^T Q g with the full predicted covariance."""
    x = pred.x_hat
    g = spatial_frequency_gradient(u, x, mm.Ts, geom)
    quad = np.einsum("...i,...ij,...j->...", g, pred.Q_hat, g)
    return average_snr(u, x, geom, radio) * derivative_gain(radio.M) * quad


def snr_metrics(x, geom: NetworkGeometry, radio: RadioParams):
    """Average SNRs of the three RSUs, stacked on the last axis."""
    return np.stack([average_snr(u, x, geom, radio) for u in RSU_IDS], axis=-1)


def sanr_metrics(x, geom: NetworkGeometry, radio: RadioParams, q11: float):
    return np.stack(
        [sanr_closed_form(u, x, geom, radio, q11) for u in RSU_IDS], axis=-1
    )


def policy_metrics(policy: SelectionPolicy, x, geom: NetworkGeometry, radio: RadioParams):
    if policy.kind == "snr":
        return snr_metrics(x, geom, radio)
    return sanr_metrics(x, geom, radio, policy.q11_ref)


def select_rsu_snr(x, geom: NetworkGeometry, radio: RadioParams):
    """RSU with the largest average SNR; ties go to the smallest index."""
    return np.argmax(snr_metrics(x, geom, radio), axis=-1) + 1


def select_rsu_sanr(x, geom: NetworkGeometry, radio: RadioParams, q11: float):
    return np.argmax(sanr_metrics(x, geom, radio, q11), axis=-1) + 1


def rank_rsus(metrics, tau_th: float):
    """Vectorised RSU-set selection.

    Returns ``(order, count)`` where ``order[..., :count]`` lists the selected
    RSU ids by descending metric. Fractions are accumulated over the sorted
    values so that relabelling RSUs cannot change a decision by rounding.
    """
    metrics = np.asarray(metrics, dtype=float)
    if np.any(metrics <= 0):
        raise ValueError("all metrics must be positive")
    idx = np.argsort(-metrics, axis=-1, kind="stable")
    ranked = np.take_along_axis(metrics, idx, axis=-1)
    cum = np.cumsum(ranked, axis=-1)
    frac = cum / cum[..., -1:]
    count = np.where(frac[..., 0] >= tau_th, 1, np.where(frac[..., 1] >= tau_th, 2, 3))
    return idx + 1, count


def select_rsu_set(gammas, tau_th: float) -> tuple[int, ...]:
    """Smallest prefix of RSUs (by descending metric) capturing tau_th of the total."""
    gammas = np.asarray(gammas, dtype=float)
    if gammas.shape != (3,):
        raise ValueError("expected one metric per RSU")
    order, count = rank_rsus(gammas, tau_th)
    if count == 3:
        return RSU_IDS
    return tuple(int(u) for u in order[:count])


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    resolution: float = 0.5

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("grid resolution must be positive")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("grid extents must be non-empty")

    @classmethod
    def default_for(cls, geom: NetworkGeometry, resolution: float = 0.5) -> "GridSpec":
        return cls(-1.5 * geom.X, 1.5 * geom.X, 0.0, geom.Y, resolution)

    @staticmethod
    def _centers(lo: float, hi: float, res: float) -> np.ndarray:
        n = max(int(round((hi - lo) / res)), 1)
        mid = 0.5 * (lo + hi)
        return mid + (np.arange(n) - (n - 1) / 2.0) * res

    @property
    def x_centers(self) -> np.ndarray:
        return self._centers(self.x_min, self.x_max, self.resolution)

    @property
    def y_centers(self) -> np.ndarray:
        return self._centers(self.y_min, self.y_max, self.resolution)


@dataclass
class ServiceAreaMap:
    """Per-cell metrics and selected RSU sets; arrays are indexed [iy, ix]."""

    policy: SelectionPolicy
    grid: GridSpec
    x: np.ndarray
    y: np.ndarray
    metrics: np.ndarray
    order: np.ndarray
    count: np.ndarray

    def rsu_set(self, iy: int, ix: int) -> tuple[int, ...]:
        return tuple(sorted(int(u) for u in self.order[iy, ix, : self.count[iy, ix]]))

    def set_labels(self) -> np.ndarray:
        """Sorted-digit label per cell, e.g. ``"12"``."""
        labels = np.empty(self.count.shape, dtype=object)
        for iy in range(self.count.shape[0]):
            for ix in range(self.count.shape[1]):
                labels[iy, ix] = "".join(str(u) for u in self.rsu_set(iy, ix))
        return labels

    def joint_fraction(self) -> float:
        """Fraction of cells served by two or more RSUs."""
        return float(np.mean(self.count >= 2))

    def to_csv(self, path) -> Path:
        path = Path(path)
        labels = self.set_labels()
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "metric1", "metric2", "metric3", "rsu_set"])
            for iy, yv in enumerate(self.y):
                for ix, xv in enumerate(self.x):
                    m = self.metrics[iy, ix]
                    w.writerow([repr(float(xv)), repr(float(yv))]
                               + [repr(float(v)) for v in m] + [labels[iy, ix]])
        return path


def build_service_area_map(
    policy: SelectionPolicy,
    grid: GridSpec | None,
    geom: NetworkGeometry,
    radio: RadioParams,
) -> ServiceAreaMap:
    """Evaluate the policy's metric on every cell centre.

    The lane offset of ``geom`` is replaced by each row's y. ``tau_th == 1``
    yields the single-RSU map (plain argmax).
    """
    grid = GridSpec.default_for(geom) if grid is None else grid
    xs, ys = grid.x_centers, grid.y_centers
    metrics = np.empty((ys.size, xs.size, 3))
    for iy, yv in enumerate(ys):
        metrics[iy] = policy_metrics(policy, xs, replace(geom, y=float(yv)), radio)
    if policy.tau_th >= 1.0:
        order = np.argsort(-metrics, axis=-1, kind="stable") + 1
        count = np.ones(metrics.shape[:-1], dtype=int)
    else:
        order, count = rank_rsus(metrics, policy.tau_th)
    return ServiceAreaMap(policy, grid, xs, ys, metrics, order, count)


def calibrate_snr_tau(
    geom: NetworkGeometry,
    radio: RadioParams,
    sanr_tau: float = 0.98,
    grid: GridSpec | None = None,
    q11: float = DEFAULT_Q11_REF,
    iters: int = 40,
) -> float:
    """Bisect the SNR threshold so both joint maps have the same joint-area fraction."""
    target = build_service_area_map(
        SelectionPolicy("sanr", sanr_tau, q11), grid, geom, radio
    ).joint_fraction()
    lo, hi = 1e-6, 1.0 - 1e-12
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        frac = build_service_area_map(
            SelectionPolicy("snr", mid, q11), grid, geom, radio
        ).joint_fraction()
        if frac < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)

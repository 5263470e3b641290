"""Single-RSU extended Kalman filter on uplink sounding samples.

State is ``t = [x, v]``. Every function broadcasts over leading batch axes so
the same code serves one trial or a stack of Monte Carlo trials.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .channel import (
    Combiner,
    RadioParams,
    SoundingSample,
    array_response,
    array_response_derivative,
    lift_channel,
)
from .geometry import NetworkGeometry, spatial_frequency, spatial_frequency_gradient

I2 = np.eye(2)


@dataclass(frozen=True)
class MotionModel:
    """Constant-velocity transition with a static acceleration term.

    Args:
        Ts: sampling period in seconds.
        sigma_alpha: std of the per-trial acceleration (m/s^2).
        sigma_omega: scale of the per-step transition noise.
    """

    Ts: float = 0.01
    sigma_alpha: float = 0.0
    sigma_omega: float = 0.0

    def __post_init__(self):
        if self.Ts < 0 or self.sigma_alpha < 0 or self.sigma_omega < 0:
            raise ValueError("Ts and noise scales must be non-negative")

    @cached_property
    def A(self) -> np.ndarray:
        return np.array([[1.0, self.Ts], [0.0, 1.0]])

    @cached_property
    def b(self) -> np.ndarray:
        return np.array([self.Ts**2 / 2.0, self.Ts])

    @cached_property
    def Q_alpha(self) -> np.ndarray:
        return np.outer(self.b, self.b) * self.sigma_alpha**2

    @cached_property
    def Q_omega(self) -> np.ndarray:
        return self.sigma_omega**2 * np.diag([self.Ts**2, 1.0])

    @cached_property
    def Q_e(self) -> np.ndarray:
        return self.Q_alpha + self.Q_omega


@dataclass
class VehicleState:
    x: np.ndarray
    v: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(self.x, self.v), axis=-1).astype(float)

    @classmethod
    def from_array(cls, t) -> "VehicleState":
        t = np.asarray(t, dtype=float)
        return cls(x=t[..., 0], v=t[..., 1])


@dataclass
class StateEstimate:
    t_hat: np.ndarray
    Q_hat: np.ndarray
    rejected: np.ndarray = field(default_factory=lambda: np.asarray(False))

    @property
    def x_hat(self) -> np.ndarray:
        return self.t_hat[..., 0]


def _apply_A(t, Ts: float):
    # elementwise so results do not depend on the batch size (BLAS kernels do)
    return np.stack([t[..., 0] + Ts * t[..., 1], t[..., 1]], axis=-1)


def transition(t, alpha, c, mm: MotionModel):
    """Apply ``A t + b alpha + c`` to state array(s) ``t``."""
    t = np.asarray(t, dtype=float)
    return _apply_A(t, mm.Ts) + np.multiply.outer(np.asarray(alpha, dtype=float), mm.b) + c


def draw_transition_noise(rng: np.random.Generator, mm: MotionModel, shape=()):
    """Sample c ~ N(0, Q_omega); Q_omega is diagonal."""
    n = rng.standard_normal(tuple(shape) + (2,))
    return n * (mm.sigma_omega * np.array([mm.Ts, 1.0]))


def step_true_state(
    t: VehicleState, alpha, mm: MotionModel, rng: np.random.Generator
) -> VehicleState:
    """Advance the true vehicle state by one sounding period.

    ``alpha`` is held by the caller for the whole coherence block; the
    transition noise is drawn fresh here.
    """
    arr = t.as_array()
    c = draw_transition_noise(rng, mm, arr.shape[:-1])
    return VehicleState.from_array(transition(arr, alpha, c, mm))


def predict(est: StateEstimate, mm: MotionModel) -> StateEstimate:
    Ts = mm.Ts
    Q = np.asarray(est.Q_hat, dtype=float)
    q11, q12, q21, q22 = Q[..., 0, 0], Q[..., 0, 1], Q[..., 1, 0], Q[..., 1, 1]
    # A Q A^T written out
    p11 = q11 + Ts * (q12 + q21) + Ts * Ts * q22
    p12 = q12 + Ts * q22
    p21 = q21 + Ts * q22
    AQA = np.stack([np.stack([p11, p12], -1), np.stack([p21, q22], -1)], -2)
    return StateEstimate(_apply_A(np.asarray(est.t_hat, dtype=float), Ts), AQA + mm.Q_e)


class ConjugateBeam:
    """Matched beam at the predicted spatial frequency."""

    name = "conjugate"

    def steering(self, psi_hat, M: int, step: int):
        return psi_hat

    def to_dict(self) -> dict:
        return {"strategy": self.name}


class MonopulseDither:
    """Conjugate beams alternately steered to psi_hat + delta and psi_hat - delta.

    ``delta`` defaults to a quarter of the 2*pi/M beam spacing. Even steps use
    the positive offset.
    """

    name = "monopulse"

    def __init__(self, delta: float | None = None):
        self.delta = delta

    def offset(self, M: int) -> float:
        return 2.0 * np.pi / (4 * M) if self.delta is None else float(self.delta)

    def steering(self, psi_hat, M: int, step: int):
        d = self.offset(M)
        return psi_hat + (d if step % 2 == 0 else -d)

    def to_dict(self) -> dict:
        return {"strategy": self.name, "delta": self.delta}


COMBINER_STRATEGIES = {"conjugate": ConjugateBeam, "monopulse": MonopulseDither}


def make_strategy(spec: dict | str | None):
    if spec is None:
        return MonopulseDither()
    if isinstance(spec, str):
        spec = {"strategy": spec}
    spec = dict(spec)
    name = spec.pop("strategy")
    if name not in COMBINER_STRATEGIES:
        raise ValueError(f"unknown combiner strategy {name!r}")
    if name == "conjugate":
        return ConjugateBeam()
    return MonopulseDither(**spec)


def design_combiner(
    u: int,
    pred: StateEstimate,
    geom: NetworkGeometry,
    radio: RadioParams,
    strategy=None,
    step: int = 0,
) -> Combiner:
    """Unit-norm receive combiner for RSU ``u`` built from the prediction."""
    strategy = MonopulseDither() if strategy is None else strategy
    M = radio.M
    psi_hat = spatial_frequency(u, pred.x_hat, geom)
    psi_s = strategy.steering(psi_hat, M, step)
    z = np.conj(array_response(M, psi_s)) / np.sqrt(M)
    return Combiner(u=u, z_complex=z)


def predicted_channel(u: int, pred: StateEstimate, beta, geom: NetworkGeometry, M: int):
    """Real-lifted ray channel ``beta d_M(psi_hat)`` at the predicted position."""
    psi_hat = spatial_frequency(u, pred.x_hat, geom)
    return lift_channel(np.asarray(beta)[..., None] * array_response(M, psi_hat))


def jacobian(
    u: int,
    pred: StateEstimate,
    beta,
    geom: NetworkGeometry,
    mm: MotionModel,
    M: int,
):
    """Real channel Jacobian dh/dt = (dh/dpsi) (dpsi/dt)^T, shape (..., 2M, 2)."""
    x_hat = pred.x_hat
    psi_hat = spatial_frequency(u, x_hat, geom)
    h_dot = lift_channel(np.asarray(beta)[..., None] * array_response_derivative(M, psi_hat))
    g_dot = spatial_frequency_gradient(u, x_hat, mm.Ts, geom)
    return h_dot[..., :, None] * g_dot[..., None, :]


def gain(Q, H):
    """K = Q H^T (H Q H^T + I/2)^{-1} for observation matrix H of shape (..., k, 2)."""
    HQ = H @ Q
    S = HQ @ np.swapaxes(H, -1, -2) + 0.5 * np.eye(H.shape[-2])
    return np.swapaxes(np.linalg.solve(S, HQ), -1, -2)


def kalman_gain(pred: StateEstimate, comb: Combiner, D, rho):
    """Single-RSU gain applied to the raw innovation r - sqrt(rho) Z h_hat."""
    H = np.sqrt(np.asarray(rho, dtype=float))[..., None, None] * (comb.z_real @ D)
    return gain(pred.Q_hat, H)


def posterior(pred: StateEstimate, H, innovation) -> StateEstimate:
    """Shared measurement update for any stacked observation matrix ``H``.

    Rows whose innovation is not finite keep the prediction and are flagged.
    """
    K = gain(pred.Q_hat, H)
    ok = np.all(np.isfinite(innovation), axis=-1) & np.all(
        np.isfinite(K), axis=(-2, -1)
    )
    innov = np.where(ok[..., None], innovation, 0.0)
    t = pred.t_hat + np.einsum("...ij,...j->...i", K, innov)
    Q = (I2 - K @ H) @ pred.Q_hat
    Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
    Q = np.where(ok[..., None, None], Q, pred.Q_hat)
    t = np.where(ok[..., None], t, pred.t_hat)
    return StateEstimate(t, Q, rejected=~ok)


def update(
    pred: StateEstimate,
    sample: SoundingSample,
    comb: Combiner,
    geom: NetworkGeometry,
    mm: MotionModel,
    beta,
) -> StateEstimate:
    """Refine the prediction with one RSU's sounding sample.

    ``beta`` is the LOS fading coefficient known at the RSU; the predicted
    sample is ``sqrt(rho) Z beta d_M(psi_hat)``.
    """
    u = comb.u
    M = comb.M
    rho = np.asarray(sample.snr_avg, dtype=float)
    sq = np.sqrt(rho)
    D = jacobian(u, pred, beta, geom, mm, M)
    H = sq[..., None, None] * (comb.z_real @ D)
    h_pred = predicted_channel(u, pred, beta, geom, M)
    expected = sq[..., None] * np.einsum("...ij,...j->...i", comb.z_real, h_pred)
    return posterior(pred, H, sample.r_real - expected)

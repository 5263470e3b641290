"""Joint EKF update fusing sounding samples from several RSUs."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .channel import Combiner, SoundingSample
from .ekf import StateEstimate, gain, posterior


@dataclass
class JointObservation:
    """Stacked quantities for an ordered RSU set; blocks follow ``U``'s order."""

    U: tuple[int, ...]
    r_stack: np.ndarray
    P: np.ndarray
    Z_block: np.ndarray
    D_stack: np.ndarray
    h_pred_stack: np.ndarray

    @property
    def snr_scale(self) -> np.ndarray:
        """P^{1/2} kron I_2."""
        sq = np.sqrt(np.diagonal(self.P, axis1=-2, axis2=-1))
        return np.repeat(sq, 2, axis=-1)[..., :, None] * np.eye(2 * len(self.U))

    @property
    def H(self) -> np.ndarray:
        return self.snr_scale @ self.Z_block @ self.D_stack

    def predicted_sample(self) -> np.ndarray:
        zh = np.einsum("...ij,...j->...i", self.Z_block, self.h_pred_stack)
        return np.einsum("...ij,...j->...i", self.snr_scale, zh)


def _block_diag(blocks: Sequence[np.ndarray]) -> np.ndarray:
    rows = sum(b.shape[-2] for b in blocks)
    cols = sum(b.shape[-1] for b in blocks)
    batch = np.broadcast_shapes(*(b.shape[:-2] for b in blocks))
    out = np.zeros(batch + (rows, cols))
    r = c = 0
    for b in blocks:
        out[..., r : r + b.shape[-2], c : c + b.shape[-1]] = b
        r += b.shape[-2]
        c += b.shape[-1]
    return out


def assemble_joint(
    U: Sequence[int],
    samples: Mapping[int, SoundingSample],
    combiners: Mapping[int, Combiner],
    jacobians: Mapping[int, np.ndarray],
    predicted_channels: Mapping[int, np.ndarray],
    snrs: Mapping[int, np.ndarray],
) -> JointObservation:
    U = tuple(int(u) for u in U)
    if not U:
        raise ValueError("RSU set must not be empty")
    for name, parts in (
        ("sample", samples),
        ("combiner", combiners),
        ("jacobian", jacobians),
        ("predicted channel", predicted_channels),
        ("snr", snrs),
    ):
        missing = [u for u in U if u not in parts]
        if missing:
            raise ValueError(f"missing {name} for RSU(s) {missing}")
    Ms = {combiners[u].M for u in U}
    if len(Ms) != 1:
        raise ValueError(f"inconsistent antenna counts {sorted(Ms)}")

    r = np.concatenate([np.asarray(samples[u].r_real) for u in U], axis=-1)
    rho = np.stack([np.asarray(snrs[u], dtype=float) for u in U], axis=-1)
    P = rho[..., :, None] * np.eye(len(U))
    Z = _block_diag([combiners[u].z_real for u in U])
    D = np.concatenate([np.asarray(jacobians[u]) for u in U], axis=-2)
    h = np.concatenate([np.asarray(predicted_channels[u]) for u in U], axis=-1)
    return JointObservation(U, r, P, Z, D, h)


def joint_kalman_gain(pred: StateEstimate, obs: JointObservation) -> np.ndarray:
    return gain(pred.Q_hat, obs.H)


def joint_update(pred: StateEstimate, obs: JointObservation) -> StateEstimate:
    return posterior(pred, obs.H, obs.r_stack - obs.predicted_sample())


def count_exchanged_samples(U: Sequence[int], serving: int | None = None) -> tuple[int, int]:
    """(samples used, samples forwarded to the fusing RSU) for one step.

    Fusion happens at the first RSU of ``U``; every other member forwards
    one sample, whichever RSU currently serves the vehicle.
    """
    n = len(tuple(U))
    return n, max(n - 1, 0)

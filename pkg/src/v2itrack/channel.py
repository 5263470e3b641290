"""ULA channel model, real-domain lifting and uplink sounding.

Complex quantities are lifted to the real domain as ``h -> [Re h; Im h]`` and
a row combiner ``z`` as ``[[Re z, -Im z], [Im z, Re z]]`` so that the real
product reproduces ``z @ h``. All functions broadcast over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import NetworkGeometry, distance

SPEED_OF_LIGHT = 299_792_458.0


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def dbm_to_watts(dbm):
    return db_to_linear(dbm) * 1e-3


@dataclass(frozen=True)
class RadioParams:
    """Link budget and array parameters, stored in the units used in configs.

    Powers are in dBm and the Rician factor in dB; the linear values used by
    the model are exposed as properties.
    """

    M: int = 32
    carrier_freq: float = 28e9
    bandwidth: float = 20e6
    tx_power_dbm: float = 23.0
    noise_power_dbm: float = -101.0
    pathloss_exp: float = 2.0
    rician_k_db: float = 13.0

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 2:
            raise ValueError(f"M must be an integer >= 2, got {self.M}")
        if self.carrier_freq <= 0 or self.bandwidth <= 0:
            raise ValueError("carrier frequency and bandwidth must be positive")

    @cached_property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @cached_property
    def tx_power(self) -> float:
        return float(dbm_to_watts(self.tx_power_dbm))

    @cached_property
    def noise_power(self) -> float:
        return float(dbm_to_watts(self.noise_power_dbm))

    @cached_property
    def rician_K(self) -> float:
        return float(db_to_linear(self.rician_k_db))

    @cached_property
    def los_amplitude(self) -> float:
        """Amplitude sqrt(K/(K+1)) of the LOS term in a unit-power channel."""
        K = self.rician_K
        return float(np.sqrt(K / (K + 1.0)))


@dataclass
class ChannelRealization:
    u: int
    psi: np.ndarray
    beta: np.ndarray
    h_complex: np.ndarray

    @property
    def h_real(self) -> np.ndarray:
        return lift_channel(self.h_complex)


@dataclass
class Combiner:
    u: int
    z_complex: np.ndarray

    @property
    def M(self) -> int:
        return self.z_complex.shape[-1]

    @cached_property
    def z_real(self) -> np.ndarray:
        return lift_combiner(self.z_complex)


@dataclass
class SoundingSample:
    u: int
    r_real: np.ndarray
    snr_avg: np.ndarray


def array_response(M: int, psi):
    """d_M(psi) = [1, e^{j psi}, ..., e^{j(M-1) psi}], shape ``psi.shape + (M,)``."""
    m = np.arange(M)
    return np.exp(1j * np.multiply.outer(np.asarray(psi, dtype=float), m))


def array_response_derivative(M: int, psi):
    """d/dpsi of :func:`array_response`: entries ``j m e^{j m psi}``."""
    return 1j * np.arange(M) * array_response(M, psi)


def lift_channel(h):
    h = np.asarray(h)
    return np.concatenate([h.real, h.imag], axis=-1)


def lift_combiner(z):
    z = np.asarray(z)
    top = np.concatenate([z.real, -z.imag], axis=-1)
    bottom = np.concatenate([z.imag, z.real], axis=-1)
    return np.stack([top, bottom], axis=-2)


def average_snr(u: int, x, geom: NetworkGeometry, radio: RadioParams):
    """Mean received SNR rho = (tx/noise) (lambda / (4 pi d))^n with unit antenna gains."""
    d = distance(u, x, geom)
    if np.any(d <= 0):
        raise ValueError("vehicle-to-RSU distance must be positive")
    return (radio.tx_power / radio.noise_power) * (
        radio.wavelength / (4.0 * np.pi * d)
    ) ** radio.pathloss_exp


def rician_channel(psi, beta, nlos, K: float):
    """Combine a LOS ray ``beta d_M(psi)`` with a diffuse vector ``nlos``.

    ``nlos`` holds unit-variance complex Gaussian entries, so the LOS/NLOS
    power ratio is K and E||h||^2 = M.
    """
    nlos = np.asarray(nlos)
    los = np.asarray(beta)[..., None] * array_response(nlos.shape[-1], psi)
    return np.sqrt(K / (K + 1.0)) * los + np.sqrt(1.0 / (K + 1.0)) * nlos


def complex_normal(rng: np.random.Generator, size):
    """Circularly-symmetric complex Gaussian with unit variance."""
    v = rng.standard_normal(tuple(np.atleast_1d(size)) + (2,)) * np.sqrt(0.5)
    return v[..., 0] + 1j * v[..., 1]


def draw_channel(
    u: int,
    psi,
    radio: RadioParams,
    rng: np.random.Generator,
    beta=None,
) -> ChannelRealization:
    """Draw a Rician channel for RSU ``u``.

    ``beta`` is the unit-modulus LOS fading; a uniform random phase is drawn
    when it is not supplied.
    """
    psi = np.asarray(psi, dtype=float)
    if beta is None:
        beta = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=psi.shape))
    nlos = complex_normal(rng, psi.shape + (radio.M,))
    h = rician_channel(psi, beta, nlos, radio.rician_K)
    return ChannelRealization(u=u, psi=psi, beta=np.asarray(beta), h_complex=h)


def sound(
    ch: ChannelRealization,
    comb: Combiner,
    rho,
    rng: np.random.Generator | None = None,
    noise=None,
) -> SoundingSample:
    """Real-domain sounding sample ``sqrt(rho) Z h + n`` with n ~ N(0, I/2).

    Pass ``noise`` explicitly to reuse pre-drawn noise, or ``noise=0`` for a
    noiseless sample.
    """
    if comb.u != ch.u:
        raise ValueError(f"combiner is for RSU {comb.u}, channel for RSU {ch.u}")
    if comb.M != ch.h_complex.shape[-1]:
        raise ValueError(
            f"combiner has {comb.M} taps, channel has {ch.h_complex.shape[-1]}"
        )
    rho = np.asarray(rho, dtype=float)
    clean = np.sqrt(rho)[..., None] * np.einsum(
        "...ij,...j->...i", comb.z_real, ch.h_real
    )
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise must be given")
        noise = rng.standard_normal(clean.shape) * np.sqrt(0.5)
    return SoundingSample(u=ch.u, r_real=clean + noise, snr_avg=rho)

"""Road/RSU geometry: distances, spatial frequencies and their state derivatives.

The vehicle moves along the x-axis in a lane at lateral offset ``y``. RSU 1
sits at x = 0 on the far side of the road (lateral gap ``Y - y``), RSUs 2 and
3 sit at x = -X and x = +X on the near side (lateral gap ``y``). All three are
mounted ``h`` metres above the vehicle antenna.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RSU_IDS = (1, 2, 3)


@dataclass(frozen=True)
class NetworkGeometry:
    """RSU placement (X, Y, h) plus the vehicle's lane offset y, in metres."""

    X: float
    Y: float
    h: float
    y: float

    def __post_init__(self):
        if not (self.X > 0 and self.h > 0):
            raise ValueError(f"need X > 0 and h > 0, got X={self.X}, h={self.h}")
        if not (self.Y > self.y > 0):
            raise ValueError(f"need Y > y > 0, got Y={self.Y}, y={self.y}")

    def rsu_position(self, u: int) -> tuple[float, float, float]:
        """(x, y, z) of RSU ``u``; z is measured from the vehicle antenna plane."""
        check_rsu(u)
        if u == 1:
            return (0.0, self.Y, self.h)
        return (-self.X if u == 2 else self.X, 0.0, self.h)


def check_rsu(u: int) -> None:
    if u not in RSU_IDS:
        raise ValueError(f"RSU index must be one of {RSU_IDS}, got {u!r}")


def _offset_gap(u: int, x, geom: NetworkGeometry):
    """Signed longitudinal offset, its sign w.r.t. x, and the squared side gap."""
    check_rsu(u)
    x = np.asarray(x, dtype=float)
    if u == 1:
        return x, 1.0, (geom.Y - geom.y) ** 2 + geom.h**2
    gap2 = geom.y**2 + geom.h**2
    if u == 2:
        return geom.X + x, 1.0, gap2
    return geom.X - x, -1.0, gap2


def lateral_gap_sq(u: int, geom: NetworkGeometry) -> float:
    """Squared distance from RSU ``u`` to the lane line (lateral and height)."""
    return _offset_gap(u, 0.0, geom)[2]


def distance(u: int, x, geom: NetworkGeometry):
    """Euclidean vehicle-to-RSU distance in metres."""
    off, _, gap2 = _offset_gap(u, x, geom)
    return np.sqrt(off**2 + gap2)


def spatial_frequency(u: int, x, geom: NetworkGeometry):
    """Spatial frequency psi (radians per element, half-wavelength spacing)."""
    off, _, gap2 = _offset_gap(u, x, geom)
    return np.pi * off / np.sqrt(off**2 + gap2)


def spatial_frequency_slope(u: int, x, geom: NetworkGeometry):
    """Scalar d(psi/pi)/dx; negative for RSU 3."""
    off, sign, gap2 = _offset_gap(u, x, geom)
    return sign * gap2 * (off**2 + gap2) ** -1.5


def spatial_frequency_gradient(u: int, x, Ts: float, geom: NetworkGeometry):
    """Gradient of psi w.r.t. the state [x, v]: ``pi * slope * [1, Ts]``.

    Returns an array of shape ``x.shape + (2,)``.
    """
    s = np.pi * np.asarray(spatial_frequency_slope(u, x, geom))
    return np.stack([s, s * Ts], axis=-1)

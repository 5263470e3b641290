"""Scenario definitions, presets and JSON-friendly (de)serialisation.

Config units: metres, seconds, km/h for the initial speed, dBm for powers and
dB for the Rician factor.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .channel import RadioParams
from .ekf import MotionModel, make_strategy
from .geometry import NetworkGeometry
from .selection import (
    DEFAULT_Q11_REF,
    DEFAULT_TAU,
    RSU_IDS,
    SelectionPolicy,
    select_rsu_sanr,
    select_rsu_snr,
)

TRACKERS = ("snr", "sanr", "snr-joint", "sanr-joint", "full")


def kmh_to_mps(v: float) -> float:
    return v * 1e3 / 60**2


def parse_tracker(tracker: str) -> tuple[str, int | None]:
    """Split a tracker name into (kind, fixed RSU or None).

    Kinds: ``fixed``, ``select``, ``joint`` and ``full``.
    """
    if tracker.startswith("fixed:"):
        try:
            u = int(tracker.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad fixed tracker {tracker!r}") from None
        if u not in RSU_IDS:
            raise ValueError(f"bad fixed tracker {tracker!r}")
        return "fixed", u
    if tracker not in TRACKERS:
        raise ValueError(
            f"unknown tracker {tracker!r}; expected fixed:<u> or one of {TRACKERS}"
        )
    if tracker == "full":
        return "full", None
    return ("joint" if tracker.endswith("-joint") else "select"), None


def tracker_metric(tracker: str) -> str | None:
    """Metric a tracker selects with ('snr'/'sanr'), None for fixed/full."""
    kind, _ = parse_tracker(tracker)
    if kind in ("fixed", "full"):
        return None
    return tracker.split("-")[0]


@dataclass(frozen=True)
class Scenario:
    geom: NetworkGeometry
    radio: RadioParams
    motion: MotionModel
    x0: float
    v0_kmh: float
    duration: float
    policy: SelectionPolicy = SelectionPolicy()
    tracker: str = "sanr"
    combiner: dict = field(default_factory=lambda: {"strategy": "monopulse", "delta": None})
    trials: int = 500
    master_seed: int = 0
    beta_mismatch: bool = False
    name: str = "custom"
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        parse_tracker(self.tracker)
        metric = tracker_metric(self.tracker)
        if metric is not None and metric != self.policy.kind:
            raise ValueError(
                f"tracker {self.tracker!r} needs a {metric!r} policy, got {self.policy.kind!r}"
            )
        make_strategy(self.combiner)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.motion.Ts <= 0:
            raise ValueError("Ts must be positive")
        ratio = self.duration / self.motion.Ts
        if self.duration <= 0 or abs(ratio - round(ratio)) > 1e-6:
            raise ValueError(
                f"duration {self.duration} s is not a whole number of Ts={self.motion.Ts} s steps"
            )

    @property
    def v0(self) -> float:
        return kmh_to_mps(self.v0_kmh)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.motion.Ts))

    @property
    def initial_state(self) -> np.ndarray:
        return np.array([self.x0, self.v0])

    def with_tracker(self, tracker: str, tau: float | None = None) -> "Scenario":
        """Switch tracker, keeping the policy's metric consistent with it.

        When the metric changes and ``tau`` is not given, the default
        threshold for the new metric is used.
        """
        metric = tracker_metric(tracker)
        policy = self.policy
        if metric is not None and metric != policy.kind:
            policy = replace(policy, kind=metric, tau_th=DEFAULT_TAU[metric])
        if tau is not None:
            policy = replace(policy, tau_th=float(tau))
        return replace(self, tracker=tracker, policy=policy)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "geometry": asdict(self.geom),
            "radio": asdict(self.radio),
            "motion": {
                "Ts": self.motion.Ts,
                "sigma_alpha": self.motion.sigma_alpha,
                "sigma_omega": self.motion.sigma_omega,
            },
            "vehicle": {"x0": self.x0, "v0_kmh": self.v0_kmh},
            "duration": self.duration,
            "policy": asdict(self.policy),
            "tracker": self.tracker,
            "combiner": dict(self.combiner),
            "trials": self.trials,
            "master_seed": self.master_seed,
            "beta_mismatch": self.beta_mismatch,
            "notes": copy.deepcopy(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {
            "name", "geometry", "radio", "motion", "vehicle", "duration", "policy",
            "tracker", "combiner", "trials", "master_seed", "beta_mismatch", "notes",
        }
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario field(s): {sorted(unknown)}")
        try:
            radio = dict(d["radio"])
            if "M" in radio:
                if float(radio["M"]) != int(radio["M"]):
                    raise ValueError(f"M must be an integer, got {radio['M']}")
                radio["M"] = int(radio["M"])
            return cls(
                geom=NetworkGeometry(**d["geometry"]),
                radio=RadioParams(**radio),
                motion=MotionModel(**d["motion"]),
                x0=float(d["vehicle"]["x0"]),
                v0_kmh=float(d["vehicle"]["v0_kmh"]),
                duration=float(d["duration"]),
                policy=SelectionPolicy(**d.get("policy", {})),
                tracker=d.get("tracker", "sanr"),
                combiner=dict(d.get("combiner", {"strategy": "monopulse", "delta": None})),
                trials=int(d.get("trials", 500)),
                master_seed=int(d.get("master_seed", 0)),
                beta_mismatch=bool(d.get("beta_mismatch", False)),
                name=d.get("name", "custom"),
                notes=dict(d.get("notes", {})),
            )
        except TypeError as exc:
            raise ValueError(f"invalid scenario: {exc}") from None
        except KeyError as exc:
            raise ValueError(f"missing scenario field {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def apply_override(d: dict, key: str, raw: str) -> dict:
    """Set ``d[a][b]... = value`` for a dotted ``key``; the path must already exist.

    ``raw`` is parsed as JSON when possible, otherwise kept as a string.
    """
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out = copy.deepcopy(d)
    node = out
    parts = key.split(".")
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise KeyError(key)
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise KeyError(key)
    node[parts[-1]] = value
    return out


def sigma_alpha_for(v0_kmh: float) -> float:
    """Acceleration std: 5 % of the initial speed in m/s."""
    return 0.05 * kmh_to_mps(v0_kmh)


SIGMA_OMEGA = 10**-1.5


def selection_disagreements(geom: NetworkGeometry, radio: RadioParams, x_lo: float,
                            x_hi: float, step: float = 0.005,
                            q11: float = DEFAULT_Q11_REF) -> list[tuple[float, float]]:
    """Intervals of the lane where SNR and SANR single-RSU choices differ."""
    xs = np.arange(x_lo, x_hi + step / 2, step)
    diff = select_rsu_snr(xs, geom, radio) != select_rsu_sanr(xs, geom, radio, q11)
    out = []
    i = 0
    while i < xs.size:
        if diff[i]:
            j = i
            while j + 1 < xs.size and diff[j + 1]:
                j += 1
            out.append((float(xs[i]), float(xs[j])))
            i = j + 1
        else:
            i += 1
    return out


def crossover_b_start(geom: NetworkGeometry, radio: RadioParams, v0: float,
                      lead_time: float = 1.25) -> tuple[float, float]:
    """(boundary, x0) for the crossover-B trajectory.

    The boundary is the entry point, for a vehicle driving towards +x, of the
    disagreement zone between RSU 2 and RSU 1 on the x < 0 side. The vehicle
    starts ``lead_time`` seconds before reaching it.
    """
    zones = selection_disagreements(geom, radio, -1.5 * geom.X, 0.0)
    if not zones:
        raise ValueError("no SNR/SANR disagreement zone on this lane")
    boundary = round(zones[-1][0], 2)
    return boundary, boundary - lead_time * v0


PRESETS = ("fig3_crossoverB", "fig4a_rsu1area", "fig4b_rsu2area", "fig5_rsu12")
PRESET_ALIASES = {
    "fig2": "fig5_rsu12",
    "fig3": "fig3_crossoverB",
    "fig4a": "fig4a_rsu1area",
    "fig4b": "fig4b_rsu2area",
    "fig5": "fig5_rsu12",
}


def _base(name, X, y, x0, duration, tracker, M=32, v0_kmh=60.0, notes=None):
    geom = NetworkGeometry(X=X, Y=31.0, h=7.5, y=y)
    radio = RadioParams(M=M)
    motion = MotionModel(Ts=0.01, sigma_alpha=sigma_alpha_for(v0_kmh), sigma_omega=SIGMA_OMEGA)
    metric = tracker_metric(tracker) or "sanr"
    policy = SelectionPolicy(metric, DEFAULT_TAU[metric], DEFAULT_Q11_REF)
    return Scenario(geom, radio, motion, x0, v0_kmh, duration, policy, tracker,
                    name=name, notes=notes or {})


def preset(name: str) -> Scenario:
    """Scenario for one of the reproduced experiments."""
    name = PRESET_ALIASES.get(name, name)
    if name == "fig3_crossoverB":
        geom = NetworkGeometry(X=75.0, Y=31.0, h=7.5, y=3.25)
        boundary, x0 = crossover_b_start(geom, RadioParams(), kmh_to_mps(60.0))
        return _base(name, 75.0, 3.25, x0, 2.5, "sanr",
                     notes={"crossover_boundary_x": boundary, "lead_time_s": 1.25})
    if name == "fig4a_rsu1area":
        return _base(name, 125.0, 3.25, -75.0, 1.5, "sanr")
    if name == "fig4b_rsu2area":
        return _base(name, 125.0, 24.25, -80.0, 1.5, "sanr")
    if name == "fig5_rsu12":
        return _base(name, 75.0, 3.25, -60.0, 2.5, "sanr-joint")
    raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")

"""Monte Carlo trial engine and mean-squared-error aggregation.

Each trial owns a random stream derived from ``(master_seed, trial_index)``.
Per step the stream always yields the transition noise plus the diffuse
channel and receiver noise of all three RSUs, whichever RSUs are selected,
so different trackers see common random numbers. Trials are advanced
together as a batch; the arithmetic per trial does not depend on the batch.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .channel import ChannelRealization, average_snr, rician_channel, sound
from .ekf import (
    StateEstimate,
    design_combiner,
    jacobian,
    make_strategy,
    predict,
    predicted_channel,
    transition,
    update,
)
from .geometry import RSU_IDS, spatial_frequency
from .joint import assemble_joint, joint_update
from .scenario import Scenario, parse_tracker
from .selection import rank_rsus, sanr_metrics, snr_metrics


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(trial_index,))
    return np.random.default_rng(ss)


@dataclass
class TrialRecord:
    """One trial; per-step arrays have the step count as leading axis."""

    trial_index: int
    time_s: np.ndarray
    truth: np.ndarray
    predicted: np.ndarray
    estimate: np.ndarray
    q_prior: np.ndarray
    q_post: np.ndarray
    rsu_order: np.ndarray
    rsu_count: np.ndarray
    rejected: np.ndarray
    alpha: float
    beta: np.ndarray

    def rsu_sets(self) -> list[tuple[int, ...]]:
        return [tuple(int(u) for u in o[:c]) for o, c in zip(self.rsu_order, self.rsu_count)]

    @property
    def samples_used(self) -> np.ndarray:
        return self.rsu_count

    @property
    def samples_exchanged(self) -> np.ndarray:
        return self.rsu_count - 1


@dataclass
class TrialBatch:
    """Stacked records; every array has the trial axis first."""

    scenario: Scenario
    trial_indices: np.ndarray
    time_s: np.ndarray
    truth: np.ndarray
    predicted: np.ndarray
    estimate: np.ndarray
    q_prior: np.ndarray
    q_post: np.ndarray
    rsu_order: np.ndarray
    rsu_count: np.ndarray
    rejected: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def trial(self, k: int) -> TrialRecord:
        return TrialRecord(
            int(self.trial_indices[k]), self.time_s, self.truth[k], self.predicted[k],
            self.estimate[k], self.q_prior[k], self.q_post[k], self.rsu_order[k],
            self.rsu_count[k], self.rejected[k], float(self.alpha[k]), self.beta[k],
        )

    @property
    def sq_error(self) -> np.ndarray:
        """Squared posterior errors, shape (trials, steps, 2) for [x, v]."""
        return (self.truth - self.estimate) ** 2

    @property
    def sq_prior_error(self) -> np.ndarray:
        return (self.truth - self.predicted) ** 2


@dataclass
class MseSeries:
    time_s: np.ndarray
    mse_x: np.ndarray
    mse_v: np.ndarray
    avg_samples_used: np.ndarray
    avg_samples_exchanged: np.ndarray
    se_x: np.ndarray
    se_v: np.ndarray
    prior_mse_x: np.ndarray
    prior_mse_v: np.ndarray
    trials: int

    @classmethod
    def from_batch(cls, batch: TrialBatch) -> "MseSeries":
        sq = batch.sq_error
        prior = batch.sq_prior_error
        n = sq.shape[0]
        se = sq.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(sq.shape[1:])
        used = batch.rsu_count.astype(float)
        return cls(
            time_s=batch.time_s,
            mse_x=sq[..., 0].mean(axis=0),
            mse_v=sq[..., 1].mean(axis=0),
            avg_samples_used=used.mean(axis=0),
            avg_samples_exchanged=(used - 1.0).mean(axis=0),
            se_x=se[..., 0],
            se_v=se[..., 1],
            prior_mse_x=prior[..., 0].mean(axis=0),
            prior_mse_v=prior[..., 1].mean(axis=0),
            trials=n,
        )

    @property
    def mean_samples_used(self) -> float:
        return float(self.avg_samples_used.mean())

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "time_s", "mse_x", "mse_v",
                        "avg_samples_used", "avg_samples_exchanged"])
            for k in range(self.time_s.size):
                w.writerow([k + 1] + [repr(float(a[k])) for a in (
                    self.time_s, self.mse_x, self.mse_v,
                    self.avg_samples_used, self.avg_samples_exchanged)])
        return path

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.mse_x)) and np.all(np.isfinite(self.mse_v)))


def _select(kind: str, fixed_u, sc: Scenario, x_hat: np.ndarray):
    B = x_hat.shape[0]
    if kind == "fixed":
        order = np.tile([fixed_u] + [u for u in RSU_IDS if u != fixed_u], (B, 1))
        return order, np.ones(B, dtype=int)
    if kind == "full":
        return np.tile(RSU_IDS, (B, 1)), np.full(B, 3)
    if sc.policy.kind == "snr":
        metrics = snr_metrics(x_hat, sc.geom, sc.radio)
    else:
        metrics = sanr_metrics(x_hat, sc.geom, sc.radio, sc.policy.q11_ref)
    if kind == "select":
        order = np.argsort(-metrics, axis=-1, kind="stable") + 1
        return order, np.ones(B, dtype=int)
    return rank_rsus(metrics, sc.policy.tau_th)


def _draw_step(gens, M: int):
    """Per trial: 2 transition normals, 3 x M diffuse taps, 3 x 2 receiver noise."""
    n_tot = 2 + 3 * 2 * M + 3 * 2
    raw = np.stack([g.standard_normal(n_tot) for g in gens])
    c = raw[:, :2]
    taps = raw[:, 2 : 2 + 6 * M].reshape(-1, 3, M, 2) * np.sqrt(0.5)
    nlos = taps[..., 0] + 1j * taps[..., 1]
    noise = raw[:, 2 + 6 * M :].reshape(-1, 3, 2) * np.sqrt(0.5)
    return c, nlos, noise


def simulate(sc: Scenario, trial_indices=None) -> TrialBatch:
    """Run the scenario's tracker over the given trials (default: all)."""
    if trial_indices is None:
        trial_indices = np.arange(sc.trials)
    trial_indices = np.atleast_1d(np.asarray(trial_indices, dtype=int))
    B, N, M = trial_indices.size, sc.n_steps, sc.radio.M
    geom, radio, mm = sc.geom, sc.radio, sc.motion
    kind, fixed_u = parse_tracker(sc.tracker)
    strategy = make_strategy(sc.combiner)
    K = radio.rician_K

    gens = [trial_rng(sc.master_seed, int(i)) for i in trial_indices]
    alpha = np.empty(B)
    beta = np.empty((B, 3), dtype=complex)
    for k, g in enumerate(gens):
        alpha[k] = mm.sigma_alpha * g.standard_normal()
        beta[k] = np.exp(1j * g.uniform(0.0, 2.0 * np.pi, size=3))
    known_beta = np.ones_like(beta) if sc.beta_mismatch else radio.los_amplitude * beta
    sigma_c = mm.sigma_omega * np.array([mm.Ts, 1.0])

    truth = np.tile(sc.initial_state, (B, 1))
    est = StateEstimate(truth.copy(), np.zeros((B, 2, 2)))

    rec = {
        "truth": np.empty((B, N, 2)),
        "predicted": np.empty((B, N, 2)),
        "estimate": np.empty((B, N, 2)),
        "q_prior": np.empty((B, N, 2, 2)),
        "q_post": np.empty((B, N, 2, 2)),
        "rsu_order": np.empty((B, N, 3), dtype=int),
        "rsu_count": np.empty((B, N), dtype=int),
        "rejected": np.zeros((B, N), dtype=bool),
    }

    for step in range(1, N + 1):
        c, nlos, noise = _draw_step(gens, M)
        truth = transition(truth, alpha, c * sigma_c, mm)
        pred = predict(est, mm)
        order, count = _select(kind, fixed_u, sc, pred.x_hat)

        t_new = np.empty_like(pred.t_hat)
        q_new = np.empty_like(pred.Q_hat)
        rej = np.zeros(B, dtype=bool)
        groups: dict[tuple[int, ...], list[int]] = {}
        for b in range(B):
            groups.setdefault(tuple(order[b, : count[b]]), []).append(b)

        for U, rows in groups.items():
            idx = np.asarray(rows)
            sub = StateEstimate(pred.t_hat[idx], pred.Q_hat[idx])
            x_true = truth[idx, 0]
            parts = {k: {} for k in ("sample", "comb", "jac", "hpred", "rho")}
            for u in U:
                psi = spatial_frequency(u, x_true, geom)
                rho = average_snr(u, x_true, geom, radio)
                h = rician_channel(psi, beta[idx, u - 1], nlos[idx, u - 1], K)
                ch = ChannelRealization(u, psi, beta[idx, u - 1], h)
                comb = design_combiner(u, sub, geom, radio, strategy, step)
                parts["sample"][u] = sound(ch, comb, rho, noise=noise[idx, u - 1])
                parts["comb"][u] = comb
                parts["rho"][u] = rho
            if len(U) == 1:
                u = U[0]
                post = update(sub, parts["sample"][u], parts["comb"][u], geom, mm,
                              known_beta[idx, u - 1])
            else:
                for u in U:
                    kb = known_beta[idx, u - 1]
                    parts["jac"][u] = jacobian(u, sub, kb, geom, mm, M)
                    parts["hpred"][u] = predicted_channel(u, sub, kb, geom, M)
                obs = assemble_joint(U, parts["sample"], parts["comb"], parts["jac"],
                                     parts["hpred"], parts["rho"])
                post = joint_update(sub, obs)
            t_new[idx] = post.t_hat
            q_new[idx] = post.Q_hat
            rej[idx] = post.rejected

        est = StateEstimate(t_new, q_new)
        s = step - 1
        rec["truth"][:, s] = truth
        rec["predicted"][:, s] = pred.t_hat
        rec["estimate"][:, s] = t_new
        rec["q_prior"][:, s] = pred.Q_hat
        rec["q_post"][:, s] = q_new
        rec["rsu_order"][:, s] = order
        rec["rsu_count"][:, s] = count
        rec["rejected"][:, s] = rej

    time_s = np.arange(1, N + 1) * mm.Ts
    return TrialBatch(sc, trial_indices, time_s, alpha=alpha, beta=beta, **rec)


def run_trial(sc: Scenario, trial_index: int) -> TrialRecord:
    return simulate(sc, [trial_index]).trial(0)


def run_monte_carlo(sc: Scenario) -> MseSeries:
    return MseSeries.from_batch(simulate(sc))


def sidecar(sc: Scenario, **extra) -> dict:
    """Everything needed to rerun ``sc``: resolved scenario plus provenance."""
    return {
        "code_version": __version__,
        "scenario": sc.to_dict(),
        "combiner": dict(sc.combiner),
        "master_seed": sc.master_seed,
        **extra,
    }


def write_results(series: MseSeries, sc: Scenario, out_dir, stem: str = "mse",
                  sidecar_name: str = "run.json", **extra) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = series.to_csv(out / f"{stem}.csv")
    js = out / sidecar_name
    js.write_text(json.dumps(sidecar(sc, **extra), indent=2, sort_keys=True) + "\n")
    return csv_path, js

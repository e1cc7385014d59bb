"""Recursive ensemble filter over the latent state [phase, phase velocity, weights].

Prediction advances each member's phase at its own velocity (constant-velocity
transition) and adds seeded Gaussian perturbations.  The measurement update is
the perturbed-observation ensemble Kalman step: each member is evaluated
through the nonlinear observation operator at its *own* phase, so no
linearization is ever performed.  Because weights are time-invariant, a
posterior over them is simultaneously a prediction of every channel's full
trajectory, including channels that are never observed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import basis
from .errors import DomainError, NumericalError
from .model import (IPModel, PHASE_CLAMP, PHASE_WRAP, ProcessNoise,
                    ROLE_OBSERVED)


@dataclass
class Ensemble:
    """E state members (rows) plus a step counter."""

    members: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=float)
        if self.members.ndim != 2 or self.members.shape[0] < 2:
            raise DomainError("ensemble needs at least 2 members")
        if not np.isfinite(self.members).all():
            raise DomainError("ensemble members must be finite")

    @property
    def size(self) -> int:
        return int(self.members.shape[0])


@dataclass
class Observation:
    """Partial observation: values for a subset of the observed channels."""

    channels: tuple[str, ...]
    values: np.ndarray
    timestamp: float | None = None

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if not self.channels:
            raise DomainError("observation mask is empty")
        if self.values.size != len(self.channels):
            raise DomainError("observation values do not match the mask")
        if not np.isfinite(self.values).all():
            raise DomainError("observation values must be finite")

    @classmethod
    def from_mapping(cls, mapping, timestamp=None) -> "Observation":
        names = tuple(mapping)
        return cls(names, np.array([mapping[n] for n in names]), timestamp)


def _apply_phase_mode(phases: np.ndarray, mode: str) -> np.ndarray:
    if mode == PHASE_WRAP:
        return np.mod(phases, 1.0)
    return np.clip(phases, 0.0, 1.0)


def predict(ensemble: Ensemble, dt: float, model: IPModel,
            rng: np.random.Generator,
            noise: ProcessNoise | None = None) -> Ensemble:
    """Constant-velocity phase advance plus seeded process noise.

    ``dt`` is in seconds; member phase velocities are per sample, so the
    advance is scaled by the model sample rate.
    """
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    noise = noise if noise is not None else model.process_noise
    members = ensemble.members.copy()
    members[:, 0] += members[:, 1] * dt * model.sample_rate
    e = members.shape[0]
    if noise.phase_std > 0.0:
        members[:, 0] += rng.normal(0.0, noise.phase_std, size=e)
    if noise.velocity_std > 0.0:
        members[:, 1] += rng.normal(0.0, noise.velocity_std, size=e)
    if noise.weight_std > 0.0:
        members[:, 2:] += rng.normal(0.0, noise.weight_std,
                                     size=members[:, 2:].shape)
    members[:, 0] = _apply_phase_mode(members[:, 0], model.phase_mode)
    return Ensemble(members=members, t=ensemble.t + 1)


def observe_members(members: np.ndarray, channels, model: IPModel) -> np.ndarray:
    """Predicted observations, one row per member, at each member's own phase."""
    for name in channels:
        if model.roles.get(name) != ROLE_OBSERVED:
            raise DomainError(f"channel {name!r} is not observed at runtime")
    phases = np.clip(members[:, 0], 0.0, 1.0)
    out = np.empty((members.shape[0], len(channels)))
    for col, name in enumerate(channels):
        features = basis.design_matrix(phases, model.basis, name)
        weights = members[:, model.state_block(name)]
        out[:, col] = np.einsum("eb,eb->e", features, weights)
    return out


def observe_member(member: np.ndarray, channels, model: IPModel) -> np.ndarray:
    """Observation operator h(x) for a single member."""
    return observe_members(np.atleast_2d(member), channels, model)[0]


def _solve_innovation(S: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if not np.isfinite(S).all():
        raise NumericalError("innovation covariance is not finite")
    try:
        return np.linalg.solve(S, rhs)
    except np.linalg.LinAlgError:
        jitter = 1e-9 * np.trace(S) / S.shape[0]
        try:
            return np.linalg.solve(S + jitter * np.eye(S.shape[0]), rhs)
        except np.linalg.LinAlgError:
            raise NumericalError(
                "innovation covariance singular even after jitter"
            ) from None


def update(ensemble: Ensemble, obs: Observation, model: IPModel,
           rng: np.random.Generator, perturb: bool = True) -> Ensemble:
    """Perturbed-observation ensemble Kalman measurement update.

    With ``perturb=False`` every member receives the same observation
    (deterministic test mode); the default draws one noise realization per
    member from the channel observation noise, which preserves posterior
    spread.
    """
    members = ensemble.members
    e = members.shape[0]
    try:
        r_diag = np.array([model.observation_noise[name] for name in obs.channels])
    except KeyError as exc:
        raise DomainError(f"channel {exc.args[0]!r} has no observation noise; "
                          "is it observed?") from None

    hx = observe_members(members, obs.channels, model)
    ha = hx - hx.mean(axis=0)
    a = members - members.mean(axis=0)
    s = ha.T @ ha / (e - 1) + np.diag(r_diag)
    c = a.T @ ha / (e - 1)
    # K = C S^{-1}; solve on the transpose since S is symmetric.
    k = _solve_innovation(s, c.T).T

    if perturb:
        noise = rng.normal(0.0, 1.0, size=(e, len(obs.channels))) * np.sqrt(r_diag)
        targets = obs.values + noise
    else:
        targets = np.broadcast_to(obs.values, (e, len(obs.channels)))
    updated = members + (targets - hx) @ k.T
    updated[:, 0] = _apply_phase_mode(updated[:, 0], model.phase_mode)
    return Ensemble(members=updated, t=ensemble.t)


def posterior(ensemble: Ensemble) -> tuple[np.ndarray, np.ndarray]:
    """Unbiased sample mean and covariance of the members."""
    members = ensemble.members
    mean = members.mean(axis=0)
    dev = members - mean
    cov = dev.T @ dev / (members.shape[0] - 1)
    return mean, cov


def predict_trajectory(ensemble: Ensemble, channel: str, model: IPModel,
                       lo: float, hi: float,
                       resolution: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and std of a channel's reconstruction across members.

    Works for any modeled channel, including latent and control channels
    that are never observed.
    """
    if channel not in model.blocks:
        raise DomainError(f"unknown channel {channel!r}")
    if not (0.0 <= lo <= hi <= 1.0):
        raise DomainError("need 0 <= lo <= hi <= 1")
    if resolution < 1:
        raise DomainError("resolution must be at least 1")
    phases = np.linspace(lo, hi, resolution)
    features = basis.design_matrix(phases, model.basis, channel)
    weights = ensemble.members[:, model.state_block(channel)]
    values = features @ weights.T
    return values.mean(axis=1), values.std(axis=1, ddof=1)


class FilterSession:
    """Single-writer recursive filter over one trial.

    ``predict``/``update`` mutate the session; read-only queries are safe
    between steps.  In clamp mode, ``completed`` latches once the mean
    phase would pass 1, signalling end of trial instead of erroring.
    """

    def __init__(self, model: IPModel, seed: int | None = 0,
                 rng: np.random.Generator | None = None):
        self.model = model
        self.ensemble = Ensemble(members=model.ensemble0.copy())
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.completed = False

    def predict(self, dt: float) -> None:
        raw = self.ensemble.members[:, 0] + (
            self.ensemble.members[:, 1] * dt * self.model.sample_rate
        )
        if self.model.phase_mode == PHASE_CLAMP and float(raw.mean()) >= 1.0:
            self.completed = True
        self.ensemble = predict(self.ensemble, dt, self.model, self.rng)

    def update(self, obs: Observation, perturb: bool = True) -> None:
        self.ensemble = update(self.ensemble, obs, self.model, self.rng,
                               perturb=perturb)

    def step(self, obs: Observation, dt: float, perturb: bool = True) -> dict:
        t0 = time.perf_counter()
        self.predict(dt)
        t1 = time.perf_counter()
        self.update(obs, perturb=perturb)
        t2 = time.perf_counter()
        mean, _ = posterior(self.ensemble)
        return {
            "phase": float(mean[0]),
            "phase_velocity": float(mean[1]),
            "predict_s": t1 - t0,
            "update_s": t2 - t1,
        }

    def posterior(self) -> tuple[np.ndarray, np.ndarray]:
        return posterior(self.ensemble)

    def predict_trajectory(self, channel: str, lo: float, hi: float,
                           resolution: int = 100):
        return predict_trajectory(self.ensemble, channel, self.model,
                                  lo, hi, resolution)

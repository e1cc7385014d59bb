"""Analytic gait world with a known causal link from control to load.

Observed channels are harmonic functions of the stride phase with per-demo
amplitude jitter and optional additive coupling to the control signal.  The
control channel is a nominal quasi-active profile plus seeded low-frequency
random excitation.  The latent load channel follows the affine law

    F(p) = F0(p) - c * u(p) + gamma * qdd(p)

with c > 0, where qdd is the acceleration of one kinematic channel.  The law
is affine in u, so the load under any alternative control is exactly
recoverable from a recorded stride; that is what makes the world a ground
truth oracle for control experiments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import DomainError
from .model import (Demonstration, PHASE_CLAMP, PHASE_WRAP, ROLE_CONTROL,
                    ROLE_LATENT, ROLE_OBSERVED, write_session)

STYLE_SOFT = "soft"
STYLE_HARD = "hard"
HARD_STYLE_SCALE = 1.3


@dataclass
class ChannelSpec:
    """Harmonic profile for one modeled channel."""

    name: str
    offset: float
    amplitudes: tuple[float, ...]
    harmonic_phases: tuple[float, ...]
    role: str = ROLE_OBSERVED
    control_gain: float = 0.0
    style_scaled: bool = False


@dataclass
class WorldConfig:
    name: str
    channels: list[ChannelSpec]
    stride_period: float = 1.2
    sample_rate: float = 100.0
    control_name: str = "ankle_torque"
    control_offset: float = 0.5
    control_amplitudes: tuple[float, ...] = (0.35, 0.1)
    control_phases: tuple[float, ...] = (4.0, 1.5)
    excitation_std: float = 0.25
    excitation_harmonics: int = 2
    force_name: str = "knee_force"
    force_offset: float = 3.2
    force_amplitudes: tuple[float, ...] = (0.7, 0.35)
    force_phases: tuple[float, ...] = (0.8, 2.3)
    spike_soft: float = 0.0
    spike_hard: float = 0.0
    spike_phase: float = 0.45
    spike_width: float = 0.06
    landing_phase: float | None = None
    coupling_gain: float = 1.0
    accel_gain: float = 0.01
    accel_channel: str = ""
    kin_jitter_std: float = 0.04
    noise_std: float = 0.01
    phase_mode: str = PHASE_WRAP
    hard_fraction: float = 0.0

    def __post_init__(self):
        if self.stride_period <= 0.0 or self.sample_rate <= 0.0:
            raise DomainError("stride period and sample rate must be positive")
        if self.coupling_gain <= 0.0:
            raise DomainError("coupling gain must be positive")
        if self.noise_std < 0.0 or self.excitation_std < 0.0:
            raise DomainError("noise magnitudes must be nonnegative")
        if not self.accel_channel:
            self.accel_channel = self.channels[0].name

    @property
    def samples_per_stride(self) -> int:
        return int(round(self.stride_period * self.sample_rate))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "WorldConfig":
        doc = dict(doc)
        doc["channels"] = [
            ChannelSpec(**{**ch, "amplitudes": tuple(ch["amplitudes"]),
                           "harmonic_phases": tuple(ch["harmonic_phases"])})
            for ch in doc["channels"]
        ]
        for key in ("control_amplitudes", "control_phases",
                    "force_amplitudes", "force_phases"):
            doc[key] = tuple(doc[key])
        return cls(**doc)


_KIN_NAMES = ("shank_angle", "thigh_angle", "hip_angle", "pelvis_tilt",
              "knee_angle", "foot_accel", "trunk_sway", "arm_swing")
# Channel 0 carries the acceleration coupling, so it gets no control gain.
_KIN_CONTROL_GAINS = (0.0, 0.5, -0.35, 0.25, 0.0, 0.15, 0.1, -0.2)


def walk_world(n_kinematic: int = 6, noise_std: float = 0.01,
               excitation_std: float = 0.25) -> WorldConfig:
    """Cyclic walking preset; control lowers the latent knee load."""
    if not 2 <= n_kinematic <= len(_KIN_NAMES):
        raise DomainError(f"n_kinematic must be in [2, {len(_KIN_NAMES)}]")
    channels = []
    for i in range(n_kinematic):
        amp = 0.8 + 0.12 * i
        channels.append(ChannelSpec(
            name=_KIN_NAMES[i],
            offset=0.3 * i - 0.5,
            amplitudes=(amp, 0.35 * amp, 0.12 * amp),
            harmonic_phases=(0.9 * i + 0.6, 0.9 * i + 1.2, 0.9 * i + 1.8),
            control_gain=_KIN_CONTROL_GAINS[i],
        ))
    return WorldConfig(name="walk", channels=channels, noise_std=noise_std,
                       excitation_std=excitation_std,
                       accel_channel=_KIN_NAMES[0])


def jump_world(noise_std: float = 0.01,
               excitation_std: float = 0.25) -> WorldConfig:
    """Landing preset: clamp-mode phase, style-dependent load spike.

    Half the strides in a session land hard.  The intact-side ankle angle is
    observed and a prosthetic-side ankle angle driven by the control signal
    is modeled as a latent channel, which is what the symmetry objective
    tracks.
    """
    channels = [
        ChannelSpec(name="shank_angle", offset=-0.4,
                    amplitudes=(0.9, 0.3, 0.1),
                    harmonic_phases=(0.6, 1.3, 2.0), style_scaled=True),
        ChannelSpec(name="thigh_angle", offset=0.1,
                    amplitudes=(0.7, 0.25, 0.08),
                    harmonic_phases=(1.5, 2.2, 2.9), control_gain=0.4,
                    style_scaled=True),
        ChannelSpec(name="pelvis_tilt", offset=0.2,
                    amplitudes=(0.5, 0.2, 0.05),
                    harmonic_phases=(2.4, 3.1, 3.8), control_gain=-0.3),
        ChannelSpec(name="trunk_sway", offset=-0.1,
                    amplitudes=(0.6, 0.15, 0.06),
                    harmonic_phases=(3.3, 4.0, 4.7), style_scaled=True),
        ChannelSpec(name="ankle_intact", offset=-0.2,
                    amplitudes=(0.9, 0.3, 0.1),
                    harmonic_phases=(2.0, 2.7, 3.4), style_scaled=True),
        ChannelSpec(name="ankle_pros", offset=-0.1,
                    amplitudes=(0.2, 0.08),
                    harmonic_phases=(2.0, 2.7), role=ROLE_LATENT,
                    control_gain=0.8),
    ]
    return WorldConfig(
        name="jump", channels=channels, noise_std=noise_std,
        excitation_std=excitation_std,
        control_offset=0.45, control_amplitudes=(0.3, 0.12),
        control_phases=(3.6, 0.9),
        # Offset keeps the load positive over the whole reachable control
        # range, so squared-load objectives move the peak monotonically.
        force_offset=2.2, force_amplitudes=(0.3,), force_phases=(1.0,),
        spike_soft=2.0, spike_hard=3.2, spike_phase=0.45, spike_width=0.06,
        landing_phase=0.45, accel_gain=0.005, accel_channel="shank_angle",
        kin_jitter_std=0.03, phase_mode=PHASE_CLAMP, hard_fraction=0.5,
    )


def bench_world() -> WorldConfig:
    """Ten-channel variant used by the latency benchmark."""
    return walk_world(n_kinematic=8)


def _harmonic_series(phases, offset, amplitudes, harmonic_phases,
                     scale: float = 1.0):
    out = np.full_like(phases, offset, dtype=float)
    for h, (amp, ph) in enumerate(zip(amplitudes, harmonic_phases), start=1):
        out += scale * amp * np.sin(2.0 * math.pi * h * phases + ph)
    return out


def _harmonic_accel(phases, amplitudes, harmonic_phases, period,
                    scale: float = 1.0):
    """Second time derivative of the harmonic series (offset drops out)."""
    out = np.zeros_like(phases, dtype=float)
    for h, (amp, ph) in enumerate(zip(amplitudes, harmonic_phases), start=1):
        omega = 2.0 * math.pi * h / period
        out -= scale * amp * omega * omega * np.sin(
            2.0 * math.pi * h * phases + ph)
    return out


def phase_grid(config: WorldConfig) -> np.ndarray:
    return np.linspace(0.0, 1.0, config.samples_per_stride)


def nominal_control(config: WorldConfig, phases) -> np.ndarray:
    return _harmonic_series(np.asarray(phases, float), config.control_offset,
                            config.control_amplitudes, config.control_phases)


def _style_scale(style: str | None) -> float:
    if style in (None, STYLE_SOFT):
        return 1.0
    if style == STYLE_HARD:
        return HARD_STYLE_SCALE
    raise DomainError(f"unknown landing style {style!r}")


def nominal_force_profile(config: WorldConfig, phases,
                          style: str | None = None) -> np.ndarray:
    """Load profile before control and acceleration coupling."""
    phases = np.asarray(phases, float)
    out = _harmonic_series(phases, config.force_offset,
                           config.force_amplitudes, config.force_phases)
    if config.landing_phase is not None:
        spike = config.spike_hard if style == STYLE_HARD else config.spike_soft
        z = (phases - config.spike_phase) / config.spike_width
        out += spike * np.exp(-z * z)
    return out


def _nominal_accel(config: WorldConfig, phases) -> np.ndarray:
    spec = next(ch for ch in config.channels if ch.name == config.accel_channel)
    return _harmonic_accel(np.asarray(phases, float), spec.amplitudes,
                           spec.harmonic_phases, config.stride_period)


def ground_truth_force(u, config: WorldConfig, phases=None, q_ddot=None,
                       style: str | None = None) -> np.ndarray:
    """Load trajectory the world produces for a control trajectory.

    Uses the nominal (unjittered) kinematic acceleration unless ``q_ddot``
    is supplied; affine and strictly decreasing in u.
    """
    u = np.asarray(u, dtype=float)
    if phases is None:
        phases = np.linspace(0.0, 1.0, u.size)
    phases = np.asarray(phases, dtype=float)
    if phases.shape != u.shape:
        raise DomainError("control and phase grids differ in length")
    if q_ddot is None:
        q_ddot = _nominal_accel(config, phases)
    base = nominal_force_profile(config, phases, style)
    return base - config.coupling_gain * u + config.accel_gain * np.asarray(q_ddot)


def counterfactual_force(base_force, base_control, new_control,
                         config: WorldConfig) -> np.ndarray:
    """Exact load under a different control, from a recorded stride."""
    return (np.asarray(base_force, float)
            - config.coupling_gain
            * (np.asarray(new_control, float) - np.asarray(base_control, float)))


def counterfactual_channel(base_series, base_control, new_control,
                           gain: float) -> np.ndarray:
    """Same replay for any channel with additive control coupling."""
    return (np.asarray(base_series, float)
            + gain * (np.asarray(new_control, float)
                      - np.asarray(base_control, float)))


@dataclass
class StrideTruth:
    """One generated stride plus everything the noisy demo hides."""

    demo: Demonstration
    phases: np.ndarray
    control: np.ndarray
    force: np.ndarray
    q_ddot: np.ndarray
    clean_channels: dict[str, np.ndarray]
    style: str | None = None
    landing_index: int | None = None


def simulate_stride(config: WorldConfig, seed, style: str | None = None) -> StrideTruth:
    """Generate one stride; bitwise reproducible for a given seed."""
    rng = np.random.default_rng(seed)
    phases = phase_grid(config)
    scale = _style_scale(style)

    excitation = np.full_like(phases, rng.normal(0.0, config.excitation_std))
    exc_amps, exc_phases = [], []
    for h in range(1, config.excitation_harmonics + 1):
        amp = rng.normal(0.0, config.excitation_std / (1.0 + h))
        ph = rng.uniform(0.0, 2.0 * math.pi)
        exc_amps.append(amp)
        exc_phases.append(ph)
        excitation += amp * np.sin(2.0 * math.pi * h * phases + ph)
    u = nominal_control(config, phases) + excitation

    clean: dict[str, np.ndarray] = {}
    jitters: dict[str, float] = {}
    for spec in config.channels:
        jitter = 1.0 + rng.normal(0.0, config.kin_jitter_std)
        jitters[spec.name] = jitter
        chan_scale = jitter * (scale if spec.style_scaled else 1.0)
        series = _harmonic_series(phases, spec.offset, spec.amplitudes,
                                  spec.harmonic_phases, chan_scale)
        clean[spec.name] = series + spec.control_gain * u

    accel_spec = next(ch for ch in config.channels
                      if ch.name == config.accel_channel)
    accel_scale = jitters[accel_spec.name] * (
        scale if accel_spec.style_scaled else 1.0)
    q_ddot = _harmonic_accel(phases, accel_spec.amplitudes,
                             accel_spec.harmonic_phases,
                             config.stride_period, accel_scale)
    if accel_spec.control_gain != 0.0:
        u_ddot = _harmonic_accel(phases, config.control_amplitudes,
                                 config.control_phases, config.stride_period)
        for h, (amp, ph) in enumerate(zip(exc_amps, exc_phases), start=1):
            omega = 2.0 * math.pi * h / config.stride_period
            u_ddot -= amp * omega * omega * np.sin(
                2.0 * math.pi * h * phases + ph)
        q_ddot = q_ddot + accel_spec.control_gain * u_ddot

    force = (nominal_force_profile(config, phases, style)
             - config.coupling_gain * u + config.accel_gain * q_ddot)

    channels: dict[str, np.ndarray] = {}
    roles: dict[str, str] = {}
    for spec in config.channels:
        series = clean[spec.name]
        if spec.role == ROLE_OBSERVED and config.noise_std > 0.0:
            series = series + rng.normal(0.0, config.noise_std,
                                         size=series.shape)
        channels[spec.name] = series
        roles[spec.name] = spec.role
    channels[config.force_name] = force
    roles[config.force_name] = ROLE_LATENT
    channels[config.control_name] = u
    roles[config.control_name] = ROLE_CONTROL

    demo = Demonstration.from_arrays(channels, roles, config.sample_rate)
    landing = None
    if config.landing_phase is not None:
        landing = int(round(config.landing_phase * (phases.size - 1)))
    return StrideTruth(demo=demo, phases=phases, control=u, force=force,
                       q_ddot=q_ddot, clean_channels=clean, style=style,
                       landing_index=landing)


def session_style(config: WorldConfig, index: int, n_strides: int) -> str | None:
    """Landing style for the index-th stride of a session."""
    if config.landing_phase is None:
        return None
    n_hard = int(round(n_strides * config.hard_fraction))
    return STYLE_HARD if index >= n_strides - n_hard else STYLE_SOFT


def stride_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=(int(seed), int(index)))


def generate_demonstration(config: WorldConfig, demo_seed,
                           style: str | None = None) -> Demonstration:
    return simulate_stride(config, demo_seed, style).demo


def generate_session(config: WorldConfig, n_strides: int, seed: int,
                     out_dir=None) -> tuple[list[StrideTruth], dict]:
    """Generate strides and optionally write them in the dataset format."""
    if n_strides < 1:
        raise DomainError("need at least one stride")
    truths = []
    events = {}
    for i in range(n_strides):
        style = session_style(config, i, n_strides)
        truth = simulate_stride(config, stride_seed(seed, i), style)
        truths.append(truth)
        entry = {}
        if truth.landing_index is not None:
            entry["landing"] = truth.landing_index
        if style is not None:
            entry["style"] = style
        events[i] = entry
    extra = {"world": config.to_dict(), "seed": int(seed)}
    if out_dir is not None:
        manifest = write_session([t.demo for t in truths], out_dir,
                                 config.sample_rate, events=events, extra=extra)
    else:
        manifest = {"sample_rate": config.sample_rate,
                    "demonstrations": [
                        {"file": f"demo_{i:03d}.csv", "events": events[i]}
                        for i in range(n_strides)],
                    **extra}
    return truths, manifest


def load_world(doc_or_path) -> WorldConfig:
    """World config from a dict, a JSON file path, or a preset name."""
    if isinstance(doc_or_path, WorldConfig):
        return doc_or_path
    if isinstance(doc_or_path, dict):
        return WorldConfig.from_dict(doc_or_path)
    text = str(doc_or_path)
    presets = {"walk": walk_world, "jump": jump_world, "bench": bench_world}
    if text in presets:
        return presets[text]()
    with Path(text).open() as fh:
        return WorldConfig.from_dict(json.load(fh))

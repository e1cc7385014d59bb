"""Demonstration ingestion, training, and model persistence.

A demonstration is a set of equally long named channels tagged with roles
(observed / latent / control) plus a linear phase assignment.  Training
fits one weight block per channel per demonstration, stacks the resulting
latent states [phase, phase velocity, weights] into the initial ensemble,
and records weight bounds and per-channel observation noise.

On-disk formats (all plain text):

* demonstration: CSV with two header rows (channel names, then role tags)
  followed by one row per sample;
* session manifest: JSON listing demonstration files, sample rate, and
  optional per-file event markers;
* trained model: a single JSON document; floats survive the round trip
  exactly because JSON uses shortest-round-trip float representation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import basis
from .errors import DomainError, FormatError

ROLE_OBSERVED = "observed"
ROLE_LATENT = "latent"
ROLE_CONTROL = "control"
ROLES = (ROLE_OBSERVED, ROLE_LATENT, ROLE_CONTROL)

PHASE_CLAMP = "clamp"
PHASE_WRAP = "wrap"

MANIFEST_NAME = "manifest.json"


@dataclass
class ProcessNoise:
    """Per-step additive Gaussian noise applied during prediction."""

    phase_std: float = 1e-4
    velocity_std: float = 1e-5
    weight_std: float = 0.0

    def __post_init__(self):
        if min(self.phase_std, self.velocity_std, self.weight_std) < 0.0:
            raise DomainError("noise standard deviations must be nonnegative")


@dataclass
class Demonstration:
    """One multi-channel recording with role tags and linear phases."""

    channels: dict[str, np.ndarray]
    roles: dict[str, str]
    sample_rate: float
    phases: np.ndarray

    @classmethod
    def from_arrays(cls, channels, roles, sample_rate: float) -> "Demonstration":
        channels = {name: np.asarray(v, dtype=float) for name, v in channels.items()}
        lengths = {v.size for v in channels.values()}
        if len(lengths) != 1:
            raise FormatError("channels have unequal lengths")
        (length,) = lengths
        if length < 2:
            raise FormatError("demonstration needs at least 2 samples")
        demo = cls(channels=channels, roles=dict(roles),
                   sample_rate=float(sample_rate),
                   phases=np.linspace(0.0, 1.0, length))
        demo.validate()
        return demo

    def validate(self, control_channels: int = 1) -> None:
        if self.sample_rate <= 0.0:
            raise DomainError("sample rate must be positive")
        if set(self.roles) != set(self.channels):
            raise FormatError("role map does not match channel names")
        for name, role in self.roles.items():
            if role not in ROLES:
                raise FormatError(f"channel {name!r} has unknown role {role!r}")
        if not self.observed_channels:
            raise FormatError("need at least one observed channel")
        if len(self.control_channels) != control_channels:
            raise FormatError(
                f"expected {control_channels} control channel(s), "
                f"got {len(self.control_channels)}"
            )
        if self.phases.size and not np.all(np.diff(self.phases) > 0.0):
            raise FormatError("phases must be strictly increasing")

    @property
    def length(self) -> int:
        return int(self.phases.size)

    def _by_role(self, role: str) -> list[str]:
        return [name for name, r in self.roles.items() if r == role]

    @property
    def observed_channels(self) -> list[str]:
        return self._by_role(ROLE_OBSERVED)

    @property
    def latent_channels(self) -> list[str]:
        return self._by_role(ROLE_LATENT)

    @property
    def control_channels(self) -> list[str]:
        return self._by_role(ROLE_CONTROL)


def ingest(path, sample_rate: float = 100.0) -> Demonstration:
    """Parse a demonstration CSV, validating shape and finiteness."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 4:
        raise FormatError(f"{path}: need two header rows and at least 2 samples")
    names, roles_row = rows[0], rows[1]
    if len(roles_row) != len(names):
        raise FormatError(f"{path}: role row has {len(roles_row)} entries, "
                          f"expected {len(names)}")
    columns: list[list[float]] = [[] for _ in names]
    for idx, row in enumerate(rows[2:]):
        if len(row) != len(names):
            raise FormatError(f"{path}: row {idx} has {len(row)} fields, "
                              f"expected {len(names)}")
        for col, cell in enumerate(row):
            try:
                value = float(cell)
            except ValueError:
                raise FormatError(
                    f"{path}: channel {names[col]!r} row {idx}: "
                    f"not a number: {cell!r}"
                ) from None
            if math.isnan(value):
                raise FormatError(
                    f"{path}: channel {names[col]!r} row {idx}: NaN sample"
                )
            columns[col].append(value)
    channels = {name: np.array(col) for name, col in zip(names, columns)}
    roles = dict(zip(names, (tag.strip() for tag in roles_row)))
    return Demonstration.from_arrays(channels, roles, sample_rate)


def write_demonstration(demo: Demonstration, path) -> None:
    path = Path(path)
    names = list(demo.channels)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        writer.writerow([demo.roles[name] for name in names])
        data = np.column_stack([demo.channels[name] for name in names])
        for row in data:
            writer.writerow([repr(float(v)) for v in row])


def write_session(demos, directory, sample_rate: float,
                  events=None, extra=None) -> dict:
    """Write demonstrations plus a manifest; returns the manifest dict."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for idx, demo in enumerate(demos):
        fname = f"demo_{idx:03d}.csv"
        write_demonstration(demo, directory / fname)
        entry = {"file": fname, "events": (events or {}).get(idx, {})}
        entries.append(entry)
    manifest = {"sample_rate": float(sample_rate), "demonstrations": entries}
    if extra:
        manifest.update(extra)
    with (directory / MANIFEST_NAME).open("w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


def load_session(directory) -> tuple[list[Demonstration], dict]:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise FormatError(f"no {MANIFEST_NAME} in {directory}")
    with manifest_path.open() as fh:
        manifest = json.load(fh)
    rate = float(manifest["sample_rate"])
    demos = [ingest(directory / entry["file"], rate)
             for entry in manifest["demonstrations"]]
    return demos, manifest


@dataclass
class TrainConfig:
    basis_count: int = basis.DEFAULT_BASIS_COUNT
    family: str = basis.GAUSSIAN
    width: float | None = None
    ridge: float = basis.DEFAULT_RIDGE
    ensemble_size: int | None = None
    seed: int = 0
    noise_floor_scale: float = 1e-6
    phase_mode: str = PHASE_WRAP
    process_noise: ProcessNoise = field(default_factory=ProcessNoise)

    def __post_init__(self):
        if self.phase_mode not in (PHASE_CLAMP, PHASE_WRAP):
            raise DomainError(f"unknown phase mode {self.phase_mode!r}")


@dataclass
class IPModel:
    """Trained primitive: basis, initial ensemble, bounds, and noise."""

    basis: basis.BasisModel
    channel_order: list[str]
    roles: dict[str, str]
    blocks: dict[str, slice]
    ensemble0: np.ndarray
    weight_min: np.ndarray
    weight_max: np.ndarray
    observation_noise: dict[str, float]
    process_noise: ProcessNoise
    mean_phase_velocity: float
    sample_rate: float
    phase_mode: str
    ridge: float

    @property
    def weight_dim(self) -> int:
        return int(self.weight_min.size)

    @property
    def state_dim(self) -> int:
        return self.weight_dim + 2

    @property
    def ensemble_size(self) -> int:
        return int(self.ensemble0.shape[0])

    def _by_role(self, role: str) -> list[str]:
        return [name for name in self.channel_order if self.roles[name] == role]

    @property
    def observed_channels(self) -> list[str]:
        return self._by_role(ROLE_OBSERVED)

    @property
    def latent_channels(self) -> list[str]:
        return self._by_role(ROLE_LATENT)

    @property
    def control_channel(self) -> str:
        return self._by_role(ROLE_CONTROL)[0]

    def state_block(self, channel: str) -> slice:
        """Slice of the full state vector holding a channel's weights."""
        sl = self.blocks[channel]
        return slice(sl.start + 2, sl.stop + 2)

    def weight_vector(self, member_or_weights: np.ndarray) -> basis.WeightVector:
        """Wrap the weight part of a state member (or a bare weight vector)."""
        values = np.asarray(member_or_weights, dtype=float)
        if values.size == self.state_dim:
            values = values[2:]
        if values.size != self.weight_dim:
            raise DomainError("vector length matches neither state nor weights")
        return basis.WeightVector(values=values, blocks=self.blocks)


def train(demos, config: TrainConfig | None = None) -> IPModel:
    """Fit weights per demonstration and assemble the initial ensemble."""
    config = config or TrainConfig()
    demos = list(demos)
    if len(demos) < 2:
        raise DomainError("need at least 2 demonstrations to form a prior")
    first = demos[0]
    names = list(first.channels)
    for n, demo in enumerate(demos):
        demo.validate()
        if list(demo.channels) != names or demo.roles != first.roles:
            raise DomainError(f"demonstration {n} has a different channel schema")
        if demo.sample_rate != first.sample_rate:
            raise DomainError(f"demonstration {n} has a different sample rate")

    bmodel = basis.BasisModel.uniform(
        names, count=config.basis_count, family=config.family, width=config.width
    )
    blocks = basis.make_blocks(names, bmodel)
    weight_dim = bmodel.total_features()

    members = np.empty((len(demos), 2 + weight_dim))
    for n, demo in enumerate(demos):
        members[n, 0] = 0.0
        members[n, 1] = 1.0 / demo.length
        for name in names:
            members[n, blocks[name].start + 2: blocks[name].stop + 2] = (
                basis.fit_weights(demo.channels[name], demo.phases, bmodel,
                                  name, ridge=config.ridge)
            )

    weights = members[:, 2:]
    weight_min = weights.min(axis=0)
    weight_max = weights.max(axis=0)

    if config.ensemble_size is not None and config.ensemble_size < len(demos):
        if config.ensemble_size < 2:
            raise DomainError("ensemble size must be at least 2")
        rng = np.random.default_rng(config.seed)
        keep = np.sort(rng.choice(len(demos), size=config.ensemble_size,
                                  replace=False))
        members = members[keep]

    observation_noise: dict[str, float] = {}
    for name in names:
        if first.roles[name] != ROLE_OBSERVED:
            continue
        residuals = []
        low, high = math.inf, -math.inf
        for n, demo in enumerate(demos):
            w = weights[n, blocks[name]]
            fitted = basis.reconstruct(w, demo.phases, bmodel, name)
            residuals.append(demo.channels[name] - fitted)
            low = min(low, float(demo.channels[name].min()))
            high = max(high, float(demo.channels[name].max()))
        pooled = np.concatenate(residuals)
        floor = config.noise_floor_scale * (high - low) ** 2
        observation_noise[name] = max(float(pooled.var()), floor, 1e-12)

    return IPModel(
        basis=bmodel,
        channel_order=names,
        roles=dict(first.roles),
        blocks=blocks,
        ensemble0=members,
        weight_min=weight_min,
        weight_max=weight_max,
        observation_noise=observation_noise,
        process_noise=replace(config.process_noise),
        mean_phase_velocity=1.0 / float(np.mean([d.length for d in demos])),
        sample_rate=first.sample_rate,
        phase_mode=config.phase_mode,
        ridge=config.ridge,
    )


def prior_statistics(model: IPModel) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased covariance of the initial ensemble."""
    members = model.ensemble0
    mean = members.mean(axis=0)
    dev = members - mean
    cov = dev.T @ dev / (members.shape[0] - 1)
    return mean, cov


def save_model(model: IPModel, path) -> None:
    doc = {
        "basis": {
            "family": model.basis.family,
            "width": model.basis.width,
            "channel_centers": {
                name: centers.tolist()
                for name, centers in model.basis.channel_centers.items()
            },
        },
        "channel_order": model.channel_order,
        "roles": model.roles,
        "ensemble0": model.ensemble0.tolist(),
        "weight_min": model.weight_min.tolist(),
        "weight_max": model.weight_max.tolist(),
        "observation_noise": model.observation_noise,
        "process_noise": {
            "phase_std": model.process_noise.phase_std,
            "velocity_std": model.process_noise.velocity_std,
            "weight_std": model.process_noise.weight_std,
        },
        "mean_phase_velocity": model.mean_phase_velocity,
        "sample_rate": model.sample_rate,
        "phase_mode": model.phase_mode,
        "ridge": model.ridge,
    }
    with Path(path).open("w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_model(path) -> IPModel:
    with Path(path).open() as fh:
        doc = json.load(fh)
    bdoc = doc["basis"]
    bmodel = basis.BasisModel(
        family=bdoc["family"],
        width=float(bdoc["width"]),
        channel_centers={name: np.array(c, dtype=float)
                         for name, c in bdoc["channel_centers"].items()},
    )
    blocks = basis.make_blocks(doc["channel_order"], bmodel)
    noise = doc["process_noise"]
    return IPModel(
        basis=bmodel,
        channel_order=list(doc["channel_order"]),
        roles=dict(doc["roles"]),
        blocks=blocks,
        ensemble0=np.array(doc["ensemble0"], dtype=float),
        weight_min=np.array(doc["weight_min"], dtype=float),
        weight_max=np.array(doc["weight_max"], dtype=float),
        observation_noise={k: float(v) for k, v in doc["observation_noise"].items()},
        process_noise=ProcessNoise(**{k: float(v) for k, v in noise.items()}),
        mean_phase_velocity=float(doc["mean_phase_velocity"]),
        sample_rate=float(doc["sample_rate"]),
        phase_mode=doc["phase_mode"],
        ridge=float(doc["ridge"]),
    )

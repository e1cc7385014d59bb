"""Phase-indexed basis families and their weight-space operations.

A trajectory channel is approximated as a linear combination of basis
functions of the normalized phase in [0, 1].  The Gaussian family uses

    phi_b(p) = exp(-((p - mu_b) / (2 sigma))^2) / (sigma sqrt(2 pi))

so the effective standard deviation is sqrt(2) * sigma.  The squared
Gaussian therefore integrates in closed form through the error function,
which is what the phase-domain control cost consumes.

Weights are fit per channel by ridge-regularized least squares and stored
concatenated; a block map ties each channel to its slice of the full
weight vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import DomainError, NumericalError

GAUSSIAN = "gaussian"
VON_MISES = "von_mises"
POLYNOMIAL = "polynomial"
FAMILIES = (GAUSSIAN, VON_MISES, POLYNOMIAL)

_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Defaults used across the package: B uniform centers on [0, 1], sigma = 1/B.
DEFAULT_BASIS_COUNT = 15
DEFAULT_RIDGE = 1e-6


@dataclass(frozen=True)
class BasisModel:
    """Per-channel basis configuration.

    ``channel_centers`` maps a channel name to its center positions.  For
    the polynomial family the "centers" hold the monomial degrees instead
    of phase positions; ``width`` is ignored there.
    """

    family: str
    width: float
    channel_centers: dict[str, np.ndarray]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown basis family {self.family!r}")
        if self.family != POLYNOMIAL and self.width <= 0.0:
            raise DomainError("basis width must be positive")
        for name, centers in self.channel_centers.items():
            centers = np.asarray(centers, dtype=float)
            if centers.size < 2:
                raise DomainError(f"channel {name!r} needs at least 2 basis functions")
            if self.family != POLYNOMIAL and (
                centers.min() < 0.0 or centers.max() > 1.0
            ):
                raise DomainError(f"channel {name!r} has centers outside [0, 1]")
            self.channel_centers[name] = centers

    @classmethod
    def uniform(cls, channels, count: int = DEFAULT_BASIS_COUNT,
                family: str = GAUSSIAN, width: float | None = None) -> "BasisModel":
        """Equal basis count per channel, centers uniform on [0, 1].

        Default width is 1/count.  For the polynomial family the centers
        become the degrees 0..count-1.
        """
        if count < 2:
            raise DomainError("basis count must be at least 2")
        if family == POLYNOMIAL:
            centers = np.arange(count, dtype=float)
            width = 0.0
        else:
            centers = np.linspace(0.0, 1.0, count)
            if width is None:
                width = 1.0 / count
        return cls(family=family, width=float(width),
                   channel_centers={name: centers.copy() for name in channels})

    def centers(self, channel: str) -> np.ndarray:
        try:
            return self.channel_centers[channel]
        except KeyError:
            raise DomainError(f"unknown channel {channel!r}") from None

    def feature_count(self, channel: str) -> int:
        return int(self.centers(channel).size)

    def total_features(self) -> int:
        return sum(c.size for c in self.channel_centers.values())


@dataclass
class WeightVector:
    """Concatenated per-channel weight blocks plus the block map."""

    values: np.ndarray
    blocks: dict[str, slice]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        covered = np.zeros(self.values.size, dtype=bool)
        for name, sl in self.blocks.items():
            if covered[sl].any():
                raise DomainError(f"weight block for {name!r} overlaps another block")
            covered[sl] = True
        if not covered.all():
            raise DomainError("weight blocks do not partition the weight vector")

    def block(self, channel: str) -> np.ndarray:
        try:
            return self.values[self.blocks[channel]]
        except KeyError:
            raise DomainError(f"unknown channel {channel!r}") from None


def make_blocks(channel_order, model: BasisModel) -> dict[str, slice]:
    """Block map for channels laid out in the given order."""
    blocks: dict[str, slice] = {}
    offset = 0
    for name in channel_order:
        count = model.feature_count(name)
        blocks[name] = slice(offset, offset + count)
        offset += count
    return blocks


def _check_phases(phases: np.ndarray) -> np.ndarray:
    phases = np.atleast_1d(np.asarray(phases, dtype=float))
    if phases.size and (phases.min() < 0.0 or phases.max() > 1.0):
        raise DomainError("phase outside [0, 1]; clamp or wrap before evaluating")
    return phases


def design_matrix(phases, model: BasisModel, channel: str) -> np.ndarray:
    """Feature matrix with one row per phase sample, one column per basis."""
    phases = _check_phases(phases)
    centers = model.centers(channel)
    if model.family == GAUSSIAN:
        z = (phases[:, None] - centers[None, :]) / (2.0 * model.width)
        return np.exp(-z * z) / (model.width * _SQRT_2PI)
    if model.family == VON_MISES:
        # Periodic analogue; kappa matches the Gaussian curvature at the peak.
        kappa = 1.0 / (8.0 * math.pi**2 * model.width**2)
        ang = 2.0 * math.pi * (phases[:, None] - centers[None, :])
        return np.exp(kappa * (np.cos(ang) - 1.0)) / (model.width * _SQRT_2PI)
    # Polynomial: centers hold the degrees.
    return phases[:, None] ** centers[None, :]


def evaluate_basis(phase: float, model: BasisModel, channel: str) -> np.ndarray:
    """Feature vector of the channel's basis functions at a single phase."""
    return design_matrix([phase], model, channel)[0]


def fit_weights(samples, phases, model: BasisModel, channel: str,
                ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Ridge least-squares weights for one channel's samples.

    With ridge = 0 this is the exact least-squares solution and the design
    must have full column rank; a rank-deficient design raises
    :class:`NumericalError` with the advice to set ridge > 0.
    """
    samples = np.asarray(samples, dtype=float)
    phases = np.asarray(phases, dtype=float)
    if ridge < 0.0:
        raise DomainError("ridge must be nonnegative")
    if samples.ndim != 1 or samples.shape != phases.shape:
        raise DomainError("samples and phases must be 1-D arrays of equal length")
    if phases.size >= 2 and not np.all(np.diff(phases) > 0.0):
        raise DomainError("phases must be strictly increasing")
    count = model.feature_count(channel)
    if samples.size < count:
        raise DomainError(
            f"need at least {count} samples to fit channel {channel!r}, got {samples.size}"
        )
    X = design_matrix(phases, model, channel)
    if ridge == 0.0:
        w, _, rank, _ = np.linalg.lstsq(X, samples, rcond=None)
        if rank < count:
            raise NumericalError(
                f"design matrix for channel {channel!r} is rank-deficient "
                f"(rank {rank} < {count}); set ridge > 0"
            )
        return w
    gram = X.T @ X + ridge * np.eye(count)
    return np.linalg.solve(gram, X.T @ samples)


def reconstruct(weights, phases, model: BasisModel, channel: str) -> np.ndarray:
    """Trajectory of one channel at the given phases.

    ``weights`` may be the channel's weight block or a full
    :class:`WeightVector`.
    """
    if isinstance(weights, WeightVector):
        weights = weights.block(channel)
    weights = np.asarray(weights, dtype=float)
    if weights.size != model.feature_count(channel):
        raise DomainError(
            f"weight block length {weights.size} does not match channel {channel!r}"
        )
    return design_matrix(phases, model, channel) @ weights


def squared_basis_integral(center: float, width: float, lo: float, hi: float) -> float:
    """Integral of a squared Gaussian basis function over [lo, hi].

    The squared basis is exp(-(p - mu)^2 / (2 sigma^2)) / (2 pi sigma^2),
    whose antiderivative is an error function; the result is exact up to
    erf precision and monotone nondecreasing in ``hi``.
    """
    if width <= 0.0:
        raise DomainError("width must be positive")
    if not (0.0 <= lo <= hi <= 1.0):
        raise DomainError("need 0 <= lo <= hi <= 1")
    scale = 1.0 / (2.0 * width * _SQRT_2PI)
    s = width * math.sqrt(2.0)
    return scale * (math.erf((hi - center) / s) - math.erf((lo - center) / s))


def precompute_psi(model: BasisModel, lo: float, hi: float, channel: str) -> np.ndarray:
    """Squared-basis integrals over [lo, hi] for every center of a channel."""
    if model.family != GAUSSIAN:
        raise DomainError(
            f"closed-form squared-basis integral requires the Gaussian family, "
            f"got {model.family!r}"
        )
    if not (0.0 <= lo <= hi <= 1.0):
        raise DomainError("need 0 <= lo <= hi <= 1")
    centers = model.centers(channel)
    scale = 1.0 / (2.0 * model.width * _SQRT_2PI)
    s = model.width * math.sqrt(2.0)
    return scale * (erf((hi - centers) / s) - erf((lo - centers) / s))


class PsiCache:
    """Memoizes squared-basis integral vectors for one channel.

    Queries whose endpoints land on a uniform phase grid (default 1001
    points) are memoized; off-grid queries are evaluated exactly and not
    stored.  Concurrent misses may recompute the same entry, which is
    harmless because the value is deterministic; populate before sharing
    to avoid even that.
    """

    def __init__(self, model: BasisModel, channel: str, resolution: int = 1001):
        if resolution < 2:
            raise DomainError("cache resolution must be at least 2")
        self._model = model
        self._channel = channel
        self._steps = resolution - 1
        self._memo: dict[tuple[int, int], np.ndarray] = {}

    def _snap(self, x: float) -> int | None:
        g = x * self._steps
        i = round(g)
        return i if abs(g - i) < 1e-9 else None

    def interval(self, lo: float, hi: float) -> np.ndarray:
        key = None
        i, j = self._snap(lo), self._snap(hi)
        if i is not None and j is not None:
            key = (i, j)
            hit = self._memo.get(key)
            if hit is not None:
                return hit
        value = precompute_psi(self._model, lo, hi, self._channel)
        value.setflags(write=False)
        if key is not None:
            self._memo[key] = value
        return value

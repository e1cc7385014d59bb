"""Trial evaluation metrics: impulses, peaks, event values, and local
dynamic stability via the largest short-term Lyapunov exponent.

The stability estimator follows Rosenstein's recipe: delay-embed the
series, pair each point with its nearest neighbor outside a temporal
exclusion window of one mean period, track the mean log divergence of the
pairs over time, and report the slope of a linear fit as the exponent (per
sample).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class TrialMetrics:
    """Per-trial summary in the shape of the evaluation tables."""

    trial_id: str
    impulse: dict[str, float] = field(default_factory=dict)
    peak: dict[str, float] = field(default_factory=dict)
    value_at_event: dict[str, float] = field(default_factory=dict)
    stability_exponent: float | None = None

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "impulse": dict(self.impulse),
            "peak": dict(self.peak),
            "value_at_event": dict(self.value_at_event),
            "stability_exponent": self.stability_exponent,
        }


def impulse(signal, dt: float) -> float:
    """Trapezoidal integral of a uniformly sampled signal."""
    signal = np.asarray(signal, dtype=float)
    if signal.size < 2:
        raise DomainError("impulse needs at least 2 samples")
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    return float(_trapezoid(signal, dx=dt))


def peak(signal) -> float:
    signal = np.asarray(signal, dtype=float)
    if signal.size == 0:
        raise DomainError("peak of an empty signal")
    return float(signal.max())


def value_at_event(signal, index: int) -> float:
    signal = np.asarray(signal, dtype=float)
    if not 0 <= index < signal.size:
        raise DomainError(f"event index {index} outside signal of "
                          f"length {signal.size}")
    return float(signal[index])


def _mean_period(series: np.ndarray) -> int:
    """Dominant period in samples from the power spectrum (at least 1)."""
    centered = series - series.mean()
    spectrum = np.abs(np.fft.rfft(centered))
    if spectrum.size < 2:
        return 1
    k = int(np.argmax(spectrum[1:])) + 1
    return max(1, int(round(series.size / k)))


def lyapunov_exponent(series, embed_dim: int = 5, delay: int = 10,
                      fit_window: int = 60,
                      min_separation: int | None = None) -> float:
    """Largest short-term Lyapunov exponent, per sample.

    ``min_separation`` is the temporal exclusion window for the neighbor
    search; by default one mean period of the series.  Deterministic: no
    randomness is involved anywhere.
    """
    series = np.asarray(series, dtype=float)
    if embed_dim < 1 or delay < 1 or fit_window < 2:
        raise DomainError("embed_dim, delay >= 1 and fit_window >= 2 required")
    n_vectors = series.size - (embed_dim - 1) * delay
    if n_vectors <= fit_window + 1:
        raise DomainError(
            f"series of length {series.size} too short for embedding "
            f"({embed_dim=}, {delay=}, {fit_window=})"
        )
    if min_separation is None:
        min_separation = _mean_period(series)

    embedded = np.stack(
        [series[i * delay: i * delay + n_vectors] for i in range(embed_dim)],
        axis=1,
    )

    # Nearest neighbor outside the exclusion window, chunked to bound memory.
    neighbors = np.empty(n_vectors, dtype=int)
    idx = np.arange(n_vectors)
    chunk = 512
    for start in range(0, n_vectors, chunk):
        stop = min(start + chunk, n_vectors)
        block = embedded[start:stop]
        d2 = ((block[:, None, :] - embedded[None, :, :]) ** 2).sum(axis=2)
        too_close = np.abs(idx[None, :] - idx[start:stop, None]) <= min_separation
        d2[too_close] = np.inf
        neighbors[start:stop] = np.argmin(d2, axis=1)

    steps = np.arange(fit_window)
    log_divergence = np.empty(fit_window)
    for k in steps:
        valid = (idx + k < n_vectors) & (neighbors + k < n_vectors)
        if valid.sum() < 2:
            raise DomainError("too few neighbor pairs survive the horizon; "
                              "reduce fit_window")
        diff = embedded[idx[valid] + k] - embedded[neighbors[valid] + k]
        dist = np.sqrt((diff * diff).sum(axis=1))
        log_divergence[k] = float(np.mean(np.log(np.maximum(dist, 1e-300))))

    slope = np.polyfit(steps.astype(float), log_divergence, 1)[0]
    return float(slope)


def aggregate(trials) -> dict:
    """Mean and std per metric over a list of TrialMetrics."""
    trials = list(trials)
    if not trials:
        return {}
    out: dict[str, dict] = {}
    for field_name in ("impulse", "peak", "value_at_event"):
        keys = sorted({k for t in trials for k in getattr(t, field_name)})
        table = {}
        for key in keys:
            values = np.array([getattr(t, field_name)[key] for t in trials
                               if key in getattr(t, field_name)])
            table[key] = {"mean": float(values.mean()),
                          "std": float(values.std(ddof=0))}
        if table:
            out[field_name] = table
    exponents = [t.stability_exponent for t in trials
                 if t.stability_exponent is not None]
    if exponents:
        arr = np.array(exponents)
        out["stability_exponent"] = {"mean": float(arr.mean()),
                                     "std": float(arr.std(ddof=0))}
    return out

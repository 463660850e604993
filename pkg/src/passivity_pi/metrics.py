"""Power-quality and tracking metrics over simulation traces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PERIOD_TOL = 1e-9


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class SteadyWindow:
    """Sample range ``[start, end)`` spanning a whole number of periods of ``f0``."""

    start: float
    end: float
    fs: float
    f0: float

    def __post_init__(self):
        periods = (self.end - self.start) * self.f0
        if self.end <= self.start:
            raise MetricError("window end must follow its start")
        if abs(periods - round(periods)) > PERIOD_TOL * max(1.0, periods):
            raise MetricError(f"window spans {periods:.12g} periods, not an integer")

    @property
    def n_samples(self) -> int:
        return int(round((self.end - self.start) * self.fs))

    def slice(self, t: np.ndarray) -> slice:
        i0 = int(round((self.start - t[0]) * self.fs))
        i1 = i0 + self.n_samples
        if i0 < 0 or i1 > len(t):
            raise MetricError("window lies outside the trace")
        return slice(i0, i1)

    @classmethod
    def last_periods(cls, t: np.ndarray, f0: float, periods: int = 5) -> "SteadyWindow":
        """Window covering the final ``periods`` periods of a uniformly sampled ``t``."""
        fs = 1.0 / (t[1] - t[0])
        n = int(round(periods / f0 * fs))
        if abs(n - periods / f0 * fs) > 1e-6:
            raise MetricError("sample rate does not divide the fundamental period")
        if n > len(t):
            raise MetricError("trace shorter than the requested window")
        start = t[len(t) - n]
        return cls(start=start, end=start + periods / f0, fs=fs, f0=f0)


def harmonic_phasors(signal, fs: float, f0: float, n_harmonics: int) -> np.ndarray:
    """Complex amplitudes of harmonics ``1..n_harmonics`` of ``f0``.

    ``signal`` must span an integer number of fundamental periods, so each
    harmonic falls exactly on a DFT bin.
    """
    x = np.asarray(signal, dtype=float)
    N = len(x)
    periods = N * f0 / fs
    if abs(periods - round(periods)) > 1e-6:
        raise MetricError(f"window spans {periods:.9g} periods, not an integer")
    periods = int(round(periods))
    if n_harmonics * f0 >= fs / 2:
        raise MetricError("highest harmonic is above Nyquist")
    spec = np.fft.rfft(x) * (2.0 / N)
    return spec[periods * np.arange(1, n_harmonics + 1)]


def thd(signal, fs: float, f0: float, n_harmonics: int = 40, floor: float = 1e-12) -> float:
    """Harmonic RMS content (orders 2..n) over the fundamental RMS."""
    c = np.abs(harmonic_phasors(signal, fs, f0, n_harmonics))
    if c[0] <= floor * max(1.0, float(np.max(np.abs(signal)))):
        raise MetricError("fundamental too small; THD undefined")
    return float(np.sqrt(np.sum(c[1:] ** 2)) / c[0])


def rms(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x * x)))


def power_factor(v, i) -> float:
    """Mean power over the product of RMS values."""
    v = np.asarray(v, dtype=float)
    i = np.asarray(i, dtype=float)
    denom = rms(v) * rms(i)
    if denom == 0.0:
        raise MetricError("zero-RMS input; power factor undefined")
    return float(np.mean(v * i) / denom)


def moving_average(x, width: int) -> np.ndarray:
    """Trailing moving average; the first ``width - 1`` samples average what exists."""
    x = np.asarray(x, dtype=float)
    c = np.cumsum(np.concatenate([[0.0], x]))
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - width, 0)
    return (c[idx] - c[lo]) / (idx - lo)


@dataclass(frozen=True)
class TrackingError:
    rms: float
    max: float
    settling_time: float  # inf when the error never settles in band


def settling_time(t, err, band: float) -> float:
    """First time after which ``|err|`` stays within ``band``."""
    t = np.asarray(t)
    outside = np.flatnonzero(np.abs(err) > band)
    if outside.size == 0:
        return float(t[0])
    last = outside[-1]
    if last == len(t) - 1:
        return float("inf")
    return float(t[last + 1])


def tracking_error(trace, component: str, window: slice | None = None, band: float = 0.0,
                   smooth: int = 1) -> TrackingError:
    """RMS/max error of ``component`` against its ``_ref`` column.

    ``smooth`` applies a trailing moving average (in samples) to the signal
    before comparing, which removes ripple that is not a tracking error.
    Settling time is measured over the whole trace.
    """
    cols = trace.columns()
    x = cols[component]
    ref = cols[f"{component}_ref"]
    if smooth > 1:
        x = moving_average(x, smooth)
    err = x - ref
    w = err if window is None else err[window]
    return TrackingError(
        rms=rms(w),
        max=float(np.max(np.abs(w))),
        settling_time=settling_time(trace.t, err, band),
    )

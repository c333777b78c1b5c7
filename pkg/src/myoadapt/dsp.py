"""EMG conditioning: powerline notch, Butterworth bandpass, windowed RMS and
per-session min-max normalization.

Filtering is causal. The offline helpers run the same :class:`StreamingFilter`
that a live loop would use, so feeding a recording in one block or in many
chunks gives identical samples.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal as sps

from .config import dataclass_from_kv, dataclass_to_kv, parse_kv
from .errors import InvalidSpecError


@dataclass(frozen=True)
class RawEmg:
    samples: np.ndarray  # (n_samples, n_channels)
    sample_rate: float = 2000.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2 or samples.shape[1] < 1:
            raise InvalidSpecError("samples must be a 2-D (n_samples, n_channels) array")
        if not self.sample_rate > 0:
            raise InvalidSpecError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    @property
    def channel_count(self):
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class FilterSpec:
    notch_hz: float = 50.0
    notch_q: float = 30.0
    band_low_hz: float = 20.0
    band_high_hz: float = 500.0
    butter_order: int = 4

    def validate(self, sample_rate):
        nyquist = sample_rate / 2.0
        if not self.notch_q > 0:
            raise InvalidSpecError(f"notch_q must be positive, got {self.notch_q}")
        if not 0 < self.notch_hz < nyquist:
            raise InvalidSpecError(f"notch_hz={self.notch_hz} must lie in (0, {nyquist})")
        if not 0 < self.band_low_hz < self.band_high_hz < nyquist:
            raise InvalidSpecError(
                f"band edges ({self.band_low_hz}, {self.band_high_hz}) must satisfy "
                f"0 < low < high < {nyquist}"
            )
        if self.butter_order < 1:
            raise InvalidSpecError("butter_order must be >= 1")

    def to_text(self):
        return dataclass_to_kv(self)

    @classmethod
    def from_text(cls, text):
        return dataclass_from_kv(cls, parse_kv(text))


@dataclass(frozen=True)
class RmsSpec:
    window_samples: int = 400
    hop_samples: int = 100

    def __post_init__(self):
        if self.window_samples < 1:
            raise InvalidSpecError("window_samples must be >= 1")
        if not 1 <= self.hop_samples <= self.window_samples:
            raise InvalidSpecError("hop_samples must lie in [1, window_samples]")

    def n_frames(self, n_samples):
        if n_samples < self.window_samples:
            return 0
        return (n_samples - self.window_samples) // self.hop_samples + 1

    def to_text(self):
        return dataclass_to_kv(self)

    @classmethod
    def from_text(cls, text):
        return dataclass_from_kv(cls, parse_kv(text))


def notch_sos(spec, sample_rate):
    spec.validate(sample_rate)
    b, a = sps.iirnotch(spec.notch_hz, spec.notch_q, fs=sample_rate)
    return sps.tf2sos(b, a)


def bandpass_sos(spec, sample_rate):
    spec.validate(sample_rate)
    return sps.butter(
        spec.butter_order,
        [spec.band_low_hz, spec.band_high_hz],
        btype="bandpass",
        fs=sample_rate,
        output="sos",
    )


def chain_sos(spec, sample_rate):
    """Notch followed by bandpass, as one cascade of second-order sections."""
    return np.vstack([notch_sos(spec, sample_rate), bandpass_sos(spec, sample_rate)])


class StreamingFilter:
    """Per-channel biquad cascade with persistent state.

    One instance serves one stream. Call :meth:`reset` between unrelated
    recordings.
    """

    def __init__(self, sos, n_channels):
        self.sos = np.atleast_2d(np.asarray(sos, dtype=float))
        self.n_channels = int(n_channels)
        self.reset()

    def reset(self):
        self._zi = np.zeros((self.sos.shape[0], 2, self.n_channels))

    def process(self, block):
        block = np.asarray(block, dtype=float)
        if block.ndim == 1:
            block = block[:, None]
        if block.shape[1] != self.n_channels:
            raise InvalidSpecError(
                f"expected {self.n_channels} channels, got {block.shape[1]}"
            )
        if block.shape[0] == 0:
            return block.copy()
        out, self._zi = sps.sosfilt(self.sos, block, axis=0, zi=self._zi)
        return out


def _run(sos, x):
    return RawEmg(StreamingFilter(sos, x.channel_count).process(x.samples), x.sample_rate)


def notch_filter(x, spec=FilterSpec()):
    return _run(notch_sos(spec, x.sample_rate), x)


def bandpass_filter(x, spec=FilterSpec()):
    return _run(bandpass_sos(spec, x.sample_rate), x)


def filter_emg(x, spec=FilterSpec()):
    """Apply the full notch + bandpass chain from a zero initial state."""
    return _run(chain_sos(spec, x.sample_rate), x)


@dataclass(frozen=True)
class RmsFrames:
    values: np.ndarray  # (n_frames, n_channels), non-negative
    times: np.ndarray  # start time of each window, seconds
    too_short: bool = False

    def __len__(self):
        return self.values.shape[0]


def rms_frames(x, spec=RmsSpec(), t0=0.0):
    """Sliding-window RMS per channel.

    A recording shorter than one window yields zero frames and sets
    ``too_short`` instead of raising.
    """
    n = len(x)
    n_frames = spec.n_frames(n)
    if n_frames == 0:
        return RmsFrames(np.empty((0, x.channel_count)), np.empty(0), too_short=True)
    sq = np.square(x.samples)
    # (n_windows, n_channels, window) view, strided to the hop
    windows = sliding_window_view(sq, spec.window_samples, axis=0)[:: spec.hop_samples]
    values = np.sqrt(windows.mean(axis=-1))
    times = t0 + np.arange(n_frames) * (spec.hop_samples / x.sample_rate)
    return RmsFrames(values, times)


@dataclass(frozen=True)
class ChannelExtrema:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.minimum, dtype=float)
        hi = np.asarray(self.maximum, dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise InvalidSpecError("extrema need matching shapes and min <= max")
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)

    def to_text(self):
        lines = ["channel,min,max"]
        lines += [f"{i},{lo!r},{hi!r}" for i, (lo, hi) in
                  enumerate(zip(self.minimum.tolist(), self.maximum.tolist()))]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        rows = [line.split(",") for line in text.strip().splitlines()[1:]]
        return cls(np.array([float(r[1]) for r in rows]), np.array([float(r[2]) for r in rows]))


def fit_extrema(frames):
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise InvalidSpecError("fit_extrema needs at least one frame")
    return ChannelExtrema(frames.min(axis=0), frames.max(axis=0))


def apply_minmax(frames, extrema):
    """Scale each channel by its fitted range.

    Frames outside the fitted range are not clamped. Channels whose range is
    zero map to 0 with a warning.
    """
    frames = np.asarray(frames, dtype=float)
    span = extrema.maximum - extrema.minimum
    degenerate = span == 0
    if np.any(degenerate):
        warnings.warn(
            f"{int(degenerate.sum())} channel(s) have zero range; mapping them to 0",
            RuntimeWarning,
            stacklevel=2,
        )
    safe = np.where(degenerate, 1.0, span)
    out = (frames - extrema.minimum) / safe
    out[:, degenerate] = 0.0
    return out

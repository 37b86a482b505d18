"""Raw PPG recording -> normalized W x 1024 window grid.

Pipeline order: (1) negate, (2) zero-phase Chebyshev-II low-pass,
(3) windowed-sinc resample so each 30 s window holds exactly 1024 samples,
(4) clip at recording-level mean +/- 3 sigma, (5) z-score with post-clip
statistics, (6) split into label-aligned rows. The trailing partial window is
discarded; padding only happens later, at the super-window stage.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import EmptyGridError, FlatSignalError, InvalidSpecError, UnsupportedRateError
from .traineval import UNSCORED, merge_labels

EPOCH_SECONDS = 30.0
WINDOW_SAMPLES = 1024
TARGET_RATE_HZ = WINDOW_SAMPLES / EPOCH_SECONDS  # 34.1333... Hz, kept exact

# resampling kernel: sinc zero crossings per side, Kaiser shape, and the
# number of quantized phases in the polyphase table
_ZERO_CROSSINGS = 24
_KAISER_BETA = 10.0
_PHASES = 4096
_CHUNK = 16384
_TABLE_CACHE = {}


@dataclass
class Recording:
    """One subject's raw signal plus per-30 s stage codes (may contain
    unscored entries)."""
    subject_id: str
    samples: np.ndarray
    sample_rate_hz: float
    labels: list = field(default_factory=list)


@dataclass(frozen=True)
class FilterSpec:
    """Low-pass design: attenuation is reached at ``edge_hz`` (the stopband
    edge, where a Chebyshev II response first hits its ripple floor)."""
    order: int = 8
    stopband_atten_db: float = 40.0
    edge_hz: float = 8.0


@dataclass
class WindowGrid:
    """windows: (W, 1024) float32; labels: (W,) int8 merged stage codes;
    valid[w] is False iff window w is padding or unlabeled."""
    windows: np.ndarray
    labels: np.ndarray
    valid: np.ndarray
    subject_id: str

    @property
    def n_windows(self):
        return self.windows.shape[0]


def design_lowpass(spec, sample_rate_hz):
    """Chebyshev-II low-pass as second-order sections (numerically stable
    cascade). DC gain is 1; attenuation >= spec.stopband_atten_db for all
    frequencies at or above spec.edge_hz."""
    if spec.order < 2 or spec.order % 2 != 0:
        raise InvalidSpecError(f"filter order must be even and >= 2, got {spec.order}")
    if spec.stopband_atten_db <= 0:
        raise InvalidSpecError("stopband attenuation must be positive")
    if not spec.edge_hz < sample_rate_hz / 2:
        raise InvalidSpecError(
            f"stopband edge {spec.edge_hz} Hz must lie below Nyquist "
            f"({sample_rate_hz / 2} Hz)")
    return signal.cheby2(spec.order, spec.stopband_atten_db, spec.edge_hz,
                         btype="lowpass", fs=sample_rate_hz, output="sos")


def lowpass_magnitude(sos, freqs_hz, sample_rate_hz):
    """|H(f)| of an SOS cascade at the given frequencies."""
    w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / sample_rate_hz
    _, h = signal.sosfreqz(sos, worN=w)
    return np.abs(h)


def _epoch_count(n_samples, sample_rate_hz):
    return int(np.floor(n_samples / (EPOCH_SECONDS * sample_rate_hz) + 1e-9))


def _phase_table(ratio):
    """Polyphase kernel bank: row p holds the normalized windowed-sinc taps
    for fractional position p/_PHASES. Rows sum to 1, so any convex blend of
    adjacent rows maps a constant signal to itself exactly."""
    key = round(ratio, 12)
    cached = _TABLE_CACHE.get(key)
    if cached is not None:
        return cached
    half = int(np.ceil(_ZERO_CROSSINGS / ratio)) + 1
    offs = np.arange(-half + 1, half + 1)
    frac = np.arange(_PHASES + 1)[:, None] / _PHASES
    tau = frac - offs[None, :]
    tau_max = _ZERO_CROSSINGS / ratio
    win = np.i0(_KAISER_BETA * np.sqrt(np.maximum(0.0, 1.0 - (tau / tau_max) ** 2)))
    table = np.sinc(ratio * tau) * win
    table /= table.sum(axis=1, keepdims=True)
    _TABLE_CACHE[key] = (table, offs, half)
    return table, offs, half


def resample_to_grid(samples, sample_rate_hz):
    """Resample to exactly 1024 samples per 30 s via polyphase windowed-sinc
    interpolation (Kaiser window; kernel bank quantized to 4096 phases with
    linear interpolation between adjacent phases).

    Downsampling only: the target rate is 1024/30 Hz and the input must be at
    or above it. Edge transients are tamed with the odd extension trick
    (value-and-slope continuity), the same idea filtfilt uses.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidSpecError("resample expects a 1-D signal")
    if sample_rate_hz < TARGET_RATE_HZ * (1 - 1e-12):
        raise UnsupportedRateError(
            f"source rate {sample_rate_hz} Hz below the {TARGET_RATE_HZ:.4f} Hz grid "
            "(upsampling unsupported)")
    n_epochs = _epoch_count(x.size, sample_rate_hz)
    n_out = n_epochs * WINDOW_SAMPLES
    if n_out == 0:
        return np.empty(0, dtype=np.float64)

    ratio = TARGET_RATE_HZ / sample_rate_hz  # <= 1
    table, offs, half = _phase_table(ratio)
    pad = min(half, x.size - 1)
    left = 2.0 * x[0] - x[pad:0:-1]
    right = 2.0 * x[-1] - x[-2:-pad - 2:-1]
    ext = np.concatenate([left, x, right])

    out = np.empty(n_out, dtype=np.float64)
    for start in range(0, n_out, _CHUNK):
        m = np.arange(start, min(start + _CHUNK, n_out))
        t = m / ratio                      # output positions in input-sample units
        base = np.floor(t).astype(np.int64)
        fp = (t - base) * _PHASES
        pi = np.minimum(fp.astype(np.int64), _PHASES - 1)
        blend = (fp - pi)[:, None]
        ker = table[pi] * (1.0 - blend) + table[pi + 1] * blend
        idx = base[:, None] + offs[None, :] + pad
        out[m[0]:m[-1] + 1] = (ext[idx] * ker).sum(axis=1)
    return out


def preprocess(rec, spec=FilterSpec()):
    """Full preprocessing of one recording into its window grid.

    Raises :class:`EmptyGridError` for recordings shorter than 30 s and
    :class:`FlatSignalError` when the post-clip deviation is (near) zero.
    """
    x = np.asarray(rec.samples, dtype=np.float64)
    fs = float(rec.sample_rate_hz)
    if x.size == 0:
        raise EmptyGridError(f"{rec.subject_id}: empty recording")
    n_epochs = _epoch_count(x.size, fs)
    if n_epochs == 0:
        raise EmptyGridError(
            f"{rec.subject_id}: {x.size / fs:.1f} s of signal, need >= {EPOCH_SECONDS:.0f} s")

    y = -x
    sos = design_lowpass(spec, fs)
    y = signal.sosfiltfilt(sos, y)
    y = resample_to_grid(y, fs)

    mu, sd = y.mean(), y.std()
    y = np.clip(y, mu - 3.0 * sd, mu + 3.0 * sd)
    mu2, sd2 = y.mean(), y.std()
    if sd2 < 1e-9:
        raise FlatSignalError(f"{rec.subject_id}: flat signal (post-clip std {sd2:.3g})")
    y = (y - mu2) / sd2

    windows = y.reshape(n_epochs, WINDOW_SAMPLES).astype(np.float32)
    merged = merge_labels(rec.labels)
    labels = np.full(n_epochs, UNSCORED, dtype=np.int8)
    n_lab = min(n_epochs, len(merged))
    labels[:n_lab] = merged[:n_lab]
    return WindowGrid(windows=windows, labels=labels,
                      valid=labels != UNSCORED, subject_id=rec.subject_id)

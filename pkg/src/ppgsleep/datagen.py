"""Synthetic labeled PPG-like recordings.

Each subject gets a stage sequence from a Markov chain (one state per 30 s)
and a raised-cosine pulse train whose instantaneous rate is drawn per epoch
from the stage's rate distribution. Pulses point downward, as raw finger-PPG
does, so the preprocessing inversion step is exercised. The waveform is a
crude stand-in for real PPG morphology on purpose: what matters here is that
stages are separable from pulse dynamics, keeping the whole pipeline
trainable at desk scale.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError
from .sigprep import Recording

# stage order: Wake, Light, Deep, REM
DEFAULT_TRANSITION = (
    (0.88, 0.10, 0.005, 0.015),
    (0.04, 0.86, 0.06, 0.04),
    (0.01, 0.14, 0.85, 0.00),
    (0.04, 0.12, 0.00, 0.84),
)

# widely separated per-stage pulse rates so stage identity is recoverable
# from local waveform shape; Deep slowest, REM fastest
DEFAULT_RATE_MEAN_BPM = (75.0, 62.0, 50.0, 90.0)
DEFAULT_RATE_STD_BPM = (3.0, 3.0, 2.0, 4.0)

_STAGE_CODES = ("W", ("N1", "N2"), "N3", "R")
EPOCH_SECONDS = 30


@dataclass(frozen=True)
class SynthConfig:
    subjects: int = 20
    hours_per_subject: float = 2.0
    sample_rate_hz: float = 64.0
    transition: tuple = DEFAULT_TRANSITION
    rate_mean_bpm: tuple = DEFAULT_RATE_MEAN_BPM
    rate_std_bpm: tuple = DEFAULT_RATE_STD_BPM
    noise_std: float = 0.05
    unscored_fraction: float = 0.02
    seed: int = 42


def _validate(cfg):
    t = np.asarray(cfg.transition, dtype=np.float64)
    if t.shape != (4, 4) or np.any(t < 0):
        raise InvalidSpecError("transition must be a nonnegative 4x4 matrix")
    if np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-9):
        raise InvalidSpecError("transition rows must sum to 1")
    rates = np.asarray(cfg.rate_mean_bpm, dtype=np.float64)
    if rates.shape != (4,) or np.any(rates < 30) or np.any(rates > 180):
        raise InvalidSpecError("stage pulse rates must lie in [30, 180] bpm")
    if cfg.subjects < 1 or cfg.hours_per_subject <= 0:
        raise InvalidSpecError("need >= 1 subject and > 0 hours")
    if not 0 <= cfg.unscored_fraction < 1:
        raise InvalidSpecError("unscored_fraction must be in [0, 1)")
    return t


def stationary_distribution(transition):
    """Stationary row vector of the chain (unit left eigenvector)."""
    t = np.asarray(transition, dtype=np.float64)
    vals, vecs = np.linalg.eig(t.T)
    i = int(np.argmin(np.abs(vals - 1.0)))
    pi = np.real(vecs[:, i])
    pi = np.abs(pi)
    return pi / pi.sum()


def _subject_rng(cfg, subject_index):
    return np.random.Generator(np.random.Philox(key=[cfg.seed, subject_index]))


def gen_subject(cfg, subject_index):
    """One deterministic synthetic recording; the RNG stream is keyed by
    (seed, subject_index) so subjects are independent and reproducible."""
    transition = _validate(cfg)
    rng = _subject_rng(cfg, subject_index)
    n_epochs = int(round(cfg.hours_per_subject * 3600 / EPOCH_SECONDS))

    pi = stationary_distribution(transition)
    stages = np.empty(n_epochs, dtype=np.int8)
    state = rng.choice(4, p=pi)
    for e in range(n_epochs):
        stages[e] = state
        state = rng.choice(4, p=transition[state])

    means = np.asarray(cfg.rate_mean_bpm)[stages]
    stds = np.asarray(cfg.rate_std_bpm)[stages]
    rates = np.clip(rng.normal(means, stds), 30.0, 180.0)  # bpm per epoch

    fs = float(cfg.sample_rate_hz)
    spw = int(round(EPOCH_SECONDS * fs))
    freq = np.repeat(rates / 60.0, spw)          # Hz per sample
    phase = np.cumsum(freq) / fs                 # continuous across epochs
    pulse = (0.5 * (1.0 - np.cos(2.0 * np.pi * phase))) ** 3
    samples = -pulse
    if cfg.noise_std > 0:
        samples = samples + cfg.noise_std * rng.standard_normal(samples.size)

    labels = []
    unscored = rng.random(n_epochs) < cfg.unscored_fraction
    for e in range(n_epochs):
        if unscored[e]:
            labels.append("?")
        elif stages[e] == 1:
            labels.append(_STAGE_CODES[1][rng.integers(2)])
        else:
            labels.append(_STAGE_CODES[stages[e]])

    return Recording(subject_id=f"s{subject_index:03d}", samples=samples,
                     sample_rate_hz=fs, labels=labels)


def gen_dataset(cfg):
    """All subjects plus a manifest of their generation parameters."""
    _validate(cfg)
    recordings = [gen_subject(cfg, i) for i in range(cfg.subjects)]
    manifest = [{"subject_id": r.subject_id, "sample_rate_hz": r.sample_rate_hz,
                 "n_epochs": len(r.labels)} for r in recordings]
    return recordings, manifest

"""Synthetic audio clip generator.

Each class has a fixed harmonic recipe, a body resonance at a fixed
class-specific frequency, and an amplitude envelope; the fundamental
frequency and peak amplitude vary per clip. The fundamental always
carries the largest weight, so a clip generated under a frequency-band
constraint keeps its dominant spectral peak inside that band. Waveforms
are peak-normalized before scaling, which makes the amplitude attribute
the exact peak value of the noise-free signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError
from .shapes import CLASS_NAMES

SAMPLE_RATE = 16000
CLIP_SECONDS = 1.92
FREQ_RANGE = (200.0, 800.0)
AMP_RANGE = (0.3, 0.9)
NOISE_SIGMA = 0.02

# harmonic number -> relative weight, one recipe per class; the recipes
# differ in partial count and spacing so the log-band spectra stay
# distinguishable after the fundamental shifts anywhere in [200, 800] Hz
_HARMONICS = (
    {1: 1.0},                             # circle: pure tone
    {1: 1.0, 3: 0.6, 5: 0.45, 7: 0.3},    # square: odd-harmonic stack
    {1: 1.0, 3: 0.55},                    # triangle: single mid partial
    {1: 1.0, 2: 0.65},                    # heart: octave pair
    {1: 1.0, 2: 0.5, 4: 0.5},             # star: even pair
    {1: 1.0, 6: 0.6},                     # hexagon: isolated high partial
)

# fixed body-resonance frequency per class (Hz), jittered a few percent
# per clip; sits outside [200, 800] so it never masks the fundamental
_RESONANCE_HZ = (1100.0, 1700.0, 2500.0, 3600.0, 5100.0, 7000.0)
_RESONANCE_WEIGHT = 0.5
_RESONANCE_JITTER = 0.03


def _envelope(class_id, t, duration):
    x = t / duration
    name = CLASS_NAMES[class_id]
    if name == "circle":
        return np.ones_like(t)
    if name == "square":
        return 1.0 - 0.5 * x
    if name == "triangle":
        return 0.3 + 0.7 * x
    if name == "heart":
        return 0.825 + 0.175 * np.sin(2 * np.pi * 6.0 * t)
    if name == "star":
        return np.minimum(t / 0.05, 1.0) * np.exp(-2.5 * x)
    return 0.55 + 0.45 * (0.5 + 0.5 * np.cos(2 * np.pi * 2.5 * t))  # hexagon


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    class_id: int
    attributes: dict = field(default_factory=dict)


def generate_shape_audio(class_id, rng, sample_rate=SAMPLE_RATE, duration=CLIP_SECONDS,
                         noise_sigma=NOISE_SIGMA, frequency=None, amplitude=None,
                         freq_range=FREQ_RANGE, amp_range=AMP_RANGE) -> AudioClip:
    """One clip; pass frequency/amplitude to pin an attribute, else uniform draw."""
    if not 0 <= class_id < len(CLASS_NAMES):
        raise UsageError(f"class_id must be in [0, {len(CLASS_NAMES)})")
    if freq_range[0] <= 0 or freq_range[1] > sample_rate / 2:
        raise UsageError("frequency range must sit inside (0, nyquist]")
    if freq_range[0] >= freq_range[1]:
        raise UsageError("frequency band is empty")
    f0 = float(frequency) if frequency is not None else float(rng.uniform(*freq_range))
    amp = float(amplitude) if amplitude is not None else float(rng.uniform(*amp_range))
    if f0 <= 0 or f0 > sample_rate / 2:
        raise UsageError("frequency must sit inside (0, nyquist]")
    if amp <= 0:
        raise UsageError("amplitude must be positive")

    n = int(round(sample_rate * duration))
    t = np.arange(n) / sample_rate
    wave = np.zeros(n)
    for h, w in _HARMONICS[class_id].items():
        if h * f0 < sample_rate / 2:
            wave += w * np.sin(2 * np.pi * h * f0 * t)
    res_hz = _RESONANCE_HZ[class_id] * (1.0 + _RESONANCE_JITTER * (2.0 * rng.random() - 1.0))
    if res_hz < sample_rate / 2:
        wave += _RESONANCE_WEIGHT * np.sin(2 * np.pi * res_hz * t)
    wave *= _envelope(class_id, t, duration)
    peak = np.abs(wave).max()
    if peak > 0:
        wave *= amp / peak
    if noise_sigma > 0:
        wave = wave + rng.normal(0.0, noise_sigma, n)
    return AudioClip(
        samples=wave,
        sample_rate=sample_rate,
        class_id=int(class_id),
        attributes={"frequency": f0, "amplitude": amp, "noise_sigma": float(noise_sigma)},
    )

"""Room impulse responses: measured sets and a cheap stochastic synthesizer.

The synthesizer draws a unit direct-path tap followed by a random-sign tail
under an exponential envelope whose energy falls 60 dB over ``rt60_s``. The
tail is scaled so its total energy sits ``direct_to_reverb_db`` below the
direct tap. Because every tail tap has exactly the envelope magnitude, the
short-time RMS of the tail decays monotonically.

Providers (:class:`MeasuredRirProvider`, :class:`SyntheticRirProvider`) share
a ``draw(rng)`` interface, so another synthesizer can be plugged in later.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .audio import read_wav
from .errors import ConfigError, TseSimError

logger = logging.getLogger(__name__)

RT60_BOUNDS = (0.05, 2.0)


@dataclass(frozen=True, eq=False)
class Rir:
    taps: np.ndarray
    sample_rate: int
    source: str = "measured"
    direct_index: int = 0
    rt60_s: float | None = None
    name: str = ""

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size == 0:
            raise ValueError("RIR taps must be a nonempty 1-D sequence")
        object.__setattr__(self, "taps", taps)

    def __len__(self) -> int:
        return self.taps.size


@dataclass(frozen=True)
class SyntheticRirConfig:
    rt60_s: float
    direct_delay_s: float = 0.005
    direct_to_reverb_db: float = 5.0
    length_s: float | None = None
    sample_rate: int = 16000

    def __post_init__(self):
        lo, hi = RT60_BOUNDS
        if not lo <= self.rt60_s <= hi:
            raise ConfigError(f"rt60_s={self.rt60_s} outside [{lo}, {hi}]")
        if self.length_s is None:
            object.__setattr__(self, "length_s", self.direct_delay_s + self.rt60_s)
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if self.direct_delay_s < 0:
            raise ConfigError("direct_delay_s must be >= 0")
        if self.direct_to_reverb_db < 0:
            raise ConfigError("direct_to_reverb_db must be >= 0 (use inf for anechoic)")
        if self.length_s < self.rt60_s / 2:
            raise ConfigError(f"length_s={self.length_s} shorter than rt60_s/2")
        if round(self.direct_delay_s * self.sample_rate) >= round(self.length_s * self.sample_rate):
            raise ConfigError("direct path falls outside the RIR length")


def synth_rir(cfg: SyntheticRirConfig, seed) -> Rir:
    sr = cfg.sample_rate
    n = int(round(cfg.length_s * sr))
    d = int(round(cfg.direct_delay_s * sr))
    taps = np.zeros(n)
    taps[d] = 1.0
    name = f"synthetic:rt60={cfg.rt60_s:.6g}:drr={cfg.direct_to_reverb_db:.6g}:seed={seed}"

    n_tail = n - d - 1
    if n_tail > 0 and math.isfinite(cfg.direct_to_reverb_db):
        rng = np.random.default_rng(seed)
        t = np.arange(1, n_tail + 1) / sr
        # amplitude envelope; energy is exp(-6 ln10 t / rt60), i.e. -60 dB at rt60
        envelope = np.exp(-3.0 * math.log(10.0) * t / cfg.rt60_s)
        signs = rng.integers(0, 2, size=n_tail) * 2.0 - 1.0
        tail = signs * envelope
        target_energy = 10.0 ** (-cfg.direct_to_reverb_db / 10.0)
        tail *= math.sqrt(target_energy / float(np.dot(tail, tail)))
        taps[d + 1:] = tail

    return Rir(taps, sr, source="synthetic", direct_index=d, rt60_s=cfg.rt60_s, name=name)


def load_rir_set(list_file) -> list[Rir]:
    """Load and peak-normalise every WAV listed (one path per line).

    Files that fail to decode are logged and skipped; an empty result raises.
    """
    list_file = os.fspath(list_file)
    base = os.path.dirname(list_file)
    with open(list_file, encoding="utf-8") as fh:
        paths = [ln.strip() for ln in fh if ln.strip()]

    rirs, failures = [], []
    for p in paths:
        path = p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))
        try:
            clip = read_wav(path)
        except (OSError, TseSimError) as exc:
            failures.append(f"{path}: {exc}")
            continue
        peak_index = int(np.argmax(np.abs(clip.samples)))
        peak = abs(clip.samples[peak_index])
        if peak == 0:
            failures.append(f"{path}: all-zero impulse response")
            continue
        rirs.append(Rir(clip.samples / peak, clip.sample_rate, "measured", peak_index, None, path))

    for msg in failures:
        logger.warning("RIR load failed: %s", msg)
    if not rirs:
        detail = "; ".join(failures) or "list is empty"
        raise TseSimError(f"no usable RIRs in {list_file}: {detail}")
    return rirs


# -----------------------------
# providers
# -----------------------------
class MeasuredRirProvider:
    def __init__(self, rirs: Sequence[Rir]):
        self.rirs = list(rirs)

    def __len__(self) -> int:
        return len(self.rirs)

    def draw(self, rng: np.random.Generator) -> Rir:
        if not self.rirs:
            raise TseSimError("measured RIR provider is empty")
        return self.rirs[int(rng.integers(len(self.rirs)))]


@dataclass
class SyntheticRirProvider:
    """Draws config fields uniformly from ranges, then synthesizes."""

    sample_rate: int = 16000
    rt60_range: tuple[float, float] = (0.1, 0.7)
    drr_range_db: tuple[float, float] = (0.0, 15.0)
    delay_range_s: tuple[float, float] = (0.001, 0.015)
    length_factor: float = 1.0

    def __post_init__(self):
        for name in ("rt60_range", "drr_range_db", "delay_range_s"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: min {lo} > max {hi}")
        if self.length_factor < 0.5:
            raise ConfigError("length_factor must be >= 0.5")

    def draw(self, rng: np.random.Generator) -> Rir:
        rt60 = float(rng.uniform(*self.rt60_range))
        drr = float(rng.uniform(*self.drr_range_db))
        delay = float(rng.uniform(*self.delay_range_s))
        seed = int(rng.integers(2**63))
        cfg = SyntheticRirConfig(
            rt60_s=rt60,
            direct_delay_s=delay,
            direct_to_reverb_db=drr,
            length_s=delay + self.length_factor * rt60,
            sample_rate=self.sample_rate,
        )
        return synth_rir(cfg, seed)


def pick_rir(provider, rng: np.random.Generator) -> Rir:
    if provider is None:
        raise TseSimError("no RIR provider configured")
    return provider.draw(rng)


# -----------------------------
# decay analysis
# -----------------------------
def schroeder_curve(taps, start: int = 0) -> np.ndarray:
    """Backward-integrated energy decay curve in dB, 0 dB at ``start``."""
    energy = np.asarray(taps, dtype=np.float64)[start:] ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(edc / edc[0])


def schroeder_t60(taps, sample_rate: int, start: int = 0,
                  fit_range_db: tuple[float, float] = (-5.0, -25.0)) -> float:
    """Estimate T60 by a least-squares line through the Schroeder curve."""
    curve = schroeder_curve(taps, start)
    hi, lo = fit_range_db
    idx = np.flatnonzero((curve <= hi) & (curve >= lo))
    if idx.size < 2:
        raise TseSimError("decay curve does not span the fit range")
    slope = np.polyfit(idx / sample_rate, curve[idx], 1)[0]
    return -60.0 / slope


def window_rms_db(taps, sample_rate: int, start: int = 0, window_s: float = 0.01) -> np.ndarray:
    x = np.asarray(taps, dtype=np.float64)[start:]
    w = max(1, int(round(window_s * sample_rate)))
    n = x.size // w
    frames = x[: n * w].reshape(n, w)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.mean(frames**2, axis=1))

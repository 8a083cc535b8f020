"""Sample-level signal primitives.

Everything here works on :class:`AudioClip`, a mono float64 buffer tagged with
its sample rate. Functions are pure; sample rates are checked and never
resampled.
"""

from __future__ import annotations

import io
import logging
import os
import struct
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import oaconvolve

from .errors import DegenerateInputError, UnsupportedFormatError, WavFormatError

logger = logging.getLogger(__name__)

PCM16_SCALE = 32768.0
DEFAULT_PEAK_CEILING = 0.9
FFT_THRESHOLD = 64


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"AudioClip expects mono samples, got shape {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)

    def identical(self, other: "AudioClip") -> bool:
        """Bit-level equality of samples and sample rate."""
        return (
            self.sample_rate == other.sample_rate
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
        )


def check_same_rate(*clips) -> int:
    rates = {int(c.sample_rate) for c in clips}
    if len(rates) > 1:
        raise ValueError(f"sample rate mismatch: {sorted(rates)}")
    return rates.pop()


# -----------------------------
# WAV codec
# -----------------------------
def decode_wav(data: bytes, name: str = "<bytes>") -> AudioClip:
    """Decode an in-memory RIFF/WAVE payload (PCM16 or float32)."""
    try:
        sample_rate, raw = wavfile.read(io.BytesIO(data))
    except ValueError as exc:
        msg = str(exc)
        if "Unknown wave file format" in msg or "Unsupported bit depth" in msg:
            raise UnsupportedFormatError(f"{name}: {msg}") from exc
        raise WavFormatError(f"{name}: {msg}") from exc
    except (struct.error, EOFError, IndexError) as exc:
        raise WavFormatError(f"{name}: truncated or malformed header ({exc})") from exc

    if raw.ndim == 2:
        logger.warning("%s: %d channels, keeping channel 0", name, raw.shape[1])
        raw = raw[:, 0]
    if raw.dtype == np.int16:
        samples = raw.astype(np.float64) / PCM16_SCALE
    elif raw.dtype == np.float32:
        samples = raw.astype(np.float64)
    else:
        raise UnsupportedFormatError(f"{name}: unsupported sample type {raw.dtype}")
    return AudioClip(samples, sample_rate)


def read_wav(path) -> AudioClip:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_wav(data, name=path)


def encode_wav(clip: AudioClip, encoding: Literal["pcm16", "float32"] = "float32") -> bytes:
    samples = clip.samples
    if not np.all(np.isfinite(samples)):
        raise ValueError("cannot encode non-finite samples")
    if encoding == "pcm16":
        scaled = np.rint(samples * PCM16_SCALE)
        data = np.clip(scaled, -32768, 32767).astype("<i2")
    elif encoding == "float32":
        data = samples.astype("<f4")
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    buf = io.BytesIO()
    wavfile.write(buf, clip.sample_rate, data)
    return buf.getvalue()


def write_wav(clip: AudioClip, path, encoding: Literal["pcm16", "float32"] = "float32") -> None:
    """Write ``clip`` as a little-endian RIFF/WAVE file.

    PCM16 rounds to nearest and saturates at +/-1 full scale.
    """
    payload = encode_wav(clip, encoding)
    path = os.fspath(path)
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc.strerror or exc}") from exc


# -----------------------------
# Levels and gains
# -----------------------------
def rms(clip: AudioClip) -> float:
    x = clip.samples
    if x.size == 0:
        raise ValueError("rms of an empty clip")
    return float(np.sqrt(np.mean(x * x)))


def snr_gain(target_rms: float, interferer_rms: float, snr_db: float) -> float:
    if target_rms <= 0 or interferer_rms <= 0:
        raise DegenerateInputError("SNR is undefined for a silent target or interferer")
    return (target_rms / interferer_rms) * 10.0 ** (-snr_db / 20.0)


def rescale_to_snr(target: AudioClip, interferer: AudioClip, snr_db: float) -> AudioClip:
    """Scale ``interferer`` so that target-over-interferer power equals ``snr_db``.

    Positive ``snr_db`` means the interferer ends up quieter than the target.
    """
    check_same_rate(target, interferer)
    gain = snr_gain(rms(target), rms(interferer), snr_db)
    return interferer.with_samples(interferer.samples * gain)


def sum_and_rescale(
    clips: Sequence[AudioClip], peak_ceiling: float = DEFAULT_PEAK_CEILING
) -> tuple[AudioClip, float]:
    """Sum equal-length clips and pull the peak down to ``peak_ceiling``.

    Returns the (already attenuated) sum and the gain that was applied. The
    caller must apply the same gain to every component it keeps as a
    reference, otherwise the mixture stops decomposing into its parts.
    """
    if not clips:
        raise ValueError("sum_and_rescale needs at least one clip")
    sample_rate = check_same_rate(*clips)
    lengths = {len(c) for c in clips}
    if len(lengths) != 1:
        raise ValueError(f"clips must have equal lengths, got {sorted(lengths)}")

    total = clips[0].samples.copy()
    for clip in clips[1:]:
        total += clip.samples
    peak = float(np.max(np.abs(total)))
    gain = 1.0
    if peak > peak_ceiling:
        gain = peak_ceiling / peak
        total *= gain
    return AudioClip(total, sample_rate), gain


# -----------------------------
# Convolution
# -----------------------------
def _kernel_taps(kernel) -> np.ndarray:
    taps = getattr(kernel, "taps", None)
    if taps is None:
        taps = getattr(kernel, "samples", kernel)
    return np.asarray(taps, dtype=np.float64)


def convolve(
    signal: AudioClip,
    kernel,
    mode: Literal["full", "same_length"] = "full",
    method: Literal["auto", "direct", "fft"] = "auto",
    threshold: int = FFT_THRESHOLD,
) -> AudioClip:
    """Linear convolution of ``signal`` with an impulse response.

    ``kernel`` is a :class:`~tsesim.rir.Rir`, an :class:`AudioClip` or a bare
    array. Kernels shorter than ``threshold`` taps use the direct form, longer
    ones the overlap-add FFT path. ``same_length`` keeps the first ``len(signal)``
    output samples, so the direct path stays aligned with the dry input.
    """
    kernel_rate = getattr(kernel, "sample_rate", None)
    if kernel_rate is not None and int(kernel_rate) != signal.sample_rate:
        raise ValueError(f"sample rate mismatch: signal {signal.sample_rate}, kernel {kernel_rate}")
    taps = _kernel_taps(kernel)
    if taps.ndim != 1 or taps.size == 0:
        raise ValueError("kernel must be a nonempty 1-D sequence")
    if mode not in ("full", "same_length"):
        raise ValueError(f"unknown mode {mode!r}")

    if method == "auto":
        method = "direct" if taps.size < threshold else "fft"
    if method == "direct":
        out = np.convolve(signal.samples, taps)
    elif method == "fft":
        out = oaconvolve(signal.samples, taps)
    else:
        raise ValueError(f"unknown method {method!r}")

    if mode == "same_length":
        out = out[: len(signal)]
    return signal.with_samples(out)

"""SI-SNR / SNR measures and file-pair evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .audio import AudioClip, check_same_rate, read_wav
from .errors import DegenerateInputError, TseSimError

logger = logging.getLogger(__name__)


@dataclass
class MetricReport:
    si_snr_db: float
    snr_db: float
    num_samples: int


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "samples", x), dtype=np.float64)


def si_snr(estimate, reference, zero_mean: bool = True) -> float:
    """Scale-invariant SNR in dB.

    The estimate is projected onto the reference,
    ``s_t = <e, r> / <r, r> * r``, and the residual ``e - s_t`` counts as
    error. Returns ``inf`` when the residual is exactly zero. The training loss
    is the negation of this value, see :func:`si_snr_loss`.
    """
    if isinstance(estimate, AudioClip) and isinstance(reference, AudioClip):
        check_same_rate(estimate, reference)
    e = _values(estimate)
    r = _values(reference)
    if e.shape != r.shape:
        raise ValueError(f"length mismatch: estimate {e.shape}, reference {r.shape}")
    if zero_mean:
        e = e - np.mean(e)
        r = r - np.mean(r)
    ref_energy = float(np.dot(r, r))
    if ref_energy == 0.0:
        raise DegenerateInputError("SI-SNR is undefined for an all-zero reference")

    s_target = (np.dot(e, r) / ref_energy) * r
    err = e - s_target
    err_energy = float(np.dot(err, err))
    if err_energy == 0.0:
        return math.inf
    target_energy = float(np.dot(s_target, s_target))
    if target_energy == 0.0:
        return -math.inf
    return 10.0 * math.log10(target_energy / err_energy)


def si_snr_loss(estimate, reference, zero_mean: bool = True) -> float:
    return -si_snr(estimate, reference, zero_mean=zero_mean)


def snr(signal, noise) -> float:
    s = _values(signal)
    n = _values(noise)
    if s.shape != n.shape:
        raise ValueError(f"length mismatch: signal {s.shape}, noise {n.shape}")
    noise_energy = float(np.dot(n, n))
    if noise_energy == 0.0:
        return math.inf
    return 10.0 * math.log10(float(np.dot(s, s)) / noise_energy)


def evaluate(estimate: AudioClip, reference: AudioClip) -> MetricReport:
    return MetricReport(
        si_snr_db=si_snr(estimate, reference),
        snr_db=snr(reference, estimate.samples - reference.samples),
        num_samples=len(reference),
    )


@dataclass
class PairResult:
    estimate: str
    reference: str
    report: MetricReport | None = None
    error: str | None = None


@dataclass
class EvalSummary:
    mean: MetricReport | None
    pairs: list[PairResult] = field(default_factory=list)
    num_ok: int = 0
    num_failed: int = 0

    def to_dict(self) -> dict:
        mean = None
        if self.mean is not None:
            mean = {
                "si_snr_db": format_db(self.mean.si_snr_db),
                "snr_db": format_db(self.mean.snr_db),
                "num_samples": self.mean.num_samples,
            }
        return {"mean": mean, "num_ok": self.num_ok, "num_failed": self.num_failed}


def format_db(value: float) -> str | float:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _mean(values: Sequence[float]) -> float:
    infs = {v for v in values if math.isinf(v)}
    if infs:
        return infs.pop() if len(infs) == 1 else math.nan
    # fsum is exact, so the mean does not depend on input order
    return math.fsum(values) / len(values)


def eval_pairs(pairs: Iterable[tuple[str, str]]) -> EvalSummary:
    """Score each (estimate, reference) file pair and average the good ones.

    Pairs are reported in (estimate, reference) sorted order so the output is
    independent of input order. Lengths that differ are truncated to the
    shorter one with a warning; unreadable pairs are recorded and skipped.
    """
    results = []
    for est_path, ref_path in sorted(pairs):
        res = PairResult(est_path, ref_path)
        try:
            est, ref = read_wav(est_path), read_wav(ref_path)
            if len(est) != len(ref):
                n = min(len(est), len(ref))
                logger.warning("%s vs %s: length %d != %d, truncating to %d",
                               est_path, ref_path, len(est), len(ref), n)
                est = est.with_samples(est.samples[:n])
                ref = ref.with_samples(ref.samples[:n])
            res.report = evaluate(est, ref)
        except (OSError, ValueError, TseSimError) as exc:
            res.error = str(exc)
        results.append(res)

    ok = [r.report for r in results if r.report is not None]
    mean = None
    if ok:
        mean = MetricReport(
            si_snr_db=_mean([r.si_snr_db for r in ok]),
            snr_db=_mean([r.snr_db for r in ok]),
            num_samples=sum(r.num_samples for r in ok),
        )
    return EvalSummary(mean=mean, pairs=results, num_ok=len(ok), num_failed=len(results) - len(ok))

"""On-the-fly target-speaker-extraction example generation.

Each example is a pure function of ``(cfg.seed, index)``: the per-example
random state comes from ``SeedSequence([seed, index])`` and is split into
independent streams for speaker selection, reverb, noise and enrollment, so
toggling one stage never shifts the draws of another and any partition of
indices across workers gives the same examples.
"""

from __future__ import annotations

import json
import logging
import os
import tarfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .audio import (AudioClip, check_same_rate, convolve, encode_wav, read_wav,
                    rescale_to_snr, sum_and_rescale)
from .config import SimConfig
from .errors import ConfigError, DistinctSpeakerUnavailableError, TseSimError
from .rir import MeasuredRirProvider, SyntheticRirProvider, load_rir_set, pick_rir
from .shards import AudioStore, Catalog, UtteranceRecord, add_bytes, build_catalog

logger = logging.getLogger(__name__)

MAX_INTERFERER_DRAWS = 1000
METADATA_NAME = "metadata.jsonl"


@dataclass
class MixtureSpec:
    """Complete provenance of one simulated example."""

    index: int
    seed: int
    target_utt: str
    target_spk: str
    interferer_utts: list = field(default_factory=list)
    interferer_spks: list = field(default_factory=list)
    snrs_db: list = field(default_factory=list)
    noise_utt: str | None = None
    noise_snr_db: float | None = None
    rir_ids: dict = field(default_factory=dict)
    applied_gain: float = 1.0
    enroll_utt: str | None = None
    enroll_corruption: str | None = None
    num_samples: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MixtureSpec":
        return cls(**data)


@dataclass(eq=False)
class TrainingExample:
    mixture: AudioClip
    target_ref: AudioClip
    enrollment: AudioClip
    spec: MixtureSpec
    # post-gain sources in mixing order (target first); noise kept apart
    sources: list = field(default_factory=list)
    noise: AudioClip | None = None


def example_rngs(seed: int, index: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence([int(seed), int(index)]).spawn(4)
    names = ("select", "reverb", "noise", "enroll")
    return {name: np.random.default_rng(ss) for name, ss in zip(names, children)}


class CatalogBuffer(Sequence):
    """Read-only view of a catalog as ``(record, clip)`` pairs, loading lazily."""

    def __init__(self, catalog: Catalog, store: AudioStore | None = None):
        self.catalog = catalog
        self.store = store or AudioStore()

    def __len__(self) -> int:
        return len(self.catalog.records)

    def record(self, i: int) -> UtteranceRecord:
        return self.catalog.records[i]

    def __getitem__(self, i):
        rec = self.catalog.records[i]
        return rec, self.store.load(rec)


def _record_at(buffer, i: int) -> UtteranceRecord:
    getter = getattr(buffer, "record", None)
    return getter(i) if getter is not None else buffer[i][0]


def align_lengths(clips: Sequence[AudioClip], policy: str) -> list[AudioClip]:
    """Start-align clips and cut to the shortest or zero-pad to the longest."""
    lengths = [len(c) for c in clips]
    if len(set(lengths)) <= 1:
        return list(clips)
    if policy == "truncate_to_shortest":
        n = min(lengths)
        return [c.with_samples(c.samples[:n]) for c in clips]
    if policy == "pad_to_longest":
        n = max(lengths)
        return [c.with_samples(np.pad(c.samples, (0, n - len(c)))) for c in clips]
    raise ConfigError(f"unknown length policy {policy!r}")


def dsm_select(buffer, n_speakers: int, snr_range, rng: np.random.Generator,
               length_policy: str = "truncate_to_shortest",
               max_draws: int = MAX_INTERFERER_DRAWS):
    """Dynamic speaker mixing: pick a target and SNR-scaled interferers.

    The target is drawn uniformly from ``buffer``. For each interferer an SNR
    is drawn uniformly from ``snr_range`` and candidates are redrawn while
    they share the target's speaker. Clips are length-aligned before scaling
    so the requested SNR holds over the samples that are actually mixed.

    Returns the list of clips (target first) and a dict of spec fields.
    """
    if len(buffer) == 0:
        raise TseSimError("empty utterance buffer")
    lo, hi = snr_range

    t_idx = int(rng.integers(len(buffer)))
    target_rec, target = buffer[t_idx]
    picked, snrs = [], []
    for _ in range(1, n_speakers):
        snr_db = float(rng.uniform(lo, hi))
        for _ in range(max_draws):
            idx = int(rng.integers(len(buffer)))
            if _record_at(buffer, idx).spk_id != target_rec.spk_id:
                break
        else:
            raise DistinctSpeakerUnavailableError(
                f"no interferer distinct from speaker {target_rec.spk_id!r} after {max_draws} draws"
            )
        picked.append(buffer[idx])
        snrs.append(snr_db)

    clips = align_lengths([target] + [clip for _, clip in picked], length_policy)
    check_same_rate(*clips)
    wavs = [clips[0]] + [rescale_to_snr(clips[0], c, s) for c, s in zip(clips[1:], snrs)]
    partial = {
        "target_utt": target_rec.utt_id,
        "target_spk": target_rec.spk_id,
        "interferer_utts": [r.utt_id for r, _ in picked],
        "interferer_spks": [r.spk_id for r, _ in picked],
        "snrs_db": snrs,
    }
    return wavs, partial


def fit_noise(noise: AudioClip, length: int, rng: np.random.Generator) -> AudioClip:
    """Loop or cut ``noise`` to ``length`` samples from a random start offset."""
    offset = int(rng.integers(len(noise)))
    reps = -(-(offset + length) // len(noise))
    tiled = np.tile(noise.samples, reps) if reps > 1 else noise.samples
    return noise.with_samples(tiled[offset:offset + length])


@dataclass
class Assembly:
    mixture: AudioClip
    target_ref: AudioClip
    sources: list
    noise: AudioClip | None
    updates: dict


def source_names(n: int) -> list[str]:
    return ["target"] + [f"interferer{i}" for i in range(1, n)]


def assemble_mixture(wavs: Sequence[AudioClip], cfg: SimConfig, rngs,
                     noise_clips=None, rir_provider=None) -> Assembly:
    """Reverberate, sum with clipping protection and add noise.

    ``rngs`` is either one generator or a mapping with ``reverb`` and
    ``noise`` generators. The returned mixture equals the sum of the returned
    sources (plus noise) exactly; the target reference is the first source.
    """
    if isinstance(rngs, np.random.Generator):
        rngs = {"reverb": rngs, "noise": rngs}
    wavs = align_lengths(wavs, cfg.length_policy)
    updates: dict = {"rir_ids": {}}

    if cfg.reverb.enabled:
        wet = []
        for name, clip in zip(source_names(len(wavs)), wavs):
            if rngs["reverb"].random() < cfg.reverb.probability:
                rir = pick_rir(rir_provider, rngs["reverb"])
                clip = convolve(clip, rir, mode="same_length")
                updates["rir_ids"][name] = rir.name
            wet.append(clip)
        wavs = wet

    _, gain = sum_and_rescale(wavs, cfg.peak_ceiling)
    sources = [w.with_samples(w.samples * gain) if gain != 1.0 else w for w in wavs]
    total = sources[0].samples.copy()
    for s in sources[1:]:
        total += s.samples
    mixture = sources[0].with_samples(total)
    updates["applied_gain"] = gain

    noise = None
    if cfg.noise.enabled:
        if not noise_clips:
            raise ConfigError("noise is enabled but no noise clips are available")
        rng = rngs["noise"]
        noise_name, noise_clip = noise_clips[int(rng.integers(len(noise_clips)))]
        snr_db = float(rng.uniform(*cfg.noise.snr_range_db))
        segment = fit_noise(noise_clip, len(mixture), rng)
        noise = rescale_to_snr(mixture, segment, snr_db)
        mixture = mixture.with_samples(mixture.samples + noise.samples)
        updates["noise_utt"] = noise_name
        updates["noise_snr_db"] = snr_db

    return Assembly(mixture, sources[0], sources, noise, updates)


def sample_enrollment(catalog: Catalog, target_spk: str, exclude_utt: str | None,
                      corrupt_probability: float, cfg: SimConfig, rng: np.random.Generator,
                      store: AudioStore | None = None, noise_clips=None, rir_provider=None):
    """Draw an enrollment utterance of ``target_spk``, optionally corrupted.

    ``exclude_utt`` is honoured whenever the speaker has another utterance.
    With probability ``corrupt_probability`` the clip gets either noise or
    reverb (fair coin when both are available).

    Returns ``(clip, info)`` where ``info`` holds ``enroll_utt`` and
    ``enroll_corruption``.
    """
    if target_spk not in catalog.spk2utt:
        raise TseSimError(f"speaker {target_spk!r} not in catalog")
    store = store or AudioStore()
    utts = catalog.spk2utt[target_spk]
    candidates = [u for u in utts if u != exclude_utt] if len(utts) >= 2 else list(utts)
    utt = candidates[int(rng.integers(len(candidates)))]
    clip = store.load(catalog[utt])
    info = {"enroll_utt": utt, "enroll_corruption": None}

    if rng.random() < corrupt_probability:
        kinds = []
        if noise_clips:
            kinds.append("noise")
        if rir_provider is not None:
            kinds.append("reverb")
        if kinds:
            kind = kinds[int(rng.integers(len(kinds)))]
            if kind == "noise":
                _, noise_clip = noise_clips[int(rng.integers(len(noise_clips)))]
                snr_db = float(rng.uniform(*cfg.noise.snr_range_db))
                noise = rescale_to_snr(clip, fit_noise(noise_clip, len(clip), rng), snr_db)
                clip = clip.with_samples(clip.samples + noise.samples)
            else:
                clip = convolve(clip, pick_rir(rir_provider, rng), mode="same_length")
            info["enroll_corruption"] = kind
    return clip, info


def load_noise_clips(list_file) -> list[tuple[str, AudioClip]]:
    list_file = os.fspath(list_file)
    base = os.path.dirname(list_file)
    with open(list_file, encoding="utf-8") as fh:
        paths = [ln.strip() for ln in fh if ln.strip()]
    clips = []
    for p in paths:
        path = p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))
        clips.append((path, read_wav(path)))
    if not clips:
        raise TseSimError(f"noise list {list_file} is empty")
    return clips


def build_rir_provider(cfg: SimConfig):
    rv = cfg.reverb
    if rv.provider == "measured":
        if not rv.rir_list:
            raise ConfigError("measured reverb requires reverb.rir_list")
        return MeasuredRirProvider(load_rir_set(rv.rir_list))
    return SyntheticRirProvider(
        sample_rate=cfg.sample_rate,
        rt60_range=rv.rt60_range_s,
        drr_range_db=rv.drr_range_db,
        delay_range_s=rv.delay_range_s,
        length_factor=rv.length_factor,
    )


class Simulator:
    """Holds the read-only resources (catalog, noise, RIRs) for one config."""

    def __init__(self, catalog: Catalog | None, cfg: SimConfig, noise_clips=None,
                 rir_provider=None, store: AudioStore | None = None):
        if catalog is None:
            if not cfg.catalog:
                raise ConfigError("no catalog given and cfg.catalog is unset")
            catalog = build_catalog(cfg.catalog)
        if len(catalog) == 0:
            raise TseSimError("catalog is empty")
        self.catalog = catalog
        self.cfg = cfg
        self.store = store or AudioStore()
        self.buffer = CatalogBuffer(catalog, self.store)

        if noise_clips is None and cfg.noise.enabled:
            if not cfg.noise.noise_list:
                raise ConfigError("noise.enabled requires noise.noise_list")
            noise_clips = load_noise_clips(cfg.noise.noise_list)
        self.noise_clips = noise_clips
        if rir_provider is None and (cfg.reverb.enabled or cfg.enroll.corrupt_probability > 0):
            rir_provider = build_rir_provider(cfg)
        self.rir_provider = rir_provider

    def example(self, index: int) -> TrainingExample:
        cfg = self.cfg
        rngs = example_rngs(cfg.seed, index)
        wavs, partial = dsm_select(self.buffer, cfg.n_speakers, cfg.snr_range_db,
                                   rngs["select"], cfg.length_policy)
        for w in wavs:
            if w.sample_rate != cfg.sample_rate:
                raise TseSimError(f"catalog audio at {w.sample_rate} Hz, config expects {cfg.sample_rate} Hz")

        asm = assemble_mixture(
            wavs, cfg, rngs,
            noise_clips=self.noise_clips if cfg.noise.enabled else None,
            rir_provider=self.rir_provider,
        )
        enroll_noise = self.noise_clips if cfg.noise.enabled else None
        enroll_rir = self.rir_provider if (cfg.reverb.enabled or cfg.enroll.corrupt_probability > 0) else None
        enrollment, info = sample_enrollment(
            self.catalog, partial["target_spk"], partial["target_utt"],
            cfg.enroll.corrupt_probability, cfg, rngs["enroll"],
            store=self.store, noise_clips=enroll_noise, rir_provider=enroll_rir,
        )
        spec = MixtureSpec(index=index, seed=cfg.seed, num_samples=len(asm.mixture),
                           **partial, **asm.updates, **info)
        return TrainingExample(asm.mixture, asm.target_ref, enrollment, spec, asm.sources, asm.noise)


def simulate_stream(catalog: Catalog | None, cfg: SimConfig, n: int | None = None,
                    start: int = 0, **resources) -> Iterator[TrainingExample]:
    """Yield examples ``start, start+1, ...``; endless when ``n`` is None."""
    if n is not None and n <= 0:
        return
    sim = Simulator(catalog, cfg, **resources)
    index = start
    while n is None or index < start + n:
        yield sim.example(index)
        index += 1


# -----------------------------
# multi-process generation
# -----------------------------
_worker_sim: Simulator | None = None


def _init_worker(catalog, cfg):
    global _worker_sim
    _worker_sim = Simulator(catalog, cfg)


def _worker_example(index: int) -> TrainingExample:
    return _worker_sim.example(index)


def generate(cfg: SimConfig, n: int, workers: int = 1, catalog: Catalog | None = None,
             start: int = 0) -> Iterator[TrainingExample]:
    """Examples ``start..start+n-1`` in index order, optionally across processes.

    The output does not depend on ``workers``.
    """
    indices = range(start, start + n)
    if workers <= 1 or n <= 1:
        yield from simulate_stream(catalog, cfg, n=n, start=start)
        return
    if catalog is None:
        catalog = build_catalog(cfg.catalog) if cfg.catalog else None
    chunk = max(1, n // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(catalog, cfg)) as pool:
        yield from pool.map(_worker_example, indices, chunksize=chunk)


# -----------------------------
# export
# -----------------------------
def example_name(spec: MixtureSpec) -> str:
    return f"ex{spec.index:08d}"


def metadata_line(ex: TrainingExample, provenance: dict | None = None) -> str:
    record = {"id": example_name(ex.spec), "spec": ex.spec.to_dict()}
    if provenance:
        record["provenance"] = provenance
    return json.dumps(record, sort_keys=True)


def _triplet(ex: TrainingExample) -> list[tuple[str, bytes]]:
    name = example_name(ex.spec)
    return [
        (f"{name}_mix.wav", encode_wav(ex.mixture, "float32")),
        (f"{name}_ref.wav", encode_wav(ex.target_ref, "float32")),
        (f"{name}_enroll.wav", encode_wav(ex.enrollment, "float32")),
    ]


def export_batch(stream: Iterable[TrainingExample], out_dir, n: int,
                 format: str = "wav_triplets", provenance: dict | None = None) -> str:
    """Materialise ``n`` examples from ``stream`` into ``out_dir``.

    ``wav_triplets`` writes ``<id>_mix.wav``, ``<id>_ref.wav``,
    ``<id>_enroll.wav`` (float32) and ``metadata.jsonl``, returning the
    metadata path. ``packed_shard`` puts the same files into
    ``shard-000000.tar`` and returns the ``shards.list`` manifest path.
    """
    if format not in ("wav_triplets", "packed_shard"):
        raise ValueError(f"unknown export format {format!r}")
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    it = iter(stream)

    if format == "wav_triplets":
        for _ in range(n):
            ex = next(it)
            for fname, payload in _triplet(ex):
                path = os.path.join(out_dir, fname)
                try:
                    with open(path, "wb") as fh:
                        fh.write(payload)
                except OSError as exc:
                    raise OSError(f"failed to write {path}: {exc}") from exc
            lines.append(metadata_line(ex, provenance))
        meta_path = os.path.join(out_dir, METADATA_NAME)
        with open(meta_path, "w", encoding="utf-8") as fh:
            fh.writelines(line + "\n" for line in lines)
        return meta_path

    shard_path = os.path.join(out_dir, "shard-000000.tar")
    with tarfile.open(shard_path, "w", format=tarfile.USTAR_FORMAT) as tar:
        for _ in range(n):
            ex = next(it)
            for fname, payload in _triplet(ex):
                add_bytes(tar, fname, payload)
            lines.append(metadata_line(ex, provenance))
        add_bytes(tar, METADATA_NAME, "".join(line + "\n" for line in lines).encode())
    manifest = os.path.join(out_dir, "shards.list")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write(os.path.basename(shard_path) + "\n")
    return manifest


def read_metadata(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]

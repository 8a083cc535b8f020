import json
import math
import os
import tarfile
from collections import Counter

import numpy as np
import pytest
from scipy.stats import kstest

from tsesim.audio import AudioClip, read_wav, rms
from tsesim.config import EnrollConfig, NoiseConfig, ReverbConfig, SimConfig
from tsesim.errors import DistinctSpeakerUnavailableError, TseSimError
from tsesim.metrics import si_snr, snr
from tsesim.rir import SyntheticRirProvider
from tsesim.shards import Catalog, UtteranceRecord, build_catalog
from tsesim.simulate import (CatalogBuffer, MixtureSpec, Simulator, assemble_mixture,
                             dsm_select, export_batch, read_metadata, sample_enrollment,
                             simulate_stream)

from conftest import make_corpus


def mem_buffer(spec):
    """In-memory buffer from [(utt, spk, samples)]."""
    return [(UtteranceRecord(u, s, f"/mem/{u}.wav"), AudioClip(x, 8000)) for u, s, x in spec]


def four_utt_buffer():
    rng = np.random.default_rng(0)
    return mem_buffer([(f"u{i}", f"s{i % 2}", rng.standard_normal(200)) for i in range(4)])


def test_dsm_single_speaker_returns_target_only():
    wavs, partial = dsm_select(four_utt_buffer(), 1, (-5, 5), np.random.default_rng(0))
    assert len(wavs) == 1
    assert partial["interferer_utts"] == [] and partial["snrs_db"] == []


def test_dsm_disjoint_speakers_and_snr_realized():
    buf = four_utt_buffer()
    rng = np.random.default_rng(1)
    for _ in range(200):
        wavs, p = dsm_select(buf, 3, (-5, 5), rng)
        assert p["target_spk"] not in p["interferer_spks"]
        for w, s in zip(wavs[1:], p["snrs_db"]):
            assert -5 <= s <= 5
            assert 20 * math.log10(rms(wavs[0]) / rms(w)) == pytest.approx(s, abs=1e-9)


def test_dsm_deterministic():
    runs = [dsm_select(four_utt_buffer(), 2, (-5, 5), np.random.default_rng(9))[1] for _ in range(2)]
    assert runs[0] == runs[1]


def test_dsm_single_speaker_buffer_errors():
    buf = mem_buffer([("a", "s", np.ones(10)), ("b", "s", np.ones(10))])
    with pytest.raises(DistinctSpeakerUnavailableError):
        dsm_select(buf, 2, (0, 0), np.random.default_rng(0))


def test_dsm_aligns_before_scaling():
    rng = np.random.default_rng(3)
    buf = mem_buffer([("a", "s1", rng.standard_normal(300)), ("b", "s2", rng.standard_normal(500))])
    for policy, n in (("truncate_to_shortest", 300), ("pad_to_longest", 500)):
        wavs, p = dsm_select(buf, 2, (3, 3), np.random.default_rng(0), length_policy=policy)
        assert {len(w) for w in wavs} == {n}
        assert snr(wavs[0], wavs[1]) == pytest.approx(3.0, abs=1e-9)


def dry_cfg(**kw):
    return SimConfig(sample_rate=8000, seed=kw.pop("seed", 0), **kw)


def test_assemble_dry_decomposition():
    wavs, _ = dsm_select(four_utt_buffer(), 2, (-5, 5), np.random.default_rng(2))
    asm = assemble_mixture(wavs, dry_cfg(), np.random.default_rng(0))
    assert np.max(np.abs(asm.mixture.samples - sum(s.samples for s in asm.sources))) == 0.0
    assert asm.target_ref is asm.sources[0]


def test_assemble_peak_rescale_keeps_decomposition():
    buf = mem_buffer([("a", "s1", np.full(50, 0.8)), ("b", "s2", np.full(50, 0.8))])
    wavs, _ = dsm_select(buf, 2, (0, 0), np.random.default_rng(0))
    asm = assemble_mixture(wavs, dry_cfg(), np.random.default_rng(0))
    assert asm.updates["applied_gain"] == pytest.approx(0.9 / 1.6)
    assert np.max(np.abs(asm.mixture.samples)) <= 0.9 + 1e-12
    assert np.max(np.abs(asm.mixture.samples - sum(s.samples for s in asm.sources))) == 0.0
    assert snr(asm.sources[0], asm.sources[1]) == pytest.approx(0.0, abs=1e-9)


def test_assemble_noise_snr():
    rng = np.random.default_rng(5)
    noise = [("n0", AudioClip(rng.standard_normal(77), 8000))]
    cfg = dry_cfg(noise=NoiseConfig(True, (-3, 12)))
    for seed in range(20):
        wavs, _ = dsm_select(four_utt_buffer(), 2, (-5, 5), np.random.default_rng(seed))
        asm = assemble_mixture(wavs, cfg, np.random.default_rng(seed), noise_clips=noise)
        speech = sum(s.samples for s in asm.sources)
        s = asm.updates["noise_snr_db"]
        assert 20 * math.log10(rms(AudioClip(speech, 8000)) / rms(asm.noise)) == pytest.approx(s, abs=1e-9)
        assert np.array_equal(asm.mixture.samples, speech + asm.noise.samples)


def test_reverb_probability_zero_is_dry(catalog):
    dry = Simulator(catalog, dry_cfg(seed=4))
    wet0 = Simulator(catalog, dry_cfg(seed=4, reverb=ReverbConfig(True, probability=0.0)))
    for i in range(10):
        a, b = dry.example(i), wet0.example(i)
        assert a.mixture.identical(b.mixture) and a.enrollment.identical(b.enrollment)
        assert b.spec.rir_ids == {}


def test_reverb_applied_with_independent_rirs(catalog):
    sim = Simulator(catalog, dry_cfg(seed=2, reverb=ReverbConfig(True, probability=1.0)))
    ex = sim.example(0)
    assert set(ex.spec.rir_ids) == {"target", "interferer1"}
    assert ex.spec.rir_ids["target"] != ex.spec.rir_ids["interferer1"]
    assert np.max(np.abs(ex.mixture.samples - sum(s.samples for s in ex.sources))) == 0.0


def test_enrollment_single_utterance_forced():
    cat = Catalog((UtteranceRecord("only", "solo", "/x.wav"),))

    class Store:
        def load(self, rec):
            return AudioClip([0.1, 0.2], 8000)

    clip, info = sample_enrollment(cat, "solo", "only", 0.0, dry_cfg(), np.random.default_rng(0), store=Store())
    assert info["enroll_utt"] == "only"


def test_enrollment_clean_is_stored_audio(catalog):
    rng = np.random.default_rng(0)
    for _ in range(10):
        clip, info = sample_enrollment(catalog, "spk01", "spk01_utt00", 0.0, dry_cfg(), rng)
        assert info["enroll_utt"] != "spk01_utt00" and info["enroll_corruption"] is None
        assert clip.identical(read_wav(catalog[info["enroll_utt"]].locator))


def test_enrollment_frequencies(catalog):
    rng = np.random.default_rng(123)
    counts = Counter(
        sample_enrollment(catalog, "spk02", "spk02_utt00", 0.0, dry_cfg(), rng)[1]["enroll_utt"]
        for _ in range(9000)
    )
    assert set(counts) == {"spk02_utt01", "spk02_utt02"}
    assert all(abs(c - 4500) <= 300 for c in counts.values())


def test_enrollment_corruption(catalog):
    rng = np.random.default_rng(8)
    noise = [("n", AudioClip(np.random.default_rng(1).standard_normal(300), 8000))]
    prov = SyntheticRirProvider(sample_rate=8000)
    kinds = Counter()
    for _ in range(200):
        clip, info = sample_enrollment(catalog, "spk00", None, 1.0, dry_cfg(), rng,
                                       noise_clips=noise, rir_provider=prov)
        kinds[info["enroll_corruption"]] += 1
        assert not clip.identical(read_wav(catalog[info["enroll_utt"]].locator))
    assert set(kinds) == {"noise", "reverb"}


def test_enrollment_unknown_speaker(catalog):
    with pytest.raises(TseSimError):
        sample_enrollment(catalog, "nobody", None, 0.0, dry_cfg(), np.random.default_rng(0))


def test_stream_empty_and_deterministic(catalog):
    cfg = dry_cfg(seed=11, reverb=ReverbConfig(True, 0.5), enroll=EnrollConfig(0.5))
    assert list(simulate_stream(catalog, cfg, n=0)) == []
    a = list(simulate_stream(catalog, cfg, n=100))
    b = list(simulate_stream(catalog, cfg, n=100))
    for x, y in zip(a, b):
        assert x.spec == y.spec
        assert x.mixture.identical(y.mixture) and x.target_ref.identical(y.target_ref)
        assert x.enrollment.identical(y.enrollment)


def test_example_depends_only_on_seed_and_index(catalog):
    cfg = dry_cfg(seed=5, reverb=ReverbConfig(True, 0.7))
    forward = list(simulate_stream(catalog, cfg, n=12))
    sim = Simulator(catalog, cfg)
    for i in reversed(range(12)):
        ex = sim.example(i)
        assert ex.spec == forward[i].spec and ex.mixture.identical(forward[i].mixture)
    tail = list(simulate_stream(catalog, cfg, n=4, start=8))
    assert [e.spec for e in tail] == [e.spec for e in forward[8:]]


def test_stream_invariants(tmp_path):
    cat = build_catalog(make_corpus(tmp_path / "c", n_speakers=5, n_utts=3, vary_length=True))
    cfg = dry_cfg(seed=3, n_speakers=3)
    for ex in simulate_stream(cat, cfg, n=60):
        spec = ex.spec
        assert spec.target_spk not in spec.interferer_spks
        assert len(spec.snrs_db) == len(spec.interferer_utts) == 2
        assert len(ex.mixture) == len(ex.target_ref) == spec.num_samples
        assert ex.mixture.sample_rate == ex.target_ref.sample_rate == ex.enrollment.sample_rate
        assert spec.enroll_utt != spec.target_utt
        assert np.max(np.abs(ex.mixture.samples - sum(s.samples for s in ex.sources))) == 0.0
        for src, s in zip(ex.sources[1:], spec.snrs_db):
            assert snr(ex.sources[0], src) == pytest.approx(s, abs=1e-6)


def test_snr_draw_uniform(tmp_path):
    cat = build_catalog(make_corpus(tmp_path / "c", n_speakers=4, n_utts=2, seconds=0.05))
    cfg = dry_cfg(seed=21, snr_range_db=(-5, 5))
    snrs = [ex.spec.snrs_db[0] for ex in simulate_stream(cat, cfg, n=1000)]
    assert kstest(snrs, "uniform", args=(-5, 10)).pvalue > 0.001


def test_si_snr_sanity(catalog):
    cfg = dry_cfg(seed=6, snr_range_db=(0, 0))
    for ex in simulate_stream(catalog, cfg, n=10):
        assert si_snr(ex.mixture, ex.target_ref) < si_snr(ex.target_ref, ex.target_ref)


def test_degenerate_catalog_surfaces_on_first_example(tmp_path):
    cat = build_catalog(make_corpus(tmp_path / "c", n_speakers=1, n_utts=3))
    with pytest.raises(DistinctSpeakerUnavailableError):
        next(simulate_stream(cat, dry_cfg()))


def test_sample_rate_mismatch_rejected(catalog):
    with pytest.raises(TseSimError, match="Hz"):
        Simulator(catalog, SimConfig(sample_rate=16000)).example(0)


def test_catalog_buffer_lazy(catalog):
    buf = CatalogBuffer(catalog)
    assert len(buf) == len(catalog)
    assert buf.record(3) is catalog.records[3]
    assert buf.store._cache == {}


# -----------------------------
# export
# -----------------------------
def test_export_triplets_and_roundtrip(catalog, tmp_path, noise_list):
    cfg = dry_cfg(seed=9, noise=NoiseConfig(True, (0, 10), noise_list), reverb=ReverbConfig(True, 0.5))
    examples = list(simulate_stream(catalog, cfg, n=3))
    meta = export_batch(iter(examples), tmp_path / "out", 3)
    wavs = sorted(f for f in os.listdir(tmp_path / "out") if f.endswith(".wav"))
    assert len(wavs) == 9
    lines = read_metadata(meta)
    assert len(lines) == 3
    for line, ex in zip(lines, examples):
        assert MixtureSpec.from_dict(json.loads(json.dumps(line["spec"]))) == ex.spec
        mix = read_wav(tmp_path / "out" / f"{line['id']}_mix.wav")
        assert np.array_equal(mix.samples, ex.mixture.samples.astype(np.float32))

    # replay from the stored seed and index
    for line in lines:
        spec = MixtureSpec.from_dict(line["spec"])
        replay = Simulator(catalog, cfg.replace(seed=spec.seed)).example(spec.index)
        stored = read_wav(tmp_path / "out" / f"{line['id']}_ref.wav")
        assert np.array_equal(stored.samples, replay.target_ref.samples.astype(np.float32))


def test_export_packed_shard(catalog, tmp_path):
    cfg = dry_cfg(seed=1)
    manifest = export_batch(simulate_stream(catalog, cfg), tmp_path / "sh", 4, format="packed_shard",
                            provenance={"config_hash": cfg.config_hash()})
    shard = tmp_path / "sh" / open(manifest).read().strip()
    with tarfile.open(shard) as tar:
        names = tar.getnames()
        meta = tar.extractfile("metadata.jsonl").read().decode().splitlines()
    assert len([n for n in names if n.endswith(".wav")]) == 12
    assert len(meta) == 4
    assert all(json.loads(m)["provenance"]["config_hash"] == cfg.config_hash() for m in meta)

import io
import itertools
import os
import tarfile

import numpy as np
import pytest
from scipy.stats import chisquare

from tsesim.errors import CatalogError, ShardError
from tsesim.shards import (AudioStore, Catalog, ShardMember, UtteranceRecord, build_catalog,
                           iter_members, pack_shards, read_manifest, read_record_list,
                           shuffle_buffered, stream_shards)


def test_pack_counts(corpus, tmp_path):
    records = read_record_list(corpus)[:5]
    paths = pack_shards(records, tmp_path / "shards", shard_size=2)
    assert [os.path.basename(p) for p in paths] == ["shard-000000.tar", "shard-000001.tar", "shard-000002.tar"]
    counts = [len(tarfile.open(p).getmembers()) for p in paths]
    assert counts == [2, 2, 1]
    assert read_manifest(tmp_path / "shards" / "shards.list") == [os.path.normpath(p) for p in paths]


def test_pack_empty(tmp_path):
    assert pack_shards([], tmp_path / "empty", 10) == []
    assert (tmp_path / "empty" / "shards.list").read_text() == ""


def test_pack_member_names_and_format(corpus, tmp_path):
    records = read_record_list(corpus)
    (path,) = pack_shards(records, tmp_path / "s", shard_size=100)
    with tarfile.open(path) as tar:
        members = tar.getmembers()
    assert [m.name for m in members] == [f"{r.spk_id}/{r.utt_id}.wav" for r in records]
    raw = open(path, "rb").read(512)
    assert raw[257:263] == b"ustar\x00"


def test_pack_is_byte_deterministic(corpus, tmp_path):
    records = read_record_list(corpus)
    a = pack_shards(records, tmp_path / "a", 4)
    b = pack_shards(records, tmp_path / "b", 4)
    assert [open(p, "rb").read() for p in a] == [open(p, "rb").read() for p in b]


def test_pack_errors(corpus, tmp_path):
    records = read_record_list(corpus)
    with pytest.raises(CatalogError, match="duplicate"):
        pack_shards([records[0], records[0]], tmp_path / "d", 2)
    missing = UtteranceRecord("ghost", "spkX", str(tmp_path / "ghost.wav"))
    with pytest.raises(ShardError, match="ghost"):
        pack_shards([records[0], missing], tmp_path / "m", 2)


def test_pack_stream_roundtrip(corpus, tmp_path):
    records = read_record_list(corpus)
    paths = pack_shards(records, tmp_path / "s", shard_size=5)
    streamed = [(rec.utt_id, rec.spk_id, payload) for p in paths for rec, payload in iter_members(p)]
    expected = [(r.utt_id, r.spk_id, open(r.locator, "rb").read()) for r in records]
    assert streamed == expected

    stream = stream_shards(paths, shuffle_buffer=0)
    assert [rec.utt_id for rec, _ in stream] == [r.utt_id for r in records]
    assert stream.max_resident <= 1


def test_stream_seeded_shuffle_reproducible(corpus, tmp_path):
    paths = pack_shards(read_record_list(corpus), tmp_path / "s", shard_size=4)
    order = lambda seed: [r.utt_id for r, _ in stream_shards(paths, 5, seed)]  # noqa: E731
    assert order(3) == order(3)
    assert sorted(order(3)) == sorted(order(4))
    assert order(3) != [r.utt_id for r, _ in stream_shards(paths, 0)]


@pytest.mark.parametrize("capacity", [1, 3, 8])
def test_stream_memory_bound(corpus, tmp_path, capacity):
    paths = pack_shards(read_record_list(corpus), tmp_path / "s", shard_size=4)
    seen = []
    stream = stream_shards(paths, capacity, seed=0)
    stream.on_resident = seen.append
    out = list(stream)
    assert len(out) == 12
    assert max(seen) <= capacity + 1
    assert stream.max_resident == max(seen)


def test_shuffle_buffer_uniform_permutation():
    rng = np.random.default_rng(2024)
    perms = list(itertools.permutations(range(5)))
    index = {p: i for i, p in enumerate(perms)}
    counts = np.zeros(len(perms))
    for _ in range(10_000):
        counts[index[tuple(shuffle_buffered(range(5), 5, rng))]] += 1
    assert chisquare(counts).pvalue > 0.001


def test_shuffle_buffer_zero_passthrough():
    assert list(shuffle_buffered(range(10), 0, np.random.default_rng(0))) == list(range(10))


def test_corrupt_member_skipped(corpus, tmp_path):
    records = read_record_list(corpus)[:3]
    path = tmp_path / "bad.tar"
    with tarfile.open(path, "w", format=tarfile.USTAR_FORMAT) as tar:
        for i, rec in enumerate(records):
            payload = open(rec.locator, "rb").read() if i != 1 else b"not a wav at all"
            info = tarfile.TarInfo(rec.member_name)
            info.size = len(payload)
            tar.addfile(info, io.BytesIO(payload))
    stream = stream_shards([path])
    got = [r.utt_id for r, _ in stream]
    assert got == [records[0].utt_id, records[2].utt_id]
    assert stream.skipped == 1


def test_truncated_shard_not_fatal(corpus, tmp_path):
    records = read_record_list(corpus)
    (good,) = pack_shards(records[:4], tmp_path / "g", 10)
    data = open(good, "rb").read()
    broken = tmp_path / "broken.tar"
    broken.write_bytes(data[:1500])
    stream = stream_shards([broken, good])
    got = [r.utt_id for r, _ in stream]
    assert got[-4:] == [r.utt_id for r in records[:4]]
    assert stream.skipped >= 1


# -----------------------------
# catalogs
# -----------------------------
def test_catalog_grouping(tmp_path):
    lst = tmp_path / "l.tsv"
    lst.write_text("u1\tA\t/x/u1.wav\nu2\tB\t/x/u2.wav\nu3\tA\t/x/u3.wav\n")
    cat = build_catalog(lst)
    assert cat.spk2utt == {"A": ("u1", "u3"), "B": ("u2",)}
    assert [r.utt_id for r in cat.records] == ["u1", "u2", "u3"]
    flat = sorted(u for utts in cat.spk2utt.values() for u in utts)
    assert flat == sorted(r.utt_id for r in cat.records)


def test_catalog_empty(tmp_path):
    lst = tmp_path / "e.tsv"
    lst.write_text("")
    cat = build_catalog(lst)
    assert len(cat) == 0 and cat.spk2utt == {}


def test_catalog_errors(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("u1\tA\t/a.wav\nu2\tB\n")
    with pytest.raises(CatalogError, match=":2:"):
        build_catalog(bad, kind="list")
    dup = tmp_path / "dup.tsv"
    dup.write_text("u1\tA\t/a.wav\nu1\tB\t/b.wav\n")
    with pytest.raises(CatalogError, match="duplicate"):
        build_catalog(dup)


def test_catalog_serialization_roundtrip(catalog, tmp_path):
    ser = tmp_path / "cat.tsv"
    ser.write_text(catalog.to_tsv())
    rebuilt = build_catalog(ser)
    assert rebuilt == catalog
    assert rebuilt.spk2utt_text() == catalog.spk2utt_text()


def test_catalog_from_manifest(corpus, tmp_path):
    records = read_record_list(corpus)
    pack_shards(records, tmp_path / "s", 5)
    cat = build_catalog(tmp_path / "s" / "shards.list")
    assert [(r.utt_id, r.spk_id) for r in cat.records] == [(r.utt_id, r.spk_id) for r in records]
    assert all(isinstance(r.locator, ShardMember) for r in cat.records)

    ser = tmp_path / "cat.tsv"
    ser.write_text(cat.to_tsv())
    assert build_catalog(ser) == cat

    store = AudioStore()
    for shard_rec, raw_rec in zip(cat.records, records):
        assert store.load(shard_rec).identical(store.load(raw_rec))


def test_catalog_rejects_bad_ids():
    with pytest.raises(CatalogError):
        UtteranceRecord("a/b", "spk", "x.wav")
    with pytest.raises(CatalogError):
        UtteranceRecord("a", "", "x.wav")
    with pytest.raises(CatalogError):
        Catalog((UtteranceRecord("a", "s", "1"), UtteranceRecord("a", "t", "2")))

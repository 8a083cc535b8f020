"""Corpus catalogs and tar-shard packing/streaming.

Small utterance files are packed into sequential POSIX ustar archives
(``shard-000000.tar``, ...). Members are named ``<spk_id>/<utt_id>.wav`` so a
shard is self-describing and can be streamed without any sidecar index.
"""

from __future__ import annotations

import io
import logging
import os
import tarfile
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Iterator, Sequence, Union

import numpy as np

from .audio import AudioClip, decode_wav, read_wav
from .errors import CatalogError, ShardError, TseSimError

logger = logging.getLogger(__name__)

SHARD_PATTERN = "shard-{:06d}.tar"
MANIFEST_NAME = "shards.list"
MEMBER_SEP = "::"


@dataclass(frozen=True)
class ShardMember:
    shard: str
    member: str

    def __str__(self) -> str:
        return f"{self.shard}{MEMBER_SEP}{self.member}"


Locator = Union[str, ShardMember]


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    spk_id: str
    locator: Locator

    def __post_init__(self):
        if not self.utt_id or "/" in self.utt_id:
            raise CatalogError(f"invalid utt_id {self.utt_id!r}")
        if not self.spk_id or "/" in self.spk_id:
            raise CatalogError(f"invalid spk_id {self.spk_id!r} for {self.utt_id}")

    @property
    def member_name(self) -> str:
        return f"{self.spk_id}/{self.utt_id}.wav"


def parse_locator(text: str, base_dir: str | None = None) -> Locator:
    shard, sep, member = text.partition(MEMBER_SEP)
    path = shard if sep else text
    if base_dir and not os.path.isabs(path):
        path = os.path.normpath(os.path.join(base_dir, path))
    return ShardMember(path, member) if sep else path


@dataclass(frozen=True)
class Catalog:
    """Ordered utterance records plus the derived ``spk2utt`` grouping."""

    records: tuple[UtteranceRecord, ...] = ()
    spk2utt: dict = field(init=False, compare=False, repr=False)
    _by_utt: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        records = tuple(self.records)
        by_utt: dict[str, UtteranceRecord] = {}
        spk2utt: dict[str, list[str]] = {}
        for rec in records:
            if rec.utt_id in by_utt:
                raise CatalogError(f"duplicate utt_id {rec.utt_id!r}")
            by_utt[rec.utt_id] = rec
            spk2utt.setdefault(rec.spk_id, []).append(rec.utt_id)
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "_by_utt", by_utt)
        object.__setattr__(self, "spk2utt", {k: tuple(v) for k, v in spk2utt.items()})

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, utt_id: str) -> UtteranceRecord:
        return self._by_utt[utt_id]

    def __contains__(self, utt_id) -> bool:
        return utt_id in self._by_utt

    @property
    def speakers(self) -> list[str]:
        return list(self.spk2utt)

    def to_tsv(self) -> str:
        return "".join(f"{r.utt_id}\t{r.spk_id}\t{r.locator}\n" for r in self.records)

    def spk2utt_text(self) -> str:
        return "".join(f"{spk} {' '.join(utts)}\n" for spk, utts in self.spk2utt.items())


def parse_record_lines(lines: Iterable[str], source: str = "<list>", base_dir: str | None = None):
    records = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not all(parts):
            raise CatalogError(f"{source}:{lineno}: expected 'utt_id<TAB>spk_id<TAB>path', got {line!r}")
        try:
            records.append(UtteranceRecord(parts[0], parts[1], parse_locator(parts[2], base_dir)))
        except CatalogError as exc:
            raise CatalogError(f"{source}:{lineno}: {exc}") from exc
    return records


def read_record_list(path) -> list[UtteranceRecord]:
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        return parse_record_lines(fh, source=path, base_dir=os.path.dirname(path))


def read_manifest(path) -> list[str]:
    path = os.fspath(path)
    base = os.path.dirname(path)
    with open(path, encoding="utf-8") as fh:
        entries = [ln.strip() for ln in fh if ln.strip()]
    return [e if os.path.isabs(e) else os.path.normpath(os.path.join(base, e)) for e in entries]


def _looks_like_record_list(path: str) -> bool:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                return "\t" in line
    return True


def build_catalog(source, kind: str = "auto") -> Catalog:
    """Build a :class:`Catalog` from a raw TSV list or a shard manifest.

    ``kind`` is ``"list"``, ``"manifest"`` or ``"auto"`` (tab-separated lines
    mean a list). Record order follows the input; each speaker's utterances
    keep first-seen order.
    """
    source = os.fspath(source)
    if kind == "auto":
        kind = "list" if _looks_like_record_list(source) else "manifest"
    if kind == "list":
        records = read_record_list(source)
    elif kind == "manifest":
        records = []
        for shard in read_manifest(source):
            records.extend(scan_shard(shard))
    else:
        raise ValueError(f"unknown catalog source kind {kind!r}")
    return Catalog(tuple(records))


# -----------------------------
# packing
# -----------------------------
def _tarinfo(name: str, size: int) -> tarfile.TarInfo:
    # fixed metadata so identical inputs give byte-identical archives
    info = tarfile.TarInfo(name)
    info.size = size
    info.mtime = 0
    info.mode = 0o644
    info.uid = info.gid = 0
    info.uname = info.gname = ""
    return info


def add_bytes(tar: tarfile.TarFile, name: str, payload: bytes) -> None:
    tar.addfile(_tarinfo(name, len(payload)), io.BytesIO(payload))


def pack_shards(records: Sequence[UtteranceRecord], out_dir, shard_size: int) -> list[str]:
    """Pack raw utterance files into ustar shards of at most ``shard_size`` members.

    Writes ``shards.list`` (one shard file name per line) next to the shards
    and returns the shard paths.
    """
    if shard_size < 1:
        raise ValueError("shard_size must be >= 1")
    out_dir = os.fspath(out_dir)
    seen = set()
    for rec in records:
        if rec.utt_id in seen:
            raise CatalogError(f"duplicate utt_id {rec.utt_id!r}")
        seen.add(rec.utt_id)
        if isinstance(rec.locator, ShardMember):
            raise CatalogError(f"{rec.utt_id}: pack_shards needs raw file locators")

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for start in range(0, len(records), shard_size):
        path = os.path.join(out_dir, SHARD_PATTERN.format(len(paths)))
        with tarfile.open(path, "w", format=tarfile.USTAR_FORMAT) as tar:
            for rec in records[start:start + shard_size]:
                try:
                    with open(rec.locator, "rb") as fh:
                        payload = fh.read()
                except OSError as exc:
                    raise ShardError(f"cannot read {rec.utt_id} ({rec.locator}): {exc}") from exc
                add_bytes(tar, rec.member_name, payload)
        paths.append(path)
        logger.info("wrote %s", path)

    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        fh.writelines(os.path.basename(p) + "\n" for p in paths)
    return paths


def _record_from_member(shard: str, name: str) -> UtteranceRecord:
    spk, sep, fname = name.partition("/")
    if not sep or "/" in fname or not fname.endswith(".wav"):
        raise ShardError(f"{shard}: unexpected member name {name!r}")
    return UtteranceRecord(fname[: -len(".wav")], spk, ShardMember(shard, name))


def scan_shard(shard) -> list[UtteranceRecord]:
    """List the records in a shard from its headers, without decoding audio."""
    shard = os.fspath(shard)
    try:
        with tarfile.open(shard, "r:") as tar:
            return [_record_from_member(shard, m.name) for m in tar.getmembers() if m.isfile()]
    except (tarfile.TarError, OSError) as exc:
        raise ShardError(f"cannot read shard {shard}: {exc}") from exc


def iter_members(shard) -> Iterator[tuple[UtteranceRecord, bytes]]:
    """Single sequential pass over a shard yielding ``(record, payload bytes)``."""
    shard = os.fspath(shard)
    with tarfile.open(shard, "r|") as tar:
        for info in tar:
            if not info.isfile():
                continue
            fh = tar.extractfile(info)
            yield _record_from_member(shard, info.name), fh.read()


# -----------------------------
# streaming
# -----------------------------
class ShardStream:
    """Iterate ``(record, clip)`` pairs from shards through a shuffle buffer.

    With ``shuffle_buffer == 0`` items come out in pack order. Otherwise the
    buffer fills to capacity, then each new member replaces a uniformly chosen
    occupant, which is emitted. Members that fail to decode are skipped and
    counted in :attr:`skipped`; :attr:`max_resident` records the peak number of
    decoded clips held at once.
    """

    def __init__(self, shard_paths: Sequence, shuffle_buffer: int = 0, seed=None,
                 on_resident: Callable[[int], None] | None = None):
        if shuffle_buffer < 0:
            raise ValueError("shuffle_buffer must be >= 0")
        self.shard_paths = [os.fspath(p) for p in shard_paths]
        self.shuffle_buffer = shuffle_buffer
        self.seed = seed
        self.on_resident = on_resident
        self.skipped = 0
        self.max_resident = 0

    def _note_resident(self, n: int) -> None:
        self.max_resident = max(self.max_resident, n)
        if self.on_resident is not None:
            self.on_resident(n)

    def _decoded(self) -> Iterator[tuple[UtteranceRecord, AudioClip]]:
        for shard in self.shard_paths:
            try:
                for rec, payload in iter_members(shard):
                    try:
                        clip = decode_wav(payload, name=str(rec.locator))
                    except TseSimError as exc:
                        self.skipped += 1
                        logger.warning("skipping corrupt member: %s", exc)
                        continue
                    yield rec, clip
            except (tarfile.TarError, ShardError, OSError) as exc:
                self.skipped += 1
                logger.warning("abandoning rest of shard %s: %s", shard, exc)

    def __iter__(self) -> Iterator[tuple[UtteranceRecord, AudioClip]]:
        rng = np.random.default_rng(self.seed)
        return shuffle_buffered(self._decoded(), self.shuffle_buffer, rng, self._note_resident)


def shuffle_buffered(items: Iterable, capacity: int, rng: np.random.Generator,
                     on_resident: Callable[[int], None] | None = None) -> Iterator:
    """Fixed-capacity streaming shuffle; ``capacity == 0`` passes items through.

    ``on_resident`` is called with the number of items currently held,
    counting the one just pulled from ``items``.
    """
    note = on_resident or (lambda n: None)
    if capacity == 0:
        for item in items:
            note(1)
            yield item
        return
    buf: list = []
    for item in items:
        if len(buf) < capacity:
            buf.append(item)
            note(len(buf))
            continue
        note(capacity + 1)
        idx = int(rng.integers(capacity))
        out, buf[idx] = buf[idx], item
        yield out
    while buf:
        idx = int(rng.integers(len(buf)))
        buf[idx], buf[-1] = buf[-1], buf[idx]
        yield buf.pop()


def stream_shards(shard_paths: Sequence, shuffle_buffer: int = 0, seed=None) -> ShardStream:
    return ShardStream(shard_paths, shuffle_buffer=shuffle_buffer, seed=seed)


# -----------------------------
# random access
# -----------------------------
@lru_cache(maxsize=256)
def _shard_index(shard: str) -> dict[str, tuple[int, int]]:
    with tarfile.open(shard, "r:") as tar:
        return {m.name: (m.offset_data, m.size) for m in tar.getmembers() if m.isfile()}


def read_member(member: ShardMember) -> bytes:
    try:
        offset, size = _shard_index(member.shard)[member.member]
    except KeyError:
        raise ShardError(f"{member.shard}: no member {member.member!r}") from None
    with open(member.shard, "rb") as fh:
        fh.seek(offset)
        return fh.read(size)


class AudioStore:
    """Loads catalog audio by record, keeping a bounded LRU of decoded clips."""

    def __init__(self, cache_size: int = 512):
        self.cache_size = cache_size
        self._cache: OrderedDict = OrderedDict()

    def load(self, rec: UtteranceRecord) -> AudioClip:
        key = str(rec.locator)
        clip = self._cache.get(key)
        if clip is not None:
            self._cache.move_to_end(key)
            return clip
        if isinstance(rec.locator, ShardMember):
            clip = decode_wav(read_member(rec.locator), name=key)
        else:
            clip = read_wav(rec.locator)
        clip.samples.setflags(write=False)
        if self.cache_size > 0:
            self._cache[key] = clip
            if len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return clip

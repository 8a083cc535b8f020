"""Simulation configuration, its JSON form, overrides and hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Iterable

from .errors import ConfigError

logger = logging.getLogger(__name__)

LENGTH_POLICIES = ("truncate_to_shortest", "pad_to_longest")
RIR_PROVIDERS = ("synthetic", "measured")


def _range(value, name: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a [min, max] pair, got {value!r}") from None
    if lo > hi:
        raise ConfigError(f"{name}: min {lo} > max {hi}")
    return lo, hi


def _probability(value, name: str) -> float:
    p = float(value)
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"{name} must be in [0, 1], got {p}")
    return p


@dataclass(frozen=True)
class NoiseConfig:
    enabled: bool = False
    snr_range_db: tuple[float, float] = (0.0, 20.0)
    noise_list: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "snr_range_db", _range(self.snr_range_db, "noise.snr_range_db"))


@dataclass(frozen=True)
class ReverbConfig:
    enabled: bool = False
    probability: float = 1.0
    provider: str = "synthetic"
    rir_list: str | None = None
    rt60_range_s: tuple[float, float] = (0.1, 0.7)
    drr_range_db: tuple[float, float] = (0.0, 15.0)
    delay_range_s: tuple[float, float] = (0.001, 0.015)
    length_factor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "probability", _probability(self.probability, "reverb.probability"))
        for name in ("rt60_range_s", "drr_range_db", "delay_range_s"):
            object.__setattr__(self, name, _range(getattr(self, name), f"reverb.{name}"))
        if self.provider not in RIR_PROVIDERS:
            raise ConfigError(f"reverb.provider must be one of {RIR_PROVIDERS}")


@dataclass(frozen=True)
class EnrollConfig:
    corrupt_probability: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "corrupt_probability",
                           _probability(self.corrupt_probability, "enroll.corrupt_probability"))


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines a simulated stream, apart from the example index.

    ``snr_range_db`` is target power over interferer power, so a positive
    value makes the interferer quieter than the target.
    """

    catalog: str | None = None
    n_speakers: int = 2
    snr_range_db: tuple[float, float] = (-5.0, 5.0)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    reverb: ReverbConfig = field(default_factory=ReverbConfig)
    enroll: EnrollConfig = field(default_factory=EnrollConfig)
    peak_ceiling: float = 0.9
    sample_rate: int = 16000
    length_policy: str = "truncate_to_shortest"
    seed: int = 0

    def __post_init__(self):
        if int(self.n_speakers) < 1:
            raise ConfigError("n_speakers must be >= 1")
        object.__setattr__(self, "n_speakers", int(self.n_speakers))
        object.__setattr__(self, "snr_range_db", _range(self.snr_range_db, "snr_range_db"))
        if self.length_policy not in LENGTH_POLICIES:
            raise ConfigError(f"length_policy must be one of {LENGTH_POLICIES}")
        if not self.peak_ceiling > 0:
            raise ConfigError("peak_ceiling must be positive")
        if int(self.sample_rate) <= 0:
            raise ConfigError("sample_rate must be positive")
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        object.__setattr__(self, "seed", int(self.seed))

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        data = dict(data)
        nested = {"noise": NoiseConfig, "reverb": ReverbConfig, "enroll": EnrollConfig}
        try:
            for key, sub in nested.items():
                if key in data:
                    _check_keys(sub, data[key], key)
                    data[key] = sub(**data[key])
            _check_keys(cls, data, "config")
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        """Stable digest of every field, seed included."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


def _check_keys(cls, data, where: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _resolve_paths(data: dict, base_dir: str) -> dict:
    def fix(p):
        if p and not os.path.isabs(p):
            return os.path.normpath(os.path.join(base_dir, p))
        return p

    data = json.loads(json.dumps(data))
    if data.get("catalog"):
        data["catalog"] = fix(data["catalog"])
    for section, key in (("noise", "noise_list"), ("reverb", "rir_list")):
        if isinstance(data.get(section), dict) and data[section].get(key):
            data[section][key] = fix(data[section][key])
    return data


def load_config_dict(path) -> dict:
    """Read a JSON config; relative paths inside are taken relative to the file."""
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return _resolve_paths(data, os.path.dirname(os.path.abspath(path)))


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: Iterable[str]) -> dict:
    """Apply ``dotted.key=value`` overrides in order (last wins).

    Values are parsed as JSON when possible (``true``, ``3``, ``[0, 5]``),
    otherwise taken as plain strings.
    """
    data = json.loads(json.dumps(data))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        value = _parse_value(raw)
        logger.info("config override %s = %r (was %r)", key, value, node.get(parts[-1]))
        node[parts[-1]] = value
    return data

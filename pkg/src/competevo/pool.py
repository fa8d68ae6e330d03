"""Append-only policy pools, their file format, and delta-uniform opponent sampling."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ConfigError, ContractViolation, PolicyLookupError
from .morphology import Species, species_template
from .policy import PolicyParams, read_params, write_params

POOL_MAGIC = "competevo-pool"
PLAYERS = ("alpha", "beta")


@dataclass(frozen=True)
class SamplerConfig:
    delta: float = 0.5
    n_opponents: int = 4

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError(f"delta must lie in [0, 1], got {self.delta}")
        if self.n_opponents < 1:
            raise ConfigError("n_opponents must be >= 1")


@dataclass
class PoolEntry:
    version: int
    params: PolicyParams
    meta: dict = field(default_factory=dict)


@dataclass
class PolicyPool:
    player: str
    species: Species
    evolvable: bool
    morph_seed: np.ndarray
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def append(self, params: PolicyParams, meta: dict | None = None) -> PoolEntry:
        version = len(self.entries)
        if params.species != self.species:
            raise ContractViolation(f"pool holds {self.species.name} policies, got {params.species.name}")
        stored = params.copy(version=version)
        entry = PoolEntry(version, stored, dict(meta or {}))
        self.entries.append(entry)
        return entry

    def latest(self) -> PoolEntry:
        if not self.entries:
            raise ContractViolation(f"pool {self.player!r} is empty")
        return self.entries[-1]

    def get(self, version) -> PoolEntry:
        if version == "latest":
            return self.latest()
        try:
            v = int(version)
        except (TypeError, ValueError):
            raise PolicyLookupError(f"bad version {version!r}") from None
        if not 0 <= v < len(self.entries):
            raise PolicyLookupError(f"pool {self.player!r} has no version {v} (size {len(self.entries)})")
        return self.entries[v]

    def save(self, path) -> None:
        header = {
            "format": POOL_MAGIC,
            "player": self.player,
            "species": self.species.name,
            "evolvable": self.evolvable,
            "morph_seed": [float(x) for x in self.morph_seed],
            "size": len(self.entries),
        }
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write((json.dumps(header) + "\n").encode())
            for e in self.entries:
                write_params(fh, e.params, e.meta)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "PolicyPool":
        path = os.fspath(path)
        try:
            fh = open(path, "rb")
        except OSError as exc:
            raise CheckpointError(f"cannot open pool file {path}: {exc}") from None
        with fh:
            line = fh.readline()
            try:
                header = json.loads(line)
                if header.get("format") != POOL_MAGIC:
                    raise ValueError("not a pool file")
                pool = cls(header["player"], species_template(header["species"]), bool(header["evolvable"]),
                           np.array(header["morph_seed"], dtype=np.float64))
                size = int(header["size"])
            except (ValueError, KeyError, TypeError) as exc:
                raise CheckpointError(f"{path}: bad pool header at byte 0: {exc}") from None
            while True:
                rec = read_params(fh, path)
                if rec is None:
                    break
                params, meta = rec
                if params.version != len(pool.entries):
                    raise CheckpointError(
                        f"{path}: expected version {len(pool.entries)}, found {params.version} "
                        f"before byte {fh.tell()}"
                    )
                pool.entries.append(PoolEntry(params.version, params, meta))
        if len(pool.entries) != size:
            raise CheckpointError(f"{path}: header promises {size} entries, file holds {len(pool.entries)}")
        return pool


def eligible_versions(pool_size: int, delta: float) -> range:
    """Versions ``ceil((1 - delta) * (K - 1)) .. K - 1``."""
    if pool_size < 1:
        raise ContractViolation("pool must be nonempty")
    if not 0.0 <= delta <= 1.0:
        raise ConfigError(f"delta must lie in [0, 1], got {delta}")
    return range(math.ceil((1.0 - delta) * (pool_size - 1)), pool_size)


def sample_opponent(pool: PolicyPool, cfg: SamplerConfig, rng: np.random.Generator) -> PoolEntry:
    if len(pool) == 0:
        raise ContractViolation(f"cannot sample from empty pool {pool.player!r}")
    elig = eligible_versions(len(pool), cfg.delta)
    return pool.entries[elig.start + int(rng.integers(len(elig)))]

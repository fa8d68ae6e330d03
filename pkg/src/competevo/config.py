"""Run configuration: one YAML file, validated with line-precise errors."""
from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field

import yaml

from .arena import PhysicsParams, TaskKind
from .errors import CompetEvoError, ConfigError
from .morphology import SPECIES_NAMES, MorphConstants, species_template
from .policy import PolicyConfig
from .ppo import PPOConfig

DEFAULT_MAX_GENERATIONS = {TaskKind.RUN_TO_GOAL: 1000, TaskKind.SUMO: 2000, TaskKind.TUG: 1000}


@dataclass(frozen=True)
class SelfPlayConfig:
    delta: float = 0.5
    n_opponents: int = 4
    warmup_generations: int = 100
    termination_generation: int = 1000
    max_generations: int | None = None  # None: per-task default
    checkpoint_every: int = 1

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError(f"selfplay.delta must lie in [0, 1], got {self.delta}")
        if self.n_opponents < 1 or self.termination_generation <= 0 or self.warmup_generations < 0:
            raise ConfigError("need n_opponents >= 1, termination_generation > 0, warmup_generations >= 0")
        if self.max_generations is not None and self.warmup_generations > self.max_generations:
            raise ConfigError("warmup_generations cannot exceed max_generations")


SECTIONS = {
    "ppo": PPOConfig,
    "selfplay": SelfPlayConfig,
    "physics": PhysicsParams,
    "morphology": MorphConstants,
    "policy": PolicyConfig,
}


@dataclass(frozen=True)
class RunConfig:
    task: TaskKind = TaskKind.RUN_TO_GOAL
    species: tuple = ("ant", "ant")
    evolvable: tuple = (True, False)
    seed: int = 0
    out_dir: str = "runs/default"
    scale: float = 1.0
    workers: int = 1
    ppo: PPOConfig = field(default_factory=PPOConfig)
    selfplay: SelfPlayConfig = field(default_factory=SelfPlayConfig)
    physics: PhysicsParams = field(default_factory=PhysicsParams)
    morphology: MorphConstants = field(default_factory=MorphConstants)
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def __post_init__(self):
        object.__setattr__(self, "task", TaskKind(self.task))
        if len(self.species) != 2 or len(self.evolvable) != 2:
            raise ConfigError("species and evolvable need exactly two entries (alpha, beta)")
        for s in self.species:
            species_template(s)
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ConfigError("scale must be positive")
        if not all(isinstance(e, bool) for e in self.evolvable):
            raise ConfigError("evolvable entries must be true/false")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def batch_size(self) -> int:
        """Batch after applying the desk-scale multiplier."""
        return max(1, round(self.ppo.batch_size * self.scale))

    @property
    def max_generations(self) -> int:
        mg = self.selfplay.max_generations
        return DEFAULT_MAX_GENERATIONS[self.task] if mg is None else mg

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name in SECTIONS:
                v = {k: (list(x) if isinstance(x, tuple) else x) for k, x in dataclasses.asdict(v).items()}
            elif isinstance(v, tuple):
                v = list(v)
            elif isinstance(v, TaskKind):
                v = v.value
            out[f.name] = v
        return out


def _type_check(value, default, where: str):
    """Coerce a YAML scalar to the type of the field default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    return value


def _build(cls, node: yaml.MappingNode, data: dict, prefix: str, source: str):
    lines = {k.value: k.start_mark.line + 1 for k, _ in node.value}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        line = lines.get(key, "?")
        where = f"{source}:{line}: {prefix}{key}"
        if key not in fields:
            raise ConfigError(f"{where}: unknown key (valid keys: {', '.join(fields)})")
        f = fields[key]
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if key in SECTIONS and cls is RunConfig:
            sub = dict(node.value)[next(k for k, _ in node.value if k.value == key)]
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping")
            kwargs[key] = _build(SECTIONS[key], sub, value, f"{key}.", source)
            continue
        if value is None and default is None:
            kwargs[key] = None
        elif default is None:
            kwargs[key] = value
        else:
            kwargs[key] = _type_check(value, default, where)
    try:
        return cls(**kwargs)
    except CompetEvoError as exc:
        raise ConfigError(f"{source}:{node.start_mark.line + 1}: {prefix or 'config'}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}:{node.start_mark.line + 1}: {prefix or 'config'}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else "?"
        raise ConfigError(f"{source}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if data is None:
        return RunConfig()
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: top level must be a mapping")
    return _build(RunConfig, node, data, "", source)


def load_config(path) -> RunConfig:
    path = os.fspath(path)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_config(cfg))


__all__ = [
    "RunConfig", "SelfPlayConfig", "parse_config", "load_config", "dump_config", "save_config",
    "SPECIES_NAMES",
]

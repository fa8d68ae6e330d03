"""Head-to-head evaluation: duels, win-rate curves and cross tables.

Rounds come in pairs sharing one seed. In the second round of a pair the
two start jitters trade owners, so neither policy keeps a lucky start.
Each policy's action noise is tied to the jitter it holds, which makes
``duel(A, B)`` the exact mirror image of ``duel(B, A)``.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from .arena import DEFAULT_PHYSICS, PhysicsParams, Result, TaskKind
from .errors import ContractViolation, PolicyLookupError
from .morphology import DEFAULT_CONSTANTS, MorphConstants
from .rollout import Actor, play_episode


class EvalMode(str, enum.Enum):
    DETERMINISTIC = "deterministic_mean"
    STOCHASTIC = "stochastic"


@dataclass(frozen=True)
class PolicyRef:
    pool: str
    version: object = "latest"  # int or "latest"

    @classmethod
    def parse(cls, text: str) -> "PolicyRef":
        name, _, ver = text.partition(":")
        if not name:
            raise PolicyLookupError(f"bad policy reference {text!r}; expected NAME[:VERSION]")
        ver = ver or "latest"
        return cls(name, ver if ver == "latest" else int(ver))

    def __str__(self):
        return f"{self.pool}:{self.version}"


@dataclass(frozen=True)
class DuelSpec:
    policy_a: PolicyRef
    policy_b: PolicyRef
    task: TaskKind = TaskKind.RUN_TO_GOAL
    rounds: int = 100
    eval_mode: EvalMode = EvalMode.DETERMINISTIC
    seed: int = 0
    jitter: bool = True

    def __post_init__(self):
        if self.rounds < 1:
            raise ContractViolation("a duel needs at least one round")
        object.__setattr__(self, "task", TaskKind(self.task))
        object.__setattr__(self, "eval_mode", EvalMode(self.eval_mode))


@dataclass(frozen=True)
class WinStats:
    wins_a: int
    wins_b: int
    draws: int
    mean_length: float

    @property
    def rounds(self) -> int:
        return self.wins_a + self.wins_b + self.draws

    @property
    def win_rate_a(self) -> float:
        return self.wins_a / self.rounds

    @property
    def win_rate_b(self) -> float:
        return self.wins_b / self.rounds

    def transposed(self) -> "WinStats":
        return WinStats(self.wins_b, self.wins_a, self.draws, self.mean_length)

    def as_dict(self) -> dict:
        return {
            "wins_a": self.wins_a, "wins_b": self.wins_b, "draws": self.draws,
            "rounds": self.rounds, "win_rate_a": self.win_rate_a, "win_rate_b": self.win_rate_b,
            "mean_length": self.mean_length,
        }


@dataclass(frozen=True)
class PolicyDescriptor:
    pool: str
    version: int
    species: str
    evolvable: bool

    @property
    def label(self) -> str:
        kind = "evo" if self.evolvable else "fixed"
        return f"{self.pool}:v{self.version}({kind}-{self.species})"


def resolve(ref: PolicyRef, pools: dict):
    if ref.pool not in pools:
        raise PolicyLookupError(f"no pool named {ref.pool!r} (have: {', '.join(sorted(pools))})")
    pool = pools[ref.pool]
    entry = pool.get(ref.version)
    return pool, entry, PolicyDescriptor(ref.pool, entry.version, pool.species.name, pool.evolvable)


def _round_streams(seed: int, pair: int):
    ss = np.random.SeedSequence([seed, pair])
    arena_ss, s0, s1 = ss.spawn(3)
    return int(arena_ss.generate_state(1)[0]), (s0, s1)


def duel(spec: DuelSpec, pools: dict, physics: PhysicsParams = DEFAULT_PHYSICS,
         consts: MorphConstants = DEFAULT_CONSTANTS, trace_round: int | None = None, trace=None) -> WinStats:
    """Play ``spec.rounds`` rounds; policy A always occupies slot alpha."""
    pool_a, entry_a, _ = resolve(spec.policy_a, pools)
    pool_b, entry_b, _ = resolve(spec.policy_b, pools)
    stochastic = spec.eval_mode is EvalMode.STOCHASTIC
    wins_a = wins_b = draws = 0
    total_len = 0
    for r in range(spec.rounds):
        swap = r % 2 == 1
        arena_seed, streams = _round_streams(spec.seed, r // 2)
        hold_a, hold_b = (1, 0) if swap else (0, 1)
        rng_a = np.random.default_rng(streams[hold_a]) if stochastic else None
        rng_b = np.random.default_rng(streams[hold_b]) if stochastic else None
        actors = (
            Actor(entry_a.params, pool_a.evolvable, pool_a.morph_seed, rng_a),
            Actor(entry_b.params, pool_b.evolvable, pool_b.morph_seed, rng_b),
        )
        res, _ = play_episode(actors, spec.task, arena_seed, physics, consts,
                              jitter=spec.jitter, swap_jitter=swap,
                              trace=trace if r == trace_round else None)
        total_len += res.length
        if res.result is Result.ALPHA_WINS:
            wins_a += 1
        elif res.result is Result.BETA_WINS:
            wins_b += 1
        else:
            draws += 1
    return WinStats(wins_a, wins_b, draws, total_len / spec.rounds)


def win_rate_curve(pool_a: str, pool_b: str, pools: dict, task, stride: int, rounds: int = 100, *,
                   seed: int = 0, eval_mode=EvalMode.DETERMINISTIC, physics=DEFAULT_PHYSICS,
                   consts=DEFAULT_CONSTANTS) -> list:
    """Version ``v`` of A against version ``v`` of B for ``v = 0, stride, 2*stride, ...``."""
    if stride < 1:
        raise ContractViolation("stride must be >= 1")
    n = min(len(pools[pool_a]), len(pools[pool_b]))
    if n == 0:
        raise ContractViolation("pools must be nonempty")
    curve = []
    for v in range(0, n, stride):
        spec = DuelSpec(PolicyRef(pool_a, v), PolicyRef(pool_b, v), task, rounds, eval_mode, seed)
        curve.append((v, duel(spec, pools, physics, consts)))
    return curve


@dataclass
class CrossTable:
    labels: list
    stats: list  # stats[i][j]: row policy as A against column policy as B; None if not played
    n_duels: int = 0

    def to_tsv(self) -> str:
        lines = ["\t".join(["policy", *self.labels])]
        for label, row in zip(self.labels, self.stats):
            cells = ["-" if s is None else f"{s.wins_a}/{s.wins_b}/{s.draws}" for s in row]
            lines.append("\t".join([label, *cells]))
        return "\n".join(lines) + "\n"


def cross_table(refs, pools: dict, task, rounds: int = 100, *, seed: int = 0,
                eval_mode=EvalMode.DETERMINISTIC, physics=DEFAULT_PHYSICS, consts=DEFAULT_CONSTANTS,
                include_diagonal: bool = False) -> CrossTable:
    """All-pairs duels. Swapped orders are filled by transposition.

    With ``include_diagonal`` each policy also plays itself from a
    jitter-free mirrored start.
    """
    descs = [resolve(r, pools)[2] for r in refs]
    n = len(refs)
    stats = [[None] * n for _ in range(n)]
    played = 0
    for i, j in itertools.combinations(range(n), 2):
        s = duel(DuelSpec(refs[i], refs[j], task, rounds, eval_mode, seed), pools, physics, consts)
        stats[i][j], stats[j][i] = s, s.transposed()
        played += 1
    if include_diagonal:
        for i in range(n):
            stats[i][i] = duel(DuelSpec(refs[i], refs[i], task, rounds, EvalMode.DETERMINISTIC, seed, jitter=False),
                               pools, physics, consts)
            played += 1
    return CrossTable([d.label for d in descs], stats, played)


def stats_table(rows) -> str:
    """Delimited table of ``(label_a, label_b, WinStats)`` rows."""
    cols = ["policy_a", "policy_b", "wins_a", "wins_b", "draws", "rounds", "win_rate_a", "win_rate_b", "mean_length"]
    out = ["\t".join(cols)]
    for a, b, s in rows:
        d = s.as_dict()
        out.append("\t".join([a, b, *(str(d[c]) for c in cols[2:])]))
    return "\n".join(out) + "\n"


def curve_table(curve) -> str:
    out = ["generation\twins_a\twins_b\tdraws\twin_rate_a\twin_rate_b\tmean_length"]
    for v, s in curve:
        out.append(f"{v}\t{s.wins_a}\t{s.wins_b}\t{s.draws}\t{s.win_rate_a}\t{s.win_rate_b}\t{s.mean_length}")
    return "\n".join(out) + "\n"

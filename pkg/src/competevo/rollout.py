"""Episode execution shared by training and evaluation.

Policies always act in their own canonical frame: the player in slot beta
sees the world reflected across the y-axis and its leg commands are
remapped back. A policy therefore plays identically from either side,
which is what makes mirrored duels exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arena
from .arena import PhysicsParams, Result, TaskKind
from .errors import NumericalError
from .morphology import DEFAULT_CONSTANTS, MorphConstants, MorphVector, clamp_morph, identity_morph, mirror_morph
from .policy import PolicyParams, log_prob, morph_dist, morph_value_input, tactics_dist, value
from .ppo import Stage, Trajectory, Transition, blend_rewards


@dataclass
class Actor:
    policy: PolicyParams
    evolvable: bool
    morph_seed: np.ndarray
    rng: np.random.Generator | None = None  # None: act with distribution means

    def generate_morph(self, consts: MorphConstants):
        """Returns ``(canonical MorphVector, raw sample, log_prob)``; raw is None when fixed."""
        if not self.evolvable:
            return identity_morph(self.policy.species), None, 0.0
        d = morph_dist(self.policy, self.morph_seed)
        raw = d.mean if self.rng is None else d.sample(self.rng)
        if not np.all(np.isfinite(raw)):
            raise NumericalError(f"policy version {self.policy.version} produced a non-finite design")
        return clamp_morph(raw, self.policy.species, consts), raw, log_prob(d, raw)

    def act(self, obs: np.ndarray):
        d = tactics_dist(self.policy, obs)
        raw = d.mean if self.rng is None else d.sample(self.rng)
        if not np.all(np.isfinite(raw)):
            raise NumericalError(f"policy version {self.policy.version} produced a non-finite action")
        return raw, log_prob(d, raw)


@dataclass
class EpisodeResult:
    result: Result
    length: int
    dense_returns: tuple
    sparse_returns: tuple
    morphs: tuple  # world-frame MorphVectors

    def outcome_for(self, slot: int) -> str:
        if self.result is Result.DRAW:
            return "draw"
        won = (self.result is Result.ALPHA_WINS) == (slot == 0)
        return "win" if won else "loss"


def eval_morph(policy: PolicyParams, evolvable: bool, morph_seed, consts=DEFAULT_CONSTANTS) -> MorphVector:
    """Evaluation-mode design: the clamped morph-head mean (identity when fixed)."""
    return Actor(policy, evolvable, morph_seed).generate_morph(consts)[0]


def play_episode(
    actors,
    task: TaskKind,
    seed: int,
    physics: PhysicsParams = arena.DEFAULT_PHYSICS,
    consts: MorphConstants = DEFAULT_CONSTANTS,
    *,
    jitter: bool = True,
    swap_jitter: bool = False,
    kappa: float = 1.0,
    warmup: bool = False,
    record_slot: int | None = None,
    trace: list | None = None,
):
    """Play one two-stage episode; returns ``(EpisodeResult, Trajectory | None)``."""
    task = arena.TaskKind(task)
    traj = Trajectory() if record_slot is not None else None

    # morph-generation stage
    world_morphs = []
    for slot, actor in enumerate(actors):
        canon, raw, lp = actor.generate_morph(consts)
        world_morphs.append(canon if slot == 0 else mirror_morph(canon))
        if slot == record_slot and raw is not None:
            v = value(actor.policy, morph_value_input(actor.morph_seed))
            traj.transitions.append(Transition(Stage.MORPH, actor.morph_seed.copy(), raw, lp, 0.0, v, False))

    # arena-confrontation stage
    s = arena.reset(task, world_morphs[0], world_morphs[1], seed, physics, consts,
                    jitter=jitter, swap_jitter=swap_jitter)
    dense = [0.0, 0.0]
    sparse = [0.0, 0.0]
    while True:
        obs, raws, lps, world = [], [], [], []
        for slot, actor in enumerate(actors):
            o = arena.canonical_observe(s, slot)
            raw, lp = actor.act(o)
            obs.append(o)
            raws.append(raw)
            lps.append(lp)
            world.append(arena.canonical_to_world_action(np.clip(raw, -1.0, 1.0), slot))
        nxt, out = arena.step(s, world[0], world[1])
        for i in range(2):
            dense[i] += out.dense_rewards[i]
            sparse[i] += out.sparse_rewards[i]
        if trace is not None:
            trace.append(arena.trace_record(nxt, world[0], world[1], out))
        if traj is not None:
            i = record_slot
            if warmup:
                r = arena.warmup_reward(s, nxt, i, world[i])
            else:
                r = blend_rewards(out.dense_rewards[i], out.sparse_rewards[i], kappa)
            v = value(actors[i].policy, obs[i])
            traj.transitions.append(Transition(Stage.ARENA, obs[i], raws[i], lps[i], r, v, out.terminal))
        s = nxt
        if out.terminal:
            break
    if traj is not None:
        traj.dense_return = dense[record_slot]
        traj.sparse_return = sparse[record_slot]
    res = EpisodeResult(s.result, s.step, tuple(dense), tuple(sparse), tuple(world_morphs))
    return res, traj


def episode_seeds(seed):
    """Split one episode seed into (arena seed, learner stream, opponent stream)."""
    ss = np.random.SeedSequence(seed)
    arena_ss, a_ss, b_ss = ss.spawn(3)
    return int(arena_ss.generate_state(1)[0]), np.random.default_rng(a_ss), np.random.default_rng(b_ss)


def run_episode(
    learner: PolicyParams,
    opponent: PolicyParams,
    task,
    kappa: float,
    evolvable_flags,
    x_pair,
    seed,
    *,
    learner_slot: int = 0,
    warmup: bool = False,
    physics: PhysicsParams = arena.DEFAULT_PHYSICS,
    consts: MorphConstants = DEFAULT_CONSTANTS,
):
    """One training episode; ``evolvable_flags``/``x_pair`` are (learner, opponent)."""
    arena_seed, lrng, orng = episode_seeds(seed)
    me = Actor(learner, bool(evolvable_flags[0]), np.asarray(x_pair[0], dtype=np.float64), lrng)
    them = Actor(opponent, bool(evolvable_flags[1]), np.asarray(x_pair[1], dtype=np.float64), orng)
    actors = (me, them) if learner_slot == 0 else (them, me)
    res, traj = play_episode(actors, task, arena_seed, physics, consts,
                             kappa=kappa, warmup=warmup, record_slot=learner_slot)
    return traj, res

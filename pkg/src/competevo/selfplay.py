"""Competitive co-evolution by self-play.

Each generation trains alpha then beta. A player clears its memory, draws
``n_opponents`` versions from the other player's pool (delta-uniform),
splits its sample budget evenly across them, runs PPO on the result and
appends the new policy to its own pool. The first ``warmup_generations``
use a locomotion reward instead of the task reward.

Every random draw is derived from ``(seed, generation, player, ...)``, so a
run resumed from a checkpoint is bit-identical to one that never stopped,
and results do not depend on how episodes are spread over workers.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig, dump_config, parse_config
from .errors import CheckpointError, ContractViolation
from .morphology import initial_morph_seed, species_template
from .policy import init_policy, param_entropy, read_params, write_params
from .pool import PLAYERS, PolicyPool, SamplerConfig, sample_opponent
from .ppo import OptimizerState, RolloutBatch, anneal_factor, update
from .rollout import run_episode

log = logging.getLogger(__name__)

STATE_FORMAT = "competevo-run"


@dataclass(frozen=True)
class CurriculumConfig:
    warmup_generations: int
    termination_generation: int
    max_generations: int
    evolvable_flags: tuple

    @classmethod
    def from_run(cls, cfg: RunConfig) -> "CurriculumConfig":
        return cls(cfg.selfplay.warmup_generations, cfg.selfplay.termination_generation,
                   cfg.max_generations, tuple(cfg.evolvable))


@dataclass
class TrainRunState:
    config: RunConfig
    generation: int
    pools: dict
    optimizers: dict
    metrics: list = field(default_factory=list)
    # most recent RolloutBatch per player; not checkpointed
    last_batches: dict = field(default_factory=dict, repr=False)

    @property
    def seed(self) -> int:
        return self.config.seed


def new_run(cfg: RunConfig) -> TrainRunState:
    pools, opts = {}, {}
    ss = np.random.SeedSequence(cfg.seed)
    init_ss, x_ss = ss.spawn(2)
    init_seeds = init_ss.generate_state(2)
    x_rngs = [np.random.default_rng(c) for c in x_ss.spawn(2)]
    for i, player in enumerate(PLAYERS):
        species = species_template(cfg.species[i])
        p = init_policy(species, cfg.task, int(init_seeds[i]), cfg.policy)
        pool = PolicyPool(player, species, bool(cfg.evolvable[i]), initial_morph_seed(species, x_rngs[i]))
        pool.append(p, {"generation": 0})
        pools[player] = pool
        opts[player] = OptimizerState.zeros_like(p, cfg.ppo.lr)
    return TrainRunState(cfg, 0, pools, opts)


def _collect_slot(args):
    """Run episodes against one opponent until the slot budget is met."""
    (learner, opponent, flags, xs, cfg, kappa, warm, budget, slot_key, learner_slot) = args
    trajs, results = [], []
    n = 0
    e = 0
    while n < budget:
        seed = [*slot_key, e]
        traj, res = run_episode(
            learner, opponent, cfg.task, kappa, flags, xs, seed,
            learner_slot=learner_slot, warmup=warm, physics=cfg.physics, consts=cfg.morphology,
        )
        trajs.append(traj)
        results.append((res.outcome_for(learner_slot), traj.dense_return, traj.sparse_return, res.length))
        n += len(traj)
        e += 1
    return trajs, results


def kappa_at(cfg: RunConfig, t: int) -> float:
    if t < cfg.selfplay.warmup_generations:
        return 1.0
    return anneal_factor(t, cfg.selfplay.termination_generation)


def generation(run: TrainRunState, executor=None) -> TrainRunState:
    """One generation of alternating updates (alpha then beta)."""
    cfg = run.config
    t = run.generation
    if t >= cfg.max_generations:
        raise ContractViolation(f"run already reached max_generations={cfg.max_generations}")
    started = time.perf_counter()
    warm = t < cfg.selfplay.warmup_generations
    kappa = kappa_at(cfg, t)
    sampler = SamplerConfig(cfg.selfplay.delta, cfg.selfplay.n_opponents)
    record = {"generation": t, "kappa": kappa, "warmup": warm, "players": {}}

    for i, player in enumerate(PLAYERS):
        me, other = run.pools[player], run.pools[PLAYERS[1 - i]]
        learner = me.latest().params
        opp_rng = np.random.default_rng([cfg.seed, t, i, 0])
        opponents = [sample_opponent(other, sampler, opp_rng) for _ in range(sampler.n_opponents)]
        budget = math.ceil(cfg.batch_size / sampler.n_opponents)
        jobs = [
            (learner, opp.params, (me.evolvable, other.evolvable), (me.morph_seed, other.morph_seed),
             cfg, kappa, warm, budget, (cfg.seed, t, i, 1, s), i)
            for s, opp in enumerate(opponents)
        ]
        outputs = list(executor.map(_collect_slot, jobs)) if executor else [_collect_slot(j) for j in jobs]
        trajs = [tr for out in outputs for tr in out[0]]
        results = [r for out in outputs for r in out[1]]
        batch = RolloutBatch(trajs, generation=t + 1)
        run.last_batches[player] = batch
        new_p, run.optimizers[player], stats = update(
            learner, batch, cfg.ppo, run.optimizers[player],
            shuffle_seed=np.random.SeedSequence([cfg.seed, t, i, 2]).generate_state(1)[0],
            morph_entropy=t < cfg.selfplay.termination_generation,
        )
        outcomes = [r[0] for r in results]
        wins, losses, draws = outcomes.count("win"), outcomes.count("loss"), outcomes.count("draw")
        me.append(new_p, {"generation": t + 1, "win_rate": wins / len(outcomes)})
        record["players"][player] = {
            "opponent_versions": [o.version for o in opponents],
            "episodes": len(results),
            "transitions": batch.total_transitions,
            "mean_dense_return": float(np.mean([r[1] for r in results])),
            "mean_sparse_return": float(np.mean([r[2] for r in results])),
            "mean_length": float(np.mean([r[3] for r in results])),
            "wins": wins,
            "losses": losses,
            "draws": draws,
            "entropy": param_entropy(new_p, "tactics"),
            "morph_entropy": param_entropy(new_p, "morph"),
            "grad_norm": stats["grad_norm"],
        }
    run.generation = t + 1
    record["wall_clock"] = time.perf_counter() - started
    run.metrics.append(record)
    return run


def warmup_phase(run: TrainRunState, executor=None) -> TrainRunState:
    """Run the remaining warm-up generations."""
    if run.generation >= run.config.selfplay.warmup_generations:
        raise ContractViolation("warm-up already finished")
    while run.generation < min(run.config.selfplay.warmup_generations, run.config.max_generations):
        generation(run, executor)
    return run


def train(run: TrainRunState, until: int | None = None, out_dir=None, on_generation=None) -> TrainRunState:
    """Run generations until ``until`` (default: max_generations), checkpointing to ``out_dir``."""
    cfg = run.config
    stop = cfg.max_generations if until is None else min(until, cfg.max_generations)
    executor = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        while run.generation < stop:
            generation(run, executor)
            rec = run.metrics[-1]
            log.info("generation %d kappa=%.3f %s", rec["generation"], rec["kappa"],
                     {p: (v["wins"], v["losses"], v["draws"]) for p, v in rec["players"].items()})
            if out_dir is not None:
                append_metrics(out_dir, rec)
                every = cfg.selfplay.checkpoint_every
                if every and (run.generation % every == 0 or run.generation == stop):
                    save_checkpoint(run, out_dir)
            if on_generation:
                on_generation(run)
    finally:
        if executor:
            executor.shutdown()
    return run


# ---- checkpoints ------------------------------------------------------------------
#
# <dir>/config.yaml            config snapshot
# <dir>/state.json             generation counter, seed, species
# <dir>/pool_<player>.bin      versioned policy pool
# <dir>/optim_<player>.bin     Adam moments
# <dir>/metrics.jsonl          one record per generation

def append_metrics(out_dir, record: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.jsonl"), "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _save_optimizer(opt: OptimizerState, template, path) -> None:
    m = template.copy()
    m.arrays = opt.m
    v = template.copy()
    v.arrays = opt.v
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write((json.dumps({"step": opt.step, "lr": opt.lr}) + "\n").encode())
        write_params(fh, m)
        write_params(fh, v)
    os.replace(tmp, path)


def _load_optimizer(path) -> OptimizerState:
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            head = json.loads(line)
            step, lr = int(head["step"]), float(head["lr"])
        except (ValueError, KeyError, TypeError) as exc:
            raise CheckpointError(f"{path}: bad optimizer header at byte 0: {exc}") from None
        m = read_params(fh, path)
        v = read_params(fh, path)
    if m is None or v is None:
        raise CheckpointError(f"{path}: missing moment block")
    return OptimizerState(m[0].arrays, v[0].arrays, step, lr)


def save_checkpoint(run: TrainRunState, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.yaml"), "w") as fh:
        fh.write(dump_config(run.config))
    for player in PLAYERS:
        run.pools[player].save(os.path.join(out_dir, f"pool_{player}.bin"))
        _save_optimizer(run.optimizers[player], run.pools[player].latest().params,
                        os.path.join(out_dir, f"optim_{player}.bin"))
    state = {
        "format": STATE_FORMAT,
        "generation": run.generation,
        "seed": run.config.seed,
        "species": list(run.config.species),
        "task": run.config.task.value,
    }
    tmp = os.path.join(out_dir, "state.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(state, fh)
    os.replace(tmp, os.path.join(out_dir, "state.json"))


def load_checkpoint(path, expect: RunConfig | None = None) -> TrainRunState:
    """Restore a run; ``expect`` (if given) must agree on task and species."""
    path = os.fspath(path)
    try:
        with open(os.path.join(path, "state.json")) as fh:
            state = json.load(fh)
        with open(os.path.join(path, "config.yaml")) as fh:
            cfg = parse_config(fh.read(), os.path.join(path, "config.yaml"))
    except FileNotFoundError as exc:
        raise CheckpointError(f"incomplete checkpoint in {path}: {exc.filename} missing") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}/state.json: corrupt at byte {exc.pos}: {exc.msg}") from None
    if state.get("format") != STATE_FORMAT:
        raise CheckpointError(f"{path}/state.json: not a run state file")
    if expect is not None:
        if tuple(expect.species) != tuple(state["species"]) or expect.task.value != state["task"]:
            raise CheckpointError(
                f"checkpoint is {state['task']} {state['species']}, "
                f"config wants {expect.task.value} {list(expect.species)}"
            )
        cfg = expect
    pools, opts = {}, {}
    for i, player in enumerate(PLAYERS):
        pool = PolicyPool.load(os.path.join(path, f"pool_{player}.bin"))
        if pool.species.name != cfg.species[i]:
            raise CheckpointError(f"pool_{player}.bin holds {pool.species.name}, config says {cfg.species[i]}")
        pools[player] = pool
        opt_path = os.path.join(path, f"optim_{player}.bin")
        if not os.path.exists(opt_path):
            raise CheckpointError(f"incomplete checkpoint in {path}: {opt_path} missing")
        opts[player] = _load_optimizer(opt_path)
    gen = int(state["generation"])
    for player in PLAYERS:
        if len(pools[player]) != gen + 1:
            raise CheckpointError(f"pool_{player}.bin has {len(pools[player])} entries, expected {gen + 1}")
    return TrainRunState(cfg, gen, pools, opts)

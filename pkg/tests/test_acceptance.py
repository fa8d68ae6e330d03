"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the pytest summary.
"""
import time
from collections import Counter

import numpy as np
import pytest

from competevo import arena as A
from competevo import ppo
from competevo.arena import PhysicsParams, Result, TaskKind
from competevo.config import RunConfig, SelfPlayConfig
from competevo.morphology import (
    DEFAULT_CONSTANTS as C,
    MorphVector,
    clamp_morph,
    derive_body,
    identity_morph,
    species_template,
)
from competevo.policy import morph_dist
from competevo.pool import PolicyPool, SamplerConfig, eligible_versions, sample_opponent
from competevo.ppo import PPOConfig, Stage
from competevo.rollout import Actor, play_episode
from competevo.selfplay import generation, load_checkpoint, new_run, save_checkpoint, train
from competevo.tournament import DuelSpec, EvalMode, PolicyRef, duel

from conftest import criterion, tiny_run_config
from oracles import (
    anneal_oracle,
    discounted_returns,
    eligible_oracle,
    gradcheck_error,
    momentum_gap,
    mirror_gap,
    random_actions,
    random_small_problem,
    random_state,
)
from test_tournament import noisy_policy, pool_of


def test_criterion_01_annealed_reward_blend():
    with criterion(1, "annealing factor and reward blend exact", 1.0) as c:
        n = 0
        for T in (1, 3, 10, 999, 1000, 2000):
            ts = sorted({0, 1, T - 1, T, T + 1, 2 * T, *range(0, 3 * T, max(1, T // 25))})
            for t in ts:
                k = ppo.anneal_factor(t, T)
                assert k == anneal_oracle(t, T)
                for kappa in (0.0, 0.25, k, 0.5, 1.0):
                    for rd, rs in ((1.5, -2000.0), (-0.3, 1000.0), (0.0, -1000.0)):
                        assert ppo.blend_rewards(rd, rs, kappa) == kappa * rd + (1.0 - kappa) * rs
                        n += 1
        assert ppo.anneal_factor(0, 1000) == 1.0 and ppo.anneal_factor(1000, 1000) == 0.0
        assert ppo.anneal_factor(1500, 1000) == 0.0
        c.detail = f"{n} blend evaluations"


def test_criterion_02_encoding_conformance():
    with criterion(2, "morph encoding counts, clamp fuzz, force linearity", 5.0) as c:
        counts = {n: species_template(n).param_count for n in ("ant", "bug", "spider")}
        assert counts == {"ant": 20, "bug": 30, "spider": 40}
        rng = np.random.default_rng(0)
        names = ("ant", "bug", "spider")
        for i in range(100_000):
            sp = species_template(names[i % 3])
            raw = rng.normal(1.0, 2.0, sp.param_count) * (10.0 if i % 7 == 0 else 1.0)
            v = clamp_morph(raw, sp).values
            assert v.min() >= C.s_min and v.max() <= C.s_max
            assert np.array_equal(v, np.minimum(C.s_max, np.maximum(C.s_min, raw)))
        checked = 0
        for name in names:
            sp = species_template(name)
            for _ in range(200):
                # dyadic grid values: every product and sum below is exact in binary
                base_v = rng.integers(32, 65, sp.param_count) / 64.0
                base = derive_body(MorphVector(sp, base_v))
                leg = int(rng.integers(sp.leg_count))
                for scale in (2.0, 1.75, 1.5, 1.25, 0.75):
                    w = base_v.copy()
                    w[5 * leg + 2] *= scale
                    w[5 * leg + 4] *= scale
                    if w.min() < C.s_min:
                        continue
                    got = derive_body(MorphVector(sp, w)).leg_force
                    assert got[leg] == scale * base.leg_force[leg]
                    assert got[:leg] + got[leg + 1:] == base.leg_force[:leg] + base.leg_force[leg + 1:]
                    checked += 1
        c.detail = f"100000 clamps, {checked} linearity cases"


def test_criterion_03_gradient_correctness():
    with criterion(3, "PPO loss gradient vs central differences", 30.0) as c:
        errs = [gradcheck_error(*random_small_problem(seed), eps=1e-5) for seed in range(20)]
        assert max(errs) <= 1e-4
        c.detail = f"max relative error {max(errs):.2e} over 20 batches"


def test_criterion_04_gae_oracle():
    with criterion(4, "GAE against brute-force returns and hand case", 1.0) as c:
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(50):
            r = rng.normal(0, 10, 20)
            v = np.append(rng.normal(0, 10, 20), 0.0)
            gamma = float(rng.uniform(0.9, 1.0))
            adv, ret = ppo.compute_gae(r, v, gamma, 1.0)
            mc = discounted_returns(r, gamma)
            worst = max(worst, np.max(np.abs(ret - mc)), np.max(np.abs(adv - (mc - v[:-1]))))
        assert worst <= 1e-12
        adv, _ = ppo.compute_gae([1.0, 1.0], [0.0, 0.0, 0.0], 0.995, 0.95)
        assert np.max(np.abs(adv - [1.94525, 1.0])) <= 1e-9
        c.detail = f"max deviation {worst:.1e}"


def test_criterion_05_sampler_distribution():
    with criterion(5, "delta-uniform opponent sampling", 5.0) as c:
        sp = species_template("ant")
        pool = PolicyPool("beta", sp, False, np.ones(20))
        p = noisy_policy(0)
        for _ in range(4):
            pool.append(p)
        rng = np.random.default_rng(5)
        counts = Counter(sample_opponent(pool, SamplerConfig(1.0), rng).version for _ in range(100_000))
        freqs = [counts[v] / 100_000 for v in range(4)]
        assert all(abs(f - 0.25) <= 0.01 for f in freqs)
        assert all(sample_opponent(pool, SamplerConfig(0.0), rng).version == 3 for _ in range(1000))
        assert list(eligible_versions(10, 0.0)) == [9] == eligible_oracle(10, 0.0)
        assert list(eligible_versions(10, 0.5)) == [5, 6, 7, 8, 9] == eligible_oracle(10, 0.5)
        assert list(eligible_versions(10, 1.0)) == list(range(10)) == eligible_oracle(10, 1.0)
        c.detail = "frequencies " + ", ".join(f"{f:.4f}" for f in freqs)


def test_criterion_06_physics_invariants():
    with criterion(6, "physics determinism, mirror, momentum, terminal payoffs", 30.0) as c:
        rng = np.random.default_rng(6)
        pairs = [("ant", "ant"), ("bug", "spider"), ("spider", "ant")]
        worst_mirror = worst_momentum = 0.0
        for i in range(10_000):
            s = random_state(rng, species=tuple(species_template(n) for n in pairs[i % 3]))
            a, b = random_actions(rng, s)
            assert A.step(s, a, b) == A.step(s, a, b)
            worst_mirror = max(worst_mirror, mirror_gap(s, a, b))
            worst_momentum = max(worst_momentum, momentum_gap(s, a, b))
        assert worst_mirror <= 1e-9 and worst_momentum <= 1e-9

        ident = identity_morph(species_template("ant"))
        zero = np.zeros(4)

        def placed(task, pa, pb, va=(0.0, 0.0), vb=(0.0, 0.0), step=0):
            s = A.reset(task, ident, ident, 0, jitter=False)
            kin = (A.AgentKinematics(pa, va), A.AgentKinematics(pb, vb))
            return A.ArenaState(s.task, step, kin, s.bodies, s.morphs, 0, s.params)

        cases = [
            (placed("sumo", (-3.2, 0.0), (1.0, 0.0)), Result.BETA_WINS, (-2000.0, 2000.0)),
            (placed("sumo", (-1.0, 0.0), (3.2, 0.0)), Result.ALPHA_WINS, (2000.0, -2000.0)),
            (placed("sumo", (-0.36, 0), (0.36, 0), (5.0, 0), (-5.0, 0)), Result.DRAW, (-1000.0, -1000.0)),
            (placed("sumo", (-1.0, 0), (1.0, 0), step=499), Result.DRAW, (-1000.0, -1000.0)),
            (placed("run_to_goal", (4.99, 0), (2.0, 2.0), (1.0, 0)), Result.ALPHA_WINS, (1000.0, -1000.0)),
            (placed("run_to_goal", (-2.0, 2.0), (-4.99, 0), (0, 0), (-1.0, 0)), Result.BETA_WINS,
             (-1000.0, 1000.0)),
            (placed("run_to_goal", (-1.0, 0), (1.0, 0), step=499), Result.DRAW, (0.0, 0.0)),
        ]
        for s, result, payoff in cases:
            _, out = A.step(s, zero, zero)
            assert out.terminal and out.result is result and out.sparse_rewards == payoff

        # knockout decides a sumo bout even inside the ring
        weak, strong = MorphVector(ident.species, np.full(20, 0.5)), MorphVector(ident.species, np.full(20, 2.0))
        s = A.reset("sumo", weak, strong, 0, jitter=False)
        b0, b1 = s.bodies
        mu = 1.0 / (1.0 / b0.total_mass + 1.0 / b1.total_mass)
        closing = 0.5 * (b0.stability + b1.stability) / mu / (1 - 0.8 * 0.05)
        r = (b0.contact_radius + b1.contact_radius) / 2 - 0.01
        kin = (A.AgentKinematics((-r, 0.0), (closing / 2, 0.0)), A.AgentKinematics((r, 0.0), (-closing / 2, 0.0)))
        _, out = A.step(A.ArenaState(s.task, 0, kin, s.bodies, s.morphs, 0, s.params), zero, zero)
        assert out.result is Result.BETA_WINS and out.sparse_rewards == (-2000.0, 2000.0)
        c.detail = f"10000 steps, mirror gap {worst_mirror:.1e}, momentum gap {worst_momentum:.1e}"


def _pool_bits(run):
    return {k: [e.params.flat().tobytes() for e in pool.entries] for k, pool in run.pools.items()}


def test_criterion_07_alternating_update_structure(tmp_path):
    with criterion(7, "pool growth, morph transitions, bit-exact resume", 120.0) as c:
        cfg = tiny_run_config(evolvable=(True, False))
        seen = {"alpha": 0, "beta": 0}

        def inspect(run):
            for tr in run.last_batches["alpha"].trajectories:
                tr.validate()
                assert tr.transitions[0].stage is Stage.MORPH and tr.transitions[0].reward == 0.0
                assert sum(t.stage is Stage.MORPH for t in tr.transitions) == 1
                seen["alpha"] += 1
            for tr in run.last_batches["beta"].trajectories:
                tr.validate()
                assert all(t.stage is Stage.ARENA for t in tr.transitions)
                seen["beta"] += 1

        straight = train(new_run(cfg), until=10, on_generation=inspect)
        assert all(len(straight.pools[p]) == 11 for p in ("alpha", "beta"))
        half = train(new_run(cfg), until=5)
        save_checkpoint(half, tmp_path)
        resumed = train(load_checkpoint(tmp_path), until=10)
        assert _pool_bits(resumed) == _pool_bits(straight)
        c.detail = f"{seen['alpha']} evolvable and {seen['beta']} fixed trajectories checked"


@pytest.fixture(scope="module")
def smoke_run():
    cfg = RunConfig(
        task="run_to_goal", species=("ant", "ant"), evolvable=(False, False), seed=0,
        ppo=PPOConfig(batch_size=2000),
        selfplay=SelfPlayConfig(warmup_generations=10, max_generations=40),
    )
    t0 = time.perf_counter()
    run = new_run(cfg)
    while run.generation < 40:
        generation(run)
    return run, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_08_training_smoke(smoke_run):
    run, spent = smoke_run
    with criterion(8, "trained tactics beat frozen version 0 (run_to_goal)", 600.0, spent) as c:
        pools = dict(run.pools)
        a = duel(DuelSpec(PolicyRef("alpha"), PolicyRef("beta", 0), "run_to_goal", 100), pools)
        b = duel(DuelSpec(PolicyRef("beta"), PolicyRef("alpha", 0), "run_to_goal", 100), pools)
        assert a.win_rate_a >= 0.8 and b.win_rate_a >= 0.8
        c.detail = f"alpha win rate {a.win_rate_a:.2f}, beta win rate {b.win_rate_a:.2f}"


@pytest.mark.slow
def test_warmup_reaches_forward_speed(smoke_run):
    run, _ = smoke_run
    for i, player in enumerate(("alpha", "beta")):
        other = ("beta", "alpha")[i]
        me = Actor(run.pools[player].get(10).params, False, run.pools[player].morph_seed)
        opp = Actor(run.pools[other].get(0).params, False, run.pools[other].morph_seed)
        trace = []
        play_episode((me, opp) if i == 0 else (opp, me), "run_to_goal", 0, jitter=False, trace=trace)
        vx = np.array([float(line.split("\t")[5 + 2 * i]) for line in trace])
        assert (vx.mean() if i == 0 else -vx.mean()) >= 0.5


@pytest.mark.slow
def test_criterion_09_morph_evolution_direction():
    with criterion(9, "tug microtask drives girth upward", 300.0) as c:
        cfg = RunConfig(
            task="tug", species=("ant", "ant"), evolvable=(True, True), seed=0,
            ppo=PPOConfig(batch_size=2000), physics=PhysicsParams(episode_len=20),
            selfplay=SelfPlayConfig(warmup_generations=0, max_generations=20),
        )
        run = new_run(cfg)
        while run.generation < 20:
            generation(run)
        girths = {}
        for player, pool in run.pools.items():
            mean = morph_dist(pool.latest().params, pool.morph_seed).mean.reshape(-1, 5)
            girths[player] = float(np.clip(mean[:, [2, 4]], C.s_min, C.s_max).mean())
            start = morph_dist(pool.get(0).params, pool.morph_seed).mean.reshape(-1, 5)[:, [2, 4]].mean()
            assert abs(start - 1.0) < 0.1
        assert all(g >= 1.15 for g in girths.values())
        c.detail = ", ".join(f"{k} mean girth {v:.3f}" for k, v in girths.items())


def test_criterion_10_evaluation_symmetry():
    with criterion(10, "self-duel draws and mirrored side alternation", 30.0) as c:
        details = []
        for task in (TaskKind.SUMO, TaskKind.RUN_TO_GOAL):
            pools = {
                "evo": pool_of("evo", [noisy_policy(21, task=task)], evolvable=True),
                "bug": pool_of("bug", [noisy_policy(22, "bug", task)], species="bug"),
            }
            self_duel = duel(DuelSpec(PolicyRef("evo"), PolicyRef("evo"), task, 100, jitter=False), pools)
            assert self_duel.draws == 100
            for mode in EvalMode:
                ab = duel(DuelSpec(PolicyRef("evo"), PolicyRef("bug"), task, 30, mode, seed=3), pools)
                ba = duel(DuelSpec(PolicyRef("bug"), PolicyRef("evo"), task, 30, mode, seed=3), pools)
                assert (ab.wins_a, ab.wins_b, ab.draws) == (ba.wins_b, ba.wins_a, ba.draws)
                assert ab.mean_length == ba.mean_length
                details.append(f"{task.value}/{mode.value} {ab.wins_a}-{ab.wins_b}-{ab.draws}")
        c.detail = "; ".join(details)



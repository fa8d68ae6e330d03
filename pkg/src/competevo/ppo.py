"""PPO with GAE, reward annealing and Adam, for one player's policy."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractViolation, DimensionError, NumericalError
from .policy import (
    PolicyParams,
    gaussian_entropy_t,
    gaussian_log_prob_t,
    global_norm,
    mlp_t,
    morph_value_input,
    value_and_grad,
)


@dataclass(frozen=True)
class PPOConfig:
    lr: float = 0.0005
    clip: float = 0.2
    gamma: float = 0.995
    lam: float = 0.95
    batch_size: int = 50000
    minibatch_size: int = 2000
    update_epochs: int = 5
    vf_coeff: float = 0.5
    ent_coeff: float = 0.01
    max_grad_norm: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ConfigError("gamma and lam must lie in (0, 1]")
        if self.lr <= 0 or self.clip <= 0 or self.max_grad_norm <= 0:
            raise ConfigError("lr, clip and max_grad_norm must be positive")
        if self.batch_size < 1 or self.minibatch_size < 1 or self.update_epochs < 1:
            raise ConfigError("batch_size, minibatch_size and update_epochs must be >= 1")


def anneal_factor(t: float, termination: float) -> float:
    """Dense-reward weight ``max((T - t) / T, 0)`` at generation ``t``."""
    if termination <= 0:
        raise ConfigError(f"termination generation must be positive, got {termination}")
    return max((termination - t) / termination, 0.0)


def blend_rewards(r_dense: float, r_sparse: float, kappa: float) -> float:
    if not 0.0 <= kappa <= 1.0:
        raise ContractViolation(f"kappa must lie in [0, 1], got {kappa}")
    return kappa * r_dense + (1.0 - kappa) * r_sparse


def compute_gae(rewards, values, gamma: float, lam: float):
    """Advantages and returns for one trajectory.

    ``values`` has one more entry than ``rewards``; the last is the bootstrap
    value (0 after a terminal step).
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if v.shape[0] != r.shape[0] + 1:
        raise DimensionError(f"need len(values) == len(rewards) + 1, got {v.shape[0]} and {r.shape[0]}")
    adv = np.zeros_like(r)
    acc = 0.0
    for t in range(r.shape[0] - 1, -1, -1):
        delta = r[t] + gamma * v[t + 1] - v[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv, adv + v[:-1]


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size < 2:
        return adv - adv.mean()
    centred = adv - adv.mean()
    std = centred.std()
    return centred / std if std > 0 else centred


class Stage(str, enum.Enum):
    MORPH = "morph_generation"
    ARENA = "arena_confrontation"


class Transition(NamedTuple):
    stage: Stage
    observation: np.ndarray  # morph seed x for the morph stage
    action: np.ndarray  # pre-clamp sample
    log_prob_behavior: float
    reward: float
    value_estimate: float
    done: bool


@dataclass
class Trajectory:
    transitions: list = field(default_factory=list)
    dense_return: float = 0.0
    sparse_return: float = 0.0

    def __len__(self):
        return len(self.transitions)

    def validate(self):
        tr = self.transitions
        if not tr or not tr[-1].done or any(t.done for t in tr[:-1]):
            raise ContractViolation("a trajectory needs exactly one terminal transition, at the end")
        if any(t.stage is Stage.MORPH for t in tr[1:]):
            raise ContractViolation("morph transition must come first")
        if tr[0].stage is Stage.MORPH and tr[0].reward != 0.0:
            raise ContractViolation("morph transition must carry zero reward")


@dataclass
class RolloutBatch:
    trajectories: list
    generation: int = 0

    @property
    def total_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)


@dataclass
class Samples:
    """Flattened batch. Morph rows first, then arena rows."""

    morph_x: np.ndarray
    morph_a: np.ndarray
    arena_obs: np.ndarray
    arena_a: np.ndarray
    value_in: np.ndarray
    logp: np.ndarray
    adv: np.ndarray
    ret: np.ndarray

    @property
    def n_morph(self):
        return self.morph_x.shape[0]

    def __len__(self):
        return self.logp.shape[0]

    def take(self, idx: np.ndarray) -> "Samples":
        idx = np.sort(idx)
        k = self.n_morph
        mi, ai = idx[idx < k], idx[idx >= k] - k
        return Samples(
            self.morph_x[mi], self.morph_a[mi], self.arena_obs[ai], self.arena_a[ai],
            self.value_in[idx], self.logp[idx], self.adv[idx], self.ret[idx],
        )


def flatten_batch(batch: RolloutBatch, p: PolicyParams, gamma: float, lam: float, normalize=True) -> Samples:
    morph, arena = [], []
    for traj in batch.trajectories:
        trs = traj.transitions
        adv, ret = compute_gae(
            [t.reward for t in trs], [t.value_estimate for t in trs] + [0.0], gamma, lam
        )
        for t, a, r in zip(trs, adv, ret):
            (morph if t.stage is Stage.MORPH else arena).append((t, a, r))
    rows = morph + arena
    if not rows:
        raise ContractViolation("empty rollout batch")
    pc = p.archs["morph"].input_dim
    obs_dim = p.archs["tactics"].input_dim
    legs = p.archs["tactics"].output_dim
    morph_x = np.array([t.observation for t, _, _ in morph]).reshape(-1, pc)
    arena_obs = np.array([t.observation for t, _, _ in arena]).reshape(-1, obs_dim)
    adv = np.array([a for _, a, _ in rows])
    return Samples(
        morph_x=morph_x,
        morph_a=np.array([t.action for t, _, _ in morph]).reshape(-1, pc),
        arena_obs=arena_obs,
        arena_a=np.array([t.action for t, _, _ in arena]).reshape(-1, legs),
        value_in=np.concatenate([morph_value_input(morph_x), arena_obs], axis=0),
        logp=np.array([t.log_prob_behavior for t, _, _ in rows]),
        adv=normalize_advantages(adv) if normalize else adv,
        ret=np.array([r for _, _, r in rows]),
    )


def ppo_loss(t: dict, p: PolicyParams, mb: Samples, clip: float, vf_coeff: float, ent_coeff: float,
             morph_entropy: bool = True):
    """Clipped-surrogate loss as an autodiff scalar, plus diagnostics."""
    n = len(mb)
    k = mb.n_morph
    surr_terms = []
    logps = []
    for rows, head, x, a in (
        (slice(0, k), "morph", mb.morph_x, mb.morph_a),
        (slice(k, n), "tactics", mb.arena_obs, mb.arena_a),
    ):
        if x.shape[0] == 0:
            continue
        mean = mlp_t(t, p, head, x)
        lp = gaussian_log_prob_t(mean, t[f"{head}/log_std"], a)
        ratio = ad.exp(ad.sub(lp, mb.logp[rows]))
        if not np.all(np.isfinite(ratio.data)):
            raise NumericalError(f"non-finite PPO ratio in {head} head")
        adv = mb.adv[rows]
        unclipped = ad.mul(ratio, adv)
        clipped = ad.mul(ad.clip(ratio, 1.0 - clip, 1.0 + clip), adv)
        surr_terms.append(ad.sum(ad.minimum(unclipped, clipped)))
        logps.append(lp.data)
    surrogate = surr_terms[0] if len(surr_terms) == 1 else ad.add(surr_terms[0], surr_terms[1])
    policy_loss = ad.mul(surrogate, -1.0 / n)

    v = mlp_t(t, p, "value", mb.value_in)
    v_err = ad.sub(ad.sum(v, axis=-1), mb.ret)
    value_loss = ad.mean(ad.square(v_err))

    ent = ad.mul(gaussian_entropy_t(t["tactics/log_std"]), (n - k) / n)
    if morph_entropy and k:
        ent = ad.add(ent, ad.mul(gaussian_entropy_t(t["morph/log_std"]), k / n))

    loss = ad.add(ad.add(policy_loss, ad.mul(value_loss, vf_coeff)), ad.mul(ent, -ent_coeff))
    new_logp = np.concatenate(logps) if logps else np.zeros(0)
    info = {
        "policy_loss": float(policy_loss.data),
        "value_loss": float(value_loss.data),
        "entropy": float(ent.data),
        "ratio": np.exp(new_logp - mb.logp),
    }
    return loss, info


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 0.0005

    @classmethod
    def zeros_like(cls, p: PolicyParams, lr: float) -> "OptimizerState":
        return cls({k: np.zeros_like(a) for k, a in p.arrays.items()},
                   {k: np.zeros_like(a) for k, a in p.arrays.items()}, 0, lr)

    def copy(self) -> "OptimizerState":
        return OptimizerState({k: a.copy() for k, a in self.m.items()},
                              {k: a.copy() for k, a in self.v.items()}, self.step, self.lr)


def adam_step(opt: OptimizerState, p: PolicyParams, g: dict, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam; returns fresh ``(OptimizerState, PolicyParams)``."""
    if set(g) != set(p.arrays):
        raise DimensionError("gradient keys do not match parameters")
    for k, gk in g.items():
        if gk.shape != p.arrays[k].shape:
            raise DimensionError(f"gradient shape mismatch for {k}")
        if not np.all(np.isfinite(gk)):
            raise NumericalError(f"non-finite gradient for {k}")
    new_opt = opt.copy()
    new_p = p.copy()
    new_opt.step = opt.step + 1
    bc1 = 1.0 - beta1 ** new_opt.step
    bc2 = 1.0 - beta2 ** new_opt.step
    for k, gk in g.items():
        m = beta1 * opt.m[k] + (1.0 - beta1) * gk
        v = beta2 * opt.v[k] + (1.0 - beta2) * gk * gk
        new_opt.m[k], new_opt.v[k] = m, v
        new_p.arrays[k] = p.arrays[k] - opt.lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    lo, hi = p.log_std_bounds
    for k in ("morph/log_std", "tactics/log_std"):
        np.clip(new_p.arrays[k], lo, hi, out=new_p.arrays[k])
    return new_opt, new_p


def clip_grad_norm(g: dict, max_norm: float):
    norm = global_norm(g)
    if norm > max_norm:
        scale = max_norm / norm
        g = {k: v * scale for k, v in g.items()}
    return g, norm


def update(p: PolicyParams, batch: RolloutBatch, cfg: PPOConfig, opt: OptimizerState | None = None,
           *, shuffle_seed: int = 0, morph_entropy: bool = True):
    """Several epochs of minibatch PPO over ``batch``.

    Returns ``(new_params, new_optimizer_state, stats)``; the new params carry
    ``version = batch.generation``.
    """
    if not batch.trajectories or batch.total_transitions == 0:
        raise ContractViolation("empty rollout batch")
    if opt is None:
        opt = OptimizerState.zeros_like(p, cfg.lr)
    samples = flatten_batch(batch, p, cfg.gamma, cfg.lam)
    rng = np.random.default_rng(shuffle_seed)
    n = len(samples)
    n_chunks = max(1, math.ceil(n / cfg.minibatch_size))
    norms, infos = [], []
    for _ in range(cfg.update_epochs):
        for idx in np.array_split(rng.permutation(n), n_chunks):
            mb = samples.take(idx)
            (loss, info), g = value_and_grad(
                p, lambda t: ppo_loss(t, p, mb, cfg.clip, cfg.vf_coeff, cfg.ent_coeff, morph_entropy)
            )
            g, norm = clip_grad_norm(g, cfg.max_grad_norm)
            opt, p = adam_step(opt, p, g, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            norms.append(norm)
            infos.append(info)
    p.version = batch.generation
    stats = {
        "grad_norm": float(np.mean(norms)),
        "policy_loss": float(np.mean([i["policy_loss"] for i in infos])),
        "value_loss": float(np.mean([i["value_loss"] for i in infos])),
        "n_samples": n,
    }
    return p, opt, stats

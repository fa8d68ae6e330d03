"""Deterministic 2D disc arena for the two-player contact tasks.

Agents are orientation-free discs. Leg ``k`` of an ``n``-legged agent pushes
along the fixed world direction at angle ``2*pi*k/n``; a command in [-1, 1]
scales that leg's maximum force. Contacts are perfectly inelastic impulses
along the centre line, followed by positional de-penetration.

Every expression in :func:`step` is written so that reflecting the world
across the y-axis and swapping the players gives a bit-identical mirrored
result. Per-leg sums use :func:`math.fsum`, which is order independent.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .errors import ContractViolation, DimensionError, InvalidMorphError, InvalidValueError
from .morphology import (
    DEFAULT_CONSTANTS,
    BodyProperties,
    MorphConstants,
    MorphVector,
    derive_body,
    leg_mirror_permutation,
    mirror_morph,
)


class TaskKind(str, enum.Enum):
    RUN_TO_GOAL = "run_to_goal"
    SUMO = "sumo"
    # monotone-reward microtask: reward grows with leg force, ends on time limit only
    TUG = "tug"


class Result(str, enum.Enum):
    ONGOING = "ongoing"
    ALPHA_WINS = "alpha_wins"
    BETA_WINS = "beta_wins"
    DRAW = "draw"

    def swapped(self) -> "Result":
        if self is Result.ALPHA_WINS:
            return Result.BETA_WINS
        if self is Result.BETA_WINS:
            return Result.ALPHA_WINS
        return self


@dataclass(frozen=True)
class PhysicsParams:
    dt: float = 0.05
    episode_len: int = 500
    friction: float = 0.8
    stun_steps: int = 20
    jitter: float = 0.05
    goal_x: float = 5.0
    dohyo_r: float = 3.0
    run_start_x: float = 3.0
    sumo_start_x: float = 1.5
    w_prog: float = 1.0
    w_push: float = 1.0
    w_center: float = 0.5
    w_approach: float = 0.5

    def __post_init__(self):
        for name in ("dt", "friction", "goal_x", "dohyo_r", "run_start_x", "sumo_start_x"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidValueError(f"physics.{name} must be positive, got {v}")
        if self.episode_len < 1 or self.stun_steps < 0 or self.jitter < 0:
            raise InvalidValueError("episode_len >= 1, stun_steps >= 0 and jitter >= 0 required")
        if self.run_start_x >= self.goal_x or self.sumo_start_x >= self.dohyo_r:
            raise InvalidValueError("start positions must lie inside the playing area")


DEFAULT_PHYSICS = PhysicsParams()

SPARSE_REWARDS = {
    TaskKind.RUN_TO_GOAL: {"win": 1000.0, "lose": -1000.0, "draw": 0.0},
    TaskKind.TUG: {"win": 1000.0, "lose": -1000.0, "draw": 0.0},
    TaskKind.SUMO: {"win": 2000.0, "lose": -2000.0, "draw": -1000.0},
}

OBS_BASE_DIM = 12


@dataclass(frozen=True)
class AgentKinematics:
    position: tuple
    velocity: tuple
    stunned_until: int = 0
    fallen: bool = False


@dataclass(frozen=True)
class ArenaState:
    task: TaskKind
    step: int
    agents: tuple
    bodies: tuple
    morphs: tuple
    rng_state: int
    params: PhysicsParams = DEFAULT_PHYSICS
    result: Result = Result.ONGOING

    @property
    def terminal(self) -> bool:
        return self.result is not Result.ONGOING


@dataclass(frozen=True)
class StepOutcome:
    dense_rewards: tuple
    sparse_rewards: tuple
    terminal: bool
    result: Result


@lru_cache(maxsize=None)
def leg_directions(leg_count: int) -> tuple:
    """Unit thrust directions, built so mirrored legs have exactly negated x."""
    perm = leg_mirror_permutation(leg_count)
    dirs = [None] * leg_count
    for k in range(leg_count):
        j = int(perm[k])
        if dirs[k] is not None:
            continue
        ang = 2.0 * math.pi * k / leg_count
        x, y = math.cos(ang), math.sin(ang)
        x = 0.0 if abs(x) < 1e-12 else x
        y = 0.0 if abs(y) < 1e-12 else y
        if j == k:
            dirs[k] = (0.0, y)
        else:
            dirs[k] = (x, y)
            dirs[j] = (-x, y)
    return tuple(dirs)


def reset(
    task: TaskKind,
    morph_a: MorphVector,
    morph_b: MorphVector,
    seed: int,
    params: PhysicsParams = DEFAULT_PHYSICS,
    consts: MorphConstants = DEFAULT_CONSTANTS,
    *,
    jitter: bool = True,
    swap_jitter: bool = False,
) -> ArenaState:
    """Build the start state.

    Jitter offsets are drawn in each agent's own (mirrored) frame, so
    ``swap_jitter=True`` produces the mirror image of the unswapped start
    with players exchanged.
    """
    task = TaskKind(task)
    for m in (morph_a, morph_b):
        if not isinstance(m, MorphVector):
            raise InvalidMorphError(f"expected MorphVector, got {type(m).__name__}")
    bodies = (derive_body(morph_a, consts), derive_body(morph_b, consts))
    x0 = params.sumo_start_x if task is TaskKind.SUMO else params.run_start_x
    if jitter and params.jitter > 0:
        j = np.random.default_rng(seed).uniform(-params.jitter, params.jitter, size=(2, 2)).tolist()
    else:
        j = [[0.0, 0.0], [0.0, 0.0]]
    if swap_jitter:
        j = j[::-1]
    pa = (-x0 + j[0][0], j[0][1])
    pb = (-(-x0 + j[1][0]), j[1][1])
    agents = (AgentKinematics(pa, (0.0, 0.0)), AgentKinematics(pb, (0.0, 0.0)))
    return ArenaState(task, 0, agents, bodies, (morph_a, morph_b), int(seed), params)


def _check_action(a, body: BodyProperties) -> list:
    arr = np.asarray(a, dtype=np.float64).reshape(-1)
    if arr.shape[0] != body.species.leg_count:
        raise DimensionError(
            f"{body.species.name} takes {body.species.leg_count} leg commands, got {arr.shape[0]}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidValueError("non-finite action")
    return np.clip(arr, -1.0, 1.0).tolist()


def thrust(action: list, body: BodyProperties) -> tuple:
    dirs = leg_directions(len(action))
    fx = math.fsum(a * f * d[0] for a, f, d in zip(action, body.leg_force, dirs))
    fy = math.fsum(a * f * d[1] for a, f, d in zip(action, body.leg_force, dirs))
    return fx, fy


def energy_cost(action, body: BodyProperties, dt: float) -> float:
    return body.energy_coeff * math.fsum(abs(a) * f for a, f in zip(action, body.leg_force)) * dt


def dense_reward(task, before: ArenaState, after: ArenaState, player: int, action) -> float:
    task = TaskKind(task)
    body = before.bodies[player]
    act = _check_action(action, body)
    p = before.params
    if task is TaskKind.TUG:
        return math.fsum(f * abs(a) for a, f in zip(act, body.leg_force))
    energy = energy_cost(act, body, p.dt)
    own0, own1 = before.agents[player].position, after.agents[player].position
    if task is TaskKind.RUN_TO_GOAL:
        progress = own1[0] - own0[0] if player == 0 else own0[0] - own1[0]
        return p.w_prog * progress - energy
    opp0, opp1 = before.agents[1 - player].position, after.agents[1 - player].position
    push = math.hypot(*opp1) - math.hypot(*opp0)
    centre = math.hypot(*own1) - math.hypot(*own0)
    gap0 = math.hypot(opp0[0] - own0[0], opp0[1] - own0[1])
    gap1 = math.hypot(opp1[0] - own1[0], opp1[1] - own1[1])
    return p.w_push * push - p.w_center * centre + p.w_approach * (gap0 - gap1) - energy


def warmup_reward(before: ArenaState, after: ArenaState, player: int, action) -> float:
    """Locomotion shaping: speed toward the opponent's side minus energy."""
    body = before.bodies[player]
    act = _check_action(action, body)
    vx = after.agents[player].velocity[0]
    forward = vx if player == 0 else -vx
    p = before.params
    return p.w_prog * forward * p.dt - energy_cost(act, body, p.dt)


def _sparse(task: TaskKind, result: Result) -> tuple:
    table = SPARSE_REWARDS[task]
    if result is Result.ONGOING:
        return (0.0, 0.0)
    if result is Result.DRAW:
        return (table["draw"], table["draw"])
    if result is Result.ALPHA_WINS:
        return (table["win"], table["lose"])
    return (table["lose"], table["win"])


def step(s: ArenaState, a_alpha, a_beta) -> tuple:
    """Advance one timestep; returns ``(next_state, StepOutcome)``."""
    if s.terminal:
        raise ContractViolation(f"cannot step a terminal state (result={s.result.value})")
    p = s.params
    dt = p.dt
    acts = (_check_action(a_alpha, s.bodies[0]), _check_action(a_beta, s.bodies[1]))

    pos, vel, ext = [], [], []
    for ag, body, act in zip(s.agents, s.bodies, acts):
        m = body.total_mass
        if s.step < ag.stunned_until:
            tx, ty = 0.0, 0.0
        else:
            tx, ty = thrust(act, body)
        fx = p.friction * m * ag.velocity[0]
        fy = p.friction * m * ag.velocity[1]
        vx = ag.velocity[0] + (tx - fx) / m * dt
        vy = ag.velocity[1] + (ty - fy) / m * dt
        ext.append((tx - fx, ty - fy))
        vel.append([vx, vy])
        pos.append([ag.position[0] + vx * dt, ag.position[1] + vy * dt])

    impulse = _resolve_contact(pos, vel, s.bodies)

    new_step = s.step + 1
    agents = []
    for i, (ag, body) in enumerate(zip(s.agents, s.bodies)):
        stunned_until, fallen = ag.stunned_until, ag.fallen
        if stunned_until and new_step >= stunned_until:
            stunned_until, fallen = 0, False
        if impulse > body.stability:
            fallen = True
            if s.task is not TaskKind.SUMO:
                stunned_until = new_step + p.stun_steps
        agents.append(AgentKinematics(tuple(pos[i]), tuple(vel[i]), stunned_until, fallen))

    result = _judge(s.task, agents, p, new_step)
    nxt = replace(s, step=new_step, agents=tuple(agents), result=result)
    dense = (
        dense_reward(s.task, s, nxt, 0, acts[0]),
        dense_reward(s.task, s, nxt, 1, acts[1]),
    )
    return nxt, StepOutcome(dense, _sparse(s.task, result), result is not Result.ONGOING, result)


def _resolve_contact(pos, vel, bodies) -> float:
    """Inelastic disc contact; mutates pos/vel in place, returns impulse magnitude."""
    pa, pb = pos
    va, vb = vel
    dx, dy = pb[0] - pa[0], pb[1] - pa[1]
    dist = math.hypot(dx, dy)
    rsum = bodies[0].contact_radius + bodies[1].contact_radius
    if dist >= rsum:
        return 0.0
    if dist > 0.0:
        nx, ny = dx / dist, dy / dist
    else:
        nx, ny = 1.0, 0.0
    ima, imb = 1.0 / bodies[0].total_mass, 1.0 / bodies[1].total_mass
    vn = (vb[0] - va[0]) * nx + (vb[1] - va[1]) * ny
    j = 0.0
    if vn < 0.0:
        j = -vn / (ima + imb)
        va[0] = va[0] - j * ima * nx
        va[1] = va[1] - j * ima * ny
        vb[0] = vb[0] + j * imb * nx
        vb[1] = vb[1] + j * imb * ny
    pen = rsum - dist
    ca = pen * ima / (ima + imb)
    cb = pen * imb / (ima + imb)
    pa[0] = pa[0] - nx * ca
    pa[1] = pa[1] - ny * ca
    pb[0] = pb[0] + nx * cb
    pb[1] = pb[1] + ny * cb
    return j


def _judge(task: TaskKind, agents, p: PhysicsParams, new_step: int) -> Result:
    if task is TaskKind.RUN_TO_GOAL:
        a_in = agents[0].position[0] >= p.goal_x
        b_in = agents[1].position[0] <= -p.goal_x
        if a_in and b_in:
            return Result.DRAW
        if a_in:
            return Result.ALPHA_WINS
        if b_in:
            return Result.BETA_WINS
    elif task is TaskKind.SUMO:
        a_out = math.hypot(*agents[0].position) > p.dohyo_r or agents[0].fallen
        b_out = math.hypot(*agents[1].position) > p.dohyo_r or agents[1].fallen
        if a_out and b_out:
            return Result.DRAW
        if a_out:
            return Result.BETA_WINS
        if b_out:
            return Result.ALPHA_WINS
    if new_step >= p.episode_len:
        return Result.DRAW
    return Result.ONGOING


def observation_dim(param_count: int) -> int:
    return OBS_BASE_DIM + param_count


def observe(s: ArenaState, player: int) -> np.ndarray:
    """World-frame observation for ``player``.

    Layout: own position (2), own velocity (2), stun flag, remaining-time
    fraction, geometry feature, opponent relative position (2), opponent
    relative velocity (2), opponent contact radius, own morph encoding.
    """
    me, opp = s.agents[player], s.agents[1 - player]
    p = s.params
    if s.task is TaskKind.SUMO:
        geom = math.hypot(*me.position)
    elif player == 0:
        geom = p.goal_x - me.position[0]
    else:
        geom = me.position[0] + p.goal_x
    head = [
        me.position[0], me.position[1],
        me.velocity[0], me.velocity[1],
        1.0 if s.step < me.stunned_until else 0.0,
        (p.episode_len - s.step) / p.episode_len,
        geom,
        opp.position[0] - me.position[0], opp.position[1] - me.position[1],
        opp.velocity[0] - me.velocity[0], opp.velocity[1] - me.velocity[1],
        s.bodies[1 - player].contact_radius,
    ]
    return np.concatenate([np.array(head), s.morphs[player].values])


_MIRROR_X_SLOTS = np.array([0, 2, 7, 9])


def canonical_observe(s: ArenaState, player: int) -> np.ndarray:
    """Observation in the player's canonical frame (as if it were alpha).

    Equal, bit for bit, to ``observe(mirror(s), 0)`` for ``player == 1``.
    """
    obs = observe(s, player)
    if player == 0:
        return obs
    obs[_MIRROR_X_SLOTS] = -obs[_MIRROR_X_SLOTS]
    obs[OBS_BASE_DIM:] = mirror_morph(s.morphs[1]).values
    return obs


def canonical_to_world_action(action, player: int) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64)
    if player == 0:
        return a
    return a[leg_mirror_permutation(a.shape[0])]


def _mirror_kin(ag: AgentKinematics) -> AgentKinematics:
    return AgentKinematics(
        (-ag.position[0], ag.position[1]),
        (-ag.velocity[0], ag.velocity[1]),
        ag.stunned_until,
        ag.fallen,
    )


def _mirror_body(b: BodyProperties) -> BodyProperties:
    perm = leg_mirror_permutation(b.species.leg_count)
    inv = np.argsort(perm)

    def permute(t):
        return tuple(t[int(i)] for i in inv)

    return replace(b, leg_force=permute(b.leg_force), leg_mass=permute(b.leg_mass), leg_reach=permute(b.leg_reach))


def mirror(s: ArenaState) -> ArenaState:
    """Reflect across the y-axis and swap the players (an involution)."""
    return replace(
        s,
        agents=(_mirror_kin(s.agents[1]), _mirror_kin(s.agents[0])),
        bodies=(_mirror_body(s.bodies[1]), _mirror_body(s.bodies[0])),
        morphs=(mirror_morph(s.morphs[1]), mirror_morph(s.morphs[0])),
        result=s.result.swapped(),
    )


def mirror_action(action) -> np.ndarray:
    """Leg remapping of a command vector under reflection."""
    a = np.asarray(action, dtype=np.float64)
    return a[leg_mirror_permutation(a.shape[0])]


TRACE_FIELDS = (
    "step", "pos_a_x", "pos_a_y", "pos_b_x", "pos_b_y",
    "vel_a_x", "vel_a_y", "vel_b_x", "vel_b_y",
    "action_a", "action_b", "dense_a", "dense_b", "sparse_a", "sparse_b", "result",
)


def trace_record(s: ArenaState, a_alpha, a_beta, out: StepOutcome) -> str:
    """One tab-separated replay line (fields in ``TRACE_FIELDS`` order).

    ``s`` is the post-step state; actions are comma-joined leg commands.
    """
    a, b = s.agents
    nums = [*a.position, *b.position, *a.velocity, *b.velocity]
    fields = [str(s.step), *map(repr, nums)]
    fields.append(",".join(repr(float(x)) for x in np.clip(a_alpha, -1, 1)))
    fields.append(",".join(repr(float(x)) for x in np.clip(a_beta, -1, 1)))
    fields += [repr(float(x)) for x in (*out.dense_rewards, *out.sparse_rewards)]
    fields.append(out.result.value)
    return "\t".join(fields)

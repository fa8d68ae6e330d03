"""The combined policy: morph head, tactics head and value network.

Parameters live in a flat ``name -> ndarray`` mapping, e.g. ``tactics/W0``,
``tactics/b0``, ``tactics/log_std``. Two evaluation paths exist: plain numpy
for rollouts, and :mod:`competevo.autodiff` tensors for losses. Both compute
the same expressions in the same order.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .arena import OBS_BASE_DIM, TaskKind, observation_dim
from .errors import CheckpointError, DimensionError, NumericalError
from .morphology import Species, species_template

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
HEADS = ("morph", "tactics", "value")


@dataclass(frozen=True)
class NetworkArch:
    input_dim: int
    hidden_layers: tuple
    output_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_layers, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise DimensionError(f"layer widths must be positive, got {dims}")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self):
        dims = (self.input_dim, *self.hidden_layers, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))


@dataclass(frozen=True)
class PolicyConfig:
    tactics_hidden: tuple = (64, 64)
    value_hidden: tuple = (64, 64)
    morph_hidden: tuple = (32,)
    tactics_log_std_init: float = -0.5
    morph_log_std_init: float = -1.0
    log_std_min: float = -5.0
    log_std_max: float = 1.0


DEFAULT_POLICY = PolicyConfig()


@dataclass
class PolicyParams:
    species: Species
    task: TaskKind
    archs: dict
    arrays: dict
    version: int = 0
    log_std_bounds: tuple = (DEFAULT_POLICY.log_std_min, DEFAULT_POLICY.log_std_max)

    def copy(self, version=None) -> "PolicyParams":
        return PolicyParams(
            self.species,
            self.task,
            dict(self.archs),
            {k: v.copy() for k, v in self.arrays.items()},
            self.version if version is None else version,
            self.log_std_bounds,
        )

    def n_layers(self, head: str) -> int:
        return len(self.archs[head].layer_dims)

    def param_names(self) -> list:
        """Serialization order: per head, weights by layer, then biases, then log-std."""
        names = []
        for head in HEADS:
            n = self.n_layers(head)
            names += [f"{head}/W{i}" for i in range(n)]
            names += [f"{head}/b{i}" for i in range(n)]
            if head != "value":
                names.append(f"{head}/log_std")
        return names

    def flat(self) -> np.ndarray:
        return np.concatenate([self.arrays[n].reshape(-1) for n in self.param_names()])

    def equal(self, other: "PolicyParams") -> bool:
        return (
            self.species == other.species
            and self.task == other.task
            and self.archs == other.archs
            and self.version == other.version
            and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.param_names())
        )


def _orthogonal(rng, rows, cols, gain):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_policy(species: Species, task, seed: int, cfg: PolicyConfig = DEFAULT_POLICY) -> PolicyParams:
    """Orthogonal init; output layers are shrunk so the initial morph mean is ~1
    and the initial tactics mean is ~0."""
    task = TaskKind(task)
    obs_dim = observation_dim(species.param_count)
    archs = {
        "morph": NetworkArch(species.param_count, tuple(cfg.morph_hidden), species.param_count),
        "tactics": NetworkArch(obs_dim, tuple(cfg.tactics_hidden), species.leg_count),
        "value": NetworkArch(obs_dim, tuple(cfg.value_hidden), 1),
    }
    rng = np.random.default_rng(seed)
    out_gain = {"morph": 0.01, "tactics": 0.01, "value": 1.0}
    arrays = {}
    for head in HEADS:
        dims = archs[head].layer_dims
        for i, (din, dout) in enumerate(dims):
            last = i == len(dims) - 1
            gain = out_gain[head] if last else math.sqrt(2.0)
            arrays[f"{head}/W{i}"] = _orthogonal(rng, din, dout, gain)
            arrays[f"{head}/b{i}"] = np.zeros(dout)
    arrays[f"morph/b{len(archs['morph'].layer_dims) - 1}"][:] = 1.0
    arrays["morph/log_std"] = np.full(species.param_count, cfg.morph_log_std_init)
    arrays["tactics/log_std"] = np.full(species.leg_count, cfg.tactics_log_std_init)
    return PolicyParams(species, task, archs, arrays, 0, (cfg.log_std_min, cfg.log_std_max))


@dataclass
class GaussianDist:
    mean: np.ndarray
    log_std: np.ndarray

    @property
    def std(self):
        return np.exp(self.log_std)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal(self.mean.shape)

    def log_prob(self, sample) -> float:
        return log_prob(self, sample)

    def entropy(self) -> float:
        return float(np.sum(0.5 + HALF_LOG_2PI + self.log_std))


def log_prob(d: GaussianDist, sample) -> float:
    s = np.asarray(sample, dtype=np.float64)
    if s.shape != d.mean.shape:
        raise DimensionError(f"sample shape {s.shape} != distribution shape {d.mean.shape}")
    z = (s - d.mean) * np.exp(-d.log_std)
    return float(np.sum(-0.5 * z * z - d.log_std - HALF_LOG_2PI))


def _mlp(arrays: dict, head: str, n: int, x):
    h = x
    for i in range(n):
        h = h @ arrays[f"{head}/W{i}"] + arrays[f"{head}/b{i}"]
        if i < n - 1:
            h = np.tanh(h)
    return h


def _check_input(p: PolicyParams, head: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    want = p.archs[head].input_dim
    if x.shape[-1] != want:
        raise DimensionError(f"{head} head expects input of width {want}, got {x.shape[-1]}")
    return x


def morph_dist(p: PolicyParams, x) -> GaussianDist:
    x = _check_input(p, "morph", x)
    return GaussianDist(_mlp(p.arrays, "morph", p.n_layers("morph"), x), p.arrays["morph/log_std"].copy())


def tactics_dist(p: PolicyParams, obs) -> GaussianDist:
    obs = _check_input(p, "tactics", obs)
    return GaussianDist(_mlp(p.arrays, "tactics", p.n_layers("tactics"), obs), p.arrays["tactics/log_std"].copy())


def value(p: PolicyParams, obs):
    obs = _check_input(p, "value", obs)
    v = _mlp(p.arrays, "value", p.n_layers("value"), obs)[..., 0]
    return float(v) if v.ndim == 0 else v


def morph_value_input(x) -> np.ndarray:
    """Zero-padded observation carrying the morph seed, used to value the morph stage."""
    x = np.asarray(x, dtype=np.float64)
    pad = np.zeros(x.shape[:-1] + (OBS_BASE_DIM,))
    return np.concatenate([pad, x], axis=-1)


# ---- differentiable path ----------------------------------------------------

def tensors(p: PolicyParams) -> dict:
    return {k: ad.Tensor(v, name=k) for k, v in p.arrays.items()}


def mlp_t(t: dict, p: PolicyParams, head: str, x) -> ad.Tensor:
    h = ad.Tensor(x, op="input")
    n = p.n_layers(head)
    for i in range(n):
        h = ad.add(ad.matmul(h, t[f"{head}/W{i}"]), t[f"{head}/b{i}"])
        if i < n - 1:
            h = ad.tanh(h)
    return h


def gaussian_log_prob_t(mean: ad.Tensor, log_std: ad.Tensor, sample) -> ad.Tensor:
    """Per-row diagonal Gaussian log-density, summed over the last axis."""
    z = ad.mul(ad.sub(sample, mean), ad.exp(ad.neg(log_std)))
    per_dim = ad.sub(ad.sub(ad.mul(ad.square(z), -0.5), log_std), HALF_LOG_2PI)
    return ad.sum(per_dim, axis=-1)


def gaussian_entropy_t(log_std: ad.Tensor) -> ad.Tensor:
    return ad.sum(ad.add(log_std, 0.5 + HALF_LOG_2PI))


Gradient = dict


def backward(p: PolicyParams, loss_fn) -> Gradient:
    """Exact gradient of ``loss_fn(tensors)`` w.r.t. every parameter of ``p``."""
    return value_and_grad(p, loss_fn)[1]


def value_and_grad(p: PolicyParams, loss_fn):
    t = tensors(p)
    out = loss_fn(t)
    loss = out[0] if isinstance(out, tuple) else out
    g = ad.grad(loss, t)
    for k, v in g.items():
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"non-finite gradient for parameter {k}")
    return out, g


def global_norm(g: Gradient) -> float:
    return math.sqrt(math.fsum(float(np.sum(v * v)) for v in g.values()))


def param_entropy(p: PolicyParams, head: str) -> float:
    return float(np.sum(0.5 + HALF_LOG_2PI + p.arrays[f"{head}/log_std"]))


# ---- serialization -------------------------------------------------------------
#
# One record = a descriptor line (JSON, newline-terminated) followed by
# ``n_floats`` little-endian float64 values in ``param_names()`` order.

def _descriptor(p: PolicyParams, extra: dict | None) -> dict:
    return {
        "species": p.species.name,
        "task": p.task.value,
        "version": p.version,
        "log_std_bounds": list(p.log_std_bounds),
        "archs": {h: [a.input_dim, list(a.hidden_layers), a.output_dim, a.activation] for h, a in p.archs.items()},
        "n_floats": int(sum(p.arrays[n].size for n in p.param_names())),
        "meta": extra or {},
    }


def write_params(fh, p: PolicyParams, meta: dict | None = None) -> None:
    fh.write((json.dumps(_descriptor(p, meta), sort_keys=True) + "\n").encode())
    fh.write(p.flat().astype("<f8").tobytes())


def read_params(fh, source: str = "<stream>"):
    """Read one record; returns ``(params, meta)`` or ``None`` at clean EOF."""
    offset = fh.tell()
    line = fh.readline()
    if not line:
        return None
    if not line.endswith(b"\n"):
        raise CheckpointError(f"{source}: truncated descriptor at byte {offset}")
    try:
        desc = json.loads(line)
        species = species_template(desc["species"])
        archs = {h: NetworkArch(a[0], tuple(a[1]), a[2], a[3]) for h, a in desc["archs"].items()}
        n = int(desc["n_floats"])
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        raise CheckpointError(f"{source}: bad descriptor at byte {offset}: {exc}") from None
    body_at = fh.tell()
    raw = fh.read(8 * n)
    if len(raw) != 8 * n:
        raise CheckpointError(
            f"{source}: parameter block at byte {body_at} truncated "
            f"({len(raw)} of {8 * n} bytes)"
        )
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    p = PolicyParams(species, TaskKind(desc["task"]), archs, {}, int(desc["version"]), tuple(desc["log_std_bounds"]))
    shapes = {}
    for head in HEADS:
        for i, (din, dout) in enumerate(archs[head].layer_dims):
            shapes[f"{head}/W{i}"] = (din, dout)
            shapes[f"{head}/b{i}"] = (dout,)
    shapes["morph/log_std"] = (archs["morph"].output_dim,)
    shapes["tactics/log_std"] = (archs["tactics"].output_dim,)
    pos = 0
    for name in p.param_names():
        size = int(np.prod(shapes[name]))
        p.arrays[name] = flat[pos:pos + size].reshape(shapes[name]).copy()
        pos += size
    if pos != n:
        raise CheckpointError(f"{source}: descriptor at byte {offset} declares {n} floats, layout needs {pos}")
    return p, desc.get("meta", {})


def params_to_bytes(p: PolicyParams, meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    write_params(buf, p, meta)
    return buf.getvalue()


def params_from_bytes(data: bytes) -> PolicyParams:
    rec = read_params(io.BytesIO(data))
    if rec is None:
        raise CheckpointError("empty parameter record")
    return rec[0]

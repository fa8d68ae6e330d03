"""Species templates, the per-leg morphology encoding and the body model.

A morph is a flat, leg-major vector of scale factors. Leg ``k`` occupies
elements ``5k .. 5k+4`` in the order

    l1  thigh-to-torso distance
    l2  thigh length
    l3  thigh girth
    l4  lower-leg length
    l5  lower-leg girth

All values are multipliers of the original design, so the identity morph is
all ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidMorphError, InvalidSpeciesError, InvalidValueError

PARAMS_PER_LEG = 5
PARAM_LABELS = ("l1", "l2", "l3", "l4", "l5")

_LEG_COUNTS = {"ant": 4, "bug": 6, "spider": 8}
SPECIES_NAMES = tuple(_LEG_COUNTS)


@dataclass(frozen=True)
class Species:
    name: str
    leg_count: int

    @property
    def param_count(self) -> int:
        return PARAMS_PER_LEG * self.leg_count


def species_template(name: str) -> Species:
    try:
        return Species(name, _LEG_COUNTS[name])
    except (KeyError, TypeError):
        raise InvalidSpeciesError(
            f"unknown species {name!r}; expected one of {', '.join(SPECIES_NAMES)}"
        ) from None


@dataclass(frozen=True)
class MorphConstants:
    """Clamp bounds and the physical constants of the body model."""

    s_min: float = 0.5
    s_max: float = 2.0
    f0: float = 10.0
    m0: float = 0.25
    r0: float = 0.4
    torso_mass: float = 1.0
    rho0: float = 0.35
    stab0: float = 6.0
    e0: float = 0.01

    def __post_init__(self):
        vals = [getattr(self, f) for f in self.__dataclass_fields__]
        if not all(math.isfinite(v) and v > 0 for v in vals):
            raise InvalidValueError("morph constants must be finite and positive")
        if self.s_min > 1.0 or self.s_max < 1.0:
            raise InvalidValueError("clamp bounds must contain 1.0 (the identity morph)")


DEFAULT_CONSTANTS = MorphConstants()


class MorphVector:
    """Immutable leg-major scale-factor vector tied to a species."""

    __slots__ = ("species", "values")

    def __init__(self, species: Species, values):
        arr = np.array(values, dtype=np.float64).reshape(-1)
        if arr.shape[0] != species.param_count:
            raise DimensionError(
                f"{species.name} morph needs {species.param_count} values, got {arr.shape[0]}"
            )
        if not np.all(np.isfinite(arr)):
            raise InvalidValueError("morph values must be finite")
        if not np.all(arr > 0):
            raise InvalidMorphError("morph values must be strictly positive")
        arr.setflags(write=False)
        object.__setattr__(self, "species", species)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("MorphVector is immutable")

    def legs(self) -> np.ndarray:
        """View as a ``(leg_count, 5)`` array."""
        return self.values.reshape(self.species.leg_count, PARAMS_PER_LEG)

    def __eq__(self, other):
        if not isinstance(other, MorphVector):
            return NotImplemented
        return self.species == other.species and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.species, self.values.tobytes()))

    def __repr__(self):
        return f"MorphVector({self.species.name}, {np.array2string(self.values, precision=3)})"


@dataclass(frozen=True)
class BodyProperties:
    species: Species
    leg_force: tuple
    leg_mass: tuple
    leg_reach: tuple
    total_mass: float
    contact_radius: float
    stability: float
    energy_coeff: float


def identity_morph(species: Species) -> MorphVector:
    return MorphVector(species, np.ones(species.param_count))


def clamp_morph(raw, species: Species, consts: MorphConstants = DEFAULT_CONSTANTS) -> MorphVector:
    arr = np.asarray(raw, dtype=np.float64).reshape(-1)
    if arr.shape[0] != species.param_count:
        raise DimensionError(
            f"{species.name} morph needs {species.param_count} values, got {arr.shape[0]}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidValueError("cannot clamp non-finite morph values")
    return MorphVector(species, np.minimum(consts.s_max, np.maximum(consts.s_min, arr)))


def derive_body(m: MorphVector, consts: MorphConstants = DEFAULT_CONSTANTS) -> BodyProperties:
    v = m.values
    if not np.all(np.isfinite(v)):
        raise InvalidMorphError("non-finite morph")
    if np.any(v < consts.s_min) or np.any(v > consts.s_max):
        raise InvalidMorphError(
            f"morph outside clamp bounds [{consts.s_min}, {consts.s_max}]; clamp it first"
        )
    legs = m.legs()
    force, mass, reach = [], [], []
    for l1, l2, l3, l4, l5 in legs.tolist():
        force.append(consts.f0 * (l3 + l5) / 2)
        mass.append(consts.m0 * (l2 * l3 + l4 * l5) / 2)
        reach.append(consts.r0 * (l1 + l2 + l4) / 3)
    n = m.species.leg_count
    # fsum keeps the aggregates independent of leg order (mirror symmetry is exact)
    return BodyProperties(
        species=m.species,
        leg_force=tuple(force),
        leg_mass=tuple(mass),
        leg_reach=tuple(reach),
        total_mass=consts.torso_mass + math.fsum(mass),
        contact_radius=consts.rho0 * math.fsum(legs[:, 0].tolist()) / n,
        stability=consts.stab0 * min(reach),
        energy_coeff=consts.e0,
    )


def flatten(m: MorphVector) -> np.ndarray:
    return m.values.copy()


def restore(raw, species: Species) -> MorphVector:
    return MorphVector(species, raw)


def leg_mirror_permutation(leg_count: int) -> np.ndarray:
    """Leg index map under reflection across the y-axis.

    Leg ``k`` points at angle ``2*pi*k/n``; its reflection points at
    ``pi - 2*pi*k/n``, which is leg ``(n/2 - k) mod n``.
    """
    if leg_count % 2:
        raise InvalidSpeciesError("mirror permutation needs an even leg count")
    return (leg_count // 2 - np.arange(leg_count)) % leg_count


def mirror_morph_values(values: np.ndarray, leg_count: int) -> np.ndarray:
    legs = np.asarray(values, dtype=np.float64).reshape(leg_count, PARAMS_PER_LEG)
    out = np.empty_like(legs)
    out[leg_mirror_permutation(leg_count)] = legs
    return out.reshape(-1)


def mirror_morph(m: MorphVector) -> MorphVector:
    return MorphVector(m.species, mirror_morph_values(m.values, m.species.leg_count))


def initial_morph_seed(species: Species, rng: np.random.Generator, low=0.9, high=1.1) -> np.ndarray:
    """Randomized conditioning input for the morph head, drawn once per run."""
    return rng.uniform(low, high, size=species.param_count)

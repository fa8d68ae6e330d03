import time

import numpy as np
import pytest

from competevo.arena import PhysicsParams
from competevo.config import RunConfig, SelfPlayConfig
from competevo.policy import PolicyConfig
from competevo.ppo import PPOConfig


def tiny_run_config(**overrides) -> RunConfig:
    """Small, fast self-play configuration for structural tests."""
    base = dict(
        task="run_to_goal",
        species=("ant", "ant"),
        evolvable=(True, False),
        seed=11,
        ppo=PPOConfig(batch_size=120, minibatch_size=64, update_epochs=2),
        selfplay=SelfPlayConfig(n_opponents=2, warmup_generations=1, termination_generation=10,
                                max_generations=12),
        physics=PhysicsParams(episode_len=40),
        policy=PolicyConfig(tactics_hidden=(16,), value_hidden=(16,), morph_hidden=(8,)),
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---- acceptance reporting -------------------------------------------------------

ACCEPTANCE_RESULTS = []


class _Criterion:
    def __init__(self, number, title, limit_s, already_spent=0.0):
        self.number, self.title, self.limit_s = number, title, limit_s
        self.spent = already_spent
        self.detail = ""

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = self.spent + time.perf_counter() - self.t0
        ok = exc_type is None and elapsed <= self.limit_s
        why = self.detail
        if exc_type is not None:
            why = f"{exc_type.__name__}: {exc}".splitlines()[0]
        elif not ok:
            why = f"runtime {elapsed:.1f}s exceeds {self.limit_s}s"
        ACCEPTANCE_RESULTS.append(
            f"criterion {self.number:>2} {'PASS' if ok else 'FAIL'}  {self.title}  [{elapsed:.1f}s <= {self.limit_s}s]  {why}"
        )
        if exc_type is None and not ok:
            raise AssertionError(f"criterion {self.number}: runtime {elapsed:.1f}s exceeds {self.limit_s}s")
        return False


def criterion(number, title, limit_s, already_spent=0.0):
    """Time a criterion block and record one PASS/FAIL line for the summary."""
    return _Criterion(number, title, limit_s, already_spent)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

"""Baseline policies and the adapter that lets a DQN agent drive the environment.

A policy exposes ``act(env) -> action index``. Learning policies also expose
``observe(state, action, reward, next_state, env)``.
"""
from __future__ import annotations

import numpy as np

from .dqn import DQNAgent, TrainerConfig
from .energy import CameraMode
from .environment import CameraNetworkEnv, n_actions

POLICY_NAMES = ("greedy", "threshold", "alternating", "dqn", "dqn_gp")


def encode(modes) -> int:
    return sum(int(m) * 3 ** k for k, m in enumerate(modes))


def greedy(energies, raw_epoch_cost: float) -> int:
    """TransmitRaw for every camera that can fund a raw epoch, StandBy otherwise."""
    return encode(CameraMode.TRANSMIT_RAW if e >= raw_epoch_cost else CameraMode.STANDBY
                  for e in energies)


def threshold(energies, e_max: float) -> int:
    """TransmitRaw above half capacity (strictly), DetectLocal otherwise."""
    return encode(CameraMode.TRANSMIT_RAW if e > 0.5 * e_max else CameraMode.DETECT_LOCAL
                  for e in energies)


def alternating(epoch_index: int, k: int) -> int:
    if epoch_index < 0:
        raise ValueError("epoch_index must be non-negative")
    return epoch_index % n_actions(k)


class GreedyPolicy:
    name = "greedy"

    def act(self, env: CameraNetworkEnv) -> int:
        return greedy(env.available, env.epoch_cost(CameraMode.TRANSMIT_RAW))


class ThresholdPolicy:
    name = "threshold"

    def act(self, env: CameraNetworkEnv) -> int:
        return threshold(env.available, env.energy.e_max)


class AlternatingPolicy:
    name = "alternating"

    def __init__(self):
        self.counter = 0

    def act(self, env: CameraNetworkEnv) -> int:
        index = alternating(self.counter, env.k)
        self.counter += 1
        return index


class DQNPolicy:
    """Epsilon-greedy control plus online training on every transition."""

    def __init__(self, agent: DQNAgent, name: str = "dqn", learn: bool = True):
        self.agent = agent
        self.name = name
        self.learn = learn

    def act(self, env: CameraNetworkEnv) -> int:
        state = env.observe().vector()
        if self.learn:
            return self.agent.select_action(state)
        return self.agent.greedy_action(state)

    def observe(self, state, action, reward, next_state, env) -> None:
        if self.learn:
            self.agent.observe(state.vector(), action, reward, next_state.vector())


def make_policy(name: str, env: CameraNetworkEnv, seed: int = 0,
                trainer: TrainerConfig | None = None):
    if name == "greedy":
        return GreedyPolicy()
    if name == "threshold":
        return ThresholdPolicy()
    if name == "alternating":
        return AlternatingPolicy()
    if name in ("dqn", "dqn_gp"):
        if (name == "dqn_gp") != (env.forecaster is not None):
            raise ValueError(f"policy {name} needs forecasts {'on' if name == 'dqn_gp' else 'off'}")
        agent = DQNAgent(env.state_dim, n_actions(env.k), trainer, seed)
        return DQNPolicy(agent, name)
    raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")


def action_histogram(indices, k: int) -> np.ndarray:
    return np.bincount(np.asarray(indices, dtype=np.int64), minlength=n_actions(k))

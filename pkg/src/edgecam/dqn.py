"""Deep Q-learning from scratch: MLP, Adam, replay memory, soft target updates.

Parameters live in one flat float64 vector laid out layer by layer as the
weight matrix (out x in, row-major) followed by the bias. The hot update
loop runs in :mod:`edgecam.kernels`; the numpy code here is used for
inspection, training-mode forward passes and gradient checks.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels_py, kernels

CHECKPOINT_VERSION = 1
HIDDEN = (4, 8, 8, 4)


class ContractError(ValueError):
    pass


class QNetwork:
    """Fully connected rectifier network with a linear output layer."""

    def __init__(self, sizes, params: np.ndarray | None = None, dropout: float = 0.1):
        self.sizes = np.asarray(sizes, dtype=np.int64)
        if self.sizes.size < 2 or np.any(self.sizes < 1):
            raise ValueError("need at least input and output sizes, all positive")
        n = int(sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:])))
        if params is None:
            params = np.zeros(n)
        params = np.ascontiguousarray(params, dtype=float)
        if params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {params.shape}")
        self.params = params
        self.dropout = dropout

    @classmethod
    def initialized(cls, sizes, rng: np.random.Generator, dropout: float = 0.1) -> "QNetwork":
        """He-uniform weights, zero biases."""
        net = cls(sizes, dropout=dropout)
        for w, b in net.layers():
            bound = np.sqrt(6.0 / w.shape[1])
            w[...] = rng.uniform(-bound, bound, size=w.shape)
        return net

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def n_inputs(self) -> int:
        return int(self.sizes[0])

    @property
    def n_outputs(self) -> int:
        return int(self.sizes[-1])

    def layers(self):
        return _kernels_py._layers(self.params, self.sizes)

    def copy(self) -> "QNetwork":
        return QNetwork(self.sizes, self.params.copy(), self.dropout)

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        """Q-values for one state (1-D) or a batch (2-D)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        if xb.shape[1] != self.n_inputs:
            raise ContractError(f"state has {xb.shape[1]} entries, network expects {self.n_inputs}")
        if not training or self.dropout <= 0.0:
            q = kernels.mlp_forward(self.params, self.sizes, np.ascontiguousarray(xb))
        else:
            if rng is None:
                raise ContractError("training forward needs an rng for dropout")
            a = xb
            layers = self.layers()
            for w, b in layers[:-1]:
                a = np.maximum(a @ w.T + b, 0.0)
                a = a * ((rng.random(a.shape) >= self.dropout) / (1.0 - self.dropout))
            w, b = layers[-1]
            q = a @ w.T + b
        return q[0] if single else q

    def loss_and_grad(self, x, actions, y, masks=None):
        """MSE on chosen actions; returns (loss, grad, mean chosen Q)."""
        return _kernels_py.mlp_loss_grad(self.params, self.sizes, np.asarray(x, dtype=float),
                                         np.asarray(actions, dtype=np.int64),
                                         np.asarray(y, dtype=float), masks)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kw)

    @property
    def step(self) -> int:
        return int(self.t[0])

    def apply(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t[0] += 1
        t = self.step
        self.m[:] = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v[:] = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** t)
        vhat = self.v / (1.0 - self.beta2 ** t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class ReplayMemory:
    """Fixed-capacity FIFO transition store."""

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminal = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, state, action: int, reward: float, next_state, terminal: bool = False) -> None:
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminal[i] = float(terminal)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        """Distinct uniform indices into the stored transitions."""
        if batch > self.size:
            raise ContractError(f"cannot draw {batch} distinct transitions from {self.size}")
        return _kernels_py.sample_indices(self.size, batch, rng.random)


def td_targets(rewards, next_states, terminal, target: QNetwork, gamma: float) -> np.ndarray:
    q_next = target.forward(np.atleast_2d(next_states))
    return np.asarray(rewards) + gamma * (1.0 - np.asarray(terminal, dtype=float)) * q_next.max(axis=1)


def soft_update(online: np.ndarray, target: np.ndarray, tau: float) -> None:
    target[:] = tau * online + (1.0 - tau) * target


@dataclass
class TrainerConfig:
    batch_size: int = 128
    gamma: float = 0.95
    soft_update_tau: float = 1e-3
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 86400
    train_every: int = 1
    updates_per_train: int = 1
    warmup: int = 1000
    replay_capacity: int = 200_000
    dropout: float = 0.1
    hidden: tuple = HIDDEN
    curve_every: int = 100

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 1 <= self.batch_size <= self.replay_capacity:
            raise ValueError("batch_size must lie in [1, replay_capacity]")
        if not 0.0 < self.soft_update_tau <= 1.0:
            raise ValueError("soft_update_tau must lie in (0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if min(self.eps_decay_steps, self.train_every, self.updates_per_train) < 1:
            raise ValueError("eps_decay_steps, train_every and updates_per_train must be positive")


class DQNAgent:
    def __init__(self, state_dim: int, n_actions: int, config: TrainerConfig | None = None,
                 seed: int = 0):
        self.config = cfg = config or TrainerConfig()
        self.seed = seed
        sizes = (state_dim,) + cfg.hidden + (n_actions,)
        self.online = QNetwork.initialized(sizes, np.random.default_rng([seed, 0x1A1]), cfg.dropout)
        self.target = self.online.copy()
        self.adam = AdamState.zeros(self.online.n_params, lr=cfg.lr, beta1=cfg.beta1,
                                    beta2=cfg.beta2, eps=cfg.adam_eps)
        self.replay = ReplayMemory(cfg.replay_capacity, state_dim)
        self.explore_rng = np.random.default_rng([seed, 0xE9])
        self.train_rng = np.random.default_rng([seed, 0x7A1])
        self.steps = 0
        self.updates = 0
        self.curve: list[tuple] = []

    @property
    def n_actions(self) -> int:
        return self.online.n_outputs

    def epsilon(self, step: int | None = None) -> float:
        cfg = self.config
        step = self.steps if step is None else step
        frac = min(1.0, step / cfg.eps_decay_steps)
        return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)

    def greedy_action(self, state) -> int:
        q = self.online.forward(state)
        return int(np.argmax(q))  # first maximum wins ties

    def select_action(self, state, epsilon: float | None = None) -> int:
        eps = self.epsilon() if epsilon is None else epsilon
        if not 0.0 <= eps <= 1.0:
            raise ContractError("epsilon must lie in [0, 1]")
        if self.explore_rng.random() < eps:
            return min(int(self.explore_rng.random() * self.n_actions), self.n_actions - 1)
        return self.greedy_action(state)

    def ready(self) -> bool:
        cfg = self.config
        return self.replay.size >= max(cfg.batch_size, cfg.warmup)

    def train_step(self):
        """One minibatch update. Returns ``(loss, mean_q)``, or None when the
        replay memory is still too small."""
        if not self.ready():
            return None
        cfg = self.config
        r = self.replay
        loss, mean_q = kernels.dqn_train_step(
            self.online.params, self.target.params, self.adam.m, self.adam.v, self.adam.t,
            self.online.sizes, r.states, r.actions, r.rewards, r.next_states, r.terminal,
            r.size, cfg.batch_size, cfg.gamma, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
            cfg.dropout, cfg.soft_update_tau, self.train_rng)
        self.updates += 1
        return loss, mean_q

    def observe(self, state, action: int, reward: float, next_state, terminal: bool = False):
        """Store a transition and train on the configured cadence."""
        self.replay.push(state, action, reward, next_state, terminal)
        self.steps += 1
        if self.steps % self.config.train_every:
            return None
        out = None
        for _ in range(self.config.updates_per_train):
            out = self.train_step()
            if out is None:
                break
            if self.updates % self.config.curve_every == 0:
                self.curve.append((self.updates, out[0], self.epsilon(), out[1]))
        return out

    # -- persistence -------------------------------------------------------
    def save(self, path) -> None:
        r = self.replay
        meta = {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "seed": self.seed,
            "steps": self.steps,
            "updates": self.updates,
            "cursor": r.cursor,
            "size": r.size,
            "explore_rng": self.explore_rng.bit_generator.state,
            "train_rng": self.train_rng.bit_generator.state,
        }
        curve = np.array(self.curve, dtype=float).reshape(-1, 4)
        with Path(path).open("wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), sizes=self.online.sizes,
                     online=self.online.params, target=self.target.params, adam_m=self.adam.m,
                     adam_v=self.adam.v, adam_t=self.adam.t, states=r.states[:r.size],
                     actions=r.actions[:r.size], rewards=r.rewards[:r.size],
                     next_states=r.next_states[:r.size], terminal=r.terminal[:r.size],
                     curve=curve)

    @classmethod
    def load(cls, path) -> "DQNAgent":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            sizes = z["sizes"]
            agent = cls(int(sizes[0]), int(sizes[-1]), TrainerConfig(**meta["config"]), meta["seed"])
            agent.online.params[:] = z["online"]
            agent.target.params[:] = z["target"]
            agent.adam.m[:] = z["adam_m"]
            agent.adam.v[:] = z["adam_v"]
            agent.adam.t[:] = z["adam_t"]
            r = agent.replay
            n = meta["size"]
            for name in ("states", "actions", "rewards", "next_states", "terminal"):
                getattr(r, name)[:n] = z[name]
            r.size = n
            r.cursor = meta["cursor"]
            agent.curve = [tuple(row) for row in z["curve"].tolist()]
        agent.steps = meta["steps"]
        agent.updates = meta["updates"]
        agent.explore_rng.bit_generator.state = meta["explore_rng"]
        agent.train_rng.bit_generator.state = meta["train_rng"]
        return agent

    def write_curve(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write("step,loss,epsilon,mean_q\n")
            for step, loss, eps, mq in self.curve:
                fh.write(f"{int(step)},{loss!r},{eps!r},{mq!r}\n")

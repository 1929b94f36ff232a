"""Decision process tying cameras, batteries and the scene together.

One decision epoch spans ``frames_per_epoch`` frames. All but the last frame
follow the chosen joint action; the last one is the guard frame, in which
every powered camera offloads a raw image so the cloudlet detector can count
the objects in view. The guard count drives the observable recall proxy and
the reward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels_py, kernels
from .energy import CameraMode, EnergyParams, HarvestTrace, consumption_for_mode
from .world import (DetectionTrace, DetectorProfile, SceneConfig,
                    calibrate_cloud_detector)

DAY = 86400.0


class ContractError(ValueError):
    """A caller broke an operation's precondition."""


def n_actions(k: int) -> int:
    return 3 ** k


@dataclass(frozen=True)
class JointAction:
    modes: tuple

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(CameraMode(m) for m in self.modes))

    @property
    def index(self) -> int:
        return sum(int(m) * 3 ** k for k, m in enumerate(self.modes))

    @classmethod
    def from_index(cls, index: int, k: int) -> "JointAction":
        if not 0 <= index < n_actions(k):
            raise ContractError(f"action index {index} outside [0, {n_actions(k)})")
        modes = []
        for _ in range(k):
            modes.append(CameraMode(index % 3))
            index //= 3
        return cls(tuple(modes))


def action_modes(index: int, k: int) -> np.ndarray:
    out = np.empty(k, dtype=np.int32)
    for c in range(k):
        out[c] = index % 3
        index //= 3
    return out


@dataclass(frozen=True)
class EnvState:
    energies: tuple
    guard_recall: float
    detected_count: float
    forecasts: tuple | None = None

    def vector(self) -> np.ndarray:
        parts = list(self.energies) + [self.guard_recall, self.detected_count]
        if self.forecasts is not None:
            parts += list(self.forecasts)
        return np.asarray(parts, dtype=float)

    @property
    def dim(self) -> int:
        return len(self.energies) + 2 + (len(self.forecasts) if self.forecasts is not None else 0)


@dataclass(frozen=True)
class EpochOutcome:
    epoch: int
    day: int
    action_index: int
    reward: float
    guard_recall: float
    true_recall: float
    guard_count: int
    e_av: tuple
    energy_delta: tuple
    harvested: tuple
    downtime_steps: tuple
    raw_transmissions: int
    powered_at_guard: int
    e_tr: float


def guard_recall(pre_guard_count: int, guard_count: int) -> float:
    """Ratio of last pre-guard detections to guard detections, capped at 1."""
    if guard_count == 0:
        return 1.0
    return min(1.0, pre_guard_count / guard_count)


def epoch_reward(phi_g: float, low_energy: bool, penalty: float) -> float:
    return 10.0 * (phi_g - 0.5) - (penalty if low_energy else 0.0)


@dataclass
class EnvConfig:
    frames_per_epoch: int = 10
    frame_dt: float = 0.1
    epoch_stride: int = 1
    energy_floor: float = 0.15
    energy_penalty: float = 50.0
    count_cap: int = 10
    initial_charge: float = 0.5
    target_recall: float = 0.99
    local_ratio: float = 0.75
    grid_dt: float = 1.0
    object_capacity: int = 1024

    def __post_init__(self):
        if self.frames_per_epoch < 2:
            raise ValueError("frames_per_epoch must be >= 2 (action frames + guard frame)")
        if self.epoch_stride < 1 or int(self.epoch_stride) != self.epoch_stride:
            raise ValueError("epoch_stride must be a positive integer")
        if not 0.0 <= self.initial_charge <= 1.0:
            raise ValueError("initial_charge must lie in [0, 1]")

    @property
    def epoch_seconds(self) -> float:
        return self.frames_per_epoch * self.frame_dt

    @property
    def epoch_span(self) -> float:
        """Simulated seconds represented by one decision."""
        return self.epoch_seconds * self.epoch_stride


class CostSchedule:
    """Per-epoch transmission cost in joules per bit."""

    def __init__(self, static: float | None = None, interval: tuple | None = None, seed: int = 0):
        if (static is None) == (interval is None):
            raise ValueError("give exactly one of static or interval")
        if interval is not None and not interval[0] < interval[1]:
            raise ValueError("dynamic interval needs low < high")
        self.static = static
        self.interval = interval
        self._rng = np.random.default_rng([seed, 0xC057])

    def draw(self) -> float:
        if self.static is not None:
            return self.static
        return float(self._rng.uniform(self.interval[0], self.interval[1]))


class CameraNetworkEnv:
    """K energy-harvesting cameras sharing one scene and one cloudlet."""

    def __init__(self, traces: Sequence[HarvestTrace], energy: EnergyParams | None = None,
                 scene: SceneConfig | None = None, config: EnvConfig | None = None, seed: int = 0,
                 costs: CostSchedule | None = None, forecaster=None,
                 cloud: DetectorProfile | None = None, local: DetectorProfile | None = None,
                 detections: DetectionTrace | None = None, start_time: float = 0.0,
                 end_time: float | None = None):
        self.k = len(traces)
        if self.k < 1:
            raise ValueError("need at least one camera trace")
        self.energy = energy or EnergyParams()
        self.scene = scene or SceneConfig(solo_weights=(1.0,) * self.k)
        if self.scene.n_cameras != self.k:
            raise ValueError(f"scene describes {self.scene.n_cameras} cameras, got {self.k} traces")
        self.config = config or EnvConfig()
        self.seed = seed
        self.costs = costs or CostSchedule(static=self.energy.e_tr)
        self.forecaster = forecaster
        self.detections = detections
        self.cloud = cloud or calibrate_cloud_detector(self.scene, self.k, self.config.target_recall)
        self.local = local or DetectorProfile(self.config.local_ratio * self.cloud.p_detect, "local")
        self.start_time = start_time
        self.end_time = min(t.end for t in traces) if end_time is None else end_time

        cfg = self.config
        grid = np.arange(start_time, self.end_time + 2 * cfg.grid_dt, cfg.grid_dt)
        self._grid_t0 = float(grid[0])
        self._power = np.ascontiguousarray(
            np.vstack([tr.power(grid, self.energy.eta_eh) for tr in traces]))
        self._eparams = np.array([self.energy.e_op, self.energy.e_det, self.energy.f_raw,
                                  self.energy.f_proc, self.energy.e_max, self.energy.restart_level])
        self._sparams = np.array([self.scene.arrival_rate, self.scene.dwell_mean, self.scene.overlap,
                                  self.cloud.p_detect, self.local.p_detect])
        self._solo_cdf = self.scene.solo_cdf()
        self.reset()

    # -- lifecycle ---------------------------------------------------------
    def reset(self) -> EnvState:
        cfg = self.config
        k = self.k
        self.scene_rng = np.random.default_rng([self.seed, 0x5CE])
        self.detect_rng = np.random.default_rng([self.seed, 0xDE7])
        self.costs._rng = np.random.default_rng([self.seed, 0xC057])
        self.obj_ids = np.zeros(cfg.object_capacity, dtype=np.int64)
        self.obj_masks = np.zeros(cfg.object_capacity, dtype=np.int32)
        self.scene_state = np.zeros(2, dtype=np.int64)
        self.avail = np.full(k, cfg.initial_charge * self.energy.e_max)
        self.initial_avail = self.avail.copy()
        self.powered = (self.avail > 0).astype(np.uint8)
        self.downtime = np.zeros(k, dtype=np.int64)
        self.harvested = np.zeros(k)
        self.consumed = np.zeros(k)
        self.spilled = np.zeros(k)
        self.raw_tx = np.zeros(k, dtype=np.int64)
        self.epoch = 0
        self.phi_g = 1.0
        self.guard_count = 0
        self.e_tr_now = self.costs.draw()
        self._state = self._build_state()
        return self._state

    # -- time --------------------------------------------------------------
    @property
    def time(self) -> float:
        """Simulated time (s) at the start of the next epoch."""
        return self.start_time + self.epoch * self.config.epoch_span

    def day_of(self, epoch: int) -> int:
        return int((epoch * self.config.epoch_span) // DAY)

    def remaining_epochs(self) -> int:
        cfg = self.config
        room = self.end_time - self.time - cfg.epoch_seconds
        return 0 if room < -1e-9 else int(room // cfg.epoch_span) + 1

    @property
    def exhausted(self) -> bool:
        return self.time + self.config.epoch_seconds > self.end_time + 1e-9

    # -- observation -------------------------------------------------------
    @property
    def available(self) -> np.ndarray:
        return self.avail

    @property
    def state_dim(self) -> int:
        return self.k + 2 + (self.k if self.forecaster is not None else 0)

    def _build_state(self) -> EnvState:
        e = tuple(float(a) for a in np.clip(self.avail / self.energy.e_max, 0.0, 1.0))
        count = min(self.guard_count / self.config.count_cap, 1.0)
        fc = None
        if self.forecaster is not None:
            fc = tuple(float(v) for v in self.forecaster.features(self.time))
        return EnvState(e, float(self.phi_g), float(count), fc)

    def observe(self) -> EnvState:
        return self._state

    def last_guard(self) -> tuple[int, float]:
        """(|K(tau)|, guard recall) from the most recent guard frame."""
        return self.guard_count, self.phi_g

    def epoch_cost(self, mode: CameraMode, e_tr: float | None = None) -> float:
        """Projected energy one powered camera spends over the next epoch."""
        cfg = self.config
        e_tr = self.e_tr_now if e_tr is None else e_tr
        action = consumption_for_mode(mode, self.energy, e_tr)
        guard = consumption_for_mode(CameraMode.TRANSMIT_RAW, self.energy, e_tr)
        return ((cfg.frames_per_epoch - 1) * action + guard) * cfg.epoch_stride

    # -- dynamics ----------------------------------------------------------
    def step(self, action) -> tuple[EnvState, EpochOutcome]:
        if isinstance(action, JointAction):
            index = action.index
            if len(action.modes) != self.k:
                raise ContractError(f"action has {len(action.modes)} modes, expected {self.k}")
        else:
            index = int(action)
        if not 0 <= index < n_actions(self.k):
            raise ContractError(f"action index {index} outside [0, {n_actions(self.k)})")
        if self.exhausted:
            raise EOFError("harvest trace exhausted")
        cfg = self.config
        modes = action_modes(index, self.k)
        t0 = self.time
        before = self.avail.copy()
        down_before = self.downtime.copy()
        harv_before = self.harvested.copy()
        raw_before = int(self.raw_tx.sum())
        gap = (cfg.epoch_stride - 1) * cfg.epoch_seconds if self.epoch > 0 else 0.0
        e_tr = self.e_tr_now
        if self.detections is None:
            pre, guard, recall_sum = kernels.run_epoch(
                t0, cfg.frames_per_epoch, cfg.frame_dt, cfg.epoch_stride, gap, modes, e_tr,
                self._power, self._grid_t0, cfg.grid_dt, self._eparams, self._sparams,
                self._solo_cdf, self.obj_ids, self.obj_masks, self.scene_state, self.avail,
                self.powered, self.downtime, self.harvested, self.consumed, self.spilled,
                self.raw_tx, self.scene_rng, self.detect_rng)
        else:
            pre, guard, recall_sum = self._replay_epoch(t0, modes, e_tr)
        self.phi_g = guard_recall(pre, guard)
        self.guard_count = guard
        low = bool(np.any(self.avail < cfg.energy_floor * self.energy.e_max))
        reward = epoch_reward(self.phi_g, low, cfg.energy_penalty)
        outcome = EpochOutcome(
            epoch=self.epoch, day=self.day_of(self.epoch), action_index=index, reward=reward,
            guard_recall=self.phi_g, true_recall=recall_sum / cfg.frames_per_epoch,
            guard_count=guard, e_av=tuple(self.avail.tolist()),
            energy_delta=tuple((self.avail - before).tolist()),
            harvested=tuple((self.harvested - harv_before).tolist()),
            downtime_steps=tuple((self.downtime - down_before).tolist()),
            raw_transmissions=int(self.raw_tx.sum()) - raw_before,
            powered_at_guard=int(self.powered.sum()), e_tr=e_tr)
        self.epoch += 1
        self.e_tr_now = self.costs.draw()
        self._state = self._build_state()
        return self._state, outcome

    def _replay_epoch(self, t0: float, modes: np.ndarray, e_tr: float):
        cfg = self.config
        e = self.energy
        active = [0] * self.k
        pre = guard = 0
        recall_sum = 0.0
        trace = self.detections
        base = self.epoch * cfg.frames_per_epoch * cfg.epoch_stride
        for f in range(cfg.frames_per_epoch):
            is_guard = f == cfg.frames_per_epoch - 1
            _kernels_py.energy_frame(
                t0 + f * cfg.frame_dt, cfg.frame_dt, cfg.epoch_stride, is_guard, modes, e.e_op,
                e.f_raw * e_tr, e.e_det + e.f_proc * e_tr, e.e_max, e.restart_level, self._power,
                self._grid_t0, cfg.grid_dt, self.avail, self.powered, self.downtime,
                self.harvested, self.consumed, self.spilled, self.raw_tx, active)
            step = (base + f) % max(trace.n_steps, 1)
            det_modes = [0 if a == 1 else 1 if a == 2 else 2 for a in active]
            hit, n = trace.detections(step, det_modes, [a != 0 for a in active])
            recall_sum += 1.0 if n == 0 else hit / n
            if f == cfg.frames_per_epoch - 2:
                pre = hit
            if is_guard:
                guard = hit
        return pre, guard, recall_sum

    # -- bookkeeping -------------------------------------------------------
    def ledger_residual(self) -> np.ndarray:
        """Relative error of harvested - consumed - spilled = change in charge."""
        delta = self.avail - self.initial_avail
        lhs = self.harvested - self.consumed - self.spilled
        scale = np.maximum.reduce([np.abs(self.harvested), np.abs(self.consumed),
                                   np.full(self.k, self.energy.e_max)])
        return np.abs(lhs - delta) / scale


@dataclass
class EpochLog:
    """Columnar per-epoch record of an episode."""
    k: int
    capacity: int
    epoch: np.ndarray = field(init=False)
    day: np.ndarray = field(init=False)
    action: np.ndarray = field(init=False)
    guard_recall: np.ndarray = field(init=False)
    true_recall: np.ndarray = field(init=False)
    reward: np.ndarray = field(init=False)
    e_tr: np.ndarray = field(init=False)
    e_av: np.ndarray = field(init=False)
    downtime: np.ndarray = field(init=False)
    harvested: np.ndarray = field(init=False)
    n: int = 0

    def __post_init__(self):
        c = self.capacity
        self.epoch = np.zeros(c, dtype=np.int64)
        self.day = np.zeros(c, dtype=np.int64)
        self.action = np.zeros(c, dtype=np.int64)
        self.guard_recall = np.zeros(c)
        self.true_recall = np.zeros(c)
        self.reward = np.zeros(c)
        self.e_tr = np.zeros(c)
        self.e_av = np.zeros((c, self.k))
        self.downtime = np.zeros((c, self.k), dtype=np.int64)
        self.harvested = np.zeros((c, self.k))

    def append(self, o: EpochOutcome) -> None:
        i = self.n
        self.epoch[i] = o.epoch
        self.day[i] = o.day
        self.action[i] = o.action_index
        self.guard_recall[i] = o.guard_recall
        self.true_recall[i] = o.true_recall
        self.reward[i] = o.reward
        self.e_tr[i] = o.e_tr
        self.e_av[i] = o.e_av
        self.downtime[i] = o.downtime_steps
        self.harvested[i] = o.harvested
        self.n += 1

    def __len__(self):
        return self.n

    def trimmed(self) -> "EpochLog":
        out = EpochLog(self.k, 0)
        for name in ("epoch", "day", "action", "guard_recall", "true_recall", "reward",
                     "e_tr", "e_av", "downtime", "harvested"):
            setattr(out, name, getattr(self, name)[:self.n])
        out.n = self.n
        out.capacity = self.n
        return out

    def write_csv(self, path, header_comment: str | None = None) -> None:
        cols = (["epoch", "day", "action_index", "guard_recall", "true_recall", "reward"]
                + [f"e_av_{k}" for k in range(self.k)] + [f"downtime_{k}" for k in range(self.k)])
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write(",".join(cols) + "\n")
            for i in range(self.n):
                row = [str(self.epoch[i]), str(self.day[i]), str(self.action[i]),
                       repr(float(self.guard_recall[i])), repr(float(self.true_recall[i])),
                       repr(float(self.reward[i]))]
                row += [repr(float(v)) for v in self.e_av[i]]
                row += [str(int(v)) for v in self.downtime[i]]
                fh.write(",".join(row) + "\n")


def run_episode(env: CameraNetworkEnv, policy, horizon_epochs: int,
                on_epoch: Callable | None = None) -> EpochLog:
    """Roll ``policy`` forward for up to ``horizon_epochs`` decisions.

    The policy must provide ``act(env) -> index`` and may provide
    ``observe(state, action, reward, next_state, env)`` for learning. The
    episode ends early if the harvest trace runs out.
    """
    if horizon_epochs < 0:
        raise ValueError("horizon must be non-negative")
    log = EpochLog(env.k, min(horizon_epochs, env.remaining_epochs()))
    learn = getattr(policy, "observe", None)
    state = env.observe()
    for _ in range(horizon_epochs):
        if env.exhausted:
            break
        index = policy.act(env)
        next_state, outcome = env.step(index)
        if learn is not None:
            learn(state, index, outcome.reward, next_state, env)
        log.append(outcome)
        if on_epoch is not None:
            on_epoch(outcome)
        state = next_state
    return log.trimmed()


def epochs_per_day(config: EnvConfig) -> int:
    return int(math.ceil(DAY / config.epoch_span))

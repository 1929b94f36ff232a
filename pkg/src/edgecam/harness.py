"""Experiment orchestration: multi-seed runs, cost sweeps and report files."""
from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .dqn import TrainerConfig
from .energy import EnergyParams, load_trace, synth_solar_trace
from .environment import (DAY, CameraNetworkEnv, CostSchedule, EnvConfig, EpochLog,
                          epochs_per_day, run_episode)
from .gpforecast import DailyForecaster, ForecastWindow
from .policies import POLICY_NAMES, make_policy
from .world import SceneConfig, load_detection_trace

JOBS_ENV = "EDGECAM_JOBS"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    cameras: int = 2
    days: int = 15
    warmup_days_excluded: int = 3
    seeds: int = 5
    seed_base: int = 0
    policy: str = "dqn_gp"
    policies: str = "greedy,threshold,alternating,dqn,dqn_gp"
    # decision timing
    epoch_s: float = 1.0
    frame_rate: float = 10.0
    epoch_stride: int = 1
    # transmission cost, nJ per bit
    cost_mode: str = "static"
    e_tr_nj: float = 55.0
    dynamic_low_nj: float = 25.0
    dynamic_high_nj: float = 85.0
    # harvest traces: comma-separated CSV paths, empty for synthetic
    trace_paths: str = ""
    detection_trace: str = ""
    panels: int = 4
    panel_watts: float = 2.0
    voltage: float = 6.1
    sunrise_h: float = 6.5
    sunset_h: float = 19.5
    day_jitter: float = 0.3
    sample_noise: float = 0.03
    # energy model
    eta_eh: float = 0.8
    e_max: float = 185e3
    e_op: float = 0.139
    e_det: float = 57.48e-3
    f_raw: float = 2_097_152.0
    f_proc: float = 1024.0
    restart_frac: float = 0.05
    initial_charge: float = 0.5
    # scene and detectors
    arrival_rate: float = 0.2
    dwell_mean: float = 15.0
    overlap: float = 0.8
    solo_weights: str = ""
    target_recall: float = 0.99
    local_ratio: float = 0.75
    # reward
    energy_floor: float = 0.15
    energy_penalty: float = 50.0
    count_cap: int = 10
    # forecasting
    gp_fit_days: float = 7.0
    gp_horizon_h: float = 6.0
    gp_bin_min: float = 10.0
    # learning
    gamma: float = 0.95
    lr: float = 1e-3
    batch_size: int = 128
    soft_update_tau: float = 1e-3
    replay_capacity: int = 200_000
    warmup: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_days: float = 1.0
    dropout: float = 0.1
    updates_per_epoch: int = 1
    # output
    epoch_logs: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(ok, name, why):
            if not ok:
                raise ConfigError(f"{name}: {why}")
        need(self.cameras >= 1, "cameras", "must be >= 1")
        need(self.days >= 1, "days", "must be >= 1")
        need(0 <= self.warmup_days_excluded < self.days, "warmup_days_excluded",
             "must be non-negative and smaller than days")
        need(self.seeds >= 1, "seeds", "must be >= 1")
        need(self.policy in POLICY_NAMES, "policy", f"must be one of {', '.join(POLICY_NAMES)}")
        for p in self.policy_list:
            need(p in POLICY_NAMES, "policies", f"unknown policy {p!r}")
        need(self.epoch_s > 0 and self.frame_rate > 0, "epoch_s", "timing must be positive")
        need(round(self.epoch_s * self.frame_rate) >= 2, "frame_rate",
             "an epoch needs at least two frames")
        need(self.epoch_stride >= 1, "epoch_stride", "must be >= 1")
        need(self.cost_mode in ("static", "dynamic"), "cost_mode", "must be static or dynamic")
        need(self.e_tr_nj >= 0, "e_tr_nj", "must be non-negative")
        need(0 <= self.dynamic_low_nj < self.dynamic_high_nj, "dynamic_low_nj",
             "dynamic interval needs 0 <= low < high")
        need(0 < self.eta_eh <= 1, "eta_eh", "must lie in (0, 1]")
        need(self.e_max > 0, "e_max", "must be positive")
        need(self.f_raw > self.f_proc > 0, "f_raw", "need f_raw > f_proc > 0")
        need(0 <= self.initial_charge <= 1, "initial_charge", "must lie in [0, 1]")
        need(0 <= self.overlap <= 1, "overlap", "must lie in [0, 1]")
        need(self.dwell_mean > 0, "dwell_mean", "must be positive")
        need(0 < self.target_recall <= 1, "target_recall", "must lie in (0, 1]")
        need(0 <= self.local_ratio <= 1, "local_ratio", "must lie in [0, 1]")
        need(0 <= self.gamma < 1, "gamma", "must lie in [0, 1)")
        need(0 < self.soft_update_tau <= 1, "soft_update_tau", "must lie in (0, 1]")
        need(1 <= self.batch_size <= self.replay_capacity, "batch_size",
             "must lie in [1, replay_capacity]")
        need(self.updates_per_epoch >= 1, "updates_per_epoch", "must be >= 1")
        need(self.eps_decay_days > 0, "eps_decay_days", "must be positive")
        if self.trace_paths:
            need(len(self.trace_path_list) == self.cameras, "trace_paths",
                 f"expected {self.cameras} paths")
        if self.solo_weights:
            try:
                w = self.solo_weight_tuple
            except ValueError:
                raise ConfigError("solo_weights: expected comma-separated numbers") from None
            need(len(w) == self.cameras, "solo_weights", f"expected {self.cameras} weights")

    # -- derived views ------------------------------------------------------
    @property
    def policy_list(self) -> list[str]:
        return [p.strip() for p in self.policies.split(",") if p.strip()]

    @property
    def trace_path_list(self) -> list[str]:
        return [p.strip() for p in self.trace_paths.split(",") if p.strip()]

    @property
    def solo_weight_tuple(self) -> tuple:
        if not self.solo_weights:
            return (1.0,) * self.cameras
        return tuple(float(v) for v in self.solo_weights.split(","))

    @property
    def frames_per_epoch(self) -> int:
        return int(round(self.epoch_s * self.frame_rate))

    def energy_params(self) -> EnergyParams:
        return EnergyParams(eta_eh=self.eta_eh, e_max=self.e_max, e_op=self.e_op,
                            e_det=self.e_det, e_tr=self.e_tr_nj * 1e-9, f_raw=self.f_raw,
                            f_proc=self.f_proc, restart_frac=self.restart_frac)

    def scene_config(self) -> SceneConfig:
        return SceneConfig(self.arrival_rate, self.dwell_mean, self.overlap, self.solo_weight_tuple)

    def env_config(self) -> EnvConfig:
        return EnvConfig(frames_per_epoch=self.frames_per_epoch, frame_dt=1.0 / self.frame_rate,
                         epoch_stride=self.epoch_stride, energy_floor=self.energy_floor,
                         energy_penalty=self.energy_penalty, count_cap=self.count_cap,
                         initial_charge=self.initial_charge, target_recall=self.target_recall,
                         local_ratio=self.local_ratio)

    def trainer_config(self) -> TrainerConfig:
        per_day = epochs_per_day(self.env_config())
        return TrainerConfig(batch_size=self.batch_size, gamma=self.gamma,
                             soft_update_tau=self.soft_update_tau, lr=self.lr,
                             eps_start=self.eps_start, eps_end=self.eps_end,
                             eps_decay_steps=max(1, int(round(self.eps_decay_days * per_day))),
                             updates_per_train=self.updates_per_epoch, warmup=self.warmup,
                             replay_capacity=self.replay_capacity, dropout=self.dropout)

    def forecast_window(self) -> ForecastWindow:
        return ForecastWindow(self.gp_fit_days, self.gp_horizon_h, self.gp_bin_min)

    def cost_label(self) -> str:
        if self.cost_mode == "dynamic":
            return f"dynamic_{self.dynamic_low_nj:g}-{self.dynamic_high_nj:g}"
        return f"static_{self.e_tr_nj:g}"

    # -- text form ------------------------------------------------------------
    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(name: str, typ, text: str):
    text = text.strip()
    try:
        if typ in (bool, "bool"):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if typ in (int, "int"):
            v = float(text)
            if v != int(v):
                raise ValueError
            return int(v)
        if typ in (float, "float"):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {getattr(typ, '__name__', typ)}") from None


def parse_overrides(pairs) -> dict:
    """``["key=value", ...]`` to typed keyword arguments."""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, value = (s.strip() for s in pair.split("=", 1))
        if key not in types:
            raise ConfigError(f"{key}: unknown config key")
        out[key] = _coerce(key, types[key], value)
    return out


def load_config(path) -> ExperimentConfig:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    pairs = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        pairs.append(line)
    return ExperimentConfig(**parse_overrides(pairs))


# -- single runs -----------------------------------------------------------------


@dataclass
class SeedRun:
    policy: str
    seed: int
    cost_label: str
    days: np.ndarray            # day index per row
    recall: np.ndarray          # daily mean true recall
    downtime_min: np.ndarray    # (days, K) minutes powered off
    harvest_j: np.ndarray       # (days, K) joules harvested
    e_tr_nj: np.ndarray         # daily mean transmission cost
    log: EpochLog | None = None
    curve: list = field(default_factory=list)


def build_traces(cfg: ExperimentConfig, seed: int):
    if cfg.trace_paths:
        return [load_trace(p) for p in cfg.trace_path_list]
    history = int(math.ceil(cfg.gp_fit_days))
    return [synth_solar_trace(cfg.days, cfg.panels, cfg.panel_watts, seed, camera=k,
                              history_days=history, voltage=cfg.voltage, sunrise_h=cfg.sunrise_h,
                              sunset_h=cfg.sunset_h, jitter=cfg.day_jitter, noise=cfg.sample_noise)
            for k in range(cfg.cameras)]


def build_env(cfg: ExperimentConfig, policy: str, seed: int, traces=None) -> CameraNetworkEnv:
    traces = traces if traces is not None else build_traces(cfg, seed)
    energy = cfg.energy_params()
    if cfg.cost_mode == "dynamic":
        costs = CostSchedule(interval=(cfg.dynamic_low_nj * 1e-9, cfg.dynamic_high_nj * 1e-9), seed=seed)
    else:
        costs = CostSchedule(static=cfg.e_tr_nj * 1e-9)
    forecaster = None
    if policy == "dqn_gp":
        forecaster = DailyForecaster(traces, energy, cfg.forecast_window(),
                                     peak_watts=cfg.panels * cfg.panel_watts)
    detections = load_detection_trace(cfg.detection_trace) if cfg.detection_trace else None
    return CameraNetworkEnv(traces, energy, cfg.scene_config(), cfg.env_config(), seed=seed,
                            costs=costs, forecaster=forecaster, detections=detections,
                            start_time=0.0, end_time=cfg.days * DAY)


def daily_rows(log: EpochLog, frame_dt: float, n_days: int):
    days = np.arange(n_days)
    k = log.k
    recall = np.full(n_days, np.nan)
    down = np.zeros((n_days, k))
    harvest = np.zeros((n_days, k))
    etr = np.full(n_days, np.nan)
    for d in days:
        m = log.day == d
        if not m.any():
            continue
        recall[d] = float(np.mean(log.true_recall[m]))
        down[d] = log.downtime[m].sum(axis=0) * frame_dt / 60.0
        harvest[d] = log.harvested[m].sum(axis=0)
        etr[d] = float(np.mean(log.e_tr[m])) * 1e9
    return days, recall, down, harvest, etr


def run_single(cfg: ExperimentConfig, policy: str, seed: int) -> SeedRun:
    env = build_env(cfg, policy, seed)
    pol = make_policy(policy, env, seed, cfg.trainer_config())
    horizon = epochs_per_day(cfg.env_config()) * cfg.days
    log = run_episode(env, pol, horizon)
    days, recall, down, harvest, etr = daily_rows(log, 1.0 / cfg.frame_rate, cfg.days)
    curve = list(pol.agent.curve) if hasattr(pol, "agent") else []
    return SeedRun(policy, seed, cfg.cost_label(), days, recall, down, harvest, etr,
                   log if cfg.epoch_logs else None, curve)


# -- aggregation -----------------------------------------------------------------


@dataclass
class RunReport:
    policy: str
    cost_label: str
    config: ExperimentConfig
    runs: list

    def _eval(self, r: SeedRun):
        return r.days >= self.config.warmup_days_excluded

    def per_seed_recall(self) -> np.ndarray:
        return np.array([np.nanmean(r.recall[self._eval(r)]) for r in self.runs])

    def per_seed_downtime(self) -> np.ndarray:
        """Mean downtime minutes per camera-day over evaluated days."""
        return np.array([float(np.mean(r.downtime_min[self._eval(r)])) for r in self.runs])

    def per_seed_harvest(self) -> np.ndarray:
        return np.array([float(np.mean(r.harvest_j[self._eval(r)])) for r in self.runs])

    @property
    def recall_mean(self) -> float:
        return float(np.mean(self.per_seed_recall()))

    @property
    def recall_std(self) -> float:
        v = self.per_seed_recall()
        return float(np.std(v, ddof=1)) if v.size > 1 else 0.0

    @property
    def downtime_mean(self) -> float:
        return float(np.mean(self.per_seed_downtime()))

    @property
    def downtime_std(self) -> float:
        v = self.per_seed_downtime()
        return float(np.std(v, ddof=1)) if v.size > 1 else 0.0

    @property
    def downtime_total_min(self) -> float:
        return float(sum(np.sum(r.downtime_min[self._eval(r)]) for r in self.runs))

    def zero_downtime_fraction(self) -> float:
        days = [np.all(r.downtime_min[self._eval(r)] == 0, axis=1) for r in self.runs]
        flat = np.concatenate(days)
        return float(np.mean(flat)) if flat.size else float("nan")

    def daily_recall_matrix(self) -> np.ndarray:
        return np.vstack([r.recall for r in self.runs])


def _jobs() -> int:
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{JOBS_ENV}: expected a positive integer") from None


def _run_job(args):
    cfg, policy, seed = args
    return run_single(cfg, policy, seed)


def _run_jobs(jobs):
    n = _jobs()
    if n == 1 or len(jobs) == 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_run_job, jobs))


def _group(cfgs_policies, results) -> list[RunReport]:
    reports = []
    i = 0
    for cfg, policy, n in cfgs_policies:
        reports.append(RunReport(policy, cfg.cost_label(), cfg, results[i:i + n]))
        i += n
    return reports


def run_experiment(cfg: ExperimentConfig, policy: str | None = None) -> RunReport:
    policy = policy or cfg.policy
    seeds = [cfg.seed_base + s for s in range(cfg.seeds)]
    results = _run_jobs([(cfg, policy, s) for s in seeds])
    return RunReport(policy, cfg.cost_label(), cfg, results)


def _many(cfgs, policies) -> list[RunReport]:
    plan, jobs = [], []
    for cfg in cfgs:
        for p in policies:
            seeds = [cfg.seed_base + s for s in range(cfg.seeds)]
            plan.append((cfg, p, len(seeds)))
            jobs += [(cfg, p, s) for s in seeds]
    return _group(plan, _run_jobs(jobs))


def sweep_static_cost(base: ExperimentConfig, e_tr_values, policies=None) -> list[RunReport]:
    values = list(e_tr_values)
    if len(values) < 2:
        raise ConfigError("costs: need at least two cost points")
    policies = policies or base.policy_list
    cfgs = [replace(base, cost_mode="static", e_tr_nj=float(v)) for v in values]
    return _many(cfgs, policies)


def run_dynamic_cost(base: ExperimentConfig, policies=None) -> list[RunReport]:
    policies = policies or base.policy_list
    return _many([replace(base, cost_mode="dynamic")], policies)


# -- report emission ----------------------------------------------------------------


def _header(cfg: ExperimentConfig, extra: str = "") -> str:
    return f"config_hash={cfg.config_hash()}" + (f" {extra}" if extra else "")


def _num(v) -> str:
    return repr(float(v))


def emit_report(reports, out_dir, plots: bool = True) -> list[Path]:
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    base = reports[0].config
    k = base.cameras

    p = out / "summary.csv"
    with p.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {_header(base, 'std=sample(n-1) over seeds; downtime in minutes per camera-day')}\n")
        fh.write("policy,cost,seeds,recall_mean,recall_std,downtime_min_mean,downtime_min_std,"
                 "zero_downtime_day_frac,harvest_j_per_day\n")
        for r in reports:
            fh.write(",".join([r.policy, r.cost_label, str(len(r.runs)), _num(r.recall_mean),
                               _num(r.recall_std), _num(r.downtime_mean), _num(r.downtime_std),
                               _num(r.zero_downtime_fraction()),
                               _num(np.mean(r.per_seed_harvest()))]) + "\n")
    written.append(p)

    p = out / "daily.csv"
    with p.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {_header(base)}\n")
        cols = (["policy", "cost", "seed", "day", "recall"] + [f"downtime_min_{c}" for c in range(k)]
                + [f"harvest_j_{c}" for c in range(k)] + ["mean_e_tr_nj"])
        fh.write(",".join(cols) + "\n")
        for r in reports:
            for run in r.runs:
                for i, d in enumerate(run.days):
                    row = [r.policy, r.cost_label, str(run.seed), str(int(d)), _num(run.recall[i])]
                    row += [_num(v) for v in run.downtime_min[i]]
                    row += [_num(v) for v in run.harvest_j[i]]
                    row.append(_num(run.e_tr_nj[i]))
                    fh.write(",".join(row) + "\n")
    written.append(p)

    for r in reports:
        for run in r.runs:
            stem = f"{r.policy}_{r.cost_label}_seed{run.seed}"
            if run.log is not None:
                p = out / "epochs" / f"{stem}.csv"
                p.parent.mkdir(exist_ok=True)
                run.log.write_csv(p, _header(r.config))
                written.append(p)
            if run.curve:
                p = out / "curves" / f"{stem}.csv"
                p.parent.mkdir(exist_ok=True)
                with p.open("w", encoding="utf-8", newline="") as fh:
                    fh.write(f"# {_header(r.config)}\n")
                    fh.write("step,loss,epsilon,mean_q\n")
                    for step, loss, eps, mq in run.curve:
                        fh.write(f"{int(step)},{loss!r},{eps!r},{mq!r}\n")
                written.append(p)
    if plots:
        from . import plots as _plots
        written += _plots.emit_plots(reports, out)
    return written

"""Harvesting, storage and consumption model for a single camera.

All energies are joules, currents amperes, voltages volts and times seconds.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import IntEnum
from pathlib import Path

import numpy as np


class CameraMode(IntEnum):
    TRANSMIT_RAW = 0
    DETECT_LOCAL = 1
    STANDBY = 2


class TraceError(ValueError):
    """Raised when a harvest trace cannot be loaded."""


@dataclass(frozen=True)
class HarvestSample:
    timestamp: float
    current: float
    voltage: float


@dataclass(frozen=True)
class EnergyParams:
    eta_eh: float = 0.8
    e_max: float = 185e3
    e_op: float = 0.139
    e_det: float = 57.48e-3
    e_tr: float = 55e-9
    # 256 KiB compressed frame; raw-vs-local cost ordering flips near 27 nJ/bit
    f_raw: float = 2_097_152.0
    f_proc: float = 1024.0
    restart_frac: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.eta_eh <= 1.0:
            raise ValueError("eta_eh must lie in (0, 1]")
        if self.e_max <= 0:
            raise ValueError("e_max must be positive")
        if not self.f_raw > self.f_proc > 0:
            raise ValueError("need f_raw > f_proc > 0")
        for name in ("e_op", "e_det", "e_tr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def restart_level(self) -> float:
        return self.restart_frac * self.e_max


@dataclass(frozen=True)
class BatteryState:
    available: float
    downtime_steps: int = 0
    powered: bool = True


def harvest_energy(sample: HarvestSample, params: EnergyParams, dt: float) -> float:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return max(0.0, params.eta_eh * sample.current * sample.voltage * dt)


def consumption_for_mode(mode: CameraMode, params: EnergyParams, e_tr_now: float | None = None) -> float:
    """Energy drawn by a powered camera during one frame in ``mode``."""
    e_tr = params.e_tr if e_tr_now is None else e_tr_now
    mode = CameraMode(mode)
    if mode is CameraMode.TRANSMIT_RAW:
        return params.e_op + params.f_raw * e_tr
    if mode is CameraMode.DETECT_LOCAL:
        return params.e_op + params.e_det + params.f_proc * e_tr
    return params.e_op


def apply_step(battery: BatteryState, harvested: float, consumed: float,
               params: EnergyParams) -> BatteryState:
    """Advance a battery by one frame.

    A camera that starts the frame switched off draws nothing; it powers back
    on at the start of a frame once its charge reaches ``params.restart_level``.
    If the draw cannot be funded the battery empties and the camera shuts down
    for this frame, which counts as downtime.
    """
    if harvested < 0 or consumed < 0:
        raise ValueError("harvested and consumed must be non-negative")
    powered = battery.powered or battery.available >= params.restart_level
    if not powered:
        return replace(battery,
                       available=min(battery.available + harvested, params.e_max),
                       downtime_steps=battery.downtime_steps + 1)
    level = battery.available + harvested - consumed
    if level <= 0.0:
        return BatteryState(0.0, battery.downtime_steps + 1, False)
    return BatteryState(min(level, params.e_max), battery.downtime_steps, True)


class HarvestTrace:
    """Piecewise-linear harvest trace for one camera."""

    def __init__(self, t: np.ndarray, current: np.ndarray, voltage: np.ndarray):
        t = np.asarray(t, dtype=float)
        current = np.asarray(current, dtype=float)
        voltage = np.asarray(voltage, dtype=float)
        if t.size == 0:
            raise TraceError("no samples")
        if not (t.shape == current.shape == voltage.shape):
            raise TraceError("column lengths differ")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise TraceError("timestamps must be strictly increasing")
        if np.any(current < 0) or np.any(voltage < 0):
            raise TraceError("current and voltage must be non-negative")
        self.t = t
        self.current = current
        self.voltage = voltage

    @classmethod
    def from_samples(cls, samples) -> "HarvestTrace":
        samples = list(samples)
        return cls(np.array([s.timestamp for s in samples], dtype=float),
                   np.array([s.current for s in samples], dtype=float),
                   np.array([s.voltage for s in samples], dtype=float))

    def __len__(self):
        return self.t.size

    def samples(self) -> list[HarvestSample]:
        return [HarvestSample(float(a), float(b), float(c))
                for a, b, c in zip(self.t, self.current, self.voltage)]

    @property
    def start(self) -> float:
        return float(self.t[0])

    @property
    def end(self) -> float:
        return float(self.t[-1])

    def at(self, when) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated (current, voltage); held constant outside the trace."""
        when = np.asarray(when, dtype=float)
        return (np.interp(when, self.t, self.current),
                np.interp(when, self.t, self.voltage))

    def sample(self, when: float) -> HarvestSample:
        i, u = self.at(when)
        return HarvestSample(float(when), float(i), float(u))

    def power(self, when, eta_eh: float) -> np.ndarray:
        """Harvested power in watts, i.e. eta * I * U."""
        i, u = self.at(when)
        return eta_eh * i * u

    def window(self, t0: float, t1: float) -> "HarvestTrace":
        mask = (self.t >= t0) & (self.t < t1)
        return HarvestTrace(self.t[mask], self.current[mask], self.voltage[mask])


def load_trace(path) -> HarvestTrace:
    """Read a ``t_seconds,current_a,voltage_v`` CSV."""
    path = Path(path)
    if not path.exists():
        raise TraceError(f"trace file not found: {path}")
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceError("no samples")
        header = [h.strip() for h in header]
        if header != ["t_seconds", "current_a", "voltage_v"]:
            raise TraceError(f"line 1: unexpected header {','.join(header)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise TraceError(f"line {lineno}: expected 3 fields, got {len(row)}")
            try:
                t, i, u = (float(c) for c in row)
            except ValueError:
                raise TraceError(f"line {lineno}: non-numeric field") from None
            if not all(math.isfinite(v) for v in (t, i, u)):
                raise TraceError(f"line {lineno}: non-finite value")
            if i < 0 or u < 0:
                raise TraceError(f"line {lineno}: negative current or voltage")
            if rows and t <= rows[-1][0]:
                raise TraceError(f"line {lineno}: timestamps not strictly increasing")
            rows.append((t, i, u))
    if not rows:
        raise TraceError("no samples")
    arr = np.array(rows, dtype=float)
    return HarvestTrace(arr[:, 0], arr[:, 1], arr[:, 2])


def write_trace(trace: HarvestTrace, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_seconds", "current_a", "voltage_v"])
        for t, i, u in zip(trace.t, trace.current, trace.voltage):
            w.writerow([repr(float(t)), repr(float(i)), repr(float(u))])


DAY = 86400.0


def synth_solar_trace(days: int, panels: int = 4, panel_watts: float = 2.0, seed: int = 0, *,
                      camera: int = 0, history_days: int = 0, voltage: float = 6.1,
                      sunrise_h: float = 6.5, sunset_h: float = 19.5, jitter: float = 0.3,
                      noise: float = 0.03, sample_dt: float = 60.0) -> HarvestTrace:
    """Half-sine diurnal harvest trace.

    Peak electrical power on an undisturbed day is ``panels * panel_watts``.
    Daily amplitude factors ``1 + jitter * U(-1, 1)`` depend only on ``seed``
    so every camera sees the same weather; per-sample multiplicative noise is
    drawn per camera. Time zero is local midnight of the first simulated
    day; ``history_days`` extra days are prepended at negative times.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    if not 0 <= sunrise_h < sunset_h <= 24:
        raise ValueError("need 0 <= sunrise_h < sunset_h <= 24")
    n_days = days + history_days
    weather = np.random.default_rng([seed, 0x5EA])
    amp = 1.0 + jitter * weather.uniform(-1.0, 1.0, size=n_days)
    sample_rng = np.random.default_rng([seed, 0xCA3, camera])

    t = np.arange(0.0, n_days * DAY + sample_dt / 2, sample_dt)
    day_idx = np.minimum((t // DAY).astype(int), n_days - 1)
    hour = (t - day_idx * DAY) / 3600.0
    phase = (hour - sunrise_h) / (sunset_h - sunrise_h)
    lit = (phase > 0.0) & (phase < 1.0)
    i_peak = panels * panel_watts / voltage
    shape = np.where(lit, np.sin(np.pi * np.clip(phase, 0.0, 1.0)), 0.0)
    current = i_peak * amp[day_idx] * shape
    if noise > 0:
        current = current * np.maximum(0.0, 1.0 + noise * sample_rng.standard_normal(t.size))
    current[~lit] = 0.0
    return HarvestTrace(t - history_days * DAY, current, np.full(t.size, voltage))


def half_sine_day_charge(panels: int, panel_watts: float, voltage: float,
                         sunrise_h: float, sunset_h: float) -> float:
    """Closed-form ampere-seconds delivered on a jitter-free day."""
    i_peak = panels * panel_watts / voltage
    return i_peak * 2.0 / np.pi * (sunset_h - sunrise_h) * 3600.0

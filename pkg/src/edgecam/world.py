"""Ground-truth scene objects, stochastic detectors and recall.

Objects are identified by integers. Each object carries a visibility mask
(bit k set when camera k can see it) that is fixed at arrival. The random
draw order here is mirrored exactly by the epoch kernels, so a scene driven
through :func:`advance_scene` with the same generator reproduces the kernel's
ground truth.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorProfile:
    p_detect: float
    name: str = "cloud"

    def __post_init__(self):
        if not 0.0 <= self.p_detect <= 1.0:
            raise ValueError("p_detect must lie in [0, 1]")


@dataclass(frozen=True)
class SceneConfig:
    arrival_rate: float = 0.2
    dwell_mean: float = 15.0
    overlap: float = 0.8
    solo_weights: tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        if self.arrival_rate < 0:
            raise ValueError("arrival_rate must be non-negative")
        if self.dwell_mean <= 0:
            raise ValueError("dwell_mean must be positive")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")
        if len(self.solo_weights) == 0 or min(self.solo_weights) < 0 or sum(self.solo_weights) <= 0:
            raise ValueError("solo_weights must be non-negative with a positive sum")

    @property
    def n_cameras(self) -> int:
        return len(self.solo_weights)

    def solo_cdf(self) -> np.ndarray:
        w = np.asarray(self.solo_weights, dtype=float)
        cdf = np.cumsum(w / w.sum())
        cdf[-1] = 1.0
        return cdf


@dataclass(frozen=True)
class WorldFrame:
    step: int
    masks: dict = field(default_factory=dict)  # object id -> visibility bitmask
    next_id: int = 0

    @property
    def ground_truth(self) -> frozenset:
        return frozenset(self.masks)

    def visible(self, camera: int) -> frozenset:
        bit = 1 << camera
        return frozenset(i for i, m in self.masks.items() if m & bit)

    def correlated(self, n_cameras: int) -> frozenset:
        full = (1 << n_cameras) - 1
        return frozenset(i for i, m in self.masks.items() if m & full == full)


def poisson_knuth(lam: float, uniform) -> int:
    """Poisson draw consuming uniforms from ``uniform()``.

    Large means are split into chunks of at most 30 so ``exp(-lam)`` never
    underflows.
    """
    total = 0
    while lam > 0.0:
        chunk = min(lam, 30.0)
        lam -= chunk
        limit = math.exp(-chunk)
        p = uniform()
        while p > limit:
            total += 1
            p *= uniform()
    return total


def arrival_mean(cfg: SceneConfig, duration: float, frame_dt: float) -> float:
    """Expected number of arrivals still present after ``duration`` seconds."""
    if duration <= frame_dt * (1 + 1e-9):
        return cfg.arrival_rate * duration
    return cfg.arrival_rate * cfg.dwell_mean * -math.expm1(-duration / cfg.dwell_mean)


def draw_mask(cfg: SceneConfig, uniform) -> int:
    k = cfg.n_cameras
    if uniform() < cfg.overlap:
        return (1 << k) - 1
    u = uniform()
    cdf = cfg.solo_cdf()
    cam = int(np.searchsorted(cdf, u, side="right"))
    return 1 << min(cam, k - 1)


def advance_scene(frame: WorldFrame, cfg: SceneConfig, rng: np.random.Generator,
                  dt: float = 0.1, duration: float | None = None) -> WorldFrame:
    """Move the scene forward by one frame (or by ``duration`` seconds)."""
    duration = dt if duration is None else duration
    uniform = rng.random
    p_leave = -math.expm1(-duration / cfg.dwell_mean)
    masks = {i: m for i, m in sorted(frame.masks.items()) if not uniform() < p_leave}
    next_id = frame.next_id
    for _ in range(poisson_knuth(arrival_mean(cfg, duration, dt), uniform)):
        masks[next_id] = draw_mask(cfg, uniform)
        next_id += 1
    return WorldFrame(frame.step + 1, masks, next_id)


def detect(frame: WorldFrame, camera: int, profile: DetectorProfile | None,
           rng: np.random.Generator) -> frozenset:
    """Objects camera ``camera`` reports; ``profile=None`` means no image."""
    if profile is None:
        return frozenset()
    bit = 1 << camera
    return frozenset(i for i, m in sorted(frame.masks.items())
                     if m & bit and rng.random() < profile.p_detect)


def recall(detected_union, ground_truth) -> float:
    ground_truth = set(ground_truth)
    if not ground_truth:
        return 1.0
    return len(set(detected_union) & ground_truth) / len(ground_truth)


def union_recall_given_visibility(p: float, n_visible: np.ndarray) -> float:
    return float(np.mean(1.0 - (1.0 - p) ** n_visible))


def calibrate_cloud_detector(cfg: SceneConfig, k_cameras: int | None = None,
                             target_recall: float = 0.99, seed: int = 0,
                             n_draws: int = 200_000, tol: float = 1e-10) -> DetectorProfile:
    """Per-object hit rate giving ``target_recall`` when every camera offloads.

    Visibility patterns are sampled by Monte Carlo; the union detection
    probability for a given pattern is evaluated exactly, which keeps the
    estimate monotone in ``p`` so bisection converges cleanly.
    """
    k = cfg.n_cameras if k_cameras is None else k_cameras
    if k != cfg.n_cameras:
        raise CalibrationError(f"scene has {cfg.n_cameras} cameras, asked for {k}")
    if not 0.0 < target_recall <= 1.0:
        raise CalibrationError("target_recall must lie in (0, 1]")
    rng = np.random.default_rng([seed, 0xCA1])
    shared = rng.random(n_draws) < cfg.overlap
    n_visible = np.where(shared, k, 1).astype(float)
    ceiling = union_recall_given_visibility(1.0, n_visible)
    if target_recall > ceiling + 1e-12:
        raise CalibrationError(f"target {target_recall} exceeds reachable recall {ceiling:.6f}")
    if target_recall >= ceiling:
        return DetectorProfile(1.0, "cloud")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if union_recall_given_visibility(mid, n_visible) < target_recall:
            lo = mid
        else:
            hi = mid
    return DetectorProfile(0.5 * (lo + hi), "cloud")


@dataclass(frozen=True)
class DetectionRecord:
    t_step: int
    object_id: int
    camera_mask: int
    detected_cloud: int
    detected_local: int


class DetectionTrace:
    """Replayable detection log keyed by frame index.

    ``detected_cloud`` and ``detected_local`` are camera bitmasks: bit k set
    means camera k's image yields the object under that detector.
    """

    def __init__(self, records):
        self.by_step: dict[int, list[DetectionRecord]] = {}
        for r in records:
            self.by_step.setdefault(r.t_step, []).append(r)
        self.n_steps = (max(self.by_step) + 1) if self.by_step else 0

    def frame(self, step: int) -> list[DetectionRecord]:
        return self.by_step.get(step, [])

    def detections(self, step: int, modes, active) -> tuple[int, int]:
        """(|union detected|, |ground truth|) at ``step`` for per-camera modes.

        ``modes[k]`` is 0 for cloud, 1 for local and anything else for no
        image; ``active[k]`` false means the camera produced nothing.
        """
        recs = self.frame(step)
        hit = 0
        for r in recs:
            found = 0
            for k, m in enumerate(modes):
                if not active[k]:
                    continue
                if m == 0:
                    found |= r.detected_cloud & (1 << k)
                elif m == 1:
                    found |= r.detected_local & (1 << k)
            hit += bool(found & r.camera_mask)
        return hit, len(recs)


def load_detection_trace(path) -> DetectionTrace:
    path = Path(path)
    expected = ["t_step", "object_id", "camera_mask", "detected_cloud", "detected_local"]
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != expected:
            raise ValueError(f"line 1: expected header {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [int(c) for c in row]
            except ValueError:
                raise ValueError(f"line {lineno}: non-integer field") from None
            if len(vals) != 5 or min(vals) < 0:
                raise ValueError(f"line {lineno}: expected 5 non-negative integers")
            records.append(DetectionRecord(*vals))
    return DetectionTrace(records)

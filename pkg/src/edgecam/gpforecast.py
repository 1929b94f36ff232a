"""Periodic Gaussian-process forecasts of harvesting current.

The kernel is a 24 h periodic kernel plus white noise. Training data are bin
means of the last seven days. When the bins form a complete regular grid that
tiles whole periods, the covariance is a Kronecker product of an all-ones
matrix and a circulant matrix, so likelihood and prediction reduce to FFTs.
Other inputs go through a dense Cholesky factorization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .energy import EnergyParams, HarvestTrace

PERIOD_H = 24.0
DAY = 86400.0
HOUR = 3600.0
_JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
_FLOOR = 1e-8


class FactorizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyper:
    sigma_p2: float
    lengthscale: float
    sigma_n2: float
    period: float = PERIOD_H

    def __post_init__(self):
        if min(self.sigma_p2, self.lengthscale, self.sigma_n2, self.period) <= 0:
            raise ValueError("hyperparameters must be positive")


@dataclass(frozen=True)
class ForecastWindow:
    fit_days: float = 7.0
    horizon_h: float = 6.0
    bin_min: float = 10.0
    refit_days: float = 1.0

    def __post_init__(self):
        if self.bin_min <= 0:
            raise ValueError("bin_min must be positive")
        if self.fit_days * 24.0 < self.horizon_h:
            raise ValueError("fit span must cover at least the horizon")


def periodic(lag, hp: Hyper):
    s = np.sin(np.pi * np.abs(lag) / hp.period)
    return hp.sigma_p2 * np.exp(-2.0 * s * s / hp.lengthscale ** 2)


def kernel(t1, t2, hp: Hyper):
    """Covariance between times in hours; the noise term applies where t1 == t2."""
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    return periodic(t1 - t2, hp) + hp.sigma_n2 * (t1 == t2)


def kernel_matrix(x, hp: Hyper, noise: bool = True) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    k = periodic(x[:, None] - x[None, :], hp)
    if noise:
        k[np.diag_indices_from(k)] += hp.sigma_n2
    return k


def bin_means(t_seconds, values, bin_s: float, t0: float, t1: float):
    """Means of ``values`` in bins of ``bin_s`` on [t0, t1); empty bins dropped.

    Returns (bin centres in hours, means).
    """
    t = np.asarray(t_seconds, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = (t >= t0) & (t < t1)
    n_bins = int(round((t1 - t0) / bin_s))
    idx = np.minimum(((t[keep] - t0) // bin_s).astype(np.int64), n_bins - 1)
    sums = np.bincount(idx, weights=v[keep], minlength=n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    ok = counts > 0
    centres = t0 + (np.arange(n_bins) + 0.5) * bin_s
    return centres[ok] / HOUR, sums[ok] / counts[ok]


def _grid_shape(x, period: float):
    """(D, M) if ``x`` is a regular grid covering whole periods, else None."""
    n = x.size
    if n < 2:
        return None
    step = (x[-1] - x[0]) / (n - 1)
    if step <= 0 or not np.allclose(np.diff(x), step, rtol=0, atol=1e-9 * max(1.0, abs(x[-1]))):
        return None
    m = period / step
    if abs(m - round(m)) > 1e-9 or round(m) < 1:
        return None
    m = int(round(m))
    if n % m:
        return None
    return n // m, m


def _fft_terms(x, y, hp: Hyper, shape):
    d, m = shape
    step = (x[-1] - x[0]) / (x.size - 1)
    lam = np.fft.rfft(periodic(np.arange(m) * step, hp)).real
    sig = hp.sigma_n2
    eig = d * lam + sig
    yr = y.reshape(d, m)
    ybar = yr.mean(axis=0)
    resid = yr - ybar
    fy = np.fft.rfft(ybar)
    u = np.fft.irfft(fy / eig, n=m)
    return d, m, lam, eig, ybar, resid, u


def _fft_loglik(x, y, hp: Hyper, shape) -> float:
    d, m, lam, eig, ybar, resid, u = _fft_terms(x, y, hp, shape)
    if np.any(eig <= 0):
        return -np.inf
    # rfft bins 1..ceil(m/2)-1 stand for two conjugate eigenvalues each
    w = np.full(eig.size, 2.0)
    w[0] = 1.0
    if m % 2 == 0:
        w[-1] = 1.0
    logdet = float(np.sum(w * np.log(eig))) + m * (d - 1) * math.log(hp.sigma_n2)
    quad = d * float(ybar @ u) + float(np.sum(resid * resid)) / hp.sigma_n2
    return -0.5 * (quad + logdet + x.size * math.log(2.0 * math.pi))


def _dense_factor(x, hp: Hyper):
    k = kernel_matrix(x, hp)
    scale = max(1.0, float(np.mean(np.diag(k))))
    for jitter in _JITTERS:
        try:
            kj = k if jitter == 0.0 else k + jitter * scale * np.eye(x.size)
            return cho_factor(kj, lower=True, check_finite=False), jitter
        except LinAlgError:
            continue
    raise FactorizationError("kernel matrix not positive definite even with 1e-4 jitter")


def log_marginal_likelihood(x, y, hp: Hyper, method: str = "auto") -> float:
    """Gaussian log evidence of centred targets ``y`` at inputs ``x`` (hours)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = _grid_shape(x, hp.period) if method in ("auto", "fft") else None
    if method == "fft" and shape is None:
        raise ValueError("inputs are not a whole-period regular grid")
    if shape is not None:
        return _fft_loglik(x, y, hp, shape)
    try:
        (c, lower), _ = _dense_factor(x, hp)
    except FactorizationError:
        return -np.inf
    alpha = cho_solve((c, lower), y, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    return -0.5 * (float(y @ alpha) + logdet + x.size * math.log(2.0 * math.pi))


@dataclass
class GpModel:
    hp: Hyper
    x: np.ndarray
    y: np.ndarray
    y_mean: float
    route: str
    jitter: float = 0.0
    log_likelihood: float = float("nan")
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.route == "fft":
            shape = _grid_shape(self.x, self.hp.period)
            d, m, lam, eig, ybar, resid, u = _fft_terms(self.x, self.y, self.hp, shape)
            self._cache.update(d=d, m=m, eig=eig, u=u, x0=self.x[0],
                               step=(self.x[-1] - self.x[0]) / (self.x.size - 1))
        else:
            factor, jitter = _dense_factor(self.x, self.hp)
            self.jitter = jitter
            self._cache.update(factor=factor, alpha=cho_solve(factor, self.y, check_finite=False))

    def predict(self, query_hours, include_noise: bool = False):
        """Posterior mean and variance at ``query_hours``."""
        q = np.atleast_1d(np.asarray(query_hours, dtype=float))
        c = self._cache
        hp = self.hp
        if self.route == "fft":
            d, m = c["d"], c["m"]
            grid = c["x0"] + np.arange(m) * c["step"]
            kstar = periodic(q[:, None] - grid[None, :], hp)
            mean = d * kstar @ c["u"]
            fk = np.fft.rfft(kstar, axis=1)
            solved = np.fft.irfft(fk / c["eig"], n=m, axis=1)
            var = hp.sigma_p2 - d * np.sum(kstar * solved, axis=1)
        else:
            kstar = periodic(q[:, None] - self.x[None, :], hp)
            mean = kstar @ c["alpha"]
            v = cho_solve(c["factor"], kstar.T, check_finite=False)
            var = hp.sigma_p2 - np.sum(kstar * v.T, axis=1)
        var = np.maximum(var, 0.0)
        if include_noise:
            var = var + hp.sigma_n2
        return mean + self.y_mean, var


def _bounds(v: float):
    return {
        "sigma_p2": (_FLOOR, max(10.0 * v, 1e-6)),
        "lengthscale": (0.05, 20.0),
        "sigma_n2": (_FLOOR, max(10.0 * v, 1e-6)),
    }


def fit_points(x_hours, y, period: float = PERIOD_H, method: str = "auto") -> GpModel:
    """Maximum-evidence fit on already binned data.

    Multi-start coordinate search in log space: a coarse grid picks the three
    best starts, then each coordinate is nudged with shrinking steps.
    """
    x = np.asarray(x_hours, dtype=float)
    y_raw = np.asarray(y, dtype=float)
    if x.size < 2 or np.unique(x).size < 2:
        raise ValueError("need at least two distinct sample times")
    order = np.argsort(x, kind="stable")
    x = x[order]
    y_raw = y_raw[order]
    y_mean = float(np.mean(y_raw))
    yc = y_raw - y_mean
    v = float(np.var(yc))
    bounds = _bounds(v)
    names = ("sigma_p2", "lengthscale", "sigma_n2")
    route = "fft" if method in ("auto", "fft") and _grid_shape(x, period) is not None else "dense"
    if method == "fft" and route != "fft":
        raise ValueError("inputs are not a whole-period regular grid")
    lo = np.log([bounds[n][0] for n in names])
    hi = np.log([bounds[n][1] for n in names])

    def score(theta):
        theta = np.clip(theta, lo, hi)
        hp = Hyper(*(float(v) for v in np.exp(theta)), period=period)
        return log_marginal_likelihood(x, yc, hp, "fft" if route == "fft" else "dense")

    if v <= _FLOOR:
        best = np.array([lo[0], 0.0, lo[2]])
    else:
        grid = [(math.log(v * a), math.log(l), math.log(v * b))
                for a in (0.1, 1.0, 10.0) for l in (0.1, 0.3, 1.0, 3.0) for b in (1e-4, 1e-2, 1e-1)]
        starts = sorted(((score(np.array(g)), i, np.clip(np.array(g), lo, hi))
                         for i, g in enumerate(grid)), key=lambda s: (-s[0], s[1]))[:3]
        best, best_s = None, -np.inf
        for s0, _, theta in starts:
            s = s0
            step = 1.0
            while step > 1e-3:
                improved = False
                for j in range(3):
                    for sign in (1.0, -1.0):
                        cand = theta.copy()
                        cand[j] = np.clip(cand[j] + sign * step, lo[j], hi[j])
                        sc = score(cand)
                        if sc > s:
                            theta, s, improved = cand, sc, True
                            break
                if not improved:
                    step *= 0.5
            if s > best_s:
                best, best_s = theta, s
    hp = Hyper(*(float(v) for v in np.exp(best)), period=period)
    return GpModel(hp, x, yc, y_mean, route, log_likelihood=score(best))


def fit(t_seconds, current, window: ForecastWindow, t_end: float, period: float = PERIOD_H) -> GpModel:
    """Fit on the ``window.fit_days`` before ``t_end`` after binning."""
    t0 = t_end - window.fit_days * DAY
    x, y = bin_means(t_seconds, current, window.bin_min * 60.0, t0, t_end)
    return fit_points(x, y, period)


def predict(model: GpModel, query_hours, include_noise: bool = False):
    return model.predict(query_hours, include_noise)


def forecast_energy(model: GpModel, now_s: float, horizon_h: float, voltage: float,
                    eta: float, bin_min: float = 10.0) -> float:
    """Predicted harvest in joules over [now, now + horizon]; negative current counts as 0."""
    n = max(1, int(math.ceil(horizon_h * 60.0 / bin_min)))
    ts = now_s + np.linspace(0.0, horizon_h * HOUR, n + 1)
    mean, _ = model.predict(ts / HOUR)
    return float(np.trapezoid(np.maximum(mean, 0.0) * voltage * eta, ts))


def max_harvest(horizon_h: float, peak_watts: float, eta: float) -> float:
    return eta * peak_watts * horizon_h * HOUR


def forecast_feature(model: GpModel, now_s: float, params: EnergyParams, horizon_h: float = 6.0,
                     voltage: float = 6.1, peak_watts: float = 8.0, bin_min: float = 10.0) -> float:
    """Forecast harvest over the horizon normalized to [0, 1]."""
    e = forecast_energy(model, now_s, horizon_h, voltage, params.eta_eh, bin_min)
    return float(np.clip(e / max_harvest(horizon_h, peak_watts, params.eta_eh), 0.0, 1.0))


class DailyForecaster:
    """Per-camera forecasts refitted once per simulated day.

    After each refit the predicted harvest is integrated over the day plus
    one horizon, so looking up a feature is two interpolations.
    """

    def __init__(self, traces, params: EnergyParams | None = None,
                 window: ForecastWindow | None = None, peak_watts: float = 8.0,
                 origin: float = 0.0):
        self.traces = list(traces)
        self.params = params or EnergyParams()
        self.window = window or ForecastWindow()
        self.peak_watts = peak_watts
        self.origin = origin
        self.norm = max_harvest(self.window.horizon_h, peak_watts, self.params.eta_eh)
        self.day = None
        self.fits = 0
        self.models: list[GpModel | None] = []
        self._grid_t0 = 0.0
        self._step = self.window.bin_min * 60.0
        self._cum: list[np.ndarray] = []
        self._out = np.zeros(len(self.traces))

    def _refit(self, day: int) -> None:
        w = self.window
        day_start = self.origin + day * DAY
        n = int(math.ceil((DAY + w.horizon_h * HOUR) / self._step))
        ts = day_start + np.arange(n + 1) * self._step
        self._grid_t0 = day_start
        self.models, self._cum = [], []
        for tr in self.traces:
            x, y = bin_means(tr.t, tr.current, self._step, day_start - w.fit_days * DAY, day_start)
            model = None
            if x.size >= 2 and np.unique(x).size >= 2:
                model = fit_points(x, y)
            self.models.append(model)
            if model is None:
                # no history yet: the feature stays at zero
                self._cum.append(np.zeros(ts.size))
                continue
            mask = (tr.t >= day_start - w.fit_days * DAY) & (tr.t < day_start)
            volt = float(np.mean(tr.voltage[mask])) if mask.any() else 6.1
            mean, _ = model.predict(ts / HOUR)
            p = np.maximum(mean, 0.0) * volt * self.params.eta_eh
            cum = np.concatenate(([0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * self._step)))
            self._cum.append(cum)
        self.day = day
        self.fits += 1

    def _cum_at(self, cum, t):
        x = (t - self._grid_t0) / self._step
        i = min(max(int(x), 0), cum.size - 2)
        f = min(max(x - i, 0.0), 1.0)
        return cum[i] + f * (cum[i + 1] - cum[i])

    def features(self, t: float) -> np.ndarray:
        day = int((t - self.origin) // DAY)
        if day != self.day:
            self._refit(day)
        h = self.window.horizon_h * HOUR
        out = self._out
        for k, cum in enumerate(self._cum):
            e = self._cum_at(cum, t + h) - self._cum_at(cum, t)
            out[k] = min(max(e / self.norm, 0.0), 1.0)
        return out


def actual_energy(trace: HarvestTrace, t0: float, t1: float, eta: float, step: float = 60.0) -> float:
    ts = np.arange(t0, t1 + step / 2, step)
    return float(np.trapezoid(trace.power(ts, eta), ts))


@dataclass
class BacktestResult:
    rows: list  # (day, camera, origin_hour, horizon_hours, predicted, actual, persistence)
    rmse_gp: float
    rmse_persistence: float

    def write_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write("day,camera,origin_hour,horizon_hours,predicted_joules,actual_joules\n")
            for d, k, o, h, p, a, _ in self.rows:
                fh.write(f"{d},{k},{o!r},{h!r},{p!r},{a!r}\n")


def backtest(traces, test_days: int, params: EnergyParams | None = None,
             window: ForecastWindow | None = None, origin_hours=(0.0, 6.0, 12.0, 18.0),
             start_day: int = 0) -> BacktestResult:
    """Rolling 6 h-ahead energy forecasts against 24 h persistence.

    Day ``d`` is fitted on the preceding ``fit_days`` of data; each origin
    hour yields one forecast per camera. Persistence predicts the energy
    harvested over the same window one day earlier.
    """
    params = params or EnergyParams()
    window = window or ForecastWindow()
    eta = params.eta_eh
    h = window.horizon_h * HOUR
    rows, err_gp, err_p = [], [], []
    for k, tr in enumerate(traces):
        for d in range(start_day, start_day + test_days):
            day_start = d * DAY
            model = fit(tr.t, tr.current, window, day_start)
            mask = (tr.t >= day_start - window.fit_days * DAY) & (tr.t < day_start)
            volt = float(np.mean(tr.voltage[mask])) if mask.any() else 6.1
            for oh in origin_hours:
                t0 = day_start + oh * HOUR
                pred = forecast_energy(model, t0, window.horizon_h, volt, eta, window.bin_min)
                act = actual_energy(tr, t0, t0 + h, eta)
                pers = actual_energy(tr, t0 - DAY, t0 - DAY + h, eta)
                rows.append((d, k, oh, window.horizon_h, pred, act, pers))
                err_gp.append(pred - act)
                err_p.append(pers - act)
    rmse = lambda e: float(np.sqrt(np.mean(np.square(e)))) if e else float("nan")
    return BacktestResult(rows, rmse(err_gp), rmse(err_p))

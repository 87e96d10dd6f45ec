"""Hull-White short-rate factors, lognormal FX and correlated path simulation.

Short rates follow r(t) = x(t) + f(0, t) with

    dx = [y(t) - kappa x] dt + sigma(t) dW,   y(t) = int_0^t e^{-2 kappa (t-u)} sigma(u)^2 du

and, for each foreign currency i, the quanto-adjusted factor and spot

    dx_i   = [y_i - kappa_i x_i - rho_{i,i+N} sigma_i eta_i] dt + sigma_i dW_i
    d ln S = [r_0 - r_i - eta_i^2 / 2] dt + eta_i dW_{i+N}

all under the domestic risk-neutral measure.  Factors are ordered
(x_0, x_1..x_N, lnS_1..lnS_N).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "CorrelationError",
    "DimensionError",
    "YieldCurve",
    "HullWhiteParams",
    "HullWhite",
    "FxParams",
    "TimeGrid",
    "PathCube",
    "MarketModel",
    "repair_correlation",
    "psd_cholesky",
    "build_correlated_increments",
    "hw_variance_integral",
    "hw_mean",
    "simulate_hw1f",
    "simulate_multiccy",
    "zero_bond",
]

GRID_TOL = 1e-9


class CorrelationError(ValueError):
    pass


class DimensionError(ValueError):
    pass


def _as_pillars(times, values, name):
    times = np.atleast_1d(np.asarray(times, dtype=float))
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if times.shape != values.shape:
        raise ValueError(f"{name}: {times.size} pillar times but {values.size} values")
    if times[0] != 0.0:
        raise ValueError(f"{name}: first pillar must be 0")
    if np.any(np.diff(times) <= 0):
        raise ValueError(f"{name}: pillar times must be strictly increasing")
    return times, values


def _segment_lookup(times, values, t):
    idx = np.searchsorted(times, np.asarray(t, dtype=float), side="right") - 1
    return values[np.clip(idx, 0, len(values) - 1)]


@dataclass(frozen=True)
class YieldCurve:
    """Piecewise-constant instantaneous forwards f(0, t) on pillar times."""

    times: np.ndarray
    forwards: np.ndarray

    def __post_init__(self):
        t, f = _as_pillars(self.times, self.forwards, "YieldCurve")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "forwards", f)
        # cumulative integral of f at each pillar
        cum = np.concatenate([[0.0], np.cumsum(f[:-1] * np.diff(t))])
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def flat(cls, rate: float) -> "YieldCurve":
        return cls(np.array([0.0]), np.array([float(rate)]))

    def forward(self, t):
        return _segment_lookup(self.times, self.forwards, t)

    def integral(self, t):
        """int_0^t f(0, u) du, exact for piecewise-constant forwards."""
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 1)
        return self._cum[idx] + self.forwards[idx] * (t - self.times[idx])

    def discount(self, t):
        return np.exp(-self.integral(t))


@dataclass(frozen=True)
class HullWhiteParams:
    """Constant mean reversion and a piecewise-constant volatility term structure."""

    kappa: float
    vol_times: np.ndarray = field(default_factory=lambda: np.array([0.0]))
    vols: np.ndarray = field(default_factory=lambda: np.array([0.0]))

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("mean reversion kappa must be positive")
        t, v = _as_pillars(self.vol_times, self.vols, "HullWhiteParams")
        if np.any(v < 0):
            raise ValueError("volatility must be non-negative")
        object.__setattr__(self, "vol_times", t)
        object.__setattr__(self, "vols", v)

    @classmethod
    def flat(cls, kappa: float, vol: float) -> "HullWhiteParams":
        return cls(kappa, np.array([0.0]), np.array([float(vol)]))

    def vol(self, t):
        return _segment_lookup(self.vol_times, self.vols, t)


def _decay_integral(kappa, c, t, a, b):
    """int_a^b exp(-c kappa (t - s)) ds for a <= b <= t."""
    ck = c * kappa
    return np.exp(-ck * (t - b)) * (-np.expm1(-ck * (b - a))) / ck


def _segments_upto(params: HullWhiteParams, t: float):
    edges = params.vol_times
    for k, a in enumerate(edges):
        if a >= t:
            break
        b = edges[k + 1] if k + 1 < len(edges) else np.inf
        yield a, min(b, t), params.vols[k]


def hw_variance_integral(params: HullWhiteParams, t: float) -> float:
    """y(t) = int_0^t e^{-2 kappa (t-u)} sigma(u)^2 du, summed segment by segment."""
    if t < 0:
        raise ValueError(f"negative time {t}")
    total = 0.0
    for a, b, s in _segments_upto(params, t):
        total += s * s * _decay_integral(params.kappa, 2.0, t, a, b)
    return float(total)


def hw_mean(params: HullWhiteParams, t: float) -> float:
    """E[x(t)] = int_0^t e^{-kappa (t-u)} y(u) du."""
    if t < 0:
        raise ValueError(f"negative time {t}")
    k = params.kappa
    total = 0.0
    for a, b, s in _segments_upto(params, t):
        total += s * s * (_decay_integral(k, 1.0, t, a, b) - _decay_integral(k, 2.0, t, a, b)) / k
    return float(total)


def _g(kappa, tau):
    tau = np.asarray(tau, dtype=float)
    return -np.expm1(-kappa * tau) / kappa


def zero_bond(curve: YieldCurve, params: HullWhiteParams, t: float, T, x_t):
    """P(t,T) = P(0,T)/P(0,t) exp(-x G(t,T) - y(t) G(t,T)^2 / 2)."""
    T = np.asarray(T, dtype=float)
    if np.any(T < t - GRID_TOL):
        raise ValueError(f"bond maturity before observation time {t}")
    if t < 0:
        raise ValueError(f"negative time {t}")
    g = _g(params.kappa, np.maximum(T - t, 0.0))
    y = hw_variance_integral(params, t)
    ratio = np.exp(curve.integral(t) - curve.integral(T))
    x_t = np.asarray(x_t, dtype=float)
    return ratio * np.exp(-x_t * g - 0.5 * y * g * g)


@dataclass(frozen=True)
class HullWhite:
    """A currency: initial curve plus Hull-White dynamics."""

    curve: YieldCurve
    params: HullWhiteParams

    def y(self, t):
        return hw_variance_integral(self.params, t)

    def zero_bond(self, t, T, x_t):
        return zero_bond(self.curve, self.params, t, T, x_t)

    def short_rate(self, t, x_t):
        return np.asarray(x_t) + self.curve.forward(t)


@dataclass(frozen=True)
class FxParams:
    spot: float
    vol_times: np.ndarray = field(default_factory=lambda: np.array([0.0]))
    vols: np.ndarray = field(default_factory=lambda: np.array([0.0]))

    def __post_init__(self):
        if not self.spot > 0:
            raise ValueError("FX spot must be positive")
        t, v = _as_pillars(self.vol_times, self.vols, "FxParams")
        if np.any(v < 0):
            raise ValueError("FX volatility must be non-negative")
        object.__setattr__(self, "vol_times", t)
        object.__setattr__(self, "vols", v)

    @classmethod
    def flat(cls, spot: float, vol: float) -> "FxParams":
        return cls(float(spot), np.array([0.0]), np.array([float(vol)]))

    def vol(self, t):
        return _segment_lookup(self.vol_times, self.vols, t)


class TimeGrid:
    """Strictly increasing simulation dates with named event flags.

    Every event date passed at construction is inserted into the grid, so
    instruments can always look up their dates by index.
    """

    def __init__(self, times: Sequence[float], events: dict[str, Sequence[float]] | None = None):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size < 2 or times[0] != 0.0:
            raise ValueError("grid must start at 0 and contain at least two dates")
        if np.any(np.diff(times) <= 0):
            raise ValueError("grid dates must be strictly increasing")
        self.times = times
        self.flags: dict[str, np.ndarray] = {}
        for name, dates in (events or {}).items():
            flag = np.zeros(times.size, dtype=bool)
            flag[[self.index(d) for d in dates]] = True
            self.flags[name] = flag

    @classmethod
    def build(cls, horizon: float, steps_per_year: int, events: dict[str, Sequence[float]] | None = None):
        """Uniform grid of `steps_per_year` plus all event dates up to `horizon`."""
        n = max(1, int(round(horizon * steps_per_year)))
        base = list(np.linspace(0.0, horizon, n + 1))
        for dates in (events or {}).values():
            for d in dates:
                if d < -GRID_TOL or d > horizon + GRID_TOL:
                    raise ValueError(f"event date {d} outside [0, {horizon}]")
                base.append(float(d))
        merged: list[float] = []
        for t in sorted(base):
            if merged and t - merged[-1] <= GRID_TOL:
                continue
            merged.append(t)
        # snap events exactly onto the merged grid
        return cls(merged, events)

    def __len__(self):
        return self.times.size

    @property
    def dt(self):
        return np.diff(self.times)

    def index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > GRID_TOL:
            raise ValueError(f"date {t} is not on the simulation grid")
        return i

    def flag(self, name: str) -> np.ndarray:
        return self.flags.get(name, np.zeros(self.times.size, dtype=bool))


def repair_correlation(corr, clip: float = -1e-10, reject: float = -1e-6) -> np.ndarray:
    """Clip slightly negative eigenvalues and renormalise to unit diagonal."""
    corr = np.asarray(corr, dtype=float)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise CorrelationError("correlation matrix must be square")
    if not np.allclose(corr, corr.T, atol=1e-12):
        raise CorrelationError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
        raise CorrelationError("correlation matrix must have unit diagonal")
    w, v = np.linalg.eigh(corr)
    if w.min() < reject:
        raise CorrelationError(f"correlation matrix not PSD (min eigenvalue {w.min():.3e})")
    if w.min() >= clip:
        return corr
    w = np.maximum(w, 0.0)
    fixed = (v * w) @ v.T
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    np.fill_diagonal(fixed, 1.0)
    return fixed


def psd_cholesky(a, tol: float = 1e-12) -> np.ndarray:
    """Lower-triangular L with L L^T = a, tolerating zero pivots (rank-deficient PSD)."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if d < -1e-8:
            raise CorrelationError("matrix is not positive semi-definite")
        if d <= tol:
            continue
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def _normals(seed: int, factor: int, step: int, n_paths: int) -> np.ndarray:
    # one substream per (factor, step): path i keeps its draw when n_paths grows
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(factor), int(step)))
    return np.random.default_rng(ss).standard_normal(n_paths)


def build_correlated_increments(corr, grid: TimeGrid, n_paths: int, seed: int) -> np.ndarray:
    """Correlated Brownian increments dW[j, p, n] over each grid step."""
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    L = psd_cholesky(repair_correlation(corr))
    k = L.shape[0]
    steps = len(grid) - 1
    xi = np.empty((k, n_paths, steps))
    for n in range(steps):
        for j in range(k):
            xi[j, :, n] = _normals(seed, j, n, n_paths)
    dw = np.einsum("jk,kpn->jpn", L, xi)
    return dw * np.sqrt(grid.dt)[None, None, :]


@dataclass
class PathCube:
    """Simulated factors X[i, p, n], increments dW[j, p, n] and the numeraire.

    `diffusion[i, n]` is the coefficient multiplying dW[i, :, n] in the
    update of factor i over step n; it is what the value diffusion term
    Delta * sigma * dW uses.
    """

    times: np.ndarray
    factors: np.ndarray
    increments: np.ndarray
    diffusion: np.ndarray
    numeraire: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        d, p, n1 = self.factors.shape
        if self.times.shape != (n1,):
            raise DimensionError("times do not match factor cube")
        if self.increments.shape != (d, p, n1 - 1):
            raise DimensionError(f"increments shape {self.increments.shape} != {(d, p, n1 - 1)}")
        if self.diffusion.shape != (d, n1 - 1):
            raise DimensionError("diffusion coefficients do not match factor cube")
        if self.numeraire.shape != (p, n1):
            raise DimensionError("numeraire does not match factor cube")

    @property
    def n_factors(self) -> int:
        return self.factors.shape[0]

    @property
    def n_paths(self) -> int:
        return self.factors.shape[1]

    @property
    def n_steps(self) -> int:
        return self.factors.shape[2] - 1

    @property
    def discount(self) -> np.ndarray:
        return 1.0 / self.numeraire


def _check_increments(increments, grid, n_factors=None):
    increments = np.asarray(increments, dtype=float)
    if increments.ndim != 3 or increments.shape[2] != len(grid) - 1:
        raise DimensionError(
            f"increments of shape {increments.shape} do not conform to a grid of {len(grid)} dates")
    if n_factors is not None and increments.shape[0] != n_factors:
        raise DimensionError(f"expected {n_factors} Brownian factors, got {increments.shape[0]}")
    return increments


def _ou_coefficients(params: HullWhiteParams, grid: TimeGrid):
    """Per-step decay, deterministic drift and diffusion coefficient of the exact OU update."""
    t = grid.times
    dt = grid.dt
    y = np.array([hw_variance_integral(params, s) for s in t])
    m = np.array([hw_mean(params, s) for s in t])
    decay = np.exp(-params.kappa * dt)
    drift = m[1:] - decay * m[:-1]
    var = np.maximum(y[1:] - np.exp(-2.0 * params.kappa * dt) * y[:-1], 0.0)
    return decay, drift, np.sqrt(var / dt)


def simulate_hw1f(curve: YieldCurve, params: HullWhiteParams, increments, grid: TimeGrid,
                  quanto=None) -> tuple[np.ndarray, np.ndarray]:
    """Exact-in-distribution x-factor paths driven by `increments` of shape (P, N).

    `quanto` is an optional per-step drift rate (already including -rho sigma eta)
    integrated against the OU kernel over each step.  Returns (x[p, n], diffusion[n]).
    """
    dw = np.asarray(increments, dtype=float)
    if dw.ndim == 3:
        dw = _check_increments(dw, grid, 1)[0]
    if dw.ndim != 2 or dw.shape[1] != len(grid) - 1:
        raise DimensionError(f"increments of shape {dw.shape} do not conform to a grid of {len(grid)} dates")
    decay, drift, diff = _ou_coefficients(params, grid)
    if quanto is not None:
        drift = drift + np.asarray(quanto) * _g(params.kappa, grid.dt)
    x = np.zeros((dw.shape[0], len(grid)))
    for n in range(len(grid) - 1):
        x[:, n + 1] = decay[n] * x[:, n] + drift[n] + diff[n] * dw[:, n]
    return x, diff


@dataclass(frozen=True)
class MarketModel:
    """Domestic Hull-White currency plus zero or more foreign currencies with FX."""

    domestic: HullWhite
    foreign: tuple[tuple[HullWhite, FxParams], ...] = ()
    corr: np.ndarray | None = None

    @property
    def n_foreign(self) -> int:
        return len(self.foreign)

    @property
    def n_factors(self) -> int:
        return 1 + 2 * self.n_foreign

    def correlation(self) -> np.ndarray:
        k = self.n_factors
        if self.corr is None:
            if k == 1:
                return np.eye(1)
            raise CorrelationError("multi-currency model needs a correlation matrix")
        corr = np.asarray(self.corr, dtype=float)
        if corr.shape != (k, k):
            raise CorrelationError(f"correlation matrix must be {k}x{k}, got {corr.shape}")
        return corr

    def factor_names(self) -> tuple[str, ...]:
        n = self.n_foreign
        return ("x0",) + tuple(f"x{i}" for i in range(1, n + 1)) + tuple(f"lnS{i}" for i in range(1, n + 1))

    def currency(self, i: int) -> HullWhite:
        return self.domestic if i == 0 else self.foreign[i - 1][0]

    def simulate(self, grid: TimeGrid, n_paths: int, seed: int) -> PathCube:
        return simulate_multiccy(self, grid, n_paths, seed)


def simulate_multiccy(model: MarketModel, grid: TimeGrid, n_paths: int, seed: int) -> PathCube:
    corr = model.correlation()
    dw = build_correlated_increments(corr, grid, n_paths, seed)
    n_for = model.n_foreign
    t0, dt = grid.times[:-1], grid.dt
    k = model.n_factors
    factors = np.zeros((k, n_paths, len(grid)))
    diffusion = np.zeros((k, len(grid) - 1))

    dom = model.domestic
    factors[0], diffusion[0] = simulate_hw1f(dom.curve, dom.params, dw[0], grid)
    dom_fwd = dom.curve.integral(grid.times)
    dom_step = np.diff(dom_fwd)

    for i, (ccy, fx) in enumerate(model.foreign, start=1):
        s = i + n_for
        eta = fx.vol(t0)
        rho = corr[i, s]
        quanto = None
        if rho != 0.0:
            quanto = -rho * ccy.params.vol(t0) * eta
        factors[i], diffusion[i] = simulate_hw1f(ccy.curve, ccy.params, dw[i], grid, quanto=quanto)
        for_step = np.diff(ccy.curve.integral(grid.times))
        lns = factors[s]
        lns[:, 0] = np.log(fx.spot)
        for n in range(len(grid) - 1):
            # left-endpoint stochastic rates, exact curve integrals
            drift = (factors[0, :, n] - factors[i, :, n]) * dt[n] + dom_step[n] - for_step[n] - 0.5 * eta[n] ** 2 * dt[n]
            lns[:, n + 1] = lns[:, n] + drift + eta[n] * dw[s, :, n]
        diffusion[s] = eta

    log_b = np.zeros((n_paths, len(grid)))
    log_b[:, 1:] = np.cumsum(factors[0, :, :-1] * dt[None, :] + dom_step[None, :], axis=1)
    return PathCube(grid.times.copy(), factors, dw, diffusion, np.exp(log_b), model.factor_names())

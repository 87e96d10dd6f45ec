"""Exposure profiles (EPE/ENE) from value surfaces, and CVA/DVA integration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .market import GRID_TOL

__all__ = [
    "ExposureError",
    "CreditCurve",
    "ExposureProfile",
    "cumulative_alive_indicator",
    "epe_ene",
    "exposure_profile",
    "cva_dva",
]


class ExposureError(ValueError):
    pass


@dataclass(frozen=True)
class CreditCurve:
    """Recovery rate and piecewise-constant hazard rates.

    `pillars[i]` is the end of the i-th hazard bucket, so hazards[i] applies on
    (pillars[i-1], pillars[i]] with pillars[-1] = 0.  Beyond the last pillar the
    last hazard is used and `extrapolated(t)` reports it.
    """

    recovery: float
    pillars: np.ndarray
    hazards: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.pillars, dtype=float))
        h = np.atleast_1d(np.asarray(self.hazards, dtype=float))
        object.__setattr__(self, "pillars", p)
        object.__setattr__(self, "hazards", h)
        if not 0.0 <= self.recovery <= 1.0:
            raise ExposureError("recovery must lie in [0, 1]")
        if p.shape != h.shape or p.size == 0:
            raise ExposureError("one hazard rate per pillar is required")
        if np.any(h < 0):
            raise ExposureError("hazard rates must be non-negative")
        if p[0] <= 0 or np.any(np.diff(p) <= 0):
            raise ExposureError("pillars must be positive and increasing")

    @classmethod
    def flat(cls, hazard: float, recovery: float = 0.4, horizon: float = 100.0) -> "CreditCurve":
        return cls(recovery, [horizon], [hazard])

    @classmethod
    def from_default_probability(cls, pd: float, horizon: float, recovery: float = 0.4) -> "CreditCurve":
        """Flat hazard giving cumulative default probability `pd` by `horizon`."""
        if not 0.0 <= pd < 1.0:
            raise ExposureError("default probability must lie in [0, 1)")
        return cls(recovery, [horizon], [-np.log1p(-pd) / horizon])

    def extrapolated(self, t) -> bool:
        return bool(np.any(np.asarray(t) > self.pillars[-1] + GRID_TOL))

    def cumulative_hazard(self, t):
        t = np.asarray(t, dtype=float)
        starts = np.concatenate([[0.0], self.pillars[:-1]])
        ends = np.concatenate([self.pillars[:-1], [np.inf]])
        span = np.clip(t[..., None], starts, ends) - starts
        return span @ self.hazards

    def survival(self, t):
        return np.exp(-self.cumulative_hazard(t))

    def default_probability(self, t0, t1):
        """Q(t0) - Q(t1)."""
        return self.survival(t0) - self.survival(t1)


@dataclass
class ExposureProfile:
    """One row per (date, side).  Dates with a jump carry a `pre` and a `post` row."""

    times: np.ndarray
    side: np.ndarray
    epe: np.ndarray
    epe_se: np.ndarray
    ene: np.ndarray
    ene_se: np.ndarray
    discounted: bool = True
    method: str = "nn"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    def rows(self, side: str):
        """Indices of rows usable as the `side` value at each distinct date."""
        out = []
        for t in np.unique(self.times):
            idx = np.nonzero(self.times == t)[0]
            pick = [i for i in idx if self.side[i] == side]
            out.append(pick[0] if pick else idx[0])
        return np.array(out, dtype=int)

    def at(self, t: float, side: str = "post"):
        """(epe, epe_se, ene, ene_se) at date t."""
        idx = np.nonzero(np.abs(self.times - t) <= GRID_TOL)[0]
        if idx.size == 0:
            raise ExposureError(f"no exposure row at {t}")
        pick = [i for i in idx if self.side[i] == side]
        i = pick[0] if pick else idx[0]
        return self.epe[i], self.epe_se[i], self.ene[i], self.ene_se[i]


def cumulative_alive_indicator(eta, exercise_steps, n_times: int, side: str = "pre") -> np.ndarray:
    """eta_tilde[p, n]: 1 while no exercise has happened on path p.

    With side="pre" only exercises strictly before grid date n count; with
    side="post" an exercise at n itself also counts.
    """
    eta = np.asarray(eta, dtype=float)
    steps = np.asarray(exercise_steps, dtype=int)
    if eta.ndim != 2 or eta.shape[1] != steps.size:
        raise ExposureError("eta must be (paths, exercise dates)")
    if np.any((eta != 0.0) & (eta != 1.0)):
        raise ExposureError("eta entries must be 0 or 1")
    out = np.ones((eta.shape[0], n_times))
    for m, s in enumerate(steps):
        start = s + 1 if side == "pre" else s
        out[:, start:] *= eta[:, m:m + 1]
    return out


def _mean_se(a):
    n = a.shape[0]
    mean = a.mean(axis=0)
    se = a.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def epe_ene(values, alive=None, numeraire=None, settlement: str = "cash", underlying=None):
    """Per-column (EPE, EPE se, ENE, ENE se) of the exposed value.

    values, alive, numeraire and underlying are (paths, dates).  With cash
    settlement the exposed value is alive * V; with physical settlement it is V
    before exercise and the underlying swap value after.  Exposures are divided
    by the numeraire when it is given.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    a = np.ones_like(v) if alive is None else np.asarray(alive, dtype=float).reshape(v.shape)
    if settlement == "cash":
        exposed = a * v
    elif settlement == "physical":
        if underlying is None:
            raise ExposureError("physical settlement needs underlying swap values")
        exposed = a * v + (1.0 - a) * np.asarray(underlying, dtype=float).reshape(v.shape)
    else:
        raise ExposureError(f"unknown settlement {settlement!r}")
    if numeraire is not None:
        exposed = exposed / np.asarray(numeraire, dtype=float).reshape(v.shape)
    epe, epe_se = _mean_se(np.maximum(exposed, 0.0))
    ene, ene_se = _mean_se(np.minimum(exposed, 0.0))
    return epe, epe_se, ene, ene_se


def exposure_profile(times, values_pre, values_post, numeraire, eta=None, exercise_steps=(),
                     event_steps=(), credit_steps=None, settlement: str = "cash",
                     underlying=None, discounted: bool = True, method: str = "nn") -> ExposureProfile:
    """EPE/ENE rows on the credit dates.

    Grid dates in `exercise_steps` or `event_steps` get separate pre- and
    post-jump rows; other dates a single post row.  `underlying` (paths, dates)
    is the post-exercise value used for physical settlement.
    """
    times = np.asarray(times, dtype=float)
    n_times = times.size
    vpre = np.asarray(values_pre, dtype=float)
    vpost = np.asarray(values_post, dtype=float)
    steps = np.asarray(exercise_steps, dtype=int)
    if eta is None:
        eta = np.ones((vpre.shape[0], steps.size))
    alive_pre = cumulative_alive_indicator(eta, steps, n_times, "pre")
    alive_post = cumulative_alive_indicator(eta, steps, n_times, "post")
    num = np.asarray(numeraire, dtype=float) if discounted else None
    jumps = set(int(s) for s in steps) | set(int(s) for s in event_steps)
    cols = range(n_times) if credit_steps is None else sorted(int(c) for c in credit_steps)
    rows = []
    for n in cols:
        sides = ("pre", "post") if n in jumps else ("post",)
        for side in sides:
            v = vpre[:, n] if side == "pre" else vpost[:, n]
            a = alive_pre[:, n] if side == "pre" else alive_post[:, n]
            u = None if underlying is None else underlying[:, n]
            b = None if num is None else num[:, n]
            e, es, g, gs = epe_ene(v, a, b, settlement, u)
            rows.append((times[n], side, e[0], es[0], g[0], gs[0]))
    t, s, e, es, g, gs = zip(*rows)
    return ExposureProfile(np.array(t), np.array(s), np.array(e), np.array(es), np.array(g), np.array(gs),
                           discounted, method)


def _bucket_exposure(profile: ExposureProfile, which: str):
    """Distinct dates and the exposure at each bucket midpoint.

    The exposure on (T_{n-1}, T_n] is linearly interpolated at the midpoint
    between the post row at T_{n-1} and the pre row at T_n.
    """
    col = profile.epe if which == "epe" else profile.ene
    pre = profile.rows("pre")
    post = profile.rows("post")
    dates = profile.times[post]
    mid = 0.5 * (col[post][:-1] + col[pre][1:])
    return dates, mid


def cva_dva(profile: ExposureProfile, cpty: CreditCurve, own: CreditCurve | None = None):
    """(CVA, DVA, flags): sum of (1 - R) * exposure * [Q(T_{n-1}) - Q(T_n)] over buckets.

    DVA carries the sign of ENE, so it is non-positive.  `flags` reports
    whether either credit curve was extrapolated flat past its last pillar.
    """
    dates, epe_mid = _bucket_exposure(profile, "epe")
    _, ene_mid = _bucket_exposure(profile, "ene")
    if dates.size < 2:
        return 0.0, 0.0, {"cpty_extrapolated": False, "own_extrapolated": False}
    dpc = cpty.default_probability(dates[:-1], dates[1:])
    cva = float((1.0 - cpty.recovery) * np.sum(epe_mid * dpc))
    dva = 0.0
    flags = {"cpty_extrapolated": cpty.extrapolated(dates[-1]), "own_extrapolated": False}
    if own is not None:
        dpo = own.default_probability(dates[:-1], dates[1:])
        dva = float((1.0 - own.recovery) * np.sum(ene_mid * dpo))
        flags["own_extrapolated"] = own.extrapolated(dates[-1])
    return cva, dva, flags

"""Swap legs, Bermudan swaptions and Mark-to-Market cross-currency swaps.

Single-curve conventions throughout: Libor forwards come from the same
Hull-White discount curve as the discounting.  Leg values are "receive"
values; instruments apply their own direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .market import GRID_TOL, HullWhite, MarketModel, PathCube

__all__ = [
    "ScheduleError",
    "FixingError",
    "SwapLeg",
    "fixed_leg_value",
    "float_leg_value",
    "leg_value",
    "path_fixings",
    "BermudanSwaption",
    "swap_exercise_value",
    "MtmXccySwap",
    "mtm_leg_cashflow",
    "proxy_mtm_value",
    "ZeroCouponCashflow",
]


class ScheduleError(ValueError):
    pass


class FixingError(ValueError):
    pass


@dataclass(frozen=True)
class SwapLeg:
    kind: str
    notional: float
    start: np.ndarray
    end: np.ndarray
    tau: np.ndarray
    rate: np.ndarray
    mult: np.ndarray | None = None
    pay: np.ndarray | None = None
    final_exchange: bool = False
    currency: int = 0

    def __post_init__(self):
        if self.kind not in ("fixed", "float"):
            raise ValueError(f"unknown leg kind {self.kind!r}")
        start = np.atleast_1d(np.asarray(self.start, dtype=float))
        n = start.size
        arr = lambda v, default: np.broadcast_to(  # noqa: E731
            np.asarray(default if v is None else v, dtype=float), (n,)).copy()
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", arr(self.end, 0.0))
        object.__setattr__(self, "tau", arr(self.tau, 0.0))
        object.__setattr__(self, "rate", arr(self.rate, 0.0))
        object.__setattr__(self, "mult", arr(self.mult, 1.0))
        object.__setattr__(self, "pay", arr(self.pay, self.end) if self.pay is not None else self.end.copy())
        if np.any(self.tau <= 0):
            raise ScheduleError("accrual fractions must be positive")
        if np.any(self.end <= self.start):
            raise ScheduleError("accrual periods must have end after start")

    @classmethod
    def regular(cls, kind, notional, start, end, freq, rate=0.0, **kw) -> "SwapLeg":
        """Periods of length 1/freq from `start` to `end`, tau equal to the period length."""
        n = int(round((end - start) * freq))
        edges = np.linspace(start, end, n + 1)
        return cls(kind, notional, edges[:-1], edges[1:], np.diff(edges), rate, **kw)

    @property
    def n_periods(self) -> int:
        return self.start.size

    @property
    def maturity(self) -> float:
        return float(self.pay[-1])

    def dates(self) -> np.ndarray:
        return np.unique(np.concatenate([self.start, self.end, self.pay]))


def _live(leg: SwapLeg, t: float) -> np.ndarray:
    return np.nonzero(leg.pay > t + GRID_TOL)[0]


def _bonds(ccy: HullWhite, t, T, x_t):
    x = np.asarray(x_t, dtype=float)[..., None]
    return ccy.zero_bond(t, T, x)


def fixed_leg_value(leg: SwapLeg, ccy: HullWhite, t: float, x_t, fx=1.0):
    """N S(t) sum_{pay > t} K_n tau_n P(t, T_n^P), final notional folded into the last coupon."""
    live = _live(leg, t)
    x = np.asarray(x_t, dtype=float)
    if live.size == 0:
        return np.zeros_like(x)
    amount = leg.rate[live] * leg.tau[live]
    if leg.final_exchange:
        amount = amount.copy()
        amount[-1] += 1.0
    pv = _bonds(ccy, t, leg.pay[live], x) @ amount
    return leg.notional * np.asarray(fx) * pv


def float_leg_value(leg: SwapLeg, ccy: HullWhite, t: float, x_t, fx=1.0, fixings=None):
    """N S sum (alpha_n L_n + beta_n) tau_n P(t, T_n^P); started periods need `fixings`.

    `fixings` is indexed by period (shape (n_periods,) or (n_periods, n_paths)),
    NaN marking an unknown fixing.
    """
    live = _live(leg, t)
    x = np.asarray(x_t, dtype=float)
    if live.size == 0:
        return np.zeros_like(x)
    pay = _bonds(ccy, t, leg.pay[live], x)
    rates = np.empty(pay.shape)
    future = leg.start[live] >= t - GRID_TOL
    if np.any(future):
        idx = live[future]
        ps = _bonds(ccy, t, leg.start[idx], x)
        pe = _bonds(ccy, t, leg.end[idx], x)
        rates[..., future] = (ps / pe - 1.0) / leg.tau[idx]
    past = live[~future]
    if past.size:
        if fixings is None:
            raise FixingError(f"periods {past.tolist()} started before t={t} but no fixings were given")
        fix = np.asarray(fixings, dtype=float)[past]
        if np.any(np.isnan(fix)):
            raise FixingError(f"missing fixing for a period started before t={t}")
        rates[..., ~future] = np.moveaxis(fix, 0, -1) if fix.ndim > 1 else fix
    amount = (leg.mult[live] * rates + leg.rate[live]) * leg.tau[live]
    if leg.final_exchange:
        amount[..., -1] += 1.0
    pv = np.sum(amount * pay, axis=-1)
    return leg.notional * np.asarray(fx) * pv


def leg_value(leg: SwapLeg, ccy: HullWhite, t: float, x_t, fx=1.0, fixings=None):
    if leg.kind == "fixed":
        return fixed_leg_value(leg, ccy, t, x_t, fx)
    return float_leg_value(leg, ccy, t, x_t, fx, fixings)


def path_fixings(leg: SwapLeg, ccy: HullWhite, paths: PathCube, factor: int = 0) -> np.ndarray:
    """Libor fixings L_n observed at each accrual start along the paths; NaN past the grid."""
    out = np.full((leg.n_periods, paths.n_paths), np.nan)
    for k in range(leg.n_periods):
        s = leg.start[k]
        hits = np.nonzero(np.abs(paths.times - s) <= GRID_TOL)[0]
        if hits.size == 0:
            continue
        x = paths.factors[factor, :, hits[0]]
        out[k] = (1.0 / ccy.zero_bond(s, leg.end[k], x) - 1.0) / leg.tau[k]
    return out


@dataclass(frozen=True)
class BermudanSwaption:
    """Option to enter the remaining underlying swap on any exercise date.

    Payer: receive float, pay fixed.  After exercise at T_m the holder owns
    the periods paying after T_m, which requires exercise dates to sit on
    period boundaries of both legs.
    """

    fixed: SwapLeg
    floating: SwapLeg
    exercise_dates: np.ndarray
    settlement: str = "cash"
    payer: bool = True

    def __post_init__(self):
        ex = np.atleast_1d(np.asarray(self.exercise_dates, dtype=float))
        object.__setattr__(self, "exercise_dates", ex)
        if self.settlement not in ("cash", "physical"):
            raise ValueError(f"unknown settlement {self.settlement!r}")
        if np.any(np.diff(ex) <= 0):
            raise ScheduleError("exercise dates must be increasing")
        if ex[-1] > self.fixed.start[-1] + GRID_TOL or ex[-1] > self.floating.start[-1] + GRID_TOL:
            raise ScheduleError("exercise dates must not follow the final accrual start")
        for leg in (self.fixed, self.floating):
            for d in ex:
                if not np.any(np.abs(leg.start - d) <= GRID_TOL) and d > leg.start[0] + GRID_TOL:
                    raise ScheduleError(f"exercise date {d} is not a period start of the {leg.kind} leg")

    @property
    def sign(self) -> float:
        return 1.0 if self.payer else -1.0

    @property
    def notional(self) -> float:
        return self.fixed.notional

    @property
    def maturity(self) -> float:
        return max(self.fixed.maturity, self.floating.maturity)

    def exercise_index(self, t: float) -> int:
        hits = np.nonzero(np.abs(self.exercise_dates - t) <= GRID_TOL)[0]
        if hits.size == 0:
            raise ScheduleError(f"{t} is not an exercise date")
        return int(hits[0])

    def underlying_value(self, ccy: HullWhite, t: float, x_t, fixings=None):
        """Value of the periods paying after t (payer = float - fixed)."""
        flt = float_leg_value(self.floating, ccy, t, x_t, fixings=fixings)
        fxd = fixed_leg_value(self.fixed, ccy, t, x_t)
        return self.sign * (flt - fxd)

    def forward_underlying(self, ccy: HullWhite, t: float, x_t, entry: float):
        """Value at t <= entry of the swap that would be entered at `entry`."""
        if t > entry + GRID_TOL:
            raise ScheduleError("forward underlying needs t <= entry")
        flt = _sub_leg(self.floating, entry)
        fxd = _sub_leg(self.fixed, entry)
        return self.sign * (float_leg_value(flt, ccy, t, x_t) - fixed_leg_value(fxd, ccy, t, x_t))

    def exercise_value(self, ccy: HullWhite, t: float, x_t):
        self.exercise_index(t)
        return self.underlying_value(ccy, t, x_t)

    def exercise_cube(self, ccy: HullWhite, paths: PathCube) -> np.ndarray:
        """U[p, m]: exercise values on every path at every exercise date."""
        u = np.empty((paths.n_paths, self.exercise_dates.size))
        for m, d in enumerate(self.exercise_dates):
            n = _grid_index(paths.times, d)
            u[:, m] = self.exercise_value(ccy, d, paths.factors[0, :, n])
        return u

    def underlying_surface(self, ccy: HullWhite, paths: PathCube) -> np.ndarray:
        """Underlying swap value at every grid date, used for physical settlement."""
        fix = path_fixings(self.floating, ccy, paths)
        out = np.zeros((paths.n_paths, paths.times.size))
        for n, t in enumerate(paths.times):
            if t >= self.maturity - GRID_TOL:
                continue
            started = self.floating.start < t - GRID_TOL
            if np.any(started & np.isnan(fix[:, 0])):
                # periods before the first grid observation cannot be valued
                continue
            out[:, n] = self.underlying_value(ccy, t, paths.factors[0, :, n], fixings=fix)
        return out


def _sub_leg(leg: SwapLeg, entry: float) -> SwapLeg:
    keep = leg.start >= entry - GRID_TOL
    return SwapLeg(leg.kind, leg.notional, leg.start[keep], leg.end[keep], leg.tau[keep],
                   leg.rate[keep], leg.mult[keep], leg.pay[keep], leg.final_exchange, leg.currency)


def _grid_index(times, t) -> int:
    hits = np.nonzero(np.abs(times - t) <= GRID_TOL)[0]
    if hits.size == 0:
        raise ScheduleError(f"date {t} is not on the simulation grid")
    return int(hits[0])


def swap_exercise_value(berm: BermudanSwaption, ccy: HullWhite, t: float, x_t):
    return berm.exercise_value(ccy, t, x_t)


def mtm_leg_cashflow(notional, s_reset, s_next, libor, tau):
    """N [S(T_n)(1 + L_n tau_n) - S(T_{n+1})], paid at T_{n+1} in domestic units."""
    return notional * (np.asarray(s_reset) * (1.0 + np.asarray(libor) * tau) - np.asarray(s_next))


@dataclass(frozen=True)
class MtmXccySwap:
    """MtM leg with FX-reset domestic notional against a foreign floating leg.

    The MtM leg pays, at each period end, the notional adjustment plus
    interest on the reset notional N_f S(T_n); its last flow includes the
    return of the foreign notional.  The other leg pays foreign Libor on the
    fixed foreign notional N_f, converted at the spot on the payment date.
    """

    notional: float
    dates: np.ndarray
    tau: np.ndarray | None = None
    foreign: int = 1
    mtm_index: str = "domestic"
    mtm_spread: float = 0.0
    float_spread: float = 0.0
    receive_mtm: bool = True

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype=float)
        if dates.ndim != 1 or dates.size < 2 or np.any(np.diff(dates) <= 0):
            raise ScheduleError("reset dates must be increasing")
        object.__setattr__(self, "dates", dates)
        tau = np.diff(dates) if self.tau is None else np.asarray(self.tau, dtype=float)
        if tau.shape != (dates.size - 1,) or np.any(tau <= 0):
            raise ScheduleError("one positive accrual fraction per period is required")
        object.__setattr__(self, "tau", tau)
        if self.mtm_index not in ("domestic", "foreign"):
            raise ValueError("mtm_index must be 'domestic' or 'foreign'")

    @property
    def sign(self) -> float:
        return 1.0 if self.receive_mtm else -1.0

    @property
    def n_periods(self) -> int:
        return self.tau.size

    @property
    def maturity(self) -> float:
        return float(self.dates[-1])

    def domestic_notional(self, model: MarketModel) -> float:
        return self.notional * model.foreign[self.foreign - 1][1].spot

    def _index_ccy(self, model: MarketModel) -> tuple[HullWhite, int]:
        if self.mtm_index == "domestic":
            return model.domestic, 0
        return model.currency(self.foreign), self.foreign

    def _spot(self, model: MarketModel, paths: PathCube, n: int):
        return np.exp(paths.factors[model.n_foreign + self.foreign, :, n])

    def path_fixings(self, model: MarketModel, paths: PathCube):
        """Per-period (S(T_n), MtM-index Libor, foreign Libor) along the paths."""
        idx_ccy, idx_factor = self._index_ccy(model)
        fccy = model.currency(self.foreign)
        k = self.n_periods
        s = np.full((k, paths.n_paths), np.nan)
        lm = np.full_like(s, np.nan)
        lf = np.full_like(s, np.nan)
        for j in range(k):
            a, b = self.dates[j], self.dates[j + 1]
            hits = np.nonzero(np.abs(paths.times - a) <= GRID_TOL)[0]
            if hits.size == 0:
                continue
            n = hits[0]
            s[j] = self._spot(model, paths, n)
            lm[j] = (1.0 / idx_ccy.zero_bond(a, b, paths.factors[idx_factor, :, n]) - 1.0) / self.tau[j]
            lf[j] = (1.0 / fccy.zero_bond(a, b, paths.factors[self.foreign, :, n]) - 1.0) / self.tau[j]
        return s, lm, lf

    def cashflow_cube(self, model: MarketModel, paths: PathCube) -> np.ndarray:
        """Net domestic cashflow CF[p, n] paid at grid date n."""
        s, lm, lf = self.path_fixings(model, paths)
        cf = np.zeros((paths.n_paths, paths.times.size))
        for j in range(self.n_periods):
            n = _grid_index(paths.times, self.dates[j + 1])
            s_next = self._spot(model, paths, n)
            mtm = mtm_leg_cashflow(self.notional, s[j], s_next, lm[j] + self.mtm_spread, self.tau[j])
            flt = self.notional * s_next * (lf[j] + self.float_spread) * self.tau[j]
            cf[:, n] += self.sign * (mtm - flt)
        return cf

    def proxy_value(self, model: MarketModel, t: float, x, spot, fixings=None):
        """Decoupled-forward value after any cashflow at t.

        `x` holds the per-currency factors (x_0, ..., x_N) for the state,
        `fixings` the (S, L_mtm, L_f) per period for periods already started.
        """
        dom = model.domestic
        fccy = model.currency(self.foreign)
        idx_ccy, idx_factor = self._index_ccy(model)
        x0, xf, xi = x[0], x[self.foreign], x[idx_factor]
        spot = np.asarray(spot, dtype=float)
        value = np.zeros(np.broadcast(x0, spot).shape)
        domestic_index = idx_ccy is dom
        for j in range(self.n_periods):
            a, b, tau = self.dates[j], self.dates[j + 1], self.tau[j]
            if b <= t + GRID_TOL:
                continue
            pd_b = dom.zero_bond(t, b, x0)
            pf_b = fccy.zero_bond(t, b, xf)
            if a >= t - GRID_TOL:
                # Both legs carry N S (P_f(t,a) - P_f(t,b)); only the residual
                # P_d(t,b)(1 + (L + m) tau) / P_d(t,a) - 1 of the MtM leg and the
                # floating spread survive, so they are formed directly.
                pd_a = dom.zero_bond(t, a, x0)
                pf_a = fccy.zero_bond(t, a, xf)
                if domestic_index:
                    resid = self.mtm_spread * tau * pd_b / pd_a
                else:
                    libor = (idx_ccy.zero_bond(t, a, xi) / idx_ccy.zero_bond(t, b, xi) - 1.0) / tau
                    resid = pd_b * (1.0 + (libor + self.mtm_spread) * tau) / pd_a - 1.0
                value = value + self.notional * spot * (pf_a * resid - pf_b * self.float_spread * tau)
            else:
                if fixings is None:
                    raise FixingError(f"period starting {a} needs fixings at t={t}")
                s_fix, lm_fix, lf_fix = (np.asarray(f)[j] for f in fixings)
                if np.any(np.isnan(s_fix)):
                    raise FixingError(f"missing fixing for period starting {a}")
                mtm = pd_b * s_fix * (1.0 + (lm_fix + self.mtm_spread) * tau) - spot * pf_b
                flt = spot * pf_b * (lf_fix + self.float_spread) * tau
                value = value + self.notional * (mtm - flt)
        return self.sign * value

    def proxy_surface(self, model: MarketModel, paths: PathCube) -> np.ndarray:
        """Proxy values on every path at every grid date (post-cashflow)."""
        fixings = self.path_fixings(model, paths)
        nf = model.n_foreign
        out = np.zeros((paths.n_paths, paths.times.size))
        for n, t in enumerate(paths.times):
            if t >= self.maturity - GRID_TOL:
                continue
            x = [paths.factors[i, :, n] for i in range(nf + 1)]
            out[:, n] = self.proxy_value(model, t, x, self._spot(model, paths, n), fixings)
        return out


def proxy_mtm_value(swap: MtmXccySwap, model: MarketModel, t: float, x, spot, fixings=None):
    return swap.proxy_value(model, t, x, spot, fixings)


@dataclass(frozen=True)
class ZeroCouponCashflow:
    """A single domestic cashflow, the simplest forward-BSDE test instrument."""

    amount: float
    date: float

    @property
    def notional(self) -> float:
        return abs(self.amount)

    def cashflow_cube(self, paths: PathCube) -> np.ndarray:
        cf = np.zeros((paths.n_paths, paths.times.size))
        cf[:, _grid_index(paths.times, self.date)] = self.amount
        return cf

"""Independent reference pricers: a Hull-White trinomial lattice, the closed-form
European swaption and a Longstaff-Schwartz regression engine.

All three only handle single-curve Bermudan swaptions whose floating leg pays
plain Libor, so the floating leg collapses to N [P(t, T_start) - P(t, T_end)].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .exposure import ExposureProfile, exposure_profile
from .instruments import BermudanSwaption, ScheduleError
from .market import GRID_TOL, HullWhite, HullWhiteParams, PathCube, YieldCurve, hw_variance_integral, _g

__all__ = [
    "OracleError",
    "LatticeSpec",
    "RegressionBasis",
    "AmcResult",
    "coupon_bond",
    "lattice_bermudan",
    "hw_european_swaption",
    "amc_bermudan",
    "amc_exposure",
]


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    steps_per_year: int = 600
    width: float = 6.0  # truncation in standard deviations of x at the last date

    def __post_init__(self):
        if self.steps_per_year < 12:
            raise OracleError("lattice needs at least 12 steps per year")
        if self.width < 4.0:
            raise OracleError("lattice truncation must be at least 4 standard deviations")


def coupon_bond(berm: BermudanSwaption, entry: float):
    """Payment times and amounts whose value equals the fixed side of the swap entered at `entry`.

    Fixed coupons, less any floating spread coupons, plus the notional at the
    floating leg end.  The payer swap value at `entry` is then N - bond.
    """
    fx, fl = berm.fixed, berm.floating
    if np.any(fl.mult != 1.0):
        raise OracleError("oracles need a plain Libor floating leg (unit multiplier)")
    if np.any(np.abs(fl.pay - fl.end) > GRID_TOL) or np.any(np.abs(fx.pay - fx.end) > GRID_TOL):
        raise OracleError("oracles need payment at accrual end")
    if abs(fx.notional - fl.notional) > 1e-12 * max(1.0, abs(fx.notional)):
        raise OracleError("fixed and floating notionals differ")
    kf = fx.start >= entry - GRID_TOL
    kl = fl.start >= entry - GRID_TOL
    if not np.any(kl):
        raise ScheduleError(f"no floating periods start after {entry}")
    times = np.concatenate([fx.pay[kf], fl.pay[kl]])
    amounts = np.concatenate([fx.notional * fx.rate[kf] * fx.tau[kf],
                              -fl.notional * fl.rate[kl] * fl.tau[kl]])
    times = np.append(times, fl.end[kl][-1])
    amounts = np.append(amounts, fl.notional)
    order = np.argsort(times, kind="stable")
    t, a = times[order], amounts[order]
    ut, inv = np.unique(np.round(t, 12), return_inverse=True)
    return ut, np.bincount(inv, weights=a)


def _flat_vol(params: HullWhiteParams) -> float:
    v = np.unique(params.vols)
    if v.size != 1:
        raise OracleError("the lattice supports a flat volatility only")
    return float(v[0])


def _lattice_steps(horizon: float, dates, spy: int) -> int:
    n0 = int(np.ceil(horizon * spy - 1e-9))
    for n in range(n0, 4 * n0 + 1):
        k = np.asarray(dates) * n / horizon
        if np.all(np.abs(k - np.round(k)) < 1e-6):
            return n
    raise OracleError("exercise dates cannot be placed on a uniform lattice")


def lattice_bermudan(curve: YieldCurve, params: HullWhiteParams, berm: BermudanSwaption,
                     spec: LatticeSpec = LatticeSpec()) -> float:
    """Bermudan swaption price by backward induction on a Hull-White trinomial tree.

    The tree is built on the zero-mean OU factor with the Hull-White branching
    rule, fitted to the curve by forward induction of Arrow-Debreu prices.
    Nodes beyond the truncation width are clamped to the edge.
    """
    sigma = _flat_vol(params)
    kappa = params.kappa
    ex = berm.exercise_dates
    bonds = [coupon_bond(berm, e) for e in ex]
    horizon = max(float(b[0][-1]) for b in bonds)
    notional = berm.notional
    sign = berm.sign

    if sigma == 0.0:
        best = 0.0
        for e, (t, a) in zip(ex, bonds):
            u = sign * (notional - np.sum(a * curve.discount(t)) / curve.discount(e))
            best = max(best, curve.discount(e) * max(u, 0.0))
        return float(best)

    n = _lattice_steps(horizon, np.concatenate([ex, *[b[0] for b in bonds]]), spec.steps_per_year)
    dt = horizon / n
    times = np.arange(n + 1) * dt
    var = sigma ** 2 * -np.expm1(-2.0 * kappa * dt) / (2.0 * kappa)
    dx = np.sqrt(3.0 * var)
    sd = np.sqrt(sigma ** 2 * -np.expm1(-2.0 * kappa * horizon) / (2.0 * kappa))
    jmax = int(np.ceil(spec.width * sd / dx))
    j = np.arange(-jmax, jmax + 1)
    x = j * dx
    mean = x * np.exp(-kappa * dt)
    k = np.round(mean / dx).astype(int)
    eta = mean - k * dx
    q = eta * eta / (6.0 * var)
    r = eta / (2.0 * np.sqrt(3.0 * var))
    pu, pm, pd = 1.0 / 6.0 + q + r, 2.0 / 3.0 - 2.0 * q, 1.0 / 6.0 + q - r
    iu = np.clip(k + 1, -jmax, jmax) + jmax
    im = np.clip(k, -jmax, jmax) + jmax
    idn = np.clip(k - 1, -jmax, jmax) + jmax

    # forward induction for the shift alpha_i
    disc = curve.discount(times)
    alpha = np.empty(n)
    qad = np.zeros(j.size)
    qad[jmax] = 1.0
    edx = np.exp(-x * dt)
    for i in range(n):
        alpha[i] = np.log(np.dot(qad, edx) / disc[i + 1]) / dt
        w = qad * np.exp(-(alpha[i] + x) * dt)
        nxt = np.zeros(j.size)
        np.add.at(nxt, iu, w * pu)
        np.add.at(nxt, im, w * pm)
        np.add.at(nxt, idn, w * pd)
        qad = nxt

    def roll(v, i):
        return np.exp(-(alpha[i] + x) * dt) * (pu * v[iu] + pm * v[im] + pd * v[idn])

    ex_idx = {int(round(e / dt)): m for m, e in enumerate(ex)}
    # one coupon bond per exercise date would be wasteful: the bond entered at
    # T_m keeps only cashflows after T_m, and all of them share the final leg
    t_all, a_all = bonds[0]
    pay_idx = np.round(t_all / dt).astype(int)
    bond = np.zeros(j.size)
    option = np.zeros(j.size)
    first = int(round(ex[0] / dt))
    for i in range(n, first - 1, -1):
        if i < n:
            bond = roll(bond, i)
            option = roll(option, i)
        m = ex_idx.get(i)
        if m is not None:
            u = sign * (notional - bond)
            option = np.maximum(option, u)
        hit = pay_idx == i
        if np.any(hit):
            bond = bond + a_all[hit].sum()
    for i in range(first - 1, -1, -1):
        option = roll(option, i)
    return float(option[jmax])


def hw_european_swaption(curve: YieldCurve, params: HullWhiteParams, berm: BermudanSwaption,
                         expiry: float, t: float = 0.0, x_t=0.0):
    """Price at t of the option to enter the swap at `expiry` (Jamshidian decomposition).

    Vectorised over the state x_t; the value at t = expiry is the intrinsic value.
    """
    ccy = HullWhite(curve, params)
    times, amounts = coupon_bond(berm, expiry)
    x = np.asarray(x_t, dtype=float)
    notional = berm.notional
    if expiry - t <= GRID_TOL:
        u = berm.sign * (notional - ccy.zero_bond(expiry, times, x[..., None]) @ amounts)
        return np.maximum(u, 0.0)

    def bond_at(xs):
        return float(ccy.zero_bond(expiry, times, xs) @ amounts) - notional

    lo, hi = -1.0, 1.0
    while bond_at(lo) < 0:
        lo *= 2.0
    while bond_at(hi) > 0:
        hi *= 2.0
    xstar = brentq(bond_at, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    strikes = ccy.zero_bond(expiry, times, xstar)
    kappa = params.kappa
    var = hw_variance_integral(params, expiry) - np.exp(-2.0 * kappa * (expiry - t)) * hw_variance_integral(params, t)
    sp = np.sqrt(max(var, 0.0)) * _g(kappa, times - expiry)
    p0 = ccy.zero_bond(t, expiry, x)[..., None]
    pi = ccy.zero_bond(t, times, x[..., None])
    h = np.log(pi / (p0 * strikes)) / sp + 0.5 * sp
    if berm.payer:
        legs = strikes * p0 * norm.cdf(-h + sp) - pi * norm.cdf(-h)
    else:
        legs = pi * norm.cdf(h) - strikes * p0 * norm.cdf(h - sp)
    return legs @ amounts


@dataclass(frozen=True)
class RegressionBasis:
    """Ordered basis: 1, x^1..x^k, U^1..U^m, optionally P(t, swap end) and the European."""

    x_powers: int = 0
    u_powers: int = 2
    zero_bond: bool = True
    european: bool = False

    @property
    def size(self) -> int:
        return 1 + self.x_powers + self.u_powers + int(self.zero_bond) + int(self.european)

    def design(self, ccy: HullWhite, berm: BermudanSwaption, t: float, x, entry: float) -> np.ndarray:
        """Design matrix at date t for the swap entered at `entry` >= t."""
        x = np.asarray(x, dtype=float)
        u = berm.forward_underlying(ccy, t, x, entry) / berm.notional
        cols = [np.ones_like(x)]
        xs = x / 0.01
        cols += [xs ** k for k in range(1, self.x_powers + 1)]
        cols += [u ** k for k in range(1, self.u_powers + 1)]
        if self.zero_bond:
            cols.append(ccy.zero_bond(t, berm.maturity, x))
        if self.european:
            # the option on the swap entered at the first exercise date after t
            later = berm.exercise_dates[berm.exercise_dates > t + GRID_TOL]
            expiry = later[0] if later.size else entry
            cols.append(hw_european_swaption(ccy.curve, ccy.params, berm, expiry, t, x) / berm.notional)
        return np.stack(cols, axis=1)


def _lstsq(X, y, tol: float = 1e-13):
    """Least squares on column-equilibrated X; rank deficiency is judged after scaling."""
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0.0):
        raise OracleError("rank-deficient regression basis (zero column)")
    Xs = X / norms
    sv = np.linalg.svd(Xs, compute_uv=False)
    if sv[-1] <= tol * sv[0]:
        raise OracleError("rank-deficient regression basis")
    beta, *_ = np.linalg.lstsq(Xs, y, rcond=None)
    return beta / norms


@dataclass
class AmcResult:
    v0: float
    se: float
    eta: np.ndarray
    exercise_steps: np.ndarray
    coefficients: list
    values_pre: np.ndarray | None = None
    values_post: np.ndarray | None = None
    payoff: np.ndarray | None = None  # discounted policy payoff per path
    meta: dict = field(default_factory=dict)


def _exercise_steps(berm, paths):
    steps = []
    for d in berm.exercise_dates:
        hit = np.nonzero(np.abs(paths.times - d) <= GRID_TOL)[0]
        if hit.size == 0:
            raise ScheduleError(f"exercise date {d} is not on the simulation grid")
        steps.append(int(hit[0]))
    return np.array(steps)


def amc_bermudan(berm: BermudanSwaption, ccy: HullWhite, paths: PathCube,
                 basis: RegressionBasis = RegressionBasis(), coefficients=None,
                 itm_only: bool = True) -> AmcResult:
    """Longstaff-Schwartz value of the Bermudan on `paths`.

    With `coefficients` from an earlier fit the exercise policy is reused
    (out-of-sample valuation); otherwise it is regressed on these paths.
    Exercise happens when U exceeds both 0 and the regressed continuation.
    """
    steps = _exercise_steps(berm, paths)
    u = berm.exercise_cube(ccy, paths)
    num = paths.numeraire
    n_ex = steps.size
    P = paths.n_paths
    eta = np.ones((P, n_ex))
    coefs = [None] * n_ex
    cf = np.zeros(P)
    for m in range(n_ex - 1, -1, -1):
        s = steps[m]
        um = u[:, m]
        if m == n_ex - 1:
            ex = um > 0.0
        else:
            X = basis.design(ccy, berm, paths.times[s], paths.factors[0, :, s], berm.exercise_dates[m])
            if coefficients is not None:
                beta = np.asarray(coefficients[m])
            else:
                sel = um > 0.0 if itm_only and np.count_nonzero(um > 0.0) > 4 * basis.size else slice(None)
                beta = _lstsq(X[sel], cf[sel] * num[sel, s])
            coefs[m] = beta
            cont = X @ beta
            ex = (um > 0.0) & (um > cont)
        eta[:, m] = np.where(ex, 0.0, 1.0)
        cf = np.where(ex, um / num[:, s], cf)
    return AmcResult(float(cf.mean()), float(cf.std(ddof=1) / np.sqrt(P)), eta, steps, coefs, payoff=cf)


def amc_exposure(berm: BermudanSwaption, ccy: HullWhite, paths: PathCube,
                 basis: RegressionBasis = RegressionBasis(), credit_steps=None,
                 discounted: bool = True, coefficients=None) -> tuple[ExposureProfile, AmcResult]:
    """Exposure profile of a cash-settled Bermudan from regressed future values.

    At every grid date before the last exercise the value of the exercise
    policy from the next exercise date on is regressed on the basis, using
    all paths.  At exercise dates the pre-jump value is U where the policy
    exercises and the continuation estimate elsewhere.
    """
    res = amc_bermudan(berm, ccy, paths, basis, coefficients)
    if berm.settlement != "cash":
        raise OracleError("regression exposures are implemented for cash settlement")
    steps = res.exercise_steps
    u = berm.exercise_cube(ccy, paths)
    num = paths.numeraire
    P, n_times = paths.n_paths, paths.times.size
    # discounted payoff of the policy restricted to exercise dates >= m
    from_m = np.zeros((steps.size + 1, P))
    for m in range(steps.size - 1, -1, -1):
        ex = res.eta[:, m] == 0.0
        from_m[m] = np.where(ex, u[:, m] / num[:, steps[m]], from_m[m + 1])
    pre = np.zeros((P, n_times))
    post = np.zeros((P, n_times))
    for n in range(steps[-1]):
        m = int(np.searchsorted(steps, n, side="right"))
        t = paths.times[n]
        X = basis.design(ccy, berm, t, paths.factors[0, :, n], berm.exercise_dates[m])
        y = from_m[m] * num[:, n]
        v = X @ _lstsq(X, y) if n > 0 else np.full(P, y.mean())
        post[:, n] = v
        pre[:, n] = v
    for m, s in enumerate(steps):
        ex = res.eta[:, m] == 0.0
        pre[:, s] = np.where(ex, u[:, m], post[:, s])
    prof = exposure_profile(paths.times, pre, post, num, res.eta, steps, credit_steps=credit_steps,
                            discounted=discounted, method="amc")
    res.values_pre, res.values_post = pre, post
    return prof, res

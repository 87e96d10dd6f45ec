"""Post-hoc study of learned value clouds: Bachelier fits, quadratic fits and
k-nearest-neighbour projection onto a slice of the state space."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm

__all__ = [
    "FitError",
    "ProjectionError",
    "ScatterSet",
    "FitReport",
    "bachelier",
    "bachelier_jacobian",
    "default_bachelier_bounds",
    "bachelier_fit",
    "quadratic_fit",
    "knn_project",
    "bootstrap",
    "bootstrap_quadratic",
]


class FitError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class ProjectionError(ValueError):
    pass


@dataclass
class ScatterSet:
    """Abscissa x, ordinate v and optional conditioning coordinates cond (n, k)."""

    x: np.ndarray
    v: np.ndarray
    cond: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.v = np.asarray(self.v, dtype=float).ravel()
        if self.x.size != self.v.size:
            raise ValueError("x and v must have equal lengths")
        if self.cond is not None:
            c = np.asarray(self.cond, dtype=float)
            self.cond = c.reshape(self.x.size, -1)
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise ValueError("scatter entries must be finite")
        if self.cond is not None and not np.all(np.isfinite(self.cond)):
            raise ValueError("conditioning coordinates must be finite")

    def __len__(self):
        return self.x.size

    def take(self, idx) -> "ScatterSet":
        return ScatterSet(self.x[idx], self.v[idx], None if self.cond is None else self.cond[idx])


@dataclass
class FitReport:
    params: dict
    bounds: dict
    rss: float
    r2: float
    converged: bool
    n_iter: int = 0
    history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def summary(self) -> str:
        lines = [f"{k} = {v:.10g}" + (f"  bounds {self.bounds[k]}" if k in self.bounds else "")
                 for k, v in self.params.items()]
        lines += [f"rss = {self.rss:.10g}", f"r2 = {self.r2:.10g}", f"converged = {self.converged}",
                  f"iterations = {self.n_iter}"]
        lines += [f"{k} = {v}" for k, v in self.extra.items()]
        return "\n".join(lines)


def _r2(v, rss):
    tss = float(np.sum((v - v.mean()) ** 2))
    return 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else -np.inf)


def bachelier(x, A, c, s):
    """A [(x - c) Phi((x - c)/s) + s phi((x - c)/s)]."""
    d = (np.asarray(x, dtype=float) - c) / s
    return A * ((x - c) * norm.cdf(d) + s * norm.pdf(d))


def bachelier_jacobian(x, A, c, s):
    """Columns dV/dA, dV/dc, dV/ds."""
    x = np.asarray(x, dtype=float)
    d = (x - c) / s
    cdf, pdf = norm.cdf(d), norm.pdf(d)
    return np.stack([(x - c) * cdf + s * pdf, -A * cdf, A * pdf], axis=1)


def default_bachelier_bounds(x, notional: float = 1.0) -> dict:
    lo, hi = float(np.min(x)), float(np.max(x))
    w = hi - lo
    return {"A": (0.0, 10.0 * notional), "c": (lo - w, hi + w), "s": (1e-5, 0.1)}


def _lm(x, v, p0, lo, hi, max_iter, tol):
    """Projected Levenberg-Marquardt that only accepts objective-reducing steps."""
    p = np.clip(np.asarray(p0, dtype=float), lo, hi)
    r = bachelier(x, *p) - v
    f = float(r @ r)
    hist = [f]
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = bachelier_jacobian(x, *p)
        g = J.T @ r
        H = J.T @ J
        diag = np.maximum(np.diag(H), 1e-300)
        improved = False
        for _ in range(30):
            try:
                step = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            q = np.clip(p + step, lo, hi)
            rq = bachelier(x, *q) - v
            fq = float(rq @ rq)
            if np.isfinite(fq) and fq < f:
                improved = True
                break
            lam *= 10.0
        if not improved:
            converged = True
            break
        rel = (f - fq) / max(f, 1e-300)
        dp = np.max(np.abs(q - p) / np.maximum(np.abs(p), 1e-12))
        p, r, f = q, rq, fq
        hist.append(f)
        lam = max(lam / 10.0, 1e-12)
        if rel < tol or dp < tol or f == 0.0:
            converged = True
            break
    return p, f, converged, it, hist


def bachelier_fit(scatter: ScatterSet, bounds: dict | None = None, notional: float = 1.0,
                  grid: int = 5, max_iter: int = 200, tol: float = 1e-14) -> FitReport:
    """Bounded least-squares fit of (A, c, s): multi-start grid, then damped Gauss-Newton.

    Raises FitError (with the best report attached) if no start converges.
    """
    if len(scatter) < 10:
        raise FitError("a Bachelier fit needs at least 10 points")
    b = bounds or default_bachelier_bounds(scatter.x, notional)
    lo = np.array([b["A"][0], b["c"][0], b["s"][0]], dtype=float)
    hi = np.array([b["A"][1], b["c"][1], b["s"][1]], dtype=float)
    if lo[2] <= 0:
        raise FitError("the lower bound of s must be positive")
    x, v = scatter.x, scatter.v
    axes = [np.linspace(lo[i], hi[i], grid + 2)[1:-1] for i in range(3)]
    axes[2] = np.geomspace(lo[2], hi[2], grid + 2)[1:-1]
    starts = list(itertools.product(*axes))
    order = np.argsort([np.sum((bachelier(x, *p0) - v) ** 2) for p0 in starts], kind="stable")
    best = None
    for i in order:
        p, f, ok, it, hist = _lm(x, v, starts[i], lo, hi, max_iter, tol)
        if best is None or f < best[1] - 1e-15 * max(best[1], 1.0) or (ok and not best[2] and f <= best[1]):
            best = (p, f, ok, it, hist)
    p, f, ok, it, hist = best
    rep = FitReport({"A": p[0], "c": p[1], "s": p[2]}, b, f, _r2(v, f), ok, it, hist,
                    {"starts": len(starts)})
    if not ok:
        raise FitError("no start of the Bachelier fit converged", rep)
    return rep


def quadratic_fit(scatter: ScatterSet, scale: float = 1e7) -> FitReport:
    """OLS of v/scale on (x^2, x, 1); reports a, b, c, standard errors and a/b."""
    x, y = scatter.x, scatter.v / scale
    if np.unique(x).size < 3:
        raise FitError("a quadratic fit needs at least 3 distinct abscissae")
    X = np.stack([x * x, x, np.ones_like(x)], axis=1)
    if np.linalg.matrix_rank(X) < 3:
        raise FitError("rank-deficient quadratic design")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - X @ beta
    rss = float(res @ res)
    n = x.size
    extra = {"scale": scale}
    if n > 3:
        cov = rss / (n - 3) * np.linalg.inv(X.T @ X)
        se = np.sqrt(np.maximum(np.diag(cov), 0.0))
        extra.update({"a_se": se[0], "b_se": se[1], "c_se": se[2]})
    extra["a_over_b"] = beta[0] / beta[1] if beta[1] != 0 else np.inf
    return FitReport({"a": beta[0], "b": beta[1], "c": beta[2]}, {}, rss, _r2(y, rss), True, 0, [], extra)


def _zscore(a, ref):
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (a - mu) / sd


def knn_project(scatter: ScatterSet, target=None, k: int = 50, queries=None, n_queries: int = 41,
                pin_radius: float | None = None) -> ScatterSet:
    """Average v over the k nearest samples to (x_q, target) in z-scored coordinates.

    Queries default to a uniform grid between the 2% and 98% quantiles of x,
    since the sparse tails bias a neighbour average towards the bulk.  With
    `pin_radius` only samples whose standardized conditioning coordinates lie
    within that distance of the target take part.
    """
    n = len(scatter)
    if not 1 <= k <= n:
        raise ProjectionError(f"k must lie in [1, {n}]")
    if queries is None:
        xq = np.linspace(*np.quantile(scatter.x, [0.02, 0.98]), n_queries)
    else:
        xq = np.asarray(queries, dtype=float).ravel()
    if scatter.cond is None:
        pts = scatter.x[:, None]
        qs = xq[:, None]
        ref = pts
    else:
        tgt = np.zeros(scatter.cond.shape[1]) if target is None else np.asarray(target, dtype=float).ravel()
        if tgt.size != scatter.cond.shape[1]:
            raise ProjectionError("target does not match the conditioning coordinates")
        ref = np.column_stack([scatter.x, scatter.cond])
        pts = ref
        qs = np.column_stack([xq, np.broadcast_to(tgt, (xq.size, tgt.size))])
    zp = _zscore(pts, ref)
    zq = _zscore(qs, ref)
    v = scatter.v
    if pin_radius is not None and scatter.cond is not None:
        keep = np.linalg.norm(zp[:, 1:] - zq[0, 1:], axis=1) <= pin_radius
        if not np.any(keep):
            raise ProjectionError("no samples remain near the target after pinning")
        zp, v = zp[keep], v[keep]
        if k > v.size:
            raise ProjectionError(f"only {v.size} samples remain near the target, fewer than k={k}")
    tree = cKDTree(zp)
    _, idx = tree.query(zq, k=k)
    idx = np.asarray(idx).reshape(xq.size, k)
    # exactly rounded sums keep the result independent of sample order
    vhat = np.array([math.fsum(v[row]) / k for row in idx])
    return ScatterSet(xq, vhat)


def bootstrap(scatter: ScatterSet, stat, n_boot: int = 1000, seed: int = 0, alpha: float = 0.05):
    """Percentile bootstrap of stat(scatter): returns (estimate, (lo, hi), samples)."""
    rng = np.random.default_rng(seed)
    n = len(scatter)
    est = stat(scatter)
    samples = np.empty(n_boot)
    for b in range(n_boot):
        samples[b] = stat(scatter.take(rng.integers(0, n, n)))
    lo, hi = np.quantile(samples, [alpha / 2, 1 - alpha / 2])
    return est, (float(lo), float(hi)), samples


def bootstrap_quadratic(scatter: ScatterSet, scale: float = 1e7, n_boot: int = 1000, seed: int = 0,
                        alpha: float = 0.05):
    """Bootstrap confidence interval for the quadratic coefficient a."""
    return bootstrap(scatter, lambda s: quadratic_fit(s, scale).params["a"], n_boot, seed, alpha)

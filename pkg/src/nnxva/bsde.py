"""Deep-BSDE rollouts of future portfolio values.

The numeraire-deflated value V~ = V / B is driftless, so across a grid step

    V~(T_{n+1}) = V~(T_n) + sum_i Z_i^(n) sigma_i^(n) dW_i^(n)

with the Deltas Z^(n) given by a per-step network of the factors X(T_n),
and by the free vector Z^(0) on the first step.  Cashflows and exercise
decisions enter as jumps at flagged dates.  Products without early exercise
are rolled forward from the trainable V_0 and penalised on the terminal
value; products with exercise rights are rolled backward from zero and
penalised on the spread of the path values at time 0 around V_0.

Because the diffusion term is linear in the Deltas, the gradient of either
loss reaches every network through a per-path, per-step coefficient; the
exercise max only switches that coefficient off on paths where exercise
wins.  All values inside the engine are divided by `problem.scale`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .instruments import BermudanSwaption
from .market import HullWhite, PathCube
from .neural import (
    AdamState,
    MlpSpec,
    TrainingError,
    adam_step,
    init_params,
    stacked_backward,
    stacked_forward,
    stacked_forward_cached,
)

__all__ = [
    "RolloutError",
    "BsdeProblem",
    "TrainableState",
    "RolloutResult",
    "bermudan_problem",
    "cashflow_problem",
    "init_state",
    "forward_rollout",
    "backward_rollout",
    "rollout",
    "loss_forward_style",
    "loss_backward_style",
    "loss_and_gradient",
    "train",
    "evaluate_once",
]

log = logging.getLogger(__name__)


class RolloutError(FloatingPointError):
    pass


@dataclass
class BsdeProblem:
    """Everything a rollout needs that does not depend on the networks.

    `cashflows[p, n]` are domestic amounts paid at grid date n; `exercise[p, m]`
    are exercise values at grid indices `exercise_steps[m]`.  Value surfaces
    are produced up to grid index `horizon` and are zero beyond it.
    """

    paths: PathCube
    style: str
    scale: float = 1.0
    cashflows: np.ndarray | None = None
    exercise: np.ndarray | None = None
    exercise_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    horizon: int | None = None

    def __post_init__(self):
        if self.style not in ("forward", "backward"):
            raise ValueError(f"unknown rollout style {self.style!r}")
        if self.horizon is None:
            self.horizon = self.paths.n_steps
        self.exercise_steps = np.asarray(self.exercise_steps, dtype=int)
        if self.style == "forward" and self.exercise_steps.size:
            raise ValueError("forward rollouts cannot carry exercise rights")
        if self.exercise is not None and self.exercise.shape != (self.paths.n_paths, self.exercise_steps.size):
            raise ValueError("exercise cube does not match paths and exercise dates")
        if not 1 <= self.horizon <= self.paths.n_steps:
            raise ValueError("horizon must lie on the grid after t=0")

    @property
    def n_paths(self) -> int:
        return self.paths.n_paths

    @property
    def n_networks(self) -> int:
        return self.horizon - 1


def bermudan_problem(berm: BermudanSwaption, ccy: HullWhite, paths: PathCube, exercise=None) -> BsdeProblem:
    """Backward problem for a Bermudan; the rollout stops at the last exercise date."""
    steps = np.array([int(np.argmin(np.abs(paths.times - d))) for d in berm.exercise_dates])
    if np.any(np.abs(paths.times[steps] - berm.exercise_dates) > 1e-9):
        raise ValueError("exercise dates must lie on the simulation grid")
    if exercise is None:
        exercise = berm.exercise_cube(ccy, paths)
    return BsdeProblem(paths, "backward", berm.notional, exercise=exercise,
                       exercise_steps=steps, horizon=int(steps[-1]))


def cashflow_problem(cashflows: np.ndarray, paths: PathCube, scale: float = 1.0,
                     style: str = "forward", horizon: int | None = None) -> BsdeProblem:
    if horizon is None:
        nz = np.nonzero(np.any(cashflows != 0.0, axis=0))[0]
        horizon = int(nz[-1]) if nz.size and nz[-1] > 0 else paths.n_steps
    return BsdeProblem(paths, style, scale, cashflows=cashflows, horizon=horizon)


@dataclass
class TrainableState:
    """V_0 and Z^(0) in scaled units, per-step networks and input standardisation."""

    spec: MlpSpec
    v0: float
    z0: np.ndarray
    nets: np.ndarray
    input_mean: np.ndarray
    input_std: np.ndarray
    scale: float = 1.0
    shared: bool = False
    adam: AdamState | None = None

    @property
    def value0(self) -> float:
        return float(self.v0 * self.scale)

    @property
    def n_trainable(self) -> int:
        return 1 + self.z0.size + self.nets.size

    def flat(self) -> np.ndarray:
        return np.concatenate([[self.v0], self.z0, self.nets.ravel()])

    def set_flat(self, theta: np.ndarray) -> None:
        d = self.z0.size
        self.v0 = float(theta[0])
        self.z0 = np.array(theta[1:1 + d])
        self.nets = np.array(theta[1 + d:]).reshape(self.nets.shape)

    def copy(self) -> "TrainableState":
        adam = None
        if self.adam is not None:
            a = self.adam
            adam = AdamState(a.size, a.lr, a.beta1, a.beta2, a.eps, a.step, a.m.copy(), a.v.copy())
        return TrainableState(self.spec, self.v0, self.z0.copy(), self.nets.copy(), self.input_mean.copy(),
                              self.input_std.copy(), self.scale, self.shared, adam)


def init_state(problem: BsdeProblem, spec: MlpSpec | None = None, seed: int = 0,
               shared: bool = False, v0: float = 0.0, standardize: bool = True) -> TrainableState:
    """Random networks, V_0 = v0 (currency) and Z^(0) = 0; input stats from the training paths."""
    d = problem.paths.n_factors
    spec = spec or MlpSpec.default(d)
    if spec.input_dim != d or spec.output_dim != d:
        raise ValueError(f"network must map {d} factors to {d} Deltas")
    m = problem.n_networks
    x = problem.paths.factors[:, :, 1:problem.horizon]
    if standardize and m > 0:
        mean = x.mean(axis=1).T
        std = x.std(axis=1).T
        std = np.where(std > 1e-12, std, 1.0)
    else:
        mean = np.zeros((m, d))
        std = np.ones((m, d))
    nets = init_params(spec, seed, 1 if shared else m)
    return TrainableState(spec, v0 / problem.scale, np.zeros(d), nets, mean, std, problem.scale, shared)


@dataclass
class RolloutResult:
    """Value surfaces in currency at T_n^- (pre) and T_n^+ (post) on every path.

    `residuals` are the scaled per-path loss terms; `eta[p, m]` is 0 where the
    rollout exercised at exercise date m.
    """

    values_pre: np.ndarray
    values_post: np.ndarray
    loss: float
    residuals: np.ndarray
    style: str
    v0: float
    eta: np.ndarray | None = None
    initial_values: np.ndarray | None = None


class _Prepared:
    """Scaled, discounted problem tensors reused across training steps."""

    def __init__(self, problem: BsdeProblem, state: TrainableState, paths: slice | np.ndarray | None = None):
        pc = problem.paths
        sel = slice(None) if paths is None else paths
        h = problem.horizon
        self.h = h
        self.numeraire = pc.numeraire[sel, :h + 1]
        disc = 1.0 / self.numeraire
        dw = pc.increments[:, sel, :h]
        # sigma_i^(n) dW_i^(n), laid out (n, p, i)
        self.vdw = np.transpose(pc.diffusion[:, None, :h] * dw, (2, 1, 0))
        x = np.transpose(pc.factors[:, sel, 1:h], (2, 1, 0))
        self.inputs = (x - state.input_mean[:, None, :]) / state.input_std[:, None, :]
        self.cf = None
        if problem.cashflows is not None:
            self.cf = problem.cashflows[sel, :h + 1] * disc / problem.scale
        self.ex_steps = problem.exercise_steps
        self.ex = None
        if problem.exercise is not None:
            self.ex = problem.exercise[sel] * disc[:, problem.exercise_steps] / problem.scale
        self.n_paths = self.numeraire.shape[0]


def _nets(state: TrainableState, m: int):
    if state.shared:
        return np.broadcast_to(state.nets, (m, state.nets.shape[-1]))
    return state.nets


def _diffusion(prep: _Prepared, state: TrainableState, cached: bool):
    """Per-step diffusion increments dif[n, p] and the network cache."""
    dif = np.empty((prep.h, prep.n_paths))
    dif[0] = prep.vdw[0] @ state.z0
    cache = None
    m = prep.h - 1
    if m > 0:
        nets = _nets(state, m)
        if cached:
            z, cache = stacked_forward_cached(state.spec, nets, prep.inputs)
        else:
            z = stacked_forward(state.spec, nets, prep.inputs)
        dif[1:] = np.einsum("npi,npi->np", z, prep.vdw[1:])
    return dif, cache


def _check_finite(arr, what):
    bad = ~np.isfinite(arr)
    if np.any(bad):
        p, n = np.argwhere(bad)[0]
        raise RolloutError(f"non-finite {what} on path {p} at step {n}")


def _forward(prep: _Prepared, state: TrainableState, dif):
    h, P = prep.h, prep.n_paths
    pre = np.empty((P, h + 1))
    post = np.empty((P, h + 1))
    v = np.full(P, state.v0)
    for n in range(h + 1):
        if n > 0:
            v = v + dif[n - 1]
        pre[:, n] = v
        if prep.cf is not None:
            v = v - prep.cf[:, n]
        post[:, n] = v
    _check_finite(post, "value")
    residual = post[:, h] * prep.numeraire[:, h]
    return pre, post, residual


def _backward(prep: _Prepared, state: TrainableState, dif):
    h, P = prep.h, prep.n_paths
    pre = np.empty((P, h + 1))
    post = np.empty((P, h + 1))
    live = np.ones((P, h))  # d V_p0 / d(diffusion step n) up to the sign
    eta = np.ones((P, prep.ex_steps.size))
    ex_at = {int(s): m for m, s in enumerate(prep.ex_steps)}
    chosen = []
    v = np.zeros(P)
    for n in range(h, -1, -1):
        if n < h:
            v = v - dif[n]
        post[:, n] = v
        if prep.cf is not None:
            v = v + prep.cf[:, n]
        m = ex_at.get(n)
        if m is not None:
            u = prep.ex[:, m]
            ex = u > v
            eta[:, m] = np.where(ex, 0.0, 1.0)
            v = np.where(ex, u, v)
            chosen.append((n, ex))
        pre[:, n] = v
    _check_finite(pre, "value")
    # the increment of step n passes through every exercise jump at dates <= n
    for n_ex, ex in sorted(chosen):
        live[ex, n_ex:] = 0.0
    return pre, post, eta, live


def _result(problem, prep, state, pre, post, residual, eta=None, initial=None):
    scale = problem.scale
    full = problem.paths.n_steps + 1
    h = prep.h
    vpre = np.zeros((prep.n_paths, full))
    vpost = np.zeros((prep.n_paths, full))
    vpre[:, :h + 1] = pre * prep.numeraire * scale
    vpost[:, :h + 1] = post * prep.numeraire * scale
    loss = float(np.mean(residual ** 2))
    return RolloutResult(vpre, vpost, loss, residual, problem.style, state.value0, eta, initial)


def forward_rollout(problem: BsdeProblem, state: TrainableState) -> RolloutResult:
    if problem.style != "forward" or problem.exercise_steps.size:
        raise ValueError("forward rollout needs a problem without exercise rights")
    prep = _Prepared(problem, state)
    dif, _ = _diffusion(prep, state, cached=False)
    pre, post, residual = _forward(prep, state, dif)
    return _result(problem, prep, state, pre, post, residual)


def backward_rollout(problem: BsdeProblem, state: TrainableState) -> RolloutResult:
    if problem.style != "backward":
        raise ValueError("backward rollout needs a backward-style problem")
    if problem.exercise_steps.size and problem.exercise is None:
        raise ValueError("exercise dates given without exercise values")
    prep = _Prepared(problem, state)
    dif, _ = _diffusion(prep, state, cached=False)
    pre, post, eta, _ = _backward(prep, state, dif)
    initial = pre[:, 0]
    residual = initial - state.v0
    return _result(problem, prep, state, pre, post, residual, eta, initial * problem.scale)


def rollout(problem: BsdeProblem, state: TrainableState) -> RolloutResult:
    if problem.style == "forward":
        return forward_rollout(problem, state)
    return backward_rollout(problem, state)


def loss_backward_style(result: RolloutResult) -> float:
    """(1/A) sum_p (V_p0 - V_0)^2 in scaled units, A the number of paths."""
    return float(np.mean(np.asarray(result.residuals) ** 2))


def loss_forward_style(result: RolloutResult) -> float:
    """(1/A) sum_p V(T_N^+)^2 in scaled units."""
    return float(np.mean(np.asarray(result.residuals) ** 2))


def loss_and_gradient(problem: BsdeProblem, state: TrainableState, paths=None, prep: _Prepared | None = None):
    """Loss and its gradient w.r.t. the flat trainables (V_0, Z^(0), networks)."""
    prep = prep or _Prepared(problem, state, paths)
    dif, cache = _diffusion(prep, state, cached=True)
    P = prep.n_paths
    if problem.style == "forward":
        _, _, residual = _forward(prep, state, dif)
        g = 2.0 * residual / P
        g_v0 = float(np.sum(g * prep.numeraire[:, -1]))
        coef = np.broadcast_to((g * prep.numeraire[:, -1])[None, :], (prep.h, P))
    else:
        pre, _, _, live = _backward(prep, state, dif)
        residual = pre[:, 0] - state.v0
        g = 2.0 * residual / P
        g_v0 = -float(np.sum(g))
        coef = -(live * g[:, None]).T
    loss = float(np.mean(residual ** 2))
    # coef[n, p] = dL / d dif[n, p]
    g_z0 = coef[0] @ prep.vdw[0]
    m = prep.h - 1
    if m > 0:
        upstream = coef[1:, :, None] * prep.vdw[1:]
        g_nets, _ = stacked_backward(state.spec, _nets(state, m), prep.inputs, upstream, cache, input_grad=False)
        if state.shared:
            g_nets = g_nets.sum(axis=0, keepdims=True)
    else:
        g_nets = np.zeros_like(state.nets)
    grad = np.concatenate([[g_v0], g_z0, g_nets.ravel()])
    return loss, grad


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    v0: list = field(default_factory=list)


def train(problem: BsdeProblem, state: TrainableState, steps: int, lr: float = 0.01,
          lr_schedule: dict[int, float] | None = None, batch_size: int | None = None,
          seed: int = 0, log_every: int = 0):
    """Adam on the full-rollout gradient.  Returns (state, history).

    `history.loss[k]` is the loss after k updates (so it has steps + 1 entries).
    `lr_schedule` maps a step index to the learning rate used from that step on.
    """
    state = state.copy()
    if state.adam is None:
        state.adam = AdamState(state.n_trainable, lr=lr)
    hist = TrainHistory()
    rng = np.random.default_rng(seed)
    full = None if batch_size else _Prepared(problem, state)
    current_lr = state.adam.lr
    schedule = dict(lr_schedule or {})
    theta = state.flat()
    for k in range(steps + 1):
        if full is not None:
            loss, grad = loss_and_gradient(problem, state, prep=full)
        else:
            idx = np.sort(rng.choice(problem.n_paths, size=batch_size, replace=False))
            loss, grad = loss_and_gradient(problem, state, paths=idx)
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged at step {k}; history {hist.loss[-5:]}")
        hist.loss.append(loss)
        hist.v0.append(state.value0)
        if log_every and k % log_every == 0:
            log.info("step %5d  loss %.4e  V0 %.6g", k, loss, state.value0)
        if k == steps:
            break
        if k in schedule:
            current_lr = schedule[k]
        theta, _ = adam_step(state.adam, theta, grad, lr=current_lr)
        state.set_flat(theta)
    return state, hist


def evaluate_once(problem: BsdeProblem, state: TrainableState) -> RolloutResult:
    """One more rollout with trained parameters, kept for exposure calculations."""
    return rollout(problem, state)

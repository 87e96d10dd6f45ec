"""Shared builders for the test suite."""

import numpy as np

from nnxva.bsde import BsdeProblem, bermudan_problem, cashflow_problem, init_state, loss_and_gradient, rollout
from nnxva.instruments import BermudanSwaption, SwapLeg, ZeroCouponCashflow
from nnxva.market import FxParams, HullWhite, HullWhiteParams, MarketModel, TimeGrid, YieldCurve
from nnxva.neural import MlpSpec

XCCY_CORR = np.array([[1.0, 0.149, 0.139], [0.149, 1.0, 0.676], [0.139, 0.676, 1.0]])
XCCY_DATES = np.array([0.0, 1 / 12, 1 / 3, 7 / 12, 5 / 6])


def hw(rate=0.01, vol=0.01, kappa=0.01):
    return HullWhite(YieldCurve.flat(rate), HullWhiteParams.flat(kappa, vol))


def xccy_model(sig0=0.001, sig1=0.001, eta=0.2, corr=XCCY_CORR):
    return MarketModel(hw(0.01, sig0), ((hw(0.02, sig1), FxParams.flat(0.76, eta)),), corr)


def reference_bermudan(settlement="cash", payer=True):
    fixed = SwapLeg.regular("fixed", 10000.0, 1.5, 4.0, 2, 0.028)
    flt = SwapLeg.regular("float", 10000.0, 1.5, 4.0, 4)
    return BermudanSwaption(fixed, flt, np.array([1.5, 2.0, 2.5, 3.0, 3.5]), settlement, payer)


def tiny_problems(seed=0):
    """2-path, 3-step forward and backward problems with width-3 networks."""
    ccy = hw(0.02, 0.01, 0.05)
    grid = TimeGrid([0.0, 0.5, 1.0, 1.5])
    paths = MarketModel(ccy).simulate(grid, 2, seed)
    cf = ZeroCouponCashflow(1.0, 1.5).cashflow_cube(paths)
    fwd = cashflow_problem(cf, paths, 1.0, "forward")
    ex = np.array([[0.2, 0.9], [0.6, 0.1]])
    bwd = BsdeProblem(paths, "backward", 1.0, exercise=ex, exercise_steps=np.array([1, 3]), horizon=3)
    spec = MlpSpec(1, (3, 3), 1)
    return fwd, bwd, spec


def perturbed_state(problem, spec, seed=0, scale=0.3):
    st = init_state(problem, spec, seed)
    rng = np.random.default_rng(seed + 100)
    st.set_flat(st.flat() + rng.normal(0, scale, st.n_trainable))
    return st


def fd_gradient(problem, state, h=1e-6):
    theta = state.flat()
    out = np.empty_like(theta)
    probe = state.copy()
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        probe.set_flat(theta + e)
        up = rollout(problem, probe).loss
        probe.set_flat(theta - e)
        dn = rollout(problem, probe).loss
        out[k] = (up - dn) / (2 * h)
    return out


def gradient_rel_error(problem, state, h=1e-6):
    _, g = loss_and_gradient(problem, state)
    num = fd_gradient(problem, state, h)
    return float(np.max(np.abs(g - num)) / max(np.max(np.abs(num)), 1e-300)), g, num


def bermudan_setup(n_paths=8192, seed=7, spy=12):
    ccy = hw(0.028, 0.01, 0.01)
    b = reference_bermudan()
    grid = TimeGrid.build(4.0, spy, {"exercise": b.exercise_dates})
    paths = MarketModel(ccy).simulate(grid, n_paths, seed)
    return ccy, b, paths, bermudan_problem(b, ccy, paths)

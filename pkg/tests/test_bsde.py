import numpy as np
import pytest

from nnxva.bsde import (BsdeProblem, RolloutError, RolloutResult, cashflow_problem, init_state,
                        loss_and_gradient, loss_backward_style, loss_forward_style, rollout, train)
from nnxva.instruments import ZeroCouponCashflow
from nnxva.market import MarketModel, TimeGrid
from nnxva.neural import MlpSpec

from support import gradient_rel_error, hw, perturbed_state, tiny_problems


def _result(residuals):
    r = np.asarray(residuals, dtype=float)
    return RolloutResult(np.zeros((r.size, 1)), np.zeros((r.size, 1)), float(np.mean(r ** 2)), r, "forward", 0.0)


def test_backward_loss_examples():
    assert loss_backward_style(_result([0.0, 0.0, 0.0])) == 0.0
    assert loss_backward_style(_result([1.0, -1.0])) == 1.0


def test_forward_loss_examples():
    assert loss_forward_style(_result([0.0, 0.0])) == 0.0
    assert loss_forward_style(_result([2.0, -2.0])) == 4.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_finite_differences(seed):
    fwd, bwd, spec = tiny_problems(seed)
    for prob in (fwd, bwd):
        err, _, _ = gradient_rel_error(prob, perturbed_state(prob, spec, seed))
        assert err <= 1e-5, prob.style


def test_shared_network_gradient():
    fwd, bwd, spec = tiny_problems(3)
    for prob in (fwd, bwd):
        st = init_state(prob, spec, 0, shared=True)
        st.set_flat(st.flat() + np.random.default_rng(4).normal(0, 0.3, st.n_trainable))
        err, _, _ = gradient_rel_error(prob, st)
        assert err <= 1e-5


def test_minibatch_gradient_shape():
    fwd, _, spec = tiny_problems(0)
    st = perturbed_state(fwd, spec, 0)
    lb, gb = loss_and_gradient(fwd, st, paths=np.array([1]))
    lf, gf = loss_and_gradient(fwd, st)
    assert np.isfinite(lb) and gb.shape == gf.shape


def test_deterministic_limit_zero_residuals():
    ccy = hw(0.02, 0.0)
    grid = TimeGrid.build(2.0, 4)
    paths = MarketModel(ccy).simulate(grid, 5, seed=0)
    cf = np.zeros((5, len(grid)))
    cf[:, 2] = 3.0
    cf[:, -1] = 100.0
    prob = cashflow_problem(cf, paths, 100.0)
    pv = 3.0 * ccy.curve.discount(grid.times[2]) + 100.0 * ccy.curve.discount(2.0)
    st = init_state(prob, MlpSpec.default(1), 0, v0=pv)
    res = rollout(prob, st)
    assert np.max(np.abs(res.residuals)) < 1e-14
    assert res.loss < 1e-28


def test_exercise_tie_continues():
    _, bwd, spec = tiny_problems(0)
    st = init_state(bwd, spec, 0)
    # zero networks and Z0 give a continuation value of exactly 0 at every date
    st.set_flat(np.zeros(st.n_trainable))
    ex = np.zeros_like(bwd.exercise)
    ex[0, 0] = 0.5
    prob = BsdeProblem(bwd.paths, "backward", 1.0, exercise=ex, exercise_steps=bwd.exercise_steps, horizon=3)
    res = rollout(prob, st)
    assert res.eta.tolist() == [[0.0, 1.0], [1.0, 1.0]]


def test_pre_exercise_value_dominates_exercise_value():
    _, bwd, spec = tiny_problems(1)
    res = rollout(bwd, perturbed_state(bwd, spec, 1))
    for m, n in enumerate(bwd.exercise_steps):
        assert np.all(res.values_pre[:, n] >= bwd.exercise[:, m] - 1e-12)
        hit = res.eta[:, m] == 0
        assert np.allclose(res.values_pre[hit, n], bwd.exercise[hit, m])


def test_nan_inputs_raise_rollout_error():
    fwd, _, spec = tiny_problems(0)
    st = perturbed_state(fwd, spec, 0)
    fwd.paths.increments[0, 1, 1] = np.nan
    with pytest.raises(RolloutError, match="path 1"):
        rollout(fwd, st)


def test_zero_steps_leave_state():
    fwd, _, spec = tiny_problems(0)
    st = perturbed_state(fwd, spec, 0)
    out, hist = train(fwd, st, 0)
    assert np.array_equal(out.flat(), st.flat())
    assert len(hist.loss) == 1


def _zcb(n_paths=2048, seed=3):
    ccy = hw(0.01, 0.01, 0.01)
    grid = TimeGrid.build(2.0, 12)
    paths = MarketModel(ccy).simulate(grid, n_paths, seed)
    cf = ZeroCouponCashflow(1.0, 2.0).cashflow_cube(paths)
    return ccy, paths, cashflow_problem(cf, paths, 1.0)


def test_zero_coupon_loss_drops_hundredfold():
    _, _, prob = _zcb()
    st, hist = train(prob, init_state(prob, seed=1), 200)
    assert hist.loss[-1] <= hist.loss[0] / 100


def test_rollout_reproduces_training_iterate_and_holdout():
    ccy, _, prob = _zcb()
    st, hist = train(prob, init_state(prob, seed=1), 150)
    again = rollout(prob, st)
    assert again.loss == loss_and_gradient(prob, st)[0]
    assert again.loss == pytest.approx(hist.loss[-1], rel=1e-12)
    _, _, hold = _zcb(seed=99)
    assert rollout(hold, st).loss <= 2 * hist.loss[-1]


def test_lr_schedule_and_minibatch_run():
    _, _, prob = _zcb(512)
    st, hist = train(prob, init_state(prob, seed=1), 20, lr=0.01, lr_schedule={10: 0.001}, batch_size=128,
                     seed=5)
    assert len(hist.loss) == 21 and np.all(np.isfinite(hist.loss))

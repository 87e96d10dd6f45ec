"""Acceptance suite: one test per criterion, each logging a pass/fail line.

The heavy pipeline runs are module fixtures shared between criteria.  Run
alone with ``pytest tests/test_acceptance.py -v``; the status lines appear in
the "acceptance criteria" section of the terminal summary.
"""

import re
import time

import numpy as np
import pytest

from nnxva.bsde import cashflow_problem, init_state, train
from nnxva.cli import shipped_config
from nnxva.config import parse_config_text
from nnxva.instruments import ZeroCouponCashflow
from nnxva.market import MarketModel, TimeGrid
from nnxva.oracle import LatticeSpec, lattice_bermudan
from nnxva.pipeline import run_pipeline

from support import gradient_rel_error, hw, perturbed_state, tiny_problems, xccy_model

pytestmark = pytest.mark.slow


def _config(name, **subs):
    """Shipped config with whole-line `key = value` substitutions applied to every section."""
    text = shipped_config(name).read_text()
    for key, value in subs.items():
        text, n = re.subn(rf"^{key}\s*=.*$", f"{key} = {value}", text, flags=re.M)
        assert n, key
    return parse_config_text(text, name)


def _timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def _report(log, number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    log.append(line)
    print(line)
    assert ok, line


def _files(d):
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def bermudan(tmp_path_factory):
    cfg = _config("bermudan.cfg")
    out = tmp_path_factory.mktemp("bermudan")
    rep, secs = _timed(run_pipeline, cfg, out)
    amc, amc_secs = _timed(run_pipeline, cfg, out, ["expose"], "amc")
    model = cfg.market().domestic
    o = cfg["oracle"]
    lat = lattice_bermudan(model.curve, model.params, cfg.instrument(),
                           LatticeSpec(o["lattice_steps_per_year"], o["lattice_width"]))
    return {"cfg": cfg, "out": out, "rep": rep, "secs": secs, "amc": amc, "amc_secs": amc_secs, "lattice": lat}


@pytest.fixture(scope="module")
def xccy_highvol(tmp_path_factory):
    runs = {}
    for label, subs in (("correlated", {}), ("zero_corr", {"rho_dom_for": 0, "rho_dom_fx": 0, "rho_for_fx": 0})):
        cfg = _config("xccy_highvol.cfg", **subs)
        runs[label] = run_pipeline(cfg, tmp_path_factory.mktemp(f"xccy_{label}"))
    return runs


# ---- criteria


def test_criterion_1_gradient_integrity(criterion_log):
    t0 = time.perf_counter()
    errs = {}
    for seed in range(3):
        fwd, bwd, spec = tiny_problems(seed)
        for prob in (fwd, bwd):
            err, g, _ = gradient_rel_error(prob, perturbed_state(prob, spec, seed))
            errs[(prob.style, seed)] = err
    secs = time.perf_counter() - t0
    worst = max(errs.values())
    _report(criterion_log, 1, worst <= 1e-5 and secs < 10,
            f"max relative FD error {worst:.2e} over {len(errs)} cases (<= 1e-5), {g.size} trainables, {secs:.1f}s")


def test_criterion_2_zero_coupon(criterion_log):
    t0 = time.perf_counter()
    ccy = hw(0.01, 0.01, 0.01)
    paths = MarketModel(ccy).simulate(TimeGrid.build(2.0, 12), 8192, 1)
    prob = cashflow_problem(ZeroCouponCashflow(1.0, 2.0).cashflow_cube(paths), paths, 1.0, "forward")
    state, _ = train(prob, init_state(prob, seed=2), 500, seed=3)
    secs = time.perf_counter() - t0
    disc = 1.0 / paths.numeraire[:, -1]
    se = disc.std(ddof=1) / np.sqrt(disc.size)
    exact = np.exp(-0.02)
    err = abs(state.value0 - exact)
    _report(criterion_log, 2, err <= 3 * se and secs < 120,
            f"V0 {state.value0:.7f} vs {exact:.7f}, |diff| {err:.2e} <= 3 SE {3 * se:.2e}, 500 steps, {secs:.0f}s")


def test_criterion_3_bermudan_value(bermudan, criterion_log):
    r, a, lat = bermudan["rep"].results, bermudan["amc"].results, bermudan["lattice"]
    band_nn = max(0.01 * lat, 3 * r["se_nn"])
    band_amc = max(0.01 * lat, 3 * a["se_amc"])
    ok = (abs(r["v0_nn"] - lat) <= band_nn and abs(a["v0_amc"] - lat) <= band_amc
          and bermudan["secs"] + bermudan["amc_secs"] < 600)
    _report(criterion_log, 3, ok,
            f"lattice {lat:.3f}; NN {r['v0_nn']:.3f} (band {band_nn:.3f}); AMC {a['v0_amc']:.3f} "
            f"(band {band_amc:.3f}); {bermudan['secs']:.0f}s + {bermudan['amc_secs']:.0f}s")


def test_criterion_4_bermudan_exposure_shape(bermudan, criterion_log):
    prof = bermudan["rep"].results["profile_nn"]
    inst = bermudan["cfg"].instrument()
    ene_ok = bool(np.all(np.abs(prof.ene) <= 0.005 * inst.notional + 3 * prof.ene_se))
    drops = []
    for d in inst.exercise_dates:
        pre, pre_se, _, _ = prof.at(d, "pre")
        post, post_se, _, _ = prof.at(d, "post")
        drops.append(pre - post > 3 * np.hypot(pre_se, post_se))
    late = prof.times > inst.exercise_dates[-1] + 1e-9
    tail_ok = bool(np.all(prof.epe[late] == 0.0))
    worst_ene = float(np.max(np.abs(prof.ene)) / inst.notional)
    _report(criterion_log, 4, ene_ok and all(drops) and tail_ok,
            f"max |ENE|/N {worst_ene:.2e}; EPE drops at {sum(drops)}/5 exercise dates; EPE after 3.5y zero: {tail_ok}")


def test_criterion_5_loss_convergence(bermudan, criterion_log):
    loss = np.asarray(bermudan["rep"].results["loss"])
    r1 = loss[500] / loss[0]
    r2 = abs(loss[1000] - loss[500]) / loss[500]
    _report(criterion_log, 5, r1 <= 0.01 and r2 <= 0.1,
            f"loss(500)/loss(0) {r1:.2e} (<= 0.01); |loss(1000)-loss(500)|/loss(500) {r2:.3f} (<= 0.1)")


def test_criterion_6_xccy_zero_vol(tmp_path, criterion_log):
    cfg = _config("xccy_lowvol.cfg", sigma=0)
    out = tmp_path / "lowvol"
    rep, secs = _timed(run_pipeline, cfg, out, ["simulate", "train", "expose"])
    proxy = run_pipeline(cfg, out, ["expose"], "proxy").results["profile_proxy"]
    inst, model = cfg.instrument(), cfg.market()
    notional = inst.domestic_notional(model)
    prof = rep.results["profile_nn"]
    # notional resets happen at the starts of the second and later periods
    resets = inst.dates[1:-1]
    worst, exact_zero = 0.0, True
    for d in resets:
        e, _, g, _ = prof.at(d, "post")
        worst = max(worst, e / notional, -g / notional)
        pe, _, pg, _ = proxy.at(d, "post")
        exact_zero &= pe == 0.0 and pg == 0.0
    _report(criterion_log, 6, worst <= 1e-3 and exact_zero and secs < 300,
            f"max NN EPE/|ENE| at resets {worst:.2e} of notional (<= 1e-3); proxy exactly 0: {exact_zero}; "
            f"{secs:.0f}s")


def test_criterion_7_convexity(xccy_highvol, criterion_log):
    corr, zero = xccy_highvol["correlated"].results, xccy_highvol["zero_corr"].results
    a = corr["quadratic"].params["a"]
    lo, hi = corr["a_ci"]
    a0 = zero["quadratic"].params["a"]
    pq = corr["proxy_quadratic"]
    pa, pse = pq.params["a"], pq.extra["a_se"]
    ci_ok = lo > 0 or hi < 0
    proxy_ok = abs(pa) <= 3 * pse
    _report(criterion_log, 7, ci_ok and abs(a) > abs(a0) and proxy_ok,
            f"a {a:.3f} CI95 [{lo:.3f}, {hi:.3f}]; zero-correlation a {a0:.3f}; proxy a {pa:.1e} (SE {pse:.1e})")


def test_criterion_8_bachelier_fit(bermudan, criterion_log):
    r = bermudan["rep"].results
    dates = bermudan["cfg"].instrument().exercise_dates[[1, 3]]
    r2 = [r[f"bachelier_{d:g}"].r2 for d in dates]
    _report(criterion_log, 8, min(r2) >= 0.98,
            "R2 " + ", ".join(f"{v:.4f} at {d:g}y" for v, d in zip(r2, dates)) + " (>= 0.98)")


def test_criterion_9_mc_identities(criterion_log):
    t0 = time.perf_counter()
    worst = 0.0
    for sig, eta in ((0.001, 0.2), (0.1, 0.5), (0.2, 1.0)):
        m = xccy_model(sig, sig, eta)
        paths = m.simulate(TimeGrid.build(1.0, 12), 20000, 2024)
        for t in (0.25, 0.5, 0.75):
            n = int(np.argmin(np.abs(paths.times - t)))
            disc = 1.0 / paths.numeraire[:, n]
            bond = disc * m.domestic.zero_bond(t, 1.0, paths.factors[0, :, n])
            fx = disc * np.exp(paths.factors[2, :, n])
            for sample, exact in ((bond, m.domestic.curve.discount(1.0)),
                                  (fx, 0.76 * m.currency(1).curve.discount(t))):
                z = abs(sample.mean() - exact) / (sample.std(ddof=1) / np.sqrt(sample.size))
                worst = max(worst, z)
    secs = time.perf_counter() - t0
    _report(criterion_log, 9, worst <= 3 and secs < 60,
            f"worst |mean - exact| {worst:.2f} SE over 18 checks (<= 3), {secs:.1f}s")


def test_criterion_10_determinism(bermudan, tmp_path, criterion_log):
    out = tmp_path / "again"
    run_pipeline(bermudan["cfg"], out)
    run_pipeline(bermudan["cfg"], out, ["expose"], "amc")
    a, b = _files(bermudan["out"]), _files(out)
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    differ = sorted(k for k in a.keys() & b.keys() if a[k] != b[k]) + sorted(a.keys() ^ b.keys())
    _report(criterion_log, 10, same,
            f"{len(a)} artifacts byte-identical across two runs" if same else f"differing: {differ[:5]}")

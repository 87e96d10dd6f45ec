"""Run orchestration: simulate -> train -> expose -> analyze.

Each stage reads what the previous ones dumped into the output directory,
so stages can be run one at a time.  The run manifest records the config
hash; a directory written under a different configuration is refused.
"""

from __future__ import annotations

import json
import logging
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (ScatterSet, bachelier_fit, bootstrap, knn_project, quadratic_fit)
from .bsde import bermudan_problem, cashflow_problem, init_state, rollout, train
from .config import ConfigError, RunConfig
from .exposure import exposure_profile, cva_dva
from .instruments import BermudanSwaption, MtmXccySwap
from .io import (load_checkpoint, load_paths, read_cube, save_checkpoint, save_paths, write_cube,
                 write_exposure_csv, write_loss_csv, write_text, write_xy_csv)
from .oracle import LatticeSpec, RegressionBasis, amc_exposure, lattice_bermudan

__all__ = ["STAGES", "METHODS", "OrchestrationError", "CheckFailure", "RunReport", "run_pipeline"]

log = logging.getLogger(__name__)

STAGES = ("simulate", "train", "expose", "analyze")
METHODS = ("nn", "proxy", "amc", "lattice")


class OrchestrationError(RuntimeError):
    pass


class CheckFailure(RuntimeError):
    pass


@dataclass
class RunReport:
    out: Path
    config_hash: str
    stages: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json"


def _open_dir(out: Path, cfg: RunConfig) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    mp = _manifest_path(out)
    if mp.exists():
        man = json.loads(mp.read_text())
        if man.get("config_hash") != cfg.hash:
            raise OrchestrationError(
                f"{out} holds artifacts of config {man.get('config_hash')}, not {cfg.hash}; use a fresh directory")
        return man
    return {
        "config_hash": cfg.hash,
        "seed": cfg.seed,
        "versions": {"nnxva": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "stages": {},
    }


def _save_manifest(out: Path, man: dict) -> None:
    _manifest_path(out).write_text(json.dumps(man, indent=1, sort_keys=True) + "\n")


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise OrchestrationError(f"{path.name} is missing; run the {stage} stage first")
    return path


def _load_paths(out: Path, cfg: RunConfig, sub: str = "paths"):
    _need(out / sub / "paths.json", "simulate")
    paths, h = load_paths(out / sub)
    if h != cfg.hash:
        raise OrchestrationError(f"{out / sub} was simulated under config {h}")
    return paths


def _problem(cfg: RunConfig, paths):
    inst = cfg.instrument()
    model = cfg.market()
    if isinstance(inst, BermudanSwaption):
        return bermudan_problem(inst, model.domestic, paths)
    if isinstance(inst, MtmXccySwap):
        cf = inst.cashflow_cube(model, paths)
        return cashflow_problem(cf, paths, inst.domestic_notional(model), cfg.style())
    return cashflow_problem(inst.cashflow_cube(paths), paths, inst.notional, cfg.style())


def _stage_simulate(cfg: RunConfig, out: Path, rep: RunReport):
    model = cfg.market()
    grid = cfg.grid()
    t = cfg["training"]
    paths = model.simulate(grid, t["paths"], cfg.seed)
    save_paths(out / "paths", paths, cfg.hash)
    prob = _problem(cfg, paths)
    if prob.exercise is not None:
        write_cube(out / "exercise.bin", prob.exercise[None])
    if prob.cashflows is not None:
        write_cube(out / "cashflows.bin", prob.cashflows[None])
    if t["holdout_paths"] > 0:
        save_paths(out / "holdout", model.simulate(grid, t["holdout_paths"], cfg.seed + 1), cfg.hash)
    rep.results["n_steps"] = paths.n_steps


def _stage_train(cfg: RunConfig, out: Path, rep: RunReport):
    paths = _load_paths(out, cfg)
    prob = _problem(cfg, paths)
    t = cfg["training"]
    nn = cfg["nn"]
    state = init_state(prob, cfg.network(paths.n_factors), cfg.seed + 2, nn["shared"],
                       standardize=nn["standardize"])
    state, hist = train(prob, state, t["steps"], t["lr"], cfg.lr_schedule(), t["batch_size"] or None,
                        seed=cfg.seed + 3, log_every=max(1, t["steps"] // 10))
    save_checkpoint(out / "checkpoint", state, cfg.hash)
    write_loss_csv(out / "loss.csv", hist.loss, cfg.hash)
    lines = [f"v0 = {state.value0!r}", f"final_loss = {hist.loss[-1]!r}"]
    if (out / "holdout" / "paths.json").exists():
        hold = _load_paths(out, cfg, "holdout")
        hp = _problem(cfg, hold)
        hr = rollout(hp, state)
        lines.append(f"holdout_loss = {hr.loss!r}")
        rep.results["holdout_loss"] = hr.loss
    write_text(out / "train.txt", "\n".join(lines), cfg.hash)
    rep.results.update(v0=state.value0, loss=hist.loss)


def _cva_text(cfg, prof, method):
    cpty, own = cfg.credit_curves()
    cva, dva, flags = cva_dva(prof, cpty, own)
    e = cfg["exposure"]
    lines = [f"method = {method}", f"cva = {cva!r}", f"dva = {dva!r}",
             f"cpty_recovery = {e['cpty_recovery']!r}", f"cpty_hazard = {e['cpty_hazard']!r}",
             f"own_recovery = {e['own_recovery']!r}", f"own_hazard = {e['own_hazard']!r}",
             f"discounted = {prof.discounted}"]
    lines += [f"{k} = {v}" for k, v in flags.items()]
    return cva, dva, "\n".join(lines)


def _suffix(method):
    return "" if method == "nn" else f"_{method}"


def _stage_expose(cfg: RunConfig, out: Path, rep: RunReport, method: str):
    inst = cfg.instrument()
    model = cfg.market()
    disc = cfg["exposure"]["discounted"]
    if method == "lattice":
        if not isinstance(inst, BermudanSwaption):
            raise ConfigError("--method lattice needs a Bermudan instrument")
        o = cfg["oracle"]
        price = lattice_bermudan(model.domestic.curve, model.domestic.params, inst,
                                 LatticeSpec(o["lattice_steps_per_year"], o["lattice_width"]))
        write_text(out / "lattice.txt", f"method = lattice\nv0 = {price!r}", cfg.hash)
        rep.results["v0_lattice"] = price
        return
    paths = _load_paths(out, cfg)
    credit = cfg.credit_dates(paths.times)
    if method == "amc":
        if not isinstance(inst, BermudanSwaption):
            raise ConfigError("--method amc needs a Bermudan instrument")
        o = cfg["oracle"]
        basis = RegressionBasis(o["amc_x_powers"], o["amc_u_powers"], o["amc_zero_bond"], o["amc_european"])
        prof, res = amc_exposure(inst, model.domestic, paths, basis, credit, disc)
        write_text(out / "amc.txt", f"method = amc\nv0 = {res.v0!r}\nse = {res.se!r}", cfg.hash)
        rep.results.update(v0_amc=res.v0, se_amc=res.se)
    elif method == "proxy":
        if not isinstance(inst, MtmXccySwap):
            raise ConfigError("--method proxy needs an mtm_xccy instrument")
        post = inst.proxy_surface(model, paths)
        cf = read_cube(_need(out / "cashflows.bin", "simulate"))[0]
        pre = post + cf
        ev = [int(np.argmin(np.abs(paths.times - d))) for d in inst.dates]
        prof = exposure_profile(paths.times, pre, post, paths.numeraire, event_steps=ev, credit_steps=credit,
                                discounted=disc, method="proxy")
    else:
        _need(out / "checkpoint" / "manifest.json", "train")
        state = load_checkpoint(out / "checkpoint", cfg.hash)
        prob = _problem(cfg, paths)
        res = rollout(prob, state)
        write_cube(out / "values_pre.bin", res.values_pre[None])
        write_cube(out / "values_post.bin", res.values_post[None])
        ev = list(prob.exercise_steps)
        if prob.cashflows is not None:
            ev += [int(n) for n in np.nonzero(np.any(prob.cashflows != 0, axis=0))[0]]
        if isinstance(inst, MtmXccySwap):
            ev += [int(np.argmin(np.abs(paths.times - d))) for d in inst.dates]
        settlement = getattr(inst, "settlement", "cash")
        underlying = None
        eta = res.eta
        if eta is not None:
            write_cube(out / "eta.bin", eta[None])
        if settlement == "physical":
            underlying = inst.underlying_surface(model.domestic, paths)
        prof = exposure_profile(paths.times, res.values_pre, res.values_post, paths.numeraire, eta,
                                prob.exercise_steps, sorted(set(ev)), credit, settlement, underlying, disc)
        rep.results["v0_nn"] = state.value0
        if res.initial_values is not None:
            rep.results["se_nn"] = float(np.std(res.initial_values, ddof=1) / np.sqrt(res.initial_values.size))
    write_exposure_csv(out / f"exposure{_suffix(method)}.csv", prof, cfg.hash)
    cva, dva, text = _cva_text(cfg, prof, method)
    write_text(out / f"cva{_suffix(method)}.txt", text, cfg.hash)
    rep.results.update({f"profile_{method}": prof, f"cva_{method}": cva, f"dva_{method}": dva})


def _stage_analyze(cfg: RunConfig, out: Path, rep: RunReport):
    inst = cfg.instrument()
    model = cfg.market()
    paths = _load_paths(out, cfg)
    a = cfg["analysis"]
    post = read_cube(_need(out / "values_post.bin", "expose"))[0]
    sections = []
    if isinstance(inst, BermudanSwaption):
        for d in a["bachelier_dates"]:
            n = int(np.argmin(np.abs(paths.times - d)))
            sc = ScatterSet(paths.factors[0, :, n], post[:, n])
            proj = knn_project(sc, k=min(a["k"], len(sc)))
            fit = bachelier_fit(proj, notional=inst.notional)
            write_xy_csv(out / f"scatter_{d:g}.csv", sc.x, sc.v, ("x", "v"), cfg.hash)
            write_xy_csv(out / f"projected_{d:g}.csv", proj.x, proj.v, ("x", "v_hat"), cfg.hash)
            sections.append(f"[bachelier {d:g}]\nk = {a['k']}\n{fit.summary()}")
            rep.results[f"bachelier_{d:g}"] = fit
    if isinstance(inst, MtmXccySwap) and a["scatter_date"] >= 0:
        res = convexity_study(cfg, paths, post, out)
        sections.append(res.pop("text"))
        rep.results.update(res)
    write_text(out / "fits.txt", "\n\n".join(sections) if sections else "no fits configured", cfg.hash)


def convexity_study(cfg: RunConfig, paths, post, out: Path | None = None) -> dict:
    """Quadratic fit of the k-NN projected (S, V) curve, its bootstrap and the proxy on the same slice."""
    inst = cfg.instrument()
    model = cfg.market()
    a = cfg["analysis"]
    n = int(np.argmin(np.abs(paths.times - a["scatter_date"])))
    nf = model.n_foreign
    lns = paths.factors[nf + inst.foreign, :, n]
    cond = paths.factors[:nf + 1, :, n].T
    sc = ScatterSet(lns, post[:, n], cond)
    target = np.array(a["target"], dtype=float)
    pin = a["pin_radius"] or None
    k = min(a["k"], len(sc))

    def project(s):
        return knn_project(s, target, k, pin_radius=pin)

    def fit_a(s):
        p = project(s)
        return quadratic_fit(ScatterSet(np.exp(p.x), p.v), a["fit_scale"]).params["a"]

    proj = project(sc)
    fit = quadratic_fit(ScatterSet(np.exp(proj.x), proj.v), a["fit_scale"])
    _, ci, _ = bootstrap(sc, fit_a, a["n_boot"], seed=cfg.seed + 4)
    # the proxy evaluated directly on the slice, no projection needed
    t = paths.times[n]
    fixings = inst.path_fixings(model, paths)
    started = [np.nanmean(f, axis=-1) for f in fixings]
    spot = np.exp(proj.x)
    xs = [np.full_like(spot, v) for v in target]
    pv = inst.proxy_value(model, t, xs, spot, started)
    pfit = quadratic_fit(ScatterSet(spot, pv), a["fit_scale"])
    text = "\n".join([
        f"[convexity t={t:.10g}]", f"k = {k}", f"target = {a['target']}", f"fit_scale = {a['fit_scale']!r}",
        fit.summary(), f"a_ci95 = {ci[0]!r}, {ci[1]!r}", "", "[proxy on the slice]", pfit.summary()])
    if out is not None:
        write_xy_csv(out / "scatter.csv", sc.x, sc.v, ("lnS", "v"), cfg.hash)
        write_xy_csv(out / "projected.csv", proj.x, proj.v, ("lnS", "v_hat"), cfg.hash)
    return {"text": text, "quadratic": fit, "a_ci": ci, "proxy_quadratic": pfit}


def _checks(cfg: RunConfig, out: Path, rep: RunReport, method: str) -> dict:
    """Built-in acceptance checks for the shipped trade types."""
    checks = {}
    inst = cfg.instrument()
    model = cfg.market()
    prof = rep.results.get(f"profile_{method}")
    if isinstance(inst, BermudanSwaption) and method == "nn" and "v0_nn" in rep.results:
        o = cfg["oracle"]
        ref = lattice_bermudan(model.domestic.curve, model.domestic.params, inst,
                               LatticeSpec(o["lattice_steps_per_year"], o["lattice_width"]))
        v0, se = rep.results["v0_nn"], rep.results.get("se_nn", 0.0)
        checks["v0_vs_lattice"] = abs(v0 - ref) <= max(0.01 * abs(ref), 3 * se)
        if prof is not None:
            checks["ene_small"] = bool(np.all(np.abs(prof.ene) <= 0.005 * inst.notional + 3 * prof.ene_se))
    if isinstance(inst, MtmXccySwap) and prof is not None:
        notional = inst.domestic_notional(model)
        lim = 0.001 * notional
        ok = True
        for d in inst.dates[1:-1]:
            e, es, g, gs = prof.at(d, "post")
            ok &= e <= lim and -g <= lim
        checks["reset_exposure"] = bool(ok)
        if method == "proxy":
            zero = True
            for d in inst.dates[1:-1]:
                e, _, g, _ = prof.at(d, "post")
                zero &= e == 0.0 and g == 0.0
            checks["proxy_zero_at_resets"] = bool(zero)
    return checks


def run_pipeline(cfg: RunConfig, out, stages=STAGES, method: str = "nn", check: bool = False) -> RunReport:
    out = Path(out)
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    stages = list(stages)
    for s in stages:
        if s not in STAGES:
            raise ConfigError(f"unknown stage {s!r}")
    man = _open_dir(out, cfg)
    (out / "config_echo.cfg").write_text(f"# config_hash={cfg.hash}\n" + cfg.echo())
    rep = RunReport(out, cfg.hash)
    for s in STAGES:
        if s not in stages:
            continue
        if s == "train" and method != "nn":
            continue
        if s == "analyze" and method != "nn":
            continue
        log.info("stage %s (method %s)", s, method)
        if s == "simulate":
            _stage_simulate(cfg, out, rep)
        elif s == "train":
            _stage_train(cfg, out, rep)
        elif s == "expose":
            _stage_expose(cfg, out, rep, method)
        else:
            _stage_analyze(cfg, out, rep)
        man["stages"][s if method == "nn" or s == "simulate" else f"{s}_{method}"] = "done"
        rep.stages.append(s)
        _save_manifest(out, man)
    if check:
        rep.checks = _checks(cfg, out, rep, method)
        write_text(out / f"checks{_suffix(method)}.txt",
                   "\n".join(f"{k} = {'pass' if v else 'fail'}" for k, v in rep.checks.items()) or "no checks",
                   cfg.hash)
        if not all(rep.checks.values()):
            raise CheckFailure(", ".join(k for k, v in rep.checks.items() if not v))
    return rep

"""Run configuration: an INI file with one section per stage of the pipeline.

Every key is declared in SCHEMA with its type, default and unit.  Parsing
rejects unknown keys, materializes defaults and checks cross references
(event dates on the grid, dimensions).  Dates may be written as fractions,
e.g. ``1/12``.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .exposure import CreditCurve
from .instruments import BermudanSwaption, MtmXccySwap, SwapLeg, ZeroCouponCashflow
from .market import FxParams, HullWhite, HullWhiteParams, MarketModel, TimeGrid, YieldCurve
from .neural import MlpSpec

__all__ = ["ConfigError", "Key", "SCHEMA", "RunConfig", "parse_config", "parse_config_text", "describe_keys"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    kind: str          # float, int, bool, str, floats, pillars, choice
    default: object    # None means required
    unit: str
    help: str
    choices: tuple = ()
    only: tuple = ()   # instrument types the key applies to (empty: all)


REQ = None
INSTR = ("bermudan", "mtm_xccy", "zero_coupon")

SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "name": Key("str", "run", "-", "label echoed into reports"),
        "seed": Key("int", 1, "-", "master seed; paths use seed, holdout seed+1, network init seed+2"),
    },
    "model": {
        "domestic": Key("str", "USD", "-", "domestic currency label"),
        "curve": Key("pillars", REQ, "1/yr", "instantaneous forward f(0,t): a flat value or 't:f, t:f' pillars"),
        "kappa": Key("float", REQ, "1/yr", "Hull-White mean reversion of the domestic rate"),
        "sigma": Key("pillars", REQ, "1/sqrt(yr)", "normal short-rate volatility: flat value or 't:v' pillars"),
    },
    "foreign": {
        "name": Key("str", "FOR", "-", "foreign currency label"),
        "curve": Key("pillars", REQ, "1/yr", "foreign instantaneous forward curve"),
        "kappa": Key("float", REQ, "1/yr", "foreign mean reversion"),
        "sigma": Key("pillars", REQ, "1/sqrt(yr)", "foreign normal short-rate volatility"),
        "fx_spot": Key("float", REQ, "dom per for", "initial FX rate S(0)"),
        "fx_vol": Key("pillars", REQ, "1/sqrt(yr)", "lognormal FX volatility: flat value or 't:v' pillars"),
        "rho_dom_for": Key("float", 0.0, "-", "correlation of domestic and foreign rate factors"),
        "rho_dom_fx": Key("float", 0.0, "-", "correlation of domestic rate and log FX"),
        "rho_for_fx": Key("float", 0.0, "-", "correlation of foreign rate and log FX"),
    },
    "instrument": {
        "type": Key("choice", REQ, "-", "instrument kind", INSTR),
        "notional": Key("float", REQ, "currency", "notional (foreign units for mtm_xccy)"),
        "fixed_rate": Key("float", REQ, "1/yr", "fixed coupon rate", only=("bermudan",)),
        "swap_start": Key("float", REQ, "yr", "underlying swap start", only=("bermudan",)),
        "swap_end": Key("float", REQ, "yr", "underlying swap end", only=("bermudan",)),
        "fixed_freq": Key("int", 2, "1/yr", "fixed leg payments per year", only=("bermudan",)),
        "float_freq": Key("int", 4, "1/yr", "floating leg payments per year", only=("bermudan",)),
        "exercise_dates": Key("floats", REQ, "yr", "Bermudan exercise dates", only=("bermudan",)),
        "payer": Key("bool", True, "-", "true: pay fixed, receive float", only=("bermudan",)),
        "settlement": Key("choice", "cash", "-", "exercise settlement", ("cash", "physical"), only=("bermudan",)),
        "reset_dates": Key("floats", REQ, "yr", "MtM reset and payment dates, first one is the start",
                           only=("mtm_xccy",)),
        "receive_mtm": Key("bool", True, "-", "true: receive the MtM leg", only=("mtm_xccy",)),
        "mtm_index": Key("choice", "domestic", "-", "Libor index of the MtM leg", ("domestic", "foreign"),
                         only=("mtm_xccy",)),
        "mtm_spread": Key("float", 0.0, "1/yr", "spread on the MtM leg", only=("mtm_xccy",)),
        "float_spread": Key("float", 0.0, "1/yr", "spread on the foreign floating leg", only=("mtm_xccy",)),
        "payment_date": Key("float", REQ, "yr", "payment date", only=("zero_coupon",)),
    },
    "grid": {
        "steps_per_year": Key("int", 12, "1/yr", "uniform simulation dates per year; event dates are merged in"),
    },
    "nn": {
        "hidden_layers": Key("int", 2, "-", "number of hidden layers"),
        "extra_width": Key("int", 10, "-", "hidden width is (number of factors) + extra_width"),
        "activation": Key("choice", "tanh", "-", "hidden activation", ("tanh", "relu", "sigmoid", "linear")),
        "bias": Key("bool", True, "-", "use bias terms"),
        "shared": Key("bool", False, "-", "one network shared by all time steps"),
        "standardize": Key("bool", True, "-", "standardize inputs per step"),
    },
    "training": {
        "paths": Key("int", 8192, "-", "training paths"),
        "holdout_paths": Key("int", 8192, "-", "out-of-sample paths for the holdout loss (0 disables)"),
        "steps": Key("int", 1000, "-", "Adam steps"),
        "lr": Key("float", 0.01, "-", "Adam learning rate"),
        "lr_schedule": Key("str", "", "-", "'step:lr, step:lr' changes of learning rate"),
        "batch_size": Key("int", 0, "-", "paths per Adam step, 0 for all"),
        "style": Key("choice", "auto", "-", "rollout style; auto is backward with exercise rights",
                     ("auto", "forward", "backward")),
    },
    "exposure": {
        "credit_dates": Key("str", "grid", "yr", "'grid' for every simulation date or a list of dates"),
        "discounted": Key("bool", True, "-", "report exposures discounted to 0"),
        "cpty_recovery": Key("float", 0.4, "-", "counterparty recovery rate"),
        "cpty_hazard": Key("pillars", 0.02, "1/yr", "counterparty hazard rate: flat or 't:h' with t the bucket end"),
        "own_recovery": Key("float", 0.4, "-", "own recovery rate"),
        "own_hazard": Key("pillars", 0.01, "1/yr", "own hazard rate"),
    },
    "analysis": {
        "bachelier_dates": Key("floats", (), "yr", "exercise dates at which continuation values are fitted"),
        "k": Key("int", 50, "-", "neighbours in the k-NN projection"),
        "fit_scale": Key("float", 1e7, "currency", "V is divided by this before the quadratic fit"),
        "scatter_date": Key("float", -1.0, "yr", "date of the (ln S, V) scatter; negative disables"),
        "target": Key("floats", (0.0, 0.0), "-", "projection target for the rate factors"),
        "pin_radius": Key("float", 0.0, "sd", "restrict neighbours to this standardized radius; 0 disables"),
        "n_boot": Key("int", 1000, "-", "bootstrap resamples for the quadratic coefficient"),
    },
    "oracle": {
        "lattice_steps_per_year": Key("int", 600, "1/yr", "trinomial lattice steps per year"),
        "lattice_width": Key("float", 6.0, "sd", "lattice truncation width"),
        "amc_x_powers": Key("int", 0, "-", "powers of x in the regression basis"),
        "amc_u_powers": Key("int", 2, "-", "powers of the exercise value in the regression basis"),
        "amc_zero_bond": Key("bool", True, "-", "include P(t, swap end) in the basis"),
        "amc_european": Key("bool", False, "-", "include the European on the next exercise date"),
    },
}

OPTIONAL_SECTIONS = {"foreign", "run", "grid", "nn", "training", "exposure", "analysis", "oracle"}


def describe_keys() -> str:
    """Every key with unit, default and meaning, for --help."""
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for name, k in keys.items():
            d = "required" if k.default is None else f"default {_echo(k.default)}"
            extra = f"; one of {'|'.join(k.choices)}" if k.choices else ""
            only = f"; {'/'.join(k.only)} only" if k.only else ""
            lines.append(f"  {name:<22} [{k.unit}] {k.help} ({d}{extra}{only})")
    return "\n".join(lines)


def _num(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        try:
            return float(Fraction(text))
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"not a number: {text!r}") from exc


def _convert(sec, name, key: Key, raw: str):
    raw = raw.strip()
    try:
        if key.kind == "float":
            return _num(raw)
        if key.kind == "int":
            return int(raw)
        if key.kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if key.kind == "floats":
            return tuple(_num(v) for v in raw.split(",") if v.strip())
        if key.kind == "pillars":
            if ":" not in raw:
                return _num(raw)
            out = []
            for item in raw.split(","):
                t, v = item.split(":")
                out.append((_num(t), _num(v)))
            return tuple(out)
        if key.kind == "choice":
            if raw not in key.choices:
                raise ValueError(f"expected one of {key.choices}, got {raw!r}")
            return raw
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {name}: {exc}") from None


def _echo(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join(f"{_echo(float(a))}:{_echo(float(b))}" for a, b in v)
        return ", ".join(_echo(float(a)) for a in v)
    return str(v)


def _pillars(v, name):
    """(times, values) for piecewise-constant inputs; times are segment starts."""
    if isinstance(v, tuple):
        t = np.array([a for a, _ in v], dtype=float)
        x = np.array([b for _, b in v], dtype=float)
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ConfigError(f"{name}: pillar times must start at 0 and increase")
        return t, x
    return np.zeros(1), np.array([float(v)])


@dataclass
class RunConfig:
    values: dict
    source: str = ""

    def __getitem__(self, sec):
        return self.values[sec]

    @property
    def kind(self) -> str:
        return self.values["instrument"]["type"]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def with_seed(self, seed: int) -> "RunConfig":
        vals = {s: dict(v) for s, v in self.values.items()}
        vals["run"]["seed"] = int(seed)
        return RunConfig(vals, self.source)

    def echo(self) -> str:
        """Canonical materialized config text; its hash identifies the run."""
        lines = []
        for sec in SCHEMA:
            if sec not in self.values:
                continue
            lines.append(f"[{sec}]")
            for name in SCHEMA[sec]:
                if name in self.values[sec]:
                    lines.append(f"{name} = {_echo(self.values[sec][name])}")
            lines.append("")
        return "\n".join(lines)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.echo().encode()).hexdigest()[:16]

    # builders
    def market(self) -> MarketModel:
        m = self.values["model"]
        dom = _hw(m)
        if "foreign" not in self.values:
            return MarketModel(dom)
        f = self.values["foreign"]
        t, v = _pillars(f["fx_vol"], "fx_vol")
        fx = FxParams(f["fx_spot"], t, v)
        corr = np.array([[1.0, f["rho_dom_for"], f["rho_dom_fx"]],
                         [f["rho_dom_for"], 1.0, f["rho_for_fx"]],
                         [f["rho_dom_fx"], f["rho_for_fx"], 1.0]])
        return MarketModel(dom, ((_hw(f), fx),), corr)

    def instrument(self):
        i = self.values["instrument"]
        if i["type"] == "bermudan":
            fixed = SwapLeg.regular("fixed", i["notional"], i["swap_start"], i["swap_end"], i["fixed_freq"],
                                    i["fixed_rate"])
            flt = SwapLeg.regular("float", i["notional"], i["swap_start"], i["swap_end"], i["float_freq"])
            return BermudanSwaption(fixed, flt, np.array(i["exercise_dates"]), i["settlement"], i["payer"])
        if i["type"] == "mtm_xccy":
            return MtmXccySwap(i["notional"], np.array(i["reset_dates"]), mtm_index=i["mtm_index"],
                               mtm_spread=i["mtm_spread"], float_spread=i["float_spread"],
                               receive_mtm=i["receive_mtm"])
        return ZeroCouponCashflow(i["notional"], i["payment_date"])

    def event_dates(self) -> dict:
        i = self.values["instrument"]
        if i["type"] == "bermudan":
            return {"exercise": list(i["exercise_dates"])}
        if i["type"] == "mtm_xccy":
            return {"reset": list(i["reset_dates"])}
        return {"payment": [i["payment_date"]]}

    def horizon(self) -> float:
        i = self.values["instrument"]
        if i["type"] == "bermudan":
            return float(max(i["exercise_dates"]))
        if i["type"] == "mtm_xccy":
            return float(max(i["reset_dates"]))
        return float(i["payment_date"])

    def grid(self) -> TimeGrid:
        ev = self.event_dates()
        extra = self.values["analysis"]["scatter_date"]
        if extra >= 0:
            ev = dict(ev, analysis=[extra])
        return TimeGrid.build(self.horizon(), self.values["grid"]["steps_per_year"], ev)

    def network(self, n_factors: int) -> MlpSpec:
        nn = self.values["nn"]
        w = n_factors + nn["extra_width"]
        return MlpSpec(n_factors, (w,) * nn["hidden_layers"], n_factors, nn["activation"], nn["bias"])

    def style(self) -> str:
        s = self.values["training"]["style"]
        if s != "auto":
            return s
        return "backward" if self.kind == "bermudan" else "forward"

    def lr_schedule(self) -> dict:
        text = self.values["training"]["lr_schedule"].strip()
        out = {}
        if not text:
            return out
        for item in text.split(","):
            try:
                k, v = item.split(":")
                out[int(k)] = _num(v)
            except ValueError:
                raise ConfigError(f"[training] lr_schedule: cannot parse {item!r}") from None
        return out

    def credit_curves(self) -> tuple[CreditCurve, CreditCurve]:
        e = self.values["exposure"]
        return _credit(e["cpty_recovery"], e["cpty_hazard"]), _credit(e["own_recovery"], e["own_hazard"])

    def credit_dates(self, times) -> np.ndarray | None:
        text = self.values["exposure"]["credit_dates"].strip()
        if text == "grid":
            return None
        out = []
        for d in (_num(v) for v in text.split(",") if v.strip()):
            hit = np.nonzero(np.abs(np.asarray(times) - d) <= 1e-9)[0]
            if hit.size == 0:
                raise ConfigError(f"[exposure] credit_dates: {d} is not a simulation date")
            out.append(int(hit[0]))
        return np.array(out)


def _credit(recovery, hazard) -> CreditCurve:
    if isinstance(hazard, tuple):
        t = np.array([a for a, _ in hazard], dtype=float)
        h = np.array([b for _, b in hazard], dtype=float)
        return CreditCurve(recovery, t, h)
    return CreditCurve.flat(float(hazard), recovery)


def _hw(sec) -> HullWhite:
    ct, cf = _pillars(sec["curve"], "curve")
    vt, vv = _pillars(sec["sigma"], "sigma")
    return HullWhite(YieldCurve(ct, cf), HullWhiteParams(sec["kappa"], vt, vv))


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
    missing = [s for s in SCHEMA if s not in OPTIONAL_SECTIONS and s not in cp]
    if missing:
        req = "; ".join(f"[{s}] " + ", ".join(k for k, v in SCHEMA[s].items() if v.default is None)
                        for s in missing)
        raise ConfigError(f"{source}: missing required sections; required keys: {req}")
    kind = cp["instrument"].get("type", "").strip()
    if kind not in INSTR:
        raise ConfigError(f"[instrument] type: expected one of {INSTR}, got {kind!r}")
    values = {}
    for sec, keys in SCHEMA.items():
        if sec not in cp and sec in ("foreign",):
            continue
        raw = cp[sec] if sec in cp else {}
        for name in raw:
            if name not in keys:
                raise ConfigError(f"[{sec}] {name}: unknown key")
            if keys[name].only and kind not in keys[name].only:
                raise ConfigError(f"[{sec}] {name}: not used by instrument type {kind}")
        out = {}
        for name, key in keys.items():
            if key.only and kind not in key.only:
                continue
            if name in raw:
                out[name] = _convert(sec, name, key, raw[name])
            elif key.default is None:
                raise ConfigError(f"[{sec}] {name}: required key missing")
            else:
                out[name] = key.default
        values[sec] = out
    cfg = RunConfig(values, source)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    kind = cfg.kind
    if kind == "mtm_xccy" and "foreign" not in cfg.values:
        raise ConfigError("[foreign] section is required by mtm_xccy")
    if kind != "mtm_xccy" and "foreign" in cfg.values and kind == "bermudan":
        raise ConfigError("[foreign] section is not used by a single-currency Bermudan")
    t = cfg["training"]
    for key in ("paths", "steps"):
        if t[key] < (1 if key == "paths" else 0):
            raise ConfigError(f"[training] {key}: must be positive")
    if t["batch_size"] < 0 or t["batch_size"] > t["paths"]:
        raise ConfigError("[training] batch_size: must lie in [0, paths]")
    if kind == "bermudan" and cfg.style() != "backward":
        raise ConfigError("[training] style: exercise rights need the backward style")
    if cfg["grid"]["steps_per_year"] < 1:
        raise ConfigError("[grid] steps_per_year: must be positive")
    try:
        market = cfg.market()
        market.correlation()
        inst = cfg.instrument()
        grid = cfg.grid()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if kind == "mtm_xccy" and len(cfg["analysis"]["target"]) != market.n_foreign + 1:
        raise ConfigError("[analysis] target: one value per rate factor is required")
    for name, dates in cfg.event_dates().items():
        for d in dates:
            if np.min(np.abs(grid.times - d)) > 1e-9:
                raise ConfigError(f"[instrument] {name} date {d} is off the simulation grid")
    if kind == "bermudan":
        for d in cfg["analysis"]["bachelier_dates"]:
            if np.min(np.abs(inst.exercise_dates - d)) > 1e-9:
                raise ConfigError(f"[analysis] bachelier_dates: {d} is not an exercise date")
    cfg.lr_schedule()
    cfg.credit_curves()
    cfg.credit_dates(grid.times)


def parse_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config_text(text, str(p))

"""JSON run configuration: defaults, validation, canonical form, digest.

An empty object is a complete configuration: every field has a documented
default mirroring the reference component values.  Validation is strict;
unknown keys and invariant violations are rejected with the offending
dotted key path in the message.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from . import fuzzy
from .control import CascadeGains, IfThenController, PIGains
from .plant import BatteryModel, PlantParams, UltracapModel
from .sim import LoadProfile


class ConfigError(ValueError):
    """Configuration rejection; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _variable_dict(var: fuzzy.LinguisticVariable) -> dict:
    return {
        "universe": [var.lo, var.hi],
        "sets": [[lbl, mf.kind, list(mf.points)] for lbl, mf in var.sets],
    }


def default_config_dict() -> dict:
    cur = fuzzy.default_module_current_variable()
    return {
        "plant": {
            "inductance_h": 3.4e-3,
            "inductor_esr_ohm": 1.5e-3,
            "c1_farad": 5e-3,
            "c2_farad": 5e-3,
            "switch_r_on_ohm": 0.1,
            "switching_frequency_hz": 40e3,
            "textbook_mode": False,
        },
        "battery": {
            "nominal_voltage_v": 36.0,
            "capacity_ah": 15.0,
            "initial_soc": 0.5,
            "internal_resistance_ohm": 0.05,
            "e0_v": 37.2,
            "polarization_v_per_ah": 0.038,
            "exp_amplitude_v": 4.8,
            "exp_decay_per_ah": 0.8,
        },
        "ultracap": {
            "capacitance_f": 29.0,
            "esr_ohm": 0.044,
            "initial_voltage_v": 24.0,
        },
        "controller": {
            "kind": "flc",
            "update_hz": 1000.0,
            "flc": {
                "defuzz_resolution": 1001,
                "bus_voltage": _variable_dict(fuzzy.default_bus_voltage_variable()),
                "module_current": _variable_dict(cur),
                "battery_limit": _variable_dict(fuzzy.default_battery_limit_variable()),
                "rules": {lbl: list(fuzzy.DEFAULT_RULE_ROWS[lbl]) for lbl in cur.labels},
            },
            "ifthen": {
                "v_low_v": 23.5,
                "v_high_v": 24.5,
                "discharge_current_a": 12.0,
                "recharge_current_a": 8.0,
            },
            "fixed": {"d1": 0.0, "d2": 0.0},
        },
        "pi": {
            "discharge": {
                "voltage": {"kp": 0.2, "ki": 10.0},
                "current": {"kp": 1.0, "ki": 200.0},
            },
            "recharge": {
                "voltage": {"kp": 0.028, "ki": 1.5},
                "current": {"kp": 5.0, "ki": 1.0},
            },
            "setpoint_v": 24.0,
            "dead_band_a": 0.5,
            "voltage_loop_max_a": 60.0,
        },
        "load": {
            "t_high_s": 5.0,
            "t_low_s": 1.0,
            "phase_a": {"i_high_a": 20.0, "i_low_a": 2.0},
            "phase_b": {"i_high_a": 30.0, "i_low_a": 5.0},
            "t_shift_s": 30.0,
            "t_end_s": 60.0,
        },
        "integration": {"mode": "averaged", "dt_s": None},
        "output": {"decimation_hz": 1000.0, "plots": True, "trace_path": None},
    }


_MODE_DEFAULT_DT = {"averaged": 5e-5, "switched": 1e-6}


def _merge(defaults, user, path):
    """Defaults overlaid with user values; unknown keys rejected."""
    if not isinstance(user, dict):
        raise ConfigError(path or "<root>", f"expected an object, got {type(user).__name__}")
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        if key not in defaults:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
        sub = f"{path}.{key}" if path else key
        if isinstance(defaults[key], dict) and key != "rules":
            out[key] = _merge(defaults[key], val, sub)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _number(d, key, path, lo=None, hi=None, lo_open=None):
    val = d[key]
    p = f"{path}.{key}"
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(p, f"expected a number, got {type(val).__name__}")
    v = float(val)
    if v != v or v in (float("inf"), float("-inf")):
        raise ConfigError(p, "must be finite")
    if lo is not None and v < lo:
        raise ConfigError(p, f"must be >= {lo}")
    if lo_open is not None and v <= lo_open:
        raise ConfigError(p, f"must be > {lo_open}")
    if hi is not None and v > hi:
        raise ConfigError(p, f"must be <= {hi}")
    d[key] = v
    return v


def _integer(d, key, path, lo=None):
    val = d[key]
    p = f"{path}.{key}"
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(p, f"expected an integer, got {type(val).__name__}")
    if lo is not None and val < lo:
        raise ConfigError(p, f"must be >= {lo}")
    return val


def _boolean(d, key, path):
    val = d[key]
    if not isinstance(val, bool):
        raise ConfigError(f"{path}.{key}", f"expected a boolean, got {type(val).__name__}")
    return val


def _choice(d, key, path, options):
    val = d[key]
    if val not in options:
        raise ConfigError(f"{path}.{key}", f"must be one of {sorted(options)}")
    return val


def _variable_from_dict(d, path, n_sets=5) -> fuzzy.LinguisticVariable:
    if not isinstance(d, dict) or set(d) != {"universe", "sets"}:
        raise ConfigError(path, "expected an object with 'universe' and 'sets'")
    uni = d["universe"]
    if (not isinstance(uni, list) or len(uni) != 2
            or any(isinstance(u, bool) or not isinstance(u, (int, float)) for u in uni)):
        raise ConfigError(f"{path}.universe", "expected [lo, hi]")
    sets_raw = d["sets"]
    if not isinstance(sets_raw, list) or len(sets_raw) != n_sets:
        raise ConfigError(f"{path}.sets", f"expected exactly {n_sets} sets")
    mfs = []
    for i, entry in enumerate(sets_raw):
        p = f"{path}.sets[{i}]"
        if (not isinstance(entry, list) or len(entry) != 3
                or not isinstance(entry[0], str) or not isinstance(entry[1], str)
                or not isinstance(entry[2], list)):
            raise ConfigError(p, "expected [label, kind, breakpoints]")
        try:
            mf = fuzzy.MembershipFunction(entry[1], tuple(float(x) for x in entry[2]))
        except (TypeError, fuzzy.FuzzyDefinitionError) as exc:
            raise ConfigError(p, str(exc)) from None
        mfs.append((entry[0], mf))
    name = path.rsplit(".", 1)[-1]
    try:
        return fuzzy.LinguisticVariable(name, float(uni[0]), float(uni[1]), tuple(mfs))
    except fuzzy.FuzzyDefinitionError as exc:
        raise ConfigError(path, str(exc)) from None


def _flc_from_dict(d, path) -> fuzzy.FuzzyController:
    res = _integer(d, "defuzz_resolution", path, lo=101)
    bus = _variable_from_dict(d["bus_voltage"], f"{path}.bus_voltage")
    cur = _variable_from_dict(d["module_current"], f"{path}.module_current")
    out = _variable_from_dict(d["battery_limit"], f"{path}.battery_limit")
    rules_raw = d["rules"]
    if not isinstance(rules_raw, dict) or set(rules_raw) != set(cur.labels):
        raise ConfigError(f"{path}.rules",
                          f"must have exactly one row per current set {list(cur.labels)}")
    rows = []
    for lbl in cur.labels:
        row = rules_raw[lbl]
        if not isinstance(row, list) or not all(isinstance(x, str) for x in row):
            raise ConfigError(f"{path}.rules.{lbl}", "expected a list of output labels")
        rows.append(tuple(row))
    try:
        return fuzzy.FuzzyController(
            bus_voltage=bus, module_current=cur, battery_limit=out,
            rules=fuzzy.RuleBase.from_rows(rows),
            config=fuzzy.InferenceConfig(defuzz_resolution=res))
    except fuzzy.FuzzyDefinitionError as exc:
        raise ConfigError(f"{path}.rules", str(exc)) from None


@dataclass(frozen=True)
class Config:
    """Fully validated run configuration."""

    plant: PlantParams
    battery: BatteryModel
    ultracap: UltracapModel
    controller_kind: str
    controller_update_hz: float
    flc: fuzzy.FuzzyController
    ifthen: IfThenController
    fixed_duty: tuple[float, float]
    cascade: CascadeGains
    load: LoadProfile
    mode: str
    dt: float
    decimation_hz: float
    plots: bool
    trace_path: str | None
    raw: dict

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def config_from_dict(user: dict) -> Config:
    d = _merge(default_config_dict(), user, "")

    pl = d["plant"]
    _number(pl, "inductance_h", "plant", lo_open=0.0)
    _number(pl, "inductor_esr_ohm", "plant", lo_open=0.0)
    _number(pl, "c1_farad", "plant", lo_open=0.0)
    _number(pl, "c2_farad", "plant", lo_open=0.0)
    _number(pl, "switch_r_on_ohm", "plant", lo_open=0.0)
    _number(pl, "switching_frequency_hz", "plant", lo=1e3)
    _boolean(pl, "textbook_mode", "plant")
    plant = PlantParams(
        inductance=pl["inductance_h"], inductor_esr=pl["inductor_esr_ohm"],
        c1=pl["c1_farad"], c2=pl["c2_farad"], switch_r_on=pl["switch_r_on_ohm"],
        switching_frequency=pl["switching_frequency_hz"],
        textbook_mode=pl["textbook_mode"])

    bt = d["battery"]
    _number(bt, "nominal_voltage_v", "battery", lo_open=0.0)
    _number(bt, "capacity_ah", "battery", lo_open=0.0)
    _number(bt, "initial_soc", "battery", lo_open=0.0, hi=1.0)
    _number(bt, "internal_resistance_ohm", "battery", lo_open=0.0)
    _number(bt, "e0_v", "battery", lo_open=0.0)
    _number(bt, "polarization_v_per_ah", "battery", lo=0.0)
    _number(bt, "exp_amplitude_v", "battery", lo=0.0)
    _number(bt, "exp_decay_per_ah", "battery", lo=0.0)
    battery = BatteryModel(
        nominal_voltage=bt["nominal_voltage_v"], capacity_ah=bt["capacity_ah"],
        soc0=bt["initial_soc"], r_internal=bt["internal_resistance_ohm"],
        e0=bt["e0_v"], k_pol=bt["polarization_v_per_ah"],
        exp_amplitude=bt["exp_amplitude_v"], exp_decay=bt["exp_decay_per_ah"])

    ucd = d["ultracap"]
    _number(ucd, "capacitance_f", "ultracap", lo_open=0.0)
    _number(ucd, "esr_ohm", "ultracap", lo_open=0.0)
    _number(ucd, "initial_voltage_v", "ultracap", lo=0.0)
    ultracap = UltracapModel(capacitance=ucd["capacitance_f"], esr=ucd["esr_ohm"],
                             v0=ucd["initial_voltage_v"])

    ct = d["controller"]
    kind = _choice(ct, "kind", "controller", {"flc", "ifthen", "fixed"})
    update_hz = _number(ct, "update_hz", "controller", lo_open=0.0)
    flc = _flc_from_dict(ct["flc"], "controller.flc")
    it = ct["ifthen"]
    _number(it, "v_low_v", "controller.ifthen", lo_open=0.0)
    _number(it, "v_high_v", "controller.ifthen", lo_open=0.0)
    _number(it, "discharge_current_a", "controller.ifthen", lo=0.0)
    _number(it, "recharge_current_a", "controller.ifthen", lo=0.0)
    if not it["v_low_v"] < it["v_high_v"]:
        raise ConfigError("controller.ifthen.v_low_v", "must be below v_high_v")
    ifthen = IfThenController(v_low=it["v_low_v"], v_high=it["v_high_v"],
                              i_discharge=it["discharge_current_a"],
                              i_recharge=it["recharge_current_a"])
    fx = ct["fixed"]
    _number(fx, "d1", "controller.fixed", lo=0.0, hi=1.0)
    _number(fx, "d2", "controller.fixed", lo=0.0, hi=1.0)
    if fx["d1"] > 0.0 and fx["d2"] > 0.0:
        raise ConfigError("controller.fixed.d1", "d1 and d2 may not both be active")

    pi = d["pi"]
    for branch in ("discharge", "recharge"):
        for loop in ("voltage", "current"):
            _number(pi[branch][loop], "kp", f"pi.{branch}.{loop}", lo=0.0)
            _number(pi[branch][loop], "ki", f"pi.{branch}.{loop}", lo=0.0)
    setpoint = _number(pi, "setpoint_v", "pi", lo_open=0.0)
    dead_band = _number(pi, "dead_band_a", "pi", lo=0.0)
    v_loop_max = _number(pi, "voltage_loop_max_a", "pi", lo_open=0.0)
    cascade = CascadeGains(
        discharge_voltage=PIGains(pi["discharge"]["voltage"]["kp"],
                                  pi["discharge"]["voltage"]["ki"], 0.0, v_loop_max),
        discharge_current=PIGains(pi["discharge"]["current"]["kp"],
                                  pi["discharge"]["current"]["ki"], 0.0, 1.0),
        recharge_voltage=PIGains(pi["recharge"]["voltage"]["kp"],
                                 pi["recharge"]["voltage"]["ki"], 0.0, v_loop_max),
        recharge_current=PIGains(pi["recharge"]["current"]["kp"],
                                 pi["recharge"]["current"]["ki"], 0.0, 1.0),
        setpoint=setpoint, dead_band=dead_band)

    ld = d["load"]
    _number(ld, "t_high_s", "load", lo_open=0.0)
    _number(ld, "t_low_s", "load", lo_open=0.0)
    _number(ld["phase_a"], "i_high_a", "load.phase_a", lo=0.0)
    _number(ld["phase_a"], "i_low_a", "load.phase_a", lo=0.0)
    _number(ld["phase_b"], "i_high_a", "load.phase_b", lo=0.0)
    _number(ld["phase_b"], "i_low_a", "load.phase_b", lo=0.0)
    _number(ld, "t_shift_s", "load", lo_open=0.0)
    _number(ld, "t_end_s", "load", lo_open=0.0)
    if not ld["t_shift_s"] < ld["t_end_s"]:
        raise ConfigError("load.t_shift_s", "must fall strictly before t_end_s")
    load = LoadProfile(t_high=ld["t_high_s"], t_low=ld["t_low_s"],
                       a_i_high=ld["phase_a"]["i_high_a"], a_i_low=ld["phase_a"]["i_low_a"],
                       b_i_high=ld["phase_b"]["i_high_a"], b_i_low=ld["phase_b"]["i_low_a"],
                       t_shift=ld["t_shift_s"], t_end=ld["t_end_s"])

    ig = d["integration"]
    mode = _choice(ig, "mode", "integration", {"averaged", "switched"})
    if ig["dt_s"] is None:
        ig["dt_s"] = _MODE_DEFAULT_DT[mode]
    dt = _number(ig, "dt_s", "integration", lo_open=0.0)
    if mode == "switched" and dt > 1.0 / (20.0 * plant.switching_frequency):
        raise ConfigError("integration.dt_s",
                          f"must be <= {1.0 / (20.0 * plant.switching_frequency):.3g} s "
                          "to resolve the PWM period in switched mode")
    if load.t_end / dt > 2e8:
        raise ConfigError("integration.dt_s", "step count exceeds 2e8; raise dt_s")
    if load.t_end / dt < 1.0:
        raise ConfigError("integration.dt_s", "must allow at least one step before t_end")

    ot = d["output"]
    decimation_hz = _number(ot, "decimation_hz", "output", lo_open=0.0)
    if decimation_hz > 1.0 / dt + 1e-9:
        raise ConfigError("output.decimation_hz", "cannot exceed the integration rate 1/dt")
    _boolean(ot, "plots", "output")
    if ot["trace_path"] is not None and not isinstance(ot["trace_path"], str):
        raise ConfigError("output.trace_path", "expected a string or null")
    if update_hz > 1.0 / dt + 1e-9:
        raise ConfigError("controller.update_hz", "cannot exceed the integration rate 1/dt")

    return Config(
        plant=plant, battery=battery, ultracap=ultracap,
        controller_kind=kind, controller_update_hz=update_hz,
        flc=flc, ifthen=ifthen, fixed_duty=(fx["d1"], fx["d2"]),
        cascade=cascade, load=load, mode=mode, dt=dt,
        decimation_hz=decimation_hz, plots=ot["plots"], trace_path=ot["trace_path"],
        raw=d)


def parse_config(path: str | Path) -> Config:
    """Load and validate a JSON config file.

    Missing or unreadable files surface as OSError (I/O failure); malformed
    JSON and every schema or invariant violation raise ConfigError.
    """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"malformed JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(str(path), "top-level JSON value must be an object")
    return config_from_dict(data)

"""Experiment orchestration: load profile, run loop dispatch, trace, metrics.

A run is fully deterministic: the same configuration always produces the
same trace, sample for sample, regardless of how many runs execute in
parallel.  The pulse-train disturbance and all boundaries are scheduled on
exact step indices so segment edges land on integration steps.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import kernels

if TYPE_CHECKING:
    from .config import Config


class SimFault(RuntimeError):
    """Raised for run-level failures that are not configuration errors."""


class MetricsError(ValueError):
    """Raised when a trace cannot support the requested metric."""


@dataclass(frozen=True)
class LoadProfile:
    """Pulse-train load with a mid-run amplitude shift.

    The profile draws ``i_high`` amperes for ``t_high`` seconds then
    ``i_low`` for ``t_low``, repeating; at ``t_shift`` the cycle restarts
    with the phase-b amplitudes so a segment boundary falls exactly on the
    shift.  Disturbance sign convention: net draw is negative.
    """

    t_high: float = 5.0
    t_low: float = 1.0
    a_i_high: float = 20.0
    a_i_low: float = 2.0
    b_i_high: float = 30.0
    b_i_low: float = 5.0
    t_shift: float = 30.0
    t_end: float = 60.0

    def __post_init__(self):
        if self.t_high <= 0.0 or self.t_low <= 0.0:
            raise ValueError("load segments must have positive duration")
        if not 0.0 < self.t_shift < self.t_end:
            raise ValueError("load shift must fall strictly inside the run")

    @property
    def period(self) -> float:
        return self.t_high + self.t_low

    def full_cycles(self, start: float, end: float) -> int:
        return int(math.floor((end - start) / self.period + 1e-9))


def load_current(p: LoadProfile, t: float) -> float:
    """Disturbance current at time ``t``: negative while the load draws."""
    if t < 0.0 or t > p.t_end:
        raise SimFault(f"load profile queried outside [0, {p.t_end}]: t={t}")
    if t < p.t_shift:
        base, hi, lo = 0.0, p.a_i_high, p.a_i_low
    else:
        base, hi, lo = p.t_shift, p.b_i_high, p.b_i_low
    pos = (t - base) % p.period
    return -hi if pos < p.t_high else -lo


@dataclass
class Trace:
    """Decimated samples of one run plus diagnostic channels.

    The first nine arrays (through ``i_limit``) together with
    ``ctrl_state`` and ``flags`` form the canonical CSV columns; the
    remaining channels are in-memory diagnostics.
    """

    t: np.ndarray
    v_bus: np.ndarray
    i_l: np.ndarray
    i_batt: np.ndarray
    i_uc: np.ndarray
    zeta: np.ndarray
    soc: np.ndarray
    v_uc: np.ndarray
    i_limit: np.ndarray
    ctrl_state: np.ndarray
    flags: np.ndarray
    i_hesm: np.ndarray
    dv_c2_dt: np.ndarray
    v_c1: np.ndarray
    i_ref: np.ndarray
    decimation_factor: int
    dt: float
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class Metrics:
    """Bus-voltage quality summary.

    ``swing_*`` is the worst max-minus-min of the bus voltage over any full
    pulse cycle of the phase; ``sag`` is the mean over the first sag window
    of the final phase minus the mean over the last window (positive when
    the bus decayed).
    """

    swing_phase_a: float
    swing_phase_b: float
    swing_worst: float
    sag: float
    sag_window_s: float

    def to_dict(self) -> dict:
        return {
            "swing_phase_a_v": self.swing_phase_a,
            "swing_phase_b_v": self.swing_phase_b,
            "swing_worst_v": self.swing_worst,
            "sag_v": self.sag,
            "sag_window_s": self.sag_window_s,
        }


@dataclass(frozen=True)
class RunInfo:
    ok: bool
    fault_message: str | None
    steps: int
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "fault": self.fault_message,
            "steps": self.steps,
            "wall_time_s": self.wall_time_s,
        }


_CTRL_KIND_CODE = {"flc": 0, "ifthen": 1, "fixed": 2}
_MODE_CODE = {"averaged": 0, "switched": 1}


def run(cfg: "Config") -> tuple[Trace, RunInfo]:
    """Execute one deterministic run and return the trace with run info.

    A divergence or storage fault stops the loop early; the partial trace
    is still returned with ``RunInfo.ok`` false.
    """
    p = cfg.plant
    if p.textbook_mode:
        raise SimFault("plant.textbook_mode is an equation-verification mode; "
                       "runs require the consistent-sign model")
    dt = cfg.dt
    n_steps = int(round(cfg.load.t_end / dt))
    log_every = max(1, int(round(1.0 / (cfg.decimation_hz * dt))))
    ctrl_every = max(1, int(round(1.0 / (cfg.controller_update_hz * dt))))
    pwm_steps = max(1, int(round(1.0 / (p.switching_frequency * dt))))

    load_int = np.array([
        int(round(cfg.load.t_high / dt)),
        int(round(cfg.load.period / dt)),
        int(round(cfg.load.t_shift / dt)),
    ], dtype=np.int64)
    load_amp = np.array([cfg.load.a_i_high, cfg.load.a_i_low,
                         cfg.load.b_i_high, cfg.load.b_i_low])

    plant_arr = np.array([p.inductance, p.inductor_esr, p.c1, p.c2, p.switch_r_on])
    b = cfg.battery
    # Operating charge window: fault before the polarization pole blows up.
    batt_arr = np.array([b.e0, b.k_pol, b.exp_amplitude, b.exp_decay,
                         b.capacity_ah, b.r_internal,
                         0.0, 0.98 * b.capacity_ah])
    uc = cfg.ultracap
    uc_arr = np.array([uc.capacitance, uc.esr])
    init_arr = np.array([0.0, b.open_circuit_voltage(b.q0), uc.v0, b.q0, uc.v0])

    g = cfg.cascade
    ctrl_arr = np.array([
        g.setpoint, g.dead_band,
        g.discharge_voltage.kp, g.discharge_voltage.ki,
        g.recharge_voltage.kp, g.recharge_voltage.ki,
        g.discharge_current.kp, g.discharge_current.ki,
        g.recharge_current.kp, g.recharge_current.ki,
        2.0 * g.setpoint,
    ])
    it = cfg.ifthen
    ifthen_arr = np.array([it.v_low, it.v_high, it.i_discharge, it.i_recharge])
    fixed_arr = np.array([cfg.fixed_duty[0], cfg.fixed_duty[1]])

    fk = cfg.flc.kernel_arrays()

    n_samples = (n_steps + log_every - 1) // log_every + 1
    out_f = np.zeros((kernels.N_FCOLS, n_samples))
    out_i = np.zeros((kernels.N_ICOLS, n_samples), dtype=np.int64)
    energy = np.zeros(kernels.N_ENERGY)

    t0 = time.perf_counter()
    status, fault_k, n_logged = kernels.simulate(
        _MODE_CODE[cfg.mode], _CTRL_KIND_CODE[cfg.controller_kind],
        dt, n_steps, log_every, ctrl_every, pwm_steps,
        plant_arr, batt_arr, uc_arr, init_arr,
        load_int, load_amp, ctrl_arr, ifthen_arr, fixed_arr,
        fk["v_bps"], fk["i_bps"], fk["rules"],
        np.concatenate([fk["v_universe"], fk["i_universe"], fk["out_universe"]]),
        fk["out_grid"], fk["out_centers"],
        out_f, out_i, energy)
    wall = time.perf_counter() - t0

    sl = slice(0, n_logged)
    trace = Trace(
        t=out_f[kernels.F_T, sl].copy(),
        v_bus=out_f[kernels.F_VBUS, sl].copy(),
        i_l=out_f[kernels.F_IL, sl].copy(),
        i_batt=out_f[kernels.F_IBATT, sl].copy(),
        i_uc=out_f[kernels.F_IUC, sl].copy(),
        zeta=out_f[kernels.F_ZETA, sl].copy(),
        soc=out_f[kernels.F_SOC, sl].copy(),
        v_uc=out_f[kernels.F_VUC, sl].copy(),
        i_limit=out_f[kernels.F_LIMIT, sl].copy(),
        ctrl_state=out_i[kernels.I_STATE, sl].copy(),
        flags=out_i[kernels.I_FLAGS, sl].copy(),
        i_hesm=out_f[kernels.F_IHESM, sl].copy(),
        dv_c2_dt=out_f[kernels.F_DVDT, sl].copy(),
        v_c1=out_f[kernels.F_VC1, sl].copy(),
        i_ref=out_f[kernels.F_REF, sl].copy(),
        decimation_factor=log_every,
        dt=dt,
    )

    stored0 = _stored_energy(p, b, uc, init_arr[0], init_arr[1], init_arr[2], init_arr[4])
    if n_logged > 0:
        q_final = (1.0 - trace.soc[-1]) * b.capacity_ah
        stored1 = _stored_energy(p, b, uc, trace.i_l[-1], trace.v_c1[-1],
                                 trace.v_bus[-1], trace.v_uc[-1])
    else:
        q_final, stored1 = b.q0, stored0
    e_src, e_load, e_diss, e_clamp, iv2_int = energy
    trace.meta = {
        "mode": cfg.mode,
        "controller": cfg.controller_kind,
        "dt_s": dt,
        "steps": n_steps,
        "q_extracted_final_ah": q_final,
        "energy": {
            "source_j": float(e_src),
            "load_j": float(e_load),
            "dissipated_j": float(e_diss),
            "clamp_loss_j": float(e_clamp),
            "stored_delta_j": float(stored1 - stored0),
            "balance_residual_j": float(e_src - (e_load + e_diss + e_clamp
                                                 + (stored1 - stored0))),
            "ultracap_charge_integral_c": float(iv2_int),
        },
    }

    if status == kernels.OK:
        info = RunInfo(ok=True, fault_message=None, steps=n_steps, wall_time_s=wall)
    else:
        msg = kernels.FAULT_MESSAGES.get(status, "unknown fault")
        info = RunInfo(ok=False,
                       fault_message=f"{msg} at t={fault_k * dt:.6f} s",
                       steps=fault_k + 1, wall_time_s=wall)
    return trace, info


def _stored_energy(p, b, uc, i_l, v_c1, v_c2, v_uc) -> float:
    return (0.5 * p.inductance * i_l * i_l + 0.5 * p.c1 * v_c1 * v_c1
            + 0.5 * p.c2 * v_c2 * v_c2 + 0.5 * uc.capacitance * v_uc * v_uc)


def _worst_cycle_swing(trace: Trace, start: float, end: float, period: float) -> float:
    n_cycles = int(math.floor((end - start) / period + 1e-9))
    if n_cycles < 1:
        raise MetricsError("trace spans less than one full pulse cycle")
    worst = 0.0
    t = trace.t
    v = trace.v_bus
    for c in range(n_cycles):
        c_start = start + c * period
        c_end = c_start + period
        mask = (t >= c_start - 1e-12) & (t < c_end - 1e-12)
        if not np.any(mask):
            raise MetricsError(f"no samples in pulse cycle [{c_start}, {c_end})")
        seg = v[mask]
        swing = float(np.max(seg) - np.min(seg))
        if swing > worst:
            worst = swing
    return worst


def compute_metrics(trace: Trace, profile: LoadProfile,
                    sag_window: float = 2.0) -> Metrics:
    """Swing and sag summary of a completed run.

    Swing is reported per phase as the worst full-cycle excursion; metric
    windows never straddle the amplitude shift.  Sag compares the mean bus
    voltage over the first ``sag_window`` seconds of the final phase with
    the mean over its last ``sag_window`` seconds.
    """
    if len(trace) == 0:
        raise MetricsError("empty trace")
    if trace.t[-1] < profile.t_end - 1e-9:
        raise MetricsError(
            f"trace ends at {trace.t[-1]:.3f} s, before t_end={profile.t_end} s")
    swing_a = _worst_cycle_swing(trace, 0.0, profile.t_shift, profile.period)
    swing_b = _worst_cycle_swing(trace, profile.t_shift, profile.t_end, profile.period)
    window = min(sag_window, 0.5 * (profile.t_end - profile.t_shift))
    first = _window_mean(trace, profile.t_shift, profile.t_shift + window)
    last = _window_mean(trace, profile.t_end - window, profile.t_end)
    return Metrics(swing_phase_a=swing_a, swing_phase_b=swing_b,
                   swing_worst=max(swing_a, swing_b),
                   sag=first - last, sag_window_s=window)


def _window_mean(trace: Trace, start: float, end: float) -> float:
    mask = (trace.t >= start - 1e-12) & (trace.t < end - 1e-12)
    if not np.any(mask):
        raise MetricsError(f"no samples in window [{start}, {end})")
    return float(np.mean(trace.v_bus[mask]))


def compare(baseline: Metrics, candidate: Metrics) -> dict:
    """Improvement percentages of ``candidate`` over ``baseline``.

    ``(baseline - candidate) / baseline * 100`` per metric; a zero baseline
    makes the ratio undefined and is reported as None rather than infinite.
    """
    out = {}
    for key, a, b in (
        ("swing_phase_a_improvement_pct", baseline.swing_phase_a, candidate.swing_phase_a),
        ("swing_phase_b_improvement_pct", baseline.swing_phase_b, candidate.swing_phase_b),
        ("swing_improvement_pct", baseline.swing_worst, candidate.swing_worst),
        ("sag_improvement_pct", baseline.sag, candidate.sag),
    ):
        out[key] = None if a == 0.0 else (a - b) / a * 100.0
    return out

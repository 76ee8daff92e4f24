"""Supervisory controllers and the cascaded PI loops that produce duty commands.

The supervisor (fuzzy or if-then) emits a signed battery current limit.
A positive limit caps the magnitude of the bus-side current reference in
either direction; a negative limit replaces the reference outright and
forces recharge.  The outer voltage loops produce the reference, the inner
current loop of the active direction produces the duty, and a small dead
band around zero prevents direction chatter.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum

from .fuzzy import FuzzyController


class SupervisorState(IntEnum):
    IDLE = 0
    DISCHARGING = 1
    RECHARGING = 2


@dataclass(frozen=True)
class PIGains:
    kp: float
    ki: float
    out_lo: float
    out_hi: float

    def __post_init__(self):
        if not self.out_lo < self.out_hi:
            raise ValueError("PI output bounds must satisfy out_lo < out_hi")
        if self.ki < 0.0 or self.kp < 0.0:
            raise ValueError("PI gains must be non-negative")


@dataclass(frozen=True)
class PIState:
    integral: float = 0.0
    last_output: float = 0.0


def pi_update(g: PIGains, st: PIState, error: float, dt: float,
              out_lo: float | None = None, out_hi: float | None = None
              ) -> tuple[float, PIState]:
    """One forward-Euler PI update with conditional anti-windup.

    The integral advances by ``error * dt`` unless the unsaturated output is
    already past the active bound and the error pushes it further.  Bounds
    default to the gains' clamp range; callers may tighten them per call
    (the cascade does this to track the supervisor limit), in which case the
    integral is also kept inside the tightened range.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    lo = g.out_lo if out_lo is None else out_lo
    hi = g.out_hi if out_hi is None else out_hi
    integral = st.integral + error * dt
    unsat = g.kp * error + g.ki * integral
    if (unsat > hi and error > 0.0) or (unsat < lo and error < 0.0):
        integral = st.integral
    if g.ki > 0.0:
        integral = min(max(integral, lo / g.ki), hi / g.ki)
    out = min(max(g.kp * error + g.ki * integral, lo), hi)
    return out, PIState(integral=integral, last_output=out)


@dataclass(frozen=True)
class IfThenController:
    """Hysteretic three-state baseline supervisor.

    Enters DISCHARGING below ``v_low`` and RECHARGING above ``v_high``;
    returns to IDLE once the bus crosses the band midpoint.  The active
    state emits its fixed current command as the battery limit.
    """

    v_low: float = 23.5
    v_high: float = 24.5
    i_discharge: float = 12.0
    i_recharge: float = 8.0

    def __post_init__(self):
        if not self.v_low < self.v_high:
            raise ValueError("if-then thresholds must satisfy v_low < v_high")


@dataclass(frozen=True)
class SupervisorOutput:
    """Signed battery current limit: positive permits discharge up to that
    rate, negative commands recharge at that magnitude."""

    i_batt_limit: float
    uncovered_input_flag: bool = False


def if_then_supervise(c: IfThenController, state: SupervisorState,
                      v_bus: float) -> tuple[SupervisorOutput, SupervisorState]:
    mid = 0.5 * (c.v_low + c.v_high)
    if state == SupervisorState.IDLE:
        if v_bus < c.v_low:
            state = SupervisorState.DISCHARGING
        elif v_bus > c.v_high:
            state = SupervisorState.RECHARGING
    elif state == SupervisorState.DISCHARGING:
        if v_bus >= mid:
            state = SupervisorState.IDLE
    else:
        if v_bus <= mid:
            state = SupervisorState.IDLE
    if state == SupervisorState.DISCHARGING:
        limit = c.i_discharge
    elif state == SupervisorState.RECHARGING:
        limit = -c.i_recharge
    else:
        limit = 0.0
    return SupervisorOutput(i_batt_limit=limit), state


def flc_supervise(fc: FuzzyController, v_bus: float, i_module: float) -> SupervisorOutput:
    limit, uncovered = fc.infer_flagged(v_bus, i_module)
    return SupervisorOutput(i_batt_limit=limit, uncovered_input_flag=uncovered)


@dataclass(frozen=True)
class CascadeGains:
    """Outer voltage and inner current PI pairs, one pair per flow direction."""

    discharge_voltage: PIGains = field(
        default_factory=lambda: PIGains(kp=0.2, ki=10.0, out_lo=0.0, out_hi=60.0))
    discharge_current: PIGains = field(
        default_factory=lambda: PIGains(kp=1.0, ki=200.0, out_lo=0.0, out_hi=1.0))
    recharge_voltage: PIGains = field(
        default_factory=lambda: PIGains(kp=0.028, ki=1.5, out_lo=0.0, out_hi=60.0))
    recharge_current: PIGains = field(
        default_factory=lambda: PIGains(kp=5.0, ki=1.0, out_lo=0.0, out_hi=1.0))
    setpoint: float = 24.0
    dead_band: float = 0.5


@dataclass(frozen=True)
class CascadeState:
    dis_voltage: PIState = field(default_factory=PIState)
    rech_voltage: PIState = field(default_factory=PIState)
    dis_current: PIState = field(default_factory=PIState)
    rech_current: PIState = field(default_factory=PIState)
    direction: SupervisorState = SupervisorState.IDLE


@dataclass(frozen=True)
class Measurements:
    v_bus: float
    i_l: float
    v_c1: float


@dataclass(frozen=True)
class CascadeResult:
    d1: float
    d2: float
    i_ref: float          # bus-side inductor current reference, signed
    direction: SupervisorState


def battery_to_bus_ratio(v_c1: float, v_bus: float) -> float:
    """Current conversion from the battery port to the bus side.

    Equal average power across the converter maps a battery-side ampere to
    ``v_c1 / v_bus`` bus-side amperes, so a battery current limit L caps the
    inductor current reference at ``L * ratio``.
    """
    return v_c1 / max(v_bus, 1.0)


def cascade_update(gains: CascadeGains, st: CascadeState, m: Measurements,
                   limit: SupervisorOutput, dt: float) -> tuple[CascadeResult, CascadeState]:
    """One control tick: voltage loops -> limited reference -> duty.

    Both voltage PIs run every tick with their clamp bounds tightened to the
    supervisor's authority, so their integrals never wind past what the
    limit allows.  Direction selection follows the sign of the limited
    reference outside the dead band; the newly inactive current loop is
    reset on a direction change.
    """
    ratio = battery_to_bus_ratio(m.v_c1, m.v_bus)
    l_batt = limit.i_batt_limit
    verr = gains.setpoint - m.v_bus
    if l_batt >= 0.0:
        cap = l_batt * ratio
        ref_d, dis_v = pi_update(gains.discharge_voltage, st.dis_voltage, verr, dt,
                                 out_lo=0.0, out_hi=cap)
        ref_r, rech_v = pi_update(gains.recharge_voltage, st.rech_voltage, -verr, dt,
                                  out_lo=0.0, out_hi=cap)
        ref = ref_d - ref_r
    else:
        forced = -l_batt * ratio
        _, dis_v = pi_update(gains.discharge_voltage, st.dis_voltage, verr, dt,
                             out_lo=0.0, out_hi=0.0)
        ref_r, rech_v = pi_update(gains.recharge_voltage, st.rech_voltage, -verr, dt,
                                  out_lo=forced, out_hi=forced)
        ref = -ref_r

    if ref > gains.dead_band:
        direction = SupervisorState.DISCHARGING
    elif ref < -gains.dead_band:
        direction = SupervisorState.RECHARGING
    else:
        direction = SupervisorState.IDLE

    dis_i, rech_i = st.dis_current, st.rech_current
    if direction != st.direction:
        if direction == SupervisorState.DISCHARGING:
            dis_i = PIState()
        elif direction == SupervisorState.RECHARGING:
            rech_i = PIState()

    d1 = d2 = 0.0
    if direction == SupervisorState.DISCHARGING:
        d1, dis_i = pi_update(gains.discharge_current, dis_i, ref - m.i_l, dt)
    elif direction == SupervisorState.RECHARGING:
        d2, rech_i = pi_update(gains.recharge_current, rech_i, (-ref) - (-m.i_l), dt)

    new_state = CascadeState(dis_voltage=dis_v, rech_voltage=rech_v,
                             dis_current=dis_i, rech_current=rech_i,
                             direction=direction)
    return CascadeResult(d1=d1, d2=d2, i_ref=ref, direction=direction), new_state

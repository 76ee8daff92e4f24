"""Continuous-time model of the bidirectional converter and storage devices.

Topology: a battery behind its internal resistance feeds node C1; a
half-bridge (high-side switch S1 to node C1, low-side switch S2 to ground)
drives the power inductor into the DC bus node C2; the ultracapacitor hangs
on the bus through its ESR; the combined load/generation injects the
disturbance current ``zeta`` into the bus node.

Two derivative conventions are provided:

* ``textbook_mode=True`` evaluates the four idealized switching-state
  equation sets verbatim, with the inductor current measured in the
  direction of the active power flow and no resistive terms.  This mode is
  for equation-level verification only.
* ``textbook_mode=False`` (the default, used for all simulations) applies
  one consistent passive-sign convention: ``i_L`` is positive flowing from
  the switch midpoint into the bus regardless of direction, ``i_v1``/``i_v2``
  are positive when the battery/ultracapacitor source current, and
  ``zeta > 0`` means net external generation into the bus.  Series drops
  across the inductor ESR and the conducting switch are included.

Integration is fixed-step classic Runge-Kutta in both the PWM-resolved
(switched) and the duty-averaged variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


class PlantFault(RuntimeError):
    """Simulation-level fault (divergence, depleted battery, shoot-through)."""


class ShootThroughError(PlantFault):
    """Both switches commanded on at once."""


@dataclass(frozen=True)
class PlantParams:
    """Converter component values."""

    inductance: float = 3.4e-3
    inductor_esr: float = 1.5e-3
    c1: float = 5e-3
    c2: float = 5e-3
    switch_r_on: float = 0.1
    switching_frequency: float = 40e3
    textbook_mode: bool = False

    def __post_init__(self):
        for name in ("inductance", "inductor_esr", "c1", "c2", "switch_r_on"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"plant.{name} must be positive")
        if self.switching_frequency < 1e3:
            raise ValueError("plant.switching_frequency must be >= 1 kHz")


@dataclass(frozen=True)
class BatteryModel:
    """Closed-form open-circuit voltage over extracted charge, plus coulomb counting.

    ``ocv(q) = e0 - k_pol * q * capacity / (capacity - q) + exp_amplitude *
    exp(-exp_decay * q)`` with ``q`` the ampere-hours extracted since full.
    The default constants span roughly 42 V full to 30 V near empty around
    the 36 V nominal of the 15 Ah pack.
    """

    nominal_voltage: float = 36.0
    capacity_ah: float = 15.0
    soc0: float = 0.5
    r_internal: float = 0.05
    e0: float = 37.2
    k_pol: float = 0.038
    exp_amplitude: float = 4.8
    exp_decay: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.soc0 <= 1.0:
            raise ValueError("battery.soc0 must be in (0, 1]")
        if self.capacity_ah <= 0.0 or self.r_internal <= 0.0:
            raise ValueError("battery capacity and internal resistance must be positive")

    @property
    def q0(self) -> float:
        """Initial extracted charge in ampere-hours."""
        return (1.0 - self.soc0) * self.capacity_ah

    def open_circuit_voltage(self, q_extracted: float) -> float:
        q = q_extracted
        cap = self.capacity_ah
        if not 0.0 <= q <= cap:
            raise PlantFault(f"battery depleted/overcharged: q_extracted={q:.4f} Ah")
        denom = max(cap - q, 1e-9 * cap)
        return self.e0 - self.k_pol * q * cap / denom + self.exp_amplitude * math.exp(
            -self.exp_decay * q)

    def terminal_voltage(self, q_extracted: float, i: float) -> float:
        """Terminal voltage under load; ``i > 0`` is discharge."""
        return self.open_circuit_voltage(q_extracted) - self.r_internal * i


@dataclass(frozen=True)
class UltracapModel:
    """Ideal capacitor behind a series ESR."""

    capacitance: float = 29.0
    esr: float = 0.044
    v0: float = 24.0

    def __post_init__(self):
        if self.capacitance <= 0.0 or self.esr <= 0.0 or self.v0 < 0.0:
            raise ValueError("ultracap parameters must be positive (v0 >= 0)")

    def terminal_voltage(self, v_internal: float, i: float) -> float:
        """Terminal voltage while sourcing ``i`` (``i > 0`` discharges the cap)."""
        return v_internal - self.esr * i


@dataclass(frozen=True)
class PlantState:
    """Continuous state advanced by the integrator."""

    i_l: float
    v_c1: float
    v_c2: float
    q_extracted: float
    v_uc: float
    t: float = 0.0

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in
                   (self.i_l, self.v_c1, self.v_c2, self.q_extracted, self.v_uc))


@dataclass(frozen=True)
class SwitchCommand:
    """Instantaneous switch pair state plus the active power-flow direction.

    S1 may only conduct in the discharge pair and S2 only in the recharge
    pair; with both off the freewheeling diode of the idle switch carries
    the current (synchronous assumption).
    """

    s1: bool
    s2: bool
    recharging: bool

    def __post_init__(self):
        if self.s1 and self.s2:
            raise ShootThroughError("s1 and s2 commanded on simultaneously")
        if self.s1 and self.recharging:
            raise ValueError("s1 active outside the discharge pair")
        if self.s2 and not self.recharging:
            raise ValueError("s2 active outside the recharge pair")

    @property
    def state_index(self) -> int:
        """1..4 following the four switching configurations."""
        if not self.recharging:
            return 1 if self.s1 else 2
        return 3 if self.s2 else 4


@dataclass(frozen=True)
class DutyCommand:
    """Duty-cycle command for the averaged model; at most one direction active."""

    d1: float = 0.0
    d2: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.d1 <= 1.0 and 0.0 <= self.d2 <= 1.0):
            raise ValueError("duty fractions must lie in [0, 1]")
        if self.d1 > 0.0 and self.d2 > 0.0:
            raise ShootThroughError("both duty channels active at once")

    @property
    def recharging(self) -> bool:
        return self.d2 > 0.0


@dataclass(frozen=True)
class PortCurrents:
    """Branch currents entering the converter nodes.

    ``zeta > 0`` means external generation exceeds the load; under net load
    draw ``zeta`` is negative.
    """

    i_v1: float
    i_v2: float
    zeta: float


def derivatives(p: PlantParams, s: PlantState, sw: SwitchCommand,
                ports: PortCurrents) -> tuple[float, float, float]:
    """Time derivatives of (i_l, v_c1, v_c2) for one switching configuration.

    In textbook mode each of the four configurations follows its idealized
    equation set exactly (direction-local inductor current, no resistance).
    Otherwise the consistent global convention described in the module
    docstring is used, with the ESR and on-resistance drops applied to the
    inductor branch.
    """
    idx = sw.state_index
    if p.textbook_mode:
        if idx == 1:
            di = (s.v_c1 - s.v_c2) / p.inductance
            dv1 = (s.i_l - ports.i_v1) / p.c1
            dv2 = (s.i_l - ports.i_v2 - ports.zeta) / p.c2
        elif idx == 2:
            di = -s.v_c2 / p.inductance
            dv1 = -ports.i_v1 / p.c1
            dv2 = (s.i_l - ports.i_v2 - ports.zeta) / p.c2
        elif idx == 3:
            di = s.v_c2 / p.inductance
            dv1 = -ports.i_v1 / p.c1
            dv2 = (ports.i_v2 - s.i_l - ports.zeta) / p.c2
        else:
            di = (s.v_c2 - s.v_c1) / p.inductance
            dv1 = (s.i_l - ports.i_v1) / p.c1
            dv2 = (ports.i_v2 - s.i_l - ports.zeta) / p.c2
        return di, dv1, dv2

    # Consistent convention: u = 1 when the midpoint is tied to node C1
    # (S1 conducting, or S1's diode during recharge freewheel).
    u = 1.0 if idx in (1, 4) else 0.0
    r_series = p.inductor_esr + p.switch_r_on
    di = (u * s.v_c1 - s.v_c2 - s.i_l * r_series) / p.inductance
    dv1 = (ports.i_v1 - u * s.i_l) / p.c1
    dv2 = (s.i_l + ports.i_v2 + ports.zeta) / p.c2
    return di, dv1, dv2


def hesm_current(p: PlantParams, s: PlantState, dv_c2_dt: float) -> float:
    """Net module current: inductor current plus the bus capacitor current."""
    return s.i_l + p.c2 * dv_c2_dt


def _full_derivatives(p: PlantParams, batt: BatteryModel, uc: UltracapModel,
                      i_l, v_c1, v_c2, q, v_uc, u: float, zeta: float):
    """Derivatives of all five states with source branch currents resolved.

    ``u`` is the midpoint-to-C1 connection fraction: the instantaneous 0/1
    switch state, or the duty-weighted average in averaged mode (d1 while
    discharging, 1 - d2 while recharging).
    """
    voc = batt.open_circuit_voltage(q)
    i_v1 = (voc - v_c1) / batt.r_internal
    i_v2 = (v_uc - v_c2) / uc.esr
    r_series = p.inductor_esr + p.switch_r_on
    di = (u * v_c1 - v_c2 - i_l * r_series) / p.inductance
    dv1 = (i_v1 - u * i_l) / p.c1
    dv2 = (i_l + i_v2 + zeta) / p.c2
    dq = i_v1 / 3600.0
    dv_uc = -i_v2 / uc.capacitance
    return di, dv1, dv2, dq, dv_uc


def _rk4_step(p: PlantParams, batt: BatteryModel, uc: UltracapModel,
              s: PlantState, u: float, zeta: float, dt: float) -> PlantState:
    y = (s.i_l, s.v_c1, s.v_c2, s.q_extracted, s.v_uc)
    k1 = _full_derivatives(p, batt, uc, *y, u, zeta)
    y2 = tuple(y[j] + 0.5 * dt * k1[j] for j in range(5))
    k2 = _full_derivatives(p, batt, uc, *y2, u, zeta)
    y3 = tuple(y[j] + 0.5 * dt * k2[j] for j in range(5))
    k3 = _full_derivatives(p, batt, uc, *y3, u, zeta)
    y4 = tuple(y[j] + dt * k3[j] for j in range(5))
    k4 = _full_derivatives(p, batt, uc, *y4, u, zeta)
    yn = tuple(y[j] + (dt / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
               for j in range(5))
    return PlantState(i_l=yn[0], v_c1=yn[1], v_c2=yn[2], q_extracted=yn[3],
                      v_uc=yn[4], t=s.t + dt)


def _clamp_dcm(s: PlantState, recharging: bool) -> tuple[PlantState, bool]:
    # Diode conduction cannot reverse the inductor current against the
    # active direction; clamp to zero for the remainder of the step.
    if not recharging and s.i_l < 0.0:
        return replace(s, i_l=0.0), True
    if recharging and s.i_l > 0.0:
        return replace(s, i_l=0.0), True
    return s, False


def _check_state(s: PlantState, v_bus_max: float) -> None:
    if not s.is_finite():
        raise PlantFault(f"non-finite state at t={s.t:.6f} s")
    if not 0.0 <= s.v_c2 <= v_bus_max:
        raise PlantFault(f"bus voltage {s.v_c2:.3f} V out of [0, {v_bus_max:.1f}] "
                         f"at t={s.t:.6f} s")
    if s.v_uc < 0.0:
        raise PlantFault(f"ultracapacitor voltage negative at t={s.t:.6f} s")


def step_averaged(p: PlantParams, batt: BatteryModel, uc: UltracapModel,
                  s: PlantState, duty: DutyCommand, zeta: float, dt: float,
                  v_bus_max: float = 48.0) -> tuple[PlantState, bool]:
    """Advance one step of the duty-averaged model.

    The derivative is the duty-weighted convex combination of the active
    switching pair, which reduces to the connection fraction ``u = d1``
    (discharging) or ``u = 1 - d2`` (recharging).  Returns the new state and
    a flag marking a discontinuous-conduction clamp.
    """
    u = (1.0 - duty.d2) if duty.recharging else duty.d1
    sn = _rk4_step(p, batt, uc, s, u, zeta, dt)
    sn, clamped = _clamp_dcm(sn, duty.recharging)
    _check_state(sn, v_bus_max)
    return sn, clamped


def step_switched(p: PlantParams, batt: BatteryModel, uc: UltracapModel,
                  s: PlantState, duty: DutyCommand, zeta: float, dt: float,
                  v_bus_max: float = 48.0) -> tuple[PlantState, bool]:
    """Advance one step with the instantaneous PWM switch state.

    Leading-edge modulation: the active switch conducts for the first
    ``d * T_sw`` of each period.  ``dt`` must resolve the PWM period
    (dt <= 1 / (20 * switching_frequency)).
    """
    if dt > 1.0 / (20.0 * p.switching_frequency):
        raise ValueError("dt too coarse to resolve the PWM period")
    period = 1.0 / p.switching_frequency
    frac = (s.t % period) / period
    if duty.recharging:
        u = 0.0 if frac < duty.d2 else 1.0
    else:
        u = 1.0 if frac < duty.d1 else 0.0
    sn = _rk4_step(p, batt, uc, s, u, zeta, dt)
    sn, clamped = _clamp_dcm(sn, duty.recharging)
    _check_state(sn, v_bus_max)
    return sn, clamped


def initial_state(batt: BatteryModel, uc: UltracapModel, v_bus0: float | None = None,
                  v_c1_0: float | None = None) -> PlantState:
    """Quiescent starting point: idle converter, nodes at their source voltages."""
    v2 = uc.v0 if v_bus0 is None else v_bus0
    v1 = batt.open_circuit_voltage(batt.q0) if v_c1_0 is None else v_c1_0
    return PlantState(i_l=0.0, v_c1=v1, v_c2=v2, q_extracted=batt.q0, v_uc=uc.v0, t=0.0)

"""Fixed-step simulation loop, JIT-compiled with numba when available.

The loop fuses the load profile, supervisor, cascaded PI control and the
RK4 plant integration into one scalar-arithmetic function so million-step
runs stay fast.  Set ``HESM_SIM_NO_NUMBA=1`` to force the interpreted
pure-Python/NumPy fallback (same function, no JIT); ``benchmarks/``
contains a script comparing the two backends.

Everything here mirrors the object-level modules (`plant`, `control`,
`fuzzy`) operation for operation; the test suite cross-checks the kernel
against them on short horizons.
"""

from __future__ import annotations

import math
import os

import numpy as np


def _detect_numba() -> bool:
    if os.environ.get("HESM_SIM_NO_NUMBA", "").strip().lower() in ("1", "true", "yes"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _detect_numba()

if NUMBA_ENABLED:
    from numba import njit

    def _jit(fn):
        return njit(cache=True, nogil=True)(fn)
else:
    def _jit(fn):
        return fn

# Column layout of the float output block.
F_T, F_VBUS, F_IL, F_IBATT, F_IUC, F_ZETA, F_SOC, F_VUC, F_LIMIT, \
    F_IHESM, F_DVDT, F_VC1, F_REF = range(13)
N_FCOLS = 13
# Integer output block.
I_STATE, I_FLAGS = 0, 1
N_ICOLS = 2
# Energy accumulator slots.
E_SRC, E_LOAD, E_DISS, E_CLAMP, E_IV2_INT = range(5)
N_ENERGY = 5

# Flag bits.
FLAG_UNCOVERED = 1
FLAG_DCM = 2

# Kernel status codes.
OK = 0
FAULT_NONFINITE = 1
FAULT_BUS_RANGE = 2
FAULT_BATTERY = 3
FAULT_ULTRACAP = 4

FAULT_MESSAGES = {
    FAULT_NONFINITE: "non-finite state",
    FAULT_BUS_RANGE: "bus voltage out of range",
    FAULT_BATTERY: "battery depleted/overcharged",
    FAULT_ULTRACAP: "ultracapacitor voltage negative",
}


def _membership(x, a, b, c, d):
    if x < a or x > d:
        return 0.0
    if b <= x <= c:
        return 1.0
    if x < b:
        return (x - a) / (b - a)
    return (d - x) / (d - c)


def _fuzzy_limit(v, ih, v_bps, i_bps, rules, universes, out_grid, out_centers):
    v_lo, v_hi, i_lo, i_hi, o_lo, o_hi = (universes[0], universes[1], universes[2],
                                          universes[3], universes[4], universes[5])
    if v < v_lo:
        v = v_lo
    elif v > v_hi:
        v = v_hi
    if ih < i_lo:
        ih = i_lo
    elif ih > i_hi:
        ih = i_hi
    n_sets = v_bps.shape[0]
    deg_v = np.empty(n_sets)
    deg_i = np.empty(n_sets)
    for s in range(n_sets):
        deg_v[s] = _membership(v, v_bps[s, 0], v_bps[s, 1], v_bps[s, 2], v_bps[s, 3])
        deg_i[s] = _membership(ih, i_bps[s, 0], i_bps[s, 1], i_bps[s, 2], i_bps[s, 3])
    acts = np.zeros(out_grid.shape[0])
    fired = False
    for r in range(n_sets):
        dr = deg_i[r]
        if dr <= 0.0:
            continue
        for c in range(n_sets):
            w = deg_v[c]
            if dr < w:
                w = dr
            if w > 0.0:
                fired = True
                k = rules[r, c]
                if w > acts[k]:
                    acts[k] = w
    mid = 0.5 * (o_lo + o_hi)
    if not fired:
        return mid, True
    num = 0.0
    den = 0.0
    res = out_centers.shape[0]
    for j in range(res):
        mu = 0.0
        for s in range(acts.shape[0]):
            a = acts[s]
            if a <= 0.0:
                continue
            m = out_grid[s, j]
            if m > a:
                m = a
            if m > mu:
                mu = m
        num += out_centers[j] * mu
        den += mu
    if den <= 0.0:
        return mid, True
    return num / den, False


def _pi_step(kp, ki, integral, err, dt, lo, hi):
    cand = integral + err * dt
    unsat = kp * err + ki * cand
    if (unsat > hi and err > 0.0) or (unsat < lo and err < 0.0):
        cand = integral
    if ki > 0.0:
        ihi = hi / ki
        ilo = lo / ki
        if cand > ihi:
            cand = ihi
        elif cand < ilo:
            cand = ilo
    out = kp * err + ki * cand
    if out > hi:
        out = hi
    elif out < lo:
        out = lo
    return cand, out


def _ocv(q, e0, k_pol, a_exp, b_exp, cap):
    denom = cap - q
    floor = 1e-9 * cap
    if denom < floor:
        denom = floor
    return e0 - k_pol * q * cap / denom + a_exp * math.exp(-b_exp * q)


def _deriv(i_l, v1, v2, q, vuc, u, zeta,
           L, r_series, C1, C2,
           e0, k_pol, a_exp, b_exp, cap, r_int, uc_c, uc_esr):
    voc = _ocv(q, e0, k_pol, a_exp, b_exp, cap)
    iv1 = (voc - v1) / r_int
    iv2 = (vuc - v2) / uc_esr
    di = (u * v1 - v2 - i_l * r_series) / L
    dv1 = (iv1 - u * i_l) / C1
    dv2 = (i_l + iv2 + zeta) / C2
    dq = iv1 / 3600.0
    dvuc = -iv2 / uc_c
    p_src = voc * iv1
    p_load = -zeta * v2
    p_diss = r_int * iv1 * iv1 + uc_esr * iv2 * iv2 + r_series * i_l * i_l
    return di, dv1, dv2, dq, dvuc, p_src, p_load, p_diss, iv2


def _zeta_at(k, high_steps, period_steps, shift_step, a_hi, a_lo, b_hi, b_lo):
    if k < shift_step:
        kk = k
        hi = a_hi
        lo = a_lo
    else:
        kk = k - shift_step
        hi = b_hi
        lo = b_lo
    pos = kk % period_steps
    if pos < high_steps:
        return -hi
    return -lo


def _simulate_impl(mode, ctrl_kind, dt, n_steps, log_every, ctrl_every, pwm_steps,
                   plant_arr, batt_arr, uc_arr, init_arr,
                   load_int, load_amp, ctrl_arr, ifthen_arr, fixed_arr,
                   v_bps, i_bps, rules, universes, out_grid, out_centers,
                   out_f, out_i, energy):
    # Unpack parameter blocks once; everything below is scalar arithmetic.
    L = plant_arr[0]
    esr_l = plant_arr[1]
    C1 = plant_arr[2]
    C2 = plant_arr[3]
    r_on = plant_arr[4]
    r_series = esr_l + r_on

    e0 = batt_arr[0]
    k_pol = batt_arr[1]
    a_exp = batt_arr[2]
    b_exp = batt_arr[3]
    cap = batt_arr[4]
    r_int = batt_arr[5]
    q_lo = batt_arr[6]
    q_hi = batt_arr[7]

    uc_c = uc_arr[0]
    uc_esr = uc_arr[1]

    i_l = init_arr[0]
    v1 = init_arr[1]
    v2 = init_arr[2]
    q = init_arr[3]
    vuc = init_arr[4]

    high_steps = load_int[0]
    period_steps = load_int[1]
    shift_step = load_int[2]
    a_hi = load_amp[0]
    a_lo = load_amp[1]
    b_hi = load_amp[2]
    b_lo = load_amp[3]

    v_set = ctrl_arr[0]
    dead_band = ctrl_arr[1]
    dv_kp = ctrl_arr[2]
    dv_ki = ctrl_arr[3]
    rv_kp = ctrl_arr[4]
    rv_ki = ctrl_arr[5]
    di_kp = ctrl_arr[6]
    di_ki = ctrl_arr[7]
    ri_kp = ctrl_arr[8]
    ri_ki = ctrl_arr[9]
    v_bus_max = ctrl_arr[10]

    it_vlow = ifthen_arr[0]
    it_vhigh = ifthen_arr[1]
    it_idis = ifthen_arr[2]
    it_irech = ifthen_arr[3]
    it_mid = 0.5 * (it_vlow + it_vhigh)

    fd_d1 = fixed_arr[0]
    fd_d2 = fixed_arr[1]

    limit = 0.0
    uncovered = False
    it_state = 0
    direction = 0  # 0 idle, 1 discharging, 2 recharging
    dv_int = 0.0
    rv_int = 0.0
    di_int = 0.0
    ri_int = 0.0

    e_src = 0.0
    e_load = 0.0
    e_diss = 0.0
    e_clamp = 0.0
    iv2_int = 0.0

    status = OK
    fault_k = -1
    n_logged = 0
    dcm_prev = False

    for k in range(n_steps):
        t = k * dt
        zeta = _zeta_at(k, high_steps, period_steps, shift_step, a_hi, a_lo, b_hi, b_lo)

        voc = _ocv(q, e0, k_pol, a_exp, b_exp, cap)
        iv1_now = (voc - v1) / r_int
        iv2_now = (vuc - v2) / uc_esr
        dvdt_now = (i_l + iv2_now + zeta) / C2
        ihesm = i_l + C2 * dvdt_now

        # Supervisor tick.
        if ctrl_kind == 0:
            if k % ctrl_every == 0:
                limit, uncovered = _fuzzy_limit(v2, ihesm, v_bps, i_bps, rules,
                                                universes, out_grid, out_centers)
        elif ctrl_kind == 1:
            if k % ctrl_every == 0:
                if it_state == 0:
                    if v2 < it_vlow:
                        it_state = 1
                    elif v2 > it_vhigh:
                        it_state = 2
                elif it_state == 1:
                    if v2 >= it_mid:
                        it_state = 0
                else:
                    if v2 <= it_mid:
                        it_state = 0
                if it_state == 1:
                    limit = it_idis
                elif it_state == 2:
                    limit = -it_irech
                else:
                    limit = 0.0

        # Cascade: voltage loops -> limited bus-side reference -> duty.
        if ctrl_kind == 2:
            d1 = fd_d1
            d2 = fd_d2
            ref = 0.0
            if d1 > 0.0:
                direction = 1
            elif d2 > 0.0:
                direction = 2
            else:
                direction = 0
        else:
            ratio = v1 / (v2 if v2 > 1.0 else 1.0)
            verr = v_set - v2
            if limit >= 0.0:
                cap_ref = limit * ratio
                dv_int, ref_d = _pi_step(dv_kp, dv_ki, dv_int, verr, dt, 0.0, cap_ref)
                rv_int, ref_r = _pi_step(rv_kp, rv_ki, rv_int, -verr, dt, 0.0, cap_ref)
                ref = ref_d - ref_r
            else:
                forced = -limit * ratio
                dv_int, _unused = _pi_step(dv_kp, dv_ki, dv_int, verr, dt, 0.0, 0.0)
                rv_int, ref_r = _pi_step(rv_kp, rv_ki, rv_int, -verr, dt, forced, forced)
                ref = -ref_r

            prev_dir = direction
            if ref > dead_band:
                direction = 1
            elif ref < -dead_band:
                direction = 2
            else:
                direction = 0
            if direction != prev_dir:
                if direction == 1:
                    di_int = 0.0
                elif direction == 2:
                    ri_int = 0.0
            d1 = 0.0
            d2 = 0.0
            if direction == 1:
                di_int, d1 = _pi_step(di_kp, di_ki, di_int, ref - i_l, dt, 0.0, 1.0)
            elif direction == 2:
                ri_int, d2 = _pi_step(ri_kp, ri_ki, ri_int, (-ref) - (-i_l), dt, 0.0, 1.0)

        recharging = direction == 2

        # Log the pre-step state with this step's commands.
        if k % log_every == 0:
            flags = 0
            if uncovered:
                flags |= FLAG_UNCOVERED
            if dcm_prev:
                flags |= FLAG_DCM
            out_f[F_T, n_logged] = t
            out_f[F_VBUS, n_logged] = v2
            out_f[F_IL, n_logged] = i_l
            out_f[F_IBATT, n_logged] = iv1_now
            out_f[F_IUC, n_logged] = iv2_now
            out_f[F_ZETA, n_logged] = zeta
            out_f[F_SOC, n_logged] = 1.0 - q / cap
            out_f[F_VUC, n_logged] = vuc
            out_f[F_LIMIT, n_logged] = limit
            out_f[F_IHESM, n_logged] = ihesm
            out_f[F_DVDT, n_logged] = dvdt_now
            out_f[F_VC1, n_logged] = v1
            out_f[F_REF, n_logged] = ref
            out_i[I_STATE, n_logged] = it_state if ctrl_kind == 1 else direction
            out_i[I_FLAGS, n_logged] = flags
            n_logged += 1

        # Midpoint connection fraction for this step.
        if mode == 0:
            u = (1.0 - d2) if recharging else d1
        else:
            pos = k % pwm_steps
            frac = pos / pwm_steps
            if recharging:
                u = 0.0 if frac < d2 else 1.0
            else:
                u = 1.0 if frac < d1 else 0.0

        # Classic RK4 on the five plant states plus energy quadrature.
        k1 = _deriv(i_l, v1, v2, q, vuc, u, zeta, L, r_series, C1, C2,
                    e0, k_pol, a_exp, b_exp, cap, r_int, uc_c, uc_esr)
        h = 0.5 * dt
        k2 = _deriv(i_l + h * k1[0], v1 + h * k1[1], v2 + h * k1[2],
                    q + h * k1[3], vuc + h * k1[4], u, zeta, L, r_series, C1, C2,
                    e0, k_pol, a_exp, b_exp, cap, r_int, uc_c, uc_esr)
        k3 = _deriv(i_l + h * k2[0], v1 + h * k2[1], v2 + h * k2[2],
                    q + h * k2[3], vuc + h * k2[4], u, zeta, L, r_series, C1, C2,
                    e0, k_pol, a_exp, b_exp, cap, r_int, uc_c, uc_esr)
        k4 = _deriv(i_l + dt * k3[0], v1 + dt * k3[1], v2 + dt * k3[2],
                    q + dt * k3[3], vuc + dt * k3[4], u, zeta, L, r_series, C1, C2,
                    e0, k_pol, a_exp, b_exp, cap, r_int, uc_c, uc_esr)
        w = dt / 6.0
        i_l_new = i_l + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        v1 = v1 + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        v2 = v2 + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        q = q + w * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
        vuc = vuc + w * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4])
        e_src += w * (k1[5] + 2.0 * k2[5] + 2.0 * k3[5] + k4[5])
        e_load += w * (k1[6] + 2.0 * k2[6] + 2.0 * k3[6] + k4[6])
        e_diss += w * (k1[7] + 2.0 * k2[7] + 2.0 * k3[7] + k4[7])
        iv2_int += w * (k1[8] + 2.0 * k2[8] + 2.0 * k3[8] + k4[8])

        # Diode conduction cannot carry current against the active direction.
        dcm_prev = False
        if recharging:
            if i_l_new > 0.0:
                if i_l > 0.0 or d2 > 0.0:
                    dcm_prev = True
                e_clamp += 0.5 * L * i_l_new * i_l_new
                i_l_new = 0.0
        else:
            if i_l_new < 0.0:
                if i_l < 0.0 or d1 > 0.0:
                    dcm_prev = True
                e_clamp += 0.5 * L * i_l_new * i_l_new
                i_l_new = 0.0
        i_l = i_l_new

        if not (math.isfinite(i_l) and math.isfinite(v1) and math.isfinite(v2)
                and math.isfinite(q) and math.isfinite(vuc)):
            status = FAULT_NONFINITE
            fault_k = k
            break
        if v2 < 0.0 or v2 > v_bus_max:
            status = FAULT_BUS_RANGE
            fault_k = k
            break
        if q < q_lo or q > q_hi:
            status = FAULT_BATTERY
            fault_k = k
            break
        if vuc < 0.0:
            status = FAULT_ULTRACAP
            fault_k = k
            break

    if status == OK:
        # Final sample at t_end with the last commands held.
        t = n_steps * dt
        zeta = _zeta_at(n_steps - 1, high_steps, period_steps, shift_step,
                        a_hi, a_lo, b_hi, b_lo)
        voc = _ocv(q, e0, k_pol, a_exp, b_exp, cap)
        iv1_now = (voc - v1) / r_int
        iv2_now = (vuc - v2) / uc_esr
        dvdt_now = (i_l + iv2_now + zeta) / C2
        flags = 0
        if uncovered:
            flags |= FLAG_UNCOVERED
        if dcm_prev:
            flags |= FLAG_DCM
        out_f[F_T, n_logged] = t
        out_f[F_VBUS, n_logged] = v2
        out_f[F_IL, n_logged] = i_l
        out_f[F_IBATT, n_logged] = iv1_now
        out_f[F_IUC, n_logged] = iv2_now
        out_f[F_ZETA, n_logged] = zeta
        out_f[F_SOC, n_logged] = 1.0 - q / cap
        out_f[F_VUC, n_logged] = vuc
        out_f[F_LIMIT, n_logged] = limit
        out_f[F_IHESM, n_logged] = i_l + C2 * dvdt_now
        out_f[F_DVDT, n_logged] = dvdt_now
        out_f[F_VC1, n_logged] = v1
        out_f[F_REF, n_logged] = 0.0
        out_i[I_STATE, n_logged] = it_state if ctrl_kind == 1 else direction
        out_i[I_FLAGS, n_logged] = flags
        n_logged += 1

    energy[E_SRC] = e_src
    energy[E_LOAD] = e_load
    energy[E_DISS] = e_diss
    energy[E_CLAMP] = e_clamp
    energy[E_IV2_INT] = iv2_int
    return status, fault_k, n_logged


if NUMBA_ENABLED:
    _membership = _jit(_membership)
    _fuzzy_limit = _jit(_fuzzy_limit)
    _pi_step = _jit(_pi_step)
    _ocv = _jit(_ocv)
    _deriv = _jit(_deriv)
    _zeta_at = _jit(_zeta_at)
    simulate = _jit(_simulate_impl)
else:
    simulate = _simulate_impl

#: Raw interpreted loop, kept for backend benchmarking.  When numba is
#: active this still dispatches into the compiled helpers; run with
#: HESM_SIM_NO_NUMBA=1 for a fully interpreted measurement.
simulate_interpreted = _simulate_impl

"""Compiled per-step update of the vehicle table.

Vehicle state lives in two row-per-vehicle matrices, ``F`` (float64) and ``I``
(int64); the column indices below name the fields. Lanes are 0-based here
(0 = rightmost) and direction +1 means a change to the left.
"""

import math

import numpy as np
from numba import njit

from .idm import _pow, idm_accel
from .lanechange import (LEFT_SPEED_GAIN, NO_INTENT, RIGHT_KEEP_RIGHT, RIGHT_SPEED_GAIN,
                         anticipated_speed, choose_intent, gap_acceptable)

# float columns
X, V, ACC, EFF_T, STOP_DECEL, STOP_UNTIL, STOP_HOLD, COOL_UNTIL, DESIRE_TIME, CO2, DIST, SPAWN_T = range(12)
NF = 12
# int columns
ID, LANE, LC_FROM, LC_TO, LC_STEPS, LC_GRID, IS_CV, STOP_PHASE, DESIRE, TTC_STEPS, WIN_STEPS, LC_COUNT = range(12)
NI = 12

# packed parameter vectors
IDM_V0, IDM_T, IDM_S0, IDM_DELTA, IDM_A, IDM_B, IDM_LEN = range(7)
LC_EPS, LC_GAIN_L, LC_GAIN_R, LC_P_L, LC_P_R, LC_P_KR, LC_COOL, LC_BSAFE, LC_LOOK = range(9)
EM_MASS, EM_ROLL, EM_DRAG, EM_RHO, EM_IDLE, EM_GPJ, EM_G = range(7)
RD_LEN, RD_LANES, RD_DT, RD_LC_STEPS, RD_LAT_SPEED, RD_WIDTH, RD_LAT_RES, RD_GRID, RD_NGRID, RD_TTC = range(10)

FAULT_NONE = 0
FAULT_OVERLAP = 1
FAULT_NONFINITE = 2


@njit(cache=True)
def co2_rate_scalar(v, a, em):
    power = em[EM_MASS] * v * (a + em[EM_G] * em[EM_ROLL]) + 0.5 * em[EM_RHO] * em[EM_DRAG] * v ** 3
    rate = em[EM_IDLE] + em[EM_GPJ] * max(power, 0.0)
    return max(em[EM_IDLE], rate)


@njit(cache=True)
def _before(F, j, xk, k):
    # True when row j sorts strictly before position (xk, k)
    xj = F[j, X]
    return xj < xk or (xj == xk and j < k)


@njit(cache=True)
def _first_ahead(occ_l, cnt, F, xk, k):
    lo = 0
    hi = cnt
    while lo < hi:
        mid = (lo + hi) // 2
        j = occ_l[mid]
        if j == k or _before(F, j, xk, k):
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def _sort_lane(occ_l, cnt, F):
    for a in range(1, cnt):
        j = occ_l[a]
        xj = F[j, X]
        b = a - 1
        while b >= 0 and not _before(F, occ_l[b], xj, j):
            occ_l[b + 1] = occ_l[b]
            b -= 1
        occ_l[b + 1] = j


@njit(cache=True)
def build_occupancy(n, F, I, n_lanes, occ, occ_n):
    """Per-lane index lists sorted by position; vehicles mid-change occupy both lanes."""
    for l in range(n_lanes):
        occ_n[l] = 0
    for k in range(n):
        l = I[k, LANE]
        occ[l, occ_n[l]] = k
        occ_n[l] += 1
        if I[k, LC_TO] >= 0:
            other = I[k, LC_TO] if l == I[k, LC_FROM] else I[k, LC_FROM]
            occ[other, occ_n[other]] = k
            occ_n[other] += 1
    for l in range(n_lanes):
        _sort_lane(occ[l], occ_n[l], F)


@njit(cache=True)
def _insert(occ, occ_n, l, k, F):
    cnt = occ_n[l]
    p = _first_ahead(occ[l], cnt, F, F[k, X], k)
    for b in range(cnt, p, -1):
        occ[l, b] = occ[l, b - 1]
    occ[l, p] = k
    occ_n[l] = cnt + 1


@njit(cache=True)
def _grid_of(x, rd):
    g = int(math.floor(x / rd[RD_GRID]))
    ng = int(rd[RD_NGRID])
    if g < 0:
        return 0
    if g >= ng:
        return ng - 1
    return g


@njit(cache=True)
def _leader_accel(k, l, F, occ, occ_n, idm):
    cnt = occ_n[l]
    p = _first_ahead(occ[l], cnt, F, F[k, X], k)
    if p >= cnt:
        return idm[IDM_A] * (1.0 - _pow(F[k, V] / idm[IDM_V0], idm[IDM_DELTA]))
    j = occ[l, p]
    gap = F[j, X] - F[k, X] - idm[IDM_LEN]
    return idm_accel(F[k, V], gap, F[k, V] - F[j, V], idm[IDM_V0], F[k, EFF_T], idm[IDM_S0],
                     idm[IDM_DELTA], idm[IDM_A], idm[IDM_B])


@njit(cache=True)
def _lane_anticipation(k, l, F, occ, occ_n, idm, lc, ve_tab):
    cnt = occ_n[l]
    p = _first_ahead(occ[l], cnt, F, F[k, X], k)
    if p >= cnt:
        return idm[IDM_V0]
    j = occ[l, p]
    gap = F[j, X] - F[k, X] - idm[IDM_LEN]
    return anticipated_speed(True, gap, F[j, V], lc[LC_LOOK], idm[IDM_V0], ve_tab)


@njit(cache=True)
def _safe_to_enter(k, tgt, F, occ, occ_n, idm, lc):
    cnt = occ_n[tgt]
    p = _first_ahead(occ[tgt], cnt, F, F[k, X], k)
    has_l = p < cnt
    x_l = 0.0
    if has_l:
        x_l = F[occ[tgt, p], X]
    q = p - 1
    if q >= 0 and occ[tgt, q] == k:
        q -= 1
    has_f = q >= 0
    x_f = 0.0
    v_f = 0.0
    t_f = idm[IDM_T]
    if has_f:
        f = occ[tgt, q]
        x_f = F[f, X]
        v_f = F[f, V]
        t_f = F[f, EFF_T]
    return gap_acceptable(F[k, X], F[k, V], has_l, x_l, has_f, x_f, v_f, t_f, idm[IDM_LEN], idm[IDM_V0],
                          idm[IDM_S0], idm[IDM_DELTA], idm[IDM_A], idm[IDM_B], lc[LC_BSAFE])


@njit(cache=True)
def step_kernel(n, F, I, perm, hazard, idm, lc, em, rd, ve_tab, t, in_window,
                ev_buf, intent_acc, presence_acc, occ, occ_n):
    """Advance every vehicle by one simulation step.

    Returns:
        (number of executed lane changes written to ``ev_buf``, fault code, faulty row).
    """
    n_lanes = int(rd[RD_LANES])
    dt = rd[RD_DT]
    half_width = 0.5 * rd[RD_WIDTH]
    n_ev = 0

    build_occupancy(n, F, I, n_lanes, occ, occ_n)

    # (1)-(4): intents, gating, gap acceptance, lane-change initiation
    for k in range(n):
        l = I[k, LANE]
        g = _grid_of(F[k, X], rd)
        if in_window:
            presence_acc[l, g] += 1.0
        if I[k, LC_TO] >= 0 or I[k, STOP_PHASE] != 0 or t < F[k, COOL_UNTIL]:
            I[k, DESIRE] = NO_INTENT
            F[k, DESIRE_TIME] = 0.0
            continue
        has_left = l + 1 < n_lanes
        has_right = l > 0
        ant_cur = _lane_anticipation(k, l, F, occ, occ_n, idm, lc, ve_tab)
        ant_left = 0.0
        ant_right = 0.0
        if has_left:
            ant_left = _lane_anticipation(k, l + 1, F, occ, occ_n, idm, lc, ve_tab)
        if has_right:
            ant_right = _lane_anticipation(k, l - 1, F, occ, occ_n, idm, lc, ve_tab)
        code = choose_intent(has_left, has_right, ant_cur, ant_left, ant_right, lc[LC_EPS],
                             lc[LC_GAIN_L], lc[LC_GAIN_R])
        if code != I[k, DESIRE]:
            I[k, DESIRE] = code
            F[k, DESIRE_TIME] = 0.0
        if code == NO_INTENT:
            continue
        F[k, DESIRE_TIME] += dt
        if code == LEFT_SPEED_GAIN:
            persist = lc[LC_P_L]
        elif code == RIGHT_SPEED_GAIN:
            persist = lc[LC_P_R]
        else:
            persist = lc[LC_P_KR]
        if F[k, DESIRE_TIME] < persist - 1e-9:
            continue
        d = 0 if code == LEFT_SPEED_GAIN else 1
        tgt = l + 1 if d == 0 else l - 1
        if in_window:
            intent_acc[l, g, d] += 1.0
        if hazard[l, g] or hazard[tgt, g]:
            continue
        if I[k, IS_CV] != 0 and perm[l, g, d] == 0:
            continue
        if not _safe_to_enter(k, tgt, F, occ, occ_n, idm, lc):
            continue
        I[k, LC_FROM] = l
        I[k, LC_TO] = tgt
        I[k, LC_STEPS] = 0
        I[k, LC_GRID] = g
        I[k, DESIRE] = NO_INTENT
        F[k, DESIRE_TIME] = 0.0
        _insert(occ, occ_n, tgt, k, F)

    # (4) lateral progress; the lane index switches once the snapped offset reaches the lane midline
    lc_total = int(rd[RD_LC_STEPS])
    for k in range(n):
        if I[k, LC_TO] < 0:
            continue
        I[k, LC_STEPS] += 1
        offset = I[k, LC_STEPS] * dt * rd[RD_LAT_SPEED]
        snapped = math.floor(offset / rd[RD_LAT_RES] + 1e-9) * rd[RD_LAT_RES]
        if I[k, LANE] == I[k, LC_FROM] and snapped >= half_width - 1e-9:
            I[k, LANE] = I[k, LC_TO]
            ev_buf[n_ev, 0] = k
            ev_buf[n_ev, 1] = I[k, LC_FROM]
            ev_buf[n_ev, 2] = I[k, LC_TO]
            ev_buf[n_ev, 3] = I[k, LC_GRID]
            ev_buf[n_ev, 4] = I[k, IS_CV]
            n_ev += 1
            if in_window:
                I[k, LC_COUNT] += 1
        if I[k, LC_STEPS] >= lc_total:
            if I[k, LANE] != I[k, LC_TO]:
                I[k, LANE] = I[k, LC_TO]
            I[k, LC_TO] = -1
            F[k, COOL_UNTIL] = t + lc[LC_COOL]

    # (5) longitudinal accelerations against leaders in every occupied lane
    for k in range(n):
        l = I[k, LANE]
        a = _leader_accel(k, l, F, occ, occ_n, idm)
        if I[k, LC_TO] >= 0:
            other = I[k, LC_TO] if l == I[k, LC_FROM] else I[k, LC_FROM]
            a = min(a, _leader_accel(k, other, F, occ, occ_n, idm))
        phase = I[k, STOP_PHASE]
        if phase == 1:
            a = min(a, -F[k, STOP_DECEL])
        elif phase == 2:
            a = 0.0
        if F[k, V] + a * dt < 0.0:
            a = -F[k, V] / dt
        F[k, ACC] = a

    # (6) Euler update
    for k in range(n):
        v_new = F[k, V] + F[k, ACC] * dt
        if v_new < 0.0:
            v_new = 0.0
        F[k, V] = v_new
        F[k, X] += v_new * dt
        if not (math.isfinite(F[k, X]) and math.isfinite(v_new)):
            return n_ev, FAULT_NONFINITE, k
        phase = I[k, STOP_PHASE]
        if phase == 1 and v_new <= 1e-9:
            F[k, V] = 0.0
            I[k, STOP_PHASE] = 2
            F[k, STOP_UNTIL] = t + dt + F[k, STOP_HOLD]
        elif phase == 2 and t + dt >= F[k, STOP_UNTIL] - 1e-9:
            I[k, STOP_PHASE] = 0
        if in_window:
            F[k, DIST] += v_new * dt
            I[k, WIN_STEPS] += 1
            F[k, CO2] += co2_rate_scalar(v_new, F[k, ACC], em) * dt

    # (8) same-lane TTC exposure and the no-overlap invariant
    for l in range(n_lanes):
        _sort_lane(occ[l], occ_n[l], F)
    vlen = idm[IDM_LEN]
    for l in range(n_lanes):
        fol = -1
        for p in range(occ_n[l]):
            j = occ[l, p]
            if I[j, LANE] != l:
                continue
            if fol >= 0:
                gap = F[j, X] - F[fol, X] - vlen
                if gap < -1e-6:
                    return n_ev, FAULT_OVERLAP, fol
                if in_window and F[fol, V] > F[j, V]:
                    if gap / (F[fol, V] - F[j, V]) < rd[RD_TTC]:
                        I[fol, TTC_STEPS] += 1
            fol = j
    return n_ev, FAULT_NONE, -1


@njit(cache=True)
def lane_tails(n, F, I, n_lanes, tail_x, tail_v):
    """Most upstream occupant of each lane (x = +inf when the lane is empty)."""
    for l in range(n_lanes):
        tail_x[l] = np.inf
        tail_v[l] = 0.0
    for k in range(n):
        l = I[k, LANE]
        if F[k, X] < tail_x[l]:
            tail_x[l] = F[k, X]
            tail_v[l] = F[k, V]
        if I[k, LC_TO] >= 0:
            other = I[k, LC_TO] if l == I[k, LC_FROM] else I[k, LC_FROM]
            if F[k, X] < tail_x[other]:
                tail_x[other] = F[k, X]
                tail_v[other] = F[k, V]

"""Hot numeric kernels, numba-compiled with a pure-numpy fallback.

The numba path is used whenever numba imports cleanly and the environment
variable SATSEM_NO_NUMBA is unset (or "0"). Both paths execute the same
arithmetic in the same order, so results agree bit-for-bit; see
benchmarks/bench_kernels.py for a timing comparison.

Kernels here:
  * zero-order Bessel function of the first kind (series + Hankel asymptotics)
  * per-task candidate search: best (mode, steps, weights) per candidate
    satellite for one transmission task
  * exact satellite-assignment maximization per slot (bitmask DP)
"""

import math
import os

import numpy as np


def numba_disabled_by_env():
    return os.environ.get("SATSEM_NO_NUMBA", "").strip() not in ("", "0")


try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _njit = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not numba_disabled_by_env()


# ---------------------------------------------------------------------------
# Bessel J0
# ---------------------------------------------------------------------------

# Below the cutoff the alternating power series converges without damaging
# cancellation; above it the Hankel asymptotic expansion is accurate to
# ~1.3e-9 absolute (checked on [0, 50]).
_J0_CUTOFF = 12.0
_J0_TERMS = 40


def _j0_scalar(x):
    ax = abs(x)
    if ax < _J0_CUTOFF:
        q = 0.25 * ax * ax
        term = 1.0
        s = 1.0
        for k in range(1, _J0_TERMS):
            term *= -q / (k * k)
            s += term
        return s
    z = 1.0 / ax
    z2 = z * z
    p = 1.0 + z2 * (-9.0 / 128.0 + z2 * (3675.0 / 32768.0 + z2 * (-2401245.0 / 4194304.0)))
    q = z * (-0.125 + z2 * (75.0 / 1024.0 + z2 * (-59535.0 / 262144.0 + z2 * (405810405.0 / 234881024.0))))
    chi = ax - 0.25 * math.pi
    return math.sqrt(2.0 / (math.pi * ax)) * (p * math.cos(chi) - q * math.sin(chi))


def _j0_array_loops(x, out):
    for i in range(x.shape[0]):
        out[i] = _j0_scalar(x[i])
    return out


def j0_numpy(x):
    """Vectorized J0, same branch arithmetic as the scalar kernel."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    small = ax < _J0_CUTOFF

    q = 0.25 * ax * ax
    term = np.ones_like(ax)
    s = np.ones_like(ax)
    for k in range(1, _J0_TERMS):
        term = term * (-q) / (k * k)
        s = s + term

    axs = np.where(small, _J0_CUTOFF, ax)
    z = 1.0 / axs
    z2 = z * z
    p = 1.0 + z2 * (-9.0 / 128.0 + z2 * (3675.0 / 32768.0 + z2 * (-2401245.0 / 4194304.0)))
    qq = z * (-0.125 + z2 * (75.0 / 1024.0 + z2 * (-59535.0 / 262144.0 + z2 * (405810405.0 / 234881024.0))))
    chi = axs - 0.25 * math.pi
    asy = np.sqrt(2.0 / (math.pi * axs)) * (p * np.cos(chi) - qq * np.sin(chi))
    return np.where(small, s, asy)


# ---------------------------------------------------------------------------
# Per-task candidate search
# ---------------------------------------------------------------------------
#
# For one task, over every available satellite, find the (mode, steps, weight
# triple) maximizing the task's slot-reward contribution: the weighted
# efficiency score when latency/quality/compute checks pass, the failure
# reward otherwise. Mode index 0 is bit mode (no decode steps, capped
# quality); cost_tab rows for it are ignored.


def _eval_task_candidates_loops(
    avail,
    dl_rate,
    isl_rate_row,
    dl_dist_m,
    isl_dist_row_m,
    src,
    payload_bits,
    qual_tab,
    cost_tab,
    d_max,
    q_min,
    f_budget,
    q_cap,
    w_grid,
    r_fail,
    c_light,
    include_decode,
    best_val,
    best_mode,
    best_steps,
    best_w,
):
    n_sat = avail.shape[0]
    n_modes = payload_bits.shape[0]
    n_steps = qual_tab.shape[1]
    n_w = w_grid.shape[0]
    for m in range(n_sat):
        if not avail[m]:
            best_val[m] = -np.inf
            best_mode[m] = 0
            best_steps[m] = 1
            best_w[m] = 0
            continue
        # any selectable action at worst scores the failure reward
        best = r_fail
        bm = 0
        bl = 1
        bw = 0
        prop = dl_dist_m[m] / c_light
        use_isl = m != src
        if use_isl:
            prop += isl_dist_row_m[m] / c_light
        for mode in range(n_modes):
            pay = payload_bits[mode]
            if dl_rate[m] > 0.0:
                base_lat = pay / dl_rate[m] + prop
            else:
                base_lat = np.inf
            if use_isl:
                if isl_rate_row[m] > 0.0:
                    base_lat += pay / isl_rate_row[m]
                else:
                    base_lat = np.inf
            if mode == 0:
                opts = 1
            else:
                opts = n_steps
            for li in range(opts):
                if mode == 0:
                    qual = q_cap
                    cost = 0.0
                    steps = 1
                else:
                    cost = cost_tab[mode, li]
                    if cost > f_budget:
                        continue
                    qual = qual_tab[mode, li]
                    steps = li + 1
                lat = base_lat
                if include_decode:
                    lat = lat + cost / f_budget
                if lat <= d_max and qual >= q_min and cost <= f_budget:
                    nd = (d_max - lat) / d_max
                    if nd < 0.0:
                        nd = 0.0
                    elif nd > 1.0:
                        nd = 1.0
                    nq = (qual - q_min) / (q_cap - q_min)
                    if nq < 0.0:
                        nq = 0.0
                    elif nq > 1.0:
                        nq = 1.0
                    nf = (f_budget - cost) / f_budget
                    if nf < 0.0:
                        nf = 0.0
                    elif nf > 1.0:
                        nf = 1.0
                    for w in range(n_w):
                        v = w_grid[w, 0] * nd + w_grid[w, 1] * nq + w_grid[w, 2] * nf
                        if v > best:
                            best = v
                            bm = mode
                            bl = steps
                            bw = w
        best_val[m] = best
        best_mode[m] = bm
        best_steps[m] = bl
        best_w[m] = bw
    return best_val


def eval_task_candidates_numpy(
    avail,
    dl_rate,
    isl_rate_row,
    dl_dist_m,
    isl_dist_row_m,
    src,
    payload_bits,
    qual_tab,
    cost_tab,
    d_max,
    q_min,
    f_budget,
    q_cap,
    w_grid,
    r_fail,
    c_light,
    include_decode,
    best_val,
    best_mode,
    best_steps,
    best_w,
):
    n_sat = avail.shape[0]
    n_modes = payload_bits.shape[0]
    n_steps = qual_tab.shape[1]

    prop = dl_dist_m / c_light
    use_isl = np.arange(n_sat) != src
    prop = prop + np.where(use_isl, isl_dist_row_m / c_light, 0.0)

    with np.errstate(divide="ignore"):
        t_dl = np.where(dl_rate[:, None] > 0.0, payload_bits[None, :] / dl_rate[:, None], np.inf)
        t_isl = np.where(isl_rate_row[:, None] > 0.0, payload_bits[None, :] / isl_rate_row[:, None], np.inf)
    base_lat = t_dl + prop[:, None] + np.where(use_isl[:, None], t_isl, 0.0)  # (n_sat, n_modes)

    # quality / cost per (mode, step); bit mode collapses to one option
    qual = qual_tab.copy()
    cost = cost_tab.copy()
    qual[0, :] = q_cap
    cost[0, :] = 0.0
    step_ok = cost <= f_budget  # (n_modes, n_steps)
    step_ok[0, 1:] = False  # single bit-mode option, recorded as steps=1

    lat = base_lat[:, :, None] + (cost[None, :, :] / f_budget if include_decode else 0.0)
    ok = (
        (lat <= d_max)
        & (qual[None, :, :] >= q_min)
        & (cost[None, :, :] <= f_budget)
        & step_ok[None, :, :]
        & avail[:, None, None]
    )
    nd = np.clip((d_max - lat) / d_max, 0.0, 1.0)
    nq = np.clip((qual - q_min) / (q_cap - q_min), 0.0, 1.0)
    nf = np.clip((f_budget - cost) / f_budget, 0.0, 1.0)
    nd = np.where(np.isfinite(lat), nd, 0.0)

    # score over (n_sat, n_modes, n_steps, n_w), same term order as the loops
    score = (
        w_grid[None, None, None, :, 0] * nd[:, :, :, None]
        + w_grid[None, None, None, :, 1] * nq[None, :, :, None]
        + w_grid[None, None, None, :, 2] * nf[None, :, :, None]
    )
    score = np.where(ok[:, :, :, None], score, -np.inf)

    flat = score.reshape(n_sat, -1)
    arg = np.argmax(flat, axis=1)
    vmax = flat[np.arange(n_sat), arg]
    mode_i, step_i, w_i = np.unravel_index(arg, (n_modes, n_steps, w_grid.shape[0]))

    win = vmax > r_fail
    best_val[:] = np.where(avail, np.where(win, vmax, r_fail), -np.inf)
    best_mode[:] = np.where(avail & win, mode_i, 0)
    best_steps[:] = np.where(avail & win, np.where(mode_i == 0, 1, step_i + 1), 1)
    best_w[:] = np.where(avail & win, w_i, 0)
    return best_val


# ---------------------------------------------------------------------------
# Exact slot assignment (satellite exclusivity) via bitmask DP
# ---------------------------------------------------------------------------
#
# vals[k, m] = best contribution of task k when served by satellite m; feas
# marks selectable satellites. Tasks are processed in the same fixed order
# the policy samples in, and a task goes unserved (failure reward) only when
# no feasible satellite remains at its turn -- the searched space is exactly
# the set of joint actions reachable through the sequential masks.
# g[k][avail] = best total for tasks k.. given available satellite set.
# Ties prefer the lowest satellite index, identically in both paths.

_ASSIGN_MAX_SATS = 20


def _solve_assignment_loops(vals, feas, r_fail, choice):
    n_task, n_sat = vals.shape
    full = 1 << n_sat
    g_next = np.zeros(full)
    g_cur = np.empty(full)
    for k in range(n_task - 1, -1, -1):
        for avail in range(full):
            best = -np.inf
            bc = -1
            any_feas = False
            for m in range(n_sat):
                bit = 1 << m
                if (avail & bit) and feas[k, m]:
                    any_feas = True
                    cand = vals[k, m] + g_next[avail ^ bit]
                    if cand > best:
                        best = cand
                        bc = m
            if not any_feas:
                best = r_fail + g_next[avail]
            g_cur[avail] = best
            choice[k, avail] = bc
        g_next[:] = g_cur
    return g_next[full - 1]


def solve_assignment_numpy(vals, feas, r_fail, choice):
    n_task, n_sat = vals.shape
    full = 1 << n_sat
    masks = np.arange(full)
    g_next = np.zeros(full)
    for k in range(n_task - 1, -1, -1):
        g_cur = np.full(full, -np.inf)
        ch = np.full(full, -1, dtype=np.int8)
        any_feas = np.zeros(full, dtype=bool)
        for m in range(n_sat):
            if not feas[k, m]:
                continue
            bit = 1 << m
            has = (masks & bit) != 0
            any_feas |= has
            cand = vals[k, m] + g_next[masks[has] ^ bit]
            upd = cand > g_cur[has]
            idx = masks[has][upd]
            g_cur[idx] = cand[upd]
            ch[idx] = m
        forced = ~any_feas
        g_cur[forced] = r_fail + g_next[forced]
        choice[k, :] = ch
        g_next = g_cur
    return g_next[full - 1]


def backtrack_assignment(choice, n_sat):
    """Recover per-task satellite picks (-1 = unserved) from the DP table."""
    n_task = choice.shape[0]
    assign = np.full(n_task, -1, dtype=np.int64)
    avail = (1 << n_sat) - 1
    for k in range(n_task):
        m = int(choice[k, avail])
        assign[k] = m
        if m >= 0:
            avail ^= 1 << m
    return assign


# ---------------------------------------------------------------------------
# Compilation / dispatch
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    _j0_scalar_nb = _njit(cache=True)(_j0_scalar)

    @_njit(cache=True)
    def _j0_array_nb(x, out):
        for i in range(x.shape[0]):
            out[i] = _j0_scalar_nb(x[i])
        return out

    eval_task_candidates_numba = _njit(cache=True)(_eval_task_candidates_loops)
    _solve_assignment_numba = _njit(cache=True)(_solve_assignment_loops)

    def j0_numba(x):
        arr = np.asarray(x, dtype=np.float64)
        flat = np.ascontiguousarray(arr.reshape(-1))
        out = np.empty_like(flat)
        _j0_array_nb(flat, out)
        return out.reshape(arr.shape)
else:  # pragma: no cover
    j0_numba = None
    eval_task_candidates_numba = None
    _solve_assignment_numba = None


def bessel_j0_values(x):
    """J0 over an array (or scalar), via the active implementation."""
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    flat = np.ascontiguousarray(arr.reshape(-1))
    if USE_NUMBA:
        out = np.empty_like(flat)
        _j0_array_nb(flat, out)
    else:
        out = j0_numpy(flat)
    if scalar:
        return float(out[0])
    return out.reshape(arr.shape)


def eval_task_candidates(*args):
    if USE_NUMBA:
        return eval_task_candidates_numba(*args)
    return eval_task_candidates_numpy(*args)


def solve_assignment(vals, feas, r_fail):
    """Maximize the slot total over satellite assignments.

    Returns (total, assign) where assign[k] is the chosen satellite for
    task k, or -1 when the task is forced unserved at its turn.
    """
    n_task, n_sat = vals.shape
    if n_sat > _ASSIGN_MAX_SATS:
        raise ValueError(f"assignment DP supports at most {_ASSIGN_MAX_SATS} satellites, got {n_sat}")
    if n_task == 0:
        return 0.0, np.empty(0, dtype=np.int64)
    choice = np.full((n_task, 1 << n_sat), -1, dtype=np.int8)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    feas = np.ascontiguousarray(feas, dtype=np.bool_)
    if USE_NUMBA:
        total = _solve_assignment_numba(vals, feas, r_fail, choice)
    else:
        total = solve_assignment_numpy(vals, feas, r_fail, choice)
    return float(total), backtrack_assignment(choice, n_sat)


def implementations():
    """Name -> callables for both paths (used by the benchmark)."""
    impls = {
        "numpy": {
            "j0": j0_numpy,
            "eval_task_candidates": eval_task_candidates_numpy,
            "solve_assignment": solve_assignment_numpy,
        }
    }
    if HAVE_NUMBA:
        impls["numba"] = {
            "j0": j0_numba,
            "eval_task_candidates": eval_task_candidates_numba,
            "solve_assignment": _solve_assignment_numba,
        }
    return impls

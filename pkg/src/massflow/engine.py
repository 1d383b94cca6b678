"""Jitted simulation kernels.

The state of the particle system is a pair of flat arrays: block
positions (strictly increasing) and integer block counts summing to the
particle number ``n``.  A block of count ``c`` carries mass ``c/n`` and
diffuses with variance rate ``n/c``.  One Euler step proposes

    x_b  ->  x_b + (block mean of drift) * dt + sqrt(eps * dt * n / c_b) * xi_b

with independent standard normals ``xi_b`` (one draw per block, in block
order), then projects the proposals back onto the strictly increasing
cone by weighted pool-adjacent-violators: adjacent blocks whose pooled
means violate the order (ties included) are merged at their
count-weighted mean.  The projection preserves the count-weighted mean
of the proposals exactly, which is what keeps the aggregate a martingale
step by step.

Everything here is private; the public API lives in ``flow``,
``girsanov`` and friends.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = []

# drift modes for _simulate_core
DRIFT_NONE = 0
DRIFT_STATIC = 1  # drift[0, :] used for every step
DRIFT_PER_STEP = 2  # drift[j, :] used for step j


@njit(cache=True)
def _pava(prop, w, out_pos, out_cnt):
    """Weighted isotonic projection of proposals, pooling on ties.

    Minimizes sum_b w_b (z_b - prop_b)^2 over nondecreasing z by the
    stack form of pool-adjacent-violators; runs of equal fitted values
    are emitted as a single block, so the output positions are strictly
    increasing.  Returns the number of output blocks.  The comparison is
    done on cross-multiplied pooled sums (weights are positive), which
    avoids divisions inside the merge loop.
    """
    b_in = prop.shape[0]
    m = 0
    for b in range(b_in):
        s = prop[b] * w[b]
        ww = w[b]
        while m > 0 and out_pos[m - 1] * ww >= s * out_cnt[m - 1]:
            s += out_pos[m - 1]
            ww += out_cnt[m - 1]
            m -= 1
        out_pos[m] = s
        out_cnt[m] = ww
        m += 1
    for b in range(m):
        out_pos[b] = out_pos[b] / out_cnt[b]
    return m


@njit(cache=True)
def _step_with_noise(pos, cnt, nblocks, n, dt, eps, noise, out_pos, out_cnt):
    """One Euler step with externally supplied per-block noise."""
    for b in range(nblocks):
        sigma = np.sqrt(eps * dt * n / cnt[b])
        out_pos[b] = pos[b] + sigma * noise[b]
        out_cnt[b] = cnt[b]
    return _pava(out_pos[:nblocks].copy(), out_cnt[:nblocks].copy(), out_pos, out_cnt)


@njit(cache=True)
def _write_cells(pos, cnt, nblocks, row):
    off = 0
    for b in range(nblocks):
        for i in range(off, off + cnt[b]):
            row[i] = pos[b]
        off += cnt[b]


@njit(cache=True)
def _simulate_core(
    rng,
    pos,
    cnt,
    nblocks,
    n,
    dts,
    eps,
    drift,
    drift_mode,
    f_cells,
    f_mode,
    rec_y,
    rec_cnt,
    record,
    snap_idx,
    snap_y,
    snap_cnt,
    stop_when_single,
):
    """Run ``len(dts)`` Euler steps in place; the workhorse of the package.

    pos, cnt        length-n buffers, first ``nblocks`` entries valid; mutated
    dts             per-step sizes (uniform except a truncated last step)
    eps             noise scale (variance multiplier); 0 freezes the noise
    drift           per-cell drift rows, interpretation set by drift_mode
    f_cells         optional integrand on the n-grid (f_mode=1): accumulates
                    the projected squared norm  qv = sum_j dt_j ||pr_{y_j} f||^2
                    with the projection taken in the pre-step partition
    rec_y, rec_cnt  full per-step recording of cell positions / block counts
                    (rows 1..K; row 0 is the caller's job)
    snap_*          sparse recording at the strictly increasing 1-based step
                    indices ``snap_idx``
    stop_when_single  once a single block remains, stop early; only the
                    cluster-count integral keeps accumulating (callers must
                    not combine this with f/record/snapshots/msq use)

    Returns (nblocks, qv, int_n, int_msq) where int_n is the left-point
    integral of the block count and int_msq the left-point integral of
    the second moment of the mass distribution.
    """
    k_steps = dts.shape[0]
    b_now = nblocks
    stack_sum = np.empty(n)
    stack_w = np.empty(n, np.int64)
    fpre = np.empty(n + 1)
    dpre = np.empty(n + 1)
    if f_mode == 1:
        fpre[0] = 0.0
        for i in range(n):
            fpre[i + 1] = fpre[i] + f_cells[i]
    if drift_mode == DRIFT_STATIC:
        dpre[0] = 0.0
        for i in range(n):
            dpre[i + 1] = dpre[i] + drift[0, i]
    qv = 0.0
    int_n = 0.0
    int_msq = 0.0
    s_ptr = 0
    n_snap = snap_idx.shape[0]
    for j in range(k_steps):
        dt = dts[j]
        if stop_when_single and b_now == 1:
            for jj in range(j, k_steps):
                int_n += dts[jj]
            break
        if drift_mode == DRIFT_PER_STEP:
            dpre[0] = 0.0
            for i in range(n):
                dpre[i + 1] = dpre[i] + drift[j, i]
        # left-point accumulators use the pre-step state
        int_n += dt * b_now
        off = 0
        for b in range(b_now):
            int_msq += dt * cnt[b] * pos[b] * pos[b]
            if f_mode == 1:
                hi = off + cnt[b]
                mean_f = (fpre[hi] - fpre[off]) / cnt[b]
                qv += dt * cnt[b] * mean_f * mean_f
                off = hi
        # propose and merge in one pass
        m = 0
        off = 0
        for b in range(b_now):
            hi = off + cnt[b]
            prop = pos[b]
            if drift_mode != DRIFT_NONE:
                prop = prop + dt * (dpre[hi] - dpre[off]) / cnt[b]
            sigma = np.sqrt(eps * dt * n / cnt[b])
            prop = prop + sigma * rng.standard_normal()
            s = prop * cnt[b]
            ww = cnt[b]
            while m > 0 and stack_sum[m - 1] * ww >= s * stack_w[m - 1]:
                s += stack_sum[m - 1]
                ww += stack_w[m - 1]
                m -= 1
            stack_sum[m] = s
            stack_w[m] = ww
            m += 1
            off = hi
        for b in range(m):
            pos[b] = stack_sum[b] / stack_w[b]
            cnt[b] = stack_w[b]
        b_now = m
        if record:
            _write_cells(pos, cnt, b_now, rec_y[j + 1])
            rec_cnt[j + 1] = b_now
        if s_ptr < n_snap and snap_idx[s_ptr] == j + 1:
            _write_cells(pos, cnt, b_now, snap_y[s_ptr])
            snap_cnt[s_ptr] = b_now
            s_ptr += 1
    return b_now, qv / n, int_n, int_msq / n


_EMPTY_DRIFT = np.zeros((0, 0))
_EMPTY_F = np.zeros(0)
_EMPTY_Y = np.zeros((0, 0))
_EMPTY_CNT = np.zeros(0, np.int64)
_EMPTY_IDX = np.zeros(0, np.int64)


def run_steps(
    rng,
    pos,
    cnt,
    nblocks,
    n,
    dts,
    eps,
    drift=None,
    drift_mode=DRIFT_NONE,
    f_cells=None,
    rec_y=None,
    rec_cnt=None,
    snap_idx=None,
    snap_y=None,
    snap_cnt=None,
    stop_when_single=False,
):
    """Python-side wrapper assembling the kernel arguments."""
    record = rec_y is not None
    return _simulate_core(
        rng,
        pos,
        cnt,
        nblocks,
        n,
        dts,
        eps,
        drift if drift is not None else _EMPTY_DRIFT,
        drift_mode if drift is not None else DRIFT_NONE,
        f_cells if f_cells is not None else _EMPTY_F,
        1 if f_cells is not None else 0,
        rec_y if record else _EMPTY_Y,
        rec_cnt if record else _EMPTY_CNT,
        record,
        snap_idx if snap_idx is not None else _EMPTY_IDX,
        snap_y if snap_y is not None else _EMPTY_Y,
        snap_cnt if snap_cnt is not None else _EMPTY_CNT,
        stop_when_single,
    )

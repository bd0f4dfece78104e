"""Hot-loop kernels for the jump process.

Every function here is written in scalar numpy style so the same source
runs either jitted (numba, the default when importable) or as plain
Python.  The two modes execute identical arithmetic in identical order,
so trajectories agree bitwise; tests cross-check via the dispatcher's
py_func.  Set SURFKMC_DISABLE_JIT=1 to force the Python path.

Uniform variates arrive in a caller-managed buffer rather than from an
RNG object, three per event (waiting time, site, neighbor).  A kernel
that exhausts the buffer saves its state and returns NEED_UNIFORMS; the
caller refills and re-enters.  Consumption order is therefore a fixed
function of the trajectory, independent of buffer size.
"""

import math
import os

import numpy as np

NUMBA_ENABLED = False
if os.environ.get("SURFKMC_DISABLE_JIT", "") != "1":
    try:
        from numba import njit as _njit
        NUMBA_ENABLED = True
    except ImportError:
        pass

if NUMBA_ENABLED:
    def _jit(f):
        return _njit(cache=True, nogil=True)(f)
else:
    def _jit(f):
        return f

# kernel return codes
DONE = 0
NEED_UNIFORMS = 1
STALLED = 2
RATE_OVERFLOW = 3

# full tree rebuild cadence; bounds floating-point drift
REBUILD_EVERY = 1 << 20


@_jit
def pow_v(z, p):
    """V(z) = |z|^p for float z."""
    if p == 1.0:
        return abs(z)
    if p == 2.0:
        return z * z
    return abs(z) ** p


@_jit
def site_coordination(heights, nbr, d, site, p):
    """Generalized coordination number from local gradients only."""
    n = 0.0
    for i in range(d):
        gp = float(heights[nbr[site, 2 * i]] - heights[site])
        gm = float(heights[site] - heights[nbr[site, 2 * i + 1]])
        n += (pow_v(gp + 1.0, p) - pow_v(gp, p)
              + pow_v(gm - 1.0, p) - pow_v(gm, p))
    return 0.5 * n


@_jit
def site_rate(heights, nbr, d, site, K, p):
    """Total exit rate e^{-2K n(site)}."""
    return math.exp(-2.0 * K * site_coordination(heights, nbr, d, site, p))


@_jit
def tree_set(tree, P, leaf, value):
    """Write one leaf and recompute ancestor sums.

    Parents are always recomputed from their children, never adjusted by
    deltas, so the tree is an exact function of the current leaves.
    """
    i = P + leaf
    tree[i] = value
    i >>= 1
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i >>= 1


@_jit
def tree_rebuild(tree, P):
    for i in range(P - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]


@_jit
def tree_total(tree):
    return tree[1]


@_jit
def tree_sample(tree, P, n_leaves, x):
    """Leaf index of the cumulative position x in [0, root).

    Rounding can push x past the populated range; the guard walks to the
    nearest leaf with positive rate (zero-rate leaves are unreachable in
    exact arithmetic).
    """
    i = 1
    while i < P:
        left = 2 * i
        if x < tree[left]:
            i = left
        else:
            x -= tree[left]
            i = left + 1
    leaf = i - P
    if leaf >= n_leaves:
        leaf = n_leaves - 1
    if tree[P + leaf] <= 0.0:
        j = leaf
        while j > 0 and tree[P + j] <= 0.0:
            j -= 1
        if tree[P + j] <= 0.0:
            j = leaf
            while j < n_leaves - 1 and tree[P + j] <= 0.0:
                j += 1
        leaf = j
    return leaf


@_jit
def fill_rates(heights, nbr, d, K, p, tree, P, n_sites):
    """Recompute every leaf and all internal sums from the heights."""
    for s in range(n_sites):
        tree[P + s] = site_rate(heights, nbr, d, s, K, p)
    for s in range(n_sites, P):
        tree[P + s] = 0.0
    tree_rebuild(tree, P)


@_jit
def collect_rate_affected(nbr, d, source, target, stamp, stamp_val, scratch):
    """Unique sites whose coordination number can change: the two moved
    sites and their neighbors.  At most 2(2d+1) entries."""
    cnt = 0
    stamp[source] = stamp_val
    scratch[cnt] = source
    cnt += 1
    if stamp[target] != stamp_val:
        stamp[target] = stamp_val
        scratch[cnt] = target
        cnt += 1
    for k in range(2 * d):
        s = nbr[source, k]
        if stamp[s] != stamp_val:
            stamp[s] = stamp_val
            scratch[cnt] = s
            cnt += 1
        t = nbr[target, k]
        if stamp[t] != stamp_val:
            stamp[t] = stamp_val
            scratch[cnt] = t
            cnt += 1
    return cnt


@_jit
def apply_event(heights, nbr, d, K, p, tree, P,
                source, target, stamp, stamp_val, scratch):
    """Move one atom and refresh the affected rates.

    Returns the number of refreshed sites, or -1 if a refreshed rate
    overflowed to inf.
    """
    heights[source] -= 1
    heights[target] += 1
    cnt = collect_rate_affected(nbr, d, source, target, stamp, stamp_val,
                                scratch)
    for k in range(cnt):
        s = scratch[k]
        r = site_rate(heights, nbr, d, s, K, p)
        if r == math.inf:
            # roll back so the caller sees a consistent surface
            heights[source] += 1
            heights[target] -= 1
            for kk in range(k):
                ss = scratch[kk]
                tree_set(tree, P, ss,
                         site_rate(heights, nbr, d, ss, K, p))
            return -1
        tree_set(tree, P, s, r)
    return cnt


@_jit
def run_kernel(heights, nbr, d, K, p, tree, P, n_sites,
               t_end, snap_times, snap_out,
               u, state_f, state_i, stamp, scratch):
    """Advance the chain until t_end, recording pre-event snapshots.

    state_f = [tau, kahan_comp]; state_i = [event_count, since_rebuild,
    snap_idx, upos, stamp_counter].  Returns DONE, NEED_UNIFORMS,
    STALLED or RATE_OVERFLOW; on NEED_UNIFORMS all state is saved and
    the call can be resumed with a refilled buffer.
    """
    tau = state_f[0]
    comp = state_f[1]
    events = state_i[0]
    since_rebuild = state_i[1]
    snap_idx = state_i[2]
    upos = state_i[3]
    stamp_counter = state_i[4]
    n_snap = snap_times.shape[0]
    ulen = u.shape[0]
    twod = 2 * d

    while True:
        if upos + 3 > ulen:
            state_f[0] = tau
            state_f[1] = comp
            state_i[0] = events
            state_i[1] = since_rebuild
            state_i[2] = snap_idx
            state_i[3] = upos
            state_i[4] = stamp_counter
            return NEED_UNIFORMS
        total = tree[1]
        if total != total or total == math.inf:
            state_f[0] = tau
            state_i[0] = events
            return RATE_OVERFLOW
        if total <= 0.0:
            state_f[0] = tau
            state_i[0] = events
            return STALLED
        u_t = u[upos]
        u_site = u[upos + 1]
        u_nb = u[upos + 2]
        upos += 3
        dt = -math.log(1.0 - u_t) / total
        # compensated time accumulation; dt spans many decades
        y = dt - comp
        t_next = tau + y
        comp_next = (t_next - tau) - y
        if t_next > t_end:
            while snap_idx < n_snap and snap_times[snap_idx] <= t_end:
                for s in range(n_sites):
                    snap_out[snap_idx, s] = heights[s]
                snap_idx += 1
            state_f[0] = t_end
            state_f[1] = comp
            state_i[0] = events
            state_i[1] = since_rebuild
            state_i[2] = snap_idx
            state_i[3] = upos
            state_i[4] = stamp_counter
            return DONE
        while snap_idx < n_snap and snap_times[snap_idx] <= t_next:
            for s in range(n_sites):
                snap_out[snap_idx, s] = heights[s]
            snap_idx += 1
        source = tree_sample(tree, P, n_sites, u_site * total)
        j = int(u_nb * twod)
        if j >= twod:
            j = twod - 1
        target = nbr[source, j]
        stamp_counter += 1
        ok = apply_event(heights, nbr, d, K, p, tree, P,
                         source, target, stamp, stamp_counter, scratch)
        if ok < 0:
            state_f[0] = tau
            state_i[0] = events
            return RATE_OVERFLOW
        tau = t_next
        comp = comp_next
        events += 1
        since_rebuild += 1
        if since_rebuild >= REBUILD_EVERY:
            tree_rebuild(tree, P)
            since_rebuild = 0


@_jit
def init_drift_field(tree, nbr, d, P, n_sites, drift):
    """Per-site generator integrand: mean neighbor exit rate minus own.

    drift[s] = (1/2d) sum_nbr rate(b) - rate(s), the expected height
    velocity of site s under per-neighbor rates rate/2d.
    """
    twod = float(2 * d)
    for s in range(n_sites):
        acc = 0.0
        for k in range(2 * d):
            acc += tree[P + nbr[s, k]]
        drift[s] = acc / twod - tree[P + s]


@_jit
def gen_kernel(heights, nbr, d, K, p, tree, P, n_sites,
               t_end, u, state_f, state_i, stamp, scratch,
               dstamp, dscratch, drift, t_last, integral):
    """Advance the chain while accumulating the exact time integral of
    the per-site generator integrand.

    The integrand is piecewise constant between events, so each site's
    integral is summed lazily: a site is flushed only when its value is
    about to change, plus one final flush at t_end.  state arrays as in
    run_kernel.
    """
    tau = state_f[0]
    comp = state_f[1]
    events = state_i[0]
    since_rebuild = state_i[1]
    upos = state_i[3]
    stamp_counter = state_i[4]
    ulen = u.shape[0]
    twod = 2 * d
    twod_f = float(twod)

    while True:
        if upos + 3 > ulen:
            state_f[0] = tau
            state_f[1] = comp
            state_i[0] = events
            state_i[1] = since_rebuild
            state_i[3] = upos
            state_i[4] = stamp_counter
            return NEED_UNIFORMS
        total = tree[1]
        if total != total or total == math.inf:
            state_f[0] = tau
            state_i[0] = events
            return RATE_OVERFLOW
        if total <= 0.0:
            state_f[0] = tau
            state_i[0] = events
            return STALLED
        u_t = u[upos]
        u_site = u[upos + 1]
        u_nb = u[upos + 2]
        upos += 3
        dt = -math.log(1.0 - u_t) / total
        y = dt - comp
        t_next = tau + y
        comp_next = (t_next - tau) - y
        if t_next > t_end:
            for s in range(n_sites):
                integral[s] += drift[s] * (t_end - t_last[s])
                t_last[s] = t_end
            state_f[0] = t_end
            state_f[1] = comp
            state_i[0] = events
            state_i[1] = since_rebuild
            state_i[3] = upos
            state_i[4] = stamp_counter
            return DONE
        source = tree_sample(tree, P, n_sites, u_site * total)
        j = int(u_nb * twod)
        if j >= twod:
            j = twod - 1
        target = nbr[source, j]
        stamp_counter += 1
        cnt = collect_rate_affected(nbr, d, source, target, stamp,
                                    stamp_counter, scratch)
        # drift changes on the affected sites and their neighbors
        stamp_counter += 1
        dcnt = 0
        for k in range(cnt):
            s = scratch[k]
            if dstamp[s] != stamp_counter:
                dstamp[s] = stamp_counter
                dscratch[dcnt] = s
                dcnt += 1
            for kk in range(twod):
                t = nbr[s, kk]
                if dstamp[t] != stamp_counter:
                    dstamp[t] = stamp_counter
                    dscratch[dcnt] = t
                    dcnt += 1
        # flush the old integrand up to the event time
        for k in range(dcnt):
            s = dscratch[k]
            integral[s] += drift[s] * (t_next - t_last[s])
            t_last[s] = t_next
        heights[source] -= 1
        heights[target] += 1
        for k in range(cnt):
            s = scratch[k]
            r = site_rate(heights, nbr, d, s, K, p)
            if r == math.inf:
                state_f[0] = tau
                state_i[0] = events
                return RATE_OVERFLOW
            tree_set(tree, P, s, r)
        for k in range(dcnt):
            s = dscratch[k]
            acc = 0.0
            for kk in range(twod):
                acc += tree[P + nbr[s, kk]]
            drift[s] = acc / twod_f - tree[P + s]
        tau = t_next
        comp = comp_next
        events += 1
        since_rebuild += 1
        if since_rebuild >= REBUILD_EVERY:
            tree_rebuild(tree, P)
            since_rebuild = 0

"""JIT-compiled simulation kernels.

Category layout inside the kernels: indices ``0..k-1`` are opinions
``1..k`` and index ``k`` is the undecided state.  All counters are int64;
products such as ``x (n - x)`` stay below 2^62 for ``n < 2^31``.

Random numbers come from xoshiro256** seeded through splitmix64, so that a
trajectory is a pure function of one 64-bit seed.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO_M53 = 1.0 / 9007199254740992.0

# stop predicates
STOP_NONE = 0
STOP_X_GE = 1
STOP_X_LE = 2
STOP_U_GE = 3
STOP_DELTA_GE = 4
STOP_GROWTH = 5

# skip modes
SKIP_NEVER = 0
SKIP_ALWAYS = 1
SKIP_AUTO = 2

# exit status
ABSORBED = 0
HIT = 1
EXHAUSTED = 2

# snapshot columns before the optional full counts
N_SUMMARY_COLS = 8


# ---------------------------------------------------------------------------
# RNG


@njit(cache=True)
def splitmix64(x):
    z = x + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def replicate_seed(master, r):
    return splitmix64(splitmix64(np.uint64(master)) ^ np.uint64(r))


@njit(cache=True)
def rng_from_seed(seed):
    s = np.empty(4, dtype=np.uint64)
    x = np.uint64(seed)
    for i in range(4):
        s[i] = splitmix64(x)
        x = x + _GOLDEN
    return s


@njit(cache=True, inline="always")
def _rotl(x, r):
    return (x << np.uint64(r)) | (x >> np.uint64(64 - r))


@njit(cache=True, inline="always")
def next_u64(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True)
def randbelow(s, m):
    """Unbiased integer in ``[0, m)`` by rejection of the short last block."""
    mu = np.uint64(m)
    thresh = (np.uint64(0) - mu) % mu
    while True:
        x = next_u64(s)
        if x >= thresh:
            return np.int64(x % mu)


_MASK32 = np.uint64(0xFFFFFFFF)
_TWO32 = np.uint64(1 << 32)


@njit(cache=True, inline="always")
def _lemire32(x32, m, s):
    """Map a 32-bit draw to ``[0, m)`` without bias (``m < 2^32``)."""
    prod = x32 * m
    low = prod & _MASK32
    if low < m:
        thresh = (_TWO32 - m) % m
        while low < thresh:
            prod = (next_u64(s) >> np.uint64(32)) * m
            low = prod & _MASK32
    return np.int64(prod >> np.uint64(32))


@njit(cache=True, inline="always")
def randpair(s, m1, m2):
    """Two independent bounded integers from one 64-bit draw (``m < 2^32``)."""
    x = next_u64(s)
    a = _lemire32(x >> np.uint64(32), np.uint64(m1), s)
    b = _lemire32(x & _MASK32, np.uint64(m2), s)
    return a, b


@njit(cache=True)
def uniform_open0(s):
    """Float in ``(0, 1]``."""
    return (np.float64(next_u64(s) >> np.uint64(11)) + 1.0) * _TWO_M53


@njit(cache=True)
def geometric_failures(s, p):
    """Failures before the first success of a Bernoulli(p) sequence, as float."""
    if p >= 1.0:
        return 0.0
    if p <= 0.0:
        return np.inf
    return np.floor(np.log(uniform_open0(s)) / np.log1p(-p))


# ---------------------------------------------------------------------------
# Fenwick tree (1-based array, 0-based public indices)


@njit(cache=True)
def ft_build(weights):
    m = weights.shape[0]
    tree = np.zeros(m + 1, dtype=np.int64)
    for i in range(m):
        tree[i + 1] += weights[i]
        j = (i + 1) + ((i + 1) & -(i + 1))
        if j <= m:
            tree[j] += tree[i + 1]
    return tree


@njit(cache=True, inline="always")
def ft_add(tree, i, delta):
    m = tree.shape[0] - 1
    j = i + 1
    while j <= m:
        tree[j] += delta
        j += j & -j


@njit(cache=True, inline="always")
def ft_prefix(tree, i):
    """Sum of weights ``[0, i)``."""
    total = 0
    j = i
    while j > 0:
        total += tree[j]
        j -= j & -j
    return total


@njit(cache=True, inline="always")
def ft_find(tree, r):
    """Smallest index whose inclusive prefix sum exceeds ``r``.

    Returns ``(index, prefix sum before index)``.  The descent is written
    without data-dependent branches; random descents mispredict otherwise.
    """
    m = tree.shape[0] - 1
    step = 1
    while step * 2 <= m:
        step *= 2
    pos = 0
    rem = r
    while step > 0:
        nxt = pos + step
        v = tree[nxt] if nxt <= m else rem + 1
        take = v <= rem
        pos = nxt if take else pos
        rem = rem - v if take else rem
        step >>= 1
    return pos, r - rem


# ---------------------------------------------------------------------------
# shared count bookkeeping


@njit(cache=True, inline="always")
def _change(cnt, ft, wt, st, n, k, idx, d, tree):
    # st = [noop_mass, positive_categories, positive_opinions, weight_tree_valid]
    old = cnt[idx]
    new = old + d
    cnt[idx] = new
    if tree:
        ft_add(ft, idx, d)
        if st[3]:
            ft_add(wt, idx, new * (n - new) - old * (n - old))
    st[0] += new * (new - 1) - old * (old - 1)
    dpos = (1 if new > 0 else 0) - (1 if old > 0 else 0)
    st[1] += dpos
    if idx < k:
        st[2] += dpos


@njit(cache=True, inline="always")
def _apply_pair(cnt, ft, wt, st, n, k, a, b, tree):
    """Apply the interaction of categories ``a != b`` to the counts."""
    if a == k:
        _change(cnt, ft, wt, st, n, k, b, 1, tree)
        _change(cnt, ft, wt, st, n, k, k, -1, tree)
    elif b == k:
        _change(cnt, ft, wt, st, n, k, a, 1, tree)
        _change(cnt, ft, wt, st, n, k, k, -1, tree)
    else:
        _change(cnt, ft, wt, st, n, k, a, -1, tree)
        _change(cnt, ft, wt, st, n, k, b, -1, tree)
        _change(cnt, ft, wt, st, n, k, k, 2, tree)


@njit(cache=True)
def _productive_weights(cnt, n):
    """``x (n - x)`` per category: first-agent weights given a productive pair."""
    w = np.empty(cnt.shape[0], dtype=np.int64)
    for i in range(cnt.shape[0]):
        w[i] = cnt[i] * (n - cnt[i])
    return w


@njit(cache=True)
def _init_state(counts0, n, k):
    cnt = counts0.copy()
    ft = ft_build(cnt)
    st = np.zeros(4, dtype=np.int64)
    for i in range(k + 1):
        st[0] += cnt[i] * (cnt[i] - 1)
        if cnt[i] > 0:
            st[1] += 1
            if i < k:
                st[2] += 1
    wt = ft_build(_productive_weights(cnt, n))
    st[3] = 1
    return cnt, ft, wt, st


@njit(cache=True)
def _refresh_weights(wt, cnt, n, st):
    if not st[3]:
        wt[:] = ft_build(_productive_weights(cnt, n))
        st[3] = 1


@njit(cache=True, inline="always")
def _find_category(cnt, ft, r, tree):
    """Category of virtual agent position ``r``."""
    if tree:
        a, _ = ft_find(ft, r)
        return a
    a = 0
    while r >= cnt[a]:
        r -= cnt[a]
        a += 1
    return a


@njit(cache=True, inline="always")
def _sample_pair(s, ft, cnt, n, tree):
    """Ordered pair of agents without replacement; returns their categories.

    Agents are positions ``0..n-1`` of a virtual array sorted by category; the
    second position skips over the first.
    """
    r, r2 = randpair(s, n, n - 1)
    r2 += 1 if r2 >= r else 0
    return _find_category(cnt, ft, r, tree), _find_category(cnt, ft, r2, tree)


@njit(cache=True, inline="always")
def _sample_productive_pair(s, ft, wt, cnt, n, productive_mass, tree):
    """Ordered pair conditioned on the two agents having different states."""
    r = randbelow(s, productive_mass)
    if tree:
        a, _ = ft_find(wt, r)
        before = ft_prefix(ft, a)
    else:
        a = 0
        before = 0
        while True:
            w = cnt[a] * (n - cnt[a])
            if r < w:
                break
            r -= w
            before += cnt[a]
            a += 1
    r2 = randbelow(s, n - cnt[a])
    r2 += cnt[a] if r2 >= before else 0
    return a, _find_category(cnt, ft, r2, tree)


# ---------------------------------------------------------------------------
# snapshots


@njit(cache=True)
def _write_row(rows, m, t, cnt, k, full):
    if m == rows.shape[0]:
        bigger = np.empty((rows.shape[0] * 2, rows.shape[1]), dtype=np.int64)
        bigger[:m] = rows[:m]
        rows = bigger
    xmax = cnt[0]
    xmin = cnt[0]
    arg = 0
    rest_min = cnt[1] if k > 1 else cnt[0]
    for i in range(k):
        if cnt[i] > xmax:
            xmax = cnt[i]
            arg = i
        if cnt[i] < xmin:
            xmin = cnt[i]
        if i >= 1 and cnt[i] < rest_min:
            rest_min = cnt[i]
    rows[m, 0] = t
    rows[m, 1] = cnt[k]
    rows[m, 2] = cnt[0]
    rows[m, 3] = xmax
    rows[m, 4] = xmin
    rows[m, 5] = arg + 1
    rows[m, 6] = xmax - xmin
    rows[m, 7] = cnt[0] - rest_min if k > 1 else 0
    if full:
        for i in range(k):
            rows[m, N_SUMMARY_COLS + i] = cnt[i]
    return rows


@njit(cache=True)
def _exact_delta(cnt, k):
    hi = cnt[0]
    lo = cnt[0]
    for i in range(1, k):
        if cnt[i] > hi:
            hi = cnt[i]
        if cnt[i] < lo:
            lo = cnt[i]
    return hi, lo


# ---------------------------------------------------------------------------
# trajectory kernels

# reasons for _advance to return
_REACHED = 0
_ABSORB = 1
_HIT = 2

# per-trajectory observation slots
_P_EXTINCT = 0
_P_STAGE = 1
_P_STAGE_TIME = 2
_P_MAX = 3
_P_MIN = 4


@njit(cache=True, inline="always")
def _advance(s, cnt, ft, wt, st, obs, n, k, t, t_stop, skip_mode, tree,
             stop_kind, stop_idx, stop_a, stop_b):
    """Count-level steps from ``t`` until ``t_stop``, absorption or a hit.

    Returns ``(t, reason)``.  A skip that would overshoot ``t_stop`` is cut
    there; the geometric law is memoryless, so redrawing later is exact.
    ``tree`` must be a compile-time constant (see the wrappers below).
    """
    nn1 = n * (n - 1)
    while t < t_stop:
        productive = nn1 - st[0]
        if skip_mode == SKIP_ALWAYS or (skip_mode == SKIP_AUTO and 2 * st[0] > nn1):
            if tree:
                _refresh_weights(wt, cnt, n, st)
            g = geometric_failures(s, productive / nn1)
            if g >= t_stop - t:
                return t_stop, _REACHED
            t += np.int64(g) + 1
            a, b = _sample_productive_pair(s, ft, wt, cnt, n, productive, tree)
        else:
            st[3] = 0
            t += 1
            a, b = _sample_pair(s, ft, cnt, n, tree)
            if a == b:
                continue
        _apply_pair(cnt, ft, wt, st, n, k, a, b, tree)
        if st[2] <= 1 and obs[_P_EXTINCT] < 0:
            obs[_P_EXTINCT] = t
        if stop_kind != STOP_NONE and _track(cnt, k, t, obs, stop_kind, stop_idx, stop_a, stop_b, a, b):
            return t, _HIT
        if st[1] == 1:
            return t, _ABSORB
    return t, _REACHED


@njit(cache=True)
def _advance_linear(s, cnt, ft, wt, st, obs, n, k, t, t_stop, skip_mode,
                    stop_kind, stop_idx, stop_a, stop_b):
    return _advance(s, cnt, ft, wt, st, obs, n, k, t, t_stop, skip_mode, False,
                    stop_kind, stop_idx, stop_a, stop_b)


@njit(cache=True)
def _advance_tree(s, cnt, ft, wt, st, obs, n, k, t, t_stop, skip_mode,
                  stop_kind, stop_idx, stop_a, stop_b):
    return _advance(s, cnt, ft, wt, st, obs, n, k, t, t_stop, skip_mode, True,
                    stop_kind, stop_idx, stop_a, stop_b)


@njit(cache=True)
def _advance_agents(s, states, cnt, ft, wt, st, obs, n, k, t, t_stop, tree,
                    stop_kind, stop_idx, stop_a, stop_b):
    """Agent-level counterpart of :func:`_advance` on an explicit state array."""
    while t < t_stop:
        t += 1
        i, j = randpair(s, n, n - 1)
        j += 1 if j >= i else 0
        a = states[i]
        b = states[j]
        if a == b:
            continue
        if a == k:
            states[i] = b
        elif b == k:
            states[j] = a
        else:
            states[i] = k
            states[j] = k
        _apply_pair(cnt, ft, wt, st, n, k, a, b, tree)
        if st[2] <= 1 and obs[_P_EXTINCT] < 0:
            obs[_P_EXTINCT] = t
        if stop_kind != STOP_NONE and _track(cnt, k, t, obs, stop_kind, stop_idx, stop_a, stop_b, a, b):
            return t, _HIT
        if st[1] == 1:
            return t, _ABSORB
    return t, _REACHED


@njit(cache=True)
def _track(cnt, k, t, obs, stop_kind, stop_idx, stop_a, stop_b, a, b):
    """Predicate check after the event between categories ``a`` and ``b``."""
    if stop_kind == STOP_DELTA_GE:
        # stale bounds: true max <= obs max and true min >= obs min
        for c in (a, b):
            if c < k:
                if cnt[c] > obs[_P_MAX]:
                    obs[_P_MAX] = cnt[c]
                if cnt[c] < obs[_P_MIN]:
                    obs[_P_MIN] = cnt[c]
        if obs[_P_MAX] - obs[_P_MIN] < stop_a:
            return False
    return _check_stop(cnt, k, t, obs, stop_kind, stop_idx, stop_a, stop_b)


@njit(cache=True)
def _check_stop(cnt, k, t, obs, stop_kind, stop_idx, stop_a, stop_b):
    if stop_kind == STOP_X_GE:
        return cnt[stop_idx] >= stop_a
    if stop_kind == STOP_X_LE:
        return cnt[stop_idx] <= stop_a
    if stop_kind == STOP_U_GE:
        return cnt[k] >= stop_a
    if stop_kind == STOP_DELTA_GE:
        hi, lo = _exact_delta(cnt, k)
        obs[_P_MAX] = hi
        obs[_P_MIN] = lo
        return hi - lo >= stop_a
    if stop_kind == STOP_GROWTH:
        if obs[_P_STAGE] == 0 and cnt[stop_idx] <= stop_a:
            obs[_P_STAGE] = 1
            obs[_P_STAGE_TIME] = t
        return obs[_P_STAGE] == 1 and cnt[stop_idx] >= stop_b
    return False


@njit(cache=True)
def simulate(counts0, n, k, seed, budget, stride, skip_mode, stop_on_absorbing,
             stop_kind, stop_idx, stop_a, stop_b, record, full, agent_level, tree):
    """Run one trajectory.

    Returns ``(t_end, status, hit_time, stage_time, extinction_time,
    absorb_time, rows, final_counts)``; unset times are -1.  Snapshot rows
    are taken at multiples of ``stride`` and once more at ``t_end``.
    """
    s = rng_from_seed(seed)
    cnt, ft, wt, st = _init_state(counts0, n, k)

    ncols = N_SUMMARY_COLS + (k if full else 0)
    rows = np.empty((16 if record else 1, ncols), dtype=np.int64)
    m = 0

    states = np.empty(n if agent_level else 0, dtype=np.int64)
    if agent_level:
        pos = 0
        for c in range(k + 1):
            for _ in range(cnt[c]):
                states[pos] = c
                pos += 1

    obs = np.full(5, -1, dtype=np.int64)
    obs[_P_STAGE] = 0
    hi, lo = _exact_delta(cnt, k)
    obs[_P_MAX] = hi
    obs[_P_MIN] = lo

    t = 0
    hit_time = -1
    absorb_time = -1
    if st[2] <= 1:
        obs[_P_EXTINCT] = 0
    if stop_kind != STOP_NONE and _check_stop(cnt, k, 0, obs, stop_kind, stop_idx, stop_a, stop_b):
        reason = _HIT
    elif st[1] == 1:
        reason = _ABSORB
    else:
        reason = _REACHED

    next_snap = 0
    while True:
        if record:
            while next_snap <= t:
                rows = _write_row(rows, m, next_snap, cnt, k, full)
                m += 1
                next_snap += stride
        if reason == _HIT:
            hit_time = t
            status = HIT
            break
        if reason == _ABSORB:
            absorb_time = t
            if stop_on_absorbing:
                status = ABSORBED
                break
            # frozen from here on: only the clock moves
            if record:
                while next_snap <= budget:
                    rows = _write_row(rows, m, next_snap, cnt, k, full)
                    m += 1
                    next_snap += stride
            t = budget
            status = EXHAUSTED
            break
        if t >= budget:
            status = EXHAUSTED
            break
        t_stop = budget
        if record and next_snap < budget:
            t_stop = next_snap
        if agent_level:
            t, reason = _advance_agents(s, states, cnt, ft, wt, st, obs, n, k, t, t_stop, tree,
                                        stop_kind, stop_idx, stop_a, stop_b)
        elif tree:
            t, reason = _advance_tree(s, cnt, ft, wt, st, obs, n, k, t, t_stop, skip_mode,
                                      stop_kind, stop_idx, stop_a, stop_b)
        else:
            t, reason = _advance_linear(s, cnt, ft, wt, st, obs, n, k, t, t_stop, skip_mode,
                                        stop_kind, stop_idx, stop_a, stop_b)

    if record and (m == 0 or rows[m - 1, 0] < t):
        rows = _write_row(rows, m, t, cnt, k, full)
        m += 1
    return t, status, hit_time, obs[_P_STAGE_TIME], obs[_P_EXTINCT], absorb_time, rows[:m], cnt


@njit(cache=True)
def run_batch(counts0, n, k, master, rep_start, reps, budget, skip_mode, agent_level, tree):
    """Absorption times and outcomes for replicates ``rep_start..rep_start+reps-1``.

    ``outcome`` is the winning opinion (1-based), 0 for all-undecided and -1 when
    the budget ran out (time is then -1 too).
    """
    times = np.empty(reps, dtype=np.int64)
    outcome = np.empty(reps, dtype=np.int64)
    for r in range(reps):
        seed = replicate_seed(master, rep_start + r)
        res = simulate(counts0, n, k, seed, budget, 1, skip_mode, True,
                       STOP_NONE, 0, 0, 0, False, False, agent_level, tree)
        t, status, cnt = res[0], res[1], res[7]
        if status == ABSORBED:
            times[r] = t
            outcome[r] = 0
            for i in range(k):
                if cnt[i] == n:
                    outcome[r] = i + 1
        else:
            times[r] = -1
            outcome[r] = -1
    return times, outcome


@njit(cache=True)
def one_step_histogram(counts0, n, k, seed, samples, tree):
    """Category pairs (first agent, second agent) of ``samples`` single steps."""
    s = rng_from_seed(seed)
    cnt, ft, wt, st = _init_state(counts0, n, k)
    hist = np.zeros((k + 1, k + 1), dtype=np.int64)
    for _ in range(samples):
        a, b = _sample_pair(s, ft, cnt, n, tree)
        hist[a, b] += 1
    return hist


@njit(cache=True)
def productive_histogram(counts0, n, k, seed, samples, tree):
    """Skip lengths and category pairs of ``samples`` skip-path draws."""
    s = rng_from_seed(seed)
    cnt, ft, wt, st = _init_state(counts0, n, k)
    nn1 = n * (n - 1)
    productive = nn1 - st[0]
    hist = np.zeros((k + 1, k + 1), dtype=np.int64)
    skips = np.empty(samples, dtype=np.float64)
    for r in range(samples):
        skips[r] = geometric_failures(s, productive / nn1)
        a, b = _sample_productive_pair(s, ft, wt, cnt, n, productive, tree)
        hist[a, b] += 1
    return skips, hist

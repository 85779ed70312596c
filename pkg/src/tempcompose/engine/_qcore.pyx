# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled episode kernel: line-for-line twin of qcore_py.

Same SplitMix64 streams, same choice order, same IEEE arithmetic; results are
bit-identical to the pure-Python lane.  See qcore_py for the algorithm notes.
"""

import numpy as np

from libc.math cimport INFINITY

ctypedef unsigned long long u64
ctypedef long long i64

cdef u64 GOLDEN = 0x9E3779B97F4A7C15ULL
cdef u64 MIX1 = 0xBF58476D1CE4E5B9ULL
cdef u64 MIX2 = 0x94D049BB133111EBULL
cdef double INV53 = 1.0 / 9007199254740992.0
cdef int CONVERGENCE_PATIENCE = 5  # consecutive quiet episodes before convergence

cdef inline u64 _mix(u64 x) nogil:
    x ^= x >> 30
    x = x * MIX1
    x ^= x >> 27
    x = x * MIX2
    return x ^ (x >> 31)

cdef struct Rng:
    u64 state

cdef inline u64 rng_next(Rng* r) nogil:
    r.state = r.state + GOLDEN
    return _mix(r.state)

cdef inline double rng_double(Rng* r) nogil:
    return <double>(rng_next(r) >> 11) * INV53

cdef inline u64 rng_below(Rng* r, u64 n) nogil:
    return rng_next(r) % n


def episode_seed(seed, ep):
    """Python-visible for parity tests."""
    cdef u64 s = <u64>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef u64 e = <u64>ep
    return _mix(s + (e + 1) * GOLDEN)


cdef inline i64 _bsearch(u64[::1] masks, i64 lo, i64 n, u64 value) nogil:
    cdef i64 a = lo
    cdef i64 b = lo + n - 1
    cdef i64 mid
    while a <= b:
        mid = (a + b) >> 1
        if masks[mid] == value:
            return mid - lo
        if masks[mid] < value:
            a = mid + 1
        else:
            b = mid - 1
    return -1


cdef bint _prospective(u64[::1] masks, i64[::1] offsets, int[::1] n_actions,
                       u64[::1] cands, int m, int interval,
                       u64 accepted, u64 amask) nogil:
    cdef u64 fresh = amask & ~accepted
    if fresh == 0:
        return True
    cdef u64 after = accepted | amask
    cdef int t
    for t in range(m):
        if t != interval and (fresh & cands[t]) != 0:
            if _bsearch(masks, offsets[t], n_actions[t], after & cands[t]) < 0:
                return False
    return True


cdef void _rescan(double[::1] q, double* state_best, i64* best_entry, int s, int o,
                  int[::1] n_actions, i64[::1] offsets, i64 stride, int orders) nogil:
    cdef double best_v = -INFINITY
    cdef i64 best_i = offsets[s] * stride + o
    cdef int j
    cdef i64 idx
    cdef double v
    for j in range(n_actions[s]):
        idx = (offsets[s] + j) * stride + o
        v = q[idx]
        if v > best_v:
            best_v = v
            best_i = idx
    state_best[s * orders + o] = best_v
    best_entry[s * orders + o] = best_i


cdef inline void _refresh(double[::1] q, double* state_best, i64* best_entry, int s, int o,
                          i64 gid, double old, double new,
                          int[::1] n_actions, i64[::1] offsets, i64 stride, int orders) nogil:
    cdef i64 slot = s * orders + o
    if new > state_best[slot]:
        state_best[slot] = new
        best_entry[slot] = gid
    elif gid == best_entry[slot] and new < old:
        _rescan(q, state_best, best_entry, s, o, n_actions, offsets, stride, orders)


cdef i64 _choose_action(Rng* rng, int s, int o, double explore,
                        u64 accepted, u64 rejected, bint on_policy, double mu,
                        int[::1] n_actions, i64[::1] offsets, u64[::1] masks,
                        double[::1] rewards,
                        u64[::1] cands, double[::1] q, i64 stride, int orders, int m,
                        int[::1] past_states, u64[::1] past_masks,
                        unsigned char[::1] excluded, int[::1] legal) except -2:
    cdef int n = n_actions[s]
    cdef u64 committed = (accepted & cands[s]) if on_policy else 0
    cdef double u = rng_double(rng)
    cdef bint want_past = u < mu
    cdef bint want_greedy = (not want_past) and u < mu + (1.0 - mu) * (1.0 - explore)
    cdef u64 cand_mask, amask
    cdef i64 j, best_j, fb, qbase
    cdef double v, best_v, rj, best_r
    cdef int k, count, i
    cdef int ps
    cdef i64 o_off = o if stride > 1 else 0

    if want_past:
        ps = past_states[o] if o < past_states.shape[0] else -1
        if ps == s:
            cand_mask = ((past_masks[o] | committed) & ~rejected) & cands[s]
            j = _bsearch(masks, offsets[s], n, cand_mask)
            if j >= 0 and (not on_policy or _prospective(masks, offsets, n_actions, cands, m, s, accepted, cand_mask)):
                return j
        want_greedy = True

    for i in range(n):
        excluded[i] = 0

    if want_greedy:
        while True:
            best_j = -1
            best_v = -INFINITY
            best_r = -INFINITY
            for j in range(n):
                if excluded[j]:
                    continue
                amask = masks[offsets[s] + j]
                if on_policy:
                    if amask & rejected:
                        continue
                    if (amask & committed) != committed:
                        continue
                v = q[(offsets[s] + j) * stride + o_off]
                rj = rewards[offsets[s] + j]
                if v > best_v or (v == best_v and rj > best_r):
                    best_v = v
                    best_r = rj
                    best_j = j
            if best_j < 0:
                fb = _bsearch(masks, offsets[s], n, committed)
                if fb < 0:
                    raise RuntimeError("committed aggregate lost feasibility")
                return fb
            if on_policy and not _prospective(masks, offsets, n_actions, cands, m, s, accepted, masks[offsets[s] + best_j]):
                excluded[best_j] = 1
                continue
            return best_j

    count = 0
    for j in range(n):
        amask = masks[offsets[s] + j]
        if on_policy:
            if amask & rejected:
                continue
            if (amask & committed) != committed:
                continue
        legal[count] = <int>j
        count += 1
    while count > 0:
        k = <int>rng_below(rng, <u64>count)
        j = legal[k]
        if on_policy and not _prospective(masks, offsets, n_actions, cands, m, s, accepted, masks[offsets[s] + j]):
            for i in range(k, count - 1):  # order-preserving removal
                legal[i] = legal[i + 1]
            count -= 1
            continue
        return j
    fb = _bsearch(masks, offsets[s], n, committed)
    if fb < 0:
        raise RuntimeError("committed aggregate lost feasibility")
    return fb


cdef double _legal_slot_max(int t, int slot, u64 accepted, u64 rejected,
                            int[::1] n_actions, i64[::1] offsets, u64[::1] masks,
                            u64[::1] cands, double[::1] q, i64 stride) nogil:
    cdef u64 committed = accepted & cands[t]
    cdef double best = -INFINITY
    cdef i64 base = offsets[t]
    cdef int j
    cdef u64 amask
    cdef double v
    for j in range(n_actions[t]):
        amask = masks[base + j]
        if amask & rejected:
            continue
        if (amask & committed) != committed:
            continue
        v = q[(base + j) * stride + slot]
        if v > best:
            best = v
    return best


cdef int _choose_state(Rng* rng, int o_next, double explore, u64 visited,
                       u64 accepted, u64 rejected,
                       bint on_policy, double mu, int m, int orders, bint three_d,
                       double* state_best, int[::1] past_states, int[::1] pool,
                       int[::1] n_actions, i64[::1] offsets, u64[::1] masks,
                       u64[::1] cands, double[::1] q, i64 stride) except -2:
    cdef int slot = o_next if three_d else 0
    cdef double u = rng_double(rng)
    cdef bint want_past = u < mu
    cdef bint want_greedy = (not want_past) and u < mu + (1.0 - mu) * (1.0 - explore)
    cdef int ps, t, best_t, count
    cdef double best_v, v

    if want_past:
        ps = past_states[o_next] if o_next < past_states.shape[0] else -1
        if ps >= 0 and (not on_policy or not ((visited >> ps) & 1)):
            return ps
        want_greedy = True
    if want_greedy:
        best_t = -1
        best_v = -INFINITY
        for t in range(m):
            if on_policy and ((visited >> t) & 1):
                continue
            if on_policy:
                v = _legal_slot_max(t, slot, accepted, rejected, n_actions,
                                    offsets, masks, cands, q, stride)
            else:
                v = state_best[t * orders + slot]
            if v > best_v:
                best_v = v
                best_t = t
        return best_t
    count = 0
    for t in range(m):
        if on_policy and ((visited >> t) & 1):
            continue
        pool[count] = t
        count += 1
    return pool[<int>rng_below(rng, <u64>count)]


def run_episodes(int mode, int m,
                 int[::1] n_actions, i64[::1] offsets, u64[::1] masks,
                 double[::1] rewards, u64[::1] candidates,
                 double[::1] q, i64[::1] visits,
                 double alpha, double gamma, double eps_start, double eps_end,
                 long episodes, double tol, object seed, double mu,
                 int[::1] past_states, u64[::1] past_masks, trace):
    """Run up to `episodes` episodes; returns (episodes_run, converged)."""
    cdef bint three_d = mode >= 2
    cdef bint on_policy = mode == 3
    cdef i64 stride = m if three_d else 1
    cdef int orders = m if three_d else 1
    cdef u64 seed64 = <u64>(seed & 0xFFFFFFFFFFFFFFFF)

    cdef int max_n = 1
    cdef int s_i
    for s_i in range(m):
        if n_actions[s_i] > max_n:
            max_n = n_actions[s_i]

    sb_arr = np.zeros(m * orders, dtype=np.float64)
    be_arr = np.zeros(m * orders, dtype=np.int64)
    ex_arr = np.zeros(max_n, dtype=np.uint8)
    lg_arr = np.zeros(max_n, dtype=np.int32)
    pool_arr = np.zeros(m, dtype=np.int32)
    cdef double[::1] sb = sb_arr
    cdef i64[::1] be = be_arr
    cdef unsigned char[::1] excluded = ex_arr
    cdef int[::1] legal = lg_arr
    cdef int[::1] pool = pool_arr

    cdef double* state_best = &sb[0]
    cdef i64* best_entry = &be[0]
    cdef int o_i
    for s_i in range(m):
        for o_i in range(orders):
            _rescan(q, state_best, best_entry, s_i, o_i, n_actions, offsets, stride, orders)

    cdef Rng rng
    cdef long ep
    cdef int episodes_run = 0
    cdef bint converged = False
    cdef int quiet = 0
    cdef bint record = trace is not None
    cdef double frac, explore, r, target, old, new, dq, max_dq, nxt, u0
    cdef int s, s_next, step, o
    cdef i64 a, a_next, j, gid
    cdef u64 accepted, rejected, visited, amask

    for ep in range(episodes):
        if episodes > 1:
            frac = <double>ep / <double>(episodes - 1)
        else:
            frac = 1.0
        explore = eps_start + (eps_end - eps_start) * frac
        rng.state = _mix(seed64 + (<u64>ep + 1) * GOLDEN)
        accepted = 0
        rejected = 0
        visited = 0
        max_dq = 0.0
        if three_d:
            # the stored policy also dictates where an episode begins
            u0 = rng_double(&rng)
            if u0 < mu and past_states.shape[0] > 0 and past_states[0] >= 0:
                s = past_states[0]
            else:
                s = <int>rng_below(&rng, <u64>m)
        else:
            s = <int>rng_below(&rng, <u64>m)
        if mode <= 1:
            a = -1
            if mode == 1:
                a = _choose_action(&rng, s, 0, explore, 0, 0, False, mu,
                                   n_actions, offsets, masks, rewards, candidates, q,
                                   stride, orders, m, past_states, past_masks,
                                   excluded, legal)
            for step in range(m):
                if mode == 0:
                    a = _choose_action(&rng, s, step, explore, 0, 0, False, mu,
                                       n_actions, offsets, masks, rewards, candidates, q,
                                       stride, orders, m, past_states, past_masks,
                                       excluded, legal)
                gid = offsets[s] + a
                r = rewards[gid]
                s_next = _choose_state(&rng, step, explore, 0, 0, 0, False, mu, m, orders,
                                       three_d, state_best, past_states, pool,
                                       n_actions, offsets, masks, candidates, q, stride)
                if mode == 1:
                    a_next = _choose_action(&rng, s_next, step, explore, 0, 0, False, mu,
                                            n_actions, offsets, masks, rewards, candidates, q,
                                            stride, orders, m, past_states, past_masks,
                                            excluded, legal)
                    target = r + gamma * q[offsets[s_next] + a_next]
                else:
                    a_next = -1
                    target = r + gamma * state_best[s_next]
                old = q[gid]
                new = (1.0 - alpha) * old + alpha * target
                q[gid] = new
                visits[gid] += 1
                dq = new - old
                if dq < 0:
                    dq = -dq
                if dq > max_dq:
                    max_dq = dq
                _refresh(q, state_best, best_entry, s, 0, gid, old, new,
                         n_actions, offsets, stride, orders)
                if record:
                    trace.append((ep, step, s, <int>a, r))
                s = s_next
                if mode == 1:
                    a = a_next
        else:
            for o in range(m):
                j = _choose_action(&rng, s, o, explore, accepted, rejected,
                                   on_policy, mu, n_actions, offsets, masks, rewards,
                                   candidates, q, stride, orders, m,
                                   past_states, past_masks, excluded, legal)
                gid = (offsets[s] + j) * stride + o
                r = rewards[offsets[s] + j]
                if on_policy:
                    amask = masks[offsets[s] + j]
                    accepted |= amask
                    rejected |= candidates[s] & ~amask & ~accepted
                    visited |= (<u64>1) << s
                s_next = -1
                if o < m - 1:
                    if on_policy:
                        s_next = _choose_state(&rng, o + 1, explore, visited,
                                               accepted, rejected,
                                               on_policy, mu, m, orders, three_d,
                                               state_best, past_states, pool,
                                               n_actions, offsets, masks, candidates, q, stride)
                    else:
                        # unrestricted exploration: any segment may come next
                        s_next = <int>rng_below(&rng, <u64>m)
                if s_next < 0:
                    target = r
                elif on_policy:
                    # pruned pairs are not candidate transitions: bootstrap from
                    # the best action still legal at the next state
                    nxt = _legal_slot_max(s_next, o + 1, accepted, rejected,
                                          n_actions, offsets, masks, candidates,
                                          q, stride)
                    target = r + gamma * (nxt if nxt > 0.0 else 0.0)
                else:
                    target = r + gamma * state_best[s_next * orders + o + 1]
                old = q[gid]
                new = (1.0 - alpha) * old + alpha * target
                q[gid] = new
                visits[gid] += 1
                dq = new - old
                if dq < 0:
                    dq = -dq
                if dq > max_dq:
                    max_dq = dq
                _refresh(q, state_best, best_entry, s, o, gid, old, new,
                         n_actions, offsets, stride, orders)
                if record:
                    trace.append((ep, o, s, <int>j, r))
                if s_next >= 0:
                    s = s_next
        episodes_run = <int>ep + 1
        quiet = quiet + 1 if max_dq < tol else 0
        if quiet >= CONVERGENCE_PATIENCE:
            converged = True
            break
    return episodes_run, converged

"""Pure-Python episode kernel (reference lane).

This module defines the exact semantics of the learning loop; the Cython lane
is a line-for-line translation.  Every stochastic choice draws from a
SplitMix64 stream reseeded per episode, so runs are reproducible bit-for-bit
across lanes and machines.

Modes
    0  q2d      flat Q[state, action], off-policy bootstrap (max over next state)
    1  sarsa    flat Q[state, action], bootstrap from the action actually chosen
    2  q3d_off  Q[state, action, order], unrestricted exploration
    3  q3d_on   Q[state, action, order], each state visited once per episode,
                actions touching rejected requests pruned, commitments kept

For 3-D modes the flat q/visits arrays are laid out q[(offset[s]+j)*m + o].
A past policy (state and action mask per order) biases exploration with
probability mu; with mu = 0 the loop is plain epsilon-greedy.
"""

from __future__ import annotations

M64 = (1 << 64) - 1
CONVERGENCE_PATIENCE = 5  # consecutive quiet episodes before declaring convergence
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def _mix(x: int) -> int:
    x &= M64
    x ^= x >> 30
    x = (x * _MIX1) & M64
    x ^= x >> 27
    x = (x * _MIX2) & M64
    return x ^ (x >> 31)


class SplitMix:
    """SplitMix64 stream; the Cython lane implements the identical sequence."""

    __slots__ = ("state",)

    def __init__(self, state: int):
        self.state = state & M64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & M64
        return _mix(self.state)

    def next_double(self) -> float:
        return (self.next_u64() >> 11) * _INV53

    def below(self, n: int) -> int:
        return self.next_u64() % n


def episode_seed(seed: int, ep: int) -> int:
    """Independent per-episode stream seed (keeps modes draw-aligned)."""
    return _mix((seed + (ep + 1) * _GOLDEN) & M64)


def run_episodes(
    mode,
    m,
    n_actions,
    offsets,
    masks,
    rewards,
    candidates,
    q,
    visits,
    alpha,
    gamma,
    eps_start,
    eps_end,
    episodes,
    tol,
    seed,
    mu,
    past_states,
    past_masks,
    trace,
):
    """Run up to `episodes` episodes; returns (episodes_run, converged)."""
    three_d = mode >= 2
    on_policy = mode == 3
    n_actions = [int(x) for x in n_actions]
    offsets = [int(x) for x in offsets]
    masks_l = [int(x) for x in masks]
    rewards_l = [float(x) for x in rewards]
    cands = [int(x) for x in candidates]
    past_states_l = [int(x) for x in past_states]
    past_masks_l = [int(x) for x in past_masks]
    q_arr, visits_arr = q, visits
    q = [float(x) for x in q_arr]  # plain lists: same IEEE doubles, faster loop
    visits = [int(x) for x in visits_arr]

    # mask -> row position per interval, for commitment and prospective checks
    position = [
        {masks_l[offsets[s] + j]: j for j in range(n_actions[s])} for s in range(m)
    ]

    stride = m if three_d else 1
    orders = m if three_d else 1

    def flat(s: int, j: int, o: int) -> int:
        return (offsets[s] + j) * stride + (o if three_d else 0)

    # running per-(state, order) action maxima: bootstrap targets and greedy
    # next-state choices read max_a Q[s, a, o]
    state_best = [0.0] * (m * orders)
    best_entry = [0] * (m * orders)
    for s in range(m):
        for o in range(orders):
            _rescan(q, state_best, best_entry, s, o, n_actions, offsets, stride, orders)

    def prospective_ok(accepted: int, interval: int, amask: int) -> bool:
        new = amask & ~accepted
        if new == 0:
            return True
        after = accepted | amask
        for t in range(m):
            if t != interval and (new & cands[t]) and (after & cands[t]) not in position[t]:
                return False
        return True

    def choose_action(rng, s, o, explore, accepted, rejected):
        n = n_actions[s]
        committed = accepted & cands[s] if on_policy else 0
        u = rng.next_double()
        want_past = u < mu
        want_greedy = (not want_past) and u < mu + (1.0 - mu) * (1.0 - explore)
        if want_past:
            ps = past_states_l[o] if o < len(past_states_l) else -1
            if ps == s:
                cand_mask = ((past_masks_l[o] | committed) & ~rejected) & cands[s]
                j = position[s].get(cand_mask, -1)
                if j >= 0 and (not on_policy or prospective_ok(accepted, s, cand_mask)):
                    return j
            want_greedy = True
        excluded: set[int] = set()
        if want_greedy:
            while True:
                best_j = -1
                best_v = float("-inf")
                best_r = float("-inf")
                for j in range(n):
                    if j in excluded:
                        continue
                    amask = masks_l[offsets[s] + j]
                    if on_policy:
                        if amask & rejected:
                            continue
                        if (amask & committed) != committed:
                            continue
                    v = q[flat(s, j, o)]
                    rj = rewards_l[offsets[s] + j]
                    if v > best_v or (v == best_v and rj > best_r):
                        best_v = v
                        best_r = rj
                        best_j = j
                if best_j < 0:
                    return position[s][committed]  # accept nothing new
                if on_policy and not prospective_ok(accepted, s, masks_l[offsets[s] + best_j]):
                    excluded.add(best_j)
                    continue
                return best_j
        # random among legal actions
        legal = []
        for j in range(n):
            amask = masks_l[offsets[s] + j]
            if on_policy:
                if amask & rejected:
                    continue
                if (amask & committed) != committed:
                    continue
            legal.append(j)
        while legal:
            k = rng.below(len(legal))
            j = legal[k]
            if on_policy and not prospective_ok(accepted, s, masks_l[offsets[s] + j]):
                legal.pop(k)
                continue
            return j
        return position[s][committed]

    def legal_slot_max(t, slot, accepted, rejected):
        """Best q over actions of t that are legal in the episode context."""
        committed = accepted & cands[t]
        best = float("-inf")
        base = offsets[t]
        for j in range(n_actions[t]):
            amask = masks_l[base + j]
            if amask & rejected:
                continue
            if (amask & committed) != committed:
                continue
            v = q[(base + j) * stride + slot]
            if v > best:
                best = v
        return best

    def choose_state(rng, o_next, explore, visited, accepted, rejected):
        slot = o_next if three_d else 0
        u = rng.next_double()
        want_past = u < mu
        want_greedy = (not want_past) and u < mu + (1.0 - mu) * (1.0 - explore)
        if want_past:
            ps = past_states_l[o_next] if o_next < len(past_states_l) else -1
            if ps >= 0 and (not on_policy or not (visited >> ps) & 1):
                return ps
            want_greedy = True
        if want_greedy:
            best_t = -1
            best_v = float("-inf")
            for t in range(m):
                if on_policy and (visited >> t) & 1:
                    continue
                v = (
                    legal_slot_max(t, slot, accepted, rejected)
                    if on_policy
                    else state_best[t * orders + slot]
                )
                if v > best_v:
                    best_v = v
                    best_t = t
            return best_t
        pool = [t for t in range(m) if not (on_policy and (visited >> t) & 1)]
        return pool[rng.below(len(pool))]

    episodes_run = 0
    converged = False
    quiet = 0
    for ep in range(episodes):
        if episodes > 1:
            frac = ep / (episodes - 1)
        else:
            frac = 1.0
        explore = eps_start + (eps_end - eps_start) * frac
        rng = SplitMix(episode_seed(seed, ep))
        accepted = 0
        rejected = 0
        visited = 0
        max_dq = 0.0
        if three_d:
            # the stored policy also dictates where an episode begins
            u0 = rng.next_double()
            if u0 < mu and past_states_l and past_states_l[0] >= 0:
                s = past_states_l[0]
            else:
                s = rng.below(m)
        else:
            s = rng.below(m)
        if mode <= 1:  # flat modes: no pruning, every step bootstraps
            a = choose_action(rng, s, 0, explore, 0, 0) if mode == 1 else -1
            for step in range(m):
                if mode == 0:
                    a = choose_action(rng, s, step, explore, 0, 0)
                gid = flat(s, a, step)
                r = rewards_l[offsets[s] + a]
                s_next = choose_state(rng, step, explore, 0, 0, 0)
                if mode == 1:
                    a_next = choose_action(rng, s_next, step, explore, 0, 0)
                    target = r + gamma * q[flat(s_next, a_next, step)]
                else:
                    target = r + gamma * state_best[s_next]
                old = q[gid]
                new = (1.0 - alpha) * old + alpha * target
                q[gid] = new
                visits[gid] += 1
                dq = abs(new - old)
                if dq > max_dq:
                    max_dq = dq
                _refresh(
                    q, state_best, best_entry, s, 0, gid, old, new,
                    n_actions, offsets, stride, orders,
                )
                if trace is not None:
                    trace.append((ep, step, s, a, r))
                s = s_next
                if mode == 1:
                    a = a_next
        else:
            for o in range(m):
                j = choose_action(rng, s, o, explore, accepted, rejected)
                gid = flat(s, j, o)
                r = rewards_l[offsets[s] + j]
                if on_policy:
                    amask = masks_l[offsets[s] + j]
                    accepted |= amask
                    rejected |= cands[s] & ~amask & ~accepted
                    visited |= 1 << s
                s_next = -1
                if o < m - 1:
                    if on_policy:
                        s_next = choose_state(rng, o + 1, explore, visited, accepted, rejected)
                    else:
                        # unrestricted exploration: any segment may come next
                        s_next = rng.below(m)
                if s_next < 0:
                    target = r
                elif on_policy:
                    # pruned pairs are not candidate transitions: bootstrap from
                    # the best action still legal at the next state
                    nxt = legal_slot_max(s_next, o + 1, accepted, rejected)
                    target = r + gamma * (nxt if nxt > 0.0 else 0.0)
                else:
                    target = r + gamma * state_best[s_next * orders + o + 1]
                old = q[gid]
                new = (1.0 - alpha) * old + alpha * target
                q[gid] = new
                visits[gid] += 1
                dq = abs(new - old)
                if dq > max_dq:
                    max_dq = dq
                _refresh(
                    q, state_best, best_entry, s, o, gid, old, new,
                    n_actions, offsets, stride, orders,
                )
                if trace is not None:
                    trace.append((ep, o, s, j, r))
                if s_next >= 0:
                    s = s_next
        episodes_run = ep + 1
        quiet = quiet + 1 if max_dq < tol else 0
        if quiet >= CONVERGENCE_PATIENCE:
            converged = True
            break
    q_arr[:] = q
    visits_arr[:] = visits
    return episodes_run, converged


def _rescan(q, state_best, best_entry, s, o, n_actions, offsets, stride, orders):
    """Recompute max_a Q[s, a, o] (first strict maximum wins)."""
    best_v = float("-inf")
    best_i = offsets[s] * stride + o
    for j in range(n_actions[s]):
        idx = (offsets[s] + j) * stride + o
        v = q[idx]
        if v > best_v:
            best_v = v
            best_i = idx
    state_best[s * orders + o] = best_v
    best_entry[s * orders + o] = best_i


def _refresh(q, state_best, best_entry, s, o, gid, old, new, n_actions, offsets, stride, orders):
    slot = s * orders + o
    if new > state_best[slot]:
        state_best[slot] = new
        best_entry[slot] = gid
    elif gid == best_entry[slot] and new < old:
        _rescan(q, state_best, best_entry, s, o, n_actions, offsets, stride, orders)

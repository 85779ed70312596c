"""Composition problem: a request set compiled against an indexed model.

Requests are segmented once; every interval then gets a table of all feasible
acceptance subsets (bitmasks over request indices) with their local ranks and
rewards.  Enumeration runs depth-first with monotone-overflow pruning: once a
summed attribute exceeds the top of its declared domain, no superset can come
back in range.  A subset is feasible exactly when every aggregated attribute
value maps into the interval's semantic table (unindexed configurations are
discarded).

Rewards follow the rank scale of each interval: reward = q_i + 1 - rank, where
q_i is the largest distinct rank stored for the interval, so rank 1 earns q_i
and the worst indexed rank earns 1.  The empty subset earns 0.  The score a
composer minimizes ("pref") charges q_i + 1 for intervals left empty, which
makes score minimization and cumulative-reward maximization the same problem.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .cpnet import MAX, SUM
from .errors import CompositionError
from .kdindex import IndexedTempCPNet
from .workload import RequestSet, SegmentedRequest, segment

MAX_REQUESTS = 63  # request subsets are uint64 bitmasks
DEFAULT_TABLE_CAP = 1 << 18


@dataclass(frozen=True)
class ActionTable:
    """Feasible acceptance subsets of one interval, sorted by mask."""

    masks: np.ndarray  # uint64, ascending; masks[0] == 0 (the empty action)
    ranks: np.ndarray  # int32 local rank per mask (0 for the empty action)
    rewards: np.ndarray  # float64; q_i + 1 - rank, 0.0 for the empty action
    position: dict[int, int]  # mask -> row

    def __len__(self) -> int:
        return len(self.masks)


@dataclass
class EpisodeState:
    """Mutable bookkeeping of one sequential-composition episode."""

    accepted: int = 0  # bitmask of accepted request indices
    rejected: int = 0
    visited: int = 0  # bitmask of visited intervals

    def copy(self) -> "EpisodeState":
        return EpisodeState(self.accepted, self.rejected, self.visited)


class CompositionProblem:
    """A request set bound to an indexed temporal model, ready to compose."""

    def __init__(self, inet: IndexedTempCPNet, requests: RequestSet, table_cap: int = DEFAULT_TABLE_CAP):
        if len(inet.schema.decisions) > 1:
            raise CompositionError(
                "composition supports at most one decision variable (request continuation)"
            )
        if len(requests) > MAX_REQUESTS:
            raise CompositionError(f"at most {MAX_REQUESTS} requests per problem")
        self.inet = inet
        self.requests = requests
        self.m = inet.m
        self.n = len(requests)
        self.segmented: tuple[SegmentedRequest, ...] = tuple(
            segment(r, inet.net) for r in requests.requests
        )
        self.spans: tuple[tuple[int, ...], ...] = tuple(
            sr.active_intervals() for sr in self.segmented
        )
        self.candidates: list[int] = [0] * self.m
        for ridx, span in enumerate(self.spans):
            for i in span:
                self.candidates[i] |= 1 << ridx
        self.tables: list[ActionTable] = [
            self._enumerate_interval(i, table_cap) for i in range(self.m)
        ]
        self.offsets: list[int] = []
        total = 0
        for t in self.tables:
            self.offsets.append(total)
            total += len(t)
        self.total_actions = total

    # -- construction -------------------------------------------------------

    def _enumerate_interval(self, interval: int, cap: int) -> ActionTable:
        schema = self.inet.schema
        table = self.inet.net.tables[interval]
        scale = self.inet.interval_scale(interval)
        members = [r for r in range(self.n) if interval in self.spans[r]]
        seg_values = {
            r: self.segmented[r].segments[interval].values for r in members
        }
        seg_cont = {r: self.segmented[r].segments[interval].continues for r in members}
        sum_attrs = [a.name for a in schema.attributes if a.combine == SUM]
        max_attrs = [a.name for a in schema.attributes if a.combine == MAX]
        top = {a.name: table.breaks(a.name)[-1] for a in schema.attributes}

        found: list[tuple[int, int, float]] = [(0, 0, 0.0)]  # empty action

        def emit(mask: int, sums: dict[str, float], maxes: dict[str, float], continues: bool):
            values = dict(sums)
            values.update(maxes)
            config: list[int] = []
            for attr in schema.attributes:
                ordinal = table.try_level_of(attr.name, values[attr.name])
                if ordinal is None:
                    return
                config.append(ordinal)
            decision = tuple(continues for _ in schema.decisions)
            rank = self.inet.local_rank(interval, tuple(config), decision)
            if rank is None:
                return
            found.append((mask, rank, float(scale + 1 - rank)))
            if len(found) > cap:
                raise CompositionError(
                    f"interval {interval}: feasible action table exceeds cap {cap}"
                )

        def walk(idx: int, mask: int, sums: dict[str, float], maxes: dict[str, float], continues: bool):
            if idx == len(members):
                if mask:
                    emit(mask, sums, maxes, continues)
                return
            r = members[idx]
            # exclude r
            walk(idx + 1, mask, sums, maxes, continues)
            # include r, pruning supersets once a monotone attribute overflows
            vals = seg_values[r]
            new_sums = {a: sums[a] + vals[a] for a in sum_attrs}
            new_maxes = {a: max(maxes[a], vals[a]) for a in max_attrs}
            if any(new_sums[a] > top[a] for a in sum_attrs):
                return
            if any(new_maxes[a] > top[a] for a in max_attrs):
                return
            walk(idx + 1, mask | (1 << r), new_sums, new_maxes, continues or seg_cont[r])

        walk(0, 0, {a: 0.0 for a in sum_attrs}, {a: float("-inf") for a in max_attrs}, False)
        found.sort(key=lambda row: row[0])
        masks = np.array([f[0] for f in found], dtype=np.uint64)
        ranks = np.array([f[1] for f in found], dtype=np.int32)
        rewards = np.array([f[2] for f in found], dtype=np.float64)
        position = {int(mv): i for i, mv in enumerate(masks.tolist())}
        return ActionTable(masks=masks, ranks=ranks, rewards=rewards, position=position)

    # -- evaluation ----------------------------------------------------------

    def interval_scale(self, interval: int) -> int:
        return self.inet.interval_scale(interval)

    def is_feasible_at(self, interval: int, mask: int) -> bool:
        return mask in self.tables[interval].position

    def local_rank_of(self, interval: int, mask: int) -> int | None:
        pos = self.tables[interval].position.get(mask)
        return None if pos is None else int(self.tables[interval].ranks[pos])

    def evaluate(self, accepted_mask: int) -> tuple[int, int] | None:
        """(pref score, raw rank sum) of a selection, or None if infeasible.

        The pref score charges q_i + 1 for empty intervals; the raw sum counts
        occupied intervals only (0 for the empty selection).
        """
        pref = 0
        raw = 0
        for i in range(self.m):
            sub = accepted_mask & self.candidates[i]
            if sub == 0:
                pref += self.interval_scale(i) + 1
                continue
            pos = self.tables[i].position.get(sub)
            if pos is None:
                return None
            rank = int(self.tables[i].ranks[pos])
            pref += rank
            raw += rank
        return pref, raw

    def worst_pref(self) -> int:
        return sum(self.interval_scale(i) + 1 for i in range(self.m))

    def reward(self, interval: int, mask: int) -> float:
        """Reward of accepting `mask` in `interval` (q_i + 1 - rank; empty = 0)."""
        if not 0 <= interval < self.m:
            raise CompositionError(f"interval {interval} out of range")
        pos = self.tables[interval].position.get(mask)
        if pos is None:
            raise CompositionError(
                f"action {bin(mask)} is not feasible in interval {interval}"
            )
        return float(self.tables[interval].rewards[pos])

    # -- sequential-composition legality --------------------------------------

    def committed(self, state: EpisodeState, interval: int) -> int:
        return state.accepted & self.candidates[interval]

    def prospectively_feasible(self, accepted: int, interval: int, mask: int) -> bool:
        """True when accepting `mask` keeps every interval's committed aggregate indexed."""
        new = mask & ~accepted
        if new == 0:
            return True
        after = accepted | mask
        for t in range(self.m):
            if t == interval:
                continue
            if new & self.candidates[t]:
                if (after & self.candidates[t]) not in self.tables[t].position:
                    return False
        return True

    def legal_actions(self, state: EpisodeState, interval: int) -> list[int]:
        """Feasible action masks at `interval` given episode history.

        An action must contain every already-accepted candidate of the
        interval, avoid rejected requests, stay indexed locally, and not drive
        any other interval's committed aggregate out of its index.
        """
        if not 0 <= interval < self.m:
            raise CompositionError(f"interval {interval} out of range")
        committed = self.committed(state, interval)
        out: list[int] = []
        for mv in self.tables[interval].masks.tolist():
            mask = int(mv)
            if mask & state.rejected:
                continue
            if (mask & committed) != committed:
                continue
            if not self.prospectively_feasible(state.accepted, interval, mask):
                continue
            out.append(mask)
        return out

    def apply_action(self, state: EpisodeState, interval: int, mask: int):
        """Accept `mask`, reject the interval's other undecided candidates."""
        state.accepted |= mask
        state.rejected |= self.candidates[interval] & ~mask & ~state.accepted
        state.visited |= 1 << interval

    # -- helpers ---------------------------------------------------------------

    def mask_of_ids(self, ids: Iterable[str]) -> int:
        index = {r.rid: i for i, r in enumerate(self.requests.requests)}
        mask = 0
        for rid in ids:
            if rid not in index:
                raise CompositionError(f"unknown request id '{rid}'")
            mask |= 1 << index[rid]
        return mask

    def ids_of_mask(self, mask: int) -> tuple[str, ...]:
        return tuple(
            r.rid for i, r in enumerate(self.requests.requests) if mask & (1 << i)
        )

    def request_length(self, ridx: int) -> int:
        return self.requests.requests[ridx].length


def lex_mask_less(a: int, b: int) -> bool:
    """True when sorted(ids(a)) < sorted(ids(b)) lexicographically."""
    if a == b:
        return False
    diff = a ^ b
    low = diff & -diff
    if a & low:
        return (b >> low.bit_length()) != 0  # b still has larger members -> a smaller
    return (a >> low.bit_length()) == 0  # a exhausted -> a is a proper prefix

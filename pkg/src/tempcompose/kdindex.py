"""k-d tree indexes over ranked service configurations.

Each (interval, decision assignment) pair of a temporal model gets one tree:
points are level-ordinal vectors, every node carries the preference rank of
its configuration.  Construction is the canonical median split with the
splitting plane cycling through the attributes in schema order; points smaller
than the node on the split coordinate go to the right subtree, larger ones to
the left.  Duplicate coordinates along an axis are ordered by the full point
tuple, so exact-match descent stays deterministic and O(depth).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

from .cpnet import (
    Outcome,
    RankedOutcomeSet,
    TempCPNet,
    assign_ranks,
    induce_graph,
)
from .errors import CompositionError, ModelError


class _Node:
    __slots__ = ("point", "rank", "axis", "left", "right")

    def __init__(self, point: Outcome, rank: int, axis: int):
        self.point = point
        self.rank = rank
        self.axis = axis
        self.left: _Node | None = None
        self.right: _Node | None = None


def _key(point: Outcome, axis: int) -> tuple:
    return (point[axis], point)


class RankIndex:
    """Balanced k-d tree over one ranked outcome set."""

    def __init__(self, ranked: RankedOutcomeSet):
        if not ranked.ranks:
            raise ModelError("cannot index an empty outcome set")
        self.decision = ranked.decision
        self.size = len(ranked.ranks)
        self.max_rank = ranked.max_rank
        points = sorted(ranked.ranks)
        self.n_dims = len(points[0])
        self.root = self._build(points, ranked.ranks, depth=0)

    def _build(self, points: list[Outcome], ranks: Mapping[Outcome, int], depth: int) -> _Node | None:
        if not points:
            return None
        axis = depth % self.n_dims
        points = sorted(points, key=lambda p: _key(p, axis))
        mid = len(points) // 2
        node = _Node(points[mid], ranks[points[mid]], axis)
        # smaller-on-axis points go right, larger go left
        node.right = self._build(points[:mid], ranks, depth + 1)
        node.left = self._build(points[mid + 1 :], ranks, depth + 1)
        return node

    def lookup(self, config: Outcome) -> int | None:
        """Rank of an exactly matching configuration, or None on a miss."""
        if len(config) != self.n_dims:
            raise CompositionError(
                f"configuration has {len(config)} dimensions, index has {self.n_dims}"
            )
        node = self.root
        while node is not None:
            k_q, k_n = _key(config, node.axis), _key(node.point, node.axis)
            if k_q == k_n:
                return node.rank
            node = node.right if k_q < k_n else node.left
        return None

    def items(self) -> Iterator[tuple[Outcome, int]]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node is None:
                continue
            yield node.point, node.rank
            stack.append(node.left)
            stack.append(node.right)

    def depth(self) -> int:
        def walk(node: _Node | None) -> int:
            if node is None:
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)

    def dump(self) -> str:
        """Indented text rendering (point, split axis, rank) for goldens."""
        lines: list[str] = []

        def walk(node: _Node | None, indent: int):
            if node is None:
                return
            lines.append(f"{'  ' * indent}{node.point} axis={node.axis} rank={node.rank}")
            walk(node.right, indent + 1)
            walk(node.left, indent + 1)

        walk(self.root, 0)
        return "\n".join(lines)


def build_index(ranked: RankedOutcomeSet) -> RankIndex:
    """Index a ranked outcome set (median construction, O(n log n))."""
    return RankIndex(ranked)


def lookup_rank(index: RankIndex, config: Outcome) -> int | None:
    return index.lookup(config)


@dataclass(frozen=True)
class _IntervalIndex:
    by_decision: Mapping[tuple[bool, ...], RankIndex]
    scale: int  # max distinct rank across this interval's trees (reward scaling)


class IndexedTempCPNet:
    """A temporal model plus one rank index per (interval, decision value)."""

    def __init__(self, net: TempCPNet):
        self.net = net
        self._per_interval: list[_IntervalIndex] = []
        assignments = net.schema.decision_assignments()
        for cp in net.nets:
            trees: dict[tuple[bool, ...], RankIndex] = {}
            for dec in assignments:
                trees[dec] = build_index(assign_ranks(induce_graph(cp, dec)))
            scale = max(t.max_rank for t in trees.values())
            self._per_interval.append(_IntervalIndex(by_decision=trees, scale=scale))

    @property
    def m(self) -> int:
        return self.net.m

    @property
    def schema(self):
        return self.net.schema

    def index_for(self, interval: int, decision: tuple[bool, ...]) -> RankIndex:
        self._check_interval(interval)
        try:
            return self._per_interval[interval].by_decision[decision]
        except KeyError:
            raise CompositionError(f"no index for decision assignment {decision}") from None

    def interval_scale(self, interval: int) -> int:
        """q_i: the largest distinct rank stored for this interval."""
        self._check_interval(interval)
        return self._per_interval[interval].scale

    def local_rank(self, interval: int, config: Outcome, decision: tuple[bool, ...]) -> int | None:
        """Rank of a semantic configuration in one interval, or None on a miss."""
        return self.index_for(interval, decision).lookup(config)

    def rank_raw_config(
        self, interval: int, values: Mapping[str, float], decision: tuple[bool, ...]
    ) -> int | None:
        """Map raw attribute values through the interval's semantic table, then rank.

        Returns None when any value falls outside its declared domain (the
        configuration is unindexed and must be discarded by composers).
        """
        self._check_interval(interval)
        table = self.net.tables[interval]
        config: list[int] = []
        for attr in self.net.schema.attributes:
            ordinal = table.try_level_of(attr.name, values[attr.name])
            if ordinal is None:
                return None
            config.append(ordinal)
        return self.local_rank(interval, tuple(config), decision)

    def _check_interval(self, interval: int):
        if not 0 <= interval < self.net.m:
            raise CompositionError(f"interval {interval} out of range 0..{self.net.m - 1}")


def global_rank(inet: IndexedTempCPNet, segmented: Sequence) -> int | None:
    """Total rank of a selection: sum of local ranks over occupied intervals.

    `segmented` holds SegmentedRequest objects (see workload module).  Returns
    0 for an empty selection and None when any occupied interval's aggregate
    misses its index.
    """
    from .workload import combine_segments  # local import to avoid a cycle

    total = 0
    for i in range(inet.m):
        active = [sr.segments[i] for sr in segmented if sr.segments[i] is not None]
        if not active:
            continue
        values, decision = combine_segments(inet.net.schema, active)
        rank = inet.rank_raw_config(i, values, decision)
        if rank is None:
            return None
        total += rank
    return total

"""Conditional preference networks over semantic service configurations.

A provider's economic strategy for one time interval is a CP-net: a DAG of
service attributes whose conditional preference tables (CPTs) order each
attribute's semantic levels given the values of its parents.  Comparing two
configurations that differ in exactly one attribute against the matching CPT
row induces a directed "worse -> better" edge; the transitive closure of those
edges is the induced preference graph, from which integer ranks are assigned
(1 = most preferred, ties share a rank).

A temporal model chains one (CP-net, semantic table) pair per interval of the
provisioning horizon.  Boolean decision variables (e.g. whether a request
continues into the next interval) act as exogenous CPT parents: each decision
assignment induces its own preference graph.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import ModelError, OutOfDomainError

Outcome = tuple[int, ...]  # one level ordinal per attribute, in schema order

SUM = "sum"
MAX = "max"


@dataclass(frozen=True)
class AttributeDef:
    """A named service attribute with its semantic levels and combine rule."""

    name: str
    levels: tuple[str, ...]  # ascending raw-value order; ordinal = index
    combine: str = SUM  # how concurrent segments aggregate: "sum" or "max"
    temporal: bool = False  # divisible over time (prorated on segmentation)

    def __post_init__(self):
        if len(self.levels) < 2:
            raise ModelError(f"attribute '{self.name}' needs at least 2 levels")
        if len(set(self.levels)) != len(self.levels):
            raise ModelError(f"attribute '{self.name}' has duplicate level names")
        if self.combine not in (SUM, MAX):
            raise ModelError(f"attribute '{self.name}': unknown combine rule '{self.combine}'")

    def ordinal(self, level: str) -> int:
        try:
            return self.levels.index(level)
        except ValueError:
            raise ModelError(f"attribute '{self.name}' has no level '{level}'") from None


@dataclass(frozen=True)
class Schema:
    """Attribute and decision-variable declarations shared by all intervals."""

    attributes: tuple[AttributeDef, ...]
    decisions: tuple[str, ...] = ()

    def __post_init__(self):
        names = [a.name for a in self.attributes] + list(self.decisions)
        if len(set(names)) != len(names):
            raise ModelError("attribute/decision names are not unique")

    def attr_index(self, name: str) -> int:
        for i, a in enumerate(self.attributes):
            if a.name == name:
                return i
        raise ModelError(f"unknown attribute '{name}'")

    def attribute(self, name: str) -> AttributeDef:
        return self.attributes[self.attr_index(name)]

    def outcome(self, levels: Sequence[str]) -> Outcome:
        """Translate a tuple of level names into an ordinal outcome."""
        if len(levels) != len(self.attributes):
            raise ModelError(f"outcome needs {len(self.attributes)} levels, got {len(levels)}")
        return tuple(a.ordinal(lv) for a, lv in zip(self.attributes, levels))

    def level_names(self, outcome: Outcome) -> tuple[str, ...]:
        return tuple(a.levels[o] for a, o in zip(self.attributes, outcome))

    def all_outcomes(self) -> list[Outcome]:
        return [
            tuple(o)
            for o in itertools.product(*(range(len(a.levels)) for a in self.attributes))
        ]

    def decision_assignments(self) -> list[tuple[bool, ...]]:
        return [tuple(bits) for bits in itertools.product((False, True), repeat=len(self.decisions))]


class SemanticTable:
    """Maps raw attribute values onto semantic levels via breakpoint ranges.

    Each attribute gets len(levels)+1 ascending breakpoints; range k is
    half-open [b_k, b_{k+1}) except the final range, which is closed at the
    top so the declared domain maximum stays mappable.
    """

    def __init__(self, schema: Schema, breaks: Mapping[str, Sequence[float]]):
        self.schema = schema
        self._breaks: dict[str, tuple[float, ...]] = {}
        for attr in schema.attributes:
            if attr.name not in breaks:
                raise ModelError(f"semantic table missing ranges for attribute '{attr.name}'")
            bounds = tuple(float(b) for b in breaks[attr.name])
            if len(bounds) != len(attr.levels) + 1:
                raise ModelError(
                    f"attribute '{attr.name}': {len(attr.levels)} levels need "
                    f"{len(attr.levels) + 1} breakpoints, got {len(bounds)}"
                )
            if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
                raise ModelError(f"attribute '{attr.name}': breakpoints must be strictly ascending")
            self._breaks[attr.name] = bounds
        extra = set(breaks) - {a.name for a in schema.attributes}
        if extra:
            raise ModelError(f"semantic table declares ranges for unknown attributes {sorted(extra)}")

    def breaks(self, attribute: str) -> tuple[float, ...]:
        return self._breaks[attribute]

    def domain(self, attribute: str) -> tuple[float, float]:
        b = self._breaks[attribute]
        return b[0], b[-1]

    def try_level_of(self, attribute: str, value: float) -> int | None:
        """Ordinal of the level whose range contains value, or None if outside."""
        b = self._breaks[attribute]
        if value < b[0] or value > b[-1]:
            return None
        # final range is closed at the top
        if value == b[-1]:
            return len(b) - 2
        lo, hi = 0, len(b) - 2
        while lo < hi:
            mid = (lo + hi) // 2
            if value < b[mid + 1]:
                hi = mid
            else:
                lo = mid + 1
        return lo

    def level_of(self, attribute: str, value: float) -> int:
        ordinal = self.try_level_of(attribute, value)
        if ordinal is None:
            b = self._breaks[attribute]
            raise OutOfDomainError(
                f"value {value} for attribute '{attribute}' is outside [{b[0]}, {b[-1]}]"
            )
        return ordinal


def semantic_map(table: SemanticTable, attribute: str, value: float) -> str:
    """Name of the semantic level owning `value` (half-open ranges, last closed)."""
    return table.schema.attribute(attribute).levels[table.level_of(attribute, value)]


@dataclass(frozen=True)
class CPTRow:
    """A total preorder over one attribute's level ordinals.

    `groups` lists level groups from most to least preferred; levels within a
    group are tied (no induced edge between them).
    """

    groups: tuple[tuple[int, ...], ...]

    def validate(self, attr: AttributeDef):
        seen = [o for g in self.groups for o in g]
        if sorted(seen) != list(range(len(attr.levels))):
            missing = set(range(len(attr.levels))) - set(seen)
            if missing:
                names = ", ".join(attr.levels[o] for o in sorted(missing))
                raise ModelError(f"CPT row for '{attr.name}' misses level(s): {names}")
            raise ModelError(f"CPT row for '{attr.name}' lists a level more than once")

    def position(self, ordinal: int) -> int:
        for pos, group in enumerate(self.groups):
            if ordinal in group:
                return pos
        raise ModelError(f"ordinal {ordinal} not covered by CPT row")


@dataclass(frozen=True)
class CPT:
    """Conditional preference table of one attribute.

    Parents may be other attributes (keyed by level ordinal) or decision
    variables (keyed by bool).  `rows` must cover every parent instantiation.
    """

    attribute: str
    parents: tuple[str, ...]
    rows: Mapping[tuple, CPTRow]

    def row_for(self, parent_values: tuple) -> CPTRow:
        try:
            return self.rows[parent_values]
        except KeyError:
            raise ModelError(
                f"CPT for '{self.attribute}' has no row for parents {self.parents}={parent_values}"
            ) from None


class CPNet:
    """One interval's preference network: schema + one CPT per attribute."""

    def __init__(self, schema: Schema, cpts: Iterable[CPT]):
        self.schema = schema
        by_attr = {c.attribute: c for c in cpts}
        missing = [a.name for a in schema.attributes if a.name not in by_attr]
        if missing:
            raise ModelError(f"no CPT declared for attribute(s): {', '.join(missing)}")
        extra = set(by_attr) - {a.name for a in schema.attributes}
        if extra:
            raise ModelError(f"CPT declared for unknown attribute(s): {sorted(extra)}")
        self.cpts: tuple[CPT, ...] = tuple(by_attr[a.name] for a in schema.attributes)
        self._validate()

    def cpt(self, attribute: str) -> CPT:
        return self.cpts[self.schema.attr_index(attribute)]

    def _validate(self):
        attr_names = {a.name for a in self.schema.attributes}
        decision_names = set(self.schema.decisions)
        for cpt in self.cpts:
            for p in cpt.parents:
                if p not in attr_names and p not in decision_names:
                    raise ModelError(f"CPT for '{cpt.attribute}' names unknown parent '{p}'")
                if p == cpt.attribute:
                    raise ModelError(f"attribute '{cpt.attribute}' cannot parent itself")
            attr = self.schema.attribute(cpt.attribute)
            domains = []
            for p in cpt.parents:
                if p in decision_names:
                    domains.append((False, True))
                else:
                    domains.append(tuple(range(len(self.schema.attribute(p).levels))))
            expected = set(itertools.product(*domains)) if cpt.parents else {()}
            got = set(cpt.rows)
            if got != expected:
                raise ModelError(
                    f"CPT for '{cpt.attribute}' covers {len(got)} of {len(expected)} "
                    "parent instantiations"
                )
            for row in cpt.rows.values():
                row.validate(attr)
        self._check_acyclic()

    def _check_acyclic(self):
        # Kahn over attribute->attribute parent edges (decisions are roots).
        attr_names = [a.name for a in self.schema.attributes]
        parents = {
            c.attribute: [p for p in c.parents if p in set(attr_names)] for c in self.cpts
        }
        indeg = {n: len(parents[n]) for n in attr_names}
        children: dict[str, list[str]] = {n: [] for n in attr_names}
        for child, ps in parents.items():
            for p in ps:
                children[p].append(child)
        frontier = [n for n in attr_names if indeg[n] == 0]
        seen = 0
        while frontier:
            node = frontier.pop()
            seen += 1
            for ch in children[node]:
                indeg[ch] -= 1
                if indeg[ch] == 0:
                    frontier.append(ch)
        if seen != len(attr_names):
            cyclic = sorted(n for n in attr_names if indeg[n] > 0)
            raise ModelError(f"cyclic parent graph among attributes: {', '.join(cyclic)}")

    def row_for_outcome(self, attribute: str, outcome: Outcome, decision: tuple[bool, ...]) -> CPTRow:
        """Select the CPT row of `attribute` given an outcome and decision values."""
        cpt = self.cpt(attribute)
        values = []
        for p in cpt.parents:
            if p in self.schema.decisions:
                values.append(decision[self.schema.decisions.index(p)])
            else:
                values.append(outcome[self.schema.attr_index(p)])
        return cpt.row_for(tuple(values))


@dataclass(frozen=True)
class Interval:
    """Half-open time range [start, end) in model time units."""

    name: str
    start: int
    end: int

    def __post_init__(self):
        if self.end <= self.start:
            raise ModelError(f"interval '{self.name}' is empty ([{self.start}, {self.end}))")

    @property
    def length(self) -> int:
        return self.end - self.start


class TempCPNet:
    """A temporal preference model: one (CP-net, semantic table) per interval."""

    def __init__(
        self,
        schema: Schema,
        intervals: Sequence[Interval],
        nets: Sequence[CPNet],
        tables: Sequence[SemanticTable],
        name: str = "model",
    ):
        if not intervals:
            raise ModelError("a temporal model needs at least one interval")
        if not (len(intervals) == len(nets) == len(tables)):
            raise ModelError("intervals, CP-nets and semantic tables must align")
        for prev, cur in zip(intervals, intervals[1:]):
            if cur.start != prev.end:
                raise ModelError(
                    f"intervals '{prev.name}' and '{cur.name}' are not contiguous "
                    f"({prev.end} != {cur.start})"
                )
        self.schema = schema
        self.intervals = tuple(intervals)
        self.nets = tuple(nets)
        self.tables = tuple(tables)
        self.name = name

    @property
    def m(self) -> int:
        return len(self.intervals)

    @property
    def start(self) -> int:
        return self.intervals[0].start

    @property
    def horizon(self) -> int:
        return self.intervals[-1].end

    def interval_covering(self, t: int) -> int:
        """Index of the interval containing time unit t."""
        for i, iv in enumerate(self.intervals):
            if iv.start <= t < iv.end:
                return i
        raise ModelError(f"time unit {t} outside model horizon [{self.start}, {self.horizon})")


class Comparison(enum.Enum):
    FIRST_PREFERRED = "first_preferred"
    SECOND_PREFERRED = "second_preferred"
    INDIFFERENT_OR_INCOMPARABLE = "indifferent_or_incomparable"


class InducedGraph:
    """Induced preference graph for one decision assignment.

    Nodes are full outcomes; a directed edge runs from the less preferred to
    the more preferred of two outcomes that differ in exactly one attribute,
    per the matching CPT row.  Tied levels produce no edge.  Acyclic for any
    acyclic CP-net.
    """

    def __init__(self, net: CPNet, decision: tuple[bool, ...]):
        self.schema = net.schema
        self.decision = decision
        self.outcomes: tuple[Outcome, ...] = tuple(net.schema.all_outcomes())
        better: dict[Outcome, list[Outcome]] = {o: [] for o in self.outcomes}
        n_levels = [len(a.levels) for a in net.schema.attributes]
        for o in self.outcomes:
            for ai, attr in enumerate(net.schema.attributes):
                row = net.row_for_outcome(attr.name, o, decision)
                u = o[ai]
                pos_u = row.position(u)
                for v in range(u + 1, n_levels[ai]):
                    pos_v = row.position(v)
                    if pos_u == pos_v:
                        continue  # tied: no edge
                    alt = o[:ai] + (v,) + o[ai + 1 :]
                    if pos_u < pos_v:
                        better[alt].append(o)  # o preferred
                    else:
                        better[o].append(alt)
        self.better: dict[Outcome, tuple[Outcome, ...]] = {
            o: tuple(sorted(succ)) for o, succ in better.items()
        }

    def successors(self, outcome: Outcome) -> tuple[Outcome, ...]:
        """More-preferred neighbours reachable by one attribute flip."""
        try:
            return self.better[outcome]
        except KeyError:
            raise ModelError(f"outcome {outcome} not in graph") from None

    def sinks(self) -> list[Outcome]:
        """Most-preferred outcomes (no outgoing edge)."""
        return [o for o in self.outcomes if not self.better[o]]

    def reaches(self, src: Outcome, dst: Outcome) -> bool:
        """True if dst is reachable from src along worse->better edges."""
        if src == dst:
            return False
        stack = [src]
        seen = {src}
        while stack:
            node = stack.pop()
            for nxt in self.better[node]:
                if nxt == dst:
                    return True
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False


def induce_graph(net: CPNet, decision: Mapping[str, bool] | tuple[bool, ...]) -> InducedGraph:
    """Build the induced preference graph of `net` for one decision assignment."""
    if isinstance(decision, tuple):
        bits = decision
    else:
        missing = [d for d in net.schema.decisions if d not in decision]
        if missing:
            raise ModelError(f"decision assignment misses variable(s): {', '.join(missing)}")
        bits = tuple(bool(decision[d]) for d in net.schema.decisions)
    if len(bits) != len(net.schema.decisions):
        raise ModelError(
            f"decision assignment needs {len(net.schema.decisions)} values, got {len(bits)}"
        )
    return InducedGraph(net, bits)


@dataclass(frozen=True)
class RankedOutcomeSet:
    """Outcome -> rank mapping for one decision assignment (1 = most preferred)."""

    decision: tuple[bool, ...]
    ranks: Mapping[Outcome, int]
    max_rank: int = field(default=0)

    def rank(self, outcome: Outcome) -> int:
        return self.ranks[outcome]


def assign_ranks(graph: InducedGraph) -> RankedOutcomeSet:
    """Rank outcomes by longest flip-chain distance to a most-preferred sink.

    rank(o) = 1 + length of the longest directed path from o to any sink,
    then distinct values are renumbered densely to 1..q.  Incomparable
    outcomes at the same depth share a rank, matching tied annotations.
    """
    order = _topological(graph)
    depth: dict[Outcome, int] = {}
    for o in reversed(order):  # Kahn order ends at sinks; walk backwards
        succ = graph.better[o]
        depth[o] = 1 + max((depth[s] for s in succ), default=-1)
    distinct = sorted(set(depth.values()))
    dense = {d: i + 1 for i, d in enumerate(distinct)}
    ranks = {o: dense[d] for o, d in depth.items()}
    return RankedOutcomeSet(decision=graph.decision, ranks=ranks, max_rank=len(distinct))


def _topological(graph: InducedGraph) -> list[Outcome]:
    """Kahn order along worse->better edges; raises on a cycle."""
    indeg = {o: 0 for o in graph.outcomes}
    for o in graph.outcomes:
        for s in graph.better[o]:
            indeg[s] += 1
    frontier = [o for o in graph.outcomes if indeg[o] == 0]
    out: list[Outcome] = []
    while frontier:
        node = frontier.pop()
        out.append(node)
        for s in graph.better[node]:
            indeg[s] -= 1
            if indeg[s] == 0:
                frontier.append(s)
    if len(out) != len(graph.outcomes):
        raise ModelError("induced preference graph contains a cycle")
    return out


def compare_outcomes(graph: InducedGraph, first: Outcome, second: Outcome) -> Comparison:
    """Dominance query over the induced graph (reachability on flip edges)."""
    for o in (first, second):
        if o not in graph.better:
            raise ModelError(f"outcome {o} not in graph")
    if graph.reaches(second, first):
        return Comparison.FIRST_PREFERRED
    if graph.reaches(first, second):
        return Comparison.SECOND_PREFERRED
    return Comparison.INDIFFERENT_OR_INCOMPARABLE

"""Shared test helpers: random model/workload generators and naive oracles.

The oracles here deliberately avoid the library's fast paths: preference
scores are recomputed from raw request series, semantic breakpoints and the
ranked-outcome dictionaries (never the k-d trees or action tables), and the
naive linkage recomputes cluster distances from member lists at every step.
"""

from __future__ import annotations

import itertools

import numpy as np

from tempcompose.cpnet import (
    AttributeDef,
    CPNet,
    CPT,
    CPTRow,
    Interval,
    Schema,
    SemanticTable,
    TempCPNet,
    assign_ranks,
    induce_graph,
)
from tempcompose.workload import Request, RequestSet

MAX_RULE_ATTR = "A"


def random_tempcp(rng: np.random.Generator, m: int = 3, levels: int | None = None) -> TempCPNet:
    """Random acyclic 3-attribute model with a decision variable.

    Attribute A aggregates by maximization (availability-like, domain
    [90, 100]); C sums (domain [0, 60]); P sums and is temporal (domain
    [0, 2000]).  Levels per attribute: 3-5.  CPT rows are random total
    preorders with occasional ties.
    """
    n_levels = [int(rng.integers(3, 6)) if levels is None else levels for _ in range(3)]
    names = ["A", "C", "P"]
    domains = {"A": (90.0, 100.0), "C": (0.0, 60.0), "P": (0.0, 2000.0)}
    attrs = tuple(
        AttributeDef(
            name=nm,
            levels=tuple(f"{nm.lower()}{i}" for i in range(k)),
            combine="max" if nm == MAX_RULE_ATTR else "sum",
            temporal=(nm == "P"),
        )
        for nm, k in zip(names, n_levels)
    )
    schema = Schema(attributes=attrs, decisions=("N",))

    def random_table() -> SemanticTable:
        breaks = {}
        for attr in attrs:
            lo, hi = domains[attr.name]
            # jittered interior cuts, kept non-degenerate
            cuts = lo + (hi - lo) * np.linspace(0.2, 0.8, len(attr.levels) - 1) * (
                0.5 + 0.5 * rng.random(len(attr.levels) - 1)
            )
            cuts = np.sort(cuts)
            bounds = [lo] + [float(c) for c in cuts] + [hi]
            for i in range(len(bounds) - 1):
                if bounds[i + 1] <= bounds[i]:
                    bounds[i + 1] = bounds[i] + (hi - lo) * 1e-3
            breaks[attr.name] = tuple(bounds)
        return SemanticTable(schema, breaks)

    def random_row(k: int) -> CPTRow:
        order = list(rng.permutation(k))
        groups: list[list[int]] = [[order[0]]]
        for o in order[1:]:
            if rng.random() < 0.15:
                groups[-1].append(o)
            else:
                groups.append([o])
        return CPTRow(groups=tuple(tuple(sorted(g)) for g in groups))

    def random_net() -> CPNet:
        order = list(rng.permutation(3))
        decision_attr = int(rng.integers(0, 3)) if rng.random() < 0.7 else -1
        cpts = []
        for pos, ai in enumerate(order):
            attr = attrs[ai]
            parents: list[str] = []
            if pos > 0 and rng.random() < 0.8:
                parents.append(attrs[order[int(rng.integers(0, pos))]].name)
            if ai == decision_attr:
                parents.append("N")
            domains_p = []
            for p in parents:
                if p == "N":
                    domains_p.append((False, True))
                else:
                    domains_p.append(tuple(range(len(schema.attribute(p).levels))))
            keys = list(itertools.product(*domains_p)) if parents else [()]
            rows = {k: random_row(len(attr.levels)) for k in keys}
            cpts.append(CPT(attribute=attr.name, parents=tuple(parents), rows=rows))
        return CPNet(schema, cpts)

    unit = 3
    intervals = [Interval(name=f"I{i}", start=i * unit, end=(i + 1) * unit) for i in range(m)]
    return TempCPNet(
        schema=schema,
        intervals=intervals,
        nets=[random_net() for _ in range(m)],
        tables=[random_table() for _ in range(m)],
        name="random",
    )


def random_requests(rng: np.random.Generator, net: TempCPNet, n: int) -> RequestSet:
    """Random workload sized to the model horizon with in-domain values."""
    horizon = net.horizon - net.start
    requests = []
    for i in range(n):
        length = int(rng.integers(1, horizon + 1))
        start = net.start + int(rng.integers(0, horizon - length + 1))
        values = {
            "A": (round(float(rng.uniform(90, 100)), 2),) * length,
            "C": (round(float(rng.uniform(4, 18)), 2),) * length,
            "P": (round(float(rng.uniform(30, 250)), 2),) * length,
        }
        requests.append(Request(rid=f"R{i:02d}", start=start, length=length, values=values))
    return RequestSet(requests=tuple(requests), distribution="random", seed=None, horizon=None)


def independent_pref(net: TempCPNet, requests: RequestSet, accepted_ids, scales=None) -> int | None:
    """Penalized preference score recomputed from first principles.

    Uses raw series arithmetic, direct breakpoint scans and the ranked-outcome
    dictionaries; shares neither the k-d trees nor the action tables with the
    code under test.  Returns None when any occupied interval is unindexed.
    """
    accepted = [r for r in requests.requests if r.rid in set(accepted_ids)]
    if scales is None:
        scales = interval_scales(net)
    ranked = {}
    total = 0
    for i, interval in enumerate(net.intervals):
        segs = []
        for r in accepted:
            lo, hi = max(r.start, interval.start), min(r.end, interval.end)
            if hi <= lo:
                continue
            vals = {}
            for attr in net.schema.attributes:
                if attr.temporal:
                    vals[attr.name] = sum(r.values[attr.name]) * (hi - lo) / r.length
                else:
                    vals[attr.name] = r.values[attr.name][lo - r.start]
            segs.append((vals, r.end > interval.end))
        if not segs:
            total += scales[i] + 1
            continue
        combined = {}
        for attr in net.schema.attributes:
            vs = [v[attr.name] for v, _ in segs]
            combined[attr.name] = max(vs) if attr.combine == "max" else sum(vs)
        continues = any(c for _, c in segs)
        config = []
        table = net.tables[i]
        ok = True
        for attr in net.schema.attributes:
            b = table.breaks(attr.name)
            v = combined[attr.name]
            if v < b[0] or v > b[-1]:
                ok = False
                break
            level = len(b) - 2 if v == b[-1] else next(k for k in range(len(b) - 1) if b[k] <= v < b[k + 1])
            config.append(level)
        if not ok:
            return None
        decision = tuple(continues for _ in net.schema.decisions)
        key = (i, decision)
        if key not in ranked:
            ranked[key] = assign_ranks(induce_graph(net.nets[i], decision))
        total += ranked[key].ranks[tuple(config)]
    return total


def interval_scales(net: TempCPNet) -> list[int]:
    """Per-interval q_i recomputed from the induced graphs (not the index)."""
    per = []
    for i in range(net.m):
        worst = 0
        for dec in net.schema.decision_assignments():
            rs = assign_ranks(induce_graph(net.nets[i], dec))
            worst = max(worst, rs.max_rank)
        per.append(worst)
    return per


def brute_best_pref(net: TempCPNet, requests: RequestSet) -> int:
    """Independent exhaustive enumerator (subsets by id), minimal pref."""
    ids = [r.rid for r in requests.requests]
    scales = interval_scales(net)
    best = None
    for k in range(1 << len(ids)):
        chosen = [ids[i] for i in range(len(ids)) if k & (1 << i)]
        pref = independent_pref(net, requests, chosen, scales)
        if pref is not None and (best is None or pref < best):
            best = pref
    return best


def naive_linkage(points: np.ndarray, linkage: str):
    """O(n^3) agglomeration recomputing cluster distances from members.

    Returns merges as (left_id, right_id, height) with the same id scheme and
    tie-break as the implementation: ids 0..n-1 are leaves, n+k the cluster
    born at step k; the smallest (id, id) pair wins ties.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    base = {
        (i, j): float(np.sqrt(np.sum((pts[i] - pts[j]) ** 2)))
        for i in range(n)
        for j in range(i + 1, n)
    }

    def cluster_distance(a: int, b: int) -> float:
        ds = [
            base[(min(x, y), max(x, y))]
            for x in members[a]
            for y in members[b]
        ]
        if linkage == "slink":
            return min(ds)
        if linkage == "clink":
            return max(ds)
        return sum(ds) / len(ds)

    merges = []
    for step in range(n - 1):
        ids = sorted(members)
        best = None
        for x in range(len(ids)):
            for y in range(x + 1, len(ids)):
                d = cluster_distance(ids[x], ids[y])
                if best is None or d < best[0]:
                    best = (d, ids[x], ids[y])
        d, a, b = best
        new_id = n + step
        members[new_id] = members.pop(a) + members.pop(b)
        merges.append((a, b, d))
    return merges

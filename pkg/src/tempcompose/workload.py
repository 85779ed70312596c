"""Long-term requests: time series, segmentation, aggregation, synthesis.

A request is a span of whole time units with one value series per attribute.
Composing against a temporal model first splits each request into per-interval
segments: attributes flagged temporal (price-like, divisible over time)
receive the span total prorated by segment-length share, everything else is
carried through unchanged.  Concurrent segments in an interval combine by the
attribute's rule (summation for capacity-like attributes, maximization for
availability-like ones) before being ranked.

Synthetic workloads follow distribution presets over request-length buckets
(in months): normal 20/60/20, right-skewed 20/20/60, left-skewed 60/20/20
across 1-3 / 4-8 / 9-12, plus a fully random preset.  Start times come from a
Poisson arrival process truncated to the horizon.  Generation is deterministic
under a fixed seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cpnet import MAX, SUM, AttributeDef, Schema, TempCPNet
from .errors import RequestError, WorkloadError

BUCKET_PRESETS: dict[str, tuple[tuple[int, int, float], ...]] = {
    "normal": ((1, 3, 20.0), (4, 8, 60.0), (9, 12, 20.0)),
    "right_skewed": ((1, 3, 20.0), (4, 8, 20.0), (9, 12, 60.0)),
    "left_skewed": ((1, 3, 60.0), (4, 8, 20.0), (9, 12, 20.0)),
}
DISTRIBUTIONS = ("normal", "right_skewed", "left_skewed", "random")


@dataclass(frozen=True)
class Request:
    """One consumer request: a span plus per-attribute value series."""

    rid: str
    start: int
    length: int
    values: Mapping[str, tuple[float, ...]]  # series length == span length

    def __post_init__(self):
        if self.length <= 0:
            raise RequestError(f"request '{self.rid}': span is empty")
        if self.start < 0:
            raise RequestError(f"request '{self.rid}': negative start")
        for name, series in self.values.items():
            if len(series) != self.length:
                raise RequestError(
                    f"request '{self.rid}': series for '{name}' has {len(series)} "
                    f"values, span is {self.length}"
                )

    @property
    def end(self) -> int:
        return self.start + self.length

    def total(self, attribute: str) -> float:
        return float(sum(self.values[attribute]))


@dataclass(frozen=True)
class Segment:
    """A request's footprint inside one model interval."""

    interval: int
    values: Mapping[str, float]
    continues: bool  # request extends past this interval's end


@dataclass(frozen=True)
class SegmentedRequest:
    rid: str
    segments: tuple[Segment | None, ...]  # aligned with model intervals

    def active_intervals(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.segments) if s is not None)


@dataclass(frozen=True)
class RequestSet:
    requests: tuple[Request, ...]
    distribution: str | None = None
    seed: int | None = None
    horizon: int | None = None

    def __post_init__(self):
        ids = [r.rid for r in self.requests]
        if len(set(ids)) != len(ids):
            raise RequestError("request ids are not unique")

    def __len__(self) -> int:
        return len(self.requests)

    def by_id(self, rid: str) -> Request:
        for r in self.requests:
            if r.rid == rid:
                return r
        raise RequestError(f"no request with id '{rid}'")


def segment(request: Request, net: TempCPNet) -> SegmentedRequest:
    """Split a request into per-interval segments against a temporal model.

    Temporal attributes are prorated: a segment covering `w` of the request's
    `L` units gets total * w / L.  Other attributes take the series value at
    the segment's first unit (series must not vary inside one interval).  The
    per-interval decision flag is true exactly when a later segment exists.
    """
    if request.start < net.start or request.end > net.horizon:
        raise RequestError(
            f"request '{request.rid}' span [{request.start}, {request.end}) "
            f"outside model horizon [{net.start}, {net.horizon})"
        )
    segments: list[Segment | None] = [None] * net.m
    for i, iv in enumerate(net.intervals):
        lo = max(request.start, iv.start)
        hi = min(request.end, iv.end)
        if hi <= lo:
            continue
        width = hi - lo
        values: dict[str, float] = {}
        for attr in net.schema.attributes:
            series = request.values[attr.name]
            if attr.temporal:
                values[attr.name] = request.total(attr.name) * width / request.length
            else:
                window = series[lo - request.start : hi - request.start]
                if any(v != window[0] for v in window):
                    raise RequestError(
                        f"request '{request.rid}': non-temporal attribute "
                        f"'{attr.name}' varies inside interval '{iv.name}'"
                    )
                values[attr.name] = float(window[0])
        segments[i] = Segment(interval=i, values=values, continues=request.end > iv.end)
    if all(s is None for s in segments):
        raise RequestError(f"request '{request.rid}' does not intersect the model horizon")
    return SegmentedRequest(rid=request.rid, segments=tuple(segments))


def aggregate(schema: Schema, assignments: Sequence[Mapping[str, float]]) -> dict[str, float]:
    """Combine concurrent attribute assignments by each attribute's rule."""
    if not assignments:
        raise RequestError("cannot aggregate an empty segment list")
    keys = {frozenset(a.keys()) for a in assignments}
    expected = frozenset(attr.name for attr in schema.attributes)
    if keys != {expected}:
        raise RequestError("segment attribute schemas do not match")
    out: dict[str, float] = {}
    for attr in schema.attributes:
        vals = [a[attr.name] for a in assignments]
        out[attr.name] = float(sum(vals)) if attr.combine == SUM else float(max(vals))
    return out


def combine_segments(
    schema: Schema, segments: Sequence[Segment]
) -> tuple[dict[str, float], tuple[bool, ...]]:
    """Aggregate segments and derive the interval's decision assignment.

    The combined configuration continues past the interval iff any member
    does; every decision variable carries that continuation bit.
    """
    values = aggregate(schema, [s.values for s in segments])
    continues = any(s.continues for s in segments)
    return values, tuple(continues for _ in schema.decisions)


def overlap_ratio(request: Request | SegmentedRequest, total_intervals: int, net: TempCPNet | None = None) -> float:
    """Fraction of the model's intervals the request occupies."""
    if total_intervals < 1:
        raise RequestError("total_intervals must be >= 1")
    if isinstance(request, SegmentedRequest):
        active = len(request.active_intervals())
    else:
        if net is None:
            raise RequestError("overlap_ratio needs a model to segment a raw request")
        active = len(segment(request, net).active_intervals())
    return active / total_intervals


@dataclass(frozen=True)
class GenAttribute:
    """Value range for one generated attribute (per time unit)."""

    name: str
    lo: float
    hi: float
    combine: str = SUM
    temporal: bool = False

    def __post_init__(self):
        if self.hi < self.lo:
            raise WorkloadError(f"attribute '{self.name}': empty value range")


@dataclass(frozen=True)
class WorkloadSpec:
    """Declarative description of one synthetic request set."""

    distribution: str
    count: int
    attributes: tuple[GenAttribute, ...]
    horizon: int = 12
    buckets: tuple[tuple[int, int, float], ...] | None = None  # (lo, hi, pct)
    seed: int = 0
    arrival_rate: float | None = None  # Poisson rate; None = count / horizon

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise WorkloadError(f"unknown distribution '{self.distribution}'")
        if self.count <= 0:
            raise WorkloadError("request count must be positive")
        if self.horizon <= 0:
            raise WorkloadError("horizon must be positive")
        if not self.attributes:
            raise WorkloadError("workload spec declares no attributes")
        if self.buckets is not None:
            total = sum(pct for _, _, pct in self.buckets)
            if abs(total - 100.0) > 1e-9:
                raise WorkloadError(f"bucket percentages sum to {total}, expected 100")
            for lo, hi, _ in self.buckets:
                if not (1 <= lo <= hi <= self.horizon):
                    raise WorkloadError(f"bucket [{lo}, {hi}] outside horizon {self.horizon}")

    def effective_buckets(self) -> tuple[tuple[int, int, float], ...] | None:
        if self.buckets is not None:
            return self.buckets
        if self.distribution == "random":
            return None
        return BUCKET_PRESETS[self.distribution]


def _bucket_counts(buckets: Sequence[tuple[int, int, float]], n: int) -> list[int]:
    """Largest-remainder rounding keeps realized counts within 1 of spec."""
    raw = [n * pct / 100.0 for _, _, pct in buckets]
    counts = [int(x) for x in raw]
    remainder = sorted(range(len(raw)), key=lambda i: (raw[i] - counts[i], -i), reverse=True)
    short = n - sum(counts)
    for i in remainder[:short]:
        counts[i] += 1
    return counts


def generate_workload(spec: WorkloadSpec) -> RequestSet:
    """Deterministically synthesize a request set from a workload spec."""
    rng = np.random.default_rng(spec.seed)
    lengths: list[int] = []
    buckets = spec.effective_buckets()
    if buckets is None:
        lengths = [int(rng.integers(1, spec.horizon + 1)) for _ in range(spec.count)]
    else:
        for (lo, hi, _), count in zip(buckets, _bucket_counts(buckets, spec.count)):
            lengths.extend(int(rng.integers(lo, hi + 1)) for _ in range(count))

    rate = spec.arrival_rate if spec.arrival_rate is not None else spec.count / spec.horizon
    if rate <= 0:
        raise WorkloadError("arrival rate must be positive")
    clock = 0.0
    starts: list[int] = []
    for length in lengths:
        clock += float(rng.exponential(1.0 / rate))
        start = int(clock)
        tries = 0
        while start + length > spec.horizon and tries < 64:
            # overflow: resample this start from a fresh arrival draw
            start = int(rng.exponential(1.0 / rate))
            tries += 1
        if start + length > spec.horizon:
            start = int(rng.integers(0, spec.horizon - length + 1))
        starts.append(start)

    width = max(2, len(str(spec.count)))
    requests: list[Request] = []
    for idx, (start, length) in enumerate(zip(starts, lengths)):
        values: dict[str, tuple[float, ...]] = {}
        for attr in spec.attributes:
            v = round(float(rng.uniform(attr.lo, attr.hi)), 2)
            values[attr.name] = (v,) * length
        requests.append(
            Request(rid=f"R{idx + 1:0{width}d}", start=start, length=length, values=values)
        )
    return RequestSet(
        requests=tuple(requests),
        distribution=spec.distribution,
        seed=spec.seed,
        horizon=spec.horizon,
    )


def schema_from_spec(spec: WorkloadSpec, levels: int = 3) -> tuple[AttributeDef, ...]:
    """Attribute definitions (combine rule, temporal flag) implied by a spec."""
    return tuple(
        AttributeDef(
            name=a.name,
            levels=tuple(f"l{i}" for i in range(levels)),
            combine=a.combine,
            temporal=a.temporal,
        )
        for a in spec.attributes
    )


# ---------------------------------------------------------------------------
# request-set file format (line per request; lossless round-trip)
# ---------------------------------------------------------------------------


def dumps_requests(rs: RequestSet, attrs: Sequence[AttributeDef] | None = None) -> str:
    """Canonical text form: header metadata, attribute rules, one line per request."""
    lines = ["requestset v1"]
    if rs.distribution is not None:
        lines.append(f"meta distribution {rs.distribution}")
    if rs.seed is not None:
        lines.append(f"meta seed {rs.seed}")
    if rs.horizon is not None:
        lines.append(f"meta horizon {rs.horizon}")
    if attrs:
        for a in attrs:
            flag = " temporal" if a.temporal else ""
            lines.append(f"attr {a.name} {a.combine}{flag}")
    for r in rs.requests:
        names = [a.name for a in attrs] if attrs else sorted(r.values.keys())
        fields = " ".join(f"{n}={','.join(repr(v) for v in r.values[n])}" for n in names)
        lines.append(f"request {r.rid} {r.start} {r.length} {fields}")
    return "\n".join(lines) + "\n"


def loads_requests(text: str) -> tuple[RequestSet, tuple[AttributeDef, ...]]:
    """Parse the request-set format; returns the set and declared attribute rules."""
    requests: list[Request] = []
    meta: dict[str, str] = {}
    attr_defs: list[AttributeDef] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        head = parts[0]
        if head == "requestset":
            continue
        if head == "meta":
            if len(parts) != 3:
                raise RequestError(f"line {lineno}: expected 'meta KEY VALUE'")
            meta[parts[1]] = parts[2]
        elif head == "attr":
            if len(parts) < 3 or parts[2] not in (SUM, MAX):
                raise RequestError(f"line {lineno}: expected 'attr NAME sum|max [temporal]'")
            temporal = "temporal" in parts[3:]
            attr_defs.append(
                AttributeDef(
                    name=parts[1],
                    levels=("lo", "hi"),  # placeholder; models own the real levels
                    combine=parts[2],
                    temporal=temporal,
                )
            )
        elif head == "request":
            if len(parts) < 4:
                raise RequestError(f"line {lineno}: expected 'request ID START LENGTH A=...'")
            rid = parts[1]
            try:
                start, length = int(parts[2]), int(parts[3])
            except ValueError:
                raise RequestError(f"line {lineno}: start/length must be integers") from None
            values: dict[str, tuple[float, ...]] = {}
            for chunk in parts[4:]:
                if "=" not in chunk:
                    raise RequestError(f"line {lineno}: malformed field '{chunk}'")
                name, payload = chunk.split("=", 1)
                try:
                    series = tuple(float(x) for x in payload.split(","))
                except ValueError:
                    raise RequestError(f"line {lineno}: bad number in '{chunk}'") from None
                if len(series) == 1 and length > 1:
                    temporal = any(a.name == name and a.temporal for a in attr_defs)
                    if temporal:
                        series = (series[0] / length,) * length  # value is the span total
                    else:
                        series = series * length
                if len(series) != length:
                    raise RequestError(
                        f"line {lineno}: series for '{name}' has {len(series)} values, span is {length}"
                    )
                values[name] = series
            requests.append(Request(rid=rid, start=start, length=length, values=values))
        else:
            raise RequestError(f"line {lineno}: unknown directive '{head}'")
    seed = int(meta["seed"]) if "seed" in meta else None
    horizon = int(meta["horizon"]) if "horizon" in meta else None
    rs = RequestSet(
        requests=tuple(requests),
        distribution=meta.get("distribution"),
        seed=seed,
        horizon=horizon,
    )
    return rs, tuple(attr_defs)


def write_requests(path: str | Path, rs: RequestSet, attrs: Sequence[AttributeDef] | None = None):
    Path(path).write_text(dumps_requests(rs, attrs))


def read_requests(path: str | Path) -> tuple[RequestSet, tuple[AttributeDef, ...]]:
    return loads_requests(Path(path).read_text())


def request_set_digest(rs: RequestSet, attrs: Sequence[AttributeDef] | None = None) -> str:
    """Stable content digest used by the policy library."""
    return hashlib.sha256(dumps_requests(rs, attrs).encode()).hexdigest()


# ---------------------------------------------------------------------------
# workload-spec file format
# ---------------------------------------------------------------------------


def loads_workload_spec(text: str) -> WorkloadSpec:
    """Parse a declarative workload spec document."""
    distribution = None
    count = None
    horizon = 12
    seed = 0
    rate: float | None = None
    buckets: list[tuple[int, int, float]] = []
    attrs: list[GenAttribute] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        head = parts[0]
        try:
            if head == "workload":
                continue
            elif head == "distribution":
                distribution = parts[1]
            elif head == "count":
                count = int(parts[1])
            elif head == "horizon":
                horizon = int(parts[1])
            elif head == "seed":
                seed = int(parts[1])
            elif head == "arrival":
                # 'arrival poisson [rate=X]'
                for tok in parts[2:]:
                    if tok.startswith("rate="):
                        rate = float(tok[5:])
            elif head == "bucket":
                buckets.append((int(parts[1]), int(parts[2]), float(parts[3])))
            elif head == "attr":
                # 'attr NAME sum|max LO HI [temporal]'
                combine = parts[2]
                temporal = "temporal" in parts[5:]
                attrs.append(
                    GenAttribute(
                        name=parts[1],
                        combine=combine,
                        lo=float(parts[3]),
                        hi=float(parts[4]),
                        temporal=temporal,
                    )
                )
            else:
                raise WorkloadError(f"unknown directive '{head}'")
        except (IndexError, ValueError) as exc:
            raise WorkloadError(f"line {lineno}: {exc}") from None
    if distribution is None or count is None:
        raise WorkloadError("workload spec needs 'distribution' and 'count'")
    return WorkloadSpec(
        distribution=distribution,
        count=count,
        horizon=horizon,
        buckets=tuple(buckets) if buckets else None,
        attributes=tuple(attrs),
        seed=seed,
        arrival_rate=rate,
    )


def read_workload_spec(path: str | Path) -> WorkloadSpec:
    return loads_workload_spec(Path(path).read_text())

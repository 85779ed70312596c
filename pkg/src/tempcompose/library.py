"""Policy library: annotate, cluster, store and reuse learned compositions.

Every composed request set can be stored as a library entry holding the set
itself, its (global rank, overlap ratio) annotation, the dendrogram and its
cophenetic coefficient, the learned value cube and the extracted policy.  A
new set is matched against the library by comparing cophenetic coefficients;
good matches are reused either greedily (replay the stored visit sequence with
exact local optimization, no learning) or as an exploration bias inside the
on-policy cube learner: with probability mu a transition follows the stored
policy, otherwise the usual greedy/random split applies.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import composers as comp
from . import engine
from .cluster import ClusterTree, cluster, cophenetic, similarity_score
from .composers import Composition, Policy, PolicyStep, QCube, TraceStep
from .errors import CompositionError, LibraryError
from .kdindex import IndexedTempCPNet, global_rank
from .problem import CompositionProblem, EpisodeState
from .workload import (
    AttributeDef,
    RequestSet,
    dumps_requests,
    loads_requests,
    overlap_ratio,
    segment,
)

DEFAULT_THC = 0.8
DEFAULT_TMS = 0.8
DEFAULT_MU = 0.5
DEFAULT_EXTRA_EPISODES = 50


@dataclass(frozen=True)
class Annotation:
    """Per-request (global rank, overlap ratio) with normalization bounds."""

    rids: tuple[str, ...]
    gpr: tuple[float, ...]  # singleton global rank; worst+1 sentinel when unindexed
    ovr: tuple[float, ...]
    flagged: tuple[bool, ...]  # sentinel markers (singleton missed its index)

    def points(self) -> np.ndarray:
        """Min-max normalized (gpr, ovr) coordinates in [0, 1]^2."""

        def norm(vals: tuple[float, ...]) -> list[float]:
            lo, hi = min(vals), max(vals)
            if hi == lo:
                return [0.5] * len(vals)
            return [(v - lo) / (hi - lo) for v in vals]

        return np.column_stack([norm(self.gpr), norm(self.ovr)])


def annotate_set(request_set: RequestSet, inet: IndexedTempCPNet) -> Annotation:
    """Annotate each request with its singleton global rank and overlap ratio."""
    if not request_set.requests:
        raise CompositionError("cannot annotate an empty request set")
    segmented = [segment(r, inet.net) for r in request_set.requests]
    ranks: list[int | None] = [global_rank(inet, [sr]) for sr in segmented]
    feasible = [r for r in ranks if r is not None]
    sentinel = (max(feasible) if feasible else 0) + 1
    gpr = tuple(float(r) if r is not None else float(sentinel) for r in ranks)
    ovr = tuple(overlap_ratio(sr, inet.m) for sr in segmented)
    flagged = tuple(r is None for r in ranks)
    return Annotation(
        rids=tuple(r.rid for r in request_set.requests), gpr=gpr, ovr=ovr, flagged=flagged
    )


def annotation_tree(annotation: Annotation, linkage: str = "slink") -> ClusterTree:
    return cluster(annotation.points(), linkage)


@dataclass
class LibraryEntry:
    """One stored composition experience."""

    digest: str
    request_text: str  # canonical request-set serialization
    linkage: str
    coefficient: float | None
    annotation: Annotation
    tree_text: str
    cube: QCube
    policy: Policy
    composition_ids: tuple[str, ...]
    composition_pref: int

    def request_set(self) -> tuple[RequestSet, tuple[AttributeDef, ...]]:
        return loads_requests(self.request_text)


def build_entry(
    request_set: RequestSet,
    attrs: Sequence[AttributeDef],
    inet: IndexedTempCPNet,
    cube: QCube,
    policy: Policy,
    composition: Composition,
    linkage: str = "slink",
) -> LibraryEntry:
    annotation = annotate_set(request_set, inet)
    tree = annotation_tree(annotation, linkage)
    try:
        coeff: float | None = cophenetic(tree)
    except Exception:
        coeff = None
    text = dumps_requests(request_set, attrs)
    return LibraryEntry(
        digest=hashlib.sha256(text.encode()).hexdigest(),
        request_text=text,
        linkage=linkage,
        coefficient=coeff,
        annotation=annotation,
        tree_text=tree.to_text(),
        cube=cube,
        policy=policy,
        composition_ids=composition.accepted_ids,
        composition_pref=composition.pref,
    )


class PolicyLibrary:
    """Ordered collection of entries with directory persistence."""

    def __init__(self, entries: Sequence[LibraryEntry] = ()):
        self.entries: list[LibraryEntry] = list(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, entry: LibraryEntry):
        self.entries.append(entry)

    # -- persistence: one JSON file per entry plus an index file --------------

    def store(self, path: str | Path):
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        index = []
        for i, e in enumerate(self.entries):
            name = f"entry_{i:03d}_{e.digest[:12]}.json"
            payload = {
                "digest": e.digest,
                "request_text": e.request_text,
                "linkage": e.linkage,
                "coefficient": e.coefficient,
                "annotation": {
                    "rids": list(e.annotation.rids),
                    "gpr": list(e.annotation.gpr),
                    "ovr": list(e.annotation.ovr),
                    "flagged": list(e.annotation.flagged),
                },
                "tree_text": e.tree_text,
                "cube": {
                    "mode": e.cube.mode,
                    "m": e.cube.m,
                    "n_actions": list(e.cube.n_actions),
                    "alpha": e.cube.alpha,
                    "gamma": e.cube.gamma,
                    "eps": list(e.cube.eps),
                    "episode_cap": e.cube.episode_cap,
                    "episodes_run": e.cube.episodes_run,
                    "converged": e.cube.converged,
                    "seed": e.cube.seed,
                    "rows": [list(r) for r in e.cube.rows()],
                },
                "policy": [[s.order, s.interval, s.mask] for s in e.policy.steps],
                "composition_ids": list(e.composition_ids),
                "composition_pref": e.composition_pref,
            }
            (root / name).write_text(json.dumps(payload, sort_keys=True, indent=1))
            index.append({"file": name, "digest": e.digest, "coefficient": e.coefficient})
        (root / "index.json").write_text(json.dumps(index, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "PolicyLibrary":
        root = Path(path)
        index_file = root / "index.json"
        if not index_file.exists():
            return cls([])
        try:
            index = json.loads(index_file.read_text())
        except json.JSONDecodeError as exc:
            raise LibraryError(f"corrupt library index: {exc}") from None
        entries: list[LibraryEntry] = []
        for pos, item in enumerate(index):
            try:
                payload = json.loads((root / item["file"]).read_text())
                ann = payload["annotation"]
                cube = QCube.from_rows(
                    payload["cube"]["mode"],
                    payload["cube"]["m"],
                    payload["cube"]["n_actions"],
                    [tuple(r) for r in payload["cube"]["rows"]],
                    alpha=payload["cube"]["alpha"],
                    gamma=payload["cube"]["gamma"],
                    eps=tuple(payload["cube"]["eps"]),
                    episode_cap=payload["cube"]["episode_cap"],
                    episodes_run=payload["cube"]["episodes_run"],
                    converged=payload["cube"]["converged"],
                    seed=payload["cube"]["seed"],
                )
                entry = LibraryEntry(
                    digest=payload["digest"],
                    request_text=payload["request_text"],
                    linkage=payload["linkage"],
                    coefficient=payload["coefficient"],
                    annotation=Annotation(
                        rids=tuple(ann["rids"]),
                        gpr=tuple(ann["gpr"]),
                        ovr=tuple(ann["ovr"]),
                        flagged=tuple(ann["flagged"]),
                    ),
                    tree_text=payload["tree_text"],
                    cube=cube,
                    policy=Policy(
                        steps=tuple(
                            PolicyStep(order=o, interval=s, mask=mk)
                            for o, s, mk in payload["policy"]
                        )
                    ),
                    composition_ids=tuple(payload["composition_ids"]),
                    composition_pref=payload["composition_pref"],
                )
            except (KeyError, ValueError, TypeError, json.JSONDecodeError, OSError) as exc:
                raise LibraryError(f"corrupt library entry #{pos}: {exc}") from None
            actual = hashlib.sha256(entry.request_text.encode()).hexdigest()
            if actual != entry.digest:
                raise LibraryError(f"corrupt library entry #{pos}: digest mismatch")
            entries.append(entry)
        return cls(entries)


def find_similar(
    library: PolicyLibrary, coefficient: float | None, thc: float = DEFAULT_THC
) -> list[tuple[float, LibraryEntry]]:
    """Entries whose coefficient-similarity reaches thc, best first.

    An undefined coefficient (on either side) never matches; an empty result
    means compose from scratch.
    """
    if coefficient is None:
        return []
    scored = []
    for pos, entry in enumerate(library.entries):
        if entry.coefficient is None:
            continue
        score = similarity_score(coefficient, entry.coefficient)
        if score >= thc:
            scored.append((score, pos, entry))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [(s, e) for s, _, e in scored]


def map_actions(
    past_set: RequestSet,
    new_set: RequestSet,
    inet: IndexedTempCPNet,
    tms: float = DEFAULT_TMS,
) -> dict[str, str]:
    """Greedy one-to-one matching of past requests onto new requests.

    Pair similarity is 1 minus the mean per-interval distance of the two
    requests' semantic footprints: intervals where exactly one request is
    active count as distance 1, shared intervals average the normalized
    level-ordinal gap per attribute.  Pairs below tms stay unmapped.
    """
    schema = inet.schema
    tables = inet.net.tables

    def footprint(rs: RequestSet) -> dict[str, list[tuple[int, ...] | None]]:
        out: dict[str, list[tuple[int, ...] | None]] = {}
        for r in rs.requests:
            sr = segment(r, inet.net)
            per_interval: list[tuple[int, ...] | None] = []
            for i, seg in enumerate(sr.segments):
                if seg is None:
                    per_interval.append(None)
                    continue
                ords = tuple(
                    tables[i].try_level_of(a.name, seg.values[a.name])
                    for a in schema.attributes
                )
                per_interval.append(ords)
            out[r.rid] = per_interval
        return out

    past_fp = footprint(past_set)
    new_fp = footprint(new_set)

    def pair_similarity(p: str, n: str) -> float:
        total = 0.0
        for fa, fb in zip(past_fp[p], new_fp[n]):
            if fa is None and fb is None:
                continue
            if fa is None or fb is None:
                total += 1.0
                continue
            gaps = []
            for attr, oa, ob in zip(schema.attributes, fa, fb):
                span = len(attr.levels) - 1
                if oa is None or ob is None:
                    gaps.append(1.0)
                elif span == 0:
                    gaps.append(0.0)
                else:
                    gaps.append(abs(oa - ob) / span)
            total += sum(gaps) / len(gaps)
        return 1.0 - total / inet.m

    pairs = [
        (pair_similarity(p.rid, n.rid), p.rid, n.rid)
        for p in past_set.requests
        for n in new_set.requests
    ]
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    mapping: dict[str, str] = {}
    used_new: set[str] = set()
    for sim, p, n in pairs:
        if sim < tms:
            break
        if p in mapping or n in used_new:
            continue
        mapping[p] = n
        used_new.add(n)
    return mapping


def translate_policy(
    entry: LibraryEntry,
    new_problem: CompositionProblem,
    inet: IndexedTempCPNet,
    tms: float = DEFAULT_TMS,
) -> Policy:
    """Re-express a stored policy in the new set's request indices.

    Unmapped past requests drop out of the stored actions; unmapped new
    requests are left to fresh exploration.
    """
    past_set, _ = entry.request_set()
    mapping = map_actions(past_set, new_problem.requests, inet, tms)
    past_index = {r.rid: i for i, r in enumerate(past_set.requests)}
    new_index = {r.rid: i for i, r in enumerate(new_problem.requests.requests)}
    steps = []
    for step in entry.policy.steps:
        mask = 0
        for rid, i in past_index.items():
            if step.mask & (1 << i) and rid in mapping:
                mask |= 1 << new_index[mapping[rid]]
        steps.append(PolicyStep(order=step.order, interval=step.interval, mask=mask))
    return Policy(steps=tuple(steps))


def greedy_reuse(entry: LibraryEntry, problem: CompositionProblem) -> Composition:
    """Replay the stored visit sequence with exact local optimization.

    No learning happens: in each interval of the stored temporal sequence the
    locally best feasible action (maximum reward, ties to the smallest mask)
    is taken, and leftovers are rejected going forward.
    """
    sequence = entry.policy.visit_sequence()
    if len(sequence) != problem.m or sorted(sequence) != list(range(problem.m)):
        sequence = tuple(range(problem.m))  # stored plan does not cover this model
    state = EpisodeState()
    trace: list[TraceStep] = []
    for pos, s in enumerate(sequence):
        committed = problem.committed(state, s)
        best_mask, best_reward = committed, problem.reward(s, committed)
        for j, mv in enumerate(problem.tables[s].masks.tolist()):
            mask = int(mv)
            if mask & state.rejected:
                continue
            if (mask & committed) != committed:
                continue
            r = float(problem.tables[s].rewards[j])
            if r > best_reward and problem.prospectively_feasible(state.accepted, s, mask):
                best_mask, best_reward = mask, r
        problem.apply_action(state, s, best_mask)
        trace.append(TraceStep(order=pos, interval=s, mask=best_mask, reward=best_reward))
    scored = problem.evaluate(state.accepted)
    pref, raw = scored
    return Composition(
        accepted_ids=problem.ids_of_mask(state.accepted),
        accepted_mask=state.accepted,
        pref=pref,
        raw_rank=raw,
        trace=tuple(trace),
    )


@dataclass(frozen=True)
class ReuseParams:
    thc: float = DEFAULT_THC
    tms: float = DEFAULT_TMS
    mu: float = DEFAULT_MU
    extra_episodes: int = DEFAULT_EXTRA_EPISODES

    def __post_init__(self):
        for name in ("thc", "tms", "mu"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise CompositionError(f"{name} must be in [0, 1], got {v}")
        if self.extra_episodes < 0:
            raise CompositionError("extra_episodes must be >= 0")


def reuse_compose(
    library: PolicyLibrary,
    problem: CompositionProblem,
    inet: IndexedTempCPNet,
    params: ReuseParams = ReuseParams(),
    alpha: float = comp.DEFAULT_ALPHA,
    gamma: float = comp.DEFAULT_GAMMA,
    epsilon=None,
    seed: int = 0,
    tol: float = comp.DEFAULT_TOL,
    record_trace: bool = False,
):
    """On-policy cube learning biased by the best-matching stored policy.

    Runs len(library) + extra_episodes episodes.  Each transition follows the
    stored policy with probability mu, the current greedy policy with
    (1 - mu) * greediness, and explores randomly otherwise.  With mu = 0 the
    run is identical to plain on-policy cube learning under the same seed and
    budget.  Returns (Composition, QCube[, trace]).
    """
    episodes = len(library) + params.extra_episodes
    past: Policy | None = None
    mu = params.mu
    if mu > 0 and library.entries:
        annotation = annotate_set(problem.requests, inet)
        try:
            coeff = cophenetic(annotation_tree(annotation))
        except Exception:
            coeff = None
        matches = find_similar(library, coeff, params.thc)
        if matches:
            past = translate_policy(matches[0][1], problem, inet, params.tms)
        else:
            mu = 0.0  # nothing similar enough: compose from scratch
    elif mu > 0:
        mu = 0.0
    cube, trace = comp.run_learner(
        problem,
        engine.Q3D_ON,
        "q3d_reuse",
        alpha,
        gamma,
        epsilon,
        episodes,
        seed,
        tol,
        mu=mu,
        past=past,
        record_trace=record_trace,
    )
    _, composition = comp.extract_policy(problem, cube)
    return (composition, cube, trace) if record_trace else (composition, cube)

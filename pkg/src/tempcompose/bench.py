"""Benchmark harness: seeded grids of (model x workload x composer) runs.

Each grid cell composes one synthetic request set with one composer and
reports the achieved score, the exact-oracle score (when the instance is
small enough for exact search), and their ratio NP in (0, 1] — 1.0 means the
composer matched the oracle.  Rows stream into a deterministic CSV; wall
times are recorded only when timing is switched on, since measured times are
not byte-reproducible.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import composers as comp
from .errors import CompositionError, TempComposeError
from .kdindex import IndexedTempCPNet
from .library import PolicyLibrary, ReuseParams, reuse_compose
from .modelfile import load_tempcp_path
from .problem import CompositionProblem
from .workload import (
    GenAttribute,
    RequestSet,
    WorkloadSpec,
    generate_workload,
    read_requests,
    read_workload_spec,
)

CSV_HEADER = (
    "instance,distribution,n,composer,pref,oracle_pref,np,episodes,visited,wall_ms,error"
)

COMPOSER_NAMES = (
    "brute_force",
    "dp",
    "heuristic_ltr",
    "heuristic_rtl",
    "heuristic_random",
    "q2d",
    "sarsa",
    "q3d_on",
    "q3d_off",
    "reuse",
    "greedy_reuse",
)


def np_metric(achieved: int | None, oracle: int) -> float | None:
    """Normalized preference: oracle score / achieved score, 1.0 = optimal."""
    if oracle <= 0:
        raise CompositionError(f"oracle score must be positive, got {oracle}")
    if achieved is None:
        return None
    return oracle / achieved


def bootstrap_ci(
    values: Sequence[float], iters: int = 2000, seed: int = 0, level: float = 0.95
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of `values`."""
    vals = np.asarray(list(values), dtype=float)
    if len(vals) == 0:
        return (float("nan"), float("nan"))
    rng = np.random.default_rng(seed)
    means = np.array(
        [vals[rng.integers(0, len(vals), len(vals))].mean() for _ in range(iters)]
    )
    lo = (1.0 - level) / 2.0
    return (float(np.quantile(means, lo)), float(np.quantile(means, 1.0 - lo)))


@dataclass(frozen=True)
class ReportRow:
    instance: str
    distribution: str
    n: int
    composer: str
    pref: int | None
    oracle_pref: int | None
    np_value: float | None
    episodes: int
    visited: int
    wall_ms: float | None
    error: str = ""

    def to_csv(self) -> str:
        def num(x, fmt="{}"):
            return "" if x is None else fmt.format(x)

        return ",".join(
            [
                self.instance,
                self.distribution,
                str(self.n),
                self.composer,
                num(self.pref),
                num(self.oracle_pref),
                num(self.np_value, "{:.6f}"),
                str(self.episodes),
                str(self.visited),
                "0" if self.wall_ms is None else f"{self.wall_ms:.3f}",
                self.error.replace(",", ";").replace("\n", " "),
            ]
        )


@dataclass
class ComposerSpec:
    name: str
    alpha: float = comp.DEFAULT_ALPHA
    gamma: float = comp.DEFAULT_GAMMA
    epsilon: float | None = None
    episodes: int | None = None
    seed_offset: int = 0
    mu: float = 0.5
    extra_episodes: int = comp.EPISODES_PER_INTERVAL
    thc: float = 0.8
    tms: float = 0.8

    def label(self) -> str:
        return self.name


@dataclass
class RunConfig:
    models: tuple[str, ...]
    composers: tuple[ComposerSpec, ...]
    workload_specs: tuple[WorkloadSpec, ...] = ()
    request_files: tuple[str, ...] = ()
    oracle_cap: int = comp.ORACLE_CAP
    timing: bool = False
    library_path: str | None = None
    out: str | None = None

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise CompositionError(f"bad run config: {exc}") from None
        base = Path(path).resolve().parent

        def resolve(p):
            q = Path(p)
            return str(q if q.is_absolute() else (base / q))

        models = tuple(
            resolve(m)
            for m in (raw.get("models") or ([raw["model"]] if "model" in raw else ()))
        )
        if not models:
            raise CompositionError("run config names no model")
        composers = tuple(
            ComposerSpec(
                name=c["name"],
                alpha=c.get("alpha", comp.DEFAULT_ALPHA),
                gamma=c.get("gamma", comp.DEFAULT_GAMMA),
                epsilon=c.get("epsilon"),
                episodes=c.get("episodes"),
                seed_offset=c.get("seed_offset", 0),
                mu=c.get("mu", 0.5),
                extra_episodes=c.get("extra_episodes", comp.EPISODES_PER_INTERVAL),
                thc=c.get("thc", 0.8),
                tms=c.get("tms", 0.8),
            )
            for c in raw.get("composers", [{"name": "q3d_on"}])
        )
        for c in composers:
            if c.name not in COMPOSER_NAMES:
                raise CompositionError(f"unknown composer '{c.name}'")
        specs: list[WorkloadSpec] = []
        grid = raw.get("grid")
        if grid:
            attrs = tuple(
                GenAttribute(
                    name=a["name"],
                    lo=a["lo"],
                    hi=a["hi"],
                    combine=a.get("combine", "sum"),
                    temporal=a.get("temporal", False),
                )
                for a in grid["attributes"]
            )
            for dist in grid.get("distributions", ["normal"]):
                for size in grid.get("sizes", [10]):
                    for seed in grid.get("seeds", [0]):
                        specs.append(
                            WorkloadSpec(
                                distribution=dist,
                                count=size,
                                attributes=attrs,
                                horizon=grid.get("horizon", 12),
                                seed=seed,
                            )
                        )
        for spec_path in raw.get("workloads", []):
            specs.append(read_workload_spec(resolve(spec_path)))
        library = raw.get("library")
        return cls(
            models=models,
            composers=composers,
            workload_specs=tuple(specs),
            request_files=tuple(resolve(f) for f in raw.get("request_files", ())),
            oracle_cap=raw.get("oracle_cap", comp.ORACLE_CAP),
            timing=raw.get("timing", False),
            library_path=resolve(library) if library else None,
            out=raw.get("out"),
        )


def _run_composer(
    spec: ComposerSpec,
    problem: CompositionProblem,
    inet: IndexedTempCPNet,
    seed: int,
    library: PolicyLibrary | None,
) -> tuple[comp.Composition, int, int]:
    """Returns (composition, episodes_run, visited_triples)."""
    name = spec.name
    run_seed = seed + spec.seed_offset
    if name == "brute_force":
        return comp.brute_force(problem), 0, 0
    if name == "dp":
        return comp.dp_compose(problem), 0, 0
    if name.startswith("heuristic"):
        order = {
            "heuristic_ltr": "left_to_right",
            "heuristic_rtl": "right_to_left",
            "heuristic_random": "random",
        }[name]
        return comp.heuristic_compose(problem, order, seed=run_seed), 0, 0
    if name == "q2d":
        c, cube = comp.q2d_compose(
            problem, spec.alpha, spec.gamma, spec.epsilon, spec.episodes, run_seed
        )
        return c, cube.episodes_run, cube.visited_triples
    if name == "sarsa":
        c, cube = comp.sarsa_compose(
            problem, spec.alpha, spec.gamma, spec.epsilon, spec.episodes, run_seed
        )
        return c, cube.episodes_run, cube.visited_triples
    if name in ("q3d_on", "q3d_off"):
        mode = "on_policy" if name == "q3d_on" else "off_policy"
        c, cube = comp.q3d_compose(
            problem, mode, spec.alpha, spec.gamma, spec.epsilon, spec.episodes, run_seed
        )
        return c, cube.episodes_run, cube.visited_triples
    if name == "reuse":
        if library is None:
            raise CompositionError("composer 'reuse' needs a library path")
        params = ReuseParams(
            thc=spec.thc, tms=spec.tms, mu=spec.mu, extra_episodes=spec.extra_episodes
        )
        c, cube = reuse_compose(
            library, problem, inet, params, spec.alpha, spec.gamma, spec.epsilon, run_seed
        )
        return c, cube.episodes_run, cube.visited_triples
    if name == "greedy_reuse":
        if library is None or not len(library):
            raise CompositionError("composer 'greedy_reuse' needs a non-empty library")
        from .library import annotate_set, annotation_tree, find_similar, greedy_reuse
        from .cluster import cophenetic

        try:
            coeff = cophenetic(annotation_tree(annotate_set(problem.requests, inet)))
        except TempComposeError:
            coeff = None
        matches = find_similar(library, coeff, thc=0.0)
        if not matches:
            raise CompositionError("no library entry with a defined coefficient")
        return greedy_reuse(matches[0][1], problem), 0, 0
    raise CompositionError(f"unknown composer '{name}'")


def run_bench(config: RunConfig) -> list[ReportRow]:
    rows: list[ReportRow] = []
    library = PolicyLibrary.load(config.library_path) if config.library_path else None
    for model_path in config.models:
        net = load_tempcp_path(model_path)
        inet = IndexedTempCPNet(net)
        instances: list[tuple[str, str, RequestSet]] = []
        for spec in config.workload_specs:
            rs = generate_workload(spec)
            iid = f"{Path(model_path).stem}-{spec.distribution}-n{spec.count}-s{spec.seed}"
            instances.append((iid, spec.distribution, rs))
        for fpath in config.request_files:
            rs, _ = read_requests(fpath)
            iid = f"{Path(model_path).stem}-{Path(fpath).stem}"
            instances.append((iid, rs.distribution or "file", rs))
        for iid, dist, rs in instances:
            try:
                problem = CompositionProblem(inet, rs)
            except TempComposeError as exc:
                for cspec in config.composers:
                    rows.append(
                        ReportRow(iid, dist, len(rs), cspec.label(), None, None, None, 0, 0,
                                  None, error=str(exc))
                    )
                continue
            oracle: int | None = None
            if len(rs) <= config.oracle_cap:
                oracle = comp.dp_compose(problem, cap=config.oracle_cap).pref
            for cspec in config.composers:
                seed = rs.seed if rs.seed is not None else 0
                started = time.perf_counter()
                try:
                    composition, episodes, visited = _run_composer(
                        cspec, problem, inet, seed, library
                    )
                except TempComposeError as exc:
                    rows.append(
                        ReportRow(iid, dist, len(rs), cspec.label(), None, oracle, None,
                                  0, 0, None, error=str(exc))
                    )
                    continue
                wall = (time.perf_counter() - started) * 1000.0 if config.timing else None
                np_v = np_metric(composition.pref, oracle) if oracle is not None else None
                rows.append(
                    ReportRow(
                        instance=iid,
                        distribution=dist,
                        n=len(rs),
                        composer=cspec.label(),
                        pref=composition.pref,
                        oracle_pref=oracle,
                        np_value=np_v,
                        episodes=episodes,
                        visited=visited,
                        wall_ms=wall,
                    )
                )
    return rows


def rows_to_csv(rows: Iterable[ReportRow]) -> str:
    out = [CSV_HEADER]
    out.extend(r.to_csv() for r in rows)
    return "\n".join(out) + "\n"


def read_rows_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(rows: Iterable[dict | ReportRow]) -> list[dict]:
    """Mean NP (with bootstrap CI), episodes and visits per composer group."""
    groups: dict[tuple[str, str, str], list[dict]] = {}
    for r in rows:
        if isinstance(r, ReportRow):
            rec = {
                "distribution": r.distribution,
                "n": str(r.n),
                "composer": r.composer,
                "np": "" if r.np_value is None else f"{r.np_value:.6f}",
                "episodes": str(r.episodes),
                "visited": str(r.visited),
                "wall_ms": "0" if r.wall_ms is None else f"{r.wall_ms:.3f}",
                "error": r.error,
            }
        else:
            rec = r
        key = (rec["distribution"], rec["n"], rec["composer"])
        groups.setdefault(key, []).append(rec)
    out: list[dict] = []
    for (dist, n, composer) in sorted(groups):
        recs = groups[(dist, n, composer)]
        np_vals = [float(r["np"]) for r in recs if r["np"]]
        mean_np = sum(np_vals) / len(np_vals) if np_vals else None
        ci = bootstrap_ci(np_vals) if np_vals else (None, None)
        out.append(
            {
                "distribution": dist,
                "n": n,
                "composer": composer,
                "runs": len(recs),
                "errors": sum(1 for r in recs if r["error"]),
                "mean_np": None if mean_np is None else round(mean_np, 6),
                "np_ci_lo": None if ci[0] is None else round(ci[0], 6),
                "np_ci_hi": None if ci[1] is None else round(ci[1], 6),
                "mean_episodes": round(
                    sum(int(r["episodes"]) for r in recs) / len(recs), 1
                ),
                "mean_visited": round(sum(int(r["visited"]) for r in recs) / len(recs), 1),
                "mean_wall_ms": round(
                    sum(float(r["wall_ms"]) for r in recs) / len(recs), 3
                ),
            }
        )
    return out


def summary_to_csv(summary: list[dict]) -> str:
    cols = (
        "distribution,n,composer,runs,errors,mean_np,np_ci_lo,np_ci_hi,"
        "mean_episodes,mean_visited,mean_wall_ms"
    )
    lines = [cols]
    for s in summary:
        lines.append(
            ",".join("" if s[c] is None else str(s[c]) for c in cols.split(","))
        )
    return "\n".join(lines) + "\n"

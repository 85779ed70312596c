"""Command-line front end.

Subcommands: gen (synthesize a workload), rank (score a subset), compose (run
one composer), learn (compose and store the experience), reuse (compose with
the policy library), bench (run a seeded grid), report (summarize a rows CSV).
All outputs are byte-reproducible under fixed seeds; `bench --timing real`
opts into measured wall times, which are not.

Exit codes: 0 success, 2 usage, 3 invalid input, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__, composers as comp, engine
from .bench import (
    RunConfig,
    read_rows_csv,
    rows_to_csv,
    run_bench,
    summarize,
    summary_to_csv,
)
from .cluster import cophenetic
from .errors import TempComposeError
from .kdindex import IndexedTempCPNet, global_rank
from .library import (
    PolicyLibrary,
    ReuseParams,
    annotate_set,
    annotation_tree,
    build_entry,
    find_similar,
    greedy_reuse,
    reuse_compose,
)
from .modelfile import load_tempcp_path
from .problem import CompositionProblem
from .workload import (
    generate_workload,
    read_requests,
    read_workload_spec,
    dumps_requests,
    segment,
)

LIBRARY_ENV = "TEMPCOMPOSE_LIBRARY"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_RUNTIME = 4


def _write_out(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_problem(model_path: str, requests_path: str):
    net = load_tempcp_path(model_path)
    inet = IndexedTempCPNet(net)
    rs, attrs = read_requests(requests_path)
    return inet, rs, attrs, CompositionProblem(inet, rs)


def _attr_defs_from_spec(spec):
    from .cpnet import AttributeDef

    return tuple(
        AttributeDef(
            name=a.name, levels=("lo", "hi"), combine=a.combine, temporal=a.temporal
        )
        for a in spec.attributes
    )


def cmd_gen(args) -> int:
    spec = read_workload_spec(args.spec)
    if args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
    rs = generate_workload(spec)
    text = dumps_requests(rs, _attr_defs_from_spec(spec))
    _write_out(text, args.out)
    return EXIT_OK


def cmd_rank(args) -> int:
    inet, rs, _, problem = _load_problem(args.model, args.requests)
    if args.ids:
        ids = [s for s in args.ids.split(",") if s]
    else:
        ids = [r.rid for r in rs.requests]
    mask = problem.mask_of_ids(ids)
    segmented = [segment(rs.by_id(rid), inet.net) for rid in ids]
    raw = global_rank(inet, segmented)
    scored = problem.evaluate(mask)
    lines = ["ids,feasible,raw_rank,pref"]
    if scored is None:
        lines.append(f"{'+'.join(ids)},no,,")
    else:
        lines.append(f"{'+'.join(ids)},yes,{raw},{scored[0]}")
    _write_out("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _composition_report(composition, cube=None) -> str:
    lines = ["field,value"]
    lines.append(f"accepted,{'+'.join(composition.accepted_ids)}")
    lines.append(f"pref,{composition.pref}")
    lines.append(f"raw_rank,{composition.raw_rank}")
    if cube is not None:
        lines.append(f"episodes,{cube.episodes_run}")
        lines.append(f"converged,{str(cube.converged).lower()}")
        lines.append(f"visited,{cube.visited_triples}")
    order = "+".join(str(t.interval) for t in composition.trace)
    lines.append(f"visit_order,{order}")
    return "\n".join(lines) + "\n"


def _run_one(problem, args):
    name = args.composer
    if name == "brute_force":
        return comp.brute_force(problem, cap=args.cap), None
    if name == "dp":
        return comp.dp_compose(problem, cap=args.cap), None
    if name.startswith("heuristic"):
        order = {
            "heuristic_ltr": "left_to_right",
            "heuristic_rtl": "right_to_left",
            "heuristic_random": "random",
        }[name]
        return comp.heuristic_compose(problem, order, seed=args.seed), None
    common = dict(
        alpha=args.alpha,
        gamma=args.gamma,
        epsilon=args.epsilon,
        episodes=args.episodes,
        seed=args.seed,
    )
    if name == "q2d":
        return comp.q2d_compose(problem, **common)
    if name == "sarsa":
        return comp.sarsa_compose(problem, **common)
    if name == "q3d_on":
        return comp.q3d_compose(problem, "on_policy", **common)
    if name == "q3d_off":
        return comp.q3d_compose(problem, "off_policy", **common)
    raise TempComposeError(f"unknown composer '{name}'")


def cmd_compose(args) -> int:
    _, _, _, problem = _load_problem(args.model, args.requests)
    composition, cube = _run_one(problem, args)
    _write_out(_composition_report(composition, cube), args.out)
    return EXIT_OK


def cmd_learn(args) -> int:
    inet, rs, attrs, problem = _load_problem(args.model, args.requests)
    mode = "on_policy" if args.composer != "q3d_off" else "off_policy"
    composition, cube = comp.q3d_compose(
        problem,
        mode,
        alpha=args.alpha,
        gamma=args.gamma,
        epsilon=args.epsilon,
        episodes=args.episodes,
        seed=args.seed,
    )
    policy, _ = comp.extract_policy(problem, cube)
    entry = build_entry(rs, attrs, inet, cube, policy, composition, linkage=args.linkage)
    library = PolicyLibrary.load(args.library)
    library.add(entry)
    library.store(args.library)
    report = _composition_report(composition, cube)
    report += f"library_size,{len(library)}\n"
    report += f"entry_digest,{entry.digest[:12]}\n"
    _write_out(report, args.out)
    return EXIT_OK


def cmd_reuse(args) -> int:
    inet, rs, _, problem = _load_problem(args.model, args.requests)
    library = PolicyLibrary.load(args.library)
    params = ReuseParams(
        thc=args.thc, tms=args.tms, mu=args.mu, extra_episodes=args.extra_episodes
    )
    if args.greedy:
        try:
            coeff = cophenetic(annotation_tree(annotate_set(rs, inet)))
        except TempComposeError:
            coeff = None
        matches = find_similar(library, coeff, params.thc)
        if not matches:
            raise TempComposeError("no similar library entry; compose from scratch instead")
        composition = greedy_reuse(matches[0][1], problem)
        _write_out(_composition_report(composition), args.out)
        return EXIT_OK
    composition, cube = reuse_compose(
        library,
        problem,
        inet,
        params,
        alpha=args.alpha,
        gamma=args.gamma,
        epsilon=args.epsilon,
        seed=args.seed,
    )
    _write_out(_composition_report(composition, cube), args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    config = RunConfig.from_json(args.config)
    if args.timing is not None:
        config.timing = args.timing == "real"
    if args.library:
        config.library_path = args.library
    rows = run_bench(config)
    text = rows_to_csv(rows)
    _write_out(text, args.out or config.out)
    return EXIT_OK


def cmd_report(args) -> int:
    rows = read_rows_csv(args.rows)
    _write_out(summary_to_csv(summarize(rows)), args.out)
    return EXIT_OK


def cmd_engine(args) -> int:
    _write_out(f"engine,{engine.ENGINE}\navailable,{'+'.join(engine.available_lanes())}\n", args.out)
    return EXIT_OK


def _add_common_learn_flags(p):
    p.add_argument("--alpha", type=float, default=comp.DEFAULT_ALPHA)
    p.add_argument("--gamma", type=float, default=comp.DEFAULT_GAMMA)
    p.add_argument(
        "--epsilon",
        type=float,
        default=None,
        help="fixed exploration probability (default: linear 0.9 -> 0.05 decay)",
    )
    p.add_argument("--episodes", type=int, default=None, help="episode budget (default 500*m)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tempcompose",
        description="Qualitative request composition under temporal preference models",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a request set from a workload spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the spec's seed")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("rank", help="score a request subset against a model")
    p.add_argument("--model", required=True)
    p.add_argument("--requests", required=True)
    p.add_argument("--ids", default=None, help="comma-separated request ids (default: all)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("compose", help="run one composer on one instance")
    p.add_argument("--model", required=True)
    p.add_argument("--requests", required=True)
    p.add_argument(
        "--composer",
        default="q3d_on",
        choices=[
            "brute_force", "dp", "heuristic_ltr", "heuristic_rtl",
            "heuristic_random", "q2d", "sarsa", "q3d_on", "q3d_off",
        ],
    )
    _add_common_learn_flags(p)
    p.add_argument("--cap", type=int, default=comp.ORACLE_CAP,
                   help="request cap for the exact composers")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("learn", help="compose and store the experience in the library")
    p.add_argument("--model", required=True)
    p.add_argument("--requests", required=True)
    p.add_argument("--composer", default="q3d_on", choices=["q3d_on", "q3d_off"])
    p.add_argument("--library", default=os.environ.get(LIBRARY_ENV, "library"))
    p.add_argument("--linkage", default="slink", choices=["slink", "clink", "upgma"])
    _add_common_learn_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("reuse", help="compose a new set using the policy library")
    p.add_argument("--model", required=True)
    p.add_argument("--requests", required=True)
    p.add_argument("--library", default=os.environ.get(LIBRARY_ENV, "library"))
    p.add_argument("--mu", type=float, default=0.5, help="past-policy exploitation probability")
    p.add_argument("--thc", type=float, default=0.8, help="similarity threshold")
    p.add_argument("--tms", type=float, default=0.8, help="action-mapping threshold")
    p.add_argument("--extra-episodes", type=int, default=comp.EPISODES_PER_INTERVAL)
    p.add_argument("--greedy", action="store_true", help="greedy replay, no learning")
    _add_common_learn_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_reuse)

    p = sub.add_parser("bench", help="run a benchmark grid from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--timing", choices=["off", "real"], default=None)
    p.add_argument("--library", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="summarize a bench rows CSV")
    p.add_argument("--rows", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("engine", help="show which episode kernel is active")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_engine)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except TempComposeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - runtime failures get a distinct code
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

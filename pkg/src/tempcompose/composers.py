"""Composers: select the request subset that best matches the provider model.

All composers minimize the same score ("pref"): the sum over intervals of the
local rank of the accepted aggregate, with q_i + 1 charged for intervals left
empty.  Exact baselines (brute force, memoized search) enumerate subsets;
sequential composers visit intervals one at a time — a greedy heuristic, flat
Q-learning (off-policy and SARSA), and the order-aware cube learner Q[s, a, o]
in off-policy and on-policy variants.  The on-policy variant visits each
interval once per episode and prunes actions containing requests already
rejected in the episode.

Learned tables turn into compositions through deterministic greedy rollouts
that respect commitments, rejections, and cross-interval feasibility, so every
returned composition is feasible by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import engine
from .engine.qcore_py import SplitMix
from .errors import CompositionError
from .problem import CompositionProblem, EpisodeState, lex_mask_less

DEFAULT_ALPHA = 0.5
DEFAULT_GAMMA = 0.9
DEFAULT_EPS = (0.9, 0.05)  # linear exploration decay across the episode budget
DEFAULT_TOL = 1e-6
EPISODES_PER_INTERVAL = 500
ORACLE_CAP = 20

HEURISTIC_ORDERS = ("left_to_right", "right_to_left", "random")


@dataclass(frozen=True)
class TraceStep:
    order: int  # 0-based position in the visit sequence
    interval: int
    mask: int
    reward: float


@dataclass(frozen=True)
class Composition:
    """A feasible selection of requests with its achieved score."""

    accepted_ids: tuple[str, ...]
    accepted_mask: int
    pref: int  # penalized score (empty intervals charged q_i + 1)
    raw_rank: int  # plain sum of local ranks over occupied intervals
    trace: tuple[TraceStep, ...] = ()


@dataclass(frozen=True)
class PolicyStep:
    order: int
    interval: int
    mask: int


@dataclass(frozen=True)
class Policy:
    steps: tuple[PolicyStep, ...]

    def visit_sequence(self) -> tuple[int, ...]:
        return tuple(s.interval for s in self.steps)

    def as_arrays(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        states = np.full(m, -1, dtype=np.int32)
        masks = np.zeros(m, dtype=np.uint64)
        for step in self.steps:
            if step.order < m:
                states[step.order] = step.interval
                masks[step.order] = step.mask
        return states, masks


@dataclass
class QCube:
    """Learned value table plus run statistics.

    Flat modes store Q[state, action]; cube modes store Q[state, action,
    order] laid out q[(offset[s]+j)*m + o].
    """

    mode: str
    m: int
    n_actions: tuple[int, ...]
    offsets: tuple[int, ...]
    q: np.ndarray
    visits: np.ndarray
    alpha: float
    gamma: float
    eps: tuple[float, float]
    episode_cap: int
    episodes_run: int
    converged: bool
    seed: int

    @property
    def three_d(self) -> bool:
        return self.mode in ("q3d_off", "q3d_on", "q3d_reuse")

    @property
    def stride(self) -> int:
        return self.m if self.three_d else 1

    def value(self, s: int, j: int, o: int = 0) -> float:
        return float(self.q[(self.offsets[s] + j) * self.stride + (o if self.three_d else 0)])

    @property
    def visited_triples(self) -> int:
        return int(np.count_nonzero(self.visits))

    def rows(self) -> list[tuple[int, int, int, float, int]]:
        """Sparse (state, action, order, value, visits) rows for persistence."""
        out = []
        for s in range(self.m):
            for j in range(self.n_actions[s]):
                for o in range(self.stride):
                    idx = (self.offsets[s] + j) * self.stride + o
                    v = float(self.q[idx])
                    c = int(self.visits[idx])
                    if v != 0.0 or c != 0:
                        out.append((s, j, o, v, c))
        return out

    @classmethod
    def from_rows(
        cls,
        mode: str,
        m: int,
        n_actions: Sequence[int],
        rows: Iterable[tuple[int, int, int, float, int]],
        **meta,
    ) -> "QCube":
        offsets = []
        total = 0
        for n in n_actions:
            offsets.append(total)
            total += n
        stride = m if mode in ("q3d_off", "q3d_on", "q3d_reuse") else 1
        q = np.zeros(total * stride, dtype=np.float64)
        visits = np.zeros(total * stride, dtype=np.int64)
        for s, j, o, v, c in rows:
            idx = (offsets[s] + j) * stride + o
            q[idx] = v
            visits[idx] = c
        defaults = dict(
            alpha=DEFAULT_ALPHA,
            gamma=DEFAULT_GAMMA,
            eps=DEFAULT_EPS,
            episode_cap=0,
            episodes_run=0,
            converged=False,
            seed=0,
        )
        defaults.update(meta)
        return cls(
            mode=mode,
            m=m,
            n_actions=tuple(int(x) for x in n_actions),
            offsets=tuple(offsets),
            q=q,
            visits=visits,
            **defaults,
        )


# ---------------------------------------------------------------------------
# exact composers
# ---------------------------------------------------------------------------


def _composition_from_mask(
    problem: CompositionProblem, mask: int, visit_order: Sequence[int] | None = None
) -> Composition:
    scored = problem.evaluate(mask)
    if scored is None:
        raise CompositionError("composition is infeasible (unindexed aggregate)")
    pref, raw = scored
    order = list(visit_order) if visit_order is not None else list(range(problem.m))
    trace = []
    for pos, s in enumerate(order):
        sub = mask & problem.candidates[s]
        reward = problem.reward(s, sub)
        trace.append(TraceStep(order=pos, interval=s, mask=sub, reward=reward))
    return Composition(
        accepted_ids=problem.ids_of_mask(mask),
        accepted_mask=mask,
        pref=pref,
        raw_rank=raw,
        trace=tuple(trace),
    )


def brute_force(problem: CompositionProblem, cap: int = ORACLE_CAP) -> Composition:
    """Enumerate all subsets; minimal pref wins, ties to the smallest id set."""
    if problem.n > cap:
        raise CompositionError(f"brute force capped at {cap} requests, got {problem.n}")
    best_mask = 0
    best = problem.evaluate(0)[0]
    for mask in range(1, 1 << problem.n):
        scored = problem.evaluate(mask)
        if scored is None:
            continue
        pref = scored[0]
        if pref < best or (pref == best and lex_mask_less(mask, best_mask)):
            best = pref
            best_mask = mask
    return _composition_from_mask(problem, best_mask)


def dp_compose(problem: CompositionProblem, cap: int = ORACLE_CAP) -> Composition:
    """Exact accept/reject recursion with memoized aggregate states.

    Subproblems repeat whenever two accepted prefixes leave identical
    committed aggregates per interval; the memo table collapses them.  A
    branch dies as soon as a summed attribute overflows its domain top, since
    supersets cannot come back in range.  Matches brute_force exactly,
    including the tie-break.
    """
    if problem.n > cap:
        raise CompositionError(f"exact search capped at {cap} requests, got {problem.n}")
    schema = problem.inet.schema
    sum_attrs = [a.name for a in schema.attributes if a.combine == "sum"]
    max_attrs = [a.name for a in schema.attributes if a.combine == "max"]
    tops = [
        {a.name: problem.inet.net.tables[i].breaks(a.name)[-1] for a in schema.attributes}
        for i in range(problem.m)
    ]
    seg = [
        {
            i: problem.segmented[r].segments[i]
            for i in problem.spans[r]
        }
        for r in range(problem.n)
    ]

    empty_state = tuple(None for _ in range(problem.m))
    memo: dict[tuple, tuple[int, int] | None] = {}

    def accept_state(state, r):
        out = list(state)
        for i, s in seg[r].items():
            cur = state[i]
            if cur is None:
                sums = tuple(s.values[a] for a in sum_attrs)
                maxes = tuple(s.values[a] for a in max_attrs)
                cont = s.continues
            else:
                sums = tuple(c + s.values[a] for c, a in zip(cur[0], sum_attrs))
                maxes = tuple(max(c, s.values[a]) for c, a in zip(cur[1], max_attrs))
                cont = cur[2] or s.continues
            if any(v > tops[i][a] for v, a in zip(sums, sum_attrs)):
                return None
            if any(v > tops[i][a] for v, a in zip(maxes, max_attrs)):
                return None
            out[i] = (sums, maxes, cont)
        return tuple(out)

    def solve(r: int, state: tuple, mask: int) -> tuple[int, int] | None:
        """Best (pref, suffix mask) completing requests r.. given `state`."""
        if r == problem.n:
            scored = problem.evaluate(mask)
            return None if scored is None else (scored[0], 0)
        key = (r, state)
        hit = memo.get(key, "miss")
        if hit != "miss":
            if hit is None:
                return None
            pref, suffix = hit
            return pref, suffix
        reject = solve(r + 1, state, mask)
        accepted_state = accept_state(state, r)
        accept = None
        if accepted_state is not None:
            sub = solve(r + 1, accepted_state, mask | (1 << r))
            if sub is not None:
                accept = (sub[0], sub[1] | (1 << r))
        if accept is None:
            best = reject
        elif reject is None:
            best = accept
        elif accept[0] < reject[0] or (
            accept[0] == reject[0] and lex_mask_less(accept[1], reject[1])
        ):
            best = accept
        else:
            best = reject
        memo[key] = best
        return best

    result = solve(0, empty_state, 0)
    if result is None:
        raise CompositionError("no feasible composition (empty selection should be feasible)")
    return _composition_from_mask(problem, result[1])


# ---------------------------------------------------------------------------
# heuristic sequential baseline
# ---------------------------------------------------------------------------


def heuristic_compose(
    problem: CompositionProblem, order: str = "left_to_right", seed: int = 0
) -> Composition:
    """Greedy local optimization per interval, in a fixed or shuffled order.

    Within an interval, undecided candidates are accepted one at a time in
    decreasing utility = reward(aggregate with candidate) / request length,
    as long as the acceptance stays feasible everywhere; the interval's
    leftovers are then rejected for the rest of the composition.
    """
    if order not in HEURISTIC_ORDERS:
        raise CompositionError(f"unknown visit order '{order}'")
    visit = list(range(problem.m))
    if order == "right_to_left":
        visit.reverse()
    elif order == "random":
        rng = SplitMix(seed)
        for i in range(len(visit) - 1, 0, -1):
            k = rng.below(i + 1)
            visit[i], visit[k] = visit[k], visit[i]

    state = EpisodeState()
    trace: list[TraceStep] = []
    for pos, s in enumerate(visit):
        while True:
            current = problem.committed(state, s)
            undecided = problem.candidates[s] & ~state.accepted & ~state.rejected
            best_r = -1
            best_util = float("-inf")
            r = 0
            rest = undecided
            while rest:
                if rest & 1:
                    trial = current | (1 << r)
                    pos_t = problem.tables[s].position.get(trial)
                    if pos_t is not None and problem.prospectively_feasible(
                        state.accepted, s, trial
                    ):
                        util = float(problem.tables[s].rewards[pos_t]) / problem.request_length(r)
                        if util > best_util:
                            best_util = util
                            best_r = r
                rest >>= 1
                r += 1
            if best_r < 0:
                break
            state.accepted |= 1 << best_r
        final = problem.committed(state, s)
        problem.apply_action(state, s, final)
        trace.append(TraceStep(order=pos, interval=s, mask=final, reward=problem.reward(s, final)))
    comp = _composition_from_mask(problem, state.accepted, visit)
    return replace(comp, trace=tuple(trace))


# ---------------------------------------------------------------------------
# learned composers
# ---------------------------------------------------------------------------


def _validate_params(alpha: float, gamma: float, epsilon, episodes: int, mu: float = 0.0):
    if not 0.0 < alpha <= 1.0:
        raise CompositionError(f"alpha must be in (0, 1], got {alpha}")
    if not 0.0 <= gamma <= 1.0:
        raise CompositionError(f"gamma must be in [0, 1], got {gamma}")
    if epsilon is not None:
        if not 0.0 < float(epsilon) <= 1.0:
            raise CompositionError(f"epsilon must be in (0, 1], got {epsilon}")
    if episodes < 1:
        raise CompositionError("episode budget must be >= 1")
    if not 0.0 <= mu <= 1.0:
        raise CompositionError(f"mu must be in [0, 1], got {mu}")


def _eps_schedule(epsilon) -> tuple[float, float]:
    if epsilon is None:
        return DEFAULT_EPS
    return float(epsilon), float(epsilon)


def default_episodes(problem: CompositionProblem) -> int:
    return EPISODES_PER_INTERVAL * problem.m


def run_learner(
    problem: CompositionProblem,
    mode: int,
    mode_name: str,
    alpha: float,
    gamma: float,
    epsilon,
    episodes: int | None,
    seed: int,
    tol: float = DEFAULT_TOL,
    mu: float = 0.0,
    past: Policy | None = None,
    record_trace: bool = False,
) -> tuple[QCube, list | None]:
    """Prepare problem arrays, run the engine, wrap the learned table."""
    cap = episodes if episodes is not None else default_episodes(problem)
    _validate_params(alpha, gamma, epsilon, cap, mu)
    eps = _eps_schedule(epsilon)
    arrays = problem_arrays(problem)
    stride = problem.m if mode >= engine.Q3D_OFF else 1
    q = np.zeros(problem.total_actions * stride, dtype=np.float64)
    visits = np.zeros(problem.total_actions * stride, dtype=np.int64)
    if past is not None:
        past_states, past_masks = past.as_arrays(problem.m)
    else:
        past_states = np.full(problem.m, -1, dtype=np.int32)
        past_masks = np.zeros(problem.m, dtype=np.uint64)
    trace: list | None = [] if record_trace else None
    episodes_run, converged = engine.run_episodes(
        mode,
        problem.m,
        arrays["n_actions"],
        arrays["offsets"],
        arrays["masks"],
        arrays["rewards"],
        arrays["candidates"],
        q,
        visits,
        float(alpha),
        float(gamma),
        eps[0],
        eps[1],
        int(cap),
        float(tol),
        int(seed) & (2**64 - 1),
        float(mu),
        past_states,
        past_masks,
        trace,
    )
    cube = QCube(
        mode=mode_name,
        m=problem.m,
        n_actions=tuple(len(t) for t in problem.tables),
        offsets=tuple(problem.offsets),
        q=q,
        visits=visits,
        alpha=alpha,
        gamma=gamma,
        eps=eps,
        episode_cap=cap,
        episodes_run=episodes_run,
        converged=converged,
        seed=seed,
    )
    return cube, trace


def problem_arrays(problem: CompositionProblem) -> dict:
    """Engine-ready views of the problem's action tables (cached)."""
    cached = getattr(problem, "_engine_arrays", None)
    if cached is not None:
        return cached
    arrays = {
        "n_actions": np.array([len(t) for t in problem.tables], dtype=np.int32),
        "offsets": np.array(problem.offsets, dtype=np.int64),
        "masks": np.concatenate([t.masks for t in problem.tables]),
        "rewards": np.concatenate([t.rewards for t in problem.tables]),
        "candidates": np.array(problem.candidates, dtype=np.uint64),
    }
    problem._engine_arrays = arrays
    return arrays


def _legal_positions(problem: CompositionProblem, state: EpisodeState, s: int) -> list[int]:
    committed = problem.committed(state, s)
    out = []
    for j, mv in enumerate(problem.tables[s].masks.tolist()):
        mask = int(mv)
        if mask & state.rejected:
            continue
        if (mask & committed) != committed:
            continue
        out.append(j)
    return out


def _pick_greedy(
    problem: CompositionProblem,
    state: EpisodeState,
    s: int,
    values,
    legal: list[int],
) -> int:
    """Greedy over learned values; ties prefer the higher immediate reward."""
    excluded: set[int] = set()
    rewards = problem.tables[s].rewards
    while True:
        best_j, best_v, best_r = -1, float("-inf"), float("-inf")
        for j in legal:
            if j in excluded:
                continue
            v, r = values[j], float(rewards[j])
            if v > best_v or (v == best_v and r > best_r):
                best_v, best_r, best_j = v, r, j
        if best_j < 0:
            return problem.tables[s].position[problem.committed(state, s)]
        mask = int(problem.tables[s].masks[best_j])
        if problem.prospectively_feasible(state.accepted, s, mask):
            return best_j
        excluded.add(best_j)


def extract_policy(problem: CompositionProblem, cube: QCube) -> tuple[Policy, Composition]:
    """Greedy plan from a learned cube: per order, the best consistent (s, a).

    Respects visit-once, commitments, rejections and cross-interval
    feasibility; ties break on (state, action id).
    """
    if not cube.three_d:
        raise CompositionError("policy extraction needs an order-aware cube")
    m = problem.m
    state = EpisodeState()
    steps: list[PolicyStep] = []
    trace: list[TraceStep] = []
    for o in range(m):
        chosen: tuple[int, int] | None = None
        excluded: set[tuple[int, int]] = set()
        while True:
            best = None  # (value, reward, s, j); ties: higher reward, then (s, j)
            for s in range(m):
                if (state.visited >> s) & 1:
                    continue
                committed = problem.committed(state, s)
                rewards = problem.tables[s].rewards
                for j, mv in enumerate(problem.tables[s].masks.tolist()):
                    if (s, j) in excluded:
                        continue
                    mask = int(mv)
                    if mask & state.rejected:
                        continue
                    if (mask & committed) != committed:
                        continue
                    v = cube.q[(cube.offsets[s] + j) * m + o]
                    r = float(rewards[j])
                    if best is None or v > best[0] or (v == best[0] and r > best[1]):
                        best = (v, r, s, j)
            if best is None:
                raise CompositionError("no consistent action during policy extraction")
            _, _, s, j = best
            mask = int(problem.tables[s].masks[j])
            if problem.prospectively_feasible(state.accepted, s, mask):
                chosen = (s, j)
                break
            excluded.add((s, j))
        s, j = chosen
        mask = int(problem.tables[s].masks[j])
        problem.apply_action(state, s, mask)
        steps.append(PolicyStep(order=o, interval=s, mask=mask))
        trace.append(TraceStep(order=o, interval=s, mask=mask, reward=problem.reward(s, mask)))
    comp = _composition_from_mask(problem, state.accepted, [st.interval for st in steps])
    return Policy(steps=tuple(steps)), replace(comp, trace=tuple(trace))


def _rollout_flat(problem: CompositionProblem, cube: QCube) -> Composition:
    """Greedy composition from a flat table, visiting intervals in order."""
    state = EpisodeState()
    trace: list[TraceStep] = []
    for s in range(problem.m):
        legal = _legal_positions(problem, state, s)
        values = {j: float(cube.q[cube.offsets[s] + j]) for j in legal}
        j = _pick_greedy(problem, state, s, values, legal)
        mask = int(problem.tables[s].masks[j])
        problem.apply_action(state, s, mask)
        trace.append(TraceStep(order=s, interval=s, mask=mask, reward=problem.reward(s, mask)))
    comp = _composition_from_mask(problem, state.accepted)
    return replace(comp, trace=tuple(trace))


def q2d_compose(
    problem: CompositionProblem,
    alpha: float = DEFAULT_ALPHA,
    gamma: float = DEFAULT_GAMMA,
    epsilon=None,
    episodes: int | None = None,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    record_trace: bool = False,
):
    """Flat Q-learning; returns (Composition, QCube[, trace])."""
    cube, trace = run_learner(
        problem, engine.Q2D, "q2d", alpha, gamma, epsilon, episodes, seed, tol,
        record_trace=record_trace,
    )
    comp = _rollout_flat(problem, cube)
    return (comp, cube, trace) if record_trace else (comp, cube)


def sarsa_compose(
    problem: CompositionProblem,
    alpha: float = DEFAULT_ALPHA,
    gamma: float = DEFAULT_GAMMA,
    epsilon=None,
    episodes: int | None = None,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    record_trace: bool = False,
):
    """On-policy flat learner: bootstraps from the action actually chosen."""
    cube, trace = run_learner(
        problem, engine.SARSA, "sarsa", alpha, gamma, epsilon, episodes, seed, tol,
        record_trace=record_trace,
    )
    comp = _rollout_flat(problem, cube)
    return (comp, cube, trace) if record_trace else (comp, cube)


def q3d_compose(
    problem: CompositionProblem,
    mode: str = "on_policy",
    alpha: float = DEFAULT_ALPHA,
    gamma: float = DEFAULT_GAMMA,
    epsilon=None,
    episodes: int | None = None,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    record_trace: bool = False,
):
    """Order-aware cube learner; returns (Composition, QCube[, trace])."""
    if mode not in ("on_policy", "off_policy"):
        raise CompositionError(f"mode must be 'on_policy' or 'off_policy', got '{mode}'")
    emode = engine.Q3D_ON if mode == "on_policy" else engine.Q3D_OFF
    cube, trace = run_learner(
        problem,
        emode,
        "q3d_on" if mode == "on_policy" else "q3d_off",
        alpha,
        gamma,
        epsilon,
        episodes,
        seed,
        tol,
        record_trace=record_trace,
    )
    _, comp = extract_policy(problem, cube)
    return (comp, cube, trace) if record_trace else (comp, cube)


def reward(problem: CompositionProblem, interval: int, mask: int) -> float:
    """Reward of a feasible action: q_i + 1 - local rank (empty action: 0)."""
    return problem.reward(interval, mask)


def legal_actions(problem: CompositionProblem, state: EpisodeState, interval: int) -> list[int]:
    """Feasible action masks at `interval` given episode history."""
    return problem.legal_actions(state, interval)

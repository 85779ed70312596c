"""Composition problems: action tables, feasibility, rewards, legality."""

import numpy as np
import pytest

from tempcompose.errors import CompositionError
from tempcompose.kdindex import IndexedTempCPNet
from tempcompose.modelfile import load_tempcp
from tempcompose.problem import CompositionProblem, EpisodeState, lex_mask_less
from tempcompose.workload import Request, RequestSet

from util import independent_pref, interval_scales, random_requests


def tiny_net(m=2):
    blocks = []
    for k in range(m):
        blocks.append(
            f"interval I{k} {k*3} {k*3+3}\n"
            "  range A 90 95 101\n"
            "  range C 0 30 60\n"
            "  range P 0 400 2000\n"
            "  cpt A: hi > lo\n"
            "  cpt C | N=true: hi > lo\n"
            "  cpt C | N=false: lo > hi\n"
            "  cpt P: lo > hi"
        )
    doc = (
        "decision N\n"
        "attribute A levels lo hi agg max\n"
        "attribute C levels lo hi agg sum\n"
        "attribute P levels lo hi agg sum temporal\n" + "\n".join(blocks)
    )
    return load_tempcp(doc)


def req(rid, start, length, a=95.0, c=10.0, p=50.0):
    return Request(rid=rid, start=start, length=length, values={
        "A": (a,) * length, "C": (c,) * length, "P": (p,) * length})


@pytest.fixture()
def small_problem():
    net = tiny_net(2)
    rs = RequestSet(requests=(
        req("Ra", 0, 6, c=10.0),   # spans both intervals
        req("Rb", 0, 3, c=12.0),   # first interval only
        req("Rc", 3, 3, c=8.0),    # second interval only
    ))
    return CompositionProblem(IndexedTempCPNet(net), rs), net, rs


class TestActionTables:
    def test_tables_enumerate_all_feasible_subsets(self, small_problem):
        problem, net, rs = small_problem
        # brute recomputation of interval-0 feasibility from raw values
        members = [0, 1]  # Ra, Rb active in interval 0
        feasible = {0}
        for k in range(1, 4):
            chosen = [m for m in members if k & (1 << (members.index(m)))]
            ids = [rs.requests[m].rid for m in chosen]
            # use the independent evaluator on the single interval by checking
            # the aggregate maps into the table
            c_sum = sum(10.0 if m == 0 else 12.0 for m in chosen)
            p_sum = sum(50.0 * 3 for _ in chosen)  # 3-unit slice of uniform price
            if c_sum <= 60 and p_sum <= 2000:
                mask = 0
                for m in chosen:
                    mask |= 1 << m
                feasible.add(mask)
        assert set(problem.tables[0].position) == feasible

    def test_empty_action_first_with_zero_reward(self, small_problem):
        problem, _, _ = small_problem
        for t in problem.tables:
            assert int(t.masks[0]) == 0
            assert t.rewards[0] == 0.0

    def test_rewards_match_scale_formula(self, small_problem):
        problem, net, _ = small_problem
        scales = interval_scales(net)
        for i, t in enumerate(problem.tables):
            for j in range(1, len(t)):
                assert t.rewards[j] == scales[i] + 1 - int(t.ranks[j])
                assert t.rewards[j] > 0

    def test_overflowing_aggregate_excluded(self):
        net = tiny_net(1)
        rs = RequestSet(requests=(req("Ra", 0, 3, c=40.0), req("Rb", 0, 3, c=35.0)))
        problem = CompositionProblem(IndexedTempCPNet(net), rs)
        # each alone fits (40, 35 <= 60); the pair overflows CPU
        assert set(problem.tables[0].position) == {0, 1, 2}

    def test_table_cap_enforced(self, monthly_inet):
        rng = np.random.default_rng(0)
        rs = random_requests(rng, monthly_inet.net, 12)
        with pytest.raises(CompositionError, match="cap"):
            CompositionProblem(monthly_inet, rs, table_cap=4)

    def test_too_many_requests_rejected(self, monthly_inet):
        big = RequestSet(requests=tuple(req(f"R{i:03d}", 0, 1) for i in range(64)))
        with pytest.raises(CompositionError, match="63"):
            CompositionProblem(monthly_inet, big)


class TestEvaluate:
    def test_matches_independent_oracle_on_all_subsets(self, small_problem):
        problem, net, rs = small_problem
        ids = [r.rid for r in rs.requests]
        scales = interval_scales(net)
        for k in range(1 << len(ids)):
            chosen = [ids[i] for i in range(len(ids)) if k & (1 << i)]
            expected = independent_pref(net, rs, chosen, scales)
            got = problem.evaluate(k)
            if expected is None:
                assert got is None
            else:
                assert got[0] == expected

    def test_worst_pref_is_all_empty(self, small_problem):
        problem, net, _ = small_problem
        assert problem.evaluate(0)[0] == problem.worst_pref()
        assert problem.evaluate(0)[1] == 0


class TestRewardOp:
    def test_rank_one_earns_scale(self, small_problem):
        problem, net, _ = small_problem
        scales = interval_scales(net)
        for i, t in enumerate(problem.tables):
            best = min(int(r) for r in t.ranks[1:]) if len(t) > 1 else None
            if best == 1:
                j = next(j for j in range(1, len(t)) if int(t.ranks[j]) == 1)
                assert problem.reward(i, int(t.masks[j])) == scales[i]

    def test_worst_rank_earns_one(self, small_problem):
        problem, net, _ = small_problem
        scales = interval_scales(net)
        for i, t in enumerate(problem.tables):
            for j in range(1, len(t)):
                if int(t.ranks[j]) == scales[i]:
                    assert problem.reward(i, int(t.masks[j])) == 1.0

    def test_infeasible_action_rejected(self, small_problem):
        problem, _, _ = small_problem
        with pytest.raises(CompositionError):
            problem.reward(0, 0b111)  # Rc not active in interval 0

    def test_argmax_reward_is_argmin_rank(self, small_problem):
        problem, _, _ = small_problem
        for i, t in enumerate(problem.tables):
            if len(t) < 3:
                continue
            rewards = [problem.reward(i, int(mv)) for mv in t.masks[1:]]
            ranks = [int(r) for r in t.ranks[1:]]
            assert int(np.argmax(rewards)) == int(np.argmin(ranks))


class TestLegalActions:
    def test_all_subsets_when_unconstrained(self):
        # 3 candidates in one interval, everything fits: 8 actions incl. empty
        net = tiny_net(1)
        rs = RequestSet(requests=(
            req("Ra", 0, 3, c=5.0), req("Rb", 0, 3, c=6.0), req("Rc", 0, 3, c=7.0)))
        problem = CompositionProblem(IndexedTempCPNet(net), rs)
        state = EpisodeState()
        assert len(problem.legal_actions(state, 0)) == 8

    def test_only_empty_when_all_rejected(self, small_problem):
        problem, _, _ = small_problem
        state = EpisodeState(rejected=0b111)
        assert problem.legal_actions(state, 0) == [0]

    def test_committed_must_be_included(self, small_problem):
        problem, _, _ = small_problem
        state = EpisodeState(accepted=0b001)  # Ra committed, spans both intervals
        for mask in problem.legal_actions(state, 1):
            assert mask & 0b001

    def test_unindexed_subsets_not_listed(self):
        net = tiny_net(1)
        rs = RequestSet(requests=(req("Ra", 0, 3, c=40.0), req("Rb", 0, 3, c=35.0)))
        problem = CompositionProblem(IndexedTempCPNet(net), rs)
        assert 0b11 not in problem.legal_actions(EpisodeState(), 0)

    def test_prospective_filter_blocks_cross_interval_overflow(self):
        net = tiny_net(2)
        rs = RequestSet(requests=(
            req("Ra", 0, 6, c=40.0),  # spans both
            req("Rb", 3, 3, c=35.0),  # second interval only
        ))
        problem = CompositionProblem(IndexedTempCPNet(net), rs)
        state = EpisodeState(accepted=0b10)  # Rb accepted at interval 1
        legal0 = problem.legal_actions(state, 0)
        # accepting Ra at interval 0 would overflow interval 1 (40 + 35 > 60)
        assert all(not (mask & 0b01) for mask in legal0)

    def test_apply_action_rejects_leftovers(self, small_problem):
        problem, _, _ = small_problem
        state = EpisodeState()
        problem.apply_action(state, 0, 0b001)  # accept Ra, drop Rb
        assert state.accepted == 0b001
        assert state.rejected == 0b010
        assert state.visited == 0b01


class TestLexMaskLess:
    CASES = [
        (0b0, 0b1, True),       # {} < {0}
        (0b1, 0b0, False),
        (0b1001, 0b0110, True),  # {0,3} < {1,2}
        (0b100, 0b011, False),   # {2} > {0,1}
        (0b001, 0b011, True),    # {0} < {0,1}
        (0b011, 0b001, False),
        (0b101, 0b101, False),   # equal
    ]

    @pytest.mark.parametrize("a,b,expected", CASES)
    def test_cases(self, a, b, expected):
        assert lex_mask_less(a, b) is expected

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_sorted_tuple_order(self, seed):
        rng = np.random.default_rng(seed)
        masks = [int(rng.integers(0, 64)) for _ in range(30)]

        def ids(m):
            return tuple(i for i in range(6) if m & (1 << i))

        for a in masks:
            for b in masks:
                assert lex_mask_less(a, b) == (ids(a) < ids(b))

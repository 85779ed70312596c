"""Rank indexes: construction shape, exact lookup, local/global ranking."""

import numpy as np
import pytest

from tempcompose.cpnet import assign_ranks, induce_graph, RankedOutcomeSet
from tempcompose.errors import CompositionError, ModelError
from tempcompose.kdindex import IndexedTempCPNet, build_index, global_rank
from tempcompose.workload import Request, segment

from util import random_tempcp, random_requests


def ranked_from_graph(net, interval, decision):
    return assign_ranks(induce_graph(net.nets[interval], decision))


class TestBuildIndex:
    def test_single_outcome_tree(self):
        ranked = RankedOutcomeSet(decision=(), ranks={(0, 0): 1}, max_rank=1)
        idx = build_index(ranked)
        assert idx.size == 1 and idx.depth() == 1
        assert idx.lookup((0, 0)) == 1

    def test_empty_set_rejected(self):
        with pytest.raises(ModelError):
            build_index(RankedOutcomeSet(decision=(), ranks={}, max_rank=0))

    def test_balanced_depth_on_collinear_points(self):
        # 7 points varying along one axis: median recursion gives depth 3
        ranks = {(k, 0): k + 1 for k in range(7)}
        idx = build_index(RankedOutcomeSet(decision=(), ranks=ranks, max_rank=7))
        assert idx.depth() == 3

    def test_balance_within_one_level(self, figure_net):
        for i in range(figure_net.m):
            for dec in figure_net.schema.decision_assignments():
                idx = build_index(ranked_from_graph(figure_net, i, dec))
                assert idx.depth() <= int(np.ceil(np.log2(idx.size + 1)))

    def test_root_is_axis_median(self, figure_net):
        idx = build_index(ranked_from_graph(figure_net, 0, (True,)))
        pts = sorted(p for p, _ in idx.items())
        axis_sorted = sorted(pts, key=lambda p: (p[0], p))
        assert idx.root.point == axis_sorted[len(pts) // 2]

    def test_split_convention_smaller_right(self, figure_net):
        idx = build_index(ranked_from_graph(figure_net, 0, (True,)))

        def check(node):
            if node is None:
                return
            key = (node.point[node.axis], node.point)
            for p, _ in _subtree_items(node.right):
                assert (p[node.axis], p) < key
            for p, _ in _subtree_items(node.left):
                assert (p[node.axis], p) > key
            check(node.left)
            check(node.right)

        check(idx.root)

    def test_node_count_matches_outcomes(self, figure_net):
        ranked = ranked_from_graph(figure_net, 1, (False,))
        idx = build_index(ranked)
        assert idx.size == len(ranked.ranks)
        assert sorted(p for p, _ in idx.items()) == sorted(ranked.ranks)


def _subtree_items(node):
    if node is None:
        return
    yield node.point, node.rank
    yield from _subtree_items(node.left)
    yield from _subtree_items(node.right)


class TestLookup:
    def test_exhaustive_oracle_equivalence_fixture_models(
        self, figure_net, quarterly_net, monthly_net
    ):
        for net in (figure_net, quarterly_net, monthly_net):
            for i in range(net.m):
                for dec in net.schema.decision_assignments():
                    ranked = ranked_from_graph(net, i, dec)
                    idx = build_index(ranked)
                    for outcome, rank in ranked.ranks.items():
                        assert idx.lookup(outcome) == rank

    @pytest.mark.parametrize("seed", range(5))
    def test_exhaustive_oracle_equivalence_random_models(self, seed):
        net = random_tempcp(np.random.default_rng(seed), m=2)
        for i in range(net.m):
            for dec in net.schema.decision_assignments():
                ranked = ranked_from_graph(net, i, dec)
                idx = build_index(ranked)
                for outcome, rank in ranked.ranks.items():
                    assert idx.lookup(outcome) == rank

    def test_miss_returns_none(self, figure_net):
        idx = build_index(ranked_from_graph(figure_net, 0, (False,)))
        assert idx.lookup((5, 5, 5)) is None

    def test_dimension_mismatch_rejected(self, figure_net):
        idx = build_index(ranked_from_graph(figure_net, 0, (False,)))
        with pytest.raises(CompositionError):
            idx.lookup((0, 0))

    def test_worst_short_term_config_rank(self, figure_net):
        # least preferred short-term configuration carries the largest rank
        ranked = ranked_from_graph(figure_net, 0, (False,))
        idx = build_index(ranked)
        worst = figure_net.schema.outcome(("A2", "C1", "P3"))
        assert idx.lookup(worst) == ranked.max_rank == 6

    def test_dump_lists_every_node(self, figure_net):
        idx = build_index(ranked_from_graph(figure_net, 0, (False,)))
        dump = idx.dump()
        assert len(dump.splitlines()) == idx.size
        assert "axis=0" in dump and "rank=" in dump


class TestIndexedNet:
    def test_one_index_per_decision_value(self, figure_inet):
        for i in range(figure_inet.m):
            for dec in figure_inet.schema.decision_assignments():
                assert figure_inet.index_for(i, dec) is not None
        assert len(figure_inet.schema.decision_assignments()) == 2

    def test_local_rank_best_outcome(self, figure_inet):
        top = figure_inet.schema.outcome(("A1", "C1", "P1"))
        assert figure_inet.local_rank(0, top, (False,)) == 1

    def test_interval_out_of_range(self, figure_inet):
        with pytest.raises(CompositionError):
            figure_inet.local_rank(3, (0, 0, 0), (False,))

    def test_scale_is_max_rank_over_trees(self, figure_net, figure_inet):
        for i in range(figure_net.m):
            expected = max(
                ranked_from_graph(figure_net, i, dec).max_rank
                for dec in figure_net.schema.decision_assignments()
            )
            assert figure_inet.interval_scale(i) == expected

    def test_rank_raw_config_out_of_domain_is_none(self, figure_inet):
        values = {"A": 100.0, "C": 5000.0, "P": 100.0}
        assert figure_inet.rank_raw_config(0, values, (False,)) is None


def make_request(rid, start, length, a, c, p_month):
    return Request(
        rid=rid,
        start=start,
        length=length,
        values={"A": (a,) * length, "C": (c,) * length, "P": (p_month,) * length},
    )


class TestGlobalRank:
    def test_empty_selection_is_zero(self, figure_inet):
        assert global_rank(figure_inet, []) == 0

    def test_rank_one_everywhere_sums_to_m(self):
        from tempcompose.modelfile import load_tempcp

        doc = """
attribute V levels lo hi agg sum
interval I0 0 2
  range V 0 50 100
  cpt V: hi > lo
interval I1 2 4
  range V 0 50 100
  cpt V: hi > lo
interval I2 4 6
  range V 0 50 100
  cpt V: hi > lo
"""
        net = load_tempcp(doc)
        inet = IndexedTempCPNet(net)
        req = Request(rid="R", start=0, length=6, values={"V": (80.0,) * 6})
        assert global_rank(inet, [segment(req, net)]) == net.m == 3

    def test_best_everywhere_sums_to_m(self, figure_inet, figure_net):
        # find a raw config hitting rank 1 in every interval for a 3-year request
        # (availability A1, CPU C1, monthly price mapping to the top tier)
        req = make_request("R", 0, 36, 100.0, 60.0, 200.0)
        sr = segment(req, figure_net)
        total = global_rank(figure_inet, [sr])
        per = []
        for i in range(3):
            seg = sr.segments[i]
            per.append(
                figure_inet.rank_raw_config(i, seg.values, (seg.continues,))
            )
        assert total == sum(per)

    def test_miss_is_monotone_none(self, figure_inet, figure_net):
        good = make_request("G", 0, 36, 100.0, 60.0, 200.0)
        bad = make_request("B", 0, 36, 100.0, 4000.0, 200.0)  # CPU out of domain
        srs = [segment(good, figure_net), segment(bad, figure_net)]
        assert global_rank(figure_inet, srs) is None

    @pytest.mark.parametrize("seed", range(8))
    def test_random_subsets_match_manual_recomputation(self, seed, figure_net, figure_inet):
        rng = np.random.default_rng(300 + seed)
        rs = random_requests(rng, figure_net, 5)
        segmented = [segment(r, figure_net) for r in rs.requests]
        pick = [sr for sr in segmented if rng.random() < 0.5]
        got = global_rank(figure_inet, pick)
        # manual recomputation: aggregate raw values, map levels, scan ranked dict
        expected = 0
        for i in range(figure_net.m):
            active = [sr.segments[i] for sr in pick if sr.segments[i] is not None]
            if not active:
                continue
            combined = {}
            for attr in figure_net.schema.attributes:
                vals = [seg.values[attr.name] for seg in active]
                combined[attr.name] = max(vals) if attr.combine == "max" else sum(vals)
            table = figure_net.tables[i]
            config = []
            feasible = True
            for attr in figure_net.schema.attributes:
                ordinal = table.try_level_of(attr.name, combined[attr.name])
                if ordinal is None:
                    feasible = False
                    break
                config.append(ordinal)
            if not feasible:
                expected = None
                break
            dec = (any(seg.continues for seg in active),)
            ranked = ranked_from_graph(figure_net, i, dec)
            expected += ranked.ranks[tuple(config)]
        assert got == expected

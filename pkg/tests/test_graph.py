"""Topology stacking and routing tests.

The routing oracle tags every scalar slot of every edge profile with a
distinct value derived only from (source, dest, step, component), builds
the out- and in-stacks by independent enumeration, and requires the
routing matrix to reproduce the in-stack exactly (permutations move
floats, so the tolerance is zero).
"""

import itertools

import numpy as np
import pytest

from hiercoord.graph import (
    CouplingEdge,
    RoutingMatrix,
    Topology,
    TopologyError,
    build_routing,
    concat_ordered,
    in_stack_order,
    out_stack_order,
    stack_in,
    stack_out,
    validate_topology,
)


def edge(s, d, dim=1):
    return CouplingEdge(source=s, dest=d, dim=dim)


def mesh3(horizon=1):
    # three subsystems, full mesh, scalar edges, first and third controlled
    edges = [edge(s, d) for s in (1, 2, 3) for d in (1, 2, 3) if s != d]
    return Topology(n_s=3, controlled=frozenset({1, 3}), edges=tuple(edges), horizon=horizon)


def plant4(horizon=1):
    # four-block network: hot/cold streams between a bath circuit, two
    # heat exchangers and an expander
    edges = (
        edge(1, 2, 3),
        edge(2, 1, 3),
        edge(2, 3, 3),
        edge(2, 4, 1),
        edge(3, 2, 3),
        edge(3, 4, 2),
        edge(4, 2, 2),
        edge(4, 3, 1),
    )
    return Topology(n_s=4, controlled=frozenset({1, 2, 3, 4}), edges=edges, horizon=horizon)


def tag(e, k, c):
    # unique scalar per (edge, step, component); injective for these sizes
    return 1.0 * e.source + 10.0 * e.dest + 100.0 * k + 10000.0 * c


def oracle_stacks(topology):
    """Build out/in stacks by direct enumeration, no RoutingMatrix logic."""
    N = topology.horizon
    out_parts, in_parts = [], []
    for s in topology.subsystems:
        for e in sorted((e for e in topology.edges if e.source == s), key=lambda e: e.dest):
            out_parts.extend(tag(e, k, c) for k in range(N) for c in range(e.dim))
    for s in topology.subsystems:
        for e in sorted((e for e in topology.edges if e.dest == s), key=lambda e: e.source):
            in_parts.extend(tag(e, k, c) for k in range(N) for c in range(e.dim))
    return np.array(out_parts), np.array(in_parts)


class TestEdgesAndTopology:
    def test_edge_key_and_str(self):
        e = edge(2, 4, 3)
        assert e.key == (2, 4)
        assert str(e) == "2->4"

    def test_edges_canonicalized_by_dest_then_source(self):
        t = mesh3()
        assert [e.key for e in t.edges] == [
            (2, 1), (3, 1), (1, 2), (3, 2), (1, 3), (2, 3),
        ]

    def test_unknown_subsystem_in_edge_rejected(self):
        with pytest.raises(TopologyError, match="unknown subsystem"):
            Topology(n_s=2, edges=(edge(1, 3),))

    def test_bad_controlled_id_rejected(self):
        with pytest.raises(TopologyError):
            Topology(n_s=2, controlled=frozenset({5}))

    def test_bad_horizon_rejected(self):
        with pytest.raises(TopologyError):
            Topology(n_s=2, horizon=0)

    def test_uncontrolled_complement(self):
        t = mesh3()
        assert t.uncontrolled == frozenset({2})

    def test_neighbors(self):
        t = plant4()
        assert t.neighbors(1) == [2]
        assert t.neighbors(2) == [1, 3, 4]
        assert t.neighbors(4) == [2, 3]


class TestStacking:
    def test_mesh_in_stack_of_first(self):
        t = mesh3()
        assert [e.key for e in stack_in(t, 1)] == [(2, 1), (3, 1)]

    def test_plant_out_stack_of_second(self):
        t = plant4()
        assert [e.key for e in stack_out(t, 2)] == [(2, 1), (2, 3), (2, 4)]

    def test_plant_edge_count_and_dims(self):
        t = plant4()
        assert len(t.edges) == 8
        assert t.in_dim(2) == 3 + 3 + 2
        assert t.out_dim(2) == 3 + 3 + 1
        assert t.in_dim(4) == 1 + 2
        assert t.out_dim(4) == 2 + 1

    def test_stack_unknown_id(self):
        t = mesh3()
        with pytest.raises(TopologyError, match="unknown subsystem"):
            stack_in(t, 9)

    def test_stacks_partition_edges(self):
        for t in (mesh3(), plant4()):
            ins = list(itertools.chain.from_iterable(stack_in(t, s) for s in t.subsystems))
            outs = list(itertools.chain.from_iterable(stack_out(t, s) for s in t.subsystems))
            assert sorted(e.key for e in ins) == sorted(e.key for e in t.edges)
            assert sorted(e.key for e in outs) == sorted(e.key for e in t.edges)
            assert ins == in_stack_order(t)
            assert outs == out_stack_order(t)


class TestConcatOrdered:
    def test_orders_by_id(self):
        got = concat_ordered({1: [1.0, 2.0], 3: [5.0]})
        assert got.tolist() == [1.0, 2.0, 5.0]

    def test_singleton(self):
        assert concat_ordered({2: [7.0]}).tolist() == [7.0]

    def test_insertion_order_irrelevant(self):
        a = concat_ordered({3: [0.0], 1: [4.0]})
        b = concat_ordered({1: [4.0], 3: [0.0]})
        assert a.tolist() == b.tolist() == [4.0, 0.0]

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty concatenation"):
            concat_ordered({})


class TestRouting:
    def test_single_edge_identity(self):
        t = Topology(n_s=2, edges=(edge(1, 2),))
        G = build_routing(t)
        assert G.dense().tolist() == [[1.0]]
        assert G.apply(np.array([3.5])).tolist() == [3.5]

    @pytest.mark.parametrize("make,horizon", [
        (mesh3, 1), (mesh3, 4), (plant4, 1), (plant4, 5), (plant4, 30),
    ])
    def test_routing_against_enumeration_oracle(self, make, horizon):
        t = make(horizon)
        G = build_routing(t)
        v_out, v_in_expected = oracle_stacks(t)
        got = G.apply(v_out)
        assert np.array_equal(got, v_in_expected)

    @pytest.mark.parametrize("make", [mesh3, plant4])
    def test_dense_is_permutation(self, make):
        t = make(3)
        D = build_routing(t).dense()
        assert np.array_equal(D @ D.T, np.eye(D.shape[0]))
        assert np.array_equal(D.sum(axis=0), np.ones(D.shape[0]))

    @pytest.mark.parametrize("make", [mesh3, plant4])
    def test_scatter_inverts_apply(self, make):
        t = make(4)
        G = build_routing(t)
        rng = np.random.default_rng(7)
        v = rng.standard_normal(G.rows)
        assert np.array_equal(G.scatter(G.apply(v)), v)
        assert np.array_equal(G.apply(G.scatter(v)), v)

    def test_rows_for_selects_in_block(self):
        t = plant4(horizon=3)
        G = build_routing(t)
        v_out, v_in = oracle_stacks(t)
        routed = G.apply(v_out)
        pos = 0
        for s in t.subsystems:
            lo, hi = G.rows_for(s)
            assert (lo, hi) == (pos, pos + 3 * t.in_dim(s))
            assert np.array_equal(G.in_block(routed, s), v_in[lo:hi])
            pos = hi
        assert pos == G.rows

    def test_apply_rejects_wrong_length(self):
        G = build_routing(mesh3(2))
        with pytest.raises(ValueError, match="out-stack"):
            G.apply(np.zeros(G.rows + 1))

    def test_duplicate_edge_rejected(self):
        t = Topology(n_s=2, edges=(edge(1, 2), edge(1, 2)))
        with pytest.raises(TopologyError, match="non-unique edge"):
            build_routing(t)

    def test_self_loop_rejected_by_routing(self):
        t = Topology(n_s=2, edges=(edge(1, 1),))
        with pytest.raises(TopologyError, match="self-loop"):
            build_routing(t)


class TestValidate:
    def test_clean_topology_empty_report(self):
        assert validate_topology(mesh3()) == []
        assert validate_topology(plant4()) == []

    def test_self_loop_reported(self):
        t = Topology(n_s=2, edges=(edge(1, 1), edge(1, 2)))
        report = validate_topology(t)
        assert any("self-loop" in m for m in report)

    def test_zero_dimension_reported(self):
        t = Topology(n_s=2, edges=(edge(1, 2, dim=0),))
        report = validate_topology(t)
        assert any("zero-dimension" in m for m in report)

    def test_unreachable_subsystem_warned(self):
        t = Topology(n_s=3, controlled=frozenset({1}), edges=(edge(1, 2), edge(2, 1)))
        report = validate_topology(t)
        assert any(m.startswith("warning") and "3" in m for m in report)

    def test_empty_controlled_warned(self):
        t = Topology(n_s=2, edges=(edge(1, 2), edge(2, 1)))
        report = validate_topology(t)
        assert any("empty controlled set" in m for m in report)
        # warnings never block routing
        build_routing(t)

"""Tests for the network model and its structural matrices."""

import numpy as np
import pytest
import scipy.sparse as sp

from fgll.errors import DanglingEndpoint, ValidationError
from fgll.ingest import NetworkSpec, NodeRecord, PipeRecord
from fgll.network import (
    Network,
    Node,
    Pipe,
    build_network,
    pipe_distances,
    resistance,
    sensor_layout,
    signed_incidence,
    struct_matrices,
)


def two_node_net(length=1.0, roughness=130.0, diameter=0.3) -> Network:
    return Network(
        [
            Node("R", elevation=100.0, kind="reservoir", head=100.0),
            Node("J", elevation=10.0, base_demand=0.01),
        ],
        [Pipe("P", 0, 1, length, roughness, diameter)],
    )


def random_net(rng, n_nodes, extra_edges=0) -> Network:
    """Random connected network: a spanning tree plus optional chords."""
    nodes = [Node("R", elevation=50.0, kind="reservoir", head=50.0)]
    nodes += [
        Node(f"J{i}", elevation=float(rng.uniform(0, 20)), base_demand=0.001)
        for i in range(1, n_nodes)
    ]
    pipes = []
    edges = set()
    for i in range(1, n_nodes):
        j = int(rng.integers(0, i))
        edges.add((j, i))
    while len(edges) < n_nodes - 1 + extra_edges:
        i, j = rng.integers(0, n_nodes, size=2)
        if i != j and (min(i, j), max(i, j)) not in edges:
            edges.add((min(i, j), max(i, j)))
    for k, (i, j) in enumerate(sorted(edges)):
        pipes.append(
            Pipe(
                f"P{k}",
                int(i),
                int(j),
                length=float(rng.uniform(100, 1000)),
                roughness=float(rng.uniform(100, 150)),
                diameter=float(rng.uniform(0.1, 0.4)),
            )
        )
    return Network(nodes, pipes)


class TestBuildNetwork:
    def test_smallest_legal_network(self):
        spec = NetworkSpec(
            nodes=(
                NodeRecord("R", 100.0, "reservoir", head=100.0),
                NodeRecord("J", 10.0),
            ),
            pipes=(PipeRecord("P", "R", "J", 1000.0, 130.0, 0.3),),
        )
        net = build_network(spec)
        assert net.n == 2
        assert net.m == 1

    def test_unknown_endpoint(self):
        spec = NetworkSpec(
            nodes=(
                NodeRecord("R", 100.0, "reservoir", head=100.0),
                NodeRecord("J", 10.0),
            ),
            pipes=(PipeRecord("P", "R", "X", 1000.0, 130.0, 0.3),),
        )
        with pytest.raises(DanglingEndpoint):
            build_network(spec)

    def test_t_example_counts(self):
        # 9 junctions + 1 inlet, 10 pipes: the reservoir counts as a node
        from fgll.synthetic import t_example

        net, _ = t_example()
        assert net.n == 10
        assert net.m == 10
        assert net.reservoir_indices.size == 1

    def test_duplicate_node_id(self):
        with pytest.raises(ValidationError, match="duplicate"):
            Network(
                [
                    Node("R", 0.0, "reservoir", head=10.0),
                    Node("R", 1.0),
                ],
                [Pipe("P", 0, 1, 1.0, 100.0, 0.1)],
            )

    def test_disconnected(self):
        with pytest.raises(ValidationError, match="connected"):
            Network(
                [
                    Node("R", 0.0, "reservoir", head=10.0),
                    Node("A", 1.0),
                    Node("B", 1.0),
                    Node("C", 1.0),
                ],
                [
                    Pipe("P1", 0, 1, 1.0, 100.0, 0.1),
                    Pipe("P2", 2, 3, 1.0, 100.0, 0.1),
                ],
            )

    def test_no_reservoir(self):
        with pytest.raises(ValidationError, match="reservoir"):
            Network(
                [Node("A", 0.0), Node("B", 1.0)],
                [Pipe("P", 0, 1, 1.0, 100.0, 0.1)],
            )

    def test_self_loop(self):
        with pytest.raises(ValidationError, match="self-loop"):
            Network(
                [Node("R", 0.0, "reservoir", head=10.0), Node("A", 1.0)],
                [Pipe("P", 1, 1, 1.0, 100.0, 0.1)],
            )


class TestResistance:
    def test_reference_value(self):
        # direct evaluation: 10.674*1000 / (130**1.852 * 0.3**4.87)
        tau = resistance(Pipe("P", 0, 1, 1000.0, 130.0, 0.3))
        assert tau == pytest.approx(456.7973749495438, rel=1e-12)

    def test_nonpositive_attribute(self):
        with pytest.raises(ValidationError):
            resistance(Pipe("P", 0, 1, 0.0, 130.0, 0.3))
        with pytest.raises(ValidationError):
            resistance(Pipe("P", 0, 1, 100.0, -1.0, 0.3))

    def test_linear_in_length(self):
        t1 = resistance(Pipe("P", 0, 1, 500.0, 120.0, 0.25))
        t2 = resistance(Pipe("P", 0, 1, 1000.0, 120.0, 0.25))
        assert t2 == pytest.approx(2.0 * t1, rel=1e-12)


class TestStructMatrices:
    def test_two_node_hand_values(self):
        st = struct_matrices(two_node_net(length=1.0))
        assert np.allclose(st.W.toarray(), [[0, 1], [1, 0]])
        assert np.allclose(st.D.toarray(), np.eye(2))
        assert np.allclose(st.L.toarray(), [[1, -1], [-1, 1]])

    def test_resistance_entry(self):
        st = struct_matrices(two_node_net(1000.0, 130.0, 0.3))
        assert st.T[0, 0] == pytest.approx(456.7973749495438, rel=1e-12)
        assert st.nu == 1.852

    def test_laplacian_nullspace_and_psd(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            net = random_net(rng, int(rng.integers(3, 50)), extra_edges=2)
            st = struct_matrices(net)
            # row sums cancel to addition-order ulps
            assert np.max(np.abs(st.L @ np.ones(net.n))) < 1e-15
            eigs = np.linalg.eigvalsh(st.L.toarray())
            assert eigs.min() >= -1e-10
            assert np.allclose(st.L.toarray(), st.L.toarray().T)


class TestSignedIncidence:
    def test_orientation(self):
        net = two_node_net()
        B = signed_incidence(net, np.array([100.0, 99.0]))
        assert np.allclose(B.toarray(), [[1.0, -1.0]])
        B = signed_incidence(net, np.array([99.0, 100.0]))
        assert np.allclose(B.toarray(), [[-1.0, 1.0]])

    def test_tie_keeps_stored_orientation(self):
        net = two_node_net()
        B = signed_incidence(net, np.array([100.0, 100.0]))
        assert np.allclose(B.toarray(), [[1.0, -1.0]])

    def test_nonnegative_drops_property(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            net = random_net(rng, int(rng.integers(3, 30)), extra_edges=3)
            h = rng.uniform(0, 100, size=net.n)
            B = signed_incidence(net, h)
            assert np.min(B @ h) >= -1e-12


class TestPipeDistances:
    def test_same_node(self):
        net = two_node_net()
        d = pipe_distances(net)
        assert d.km(1, 1) == 0.0
        assert d.hops(1, 1) == 0.0

    def test_unique_path(self):
        net = Network(
            [
                Node("A", 0.0, "reservoir", head=10.0),
                Node("B", 0.0),
                Node("C", 0.0),
            ],
            [
                Pipe("P1", 0, 1, 1000.0, 100.0, 0.1),
                Pipe("P2", 1, 2, 2000.0, 100.0, 0.1),
            ],
        )
        d = pipe_distances(net)
        assert d.km(0, 2) == pytest.approx(3.0)
        assert d.hops(0, 2) == 2.0

    def test_triangle_shortcut(self):
        net = Network(
            [
                Node("A", 0.0, "reservoir", head=10.0),
                Node("B", 0.0),
                Node("C", 0.0),
            ],
            [
                Pipe("AB", 0, 1, 1000.0, 100.0, 0.1),
                Pipe("BC", 1, 2, 1000.0, 100.0, 0.1),
                Pipe("AC", 0, 2, 3000.0, 100.0, 0.1),
            ],
        )
        d = pipe_distances(net)
        assert d.km(0, 2) == pytest.approx(2.0)  # via B, not the direct 3 km pipe
        assert d.hops(0, 2) == 2.0

    def test_against_floyd_warshall(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            net = random_net(rng, int(rng.integers(4, 20)), extra_edges=3)
            d = pipe_distances(net)
            # dense reference
            inf = np.inf
            ref = np.full((net.n, net.n), inf)
            np.fill_diagonal(ref, 0.0)
            for p in net.pipes:
                w = p.length / 1000.0
                ref[p.source, p.sink] = min(ref[p.source, p.sink], w)
                ref[p.sink, p.source] = min(ref[p.sink, p.source], w)
            for k in range(net.n):
                for i in range(net.n):
                    for j in range(net.n):
                        if ref[i, k] + ref[k, j] < ref[i, j]:
                            ref[i, j] = ref[i, k] + ref[k, j]
            got = np.array([[d.km(i, j) for j in range(net.n)] for i in range(net.n)])
            assert np.allclose(got, ref)
            assert np.allclose(got, got.T)

    def test_symmetry_and_triangle_inequality(self):
        rng = np.random.default_rng(5)
        net = random_net(rng, 12, extra_edges=4)
        d = pipe_distances(net)
        km = np.array([[d.km(i, j) for j in range(net.n)] for i in range(net.n)])
        assert np.allclose(km, km.T)
        for k in range(net.n):
            assert np.all(km <= km[:, [k]] + km[[k], :] + 1e-12)


class TestSensorLayout:
    def test_selection_rows_are_identity_rows(self):
        rng = np.random.default_rng(1)
        net = random_net(rng, 15, extra_edges=2)
        layout = sensor_layout(net, [1, 3, 5], [2, 4])
        for S in (layout.S_p, layout.S_d, layout.S_u):
            dense = S.toarray()
            assert np.all(np.sum(dense, axis=1) == 1.0)
            assert np.all((dense == 0) | (dense == 1))

    def test_partition_of_identity(self):
        rng = np.random.default_rng(2)
        net = random_net(rng, 12, extra_edges=1)
        layout = sensor_layout(net, [1, 4, 7])
        stacked = sp.vstack([layout.S_p, layout.S_u]).toarray()
        # rows of S_p and S_u together cover every identity row exactly once
        assert np.allclose(np.sort(np.argmax(stacked, axis=1)), np.arange(net.n))

    def test_reservoirs_added_to_both(self):
        net = two_node_net()
        layout = sensor_layout(net, [1], [])
        assert 0 in layout.pressure_nodes
        assert 0 in layout.demand_nodes

    def test_ids_accepted(self):
        net = two_node_net()
        layout = sensor_layout(net, ["J"], ["J"])
        assert layout.pressure_nodes == (1, 0)

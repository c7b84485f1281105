import numpy as np
import pytest

from conftest import make_grid_graph, random_planar_fixture
from streetvae import geom, graph
from streetvae.graph import (
    PAD_TOKEN,
    START_TOKEN,
    STOP_TOKEN,
    Edge,
    StreetGraph,
    build_graph,
    extract_faces,
    flatten_sequence,
    detokenize,
    normalize_adjacency,
    order_nodes,
    apply_ordering,
    simplify_merge,
)


class TestBuildGraph:
    def test_two_segments_sharing_endpoint(self):
        g = build_graph([[(0, 0), (10, 0)], [(10, 0), (20, 0)]])
        assert g.n_nodes == 3 and g.n_edges == 2
        g.validate()

    def test_plus_crossing_with_shared_vertex(self):
        g = build_graph([[(-10, 0), (0, 0), (10, 0)], [(0, -10), (0, 0), (0, 10)]])
        assert g.n_nodes == 5 and g.n_edges == 4
        g.validate()

    def test_closed_rectangle_loop(self):
        g = build_graph([[(0, 0), (10, 0), (10, 10), (0, 10), (0, 0)]])
        assert g.n_nodes == 4 and g.n_edges == 4
        g.validate()

    def test_empty_input(self):
        g = build_graph([])
        assert g.n_nodes == 0 and g.n_edges == 0

    def test_intermediate_vertices_as_geometry(self):
        g = build_graph([[(0, 0), (5, 1), (10, 0)]])
        assert g.n_nodes == 2 and g.n_edges == 1
        assert g.edges[0].geometry == [(0, 0), (5, 1), (10, 0)]

    def test_no_invented_vertices(self):
        lines = [[(0.0, 0.0), (3.5, 1.25), (7.0, 0.0)], [(7.0, 0.0), (9.0, 4.0)]]
        g = build_graph(lines)
        source = {p for line in lines for p in line}
        for _, x, y in g.nodes:
            assert (x, y) in source
        for e in g.edges or []:
            for p in e.geometry or []:
                assert p in source

    def test_duplicate_edges_collapsed(self):
        g = build_graph([[(0, 0), (10, 0)], [(0, 0), (10, 0)]])
        assert g.n_edges == 1


class TestSimplifyMerge:
    def test_two_close_nodes_collapse(self):
        g = build_graph([[(0, 0), (6, 0)]])
        merged = simplify_merge(g, 10.0)
        assert merged.n_nodes == 1 and merged.n_edges == 0
        assert merged.nodes[0][1:] == (3.0, 0.0)

    def test_far_nodes_unchanged(self):
        g = build_graph([[(0, 0), (50, 0)], [(50, 0), (100, 0)]])
        merged = simplify_merge(g, 10.0)
        assert merged.n_nodes == g.n_nodes and merged.n_edges == g.n_edges

    def test_single_linkage_chain(self):
        g = build_graph([[(0, 0), (6, 0)], [(6, 0), (12, 0)]])
        merged = simplify_merge(g, 10.0)
        assert merged.n_nodes == 1
        assert merged.nodes[0][1:] == (6.0, 0.0)

    def test_idempotent_and_separated(self):
        rng = np.random.default_rng(17)
        for trial in range(10):
            pts = rng.uniform(0, 300, size=(25, 2))
            lines = [[tuple(pts[i]), tuple(pts[i + 1])] for i in range(24)]
            g = build_graph(lines)
            once = simplify_merge(g, 10.0)
            twice = simplify_merge(once, 10.0)
            assert [n[1:] for n in once.nodes] == [n[1:] for n in twice.nodes]
            assert [(e.u, e.v) for e in once.edges] == [(e.u, e.v) for e in twice.edges]
            coords = [n[1:] for n in once.nodes]
            for i in range(len(coords)):
                for j in range(i + 1, len(coords)):
                    d = np.hypot(coords[i][0] - coords[j][0], coords[i][1] - coords[j][1])
                    assert d >= 10.0

    def test_geometry_endpoints_stay_consistent(self):
        g = build_graph([[(0, 0), (3, 0)], [(3, 0), (40, 8), (80, 0)]])
        merged = simplify_merge(g, 10.0)
        merged.validate()


class TestNormalizeAdjacency:
    def test_single_node(self):
        g = StreetGraph(nodes=[(0, 0.0, 0.0)], edges=[])
        adj = normalize_adjacency(g)
        assert np.array_equal(adj.a_norm, [[1.0]])

    def test_two_connected(self):
        g = StreetGraph(nodes=[(0, 0.0, 0.0), (1, 1.0, 0.0)], edges=[Edge(0, 1)])
        adj = normalize_adjacency(g)
        assert np.allclose(adj.a_norm, [[0.5, 0.5], [0.5, 0.5]])

    def test_path_of_three(self):
        g = StreetGraph(
            nodes=[(0, 0.0, 0.0), (1, 1.0, 0.0), (2, 2.0, 0.0)],
            edges=[Edge(0, 1), Edge(1, 2)],
        )
        adj = normalize_adjacency(g)
        assert np.allclose(np.diag(adj.a_norm), [1 / 2, 1 / 3, 1 / 2])

    def test_symmetric_and_bounded(self, grid3_graph):
        adj = normalize_adjacency(grid3_graph)
        assert np.abs(adj.a_norm - adj.a_norm.T).max() < 1e-12
        assert adj.a_norm.min() >= 0.0 and adj.a_norm.max() <= 1.0
        assert np.all(np.diag(adj.a) == 1.0)


class TestOrdering:
    def test_y_then_x(self):
        g = StreetGraph(
            nodes=[(0, 1.0, 2.0), (1, 0.0, 1.0), (2, 2.0, 1.0)],
            edges=[],
        )
        perm = order_nodes(g)
        ordered = [g.nodes[i][0] for i in perm]
        assert ordered == [1, 2, 0]

    def test_tie_broken_by_id(self):
        g = StreetGraph(nodes=[(5, 1.0, 1.0), (2, 1.0, 1.0)], edges=[])
        perm = order_nodes(g)
        assert [g.nodes[i][0] for i in perm] == [2, 5]

    def test_apply_ordering_dense_ids(self, grid3_graph):
        shuffled = StreetGraph(
            nodes=list(reversed(grid3_graph.nodes)),
            edges=grid3_graph.edges,
        )
        ordered = apply_ordering(shuffled)
        assert [nid for nid, _, _ in ordered.nodes] == list(range(9))
        ys = [y for _, _, y in ordered.nodes]
        assert ys == sorted(ys)
        ordered.validate()

    def test_permutation_deterministic(self, grid3_graph):
        assert order_nodes(grid3_graph) == order_nodes(grid3_graph)
        perm = order_nodes(grid3_graph)
        assert sorted(perm) == list(range(grid3_graph.n_nodes))


class TestTokens:
    def test_single_node(self):
        toks = flatten_sequence([(5, 7)])
        assert toks == [START_TOKEN, 5, 7, STOP_TOKEN]
        assert len(toks) == 4

    def test_length_arithmetic(self):
        for n in (0, 1, 3, 10):
            qpts = [(i, i) for i in range(n)]
            assert len(flatten_sequence(qpts)) == 2 * n + 2

    def test_roundtrip_random(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            n = int(rng.integers(0, 40))
            qpts = [(int(a), int(b)) for a, b in rng.integers(0, 256, size=(n, 2))]
            assert detokenize(flatten_sequence(qpts)) == qpts

    def test_detokenize_ignores_pad(self):
        toks = [START_TOKEN, 1, 2, STOP_TOKEN, PAD_TOKEN, PAD_TOKEN]
        assert detokenize(toks) == [(1, 2)]

    def test_graph_tokens_pipeline(self, grid3_graph):
        tokens, ordered, rec = graph.graph_tokens(grid3_graph)
        assert len(tokens) == 2 * 9 + 2
        assert tokens[0] == START_TOKEN and tokens[-1] == STOP_TOKEN
        assert ordered.normalization is rec


class TestFaces:
    def test_unit_square(self):
        g = build_graph([[(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]])
        faces = extract_faces(g)
        assert len(faces) == 2
        outers = [f for f in faces if f.is_outer]
        assert len(outers) == 1
        interior = [f for f in faces if not f.is_outer][0]
        assert len(interior.ring) == 4

    def test_grid_3x3(self, grid3_graph):
        faces = extract_faces(grid3_graph)
        assert len(faces) == 5  # 4 blocks + outer
        assert sum(1 for f in faces if f.is_outer) == 1

    def test_tree_single_outer_face(self):
        g = build_graph([[(0, 0), (10, 0)], [(10, 0), (20, 5)], [(10, 0), (20, -5)]])
        faces = extract_faces(g)
        assert len(faces) == 1 and faces[0].is_outer

    def test_euler_formula_on_random_fixtures(self):
        for seed in range(100):
            g = random_planar_fixture(seed)
            faces = extract_faces(g)
            assert g.n_nodes - g.n_edges + len(faces) == 2
            assert sum(len(f.ring) for f in faces) == 2 * g.n_edges
            assert sum(1 for f in faces if f.is_outer) == 1

    def test_crossing_edges_detected(self):
        g = StreetGraph(
            nodes=[(0, 0.0, 0.0), (1, 10.0, 10.0), (2, 0.0, 10.0), (3, 10.0, 0.0)],
            edges=[Edge(0, 1), Edge(2, 3)],
        )
        with pytest.raises(graph.NonPlanarError) as err:
            extract_faces(g)
        assert err.value.edge_a == (0, 1) and err.value.edge_b == (2, 3)

    def test_face_polygon_uses_geometry(self):
        square = [[(0, 0), (1, 0)], [(1, 0), (1, 1)], [(0, 1), (1, 1)], [(0, 0), (0, 1)]]
        g = build_graph(square)
        faces = extract_faces(g)
        interior = [f for f in faces if not f.is_outer][0]
        poly = graph.face_polygon(g, interior)
        area, perim = geom.polygon_area_perimeter(poly)
        assert area == pytest.approx(1.0)
        assert perim == pytest.approx(4.0)


class TestGraphJson:
    def test_roundtrip(self, grid3_graph):
        grid3_graph.crs = "utm/31n"
        grid3_graph.normalization = geom.NormalizationRecord(center=(1.0, 2.0), scale=0.01)
        text = graph.graph_to_json(grid3_graph)
        back = graph.graph_from_json(text)
        assert back.crs == "utm/31n"
        assert back.normalization == grid3_graph.normalization
        assert back.nodes == grid3_graph.nodes
        assert [(e.u, e.v, e.geometry) for e in back.edges] == [
            (e.u, e.v, e.geometry) for e in grid3_graph.edges
        ]

    def test_deterministic_bytes(self, grid3_graph):
        assert graph.graph_to_json(grid3_graph) == graph.graph_to_json(grid3_graph)

    def test_validation_on_load(self):
        bad = '{"crs": "local", "nodes": [{"id": 0, "x": 0, "y": 0}], "edges": [{"u": 0, "v": 0}]}'
        with pytest.raises(graph.GraphError):
            graph.graph_from_json(bad)

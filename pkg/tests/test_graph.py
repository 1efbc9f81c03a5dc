import numpy as np
import pytest

from fairflip.graph import (EdgeFlip, GraphFormatError, GraphInvariantError,
                            check_feasible, classify_edge_group, flip_edge,
                            generate_sbm, load_graph, make_graph, save_graph,
                            validate_graph, TRAIN, VAL, TEST)


def write_files(tmp_path, node_rows, edge_lines, d_x=1):
    nodes = tmp_path / "nodes.csv"
    header = "id,sensitive,label,split," + ",".join("f%d" % j for j in range(d_x))
    nodes.write_text("\n".join([header] + node_rows) + "\n")
    edges = tmp_path / "edges.tsv"
    edges.write_text("".join("%s\n" % ln for ln in edge_lines))
    return nodes, edges


def tiny_graph(n=4, edges=((0, 1), (1, 2), (2, 3))):
    x = np.arange(n, dtype=float).reshape(n, 1)
    labels = np.array([i % 2 for i in range(n)])
    sensitive = np.array([0] * (n // 2) + [1] * (n - n // 2))
    split = np.array([TRAIN] * (n - 2) + [TEST, TEST])
    # make sure both groups hit the test split
    split[n // 2 - 1] = TEST
    return make_graph(x, labels, np.ones(n, bool), sensitive, split, edges)


class TestLoadGraph:
    def test_reversed_duplicates_deduplicated(self, tmp_path):
        nodes, edges = write_files(
            tmp_path,
            ["0,0,0,train,0.5", "1,0,1,test,0.5", "2,1,1,test,0.5"],
            ["0\t1", "1\t0", "1\t2"])
        g = load_graph(nodes, edges)
        assert g.num_edges == 2
        assert g.edges == frozenset({(0, 1), (1, 2)})

    def test_empty_sensitive_group_rejected(self, tmp_path):
        nodes, edges = write_files(
            tmp_path,
            ["0,0,0,train,0.5", "1,0,1,test,0.5", "2,0,1,test,0.5"],
            ["0\t1"])
        with pytest.raises(GraphInvariantError, match="sensitive group"):
            load_graph(nodes, edges)

    def test_self_loop_line_rejected_with_lineno(self, tmp_path):
        nodes, edges = write_files(
            tmp_path,
            ["0,0,0,train,0.5", "1,1,1,test,0.5", "2,0,1,test,0.5"],
            ["0\t1", "2\t2"])
        with pytest.raises(GraphFormatError, match=":2"):
            load_graph(nodes, edges)

    def test_five_node_fixture_field_by_field(self, tmp_path):
        # hand-constructed expectation for every field
        nodes, edges = write_files(
            tmp_path,
            ["0,0,1,train,1.5,-2.0",
             "1,0,0,train,0.25,3.0",
             "2,1,1,val,0.0,0.0",
             "3,1,-1,test,-1.0,4.5",
             "4,0,0,test,2.0,2.0"],
            ["0\t1", "1\t2", "2\t3", "0\t4"], d_x=2)
        g = load_graph(nodes, edges)
        assert g.n == 5
        assert g.edges == frozenset({(0, 1), (1, 2), (2, 3), (0, 4)})
        assert list(g.neighbors[0]) == [1, 4]
        assert list(g.neighbors[2]) == [1, 3]
        np.testing.assert_array_equal(g.sensitive, [0, 0, 1, 1, 0])
        np.testing.assert_array_equal(g.labeled, [True, True, True, False, True])
        np.testing.assert_array_equal(g.labels[g.labeled], [1, 0, 1, 0])
        np.testing.assert_array_equal(g.split, [TRAIN, TRAIN, VAL, TEST, TEST])
        np.testing.assert_allclose(g.x, [[1.5, -2.0], [0.25, 3.0], [0.0, 0.0],
                                         [-1.0, 4.5], [2.0, 2.0]])

    def test_parse_error_carries_line_number(self, tmp_path):
        nodes, edges = write_files(
            tmp_path,
            ["0,0,0,train,0.5", "1,1,notanint,test,0.5", "2,0,1,test,0.5"],
            ["0\t1"])
        with pytest.raises(GraphFormatError, match=":3"):
            load_graph(nodes, edges)

    def test_round_trip_is_exact(self, tmp_path):
        g = generate_sbm(n=30, d_x=3, homophily=0.7, label_noise=0.2, seed=5)
        save_graph(g, tmp_path / "n.csv", tmp_path / "e.tsv")
        g2 = load_graph(tmp_path / "n.csv", tmp_path / "e.tsv")
        assert g2.edges == g.edges
        np.testing.assert_array_equal(g2.labels, g.labels)
        np.testing.assert_array_equal(g2.labeled, g.labeled)
        np.testing.assert_array_equal(g2.sensitive, g.sensitive)
        np.testing.assert_array_equal(g2.split, g.split)
        np.testing.assert_array_equal(g2.x, g.x)  # 17 significant digits round-trip


class TestFlipEdge:
    def test_involution(self):
        g = tiny_graph()
        g2 = flip_edge(flip_edge(g, 0, 2), 0, 2)
        assert g2.edges == g.edges
        for u in range(g.n):
            np.testing.assert_array_equal(g2.neighbors[u], g.neighbors[u])

    def test_completes_triangle(self):
        g = tiny_graph(n=4, edges=((0, 1), (1, 2)))
        g2 = flip_edge(g, 0, 2)
        assert {(0, 1), (1, 2), (0, 2)} <= set(g2.edges)

    def test_self_loop_flip_rejected(self):
        with pytest.raises(ValueError):
            flip_edge(tiny_graph(), 1, 1)

    def test_edge_count_changes_by_exactly_one(self):
        g = generate_sbm(n=25, d_x=2, homophily=0.6, label_noise=0.1, seed=3)
        rng = np.random.default_rng(0)
        for _ in range(100):
            u, v = rng.integers(0, g.n, 2)
            if u == v:
                continue
            before = g.num_edges
            g2 = flip_edge(g, int(u), int(v))
            assert abs(g2.num_edges - before) == 1
            validate_graph(g2)
            g = g2


class TestFeasibility:
    def test_removing_only_edge_of_degree_one_node(self):
        g = tiny_graph(n=4, edges=((0, 1), (1, 2), (2, 3)))
        assert not check_feasible(g, EdgeFlip(u=0, v=1, kind="remove"))

    def test_additions_always_feasible(self):
        g = tiny_graph()
        assert check_feasible(g, EdgeFlip(u=0, v=3, kind="add"))

    def test_path_and_cycle_by_degree_enumeration(self):
        path = tiny_graph(n=4, edges=((0, 1), (1, 2)))
        assert not check_feasible(path, EdgeFlip(u=0, v=1, kind="remove"))
        assert not check_feasible(path, EdgeFlip(u=1, v=2, kind="remove"))
        c4 = tiny_graph(n=4, edges=((0, 1), (1, 2), (2, 3), (0, 3)))
        for (u, v) in c4.edges:
            # oracle: every node keeps degree >= 1 after the removal
            degs = c4.degrees.copy()
            degs[u] -= 1
            degs[v] -= 1
            assert check_feasible(c4, EdgeFlip(u=u, v=v, kind="remove")) == bool(
                (degs > 0).all())


class TestClassifyEdgeGroup:
    def test_four_quadrants(self):
        x = np.zeros((4, 1))
        g = make_graph(x, [0, 0, 1, 1], [True] * 4, [0, 1, 0, 1],
                       [TRAIN, TEST, TEST, TEST], [(0, 1)])
        assert classify_edge_group(g, 0, 2) == "DE"   # diff label, same group
        assert classify_edge_group(g, 0, 1) == "ED"   # same label, diff group
        assert classify_edge_group(g, 0, 3) == "DD"
        assert classify_edge_group(g, 1, 3) == "DE"
        assert classify_edge_group(g, 2, 3) == "ED"

    def test_unlabeled_endpoint_rejected(self):
        x = np.zeros((4, 1))
        g = make_graph(x, [0, 1, 0, 1], [True, False, True, True], [0, 1, 0, 1],
                       [TRAIN, TEST, TEST, TEST], [(0, 1)])
        with pytest.raises(ValueError):
            classify_edge_group(g, 0, 1)


class TestGenerateSbm:
    def test_full_homophily_has_no_inter_block_edges(self):
        g = generate_sbm(n=60, d_x=2, homophily=1.0, label_noise=0.0, seed=4)
        assert all(g.sensitive[u] == g.sensitive[v] for (u, v) in g.edges)

    def test_same_seed_is_bit_identical(self):
        a = generate_sbm(n=40, d_x=3, homophily=0.7, label_noise=0.1, seed=9)
        b = generate_sbm(n=40, d_x=3, homophily=0.7, label_noise=0.1, seed=9)
        assert a.edges == b.edges
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.split, b.split)

    def test_intra_fraction_tracks_homophily(self):
        # Monte-Carlo estimate over 10 seeds vs the configured expectation
        fractions = []
        for seed in range(10):
            g = generate_sbm(n=500, d_x=2, homophily=0.8, label_noise=0.0, seed=seed)
            intra = sum(1 for (u, v) in g.edges if g.sensitive[u] == g.sensitive[v])
            fractions.append(intra / g.num_edges)
        assert abs(np.mean(fractions) - 0.8) < 0.05

    def test_split_ratios_per_block(self):
        g = generate_sbm(n=200, d_x=2, homophily=0.6, label_noise=0.1, seed=1)
        for grp in (0, 1):
            idx = g.group_index(grp)
            tr = np.sum(g.split[idx] == TRAIN)
            te = np.sum(g.split[idx] == TEST)
            assert tr == int(0.5 * idx.size)
            assert te >= 1

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            generate_sbm(n=4, d_x=2, homophily=0.5, label_noise=0.0, seed=0)
        with pytest.raises(ValueError):
            generate_sbm(n=20, d_x=2, homophily=1.5, label_noise=0.0, seed=0)
        with pytest.raises(ValueError):
            generate_sbm(n=20, d_x=0, homophily=0.5, label_noise=0.0, seed=0)

import json

import numpy as np
import pytest

from convmorph import (
    Edge,
    Filter,
    ModuleGraph,
    PathExplosionError,
    UnassignedEdgeError,
    Vertex,
    add_filters,
    compose,
    fixture,
    identity_filter,
    load_module,
    save_module,
    zero_pad,
)

from reference import (
    assign_random_filters,
    count_paths_by_matrix,
    naive_module_filter,
    random_dag,
)


def chain(kernels, channels=2):
    names = [f"v{k}" for k in range(len(kernels) + 1)]
    vertices = tuple(Vertex(n, channels) for n in names)
    edges = tuple(
        Edge(f"e{k}", names[k], names[k + 1], kern) for k, kern in enumerate(kernels)
    )
    return ModuleGraph(vertices, edges, names[0], names[-1])


class TestValidate:
    def test_m0_ok(self):
        assert fixture("m0").validate() == []

    def test_cycle_detected(self):
        g = fixture("m0")
        bad = ModuleGraph(g.vertices, g.edges + (Edge("back", "t", "s", (1, 1)),), "s", "t")
        assert any("cycle" in p or "source" in p for p in bad.validate())

    def test_multiple_sinks(self):
        bad = ModuleGraph(
            (Vertex("s", 2), Vertex("t", 2), Vertex("u", 2)),
            (Edge("e1", "s", "t", (3, 3)), Edge("e2", "s", "u", (3, 3))),
            "s",
            "t",
        )
        assert any("sink" in p for p in bad.validate())

    def test_disconnected_vertex(self):
        g = fixture("m0")
        bad = ModuleGraph(g.vertices + (Vertex("x", 2),), g.edges, "s", "t")
        problems = bad.validate()
        assert problems  # x is both an extra source and an extra sink

    def test_filter_mismatch_reported(self):
        g = fixture("m0", channels=2)
        wrong_channels = g.with_filters({"e1": identity_filter(3)})
        assert any("channels" in p for p in wrong_channels.validate())
        wrong_kernel = g.with_filters({"e1": identity_filter(2)})
        assert any("kernel" in p for p in wrong_kernel.validate())

    def test_duplicate_ids(self):
        bad = ModuleGraph(
            (Vertex("s", 2), Vertex("t", 2)),
            (Edge("e", "s", "t", (1, 1)), Edge("e", "s", "t", (3, 3))),
            "s",
            "t",
        )
        assert any("duplicate" in p for p in bad.validate())

    def test_module_d_is_valid(self):
        assert fixture("module_d").validate() == []

    def test_even_kernel_reported(self):
        bad = ModuleGraph(
            (Vertex("s", 2), Vertex("t", 2)), (Edge("e", "s", "t", (2, 3)),), "s", "t"
        )
        assert any("odd" in p for p in bad.validate())


class TestPaths:
    def test_m0_single_path(self):
        assert fixture("m0").enumerate_paths() == (("e1",),)

    def test_resnet_two_paths(self):
        assert fixture("resnet").enumerate_paths() == (("conv1", "conv2"), ("skip",))

    def test_module_d_four_paths(self):
        paths = fixture("module_d").enumerate_paths()
        assert set(paths) == {
            ("f1", "f5"),
            ("f1", "f3", "f6"),
            ("f2", "f4", "f6"),
            ("f2", "f7"),
        }
        assert len(paths) == 4

    def test_count_matches_matrix_power_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            g = random_dag(rng)
            assert g.count_paths() == count_paths_by_matrix(g)
            assert len(g.enumerate_paths()) == g.count_paths()

    def test_explosion_guard(self):
        # fourteen stacked parallel pairs: 2^14 paths
        kernels = [(1, 1)] * 14
        g = chain(kernels)
        doubled = g.edges + tuple(
            Edge(f"p{k}", e.src, e.dst, e.kernel) for k, e in enumerate(g.edges)
        )
        g2 = ModuleGraph(g.vertices, doubled, g.source, g.sink)
        assert g2.count_paths() == 2**14
        with pytest.raises(PathExplosionError):
            g2.enumerate_paths()


class TestEffectiveKernel:
    def test_single_edge(self):
        assert fixture("m0").effective_kernel() == (3, 3)

    def test_serial_pair(self):
        assert chain([(1, 1), (3, 3)]).effective_kernel() == (3, 3)
        assert chain([(3, 3), (3, 3)]).effective_kernel() == (5, 5)

    def test_module_d_all_3x3(self):
        # longest paths have three 3x3 edges: 3+3+3-2 = 7
        assert fixture("module_d").effective_kernel() == (7, 7)

    def test_max_over_paths(self):
        assert fixture("resnet").effective_kernel() == (5, 5)
        assert fixture("morph_1c1").effective_kernel() == (5, 5)


class TestModuleFilter:
    def test_single_edge_returns_filter(self):
        rng = np.random.default_rng(0)
        f = Filter(rng.standard_normal((2, 2, 3, 3)))
        g = fixture("m0", channels=2).with_filters({"e1": f})
        assert g.module_filter().allclose(f)

    def test_parallel_halves_make_identity(self):
        g = fixture("module_a", channels=3)
        half = zero_pad(identity_filter(3, 0.5), 3, 3)
        g = g.with_filters({"e1": half, "e2": half})
        want = zero_pad(identity_filter(3, 1.0), 3, 3)
        assert g.module_filter().allclose(want)

    def test_module_d_matches_term_by_term_expression(self):
        rng = np.random.default_rng(1)
        g = assign_random_filters(fixture("module_d", channels=3), rng)
        f = {e.id: e.filter for e in g.edges}
        # direct evaluation of the four-path sum, composed term by term
        t1 = compose(f["f5"], f["f1"])
        inner = add_filters(compose(f["f3"], f["f1"]), compose(f["f4"], f["f2"]))
        t2 = compose(f["f6"], inner)
        t3 = compose(f["f7"], f["f2"])
        want = add_filters(add_filters(zero_pad(t1, 7, 7), t2), zero_pad(t3, 7, 7))
        got = g.module_filter()
        np.testing.assert_allclose(got.data, want.data, rtol=1e-12, atol=1e-12)

    def test_matches_naive_path_sum_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            g = assign_random_filters(random_dag(rng), rng)
            got = g.module_filter().data
            np.testing.assert_allclose(got, naive_module_filter(g), rtol=1e-11, atol=1e-11)

    def test_invariant_under_edge_reordering(self):
        rng = np.random.default_rng(3)
        g = assign_random_filters(fixture("module_d", channels=3), rng)
        base = g.module_filter().data
        order = list(range(len(g.edges)))
        for _ in range(5):
            rng.shuffle(order)
            shuffled = ModuleGraph(
                g.vertices, tuple(g.edges[k] for k in order), g.source, g.sink
            )
            np.testing.assert_allclose(
                shuffled.module_filter().data, base, rtol=1e-10, atol=1e-12
            )

    def test_unassigned_edge_raises(self):
        g = fixture("resnet", channels=2)
        with pytest.raises(UnassignedEdgeError):
            g.module_filter()


class TestSerialization:
    def test_json_round_trip_with_filters(self, tmp_path):
        rng = np.random.default_rng(4)
        g = assign_random_filters(fixture("resnet", channels=3), rng)
        path = tmp_path / "resnet.json"
        refs = save_module(g, path)
        assert set(refs) == {"conv1", "conv2", "skip"}
        back = load_module(path)
        assert back.same_topology(g)
        for e in g.edges:
            assert back.edge(e.id).filter.allclose(e.filter)

    def test_json_round_trip_without_filters(self, tmp_path):
        g = fixture("module_d", channels=5)
        path = tmp_path / "d.json"
        save_module(g, path)
        back = load_module(path)
        assert back.same_topology(g)
        assert back.filters() == {}

    def test_json_format_fields(self):
        doc = fixture("m0", channels=7).to_json()
        assert doc == {
            "vertices": [{"id": "s", "channels": 7}, {"id": "t", "channels": 7}],
            "edges": [{"id": "e1", "from": "s", "to": "t", "kernel": [3, 3]}],
            "source": "s",
            "sink": "t",
        }
        json.dumps(doc)  # serializable as-is

    def test_dot_output(self):
        dot = fixture("module_d", channels=8).to_dot()
        assert dot.startswith("digraph")
        assert dot.count("->") == 7
        assert dot.count("circle") == 5  # includes the two doublecircles
        assert '"s" -> "a" [label="f1 3x3"];' in dot

    def test_dot_is_deterministic(self):
        assert fixture("module_c").to_dot() == fixture("module_c").to_dot()

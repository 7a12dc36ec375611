import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfnet.autograd import forward_pass
from lfnet.errors import TopologyError
from lfnet.lattice import (FUSION_CONV, INPUT_CONV, OUTPUT_CONV, LatticeSpec, PlainSpec, analyze,
                           build_lattice, build_plain, count_parameters, distance_to_output, grid_id,
                           initialize_model, matched_plain_spec, max_degrees, min_max_depth, receptive_field)


def all_path_lengths(topo):
    """Every input->output path length (conv nodes, output excluded), by exhaustive DFS."""
    lengths = set()

    def walk(nid, depth):
        if nid == topo.output_node:
            lengths.add(depth)
            return
        for succ in topo.successors(nid):
            walk(succ, depth + 1)

    walk(topo.input_node, 1)
    return {d - 1 for d in lengths}


def brute_parameter_count(model):
    return sum(arr.size for arr in model.parameters().values())


def has_hamiltonian_path(topo):
    grid = [nid for nid in topo.nodes if nid != topo.output_node]
    order = topo.topological_order()
    chain = [nid for nid in order if nid in grid]
    return all(b in topo.successors(a) for a, b in zip(chain, chain[1:])) and \
        topo.output_node in topo.successors(chain[-1])


class TestBuild:
    def test_edge_counts_4x5(self):
        topo = build_lattice(LatticeSpec(4, 5))
        roles = [e.role for e in topo.edges]
        assert roles.count("horizontal") == 4 * 4
        assert roles.count("vertical") == 3 * 5
        assert roles.count("to-output") == 2
        assert len(topo.edges) == 4 * (5 - 1) + (4 - 1) * 5 + 2

    def test_degenerate_1x1(self):
        topo = build_lattice(LatticeSpec(1, 1))
        assert len(topo.nodes) == 2
        assert [(e.src, e.dst) for e in topo.edges] == [("r1c1", "out")]
        assert topo.nodes["out"].in_channels == 32

    def test_node_kinds_and_widths(self):
        topo = build_lattice(LatticeSpec(4, 5))
        assert topo.nodes["r1c1"].kind == INPUT_CONV and topo.nodes["r1c1"].in_channels == 1
        single = {grid_id(1, j) for j in range(2, 6)} | {"r2c5", "r3c1", "r4c5"}
        for nid, node in topo.nodes.items():
            if nid in ("r1c1", "out"):
                continue
            assert node.kind == FUSION_CONV
            assert node.in_channels == (32 if nid in single else 64), nid
        assert topo.nodes["out"].kind == OUTPUT_CONV
        assert (topo.nodes["out"].in_channels, topo.nodes["out"].out_channels) == (64, 1)

    def test_serpentine_feeders_even_rows(self):
        topo = build_lattice(LatticeSpec(4, 5))
        assert [e.src for e in topo.in_edges("out")] == ["r4c1", "r4c2"]

    def test_concat_order_vertical_first(self):
        topo = build_lattice(LatticeSpec(3, 3))
        assert [e.role for e in topo.in_edges("r2c2")] == ["vertical", "horizontal"]

    def test_sum_fusion_widths(self):
        topo = build_lattice(LatticeSpec(3, 4, fusion="sum"))
        assert {n.in_channels for nid, n in topo.nodes.items() if nid != "r1c1"} == {32}

    def test_cycle_detected(self):
        topo = build_lattice(LatticeSpec(2, 2))
        from lfnet.lattice import Edge
        topo.edges.append(Edge("r2c1", "r1c1", "vertical"))
        topo._order = None
        with pytest.raises(TopologyError):
            topo.validate()

    def test_dangling_node_detected(self):
        from lfnet.lattice import Node
        topo = build_lattice(LatticeSpec(2, 2))
        topo.nodes["orphan"] = Node("orphan", FUSION_CONV, 32, 32)
        topo._order = None
        with pytest.raises(TopologyError):
            topo.validate()

    def test_invalid_dims(self):
        with pytest.raises(TopologyError):
            LatticeSpec(0, 3)

    def test_graph_export(self):
        text = build_lattice(LatticeSpec(2, 2)).to_graph_file()
        assert "r1c1 -> r1c2 [horizontal]\n" in text
        assert "r1c1 -> r2c1 [vertical]\n" in text
        assert text.count("-> out [to-output]") == 2
        adj = build_lattice(LatticeSpec(2, 2)).to_adjacency()
        assert adj.splitlines()[0].startswith("r1c1 [input-conv 1->32]: ")


class TestDepths:
    def test_4x6_with_output(self):
        assert min_max_depth(LatticeSpec(4, 6), include_output=True) == (5, 25)

    def test_4x4_without_output(self):
        assert min_max_depth(LatticeSpec(4, 4), include_output=False) == (4, 16)

    def test_1x1(self):
        assert min_max_depth(LatticeSpec(1, 1), include_output=True) == (2, 2)

    def test_4x4_routes_from_figure(self):
        lengths = all_path_lengths(build_lattice(LatticeSpec(4, 4)))
        assert {4, 8, 16} <= lengths
        assert min(lengths) == 4 and max(lengths) == 16

    @pytest.mark.parametrize("n,m", list(itertools.product(range(2, 6), range(2, 9))))
    def test_structure_invariants(self, n, m):
        topo = build_lattice(LatticeSpec(n, m))
        assert max_degrees(topo) == (2, 2)
        assert min_max_depth(topo) == (n + 1, n * m + 1)
        lengths = all_path_lengths(topo) if n * m <= 16 else None
        if lengths is not None:
            assert (min(lengths) + 1, max(lengths) + 1) == (n + 1, n * m + 1)
        assert has_hamiltonian_path(topo)
        assert topo.in_degree("out") == 2

    @pytest.mark.parametrize("n,m", list(itertools.product(range(1, 9), range(1, 9))))
    def test_degree_bound(self, n, m):
        ins, outs = max_degrees(LatticeSpec(n, m))
        assert ins <= 2 and outs <= 2


class TestDistance:
    def test_4x4_upper_right(self):
        assert distance_to_output(LatticeSpec(4, 4), (1, 4)) == 6

    def test_4x7_upper_right(self):
        assert distance_to_output(LatticeSpec(4, 7), (1, 7)) == 9

    def test_upper_right_is_farthest_in_4x4(self):
        report = analyze(LatticeSpec(4, 4))
        dist = report["distance_to_output"]
        assert max(dist.values()) == 6
        assert [k for k, v in dist.items() if v == 6] == ["r1c4"]

    def test_feeders_are_one_layer_away(self):
        assert distance_to_output(LatticeSpec(4, 5), (4, 1)) == 1
        assert distance_to_output(LatticeSpec(4, 5), (4, 2)) == 1

    @pytest.mark.parametrize("m", range(2, 12))
    def test_scaling_with_columns(self, m):
        assert distance_to_output(LatticeSpec(4, m), (1, m)) == 3 + (m - 1)
        assert distance_to_output(LatticeSpec(4, m + 3), (1, m + 3)) - distance_to_output(
            LatticeSpec(4, m), (1, m)) == 3

    def test_unknown_node(self):
        with pytest.raises(TopologyError):
            distance_to_output(LatticeSpec(2, 2), (5, 5))


class TestParameters:
    @pytest.mark.parametrize("spec,expected,rounded", [
        (LatticeSpec(4, 5, in_channels=1), 288_481, 0.29),
        (LatticeSpec(4, 6, in_channels=1), 353_377, 0.35),
        (LatticeSpec(4, 10, in_channels=3), 614_691, 0.61),
    ])
    def test_reference_counts(self, spec, expected, rounded):
        total, breakdown = count_parameters(spec)
        assert total == expected
        assert round(total / 1e6, 2) == rounded
        assert sum(breakdown.values()) == total

    def test_per_layer_enumeration(self):
        # 4x5 gray: 1 input conv, 7 single-input and 12 two-input fusion nodes, 1 output conv
        layer = lambda cin, cout, bn=True: 9 * cin * cout + cout + (2 * cout if bn else 0)  # noqa: E731
        expected = layer(1, 32) + 7 * layer(32, 32) + 12 * layer(64, 32) + layer(64, 1, bn=False)
        assert count_parameters(LatticeSpec(4, 5))[0] == expected == 288_481

    @pytest.mark.parametrize("spec", [LatticeSpec(4, 5), LatticeSpec(4, 6), LatticeSpec(4, 10, in_channels=3),
                                      LatticeSpec(3, 4, fusion="sum"), LatticeSpec(1, 1), PlainSpec(7, 2)])
    def test_brute_force_oracle(self, spec):
        model = initialize_model(spec, seed=0)
        assert brute_parameter_count(model) == count_parameters(spec)[0]

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(1, 5), m=st.integers(1, 6), c=st.sampled_from([1, 3]), f=st.integers(1, 8),
           fusion=st.sampled_from(["concat", "sum"]))
    def test_brute_force_oracle_random(self, n, m, c, f, fusion):
        spec = LatticeSpec(n, m, filters=f, in_channels=c, fusion=fusion)
        assert brute_parameter_count(initialize_model(spec)) == count_parameters(spec)[0]


class TestReceptiveField:
    @pytest.mark.parametrize("spec,rf", [(LatticeSpec(4, 5), 43), (LatticeSpec(4, 6), 51),
                                         (LatticeSpec(4, 10, in_channels=3), 83)])
    def test_reference_networks(self, spec, rf):
        assert receptive_field(spec, 3) == rf

    def test_general_kernel(self):
        assert receptive_field(LatticeSpec(2, 2, kernel_size=5)) == 5 * 4 + 1

    def test_mixed_kernels(self):
        from dataclasses import replace
        topo = build_lattice(LatticeSpec(2, 2))
        topo.nodes["r1c2"] = replace(topo.nodes["r1c2"], kernel_size=5)
        with pytest.raises(TopologyError):
            receptive_field(topo)


class TestPlain:
    def test_matched_to_4x5(self):
        target = count_parameters(LatticeSpec(4, 5))[0]
        spec = matched_plain_spec(21, target)
        total = count_parameters(spec)[0]
        assert target <= total <= 1.15 * target
        assert count_parameters(PlainSpec(21, spec.wide_prefix - 1))[0] < target
        assert len(build_plain(spec).nodes) == 21

    def test_uniform_chain(self):
        topo = build_plain(PlainSpec(5, 0))
        assert {n.out_channels for nid, n in topo.nodes.items() if nid != "out"} == {32}

    def test_minimal_chain(self):
        topo = build_plain(PlainSpec(2))
        assert list(topo.nodes) == ["p1", "out"]
        assert min_max_depth(topo) == (2, 2)

    def test_wide_prefix_widths(self):
        topo = build_plain(PlainSpec(6, 2))
        assert [topo.nodes[f"p{k}"].out_channels for k in range(1, 6)] == [64, 64, 32, 32, 32]
        assert topo.nodes["p3"].in_channels == 64


class TestInit:
    def test_deterministic(self):
        a = initialize_model(LatticeSpec(2, 3), seed=5)
        b = initialize_model(LatticeSpec(2, 3), seed=5)
        for (ka, x), (kb, y) in zip(a.state_tensors(), b.state_tensors()):
            assert ka == kb and x.tobytes() == y.tobytes()

    def test_he_variance(self):
        model = initialize_model(LatticeSpec(3, 3), seed=1)
        for nid, node in model.topology.nodes.items():
            if node.in_channels == 32 and node.out_channels == 32:
                var = float(model.conv[nid].weight.var())
                assert abs(var / (2 / (9 * 32)) - 1) < 0.2

    def test_bn_and_bias_init(self):
        model = initialize_model(LatticeSpec(2, 2), seed=1)
        assert all(not p.bias.any() for p in model.conv.values())
        for p in model.bn.values():
            assert (p.gamma == 1).all() and (p.beta == 0).all()
            assert (p.running_mean == 0).all() and (p.running_var == 1).all()

    def test_zero_input_gives_output_bias(self):
        model = initialize_model(LatticeSpec(2, 3), seed=0)
        out, _ = forward_pass(model, np.zeros((2, 1, 6, 6), np.float32), "train")
        np.testing.assert_array_equal(out, 0)

import itertools

import numpy as np
import pytest

from lfnet.autograd import backward_pass, forward_pass, grad_check, half_sq_loss
from lfnet.errors import BackwardError, ShapeError, TopologyError
from lfnet.lattice import (FUSION_CONV, HORIZONTAL, INPUT_CONV, OUTPUT_CONV, TO_OUTPUT, VERTICAL, Edge, LatticeSpec,
                           NetworkTopology, Node, PlainSpec, initialize_model)
from lfnet.tensor_core import ConvParams, conv2d_forward


def double_model(spec, seed=0):
    return initialize_model(spec, seed=seed, precision="double")


def alt_order(topo):
    """A valid topological order that differs from the default (reverse tie-breaking)."""
    indeg = {n: topo.in_degree(n) for n in topo.nodes}
    ready = [n for n, d in indeg.items() if d == 0]
    order = []
    while ready:
        ready.sort(reverse=True)
        nid = ready.pop(0)
        order.append(nid)
        for s in topo.successors(nid):
            indeg[s] -= 1
            if indeg[s] == 0:
                ready.append(s)
    return order


class TestForward:
    def test_zero_network_gives_output_bias(self, rng):
        model = double_model(LatticeSpec(1, 1))
        for p in model.conv.values():
            p.weight[...] = 0
        model.conv["out"].bias[...] = 0.75
        out, _ = forward_pass(model, rng.normal(size=(2, 1, 5, 5)))
        np.testing.assert_array_equal(out, 0.75)

    @pytest.mark.parametrize("spec", [LatticeSpec(2, 3), LatticeSpec(3, 2, in_channels=3), PlainSpec(4, 1)])
    def test_shape_contract(self, spec, rng):
        model = initialize_model(spec)
        x = rng.normal(size=(2, spec.in_channels, 7, 9)).astype(np.float32)
        out, _ = forward_pass(model, x)
        assert out.shape == (2, spec.in_channels, 7, 9)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            forward_pass(initialize_model(LatticeSpec(2, 2)), rng.normal(size=(1, 3, 4, 4)))

    def test_identity_composition_2x2(self, rng):
        model = double_model(LatticeSpec(2, 2, filters=1))
        for nid, node in model.topology.nodes.items():
            if nid == "out":
                continue
            w = np.zeros((1, node.in_channels, 3, 3))
            w[0, :, 1, 1] = 1.0 / node.in_channels
            model.conv[nid] = ConvParams(w, np.zeros(1))
            bn = model.bn[nid]
            bn.epsilon = 0.0
        x = rng.uniform(0.1, 1.0, size=(1, 1, 6, 6))
        out, _ = forward_pass(model, x, "infer")
        expected = conv2d_forward(np.concatenate([x, x], axis=1), model.conv["out"])
        np.testing.assert_allclose(out, expected, atol=1e-14)

    def test_lattice_order_is_unique_3x3(self):
        # the serpentine visits every node, so the topological order is forced
        topo = double_model(LatticeSpec(3, 3)).topology
        assert alt_order(topo) == topo.topological_order()

    def test_order_independence_on_diamond(self, rng):
        spec = PlainSpec(2)
        topo = NetworkTopology(
            nodes={"a": Node("a", INPUT_CONV, 1, 4), "b": Node("b", FUSION_CONV, 4, 4),
                   "c": Node("c", FUSION_CONV, 4, 4), "out": Node("out", OUTPUT_CONV, 8, 1)},
            edges=[Edge("a", "b", VERTICAL), Edge("a", "c", HORIZONTAL),
                   Edge("b", "out", TO_OUTPUT), Edge("c", "out", TO_OUTPUT)],
            input_node="a", output_node="out").validate()
        model = initialize_model(topo, seed=3, precision="double", spec=spec)
        default = topo.topological_order()
        other = alt_order(topo)
        assert other != default
        x = rng.normal(size=(2, 1, 6, 6))
        a, _ = forward_pass(model, x, order=default, update_stats=False)
        b, _ = forward_pass(model, x, order=other, update_stats=False)
        assert a.tobytes() == b.tobytes()

    def test_invalid_order_rejected(self, rng):
        model = double_model(LatticeSpec(2, 2))
        with pytest.raises(TopologyError):
            forward_pass(model, rng.normal(size=(1, 1, 4, 4)), order=list(reversed(model.topology.topological_order())))

    def test_train_mode_updates_running_stats(self, rng):
        model = double_model(LatticeSpec(1, 2))
        forward_pass(model, rng.normal(size=(2, 1, 4, 4)), "train")
        assert not np.all(model.bn["r1c1"].running_var == 1)
        before = model.bn["r1c1"].running_var.copy()
        forward_pass(model, rng.normal(size=(2, 1, 4, 4)), "train", update_stats=False)
        np.testing.assert_array_equal(model.bn["r1c1"].running_var, before)


class TestBackward:
    def test_zero_cotangent(self, rng):
        model = double_model(LatticeSpec(2, 2))
        out, trace = forward_pass(model, rng.normal(size=(2, 1, 5, 5)))
        grads = backward_pass(model, trace, np.zeros_like(out))
        assert all(not g.any() for g in grads.values())

    def test_gradient_set_covers_parameters(self, rng):
        model = double_model(LatticeSpec(2, 3))
        out, trace = forward_pass(model, rng.normal(size=(2, 1, 5, 5)))
        grads = backward_pass(model, trace, out)
        params = model.parameters()
        assert grads.keys() == params.keys()
        assert all(grads[k].shape == params[k].shape for k in params)

    def test_full_finite_difference_2x2(self, rng):
        # every coordinate of a narrow 2x2 lattice
        model = double_model(LatticeSpec(2, 2, filters=3), seed=4)
        report = grad_check(model, rng.normal(size=(2, 1, 5, 5)), tolerance=1e-6, coords_per_tensor=10**6)
        assert report.passed, str(report)
        assert all(g.checked > 0 for g in report.groups)

    def test_fan_out_additivity(self, rng):
        model = double_model(LatticeSpec(2, 2), seed=2)
        out, trace = forward_pass(model, rng.normal(size=(2, 1, 6, 6)))
        full = backward_pass(model, trace, out)
        only_vertical = backward_pass(model, trace, out, blocked_edges=[("r1c1", "r1c2")])
        only_horizontal = backward_pass(model, trace, out, blocked_edges=[("r1c1", "r2c1")])
        for role in ("weight", "bias", "gamma", "beta"):
            key = ("r1c1", role)
            np.testing.assert_allclose(only_vertical[key] + only_horizontal[key], full[key], atol=1e-10, rtol=0)
        assert not np.allclose(only_vertical[("r1c1", "weight")], full[("r1c1", "weight")])

    def test_trace_from_other_model(self, rng):
        a, b = double_model(LatticeSpec(2, 2)), double_model(LatticeSpec(2, 2))
        out, trace = forward_pass(a, rng.normal(size=(2, 1, 4, 4)))
        with pytest.raises(BackwardError):
            backward_pass(b, trace, out)

    def test_infer_trace_rejected(self, rng):
        model = double_model(LatticeSpec(2, 2))
        out, trace = forward_pass(model, rng.normal(size=(2, 1, 4, 4)), "infer")
        with pytest.raises(BackwardError):
            backward_pass(model, trace, out)

    def test_sum_fusion_gradients(self, rng):
        model = double_model(LatticeSpec(2, 3, fusion="sum"), seed=1)
        report = grad_check(model, rng.normal(size=(2, 1, 6, 6)), tolerance=1e-6)
        assert report.passed, str(report)


class TestGradCheck:
    def test_fresh_2x3(self, rng):
        model = double_model(LatticeSpec(2, 3), seed=0)
        report = grad_check(model, rng.normal(size=(1, 1, 8, 8)), tolerance=1e-5)
        assert report.passed, str(report)

    def test_plain_three_layers(self, rng):
        model = double_model(PlainSpec(3, 1), seed=0)
        report = grad_check(model, rng.normal(size=(2, 1, 6, 6)), tolerance=1e-6)
        assert report.passed, str(report)

    def test_corrupted_backward_is_caught(self, rng):
        model = double_model(LatticeSpec(2, 2), seed=0)

        def broken(model, trace, g):
            grads = backward_pass(model, trace, g)
            grads[("r1c2", "weight")] = grads[("r1c2", "weight")] * 1.01
            return grads

        report = grad_check(model, rng.normal(size=(1, 1, 8, 8)), tolerance=1e-5, backward=broken)
        assert not report.passed
        assert report.worst.key == ("r1c2", "weight")
        assert len(report.worst.coordinate) == 4
        assert "FAIL" in str(report)

    def test_requires_double(self, rng):
        with pytest.raises(ValueError):
            grad_check(initialize_model(LatticeSpec(1, 1)), rng.normal(size=(1, 1, 4, 4)))

    @pytest.mark.parametrize("n,m", list(itertools.product(range(1, 5), range(1, 5))))
    def test_every_small_lattice(self, n, m, rng):
        model = double_model(LatticeSpec(n, m, filters=8), seed=n * 10 + m)
        report = grad_check(model, rng.normal(size=(2, 1, 6, 6)), tolerance=1e-6, coords_per_tensor=3)
        assert report.passed, str(report)


def test_half_sq_loss():
    x = np.array([1.0, -2.0])
    loss, g = half_sq_loss(x)
    assert loss == 2.5 and g is x

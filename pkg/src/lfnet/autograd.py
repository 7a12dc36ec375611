"""Forward and reverse passes over an acyclic layer graph, plus a finite-difference checker."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BackwardError, ShapeError, TopologyError
from .tensor_core import (
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    relu,
    relu_backward,
)


@dataclass
class NodeRecord:
    inputs: np.ndarray  # fused input fed to the conv
    pre_relu: np.ndarray | None = None  # batch-norm output
    bn_cache: object = None
    in_widths: list = field(default_factory=list)


@dataclass
class ComputeTrace:
    order: list
    mode: str
    records: dict
    topology: object
    image: np.ndarray

    def relu_pattern(self):
        return {nid: rec.pre_relu > 0 for nid, rec in self.records.items() if rec.pre_relu is not None}


def _check_order(topology, order):
    if sorted(order) != sorted(topology.nodes):
        raise TopologyError("order must list every node exactly once")
    pos = {nid: k for k, nid in enumerate(order)}
    for e in topology.edges:
        if pos[e.src] >= pos[e.dst]:
            raise TopologyError(f"edge {e.src}->{e.dst} points backwards in the given order")


def _fuse(node, parts):
    if len(parts) == 1:
        return parts[0]
    if node.fusion == "sum":
        return sum(parts[1:], parts[0].copy())
    return np.concatenate(parts, axis=1)


def forward_pass(model, x, mode="train", order=None, update_stats=True):
    """Run the network; returns ``(output, trace)``.

    Each hidden node applies conv -> batch norm -> ReLU to the fusion of its
    in-edges; the output node is a bare conv. In train mode the running
    batch-norm statistics of ``model`` are updated unless ``update_stats`` is off.
    """
    topo = model.topology
    if x.ndim != 4 or x.shape[1] != model.in_channels:
        raise ShapeError(f"model expects {model.in_channels}-channel NCHW input, got shape {x.shape}",
                         expected=model.in_channels, actual=x.shape[1] if x.ndim == 4 else None)
    if order is None:
        order = topo.topological_order()
    else:
        _check_order(topo, order)
    x = x.astype(model.dtype, copy=False)

    acts = {}
    records = {}
    for nid in order:
        node = topo.nodes[nid]
        if nid == topo.input_node:
            parts = [x]
        else:
            parts = [acts[e.src] for e in topo.in_edges(nid)]
        fused = _fuse(node, parts)
        rec = NodeRecord(inputs=fused, in_widths=[p.shape[1] for p in parts])
        out = conv2d_forward(fused, model.conv[nid])
        if node.has_bn:
            bn = model.bn[nid]
            out, rec.bn_cache = batchnorm_forward(out, bn, mode)
            if mode == "train" and update_stats:
                bn.running_mean[...] = rec.bn_cache.running_mean
                bn.running_var[...] = rec.bn_cache.running_var
            rec.pre_relu = out
            out = relu(out)
        acts[nid] = out
        records[nid] = rec
    trace = ComputeTrace(order=list(order), mode=mode, records=records, topology=topo, image=x)
    return acts[topo.output_node], trace


def backward_pass(model, trace, grad_output, blocked_edges=()):
    """Reverse sweep; returns a gradient set keyed like ``model.parameters()``.

    Cotangents from several consumers are summed. Edges listed in
    ``blocked_edges`` as ``(src, dst)`` pairs pass no cotangent back.
    """
    topo = model.topology
    if trace.topology is not topo or set(trace.records) != set(topo.nodes):
        raise BackwardError("trace was produced by a different model")
    if trace.mode != "train":
        raise BackwardError("backward needs a train-mode trace")
    blocked = set(blocked_edges)

    cot = {topo.output_node: grad_output}
    grads = {}
    for nid in reversed(trace.order):
        node = topo.nodes[nid]
        rec = trace.records[nid]
        g = cot.pop(nid, None)
        if g is None:
            g = np.zeros((rec.inputs.shape[0], node.out_channels) + rec.inputs.shape[2:], rec.inputs.dtype)
        if node.has_bn:
            g = relu_backward(rec.pre_relu, g)
            g, grads[(nid, "gamma")], grads[(nid, "beta")] = batchnorm_backward(rec.bn_cache, g)
        g_in, grads[(nid, "weight")], grads[(nid, "bias")] = conv2d_backward(rec.inputs, model.conv[nid], g)
        if nid == topo.input_node:
            continue
        offset = 0
        for e, width in zip(topo.in_edges(nid), rec.in_widths):
            if node.fusion == "sum" or len(rec.in_widths) == 1:
                part = g_in
            else:
                part = g_in[:, offset:offset + width]
                offset += width
            if (e.src, e.dst) in blocked:
                continue
            if e.src in cot:
                cot[e.src] = cot[e.src] + part
            else:
                cot[e.src] = part
    return {key: grads[key] for key in model.parameters()}


def half_sq_loss(output):
    """0.5 * ||output||^2 and its gradient, the default scalar for gradient checks."""
    return 0.5 * float(np.sum(output * output)), output


@dataclass
class GroupReport:
    key: tuple
    max_rel_error: float
    coordinate: tuple
    analytic: float
    numeric: float
    checked: int


@dataclass
class GradCheckReport:
    tolerance: float
    groups: list
    skipped_kinks: int

    @property
    def max_rel_error(self):
        return max((g.max_rel_error for g in self.groups), default=0.0)

    @property
    def worst(self):
        return max(self.groups, key=lambda g: g.max_rel_error)

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance

    def __str__(self):
        w = self.worst
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max rel error {w.max_rel_error:.3e} at {w.key}{w.coordinate} "
                f"(analytic {w.analytic:.6e}, numeric {w.numeric:.6e}); tol {self.tolerance:g}")


def relative_error(analytic, numeric, floor=1e-2):
    """|a - n| / max(|a|, |n|, floor): relative for ordinary components, absolute
    below ``floor`` so structurally-zero gradients are not judged on round-off."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(model, x, tolerance=1e-6, step=1e-5, coords_per_tensor=6, seed=0,
               loss_fn=half_sq_loss, floor=1e-2, backward=backward_pass):
    """Compare reverse-mode gradients with central differences on sampled coordinates.

    Coordinates whose perturbation flips any ReLU pattern are non-differentiable
    points for a finite difference; they are skipped and resampled.
    """
    if model.dtype != np.float64:
        raise ValueError("grad_check needs a double-precision model (model.astype('double'))")
    rng = np.random.default_rng(seed)
    out, trace = forward_pass(model, x, "train", update_stats=False)
    _, g_out = loss_fn(out)
    grads = backward(model, trace, g_out)
    base_pattern = trace.relu_pattern()

    def probe():
        o, t = forward_pass(model, x, "train", update_stats=False)
        pat = t.relu_pattern()
        same = all(np.array_equal(pat[k], base_pattern[k]) for k in pat)
        return loss_fn(o)[0], same

    groups = []
    skipped = 0
    for key, param in model.parameters().items():
        worst = GroupReport(key, 0.0, (), 0.0, 0.0, 0)
        flat = param.reshape(-1)
        budget = min(coords_per_tensor, flat.size)
        attempts = 0
        while worst.checked < budget and attempts < 20 * budget:
            attempts += 1
            idx = int(rng.integers(flat.size))
            orig = flat[idx]
            flat[idx] = orig + step
            lp, ok_p = probe()
            flat[idx] = orig - step
            lm, ok_m = probe()
            flat[idx] = orig
            if not (ok_p and ok_m):
                skipped += 1
                continue
            numeric = (lp - lm) / (2 * step)
            analytic = float(grads[key].reshape(-1)[idx])
            err = relative_error(analytic, numeric, floor)
            worst.checked += 1
            if err >= worst.max_rel_error:
                worst.max_rel_error = err
                worst.coordinate = tuple(int(i) for i in np.unravel_index(idx, param.shape))
                worst.analytic, worst.numeric = analytic, numeric
        groups.append(worst)
    return GradCheckReport(tolerance, groups, skipped)

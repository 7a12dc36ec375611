"""Serpentine lattice topologies, plain-chain baselines, and structural analysis.

Grid nodes are ``(i, j)`` with rows 1..n top to bottom and columns 1..m. Odd
rows run left to right, even rows right to left, and every column carries a
downward edge, so one directed path visits every grid node (the serpentine)
while the column-1 descent reaches the bottom row in n steps.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import TopologyError
from .tensor_core import BatchNormParams, ConvParams, dtype_of

INPUT_CONV = "input-conv"
FUSION_CONV = "fusion-conv"
OUTPUT_CONV = "output-conv"

HORIZONTAL = "horizontal"
VERTICAL = "vertical"
TO_OUTPUT = "to-output"
CHAIN = "chain"

# concatenation order at a two-input node
_ROLE_RANK = {VERTICAL: 0, HORIZONTAL: 1, CHAIN: 2, TO_OUTPUT: 3}


@dataclass(frozen=True)
class LatticeSpec:
    rows: int
    cols: int
    filters: int = 32
    kernel_size: int = 3
    in_channels: int = 1
    fusion: str = "concat"

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise TopologyError(f"lattice needs rows, cols >= 1, got {self.rows}x{self.cols}")
        if self.fusion not in ("concat", "sum"):
            raise TopologyError(f"fusion must be 'concat' or 'sum', got {self.fusion!r}")
        if self.in_channels not in (1, 3):
            raise TopologyError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise TopologyError(f"kernel size must be odd, got {self.kernel_size}")

    @property
    def out_channels(self):
        return self.in_channels

    def build(self):
        return build_lattice(self)


@dataclass(frozen=True)
class PlainSpec:
    layers: int
    wide_prefix: int = 0
    filters: int = 32
    wide_filters: int = 64
    kernel_size: int = 3
    in_channels: int = 1

    def __post_init__(self):
        if self.layers < 2:
            raise TopologyError(f"plain chain needs at least 2 layers, got {self.layers}")
        if not 0 <= self.wide_prefix <= self.layers - 1:
            raise TopologyError(f"wide_prefix must lie in [0, {self.layers - 1}], got {self.wide_prefix}")

    @property
    def out_channels(self):
        return self.in_channels

    def build(self):
        return build_plain(self)


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    pos: tuple[int, int] | None = None
    fusion: str = "concat"

    @property
    def has_bn(self):
        return self.kind != OUTPUT_CONV


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    role: str


@dataclass
class NetworkTopology:
    nodes: dict[str, Node]
    edges: list[Edge]
    input_node: str
    output_node: str
    _order: list[str] | None = field(default=None, repr=False, compare=False)

    def in_edges(self, node_id):
        """Incoming edges in concatenation order (vertical before horizontal)."""
        found = [e for e in self.edges if e.dst == node_id]
        return sorted(found, key=lambda e: _ROLE_RANK[e.role])

    def out_edges(self, node_id):
        return [e for e in self.edges if e.src == node_id]

    def in_degree(self, node_id):
        return sum(1 for e in self.edges if e.dst == node_id)

    def out_degree(self, node_id):
        return sum(1 for e in self.edges if e.src == node_id)

    def successors(self, node_id):
        return [e.dst for e in self.edges if e.src == node_id]

    def topological_order(self):
        """Kahn's algorithm, ties broken by node insertion order. Raises on cycles."""
        if self._order is not None:
            return list(self._order)
        indeg = {nid: 0 for nid in self.nodes}
        for e in self.edges:
            indeg[e.dst] += 1
        rank = {nid: k for k, nid in enumerate(self.nodes)}
        ready = sorted((nid for nid, d in indeg.items() if d == 0), key=rank.get)
        order = []
        while ready:
            nid = ready.pop(0)
            order.append(nid)
            for succ in self.successors(nid):
                indeg[succ] -= 1
                if indeg[succ] == 0:
                    ready.append(succ)
                    ready.sort(key=rank.get)
        if len(order) != len(self.nodes):
            raise TopologyError("topology contains a cycle")
        self._order = order
        return list(order)

    def validate(self):
        """Check acyclicity, that every node lies on an input->output path, and channel arithmetic."""
        for e in self.edges:
            if e.src not in self.nodes or e.dst not in self.nodes:
                raise TopologyError(f"edge {e.src}->{e.dst} references an unknown node")
        self.topological_order()
        reach_fwd = _reachable(self.input_node, self.successors)
        preds = {nid: [] for nid in self.nodes}
        for e in self.edges:
            preds[e.dst].append(e.src)
        reach_back = _reachable(self.output_node, preds.__getitem__)
        for nid in self.nodes:
            if nid not in reach_fwd:
                raise TopologyError(f"node {nid} is not reachable from the input")
            if nid not in reach_back:
                raise TopologyError(f"node {nid} has no path to the output")
        for nid, node in self.nodes.items():
            incoming = self.in_edges(nid)
            if nid == self.input_node:
                if incoming:
                    raise TopologyError("the input node must not have incoming edges")
                continue
            widths = [self.nodes[e.src].out_channels for e in incoming]
            expect = sum(widths) if node.fusion == "concat" else widths[0]
            if node.fusion == "sum" and len(set(widths)) != 1:
                raise TopologyError(f"sum fusion at {nid} needs equal widths, got {widths}")
            if expect != node.in_channels:
                raise TopologyError(f"node {nid} reads {node.in_channels} channels but receives {expect}")
        return self

    def to_adjacency(self):
        lines = []
        for nid in self.topological_order():
            node = self.nodes[nid]
            succ = ", ".join(self.successors(nid)) or "-"
            lines.append(f"{nid} [{node.kind} {node.in_channels}->{node.out_channels}]: {succ}")
        return "\n".join(lines) + "\n"

    def to_graph_file(self):
        return "".join(f"{e.src} -> {e.dst} [{e.role}]\n" for e in self.edges)


def _reachable(start, neighbours):
    seen = {start}
    queue = deque([start])
    while queue:
        for nxt in neighbours(queue.popleft()):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def grid_id(i, j):
    return f"r{i}c{j}"


def serpentine_terminal(rows, cols):
    return (rows, cols) if rows % 2 == 1 else (rows, 1)


def build_lattice(spec):
    n, m, f, k = spec.rows, spec.cols, spec.filters, spec.kernel_size
    edges = []
    for i in range(1, n + 1):
        for j in range(1, m):
            if i % 2 == 1:
                edges.append(Edge(grid_id(i, j), grid_id(i, j + 1), HORIZONTAL))
            else:
                edges.append(Edge(grid_id(i, j + 1), grid_id(i, j), HORIZONTAL))
    for i in range(1, n):
        for j in range(1, m + 1):
            edges.append(Edge(grid_id(i, j), grid_id(i + 1, j), VERTICAL))

    # Output feeders: the serpentine endpoint plus the bottom-left corner, which
    # closes the shortest (column-1) descent. When they coincide (even n) the
    # endpoint's predecessor is used instead.
    terminal = serpentine_terminal(n, m)
    if n * m == 1:
        feeders = [terminal]
    elif terminal != (n, 1):
        feeders = [terminal, (n, 1)]
    elif m > 1:
        feeders = [terminal, (n, 2)]
    else:
        feeders = [terminal, (n - 1, 1)]
    for pos in feeders:
        edges.append(Edge(grid_id(*pos), "out", TO_OUTPUT))

    fan_in = {}
    for e in edges:
        fan_in[e.dst] = fan_in.get(e.dst, 0) + 1

    def width(count):
        return f if spec.fusion == "sum" else f * count

    nodes = {}
    order = _serpentine_cells(n, m)
    for (i, j) in order:
        nid = grid_id(i, j)
        if (i, j) == (1, 1):
            nodes[nid] = Node(nid, INPUT_CONV, spec.in_channels, f, k, (i, j), spec.fusion)
        else:
            nodes[nid] = Node(nid, FUSION_CONV, width(fan_in[nid]), f, k, (i, j), spec.fusion)
    nodes["out"] = Node("out", OUTPUT_CONV, width(fan_in["out"]), spec.out_channels, k, None, spec.fusion)
    return NetworkTopology(nodes, edges, grid_id(1, 1), "out").validate()


def _serpentine_cells(n, m):
    cells = []
    for i in range(1, n + 1):
        cols = range(1, m + 1) if i % 2 == 1 else range(m, 0, -1)
        cells.extend((i, j) for j in cols)
    return cells


def build_plain(spec):
    hidden = spec.layers - 1
    widths = [spec.wide_filters if h < spec.wide_prefix else spec.filters for h in range(hidden)]
    nodes = {}
    edges = []
    prev_width = spec.in_channels
    for h, width in enumerate(widths, start=1):
        nid = f"p{h}"
        kind = INPUT_CONV if h == 1 else FUSION_CONV
        nodes[nid] = Node(nid, kind, prev_width, width, spec.kernel_size)
        if h > 1:
            edges.append(Edge(f"p{h - 1}", nid, CHAIN))
        prev_width = width
    nodes["out"] = Node("out", OUTPUT_CONV, prev_width, spec.out_channels, spec.kernel_size)
    edges.append(Edge(f"p{hidden}", "out", TO_OUTPUT))
    return NetworkTopology(nodes, edges, "p1", "out").validate()


def matched_plain_spec(layers, target_params, in_channels=1, filters=32, wide_filters=64, kernel_size=3):
    """Smallest wide prefix whose plain-chain parameter count reaches ``target_params``."""
    for prefix in range(layers):
        spec = PlainSpec(layers, prefix, filters, wide_filters, kernel_size, in_channels)
        if count_parameters(spec)[0] >= target_params:
            return spec
    return PlainSpec(layers, layers - 1, filters, wide_filters, kernel_size, in_channels)


# ---------------------------------------------------------------------------
# analysis


def _as_topology(obj):
    if isinstance(obj, NetworkTopology):
        return obj
    if isinstance(obj, (LatticeSpec, PlainSpec)):
        return obj.build()
    if isinstance(obj, NetworkModel):
        return obj.topology
    raise TypeError(f"expected a spec, topology or model, got {type(obj).__name__}")


def min_max_depth(topology, include_output=True):
    """Shortest and longest input->output path, counted in conv layers."""
    topo = _as_topology(topology)
    order = topo.topological_order()
    lo = {topo.input_node: 1}
    hi = {topo.input_node: 1}
    for nid in order:
        if nid not in lo:
            continue
        for succ in topo.successors(nid):
            lo[succ] = min(lo.get(succ, lo[nid] + 1), lo[nid] + 1)
            hi[succ] = max(hi.get(succ, 0), hi[nid] + 1)
    drop = 0 if include_output else 1
    return lo[topo.output_node] - drop, hi[topo.output_node] - drop


def distance_to_output(topology, node):
    """Conv layers a signal leaving ``node`` passes before the loss: the edge count
    of the shortest directed path from ``node`` to the output, output conv included."""
    topo = _as_topology(topology)
    nid = grid_id(*node) if isinstance(node, tuple) else node
    if nid not in topo.nodes:
        raise TopologyError(f"node {node!r} not found")
    dist = {nid: 0}
    queue = deque([nid])
    while queue:
        cur = queue.popleft()
        if cur == topo.output_node:
            return dist[cur]
        for succ in topo.successors(cur):
            if succ not in dist:
                dist[succ] = dist[cur] + 1
                queue.append(succ)
    raise TopologyError(f"node {nid} has no path to the output")


def distance_table(topology):
    topo = _as_topology(topology)
    return {nid: distance_to_output(topo, nid) for nid in topo.nodes if nid != topo.output_node}


def max_degrees(topology):
    topo = _as_topology(topology)
    return (max(topo.in_degree(n) for n in topo.nodes),
            max(topo.out_degree(n) for n in topo.nodes))


def node_parameter_count(node):
    conv = node.kernel_size ** 2 * node.in_channels * node.out_channels + node.out_channels
    return conv + (2 * node.out_channels if node.has_bn else 0)


def count_parameters(obj):
    """Analytic learnable-parameter count: ``(total, {node_id: count})``.

    Conv weights and biases plus batch-norm gamma/beta; running statistics are
    not learnable and are excluded.
    """
    topo = _as_topology(obj)
    breakdown = {nid: node_parameter_count(node) for nid, node in topo.nodes.items()}
    return sum(breakdown.values()), breakdown


def receptive_field(topology, kernel_size=None):
    topo = _as_topology(topology)
    sizes = {node.kernel_size for node in topo.nodes.values()}
    if len(sizes) != 1:
        raise TopologyError(f"receptive field needs a uniform kernel size, found {sorted(sizes)}")
    k = sizes.pop()
    if kernel_size is not None and kernel_size != k:
        raise TopologyError(f"topology uses {k}x{k} kernels, not {kernel_size}")
    _, depth = min_max_depth(topo, include_output=True)
    return depth * (k - 1) + 1


# ---------------------------------------------------------------------------
# models


@dataclass
class NetworkModel:
    spec: LatticeSpec | PlainSpec
    topology: NetworkTopology
    conv: dict[str, ConvParams]
    bn: dict[str, BatchNormParams]

    @property
    def dtype(self):
        return self.conv[self.topology.input_node].weight.dtype

    @property
    def in_channels(self):
        return self.spec.in_channels

    def parameters(self):
        """Learnable tensors keyed by ``(node_id, role)``, in topological order."""
        params = {}
        for nid in self.topology.topological_order():
            params[(nid, "weight")] = self.conv[nid].weight
            params[(nid, "bias")] = self.conv[nid].bias
            if nid in self.bn:
                params[(nid, "gamma")] = self.bn[nid].gamma
                params[(nid, "beta")] = self.bn[nid].beta
        return params

    def state_tensors(self):
        """Every stored tensor (learnable and running statistics) in file order."""
        out = []
        for nid in self.topology.topological_order():
            out += [((nid, "weight"), self.conv[nid].weight), ((nid, "bias"), self.conv[nid].bias)]
            if nid in self.bn:
                bn = self.bn[nid]
                out += [((nid, "gamma"), bn.gamma), ((nid, "beta"), bn.beta),
                        ((nid, "running_mean"), bn.running_mean), ((nid, "running_var"), bn.running_var)]
        return out

    def astype(self, precision):
        dt = dtype_of(precision) if isinstance(precision, str) else np.dtype(precision)
        conv = {nid: ConvParams(p.weight.astype(dt), p.bias.astype(dt)) for nid, p in self.conv.items()}
        bn = {
            nid: BatchNormParams(p.gamma.astype(dt), p.beta.astype(dt), p.running_mean.astype(dt),
                                 p.running_var.astype(dt), p.epsilon, p.momentum)
            for nid, p in self.bn.items()
        }
        return NetworkModel(self.spec, self.topology, conv, bn)

    def copy(self):
        return self.astype(self.dtype)


def initialize_model(spec_or_topology, seed=0, precision="single", spec=None):
    """He-normal conv weights (variance 2 / fan-in), zero biases, identity batch norm."""
    if isinstance(spec_or_topology, NetworkTopology):
        topo = spec_or_topology
        if spec is None:
            raise ValueError("a spec is required alongside a bare topology")
    else:
        spec = spec_or_topology
        topo = spec.build()
    dt = dtype_of(precision)
    rng = np.random.default_rng(seed)
    conv, bn = {}, {}
    for nid in topo.topological_order():
        node = topo.nodes[nid]
        k = node.kernel_size
        std = np.sqrt(2.0 / (k * k * node.in_channels))
        weight = rng.normal(0.0, std, size=(node.out_channels, node.in_channels, k, k)).astype(dt)
        conv[nid] = ConvParams(weight, np.zeros(node.out_channels, dt))
        if node.has_bn:
            bn[nid] = BatchNormParams.identity(node.out_channels, dt)
    return NetworkModel(spec, topo, conv, bn)


def zero_model(spec, precision="single"):
    """Model whose every conv weight and bias is zero (a zero-residual denoiser)."""
    model = initialize_model(spec, 0, precision)
    for p in model.conv.values():
        p.weight[...] = 0
        p.bias[...] = 0
    return model


def analyze(spec):
    """Structural report for a lattice or plain spec, as plain JSON-ready types."""
    topo = _as_topology(spec)
    total, breakdown = count_parameters(topo)
    in_deg, out_deg = max_degrees(topo)
    lo_in, hi_in = min_max_depth(topo, include_output=True)
    lo_ex, hi_ex = min_max_depth(topo, include_output=False)
    return {
        "spec": {k: getattr(spec, k) for k in spec.__dataclass_fields__},
        "nodes": len(topo.nodes),
        "edges": len(topo.edges),
        "min_depth": lo_in,
        "max_depth": hi_in,
        "min_depth_excl_output": lo_ex,
        "max_depth_excl_output": hi_ex,
        "max_in_degree": in_deg,
        "max_out_degree": out_deg,
        "distance_to_output": distance_table(topo),
        "parameters": total,
        "parameter_breakdown": breakdown,
        "receptive_field": receptive_field(topo),
    }

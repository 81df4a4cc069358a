"""Forward evaluation of modules on blobs, with the non-convolutional
layers needed to run morphed fixtures end to end.

Edges carry ordered chains of layer operations: convolutions, parametric
activations (1-a)*phi + a*identity (exactly the identity at a=1 for any
base activation), and per-channel batch normalization. A freshly inserted
batch norm with gamma=1, beta=0 and stored statistics mean=0, var=1-eps is
an exact identity, so wrapping a just-morphed module changes nothing until
the parameters are trained away from their initial values.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graph import GraphError, ModuleGraph
from .tensors import Blob, DimensionError, Filter, conv_blob

__all__ = [
    "ACTIVATIONS",
    "BatchNormOp",
    "ConvOp",
    "LayeredModule",
    "PactOp",
    "batchnorm",
    "forward",
    "identity_batchnorm",
    "linear_module",
    "pact",
    "with_identity_wrappers",
]

ACTIVATIONS = {
    "relu": lambda x: np.maximum(x, 0.0),
    "tanh": np.tanh,
    "identity": lambda x: x,
}


@dataclass(frozen=True)
class ConvOp:
    filter: Filter

    kind = "conv"


@dataclass(frozen=True)
class PactOp:
    """Parametric activation (1-a)*base + a*identity, a in [0, 1]."""

    a: float
    base: str = "relu"

    kind = "pact"

    def __post_init__(self):
        if not 0.0 <= self.a <= 1.0:
            raise ValueError(f"activation parameter must be in [0, 1], got {self.a}")
        if self.base not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.base!r}")


@dataclass(frozen=True)
class BatchNormOp:
    """Channelwise (x - mean) / sqrt(var + eps) * gamma + beta."""

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    kind = "bn"

    def __post_init__(self):
        for name in ("gamma", "beta", "mean", "var"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            object.__setattr__(self, name, arr)
        lengths = {self.gamma.size, self.beta.size, self.mean.size, self.var.size}
        if len(lengths) != 1:
            raise DimensionError("batch norm parameter vectors must share one length")
        if np.any(self.var < 0):
            raise ValueError("variances must be >= 0")
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")


LayerOp = ConvOp | PactOp | BatchNormOp


def pact(x: Blob, a: float, base: str = "relu") -> Blob:
    """Parametric activation applied elementwise."""
    op = PactOp(a, base)
    phi = ACTIVATIONS[op.base]
    return Blob((1.0 - op.a) * phi(x.data) + op.a * x.data)


def batchnorm(x: Blob, op: BatchNormOp) -> Blob:
    if op.gamma.size != x.c:
        raise DimensionError(
            f"batch norm parameters sized {op.gamma.size}, blob has {x.c} channels"
        )
    scale = (op.gamma / np.sqrt(op.var + op.eps))[:, None, None]
    shift = (op.beta - op.mean * op.gamma / np.sqrt(op.var + op.eps))[:, None, None]
    return Blob(x.data * scale + shift)


def identity_batchnorm(channels: int, eps: float = 1e-5) -> BatchNormOp:
    """Batch norm that is exactly the identity as initialized: gamma=1,
    beta=0 with stored statistics mean=0, var=1-eps."""
    ones = np.ones(channels)
    return BatchNormOp(ones, np.zeros(channels), np.zeros(channels), ones - eps, eps)


def _apply_op(op: LayerOp, x: Blob) -> Blob:
    if isinstance(op, ConvOp):
        return conv_blob(op.filter, x)
    if isinstance(op, PactOp):
        return pact(x, op.a, op.base)
    return batchnorm(x, op)


@dataclass(frozen=True)
class LayeredModule:
    """A module graph whose edges carry layer chains.

    Edges missing from `ops` default to their assigned filter as a single
    convolution. Chains are validated for channel consistency end to end.
    """

    graph: ModuleGraph
    ops: dict[str, tuple[LayerOp, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "ops", {eid: tuple(chain) for eid, chain in self.ops.items()}
        )

    def chain(self, edge_id: str) -> tuple[LayerOp, ...]:
        if edge_id in self.ops:
            return self.ops[edge_id]
        e = self.graph.edge(edge_id)
        if e.filter is None:
            raise GraphError(f"edge {edge_id!r} has neither ops nor a filter")
        return (ConvOp(e.filter),)

    def validate(self) -> list[str]:
        problems = self.graph.validate()
        if problems:
            return problems
        for e in self.graph.edges:
            channels = self.graph.channels(e.src)
            try:
                chain = self.chain(e.id)
            except GraphError as exc:
                problems.append(str(exc))
                continue
            for op in chain:
                if isinstance(op, ConvOp):
                    if op.filter.c_in != channels:
                        problems.append(
                            f"edge {e.id!r}: conv expects {op.filter.c_in} channels, chain carries {channels}"
                        )
                    channels = op.filter.c_out
                elif isinstance(op, BatchNormOp) and op.gamma.size != channels:
                    problems.append(
                        f"edge {e.id!r}: batch norm sized {op.gamma.size}, chain carries {channels}"
                    )
            if channels != self.graph.channels(e.dst):
                problems.append(
                    f"edge {e.id!r}: chain ends with {channels} channels, vertex "
                    f"{e.dst!r} declares {self.graph.channels(e.dst)}"
                )
        return problems

    def check(self) -> "LayeredModule":
        problems = self.validate()
        if problems:
            raise GraphError("; ".join(problems))
        return self

    def to_json(self, filter_refs: dict[str, str] | None = None) -> dict:
        doc = self.graph.to_json(filter_refs)
        for entry in doc["edges"]:
            eid = entry["id"]
            if eid not in self.ops:
                continue
            ops_doc = []
            for op in self.ops[eid]:
                if isinstance(op, ConvOp):
                    ops_doc.append({"kind": "conv"})
                elif isinstance(op, PactOp):
                    ops_doc.append({"kind": "pact", "a": op.a, "base": op.base})
                else:
                    ops_doc.append(
                        {
                            "kind": "bn",
                            "gamma": op.gamma.tolist(),
                            "beta": op.beta.tolist(),
                            "mean": op.mean.tolist(),
                            "var": op.var.tolist(),
                            "eps": op.eps,
                        }
                    )
            entry["ops"] = ops_doc
        return doc

    @staticmethod
    def from_json(doc: dict, base_dir: str | None = None) -> "LayeredModule":
        graph = ModuleGraph.from_json(doc, base_dir)
        ops: dict[str, tuple[LayerOp, ...]] = {}
        for entry in doc["edges"]:
            if "ops" not in entry:
                continue
            chain: list[LayerOp] = []
            for op_doc in entry["ops"]:
                kind = op_doc.get("kind")
                if kind == "conv":
                    filt = graph.edge(str(entry["id"])).filter
                    if filt is None:
                        raise GraphError(
                            f"edge {entry['id']!r}: conv op without a filter reference"
                        )
                    chain.append(ConvOp(filt))
                elif kind == "pact":
                    chain.append(PactOp(float(op_doc["a"]), str(op_doc.get("base", "relu"))))
                elif kind == "bn":
                    chain.append(
                        BatchNormOp(
                            np.asarray(op_doc["gamma"]),
                            np.asarray(op_doc["beta"]),
                            np.asarray(op_doc["mean"]),
                            np.asarray(op_doc["var"]),
                            float(op_doc.get("eps", 1e-5)),
                        )
                    )
                else:
                    raise GraphError(f"unknown layer op kind {kind!r}")
            ops[str(entry["id"])] = tuple(chain)
        return LayeredModule(graph, ops)


def linear_module(graph: ModuleGraph) -> LayeredModule:
    """All-convolution chains from the graph's assigned filters."""
    return LayeredModule(graph, {})


def with_identity_wrappers(
    graph: ModuleGraph, a: float = 1.0, base: str = "relu", eps: float = 1e-5
) -> LayeredModule:
    """Morph-time chains: conv, fresh identity batch norm, parametric
    activation at a (default 1, the identity)."""
    ops = {}
    for e in graph.edges:
        if e.filter is None:
            raise GraphError(f"edge {e.id!r} has no filter assigned")
        channels = graph.channels(e.dst)
        ops[e.id] = (ConvOp(e.filter), identity_batchnorm(channels, eps), PactOp(a, base))
    return LayeredModule(graph, ops)


def forward(m: LayeredModule, b: Blob) -> Blob:
    """Evaluate the module on a blob.

    Vertices are visited in topological order; a vertex with several
    incoming edges sums their outputs, several outgoing edges read the same
    value. Spatial sizes are preserved throughout ("same" convolution).
    """
    m.check()
    graph = m.graph
    if b.c != graph.channels(graph.source):
        raise DimensionError(
            f"blob has {b.c} channels, source declares {graph.channels(graph.source)}"
        )
    values: dict[str, np.ndarray] = {graph.source: b.data}
    for vid in graph.topological_vertices():
        if vid == graph.source:
            continue
        total: np.ndarray | None = None
        for e in graph.in_edges(vid):
            x = Blob(values[e.src])
            for op in m.chain(e.id):
                try:
                    x = _apply_op(op, x)
                except DimensionError as exc:
                    raise DimensionError(f"edge {e.id!r}: {exc}") from exc
            total = x.data if total is None else total + x.data
        assert total is not None
        values[vid] = total
    return Blob(values[graph.sink])


def save_layered(m: LayeredModule, path, filter_dir: str | None = None) -> None:
    """Write layered-module JSON with MTEN references for assigned filters."""
    import os

    from .tensors import write_mten

    path = os.fspath(path)
    out_dir = os.path.dirname(os.path.abspath(path))
    target = filter_dir if filter_dir is not None else out_dir
    os.makedirs(target, exist_ok=True)
    refs: dict[str, str] = {}
    for i, e in enumerate(m.graph.edges):
        if e.filter is None:
            continue
        safe = "".join(ch if ch.isalnum() else "_" for ch in e.id)
        name = f"edge_{i:02d}_{safe}.mten"
        write_mten(os.path.join(target, name), e.filter)
        refs[e.id] = os.path.relpath(os.path.join(target, name), out_dir)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(m.to_json(refs), fh, indent=2)
        fh.write("\n")


def load_layered(path) -> LayeredModule:
    import os

    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return LayeredModule.from_json(doc, base_dir=os.path.dirname(os.path.abspath(path)))

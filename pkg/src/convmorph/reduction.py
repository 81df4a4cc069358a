"""Module classification by reduction with reverse atomic operations.

A serial pair of edges through a degree-(1,1) vertex collapses to one edge
(reverse TYPE-I); a parallel pair of edges collapses to one edge (reverse
TYPE-II). A module that reduces to a single edge is simple morphable: the
recorded steps, replayed forward, rebuild it from a single layer using only
atomic operations. Anything that gets stuck earlier is complex and is handed
to the numeric solver.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

from .graph import Edge, GraphError, ModuleGraph, Vertex

__all__ = [
    "Classification",
    "EdgeRef",
    "MorphStep",
    "ReductionResult",
    "StepKind",
    "apply_reduction",
    "check_type_i",
    "check_type_ii",
    "classify",
    "reduce_module",
    "replay_topology",
]


class StepKind(str, enum.Enum):
    TYPE_I = "TYPE_I"
    TYPE_II = "TYPE_II"


class Classification(str, enum.Enum):
    SIMPLE_MORPHABLE = "SIMPLE_MORPHABLE"
    COMPLEX = "COMPLEX"


@dataclass(frozen=True)
class EdgeRef:
    """Edge descriptor (no filter): enough to rebuild the edge on replay."""

    id: str
    src: str
    dst: str
    kernel: tuple[int, int]

    @staticmethod
    def of(e: Edge) -> "EdgeRef":
        return EdgeRef(e.id, e.src, e.dst, e.kernel)

    def to_json(self) -> dict:
        return {"id": self.id, "from": self.src, "to": self.dst, "kernel": list(self.kernel)}


@dataclass(frozen=True)
class MorphStep:
    """One atomic rewrite: parent edge (smaller graph) expands into two
    child edges (larger graph). TYPE_I children run serially through the
    recorded intermediate vertex; TYPE_II children are parallel."""

    kind: StepKind
    parent: EdgeRef
    children: tuple[EdgeRef, EdgeRef]
    intermediate: Vertex | None = None

    def to_json(self) -> dict:
        doc = {
            "kind": self.kind.value,
            "parent": self.parent.to_json(),
            "children": [c.to_json() for c in self.children],
        }
        if self.intermediate is not None:
            doc["intermediate"] = {
                "id": self.intermediate.id,
                "channels": self.intermediate.channels,
            }
        return doc


@dataclass(frozen=True)
class ReductionResult:
    residual: ModuleGraph
    steps: tuple[MorphStep, ...]
    classification: Classification

    def to_json(self) -> dict:
        return {
            "classification": self.classification.value,
            "steps": [s.to_json() for s in self.steps],
            "residual_edges": len(self.residual.edges),
        }


def _merged_id(graph: ModuleGraph, a: str, b: str, op: str) -> str:
    name = f"({a}{op}{b})"
    existing = {e.id for e in graph.edges}
    while name in existing:
        name += "'"
    return name


def check_type_i(m: ModuleGraph) -> MorphStep | None:
    """Reduction step for the first interior vertex with one edge in and
    one edge out, or None. The merged edge's kernel is the serial effective
    size of the pair."""
    if m.is_single_edge:
        return None
    for v in m.vertices:
        if v.id in (m.source, m.sink):
            continue
        ins, outs = m.in_edges(v.id), m.out_edges(v.id)
        if len(ins) != 1 or len(outs) != 1:
            continue
        e_in, e_out = ins[0], outs[0]
        kernel = (
            e_in.kernel[0] + e_out.kernel[0] - 1,
            e_in.kernel[1] + e_out.kernel[1] - 1,
        )
        parent = EdgeRef(_merged_id(m, e_in.id, e_out.id, "*"), e_in.src, e_out.dst, kernel)
        return MorphStep(StepKind.TYPE_I, parent, (EdgeRef.of(e_in), EdgeRef.of(e_out)), v)
    return None


def check_type_ii(m: ModuleGraph) -> MorphStep | None:
    """Reduction step for the first pair of parallel edges, or None.
    The merged edge's kernel is the elementwise max of the pair's."""
    for i, e1 in enumerate(m.edges):
        for e2 in m.edges[i + 1 :]:
            if (e1.src, e1.dst) != (e2.src, e2.dst):
                continue
            kernel = (max(e1.kernel[0], e2.kernel[0]), max(e1.kernel[1], e2.kernel[1]))
            parent = EdgeRef(_merged_id(m, e1.id, e2.id, "+"), e1.src, e1.dst, kernel)
            return MorphStep(StepKind.TYPE_II, parent, (EdgeRef.of(e1), EdgeRef.of(e2)), None)
    return None


def apply_reduction(m: ModuleGraph, step: MorphStep) -> ModuleGraph:
    """Replace the step's child edges with its parent edge (children must
    exist in m). Filters on the children are dropped; reduction is a
    topology-level operation."""
    child_ids = {c.id for c in step.children}
    if not child_ids <= {e.id for e in m.edges}:
        raise GraphError(f"step children {sorted(child_ids)} not all present")
    edges = [e for e in m.edges if e.id not in child_ids]
    edges.append(Edge(step.parent.id, step.parent.src, step.parent.dst, step.parent.kernel))
    vertices = m.vertices
    if step.kind is StepKind.TYPE_I:
        assert step.intermediate is not None
        vertices = tuple(v for v in m.vertices if v.id != step.intermediate.id)
    return ModuleGraph(vertices, tuple(edges), m.source, m.sink)


def _expand(m: ModuleGraph, step: MorphStep) -> ModuleGraph:
    """Replace the step's parent edge with its child edges (topology only)."""
    parent_ids = {e.id for e in m.edges}
    if step.parent.id not in parent_ids:
        raise GraphError(f"step parent {step.parent.id!r} not present")
    vertices = m.vertices
    if step.kind is StepKind.TYPE_I:
        assert step.intermediate is not None
        vertices = vertices + (step.intermediate,)
    edges = [e for e in m.edges if e.id != step.parent.id]
    for c in step.children:
        edges.append(Edge(c.id, c.src, c.dst, c.kernel))
    return ModuleGraph(vertices, tuple(edges), m.source, m.sink)


def replay_topology(residual: ModuleGraph, steps: tuple[MorphStep, ...]) -> ModuleGraph:
    """Forward replay of a reduction's steps; rebuilds the reduced module."""
    cur = residual
    for step in steps:
        cur = _expand(cur, step)
    return cur


def reduce_module(m: ModuleGraph, type_ii_first: bool = False) -> ReductionResult:
    """Reduce until neither reverse operation applies.

    Each pass exhausts TYPE-I merges, then TYPE-II merges, repeating until a
    full pass makes no progress (type_ii_first swaps the inner order; it is
    a diagnostic mode for probing order sensitivity). Steps are prepended as
    they are found, so the result lists them in forward morphing order.
    """
    m.check()
    cur = m.without_filters()
    steps: list[MorphStep] = []
    checks = (check_type_ii, check_type_i) if type_ii_first else (check_type_i, check_type_ii)
    while True:
        progressed = False
        for check in checks:
            while (step := check(cur)) is not None:
                cur = apply_reduction(cur, step)
                steps.insert(0, step)
                progressed = True
        if not progressed:
            break
    classification = (
        Classification.SIMPLE_MORPHABLE if cur.is_single_edge else Classification.COMPLEX
    )
    return ReductionResult(cur, tuple(steps), classification)


def classify(m: ModuleGraph) -> Classification:
    return reduce_module(m).classification

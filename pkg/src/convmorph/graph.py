"""Single-source, single-sink DAG modules of convolutional layers.

Vertices are blobs (id + channel count), edges are convolutional layers
(declared kernel shape, optionally an assigned Filter). A vertex with
indegree > 1 sums its inputs; outdegree > 1 fans out copies. The module as
a whole computes a single equivalent filter: the sum over all source-to-sink
paths of the serial composition of the path's filters, center-aligned to
the module's effective kernel.

Graphs are immutable values; rewrites build new graphs.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

from .tensors import Filter, add_filters, compose, read_filter, write_mten, zero_pad

__all__ = [
    "Edge",
    "GraphError",
    "ModuleGraph",
    "PathExplosionError",
    "UnassignedEdgeError",
    "Vertex",
    "load_module",
    "save_module",
]

MAX_PATHS = 10_000


class GraphError(ValueError):
    """Module violates the single-source single-sink DAG contract."""


class UnassignedEdgeError(GraphError):
    """An operation needed a filter on an edge that has none."""


class PathExplosionError(GraphError):
    """Module has more source-to-sink paths than the enumeration guard allows."""


@dataclass(frozen=True)
class Vertex:
    id: str
    channels: int


@dataclass(frozen=True)
class Edge:
    id: str
    src: str
    dst: str
    kernel: tuple[int, int]
    filter: Filter | None = None

    def __post_init__(self):
        object.__setattr__(self, "kernel", (int(self.kernel[0]), int(self.kernel[1])))


@dataclass(frozen=True)
class ModuleGraph:
    vertices: tuple[Vertex, ...]
    edges: tuple[Edge, ...]
    source: str
    sink: str

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "edges", tuple(self.edges))

    # -- lookups ----------------------------------------------------------

    def channels(self, vertex_id: str) -> int:
        for v in self.vertices:
            if v.id == vertex_id:
                return v.channels
        raise GraphError(f"unknown vertex {vertex_id!r}")

    def edge(self, edge_id: str) -> Edge:
        for e in self.edges:
            if e.id == edge_id:
                return e
        raise GraphError(f"unknown edge {edge_id!r}")

    def in_edges(self, vertex_id: str) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.dst == vertex_id)

    def out_edges(self, vertex_id: str) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.src == vertex_id)

    @property
    def is_single_edge(self) -> bool:
        return len(self.edges) == 1

    # -- validation -------------------------------------------------------

    def validate(self) -> list[str]:
        """All contract violations, empty when the module is well-formed."""
        problems: list[str] = []
        vids = [v.id for v in self.vertices]
        if len(set(vids)) != len(vids):
            problems.append("duplicate vertex ids")
        eids = [e.id for e in self.edges]
        if len(set(eids)) != len(eids):
            problems.append("duplicate edge ids")
        for v in self.vertices:
            if v.channels < 1:
                problems.append(f"vertex {v.id!r} has channels < 1")
        known = set(vids)
        for e in self.edges:
            if e.src not in known or e.dst not in known:
                problems.append(f"edge {e.id!r} references unknown vertices")
            if e.kernel[0] < 1 or e.kernel[1] < 1 or e.kernel[0] % 2 == 0 or e.kernel[1] % 2 == 0:
                problems.append(f"edge {e.id!r} kernel {e.kernel} is not odd-sized")
        if problems:
            return problems

        if self.source not in known:
            problems.append(f"declared source {self.source!r} is not a vertex")
        if self.sink not in known:
            problems.append(f"declared sink {self.sink!r} is not a vertex")
        if not self.edges:
            problems.append("module has no edges")
        if problems:
            return problems

        indeg = {v: 0 for v in known}
        outdeg = {v: 0 for v in known}
        for e in self.edges:
            outdeg[e.src] += 1
            indeg[e.dst] += 1
        sources = [v.id for v in self.vertices if indeg[v.id] == 0]
        sinks = [v.id for v in self.vertices if outdeg[v.id] == 0]
        if sources != [self.source]:
            problems.append(f"expected the single source {self.source!r}, found {sources}")
        if sinks != [self.sink]:
            problems.append(f"expected the single sink {self.sink!r}, found {sinks}")

        order = self._topo_order()
        if order is None:
            problems.append("module contains a cycle")
            return problems

        reach_fwd = self._reachable(self.source, forward=True)
        reach_bwd = self._reachable(self.sink, forward=False)
        for v in self.vertices:
            if v.id not in reach_fwd or v.id not in reach_bwd:
                problems.append(f"vertex {v.id!r} lies on no source-to-sink path")

        for e in self.edges:
            if e.filter is None:
                continue
            want_in, want_out = self.channels(e.src), self.channels(e.dst)
            if e.filter.c_in != want_in or e.filter.c_out != want_out:
                problems.append(
                    f"edge {e.id!r} filter channels {(e.filter.c_out, e.filter.c_in)} "
                    f"do not match vertices {(want_out, want_in)}"
                )
            if e.filter.kernel != e.kernel:
                problems.append(
                    f"edge {e.id!r} filter kernel {e.filter.kernel} differs from declared {e.kernel}"
                )
        return problems

    def check(self) -> "ModuleGraph":
        """Raise GraphError listing all violations; return self when valid."""
        problems = self.validate()
        if problems:
            raise GraphError("; ".join(problems))
        return self

    def _topo_order(self) -> list[str] | None:
        """Vertex ids in topological order (by insertion index), None on cycle."""
        indeg = {v.id: 0 for v in self.vertices}
        for e in self.edges:
            if e.dst in indeg:
                indeg[e.dst] += 1
        order = []
        ready = [v.id for v in self.vertices if indeg[v.id] == 0]
        while ready:
            vid = ready.pop(0)
            order.append(vid)
            next_ready = []
            for e in self.edges:
                if e.src == vid:
                    indeg[e.dst] -= 1
                    if indeg[e.dst] == 0:
                        next_ready.append(e.dst)
            # keep vertex insertion order among newly ready vertices
            for v in self.vertices:
                if v.id in next_ready:
                    ready.append(v.id)
        return order if len(order) == len(self.vertices) else None

    def topological_vertices(self) -> list[str]:
        order = self._topo_order()
        if order is None:
            raise GraphError("module contains a cycle")
        return order

    def _reachable(self, start: str, forward: bool) -> set[str]:
        seen = {start}
        frontier = [start]
        while frontier:
            vid = frontier.pop()
            for e in self.edges:
                nxt = e.dst if forward else e.src
                cur = e.src if forward else e.dst
                if cur == vid and nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return seen

    # -- paths and the equivalent filter -----------------------------------

    def count_paths(self) -> int:
        """Number of source-to-sink paths (dynamic program, no enumeration)."""
        counts = {self.sink: 1}
        for vid in reversed(self.topological_vertices()):
            if vid == self.sink:
                continue
            counts[vid] = sum(counts[e.dst] for e in self.out_edges(vid))
        return counts.get(self.source, 0)

    def enumerate_paths(self) -> tuple[tuple[str, ...], ...]:
        """All source-to-sink paths as edge-id tuples.

        Depth-first over out-edges in insertion order, so the result is
        lexicographic in edge insertion positions and stable across runs.
        """
        if self.count_paths() > MAX_PATHS:
            raise PathExplosionError(f"module has more than {MAX_PATHS} paths")
        paths: list[tuple[str, ...]] = []
        stack: list[tuple[str, tuple[str, ...]]] = [(self.source, ())]
        while stack:
            vid, trail = stack.pop()
            if vid == self.sink:
                paths.append(trail)
                continue
            for e in reversed(self.out_edges(vid)):
                stack.append((e.dst, trail + (e.id,)))
        return tuple(paths)

    def effective_kernel(self) -> tuple[int, int]:
        """Spatial extent of the module's equivalent filter.

        Per path the serial sizes combine as sum minus (length - 1); the
        module takes the per-dimension maximum over paths so every path's
        contribution embeds by center-aligned zero padding.
        """
        self.check()
        best = (1, 1)
        for path in self.enumerate_paths():
            kh = sum(self.edge(eid).kernel[0] for eid in path) - (len(path) - 1)
            kw = sum(self.edge(eid).kernel[1] for eid in path) - (len(path) - 1)
            best = (max(best[0], kh), max(best[1], kw))
        return best

    def path_filter(self, path: tuple[str, ...]) -> Filter:
        """Serial composition of the path's filters, first edge applied first."""
        acc: Filter | None = None
        for eid in path:
            e = self.edge(eid)
            if e.filter is None:
                raise UnassignedEdgeError(f"edge {eid!r} has no filter assigned")
            acc = e.filter if acc is None else compose(e.filter, acc)
        assert acc is not None
        return acc

    def module_filter(self) -> Filter:
        """Equivalent single filter: path-sum of composed path filters."""
        self.check()
        kh, kw = self.effective_kernel()
        total: Filter | None = None
        for path in self.enumerate_paths():
            term = zero_pad(self.path_filter(path), kh, kw)
            total = term if total is None else add_filters(total, term)
        assert total is not None
        return total

    # -- rewriting helpers --------------------------------------------------

    def with_filters(self, assignment: dict[str, Filter]) -> "ModuleGraph":
        """New graph with the given edges' filters replaced."""
        unknown = set(assignment) - {e.id for e in self.edges}
        if unknown:
            raise GraphError(f"assignment references unknown edges {sorted(unknown)}")
        edges = tuple(
            replace(e, filter=assignment.get(e.id, e.filter)) for e in self.edges
        )
        return ModuleGraph(self.vertices, edges, self.source, self.sink)

    def without_filters(self) -> "ModuleGraph":
        return ModuleGraph(
            self.vertices,
            tuple(replace(e, filter=None) for e in self.edges),
            self.source,
            self.sink,
        )

    def filters(self) -> dict[str, Filter]:
        return {e.id: e.filter for e in self.edges if e.filter is not None}

    def same_topology(self, other: "ModuleGraph") -> bool:
        """Equality as labeled DAGs: ids, endpoints, kernels, channels;
        insertion order and filters are ignored."""
        mine = {(v.id, v.channels) for v in self.vertices}
        theirs = {(v.id, v.channels) for v in other.vertices}
        if mine != theirs or self.source != other.source or self.sink != other.sink:
            return False
        return {(e.id, e.src, e.dst, e.kernel) for e in self.edges} == {
            (e.id, e.src, e.dst, e.kernel) for e in other.edges
        }

    # -- serialization ------------------------------------------------------

    def to_json(self, filter_refs: dict[str, str] | None = None) -> dict:
        """JSON-ready dict; filter_refs maps edge id to an MTEN file reference."""
        edges = []
        for e in self.edges:
            entry: dict = {
                "id": e.id,
                "from": e.src,
                "to": e.dst,
                "kernel": [e.kernel[0], e.kernel[1]],
            }
            if filter_refs and e.id in filter_refs:
                entry["filter"] = filter_refs[e.id]
            edges.append(entry)
        return {
            "vertices": [{"id": v.id, "channels": v.channels} for v in self.vertices],
            "edges": edges,
            "source": self.source,
            "sink": self.sink,
        }

    @staticmethod
    def from_json(doc: dict, base_dir: str | None = None) -> "ModuleGraph":
        """Build from the module JSON format; relative filter references are
        resolved against base_dir."""
        try:
            vertices = tuple(Vertex(str(v["id"]), int(v["channels"])) for v in doc["vertices"])
            edges = []
            for e in doc["edges"]:
                filt = None
                ref = e.get("filter")
                if ref is not None:
                    path = ref if base_dir is None else os.path.join(base_dir, ref)
                    filt = read_filter(path)
                edges.append(
                    Edge(
                        str(e["id"]),
                        str(e["from"]),
                        str(e["to"]),
                        (int(e["kernel"][0]), int(e["kernel"][1])),
                        filt,
                    )
                )
            return ModuleGraph(vertices, tuple(edges), str(doc["source"]), str(doc["sink"]))
        except (KeyError, TypeError, IndexError) as exc:
            raise GraphError(f"malformed module document: {exc}") from exc

    def to_dot(self) -> str:
        """Deterministic DOT rendering, channels on vertices, kernels on edges."""
        lines = ["digraph module {", "  rankdir=LR;"]
        for v in self.vertices:
            shape = "doublecircle" if v.id in (self.source, self.sink) else "circle"
            lines.append(f'  "{v.id}" [label="{v.id}\\n{v.channels}ch" shape={shape}];')
        for e in self.edges:
            lines.append(
                f'  "{e.src}" -> "{e.dst}" [label="{e.id} {e.kernel[0]}x{e.kernel[1]}"];'
            )
        lines.append("}")
        return "\n".join(lines) + "\n"


def load_module(path) -> ModuleGraph:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return ModuleGraph.from_json(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def save_module(graph: ModuleGraph, path, filter_dir: str | None = None) -> dict[str, str]:
    """Write module JSON; assigned filters are written as MTEN files next to
    it (or under filter_dir) and referenced by relative name. Returns the
    edge-id to file-reference map."""
    path = os.fspath(path)
    out_dir = os.path.dirname(os.path.abspath(path))
    target = filter_dir if filter_dir is not None else out_dir
    os.makedirs(target, exist_ok=True)
    refs: dict[str, str] = {}
    for i, e in enumerate(graph.edges):
        if e.filter is None:
            continue
        safe = "".join(ch if ch.isalnum() else "_" for ch in e.id)
        name = f"edge_{i:02d}_{safe}.mten"
        write_mten(os.path.join(target, name), e.filter)
        rel = os.path.relpath(os.path.join(target, name), out_dir)
        refs[e.id] = rel
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph.to_json(refs), fh, indent=2)
        fh.write("\n")
    return refs

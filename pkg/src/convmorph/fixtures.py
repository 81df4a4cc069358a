"""Built-in module topologies used by the tests and the CLI.

m0 is the single-edge module. module_a through module_c are small simple
morphable shapes covering parallel merges, a shortcut around a chain, and a
mixed six-edge shape needing both merge kinds. module_d is the classic
irreducible counterexample: five vertices, seven edges, four source-to-sink
paths, and no vertex or edge pair that a reverse atomic operation accepts.
resnet is the two-way residual block (two 3x3 convolutions plus an identity
shortcut); morph_1c1 splits the shortcut into two parallel branches and
expands one of them into two serial 1x1 convolutions; morph_1c1_2branch
expands both.
"""
from __future__ import annotations

from .graph import Edge, ModuleGraph, Vertex

__all__ = ["FIXTURES", "fixture", "list_fixtures"]


def _graph(vertex_ids, edges, channels, source, sink):
    vertices = tuple(Vertex(v, channels) for v in vertex_ids)
    return ModuleGraph(vertices, tuple(Edge(*e) for e in edges), source, sink)


def m0(channels: int = 16, kernel: tuple[int, int] = (3, 3)) -> ModuleGraph:
    return _graph(["s", "t"], [("e1", "s", "t", kernel)], channels, "s", "t")


def module_a(channels: int = 16) -> ModuleGraph:
    return _graph(
        ["s", "t"],
        [("e1", "s", "t", (3, 3)), ("e2", "s", "t", (3, 3))],
        channels,
        "s",
        "t",
    )


def module_b(channels: int = 16) -> ModuleGraph:
    return _graph(
        ["s", "a", "t"],
        [
            ("e1", "s", "a", (3, 3)),
            ("e2", "a", "t", (3, 3)),
            ("e3", "s", "t", (5, 5)),
        ],
        channels,
        "s",
        "t",
    )


def module_c(channels: int = 16) -> ModuleGraph:
    return _graph(
        ["s", "a", "b", "t"],
        [
            ("e1", "s", "a", (3, 3)),
            ("e2", "s", "a", (3, 3)),
            ("e3", "a", "b", (3, 3)),
            ("e4", "b", "t", (3, 3)),
            ("e5", "a", "t", (5, 5)),
            ("e6", "s", "t", (7, 7)),
        ],
        channels,
        "s",
        "t",
    )


def module_d(channels: int = 16) -> ModuleGraph:
    return _graph(
        ["s", "a", "b", "c", "t"],
        [
            ("f1", "s", "a", (3, 3)),
            ("f2", "s", "c", (3, 3)),
            ("f3", "a", "b", (3, 3)),
            ("f4", "c", "b", (3, 3)),
            ("f5", "a", "t", (3, 3)),
            ("f6", "b", "t", (3, 3)),
            ("f7", "c", "t", (3, 3)),
        ],
        channels,
        "s",
        "t",
    )


def resnet(channels: int = 16) -> ModuleGraph:
    return _graph(
        ["s", "a", "t"],
        [
            ("conv1", "s", "a", (3, 3)),
            ("conv2", "a", "t", (3, 3)),
            ("skip", "s", "t", (1, 1)),
        ],
        channels,
        "s",
        "t",
    )


def morph_1c1(channels: int = 16) -> ModuleGraph:
    return _graph(
        ["s", "a", "b", "t"],
        [
            ("conv1", "s", "a", (3, 3)),
            ("conv2", "a", "t", (3, 3)),
            ("skip", "s", "t", (1, 1)),
            ("branch1", "s", "b", (1, 1)),
            ("branch2", "b", "t", (1, 1)),
        ],
        channels,
        "s",
        "t",
    )


def morph_1c1_2branch(channels: int = 16) -> ModuleGraph:
    return _graph(
        ["s", "a", "b", "c", "t"],
        [
            ("conv1", "s", "a", (3, 3)),
            ("conv2", "a", "t", (3, 3)),
            ("branch1a", "s", "b", (1, 1)),
            ("branch1b", "b", "t", (1, 1)),
            ("branch2a", "s", "c", (1, 1)),
            ("branch2b", "c", "t", (1, 1)),
        ],
        channels,
        "s",
        "t",
    )


FIXTURES = {
    "m0": m0,
    "module_a": module_a,
    "module_b": module_b,
    "module_c": module_c,
    "module_d": module_d,
    "resnet": resnet,
    "morph_1c1": morph_1c1,
    "morph_1c1_2branch": morph_1c1_2branch,
}


def list_fixtures() -> list[str]:
    return list(FIXTURES)


def fixture(name: str, channels: int = 16) -> ModuleGraph:
    try:
        builder = FIXTURES[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; known: {', '.join(FIXTURES)}") from None
    return builder(channels)

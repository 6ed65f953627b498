"""Turn per-vertex next-vertex decisions into clean directed polylines.

The pipeline is link -> resolve_conflicts -> break_cycles -> extract:
each vertex proposes at most one outgoing edge, conflicting heads keep the
most confident edge, remaining simple cycles lose their weakest edge, and
the surviving chains are walked from their sources.  Every step is
deterministic and idempotent on its own output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import ValidationError
from .geom import PixelPoint
from .matching import CandidateSet, MatchDecision


@dataclass(frozen=True)
class DirectedEdge:
    src: int
    dst: int
    confidence: float

    def __post_init__(self) -> None:
        if self.src == self.dst:
            raise ValidationError(f"self-loop at vertex {self.src}")


@dataclass(frozen=True)
class VertexGraph:
    vertices: tuple[PixelPoint, ...]
    edges: tuple[DirectedEdge, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "edges", tuple(self.edges))
        n = len(self.vertices)
        for e in self.edges:
            if not (0 <= e.src < n and 0 <= e.dst < n):
                raise ValidationError(f"edge {e.src}->{e.dst} out of range for {n} vertices")


def link(
    decisions: Sequence[MatchDecision],
    candidates: Sequence[CandidateSet],
    terminal_class: int | None,
) -> list[DirectedEdge]:
    """One edge per vertex to its argmax candidate, unless terminal wins.

    Ties go to the earlier class slot (argmax takes the first maximum),
    i.e. the nearer candidate.
    """
    if len(decisions) != len(candidates):
        raise ValidationError(f"{len(decisions)} decisions for {len(candidates)} candidate sets")
    edges: list[DirectedEdge] = []
    for decision, cset in zip(decisions, candidates):
        best = decision.best_class
        if terminal_class is not None and best == terminal_class:
            continue
        if best >= len(cset.neighbors):
            continue  # padded slot: nothing to link to
        target, _ = cset.neighbors[best]
        edges.append(DirectedEdge(cset.anchor, target, float(decision.class_probs[best])))
    return edges


def resolve_conflicts(edges: Sequence[DirectedEdge]) -> list[DirectedEdge]:
    """Enforce in-degree <= 1: keep the max-confidence edge per head.

    Confidence ties keep the smaller source index.
    """
    best: dict[int, DirectedEdge] = {}
    for e in edges:
        cur = best.get(e.dst)
        if cur is None or (e.confidence, -e.src) > (cur.confidence, -cur.src):
            best[e.dst] = e
    return sorted(best.values(), key=lambda e: e.src)


def break_cycles(edges: Sequence[DirectedEdge]) -> list[DirectedEdge]:
    """Remove the weakest edge of every simple cycle.

    Requires in/out-degree <= 1 (components are chains or simple cycles);
    confidence ties drop the smallest source index.
    """
    out_edge: dict[int, DirectedEdge] = {}
    in_deg: dict[int, int] = {}
    for e in edges:
        if e.src in out_edge:
            raise ValidationError(f"vertex {e.src} has out-degree > 1")
        out_edge[e.src] = e
        in_deg[e.dst] = in_deg.get(e.dst, 0) + 1
        if in_deg[e.dst] > 1:
            raise ValidationError(f"vertex {e.dst} has in-degree > 1")

    dropped: set[tuple[int, int]] = set()
    visited: set[int] = set()
    for start in sorted(out_edge):
        if start in visited:
            continue
        # Follow successors until the path ends or bites its own tail.
        path: list[int] = []
        seen_pos: dict[int, int] = {}
        node = start
        while node in out_edge and node not in visited:
            if node in seen_pos:
                cycle = path[seen_pos[node] :]
                weakest = min(
                    (out_edge[v] for v in cycle),
                    key=lambda e: (e.confidence, e.src),
                )
                dropped.add((weakest.src, weakest.dst))
                break
            seen_pos[node] = len(path)
            path.append(node)
            node = out_edge[node].dst
        visited.update(path)
    return [e for e in edges if (e.src, e.dst) not in dropped]


def extract_chains(graph: VertexGraph) -> list[list[int]]:
    """Walk each source (in-degree 0, out-degree >= 1) to its chain end.

    Output is ordered by start vertex index; isolated vertices are dropped.
    """
    out_edge: dict[int, int] = {}
    has_in: set[int] = set()
    for e in graph.edges:
        if e.src in out_edge:
            raise ValidationError(f"vertex {e.src} has out-degree > 1")
        if e.dst in has_in:
            raise ValidationError(f"vertex {e.dst} has in-degree > 1")
        out_edge[e.src] = e.dst
        has_in.add(e.dst)

    chains: list[list[int]] = []
    for start in sorted(out_edge):
        if start in has_in:
            continue
        chain = [start]
        node = start
        steps = 0
        while node in out_edge:
            node = out_edge[node]
            chain.append(node)
            steps += 1
            if steps > len(graph.vertices):
                raise ValidationError(f"cycle through vertex {start}; break_cycles must run first")
        chains.append(chain)
    claimed = sum(len(c) for c in chains)
    linked = len(out_edge) + len(has_in - set(out_edge))
    if claimed != linked:
        raise ValidationError("graph contains a cycle; break_cycles must run first")
    return chains


def extract_polylines(graph: VertexGraph) -> list[list[PixelPoint]]:
    return [[graph.vertices[i] for i in chain] for chain in extract_chains(graph)]


def build_polylines(
    vertices: Sequence[PixelPoint],
    decisions: Sequence[MatchDecision],
    candidates: Sequence[CandidateSet],
    terminal_class: int | None,
) -> tuple[VertexGraph, list[list[int]]]:
    """Full link -> resolve -> break -> extract pass; returns graph and chains."""
    edges = break_cycles(resolve_conflicts(link(decisions, candidates, terminal_class)))
    graph = VertexGraph(tuple(vertices), tuple(edges))
    return graph, extract_chains(graph)

"""Breadth-first construction of Cay(SL(2, Z_n); S_n), truncation, caching.

Vertex 0 is always the identity; the remaining vertices appear in FIFO BFS
discovery order with neighbors expanded by right-multiplication in the fixed
generator order. The labelled edge list is therefore fully deterministic.
"""

from __future__ import annotations

import os
import tempfile
import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from .graphcore import UGraph, emit_edge_list, induced_prefix_subgraph, parse_edge_list
from .modgroup import Mat2Z, generators, mat_mul, sl2_order

DEFAULT_VERTEX_BUDGET = 2_000_000
CACHE_ENV_VAR = "CAYLEYPROP_CACHE_DIR"


@dataclass(frozen=True)
class CayleyGraph:
    """Cay(SL(2, Z_n); S_n) with BFS-ordered vertices."""

    modulus: int
    vertices: tuple[Mat2Z, ...]
    graph: UGraph
    degree: int


def build_cayley(n: int, budget: int = DEFAULT_VERTEX_BUDGET) -> CayleyGraph:
    """BFS the whole group from the identity and collect generator edges."""
    if n < 2:
        raise ValueError(f"modulus must be >= 2, got {n}")
    order = sl2_order(n)
    if order > budget:
        raise ValueError(
            f"Cay(SL(2, Z_{n})) requires {order} vertices, over the budget "
            f"of {budget}"
        )
    gens = generators(n)
    identity = Mat2Z.identity(n)
    index: dict[Mat2Z, int] = {identity: 0}
    vertices: list[Mat2Z] = [identity]
    edges: set[tuple[int, int]] = set()
    queue: deque[Mat2Z] = deque([identity])
    while queue:
        x = queue.popleft()
        ix = index[x]
        for s in gens:
            y = mat_mul(x, s)
            iy = index.get(y)
            if iy is None:
                iy = len(vertices)
                index[y] = iy
                vertices.append(y)
                queue.append(y)
            if ix != iy:  # defensive: x*s == x cannot happen for S_n
                edges.add((ix, iy) if ix < iy else (iy, ix))
    if len(vertices) != order:
        raise RuntimeError(
            f"BFS reached {len(vertices)} elements, expected {order}; "
            "generating set does not generate the group"
        )
    return CayleyGraph(
        modulus=n,
        vertices=tuple(vertices),
        graph=UGraph(order, sorted(edges)),
        degree=len(gens),
    )


def smallest_modulus(v: int) -> int:
    """Least n >= 2 whose group order reaches v nodes."""
    if v < 1:
        raise ValueError(f"target node count must be >= 1, got {v}")
    n = 2
    while sl2_order(n) < v:
        n += 1
    return n


def truncate_bfs(cg: CayleyGraph, v: int) -> UGraph:
    """Induced subgraph on the first v vertices in BFS discovery order.

    Every vertex keeps its BFS parent, so the result is connected, but it is
    generally irregular and loses expansion.
    """
    total = len(cg.vertices)
    if not 1 <= v <= total:
        raise ValueError(f"truncation size {v} out of range 1..{total}")
    return induced_prefix_subgraph(cg.graph, v)


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "cayleyprop"


class CayleyCache:
    """Two-level (memory, disk) cache of Cayley graphs keyed by modulus.

    Disk entries are edge-list files named by modulus and vertex count.
    Reads are lock-protected so completed graphs can be shared across
    threads.
    """

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else default_cache_dir()
        self._memory: dict[int, UGraph] = {}
        self._lock = threading.Lock()

    def path_for(self, n: int) -> Path:
        return self.directory / f"cayley-n{n}-v{sl2_order(n)}.edgelist"

    def graph(self, n: int, budget: int = DEFAULT_VERTEX_BUDGET) -> UGraph:
        """Cayley graph of modulus n as a plain UGraph, cached."""
        with self._lock:
            hit = self._memory.get(n)
        if hit is not None:
            return hit
        path = self.path_for(n)
        if path.is_file():
            g = parse_edge_list(path.read_text())
            if g.node_count != sl2_order(n):
                raise ValueError(
                    f"corrupt cache file {path}: {g.node_count} nodes, "
                    f"expected {sl2_order(n)}"
                )
        else:
            g = build_cayley(n, budget=budget).graph
            self._write_atomic(path, emit_edge_list(g))
        with self._lock:
            self._memory[n] = g
        return g

    def _write_atomic(self, path: Path, text: str) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

"""Computational templates for message passing: virtual-node padding,
extended input adjacency, and per-layer graph schedules for each scheme.

Schemes
-------
Base       every layer runs on the input graph.
MasterNode one extra node joined to all input nodes, used in every layer.
FALast     input graph everywhere, final layer fully adjacent.
EGP        odd layers input graph, even layers a Cayley graph truncated
           to the input size.
CGP        odd layers the extended input graph (virtual nodes with
           self-loops), even layers the complete Cayley graph.
CGPLast    complete Cayley graph on the final layer only.
CGPEvery   complete Cayley graph on every layer.

Layers are counted 1-based, so "odd" starts at the first layer. Virtual
nodes occupy the index range [original_count, extended_count) and are
excluded from readout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cayley import CayleyCache, DEFAULT_VERTEX_BUDGET, smallest_modulus
from .graphcore import (
    UGraph,
    complete_graph,
    emit_edge_list,
    induced_prefix_subgraph,
)

SCHEMES = ("Base", "MasterNode", "FALast", "EGP", "CGP", "CGPLast", "CGPEvery")
CAYLEY_SCHEMES = frozenset({"EGP", "CGP", "CGPLast", "CGPEvery"})
VIRTUAL_INIT_MODES = ("zeros", "gaussian")

LAYER_INPUT = "input"
LAYER_INPUT_EXTENDED = "input_extended"
LAYER_CAYLEY = "cayley"
LAYER_FULLY_ADJACENT = "fully_adjacent"
LAYER_MASTER = "master"

_SEED_TAG_VIRTUAL = 0x56495254


@dataclass(frozen=True)
class PropagationPlan:
    """Per-layer adjacency schedule plus virtual-node bookkeeping.

    input_template is the graph used on input-side layers (the raw input,
    its extension, or the master-node augmentation); cayley_template is the
    complete or truncated Cayley graph for schemes that use one.
    """

    scheme: str
    original_count: int
    extended_count: int
    modulus: int | None
    layer_kinds: tuple[str, ...]
    layer_graphs: tuple[UGraph, ...]
    input_template: UGraph
    cayley_template: UGraph | None = None
    virtual_init: str = "zeros"
    virtual_seed: int = 0

    def __post_init__(self) -> None:
        for g in self.layer_graphs:
            if g.node_count != self.extended_count:
                raise ValueError(
                    f"layer graph has {g.node_count} nodes, plan expects "
                    f"{self.extended_count}"
                )

    @property
    def num_layers(self) -> int:
        return len(self.layer_graphs)

    @property
    def virtual_count(self) -> int:
        return self.extended_count - self.original_count

    @property
    def virtual_range(self) -> tuple[int, int]:
        return (self.original_count, self.extended_count)


def extend_features(
    x: np.ndarray, m: int, mode: str = "zeros", seed: int = 0
) -> np.ndarray:
    """Pad a feature matrix to m rows for the virtual nodes.

    The first rows are copied verbatim; padding is zeros by default or unit
    normal draws with mode="gaussian".
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    rows, dim = x.shape
    if m < rows:
        raise ValueError(f"cannot extend {rows} rows down to {m}")
    if mode not in VIRTUAL_INIT_MODES:
        raise ValueError(f"unknown virtual init mode {mode!r}")
    out = np.zeros((m, dim))
    out[:rows] = x
    if mode == "gaussian" and m > rows:
        rng = np.random.default_rng([seed, _SEED_TAG_VIRTUAL])
        out[rows:] = rng.standard_normal((m - rows, dim))
    return out


def extend_input_adjacency(g: UGraph, m: int) -> UGraph:
    """Grow g to m nodes: virtual nodes get one self-loop each and no other
    edges, so input-graph layers leave them inert."""
    if m < g.node_count:
        raise ValueError(f"cannot extend {g.node_count} nodes down to {m}")
    if m == g.node_count:
        return g
    loops = set(g.self_loops)
    loops.update(range(g.node_count, m))
    return UGraph(m, g.edges, loops)


def master_node_graph(g: UGraph) -> UGraph:
    """Append one node adjacent to every existing node."""
    hub = g.node_count
    edges = list(g.edges) + [(u, hub) for u in range(g.node_count)]
    return UGraph(hub + 1, edges, g.self_loops)


def build_plan(
    g: UGraph,
    scheme: str,
    num_layers: int,
    *,
    cache: CayleyCache | None = None,
    virtual_init: str = "zeros",
    virtual_seed: int = 0,
    budget: int = DEFAULT_VERTEX_BUDGET,
) -> PropagationPlan:
    """Assemble the template graphs and layer schedule for one input graph."""
    if num_layers < 1:
        raise ValueError(f"num_layers must be >= 1, got {num_layers}")
    if scheme not in SCHEMES:
        raise ValueError(f"unsupported scheme {scheme!r}; expected one of {SCHEMES}")
    if virtual_init not in VIRTUAL_INIT_MODES:
        raise ValueError(f"unknown virtual init mode {virtual_init!r}")
    v = g.node_count
    if v < 1:
        raise ValueError("input graph has no nodes")

    modulus: int | None = None
    cayley: UGraph | None = None
    if scheme == "Base":
        m = v
        input_template = g
        kinds = (LAYER_INPUT,) * num_layers
        graphs = (g,) * num_layers
    elif scheme == "MasterNode":
        m = v + 1
        input_template = master_node_graph(g)
        kinds = (LAYER_MASTER,) * num_layers
        graphs = (input_template,) * num_layers
    elif scheme == "FALast":
        m = v
        input_template = g
        fa = complete_graph(v)
        kinds = (LAYER_INPUT,) * (num_layers - 1) + (LAYER_FULLY_ADJACENT,)
        graphs = (g,) * (num_layers - 1) + (fa,)
    else:
        cache = cache or CayleyCache()
        modulus = smallest_modulus(v)
        cayley_full = cache.graph(modulus, budget=budget)
        if scheme == "EGP":
            m = v
            input_kind = LAYER_INPUT
            input_template = g
            cayley = induced_prefix_subgraph(cayley_full, v)
        else:
            m = cayley_full.node_count
            input_kind = LAYER_INPUT_EXTENDED
            input_template = extend_input_adjacency(g, m)
            cayley = cayley_full
        if scheme == "CGPEvery":
            kinds = (LAYER_CAYLEY,) * num_layers
            graphs = (cayley,) * num_layers
        elif scheme == "CGPLast":
            kinds = (input_kind,) * (num_layers - 1) + (LAYER_CAYLEY,)
            graphs = (input_template,) * (num_layers - 1) + (cayley,)
        else:  # EGP and CGP alternate, starting on the input side
            kinds = tuple(
                input_kind if i % 2 == 0 else LAYER_CAYLEY for i in range(num_layers)
            )
            graphs = tuple(
                input_template if i % 2 == 0 else cayley for i in range(num_layers)
            )

    return PropagationPlan(
        scheme=scheme,
        original_count=v,
        extended_count=m,
        modulus=modulus,
        layer_kinds=kinds,
        layer_graphs=graphs,
        input_template=input_template,
        cayley_template=cayley,
        virtual_init=virtual_init,
        virtual_seed=virtual_seed,
    )


def plan_summary(plan: PropagationPlan) -> dict:
    return {
        "scheme": plan.scheme,
        "modulus": plan.modulus,
        "original_count": plan.original_count,
        "extended_count": plan.extended_count,
        "virtual_node_range": list(plan.virtual_range),
        "virtual_init": plan.virtual_init,
        "layer_kinds": list(plan.layer_kinds),
    }


def export_plan(plan: PropagationPlan, out_dir: str | Path, name: str) -> dict:
    """Write the template files for one graph and return its manifest.

    Produces <name>.input_extended.edgelist, <name>.cayley.edgelist and
    <name>.json so external frameworks can consume the rewiring without
    this library.
    """
    if plan.scheme not in CAYLEY_SCHEMES:
        raise ValueError(
            f"template export is defined for Cayley schemes "
            f"{sorted(CAYLEY_SCHEMES)}, not {plan.scheme!r}"
        )
    assert plan.cayley_template is not None
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    input_path = out_dir / f"{name}.input_extended.edgelist"
    input_path.write_text(emit_edge_list(plan.input_template))
    cayley_path = out_dir / f"{name}.cayley.edgelist"
    cayley_path.write_text(emit_edge_list(plan.cayley_template))
    manifest = plan_summary(plan)
    manifest["files"] = {
        "input_extended": input_path.name,
        "cayley": cayley_path.name,
    }
    (out_dir / f"{name}.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest

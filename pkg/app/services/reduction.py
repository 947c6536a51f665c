"""
Graph reduction and simple-cycle enumeration

Eliminating a node e replaces every path i → e → j by one edge i → j whose
label is the composed transition and whose passport conjoins Πᵢₑ with the
pulled-back X_e and Πₑⱼ. When the incoming transition carries uncertainty the
pulled-back sets go into the composed label's constraints instead.
"""

import logging
from dataclasses import replace
from itertools import product
from typing import Dict, List, Sequence, Tuple

import networkx as nx

from app.core.graph import Edge, EdgeKey, GraphModel
from app.errors import ModelError, ReductionError

logger = logging.getLogger(__name__)

Cycle = Tuple[EdgeKey, ...]


def _eliminate(model: GraphModel, node: str) -> GraphModel:
    if node not in model.nodes:
        raise ReductionError(f"cannot eliminate unknown node {node!r}")
    if node in (model.start, model.terminal):
        raise ReductionError(f"the start and terminal nodes cannot be eliminated ({node!r})")
    if any(e.target == node for e in model.edges_from(node)):
        raise ReductionError(f"node {node!r} has a self-loop and cannot be eliminated")

    incoming = model.edges_to(node)
    outgoing = model.edges_from(node)
    kept = [e for e in model.edges if node not in (e.source, e.target)]
    counts: Dict[Tuple[str, str], int] = {}
    for e in kept:
        counts[(e.source, e.target)] = counts.get((e.source, e.target), 0) + 1

    node_set = model.invariant(node)
    composed: List[Edge] = []
    for first in incoming:
        for second in outgoing:
            middle = node_set.intersect(second.passport)
            if first.label.deterministic and first.label.is_affine:
                label = first.label.then(second.label)
                passport = first.passport.intersect(middle.pullback(first.label.A, first.label.E))
            else:
                label = first.label.then(second.label, between=middle)
                passport = first.passport
            pair = (first.source, second.target)
            counts[pair] = counts.get(pair, 0) + 1
            composed.append(Edge(first.source, second.target, counts[pair], label, passport))
    logger.debug("eliminated %s: %d in × %d out → %d edges", node, len(incoming), len(outgoing), len(composed))

    invariants = {k: v for k, v in model.invariants.items() if k != node}
    unsafe = {k: v for k, v in model.unsafe.items() if k != node}
    if node in model.unsafe:
        logger.warning("unsafe sets attached to eliminated node %s are dropped", node)
    return replace(
        model,
        nodes=tuple(n for n in model.nodes if n != node),
        edges=tuple(kept + composed),
        invariants=invariants,
        unsafe=unsafe,
    )


def reduce_graph(model: GraphModel, eliminate: Sequence[str]) -> GraphModel:
    """Eliminate the given nodes one after another, in order"""
    if len(set(eliminate)) != len(eliminate):
        raise ReductionError("elimination list contains duplicates")
    for node in eliminate:
        model = _eliminate(model, node)
    logger.info("reduced model %s to %d nodes, %d edges", model.name, len(model.nodes), len(model.edges))
    return model


def to_networkx(model: GraphModel) -> nx.MultiDiGraph:
    graph = nx.MultiDiGraph(name=model.name)
    graph.add_nodes_from(model.nodes)
    for e in model.edges:
        graph.add_edge(e.source, e.target, key=e.k)
    return graph


def enumerate_simple_cycles(model: GraphModel) -> List[Cycle]:
    """
    Every simple cycle once, as a tuple of edge keys

    Node cycles come from networkx; parallel edges along a node cycle give
    distinct edge cycles. The terminal node's identity self-loop is skipped.
    """
    graph = to_networkx(model)
    if graph.has_edge(model.terminal, model.terminal):
        graph.remove_edges_from([(model.terminal, model.terminal, k) for k in list(graph[model.terminal][model.terminal])])
    order = {n: i for i, n in enumerate(model.nodes)}
    cycles: List[Cycle] = []
    for nodes in nx.simple_cycles(nx.DiGraph(graph)):
        # rotate so the cycle starts at its earliest declared node
        start = min(range(len(nodes)), key=lambda i: order[nodes[i]])
        nodes = nodes[start:] + nodes[:start]
        hops = list(zip(nodes, nodes[1:] + nodes[:1]))
        choices = [sorted(graph[a][b]) for a, b in hops]
        for ks in product(*choices):
            cycles.append(tuple((a, b, k) for (a, b), k in zip(hops, ks)))
    cycles.sort(key=lambda c: (len(c), [(order[a], order[b], k) for a, b, k in c]))
    return cycles


def cycle_nodes(cycle: Cycle) -> List[str]:
    return [a for a, _, _ in cycle]


def check_edge_keys(model: GraphModel, keys: Sequence[EdgeKey]) -> None:
    known = {e.key for e in model.edges}
    for key in keys:
        if tuple(key) not in known:
            raise ModelError(f"no edge {tuple(key)} in model {model.name}", field="edges")

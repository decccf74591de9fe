"""Shared fixtures-free helpers: bundled models and graph isomorphism."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import networkx as nx
import numpy as np

from qccs.parser import parse_model, print_process
from qccs.semantics import Configuration, PltsGraph

GOLDEN = Path(__file__).parent / "golden"


def load(name: str):
    """(model, {config name: Configuration}) for a bundled model."""
    text = (resources.files("qccs") / "models" / f"{name}.qccs").read_text()
    model = parse_model(text)
    return model, {k: Configuration(p, s) for k, (p, s) in model.configs.items()}


def to_nx(graph: PltsGraph) -> nx.DiGraph:
    """Bipartite encoding: configuration nodes, and one node per edge holding its action."""
    g = nx.DiGraph()
    for i, c in enumerate(graph.nodes):
        g.add_node(("c", i), process=print_process(c.process), state=np.asarray(c.state.matrix))
    for i, es in enumerate(graph.edges):
        for k, e in enumerate(es):
            g.add_node(("e", i, k), action=str(e.action))
            g.add_edge(("c", i), ("e", i, k), p=None)
            for j, p in e.targets:
                g.add_edge(("e", i, k), ("c", j), p=p)
    return g


def golden_nx(name: str) -> nx.DiGraph:
    doc = json.loads((GOLDEN / f"{name}.json").read_text())
    g = nx.DiGraph()
    for n in doc["nodes"]:
        g.add_node(("c", n["id"]), process=n["process"], state=np.array(n["state"], dtype=complex))
    for k, e in enumerate(doc["edges"]):
        g.add_node(("e", k), action=e["action"])
        g.add_edge(("c", e["source"]), ("e", k), p=None)
        for j, p in e["targets"]:
            g.add_edge(("e", k), ("c", j), p=p)
    return g


def _node_match(a, b, tol=1e-9):
    if ("action" in a) != ("action" in b):
        return False
    if "action" in a:
        return a["action"] == b["action"]
    return a["process"] == b["process"] and np.allclose(a["state"], b["state"], atol=tol, rtol=0)


def _edge_match(a, b, tol=1e-9):
    if a["p"] is None or b["p"] is None:
        return a["p"] is b["p"]
    return abs(a["p"] - b["p"]) <= tol


def isomorphic(g: nx.DiGraph, h: nx.DiGraph) -> bool:
    return nx.is_isomorphic(g, h, node_match=_node_match, edge_match=_edge_match)

import random

import pytest
from hypothesis import given, settings, strategies as st

from qccs import qterm as T
from qccs import sched as F
from qccs.parser import parse_model, print_process
from qccs.semantics import Configuration, Distribution, StateSpaceExceeded, build_plts
from helpers import load
from termgen import DEFS, random_config

seeds = st.integers(0, 2**31)


def graph(name, config):
    m, c = load(name)
    return build_plts(c[config], m.defs)


def scheduler_by_actions(g, picks):
    """Scheduler choosing, per node, the edge whose action prints as ``picks[i]``."""
    choice = []
    for i, es in enumerate(g.edges):
        want = picks.get(i)
        choice.append(None if not es else next(k for k, e in enumerate(es) if str(e.action) == want)
                      if want else 0)
    return F.Scheduler(g, tuple(choice))


def node(g, process, state):
    return next(i for i, c in enumerate(g.nodes) if print_process(c.process) == process and c.state.describe() == state)


def test_example1_outcome_dependent_scheduler():
    g = graph("example1", "C")
    f = scheduler_by_actions(g, {node(g, "c!0 + d!0", "q=|0>"): "c!0", node(g, "c!0 + d!0", "q=|1>"): "d!0"})
    stable = F.weak_tau_closure(Distribution.point(g.nodes[0]), f)
    assert sorted((c.state.describe(), p) for c, p in stable) == [("q=|0>", 0.5), ("q=|1>", 0.5)]
    assert F.observe(f, "c") == 0.5 and F.observe(f, "d") == 0.5


def test_example1_D_is_all_or_nothing():
    g = graph("example1", "D")
    seen = {F.observe(f, "c") for f in F.enumerate_schedulers(g)}
    assert seen == {0.0, 1.0}


def test_closure_without_tau_is_identity():
    g = graph("example1", "C")
    f = next(F.enumerate_schedulers(g))
    mu = Distribution.point(g.nodes[1])
    assert F.weak_tau_closure(mu, f) == mu


def test_example2_measure_then_branch_strategy():
    g = graph("example2", "D")
    index = F.StrategyIndex(g)
    root_key = index.node_key[0]
    # third tau summand at the root, every other key takes its only schema
    s = F.Strategy(index, tuple((k, 2 if k == root_key else (0 if index.arity[k] else None))
                                for k in index.keys))
    stable = F.weak_tau_closure(Distribution.point(g.nodes[0]), s)
    assert sorted((print_process(c.process), c.state.describe(), p) for c, p in stable) == \
        [("A(0)", "q=|0>", 0.5), ("A(1)", "q=|1>", 0.5)]
    f = F.strategy_to_scheduler(s)
    assert f.choice[0] == 2
    assert str(f.edge(node(g, "A(0)", "q=|0>")).action) == "c!0"
    assert str(f.edge(node(g, "A(1)", "q=|1>")).action) == "d!0"
    assert (F.observe(s, "c"), F.observe(s, "d")) == (0.5, 0.5)


def test_nil_observes_nothing():
    m = parse_model("qubits q; cchan c; config N = nil @ q=|0>;")
    p, s = m.configs["N"]
    g = build_plts(Configuration(p, s), m.defs)
    f, = F.enumerate_schedulers(g)
    assert F.observe(f, "c") == 0.0
    st_, = F.enumerate_strategies(g)
    assert F.strategy_to_scheduler(st_).choice == (None,)


def test_strategies_act_uniformly_on_shared_terms():
    g = graph("example1", "C")
    zero, one = node(g, "c!0 + d!0", "q=|0>"), node(g, "c!0 + d!0", "q=|1>")
    strategies = list(F.enumerate_strategies(g))
    assert len(strategies) == 2
    for s in strategies:
        f = F.strategy_to_scheduler(s)
        assert f.edge(zero).action == f.edge(one).action


def test_strategy_key_unfolds_constants():
    m, _ = load("example2")
    call = T.Call("A", (), (T.Num(0),))
    assert F.strategy_key(call, m.defs) == F.strategy_key(T.unfold(call, m.defs), m.defs)


def test_tau_divergence_is_undefined():
    m = parse_model("qubits q; cchan c; proc L := tau.L + c!0; config C = L @ q=|0>;")
    p, s = m.configs["C"]
    g = build_plts(Configuration(p, s), m.defs)
    spin = F.Scheduler(g, (0, None))
    with pytest.raises(F.TauDivergence):
        F.weak_tau_closure(Distribution.point(g.nodes[0]), spin)
    assert F.observe(spin, "c") is None
    assert F.observe(F.Scheduler(g, (1, None)), "c") == 1.0
    vectors = {a.vector for a in F.achievable_observations(g, "schedulers")}
    assert vectors == {None, (1.0,)}


def test_enumeration_counts_and_cap():
    g = graph("example2", "D")
    fs = list(F.enumerate_schedulers(g))
    assert len(fs) == F.scheduler_count(g) == 3
    assert len(set(fs)) == 3
    with pytest.raises(F.EnumerationCapExceeded):
        list(F.enumerate_schedulers(graph("example1", "C"), cap=3))
    with pytest.raises(F.EnumerationCapExceeded):
        F.achievable_observations(graph("example1", "C"), "schedulers", cap=2)


def test_scheduler_validation():
    g = graph("example1", "C")
    with pytest.raises(ValueError):
        F.Scheduler(g, (None,) * len(g))
    with pytest.raises(ValueError):
        F.Scheduler(g, (0, 0, 0, 0))


def test_witness_round_trip():
    g = graph("example2", "D")
    for f in F.enumerate_schedulers(g):
        assert F.parse_witness(F.format_witness(f, {"context": "nil"}), g) == f
    index = F.StrategyIndex(g)
    for s in F.enumerate_strategies(g, index=index):
        assert F.parse_witness(F.format_witness(s), g, index) == s
    with pytest.raises(F.WitnessError):
        F.parse_witness("junk", g)
    with pytest.raises(F.WitnessError):
        F.parse_witness(F.format_witness(next(F.enumerate_schedulers(graph("example1", "C")))), g)


def small_graph(seed):
    """Random graph, usually with a measurement whose outcome a scheduler can exploit."""
    p, rho = random_config(seed, depth=3)
    rng = random.Random(seed)
    if rng.random() < 0.7:
        q, _ = random_config(seed + 1, depth=2)
        q = q if T.qv(q) <= set(rho.register) else T.Nil()
        react = T.If(T.Cmp("=", T.Var("m"), T.Num(0)), T.COut("c", T.Num(0), T.Nil()))
        p = T.Measure("M", (rho.register[0],), "m", T.Sum(T.Sum(p, q), react))
    try:
        g = build_plts(Configuration(p, rho), DEFS, max_nodes=40)
    except StateSpaceExceeded:
        return None
    if F.scheduler_count(g) > 2000:
        return None
    return g


@settings(max_examples=120, deadline=None)
@given(seeds)
def test_enumerated_schedulers_are_sound(seed):
    g = small_graph(seed)
    if g is None:
        return
    channels = DEFS.classical_channels()
    for f in F.enumerate_schedulers(g):
        for i, es in enumerate(g.edges):
            assert (f.edge(i) is None) == (not es)
        v = F.observation_vector(f, channels)
        if v is not None:
            assert all(0 <= p <= 1 for p in v) and sum(v) <= 1 + 1e-9


@settings(max_examples=120, deadline=None)
@given(seeds)
def test_strategies_are_schedulers(seed):
    g = small_graph(seed)
    if g is None:
        return
    index = F.StrategyIndex(g)
    if F.strategy_count(index) > 2000:
        return
    all_schedulers = set(F.enumerate_schedulers(g))
    for s in F.enumerate_strategies(g, index=index):
        assert F.strategy_to_scheduler(s) in all_schedulers


@settings(max_examples=120, deadline=None)
@given(seeds)
def test_pruned_search_matches_full_enumeration(seed):
    g = small_graph(seed)
    if g is None:
        return
    channels = DEFS.classical_channels()
    for mode, full in (("schedulers", F.enumerate_schedulers(g)), ("strategies", F.enumerate_strategies(g))):
        want = []
        for f in full:
            v = F.observation_vector(f, channels)
            if not any(F.vectors_match(v, w) for w in want):
                want.append(v)
        got = [a.vector for a in F.achievable_observations(g, mode, channels)]
        assert len(got) == len(want)
        assert all(any(F.vectors_match(v, w) for w in want) for v in got)



@settings(max_examples=100, deadline=None)
@given(seeds)
def test_closure_is_linear(seed):
    # the closure of a mixture is the mixture of closures: elimination order is irrelevant
    g = small_graph(seed)
    if g is None or len(g) < 2:
        return
    rng = random.Random(seed)
    f = F.Scheduler(g, tuple(rng.randrange(len(es)) if es else None for es in g.edges))
    a, b = rng.sample(range(len(g)), 2)
    try:
        ca = F.weak_tau_closure(Distribution.point(g.nodes[a]), f)
        cb = F.weak_tau_closure(Distribution.point(g.nodes[b]), f)
    except F.TauDivergence:
        return
    mixed = F.weak_tau_closure(Distribution([(g.nodes[a], 0.25), (g.nodes[b], 0.75)]), f)
    assert mixed == Distribution.mix([(0.25, ca), (0.75, cb)])

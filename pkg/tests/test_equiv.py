import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from qccs import equiv as E
from qccs import qterm as T
from qccs.parser import parse_model, parse_process
from qccs.qstate import QState
from qccs.semantics import TAU, Action, Configuration, Distribution, build_plts
from helpers import load
from oracles import brute_lift, random_lifting_instance
from termgen import DEFS, random_config

seeds = st.integers(0, 2**31)
half = Fraction(1, 2)


# --- lifting ------------------------------------------------------------------

def test_lift_point():
    d = E.lift_relation({("C", "C")}, {"C": 1}, {"C": 1})
    assert d.weights == (("C", "C", 1),)


def test_lift_matching_halves():
    d = E.lift_relation({("C1", "D1"), ("C2", "D2")}, {"C1": half, "C2": half}, {"D1": half, "D2": half})
    assert d["C1", "D1"] == half and d["C2", "D2"] == half


def test_lift_missing_pair():
    assert E.lift_relation({("C1", "D")}, {"C1": half, "C2": half}, {"D": 1}) is None


def test_lift_with_floats_uses_tolerance():
    assert E.lift_relation({("a", "b")}, {"a": 1.0}, {"b": 1.0 - 1e-12}) is not None
    assert E.lift_relation({("a", "b")}, {"a": 1.0}, {"b": 0.99}) is None


@settings(max_examples=300, deadline=None)
@given(seeds)
def test_lift_agrees_with_oracle(seed):
    related, mu, nu = random_lifting_instance(random.Random(seed))
    got = E.lift_relation(related, mu, nu)
    assert (got is None) == (brute_lift(related, mu, nu) is None)
    if got is not None:
        left, right = got.marginals()
        assert left == mu and right == nu
        assert all((a, b) in related and w > 0 for a, b, w in got.weights)


@settings(max_examples=300, deadline=None)
@given(seeds)
def test_decomposition_round_trips(seed):
    related, mu, nu = random_lifting_instance(random.Random(seed))
    triples = E.decompose_lifting(related, mu, nu)
    assert (triples is None) == (E.lift_relation(related, mu, nu) is None)
    if triples is not None:
        assert E.recompose(triples) == (mu, nu)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_full_relation_always_lifts(seed):
    _, mu, nu = random_lifting_instance(random.Random(seed))
    assert E.lift_relation({(a, b) for a in mu for b in nu}, mu, nu) is not None


# --- weak transitions ----------------------------------------------------------

def test_weak_transitions_example2():
    m, c = load("example2")
    mu = Distribution.point(c["D"])
    closure = E.weak_s_transition(mu, [], m.defs)
    assert len(closure) == 4  # stay, or take one of the three measuring branches
    after_c = E.weak_s_transition(mu, [Action("cout", "c", 0.0)], m.defs)
    totals = sorted(round(nu.total(), 9) for nu in after_c)
    assert totals and all(t == 1 for t in totals)
    # tau is deleted from the observable sequence
    assert len(E.weak_s_transition(mu, [TAU, Action("cout", "c", 0.0)], m.defs)) == len(after_c)


def test_weak_transitions_require_every_branch_to_move():
    m, c = load("example1")
    mu = Distribution.point(c["C"])
    # both measurement branches can output on c, so the lifted step exists
    assert E.weak_s_transition(mu, [Action("cout", "c", 0.0)], m.defs)
    assert E.weak_s_transition(mu, [Action("cout", "c", 1.0)], m.defs) == []


# --- open bisimulation ------------------------------------------------------------

def example3_relation():
    m, c = load("example3")
    conf = lambda text, ket: Configuration(parse_process(text, m), QState.product(["q"], {"q": ket}))
    pairs = [
        (c["C"], c["D"]),
        (conf("A(q; 0)", "0"), c["D"]),
        (conf("A(q; 1)", "1"), c["D"]),
        (conf("I[q]", "0"), conf("I[q]", "0")),
        (conf("X[q]", "1"), conf("I[q]", "0")),
        (conf("nil", "0"), conf("nil", "0")),
    ]
    return m, c, pairs


def test_example3_relation_is_open_bisimulation():
    m, _, pairs = example3_relation()
    assert E.verify_open_bisim(pairs, m.defs).verified


def test_example3_relation_needs_every_pair():
    m, _, pairs = example3_relation()
    res = E.verify_open_bisim(pairs[:2] + pairs[3:], m.defs)
    assert not res.verified and "weak match" in res.reason


def test_example1_root_pair_fails():
    m, c = load("example1")
    g, h = build_plts(c["C"], m.defs), build_plts(c["D"], m.defs)
    everything = [(a, b) for a in g.nodes for b in h.nodes]
    res = E.verify_open_bisim(everything, m.defs)
    assert not res.verified
    assert not E.open_bisimilar(c["C"], c["D"], m.defs).verified


def test_empty_relation_is_vacuous():
    m, _ = load("example1")
    assert E.verify_open_bisim([], m.defs).verified


def test_largest_open_bisim_example3():
    m, c, pairs = example3_relation()
    rel = E.largest_open_bisim(c["C"], c["D"], m.defs)
    for a, b in pairs:
        assert any(a == x and b == y for x, y in rel)
    assert E.open_bisimilar(c["C"], c["D"], m.defs).verified


def test_static_conditions():
    m = parse_model("qubits q, r; super H = {[[0,1],[1,0]]}; config A = H[q] @ q=|0>, r=|0>;"
                    "config B = H[q] @ q=|0>, r=|1>; config N = nil @ q=|0>, r=|0>;")
    c = {k: Configuration(p, s) for k, (p, s) in m.configs.items()}
    assert "environment" in E.static_match(c["A"], c["B"])
    assert "quantum variables" in E.static_match(c["A"], c["N"])
    assert E.static_match(c["A"], c["A"]) is None


def test_environment_operations_can_separate():
    # flipping a free qubit before it is received changes what P reports
    text = """
    qubits q, r; cchan c : {0, 1}; qchan a;
    super X = {[[0,1],[1,0]]};
    measure M = { 0: [[1,0],[0,0]], 1: [[0,0],[0,1]] };
    config P = a?y.M[y; x].c!x @ q=|0>, r=|0>;
    config Q = a?y.M[y; x].c!0 @ q=|0>, r=|0>;
    """
    m = parse_model(text)
    c = {k: Configuration(p, s) for k, (p, s) in m.configs.items()}
    # every qubit the process can receive is |0>, so without environment moves they agree
    assert E.open_bisimilar(c["P"], c["Q"], m.defs).verified
    env = E.TestBasis(env_ops=(E.EnvOp(m.defs.supers["X"], ("r",)),))
    assert not E.open_bisimilar(c["P"], c["Q"], m.defs, env).verified


# --- observational equivalence -------------------------------------------------------

@pytest.mark.parametrize("model,mode,result", [
    ("example1", "schedulers", E.REFUTED),
    ("example1", "strategies", E.EQUIVALENT),
    ("example2", "schedulers", E.EQUIVALENT),
    ("example2", "strategies", E.REFUTED),
    ("example3", "schedulers", E.REFUTED),
    ("example3", "strategies", E.REFUTED),
    ("restriction", "schedulers", E.EQUIVALENT),
    ("restriction", "strategies", E.EQUIVALENT),
])
def test_bundled_model_verdicts(model, mode, result):
    m, c = load(model)
    v = E.check_obs_equiv(c["C"], c["D"], m.defs, mode=mode)
    assert v.result == result
    if result == E.REFUTED:
        w = v.witness
        assert w.replay() == pytest.approx(w.probability, abs=1e-12)
        assert all(abs(o[w.channels.index(w.channel)] - w.probability) > 1e-9 for o in w.other_vectors)


def test_restriction_breaks_equivalence():
    m, c = load("restriction")
    v = E.check_obs_equiv(c["RC"], c["RD"], m.defs)
    assert v.refuted and v.witness.side == "right" and v.witness.channel == "d"
    assert v.witness.probability == 0.0


def test_contexts_take_part():
    m = parse_model("""
    qubits q; cchan c : {0, 1}; cchan d : {0, 1};
    config P = c!0 @ q=|0>;
    config Q = c!1 @ q=|0>;
    context R = c?x.if x = 1 then d!0;
    """)
    c = {k: Configuration(p, s) for k, (p, s) in m.configs.items()}
    # both are single outputs on c, so with no context they look the same
    assert E.check_obs_equiv(c["P"], c["Q"], m.defs).result == E.EQUIVALENT
    basis = E.TestBasis(contexts=(("R", m.contexts["R"]),))
    v = E.check_obs_equiv(c["P"], c["Q"], m.defs, basis)
    assert v.refuted and v.witness.context == "R"


def test_context_must_be_disjoint():
    m, c = load("example3")
    basis = E.TestBasis(contexts=(("bad", parse_process("I[q]", m)),))
    with pytest.raises(Exception, match="shares quantum variables"):
        E.check_obs_equiv(c["C"], c["D"], m.defs, basis)


def test_static_mismatch_refutes():
    m, c = load("example1")
    other = Configuration(T.Nil(), c["C"].state)
    v = E.check_obs_equiv(c["C"], other, m.defs)
    assert v.refuted and "quantum variables" in v.reason and v.witness is None


def test_cap_gives_inconclusive():
    m, c = load("example2")
    v = E.check_obs_equiv(c["C"], c["D"], m.defs, cap=1)
    assert v.result == E.INCONCLUSIVE


def test_divergent_resolvers_need_no_match():
    m = parse_model("qubits q; cchan c; proc L := tau.L + c!0; config P = L @ q=|0>; config Q = c!0 @ q=|0>;")
    c = {k: Configuration(p, s) for k, (p, s) in m.configs.items()}
    v = E.check_obs_equiv(c["P"], c["Q"], m.defs)
    assert v.result == E.EQUIVALENT
    assert any(row["matched"] is None for row in v.table)


def test_verdict_reports():
    m, c = load("example1")
    v = E.check_obs_equiv(c["C"], c["D"], m.defs)
    doc = v.to_json()
    assert doc["result"] == "refuted" and doc["witness"]["probability"] == 0.5
    assert "kind\tscheduler" in doc["witness"]["table"]
    assert v.to_text() == E.check_obs_equiv(c["C"], c["D"], m.defs).to_text()


def small_config(seed):
    p, rho = random_config(seed, depth=2)
    try:
        g = build_plts(Configuration(p, rho), DEFS, max_nodes=30)
    except Exception:
        return None
    return Configuration(p, rho) if len(g) <= 30 else None


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_reflexive(seed):
    c = small_config(seed)
    if c is not None:
        for mode in ("schedulers", "strategies"):
            assert E.check_obs_equiv(c, c, DEFS, mode=mode, cap=10**5).result == E.EQUIVALENT


@settings(max_examples=60, deadline=None)
@given(seeds, seeds)
def test_symmetric(s1, s2):
    a, b = small_config(s1), small_config(s2)
    if a is None or b is None or a.state.register != b.state.register:
        return
    for mode in ("schedulers", "strategies"):
        x = E.check_obs_equiv(a, b, DEFS, mode=mode, cap=10**5)
        y = E.check_obs_equiv(b, a, DEFS, mode=mode, cap=10**5)
        assert x.result == y.result

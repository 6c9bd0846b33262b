import random

import pytest

from jcham.contexts import Context, refined_context, worm_topology
from jcham.detector import (
    ExplosionGuard,
    FragmentViolation,
    InvalidActivation,
    detect_via_coverability,
    explore,
    ground,
    to_petri,
    viral_set_member,
)
from jcham.engine import replay
from jcham.malware import MalwareSpec, ReplicationMech, TargetRoutine, build_virus, build_worm
from jcham.parser import parse
from jcham.petri import Marking, covers_any, forward_enumerate
from jcham.syntax import Hole, Name, Null, Pair

from _gen import fragment_instance


def virus(klass, mech="overwrite", targets=(Name("sw1"), Name("sw2"))):
    return build_virus(
        MalwareSpec(family="virus", klass=klass, mech=ReplicationMech(mech), targets=TargetRoutine("hardcoded", tuple(targets)))
    )


def test_explore_class_iii_witness_writes_first_target():
    ctx = refined_context(2)
    v = explore(ctx, virus("III"))
    assert v.vulnerable
    final_step = v.witness.steps[-1]
    touched = {m.channel.base for m in final_step.redex.matched} | {m.channel.base for m in final_step.emitted}
    assert "sw1" in touched or "content1" in touched


def test_explore_null_one_state():
    v = explore(refined_context(2), Null())
    assert v.outcome == "not_vulnerable"
    assert v.stats.states_explored == 1


def test_explore_append_vulnerable():
    ctx = refined_context(2)
    v = explore(ctx, virus("I", mech="append", targets=(Pair(Name("sw1"), Name("sr1")), Pair(Name("sw2"), Name("sr2")))))
    assert v.vulnerable
    assert v.stats.states_explored <= 10_000


def test_witness_replays():
    ctx = refined_context(2)
    for build in (lambda: virus("III"), lambda: virus("I")):
        v = explore(ctx, build())
        final = replay(v.witness)
        assert final is not None


def test_budget_monotonicity():
    ctx = refined_context(2)
    v_small = explore(ctx, virus("III"), max_states=50)
    v_big = explore(ctx, virus("III"), max_states=5000)
    assert v_big.vulnerable
    assert v_small.outcome in ("vulnerable", "budget_exhausted")


def test_diverging_program_exhausts_any_budget():
    ctx = refined_context(2)
    div = parse("def m(x) |> (def tick<> |> tick<> | junk<> in tick<>) in proc_exec(m, a0)")
    for budget in (50, 200, 800):
        v = explore(ctx, div, max_states=budget)
        assert v.outcome == "budget_exhausted", budget


def test_workers_agree_with_sequential():
    ctx = refined_context(2)
    v1 = explore(ctx, virus("III"), workers=1)
    v4 = explore(ctx, virus("III"), workers=4)
    assert v1.outcome == v4.outcome == "vulnerable"
    n1 = explore(ctx, Null(), workers=4)
    assert n1.outcome == "not_vulnerable"


def test_viral_set_two_iterations():
    ctx = refined_context(2)
    v = viral_set_member(ctx, virus("III"), iterations=2)
    assert v.vulnerable


def test_viral_set_exhausted_targets():
    ctx = refined_context(2)
    v = viral_set_member(ctx, virus("III", targets=(Name("sw1"),)), iterations=2)
    assert v.outcome == "not_vulnerable"


def test_viral_set_null():
    assert viral_set_member(refined_context(2), Null(), iterations=2).outcome == "not_vulnerable"


def test_viral_set_requires_two_iterations():
    with pytest.raises(ValueError):
        viral_set_member(refined_context(2), Null(), iterations=1)


def test_viral_set_rejects_non_exec_activation():
    ctx = refined_context(2)
    with pytest.raises(InvalidActivation):
        viral_set_member(ctx, virus("III"), iterations=2, activations=[Name("sw1")])


def test_viral_set_explicit_activation():
    ctx = refined_context(2)
    v = viral_set_member(ctx, virus("III"), iterations=2, activations=[Name("se1")])
    assert v.vulnerable


def test_viral_set_witness_replays():
    ctx = refined_context(2)
    v = viral_set_member(ctx, virus("III"), iterations=2)
    assert v.vulnerable and v.witness is not None
    replay(v.witness)


# -- grounding


def test_ground_instance_counts():
    g = ground(parse("def x<u> |> y<u> in x<a> | x<b>"))
    # payload universe {a, b}: one instance per binding of the binder
    assert sorted(str(a) for a in g.atoms) == ["a", "b"]
    assert len(g.rules) == 2
    # two binders over a universe of three atoms
    g2 = ground(parse("def x<u> | z<v> |> y<u> in x<a> | z<b> | w<c>"))
    assert len(g2.rules) == 9


def test_ground_rejects_nested_defs():
    with pytest.raises(FragmentViolation):
        ground(parse("def x<u> |> (def y<v> |> 0 in y<u>) in x<a>"))


def test_ground_explosion_guard():
    big = parse("def x<a1, a2, a3, a4> |> 0 in x<q1, q2, q3, q4> | x<q5, q6, q7, q8>")
    with pytest.raises(ExplosionGuard):
        ground(big, max_instances=1000)


def test_ground_conditionals_resolve_statically():
    g = ground(parse("def x<u> |> if [u = a] then hit<u> else 0 in x<a> | x<b>"))
    bodies = {gr.guard[0].args[0]: gr.body for gr in g.rules if gr.guard[0].channel.base == "x"}
    hits = {str(k): [str(m) for m in v] for k, v in bodies.items()}
    assert hits["a"] == ["hit<a>"]
    assert hits["b"] == []


def test_to_petri_shapes():
    g = ground(parse("def x<> |> y<> in x<>"))
    net, init, places = to_petri(g)
    assert len(net.transitions) == 1
    assert init.size() == 1


# -- the decidable route


def test_coverability_toy_replicator():
    ctx = Context(template=Hole(), services=frozenset(), resources=frozenset({Name("sw1")}))
    toy = parse("def t<> |> sw1<p> | t<> in t<>")
    v = detect_via_coverability(ctx, toy, self_channel=Name("p"))
    assert v.vulnerable
    assert len(v.witness.steps) == 1
    replay(v.witness)


def test_coverability_unreachable_target():
    ctx = Context(template=Hole(), services=frozenset({Name("sw1")}), resources=frozenset({Name("sw2")}))
    toy = parse("def t<> |> sw1<p> | t<> in t<>")
    assert detect_via_coverability(ctx, toy, self_channel=Name("p")).outcome == "not_vulnerable"


def test_coverability_agrees_with_explore_on_generated_corpus():
    rng = random.Random(1234)
    decided = 0
    tried = 0
    while decided < 20 and tried < 200:
        tried += 1
        ctx, prog, self_ch = fragment_instance(rng)
        ex = explore(ctx, prog, max_states=4000, max_steps_per_branch=200, self_channel=self_ch)
        if ex.outcome == "budget_exhausted":
            continue
        cov = detect_via_coverability(ctx, prog, self_channel=self_ch)
        assert cov.outcome == ex.outcome, prog
        if cov.vulnerable:
            replay(cov.witness)
        decided += 1
    assert decided >= 20


def test_forward_enumerate_agrees_with_coverable_on_generated_nets():
    rng = random.Random(4321)
    checked = 0
    for _ in range(40):
        ctx, prog, self_ch = fragment_instance(rng)
        from jcham.contexts import plug
        from jcham.desugar import desugar

        g = ground(desugar(ctx.plug(prog)))
        net, init, places = to_petri(g)
        seen, saturated = forward_enumerate(net, init, cap=2000)
        if not saturated:
            continue
        for i in rng.sample(range(len(places)), min(3, len(places))):
            target = Marking.of({i: 1})
            ok, _ = __import__("jcham.petri", fromlist=["coverable"]).coverable(net, init, target)
            assert ok == covers_any(seen, target)
            checked += 1
    assert checked >= 20


def test_rich_environments_outside_fragment_are_rejected():
    ctx = refined_context(2)
    with pytest.raises(FragmentViolation):
        detect_via_coverability(ctx, virus("III"))


def test_worm_detection_via_export():
    wt = worm_topology()
    w = build_worm(MalwareSpec(family="worm", klass="IV", targets=TargetRoutine("hardcoded", (Name("sd"),))))
    v = explore(wt, w)
    assert v.vulnerable
    replay(v.witness)

import pytest

from jcham.contexts import Context, ResourceSpec, _validate, base_context, refined_context
from jcham.detector import explore, viral_set_member
from jcham.engine import inject, is_inert
from jcham.malware import MalwareSpec, ReplicationMech, TargetRoutine, build_virus, token_aware_overwrite
from jcham.parser import parse
from jcham.policy import (
    InfectingTest,
    TokenPolicy,
    UnknownChannel,
    UnstableContext,
    add_token_distributor,
    classify_context,
    enforcement_sound,
    non_infection_test,
    token_leak_free,
    tokenize_context,
)
from jcham.syntax import (
    CallPat,
    Hole,
    LocalDef,
    Message,
    MsgPat,
    Name,
    NameRef,
    Null,
    Parallel,
    PatJoin,
    Return,
    Rule,
    conj_of,
    par,
)


def read_only_context():
    f = Name("f")
    rules = [
        Rule(
            PatJoin(CallPat(Name("ro_read"), ()), MsgPat(Name("ro_content"), (f,))),
            Parallel(Return((NameRef(f),), Name("ro_read")), Message(Name("ro_content"), (NameRef(f),))),
        )
    ]
    return _validate(
        Context(
            template=LocalDef(conj_of(rules), par(Message(Name("ro_content"), (NameRef(Name("c0")),)), Hole())),
            services=frozenset(),
            resources=frozenset({Name("ro_read")}),
            privileged=frozenset({Name("ro_content")}),
        )
    )


READ_TEST = parse("let x = sr1() in observed<x>")


def test_classify_base_context_static():
    rep = classify_context(base_context(resources=[ResourceSpec(label="st", initial=Name("c0"))]))
    assert {"I.1", "I.2"} <= rep.kinds()
    assert not rep.isolation_holds


def test_classify_read_only_isolates():
    rep = classify_context(read_only_context())
    assert rep.kinds() == {"I.1"}
    assert rep.isolation_holds


def test_classify_refined_not_isolating():
    rep = classify_context(refined_context(2))
    assert not rep.isolation_holds
    assert "I.2" in rep.kinds()


def test_classify_exec_chases_content():
    ctx = base_context(resources=[ResourceSpec(label="ex", kind="executable", initial=Name("f0"))])
    rep = classify_context(ctx)
    kinds = dict(rep.classifications)
    exec_rules = [k for label, k in rep.classifications if label.startswith("ex_exec")]
    assert exec_rules == ["I.3"]


def test_non_infection_write_probe_violated():
    ctx = refined_context(2)
    verdict = non_infection_test(ctx, parse("sw1(evil); probe_done<>"), [READ_TEST], depth=6)
    assert verdict.outcome == "violated"
    test_proc, only_a, only_b = verdict.distinguishing
    assert only_a or only_b
    flat = [str(o) for seq in (only_a + only_b) for o in seq]
    assert any("observed" in s for s in flat)


def test_non_infection_read_probe_satisfied():
    ctx = refined_context(2)
    verdict = non_infection_test(ctx, parse("let y = sr1() in 0"), [READ_TEST], depth=6)
    assert verdict.satisfied and verdict.depth == 6


def test_non_infection_null_trivially_satisfied():
    ctx = refined_context(2)
    for depth in (2, 4):
        assert non_infection_test(ctx, Null(), [READ_TEST], depth=depth).satisfied


def test_non_infection_rejects_infecting_test():
    ctx = refined_context(2)
    with pytest.raises(InfectingTest):
        non_infection_test(ctx, Null(), [parse("sw1(evil); 0")], depth=4)


def test_non_infection_rejects_unstable_context():
    busy = Context(
        template=LocalDef(
            conj_of([Rule(MsgPat(Name("tick"), ()), Message(Name("tick"), ()))]),
            par(Message(Name("tick"), ()), Hole()),
        ),
    )
    with pytest.raises(UnstableContext):
        non_infection_test(busy, Null(), [], depth=2)


def test_violation_persists_at_greater_depth():
    ctx = refined_context(2)
    probe = parse("sw1(evil); probe_done<>")
    v6 = non_infection_test(ctx, probe, [READ_TEST], depth=6)
    v8 = non_infection_test(ctx, probe, [READ_TEST], depth=8)
    assert v6.outcome == v8.outcome == "violated"


# -- tokens


def guarded2():
    return tokenize_context(refined_context(2), TokenPolicy(mode="spatial", guarded_channels=("sw1", "sw2")))


def plain_virus():
    return build_virus(
        MalwareSpec(
            family="virus",
            klass="III",
            mech=ReplicationMech("overwrite"),
            targets=TargetRoutine("hardcoded", (Name("sw1"), Name("sw2"))),
        )
    )


def aware_virus(targets=(Name("sw1"), Name("sw2"))):
    return build_virus(
        MalwareSpec(
            family="virus",
            klass="III",
            mech=token_aware_overwrite(),
            targets=TargetRoutine("hardcoded", tuple(targets)),
        )
    )


def test_tokenize_guard_validation():
    with pytest.raises(UnknownChannel):
        tokenize_context(refined_context(2), TokenPolicy(guarded_channels=("nope",)))
    with pytest.raises(ValueError):
        TokenPolicy(mode="counted", count=0)


def test_tokenized_context_still_stable():
    assert is_inert(inject(guarded2().plug(Null())))


def test_wrong_token_leaves_state_untouched():
    ctx = guarded2()
    probe = parse("sw1(fake, evil); (let x = sr1() in observed<x>)")
    from jcham.engine import run

    tr = run(inject(ctx.plug(probe)), seed=0, max_steps=100)
    obs = [m for m in tr.final.messages if m.channel.base == "observed"]
    # the write never acknowledges, so the probe's read never runs; state holds
    contents = [m for m in tr.final.messages if m.channel.base == "content1"]
    assert contents and contents[0].args[0] == Name("f1")
    assert not obs


def test_token_flip_not_vulnerable():
    assert explore(guarded2(), plain_virus()).outcome == "not_vulnerable"


def test_token_flip_back_with_distribution():
    assert explore(add_token_distributor(guarded2()), aware_virus()).vulnerable


def test_tokenless_aware_virus_blocked():
    assert explore(guarded2(), aware_virus()).outcome == "not_vulnerable"


def test_counted_blocks_third_attempt():
    ctx3 = refined_context(3)
    counted = add_token_distributor(
        tokenize_context(ctx3, TokenPolicy(mode="counted", count=2, guarded_channels=("sw1", "sw2", "sw3")))
    )
    v2 = viral_set_member(counted, aware_virus((Name("sw1"), Name("sw2"), Name("sw3"))), iterations=2, max_states=20000)
    v3 = viral_set_member(counted, aware_virus((Name("sw1"), Name("sw2"), Name("sw3"))), iterations=3, max_states=20000)
    assert v2.vulnerable
    assert v3.outcome == "not_vulnerable"


def test_enforcement_sound_cases():
    g = guarded2()
    assert enforcement_sound(g)
    assert not enforcement_sound(add_token_distributor(g))
    assert not enforcement_sound(refined_context(2))


def test_token_never_leaks():
    assert token_leak_free(guarded2())


def test_isolation_implies_noninfection_for_probes():
    ctx = read_only_context()
    assert classify_context(ctx).isolation_holds
    probe = parse("let x = ro_read() in peek<x>")
    test = parse("let y = ro_read() in observed<y>")
    assert non_infection_test(ctx, probe, [test], depth=6).satisfied

import pytest

from jcham.contexts import refined_context, rootkit_kernel, worm_topology
from jcham.engine import inject, run
from jcham.filesystem import file_system
from jcham.malware import (
    MalwareError,
    MalwareSpec,
    ReplicationMech,
    TargetRoutine,
    abstraction_channel,
    attacker_process,
    build_rootkit,
    build_virus,
    build_worm,
    loadable_driver,
    replication_process,
)
from jcham.parser import parse
from jcham.syntax import (
    CallPat,
    LocalDef,
    Message,
    Name,
    NameRef,
    Null,
    Pair,
    Rule,
    pattern_atoms,
    rules_of,
)


def spec_virus(klass, mech="overwrite", targets=(Name("sw1"), Name("sw2"))):
    return MalwareSpec(
        family="virus", klass=klass, mech=ReplicationMech(mech), targets=TargetRoutine("hardcoded", tuple(targets))
    )


def collect_channel_uses(p, base):
    """All channels called or messaged with the given base."""
    out = []

    def walk(t):
        from jcham.syntax import (
            Conditional,
            Let,
            Parallel,
            Return,
            Sequence,
            SyncCall,
        )

        match t:
            case Message(ch, args):
                if ch.base == base:
                    out.append(ch)
                for a in args:
                    walk_expr(a)
            case LocalDef(d, body):
                for r in rules_of(d):
                    walk(r.body)
                walk(body)
            case Parallel(l, r):
                walk(l)
                walk(r)
            case Sequence(e, rest):
                walk_expr(e)
                walk(rest)
            case Let(_, e, body):
                walk_expr(e)
                walk(body)
            case Return(vals, _):
                for v in vals:
                    walk_expr(v)
            case Conditional(_, _, a, b):
                walk(a)
                walk(b)
            case _:
                pass

    def walk_expr(e):
        from jcham.syntax import Concat, Proj, SyncCall

        match e:
            case SyncCall(ch, args):
                if ch.base == base:
                    out.append(ch)
                for a in args:
                    walk_expr(a)
            case Concat(l, r):
                walk_expr(l)
                walk_expr(r)
            case Proj(inner, _):
                walk_expr(inner)
            case _:
                pass

    walk(p)
    return out


def test_every_build_is_an_abstraction():
    for klass in ("I", "II", "III", "IV"):
        v = build_virus(spec_virus(klass))
        assert isinstance(v, LocalDef)
        ch = abstraction_channel(v)
        assert ch == Name("v")
        w = build_worm(MalwareSpec(family="worm", klass=klass, targets=TargetRoutine("hardcoded", (Name("sd"),))))
        assert abstraction_channel(w) == Name("w")


def test_class_determines_internal_parts():
    # classes II and IV call the system mechanism; I and III never do
    for klass in ("I", "III"):
        v = build_virus(spec_virus(klass))
        assert not collect_channel_uses(v, "sys_rep")
        assert collect_channel_uses(v, "loc_rep")
    for klass in ("II", "IV"):
        v = build_virus(spec_virus(klass))
        assert collect_channel_uses(v, "sys_rep")
        assert not collect_channel_uses(v, "loc_rep")
    # classes III and IV use the system self-reference; I and II their own
    for klass in ("I", "II"):
        v = build_virus(spec_virus(klass))
        assert collect_channel_uses(v, "loc_ref")
        assert not collect_channel_uses(v, "sys_ref")
    for klass in ("III", "IV"):
        v = build_virus(spec_virus(klass))
        assert not collect_channel_uses(v, "loc_ref")
        assert collect_channel_uses(v, "sys_ref")


def test_class_iv_has_no_local_rep_or_ref_rules():
    v = build_virus(spec_virus("IV"))

    def rule_channels(p):
        found = set()

        def walk(t):
            match t:
                case LocalDef(d, body):
                    for r in rules_of(d):
                        for h in pattern_atoms(r.pattern):
                            found.add(h.channel.base)
                        walk(r.body)
                    walk(body)
                case _:
                    pass

        walk(p)
        return found

    defined = rule_channels(v)
    assert "loc_rep" not in defined
    assert "loc_ref" not in defined
    assert "loc_targ" in defined  # the research routine is always internal


def test_class_emission_separation_on_traces():
    ctx = refined_context(2)
    for klass in ("I", "II", "III", "IV"):
        v = build_virus(spec_virus(klass))
        tr = run(inject(ctx.plug(v)), seed=0, max_steps=200)
        sys_rep_used = any(st.label.split("&")[0].startswith("sys_rep") for st in tr.steps)
        assert sys_rep_used == (klass in ("II", "IV")), klass


def test_overwrite_replication_process():
    # after r(v, sw), reading the resource yields v
    defs = replication_process(ReplicationMech("overwrite"), Name("rfun"))
    prog = LocalDef(
        defs,
        parse("rfun(vcode0, st_write); (let x = st_read() in obs<x>)"),
    )
    from jcham.contexts import ResourceSpec, base_context

    ctx = base_context(resources=[ResourceSpec(label="st", initial=Name("orig"))])
    tr = run(inject(ctx.plug(prog)), seed=0, max_steps=80)
    obs = [m for m in tr.final.messages if m.channel.base == "obs"]
    assert obs and obs[0].args == (Name("vcode0"),)


def test_prepend_runs_viral_code_first():
    ctx = refined_context(1)
    spec = MalwareSpec(
        family="virus",
        klass="III",
        mech=ReplicationMech("prepend"),
        targets=TargetRoutine("hardcoded", (Pair(Name("sw1"), Name("sr1")),)),
    )
    tr = run(inject(ctx.plug(build_virus(spec))), seed=0, max_steps=300)
    # infected content is a wrapper, not the raw abstraction
    contents = [m for m in tr.final.messages if m.channel.base == "content1"]
    assert contents and contents[0].args[0].base == "p1"


def test_worm_simple_copy_delivers_unchanged():
    wt = worm_topology()
    spec = MalwareSpec(family="worm", klass="I", targets=TargetRoutine("hardcoded", (Name("sd"),)))
    tr = run(inject(wt.plug(build_worm(spec))), seed=0, max_steps=200)
    handled = [m for m in tr.final.messages if m.channel.base == "handled"]
    assert handled and handled[0].args[0].base == "w"


def test_mail_worm_round_trips_payload():
    from jcham.malware import propagation_process

    decoder = parse("let d = rcv() in recovered<snd(d)>")
    wt = worm_topology(remote_handler=decoder)
    mech = ReplicationMech(
        "custom",
        custom_rules=tuple(
            rules_of(propagation_process(Name("pfun"), wrap_tag="smtp"))
        ),
    )
    spec = MalwareSpec(family="worm", klass="I", mech=mech, targets=TargetRoutine("hardcoded", (Name("sd"),)))
    tr = run(inject(wt.plug(build_worm(spec))), seed=0, max_steps=200)
    rec = [m for m in tr.final.messages if m.channel.base == "recovered"]
    assert rec and rec[0].args[0].base == "w"


def test_companion_rename_steps():
    fs = file_system([(Name("n1"), Name("f1"))])
    spec = MalwareSpec(
        family="virus",
        klass="III",
        mech=ReplicationMech("companion_rename", companion_name=Name("n_copy")),
        targets=TargetRoutine("hardcoded", (Name("n1"),)),
    )
    tr = run(inject(fs.plug(build_virus(spec))), seed=0, max_steps=400)
    names = set()
    for m in tr.final.messages:
        if m.channel.base == "fsdir":
            from jcham.syntax import iter_cons

            names = {str(c.first) for c in iter_cons(m.args[0])}
    assert names == {"n1", "n_copy"}


def test_rootkit_requires_commands():
    with pytest.raises(MalwareError):
        build_rootkit(commands=[])


def test_rootkit_attacker_runs_service():
    ctx = rootkit_kernel(
        syscalls=[Name("sc1")], scbase=Name("scbase"), attacker=attacker_process(0, Name("argv"), 1)
    )
    rkit = build_rootkit(
        commands=[(Name("c_hide"), parse("hidden<arg>"))],
        fake_syscalls=[(Name("fsc1"), parse("fake1<arg>"))],
    )
    tr = run(inject(ctx.plug(loadable_driver(rkit))), seed=0, max_steps=400)
    assert any(m.channel.base == "hidden" and m.args[0] == Name("argv") for m in tr.final.messages)


def test_rootkit_hooking_replaces_table():
    ctx = rootkit_kernel(syscalls=[Name("sc1"), Name("sc2")], scbase=Name("scbase"))
    rkit = build_rootkit(
        commands=[(Name("c_hide"), Null())],
        fake_syscalls=[(Name("fsc1"), Null()), (Name("fsc2"), Null())],
    )
    tr = run(inject(ctx.plug(loadable_driver(rkit))), seed=0, max_steps=400)
    tables = [m for m in tr.final.messages if m.channel.base == "table"]
    from jcham.syntax import iter_cons

    assert len(tables) == 1
    assert [a.base for a in iter_cons(tables[0].args[0])] == ["fsc1", "fsc2"]


def test_target_routine_validation():
    with pytest.raises(MalwareError):
        TargetRoutine("hardcoded", ())
    with pytest.raises(MalwareError):
        ReplicationMech("bogus")
    with pytest.raises(MalwareError):
        MalwareSpec(family="virus", klass="V")

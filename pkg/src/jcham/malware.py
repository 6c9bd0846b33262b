"""Parametric self-replicating processes.

Every program here is a process abstraction ``def p(arg) |> Body`` whose
execution is an instantiation through the environment's ``proc_exec``
service.  Replication is the extrusion of the abstraction channel beyond
the program's own scope: onto a resource write channel for viruses, onto
the remote send channel for worms.

The two parametric ingredients are the replication mechanism (how the code
reaches the target) and the target routine (how the next target is found);
four classes arise from which of the self-reference access and the
mechanism are internal or taken from the environment:

    class I    internal reference, internal mechanism
    class II   internal reference, system mechanism
    class III  system reference,   internal mechanism
    class IV   system reference,   system mechanism
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence as Seq

from .syntax import (
    Atom,
    CallPat,
    Concat,
    Conditional,
    Definition,
    Expression,
    Let,
    Lit,
    LocalDef,
    Message,
    MsgPat,
    Name,
    NameRef,
    Null,
    Parallel,
    PatJoin,
    Process,
    Proj,
    Return,
    Rule,
    Sequence,
    SyncCall,
    conj_of,
    cons_list,
    embed_atom,
    par,
)

NIL = Name("nil")
UNINIT = Name("uninit")


class MalwareError(Exception):
    pass


@dataclass(frozen=True)
class ReplicationMech:
    """How the viral code reaches its target.

    kinds: ``overwrite`` (target is a write channel), ``append`` /
    ``prepend`` (target is a ``(write, read)`` channel pair; the infected
    content chains the original program after/before the viral code),
    ``companion_rename`` / ``companion_preempt`` (targets are file-system
    names; see the file system builders), or ``custom`` with caller-supplied
    rules defining the mechanism channel.
    """

    kind: str = "overwrite"
    companion_name: Atom = Name("n_copy")
    companion_ext: Atom = Name("ext_v")
    custom_rules: tuple[Rule, ...] = ()

    KINDS = ("overwrite", "append", "prepend", "companion_rename", "companion_preempt", "custom")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise MalwareError(f"unknown replication mechanism {self.kind!r}")


@dataclass(frozen=True)
class TargetRoutine:
    """How successive replication targets are found.

    ``hardcoded`` walks a fixed list, one element per call, and stops
    answering when it runs out; ``dynamic_create`` builds a fresh resource
    through the environment's factory and returns its write channel;
    ``discover`` walks the file-system registry in listing order.
    """

    kind: str = "hardcoded"
    targets: tuple[Atom, ...] = ()

    KINDS = ("hardcoded", "dynamic_create", "discover")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise MalwareError(f"unknown target routine {self.kind!r}")
        if self.kind == "hardcoded" and not self.targets:
            raise MalwareError("hardcoded target routine needs at least one target")


@dataclass(frozen=True)
class MalwareSpec:
    family: str  # "virus" | "worm"
    klass: str  # "I" | "II" | "III" | "IV"
    mech: ReplicationMech = ReplicationMech()
    targets: TargetRoutine = TargetRoutine(targets=(Name("sw1"),))
    payload: Process = Null()

    def __post_init__(self):
        if self.family not in ("virus", "worm"):
            raise MalwareError(f"unknown family {self.family!r}")
        if self.klass not in ("I", "II", "III", "IV"):
            raise MalwareError(f"unknown class {self.klass!r}")


def _call(ch: str, *args: Expression) -> SyncCall:
    return SyncCall(Name(ch), tuple(args))


def _seq(*items) -> Process:
    """Sequence the given calls, ending in the last item (a process)."""
    *calls, last = items
    out = last
    for c in reversed(calls):
        out = Sequence(c, out)
    return out


# ---------------------------------------------------------------------------
# replication mechanisms


def replication_process(mech: ReplicationMech, fn_channel: Name = Name("rfun")) -> Definition:
    """Rules defining the replication function ``fn_channel(code, target)``."""
    v_, t_ = Name("vcode"), Name("tgt")
    a_ = Name("a")
    if mech.kind == "custom":
        if not mech.custom_rules:
            raise MalwareError("custom mechanism needs rules")
        return conj_of(list(mech.custom_rules))
    if mech.kind == "overwrite":
        body: Process = _seq(SyncCall(t_, (NameRef(v_),)), Null())
    elif mech.kind in ("append", "prepend"):
        # tgt is a (write, read) pair; the new content runs the original
        # program and the viral code in the kind's order
        p_, p1 = Name("orig"), Name("p1")
        first, second = (p_, v_) if mech.kind == "append" else (v_, p_)
        infected = Rule(
            CallPat(p1, (a_,)),
            _seq(SyncCall(first, (NameRef(a_),)), SyncCall(second, (NameRef(a_),)), Null()),
        )
        body = Let(
            (Name("swv"),),
            Proj(NameRef(t_), 1),
            Let(
                (Name("srv"),),
                Proj(NameRef(t_), 2),
                Let(
                    (p_,),
                    SyncCall(Name("srv"), ()),
                    LocalDef(infected, _seq(SyncCall(Name("swv"), (NameRef(p1),)), Null())),
                ),
            ),
        )
    elif mech.kind == "companion_rename":
        body = _seq(
            _call("move", NameRef(t_), embed_atom(mech.companion_name)),
            _call("new", NameRef(t_)),
            _call("write", NameRef(t_), NameRef(v_)),
            Null(),
        )
    else:  # companion_preempt: tgt is a (shortname, ext) pair
        new_name = Concat(Proj(NameRef(t_), 1), embed_atom(mech.companion_ext))
        body = _seq(
            _call("preempt", embed_atom(mech.companion_ext)),
            _call("new", new_name),
            _call("write", new_name, NameRef(v_)),
            Null(),
        )
    return Rule(CallPat(fn_channel, (v_, t_)), body)


def token_aware_overwrite(distributor: str = "get_token") -> ReplicationMech:
    """Overwrite replication that first acquires the environment's access
    token and presents it with the write; only works where a distribution
    service is published."""
    v_, t_, tk = Name("vcode"), Name("tgt"), Name("tk2")
    rule = Rule(
        CallPat(Name("rfun"), (v_, t_)),
        Let(
            (tk,),
            SyncCall(Name(distributor), ()),
            _seq(SyncCall(t_, (NameRef(tk), NameRef(v_))), Null()),
        ),
    )
    return ReplicationMech("custom", custom_rules=(rule,))


def propagation_process(fn_channel: Name = Name("pfun"), wrap_tag: Optional[str] = None) -> Definition:
    """Worm propagation function: emit the code on the output channel,
    optionally wrapped in an invertible tagged pair (mail-style encoding)."""
    v_, out = Name("vcode"), Name("out")
    payload: Expression = NameRef(v_)
    if wrap_tag is not None:
        payload = Concat(Lit(wrap_tag), NameRef(v_))
    return Rule(CallPat(fn_channel, (v_, out)), Message(out, (payload,)))


# ---------------------------------------------------------------------------
# target routines


def _target_rules(routine: TargetRoutine, loc_targ: Name) -> tuple[list[Rule], list[Process], bool]:
    """Rules defining ``loc_targ``, initial state messages, and whether the
    routine keeps state across executions (then it must wrap the program
    abstraction rather than sit inside it)."""
    if routine.kind == "hardcoded":
        # the i-th call answers the i-th listed target, then the routine
        # exhausts; the iteration state must survive across executions, so
        # these rules wrap the program abstraction instead of sitting inside
        tlist, l_ = Name("tlist"), Name("l")
        rule = Rule(
            PatJoin(CallPat(loc_targ, ()), MsgPat(tlist, (l_,))),
            _cond_nil(
                l_,
                Message(tlist, (NameRef(NIL),)),
                Parallel(
                    Message(tlist, (Proj(NameRef(l_), 2),)),
                    Return((Proj(NameRef(l_), 1),), loc_targ),
                ),
            ),
        )
        init = Message(tlist, (embed_atom(cons_list(list(routine.targets))),))
        return [rule], [init], True
    if routine.kind == "dynamic_create":
        rule = Rule(
            CallPat(loc_targ, ()),
            Let(
                (Name("nr"), Name("nw"), Name("nx")),
                _call("mk_res", NameRef(Name("empty"))),
                Return((NameRef(Name("nw")),), loc_targ),
            ),
        )
        return [rule], [], False
    # discover: walk the file registry names in listing order; loc_targ is
    # written with an explicit reply binder so the reply can be threaded
    # through the walking state
    dstate, dstep, s_, l_ = Name("dstate"), Name("dstep"), Name("s"), Name("l")
    kq = Name("kq")
    start = Rule(
        PatJoin(MsgPat(loc_targ, (kq,)), MsgPat(dstate, (s_,))),
        Conditional(
            NameRef(s_),
            NameRef(UNINIT),
            Let((l_,), _call("list_files"), Message(dstep, (NameRef(l_), NameRef(kq)))),
            Message(dstep, (NameRef(s_), NameRef(kq))),
        ),
    )
    step = Rule(
        MsgPat(dstep, (l_, kq)),
        _cond_nil(
            l_,
            Message(dstate, (NameRef(NIL),)),
            Parallel(
                Message(dstate, (Proj(NameRef(l_), 2),)),
                Message(kq, (Proj(NameRef(l_), 1),)),
            ),
        ),
    )
    return [start, step], [Message(dstate, (NameRef(UNINIT),))], True


def _cond_nil(l: Name, then: Process, orelse: Process) -> Process:
    return Conditional(NameRef(l), NameRef(NIL), then, orelse)


# ---------------------------------------------------------------------------
# virus and worm assembly


def build_virus(spec: MalwareSpec) -> Process:
    if spec.family != "virus":
        raise MalwareError("spec is not a virus")
    return _build(spec, self_name="v", rep_service="sys_rep", loc_rep=Name("loc_rep"))


def build_worm(spec: MalwareSpec) -> Process:
    if spec.family != "worm":
        raise MalwareError("spec is not a worm")
    return _build(spec, self_name="w", rep_service="sys_prop", loc_rep=Name("loc_prop"))


def _build(spec: MalwareSpec, self_name: str, rep_service: str, loc_rep: Name) -> Process:
    self_ch = Name(self_name)
    internal_ref = spec.klass in ("I", "II")
    internal_rep = spec.klass in ("I", "III")

    inner_rules: list[Rule] = []
    if internal_ref:
        inner_rules.append(Rule(CallPat(Name("loc_ref"), ()), Return((NameRef(self_ch),), Name("loc_ref"))))
    if internal_rep:
        rfun = Name("rfun") if spec.family == "virus" else Name("pfun")
        if spec.family == "virus":
            mech_def = replication_process(spec.mech, rfun)
        else:
            if spec.mech.kind == "custom":
                mech_def = conj_of(list(spec.mech.custom_rules))
            else:
                mech_def = propagation_process(rfun)
        from .syntax import rules_of

        inner_rules.extend(rules_of(mech_def))
        inner_rules.append(
            Rule(
                CallPat(loc_rep, (Name("inp"), Name("out"))),
                Return((SyncCall(rfun, (NameRef(Name("inp")), NameRef(Name("out")))),), loc_rep),
            )
        )

    targ_rules, targ_init, stateful = _target_rules(spec.targets, Name("loc_targ"))
    if not stateful:
        inner_rules.extend(targ_rules)

    ref_call = _call("loc_ref") if internal_ref else _call("sys_ref")
    rep_channel = loc_rep if internal_rep else Name(rep_service)
    rep_call = SyncCall(rep_channel, (ref_call, _call("loc_targ")))
    run_body: Process = Sequence(rep_call, spec.payload)
    if inner_rules:
        run_body = LocalDef(conj_of(inner_rules), run_body)

    x_ = Name("x")
    self_rule = Rule(CallPat(self_ch, (x_,)), run_body)
    top_rules: list[Rule] = ([*targ_rules] if stateful else []) + [self_rule]
    launch = Sequence(SyncCall(Name("proc_exec"), (NameRef(self_ch), NameRef(Name("a0")))), Null())
    return LocalDef(conj_of(top_rules), par(*targ_init, launch))


def abstraction_channel(p: Process) -> Optional[Name]:
    """The channel a built program denotes itself by: the unique top-level
    rule with a single call pattern."""
    if not isinstance(p, LocalDef):
        return None
    from .syntax import pattern_atoms, rules_of

    found = []
    for r in rules_of(p.defs):
        atoms = pattern_atoms(r.pattern)
        if len(atoms) == 1 and isinstance(atoms[0], CallPat):
            found.append(atoms[0].channel)
    if len(found) == 1:
        return found[0]
    return None


# ---------------------------------------------------------------------------
# rootkit payloads


def proxy_process() -> Process:
    """Receive one (command, argument) pair and invoke the command."""
    return Let(
        (Name("ca"),),
        _call("rcv"),
        Let(
            (Name("c"),),
            Proj(NameRef(Name("ca")), 1),
            Let(
                (Name("aa"),),
                Proj(NameRef(Name("ca")), 2),
                _seq(SyncCall(Name("c"), (NameRef(Name("aa")),)), Null()),
            ),
        ),
    )


def build_rootkit(
    commands: Seq[tuple[Name, Process]],
    fake_syscalls: Seq[tuple[Name, Process]] = (),
    hook_table: bool = True,
) -> Process:
    """The resident part: command services behind a proxy, plus the hooking
    payload that allocates the table space and installs the fake calls.

    Publishes the command-channel list on ``snd``, then arms the proxy.
    Each command rule re-arms the proxy after spawning its service.
    """
    if not commands:
        raise MalwareError("rootkit needs at least one command")
    rules: list[Rule] = []
    for ch, service in commands:
        rules.append(Rule(CallPat(ch, (Name("arg"),)), Parallel(service, proxy_process())))
    for ch, service in fake_syscalls:
        rules.append(Rule(CallPat(ch, (Name("arg"),)), service))

    announce = Message(Name("sd"), (embed_atom(cons_list([ch for ch, _ in commands])),))
    parts: list[Process] = [announce, proxy_process()]
    if hook_table:
        if not fake_syscalls:
            raise MalwareError("hooking needs fake system calls")
        fsc_list = embed_atom(cons_list([ch for ch, _ in fake_syscalls]))
        hooking = Let(
            (Name("scspace"),),
            _call("alloc", NameRef(Name("scbase")), NameRef(Name("scsize"))),
            _seq(SyncCall(Name("scspace"), (fsc_list,)), Null()),
        )
        parts.append(hooking)
    return LocalDef(conj_of(rules), par(*parts))


def loadable_driver(payload: Process, driver_channel: Name = Name("drv")) -> Process:
    """Wrap a payload as a driver abstraction handed to the loader."""
    return LocalDef(
        Rule(MsgPat(driver_channel, ()), payload),
        _seq(SyncCall(Name("load"), (NameRef(driver_channel),)), Null()),
    )


def attacker_process(command_index: int, arg: Atom, total_commands: int) -> Process:
    """Receive the command list and fire the ``command_index``-th command."""
    sel: Expression = NameRef(Name("cs"))
    for _ in range(command_index):
        sel = Proj(sel, 2)
    sel = Proj(sel, 1)
    return Let(
        (Name("cs"),),
        _call("rcv"),
        Message(Name("sd"), (Concat(sel, embed_atom(arg)),)),
    )

"""Containment analysis: non-infection, isolation, token policies.

Non-infection is the integrity reading of non-interference: running a
process inside a stable environment must not change how the environment
behaves for any harmless test process afterwards.  Behaviour is compared
as depth-bounded sets of observable emission sequences (messages on
published channels or on channels nothing defines), so every verdict is
explicit about the equivalence strength used: ``satisfied_to_depth(k)``.

Isolation classifies each definition of an environment by what it lets a
plugged process do to resources; write or create access anywhere means
non-infection cannot be guaranteed.  Token policies rewrite an environment
so that guarded channels check a non-forgeable token first, spatially or
with a bounded use count; enforcement is sound exactly when the guarded
environment without any token distributor satisfies non-infection against
a battery of tokenless probes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence as Seq, Tuple

from .canon import canonicalize
from .contexts import Context, TokenGuard, _validate
from .engine import (
    GroundMessage,
    Soup,
    enabled_redexes,
    inject,
    reduce_with_info,
)
from .syntax import (
    Atom,
    CallPat,
    Conditional,
    Expression,
    Let,
    Lit,
    LocalDef,
    Message,
    MsgPat,
    Name,
    NameRef,
    Null,
    Pair,
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
    free_names,
    pattern_atoms,
    rules_of,
)


class UnstableContext(Exception):
    pass


class InfectingTest(Exception):
    pass


class UnknownChannel(Exception):
    pass


# ---------------------------------------------------------------------------
# definition classification


READ_ONLY = "I.1"
RESOURCE_WRITE = "I.2"
RESOURCE_EXEC = "I.3"
SERVICE_PLAIN = "II.1"
SERVICE_WRITE = "II.2"
SERVICE_EXEC = "II.3"
SERVICE_EXEC_UNRESOLVED = "II.3-unresolved"


@dataclass
class IsolationReport:
    """Per-definition intrusion classification of an environment."""

    classifications: List[Tuple[str, str]] = field(default_factory=list)
    isolation_holds: bool = False

    def kinds(self) -> set[str]:
        return {k for _, k in self.classifications}


def _top_rules(ctx: Context) -> List[Rule]:
    t = ctx.template
    if isinstance(t, LocalDef):
        return rules_of(t.defs)
    return []


def _initial_contents(ctx: Context) -> Dict[str, List[Atom]]:
    """Initial content atoms per internal state channel base."""
    out: Dict[str, List[Atom]] = {}

    def walk(p: Process):
        match p:
            case Message(ch, args):
                from .engine import ModelError, eval_atom
                from .syntax import is_atom_expr

                if len(args) >= 1 and is_atom_expr(args[0]):
                    try:
                        out.setdefault(ch.base, []).append(eval_atom(args[0]))
                    except ModelError:
                        pass
            case Parallel(l, r):
                walk(l)
                walk(r)
            case LocalDef(_, body):
                walk(body)
            case Let(_, _, body):
                walk(body)
            case Sequence(_, rest):
                walk(rest)
            case _:
                pass

    walk(ctx.template)
    return out


def _body_channel_uses(p: Process) -> Tuple[set[Name], set[Name], List[Tuple[Name, Tuple[Expression, ...]]]]:
    """Channels used in channel position, channels whose values are sent,
    and the concrete emissions of a rule body (enriched syntax)."""
    chans: set[Name] = set()
    emissions: List[Tuple[Name, Tuple[Expression, ...]]] = []

    def expr(e: Expression):
        match e:
            case SyncCall(ch, args):
                chans.add(ch)
                for a in args:
                    expr(a)
            case Proj(inner, _):
                expr(inner)
            case NameRef(_) | Lit(_):
                pass
            case _:
                for sub in getattr(e, "__dict__", {}).values():
                    if isinstance(sub, tuple):
                        for x in sub:
                            if not isinstance(x, Name):
                                expr(x)

    def walk(t: Process):
        match t:
            case Message(ch, args):
                chans.add(ch)
                emissions.append((ch, args))
                for a in args:
                    expr(a)
            case LocalDef(d, body):
                for r in rules_of(d):
                    walk(r.body)
                walk(body)
            case Parallel(l, r):
                walk(l)
                walk(r)
            case Sequence(e, rest):
                expr(e)
                walk(rest)
            case Let(_, e, body):
                expr(e)
                walk(body)
            case Return(vals, _):
                for v in vals:
                    expr(v)
            case Conditional(a, b, t1, t2):
                expr(a)
                expr(b)
                walk(t1)
                walk(t2)
            case _:
                pass

    walk(p)
    return chans, set(), emissions


def _classify_rule(rule: Rule, ctx: Context, contents: Dict[str, List[Atom]], abstractions: Dict[str, Rule], seen: set[str]) -> str:
    heads = pattern_atoms(rule.pattern)
    r_bases = {n.base for n in ctx.resources} | set(ctx.dynamic_resource_bases)
    chans, _, emissions = _body_channel_uses(rule.body)
    emitted_bases = {c.base for c, _ in emissions}

    state_heads = [h for h in heads if h.channel.base in emitted_bases]
    access_heads = [h for h in heads if h not in state_heads]
    state_binders = {b for h in state_heads for b in h.binders}
    access_binders = {b for h in access_heads for b in h.binders}
    is_resource = any(h.channel.base in r_bases for h in access_heads)

    executed = chans & (state_binders | access_binders)
    # handing stored content to an executing service is execution too
    delegated = _delegated_to_exec(rule.body, state_binders, _exec_access_bases(ctx))
    if _creates_resources(rule.body, ctx):
        return SERVICE_WRITE

    if state_heads and is_resource:
        if (executed & state_binders) or delegated:
            return _chase_exec(rule, ctx, contents, abstractions, state_heads, seen)
        for ch, args in emissions:
            if ch.base in {h.channel.base for h in state_heads}:
                arg_names = set()
                for a in args:
                    arg_names |= free_names(a)
                if arg_names & access_binders:
                    return RESOURCE_WRITE
        return READ_ONLY

    # service definition
    uses = {c.base for c in chans} | emitted_bases
    write_bases = _write_access_bases(ctx)
    if uses & write_bases or uses & {"mk_res", "mk_file", "new"}:
        return SERVICE_WRITE
    if executed:
        return SERVICE_EXEC_UNRESOLVED
    return SERVICE_PLAIN


def _delegated_to_exec(body: Process, state_binders: set[Name], exec_bases: set[str]) -> bool:
    found = False

    def expr(e: Expression):
        nonlocal found
        if isinstance(e, SyncCall):
            if e.channel.base in exec_bases and any(free_names(a) & state_binders for a in e.args):
                found = True
            for a in e.args:
                expr(a)
        elif isinstance(e, Proj):
            expr(e.expr)

    def walk(t: Process):
        match t:
            case Message(ch, args):
                if ch.base in exec_bases and any(free_names(a) & state_binders for a in args):
                    nonlocal found
                    found = True
                for a in args:
                    expr(a)
            case LocalDef(d, b):
                for r in rules_of(d):
                    walk(r.body)
                walk(b)
            case Parallel(l, r):
                walk(l)
                walk(r)
            case Sequence(e, rest):
                expr(e)
                walk(rest)
            case Let(_, e, b):
                expr(e)
                walk(b)
            case Return(vals, _):
                for v in vals:
                    expr(v)
            case Conditional(a, b2, t1, t2):
                expr(a)
                expr(b2)
                walk(t1)
                walk(t2)
            case _:
                pass

    walk(body)
    return found


def _creates_resources(body: Process, ctx: Context) -> bool:
    """A definition that activates storage with published dynamic access
    channels is a creation path."""
    dyn = set(ctx.dynamic_resource_bases)
    if not dyn:
        return False
    found = False

    def walk(t: Process):
        nonlocal found
        match t:
            case LocalDef(d, b):
                for r in rules_of(d):
                    for h in pattern_atoms(r.pattern):
                        if h.channel.base in dyn:
                            found = True
                    walk(r.body)
                walk(b)
            case Parallel(l, r):
                walk(l)
                walk(r)
            case Sequence(_, rest):
                walk(rest)
            case Let(_, _, b):
                walk(b)
            case Conditional(_, _, t1, t2):
                walk(t1)
                walk(t2)
            case _:
                pass

    walk(body)
    return found


def _chase_exec(rule: Rule, ctx: Context, contents, abstractions, state_heads, seen: set[str]) -> str:
    """Exec access: the verdict depends on what the stored content does."""
    for h in state_heads:
        for atom in contents.get(h.channel.base, []):
            if isinstance(atom, Name) and atom.base in abstractions:
                if atom.base in seen:
                    return SERVICE_EXEC_UNRESOLVED  # cycle
                sub = _classify_rule(abstractions[atom.base], ctx, contents, abstractions, seen | {atom.base})
                if sub in (RESOURCE_WRITE, SERVICE_WRITE, SERVICE_EXEC_UNRESOLVED):
                    return SERVICE_EXEC_UNRESOLVED
    return RESOURCE_EXEC


def _write_access_bases(ctx: Context) -> set[str]:
    """Resource access channels that can change stored state, derived from
    the resource rules themselves."""
    out: set[str] = set()
    contents = _initial_contents(ctx)
    r_bases = {n.base for n in ctx.resources} | set(ctx.dynamic_resource_bases)
    for rule in _top_rules(ctx):
        heads = pattern_atoms(rule.pattern)
        _, _, emissions = _body_channel_uses(rule.body)
        emitted_bases = {c.base for c, _ in emissions}
        state_heads = [h for h in heads if h.channel.base in emitted_bases]
        access_heads = [h for h in heads if h not in state_heads]
        access_binders = {b for h in access_heads for b in h.binders}
        if not state_heads:
            continue
        for ch, args in emissions:
            if ch.base in {h.channel.base for h in state_heads}:
                arg_names: set[Name] = set()
                for a in args:
                    arg_names |= free_names(a)
                if arg_names & access_binders:
                    out.update(h.channel.base for h in access_heads if h.channel.base in r_bases)
    # file-system style name-indexed commands mutate state through dispatch
    for cmd in ("write", "new", "delete", "move", "preempt"):
        if cmd in {n.base for n in ctx.services}:
            out.add(cmd)
    return out


def _exec_access_bases(ctx: Context) -> set[str]:
    out = set(ctx.exec_bases)
    for cmd in ("execute", "proc_exec"):
        if cmd in {n.base for n in ctx.services}:
            out.add(cmd)
    return out


def classify_context(ctx: Context) -> IsolationReport:
    """Walk every definition and classify it according to what it lets a
    plugged process reach; isolation holds when nothing can write or create,
    and every exec chain bottoms out in read-only or plain-service cases."""
    contents = _initial_contents(ctx)
    abstractions: Dict[str, Rule] = {}
    for r in _top_rules(ctx):
        heads = pattern_atoms(r.pattern)
        if len(heads) == 1:
            abstractions[heads[0].channel.base] = r
    report = IsolationReport()
    ok = True
    for r in _top_rules(ctx):
        label = "&".join(str(h.channel) for h in pattern_atoms(r.pattern))
        kind = _classify_rule(r, ctx, contents, abstractions, set())
        report.classifications.append((label, kind))
        if kind in (RESOURCE_WRITE, SERVICE_WRITE, SERVICE_EXEC_UNRESOLVED):
            ok = False
    report.isolation_holds = ok
    return report


# ---------------------------------------------------------------------------
# observable traces and non-infection


@dataclass(frozen=True)
class Observation:
    channel: str
    args: tuple

    def __str__(self) -> str:
        return f"{self.channel}<{', '.join(map(str, self.args))}>"


def _normalize_atom(a: Atom):
    if isinstance(a, Name):
        return a.base
    if isinstance(a, Pair):
        return (_normalize_atom(a.first), _normalize_atom(a.second))
    return a


def _observable(soup: Soup, ctx: Context, m: GroundMessage) -> bool:
    base = m.channel.base
    if base in {n.base for n in ctx.services} or base in {n.base for n in ctx.resources}:
        return True
    return not any(r.defines(base) for r in soup.rules)


def observable_traces(soup: Soup, ctx: Context, depth: int, max_paths: int = 20_000) -> frozenset:
    """All sequences of observable emissions along reductions of length
    <= depth, as a set (the bounded trace semantics used for equivalence)."""
    out: set[tuple] = set()
    seen: set[tuple] = set()
    start = (canonicalize(soup).digest, ())
    stack: List[Tuple[Soup, tuple, int]] = [(soup, (), 0)]
    seen.add(start)
    out.add(())
    paths = 0
    while stack:
        s, obs, d = stack.pop()
        if d >= depth:
            continue
        for r in enabled_redexes(s):
            s2, emitted = reduce_with_info(s, r)
            obs2 = obs + tuple(
                Observation(m.channel.base, tuple(_normalize_atom(a) for a in m.args))
                for m in emitted
                if _observable(s2, ctx, m)
            )
            key = (canonicalize(s2).digest, obs2)
            if key in seen:
                continue
            seen.add(key)
            out.add(obs2)
            paths += 1
            if paths > max_paths:
                raise RuntimeError("trace-set exploration exploded")
            stack.append((s2, obs2, d + 1))
    return frozenset(out)


@dataclass
class NonInfectionVerdict:
    outcome: str  # "satisfied_to_depth" | "violated"
    depth: int
    distinguishing: Optional[Tuple[Process, tuple, tuple]] = None
    notes: List[str] = field(default_factory=list)

    @property
    def satisfied(self) -> bool:
        return self.outcome == "satisfied_to_depth"


def _settle(soup: Soup, budget: int) -> Tuple[Soup, bool]:
    cur = soup
    for _ in range(budget):
        rs = enabled_redexes(cur)
        if not rs:
            return cur, True
        cur, _ = reduce_with_info(cur, rs[0])
    return cur, False


def check_test_harmless(ctx: Context, test: Process) -> None:
    """A test may only read and call plain services; anything that writes,
    creates or executes makes it useless as a witness and is rejected."""
    mutating = _write_access_bases(ctx) | _exec_access_bases(ctx)
    used = {n.base for n in free_names(test)}
    bad = used & mutating
    if bad:
        raise InfectingTest(f"test process uses mutating channels: {sorted(bad)}")


def non_infection_test(
    ctx: Context,
    p: Process,
    tests: Seq[Process],
    depth: int = 6,
    quiescence_budget: int = 600,
) -> NonInfectionVerdict:
    """Compare the environment before and after hosting ``p``, through the
    eyes of each test process, on observable traces bounded by ``depth``."""
    null_soup = inject(ctx.plug(Null()))
    if enabled_redexes(null_soup):
        raise UnstableContext("the environment reacts without any plugged process")
    for t in tests:
        check_test_harmless(ctx, t)

    evolved, quiet = _settle(inject(ctx.plug(p)), quiescence_budget)
    notes = [] if quiet else [f"quiescence budget hit after {quiescence_budget} steps; comparing at that horizon"]

    from .engine import graft

    for t in tests:
        baseline = inject(ctx.plug(t))
        mutated = graft(evolved, t)
        ta = observable_traces(baseline, ctx, depth)
        tb = observable_traces(mutated, ctx, depth)
        if ta != tb:
            only_a = tuple(sorted(ta - tb))[:4]
            only_b = tuple(sorted(tb - ta))[:4]
            return NonInfectionVerdict("violated", depth, (t, only_a, only_b), notes)
    return NonInfectionVerdict("satisfied_to_depth", depth, None, notes)


# ---------------------------------------------------------------------------
# token policies


@dataclass(frozen=True)
class TokenPolicy:
    mode: str = "spatial"  # "spatial" | "counted"
    count: int = 0
    guarded_channels: Tuple[str, ...] = ()
    token_base: str = "sectok"

    def __post_init__(self):
        if self.mode not in ("spatial", "counted"):
            raise ValueError(f"unknown token mode {self.mode!r}")
        if self.mode == "counted" and self.count < 1:
            raise ValueError("counted policy needs a positive count")


def tokenize_context(ctx: Context, policy: TokenPolicy) -> Context:
    """Rewrite the guarded channels to require a valid token first.

    The token is a channel name minted by the environment itself, so it
    cannot be forged from outside; a caller without it supplies some other
    atom, the equality check fails, and the request dies while internal
    state is restored.  Counted mode shares one decrementing use counter
    across all guarded channels; at zero even valid tokens stop working.
    """
    published = {n.base for n in ctx.services} | {n.base for n in ctx.resources}
    for g in policy.guarded_channels:
        if g not in published:
            raise UnknownChannel(f"cannot guard unpublished channel {g}")
    if not isinstance(ctx.template, LocalDef):
        raise UnknownChannel("environment has no definitions to guard")

    tok = Name(policy.token_base)
    tk = Name("tk")
    counted = policy.mode == "counted"
    cnt = Name("uses_left")

    def guard_rule(rule: Rule) -> Rule:
        heads = pattern_atoms(rule.pattern)
        target = next((h for h in heads if h.channel.base in policy.guarded_channels), None)
        if target is None:
            return rule
        new_heads: List = []
        for h in heads:
            if h is target:
                if isinstance(h, CallPat):
                    new_heads.append(CallPat(h.channel, (tk,) + h.binders))
                else:
                    new_heads.append(MsgPat(h.channel, (tk,) + h.binders))
            else:
                new_heads.append(h)
        restore_parts: List[Process] = [
            Message(h.channel, tuple(NameRef(b) for b in h.binders)) for h in heads if h is not target
        ]
        restore: Process = Null()
        for part in restore_parts:
            restore = part if isinstance(restore, Null) else Parallel(restore, part)
        if counted:
            new_heads.append(MsgPat(cnt, (Name("uc"),)))
            granted: Process = Conditional(
                NameRef(Name("uc")),
                NameRef(Name("nil")),
                _with(restore, Message(cnt, (NameRef(Name("uc")),))),
                _with(rule.body, Message(cnt, (Proj(NameRef(Name("uc")), 2),))),
            )
            denied: Process = _with(restore, Message(cnt, (NameRef(Name("uc")),)))
        else:
            granted = rule.body
            denied = restore
        pattern = new_heads[0]
        for h in new_heads[1:]:
            pattern = PatJoin(pattern, h)
        return Rule(pattern, Conditional(NameRef(tk), NameRef(tok), granted, denied))

    rules = [guard_rule(r) for r in _top_rules(ctx)]
    rules.append(Rule(MsgPat(tok, ()), Null()))
    body = ctx.template.body
    if counted:
        uses = cons_list([Name("use")] * policy.count)
        from .syntax import embed_atom

        body = Parallel(Message(cnt, (embed_atom(uses),)), body)
    template = LocalDef(conj_of(rules), body)
    priv = set(ctx.privileged) | {tok} | ({cnt} if counted else set())
    return _validate(
        Context(
            template=template,
            services=ctx.services,
            resources=ctx.resources,
            privileged=frozenset(priv),
            exports=ctx.exports,
            dynamic_resource_bases=ctx.dynamic_resource_bases,
            exec_bases=ctx.exec_bases,
            guard=TokenGuard(policy.token_base, policy.mode, policy.count, tuple(policy.guarded_channels)),
        )
    )


def _with(p: Process, q: Process) -> Process:
    if isinstance(p, Null):
        return q
    return Parallel(p, q)


def add_token_distributor(ctx: Context, channel: str = "get_token") -> Context:
    """Install the token distribution service; after this, anything plugged
    in can acquire the token, so enforcement rests only on the checks."""
    if ctx.guard is None:
        raise UnknownChannel("context has no token guard to distribute for")
    if not isinstance(ctx.template, LocalDef):
        raise UnknownChannel("environment has no definitions")
    tok = Name(ctx.guard.token_base)
    dist = Rule(CallPat(Name(channel), ()), Return((NameRef(tok),), Name(channel)))
    rules = _top_rules(ctx) + [dist]
    template = LocalDef(conj_of(rules), ctx.template.body)
    return Context(
        template=template,
        services=ctx.services | {Name(channel)},
        resources=ctx.resources,
        privileged=ctx.privileged,
        exports=ctx.exports,
        dynamic_resource_bases=ctx.dynamic_resource_bases,
        exec_bases=ctx.exec_bases,
        guard=TokenGuard(
            ctx.guard.token_base, ctx.guard.mode, ctx.guard.count, ctx.guard.guarded, channel
        ),
    )


def _probe_battery(ctx: Context) -> List[Process]:
    """One write probe and one exec probe per guarded channel, without the
    token (they pass an inert atom where the token belongs)."""
    probes: List[Process] = []
    guarded = ctx.guard.guarded if ctx.guard is not None else tuple(
        sorted(_write_access_bases(ctx) & {n.base for n in ctx.resources})
    )
    wrong = NameRef(Name("not_the_token"))
    for g in guarded:
        if ctx.guard is not None:
            args_w = (wrong, NameRef(Name("probe_val")))
            args_e = (wrong, NameRef(Name("probe_arg")))
        else:
            args_w = (NameRef(Name("probe_val")),)
            args_e = (NameRef(Name("probe_arg")),)
        probes.append(Sequence(SyncCall(Name(g), args_w), Message(Name("probe_done"), ())))
        exec_base = "se" + g[2:] if g.startswith("sw") else None
        if exec_base and exec_base in ctx.exec_bases:
            probes.append(Sequence(SyncCall(Name(exec_base), args_e), Message(Name("probe_done"), ())))
    return probes


def _reader_tests(ctx: Context) -> List[Process]:
    """Read-only witnesses: sample each readable channel and report."""
    tests: List[Process] = []
    read_bases = sorted(
        n.base for n in ctx.resources if n.base.startswith("sr") or n.base.endswith("_read") or n.base.startswith("fsr")
    )
    for rb in read_bases[:3]:
        args: tuple[Expression, ...] = ()
        if ctx.guard is not None and rb in ctx.guard.guarded:
            continue
        tests.append(
            Let((Name("x"),), SyncCall(Name(rb), args), Message(Name("observed"), (NameRef(Name("x")),)))
        )
    if not tests:
        tests.append(Message(Name("observed"), (NameRef(Name("nothing")),)))
    return tests


def enforcement_sound(ctx_guarded: Context, depth: int = 6) -> bool:
    """True when tokenless probes cannot distinguish the environment from an
    untouched one, i.e. the checks cannot be bypassed without the token."""
    if ctx_guarded.guard is not None and ctx_guarded.guard.distributor_base:
        dist = ctx_guarded.guard.distributor_base
        if Name(dist) in ctx_guarded.services:
            # a published distributor defeats the point: an acquiring probe
            # gets the token and writes
            g = ctx_guarded.guard.guarded[0] if ctx_guarded.guard.guarded else None
            if g is not None:
                acquire = Let(
                    (Name("t"),),
                    SyncCall(Name(dist), ()),
                    Sequence(
                        SyncCall(Name(g), (NameRef(Name("t")), NameRef(Name("probe_val")))),
                        Message(Name("probe_done"), ()),
                    ),
                )
                verdict = non_infection_test(ctx_guarded, acquire, _reader_tests(ctx_guarded), depth)
                return verdict.satisfied
    for probe in _probe_battery(ctx_guarded):
        verdict = non_infection_test(ctx_guarded, probe, _reader_tests(ctx_guarded), depth)
        if not verdict.satisfied:
            return False
    return True


def token_leak_free(ctx_guarded: Context, depth: int = 6, max_states: int = 4000) -> bool:
    """No reachable state shows the token on a published channel when a
    tokenless probe runs inside."""
    if ctx_guarded.guard is None:
        return True
    tok_base = ctx_guarded.guard.token_base
    published = {n.base for n in ctx_guarded.services} | {n.base for n in ctx_guarded.resources}
    for probe in _probe_battery(ctx_guarded):
        soup = inject(ctx_guarded.plug(probe))
        seen = {canonicalize(soup).digest}
        frontier = [soup]
        for _ in range(depth):
            nxt = []
            for s in frontier:
                for r in enabled_redexes(s):
                    s2, emitted = reduce_with_info(s, r)
                    for m in emitted:
                        if m.channel.base in published and any(
                            isinstance(a, Name) and a.base == tok_base for a in m.args
                        ):
                            return False
                    d = canonicalize(s2).digest
                    if d in seen or len(seen) > max_states:
                        continue
                    seen.add(d)
                    nxt.append(s2)
            frontier = nxt
            if not frontier:
                break
    return True

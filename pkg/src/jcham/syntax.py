"""Abstract syntax for the join calculus, enriched with synchronous calls.

Terms come in four sorts: processes, definitions, join patterns and
expressions.  Processes communicate by emitting asynchronous messages that
are matched against join patterns; definitions group reaction rules; the
expression layer adds synchronous calls, sequencing and value binding, all
of which compile down to the asynchronous core (see ``desugar``).

Values transmitted on channels are *atoms*: channel names, integer or
string literals, or pairs of atoms (used to model compound names such as a
file name plus extension).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union


# ---------------------------------------------------------------------------
# names and atoms


@dataclass(frozen=True, order=True)
class Name:
    """A channel or variable name.

    ``index`` is None for names written in source programs; the machine
    assigns an index when it activates a definition, so each activation gets
    channels distinct from every other. Equality is on (base, index).
    """

    base: str
    index: Optional[int] = None

    def is_source(self) -> bool:
        return self.index is None

    def __str__(self) -> str:
        return self.base if self.index is None else f"{self.base}~{self.index}"


@dataclass(frozen=True, order=True)
class Pair:
    """Compound atom: an ordered pair, used for name concatenation and lists."""

    first: "Atom"
    second: "Atom"

    def __str__(self) -> str:
        return f"({atom_str(self.first)} ++ {atom_str(self.second)})"


Atom = Union[Name, int, str, Pair]

# conventional inert atoms (plain free names, compared like any other name)
NULL = Name("null")
NIL = Name("nil")


def atom_str(a: Atom) -> str:
    if isinstance(a, Name):
        return str(a)
    if isinstance(a, str):
        return '"%s"' % a
    return str(a)


def cons_list(items: list[Atom]) -> Atom:
    """Encode a python list of atoms as nested pairs terminated by ``nil``."""
    out: Atom = NIL
    for a in reversed(items):
        out = Pair(a, out)
    return out


def iter_cons(a: Atom) -> Iterator[Atom]:
    while isinstance(a, Pair):
        yield a.first
        a = a.second


# ---------------------------------------------------------------------------
# expressions


@dataclass(frozen=True)
class NameRef:
    name: Name


@dataclass(frozen=True)
class Lit:
    value: Union[int, str]


@dataclass(frozen=True)
class Concat:
    """Pairing of two atom-valued expressions (written ``a ++ b``)."""

    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Proj:
    """Projection out of a pair: ``fst(e)`` / ``snd(e)``."""

    expr: "Expression"
    index: int  # 1 = first, 2 = second


@dataclass(frozen=True)
class SyncCall:
    """Synchronous call ``x(e1,...,en)``; blocks until the callee replies."""

    channel: Name
    args: tuple["Expression", ...] = ()


@dataclass(frozen=True)
class ExprDef:
    defs: "Definition"
    body: "Expression"


@dataclass(frozen=True)
class ExprLet:
    binders: tuple[Name, ...]
    expr: "Expression"
    body: "Expression"


@dataclass(frozen=True)
class ExprSeq:
    first: "Expression"
    then: "Expression"


Expression = Union[NameRef, Lit, Concat, Proj, SyncCall, ExprDef, ExprLet, ExprSeq]


def embed_atom(a: Atom) -> Expression:
    """Lift a runtime atom back into expression syntax."""
    if isinstance(a, Name):
        return NameRef(a)
    if isinstance(a, Pair):
        return Concat(embed_atom(a.first), embed_atom(a.second))
    return Lit(a)


def is_atom_expr(e: Expression) -> bool:
    """True when evaluating ``e`` needs no communication."""
    match e:
        case NameRef() | Lit():
            return True
        case Concat(left, right):
            return is_atom_expr(left) and is_atom_expr(right)
        case Proj(inner, _):
            return is_atom_expr(inner)
        case _:
            return False


# ---------------------------------------------------------------------------
# join patterns


@dataclass(frozen=True)
class MsgPat:
    """Asynchronous message pattern ``x<y1,...,yn>``."""

    channel: Name
    binders: tuple[Name, ...] = ()


@dataclass(frozen=True)
class CallPat:
    """Synchronous call pattern ``x(y1,...,yn)``; receives an implicit reply
    channel in addition to its binders."""

    channel: Name
    binders: tuple[Name, ...] = ()


@dataclass(frozen=True)
class PatJoin:
    left: "JoinPattern"
    right: "JoinPattern"


JoinPattern = Union[MsgPat, CallPat, PatJoin]


def pattern_atoms(j: JoinPattern) -> list[Union[MsgPat, CallPat]]:
    match j:
        case PatJoin(l, r):
            return pattern_atoms(l) + pattern_atoms(r)
        case _:
            return [j]


# ---------------------------------------------------------------------------
# definitions


@dataclass(frozen=True)
class Rule:
    pattern: JoinPattern
    body: "Process"


@dataclass(frozen=True)
class Conj:
    left: "Definition"
    right: "Definition"


@dataclass(frozen=True)
class Top:
    """The empty definition, written ``T``."""


Definition = Union[Rule, Conj, Top]


def rules_of(d: Definition) -> list[Rule]:
    match d:
        case Rule():
            return [d]
        case Conj(l, r):
            return rules_of(l) + rules_of(r)
        case Top():
            return []
    raise TypeError(d)


def conj_of(rules: list[Rule]) -> Definition:
    if not rules:
        return Top()
    d: Definition = rules[0]
    for r in rules[1:]:
        d = Conj(d, r)
    return d


# ---------------------------------------------------------------------------
# processes


@dataclass(frozen=True)
class Message:
    channel: Name
    args: tuple[Expression, ...] = ()


@dataclass(frozen=True)
class LocalDef:
    defs: Definition
    body: "Process"


@dataclass(frozen=True)
class Parallel:
    left: "Process"
    right: "Process"


@dataclass(frozen=True)
class Null:
    pass


@dataclass(frozen=True)
class Sequence:
    """``E; P`` - evaluate E synchronously, discard its result, run P."""

    expr: Expression
    rest: "Process"


@dataclass(frozen=True)
class Let:
    binders: tuple[Name, ...]
    expr: Expression
    body: "Process"


@dataclass(frozen=True)
class Return:
    values: tuple[Expression, ...]
    to: Name


@dataclass(frozen=True)
class Conditional:
    """Atom equality test ``if [a = b] then P else Q``; resolved when the
    enclosing rule body is instantiated."""

    lhs: Expression
    rhs: Expression
    then: "Process"
    orelse: "Process"


@dataclass(frozen=True)
class Hole:
    """Plug point of a process context; never executed directly."""


Process = Union[Message, LocalDef, Parallel, Null, Sequence, Let, Return, Conditional, Hole]

Term = Union[Process, Definition, JoinPattern, Expression]


def par(*ps: Process) -> Process:
    """Right-nested parallel composition of the given processes."""
    ps = tuple(p for p in ps if not isinstance(p, Null))
    if not ps:
        return Null()
    out = ps[-1]
    for p in reversed(ps[:-1]):
        out = Parallel(p, out)
    return out


def parallel_parts(p: Process) -> list[Process]:
    match p:
        case Parallel(l, r):
            return parallel_parts(l) + parallel_parts(r)
        case Null():
            return []
        case _:
            return [p]


# ---------------------------------------------------------------------------
# name sets


@dataclass
class NameSets:
    """Channels defined by join definitions (dv), names bound by join
    patterns (rv) and free names (fv) of a term."""

    dv: set[Name] = field(default_factory=set)
    rv: set[Name] = field(default_factory=set)
    fv: set[Name] = field(default_factory=set)


def pattern_dv(j: JoinPattern) -> set[Name]:
    return {a.channel for a in pattern_atoms(j)}


def pattern_rv(j: JoinPattern) -> set[Name]:
    out: set[Name] = set()
    for a in pattern_atoms(j):
        out.update(a.binders)
    return out


def def_dv(d: Definition) -> set[Name]:
    out: set[Name] = set()
    for r in rules_of(d):
        out.update(pattern_dv(r.pattern))
    return out


def name_sets(term: Term) -> NameSets:
    """Compute dv, rv and fv for any term.

    dv and rv accumulate over *all* definitions and patterns inside the
    term; fv follows the usual inductive scoping rules.
    """
    ns = NameSets()
    ns.fv = _fv(term, ns)
    return ns


def free_names(term: Term) -> set[Name]:
    return _fv(term, NameSets())


def _fv_exprs(es: tuple[Expression, ...], ns: NameSets) -> set[Name]:
    out: set[Name] = set()
    for e in es:
        out |= _fv(e, ns)
    return out


def _fv(term: Term, ns: NameSets) -> set[Name]:
    match term:
        # processes
        case Message(ch, args):
            return {ch} | _fv_exprs(args, ns)
        case LocalDef(d, p):
            dv = def_dv(d)
            ns.dv.update(dv)
            return (_fv(d, ns) | _fv(p, ns)) - dv
        case Parallel(l, r):
            return _fv(l, ns) | _fv(r, ns)
        case Null() | Hole():
            return set()
        case Sequence(e, p):
            return _fv(e, ns) | _fv(p, ns)
        case Let(xs, e, p):
            return _fv(e, ns) | (_fv(p, ns) - set(xs))
        case Return(vals, to):
            return _fv_exprs(vals, ns) | {to}
        case Conditional(a, b, t, o):
            return _fv(a, ns) | _fv(b, ns) | _fv(t, ns) | _fv(o, ns)
        # definitions
        case Rule(j, p):
            dv, rv = pattern_dv(j), pattern_rv(j)
            ns.dv.update(dv)
            ns.rv.update(rv)
            return dv | (_fv(p, ns) - rv)
        case Conj(l, r):
            return _fv(l, ns) | _fv(r, ns)
        case Top():
            return set()
        # patterns
        case MsgPat(ch, binders) | CallPat(ch, binders):
            ns.dv.add(ch)
            ns.rv.update(binders)
            return {ch}
        case PatJoin(l, r):
            return _fv(l, ns) | _fv(r, ns)
        # expressions
        case NameRef(n):
            return {n}
        case Lit(_):
            return set()
        case Concat(l, r):
            return _fv(l, ns) | _fv(r, ns)
        case Proj(e, _):
            return _fv(e, ns)
        case SyncCall(ch, args):
            return {ch} | _fv_exprs(args, ns)
        case ExprDef(d, e):
            dv = def_dv(d)
            ns.dv.update(dv)
            return (_fv(d, ns) | _fv(e, ns)) - dv
        case ExprLet(xs, e, b):
            return _fv(e, ns) | (_fv(b, ns) - set(xs))
        case ExprSeq(a, b):
            return _fv(a, ns) | _fv(b, ns)
    raise TypeError(f"not a term: {term!r}")


# ---------------------------------------------------------------------------
# substitution


class SubstitutionError(Exception):
    pass


class _FreshCounter:
    def __init__(self, start: int):
        self.n = start

    def next_for(self, base: str) -> Name:
        self.n += 1
        return Name(base, self.n)


def _max_index(term: Term) -> int:
    hi = -1
    for n in _all_names(term):
        if n.index is not None:
            hi = max(hi, n.index)
    return hi


def _all_names(term: Term) -> Iterator[Name]:
    match term:
        case Message(ch, args):
            yield ch
            for a in args:
                yield from _all_names(a)
        case LocalDef(d, p) | ExprDef(d, p):
            yield from _all_names(d)
            yield from _all_names(p)
        case Parallel(l, r) | Conj(l, r) | PatJoin(l, r) | Concat(l, r) | ExprSeq(l, r):
            yield from _all_names(l)
            yield from _all_names(r)
        case Null() | Top() | Lit(_) | Hole():
            return
        case Sequence(e, p):
            yield from _all_names(e)
            yield from _all_names(p)
        case Let(xs, e, p) | ExprLet(xs, e, p):
            yield from xs
            yield from _all_names(e)
            yield from _all_names(p)
        case Return(vals, to):
            yield to
            for v in vals:
                yield from _all_names(v)
        case Conditional(a, b, t, o):
            yield from _all_names(a)
            yield from _all_names(b)
            yield from _all_names(t)
            yield from _all_names(o)
        case Rule(j, p):
            yield from _all_names(j)
            yield from _all_names(p)
        case MsgPat(ch, binders) | CallPat(ch, binders):
            yield ch
            yield from binders
        case NameRef(n):
            yield n
        case Proj(e, _):
            yield from _all_names(e)
        case SyncCall(ch, args):
            yield ch
            for a in args:
                yield from _all_names(a)
        case _:
            raise TypeError(f"not a term: {term!r}")


def _atom_names(a: Atom) -> Iterator[Name]:
    if isinstance(a, Name):
        yield a
    elif isinstance(a, Pair):
        yield from _atom_names(a.first)
        yield from _atom_names(a.second)


def substitute(term: Term, mapping: dict[Name, Atom]) -> Term:
    """Replace free occurrences of the mapping keys, avoiding capture.

    Values may be names, literals or pairs.  Binders that would capture a
    free name of a substituted value are renamed to fresh indexed names.
    A mapping that puts a non-name atom in channel position raises
    :class:`SubstitutionError`.
    """
    if not mapping:
        return term
    hi = _max_index(term)
    for k, v in mapping.items():
        if k.index is not None:
            hi = max(hi, k.index)
        for n in _atom_names(v):
            if n.index is not None:
                hi = max(hi, n.index)
    ctr = _FreshCounter(hi)
    return _subst(term, dict(mapping), ctr)


def _range_names(mapping: dict[Name, Atom]) -> set[Name]:
    out: set[Name] = set()
    for v in mapping.values():
        out.update(_atom_names(v))
    return out


def _narrow(mapping: dict[Name, Atom], bound: set[Name]) -> dict[Name, Atom]:
    return {k: v for k, v in mapping.items() if k not in bound}


def _subst_channel(ch: Name, mapping: dict[Name, Atom]) -> Name:
    v = mapping.get(ch)
    if v is None:
        return ch
    if not isinstance(v, Name):
        raise SubstitutionError(f"cannot place {atom_str(v)} in channel position for {ch}")
    return v


def _subst_expr_atom(e: Expression, mapping: dict[Name, Atom], ctr: _FreshCounter) -> Expression:
    match e:
        case NameRef(n):
            if n in mapping:
                return embed_atom(mapping[n])
            return e
        case Lit(_):
            return e
        case Concat(l, r):
            return Concat(_subst_expr_atom(l, mapping, ctr), _subst_expr_atom(r, mapping, ctr))
        case Proj(inner, i):
            return Proj(_subst_expr_atom(inner, mapping, ctr), i)
    return _subst(e, mapping, ctr)  # type: ignore[return-value]


def _rename_binders(
    binders: tuple[Name, ...], mapping: dict[Name, Atom], body_free: set[Name], ctr: _FreshCounter
) -> dict[Name, Atom]:
    """Renaming for binders colliding with the substitution's range."""
    danger = _range_names(mapping)
    ren: dict[Name, Atom] = {}
    for b in binders:
        if b in danger:
            ren[b] = ctr.next_for(b.base)
    return ren


def _subst(term: Term, mapping: dict[Name, Atom], ctr: _FreshCounter) -> Term:
    match term:
        case Message(ch, args):
            return Message(
                _subst_channel(ch, mapping),
                tuple(_subst_expr_atom(a, mapping, ctr) if is_atom_expr(a) else _subst(a, mapping, ctr) for a in args),
            )
        case LocalDef(d, p):
            d2, p2, _ = _subst_scope(d, p, mapping, ctr)
            return LocalDef(d2, p2)
        case Parallel(l, r):
            return Parallel(_subst(l, mapping, ctr), _subst(r, mapping, ctr))
        case Null() | Top() | Hole():
            return term
        case Sequence(e, p):
            return Sequence(_subst(e, mapping, ctr), _subst(p, mapping, ctr))
        case Let(xs, e, p):
            e2 = _subst(e, mapping, ctr)
            inner = _narrow(mapping, set(xs))
            ren = _rename_binders(xs, inner, free_names(p), ctr)
            if ren:
                p = _subst(p, ren, ctr)
                xs = tuple(ren.get(x, x) for x in xs)  # type: ignore[misc]
            return Let(xs, e2, _subst(p, inner, ctr) if inner else p)
        case Return(vals, to):
            return Return(
                tuple(_subst(v, mapping, ctr) for v in vals),
                _subst_channel(to, mapping),
            )
        case Conditional(a, b, t, o):
            return Conditional(
                _subst_expr_atom(a, mapping, ctr),
                _subst_expr_atom(b, mapping, ctr),
                _subst(t, mapping, ctr),
                _subst(o, mapping, ctr),
            )
        case Rule(j, p):
            # pattern channels behave as free occurrences of a bare rule;
            # received names are binders scoping the body
            rv = pattern_rv(j)
            inner = _narrow(mapping, rv)
            ren = _rename_binders(tuple(rv), inner, free_names(p), ctr)
            if ren:
                j = _rename_pattern_binders(j, ren)
                p = _subst(p, ren, ctr)
            j2 = _subst_pattern_channels(j, inner)
            return Rule(j2, _subst(p, inner, ctr) if inner else p)
        case Conj(l, r):
            return Conj(_subst(l, mapping, ctr), _subst(r, mapping, ctr))
        case MsgPat() | CallPat() | PatJoin():
            return _subst_pattern_channels(term, mapping)
        case NameRef() | Lit() | Concat() | Proj():
            return _subst_expr_atom(term, mapping, ctr)
        case SyncCall(ch, args):
            return SyncCall(_subst_channel(ch, mapping), tuple(_subst(a, mapping, ctr) for a in args))
        case ExprDef(d, e):
            d2, e2, _ = _subst_scope(d, e, mapping, ctr)
            return ExprDef(d2, e2)
        case ExprLet(xs, e, b):
            e2 = _subst(e, mapping, ctr)
            inner = _narrow(mapping, set(xs))
            ren = _rename_binders(xs, inner, free_names(b), ctr)
            if ren:
                b = _subst(b, ren, ctr)
                xs = tuple(ren.get(x, x) for x in xs)  # type: ignore[misc]
            return ExprLet(xs, e2, _subst(b, inner, ctr) if inner else b)
        case ExprSeq(a, b):
            return ExprSeq(_subst(a, mapping, ctr), _subst(b, mapping, ctr))
    raise TypeError(f"not a term: {term!r}")


def _subst_scope(d: Definition, body, mapping: dict[Name, Atom], ctr: _FreshCounter):
    """Handle a def scope: dv(d) binds inside rule bodies and the body."""
    dv = def_dv(d)
    inner = _narrow(mapping, dv)
    collide = _range_names(inner) & dv
    if collide:
        ren: dict[Name, Atom] = {c: ctr.next_for(c.base) for c in collide}
        d = _subst(d, ren, ctr)  # renames pattern channels and recursive uses
        body = _subst(body, ren, ctr)
    if not inner:
        return d, body, mapping
    return _subst(d, inner, ctr), _subst(body, inner, ctr), inner


def _subst_pattern_channels(j: JoinPattern, mapping: dict[Name, Atom]) -> JoinPattern:
    match j:
        case MsgPat(ch, binders):
            return MsgPat(_subst_channel(ch, mapping), binders)
        case CallPat(ch, binders):
            return CallPat(_subst_channel(ch, mapping), binders)
        case PatJoin(l, r):
            return PatJoin(_subst_pattern_channels(l, mapping), _subst_pattern_channels(r, mapping))
    raise TypeError(j)


def _rename_pattern_binders(j: JoinPattern, ren: dict[Name, Atom]) -> JoinPattern:
    match j:
        case MsgPat(ch, binders):
            return MsgPat(ch, tuple(ren.get(b, b) for b in binders))  # type: ignore[misc]
        case CallPat(ch, binders):
            return CallPat(ch, tuple(ren.get(b, b) for b in binders))  # type: ignore[misc]
        case PatJoin(l, r):
            return PatJoin(_rename_pattern_binders(l, ren), _rename_pattern_binders(r, ren))
    raise TypeError(j)


# ---------------------------------------------------------------------------
# pretty printing


def pretty(term: Term) -> str:
    """Render a term in the concrete grammar; ``parse(pretty(t)) == t``."""
    match term:
        case Message(ch, args):
            return f"{ch}<{_expr_list(args)}>"
        case LocalDef(d, p):
            return f"def {pretty(d)} in {pretty(p)}"
        case Parallel(l, r):
            # the parser is left-associative; right-nested composition keeps
            # its parens so parsing reproduces the exact tree
            left = pretty(l) if isinstance(l, Parallel) else _par_operand(l)
            return f"{left} | {_par_operand(r)}"
        case Null():
            return "0"
        case Sequence(e, rest):
            if isinstance(rest, Null) and isinstance(e, SyncCall):
                return pretty(e)
            return f"{pretty(e)}; {pretty(rest)}"
        case Let(xs, e, p):
            return f"let {', '.join(str(x) for x in xs)} = {pretty(e)} in {pretty(p)}"
        case Return(vals, to):
            if vals:
                return f"return {_expr_list(vals)} to {to}"
            return f"return to {to}"
        case Conditional(a, b, t, o):
            return f"if [{pretty(a)} = {pretty(b)}] then {_branch(t)} else {_branch(o)}"
        case Hole():
            return "HOLE"
        case Rule(j, p):
            return f"{pretty(j)} |> {_rule_body(p)}"
        case Conj(l, r):
            return f"{pretty(l)} and {pretty(r)}"
        case Top():
            return "T"
        case MsgPat(ch, binders):
            return f"{ch}<{', '.join(str(b) for b in binders)}>"
        case CallPat(ch, binders):
            return f"{ch}({', '.join(str(b) for b in binders)})"
        case PatJoin(l, r):
            return f"{pretty(l)} | {pretty(r)}"
        case NameRef(n):
            return str(n)
        case Lit(v):
            return atom_str(v)
        case Concat(l, r):
            return f"{_concat_operand(l)} ++ {_concat_operand(r)}"
        case Proj(e, i):
            return f"{'fst' if i == 1 else 'snd'}({pretty(e)})"
        case SyncCall(ch, args):
            return f"{ch}({_expr_list(args)})"
    raise TypeError(f"not a term: {term!r}")


def _expr_list(es: tuple[Expression, ...]) -> str:
    return ", ".join(pretty(e) for e in es)


def _par_operand(p: Process) -> str:
    if isinstance(p, (Message, Null, Hole)) or (isinstance(p, Sequence) and isinstance(p.rest, Null) and isinstance(p.expr, SyncCall)):
        return pretty(p)
    return f"({pretty(p)})"


def _branch(p: Process) -> str:
    # conditional branches chain without parens; anything compound is wrapped
    if isinstance(p, (Message, Null, Conditional, Hole)):
        return pretty(p)
    return f"({pretty(p)})"


def _rule_body(p: Process) -> str:
    # "def"/"let" bodies swallow trailing "and"/"in"; parenthesise them
    if isinstance(p, (LocalDef, Let, Sequence, Return)):
        return f"({pretty(p)})"
    return pretty(p)


def _concat_operand(e: Expression) -> str:
    if isinstance(e, Concat):
        return f"({pretty(e)})"
    return pretty(e)

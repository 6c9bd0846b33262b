"""Compilation of the enriched syntax down to the asynchronous core.

The core keeps only messages, definitions, parallel composition, the null
process and atom-equality conditionals.  Synchronous calls, sequences,
value bindings and returns are compiled by continuation passing: every
call gets a freshly defined reply channel, passed as an extra trailing
argument; a call pattern ``x(a, b)`` becomes the message pattern
``x<a, b, k>`` and ``return v to x`` becomes ``k<v>``.

Two conventions make the compiled programs behave like the informal
reduction style used when modelling systems:

* a rule that receives on a call pattern but never returns to it replies
  with an empty message as soon as it fires ("auto-acknowledge"), so
  callers of notification-style services resume;
* ``return f(args) to x`` forwards the caller's reply channel to ``f``
  (a tail call), so services can hand out whatever ``f`` produces without
  knowing its arity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .syntax import (
    CallPat,
    Concat,
    Conditional,
    Definition,
    ExprDef,
    ExprLet,
    ExprSeq,
    Expression,
    Hole,
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
    Term,
    _max_index,
    conj_of,
    def_dv,
    is_atom_expr,
    pattern_atoms,
    rules_of,
)


class DesugarError(Exception):
    pass


class _Gen:
    def __init__(self, start: int):
        self.n = start

    def fresh(self, base: str = "k") -> Name:
        self.n += 1
        return Name(base, self.n)


class _Renv:
    """Maps call-pattern channels in scope to their reply-channel binders."""

    def __init__(self, entries: dict[Name, Name] | None = None):
        self.entries = entries or {}
        self.used: set[Name] = set()

    def shadow(self, names: set[Name]) -> "_Renv":
        child = _Renv({k: v for k, v in self.entries.items() if k not in names})
        child.used = self.used  # same usage tracker all the way down
        return child

    def extend(self, more: dict[Name, Name]) -> "_Renv":
        child = _Renv({**{k: v for k, v in self.entries.items() if k not in more}, **more})
        child.used = self.used
        return child

    def lookup(self, x: Name) -> Name:
        if x not in self.entries:
            raise DesugarError(f"'return ... to {x}' has no enclosing call pattern on {x}")
        self.used.add(self.entries[x])
        return self.entries[x]


def desugar(p: Process) -> Process:
    """Compile ``p`` to the core; identity on programs already in the core."""
    gen = _Gen(_max_index(p))
    return _proc(p, _Renv(), gen)


def desugar_definition(d: Definition, start_index: int = -1) -> Definition:
    gen = _Gen(max(start_index, _max_index(d)))
    return _defs(d, _Renv(), gen)


def _defs(d: Definition, renv: _Renv, gen: _Gen) -> Definition:
    return conj_of([_rule(r, renv, gen) for r in rules_of(d)])


def _rule(r: Rule, renv: _Renv, gen: _Gen) -> Rule:
    atoms = pattern_atoms(r.pattern)
    replies: dict[Name, Name] = {}
    new_atoms = []
    for a in atoms:
        if isinstance(a, CallPat):
            k = gen.fresh()
            replies[a.channel] = k
            new_atoms.append(MsgPat(a.channel, a.binders + (k,)))
        else:
            new_atoms.append(a)
    pattern = new_atoms[0]
    for a in new_atoms[1:]:
        pattern = PatJoin(pattern, a)
    inner = renv.extend(replies)
    body = _proc(r.body, inner, gen)
    # auto-acknowledge call patterns the body never replies to
    for ch, k in replies.items():
        if k not in inner.used:
            body = Parallel(body, Message(k, ()))
    return Rule(pattern, body)


def _proc(p: Process, renv: _Renv, gen: _Gen) -> Process:
    match p:
        case Message(ch, args):
            return _eval_args(list(args), [], renv, gen, lambda atoms: Message(ch, tuple(atoms)))
        case LocalDef(d, body):
            scoped = renv.shadow(def_dv(d))
            return LocalDef(_defs(d, scoped, gen), _proc(body, scoped, gen))
        case Parallel(l, r):
            return Parallel(_proc(l, renv, gen), _proc(r, renv, gen))
        case Null() | Hole():
            return p
        case Sequence(e, rest):
            return _effect(e, _proc(rest, renv, gen), renv, gen)
        case Let(xs, e, body):
            return _bind(xs, e, _proc(body, renv.shadow(set(xs)), gen), renv, gen)
        case Return(vals, to):
            k = renv.lookup(to)
            if len(vals) == 1 and isinstance(vals[0], SyncCall):
                call = vals[0]
                return _eval_args(
                    list(call.args), [], renv, gen,
                    lambda atoms: Message(call.channel, tuple(atoms) + (NameRef(k),)),
                )
            return _eval_args(list(vals), [], renv, gen, lambda atoms: Message(k, tuple(atoms)))
        case Conditional(a, b, t, o):
            return Conditional(a, b, _proc(t, renv, gen), _proc(o, renv, gen))
    raise TypeError(f"not a process: {p!r}")


def _eval_args(
    pending: list[Expression],
    done: list[Expression],
    renv: _Renv,
    gen: _Gen,
    finish: Callable[[list[Expression]], Process],
) -> Process:
    """Evaluate expressions left to right, then build the final process.

    Atom expressions pass through; each call is given a fresh one-slot
    reply channel whose rule carries on with the remaining evaluation.
    """
    if not pending:
        return finish(done)
    e, rest = pending[0], pending[1:]
    if is_atom_expr(e):
        return _eval_args(rest, done + [e], renv, gen, finish)
    if isinstance(e, SyncCall):
        k, res = gen.fresh(), gen.fresh("r")
        cont = _eval_args(rest, done + [NameRef(res)], renv, gen, finish)
        return LocalDef(Rule(MsgPat(k, (res,)), cont), _emit_call(e, k, renv, gen))
    if isinstance(e, ExprDef):
        scoped = renv.shadow(def_dv(e.defs))
        return LocalDef(_defs(e.defs, scoped, gen), _eval_args([e.body] + rest, done, scoped, gen, finish))
    if isinstance(e, ExprLet):
        cont = _eval_args([e.body] + rest, done, renv.shadow(set(e.binders)), gen, finish)
        return _bind(e.binders, e.expr, cont, renv, gen)
    if isinstance(e, ExprSeq):
        return _effect(e.first, _eval_args([e.then] + rest, done, renv, gen, finish), renv, gen)
    raise TypeError(f"not an expression: {e!r}")


def _emit_call(call: SyncCall, k: Name, renv: _Renv, gen: _Gen) -> Process:
    return _eval_args(
        list(call.args), [], renv, gen,
        lambda atoms: Message(call.channel, tuple(atoms) + (NameRef(k),)),
    )


def _effect(e: Expression, rest: Process, renv: _Renv, gen: _Gen) -> Process:
    """Evaluate ``e`` for effect only, then continue with ``rest``."""
    if is_atom_expr(e):
        return rest
    if isinstance(e, SyncCall):
        k = gen.fresh()
        return LocalDef(Rule(MsgPat(k, ()), rest), _emit_call(e, k, renv, gen))
    if isinstance(e, ExprDef):
        scoped = renv.shadow(def_dv(e.defs))
        return LocalDef(_defs(e.defs, scoped, gen), _effect(e.body, rest, scoped, gen))
    if isinstance(e, ExprLet):
        return _bind(e.binders, e.expr, _effect(e.body, rest, renv.shadow(set(e.binders)), gen), renv, gen)
    if isinstance(e, ExprSeq):
        return _effect(e.first, _effect(e.then, rest, renv, gen), renv, gen)
    raise TypeError(f"not an expression: {e!r}")


def _bind(xs: tuple[Name, ...], e: Expression, body: Process, renv: _Renv, gen: _Gen) -> Process:
    """``let xs = e in body`` with ``body`` already compiled."""
    if is_atom_expr(e):
        if len(xs) != 1:
            raise DesugarError(f"let of an atom expression binds exactly one name, got {len(xs)}")
        k = gen.fresh()
        return LocalDef(Rule(MsgPat(k, xs), body), Message(k, (e,)))
    if isinstance(e, SyncCall):
        k = gen.fresh()
        return LocalDef(Rule(MsgPat(k, xs), body), _emit_call(e, k, renv, gen))
    if isinstance(e, ExprDef):
        scoped = renv.shadow(def_dv(e.defs))
        return LocalDef(_defs(e.defs, scoped, gen), _bind(xs, e.body, body, scoped, gen))
    if isinstance(e, ExprLet):
        return _bind(e.binders, e.expr, _bind(xs, e.body, body, renv.shadow(set(e.binders)), gen), renv, gen)
    if isinstance(e, ExprSeq):
        return _effect(e.first, _bind(xs, e.then, body, renv, gen), renv, gen)
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# decidable fragment


VIOLATION_KINDS = (
    "nested-definition",
    "synchronous-call",
    "let-binding",
    "return",
    "fresh-requiring-desugar",
)


@dataclass
class FragmentReport:
    """Outcome of the no-name-generation fragment check.

    ``in_fragment`` holds exactly when ``violations`` is empty.  Programs in
    the fragment activate all their definitions up front and never mint new
    channels or atoms afterwards, which is what makes exhaustive analysis
    complete for them.
    """

    violations: list[tuple[str, str]] = field(default_factory=list)

    @property
    def in_fragment(self) -> bool:
        return not self.violations


def check_core_fragment(p: Process) -> FragmentReport:
    report = FragmentReport()
    _walk_fragment(p, "", False, report)
    return report


def _walk_fragment(t: Term, path: str, in_rule_body: bool, rep: FragmentReport) -> None:
    match t:
        case Message(_, args):
            for i, a in enumerate(args):
                _walk_expr(a, f"{path}.arg[{i}]", in_rule_body, rep)
        case LocalDef(d, body):
            if in_rule_body:
                rep.violations.append((path, "nested-definition"))
            for i, r in enumerate(rules_of(d)):
                for a in pattern_atoms(r.pattern):
                    if isinstance(a, CallPat):
                        rep.violations.append((f"{path}.rule[{i}]", "synchronous-call"))
                _walk_fragment(r.body, f"{path}.rule[{i}].body", True, rep)
            _walk_fragment(body, f"{path}.in", in_rule_body, rep)
        case Parallel(l, r):
            _walk_fragment(l, f"{path}.par[0]", in_rule_body, rep)
            _walk_fragment(r, f"{path}.par[1]", in_rule_body, rep)
        case Null() | Hole():
            pass
        case Sequence(e, rest):
            rep.violations.append((path, "fresh-requiring-desugar"))
            _walk_expr(e, f"{path}.expr", in_rule_body, rep)
            _walk_fragment(rest, f"{path}.rest", in_rule_body, rep)
        case Let(_, e, body):
            rep.violations.append((path, "let-binding"))
            _walk_expr(e, f"{path}.expr", in_rule_body, rep)
            _walk_fragment(body, f"{path}.in", in_rule_body, rep)
        case Return(vals, _):
            rep.violations.append((path, "return"))
            for i, v in enumerate(vals):
                _walk_expr(v, f"{path}.val[{i}]", in_rule_body, rep)
        case Conditional(a, b, then, orelse):
            _walk_expr(a, f"{path}.lhs", in_rule_body, rep)
            _walk_expr(b, f"{path}.rhs", in_rule_body, rep)
            _walk_fragment(then, f"{path}.then", in_rule_body, rep)
            _walk_fragment(orelse, f"{path}.else", in_rule_body, rep)
        case _:
            raise TypeError(f"not a process: {t!r}")


def _walk_expr(e: Expression, path: str, in_rule_body: bool, rep: FragmentReport) -> None:
    match e:
        case NameRef() | Lit():
            pass
        case Concat(l, r):
            # atom construction at reaction time mints unbounded new atoms
            if in_rule_body and not (isinstance(l, Lit) and isinstance(r, Lit)):
                rep.violations.append((path, "fresh-requiring-desugar"))
            _walk_expr(l, f"{path}.l", in_rule_body, rep)
            _walk_expr(r, f"{path}.r", in_rule_body, rep)
        case Proj(inner, _):
            if in_rule_body and not isinstance(inner, Lit):
                rep.violations.append((path, "fresh-requiring-desugar"))
            _walk_expr(inner, f"{path}.e", in_rule_body, rep)
        case SyncCall(_, args):
            rep.violations.append((path, "synchronous-call"))
            for i, a in enumerate(args):
                _walk_expr(a, f"{path}.arg[{i}]", in_rule_body, rep)
        case ExprDef(_, body):
            rep.violations.append((path, "nested-definition"))
            _walk_expr(body, f"{path}.in", in_rule_body, rep)
        case ExprLet(_, inner, body):
            rep.violations.append((path, "let-binding"))
            _walk_expr(inner, f"{path}.expr", in_rule_body, rep)
            _walk_expr(body, f"{path}.in", in_rule_body, rep)
        case ExprSeq(a, b):
            rep.violations.append((path, "fresh-requiring-desugar"))
            _walk_expr(a, f"{path}.l", in_rule_body, rep)
            _walk_expr(b, f"{path}.r", in_rule_body, rep)
        case _:
            raise TypeError(f"not an expression: {e!r}")

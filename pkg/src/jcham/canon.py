"""Canonical forms for soups.

Two soups are congruent when one can be turned into the other by reordering
rules and messages and by a base-preserving bijection of machine-indexed
names.  ``canonicalize`` computes a digest invariant under exactly those
changes: indexed names are partitioned by iterated signature refinement
(a name's signature is the multiset of its occurrence slots across all
rules and messages, described up to the current partition), the partition
is made discrete by individualizing one name of the first ambiguous class
and re-refining, and the digest hashes the least serialization over the
explored orders.  Ambiguous classes after refinement are almost always
interchangeable names (dead reply channels, identical resources), for
which every order serializes identically; a small branch budget covers the
rest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .engine import ActiveRule, GroundMessage, Soup
from .syntax import (
    Atom,
    Concat,
    Conditional,
    Expression,
    Lit,
    LocalDef,
    Message,
    Name,
    NameRef,
    Null,
    Pair,
    Parallel,
    Process,
    Proj,
    parallel_parts,
    pattern_atoms,
    pretty,
    rules_of,
)

_BRANCH_BUDGET = 48


@dataclass(frozen=True)
class CanonicalForm:
    digest: str
    serialization: str
    renaming: tuple[tuple[Name, Name], ...]


def canonicalize(soup: Soup) -> CanonicalForm:
    fresh = _global_indexed_names(soup)
    skeletons = [(item[0], _skeletonize(item)) for item in _items(soup)]
    colors: Dict[Name, str] = {n: n.base for n in fresh}
    colors = _refine_fixpoint(skeletons, fresh, colors)
    orders = _discrete_orders(skeletons, fresh, colors)
    best_s: Optional[str] = None
    best_order: Optional[List[Name]] = None
    for order in orders:
        final = {n: f"%{i}" for i, n in enumerate(order)}
        s = _serialize_soup(skeletons, final)
        if best_s is None or s < best_s:
            best_s, best_order = s, order
    assert best_s is not None and best_order is not None
    digest = hashlib.sha256(best_s.encode()).hexdigest()
    renaming = tuple((n, Name(n.base, i)) for i, n in enumerate(best_order))
    return CanonicalForm(digest, best_s, renaming)


def congruent(a: Soup, b: Soup) -> bool:
    return canonicalize(a).digest == canonicalize(b).digest


# ---------------------------------------------------------------------------
# items: a uniform view of the soup's rules and messages


def _items(soup: Soup) -> list:
    out: list = [("msg", m, k) for m, k in soup.messages.items()]
    out.extend(("rule", r, 1) for r in soup.rules)
    return out


def _global_indexed_names(soup: Soup) -> List[Name]:
    seen: Dict[Name, None] = {}

    def visit_atom(a: Atom):
        if isinstance(a, Name):
            if a.index is not None:
                seen.setdefault(a, None)
        elif isinstance(a, Pair):
            visit_atom(a.first)
            visit_atom(a.second)

    for m in soup.messages:
        visit_atom(m.channel)
        for a in m.args:
            visit_atom(a)
    for r in soup.rules:
        binders: set[Name] = set()
        for h in r.heads:
            visit_atom(h.channel)
            binders.update(h.binders)
        for n in _body_names(r.body, binders):
            if n.index is not None:
                seen.setdefault(n, None)
    return sorted(seen, key=lambda n: (n.base, n.index))


def _body_names(p: Process, bound: set[Name]):
    match p:
        case Message(ch, args):
            if ch not in bound:
                yield ch
            for a in args:
                yield from _expr_names(a, bound)
        case LocalDef(d, body):
            inner = set(bound)
            for r in rules_of(d):
                for h in pattern_atoms(r.pattern):
                    inner.add(h.channel)
            for r in rules_of(d):
                rb = set(inner)
                for h in pattern_atoms(r.pattern):
                    rb.update(h.binders)
                yield from _body_names(r.body, rb)
            yield from _body_names(body, inner)
        case Parallel(l, r):
            yield from _body_names(l, bound)
            yield from _body_names(r, bound)
        case Conditional(a, b, t, o):
            yield from _expr_names(a, bound)
            yield from _expr_names(b, bound)
            yield from _body_names(t, bound)
            yield from _body_names(o, bound)
        case _:
            return


def _expr_names(e: Expression, bound: set[Name]):
    match e:
        case NameRef(n):
            if n not in bound:
                yield n
        case Concat(l, r):
            yield from _expr_names(l, bound)
            yield from _expr_names(r, bound)
        case Proj(inner, _):
            yield from _expr_names(inner, bound)
        case _:
            return


# ---------------------------------------------------------------------------
# serialization with occurrence slots
#
# each item is flattened once into a token skeleton: literal strings plus
# Name slots for globally indexed names.  Refinement passes then only join
# tokens under the current coloring instead of re-walking the syntax.
# Composite structure (parallel parts, nested rules) is ordered by the
# base-name projection of the part skeletons, which does not depend on the
# coloring; ties keep their syntactic order.

Skeleton = List[object]  # str literals and Name slots


def _base_proj(toks: Skeleton) -> str:
    return "".join(t if isinstance(t, str) else f"~{t.base}" for t in toks)


def _render(toks: Skeleton, colors: Dict[Name, str]) -> str:
    return "".join(t if isinstance(t, str) else colors.get(t, f"?{t.base}") for t in toks)


def _slots(toks: Skeleton) -> List[Tuple[Name, int]]:
    out = []
    for i, t in enumerate(toks):
        if isinstance(t, Name):
            out.append((t, i))
    return out


class _Skel:
    def __init__(self):
        self.toks: Skeleton = []

    def lit(self, s: str) -> None:
        self.toks.append(s)

    def name(self, n: Name, local: Dict[Name, str]) -> None:
        if n in local:
            self.toks.append(local[n])
        elif n.index is None:
            self.toks.append(n.base)
        else:
            self.toks.append(n)

    def atom(self, a: Atom, local: Dict[Name, str]) -> None:
        if isinstance(a, Name):
            self.name(a, local)
        elif isinstance(a, Pair):
            self.lit("(")
            self.atom(a.first, local)
            self.lit(".")
            self.atom(a.second, local)
            self.lit(")")
        elif isinstance(a, str):
            self.lit(f'"{a}"')
        else:
            self.lit(str(a))

    def expr(self, e: Expression, local: Dict[Name, str]) -> None:
        match e:
            case NameRef(n):
                self.name(n, local)
            case Lit(v):
                self.lit(f'"{v}"' if isinstance(v, str) else str(v))
            case Concat(l, r):
                self.lit("(")
                self.expr(l, local)
                self.lit(".")
                self.expr(r, local)
                self.lit(")")
            case Proj(inner, i):
                self.lit(f"pi{i}(")
                self.expr(inner, local)
                self.lit(")")
            case _:
                self.lit("enriched{" + pretty(e) + "}")

    def process(self, p: Process, local: Dict[Name, str]) -> None:
        match p:
            case Null():
                self.lit("0")
            case Parallel():
                parts = []
                for q in parallel_parts(p):
                    sub = _Skel()
                    sub.process(q, local)
                    parts.append(sub.toks)
                parts.sort(key=_base_proj)
                self.lit("(")
                for i, part in enumerate(parts):
                    if i:
                        self.lit("|")
                    self.toks.extend(part)
                self.lit(")")
            case Message(ch, args):
                self.name(ch, local)
                self.lit("<")
                for i, a in enumerate(args):
                    if i:
                        self.lit(",")
                    self.expr(a, local)
                self.lit(">")
            case LocalDef(d, body):
                inner = dict(local)
                for r in rules_of(d):
                    for h in pattern_atoms(r.pattern):
                        if h.channel not in inner:
                            inner[h.channel] = f"!{len(inner)}"
                rule_skels = []
                for r in rules_of(d):
                    rb = dict(inner)
                    for h in pattern_atoms(r.pattern):
                        for b in h.binders:
                            rb[b] = f"!{len(rb)}"
                    sub = _Skel()
                    for j, h in enumerate(pattern_atoms(r.pattern)):
                        if j:
                            sub.lit(",")
                        sub.name(h.channel, inner)
                        sub.lit("(" + ",".join(rb[b] for b in h.binders) + ")")
                    sub.lit("=>")
                    sub.process(r.body, rb)
                    rule_skels.append(sub.toks)
                rule_skels.sort(key=_base_proj)
                self.lit("def[")
                for i, rs in enumerate(rule_skels):
                    if i:
                        self.lit(";")
                    self.toks.extend(rs)
                self.lit("]in")
                self.process(body, inner)
            case Conditional(a, b, t, o):
                self.lit("if(")
                self.expr(a, local)
                self.lit("=")
                self.expr(b, local)
                self.lit("){")
                self.process(t, local)
                self.lit("}{")
                self.process(o, local)
                self.lit("}")
            case _:
                self.lit("enriched{" + pretty(p) + "}")

    def rule(self, r: ActiveRule) -> None:
        local: Dict[Name, str] = {}
        for h in r.heads:
            for b in h.binders:
                local[b] = f"!{len(local)}"
        for j, h in enumerate(r.heads):
            if j:
                self.lit(",")
            self.name(h.channel, {})
            self.lit("(" + ",".join(local[b] for b in h.binders) + ")")
        self.lit("=>")
        self.process(r.body, local)


def _skeletonize(item) -> Skeleton:
    kind, payload, count = item
    sk = _Skel()
    if kind == "msg":
        m: GroundMessage = payload
        sk.lit(f"{count}*")
        sk.name(m.channel, {})
        sk.lit("<")
        for i, a in enumerate(m.args):
            if i:
                sk.lit(",")
            sk.atom(a, {})
        sk.lit(">")
    else:
        sk.rule(payload)
    return sk.toks


def _serialize_soup(skeletons: List[Tuple[str, Skeleton]], colors: Dict[Name, str]) -> str:
    rules = sorted(_render(toks, colors) for kind, toks in skeletons if kind == "rule")
    msgs = sorted(_render(toks, colors) for kind, toks in skeletons if kind == "msg")
    return ";".join(rules) + "//" + ";".join(msgs)


# ---------------------------------------------------------------------------
# refinement


def _refine_fixpoint(skeletons, fresh: List[Name], colors: Dict[Name, str]) -> Dict[Name, str]:
    if not fresh:
        return colors
    slot_lists = [(toks, _slots(toks)) for _, toks in skeletons]
    for _ in range(len(fresh) + 1):
        sigs: Dict[Name, List[str]] = {n: [] for n in fresh}
        for toks, slots in slot_lists:
            if not slots:
                continue
            s = _render(toks, colors)
            for n, slot in slots:
                if n in sigs:
                    sigs[n].append(f"{s}#{slot}")
        new: Dict[Name, str] = {}
        for n in fresh:
            digest = hashlib.sha256((colors[n] + "||" + "|".join(sorted(sigs[n]))).encode()).hexdigest()[:16]
            new[n] = f"{n.base}#{digest}"
        if _partition_of(fresh, new) == _partition_of(fresh, colors):
            return new
        colors = new
    return colors


def _partition_of(fresh: List[Name], colors: Dict[Name, str]) -> List[Tuple[Name, ...]]:
    groups: Dict[str, List[Name]] = {}
    for n in fresh:
        groups.setdefault(colors[n], []).append(n)
    return sorted(tuple(sorted(g, key=lambda n: (n.base, n.index))) for g in groups.values())


def _discrete_orders(skeletons, fresh: List[Name], colors: Dict[Name, str]) -> List[List[Name]]:
    """Orders consistent with the refined partition, made discrete by
    individualization; branches stay within a fixed budget."""
    out: List[List[Name]] = []
    budget = [_BRANCH_BUDGET]

    def rec(cols: Dict[Name, str]) -> None:
        groups: Dict[str, List[Name]] = {}
        for n in fresh:
            groups.setdefault(cols[n], []).append(n)
        ordered = [sorted(groups[c], key=lambda n: (n.base, n.index)) for c in sorted(groups)]
        first_ambiguous = next((g for g in ordered if len(g) > 1), None)
        if first_ambiguous is None:
            out.append([g[0] for g in ordered])
            return
        candidates = first_ambiguous if budget[0] >= len(first_ambiguous) else first_ambiguous[:1]
        budget[0] = max(budget[0] // max(len(candidates), 1), 1)
        for pick in candidates:
            cols2 = dict(cols)
            cols2[pick] = cols2[pick] + "!"
            cols2 = _refine_fixpoint(skeletons, fresh, cols2)
            rec(cols2)

    rec(colors)
    return out

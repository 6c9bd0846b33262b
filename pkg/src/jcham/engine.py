"""Execution engine: a reflexive chemical abstract machine.

A :class:`Soup` holds the activated reaction rules and the multiset of
pending ground messages.  Structural rules are applied eagerly ("heating"):
parallel compositions split, null processes vanish, conjunctions split,
empty definitions vanish, and local definitions activate with their defined
channels renamed to fresh indexed names.  The only irreversible step is the
reduction of a join pattern: the matched messages are consumed and the rule
body is instantiated with the transmitted values, then heated.

Conditionals are resolved during heating, once their operands are ground
atoms.  Rules persist after firing, so a definition behaves like a
replicated server.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .desugar import desugar
from .syntax import (
    Atom,
    Concat,
    Conditional,
    Expression,
    Hole,
    Lit,
    LocalDef,
    Message,
    MsgPat,
    Name,
    NameRef,
    Null,
    Pair,
    Parallel,
    Process,
    Proj,
    Rule,
    atom_str,
    pattern_atoms,
    rules_of,
    substitute,
)


class ModelError(Exception):
    """A model reached a state the calculus gives no meaning to."""


class StaleRedex(Exception):
    """The redex refers to messages no longer present in the soup."""


@dataclass(frozen=True)
class GroundMessage:
    channel: Name
    args: tuple[Atom, ...] = ()

    def __str__(self) -> str:
        if not self.args:
            return f"{self.channel}<>"
        return f"{self.channel}<{', '.join(atom_str(a) for a in self.args)}>"


@dataclass(frozen=True)
class ActiveRule:
    """A reaction rule after activation: flattened pattern plus body."""

    heads: tuple[MsgPat, ...]
    body: Process

    @property
    def label(self) -> str:
        return "&".join(str(h.channel) for h in self.heads)

    def defines(self, base: str) -> bool:
        return any(h.channel.base == base for h in self.heads)


@dataclass
class Soup:
    """One machine configuration: active rules, pending messages, name supply."""

    rules: tuple[ActiveRule, ...] = ()
    messages: "Counter[GroundMessage]" = field(default_factory=Counter)
    pending: list[Process] = field(default_factory=list)
    fresh_counter: int = 0

    def copy(self) -> "Soup":
        return Soup(self.rules, Counter(self.messages), [], self.fresh_counter)

    def message_list(self) -> list[GroundMessage]:
        out: list[GroundMessage] = []
        for m, k in sorted(self.messages.items(), key=lambda kv: str(kv[0])):
            out.extend([m] * k)
        return out

    def message_count(self) -> int:
        return sum(self.messages.values())

    def channels(self, base: str) -> list[Name]:
        """Activated channels with the given base name, oldest first."""
        seen: dict[Name, None] = {}
        for r in self.rules:
            for h in r.heads:
                if h.channel.base == base:
                    seen[h.channel] = None
        return sorted(seen, key=lambda n: n.index if n.index is not None else -1)

    def channel(self, base: str) -> Name:
        found = self.channels(base)
        if len(found) != 1:
            raise ModelError(f"expected one activated channel named {base}, found {len(found)}")
        return found[0]

    def dump(self) -> str:
        """Configuration in (roughly) the concrete grammar: one activated
        rule per line, then the pending messages."""
        from .syntax import pretty

        lines = []
        for r in self.rules:
            heads = " | ".join(
                f"{h.channel}<{', '.join(str(b) for b in h.binders)}>" for h in r.heads
            )
            lines.append(f"def {heads} |> {pretty(r.body)}")
        lines += [str(m) for m in self.message_list()]
        return "\n".join(lines)


@dataclass(frozen=True)
class Redex:
    """A rule together with one satisfying combination of messages."""

    rule_index: int
    label: str
    matched: tuple[GroundMessage, ...]
    binding: tuple[tuple[Name, Atom], ...]

    def binding_map(self) -> dict[Name, Atom]:
        return dict(self.binding)

    def __str__(self) -> str:
        return f"{self.label}[{', '.join(str(m) for m in self.matched)}]"


# ---------------------------------------------------------------------------
# atom evaluation


def eval_atom(e: Expression) -> Atom:
    match e:
        case NameRef(n):
            return n
        case Lit(v):
            return v
        case Concat(l, r):
            return Pair(eval_atom(l), eval_atom(r))
        case Proj(inner, i):
            v = eval_atom(inner)
            if not isinstance(v, Pair):
                raise ModelError(f"projection from non-pair atom {atom_str(v)}")
            return v.first if i == 1 else v.second
    raise ModelError(f"expression is not ground: {e!r}")


def atoms_equal(a: Atom, b: Atom) -> bool:
    return a == b


# ---------------------------------------------------------------------------
# heating


def heat(soup: Soup, p: Process) -> list[GroundMessage]:
    """Apply the structural rules until only rules and messages remain.

    Returns the messages added, in emission order.
    """
    emitted: list[GroundMessage] = []
    stack = [p]
    while stack:
        t = stack.pop()
        match t:
            case Null():
                continue
            case Parallel(l, r):
                stack.append(r)
                stack.append(l)
            case Message(ch, args):
                m = GroundMessage(ch, tuple(eval_atom(a) for a in args))
                soup.messages[m] += 1
                emitted.append(m)
            case LocalDef(d, body):
                ren: dict[Name, Atom] = {}
                for rule in rules_of(d):
                    for head in pattern_atoms(rule.pattern):
                        if head.channel not in ren:
                            soup.fresh_counter += 1
                            ren[head.channel] = Name(head.channel.base, soup.fresh_counter)
                new_rules = []
                for rule in rules_of(d):
                    renamed = substitute(rule, ren)
                    assert isinstance(renamed, Rule)
                    heads = tuple(pattern_atoms(renamed.pattern))
                    if any(not isinstance(h, MsgPat) for h in heads):
                        raise ModelError("call pattern survived desugaring")
                    new_rules.append(ActiveRule(heads, renamed.body))
                soup.rules = soup.rules + tuple(new_rules)
                stack.append(substitute(body, ren))  # type: ignore[arg-type]
            case Conditional(a, b, then, orelse):
                stack.append(then if atoms_equal(eval_atom(a), eval_atom(b)) else orelse)
            case Hole():
                raise ModelError("cannot run a context template; plug it first")
            case _:
                raise ModelError(f"enriched form reached the machine: {t!r}")
    return emitted


def inject(p: Process) -> Soup:
    """Desugar ``p`` and heat it into an initial soup."""
    soup = Soup()
    heat(soup, desugar(p))
    return soup


def inject_message(soup: Soup, channel: Name, args: Iterable[Atom] = ()) -> Soup:
    """Return a copy of ``soup`` with one extra ground message."""
    out = soup.copy()
    out.messages[GroundMessage(channel, tuple(args))] += 1
    return out


def graft(soup: Soup, p: Process) -> Soup:
    """Heat a process into a copy of ``soup``, binding its free names to the
    soup's activated channels of the same base first - the process behaves
    as if it had been part of the original program's hole."""
    from .syntax import free_names, substitute

    mapping: dict[Name, Name] = {}
    for n in free_names(p):
        if n.index is None:
            built = soup.channels(n.base)
            if len(built) == 1:
                mapping[n] = built[0]
    bound = substitute(p, mapping) if mapping else p  # type: ignore[arg-type]
    out = soup.copy()
    heat(out, desugar(bound))  # type: ignore[arg-type]
    return out


# ---------------------------------------------------------------------------
# matching and reduction


def enabled_redexes(soup: Soup) -> list[Redex]:
    """Every (rule, message combination) that can react, one redex per
    distinct multiset of matched messages, in a stable order."""
    out: list[Redex] = []
    for idx, rule in enumerate(soup.rules):
        candidates: list[list[GroundMessage]] = []
        for head in rule.heads:
            opts = [
                m
                for m in soup.messages
                if m.channel == head.channel and len(m.args) == len(head.binders)
            ]
            if not opts:
                break
            opts.sort(key=str)
            candidates.append(opts)
        else:
            for combo in _product(candidates):
                binding: list[tuple[Name, Atom]] = []
                for head, msg in zip(rule.heads, combo):
                    binding.extend(zip(head.binders, msg.args))
                out.append(Redex(idx, rule.label, tuple(combo), tuple(binding)))
    out.sort(key=lambda r: (r.rule_index, str(r)))
    return out


def _product(groups: list[list[GroundMessage]]) -> Iterable[tuple[GroundMessage, ...]]:
    if not groups:
        yield ()
        return
    for head in groups[0]:
        for rest in _product(groups[1:]):
            yield (head,) + rest


def is_inert(soup: Soup) -> bool:
    return not enabled_redexes(soup)


def reduce(soup: Soup, redex: Redex) -> Soup:
    s, _ = reduce_with_info(soup, redex)
    return s


def reduce_with_info(soup: Soup, redex: Redex) -> tuple[Soup, list[GroundMessage]]:
    """Consume the matched messages and heat the instantiated rule body."""
    need = Counter(redex.matched)
    for m, k in need.items():
        if soup.messages[m] < k:
            raise StaleRedex(f"{m} not available")
    out = soup.copy()
    for m, k in need.items():
        out.messages[m] -= k
        if out.messages[m] == 0:
            del out.messages[m]
    rule = out.rules[redex.rule_index]
    body = substitute(rule.body, redex.binding_map())
    emitted = heat(out, body)  # type: ignore[arg-type]
    return out, emitted


# ---------------------------------------------------------------------------
# runs and traces


@dataclass
class TraceStep:
    label: str
    redex: Redex
    emitted: list[GroundMessage]
    digest: str


@dataclass
class Trace:
    initial: Soup
    seed: int
    steps: list[TraceStep] = field(default_factory=list)
    final: Optional[Soup] = None

    def format(self) -> str:
        lines = []
        for n, s in enumerate(self.steps):
            consume = ",".join(str(m) for m in s.redex.matched)
            emit = ",".join(str(m) for m in s.emitted)
            lines.append(f"STEP {n} RULE {s.label} CONSUME {consume} EMIT {emit} DIGEST {s.digest}")
        return "\n".join(lines)


def replay(trace: Trace) -> Soup:
    """Re-fire a trace's redexes from its initial soup, checking that every
    recorded digest is reproduced; returns the final soup."""
    from .canon import canonicalize

    current = trace.initial.copy()
    for step in trace.steps:
        current, _ = reduce_with_info(current, step.redex)
        got = canonicalize(current).digest[: len(step.digest)]
        if got != step.digest:
            raise StaleRedex(f"replay diverged: {got} != {step.digest}")
    return current


def run(soup: Soup, seed: int, max_steps: int) -> Trace:
    """Reduce with a seeded pseudo-random scheduler until inert or out of
    budget.  Identical arguments give identical traces."""
    from .canon import canonicalize

    rng = random.Random(seed)
    current = soup.copy()
    trace = Trace(initial=soup.copy(), seed=seed)
    for _ in range(max_steps):
        redexes = enabled_redexes(current)
        if not redexes:
            break
        choice = rng.choice(redexes)
        current, emitted = reduce_with_info(current, choice)
        trace.steps.append(TraceStep(choice.label, choice, emitted, canonicalize(current).digest[:16]))
    trace.final = current
    return trace


# ---------------------------------------------------------------------------
# observation predicates


def name_matches(query: Name, actual: Name) -> bool:
    """Source-name queries match any activation of that base; indexed
    queries match exactly."""
    if query.index is None:
        return actual.base == query.base
    return query == actual


def atom_matches(query: Atom, actual: Atom) -> bool:
    if isinstance(query, Name) and isinstance(actual, Name):
        return name_matches(query, actual)
    if isinstance(query, Pair) and isinstance(actual, Pair):
        return atom_matches(query.first, actual.first) and atom_matches(query.second, actual.second)
    return query == actual


def atom_contains(query: Atom, actual: Atom) -> bool:
    """The queried atom occurs in ``actual``, looking inside pairs."""
    if atom_matches(query, actual):
        return True
    if isinstance(actual, Pair):
        return atom_contains(query, actual.first) or atom_contains(query, actual.second)
    return False


def message_observable(msg: GroundMessage, channel: Name, value: Optional[Atom]) -> bool:
    if not name_matches(channel, msg.channel):
        return False
    if value is None:
        return True
    return any(atom_contains(value, a) for a in msg.args)


def barb(soup: Soup, channel: Name, value: Optional[Atom] = None, depth: int = 8, max_states: int = 4000) -> bool:
    """Can some soup reachable within ``depth`` reductions show a message on
    ``channel`` (carrying ``value``, when given)?"""
    from .canon import canonicalize

    def shows(s: Soup) -> bool:
        return any(message_observable(m, channel, value) for m in s.messages)

    if shows(soup):
        return True
    seen = {canonicalize(soup).digest}
    frontier = [soup]
    for _ in range(depth):
        nxt: list[Soup] = []
        for s in frontier:
            for r in enabled_redexes(s):
                s2 = reduce(s, r)
                d = canonicalize(s2).digest
                if d in seen:
                    continue
                seen.add(d)
                if shows(s2):
                    return True
                nxt.append(s2)
                if len(seen) > max_states:
                    return False
        if not nxt:
            return False
        frontier = nxt
    return False


def valued_reaction(soup: Soup, channel: Name, value: Atom) -> Optional[Soup]:
    """If a message on ``channel`` carrying ``value`` is present and captured
    by an active rule, resolve that reaction and return the new soup."""
    for r in enabled_redexes(soup):
        if any(message_observable(m, channel, value) for m in r.matched):
            return reduce(soup, r)
    return None

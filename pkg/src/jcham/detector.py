"""Self-replication detection.

A program replicates when running it inside an environment lands its own
abstraction channel on a qualifying target: a resource access channel
(including those of resources created at run time), an export channel
crossing to a remote system, or a channel nothing in the plugged system
defines.  On defined channels the event is the consuming reaction actually
firing and keeping the payload; on undefined ones it is the emission
itself.  Service channels and the environment's internal plumbing never
qualify.

Two routes are provided: ``explore`` walks the reachable configurations
exhaustively with congruence-based deduplication (a semi-decision: it may
exhaust its budget on diverging systems), and ``detect_via_coverability``
decides the question exactly for programs in the no-name-generation
fragment by reduction to Petri-net coverability.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence as Seq, Tuple

from .canon import canonicalize
from .contexts import Context
from .desugar import FragmentReport, check_core_fragment, desugar
from .engine import (
    GroundMessage,
    Redex,
    Soup,
    Trace,
    TraceStep,
    enabled_redexes,
    inject,
    inject_message,
    reduce_with_info,
)
from .malware import abstraction_channel
from .petri import Marking, PetriNet, Transition, coverable
from .syntax import (
    Atom,
    Conditional,
    LocalDef,
    Message,
    Name,
    Null,
    Pair,
    Parallel,
    Process,
    pattern_atoms,
    rules_of,
    substitute,
)


class FragmentViolation(Exception):
    def __init__(self, report: FragmentReport):
        self.report = report
        kinds = ", ".join(sorted({k for _, k in report.violations}))
        super().__init__(f"program outside the decidable fragment: {kinds}")


class ExplosionGuard(Exception):
    pass


class InvalidActivation(Exception):
    pass


@dataclass
class DetectionStats:
    states_explored: int = 0
    dedup_hits: int = 0
    frontier_peak: int = 0


@dataclass
class DetectionVerdict:
    outcome: str  # "vulnerable" | "not_vulnerable" | "budget_exhausted"
    witness: Optional[Trace] = None
    stats: DetectionStats = field(default_factory=DetectionStats)
    notes: List[str] = field(default_factory=list)

    @property
    def vulnerable(self) -> bool:
        return self.outcome == "vulnerable"


_CLAUSE_NOTE = (
    "free-channel clause evaluated against every channel defined by the plugged "
    "system; write channels of run-time-created resources qualify as targets"
)


def _defined_bases(p: Process) -> set[str]:
    out: set[str] = set()

    def go(t) -> None:
        match t:
            case LocalDef(d, body):
                for r in rules_of(d):
                    for h in pattern_atoms(r.pattern):
                        out.add(h.channel.base)
                    go(r.body)
                go(body)
            case Parallel(l, r):
                go(l)
                go(r)
            case Conditional(_, _, a, b):
                go(a)
                go(b)
            case Message() | Null():
                pass
            case _:
                pass

    go(p)
    return out


class _Qualifier:
    """Decides which reactions count as replication of the tested program.

    On a channel some active rule defines (resources, exports), replication
    lands when the consuming reaction fires - a request that never matches,
    for instance because a guard changed the channel's shape, is not a
    replication.  On channels nothing defines, the emission itself is the
    event, since no reaction will ever resolve it.

    A payload carries the program when it is the program's own abstraction
    channel, or an activated abstraction whose rule body references one
    (infected wrappers produced by append/prepend-style mechanisms).
    Desugar-generated reply channels are never counted as carriers.
    """

    def __init__(self, ctx: Context, plugged_core: Process, self_base: Optional[str]):
        self.self_base = self_base
        self.r_bases = set(ctx.resource_bases()) | set(ctx.dynamic_resource_bases)
        self.export_bases = set(ctx.exports)
        self.s_bases = set(ctx.service_bases())
        self.known = _defined_bases(plugged_core) | self.s_bases | self.r_bases
        self._carrier_cache: Dict[int, set[Name]] = {}

    def channel_qualifies(self, ch: Name) -> bool:
        if ch.base in self.r_bases or ch.base in self.export_bases:
            return True
        return ch.base not in self.known

    def _carriers(self, soup: Soup) -> set[Name]:
        key = id(soup.rules)
        hit = self._carrier_cache.get(key)
        if hit is not None:
            return hit
        assert self.self_base is not None
        viral_names: set[Name] = set()
        carriers: set[Name] = set()
        changed = True
        while changed:
            changed = False
            for r in soup.rules:
                if len(r.heads) != 1:
                    continue
                ch = r.heads[0].channel
                if ch.base == "k" or ch in carriers:
                    continue
                for n in _rule_body_names(r):
                    if n.base == self.self_base or n in viral_names:
                        carriers.add(ch)
                        viral_names.add(ch)
                        changed = True
                        break
        self._carrier_cache[key] = carriers
        return carriers

    def _payload_viral(self, atom: Atom, soup: Soup) -> bool:
        if isinstance(atom, Name):
            if atom.base == self.self_base:
                return True
            return atom in self._carriers(soup)
        if isinstance(atom, Pair):
            return self._payload_viral(atom.first, soup) or self._payload_viral(atom.second, soup)
        return False

    def viral_message(self, m: GroundMessage, soup: Soup) -> bool:
        if self.self_base is None:
            return False
        return any(self._payload_viral(a, soup) for a in m.args)

    @staticmethod
    def _consumable(soup: Soup, m: GroundMessage) -> bool:
        return any(h.channel == m.channel for r in soup.rules for h in r.heads)

    def emission_hit(self, m: GroundMessage, soup: Soup) -> bool:
        """A viral payload lands on a channel no reaction will ever resolve."""
        if not self.viral_message(m, soup):
            return False
        base = m.channel.base
        if base in self.r_bases or base in self.export_bases:
            return not self._consumable(soup, m)
        return base not in self.known

    def on_target_channel(self, m: GroundMessage) -> bool:
        return m.channel.base in self.r_bases or m.channel.base in self.export_bases

    def consumption_hit(self, m: GroundMessage, soup: Soup) -> bool:
        """A viral payload on a target channel was consumed by a reaction."""
        return self.on_target_channel(m) and self.viral_message(m, soup)

    def step_hit(self, matched, emitted, soup_after: Soup):
        """The replication event of one reduction step, if any.

        Consuming a viral request on a target channel only counts when the
        reaction keeps the payload alive (stores or forwards it); a guard
        that swallows the request and restores its state has blocked the
        replication, not performed it.
        """
        landed = any(self.viral_message(m, soup_after) for m in emitted)
        if landed:
            for m in matched:
                if self.consumption_hit(m, soup_after):
                    return m
        for m in emitted:
            if self.emission_hit(m, soup_after):
                return m
        return None


def _rule_body_names(rule) -> List[Name]:
    from .canon import _body_names

    bound = set()
    for h in rule.heads:
        bound.update(h.binders)
    return list(_body_names(rule.body, bound))


def _prepare(ctx: Context, p: Process, self_channel: Optional[Name]):
    plugged = ctx.plug(p)
    core = desugar(plugged)
    base = self_channel.base if self_channel is not None else None
    if base is None:
        ch = abstraction_channel(p)
        base = ch.base if ch is not None else None
    qual = _Qualifier(ctx, core, base)
    soup = Soup()
    from .engine import heat

    emitted = heat(soup, core)
    return soup, emitted, qual


@dataclass
class _Node:
    soup: Soup
    depth: int
    parent: Optional[str]
    step: Optional[TraceStep]


def _witness(nodes: Dict[str, _Node], digest: str, initial: Soup, extra: Optional[TraceStep] = None) -> Trace:
    steps: List[TraceStep] = []
    cur: Optional[str] = digest
    while cur is not None:
        node = nodes[cur]
        if node.step is not None:
            steps.append(node.step)
        cur = node.parent
    steps.reverse()
    if extra is not None:
        steps.append(extra)
    return Trace(initial=initial, seed=0, steps=steps)


def explore(
    ctx: Context,
    p: Process,
    max_states: int = 10_000,
    max_steps_per_branch: int = 400,
    self_channel: Optional[Name] = None,
    workers: int = 1,
) -> DetectionVerdict:
    """Exhaustive breadth-first search for a qualifying emission.

    States are deduplicated by canonical digest; revisiting a congruent
    configuration cuts the branch, which silences loops that keep reacting
    without producing new behaviour.  ``budget_exhausted`` is returned
    instead of ``not_vulnerable`` whenever a budget trips with work left.
    """
    soup0, emitted0, qual = _prepare(ctx, p, self_channel)
    stats = DetectionStats()
    notes = [_CLAUSE_NOTE]
    d0 = canonicalize(soup0).digest
    nodes: Dict[str, _Node] = {d0: _Node(soup0, 0, None, None)}
    stats.states_explored = 1
    hit0 = next((m for m in emitted0 if qual.emission_hit(m, soup0)), None)
    if hit0 is not None:
        return DetectionVerdict(
            "vulnerable",
            Trace(initial=soup0.copy(), seed=0, steps=[]),
            stats,
            notes + [f"initial configuration already emits {hit0}"],
        )

    frontier: deque[str] = deque([d0])
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while frontier:
            stats.frontier_peak = max(stats.frontier_peak, len(frontier))
            level = list(frontier)
            frontier.clear()

            def expand(digest: str):
                node = nodes[digest]
                out = []
                for r in enabled_redexes(node.soup):
                    s2, emitted = reduce_with_info(node.soup, r)
                    out.append((digest, r, s2, emitted))
                return out

            if pool is not None:
                batches = list(pool.map(expand, level))
            else:
                batches = [expand(d) for d in level]

            for batch in batches:
                for parent_digest, r, s2, emitted in batch:
                    parent = nodes[parent_digest]
                    d2 = canonicalize(s2).digest
                    step = TraceStep(r.label, r, emitted, d2[:16])
                    hit = qual.step_hit(r.matched, emitted, s2)
                    if hit is not None:
                        return DetectionVerdict(
                            "vulnerable",
                            _witness(nodes, parent_digest, soup0, extra=step),
                            stats,
                            notes + [f"replication event {hit}"],
                        )
                    if d2 in nodes:
                        stats.dedup_hits += 1
                        continue
                    if stats.states_explored >= max_states or parent.depth + 1 > max_steps_per_branch:
                        return DetectionVerdict("budget_exhausted", None, stats, notes)
                    nodes[d2] = _Node(s2, parent.depth + 1, parent_digest, step)
                    stats.states_explored += 1
                    frontier.append(d2)
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
    return DetectionVerdict("not_vulnerable", None, stats, notes)


# ---------------------------------------------------------------------------
# iterated (viable) replication


def viral_set_member(
    ctx: Context,
    p: Process,
    iterations: int = 2,
    max_states: int = 10_000,
    max_steps_per_branch: int = 400,
    activations: Optional[Seq[Name]] = None,
    self_channel: Optional[Name] = None,
) -> DetectionVerdict:
    """Check iterated replication: the program must replicate once when
    executed, and each activation of an infected resource must replicate
    again, ``iterations`` times in total.

    Activation messages are sent on resource exec channels with fresh inert
    arguments, so they cannot simulate viral activity themselves.
    """
    if iterations < 2:
        raise ValueError("viable replication is defined for at least 2 iterations")
    soup0, _, qual = _prepare(ctx, p, self_channel)
    if qual.self_base is None:
        return DetectionVerdict("not_vulnerable", None, DetectionStats(states_explored=1), [_CLAUSE_NOTE])

    exec_bases = set(ctx.exec_bases)
    if activations is not None:
        if len(activations) < iterations - 1:
            raise InvalidActivation(f"need {iterations - 1} activation channels, got {len(activations)}")
        for a in activations:
            if a.base not in exec_bases:
                raise InvalidActivation(f"{a} is not a resource exec channel")

    stats = DetectionStats()
    notes = [_CLAUSE_NOTE, "activations use fresh inert arguments"]
    witness: Optional[Trace] = None
    states = [soup0]
    for it in range(iterations):
        if it == 0:
            starts = states
        else:
            starts = []
            for s in states:
                if activations is not None:
                    chans = s.channels(activations[it - 1].base)
                else:
                    chans = []
                    for b in sorted(exec_bases):
                        chans.extend(s.channels(b))
                for ch in chans:
                    starts.append(
                        inject_message(s, ch, (Name(f"act{it}"), Name(f"act_done{it}")))
                    )
            if not starts:
                return DetectionVerdict("not_vulnerable", None, stats, notes)
        found, witness, budget_hit = _find_replication(starts, qual, stats, max_states, max_steps_per_branch)
        if not found:
            outcome = "budget_exhausted" if budget_hit else "not_vulnerable"
            return DetectionVerdict(outcome, None, stats, notes + [f"iteration {it + 1} failed"])
        states = found
        notes.append(f"iteration {it + 1} replicated")
    return DetectionVerdict("vulnerable", witness, stats, notes)


def _find_replication(
    starts: List[Soup],
    qual: _Qualifier,
    stats: DetectionStats,
    max_states: int,
    max_steps_per_branch: int,
) -> Tuple[Optional[List[Soup]], Optional[Trace], bool]:
    """Search from the given soups for the two chained reactions: the
    program's abstraction fires, then a replication event follows.
    Returns the completed states (first hit plus alternatives), a replayable
    witness for the first hit, and whether a budget tripped.
    """
    self_base = qual.self_base
    assert self_base is not None
    seen: set[tuple[str, int]] = set()
    queue: deque[tuple[Soup, int, int, tuple[TraceStep, ...]]] = deque()
    budget_hit = False
    for i, s in enumerate(starts):
        d = canonicalize(s).digest
        if (d, 0) not in seen:
            seen.add((d, 0))
            queue.append((s, i, 0, ()))
    results: List[Soup] = []
    witness: Optional[Trace] = None
    while queue:
        soup, origin, phase, steps = queue.popleft()
        if len(steps) >= max_steps_per_branch:
            budget_hit = True
            continue
        for r in enabled_redexes(soup):
            s2, emitted = reduce_with_info(soup, r)
            new_phase = phase
            if phase == 0 and any(m.channel.base == self_base for m in r.matched):
                new_phase = 1
            if new_phase == 1:
                hit = qual.step_hit(r.matched, emitted, s2)
                if hit is not None:
                    step = TraceStep(r.label, r, emitted, canonicalize(s2).digest[:16])
                    if witness is None:
                        witness = Trace(initial=starts[origin].copy(), seed=0, steps=list(steps) + [step])
                    results.append(_settle(s2))
                    continue
            d2 = canonicalize(s2).digest
            if (d2, new_phase) in seen:
                stats.dedup_hits += 1
                continue
            seen.add((d2, new_phase))
            stats.states_explored += 1
            if stats.states_explored > max_states:
                return (results or None), witness, True
            step = TraceStep(r.label, r, emitted, d2[:16])
            queue.append((s2, origin, new_phase, steps + (step,)))
    return (results or None), witness, budget_hit


def _settle(soup: Soup, max_steps: int = 400) -> Soup:
    """Run deterministically to an inert configuration (or budget)."""
    cur = soup
    for _ in range(max_steps):
        rs = enabled_redexes(cur)
        if not rs:
            break
        cur, _ = reduce_with_info(cur, rs[0])
    return cur


# ---------------------------------------------------------------------------
# grounding and the decidable route


@dataclass(frozen=True)
class GroundRule:
    rule_index: int
    guard: Tuple[GroundMessage, ...]
    body: Tuple[GroundMessage, ...]
    binding: Tuple[Tuple[Name, Atom], ...]

    @property
    def label(self) -> str:
        return "&".join(str(g) for g in self.guard)


@dataclass
class GroundSystem:
    atoms: List[Atom]
    rules: List[GroundRule]
    initial: List[GroundMessage]
    soup: Soup


def ground(p: Process, max_instances: int = 1_000_000) -> GroundSystem:
    """Instantiate every rule over the finite atom universe.

    The universe is every atom that can sit in payload position: initial
    message arguments plus constant arguments written in rule bodies,
    closed under pair projection.  Received names only ever take such
    values, so instantiating over this set is complete.  Instances whose
    conditionals fail are dropped here; bindings that would put a
    non-channel atom in channel position are skipped as type-inconsistent.
    """
    report = check_core_fragment(p)
    if not report.in_fragment:
        raise FragmentViolation(report)
    soup = inject(p)
    universe: Dict[Atom, None] = {}

    def see_atom(a: Atom):
        if a in universe:
            return
        universe.setdefault(a, None)
        if isinstance(a, Pair):
            see_atom(a.first)
            see_atom(a.second)

    for m in soup.messages:
        for a in m.args:
            see_atom(a)
    for r in soup.rules:
        _collect_body_atoms(r.body, {b for h in r.heads for b in h.binders}, see_atom)

    atoms = sorted(universe, key=str)
    rules: List[GroundRule] = []
    total = 0
    for idx, rule in enumerate(soup.rules):
        binders: List[Name] = []
        for h in rule.heads:
            binders.extend(h.binders)
        for combo in _assignments(len(binders), atoms):
            total += 1
            if total > max_instances:
                raise ExplosionGuard(f"more than {max_instances} rule instances")
            binding = dict(zip(binders, combo))
            guard = tuple(
                GroundMessage(h.channel, tuple(binding[b] for b in h.binders)) for h in rule.heads
            )
            body = _instantiate_body(rule.body, binding)
            if body is None:
                continue
            rules.append(GroundRule(idx, guard, tuple(body), tuple(binding.items())))
    return GroundSystem(atoms, rules, list(soup.message_list()), soup)


def _assignments(k: int, atoms: List[Atom]):
    if k == 0:
        yield ()
        return
    for a in atoms:
        for rest in _assignments(k - 1, atoms):
            yield (a,) + rest


def _collect_body_atoms(p: Process, bound: set[Name], see) -> None:
    """Ground atoms in payload position of body emissions; channel names and
    conditional operands never become received values on their own."""
    from .engine import eval_atom
    from .syntax import free_names, is_atom_expr

    match p:
        case Message(_, args):
            for a in args:
                if is_atom_expr(a) and not (free_names(a) & bound):
                    see(eval_atom(a))
        case Parallel(l, r):
            _collect_body_atoms(l, bound, see)
            _collect_body_atoms(r, bound, see)
        case Conditional(_, _, t, o):
            _collect_body_atoms(t, bound, see)
            _collect_body_atoms(o, bound, see)
        case _:
            pass


def _instantiate_body(body: Process, binding: Dict[Name, Atom]) -> Optional[List[GroundMessage]]:
    """Resolve one rule body under a binding; None marks a type-inconsistent
    instance (non-channel atom in channel position)."""
    from .engine import ModelError, eval_atom
    from .syntax import SubstitutionError

    try:
        inst = substitute(body, binding)
    except SubstitutionError:
        return None
    out: List[GroundMessage] = []
    stack = [inst]
    while stack:
        t = stack.pop()
        match t:
            case Null():
                continue
            case Parallel(l, r):
                stack.append(l)
                stack.append(r)
            case Message(ch, args):
                if not isinstance(ch, Name):
                    return None
                try:
                    out.append(GroundMessage(ch, tuple(eval_atom(a) for a in args)))
                except ModelError:
                    return None
            case Conditional(a, b, then, orelse):
                try:
                    stack.append(then if eval_atom(a) == eval_atom(b) else orelse)
                except ModelError:
                    return None
            case _:
                return None
    return out


def to_petri(gs: GroundSystem) -> Tuple[PetriNet, Marking, List[GroundMessage]]:
    """One place per ground message, one transition per rule instance.
    Definitions persist, so transitions need no control places."""
    places: Dict[GroundMessage, int] = {}

    def place(m: GroundMessage) -> int:
        if m not in places:
            places[m] = len(places)
        return places[m]

    for m in gs.initial:
        place(m)
    transitions: List[Transition] = []
    for gr in gs.rules:
        pre: Dict[int, int] = {}
        for g in gr.guard:
            pre[place(g)] = pre.get(place(g), 0) + 1
        post: Dict[int, int] = {}
        for b in gr.body:
            post[place(b)] = post.get(place(b), 0) + 1
        transitions.append(Transition.of(pre, post, label=gr.label))
    labels = [""] * len(places)
    order: List[GroundMessage] = [GroundMessage(Name("?"))] * len(places)
    for m, i in places.items():
        labels[i] = str(m)
        order[i] = m
    init: Dict[int, int] = {}
    for m in gs.initial:
        init[places[m]] = init.get(places[m], 0) + 1
    return PetriNet(labels, transitions), Marking.of(init), order


def detect_via_coverability(ctx: Context, p: Process, self_channel: Optional[Name] = None) -> DetectionVerdict:
    """Exact decision on the no-name-generation fragment: build the ground
    system, convert to a net, and ask coverability for every place that
    would witness a qualifying emission.

    The fragment check runs on the plugged program as written: synchronous
    calls are rejected even when their compilation would happen to stay
    fragment-safe, since fragment services must use fixed reply channels.
    """
    plugged = ctx.plug(p)
    report = check_core_fragment(plugged)
    if not report.in_fragment:
        raise FragmentViolation(report)
    core = desugar(plugged)
    gs = ground(core)
    base = self_channel.base if self_channel is not None else None
    if base is None:
        ch = abstraction_channel(p)
        base = ch.base if ch is not None else None
    qual = _Qualifier(ctx, core, base)
    net, init, place_msgs = to_petri(gs)
    stats = DetectionStats(states_explored=len(gs.rules))
    notes = [_CLAUSE_NOTE, f"{len(place_msgs)} places, {len(net.transitions)} transitions"]

    # a qualifying emission may already sit in the initial marking
    for m in gs.initial:
        if qual.emission_hit(m, gs.soup):
            return DetectionVerdict("vulnerable", _replay(gs, []), stats, notes + [f"initial emission {m}"])

    # consumption targets: the preset of a reaction resolving a viral
    # payload on a target channel must be coverable for it to fire; the
    # instance must also keep the payload alive in its body
    targets: List[Tuple[Marking, str]] = []
    place_index = {m: i for i, m in enumerate(place_msgs)}
    for ti, gr in enumerate(gs.rules):
        if not any(qual.viral_message(b, gs.soup) for b in gr.body):
            continue
        for g in gr.guard:
            if qual.consumption_hit(g, gs.soup):
                pre: Dict[int, int] = {}
                for gm in gr.guard:
                    pre[place_index[gm]] = pre.get(place_index[gm], 0) + 1
                targets.append((Marking.of(pre), f"reaction on {g}"))
                break
    # emission targets: viral payloads on channels nothing resolves
    for i, m in enumerate(place_msgs):
        if qual.emission_hit(m, gs.soup):
            targets.append((Marking.of({i: 1}), f"emission {m}"))

    for target, label in targets:
        ok, seq = coverable(net, init, target)
        if ok:
            assert seq is not None
            return DetectionVerdict("vulnerable", _replay(gs, seq), stats, notes + [f"coverability witness: {label}"])
    return DetectionVerdict("not_vulnerable", None, stats, notes)


def _replay(gs: GroundSystem, transition_seq: List[int]) -> Trace:
    """Fire the witness transitions in the machine to get a replayable trace."""
    soup = gs.soup.copy()
    steps: List[TraceStep] = []
    for ti in transition_seq:
        gr = gs.rules[ti]
        redex = Redex(gr.rule_index, soup.rules[gr.rule_index].label, gr.guard, gr.binding)
        soup, emitted = reduce_with_info(soup, redex)
        steps.append(TraceStep(redex.label, redex, emitted, canonicalize(soup).digest[:16]))
    return Trace(initial=gs.soup.copy(), seed=0, steps=steps)

"""Explicit-state exploration of app pairs over the mini IR.

Each app contributes one entry method ("main"); the explorer runs all
interleavings of the apps' sequential executions against a shared
broadcast bus, merging duplicate configurations. Values are abstracted
to taint labels (Secret/Clean); broadcasts are ephemeral: a send
deposits the payload only with receivers whose channel registration is
already in place, and each deposit is consumed at most once.

Every execution grows a trace of API events. A collusion rule is
matched against the trace: secret read, secret sent in a broadcast,
secret received from a broadcast in a different app, secret published.
On a match the explorer stops and serialises the trace as a witness.

A per-method data-flow graph (registers, constants and API nodes, with
edges from parameters to stores) supports the cheaper reachability
question "can the secret influence what is sent/published" without
running the semantics.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Optional, Sequence

from .app_model import AppDescriptor, ThreatKind
from .errors import NodeNotFound, ParseError, StateLimitExceeded, StuckState, UndefinedRegister
from .ir import (
    API_GET_BROADCAST,
    API_PUBLISH,
    API_READ_SECRET,
    API_SEND_BROADCAST,
    Call,
    CallRet,
    Const,
    Goto,
    Instruction,
    Label,
    MethodIR,
    Move,
    Return,
    is_register,
    is_string_literal,
)

ENTRY_METHOD = "main"


# ---------------------------------------------------------------------------
# Taint labels


@dataclass(frozen=True)
class Secret:
    source: str


@dataclass(frozen=True)
class Clean:
    pass


TaintLabel = Secret | Clean
CLEAN = Clean()


def _label_key(label: TaintLabel) -> tuple:
    return (1, label.source) if isinstance(label, Secret) else (0, "")


# ---------------------------------------------------------------------------
# API events and the witness wire format


@dataclass(frozen=True)
class CallEvent:
    api: str
    args: tuple[str, ...] = ()

    def render(self) -> str:
        if self.args:
            return f"call({self.api}, {', '.join(self.args)})"
        return f"call({self.api})"


@dataclass(frozen=True)
class AssignEvent:
    reg: str
    api: str

    def render(self) -> str:
        return f"{self.reg} := callRet({self.api})"


ApiEvent = CallEvent | AssignEvent


@dataclass(frozen=True)
class TraceEntry:
    """One executed API operation: who ran it and the payload label it moved."""

    app_id: str
    event: ApiEvent
    label: TaintLabel = CLEAN


def emit_witness(events: Sequence[ApiEvent]) -> str:
    """Serialise events in the witness format.

    Line 1 is ``<trace>``, the first event is indented two spaces, every
    later event is indented and prefixed with ``-> ``, and the block
    closes with ``</trace>`` plus a final newline. Argument lists are
    rendered comma-space separated with string literals double-quoted.
    """
    if not events:
        raise ValueError("witness requires at least one event")
    lines = ["<trace>"]
    for i, event in enumerate(events):
        prefix = "  " if i == 0 else "  -> "
        lines.append(prefix + event.render())
    lines.append("</trace>")
    return "\n".join(lines) + "\n"


_CALL_RE = re.compile(r"^call\((?P<api>[A-Za-z_]\w*)(?:, (?P<args>.*))?\)$")
_ASSIGN_RE = re.compile(r"^(?P<reg>[rp]\d+) := callRet\((?P<api>[A-Za-z_]\w*)\)$")


def _split_args(text: str) -> tuple[str, ...]:
    # Arguments are registers, integers, or double-quoted strings without
    # embedded quotes; a plain split on ", " outside quotes is enough.
    args = []
    current = []
    in_string = False
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == '"':
            in_string = not in_string
        if not in_string and text.startswith(", ", i):
            args.append("".join(current))
            current = []
            i += 2
            continue
        current.append(ch)
        i += 1
    args.append("".join(current))
    return tuple(args)


def parse_witness(text: str) -> tuple[ApiEvent, ...]:
    """Inverse of emit_witness."""
    lines = text.splitlines()
    if not lines or lines[0] != "<trace>" or lines[-1] != "</trace>":
        raise ParseError("witness must be delimited by <trace> and </trace>")
    events: list[ApiEvent] = []
    for i, line in enumerate(lines[1:-1]):
        expected_prefix = "  " if i == 0 else "  -> "
        if not line.startswith(expected_prefix):
            raise ParseError(f"bad witness line {i + 2}: {line!r}")
        body = line[len(expected_prefix):]
        m = _CALL_RE.match(body)
        if m:
            args = _split_args(m.group("args")) if m.group("args") else ()
            events.append(CallEvent(m.group("api"), args))
            continue
        m = _ASSIGN_RE.match(body)
        if m:
            events.append(AssignEvent(m.group("reg"), m.group("api")))
            continue
        raise ParseError(f"unparseable witness event: {body!r}")
    if not events:
        raise ParseError("witness contains no events")
    return tuple(events)


# ---------------------------------------------------------------------------
# Data-flow graph


@dataclass(frozen=True)
class RegisterNode:
    name: str


@dataclass(frozen=True)
class ConstantNode:
    value: int | str


@dataclass(frozen=True)
class TypeNode:
    name: str


@dataclass(frozen=True)
class ApiNode:
    """Pending-result node of an API: call arguments flow in, callRet out."""

    api: str


DataflowNode = RegisterNode | ConstantNode | TypeNode | ApiNode


@dataclass(frozen=True)
class DataflowGraph:
    nodes: frozenset[DataflowNode]
    edges: frozenset[tuple[DataflowNode, DataflowNode]]


def _arg_node(token: str) -> DataflowNode:
    if is_register(token):
        return RegisterNode(token)
    if is_string_literal(token):
        return ConstantNode(token[1:-1])
    try:
        return ConstantNode(int(token))
    except ValueError:
        return ConstantNode(token)


def build_dataflow(method: MethodIR) -> DataflowGraph:
    """Per-method value-flow graph: an edge n2 -> n1 whenever the command
    that stores into n1 takes n2 as a parameter."""
    nodes: set[DataflowNode] = set()
    edges: set[tuple[DataflowNode, DataflowNode]] = set()

    def store(dst: DataflowNode, srcs: Iterable[DataflowNode]):
        nodes.add(dst)
        for src in srcs:
            nodes.add(src)
            edges.add((src, dst))

    for ins in method.body:
        if isinstance(ins, Const):
            store(RegisterNode(ins.reg), [ConstantNode(ins.value)])
        elif isinstance(ins, Move):
            store(RegisterNode(ins.dst), [RegisterNode(ins.src)])
        elif isinstance(ins, Call):
            store(ApiNode(ins.api), [_arg_node(a) for a in ins.args])
        elif isinstance(ins, CallRet):
            store(RegisterNode(ins.dst), [ApiNode(ins.api)])
    return DataflowGraph(frozenset(nodes), frozenset(edges))


def influences(g: DataflowGraph, source: DataflowNode, sink: DataflowNode) -> bool:
    """True iff sink is reachable from source (reflexively)."""
    if source not in g.nodes or sink not in g.nodes:
        raise NodeNotFound(f"{source!r} or {sink!r} not in graph")
    if source == sink:
        return True
    succ: dict[DataflowNode, list[DataflowNode]] = {}
    for a, b in g.edges:
        succ.setdefault(a, []).append(b)
    seen = {source}
    frontier = [source]
    while frontier:
        node = frontier.pop()
        for nxt in succ.get(node, ()):
            if nxt == sink:
                return True
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return False


# ---------------------------------------------------------------------------
# Configurations and the small-step semantics


@dataclass(frozen=True)
class AppState:
    pc: int
    regs: tuple[tuple[str, TaintLabel], ...] = ()
    registered: frozenset[str] = frozenset()
    pending: tuple[tuple[str, TaintLabel], ...] = ()

    def reg(self, name: str) -> TaintLabel:
        for reg_name, label in self.regs:
            if reg_name == name:
                return label
        raise UndefinedRegister(f"register {name} read before write")

    def with_reg(self, name: str, label: TaintLabel) -> "AppState":
        regs = tuple(sorted(
            [(n, l) for n, l in self.regs if n != name] + [(name, label)]
        , key=lambda item: item[0]))
        return replace(self, regs=regs)

    def pending_label(self, api: str) -> TaintLabel:
        for pending_api, label in self.pending:
            if pending_api == api:
                return label
        return CLEAN

    def with_pending(self, api: str, label: TaintLabel) -> "AppState":
        pending = tuple(sorted(
            [(a, l) for a, l in self.pending if a != api] + [(api, label)]
        , key=lambda item: item[0]))
        return replace(self, pending=pending)


@dataclass(frozen=True)
class BusEntry:
    channel: str
    payload: TaintLabel
    recipient: str


@dataclass(frozen=True)
class Configuration:
    """One global state: per-app cells, the broadcast bus, and the trace."""

    app_states: tuple[tuple[str, AppState], ...]
    bus: tuple[BusEntry, ...] = ()
    trace: tuple[TraceEntry, ...] = ()

    def state_of(self, app_id: str) -> AppState:
        for aid, state in self.app_states:
            if aid == app_id:
                return state
        raise KeyError(app_id)

    def with_state(self, app_id: str, state: AppState) -> "Configuration":
        states = tuple(
            (aid, state if aid == app_id else old) for aid, old in self.app_states
        )
        return replace(self, app_states=states)


def initial_configuration(programs: dict[str, MethodIR]) -> Configuration:
    states = []
    for app_id, method in programs.items():
        regs = tuple(sorted((p, CLEAN) for p in method.params))
        states.append((app_id, AppState(pc=0, regs=regs)))
    return Configuration(app_states=tuple(states))


def _string_arg(args: Sequence[str]) -> Optional[str]:
    for a in args:
        if is_string_literal(a):
            return a[1:-1]
    return None


def _register_args(args: Sequence[str]) -> list[str]:
    return [a for a in args if is_register(a)]


def is_terminal(cfg: Configuration, app_id: str, program: MethodIR) -> bool:
    return cfg.state_of(app_id).pc >= len(program.body)


def is_enabled(cfg: Configuration, app_id: str, program: MethodIR) -> bool:
    """Terminal apps cannot move; a callRet(getBroadcast) waits for a payload."""
    state = cfg.state_of(app_id)
    if state.pc >= len(program.body):
        return False
    ins = program.body[state.pc]
    if isinstance(ins, CallRet) and ins.api == API_GET_BROADCAST:
        return _deliverable(cfg, app_id) is not None
    return True


def _deliverable(cfg: Configuration, app_id: str) -> Optional[BusEntry]:
    state = cfg.state_of(app_id)
    candidates = [
        e for e in cfg.bus
        if e.recipient == app_id and e.channel in state.registered
    ]
    if not candidates:
        return None
    return min(candidates, key=lambda e: (e.channel, _label_key(e.payload)))


def step(cfg: Configuration, app_id: str, program: MethodIR) -> Configuration:
    """Execute one instruction of one app; pure, returns the new configuration."""
    state = cfg.state_of(app_id)
    if state.pc >= len(program.body):
        raise StuckState(f"{app_id}: stepping a terminated app")
    ins: Instruction = program.body[state.pc]
    advance = state.pc + 1

    if isinstance(ins, Const):
        return cfg.with_state(app_id, replace(state.with_reg(ins.reg, CLEAN), pc=advance))

    if isinstance(ins, Move):
        label = state.reg(ins.src)
        return cfg.with_state(app_id, replace(state.with_reg(ins.dst, label), pc=advance))

    if isinstance(ins, Label):
        return cfg.with_state(app_id, replace(state, pc=advance))

    if isinstance(ins, Goto):
        try:
            target = program.label_index(ins.label)
        except KeyError:
            raise StuckState(f"{app_id}: goto to unknown label {ins.label!r}") from None
        return cfg.with_state(app_id, replace(state, pc=target + 1))

    if isinstance(ins, Return):
        return cfg.with_state(app_id, replace(state, pc=len(program.body)))

    if isinstance(ins, Call):
        # Register arguments must be defined even for inert APIs.
        for reg_name in _register_args(ins.args):
            state.reg(reg_name)
        event = CallEvent(ins.api, ins.args)
        new_state = state
        new_bus = cfg.bus
        payload: TaintLabel = CLEAN

        if ins.api == API_READ_SECRET:
            payload = Secret(API_READ_SECRET)
            new_state = new_state.with_pending(API_READ_SECRET, payload)
        elif ins.api == API_GET_BROADCAST:
            channel = _string_arg(ins.args)
            if channel is None:
                raise StuckState(f"{app_id}: getBroadcast without a channel literal")
            new_state = replace(new_state, registered=new_state.registered | {channel})
        elif ins.api == API_SEND_BROADCAST:
            channel = _string_arg(ins.args)
            if channel is None:
                raise StuckState(f"{app_id}: sendBroadcast without a channel literal")
            regs = _register_args(ins.args)
            payload = state.reg(regs[0]) if regs else CLEAN
            # Ephemeral delivery: only receivers already registered on the
            # channel get a copy, one copy each.
            deposits = []
            for other_id, other_state in cfg.app_states:
                if other_id != app_id and channel in other_state.registered:
                    deposits.append(BusEntry(channel, payload, other_id))
            new_bus = tuple(sorted(
                cfg.bus + tuple(deposits),
                key=lambda e: (e.recipient, e.channel, _label_key(e.payload)),
            ))
        elif ins.api == API_PUBLISH:
            regs = _register_args(ins.args)
            payload = state.reg(regs[0]) if regs else CLEAN

        new_state = replace(new_state, pc=advance)
        return replace(
            cfg.with_state(app_id, new_state),
            bus=new_bus,
            trace=cfg.trace + (TraceEntry(app_id, event, payload),),
        )

    if isinstance(ins, CallRet):
        event = AssignEvent(ins.dst, ins.api)
        if ins.api == API_GET_BROADCAST:
            entry = _deliverable(cfg, app_id)
            if entry is None:
                raise StuckState(f"{app_id}: callRet(getBroadcast) with no deliverable payload")
            remaining = list(cfg.bus)
            remaining.remove(entry)
            new_state = replace(state.with_reg(ins.dst, entry.payload), pc=advance)
            return replace(
                cfg.with_state(app_id, new_state),
                bus=tuple(remaining),
                trace=cfg.trace + (TraceEntry(app_id, event, entry.payload),),
            )
        label = state.pending_label(ins.api)
        new_state = replace(state.with_reg(ins.dst, label), pc=advance)
        return replace(
            cfg.with_state(app_id, new_state),
            trace=cfg.trace + (TraceEntry(app_id, event, label),),
        )

    raise StuckState(f"{app_id}: malformed instruction at pc={state.pc}")


# ---------------------------------------------------------------------------
# The collusion rule over traces


def check_trace(entries: Sequence[TraceEntry]) -> Optional[ThreatKind]:
    """Information theft iff, in order: a secret is read, a broadcast
    carries it, a different app receives it from a broadcast, and that
    app publishes a value still carrying it."""
    for i, read in enumerate(entries):
        if not (isinstance(read.event, CallEvent) and read.event.api == API_READ_SECRET):
            continue
        reader = read.app_id
        for j in range(i + 1, len(entries)):
            sent = entries[j]
            if not (
                sent.app_id == reader
                and isinstance(sent.event, CallEvent)
                and sent.event.api == API_SEND_BROADCAST
                and isinstance(sent.label, Secret)
            ):
                continue
            for k in range(j + 1, len(entries)):
                recv = entries[k]
                if not (
                    recv.app_id != reader
                    and isinstance(recv.event, AssignEvent)
                    and recv.event.api == API_GET_BROADCAST
                    and recv.label == sent.label
                ):
                    continue
                for l in range(k + 1, len(entries)):
                    pub = entries[l]
                    if (
                        pub.app_id == recv.app_id
                        and isinstance(pub.event, CallEvent)
                        and pub.event.api == API_PUBLISH
                        and pub.label == sent.label
                    ):
                        return ThreatKind.InformationTheft
    return None


def _pattern_progress(entries: Sequence[TraceEntry]) -> tuple:
    """Threat-relevant projection of the trace, used for state merging.

    Captures which stage prefixes of the collusion pattern have been
    reached (and by which apps) so that merging two states never hides a
    future match.
    """
    read_by: set[str] = set()
    sent_by: set[str] = set()
    received: set[tuple[str, str]] = set()  # (receiver, sender)
    for entry in entries:
        ev = entry.event
        if isinstance(ev, CallEvent) and ev.api == API_READ_SECRET:
            read_by.add(entry.app_id)
        elif (
            isinstance(ev, CallEvent)
            and ev.api == API_SEND_BROADCAST
            and isinstance(entry.label, Secret)
            and entry.app_id in read_by
        ):
            sent_by.add(entry.app_id)
        elif (
            isinstance(ev, AssignEvent)
            and ev.api == API_GET_BROADCAST
            and isinstance(entry.label, Secret)
        ):
            for sender in sent_by:
                if sender != entry.app_id:
                    received.add((entry.app_id, sender))
    return (frozenset(read_by), frozenset(sent_by), frozenset(received))


# ---------------------------------------------------------------------------
# Exploration


@dataclass(frozen=True)
class McVerdict:
    colluding: bool
    threat: Optional[ThreatKind] = None
    witness: Optional[tuple[ApiEvent, ...]] = None
    witness_entries: Optional[tuple[TraceEntry, ...]] = None
    states_explored: int = 1


def _entry_programs(apps: Sequence[AppDescriptor]) -> dict[str, MethodIR]:
    programs = {}
    for app in apps:
        entry = next((m for m in app.methods if m.name == ENTRY_METHOD), None)
        if entry is None:
            raise StuckState(f"app {app.id} has no '{ENTRY_METHOD}' method")
        programs[app.id] = entry
    return programs


def _state_key(cfg: Configuration, full_trace_hashing: bool) -> tuple:
    trace_part = cfg.trace if full_trace_hashing else _pattern_progress(cfg.trace)
    return (cfg.app_states, cfg.bus, trace_part)


def explore(
    apps: Sequence[AppDescriptor],
    max_states: int = 10000,
    full_trace_hashing: bool = False,
) -> McVerdict:
    """Depth-first interleaving exploration of two or three apps.

    Deterministic: successor moves follow the given app order, duplicate
    configurations (same cells, bus, and threat-relevant trace
    projection) are visited once, and the first collusion found ends the
    search with its witness.
    """
    if not 2 <= len(apps) <= 3:
        raise ValueError("explore handles sets of two or three apps")
    for app in apps:
        if not app.methods:
            raise ValueError(f"app {app.id} carries no methods")
    programs = _entry_programs(apps)
    order = [app.id for app in apps]

    init = initial_configuration({app_id: programs[app_id] for app_id in order})
    visited = {_state_key(init, full_trace_hashing)}
    states = 1
    stack = [init]
    while stack:
        cfg = stack.pop()
        threat = check_trace(cfg.trace)
        if threat is not None:
            return McVerdict(
                colluding=True,
                threat=threat,
                witness=tuple(e.event for e in cfg.trace),
                witness_entries=cfg.trace,
                states_explored=states,
            )
        successors = []
        for app_id in order:
            if is_enabled(cfg, app_id, programs[app_id]):
                successors.append(step(cfg, app_id, programs[app_id]))
        for nxt in reversed(successors):
            key = _state_key(nxt, full_trace_hashing)
            if key in visited:
                continue
            visited.add(key)
            states += 1
            if states > max_states:
                raise StateLimitExceeded(f"exceeded {max_states} states")
            stack.append(nxt)
    return McVerdict(colluding=False, states_explored=states)


def maximal_traces(
    apps: Sequence[AppDescriptor], max_nodes: int = 100000
) -> Iterator[tuple[TraceEntry, ...]]:
    """All traces of maximal interleavings (no state merging).

    Exhaustive path enumeration for oracle-equivalence checks; bounded
    by a node budget rather than a visited set because distinct paths
    with identical configurations still have distinct traces.
    """
    if not 2 <= len(apps) <= 3:
        raise ValueError("maximal_traces handles sets of two or three apps")
    programs = _entry_programs(apps)
    order = [app.id for app in apps]
    budget = max_nodes

    def walk(cfg: Configuration) -> Iterator[tuple[TraceEntry, ...]]:
        nonlocal budget
        budget -= 1
        if budget < 0:
            raise StateLimitExceeded(f"exceeded {max_nodes} path nodes")
        moves = [a for a in order if is_enabled(cfg, a, programs[a])]
        if not moves:
            yield cfg.trace
            return
        for app_id in moves:
            yield from walk(step(cfg, app_id, programs[app_id]))

    yield from walk(initial_configuration({a: programs[a] for a in order}))

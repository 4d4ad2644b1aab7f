"""Domain vocabulary and the brute-force collusion oracle.

This module owns the static facts we keep about a single app (the
descriptor file format), the partially-ordered action/communication
model, and a deliberately slow, obviously-correct checker for the
collusion definition itself: a set of at least two apps colludes when
some subsequence of their joint action trace realises a known threat
with every app contributing, and some other subsequence realises a
known inter-app communication. Everything else in the toolkit is an
approximation that gets validated against this oracle.

All types are immutable; all functions are pure.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from itertools import combinations
from typing import Hashable, Iterable, Optional, Sequence

from .errors import ConsistencyError, ParseError, SizeExceeded
from .ir import MethodIR, method_to_json, parse_method

PERMISSION_RE = re.compile(r"^[A-Z][A-Z0-9_]*$")

WRITE_EXTERNAL_STORAGE = "WRITE_EXTERNAL_STORAGE"
READ_EXTERNAL_STORAGE = "READ_EXTERNAL_STORAGE"

# Guards for the brute-force paths; these are desk-scale oracles, not
# production code paths.
MAX_POSET_ELEMENTS = 8
MAX_TRACE_EVENTS = 16


class ThreatKind(enum.Enum):
    """The three threat families; enum order fixes result ordering."""

    InformationTheft = "IT"
    MoneyTheft = "MT"
    ServiceMisuse = "SM"

    @property
    def code(self) -> str:
        return self.value


THREAT_ORDER = (ThreatKind.InformationTheft, ThreatKind.MoneyTheft, ThreatKind.ServiceMisuse)
THREAT_BY_CODE = {t.code: t for t in ThreatKind}


class ChannelKind(enum.Enum):
    Intent = "intent"
    ExternalStorage = "external_storage"
    SharedPreferences = "shared_prefs"


ES_WILDCARD = "*"


@dataclass(frozen=True, order=True)
class Channel:
    """A typed communication endpoint.

    Two channels denote the same endpoint when kind and identifier agree,
    except that an ExternalStorage identifier of "*" stands for any path.
    """

    kind: ChannelKind
    identifier: str

    def __post_init__(self):
        if not self.identifier:
            raise ValueError("channel identifier must be non-empty")

    def matches(self, other: "Channel") -> bool:
        if self.kind is not other.kind:
            return False
        if self.kind is ChannelKind.ExternalStorage:
            if self.identifier == ES_WILDCARD or other.identifier == ES_WILDCARD:
                return True
        return self.identifier == other.identifier

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "id": self.identifier}


# Channel.kind ordering for canonical serialisation.
def _channel_sort_key(ch: Channel):
    return (ch.kind.value, ch.identifier)


@dataclass(frozen=True)
class ActionId:
    """An Android-API-level action with its (uninterpreted) attributes."""

    name: str
    attributes: frozenset[str] = frozenset()
    required_permissions: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Poset:
    """A finite strict partial order; ``order`` holds (before, after) pairs.

    Elements may be any hashable labels (strings, ActionId, ...). The
    order is validated to be irreflexive and acyclic under transitive
    closure.
    """

    elements: tuple[Hashable, ...]
    order: frozenset[tuple[Hashable, Hashable]] = frozenset()

    def __post_init__(self):
        if len(set(self.elements)) != len(self.elements):
            raise ValueError("poset elements must be distinct")
        known = set(self.elements)
        for a, b in self.order:
            if a not in known or b not in known:
                raise ValueError(f"order pair ({a!r}, {b!r}) references unknown element")
            if a == b:
                raise ValueError(f"order must be irreflexive, got ({a!r}, {a!r})")
        # Cycle check via DFS over the order relation.
        succ: dict = {}
        for a, b in self.order:
            succ.setdefault(a, []).append(b)
        state: dict = {}

        def visit(node):
            state[node] = "active"
            for nxt in succ.get(node, ()):
                if state.get(nxt) == "active":
                    raise ValueError("order contains a cycle")
                if nxt not in state:
                    visit(nxt)
            state[node] = "done"

        for el in self.elements:
            if el not in state:
                visit(el)


def make_poset(elements: Iterable[Hashable], order: Iterable[tuple] = ()) -> Poset:
    return Poset(tuple(elements), frozenset(order))


@dataclass(frozen=True)
class ThreatSpec:
    """A threat: a poset of actions tagged with its threat kind."""

    kind: ThreatKind
    poset: Poset


@dataclass(frozen=True)
class AppDescriptor:
    """Extracted static facts for one app.

    Replaces live APK extraction: permissions, declared channel
    endpoints, and (optionally) mini-IR method bodies for the model
    checker. Channel lists are stored canonically sorted.
    """

    id: str
    package: str
    permissions: frozenset[str] = frozenset()
    sends: tuple[Channel, ...] = ()
    receives: tuple[Channel, ...] = ()
    methods: tuple[MethodIR, ...] = ()


@dataclass(frozen=True)
class ActionTrace:
    """A concrete executed sequence of (app_id, action) events."""

    events: tuple[tuple[str, Hashable], ...]


@dataclass(frozen=True)
class CollusionWitness:
    """Oracle verdict: the matched threat plus the two witnessing subsequences."""

    threat: ThreatKind
    threat_events: tuple[tuple[str, Hashable], ...]
    comm_events: tuple[tuple[str, Hashable], ...]


# ---------------------------------------------------------------------------
# Descriptor file format


def _parse_channel(obj, locus: str) -> Channel:
    if not isinstance(obj, dict):
        raise ParseError("channel must be an object", locus)
    unknown = set(obj) - {"kind", "id"}
    if unknown:
        raise ParseError(f"unknown channel keys {sorted(unknown)}", locus)
    if "kind" not in obj or "id" not in obj:
        raise ParseError("channel needs 'kind' and 'id'", locus)
    try:
        kind = ChannelKind(obj["kind"])
    except ValueError:
        raise ParseError(f"unknown channel kind {obj['kind']!r}", locus) from None
    if not isinstance(obj["id"], str) or not obj["id"]:
        raise ParseError("channel id must be a non-empty string", locus)
    return Channel(kind, obj["id"])


def parse_descriptor(text: str, source: str = "<descriptor>") -> AppDescriptor:
    """Parse one descriptor JSON document (strict: unknown keys rejected)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", source) from None
    if not isinstance(doc, dict):
        raise ParseError("descriptor must be a JSON object", source)

    allowed = {"id", "package", "permissions", "sends", "receives", "methods"}
    unknown = set(doc) - allowed
    if unknown:
        raise ParseError(f"unknown keys {sorted(unknown)}", source)
    for key in ("id", "package"):
        if key not in doc or not isinstance(doc[key], str) or not doc[key]:
            raise ParseError(f"'{key}' must be a non-empty string", source)

    perms_json = doc.get("permissions", [])
    if not isinstance(perms_json, list):
        raise ParseError("'permissions' must be a list", source)
    seen: set[str] = set()
    for p in perms_json:
        if not isinstance(p, str) or not PERMISSION_RE.match(p):
            raise ParseError(f"bad permission token {p!r}", source)
        if p in seen:
            raise ParseError(f"duplicate permission {p!r}", source)
        seen.add(p)
    permissions = frozenset(seen)

    channels = {}
    for field_name in ("sends", "receives"):
        lst = doc.get(field_name, [])
        if not isinstance(lst, list):
            raise ParseError(f"'{field_name}' must be a list", source)
        parsed = [
            _parse_channel(c, f"{source}:{field_name}[{i}]") for i, c in enumerate(lst)
        ]
        if len(set(parsed)) != len(parsed):
            raise ParseError(f"duplicate endpoint in '{field_name}'", source)
        channels[field_name] = tuple(sorted(parsed, key=_channel_sort_key))

    methods_json = doc.get("methods", [])
    if not isinstance(methods_json, list):
        raise ParseError("'methods' must be a list", source)
    methods = tuple(
        parse_method(m, doc["id"], f"{source}:methods[{i}]")
        for i, m in enumerate(methods_json)
    )

    # Storage channels require the matching permission up front (enforced at
    # parse time rather than derived downstream).
    for ch in channels["sends"]:
        if ch.kind is ChannelKind.ExternalStorage and WRITE_EXTERNAL_STORAGE not in permissions:
            raise ConsistencyError(
                f"{source}: external-storage send requires {WRITE_EXTERNAL_STORAGE}"
            )
    for ch in channels["receives"]:
        if ch.kind is ChannelKind.ExternalStorage and READ_EXTERNAL_STORAGE not in permissions:
            raise ConsistencyError(
                f"{source}: external-storage receive requires {READ_EXTERNAL_STORAGE}"
            )

    return AppDescriptor(
        id=doc["id"],
        package=doc["package"],
        permissions=permissions,
        sends=channels["sends"],
        receives=channels["receives"],
        methods=methods,
    )


def descriptor_to_json(desc: AppDescriptor) -> dict:
    return {
        "id": desc.id,
        "package": desc.package,
        "permissions": sorted(desc.permissions),
        "sends": [ch.to_json() for ch in sorted(desc.sends, key=_channel_sort_key)],
        "receives": [ch.to_json() for ch in sorted(desc.receives, key=_channel_sort_key)],
        "methods": [method_to_json(m) for m in desc.methods],
    }


def serialize_descriptor(desc: AppDescriptor) -> str:
    """Canonical descriptor text; parse(serialize(d)) == d."""
    return json.dumps(descriptor_to_json(desc), indent=2) + "\n"


# ---------------------------------------------------------------------------
# Total extensions and the Definition-1 oracle


def total_extensions(p: Poset) -> frozenset[tuple]:
    """Every linearisation of ``p`` (all ways of carrying out the threat)."""
    if len(p.elements) > MAX_POSET_ELEMENTS:
        raise SizeExceeded(
            f"poset has {len(p.elements)} elements, oracle limit is {MAX_POSET_ELEMENTS}"
        )
    preds: dict = {el: set() for el in p.elements}
    for a, b in p.order:
        preds[b].add(a)

    results = []

    def extend(prefix: list, remaining: set):
        if not remaining:
            results.append(tuple(prefix))
            return
        placed = set(prefix)
        # Keep element order for determinism of the recursion, not the result.
        for el in p.elements:
            if el in remaining and preds[el] <= placed:
                prefix.append(el)
                remaining.remove(el)
                extend(prefix, remaining)
                remaining.add(el)
                prefix.pop()

    extend([], set(p.elements))
    return frozenset(results)


def _subsequences(n: int):
    """Index tuples of all non-empty subsequences, shortest first."""
    for r in range(1, n + 1):
        yield from combinations(range(n), r)


def check_collusion_definition(
    trace: ActionTrace,
    apps: Iterable[str],
    threats: Sequence[ThreatSpec],
    comms: Sequence[Poset],
) -> Optional[CollusionWitness]:
    """Brute-force check of the collusion definition.

    Returns the first matching threat under the fixed kind ordering
    (InformationTheft < MoneyTheft < ServiceMisuse), or None. Condition
    one needs a trace subsequence that linearises some threat poset with
    every app involved; condition two needs a subsequence linearising
    some communication poset.
    """
    app_set = frozenset(apps)
    events = trace.events
    if len(app_set) < 2 or not events:
        return None
    if len(events) > MAX_TRACE_EVENTS:
        raise SizeExceeded(
            f"trace has {len(events)} events, oracle limit is {MAX_TRACE_EVENTS}"
        )

    subsequence_indices = list(_subsequences(len(events)))

    def find_match(extensions, require_all_apps: bool):
        allowed_lengths = {len(seq) for seq in extensions}
        for idx in subsequence_indices:
            if len(idx) not in allowed_lengths:
                continue
            chosen = tuple(events[i] for i in idx)
            if tuple(action for _, action in chosen) not in extensions:
                continue
            if require_all_apps and {app for app, _ in chosen} != app_set:
                continue
            return chosen
        return None

    comm_witness = None
    for comm in comms:
        comm_witness = find_match(total_extensions(comm), require_all_apps=False)
        if comm_witness is not None:
            break
    if comm_witness is None:
        return None

    for kind in THREAT_ORDER:
        for threat in threats:
            if threat.kind is not kind:
                continue
            threat_witness = find_match(total_extensions(threat.poset), require_all_apps=True)
            if threat_witness is not None:
                return CollusionWitness(kind, threat_witness, comm_witness)
    return None

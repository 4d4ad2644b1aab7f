"""Forward-chaining rule filter over descriptor facts.

Fast, permission-level collusion screening: permissions are abstracted
into four high-level actions, channels into directed ``communicate``
edges, and threat rules fire over the resulting graph. The filter is a
deliberate over-approximation (it reports false positives, never checks
action order) and is directional: cell (a, b) is independent of (b, a).

Information-theft findings come from three complementary rules:

* flow      – an app that may hold sensitive data (its own permissions,
              or anything received from such an app: a taint fixpoint)
              sends directly to an exfiltration-capable app;
* chain     – a sensitive source reaches an exfiltration-capable sink
              through one relay app (the laundering pattern; deeper
              chains still surface through their inner pairs);
* backflow  – an exfiltration-capable app drives a sensitive-capable
              app over an intent channel; the loot is assumed to travel
              back along the request channel even when no explicit
              return channel is declared (command-and-control pattern).

Money theft and service misuse are adjacency rules on the receiving
side, matching their threat descriptions: sending to a money-API app,
commanding a service-controlling app.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .app_model import AppDescriptor, Channel, ChannelKind, ES_WILDCARD, ThreatKind
from .app_model import READ_EXTERNAL_STORAGE, WRITE_EXTERNAL_STORAGE
from .errors import ConfigError


class HighLevelAction(enum.Enum):
    SensitiveInformation = "sensitive"
    MoneyApi = "money"
    ControlService = "service"
    InformationOutside = "outside"


ACTION_BY_NAME = {a.value: a for a in HighLevelAction}

# Shipped permission -> high-level-action map. Config-overridable; the set
# below instantiates the four action categories for the permissions the
# fixture corpus and tests exercise.
DEFAULT_PERMISSION_ACTIONS: dict[str, frozenset[HighLevelAction]] = {
    "READ_CONTACTS": frozenset({HighLevelAction.SensitiveInformation}),
    "ACCESS_FINE_LOCATION": frozenset({HighLevelAction.SensitiveInformation}),
    "READ_SMS": frozenset({HighLevelAction.SensitiveInformation}),
    "READ_EXTERNAL_STORAGE": frozenset({HighLevelAction.SensitiveInformation}),
    "RECORD_AUDIO": frozenset({HighLevelAction.SensitiveInformation}),
    "GET_TASKS": frozenset({HighLevelAction.SensitiveInformation}),
    "SEND_SMS": frozenset({HighLevelAction.MoneyApi, HighLevelAction.InformationOutside}),
    "CALL_PHONE": frozenset({HighLevelAction.MoneyApi}),
    "KILL_BACKGROUND_PROCESSES": frozenset({HighLevelAction.ControlService}),
    "CAMERA": frozenset({HighLevelAction.ControlService}),
    "BLUETOOTH_ADMIN": frozenset({HighLevelAction.ControlService}),
    "INTERNET": frozenset({HighLevelAction.InformationOutside}),
    "BLUETOOTH": frozenset({HighLevelAction.InformationOutside}),
    "NFC": frozenset({HighLevelAction.InformationOutside}),
    "WRITE_EXTERNAL_STORAGE": frozenset({HighLevelAction.InformationOutside}),
}


@dataclass(frozen=True)
class PermissionActionMap:
    entries: Mapping[str, frozenset[HighLevelAction]]

    def actions_for(self, permission: str) -> frozenset[HighLevelAction]:
        return self.entries.get(permission, frozenset())


def default_permission_map() -> PermissionActionMap:
    return PermissionActionMap(dict(DEFAULT_PERMISSION_ACTIONS))


def load_permission_map(text: str) -> PermissionActionMap:
    """Parse a JSON permission map: {"READ_SMS": ["sensitive"], ...}."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid permission map JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("permission map must be a JSON object")
    entries = {}
    for perm, names in doc.items():
        if not isinstance(names, list) or not names:
            raise ConfigError(f"{perm}: expected a non-empty list of action names")
        actions = set()
        for name in names:
            if name not in ACTION_BY_NAME:
                raise ConfigError(f"{perm}: unknown action name {name!r}")
            actions.add(ACTION_BY_NAME[name])
        entries[perm] = frozenset(actions)
    return PermissionActionMap(entries)


def permission_map_to_json(pmap: PermissionActionMap) -> dict:
    return {
        perm: sorted(a.value for a in actions)
        for perm, actions in sorted(pmap.entries.items())
    }


# ---------------------------------------------------------------------------
# Facts


@dataclass(frozen=True)
class Send:
    app: str
    channel: Channel


@dataclass(frozen=True)
class Receive:
    app: str
    channel: Channel


@dataclass(frozen=True)
class Communicate:
    src: str
    dst: str
    channel: Channel

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError("communicate requires distinct apps")


@dataclass(frozen=True)
class Finding:
    """One fired collusion rule: threat plus the app path that carried it.

    The path begins at src and ends at dst. Backflow findings have a
    two-app path whose evidence channel runs dst -> src (the inferred
    return flow of a command channel).
    """

    src: str
    dst: str
    threat: ThreatKind
    path: tuple[str, ...]
    rule: str

    def __post_init__(self):
        if len(self.path) < 2 or self.path[0] != self.src or self.path[-1] != self.dst:
            raise ValueError("finding path must run from src to dst")
        if len(set(self.path)) != len(self.path):
            raise ValueError("finding path must not repeat apps")


@dataclass(frozen=True)
class CollusionMatrix:
    """Directional matrix: (src, dst) -> findings. Cells absent when empty."""

    apps: tuple[str, ...]
    cells: Mapping[tuple[str, str], frozenset[Finding]]

    def threats(self, src: str, dst: str) -> frozenset[ThreatKind]:
        return frozenset(f.threat for f in self.cells.get((src, dst), frozenset()))

    def threat_cells(self) -> dict[tuple[str, str], frozenset[ThreatKind]]:
        return {pair: self.threats(*pair) for pair in self.cells}


# ---------------------------------------------------------------------------
# Fact derivation


def derive_actions(
    app: AppDescriptor, pmap: PermissionActionMap
) -> set[tuple[str, HighLevelAction]]:
    """High-level actions the app could carry out, judging by permissions."""
    out = set()
    for perm in app.permissions:
        for action in pmap.actions_for(perm):
            out.add((app.id, action))
    return out


def derive_channels(app: AppDescriptor) -> set[Send | Receive]:
    """Send/receive facts from declared endpoints plus the storage permissions.

    READ_EXTERNAL_STORAGE grants a wildcard external-storage receive,
    WRITE_EXTERNAL_STORAGE a wildcard send: the storage space itself is
    shared, so permission alone opens the channel.
    """
    facts: set[Send | Receive] = set()
    for ch in app.sends:
        facts.add(Send(app.id, ch))
    for ch in app.receives:
        facts.add(Receive(app.id, ch))
    if WRITE_EXTERNAL_STORAGE in app.permissions:
        facts.add(Send(app.id, Channel(ChannelKind.ExternalStorage, ES_WILDCARD)))
    if READ_EXTERNAL_STORAGE in app.permissions:
        facts.add(Receive(app.id, Channel(ChannelKind.ExternalStorage, ES_WILDCARD)))
    return facts


def _evidence_channel(sent: Channel, received: Channel) -> Channel:
    # Prefer the concrete endpoint over a wildcard for readable evidence.
    if sent.identifier == ES_WILDCARD and received.identifier != ES_WILDCARD:
        return received
    return sent


def derive_communications(facts: Iterable[Send | Receive]) -> set[Communicate]:
    """communicate(a, b, ch) whenever a can send and b receive on one channel."""
    sends = [f for f in facts if isinstance(f, Send)]
    receives = [f for f in facts if isinstance(f, Receive)]
    out = set()
    for s in sends:
        for r in receives:
            if s.app != r.app and s.channel.matches(r.channel):
                out.add(Communicate(s.app, r.app, _evidence_channel(s.channel, r.channel)))
    return out


def communication_paths(
    comms: Iterable[Communicate], max_len: int
) -> set[tuple[str, str, tuple[str, ...]]]:
    """All simple directed paths of 2..max_len apps over communicate edges."""
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    adjacency: dict[str, set[str]] = {}
    for c in comms:
        adjacency.setdefault(c.src, set()).add(c.dst)
    paths = set()

    def walk(path: list[str]):
        if len(path) >= 2:
            paths.add((path[0], path[-1], tuple(path)))
        if len(path) == max_len:
            return
        for nxt in sorted(adjacency.get(path[-1], ())):
            if nxt not in path:
                path.append(nxt)
                walk(path)
                path.pop()

    for start in sorted(adjacency):
        walk([start])
    return paths


# ---------------------------------------------------------------------------
# The filter itself


def _taint_fixpoint(
    sensitive: set[str], edges: set[tuple[str, str]]
) -> set[str]:
    """Apps that may hold sensitive data: closure of ``sensitive`` over edges."""
    tainted = set(sensitive)
    changed = True
    while changed:
        changed = False
        for src, dst in edges:
            if src in tainted and dst not in tainted:
                tainted.add(dst)
                changed = True
    return tainted


def detect(
    apps: list[AppDescriptor],
    pmap: Optional[PermissionActionMap] = None,
    max_len: int = 4,
) -> CollusionMatrix:
    """Run the filter over a corpus and return the directional matrix."""
    if pmap is None:
        pmap = default_permission_map()
    ids = [a.id for a in apps]
    if len(set(ids)) != len(ids):
        raise ValueError("descriptor ids must be distinct")

    actions: set[tuple[str, HighLevelAction]] = set()
    channel_facts: set[Send | Receive] = set()
    for app in apps:
        actions |= derive_actions(app, pmap)
        channel_facts |= derive_channels(app)

    def holders(action: HighLevelAction) -> set[str]:
        return {app_id for app_id, a in actions if a is action}

    sensitive = holders(HighLevelAction.SensitiveInformation)
    outside = holders(HighLevelAction.InformationOutside)
    money = holders(HighLevelAction.MoneyApi)
    service = holders(HighLevelAction.ControlService)

    comms = derive_communications(channel_facts)
    edges = {(c.src, c.dst) for c in comms}
    tainted = _taint_fixpoint(sensitive, edges)

    findings: set[Finding] = set()

    # Adjacency rules.
    for src, dst in edges:
        if src in tainted and dst in outside:
            findings.add(Finding(src, dst, ThreatKind.InformationTheft, (src, dst), "flow"))
        if dst in money:
            findings.add(Finding(src, dst, ThreatKind.MoneyTheft, (src, dst), "money"))
        if dst in service:
            findings.add(Finding(src, dst, ThreatKind.ServiceMisuse, (src, dst), "service"))

    # One-relay chains (only meaningful when the path budget allows them).
    if max_len >= 3:
        for src, mid in edges:
            if src not in sensitive:
                continue
            for mid2, dst in edges:
                if mid2 != mid or dst == src or dst == mid:
                    continue
                if dst in outside:
                    findings.add(
                        Finding(src, dst, ThreatKind.InformationTheft, (src, mid, dst), "chain")
                    )

    # Inferred return flow on intent command channels.
    for c in comms:
        if c.channel.kind is ChannelKind.Intent:
            if c.dst in sensitive and c.src in outside:
                findings.add(
                    Finding(c.dst, c.src, ThreatKind.InformationTheft, (c.dst, c.src), "backflow")
                )

    # Attach every connecting path (within the budget) as extra evidence for
    # cells that fired; this never creates a new cell.
    fired = {(f.src, f.dst, f.threat) for f in findings}
    covered = {(f.src, f.dst, f.threat, f.path) for f in findings}
    if fired:
        for src, dst, path in communication_paths(comms, max_len):
            for threat in {t for s, d, t in fired if (s, d) == (src, dst)}:
                if (src, dst, threat, path) not in covered:
                    rule = "flow" if len(path) == 2 else "chain"
                    findings.add(Finding(src, dst, threat, path, rule))

    cells: dict[tuple[str, str], set[Finding]] = {}
    for f in findings:
        cells.setdefault((f.src, f.dst), set()).add(f)
    return CollusionMatrix(
        apps=tuple(ids),
        cells={pair: frozenset(fs) for pair, fs in cells.items()},
    )


# ---------------------------------------------------------------------------
# Matrix serialisation (CSV grid and JSON with evidence)


def matrix_to_csv(matrix: CollusionMatrix) -> str:
    """Grid CSV: header row of app ids, cells hold ';'-joined threat codes."""
    lines = ["id," + ",".join(matrix.apps)]
    for src in matrix.apps:
        row = [src]
        for dst in matrix.apps:
            if src == dst:
                row.append("")
                continue
            codes = sorted({t.code for t in matrix.threats(src, dst)})
            row.append(";".join(codes))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def matrix_from_csv(text: str) -> dict[tuple[str, str], frozenset[ThreatKind]]:
    """Parse a grid CSV back into (src, dst) -> threat set."""
    from .app_model import THREAT_BY_CODE

    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split(",")
    apps = header[1:]
    cells: dict[tuple[str, str], frozenset[ThreatKind]] = {}
    for line in lines[1:]:
        parts = line.split(",")
        src = parts[0]
        for dst, cell in zip(apps, parts[1:]):
            if cell:
                cells[(src, dst)] = frozenset(THREAT_BY_CODE[c] for c in cell.split(";"))
    return cells


def matrix_to_json(matrix: CollusionMatrix) -> dict:
    cells = []
    for (src, dst) in sorted(matrix.cells):
        entries = sorted(
            matrix.cells[(src, dst)], key=lambda f: (f.threat.code, f.path, f.rule)
        )
        cells.append(
            {
                "src": src,
                "dst": dst,
                "findings": [
                    {"threat": f.threat.code, "path": list(f.path), "rule": f.rule}
                    for f in entries
                ],
            }
        )
    return {"apps": list(matrix.apps), "cells": cells}


def matrix_from_json(doc: dict) -> CollusionMatrix:
    from .app_model import THREAT_BY_CODE

    cells: dict[tuple[str, str], frozenset[Finding]] = {}
    for cell in doc["cells"]:
        fs = frozenset(
            Finding(
                cell["src"],
                cell["dst"],
                THREAT_BY_CODE[f["threat"]],
                tuple(f["path"]),
                f.get("rule", "flow"),
            )
            for f in cell["findings"]
        )
        cells[(cell["src"], cell["dst"])] = fs
    return CollusionMatrix(apps=tuple(doc["apps"]), cells=cells)

"""Mini bytecode IR: instructions, methods, and their JSON form.

A method body is a flat instruction list in the style of disassembled
register code: ``const``/``move`` bind registers, ``call``/``callret``
model API interaction, ``goto``/``label`` give (unstructured) control
flow. Register operands are named ``r<n>``, parameters ``p<n>``; any
other ``call`` argument token is treated as a literal (string literals
are double-quoted, integers bare).

The JSON schema used inside descriptor files::

    {"name": "main", "params": ["p1"], "body": [
        {"op": "const", "reg": "r1", "val": 42},
        {"op": "call", "api": "sendBroadcast", "args": ["\\"locsteal\\"", "r1"]},
        {"op": "callret", "reg": "r2", "api": "getBroadcast"},
        {"op": "goto", "label": "loop"},
        {"op": "label", "name": "loop"},
        {"op": "return"}
    ]}
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ParseError

REGISTER_RE = re.compile(r"^(r|p)\d+$")

# APIs with interpreted semantics; anything else is inert (traced, no taint effect).
API_READ_SECRET = "readSecret"
API_SEND_BROADCAST = "sendBroadcast"
API_GET_BROADCAST = "getBroadcast"
API_PUBLISH = "publish"
KNOWN_APIS = frozenset({API_READ_SECRET, API_SEND_BROADCAST, API_GET_BROADCAST, API_PUBLISH})


def is_register(token: str) -> bool:
    return bool(REGISTER_RE.match(token))


def is_string_literal(token: str) -> bool:
    return len(token) >= 2 and token.startswith('"') and token.endswith('"')


@dataclass(frozen=True)
class Const:
    reg: str
    value: int


@dataclass(frozen=True)
class Move:
    dst: str
    src: str


@dataclass(frozen=True)
class Call:
    api: str
    args: tuple[str, ...] = ()


@dataclass(frozen=True)
class CallRet:
    dst: str
    api: str


@dataclass(frozen=True)
class Goto:
    label: str


@dataclass(frozen=True)
class Label:
    name: str


@dataclass(frozen=True)
class Return:
    pass


Instruction = Const | Move | Call | CallRet | Goto | Label | Return


@dataclass(frozen=True)
class MethodIR:
    """One method of one app; ``body`` is validated on parse."""

    app_id: str
    name: str
    params: tuple[str, ...] = ()
    body: tuple[Instruction, ...] = field(default_factory=tuple)

    def label_index(self, label: str) -> int:
        for i, ins in enumerate(self.body):
            if isinstance(ins, Label) and ins.name == label:
                return i
        raise KeyError(label)


def _require_keys(obj: dict, allowed: set[str], required: set[str], locus: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ParseError(f"unknown keys {sorted(unknown)}", locus)
    missing = required - set(obj)
    if missing:
        raise ParseError(f"missing keys {sorted(missing)}", locus)


def _parse_instruction(obj: dict, locus: str) -> Instruction:
    if not isinstance(obj, dict) or "op" not in obj:
        raise ParseError("instruction must be an object with an 'op' key", locus)
    op = obj["op"]
    if op == "const":
        _require_keys(obj, {"op", "reg", "val"}, {"reg", "val"}, locus)
        if not is_register(obj["reg"]):
            raise ParseError(f"bad register {obj['reg']!r}", locus)
        if not isinstance(obj["val"], int):
            raise ParseError("const val must be an integer", locus)
        return Const(obj["reg"], obj["val"])
    if op == "move":
        _require_keys(obj, {"op", "dst", "src"}, {"dst", "src"}, locus)
        for r in (obj["dst"], obj["src"]):
            if not is_register(r):
                raise ParseError(f"bad register {r!r}", locus)
        return Move(obj["dst"], obj["src"])
    if op == "call":
        _require_keys(obj, {"op", "api", "args"}, {"api"}, locus)
        args = obj.get("args", [])
        if not isinstance(args, list) or not all(isinstance(a, str) for a in args):
            raise ParseError("call args must be a list of strings", locus)
        return Call(obj["api"], tuple(args))
    if op == "callret":
        _require_keys(obj, {"op", "reg", "api"}, {"reg", "api"}, locus)
        if not is_register(obj["reg"]):
            raise ParseError(f"bad register {obj['reg']!r}", locus)
        return CallRet(obj["reg"], obj["api"])
    if op == "goto":
        _require_keys(obj, {"op", "label"}, {"label"}, locus)
        return Goto(obj["label"])
    if op == "label":
        _require_keys(obj, {"op", "name"}, {"name"}, locus)
        return Label(obj["name"])
    if op == "return":
        _require_keys(obj, {"op"}, set(), locus)
        return Return()
    raise ParseError(f"unknown op {op!r}", locus)


def parse_method(obj: dict, app_id: str, locus: str = "method") -> MethodIR:
    """Parse and validate one method object from descriptor JSON."""
    _require_keys(obj, {"name", "params", "body"}, {"name", "body"}, locus)
    name = obj["name"]
    params = tuple(obj.get("params", []))
    for p in params:
        if not is_register(p):
            raise ParseError(f"bad parameter name {p!r}", locus)
    body_json = obj["body"]
    if not isinstance(body_json, list) or not body_json:
        raise ParseError("method body must be a non-empty list", locus)
    body = tuple(
        _parse_instruction(ins, f"{locus}[{i}]") for i, ins in enumerate(body_json)
    )
    labels = [ins.name for ins in body if isinstance(ins, Label)]
    if len(labels) != len(set(labels)):
        raise ParseError("duplicate labels", locus)
    for ins in body:
        if isinstance(ins, Goto) and ins.label not in labels:
            raise ParseError(f"goto targets unknown label {ins.label!r}", locus)
    return MethodIR(app_id=app_id, name=name, params=params, body=body)


def method_to_json(method: MethodIR) -> dict:
    """Inverse of parse_method (canonical form)."""
    body = []
    for ins in method.body:
        if isinstance(ins, Const):
            body.append({"op": "const", "reg": ins.reg, "val": ins.value})
        elif isinstance(ins, Move):
            body.append({"op": "move", "dst": ins.dst, "src": ins.src})
        elif isinstance(ins, Call):
            body.append({"op": "call", "api": ins.api, "args": list(ins.args)})
        elif isinstance(ins, CallRet):
            body.append({"op": "callret", "reg": ins.dst, "api": ins.api})
        elif isinstance(ins, Goto):
            body.append({"op": "goto", "label": ins.label})
        elif isinstance(ins, Label):
            body.append({"op": "label", "name": ins.name})
        else:
            body.append({"op": "return"})
    return {"name": method.name, "params": list(method.params), "body": body}

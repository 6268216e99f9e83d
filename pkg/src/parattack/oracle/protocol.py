"""Newline-delimited JSON protocol shared by every oracle.

One request object per line; responses echo the request ``id`` and carry
``ok`` plus either the payload or an ``error`` string. The same framing is
used over HTTP POST bodies and subprocess stdio, so any oracle can be served
either way. Floats are serialized with 17 significant digits so values
round-trip bit-exactly.

Request shapes (payload fields beyond ``op`` and ``id``):
    ping                                  -> {}
    encode  {text}                        -> {embedding}
    decode  {embedding}                   -> {text}
    segment {sample_id, text}             -> {iou} or {mask: {w, h, rle}}
    embed   {text}                        -> {embedding}
    judge   {original, paraphrase}        -> {score}
"""

from __future__ import annotations

import json
import math
from typing import Any

OPS = ("ping", "encode", "decode", "segment", "embed", "judge")


class ProtocolError(Exception):
    """Malformed request/response, id mismatch, or out-of-contract payload."""


class OracleError(Exception):
    """Base class for oracle client failures."""


class TransportError(OracleError):
    """Connection, process, or timeout failure before a response arrived."""


class RemoteOracleError(OracleError):
    """The oracle answered ok=false."""


def format_float(x: float) -> str:
    """17-significant-digit rendering that always reads back as a float."""
    if not math.isfinite(x):
        raise ProtocolError(f"non-finite float on the wire: {x!r}")
    s = format(float(x), ".17g")
    if not any(c in s for c in ".eE"):
        s += ".0"
    return s


def _render(obj: Any) -> str:
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, (int,)):
        return str(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        items = (f"{json.dumps(str(k), ensure_ascii=False)}:{_render(v)}" for k, v in obj.items())
        return "{" + ",".join(items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_render(v) for v in obj) + "]"
    # numpy scalars/arrays and anything float-like
    if hasattr(obj, "tolist"):
        return _render(obj.tolist())
    raise ProtocolError(f"cannot serialize {type(obj).__name__} on the wire")


def dumps(obj: dict) -> str:
    """Serialize one protocol object to a single NDJSON line (no newline)."""
    line = _render(obj)
    if "\n" in line:
        raise ProtocolError("serialized object must not contain newlines")
    return line


def loads(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"invalid JSON line: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("protocol objects must be JSON objects")
    return obj


def make_request(op: str, request_id: str, **payload) -> dict:
    if op not in OPS:
        raise ProtocolError(f"unknown op {op!r}")
    return {"op": op, "id": request_id, **payload}


def ok_response(request_id: str, **payload) -> dict:
    return {"id": request_id, "ok": True, **payload}


def error_response(request_id: str | None, message: str) -> dict:
    return {"id": request_id, "ok": False, "error": str(message)}


def check_response(obj: dict, request_id: str) -> dict:
    """Validate the envelope and return the payload; raises on ok=false."""
    if obj.get("id") != request_id:
        raise ProtocolError(f"response id {obj.get('id')!r} does not match request {request_id!r}")
    if "ok" not in obj or not isinstance(obj["ok"], bool):
        raise ProtocolError("response is missing a boolean 'ok' field")
    if not obj["ok"]:
        raise RemoteOracleError(obj.get("error", "unspecified oracle error"))
    return {k: v for k, v in obj.items() if k not in ("id", "ok")}

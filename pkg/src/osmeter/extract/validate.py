from __future__ import annotations

import json
import logging
import re
from typing import Any

from osmeter.extract.templates import load_template

log = logging.getLogger(__name__)

_FENCE_RE = re.compile(r"^```[A-Za-z0-9_-]*\s*\n?(.*?)\n?```$", re.DOTALL)
# the only string spellings accepted for a boolean
_BOOL_STRINGS = {"true": True, "false": False}


class SchemaError(ValueError):
    """The model answer does not satisfy the template schema."""


def strip_fences(raw: str) -> str:
    text = raw.strip()
    m = _FENCE_RE.match(text)
    return m.group(1).strip() if m else text


def parse_single_object(raw: str) -> dict[str, Any]:
    text = strip_fences(raw)
    if not text:
        raise SchemaError("empty response")
    try:
        obj, end = json.JSONDecoder().raw_decode(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc.msg} at char {exc.pos}") from exc
    if text[end:].strip():
        raise SchemaError("extra content after the JSON object")
    if not isinstance(obj, dict):
        raise SchemaError("response is not a JSON object")
    return obj


def _check_bool(key: str, value: Any) -> bool | None:
    if value is None or isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in _BOOL_STRINGS:
        log.warning("field %s: coerced string %r to boolean", key, value)
        return _BOOL_STRINGS[value.strip().lower()]
    raise SchemaError(f"field {key!r} must be a boolean, got {value!r}")


def _check_string(key: str, value: Any) -> str:
    if value is None:
        return ""
    if not isinstance(value, str):
        raise SchemaError(f"field {key!r} must be a string, got {type(value).__name__}")
    return value


def _check_array(key: str, value: Any) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value] if value.strip() else []
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaError(f"field {key!r} must be a list of strings")
    return [v for v in value if v.strip()]


def validate_response(raw: str, template_id: str) -> dict[str, Any]:
    """Parse one JSON answer and check it against the template schema.

    Boolean and array keys are required (booleans may be null, meaning the
    article does not say). String keys default to ``""``. Unknown keys are
    dropped with a warning.
    """
    schema = load_template(template_id).schema
    obj = parse_single_object(raw)
    fragment: dict[str, Any] = {}
    for key, kind in schema.items():
        if kind in ("boolean", "array") and key not in obj:
            raise SchemaError(f"missing required key {key!r}")
        value = obj.get(key)
        if kind == "boolean":
            fragment[key] = _check_bool(key, value)
        elif kind == "array":
            fragment[key] = _check_array(key, value)
        else:
            fragment[key] = _check_string(key, value)
    for key in obj.keys() - schema.keys():
        log.warning("template %s: ignoring unknown key %r", template_id, key)
    return fragment

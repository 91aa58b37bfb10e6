"""Plain-text configuration grammar with includes.

One statement per line:

    # comment
    include other.cfg
    key = value
    dotted.key = value

Values are typed on read: integers, floats, the booleans ``true``/``false``,
quoted strings, or bare words; a top-level comma makes a list of typed
scalars. ``include`` splices another file (relative to the including file)
at that point; later assignments override earlier ones. Serialization is
canonical (sorted keys), so parse -> serialize -> parse is the identity on
the parsed mapping.
"""

from __future__ import annotations

import os
import re
from typing import Union

Scalar = Union[int, float, bool, str]
ConfigValue = Union[Scalar, list]

_BARE_WORD = re.compile(r"^[A-Za-z_][A-Za-z0-9_.:\-/+]*$")


def _parse_scalar(token: str) -> Scalar:
    token = token.strip()
    if token.startswith('"') and token.endswith('"') and len(token) >= 2:
        return token[1:-1]
    low = token.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token


def _parse_value(raw: str) -> ConfigValue:
    raw = raw.strip()
    if raw == "":
        raise ValueError("empty value")
    if "," in raw and not (raw.startswith('"') and raw.endswith('"')):
        return [_parse_scalar(tok) for tok in raw.split(",")]
    return _parse_scalar(raw)


def _format_scalar(value: Scalar) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if _BARE_WORD.match(value) and value.lower() not in ("true", "false"):
        try:
            float(value)
        except ValueError:
            return value
    return f'"{value}"'


def parse_config_text(text: str, base_dir: str = ".") -> dict[str, ConfigValue]:
    """Parse statements into an ordered mapping, resolving includes."""
    out: dict[str, ConfigValue] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include "):
            target = line[len("include "):].strip().strip('"')
            out.update(load_config(os.path.join(base_dir, target)))
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: missing key")
        out[key] = _parse_value(raw_value)
    return out


def load_config(path: str) -> dict[str, ConfigValue]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base_dir=os.path.dirname(path) or ".")


def serialize_config(mapping: dict[str, ConfigValue]) -> str:
    """Canonical text form: sorted keys, typed scalar formatting."""
    lines = []
    for key in sorted(mapping):
        value = mapping[key]
        if isinstance(value, list):
            rendered = ", ".join(_format_scalar(v) for v in value)
        else:
            rendered = _format_scalar(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"

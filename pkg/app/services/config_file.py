"""
Flat dotted key-value config files.

    # comment
    optimizer.lr = 0.01
    diagnostics.weights = 1, 1, 0.5

Values stay strings (the schema coerces them); `none` or an empty value
means "unset".
"""
from __future__ import annotations

from pathlib import Path

from app.services.errors import ConfigError


def _strip_comment(line: str) -> str:
    if line.lstrip().startswith("#"):
        return ""
    cut = line.find(" #")
    return line if cut < 0 else line[:cut]


def parse_flat(text: str, source: str = "<config>") -> dict[str, str | None]:
    values: dict[str, str | None] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{number}: expected 'key = value'", key_path=key or None)
        if key in values:
            raise ConfigError(f"{source}:{number}: duplicate key", key_path=key)
        value = value.strip()
        values[key] = None if value.lower() in {"", "none"} else value
    return values


def read_flat(path: str | Path) -> dict[str, str | None]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    return parse_flat(text, source=str(path))


def nest(flat: dict[str, object]) -> dict:
    """{'a.b': 1} -> {'a': {'b': 1}}."""
    tree: dict = {}
    for key, value in flat.items():
        parts = key.split(".")
        node = tree
        for depth, part in enumerate(parts[:-1]):
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError("key is both a value and a section", key_path=".".join(parts[: depth + 1]))
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError("key is both a value and a section", key_path=key)
        node[parts[-1]] = value
    return tree


def flatten(tree: dict, prefix: str = "") -> dict[str, object]:
    flat: dict[str, object] = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, dotted + "."))
        else:
            flat[dotted] = value
    return flat


def _render(value: object) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_flat(tree: dict) -> str:
    return "".join(f"{key} = {_render(value)}\n" for key, value in flatten(tree).items())

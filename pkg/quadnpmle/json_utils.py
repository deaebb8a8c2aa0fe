"""
JSON helpers for fits, quadrature rules, plans and bench summaries.

Everything the CLI writes as JSON passes through to_jsonable, so numpy
scalars, arrays and infinities are encoded one way only.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, TypeVar

import numpy as np

from quadnpmle.errors import ValidationError
from quadnpmle.logs_utils import safe_push_log

JsonData = dict[str, Any]
T = TypeVar("T")


def to_jsonable(value: Any) -> Any:
    """
    Recursively convert numpy values (and infinities) to plain Python types.

    Floats are left as floats, so json writes their shortest repr and a
    save/load cycle is exact. inf and -inf become the strings "inf" and
    "-inf", which float() parses back; mapping keys become strings.
    """
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, Path):
        return str(value)
    return value


def safe_load_json(
    path: Path | str,
    default: T | None = None,
    log_errors: bool = True,
) -> JsonData | T | None:
    """
    Read a JSON file, returning ``default`` if it is missing or unreadable.

    Examples:
        >>> rule = safe_load_json("rule.json", default={})
    """
    path = Path(path)
    if not path.exists():
        return default

    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        _warn(log_errors, f"Invalid JSON in {path.name} (line {e.lineno}): {e.msg}")
    except (OSError, UnicodeDecodeError) as e:
        _warn(log_errors, f"Cannot read {path.name}: {e}")
    return default


def load_json_strict(path: Path | str) -> JsonData:
    """
    Read a JSON object for the CLI.

    Raises:
        ValidationError: missing file, invalid JSON, or a top level that is
            not an object
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"JSON file not found: {path}")

    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path.name}: invalid JSON at line {e.lineno}") from None
    except (OSError, UnicodeDecodeError) as e:
        raise ValidationError(f"{path.name}: {e}") from None

    if not isinstance(data, dict):
        raise ValidationError(f"{path.name} does not contain a JSON object")
    return data


def safe_save_json(
    path: Path | str,
    data: JsonData,
    indent: int = 2,
    log_errors: bool = True,
) -> bool:
    """
    Write ``data`` (numpy values allowed) as indented UTF-8 JSON.

    Parent folders are created. The text is serialized before the file is
    opened, so an unserializable payload never truncates an existing file.

    Returns:
        True on success, False if serialization or the write failed
    """
    path = Path(path)
    try:
        text = json.dumps(to_jsonable(data), indent=indent, ensure_ascii=False)
    except (TypeError, ValueError) as e:
        _warn(log_errors, f"Cannot serialize {path.name}: {e}")
        return False

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
    except OSError as e:
        _warn(log_errors, f"Cannot write {path.name}: {e}")
        return False
    return True


def dumps(data: JsonData) -> str:
    """JSON text for stdout, encoded like safe_save_json."""
    return json.dumps(to_jsonable(data), indent=2, ensure_ascii=False)


def _warn(enabled: bool, message: str) -> None:
    if enabled:
        safe_push_log(f"⚠️ {message}")

"""
CSV and JSON writers.

Every CSV starts with one metadata comment line

    # taulab <version> config_hash=<hash> key=value ...

followed by a header row. Floats are written with repr precision and JSON with
sorted keys, so equal inputs produce byte-identical files.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import pandas as pd

from core import __version__
from core.errors import ExportError

logger = logging.getLogger(__name__)


def _repr_float(value: float) -> str:
    return repr(float(value))


def metadata_line(config_hash: str = "", **extra: Any) -> str:
    parts = [f"# taulab {__version__}", f"config_hash={config_hash or 'none'}"]
    parts.extend(f"{key}={str(value).replace(' ', '_')}" for key, value in sorted(extra.items()))
    return " ".join(parts)


def write_csv(frame: pd.DataFrame, path: Union[str, Path], config_hash: str = "", **extra: Any) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            f.write(metadata_line(config_hash, **extra) + "\n")
            frame.to_csv(f, index=False, float_format=_repr_float, lineterminator="\n")
    except OSError as e:
        raise ExportError(f"Could not write {path}: {e}") from e
    logger.debug(f"CSV written: {path} ({len(frame)} rows)")
    return path


def read_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def read_metadata(path: Union[str, Path]) -> Dict[str, str]:
    """Key/value pairs of a CSV's metadata comment line."""
    with open(path) as f:
        first = f.readline().strip()
    if not first.startswith("# taulab"):
        return {}
    tokens = first[2:].split()
    meta = {"version": tokens[1] if len(tokens) > 1 else ""}
    meta.update(token.split("=", 1) for token in tokens[2:] if "=" in token)
    return meta


def write_json(data: Any, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise ExportError(f"Could not write {path}: {e}") from e
    return path


def read_json(path: Union[str, Path]) -> Optional[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        return None
    with open(path) as f:
        return json.load(f)

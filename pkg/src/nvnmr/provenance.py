"""Digests and metadata embedded in every JSON the CLI writes."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Mapping

from . import __version__

TIMESTAMP_KEY = "generated_at"


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest_bytes(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def _drop_timestamps(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _drop_timestamps(v) for k, v in obj.items() if k != TIMESTAMP_KEY}
    if isinstance(obj, list):
        return [_drop_timestamps(v) for v in obj]
    return obj


def digest_file(path: str | Path) -> str:
    """Raw sha256 of the file, except for JSON, which is digested in canonical
    form without timestamps so reruns give the same digest chain."""
    data = Path(path).read_bytes()
    if Path(path).suffix.lower() == ".json":
        try:
            return digest_obj(_drop_timestamps(json.loads(data)))
        except ValueError:
            pass
    return digest_bytes(data)


def digest_obj(obj: Any) -> str:
    return digest_bytes(canonical_json(obj).encode())


def timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the timestamp for fully reproducible output
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        when = _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc)
    else:
        when = _dt.datetime.now(_dt.timezone.utc)
    return when.replace(microsecond=0).isoformat()


def provenance(config: Mapping[str, Any], inputs: Mapping[str, str | Path] | None = None,
               seeds: Mapping[str, int] | None = None) -> dict[str, Any]:
    """Provenance block; ``inputs`` maps a role ("trace", "fit_h", ...) to a file."""
    return {
        "tool": {"name": "nvnmr", "version": __version__},
        "config_digest": digest_obj(config),
        "input_digests": {role: {"file": Path(p).name, "digest": digest_file(p)}
                          for role, p in sorted((inputs or {}).items())},
        "seeds": dict(seeds or {}),
        TIMESTAMP_KEY: timestamp(),
    }


def dumps(doc: Mapping[str, Any]) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"

"""On-disk response cache: ``<dir>/<doi-hash>/<template-id>.<version-tag>.json``."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any


def doi_hash(doi: str) -> str:
    return hashlib.sha256(doi.encode("utf-8")).hexdigest()[:16]


class ResponseCache:
    """Stores raw model answers keyed by (doi, template version, model, temperature).

    Model and temperature live inside the file; a mismatch is treated as a miss
    and the entry is overwritten on the next store. Writes go to a temporary file
    in the same directory and are moved into place with ``os.replace``, so
    concurrent writers never leave a torn file behind.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0

    def path(self, doi: str, template_id: str, version_tag: str) -> Path:
        return self.root / doi_hash(doi) / f"{template_id}.{version_tag}.json"

    def get(self, doi: str, template_id: str, version_tag: str, model: str,
            temperature: float) -> str | None:
        path = self.path(doi, template_id, version_tag)
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            self.misses += 1
            return None
        if (entry.get("doi") != doi or entry.get("model") != model
                or float(entry.get("temperature", -1)) != float(temperature)):
            self.misses += 1
            return None
        self.hits += 1
        return entry.get("response")

    def put(self, doi: str, template_id: str, version_tag: str, model: str,
            temperature: float, response: str) -> Path:
        path = self.path(doi, template_id, version_tag)
        path.parent.mkdir(parents=True, exist_ok=True)
        entry: dict[str, Any] = {
            "doi": doi,
            "template": template_id,
            "version": version_tag,
            "model": model,
            "temperature": float(temperature),
            "response": response,
        }
        payload = json.dumps(entry, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".json", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

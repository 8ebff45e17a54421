"""Append-only JSON-lines verdict cache."""

from __future__ import annotations

import hashlib
import json
import threading
from pathlib import Path
from typing import Optional

from .verdicts import JudgeVerdict


def content_key(prompt_text: str, repetition: int) -> str:
    return hashlib.sha256(json.dumps([prompt_text, repetition]).encode()).hexdigest()


def cache_key(backend_identity: str, prompt_text: str, repetition: int) -> str:
    return hashlib.sha256(json.dumps([backend_identity, prompt_text, repetition]).encode()).hexdigest()


class VerdictCache:
    """Verdicts keyed by a hash of (backend identity, prompt, repetition).

    Entries are also indexed by a backend-agnostic key of (prompt,
    repetition) so a replay run can serve them without knowing which backend
    produced them.  Writes go through a lock; with ``path=None`` the cache
    lives in memory only.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._by_key: dict[str, dict] = {}
        self._by_content: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        self._index(json.loads(line))

    def _index(self, entry):
        self._by_key[entry["key"]] = entry["verdict"]
        self._by_content.setdefault(entry["content_key"], entry["verdict"])

    def __len__(self):
        return len(self._by_key)

    def get(self, key: str) -> Optional[JudgeVerdict]:
        entry = self._by_key.get(key)
        return None if entry is None else JudgeVerdict.from_dict(dict(entry, cached=True))

    def get_content(self, ckey: str) -> Optional[JudgeVerdict]:
        entry = self._by_content.get(ckey)
        return None if entry is None else JudgeVerdict.from_dict(dict(entry, cached=True))

    def put(self, key: str, ckey: str, verdict: JudgeVerdict) -> None:
        entry = {"key": key, "content_key": ckey, "verdict": dict(verdict.to_dict(), cached=False)}
        with self._lock:
            if key in self._by_key:
                return
            self._index(entry)
            if self.path:
                with self.path.open("a", encoding="utf-8", newline="\n") as fh:
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")

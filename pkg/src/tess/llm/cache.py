from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from pathlib import Path
from typing import Any, Optional, Union


def cache_key(model_name: str, prompt: str, scoring_mode: str) -> str:
    payload = json.dumps([model_name, prompt, scoring_mode], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """Append-only JSON-lines response cache.

    Each line is ``{"key": ..., "response": ..., "timestamp": ...}``; later lines
    win when a key repeats. With ``path=None`` the cache lives in memory only.
    """

    def __init__(self, path: Union[str, os.PathLike, None] = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._entries: dict[str, Any] = {}
        self.hits = 0
        self.misses = 0
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError:
                        continue  # torn trailing write
                    self._entries[rec["key"]] = rec["response"]

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> Optional[Any]:
        with self._lock:
            if key in self._entries:
                self.hits += 1
                return self._entries[key]
            self.misses += 1
            return None

    def put(self, key: str, response: Any) -> None:
        line = json.dumps({"key": key, "response": response, "timestamp": time.time()}, ensure_ascii=False)
        with self._lock:
            self._entries[key] = response
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")

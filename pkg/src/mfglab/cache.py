"""Content-addressed artifact cache for expensive solves.

Keys are SHA-256 hashes of a canonical JSON payload covering every parameter
that affects the numerics.  Each artifact is stored with a sidecar checksum;
a checksum mismatch evicts the entry and recomputes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path

logger = logging.getLogger("mfglab.cache")


def content_key(payload):
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ArtifactCache:
    """File-backed cache; ``get_or_compute`` is the only entry point."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def _paths(self, kind, key):
        base = self.root / f"{kind}-{key}.bin"
        return base, base.with_suffix(".bin.sha256")

    def get_or_compute(self, kind, payload, producer):
        key = content_key(payload)
        path, sha_path = self._paths(kind, key)
        if path.exists() and sha_path.exists():
            data = path.read_bytes()
            digest = hashlib.sha256(data).hexdigest()
            if digest == sha_path.read_text().strip():
                self.hits += 1
                return data
            # corrupt entry: evict and fall through to recompute
            logger.warning("cache entry %s failed its checksum; evicting", path.name)
            self.evictions += 1
            path.unlink(missing_ok=True)
            sha_path.unlink(missing_ok=True)
        data = producer()
        self.misses += 1
        tmp = path.with_suffix(".bin.tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)
        sha_path.write_text(hashlib.sha256(data).hexdigest())
        return data


class NullCache:
    """Cache stand-in that always recomputes."""

    hits = 0
    evictions = 0

    def __init__(self):
        self.misses = 0

    def get_or_compute(self, kind, payload, producer):
        self.misses += 1
        return producer()

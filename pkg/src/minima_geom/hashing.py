"""Content hashing for manifests and reports (git blob convention)."""
from __future__ import annotations

import hashlib
from pathlib import Path

__all__ = ["blob_sha1", "file_sha1"]


def blob_sha1(data: bytes) -> str:
    """sha1 of ``b"blob <len>\\0" + data``, matching ``git hash-object``."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def file_sha1(path) -> str:
    return blob_sha1(Path(path).read_bytes())

"""Seed splitting, config hashing, and worker-count plumbing.

All randomness in the drivers flows from one root seed. Purpose-specific
streams are derived as the low 64 bits of sha256("<root>/<label>/..."),
so adding a new purpose never shifts the draws of an existing one.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor


def split_seed(root: int, *labels) -> int:
    text = str(int(root)) + "".join(f"/{label}" for label in labels)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little")


def config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def thread_count() -> int:
    """Worker cap from LOHA_THREADS (default 1)."""
    raw = os.environ.get("LOHA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def pmap(fn, items: list) -> list:
    """Order-preserving map, fanned out over processes when LOHA_THREADS > 1.
    ``fn`` must be picklable (module-level function or partial of one)."""
    items = list(items)
    workers = thread_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def write_json(path, payload: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, header: list[str], rows: list[list], comments: list[str]) -> None:
    """Plain CSV with leading ``#`` comment lines (config hash etc.).
    Floats are serialized with repr for byte-stable output."""

    def fmt(value) -> str:
        if value is None:
            return ""
        if isinstance(value, float):
            return repr(value)
        return str(value)

    with open(path, "w", newline="\n") as fh:
        for comment in comments:
            fh.write(f"# {comment}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")

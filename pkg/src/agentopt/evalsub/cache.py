"""Payload-hash response cache with optional append-only persistence.

Record layout on disk, repeated::

    4-byte big-endian header length | header JSON | response bytes

The header carries the key, the original latency, token counts, the body
length and a creation timestamp. A truncated trailing record (crash during
append) is ignored on open.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

logger = logging.getLogger(__name__)

CACHE_PATH_ENV = "AGENTOPT_CACHE_PATH"
_LEN = struct.Struct(">I")


class CacheIo(Exception):
    pass


@dataclass(frozen=True)
class CacheEntry:
    key: str
    response_bytes: bytes
    original_latency_s: float
    input_tokens: int = 0
    output_tokens: int = 0
    created_at: float = 0.0
    content_type: str | None = None


@dataclass(frozen=True)
class Execution:
    """What an executor hands back on a cache miss."""

    response_bytes: bytes
    latency_s: float
    input_tokens: int = 0
    output_tokens: int = 0
    content_type: str | None = None


@dataclass(frozen=True)
class CacheResult:
    response_bytes: bytes
    latency_s: float
    input_tokens: int
    output_tokens: int
    from_cache: bool
    key: str
    content_type: str | None = None


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


def canonicalize(payload: bytes) -> bytes:
    """Stable field order and no insignificant whitespace for JSON payloads;
    anything else is used verbatim."""
    try:
        return canonical_json(json.loads(payload))
    except (ValueError, UnicodeDecodeError):
        return payload


def payload_key(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


class ResponseCache:
    def __init__(self, path: str | os.PathLike | None = None, *, use_env: bool = True):
        if path is None and use_env:
            path = os.environ.get(CACHE_PATH_ENV) or None
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, CacheEntry] = {}
        self._lock = threading.Lock()
        self._fh = None
        self.executions = 0
        self.hits = 0
        self.io_warnings = 0
        if self.path is not None:
            self._open()

    def _open(self) -> None:
        try:
            if self.path.exists():
                self._load()
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "ab")
        except OSError as exc:
            self._degrade(exc)

    def _load(self) -> None:
        data = self.path.read_bytes()
        pos = 0
        good = 0
        while pos + _LEN.size <= len(data):
            (hlen,) = _LEN.unpack_from(data, pos)
            hstart = pos + _LEN.size
            if hstart + hlen > len(data):
                break
            try:
                header = json.loads(data[hstart : hstart + hlen])
            except ValueError:
                break
            bstart = hstart + hlen
            bend = bstart + header["body_len"]
            if bend > len(data):
                break
            self._entries[header["key"]] = CacheEntry(
                key=header["key"],
                response_bytes=data[bstart:bend],
                original_latency_s=header["latency_s"],
                input_tokens=header.get("input_tokens", 0),
                output_tokens=header.get("output_tokens", 0),
                created_at=header.get("created_at", 0.0),
                content_type=header.get("content_type"),
            )
            pos = good = bend
        if good < len(data):
            logger.warning("ignoring %d trailing bytes in cache file %s", len(data) - good, self.path)
            with open(self.path, "r+b") as fh:
                fh.truncate(good)

    def _degrade(self, exc: Exception) -> None:
        self.io_warnings += 1
        logger.warning("cache persistence disabled: %s", exc)
        if self._fh is not None:
            try:
                self._fh.close()
            except OSError:
                pass
        self._fh = None

    def _append(self, entry: CacheEntry) -> None:
        if self._fh is None:
            return
        header = canonical_json(
            {
                "key": entry.key,
                "latency_s": entry.original_latency_s,
                "input_tokens": entry.input_tokens,
                "output_tokens": entry.output_tokens,
                "created_at": entry.created_at,
                "content_type": entry.content_type,
                "body_len": len(entry.response_bytes),
            }
        )
        try:
            self._fh.write(_LEN.pack(len(header)) + header + entry.response_bytes)
            self._fh.flush()
        except OSError as exc:
            self._degrade(exc)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> CacheEntry | None:
        return self._entries.get(key)

    def put(self, entry: CacheEntry) -> None:
        with self._lock:
            # identical keys carry identical values, so last writer wins
            self._entries[entry.key] = entry
            self._append(entry)

    def lookup_or_execute(self, payload: bytes, executor: Callable[[], Execution]) -> CacheResult:
        key = payload_key(canonicalize(payload))
        entry = self._entries.get(key)
        if entry is not None:
            with self._lock:
                self.hits += 1
            return CacheResult(
                entry.response_bytes,
                entry.original_latency_s,
                entry.input_tokens,
                entry.output_tokens,
                True,
                key,
                entry.content_type,
            )
        result = executor()
        with self._lock:
            self.executions += 1
        self.put(
            CacheEntry(
                key,
                result.response_bytes,
                result.latency_s,
                result.input_tokens,
                result.output_tokens,
                time.time(),
                result.content_type,
            )
        )
        return CacheResult(
            result.response_bytes,
            result.latency_s,
            result.input_tokens,
            result.output_tokens,
            False,
            key,
            result.content_type,
        )

    def flush(self) -> None:
        if self._fh is not None:
            try:
                self._fh.flush()
                os.fsync(self._fh.fileno())
            except OSError as exc:
                self._degrade(exc)

    def close(self) -> None:
        self.flush()
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def cache_lookup_or_execute(cache: ResponseCache, payload_bytes: bytes, executor: Callable[[], Execution]) -> CacheResult:
    return cache.lookup_or_execute(payload_bytes, executor)

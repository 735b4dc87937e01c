"""Canonical byte encoding for hashable values.

Every digest the engine computes (task fingerprints, environment
fingerprints, workflow digests, directory tree manifests) is a SHA-256
over bytes produced by :func:`canon_bytes`. The encoding is a tagged,
length-delimited format over JSON-shaped values; the byte layout is
documented in docs/canonical-encoding.md and is frozen. Changing it
invalidates every cache on disk, which is why the task fingerprint
preimage carries a schema string instead of a library version.
"""

from __future__ import annotations

import hashlib
import math
import os
from typing import Union

Value = Union[None, bool, int, float, str, list, tuple, dict]


class CanonError(ValueError):
    """Raised for values outside the encodable domain."""


def canon_bytes(value: Value) -> bytes:
    """Encode *value* to its canonical byte form.

    Accepts None, bools, ints, finite floats, strings, lists/tuples,
    and dicts with string keys. Anything else (including NaN and
    infinities, whose ordering and rendering are platform bait) is a
    CanonError.
    """
    out = bytearray()
    _encode(value, out)
    return bytes(out)


def canon_digest(value: Value) -> str:
    """SHA-256 hex digest of the canonical encoding of *value*."""
    return hashlib.sha256(canon_bytes(value)).hexdigest()


def file_digest(path) -> str:
    """SHA-256 hex digest of a file's raw bytes, streamed."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            chunk = fh.read(1 << 20)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()


def tree_manifest(root) -> dict:
    """Canonical manifest of a directory: every regular file, recursively,
    keyed by /-separated relative path. Symlinks and empty dirs are not
    represented."""
    entries = {}
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            full = os.path.join(dirpath, name)
            if os.path.islink(full) or not os.path.isfile(full):
                continue
            rel = os.path.relpath(full, root).replace(os.sep, "/")
            entries[rel] = file_digest(full)
    return {"kind": "tree", "entries": entries}


def tree_digest(root) -> str:
    """Digest of a directory's canonical tree manifest."""
    return canon_digest(tree_manifest(root))


def canon_decode(data: bytes) -> Value:
    """Inverse of canon_bytes. The encoding is prefix-free, so decoding
    is unambiguous; trailing bytes are an error."""
    value, rest = _decode(memoryview(data))
    if len(rest):
        raise CanonError("trailing bytes after canonical value")
    return value


def _decode(buf):
    if not len(buf):
        raise CanonError("truncated canonical value")
    tag = buf[0:1].tobytes()
    if tag == b"n":
        return None, _expect_semi(buf[1:])
    if tag == b"t":
        return True, _expect_semi(buf[1:])
    if tag == b"f":
        return False, _expect_semi(buf[1:])
    if tag == b"i" or tag == b"d":
        end = bytes(buf).find(b";")
        if end < 1:
            raise CanonError("unterminated number")
        text = buf[1:end].tobytes().decode("ascii")
        return (int(text) if tag == b"i" else float(text)), buf[end + 1:]
    if tag == b"s":
        head = bytes(buf)
        colon = head.find(b":")
        if colon < 1:
            raise CanonError("malformed string length")
        length = int(head[1:colon])
        start = colon + 1
        raw = buf[start:start + length]
        if len(raw) != length or buf[start + length:start + length + 1].tobytes() != b";":
            raise CanonError("truncated string")
        return raw.tobytes().decode("utf-8"), buf[start + length + 1:]
    if tag == b"l":
        buf = buf[1:]
        items = []
        while True:
            if not len(buf):
                raise CanonError("unterminated list")
            if buf[0:1].tobytes() == b";":
                return items, buf[1:]
            item, buf = _decode(buf)
            items.append(item)
    if tag == b"m":
        buf = buf[1:]
        result = {}
        while True:
            if not len(buf):
                raise CanonError("unterminated map")
            if buf[0:1].tobytes() == b";":
                return result, buf[1:]
            key, buf = _decode(buf)
            if not isinstance(key, str):
                raise CanonError("map key must be a string")
            value, buf = _decode(buf)
            result[key] = value
    raise CanonError("unknown tag %r" % tag)


def _expect_semi(buf):
    if buf[0:1].tobytes() != b";":
        raise CanonError("missing terminator")
    return buf[1:]


def _encode(value: Value, out: bytearray) -> None:
    if value is None:
        out += b"n;"
    elif value is True:
        out += b"t;"
    elif value is False:
        out += b"f;"
    elif isinstance(value, int):
        out += b"i%d;" % value
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise CanonError("non-finite float has no canonical form: %r" % value)
        # repr() is the shortest decimal string that round-trips the
        # IEEE-754 double; that makes it stable across platforms.
        out += b"d" + repr(value).encode("ascii") + b";"
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out += b"s%d:" % len(raw)
        out += raw
        out += b";"
    elif isinstance(value, (list, tuple)):
        out += b"l"
        for item in value:
            _encode(item, out)
        out += b";"
    elif isinstance(value, dict):
        out += b"m"
        try:
            keys = sorted(value.keys(), key=lambda k: k.encode("utf-8"))
        except AttributeError:
            raise CanonError("map keys must be strings") from None
        for key in keys:
            _encode(key, out)
            _encode(value[key], out)
        out += b";"
    else:
        raise CanonError("value of type %s is not encodable" % type(value).__name__)

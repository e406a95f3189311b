"""Versioned on-disk format for constructed codes.

Layout, little-endian::

    b"PWCD"  u16 version  u32 header_length  header  body

``header`` is UTF-8 JSON with sorted keys holding the configuration, the
rate report, per-level capacities and a SHA-256 ``checksum`` over the
header (with an empty checksum field) followed by the body.  For every
level the body stores twelve ``float64`` vectors of length N (Bob, Eve
and source statistics, each as z_lower, z_upper, i_lower, i_upper; the
source block is NaN in mod mode), eight packed set bitmaps in the order
A B C D F I S dS, and the packed frozen bits.
"""

import hashlib
import json
import struct

import numpy as np

from .construction import (SET_NAMES, Code, CodeConfig, IndexSets, LevelData,
                           PolarStats)

MAGIC = b"PWCD"
VERSION = 1
_HEAD = "<4sHI"


class ChecksumError(ValueError):
    """Stored checksum does not match the file contents."""


def _stats_arrays(st, N):
    if st is None:
        return [np.full(N, np.nan)] * 4
    return [st.z_lower, st.z_upper, st.i_lower, st.i_upper]


def _body(code):
    N = code.N
    parts = []
    for lv in code.levels:
        for st in (lv.bob, lv.eve, lv.source):
            for arr in _stats_arrays(st, N):
                parts.append(np.asarray(arr, dtype="<f8").tobytes())
        for name in SET_NAMES:
            parts.append(np.packbits(getattr(lv.sets, name), bitorder="little").tobytes())
        parts.append(np.packbits(lv.frozen, bitorder="little").tobytes())
    return b"".join(parts)


def _header(code, checksum=""):
    d = {"format": "polarwiretap-code", "version": VERSION,
         "config": code.config.to_dict(), "rates": code.rates,
         "capacities": [[lv.bob_capacity, lv.eve_capacity] for lv in code.levels],
         "checksum": checksum}
    return json.dumps(d, sort_keys=True, separators=(",", ":")).encode()


def dumps(code):
    """Serialise ``code`` to bytes."""
    body = _body(code)
    digest = hashlib.sha256(_header(code) + body).hexdigest()
    head = _header(code, digest)
    return struct.pack(_HEAD, MAGIC, VERSION, len(head)) + head + body


def loads(data):
    """Parse bytes written by :func:`dumps`.

    Raises
    ------
    ChecksumError
        If the contents were altered.
    ValueError
        If the data is not a code file of a supported version.
    """
    size = struct.calcsize(_HEAD)
    if len(data) < size:
        raise ValueError("truncated code file")
    magic, version, hlen = struct.unpack_from(_HEAD, data)
    if magic != MAGIC:
        raise ValueError("not a code file")
    if version != VERSION:
        raise ValueError(f"unsupported code file version {version}")
    try:
        head = json.loads(data[size:size + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ChecksumError("code file header is corrupted") from None
    body = data[size + hlen:]
    stored = head.get("checksum", "")
    head["checksum"] = ""
    canon = json.dumps(head, sort_keys=True, separators=(",", ":")).encode()
    if hashlib.sha256(canon + body).hexdigest() != stored:
        raise ChecksumError("code file checksum mismatch")
    cfg = CodeConfig.from_dict(head["config"])
    N, r = cfg.N, cfg.r
    nb = (N + 7) // 8
    per = 12 * 8 * N + 9 * nb
    if len(body) != r * per:
        raise ChecksumError("code file body has wrong length")
    levels = []
    for l in range(r):
        chunk = body[l * per:(l + 1) * per]
        vecs = np.frombuffer(chunk, dtype="<f8", count=12 * N).reshape(12, N).astype(float)
        pos = 12 * 8 * N
        masks = []
        for _ in range(9):
            raw = np.frombuffer(chunk, dtype=np.uint8, count=nb, offset=pos)
            masks.append(np.unpackbits(raw, count=N, bitorder="little"))
            pos += nb
        sets = IndexSets(*[m.astype(bool) for m in masks[:8]])
        stats = [PolarStats(*vecs[4 * j:4 * j + 4]) for j in range(3)]
        src = None if cfg.mode == "mod" else stats[2]
        cb, ce = head["capacities"][l]
        levels.append(LevelData(sets, stats[0], stats[1], src,
                                masks[8].astype(np.uint8), cb, ce))
    return Code(cfg, tuple(levels), head["rates"])


def save(code, path):
    with open(path, "wb") as fh:
        fh.write(dumps(code))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())

"""Multilevel encoders and successive-cancellation decoders.

Bit vectors are ``uint8`` arrays whose leading axis indexes independent
frames, so a whole batch is encoded or decoded in one pass.  Message bits
of a frame are laid out level by level, in increasing index order over
the message set ``A`` of each level.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import lattice

LLR_CLIP = 700.0
FRAME_MAGIC = b"PWFR"
FRAME_VERSION = 1

FROZEN, INFO, MAPPED, MAP_RULE = 0, 1, 2, 3

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class DecodingError(RuntimeError):
    """Inputs to a decoder are inconsistent with the code."""


# ---------------------------------------------------------------------------
# hashing and the shaping map
# ---------------------------------------------------------------------------

def _mix(z):
    with np.errstate(over="ignore"):
        z = np.asarray(z, dtype=np.uint64) + _GOLD
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _to_unit(z):
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def hash_bits(bits, start=0):
    """Hash each row of a ``(T, n)`` bit array to a ``uint64``."""
    bits = np.asarray(bits, dtype=np.uint8)
    T, n = bits.shape
    pad = (-n) % 64
    words = np.packbits(np.pad(bits, ((0, 0), (0, pad))), axis=1, bitorder="little")
    words = words.view("<u8").astype(np.uint64)
    h = _mix(np.full(T, np.uint64(start) ^ np.uint64(n)))
    for k in range(words.shape[1]):
        h = _mix(h ^ words[:, k])
    return h


@dataclass(frozen=True)
class ShapingMap:
    """Pseudo-random threshold draws keyed by seed, level, index, block and
    a hash of everything decided before the index."""

    seed: int

    def key(self, level, index, block):
        k = _mix(np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF))
        k = _mix(k ^ np.uint64(level))
        k = _mix(k ^ np.uint64(index))
        return _mix(k ^ np.uint64(block))

    def draws(self, level, index, block, prefix_hash):
        """Uniform draws in ``[0, 1)``, one per entry of ``prefix_hash``."""
        return _to_unit(_mix(np.asarray(prefix_hash, dtype=np.uint64)
                             ^ self.key(level, index, block)))


def _advance(h, bits):
    with np.errstate(over="ignore"):
        return _mix(h ^ ((bits.astype(np.uint64) + np.uint64(1)) * _GOLD))


# ---------------------------------------------------------------------------
# polar transform and SC engine
# ---------------------------------------------------------------------------

def polar_transform(u):
    """``u F^{(x) m}`` over GF(2) for each row of ``u``."""
    x = np.array(u, dtype=np.uint8, copy=True)
    T, N = x.shape
    h = 1
    while h < N:
        v = x.reshape(T, N // (2 * h), 2, h)
        v[:, :, 0, :] ^= v[:, :, 1, :]
        h *= 2
    return x


def boxplus(a, b):
    """Exact check-node combination of two LLRs."""
    s = np.sign(a) * np.sign(b) * np.minimum(np.abs(a), np.abs(b))
    return s + np.log1p(np.exp(-np.abs(a + b))) - np.log1p(np.exp(-np.abs(a - b)))


def sc_run(llr, kinds, leaf, fixed=None, on_fixed=None):
    """Successive cancellation over a stack of LLR arrays.

    Parameters
    ----------
    llr : ndarray, shape (K, T, N)
        Per-position LLRs for ``K`` parallel views of the same frames.
    kinds : ndarray of int, shape (N,)
        Decision type per index; runs of ``FROZEN`` are skipped.
    leaf : callable
        ``leaf(i, L)`` with ``L`` of shape ``(K, T)`` returns the bits of
        index ``i``.
    fixed : ndarray, shape (T, N), optional
        Values for frozen indices.
    on_fixed : callable, optional
        Called as ``on_fixed(i, bits)`` for every frozen index in order.

    Returns
    -------
    u, x : ndarray
        Decided bits and their transform.
    """
    K, T, N = llr.shape
    u = np.zeros((T, N), dtype=np.uint8)
    frozen_prefix = np.concatenate([[0], np.cumsum(kinds == FROZEN)])

    def rec(L, off, n):
        if frozen_prefix[off + n] - frozen_prefix[off] == n:
            bits = fixed[:, off:off + n]
            u[:, off:off + n] = bits
            if on_fixed is not None:
                for j in range(n):
                    on_fixed(off + j, bits[:, j])
            return polar_transform(bits)
        if n == 1:
            bit = np.asarray(leaf(off, L[:, :, 0]), dtype=np.uint8)
            u[:, off] = bit
            return bit[:, None]
        h = n // 2
        a, b = L[..., :h], L[..., h:]
        va = rec(boxplus(a, b), off, h)
        vb = rec(b + np.where(va.astype(bool), -a, a), off + h, h)
        return np.concatenate([va ^ vb, vb], axis=1)

    x = rec(llr, 0, N)
    return u, x


def coset_llr(t, offset, period, s):
    """LLR of the level bit for observation ``t``.

    ``log sum exp(-(t - a)**2 / 2 s**2)`` over ``a`` in ``offset + period Z``
    minus the same over ``offset + period / 2 + period Z``, clipped to
    ``+-700``.
    """
    c = np.asarray(offset, dtype=float) - np.asarray(t, dtype=float)
    l0 = lattice.log_coset_mass(c, period, s)
    l1 = lattice.log_coset_mass(c + 0.5 * period, period, s)
    out = l0 - l1
    if np.any(np.isnan(out)):
        raise FloatingPointError("LLR evaluation produced NaN")
    return np.clip(out, -LLR_CLIP, LLR_CLIP)


# ---------------------------------------------------------------------------
# helpers on codes
# ---------------------------------------------------------------------------

def message_length(code):
    """Number of message bits carried by one frame."""
    return sum(int(np.count_nonzero(lv.sets.A)) for lv in code.levels)


def shaping_length(code):
    """Number of map-driven shaping bits in one frame."""
    return sum(int(np.count_nonzero(lv.sets.dS)) for lv in code.levels)


def _kinds(code, level):
    s = code.levels[level].sets
    k = np.full(code.N, INFO, dtype=np.int8)
    if code.shaped:
        k[s.F] = FROZEN
        k[s.S & ~s.dS] = MAP_RULE
        k[s.dS] = MAPPED
    else:
        k[s.C] = FROZEN
    return k


def _split_levels(code, bits, name="A"):
    bits = np.asarray(bits, dtype=np.uint8)
    out, pos = [], 0
    for lv in code.levels:
        n = int(np.count_nonzero(getattr(lv.sets, name)))
        out.append(bits[:, pos:pos + n])
        pos += n
    if pos != bits.shape[1]:
        raise ValueError(f"expected {pos} bits per frame, got {bits.shape[1]}")
    return out


def _offsets(chain, xs):
    off = np.zeros(xs[0].shape if xs else (0,), dtype=float)
    for j, x in enumerate(xs):
        off = off + chain.alpha * 2.0 ** j * x
    return off


def _as_frames(bits, width):
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim == 1:
        bits = bits[None, :]
    if bits.shape[1] != width:
        raise ValueError(f"expected {width} bits per frame, got {bits.shape[1]}")
    return bits


def reduce_mod(x, v):
    """Representative of ``x`` modulo ``vZ`` in ``[-v/2, v/2)``."""
    return np.remainder(x + 0.5 * v, v) - 0.5 * v


# ---------------------------------------------------------------------------
# mod-lattice mode
# ---------------------------------------------------------------------------

def encode_mod(code, messages, rng):
    """Encode message frames with uniform random fill on ``B`` and ``D``.

    Returns
    -------
    points : ndarray, shape (T, N)
        Transmitted points reduced into the centred cell of the bottom lattice.
    xs : list of ndarray
        Coded bits per level.
    """
    if code.shaped:
        raise ValueError("encode_mod needs a mod-mode code")
    messages = _as_frames(messages, message_length(code))
    T = messages.shape[0]
    parts = _split_levels(code, messages)
    xs = []
    for l, lv in enumerate(code.levels):
        s = lv.sets
        u = rng.integers(0, 2, (T, code.N), dtype=np.uint8)
        u[:, s.C] = lv.frozen[s.C]
        u[:, s.A] = parts[l]
        xs.append(polar_transform(u))
    chain = code.config.chain
    pts = reduce_mod(_offsets(chain, xs), chain.volume(chain.r))
    return pts, xs


def decode_mod(code, y, sigma):
    """Multistage SC decoding of mod-mode frames; returns message bits."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    chain = code.config.chain
    xs, msgs = [], []
    for l, lv in enumerate(code.levels):
        kinds = _kinds(code, l)
        off = _offsets(chain, xs) if xs else np.zeros_like(y)
        L = coset_llr(y, off, chain.volume(l + 1), sigma)[None]
        fixed = np.broadcast_to(lv.frozen, y.shape)

        def leaf(i, Li):
            return (Li[0] < 0).astype(np.uint8)

        u, x = sc_run(L, kinds, leaf, fixed)
        xs.append(x)
        msgs.append(u[:, lv.sets.A])
    return np.concatenate(msgs, axis=1)


# ---------------------------------------------------------------------------
# shaped mode
# ---------------------------------------------------------------------------

@dataclass
class ShapedBlock:
    """Encoder output for one block of shaped frames."""

    points: np.ndarray
    xs: list
    us: list
    shaping_bits: np.ndarray


def _sc_shaped(code, level, L, fixed, info, smap, block, prefix_hash,
               carried=None):
    """One level of shaped successive cancellation.

    ``L`` stacks the decision LLRs first and the prior LLRs last; for the
    encoder both are the prior.  ``info`` supplies bits for ``INFO``
    indices (encoder) or is ``None`` to decide them from ``L[0]``.
    ``carried`` supplies ``MAPPED`` bits instead of the shaping map.
    """
    kinds = _kinds(code, level)
    state = {"h": prefix_hash}
    mapped_pos = np.cumsum(kinds == MAPPED) - 1

    def push(bits):
        if smap is not None:
            state["h"] = _advance(state["h"], bits)

    def leaf(i, Li):
        kind = kinds[i]
        if kind == INFO:
            bit = info[:, i] if info is not None else (Li[0] < 0).astype(np.uint8)
        elif kind == MAP_RULE:
            bit = (Li[-1] < 0).astype(np.uint8)
        elif carried is not None:
            bit = carried[:, mapped_pos[i]]
        else:
            if smap is None:
                raise DecodingError("shaping bits need a map or carried values")
            p0 = expit(Li[-1])
            bit = (smap.draws(level + 1, i, block, state["h"]) >= p0).astype(np.uint8)
        bit = np.asarray(bit, dtype=np.uint8)
        push(bit)
        return bit

    def on_fixed(i, bits):
        push(bits)

    u, x = sc_run(L, kinds, leaf, fixed, on_fixed if smap is not None else None)
    return u, x


def encode_shaped(code, messages, rng, smap, block=0, carry=None):
    """Encode shaped frames.

    Parameters
    ----------
    code : Code
        Shaped-mode code.
    messages : ndarray, shape (T, message_length(code))
    rng : numpy.random.Generator
        Source of the random fill on ``I \\ A`` and the top-level residue.
    smap : ShapingMap
    block : int
        Block number, keys the shaping map.
    carry : ndarray, shape (T, n), optional
        Bits placed on the first ``n`` message positions instead of message
        bits (used for chaining blocks).

    Returns
    -------
    ShapedBlock
    """
    if not code.shaped:
        raise ValueError("encode_shaped needs a shaped-mode code")
    messages = _as_frames(messages, message_length(code))
    T = messages.shape[0]
    if carry is not None:
        carry = np.asarray(carry, dtype=np.uint8)
        messages = messages.copy()
        messages[:, :carry.shape[1]] = carry
    parts = _split_levels(code, messages)
    chain = code.config.chain
    xs, us, shaping = [], [], []
    for l, lv in enumerate(code.levels):
        s = lv.sets
        info = rng.integers(0, 2, (T, code.N), dtype=np.uint8)
        info[:, s.A] = parts[l]
        off = _offsets(chain, xs) if xs else np.zeros((T, code.N))
        L = coset_llr(0.0, off, chain.volume(l + 1), code.config.sigma_s)[None]
        h = hash_bits(np.concatenate(xs, axis=1), start=l + 1) if xs else \
            _mix(np.full(T, np.uint64(l + 1)))
        fixed = np.broadcast_to(lv.frozen, (T, code.N))
        u, x = _sc_shaped(code, l, L, fixed, info, smap, block, h)
        xs.append(x)
        us.append(u)
        shaping.append(u[:, s.dS])
    base = _offsets(chain, xs)
    vr = chain.volume(chain.r)
    pts = base + lattice.sample_discrete_gaussian(vr, -base, code.config.sigma_s, rng)
    return ShapedBlock(pts, xs, us, np.concatenate(shaping, axis=1))


def decode_shaped(code, y, sigma, smap=None, block=0, carried=None):
    """Multistage SC decoding of shaped frames.

    Shaping bits come from ``smap`` or, when given, from ``carried`` with
    shape ``(T, shaping_length(code))``.

    Returns
    -------
    messages : ndarray
    shaping_bits : ndarray
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    T, N = y.shape
    cfg = code.config
    chain = cfg.chain
    beta = lattice.mmse_coefficient(cfg.sigma_s, sigma)
    s_eff = lattice.mmse_sigma(cfg.sigma_s, sigma)
    carried_parts = _split_levels(code, carried, "dS") if carried is not None else None
    xs, msgs, shaping = [], [], []
    for l, lv in enumerate(code.levels):
        off = _offsets(chain, xs) if xs else np.zeros((T, N))
        Ly = coset_llr(beta * y, off, chain.volume(l + 1), s_eff)
        Lp = coset_llr(0.0, off, chain.volume(l + 1), cfg.sigma_s)
        L = np.stack([Ly, np.broadcast_to(Lp, Ly.shape)])
        h = hash_bits(np.concatenate(xs, axis=1), start=l + 1) if xs else \
            _mix(np.full(T, np.uint64(l + 1)))
        fixed = np.broadcast_to(lv.frozen, (T, N))
        u, x = _sc_shaped(code, l, L, fixed, None,
                          smap if carried is None else None, block, h,
                          None if carried_parts is None else carried_parts[l])
        xs.append(x)
        msgs.append(u[:, lv.sets.A])
        shaping.append(u[:, lv.sets.dS])
    return np.concatenate(msgs, axis=1), np.concatenate(shaping, axis=1)


# ---------------------------------------------------------------------------
# chained blocks
# ---------------------------------------------------------------------------

def chained_message_length(code, k):
    """Message bits carried by ``k`` chained blocks of one frame each."""
    a, d = message_length(code), shaping_length(code)
    if d > a:
        raise ValueError(f"{d} shaping bits do not fit in {a} message positions")
    return k * a - (k - 1) * d


@dataclass
class ChainedFrames:
    """``k`` blocks of shaped points plus the first block's shaping bits."""

    points: np.ndarray
    first_shaping: np.ndarray


def encode_chained(code, messages, k, rng, smap):
    """Encode ``k`` blocks whose shaping bits ride on the previous block.

    Blocks are encoded last to first.  The shaping bits of block ``j + 1``
    occupy the first message positions of block ``j``; those of block 1
    are returned separately.
    """
    if k < 2:
        raise ValueError("chaining needs k >= 2")
    total = chained_message_length(code, k)
    messages = _as_frames(messages, total)
    T = messages.shape[0]
    a, d = message_length(code), shaping_length(code)
    payload = [a - d] * (k - 1) + [a]
    starts = np.concatenate([[0], np.cumsum(payload)])
    pts = [None] * k
    carry = None
    for j in range(k - 1, -1, -1):
        body = messages[:, starts[j]:starts[j + 1]]
        if carry is None:
            frame = body
        else:
            frame = np.concatenate([carry, body], axis=1)
        out = encode_shaped(code, frame, rng, smap, block=j)
        pts[j] = out.points
        carry = out.shaping_bits
    return ChainedFrames(np.stack(pts), carry)


def decode_chained(code, y, sigma, first_shaping):
    """Decode chained blocks in order using carried shaping bits."""
    y = np.asarray(y, dtype=float)
    k = y.shape[0]
    a, d = message_length(code), shaping_length(code)
    carried = np.asarray(first_shaping, dtype=np.uint8)
    out = []
    for j in range(k):
        msg, _ = decode_shaped(code, y[j], sigma, None, j, carried)
        if j < k - 1:
            carried = msg[:, :d]
            out.append(msg[:, d:])
        else:
            out.append(msg)
    return np.concatenate(out, axis=1)


# ---------------------------------------------------------------------------
# message whitening
# ---------------------------------------------------------------------------

def one_time_pad(bits, key):
    """XOR ``bits`` with an equally long uniform ``key``."""
    bits = np.asarray(bits, dtype=np.uint8)
    key = np.asarray(key, dtype=np.uint8)
    if bits.shape != key.shape:
        raise ValueError("key must match message shape")
    return bits ^ key


# ---------------------------------------------------------------------------
# frame container
# ---------------------------------------------------------------------------

_FRAME_HEAD = "<4sHBIBHQI"


def pack_frames(points, mode, N, r, k, seed, first_shaping=None):
    """Serialise points (``float64``) and optional shaping bits.

    Layout, little-endian: magic ``PWFR``, u16 version, u8 mode (0 mod,
    1 shaped), u32 N, u8 r, u16 k, u64 seed, u32 frames; then
    ``k * frames * N`` doubles; then u32 shaping-bit count and the bits
    packed LSB first per frame.
    """
    points = np.asarray(points, dtype="<f8").reshape(k, -1, N)
    T = points.shape[1]
    head = struct.pack(_FRAME_HEAD, FRAME_MAGIC, FRAME_VERSION,
                       1 if mode == "shaped" else 0, N, r, k, seed, T)
    tail = b""
    nbits = 0
    if first_shaping is not None:
        fs = np.asarray(first_shaping, dtype=np.uint8).reshape(T, -1)
        nbits = fs.shape[1]
        tail = np.packbits(fs, axis=1, bitorder="little").tobytes()
    return head + points.tobytes() + struct.pack("<I", nbits) + tail


def unpack_frames(data):
    """Inverse of :func:`pack_frames`; returns a dict."""
    size = struct.calcsize(_FRAME_HEAD)
    magic, ver, mode, N, r, k, seed, T = struct.unpack_from(_FRAME_HEAD, data)
    if magic != FRAME_MAGIC:
        raise ValueError("not a frame container")
    if ver != FRAME_VERSION:
        raise ValueError(f"unsupported frame version {ver}")
    n = k * T * N
    pts = np.frombuffer(data, dtype="<f8", count=n, offset=size).reshape(k, T, N)
    pos = size + 8 * n
    (nbits,) = struct.unpack_from("<I", data, pos)
    pos += 4
    first = None
    if nbits:
        width = math.ceil(nbits / 8)
        raw = np.frombuffer(data, dtype=np.uint8, count=T * width, offset=pos)
        first = np.unpackbits(raw.reshape(T, width), axis=1, count=nbits,
                              bitorder="little")
    return {"mode": "shaped" if mode else "mod", "N": N, "r": r, "k": k,
            "seed": seed, "points": pts.copy(), "first_shaping": first}

"""Binary-input memoryless channels, their polar transforms and quantisers.

A symmetric channel is handled internally in *pair form*: each output pair
``{y, conj(y)}`` is stored once as ``(a, b)`` with ``a = W(y|0) >= b = W(y|1)``
and the conjugate symbol carrying ``(b, a)``.  A pair with ``a == b`` stands
for a single self-conjugate (erasure) symbol of mass ``2a``.  Pairs are kept
sorted by increasing likelihood ratio ``a / b``.
"""

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .lattice import PartitionChain

FLUSH = 1e-300
ROW_TOL = 1e-12
LR_TOL = 1e-12
CHANNEL_MAGIC = b"PWCH"
CHANNEL_VERSION = 1


class ChannelQuantizationError(RuntimeError):
    """Quantisation to the requested alphabet loses too much capacity."""

    def __init__(self, message, capacity_loss):
        super().__init__(message)
        self.capacity_loss = capacity_loss


# ---------------------------------------------------------------------------
# pair-form kernels
# ---------------------------------------------------------------------------

_LN2 = math.log(2.0)


def _h2(q):
    """Binary entropy in bits, accurate for small ``q``."""
    q = np.clip(np.asarray(q, dtype=float), 1e-300, 0.5)
    return -(q * np.log(q) + (1.0 - q) * np.log1p(-q)) / _LN2


def canonical_pairs(a, b):
    """Orient, flush, sort by likelihood ratio and merge equal-ratio pairs."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    hi = np.maximum(a, b)
    lo = np.minimum(a, b)
    hi = np.where(hi < FLUSH, 0.0, hi)
    lo = np.where(lo < FLUSH, 0.0, lo)
    t = hi + lo
    keep = t > 0
    hi, lo, t = hi[keep], lo[keep], t[keep]
    if hi.size == 0:
        raise ValueError("channel has no output mass")
    q = lo / t
    order = np.argsort(-q, kind="stable")
    hi, lo, q = hi[order], lo[order], q[order]
    if q.size > 1:
        new = np.empty(q.size, dtype=bool)
        new[0] = True
        new[1:] = (q[:-1] - q[1:]) > LR_TOL * q[:-1]
        if not new.all():
            starts = np.flatnonzero(new)
            hi = np.add.reduceat(hi, starts)
            lo = np.add.reduceat(lo, starts)
    return hi, lo


def _pair_count(a, b):
    return 2 * a.size - int(np.count_nonzero(a == b))


def _pair_z(a, b):
    return 2.0 * math.fsum(np.sqrt(a * b))


def _pair_i(a, b):
    t = a + b
    return math.fsum(t * (1.0 - _h2(b / t)))


def _target_pairs(a, b, mu):
    erasure = int(np.count_nonzero(a == b) > 0)
    return max((mu + erasure) // 2, 1)


def _select(cost, need):
    """Cheapest positions, at most ``need`` and at most half of the
    candidates, with no two adjacent."""
    n = cost.size
    k = int(min(need, max(n // 2, 1)))
    if k < n:
        cand = np.argpartition(cost, k - 1)[:k]
    else:
        cand = np.arange(n)
    cand.sort()
    if cand.size > 1:
        # within runs of consecutive picks keep every other one
        brk = np.concatenate([[True], np.diff(cand) > 1])
        run_start = np.maximum.accumulate(np.where(brk, np.arange(cand.size), 0))
        cand = cand[(np.arange(cand.size) - run_start) % 2 == 0]
    return cand


def degrade_pairs(a, b, mu):
    """Greedy adjacent merging with minimum capacity loss until at most ``mu``
    output symbols remain.  Input must be canonical."""
    while _pair_count(a, b) > mu and a.size > 1:
        target = _target_pairs(a, b, mu)
        need = a.size - target
        if need <= 0:
            # only the erasure accounting is over budget
            need = 1
        t = a + b
        cap = t * (1.0 - _h2(b / t))
        ma, mb = a[:-1] + a[1:], b[:-1] + b[1:]
        mt = ma + mb
        cost = cap[:-1] + cap[1:] - mt * (1.0 - _h2(mb / mt))
        sel = _select(cost, need)
        a = a.copy()
        b = b.copy()
        a[sel] = ma[sel]
        b[sel] = mb[sel]
        drop = np.zeros(a.size, dtype=bool)
        drop[sel + 1] = True
        a, b = a[~drop], b[~drop]
    return a, b


def upgrade_pairs(a, b, mu):
    """Upgrade by splitting interior symbols onto their likelihood-ratio
    neighbours until at most ``mu`` output symbols remain.  Input must be
    canonical; the extreme symbols are kept as anchors."""
    if mu < 3:
        raise ValueError("upgrading needs mu >= 3")
    while _pair_count(a, b) > mu and a.size > 2:
        target = max(_target_pairs(a, b, mu), 2)
        need = max(a.size - target, 1)
        t = a + b
        q = b / t
        h = _h2(q)
        ql, qm, qr = q[:-2], q[1:-1], q[2:]
        span = ql - qr
        theta = np.where(span > 0, (qm - qr) / np.where(span > 0, span, 1.0), 0.5)
        cost = t[1:-1] * (h[1:-1] - theta * h[:-2] - (1.0 - theta) * h[2:])
        sel = _select(cost, need) + 1
        th = theta[sel - 1]
        gain = np.zeros(a.size)
        np.add.at(gain, sel - 1, th * t[sel])
        np.add.at(gain, sel + 1, (1.0 - th) * t[sel])
        scale = 1.0 + gain / t
        a = a * scale
        b = b * scale
        drop = np.zeros(a.size, dtype=bool)
        drop[sel] = True
        a, b = a[~drop], b[~drop]
    if _pair_count(a, b) > mu:
        # two proper pairs and mu == 3: split the noisier one between an
        # erasure and the better pair
        t = a + b
        q = b / t
        theta = (q[0] - q[1]) / (0.5 - q[1])
        e = 0.5 * theta * t[0]
        s = 1.0 + (1.0 - theta) * t[0] / t[1]
        a = np.array([e, a[1] * s])
        b = np.array([e, b[1] * s])
    return a, b


def minus_pairs(a1, b1, a2, b2):
    """Pair form of the check-node (minus) transform."""
    A = np.multiply.outer(a1, a2) + np.multiply.outer(b1, b2)
    B = np.multiply.outer(a1, b2) + np.multiply.outer(b1, a2)
    return canonical_pairs(A, B)


def plus_pairs(a1, b1, a2, b2):
    """Pair form of the variable-node (plus) transform."""
    A = np.concatenate([np.multiply.outer(a1, a2).ravel(),
                        np.multiply.outer(a1, b2).ravel()])
    B = np.concatenate([np.multiply.outer(b1, b2).ravel(),
                        np.multiply.outer(b1, a2).ravel()])
    return canonical_pairs(A, B)


# ---------------------------------------------------------------------------
# public channel type
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BmsChannel:
    """Binary-input channel given by likelihood pairs ``(W(y|0), W(y|1))``.

    Symmetric channels are stored sorted by decreasing likelihood ratio with
    equal-ratio symbols merged.
    """

    w0: np.ndarray
    w1: np.ndarray
    symmetric: bool = False
    _pairs: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        w0 = np.asarray(self.w0, dtype=float).ravel()
        w1 = np.asarray(self.w1, dtype=float).ravel()
        if w0.shape != w1.shape or w0.size == 0:
            raise ValueError("likelihood arrays must be non-empty and equal length")
        if np.any(w0 < 0) or np.any(w1 < 0) or not (np.all(np.isfinite(w0))
                                                     and np.all(np.isfinite(w1))):
            raise ValueError("likelihoods must be finite and non-negative")
        if abs(w0.sum() - 1.0) > ROW_TOL or abs(w1.sum() - 1.0) > ROW_TOL:
            raise ValueError("each input row must sum to 1")
        if self.symmetric and self._pairs is None:
            if not _is_symmetric(w0, w1):
                raise ValueError("symbols do not pair up under input swap")
            pairs = canonical_pairs(0.5 * np.maximum(w0, w1), 0.5 * np.minimum(w0, w1))
            w0, w1 = _pairs_to_table(*pairs)
            object.__setattr__(self, "_pairs", pairs)
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "w1", w1)

    @classmethod
    def from_pairs(cls, a, b):
        """Build a symmetric channel from pair form ``(a, b)``."""
        pairs = canonical_pairs(a, b)
        w0, w1 = _pairs_to_table(*pairs)
        return cls(w0, w1, True, pairs)

    @property
    def pairs(self):
        if not self.symmetric:
            raise ValueError("pair form exists only for symmetric channels")
        return self._pairs

    @property
    def size(self):
        return self.w0.size

    def __eq__(self, other):
        if not isinstance(other, BmsChannel):
            return NotImplemented
        return (self.symmetric == other.symmetric
                and np.array_equal(self.w0, other.w0)
                and np.array_equal(self.w1, other.w1))

    __hash__ = None

    # serialisation -------------------------------------------------------

    def to_bytes(self):
        """Versioned little-endian binary form."""
        head = CHANNEL_MAGIC + struct.pack("<HBQ", CHANNEL_VERSION,
                                           int(self.symmetric), self.size)
        body = np.column_stack([self.w0, self.w1]).astype("<f8").tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, data):
        if data[:4] != CHANNEL_MAGIC:
            raise ValueError("not a channel table")
        version, sym, n = struct.unpack_from("<HBQ", data, 4)
        if version != CHANNEL_VERSION:
            raise ValueError(f"unsupported channel table version {version}")
        off = 4 + struct.calcsize("<HBQ")
        if len(data) != off + 16 * n:
            raise ValueError("channel table has wrong length")
        tab = np.frombuffer(data, dtype="<f8", offset=off).reshape(n, 2)
        return cls(tab[:, 0].copy(), tab[:, 1].copy(), bool(sym))

    def to_json(self):
        return json.dumps({"version": CHANNEL_VERSION, "symmetric": self.symmetric,
                           "w0": self.w0.tolist(), "w1": self.w1.tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if d.get("version") != CHANNEL_VERSION:
            raise ValueError("unsupported channel table version")
        return cls(np.array(d["w0"]), np.array(d["w1"]), bool(d["symmetric"]))


def _is_symmetric(w0, w1):
    lhs = np.lexsort((w1, w0))
    rhs = np.lexsort((w0, w1))
    scale = max(w0.max(), w1.max())
    return (np.allclose(w0[lhs], w1[rhs], rtol=1e-9, atol=1e-15 * scale)
            and np.allclose(w1[lhs], w0[rhs], rtol=1e-9, atol=1e-15 * scale))


def _pairs_to_table(a, b):
    er = a == b
    na = ~er
    # decreasing likelihood ratio: good halves (reversed), erasure, bad halves
    w0 = np.concatenate([a[na][::-1], 2.0 * a[er], b[na]])
    w1 = np.concatenate([b[na][::-1], 2.0 * b[er], a[na]])
    return w0, w1


def bsc(p):
    """Binary symmetric channel with crossover ``p``."""
    return BmsChannel(np.array([1.0 - p, p]), np.array([p, 1.0 - p]), True)


def bec(eps):
    """Binary erasure channel with erasure probability ``eps``."""
    return BmsChannel(np.array([1.0 - eps, eps, 0.0]),
                      np.array([0.0, eps, 1.0 - eps]), True)


def bhattacharyya(ch):
    """``sum_y sqrt(W(y|0) W(y|1))``."""
    return math.fsum(np.sqrt(ch.w0 * ch.w1))


def mutual_information(ch):
    """Mutual information in bits with a uniform input."""
    mix = 0.5 * (ch.w0 + ch.w1)
    total = []
    for w in (ch.w0, ch.w1):
        m = w > 0
        total.append(0.5 * w[m] * np.log2(w[m] / mix[m]))
    return max(0.0, math.fsum(np.concatenate(total)))


def polar_split(ch):
    """Minus and plus transforms of a symmetric channel, without merging."""
    if not ch.symmetric:
        raise ValueError("polar_split needs a symmetric channel")
    a, b = ch.pairs
    return (BmsChannel.from_pairs(*minus_pairs(a, b, a, b)),
            BmsChannel.from_pairs(*plus_pairs(a, b, a, b)))


def degrade_merge(ch, mu):
    """Degraded version of a symmetric channel with at most ``mu`` symbols."""
    if mu < 2:
        raise ValueError("mu must be at least 2")
    if not ch.symmetric:
        raise ValueError("merging needs a symmetric channel")
    return BmsChannel.from_pairs(*degrade_pairs(*ch.pairs, mu))


def upgrade_merge(ch, mu):
    """Upgraded version of a symmetric channel with at most ``mu`` symbols."""
    if not ch.symmetric:
        raise ValueError("merging needs a symmetric channel")
    return BmsChannel.from_pairs(*upgrade_pairs(*ch.pairs, mu))


# ---------------------------------------------------------------------------
# asymmetric pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AsymPair:
    """Joint law ``P(x, y)`` of a binary source ``x`` and side output ``y``.

    ``joint[x, y]``; the table must sum to 1.
    """

    joint: np.ndarray

    def __post_init__(self):
        j = np.asarray(self.joint, dtype=float)
        if j.ndim != 2 or j.shape[0] != 2:
            raise ValueError("joint must have shape (2, n_outputs)")
        if np.any(j < 0) or abs(j.sum() - 1.0) > ROW_TOL:
            raise ValueError("joint must be a probability table")
        object.__setattr__(self, "joint", j)

    @property
    def prior(self):
        return self.joint.sum(axis=1)


def asym_bhattacharyya(pair):
    """``2 sum_y sqrt(P(0, y) P(1, y))``."""
    return 2.0 * math.fsum(np.sqrt(pair.joint[0] * pair.joint[1]))


def symmetrize(pair):
    """Symmetric channel from ``x~`` to ``(y, x xor x~)``.

    Its likelihood of ``(y, s)`` given ``x~`` is ``P(s xor x~, y)``.
    """
    p0, p1 = pair.joint
    return BmsChannel(np.concatenate([p0, p1]), np.concatenate([p1, p0]), True)


# ---------------------------------------------------------------------------
# quantised lattice partition channels
# ---------------------------------------------------------------------------

def _gauss_interval(lo, hi):
    """``Phi(hi) - Phi(lo)`` with the tail-accurate form on each side."""
    right = lo > 0
    return np.where(right, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))


def periodic_gauss_mass(lo, hi, shift, v, sigma):
    """Mass on ``[lo, hi]`` of ``sum_k N(z - shift - k v; sigma)``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if sigma >= 0.5 * v:
        jmax = int(math.ceil(6.1 * v / (math.sqrt(2.0) * math.pi * sigma))) + 1
        j = np.arange(1, jmax + 1, dtype=float)
        q = np.exp(-2.0 * (math.pi * sigma * j / v) ** 2) / (math.pi * j)
        w = 2.0 * math.pi * j / v
        s = (np.sin(np.multiply.outer(hi - shift, w))
             - np.sin(np.multiply.outer(lo - shift, w))) @ q
        return np.maximum((hi - lo) / v + s, 0.0)
    span_lo = float(np.min(lo)) - shift
    span_hi = float(np.max(hi)) - shift
    kmin = math.floor((span_lo - 40.0 * sigma) / v)
    kmax = math.ceil((span_hi + 40.0 * sigma) / v)
    total = np.zeros(np.broadcast(lo, hi).shape)
    for k in range(kmin, kmax + 1):
        c = shift + k * v
        total += _gauss_interval((lo - c) / sigma, (hi - c) / sigma)
    return total


def _quantile_edges(lo, hi, density_mass, count, grid=4096):
    x = np.linspace(lo, hi, grid + 1)
    m = density_mass(x[:-1], x[1:])
    cum = np.concatenate([[0.0], np.cumsum(m)])
    if cum[-1] <= 0:
        return np.linspace(lo, hi, count + 1)
    return np.interp(np.linspace(0.0, cum[-1], count + 1), cum, x)


def _finish(a, b, mu, max_loss):
    a, b = canonical_pairs(a, b)
    # binning truncation and full tables listing both conjugates
    total = math.fsum(a) + math.fsum(b)
    a, b = a / total, b / total
    fine = _pair_i(a, b)
    a, b = degrade_pairs(a, b, mu)
    loss = fine - _pair_i(a, b)
    if loss > max_loss:
        raise ChannelQuantizationError(
            f"quantising to {mu} symbols loses {loss:.3e} bits", loss)
    return BmsChannel.from_pairs(a, b)


def make_partition_channel(chain, level, sigma, mu, max_loss=1e-2):
    """Quantised channel of the partition ``L_{level-1} / L_level``.

    Lower bits are fixed to zero.  The output is the fundamental region of
    ``L_level``; by symmetry only ``[0, v/4]`` is binned, first into about
    ``8 mu`` cells mixing equal-mass and equal-width edges, then degraded
    to ``mu`` symbols.
    """
    if not 1 <= level <= chain.r:
        raise ValueError("level out of range")
    if mu < 8:
        raise ValueError("mu must be at least 8")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    v = chain.volume(level)
    half = 0.5 * v

    def m0(lo, hi):
        return periodic_gauss_mass(lo, hi, 0.0, v, sigma)

    def m1(lo, hi):
        return periodic_gauss_mass(lo, hi, half, v, sigma)

    top = 0.25 * v
    edges = np.unique(np.concatenate([
        _quantile_edges(0.0, top, lambda lo, hi: m0(lo, hi) + m1(lo, hi), 4 * mu),
        np.linspace(0.0, top, 4 * mu + 1)]))
    lo, hi = edges[:-1], edges[1:]
    return _finish(2.0 * m0(lo, hi), 2.0 * m1(lo, hi), mu, max_loss)


def make_equivalent_channel(chain, level, sigma, mu, max_loss=1e-2):
    """Quantised level channel observed on the fundamental region of the
    bottom lattice ``L_r``, with the bits above ``level`` uniform and the
    bits below fixed to zero."""
    if not 1 <= level <= chain.r:
        raise ValueError("level out of range")
    if mu < 8:
        raise ValueError("mu must be at least 8")
    v = chain.volume(level)
    vr = chain.volume(chain.r)
    reps = 2 ** (chain.r - level)
    bins = 2 * reps * 4 * mu
    edges = np.linspace(0.0, vr, bins + 1)
    lo, hi = edges[:-1], edges[1:]
    w0 = periodic_gauss_mass(lo, hi, 0.0, v, sigma) / reps
    w1 = periodic_gauss_mass(lo, hi, 0.5 * v, v, sigma) / reps
    return _finish(w0, w1, mu, max_loss)


def partition_chain(alpha, r):
    return PartitionChain(alpha, r)

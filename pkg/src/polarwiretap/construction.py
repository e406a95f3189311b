"""Code construction: polarised statistics, index partitions, rate report."""

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import lattice
from .channel import (BmsChannel, canonical_pairs, degrade_pairs,
                      make_partition_channel, minus_pairs, plus_pairs,
                      upgrade_pairs, _pair_i, _pair_z)
from .lattice import PartitionChain

THREADS_ENV = "POLARWIRETAP_THREADS"
DEGRADED_TOL = 1e-6


class WiretapConfigError(ValueError):
    """Configuration does not describe a valid degraded wiretap instance."""


# ---------------------------------------------------------------------------
# polarisation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolarStats:
    """Per-index Bhattacharyya and mutual-information bounds.

    Lower Z / upper I come from upgraded channels, upper Z / lower I from
    degraded channels.  Index ``i`` follows ``u G_N`` with
    ``G_N = F^{(x) m}`` in natural order.
    """

    z_lower: np.ndarray
    z_upper: np.ndarray
    i_lower: np.ndarray
    i_upper: np.ndarray


def _log2_exact(n):
    if n < 1 or n & (n - 1):
        raise ValueError("N must be a power of two")
    return n.bit_length() - 1


def _polarize_path(a, b, m, reduce):
    layer = [(a, b)]
    for _ in range(m):
        nxt = []
        for a1, b1 in layer:
            mn = minus_pairs(a1, b1, a1, b1)
            pl = plus_pairs(a1, b1, a1, b1)
            if reduce is not None:
                mn, pl = reduce(*mn), reduce(*pl)
            nxt.append(mn)
            nxt.append(pl)
        layer = nxt
    z = np.array([_pair_z(*p) for p in layer])
    i = np.array([_pair_i(*p) for p in layer])
    return np.clip(z, 0.0, 1.0), np.clip(i, 0.0, 1.0)


def polarize_statistics(ch, N, mu=None):
    """Sandwich bounds for the ``N`` synthetic channels of ``ch``.

    Parameters
    ----------
    ch : BmsChannel
        Symmetric channel.
    N : int
        Block length, a power of two.
    mu : int or None
        Output alphabet bound after each transform.  ``None`` skips merging,
        which is exact but only feasible for small ``N``.
    """
    if not ch.symmetric:
        raise ValueError("polarisation needs a symmetric channel")
    m = _log2_exact(int(N))
    a, b = ch.pairs
    if mu is None:
        z, i = _polarize_path(a, b, m, None)
        return PolarStats(z, z.copy(), i, i.copy())
    if mu < 4:
        raise ValueError("mu must be at least 4")
    zd, id_ = _polarize_path(a, b, m, lambda x, y: degrade_pairs(x, y, mu))
    zu, iu = _polarize_path(*upgrade_pairs(a, b, mu), m,
                            lambda x, y: upgrade_pairs(x, y, mu))
    return PolarStats(np.minimum(zu, zd), zd, id_, np.maximum(iu, id_))


# ---------------------------------------------------------------------------
# policies and configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdPolicy:
    """Good means ``Z <= delta_good``; bad means ``Z >= 1 - delta_bad``."""

    delta_good: float = 1e-5
    delta_bad: float = 1e-5

    def deltas(self, N):
        return self.delta_good, self.delta_bad

    def to_dict(self):
        return {"kind": "threshold", "delta_good": self.delta_good,
                "delta_bad": self.delta_bad}


@dataclass(frozen=True)
class BetaPolicy:
    """Thresholds ``2 ** -(N ** beta)`` for both sides."""

    beta: float = 0.45

    def deltas(self, N):
        if not 0 < self.beta < 0.5:
            raise WiretapConfigError("beta must lie in (0, 0.5)")
        d = 2.0 ** (-(N ** self.beta))
        return d, d

    def to_dict(self):
        return {"kind": "beta", "beta": self.beta}


@dataclass(frozen=True)
class RateTargetPolicy:
    """Pick the ``N (I_bob - backoff)`` best indices for Bob and the
    ``N (1 - I_eve)`` worst for Eve on each level.

    Threshold sets with ``delta`` are always included, so the rank-based
    choice only adds indices.
    """

    backoff: float = 0.0
    delta: float = 1e-5

    def deltas(self, N):
        return self.delta, self.delta

    def to_dict(self):
        return {"kind": "rate", "backoff": self.backoff, "delta": self.delta}


def policy_from_dict(d):
    kind = d.get("kind", "threshold")
    if kind == "threshold":
        return ThresholdPolicy(float(d.get("delta_good", 1e-5)),
                               float(d.get("delta_bad", 1e-5)))
    if kind == "beta":
        return BetaPolicy(float(d.get("beta", 0.45)))
    if kind == "rate":
        return RateTargetPolicy(float(d.get("backoff", 0.0)),
                                float(d.get("delta", 1e-5)))
    raise WiretapConfigError(f"unknown policy kind {kind!r}")


@dataclass(frozen=True)
class CodeConfig:
    """Parameters of a polar lattice wiretap code.

    ``mode`` is ``"mod"`` (uniform points reduced modulo the bottom lattice)
    or ``"shaped"`` (discrete Gaussian points of deviation ``sigma_s``).
    """

    N: int
    alpha: float
    r: int
    sigma_b: float
    sigma_e: float
    mode: str = "mod"
    sigma_s: float = None
    policy: object = field(default_factory=ThresholdPolicy)
    mu: int = 64
    seed: int = 0

    def __post_init__(self):
        try:
            _log2_exact(int(self.N))
        except ValueError as exc:
            raise WiretapConfigError(str(exc)) from None
        if self.mode not in ("mod", "shaped"):
            raise WiretapConfigError("mode must be 'mod' or 'shaped'")
        if not (self.sigma_b > 0 and self.sigma_e > 0):
            raise WiretapConfigError("noise deviations must be positive")
        if self.mode == "shaped" and not (self.sigma_s and self.sigma_s > 0):
            raise WiretapConfigError("shaped mode needs sigma_s > 0")
        if self.mu < 8:
            raise WiretapConfigError("mu must be at least 8")
        try:
            PartitionChain(self.alpha, self.r)
        except ValueError as exc:
            raise WiretapConfigError(str(exc)) from None

    @property
    def chain(self):
        return PartitionChain(self.alpha, self.r)

    def channel_sigmas(self):
        """Noise deviations of Bob's and Eve's level channels."""
        if self.mode == "shaped":
            return (lattice.mmse_sigma(self.sigma_s, self.sigma_b),
                    lattice.mmse_sigma(self.sigma_s, self.sigma_e))
        return self.sigma_b, self.sigma_e

    def to_dict(self):
        return {"N": self.N, "alpha": self.alpha, "r": self.r,
                "sigma_b": self.sigma_b, "sigma_e": self.sigma_e,
                "mode": self.mode, "sigma_s": self.sigma_s,
                "policy": self.policy.to_dict(), "mu": self.mu, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(N=int(d["N"]), alpha=float(d["alpha"]), r=int(d["r"]),
                   sigma_b=float(d["sigma_b"]), sigma_e=float(d["sigma_e"]),
                   mode=d.get("mode", "mod"),
                   sigma_s=None if d.get("sigma_s") is None else float(d["sigma_s"]),
                   policy=policy_from_dict(d.get("policy", {})),
                   mu=int(d.get("mu", 64)), seed=int(d.get("seed", 0)))


# ---------------------------------------------------------------------------
# index sets
# ---------------------------------------------------------------------------

SET_NAMES = ("A", "B", "C", "D", "F", "I", "S", "dS")


@dataclass(frozen=True)
class IndexSets:
    """Boolean masks over ``0..N-1`` for one level.

    ``A, B, C, D`` split indices by Bob-good / Eve-bad.  In shaped mode
    ``F`` (frozen), ``I`` (information) and ``S`` (shaping) split them again
    and ``dS`` is the part of ``S`` filled by the random shaping map.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F: np.ndarray
    I: np.ndarray
    S: np.ndarray
    dS: np.ndarray

    def indices(self, name):
        return np.flatnonzero(getattr(self, name))

    def sizes(self):
        return {k: int(np.count_nonzero(getattr(self, k))) for k in SET_NAMES}

    def check(self, shaped):
        """Raise ``AssertionError`` if a structural invariant fails."""
        quad = self.A.astype(int) + self.B + self.C + self.D
        assert np.all(quad == 1), "A, B, C, D must partition the indices"
        if shaped:
            tri = self.F.astype(int) + self.I + self.S
            assert np.all(tri == 1), "F, I, S must partition the indices"
            assert not np.any(self.dS & ~self.S), "dS must lie in S"
            assert not np.any(self.A & self.S), "A must avoid S"
            assert not np.any(self.A & ~self.I), "A must lie in I"
            assert not np.any(self.D & ~self.S), "D must lie in S"
        else:
            for k in ("F", "I", "S", "dS"):
                assert not np.any(getattr(self, k)), f"{k} is unused in mod mode"


@dataclass(frozen=True)
class LevelData:
    sets: IndexSets
    bob: PolarStats
    eve: PolarStats
    source: PolarStats
    frozen: np.ndarray
    bob_capacity: float
    eve_capacity: float


@dataclass(frozen=True)
class Code:
    """A constructed multilevel code."""

    config: CodeConfig
    levels: tuple
    rates: dict

    @property
    def N(self):
        return self.config.N

    @property
    def r(self):
        return self.config.r

    @property
    def shaped(self):
        return self.config.mode == "shaped"

    def check(self):
        for lv in self.levels:
            lv.sets.check(self.shaped)
        for upper, lower in zip(self.levels, self.levels[1:]):
            assert not np.any(lower.sets.C & ~upper.sets.C), "C sets must be nested"


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def _threads(threads):
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(threads))


def source_pair_form(chain, sigma_s, level):
    """Pair form of the symmetrised source at ``level``.

    Each pair is ``(P(prefix, x=0), P(prefix, x=1))`` for one value of the
    lower bits under ``D_{alpha Z, sigma_s}``.
    """
    n = 2 ** (level - 1)
    prefixes = (np.arange(n)[:, None] >> np.arange(level - 1)) & 1
    offs = chain.coset_offset(prefixes)
    period = chain.volume(level)
    l0 = lattice.log_coset_mass(offs, period, sigma_s)
    l1 = lattice.log_coset_mass(offs + 0.5 * period, period, sigma_s)
    tot = np.logaddexp.reduce(np.concatenate([l0, l1]))
    return canonical_pairs(np.exp(l0 - tot), np.exp(l1 - tot))


def _stats_task(kind, chain, level, sigma, cfg):
    if kind == "source":
        a, b = source_pair_form(chain, cfg.sigma_s, level)
        ch = BmsChannel.from_pairs(a, b)
        return polarize_statistics(ch, cfg.N, cfg.mu), None
    ch = make_partition_channel(chain, level, sigma, cfg.mu)
    return polarize_statistics(ch, cfg.N, cfg.mu), ch


def _monotone_levels(stats):
    """Tighten bounds using that level ``l`` is degraded w.r.t. ``l + 1``."""
    low = np.maximum.accumulate(np.array([s.z_lower for s in stats])[::-1], axis=0)[::-1]
    up = np.minimum.accumulate(np.array([s.z_upper for s in stats]), axis=0)
    return low, up


def _partition_masks(good, bad):
    return good & bad, good & ~bad, ~good & bad, ~good & ~bad


def secrecy_partition(z_bob_upper, z_eve_lower, delta_good, delta_bad):
    """Split indices into ``(A, B, C, D)`` by Bob-good and Eve-bad.

    Good means ``z_bob_upper <= delta_good``; bad means
    ``z_eve_lower >= 1 - delta_bad``.

    Raises
    ------
    WiretapConfigError
        If Eve's statistics are better than Bob's anywhere.
    """
    zb = np.asarray(z_bob_upper, dtype=float)
    ze = np.asarray(z_eve_lower, dtype=float)
    if zb.shape != ze.shape:
        raise ValueError("statistics must have equal length")
    if np.any(ze < zb - DEGRADED_TOL):
        raise WiretapConfigError("eavesdropper statistics are not degraded")
    return _partition_masks(zb <= delta_good, ze >= 1.0 - delta_bad)


def shaping_partition(z_bob_lower, z_src_lower, z_src_upper, good, bad,
                      delta_good, delta_bad):
    """Split indices into frozen, information and shaping sets.

    ``F`` is unreliable even to Bob, ``I`` is reliable to Bob and either
    uniform given the past or hidden from Eve, ``S`` is the rest and ``dS``
    drops from ``S`` the indices a MAP rule settles.

    Returns
    -------
    F, I, S, dS : ndarray of bool
    """
    F = np.asarray(z_bob_lower) >= 1.0 - delta_bad
    I = good & ((np.asarray(z_src_lower) >= 1.0 - delta_bad) | bad) & ~F
    S = ~F & ~I
    dS = S & ~(np.asarray(z_src_upper) <= delta_good)
    return F, I, S, dS


def _top(score, k, largest):
    k = int(min(max(k, 0), score.size))
    mask = np.zeros(score.size, dtype=bool)
    if k:
        order = np.argsort(-score if largest else score, kind="stable")
        mask[order[:k]] = True
    return mask


def assemble_code(config, threads=None):
    """Construct the code described by ``config``.

    Raises
    ------
    WiretapConfigError
        If Eve's synthetic channels are not degraded w.r.t. Bob's, or if
        no level carries a message bit while ``sigma_e > sigma_b``.
    """
    cfg = config
    chain = cfg.chain
    sig_b, sig_e = cfg.channel_sigmas()
    if cfg.sigma_e < cfg.sigma_b:
        raise WiretapConfigError("eavesdropper channel is not degraded (sigma_e < sigma_b)")
    if cfg.sigma_e == cfg.sigma_b:
        warnings.warn("zero secrecy capacity: sigma_e equals sigma_b", RuntimeWarning)
    levels = range(1, cfg.r + 1)
    tasks = [("bob", l, sig_b) for l in levels] + [("eve", l, sig_e) for l in levels]
    if cfg.mode == "shaped":
        tasks += [("source", l, None) for l in levels]
    with ThreadPoolExecutor(_threads(threads)) as pool:
        results = list(pool.map(lambda t: _stats_task(t[0], chain, t[1], t[2], cfg), tasks))
    res = {(t[0], t[1]): out for t, out in zip(tasks, results)}
    bob = [res[("bob", l)][0] for l in levels]
    eve = [res[("eve", l)][0] for l in levels]
    cap_b = [_pair_i(*res[("bob", l)][1].pairs) for l in levels]
    cap_e = [_pair_i(*res[("eve", l)][1].pairs) for l in levels]
    src = [res[("source", l)][0] for l in levels] if cfg.mode == "shaped" else None

    for l in range(cfg.r):
        if np.any(eve[l].z_upper < bob[l].z_lower - DEGRADED_TOL):
            raise WiretapConfigError(
                f"eavesdropper channel is not degraded at level {l + 1}")

    bob_low, bob_up = _monotone_levels(bob)
    eve_low, eve_up = _monotone_levels(eve)
    eve_low = np.maximum(eve_low, bob_low)
    bob_up = np.minimum(bob_up, eve_up)
    bob_low = np.minimum(bob_low, bob_up)
    # brackets that cross by rounding collapse onto the upper value
    eve_low = np.minimum(eve_low, eve_up)

    N = cfg.N
    dg, db = cfg.policy.deltas(N)
    good = bob_up <= dg
    bad = eve_low >= 1.0 - db
    if isinstance(cfg.policy, RateTargetPolicy):
        for l in range(cfg.r):
            kg = round(N * max(cap_b[l] - cfg.policy.backoff, 0.0))
            kn = round(N * (1.0 - cap_e[l]))
            good[l] |= _top(bob_up[l], kg, largest=False)
            bad[l] |= _top(eve_low[l], kn, largest=True)
        for l in range(1, cfg.r):
            good[l] |= good[l - 1]
            bad[l] &= bad[l - 1]

    rng = np.random.default_rng([cfg.seed, 0x5EED])
    out = []
    for l in range(cfg.r):
        quad = _partition_masks(good[l], bad[l])
        src_stats = None
        if cfg.mode == "shaped":
            src_low = np.maximum(src[l].z_lower, eve_low[l])
            src_up = np.maximum(src[l].z_upper, src_low)
            src_stats = _stats(src_low, src_up, src[l])
            F, I, S, dS = shaping_partition(bob_low[l], src_low, src_up, good[l],
                                            bad[l], dg, db)
        else:
            F = I = S = dS = np.zeros(N, dtype=bool)
        sets = IndexSets(*quad, F, I, S, dS)
        frozen = rng.integers(0, 2, N, dtype=np.uint8)
        out.append(LevelData(sets, _stats(bob_low[l], bob_up[l], bob[l]),
                             _stats(eve_low[l], eve_up[l], eve[l]), src_stats,
                             frozen, cap_b[l], cap_e[l]))
    if cfg.sigma_e != cfg.sigma_b and not any(lv.sets.A.any() for lv in out):
        raise WiretapConfigError(
            "no index is both reliable for Bob and bad for Eve at any level; "
            "increase N or relax the policy thresholds")
    code = Code(cfg, tuple(out), {})
    object.__setattr__(code, "rates", rate_report(code))
    code.check()
    return code


def _stats(low, up, base):
    return PolarStats(np.asarray(low, dtype=float), np.asarray(up, dtype=float),
                      base.i_lower, base.i_upper)


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------

def lattice_rate_terms(alpha, r, sigma_b, sigma_e):
    """Achievable secrecy rate of the mod-lattice scheme and its loss terms.

    Returns a dict with ``rate``, ``capacity`` and the three loss terms
    ``eps1`` (top-lattice entropy gap), ``epsb`` and ``epse`` (bottom
    lattice non-flatness for Bob and Eve), plus ``gap = capacity - rate``.
    """
    top = alpha
    bottom = alpha * 2.0 ** r
    h_top_b = lattice.aliased_entropy(top, sigma_b)
    h_top_e = lattice.aliased_entropy(top, sigma_e)
    h_bot_b = lattice.aliased_entropy(bottom, sigma_b)
    h_bot_e = lattice.aliased_entropy(bottom, sigma_e)
    eps1 = h_top_e - h_top_b
    epsb = lattice.gaussian_entropy(sigma_b) - h_bot_b
    epse = lattice.gaussian_entropy(sigma_e) - h_bot_e
    capacity = math.log2(sigma_e / sigma_b)
    rate = capacity - (epse - epsb) - eps1
    return {"rate": rate, "capacity": capacity, "gap": capacity - rate,
            "eps1": eps1, "epsb": epsb, "epse": epse}


def level_capacity_sum(alpha, r, sigma_b, sigma_e):
    """Sum over levels of the Bob/Eve partition-capacity differences."""
    chain = PartitionChain(alpha, r)
    return math.fsum(lattice.partition_capacity(chain, l, sigma_b)
                     - lattice.partition_capacity(chain, l, sigma_e)
                     for l in range(1, r + 1))


def reference_capacity(config):
    """Secrecy capacity the scheme is measured against."""
    if config.mode == "shaped":
        snr_b = config.sigma_s ** 2 / config.sigma_b ** 2
        snr_e = config.sigma_s ** 2 / config.sigma_e ** 2
        return 0.5 * math.log2((1.0 + snr_b) / (1.0 + snr_e))
    return math.log2(config.sigma_e / config.sigma_b)


def rate_report(code):
    """Per-level set sizes and overall rates of ``code``."""
    N = code.N
    per = []
    for lv in code.levels:
        s = lv.sets.sizes()
        s["bob_capacity"] = lv.bob_capacity
        s["eve_capacity"] = lv.eve_capacity
        per.append(s)
    msg = sum(p["A"] for p in per)
    reference = reference_capacity(code.config)
    return {"levels": per, "message_bits": msg, "message_rate": msg / N,
            "capacity": reference, "gap": reference - msg / N,
            "level_capacity_gap": math.fsum(p["bob_capacity"] - p["eve_capacity"]
                                            for p in per)}


def decided_mask(code, level):
    """Indices whose bits Bob estimates from the channel output."""
    s = code.levels[level].sets
    return s.I.copy() if code.shaped else ~s.C


def union_bound(code):
    """Sum of degraded Z over every index Bob estimates."""
    return math.fsum(np.concatenate([
        lv.bob.z_upper[decided_mask(code, l)] for l, lv in enumerate(code.levels)]))

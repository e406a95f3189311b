"""Monte Carlo trials, secrecy bounds and small exact oracles."""

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from . import codec, lattice
from .construction import union_bound


@dataclass(frozen=True)
class SimReport:
    """Outcome of a batch of simulated frames."""

    trials: int
    frame_errors: int
    fer: float
    fer_se: float
    bit_errors: int
    ber: float
    power: float
    power_se: float
    union_bound: float
    leakage_bound: float
    leakage_per_bit: float
    sigma: float
    decoder: str
    seed: int

    def to_dict(self):
        return asdict(self)


def run_trials(code, sigma_b, trials, seed=0, decoder="map", blocks=2,
               batch=500):
    """Encode, add Gaussian noise and decode ``trials`` frames.

    Parameters
    ----------
    code : Code
    sigma_b : float
        Noise deviation of the simulated channel (and assumed by Bob).
    trials : int
    seed : int
        Seeds every random draw, so equal arguments give equal reports.
    decoder : {"map", "chained"}
        Shaped codes only: shared shaping map, or ``blocks`` chained blocks
        with carried shaping bits.  A chained trial is one chain.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = np.random.default_rng([seed, 0xF00D])
    smap = codec.ShapingMap(code.config.seed)
    nmsg = (codec.chained_message_length(code, blocks)
            if code.shaped and decoder == "chained" else codec.message_length(code))
    errors = bit_errors = 0
    sq, sq2, count = [], [], 0
    done = 0
    while done < trials:
        T = min(batch, trials - done)
        msg = rng.integers(0, 2, (T, nmsg), dtype=np.uint8)
        if not code.shaped:
            pts, _ = codec.encode_mod(code, msg, rng)
            y = pts + sigma_b * rng.standard_normal(pts.shape)
            est = codec.decode_mod(code, y, sigma_b)
        elif decoder == "map":
            pts = codec.encode_shaped(code, msg, rng, smap).points
            y = pts + sigma_b * rng.standard_normal(pts.shape)
            est, _ = codec.decode_shaped(code, y, sigma_b, smap)
        elif decoder == "chained":
            fr = codec.encode_chained(code, msg, blocks, rng, smap)
            pts = fr.points
            y = pts + sigma_b * rng.standard_normal(pts.shape)
            est = codec.decode_chained(code, y, sigma_b, fr.first_shaping)
        else:
            raise ValueError(f"unknown decoder {decoder!r}")
        wrong = est != msg
        errors += int(np.count_nonzero(wrong.any(axis=1)))
        bit_errors += int(np.count_nonzero(wrong))
        p2 = np.asarray(pts, dtype=float).ravel() ** 2
        sq.append(p2.sum())
        sq2.append((p2 * p2).sum())
        count += p2.size
        done += T
    fer = errors / trials
    power = math.fsum(sq) / count
    var = max(math.fsum(sq2) / count - power * power, 0.0)
    leak = leakage_upper_bound(code)
    return SimReport(trials, errors, fer, math.sqrt(fer * (1.0 - fer) / trials),
                     bit_errors, bit_errors / max(trials * nmsg, 1), power,
                     math.sqrt(var / count), union_bound(code), leak,
                     leak / max(codec.message_length(code), 1), sigma_b,
                     decoder if code.shaped else "sc", seed)


def leakage_upper_bound(code):
    """Upper bound on the information leaked to the eavesdropper, in bits.

    Sums ``sqrt(1 - Z**2)`` over the message and Eve-bad frozen indices of
    every level, using the lower bounds on Eve's Bhattacharyya parameters.
    """
    terms = []
    for lv in code.levels:
        if lv.eve is None:
            raise ValueError("code carries no eavesdropper statistics")
        mask = lv.sets.A | lv.sets.C
        z = lv.eve.z_lower[mask]
        terms.append(np.sqrt((1.0 - z) * (1.0 + z)))
    return math.fsum(np.concatenate(terms)) if terms else 0.0


def discrete_gaussian_mi(sigma_s, sigma, alpha=1.0, window=12.0, tol=1e-8):
    """Mutual information (bits) between ``X ~ D_{alpha Z, sigma_s}`` and
    ``X + N(0, sigma**2)``.

    The input support is truncated to ``|x| <= window * sigma_s``.

    Returns
    -------
    mi : float
    power : float
        Second moment of the truncated input.
    """
    kmax = max(int(math.floor(window * sigma_s / alpha)), 0)
    pts = alpha * np.arange(-kmax, kmax + 1, dtype=float)
    logw = -pts * pts / (2.0 * sigma_s * sigma_s)
    p = np.exp(logw - logw.max())
    p /= p.sum()
    norm = 1.0 / (math.sqrt(2.0 * math.pi) * sigma)

    def neg_flogf(y):
        d = y[:, None] - pts[None, :]
        f = norm * (np.exp(-d * d / (2.0 * sigma * sigma)) @ p)
        out = np.zeros_like(f)
        m = f > 0
        out[m] = -f[m] * np.log2(f[m])
        return out

    lo, hi = pts[0] - 12.0 * sigma, pts[-1] + 12.0 * sigma
    panels = int(math.ceil((hi - lo) / (0.5 * min(sigma, alpha))))
    hy = lattice.adaptive_simpson(neg_flogf, lo, hi, tol=tol, panels=panels)
    return hy - lattice.gaussian_entropy(sigma), float(p @ (pts * pts))


# ---------------------------------------------------------------------------
# exact distribution oracle for tiny shaped codes
# ---------------------------------------------------------------------------

def _all_patterns(n):
    return ((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1).astype(np.uint8)


def _target_stream(code, us):
    """Target probability of each pattern from the level-by-level coset priors."""
    chain = code.config.chain
    logp = np.zeros(us[0].shape[0])
    xs = []
    for l, u in enumerate(us):
        x = codec.polar_transform(u)
        prefix = np.stack(xs, axis=-1) if xs else np.zeros(x.shape + (0,), np.int64)
        pr = lattice.coset_prior(chain, code.config.sigma_s, l + 1, prefix)
        px = np.where(x == 0, pr[..., 0], pr[..., 1])
        with np.errstate(divide="ignore"):
            logp += np.log(px).sum(axis=1)
        xs.append(x)
    return np.exp(logp)


def _encoder_stream(code, us, smap, block):
    """Encoder probability of each pattern, averaged over frozen values,
    random fill and (without ``smap``) the shaping map."""
    chain = code.config.chain
    T = us[0].shape[0]
    logq = np.zeros(T)
    xs = []
    for l, u in enumerate(us):
        kinds = codec._kinds(code, l)
        off = codec._offsets(chain, xs) if xs else np.zeros(u.shape)
        L = codec.coset_llr(0.0, off, chain.volume(l + 1), code.config.sigma_s)[None]
        h = codec.hash_bits(np.concatenate(xs, axis=1), start=l + 1) if xs else \
            codec._mix(np.full(T, np.uint64(l + 1)))
        state = {"h": h, "logq": np.zeros(T)}

        def leaf(i, Li, kinds=kinds, u=u, state=state, l=l):
            bit = u[:, i]
            kind = kinds[i]
            if kind in (codec.INFO, codec.FROZEN):
                q = np.full(T, 0.5)
            elif kind == codec.MAP_RULE:
                q = ((Li[-1] < 0).astype(np.uint8) == bit).astype(float)
            elif smap is None:
                p0 = expit(Li[-1])
                q = np.where(bit == 0, p0, 1.0 - p0)
            else:
                p0 = expit(Li[-1])
                d = (smap.draws(l + 1, i, block, state["h"]) >= p0).astype(np.uint8)
                q = (d == bit).astype(float)
            with np.errstate(divide="ignore"):
                state["logq"] += np.log(q)
            state["h"] = codec._advance(state["h"], bit)
            return bit

        # frozen values are averaged, so every index reaches a leaf
        kinds_all = np.where(kinds == codec.FROZEN, codec.INFO, kinds)
        _, x = codec.sc_run(L, kinds_all, leaf, u)
        logq += state["logq"]
        xs.append(x)
    return np.exp(logq)


def tv_distance(code, smap=None, block=0):
    """Exact total variation between the encoder's bit distribution and the
    target discrete Gaussian one, over all ``2**(r N)`` patterns.

    Frozen and random-fill bits are averaged.  Without ``smap`` the shaping
    map is averaged too; with it, the given map is applied.
    """
    if not code.shaped:
        raise ValueError("total variation is defined for shaped codes")
    N, r = code.N, code.r
    if N * r > 20:
        raise ValueError("pattern space too large for exhaustive enumeration")
    pats = _all_patterns(N * r)
    us = [pats[:, l * N:(l + 1) * N] for l in range(r)]
    p = _target_stream(code, us)
    q = _encoder_stream(code, us, smap, block)
    return 0.5 * math.fsum(np.abs(q - p))


def _generator(N):
    g = np.array([[1]], dtype=np.int64)
    while g.shape[0] < N:
        g = np.kron(np.array([[1, 0], [1, 1]]), g)
    return g


def tv_distance_enumerated(code, smap=None, block=0):
    """Same quantity as :func:`tv_distance`, by brute-force marginalisation.

    Conditionals come from summing the target joint over every completion
    of each prefix, with the generator matrix built explicitly, instead of
    from successive cancellation.
    """
    if not code.shaped:
        raise ValueError("total variation is defined for shaped codes")
    N, r = code.N, code.r
    if N * r > 16:
        raise ValueError("pattern space too large for exhaustive enumeration")
    cfg = code.config
    G = _generator(N)
    kmax = int(math.ceil(40.0 * cfg.sigma_s / cfg.alpha)) + 2 ** (r + 1)
    k = np.arange(-kmax, kmax + 1)
    w = np.exp(-(cfg.alpha * k) ** 2 / (2.0 * cfg.sigma_s ** 2))
    coset = np.array([math.fsum(w[(k % 2 ** r) == c]) for c in range(2 ** r)])
    coset /= math.fsum(coset)

    def joint_level(level, low, xvec):
        # P(x_level = xvec | lower bits) as a product over positions
        prob = 1.0
        for j in range(N):
            num = math.fsum(coset[c] for c in range(2 ** r)
                            if c % (2 << level) == low[j] + (int(xvec[j]) << level))
            den = math.fsum(coset[c] for c in range(2 ** r)
                            if c % (1 << level) == low[j])
            prob *= num / den if den > 0 else 0.0
        return prob

    kinds = [codec._kinds(code, l) for l in range(r)]
    diffs = []
    for full in itertools.product((0, 1), repeat=N * r):
        us = [np.array(full[l * N:(l + 1) * N], dtype=np.int64) for l in range(r)]
        xs = [(u @ G) % 2 for u in us]
        p = q = 1.0
        low = np.zeros(N, dtype=np.int64)
        for l in range(r):
            if l:
                h = codec.hash_bits(np.concatenate(xs[:l]).astype(np.uint8)[None, :],
                                    start=l + 1)
            else:
                h = codec._mix(np.full(1, np.uint64(l + 1)))
            for i in range(N):
                tot = [0.0, 0.0]
                for tail in itertools.product((0, 1), repeat=N - i - 1):
                    for b in (0, 1):
                        u = np.array(list(us[l][:i]) + [b] + list(tail))
                        tot[b] += joint_level(l, low, (u @ G) % 2)
                s = tot[0] + tot[1]
                p0 = tot[0] / s if s > 0 else 0.5
                val = int(us[l][i])
                p *= p0 if val == 0 else 1.0 - p0
                kind = kinds[l][i]
                if kind in (codec.FROZEN, codec.INFO):
                    q *= 0.5
                elif kind == codec.MAP_RULE:
                    q *= 1.0 if (0 if p0 >= 0.5 else 1) == val else 0.0
                elif smap is None:
                    q *= p0 if val == 0 else 1.0 - p0
                else:
                    d = int(smap.draws(l + 1, i, block, h)[0] >= p0)
                    q *= 1.0 if d == val else 0.0
                h = codec._advance(h, np.array([val], dtype=np.uint8))
            low = low + (xs[l] << l)
        diffs.append(abs(q - p))
    return 0.5 * math.fsum(diffs)

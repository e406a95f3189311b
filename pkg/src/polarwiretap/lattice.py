"""One-dimensional binary partition chains and lattice Gaussian tools.

A chain ``alpha*Z / 2*alpha*Z / ... / 2**r*alpha*Z`` is described by its
scale ``alpha`` and depth ``r``.  Level ``l`` (0 <= l <= r) is the lattice
``2**l * alpha * Z`` whose fundamental volume is ``2**l * alpha``.

All entropies and capacities are in bits.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

THETA_CUTOFF = 1e-16
SAMPLER_TAIL = 12.0


class QuadratureError(RuntimeError):
    """Adaptive integration failed to reach its tolerance."""


@dataclass(frozen=True)
class PartitionChain:
    """Binary chain ``alpha Z / 2 alpha Z / ... / 2**r alpha Z``."""

    alpha: float
    r: int

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be positive and finite")
        if int(self.r) != self.r or self.r < 1:
            raise ValueError("r must be a positive integer")

    def volume(self, level):
        """Fundamental volume of the lattice at ``level``."""
        if not 0 <= level <= self.r:
            raise ValueError("level out of range")
        return self.alpha * 2.0 ** level

    def coset_offset(self, bits):
        """Coset representative ``alpha * sum 2**(j-1) x_j`` for bits ``x_1..x_k``.

        ``bits`` may be a sequence or an array whose last axis indexes levels.
        """
        bits = np.asarray(bits, dtype=np.int64)
        if bits.shape[-1] == 0:
            return np.zeros(bits.shape[:-1]) * self.alpha
        weights = 2 ** np.arange(bits.shape[-1])
        return self.alpha * (bits @ weights)


# ---------------------------------------------------------------------------
# theta series, flatness, aliased densities
# ---------------------------------------------------------------------------

def theta_series(v, tau):
    """Theta series ``sum_k exp(-pi tau (v k)**2)`` of ``vZ``.

    Terms are added until they fall below ``1e-16``.
    """
    if v <= 0 or tau <= 0:
        raise ValueError("v and tau must be positive")
    rate = math.pi * tau * v * v
    kmax = int(math.ceil(math.sqrt(-math.log(THETA_CUTOFF) / rate))) + 1
    k = np.arange(1, kmax + 1, dtype=float)
    terms = np.exp(-rate * k * k)
    terms = terms[terms >= THETA_CUTOFF]
    return 1.0 + 2.0 * math.fsum(terms)


def flatness_factor(v, sigma):
    """Flatness factor of ``vZ`` at noise level ``sigma``.

    Equals ``sqrt(gamma / 2 pi) * theta(1 / (2 pi sigma**2)) - 1`` with
    ``gamma = v**2 / sigma**2``.  When ``sigma`` is large relative to ``v``
    the Jacobi-transformed series is used, which is the same quantity with
    the unit prefactor cancelled exactly.
    """
    if v <= 0 or sigma <= 0:
        raise ValueError("v and sigma must be positive")
    if sigma >= 0.5 * v:
        # theta of the dual lattice: 1 + 2 sum exp(-2 pi^2 sigma^2 j^2 / v^2)
        return theta_series(1.0 / v, 2.0 * math.pi * sigma * sigma) - 1.0
    gamma = v * v / (sigma * sigma)
    return math.sqrt(gamma / (2.0 * math.pi)) * theta_series(
        v, 1.0 / (2.0 * math.pi * sigma * sigma)) - 1.0


def aliased_density(x, v, sigma):
    """Density of Gaussian noise of deviation ``sigma`` reduced modulo ``vZ``."""
    x = np.asarray(x, dtype=float)
    if sigma >= 0.5 * v:
        jmax = int(math.ceil(math.sqrt(-math.log(THETA_CUTOFF)) * v
                             / (math.sqrt(2.0) * math.pi * sigma))) + 1
        j = np.arange(1, jmax + 1, dtype=float)
        q = np.exp(-2.0 * (math.pi * sigma * j / v) ** 2)
        s = np.cos(2.0 * math.pi * np.multiply.outer(x, j) / v) @ q
        return (1.0 + 2.0 * s) / v
    kmax = int(math.ceil(9.0 * sigma / v)) + 2
    k = np.arange(-kmax, kmax + 1, dtype=float)
    r = np.remainder(x + 0.5 * v, v) - 0.5 * v
    d = np.subtract.outer(r, k * v)
    return np.exp(-d * d / (2.0 * sigma * sigma)).sum(axis=-1) / (
        math.sqrt(2.0 * math.pi) * sigma)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def adaptive_simpson(func, a, b, tol=1e-9, panels=32, max_depth=50):
    """Integrate a vectorised ``func`` over ``[a, b]`` by adaptive Simpson.

    Intervals are refined breadth first until the local Richardson error
    estimate is within ``tol`` scaled by the interval width.

    Raises
    ------
    QuadratureError
        If some interval is still unresolved after ``max_depth`` halvings.
    """
    if b <= a:
        return 0.0
    edges = np.linspace(a, b, panels + 1)
    lo, hi = edges[:-1], edges[1:]
    mid = 0.5 * (lo + hi)
    flo, fmid, fhi = func(lo), func(mid), func(hi)
    whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)
    total = []
    width = b - a
    for _ in range(max_depth):
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = func(lm), func(rm)
        left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi)
        err = left + right - whole
        done = np.abs(err) <= 15.0 * tol * (hi - lo) / width
        if np.any(done):
            total.append((left + right + err / 15.0)[done])
        keep = ~done
        if not np.any(keep):
            return math.fsum(np.concatenate(total))
        lo, mid, hi = (np.concatenate([lo[keep], mid[keep]]),
                       np.concatenate([lm[keep], rm[keep]]),
                       np.concatenate([mid[keep], hi[keep]]))
        flo, fmid, fhi = (np.concatenate([flo[keep], fmid[keep]]),
                          np.concatenate([flm[keep], frm[keep]]),
                          np.concatenate([fmid[keep], fhi[keep]]))
        whole = np.concatenate([left[keep], right[keep]])
    raise QuadratureError(
        f"adaptive Simpson did not converge on [{a}, {b}]: "
        f"{lo.size} intervals unresolved, worst error {np.max(np.abs(err)):.3e}")


def _neg_plogp(f):
    out = np.zeros_like(f)
    pos = f > 0
    out[pos] = -f[pos] * np.log2(f[pos])
    return out


def aliased_entropy(v, sigma, tol=1e-9):
    """Differential entropy ``h(vZ, sigma**2)`` of Gaussian noise modulo ``vZ``."""
    if v <= 0 or sigma <= 0:
        raise ValueError("v and sigma must be positive")
    # the density is even, so integrate over half the cell
    return 2.0 * adaptive_simpson(
        lambda x: _neg_plogp(aliased_density(x, v, sigma)), 0.0, 0.5 * v,
        tol=0.5 * tol)


def mod_capacity(v, sigma):
    """Capacity ``log2 v - h(vZ, sigma**2)`` of the mod-``vZ`` Gaussian channel."""
    c = math.log2(v) - aliased_entropy(v, sigma)
    if -1e-9 < c < 0:
        return 0.0
    if c < 0:
        raise QuadratureError(f"negative capacity {c:.3e}")
    return c


def partition_capacity(chain, level, sigma):
    """Capacity of the level-``level`` partition channel at noise ``sigma``."""
    if not 1 <= level <= chain.r:
        raise ValueError("level out of range")
    return (mod_capacity(chain.volume(level), sigma)
            - mod_capacity(chain.volume(level - 1), sigma))


def gaussian_entropy(sigma):
    """Differential entropy ``0.5 log2(2 pi e sigma**2)`` of a Gaussian."""
    return 0.5 * math.log2(2.0 * math.pi * math.e * sigma * sigma)


def mmse_sigma(sigma_s, sigma):
    """Effective deviation ``sigma_s sigma / sqrt(sigma_s**2 + sigma**2)``."""
    if sigma_s <= 0 or sigma <= 0:
        raise ValueError("deviations must be positive")
    return sigma_s * sigma / math.hypot(sigma_s, sigma)


def mmse_coefficient(sigma_s, sigma):
    """Linear estimator gain ``sigma_s**2 / (sigma_s**2 + sigma**2)``."""
    return sigma_s * sigma_s / (sigma_s * sigma_s + sigma * sigma)


def error_probability(v, sigma):
    """Probability that Gaussian noise leaves the Voronoi cell of ``vZ``.

    Integrated numerically over the cell rather than taken from ``erfc``.
    """
    def pdf(x):
        return np.exp(-x * x / (2.0 * sigma * sigma)) / (math.sqrt(2.0 * math.pi) * sigma)
    inside = 2.0 * adaptive_simpson(pdf, 0.0, 0.5 * v, tol=1e-14)
    return max(0.0, 1.0 - inside)


# ---------------------------------------------------------------------------
# discrete Gaussian
# ---------------------------------------------------------------------------

def log_coset_mass(c, period, sigma):
    """``log sum_k exp(-(c + k period)**2 / (2 sigma**2))``, elementwise in ``c``."""
    c = np.asarray(c, dtype=float)
    if sigma >= period:
        # Poisson summation; the correction terms cannot cancel the leading 1
        jmax = int(math.ceil(math.sqrt(-math.log(THETA_CUTOFF)) * period
                             / (math.sqrt(2.0) * math.pi * sigma))) + 1
        j = np.arange(1, jmax + 1, dtype=float)
        q = np.exp(-2.0 * (math.pi * sigma * j / period) ** 2)
        s = np.cos(2.0 * math.pi * np.multiply.outer(c, j) / period) @ q
        return math.log(math.sqrt(2.0 * math.pi) * sigma / period) + np.log1p(2.0 * s)
    kmax = int(math.ceil(40.0 * sigma / period)) + 2
    centre = np.rint(-c / period)
    k = np.arange(-kmax, kmax + 1, dtype=float)
    d = c[..., None] + (centre[..., None] + k) * period
    return logsumexp(-d * d / (2.0 * sigma * sigma), axis=-1)


def coset_prior(chain, sigma_s, level, prefix):
    """Distribution of bit ``x_level`` given ``x_1..x_{level-1}`` under the
    discrete Gaussian ``D_{alpha Z, sigma_s}``.

    Parameters
    ----------
    chain : PartitionChain
    sigma_s : float
    level : int
        1-based level.
    prefix : array_like of int
        Bits ``x_1..x_{level-1}``; leading axes broadcast.

    Returns
    -------
    ndarray
        Probabilities with a trailing axis of length 2.
    """
    prefix = np.asarray(prefix, dtype=np.int64)
    if prefix.shape[-1] != level - 1:
        raise ValueError("prefix length must equal level - 1")
    log0, log1 = _level_log_masses(chain, sigma_s, level, chain.coset_offset(prefix))
    p0 = 1.0 / (1.0 + np.exp(np.clip(log1 - log0, -745.0, 745.0)))
    return np.stack([p0, 1.0 - p0], axis=-1)


def _level_log_masses(chain, sigma_s, level, offset):
    period = chain.volume(level)
    half = 0.5 * period
    offset = np.asarray(offset, dtype=float)
    return (log_coset_mass(offset, period, sigma_s),
            log_coset_mass(offset + half, period, sigma_s))


def sample_discrete_gaussian(v, c, sigma_s, rng, size=None):
    """Draw from ``D_{vZ, sigma_s, c}`` by exact inverse CDF.

    The support is truncated to ``|lambda - c| <= 12 sigma_s``; when that
    window holds no lattice point the nearest one is returned.

    Parameters
    ----------
    v : float
        Lattice scale.
    c : float or ndarray
        Centre; an array draws one sample per entry.
    sigma_s : float
    rng : numpy.random.Generator
    size : int, optional
        Number of draws when ``c`` is scalar.
    """
    if v <= 0 or sigma_s <= 0:
        raise ValueError("v and sigma_s must be positive")
    c_arr = np.asarray(c, dtype=float)
    if c_arr.ndim == 0:
        n = 1 if size is None else int(size)
        out = _sample_centre(v, float(c_arr), sigma_s, rng, n)
        return out[0] if size is None else out
    flat = c_arr.ravel()
    out = np.empty_like(flat)
    uniq, inv = np.unique(flat, return_inverse=True)
    for idx, centre in enumerate(uniq):
        sel = np.flatnonzero(inv == idx)
        out[sel] = _sample_centre(v, centre, sigma_s, rng, sel.size)
    return out.reshape(c_arr.shape)


def _sample_centre(v, c, sigma_s, rng, n):
    kmin = math.ceil((c - SAMPLER_TAIL * sigma_s) / v)
    kmax = math.floor((c + SAMPLER_TAIL * sigma_s) / v)
    if kmax < kmin:
        return np.full(n, v * round(c / v))
    pts = v * np.arange(kmin, kmax + 1, dtype=float)
    logw = -(pts - c) ** 2 / (2.0 * sigma_s * sigma_s)
    w = np.exp(logw - logw.max())
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    return pts[np.minimum(idx, pts.size - 1)]


def discrete_gaussian_pmf(points, sigma_s, v=1.0):
    """Normalised probabilities of ``points`` (on ``vZ``) under ``D_{vZ, sigma_s}``."""
    points = np.asarray(points, dtype=float)
    lognorm = log_coset_mass(0.0, v, sigma_s)
    return np.exp(-points * points / (2.0 * sigma_s * sigma_s) - lognorm)

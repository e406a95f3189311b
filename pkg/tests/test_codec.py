import itertools

import numpy as np
import pytest
from scipy.special import logsumexp

from polarwiretap import codec, lattice
from polarwiretap.construction import ThresholdPolicy, assemble_code

from conftest import small_config


class ScriptedRng:
    """Stands in for a Generator; ``integers`` returns preset fill bits."""

    def __init__(self, fills):
        self.fills = list(fills)

    def integers(self, lo, hi, size, dtype):
        return np.array(self.fills.pop(0), dtype=dtype).reshape(size)


@pytest.fixture(scope="module")
def toy():
    return assemble_code(small_config("mod", N=8, sigma_e=0.6,
                                      policy=ThresholdPolicy(0.2, 0.2)))


def generator(N):
    g = np.array([[1]], dtype=np.int64)
    while g.shape[0] < N:
        g = np.kron(np.array([[1, 0], [1, 1]]), g)
    return g


def construction_d_points(code):
    """All points of the code by explicit generator rows, one level at a time."""
    N, chain = code.N, code.config.chain
    G = generator(N)
    level_words = []
    for lv in code.levels:
        free = np.flatnonzero(~lv.sets.C)
        base = (lv.frozen * lv.sets.C) @ G % 2
        words = set()
        for bits in itertools.product((0, 1), repeat=free.size):
            x = (base + np.array(bits, dtype=np.int64) @ G[free]) % 2
            words.add(tuple(x))
        level_words.append(sorted(words))
    pts = set()
    for combo in itertools.product(*level_words):
        p = sum(chain.alpha * 2 ** l * np.array(x) for l, x in enumerate(combo))
        pts.add(tuple(np.round(codec.reduce_mod(p, chain.volume(chain.r)), 9)))
    return pts


def test_polar_transform_matches_generator():
    rng = np.random.default_rng(0)
    for N in (1, 2, 8, 32):
        u = rng.integers(0, 2, (5, N), dtype=np.uint8)
        assert np.array_equal(codec.polar_transform(u), u.astype(np.int64) @ generator(N) % 2)


def test_boxplus_exact():
    a, b = np.array([1.3, -0.4, 20.0]), np.array([-2.2, -0.9, 30.0])
    pa, pb = 1 / (1 + np.exp(-a)), 1 / (1 + np.exp(-b))
    p = pa * pb + (1 - pa) * (1 - pb)
    assert np.allclose(codec.boxplus(a, b), np.log(p / (1 - p)), atol=1e-9)


def test_coset_llr_against_direct_sum():
    t = np.array([0.1, 1.7, -3.2])
    off, period, s = 0.5, 2.0, 0.7
    k = np.arange(-200, 201)
    l0 = logsumexp(-(t[:, None] - off - k * period) ** 2 / (2 * s * s), axis=1)
    l1 = logsumexp(-(t[:, None] - off - period / 2 - k * period) ** 2 / (2 * s * s), axis=1)
    assert np.allclose(codec.coset_llr(t, off, period, s), l0 - l1, atol=1e-10)
    assert codec.coset_llr(0.0, 0.0, 1.0, 1e-3) == codec.LLR_CLIP


def test_encode_mod_zero_and_linearity(toy):
    N = toy.N
    zero_frozen = [type(lv)(lv.sets, lv.bob, lv.eve, lv.source, np.zeros(N, np.uint8),
                            lv.bob_capacity, lv.eve_capacity) for lv in toy.levels]
    ztoy = type(toy)(toy.config, tuple(zero_frozen), toy.rates)
    k = codec.message_length(ztoy)
    zeros = [np.zeros(N)] * toy.r
    _, xs = codec.encode_mod(ztoy, np.zeros((1, k), np.uint8), ScriptedRng(zeros))
    assert all(not x.any() for x in xs)
    rng = np.random.default_rng(2)
    m1, m2 = rng.integers(0, 2, (2, k), dtype=np.uint8)
    fill = [rng.integers(0, 2, N) for _ in range(toy.r)]

    def enc(m):
        return codec.encode_mod(toy, m[None], ScriptedRng([f.copy() for f in fill]))[1]

    for a, b, c, d in zip(enc(m1), enc(m2), enc(0 * m1), enc(m1 ^ m2)):
        assert np.array_equal(a ^ b ^ c, d)


def test_encoder_reaches_exactly_the_construction_d_points(toy):
    N, k = toy.N, codec.message_length(toy)
    free = [np.flatnonzero(lv.sets.B | lv.sets.D) for lv in toy.levels]
    nfill = sum(f.size for f in free)
    got = set()
    for msg in itertools.product((0, 1), repeat=k):
        for fill in itertools.product((0, 1), repeat=nfill):
            fills, pos = [], 0
            for f in free:
                row = np.zeros(N)
                row[f] = fill[pos:pos + f.size]
                pos += f.size
                fills.append(row)
            pts, _ = codec.encode_mod(toy, np.array([msg], np.uint8), ScriptedRng(fills))
            got.add(tuple(np.round(pts[0], 9)))
    assert got == construction_d_points(toy)


def ml_decode(code, y, sigma):
    """Exhaustive maximum-likelihood codeword search on the mod-bottom-lattice channel."""
    N, chain = code.N, code.config.chain
    vr = chain.volume(chain.r)
    G = generator(N)
    words = []
    for lv in code.levels:
        free = np.flatnonzero(~lv.sets.C)
        base = (lv.frozen * lv.sets.C) @ G % 2
        U = np.array(list(itertools.product((0, 1), repeat=free.size)), dtype=np.int64)
        words.append((base + U @ G[free]) % 2)
    pts = np.zeros((1, N))
    for l, W in enumerate(words):
        pts = (pts[:, None, :] + chain.alpha * 2 ** l * W[None, :, :]).reshape(-1, N)
    kk = np.arange(-3, 4) * vr
    d = y[:, None, :, None] - pts[None, :, :, None] - kk
    ll = logsumexp(-d * d / (2 * sigma * sigma), axis=-1).sum(axis=-1)
    return codec.reduce_mod(pts[np.argmax(ll, axis=1)], vr)


def test_sc_matches_ml_on_noise_grid(toy):
    rng = np.random.default_rng(4)
    k = codec.message_length(toy)
    msg = rng.integers(0, 2, (1, k), dtype=np.uint8)
    pts, _ = codec.encode_mod(toy, msg, rng)
    step = 0.2 * toy.config.alpha
    grid = np.array(list(itertools.product((-step, 0.0, step), repeat=toy.N)))
    y = pts + grid
    sigma = toy.config.sigma_b
    est = codec.decode_mod(toy, y, sigma)
    assert (est == msg).all()
    ml = ml_decode(toy, y[::97], sigma)
    assert np.allclose(ml, pts, atol=1e-9)


def test_mod_round_trip_zero_noise(mod_code):
    rng = np.random.default_rng(1)
    msg = rng.integers(0, 2, (20, codec.message_length(mod_code)), dtype=np.uint8)
    pts, xs = codec.encode_mod(mod_code, msg, rng)
    vr = mod_code.config.chain.volume(mod_code.r)
    assert np.all(pts >= -vr / 2) and np.all(pts < vr / 2)
    assert np.array_equal(codec.decode_mod(mod_code, pts, 1e-3), msg)
    with pytest.raises(ValueError):
        codec.encode_mod(mod_code, msg[:, 1:], rng)


def test_shaped_round_trip_zero_noise(shaped_code):
    rng = np.random.default_rng(1)
    smap = codec.ShapingMap(shaped_code.config.seed)
    msg = rng.integers(0, 2, (20, codec.message_length(shaped_code)), dtype=np.uint8)
    blk = codec.encode_shaped(shaped_code, msg, rng, smap)
    est, bits = codec.decode_shaped(shaped_code, blk.points, 1e-3, smap)
    assert np.array_equal(est, msg)
    assert np.array_equal(bits, blk.shaping_bits)
    # the same bits handed over directly instead of the map
    est2, _ = codec.decode_shaped(shaped_code, blk.points, 1e-3, carried=blk.shaping_bits)
    assert np.array_equal(est2, msg)
    with pytest.raises(codec.DecodingError):
        codec.decode_shaped(shaped_code, blk.points, 1e-3)


def test_shaped_points_lie_on_the_coset(shaped_code):
    rng = np.random.default_rng(8)
    smap = codec.ShapingMap(3)
    msg = rng.integers(0, 2, (10, codec.message_length(shaped_code)), dtype=np.uint8)
    blk = codec.encode_shaped(shaped_code, msg, rng, smap)
    chain = shaped_code.config.chain
    coset = sum(chain.alpha * 2 ** l * x for l, x in enumerate(blk.xs))
    rem = np.remainder(blk.points - coset, chain.volume(chain.r))
    assert np.allclose(np.minimum(rem, chain.volume(chain.r) - rem), 0.0)
    for u, x in zip(blk.us, blk.xs):
        assert np.array_equal(codec.polar_transform(u), x)


def test_flat_prior_gives_uniform_cosets():
    code = assemble_code(small_config("shaped", N=16, sigma_s=40.0, sigma_b=0.05,
                                      sigma_e=0.5, policy=ThresholdPolicy(1e-2, 1e-2)))
    rng = np.random.default_rng(9)
    smap = codec.ShapingMap(0)
    T = 10_000 // code.N + 1
    msg = rng.integers(0, 2, (T, codec.message_length(code)), dtype=np.uint8)
    pts = codec.encode_shaped(code, msg, rng, smap).points.ravel()
    cos = np.remainder(np.rint(pts / code.config.alpha), 2 ** code.r).astype(int)
    freq = np.bincount(cos, minlength=2 ** code.r) / cos.size
    assert 0.5 * np.abs(freq - 2.0 ** -code.r).sum() < 0.02


def test_shaping_map_is_deterministic():
    a, b = codec.ShapingMap(5), codec.ShapingMap(5)
    h = codec.hash_bits(np.array([[1, 0, 1], [0, 0, 0]], np.uint8))
    assert np.array_equal(a.draws(1, 3, 0, h), b.draws(1, 3, 0, h))
    d = [a.draws(1, i, 0, h)[0] for i in range(4)] + [a.draws(2, 0, 0, h)[0],
                                                      a.draws(1, 0, 1, h)[0]]
    assert len(set(d)) == len(d)
    u = a.draws(1, 0, 0, np.arange(20000, dtype=np.uint64))
    assert abs(u.mean() - 0.5) < 0.01 and u.min() >= 0 and u.max() < 1


def test_chained_round_trip_and_rate(shaped_code):
    rng = np.random.default_rng(6)
    smap = codec.ShapingMap(2)
    k = 4
    a, d = codec.message_length(shaped_code), codec.shaping_length(shaped_code)
    total = codec.chained_message_length(shaped_code, k)
    assert total == k * a - (k - 1) * d
    msg = rng.integers(0, 2, (5, total), dtype=np.uint8)
    fr = codec.encode_chained(shaped_code, msg, k, rng, smap)
    assert fr.points.shape == (k, 5, shaped_code.N)
    assert fr.first_shaping.shape == (5, d)
    assert np.array_equal(codec.decode_chained(shaped_code, fr.points, 1e-3,
                                               fr.first_shaping), msg)
    with pytest.raises(ValueError):
        codec.encode_chained(shaped_code, msg, 1, rng, smap)


def test_chaining_without_shaping_bits_is_independent_blocks():
    code = assemble_code(small_config("shaped", N=16, sigma_s=40.0, sigma_b=0.05,
                                      sigma_e=0.5, policy=ThresholdPolicy(1e-2, 1e-2)))
    if codec.shaping_length(code):
        pytest.skip("instance has shaping bits")
    rng = np.random.default_rng(0)
    a = codec.message_length(code)
    msg = rng.integers(0, 2, (3, 3 * a), dtype=np.uint8)
    fr = codec.encode_chained(code, msg, 3, np.random.default_rng(1), codec.ShapingMap(0))
    for j in range(3):
        est, _ = codec.decode_shaped(code, fr.points[j], 1e-3, codec.ShapingMap(0), j)
        assert np.array_equal(est, msg[:, j * a:(j + 1) * a])


def test_one_time_pad_round_trip():
    rng = np.random.default_rng(0)
    m, key = rng.integers(0, 2, (2, 3, 40), dtype=np.uint8)
    assert np.array_equal(codec.one_time_pad(codec.one_time_pad(m, key), key), m)
    with pytest.raises(ValueError):
        codec.one_time_pad(m, key[:, :3])


def test_frame_container_round_trip():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(3, 4, 16))
    fs = rng.integers(0, 2, (4, 13), dtype=np.uint8)
    blob = codec.pack_frames(pts, "shaped", 16, 2, 3, 99, fs)
    out = codec.unpack_frames(blob)
    assert out["mode"] == "shaped" and out["N"] == 16 and out["seed"] == 99
    assert np.array_equal(out["points"], pts)
    assert np.array_equal(out["first_shaping"], fs)
    plain = codec.unpack_frames(codec.pack_frames(pts[0], "mod", 16, 2, 1, 0))
    assert plain["first_shaping"] is None
    with pytest.raises(ValueError):
        codec.unpack_frames(b"NOPE" + blob[4:])


def test_levels_see_coset_offsets():
    ch = lattice.PartitionChain(1.5, 3)
    xs = [np.array([[1, 0]]), np.array([[1, 1]])]
    assert np.allclose(codec._offsets(ch, xs), [[4.5, 3.0]])

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polarwiretap import channel as C
from polarwiretap.construction import (BetaPolicy, CodeConfig, RateTargetPolicy,
                                       ThresholdPolicy, WiretapConfigError,
                                       assemble_code, lattice_rate_terms,
                                       level_capacity_sum, polarize_statistics,
                                       policy_from_dict, reference_capacity,
                                       secrecy_partition, shaping_partition)

from conftest import small_config


def bec_recursion(eps, N):
    z = np.array([eps])
    while z.size < N:
        z = np.stack([2 * z - z * z, z * z], axis=1).ravel()
    return z


def brute_force_z(ch, N):
    # synthetic channel likelihoods by summing over all inputs and outputs
    from itertools import product
    from polarwiretap.codec import polar_transform
    w = np.vstack([ch.w0, ch.w1])
    n_out = ch.size
    zs = np.zeros(N)
    for i in range(N):
        acc = 0.0
        for ys in product(range(n_out), repeat=N):
            for prefix in product((0, 1), repeat=i):
                lik = [0.0, 0.0]
                for ui in (0, 1):
                    for tail in product((0, 1), repeat=N - i - 1):
                        u = np.array([list(prefix) + [ui] + list(tail)], dtype=np.uint8)
                        x = polar_transform(u)[0]
                        lik[ui] += np.prod([w[x[j], ys[j]] for j in range(N)])
                acc += math.sqrt(lik[0] * lik[1])
        zs[i] = acc / 2 ** (N - 1)
    return zs


def test_polarize_bec_exact():
    st_ = polarize_statistics(C.bec(0.5), 4)
    assert np.allclose(st_.z_lower, [0.9375, 0.5625, 0.4375, 0.0625], atol=1e-15)
    assert np.array_equal(st_.z_lower, st_.z_upper)
    assert np.allclose(polarize_statistics(C.bec(0.3), 256, 8).z_upper,
                       bec_recursion(0.3, 256), atol=1e-12)


def test_polarize_single_index():
    ch = C.bsc(0.07)
    st_ = polarize_statistics(ch, 1, 16)
    assert st_.z_lower[0] == pytest.approx(C.bhattacharyya(ch), abs=1e-15)
    assert st_.i_upper[0] == pytest.approx(C.mutual_information(ch), abs=1e-15)


def test_polarize_against_brute_force():
    rng = np.random.default_rng(5)
    a = rng.random(2)
    b = rng.random(2) * a
    ch = C.BmsChannel.from_pairs(a / (a + b).sum(), b / (a + b).sum())
    exact = polarize_statistics(ch, 4)
    assert np.allclose(exact.z_lower, brute_force_z(ch, 4), atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_sandwich_brackets_exact_values(seed):
    rng = np.random.default_rng(seed)
    a = rng.random(2)
    b = rng.random(2) * a
    ch = C.BmsChannel.from_pairs(a / (a + b).sum(), b / (a + b).sum())
    exact = polarize_statistics(ch, 8)
    approx = polarize_statistics(ch, 8, 4)
    assert np.all(approx.z_lower <= exact.z_lower + 1e-12)
    assert np.all(exact.z_upper <= approx.z_upper + 1e-12)
    assert np.all(approx.i_lower <= exact.i_lower + 1e-12)
    assert np.all(exact.i_upper <= approx.i_upper + 1e-12)
    # exact statistics conserve information
    assert exact.i_lower.sum() == pytest.approx(8 * C.mutual_information(ch), abs=8e-10)


def test_sum_rule_under_quantisation():
    from polarwiretap.lattice import PartitionChain
    ch = C.make_partition_channel(PartitionChain(2.5, 2), 2, 1.0, 64)
    st_ = polarize_statistics(ch, 256, 64)
    total = 256 * C.mutual_information(ch)
    assert st_.i_lower.sum() <= total + 1e-9 <= st_.i_upper.sum() + 2e-9
    assert st_.i_upper.sum() - st_.i_lower.sum() <= 256 * 1e-3


def test_polarize_rejects_bad_input():
    with pytest.raises(ValueError):
        polarize_statistics(C.bsc(0.1), 12, 8)
    with pytest.raises(ValueError):
        polarize_statistics(C.bsc(0.1), 8, 2)


def test_secrecy_partition_examples():
    z = np.linspace(0, 1, 16)
    A, B, Cs, D = secrecy_partition(z, z, 0.01, 0.01)
    assert not A.any()
    A, *_ = secrecy_partition(np.zeros(8), np.ones(8), 1e-5, 1e-5)
    assert A.all()
    with pytest.raises(WiretapConfigError):
        secrecy_partition(np.full(4, 0.5), np.full(4, 0.1), 0.01, 0.01)


def test_secrecy_partition_bec_oracle():
    N = 16
    zb, ze = bec_recursion(0.25, N), bec_recursion(0.75, N)
    A, B, Cs, D = secrecy_partition(zb, ze, 0.01, 0.01)
    oracle = sum(1 for i in range(N) if zb[i] <= 0.01 and ze[i] >= 0.99)
    assert A.sum() == oracle
    assert (A.astype(int) + B + Cs + D == 1).all()


def test_secrecy_rate_monotone_on_bec():
    fracs = []
    for m in range(6, 13):
        N = 2 ** m
        A = secrecy_partition(bec_recursion(0.25, N), bec_recursion(0.75, N), 1e-3, 1e-3)[0]
        fracs.append(A.sum() / N)
    assert all(x <= y for x, y in zip(fracs, fracs[1:]))
    assert fracs[-1] <= 0.5


def test_shaping_partition_extremes():
    N = 8
    good = np.array([1, 1, 1, 1, 0, 0, 0, 0], bool)
    bad = np.array([1, 0, 1, 0, 1, 0, 1, 0], bool)
    bob_low = np.array([0, 0, 0, 0, 0.5, 0.5, 1, 1.0])
    # uniform source: every index is information or frozen
    F, I, S, dS = shaping_partition(bob_low, np.ones(N), np.ones(N), good, bad, 1e-2, 1e-2)
    assert (I == good).all() and F[6:].all() and S.sum() == 2
    # deterministic source: nothing is information unless Eve is blind
    F, I, S, dS = shaping_partition(bob_low, np.zeros(N), np.zeros(N), good, bad, 1e-2, 1e-2)
    assert (I == (good & bad)).all()
    assert not dS.any()


def test_config_validation():
    with pytest.raises(WiretapConfigError):
        CodeConfig(N=48, alpha=1.0, r=2, sigma_b=1, sigma_e=2)
    with pytest.raises(WiretapConfigError):
        CodeConfig(N=64, alpha=1.0, r=2, sigma_b=1, sigma_e=2, mode="shaped")
    with pytest.raises(WiretapConfigError):
        CodeConfig(N=64, alpha=1.0, r=0, sigma_b=1, sigma_e=2)
    cfg = small_config("shaped", policy=RateTargetPolicy(0.01, 1e-4))
    assert CodeConfig.from_dict(cfg.to_dict()) == cfg
    assert policy_from_dict({"kind": "beta", "beta": 0.3}) == BetaPolicy(0.3)
    with pytest.raises(WiretapConfigError):
        policy_from_dict({"kind": "nope"})
    assert BetaPolicy(0.5 - 1e-9).deltas(4)[0] == pytest.approx(2.0 ** -2, rel=1e-6)


def test_mod_code_structure(mod_code):
    mod_code.check()
    assert mod_code.rates["message_bits"] == sum(lv.sets.A.sum() for lv in mod_code.levels)
    assert mod_code.rates["capacity"] == pytest.approx(math.log2(1.5 / 0.3))
    for lv in mod_code.levels:
        assert np.all(lv.bob.z_lower <= lv.bob.z_upper)
        assert np.all(lv.eve.z_lower >= lv.bob.z_lower)
        assert set(np.unique(lv.frozen)) <= {0, 1}


def test_shaped_code_structure(shaped_code):
    shaped_code.check()
    for lv in shaped_code.levels:
        s = lv.sets
        assert not (s.A & s.S).any()
        assert not (s.A & ~s.I).any()
        assert not (s.D & ~s.S).any()


def test_nested_frozen_sets(mod_code, shaped_code):
    for code in (mod_code, shaped_code):
        for hi, lo in zip(code.levels, code.levels[1:]):
            assert not (lo.sets.C & ~hi.sets.C).any()


def test_construction_is_reproducible():
    cfg = small_config("mod", N=32)
    a, b = assemble_code(cfg, threads=1), assemble_code(cfg, threads=3)
    for x, y in zip(a.levels, b.levels):
        assert np.array_equal(x.bob.z_upper, y.bob.z_upper)
        assert np.array_equal(x.frozen, y.frozen)


def test_equal_noise_warns_and_gives_no_message():
    with pytest.warns(RuntimeWarning, match="zero secrecy"):
        code = assemble_code(small_config("mod", N=32, sigma_e=0.3))
    assert code.rates["message_bits"] == 0
    assert reference_capacity(code.config) == 0.0


def test_bad_instances_raise():
    with pytest.raises(WiretapConfigError):
        assemble_code(small_config("mod", N=32, sigma_e=0.2))
    with pytest.raises(WiretapConfigError, match="no index"):
        assemble_code(small_config("mod", N=8, policy=ThresholdPolicy(1e-9, 1e-9)))


def test_reference_capacities():
    assert reference_capacity(small_config("mod", sigma_b=1.0, sigma_e=2.0)) == 1.0
    # SNR_b = 15, SNR_e = 3 gives half of log2(16 / 4)
    cfg = small_config("shaped", sigma_b=1.0, sigma_e=math.sqrt(5.0), sigma_s=math.sqrt(15.0))
    assert reference_capacity(cfg) == pytest.approx(1.0, abs=1e-12)


def test_lattice_rate_terms_consistent():
    t = lattice_rate_terms(2.5, 2, 1.0, 2.0)
    assert t["capacity"] == 1.0
    assert t["rate"] == pytest.approx(level_capacity_sum(2.5, 2, 1.0, 2.0), abs=1e-8)
    assert t["gap"] == pytest.approx(t["eps1"] + t["epse"] - t["epsb"], abs=1e-12)


def test_dS_fraction_shrinks_with_length():
    fr = []
    for N in (256, 1024):
        code = assemble_code(small_config("shaped", N=N, mu=16,
                                          policy=ThresholdPolicy(1e-3, 1e-3)), threads=4)
        fr.append(sum(lv.sets.dS.sum() for lv in code.levels) / N)
    assert fr[1] < fr[0]


@pytest.mark.slow
def test_rate_target_design_point():
    cfg = CodeConfig(N=4096, alpha=2.5, r=2, sigma_b=1.0, sigma_e=2.0,
                     policy=RateTargetPolicy(0.0, 1e-5), mu=16)
    code = assemble_code(cfg, threads=4)
    assert abs(code.rates["message_rate"] - 0.95) <= 0.1


def test_brackets_stay_ordered_after_tightening():
    cfg = CodeConfig(N=256, alpha=1.0, r=2, sigma_b=0.25, sigma_e=2.0,
                     policy=ThresholdPolicy(1e-3, 1e-3), mu=16, seed=1)
    code = assemble_code(cfg, threads=4)
    for lv in code.levels:
        for s in (lv.bob, lv.eve):
            assert np.all(s.z_lower <= s.z_upper)
        assert np.all(lv.eve.z_lower >= lv.bob.z_lower)

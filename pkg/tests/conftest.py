import pytest

from polarwiretap.construction import CodeConfig, ThresholdPolicy, assemble_code


def small_config(mode="mod", N=64, **kw):
    base = dict(N=N, alpha=1.0, r=2, sigma_b=0.3, sigma_e=1.5, mode=mode,
                policy=ThresholdPolicy(1e-2, 1e-2), mu=16, seed=11)
    if mode == "shaped":
        base["sigma_s"] = 2.0
    base.update(kw)
    return CodeConfig(**base)


@pytest.fixture(scope="session")
def mod_code():
    return assemble_code(small_config("mod"))


@pytest.fixture(scope="session")
def shaped_code():
    return assemble_code(small_config("shaped"))

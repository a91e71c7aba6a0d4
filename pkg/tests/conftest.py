import functools

import pytest

from adaptleak.scenario import build_phone_preset, simulate


@functools.lru_cache(maxsize=None)
def phone_run(seed: int, days: int = 28, profiles: int = 5, override_rate: float = 0.2):
    sc = build_phone_preset(profiles, seed=seed, override_rate=override_rate)
    return sc, simulate(sc, days, seed)


@pytest.fixture(scope="session")
def phone28():
    return phone_run(1)


@pytest.fixture(scope="session")
def phone3():
    return phone_run(0, days=3)

import functools
from pathlib import Path

import numpy as np
import pytest

from gardentrack.geodesy import get_projection
from gardentrack.simulate import ErrorModel, bench_scenario, garden_loop, field_scenario, simulate_survey

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def params():
    return get_projection("EPSG:25832")


@pytest.fixture(scope="session")
def loop():
    return garden_loop()


@functools.lru_cache(maxsize=None)
def simulated(kind="field", seed=0, sigma=1.2, tau=30.0, quantize=True, stop_duration=12.0):
    """Cached simulated survey; ``kind`` is "field" (2 stops) or "bench" (3)."""
    poly = garden_loop()
    if kind == "field":
        sc = field_scenario(poly, stop_duration=stop_duration)
    else:
        sc = bench_scenario(poly, stop_duration=stop_duration)
    return simulate_survey(sc, ErrorModel(sigma, tau, seed, quantize), get_projection(), f"{kind}-{seed}")


@pytest.fixture(scope="session")
def sim():
    return simulated


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def stop_outcome(sv, events, tolerance=3.0):
    """Compare detected stops with the simulated dwell periods.

    Returns ``(ok, worst_dwell_error_s)``; ``ok`` needs one event per dwell
    period, each overlapping its period, and no extra events.
    """
    if len(events) != len(sv.dwell):
        return False, float("inf")
    worst = 0.0
    for (t0, t1, _), e in zip(sv.dwell, events):
        if not (e.start <= t1 and e.end >= t0):
            return False, float("inf")
        true = (t1 - t0) / np.timedelta64(1, "s")
        worst = max(worst, abs(e.duration - true))
    return worst <= tolerance, worst

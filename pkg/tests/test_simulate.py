import datetime as dt
import json
import math

import numpy as np
import pytest

from conftest import simulated, stop_outcome
from gardentrack.exceptions import InvalidScenario
from gardentrack.geodesy import get_projection
from gardentrack.nmea import checksum, parse_stream
from gardentrack.pipeline import analyze_text
from gardentrack.simulate import (
    ErrorModel,
    Scenario,
    ar1_noise,
    emit_nmea,
    garden_loop,
    load_scenario_config,
    field_scenario,
    simulate_static,
    simulate_survey,
)
from gardentrack.survey import project_fixes
from gardentrack.track import residual_series


def projected(fixes):
    return project_fixes(fixes, get_projection())


def test_field_scenario_shape(loop):
    sc = field_scenario(loop)
    assert loop.length == pytest.approx(1591, abs=2)
    assert len(sc.stops) == 2
    assert int(sc.duration) + 1 == 1521
    assert [round(b - a) for a, b, _ in sc.dwell_intervals()] == [180, 12, 12, 180]


def test_zero_sigma_reproduces_truth():
    sv = simulated("field", 3, sigma=0.0, quantize=False)
    tr = projected(sv.fixes)
    np.testing.assert_allclose(tr.easting, sv.truth.easting, atol=1e-6)
    np.testing.assert_allclose(tr.northing, sv.truth.northing, atol=1e-6)
    assert np.max(residual_series(sv.truth, sv.scenario.polyline).distance) <= 1e-6


def test_seed_determinism(loop):
    sc = field_scenario(loop)
    a = simulate_survey(sc, ErrorModel(seed=7))
    b = simulate_survey(sc, ErrorModel(seed=7))
    c = simulate_survey(sc, ErrorModel(seed=8))
    assert emit_nmea(a.fixes) == emit_nmea(b.fixes)
    assert not np.array_equal(a.noise, c.noise)


def test_ar1_noise_statistics():
    rng = np.random.default_rng(0)
    samples = np.array([ar1_noise(600, 1.2, 30.0, rng)[[0, 30, 599]] for _ in range(400)])
    # stationary marginal variance at every epoch
    assert samples.std() == pytest.approx(1.2, rel=0.05)
    assert abs(samples.mean()) < 0.05
    lag30 = np.mean(samples[:, 0] * samples[:, 1]) / 1.2 ** 2
    assert lag30 == pytest.approx(math.exp(-1), abs=0.08)


def test_invalid_error_model_and_scenario(loop):
    with pytest.raises(InvalidScenario):
        ErrorModel(sigma=-1)
    with pytest.raises(InvalidScenario):
        ErrorModel(correlation_time=0)
    with pytest.raises(InvalidScenario):
        simulate_survey(Scenario(loop, walk_speed=0), ErrorModel())
    with pytest.raises(InvalidScenario):
        simulate_survey(Scenario(loop, stops=[(500, 10), (100, 10)]), ErrorModel())
    with pytest.raises(InvalidScenario):
        simulate_survey(Scenario(loop, stops=[(5000, 10)]), ErrorModel())


def test_emit_parse_round_trip():
    sv = simulated("field", 1)
    text = emit_nmea(sv.fixes)
    fixes, report = parse_stream(text.splitlines())
    assert report.accepted == 2 * len(sv.fixes)
    assert report.rejected_checksum == report.rejected_malformed == 0
    assert len(report.header_lines) == 3
    assert [f.timestamp for f in fixes] == [f.timestamp for f in sv.fixes]
    # quantized coordinates survive the text round trip exactly
    assert [(f.latitude, f.longitude) for f in fixes] == [(f.latitude, f.longitude) for f in sv.fixes]


def test_emitted_checksums_valid():
    for line in emit_nmea(simulated("field", 2).fixes[:50]).splitlines():
        if line.startswith("$"):
            body, cs = line[1:].split("*")
            assert int(cs, 16) == checksum(body)


def test_quantization_collapses_static_positions():
    fine = simulate_static(300, ErrorModel(0.05, 30.0, 4, quantize=False))
    coarse = simulate_static(300, ErrorModel(0.05, 30.0, 4, quantize=True))
    distinct = lambda fs: len({(f.latitude, f.longitude) for f in fs})
    assert distinct(coarse.fixes) < distinct(fine.fixes)
    assert distinct(simulate_static(300, ErrorModel(0.0, 30.0, 4)).fixes) == 1


def test_static_survey_dwell():
    sv = simulate_static(400, ErrorModel(0.3, 30.0, 1))
    assert len(sv.fixes) == 401 and sv.scenario is None
    assert (sv.dwell[0][1] - sv.dwell[0][0]) == np.timedelta64(400, "s")
    with pytest.raises(InvalidScenario):
        simulate_static(0, ErrorModel())


def test_static_speed_much_smaller_than_sigma():
    # apparent speed of AR(1) noise: E|e_t - e_{t-1}| is a Rayleigh mean
    sigma, tau = 1.2, 30.0
    phi = math.exp(-1 / tau)
    expected = math.sqrt(math.pi / 2) * sigma * math.sqrt(2 * (1 - phi))
    from gardentrack.behaviour import speed_series

    means = [speed_series(projected(simulate_static(600, ErrorModel(sigma, tau, s, False)).fixes)).raw_speed[1:].mean()
             for s in range(20)]
    assert np.mean(means) == pytest.approx(expected, rel=0.05)
    assert expected < sigma / 3


def test_scenario_config(tmp_path):
    cfg = {"n_stops": 3, "stop_duration_s": 15, "start_time": "2021-03-01T09:00:00Z",
           "device_model": "Test phone", "error_model": {"sigma_m": 0.5, "seed": 9}}
    p = tmp_path / "sc.json"
    p.write_text(json.dumps(cfg))
    sc, em, device = load_scenario_config(p)
    assert len(sc.stops) == 3 and sc.stops[0][1] == 15.0
    assert sc.start_time == dt.datetime(2021, 3, 1, 9, tzinfo=dt.timezone.utc)
    assert (em.sigma, em.seed, device) == (0.5, 9, "Test phone")
    with pytest.raises(InvalidScenario):
        load_scenario_config({"stops": [{"along_m": 10}]})


def _detect_rate(sigma, tau, seeds=20):
    ok = 0
    for k in range(seeds):
        sv = simulated("field", k, sigma, tau)
        ok += stop_outcome(sv, analyze_text(emit_nmea(sv.fixes)).stops)[0]
    return ok


@pytest.mark.parametrize("sigma,tau", [(0.5, 20.0), (1.0, 20.0), (1.2, 20.0), (1.2, 30.0), (1.5, 30.0)])
def test_end_to_end_stops_in_attainable_region(sigma, tau):
    assert _detect_rate(sigma, tau) >= 18


@pytest.mark.xfail(strict=True, reason="noise at sigma 1.5 m with 20 s correlation produces slow runs "
                                       "indistinguishable from short stops at a 1 m/s threshold")
def test_end_to_end_stops_noisy_corner():
    assert _detect_rate(1.5, 20.0) >= 18

import json
import math

import numpy as np
import pytest

from vortexline.chaos import (DeviationSeries, DistanceSeries, correlate_events, distance_to_xline, finite_time_lcn,
                              stretching_numbers)
from vortexline.dynamics import IntegratorOptions, integrate_with_deviation
from vortexline.wavefield import ground_state


def _series(alphas, t0=0.05):
    alphas = np.asarray(alphas, dtype=float)
    times = t0 * np.arange(1, len(alphas) + 1)
    k = np.arange(1, len(alphas) + 1)
    return DeviationSeries(times, alphas, np.cumsum(alphas) / (k * t0), t0)


def _distance(times, d):
    return DistanceSeries(np.concatenate([[0.0], times]), np.asarray(d, dtype=float), np.zeros((len(d), 3)),
                          np.zeros((len(d), 3)))


def test_lcn_identity(rng):
    a = rng.normal(size=50)
    s = _series(a)
    for kappa in (1, 7, 50):
        assert finite_time_lcn(s, kappa) == pytest.approx(a[:kappa].sum() / (kappa * 0.05), rel=1e-14)
    with pytest.raises(ValueError):
        finite_time_lcn(s, 0)
    with pytest.raises(ValueError):
        finite_time_lcn(s, 51)


def test_ground_state_control():
    tr = integrate_with_deviation(ground_state(), [-0.7, -1.1, 1.3], [1.0, 0.0, 0.0], (0.0, 2.0))
    s = stretching_numbers(tr)
    assert np.all(s.chi == 0.0)
    assert finite_time_lcn(s, len(s.alphas)) == 0.0


def test_static_flow_has_no_jumps():
    s = _series(np.zeros(40))
    rep = correlate_events(s, _distance(s.times, np.ones(41)))
    assert rep.events == []


def test_synthetic_spike_matched():
    a = np.full(60, 0.01)
    a[30] = 1.5
    d = np.ones(61)
    d[31] = 0.05  # closest approach at the end of the step carrying the spike
    s = _series(a)
    rep = correlate_events(s, _distance(s.times, d))
    assert len(rep.events) == 1
    ev = rep.events[0]
    assert ev.matched and ev.d_min == 0.05 and ev.t_jump == pytest.approx(s.times[30])
    assert rep.summary["fraction_matched"] == 1.0


def test_unmatched_spike_far_from_minimum():
    a = np.full(60, 0.01)
    a[10] = 1.5
    d = np.linspace(2.0, 1.0, 61)
    d[50] = 0.1
    s = _series(a)
    rep = correlate_events(s, _distance(s.times, d))
    assert rep.events and not rep.events[0].matched
    assert rep.summary["jumps_beyond_unit_distance"] == 1


def test_misaligned_series_rejected():
    s = _series(np.ones(5))
    with pytest.raises(ValueError):
        correlate_events(s, _distance(s.times[:-1], np.ones(5)))


def test_report_files(tmp_path):
    a = np.full(20, 0.01)
    a[5] = 1.0
    s = _series(a)
    rep = correlate_events(s, _distance(s.times, np.ones(21)), trajectory={"x0": [0, 0, 1]})
    rep.write(tmp_path / "c.json", tmp_path / "c.csv")
    data = json.loads((tmp_path / "c.json").read_text())
    assert set(data) >= {"trajectory", "t0", "alphas", "chi", "dist", "events", "summary"}
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "t,alpha,log10_abs_alpha,d" and len(lines) == 21
    assert float(lines[6].split(",")[1]) == 1.0


def test_distance_short_segment(spec):
    # a short stretch of the reference trajectory that passes near the X-line
    opts = IntegratorOptions()
    tr = integrate_with_deviation(spec, [-0.7, -1.1, 1.3], [1.0, 0.0, 0.0], (0.0, 6.8), opts)
    seg = integrate_with_deviation(spec, tr.x[-9], tr.deviation[-9], (tr.t[-9], 6.8), opts)
    dist = distance_to_xline(spec, seg)
    assert not dist.lost
    assert np.all(np.isfinite(dist.d))
    assert np.nanmin(dist.d) < 0.5
    assert math.isfinite(stretching_numbers(seg).chi[-1])

import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavitywalk import analysis, cavity, walk
from cavitywalk.analysis import PeakTable, compensate_dead_time, fidelity_series, normalize_steps
from cavitywalk.cavity import CavitySpec, PulseTable, reference_network
from cavitywalk.detector import DetectorSpec, EventStream, simulate_trials
from cavitywalk.errors import AlignmentError, ConfigurationError, EstimationError, SaturationError
from cavitywalk.walk import WalkDistribution

PERIOD = 33000.0


def events(ids, times, tdc=162):
    return EventStream(np.asarray(ids, np.int64), np.asarray(times, np.int64), tdc, PERIOD)


def run(eta, trials, seed=1, steps=62, det=None, cfg=None):
    cfg = cfg or reference_network(eta)
    det = det or DetectorSpec()
    table = cavity.tapped_pulse_table(cfg, steps, cavity.auto_input_energy(cfg, steps))
    ev = simulate_trials(table, det, trials, seed, cfg.trial_period_ns)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return analysis.analyze(ev, cfg, det, trials, steps)


# -- histogram and peaks -----------------------------------------------------

def test_empty_histogram():
    h = analysis.build_histogram(events([], []))
    assert h.counts.sum() == 0 and h.overflow == 0
    assert h.counts.size == int(np.ceil(PERIOD * 1000 / 162))


def test_histogram_rebinning():
    h = analysis.build_histogram(events([0], [10]), bin_width=324)
    assert h.counts[5] == 1 and h.counts.sum() == 1


def test_histogram_overflow():
    with pytest.warns(UserWarning):
        h = analysis.build_histogram(events([0, 1], [10, 10**7]))
    assert h.overflow == 1 and h.counts.sum() == 1


def test_clusters_visible():
    cfg = reference_network(0.5)
    table = cavity.tapped_pulse_table(cfg, 62, cavity.auto_input_energy(cfg, 62))
    ev = simulate_trials(table, DetectorSpec(), 200_000, 2, PERIOD)
    h = analysis.build_histogram(ev, 162 * 6)  # ~1 ns bins
    t = (np.flatnonzero(h.counts > 50) + 0.5) * 0.972
    t = t[t < 4000]
    # merge neighbouring bins of one peak
    groups = np.split(t, np.flatnonzero(np.diff(t) > 2.0) + 1)
    t = np.array([g.mean() for g in groups])
    clusters = np.split(t, np.flatnonzero(np.diff(t) > 100) + 1)
    assert len(clusters) >= 5
    starts = np.array([c[0] for c in clusters])
    assert np.allclose(np.diff(starts), 503.0, atol=1.5)
    inner = np.concatenate([np.diff(c) for c in clusters])
    # faint peaks may fall under the threshold, so spacings are multiples of 8 ns
    assert inner.size and np.all(np.abs(inner / 8.0 - np.rint(inner / 8.0)) < 0.2)
    assert np.any(np.abs(inner - 8.0) < 1.5)


def test_peak_windows():
    cfg = reference_network(0.5)
    h = analysis.build_histogram(events([], []))
    w = analysis.identify_peaks(h, cfg, 2000.0, 62)
    assert len(w) == 62 * 63 // 2 + 63
    assert np.all(w.start[1:] >= w.stop[:-1])
    with pytest.raises(ConfigurationError):
        analysis.identify_peaks(h, cfg, 5000.0, 62)


# -- dead time ---------------------------------------------------------------

def test_dead_time_examples():
    m = 1_000_000
    p, mu, _ = compensate_dead_time([m // 2, m // 4], m)
    np.testing.assert_allclose(p, [0.5, 0.5])
    c = m * (1 - np.exp(-0.1))
    _, mu, _ = compensate_dead_time([c], m)
    assert mu[0] == pytest.approx(0.1, rel=1e-12)
    _, mu, _ = compensate_dead_time([0, 0, 0], m)
    assert np.all(mu == 0)


def test_dead_time_saturation():
    with pytest.raises(SaturationError):
        compensate_dead_time([10, 0], 10)
    with pytest.raises(SaturationError):
        compensate_dead_time([1, 1], 10, survivors=[10, 0])


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=20))
def test_dead_time_monotone(c):
    # more counts in a bin never lowers its estimate; compensation never lowers raw p
    m = 100_000
    c = np.array(c)
    p, mu, _ = compensate_dead_time(c, m)
    assert np.all(mu >= c / m - 1e-15)
    bumped = c.copy()
    bumped[-1] += 1
    assert compensate_dead_time(bumped, m)[1][-1] > mu[-1]


def test_dead_time_inverse_monte_carlo():
    m = 1_000_000
    mu = np.array([0.2, 0.05, 0.1, 0.2, 0.01, 0.15])
    t = 1000.0 + 100.0 * np.arange(mu.size)
    table = PulseTable(1, np.zeros(mu.size, np.int64), np.arange(mu.size), mu, t)
    ev = simulate_trials(table, DetectorSpec(background_rate=0.0), m, 21, PERIOD)
    src = np.rint((ev.times_ns() - 1000.0) / 100.0).astype(int)
    counts = np.bincount(src, minlength=mu.size)
    _, est, sig = compensate_dead_time(counts, m)
    assert np.all(np.abs(est - mu) < 3 * sig)


# -- normalisation and fidelity ----------------------------------------------

def peaks_for(step_mu):
    s, k, m = [], [], []
    for n, mus in step_mu.items():
        for i, x in enumerate(mus):
            s.append(n), k.append(i), m.append(x)
    z = np.zeros(len(s))
    return PeakTable(np.array(s), np.array(k), z.astype(np.int64), z, np.array(m, float), z, z + 1)


def test_normalize_examples():
    d = normalize_steps(peaks_for({1: [2, 2], 2: [3, 1, 0]}))
    np.testing.assert_allclose(d[0].probs, [0.5, 0.5])
    np.testing.assert_allclose(d[1].probs, [0.75, 0.25, 0])
    d = normalize_steps(peaks_for({1: [-0.001, 1]}))
    np.testing.assert_allclose(d[0].probs, [0, 1])
    assert d[0].diagnostics["clamped"] == 1


def test_normalize_drops_dark_steps():
    with pytest.warns(UserWarning, match="dropped"):
        d = normalize_steps(peaks_for({1: [0, 0], 2: [1, 1, 1]}))
    assert [x.step for x in d] == [2]


def test_fidelity_series_alignment():
    th = walk.evolve_port(walk.localized_state(1, 0), walk.coin_from_bias(0.5), 5)
    f = fidelity_series(th, th)
    np.testing.assert_allclose(f.fidelity, 1.0)
    with pytest.raises(AlignmentError):
        fidelity_series(th[:3], th)
    assert fidelity_series(th[:3], th, strict=False).steps.tolist() == [0, 1, 2]
    with pytest.raises(AlignmentError):
        fidelity_series(th, th[:3], strict=False)


# -- loss fit ----------------------------------------------------------------

def test_lossless_fit_gives_zero():
    cfg = reference_network(0.5, cavities=(CavitySpec(503.0), CavitySpec(511.0)),
                        input_coupler_reflectivity=1.0 - 1e-9, output_coupler_reflectivity=1.0 - 1e-9)
    table = cavity.tapped_pulse_table(cfg, 30, 1.0)
    # noiseless peaks straight from the table, rescaled to plenty of counts
    mu = table.mu / table.mu.max()
    pk = PeakTable(table.steps, table.positions, np.zeros(mu.size, np.int64), np.zeros(mu.size),
                   mu, np.zeros(mu.size), np.full(mu.size, 1e12))
    for c in (0, 1):
        est = analysis.estimate_round_trip_loss(pk, c, 0.5, 1.0)
        assert abs(est.loss_db) < 1e-6


def test_fit_needs_points():
    pk = peaks_for({1: [1.0, 1.0]})
    with pytest.raises(EstimationError):
        analysis.estimate_round_trip_loss(pk, 0, 0.5)
    with pytest.raises(EstimationError):
        analysis.estimate_round_trip_loss(pk, 0, 0.0)


# -- full pipeline -----------------------------------------------------------

@pytest.fixture(scope="module")
def half_run():
    return run(0.5, 2_000_000, seed=3)


def test_pipeline_recovers_losses(half_run):
    assert half_run.losses[0].loss_db == pytest.approx(0.50, abs=0.03)
    assert half_run.losses[1].loss_db == pytest.approx(0.47, abs=0.03)


def test_pipeline_early_steps_faithful(half_run):
    f = half_run.fidelity.as_dict()
    assert min(f[n] for n in range(0, 31)) > 0.99


def test_background_subtraction_unbiased():
    # same photon draws with and without background: per-window mu agrees within errors
    cfg = reference_network(0.5)
    quiet = run(0.5, 1_000_000, seed=8, steps=20, det=DetectorSpec(background_rate=0.0), cfg=cfg)
    noisy = run(0.5, 1_000_000, seed=8, steps=20, det=DetectorSpec(background_rate=3e-7), cfg=cfg)
    assert noisy.peaks.background_mu_per_bin > 0
    d = noisy.peaks.mu - quiet.peaks.mu
    bg = noisy.peaks.background / noisy.peaks.survivors
    assert abs(np.mean(d)) < 3 * np.sqrt(np.mean(bg) / 1e6) + 1e-9
    assert np.all(np.abs(d) < 5 * np.hypot(noisy.peaks.sigma, np.sqrt(bg / 1e6)) + 1e-9)


def test_bias_mismatch_detected(half_run):
    cfg8 = reference_network(0.8)
    r = run(0.8, 1_000_000, seed=4, steps=40, cfg=cfg8)
    th5 = {d.step: d for d in analysis.theory_distributions(reference_network(0.5), 40)}
    f = fidelity_series(r.distributions, [th5[d.step] for d in r.distributions])
    assert f.fidelity[f.steps >= 20].min() < 0.99


def test_empty_stream_drops_everything():
    cfg = reference_network(0.5)
    det = DetectorSpec()
    with pytest.warns(UserWarning, match="dropped"):
        r = analysis.analyze(events([], []), cfg, det, 0, 62)
    assert r.distributions == [] and r.fidelity.steps.size == 0
    assert set(r.diagnostics["loss_errors"]) == {0, 1}


def test_header_mismatch_refused():
    with pytest.raises(ConfigurationError):
        analysis.analyze(events([], [], tdc=100), reference_network(0.5), DetectorSpec(), 0, 10)


def test_detection_floor_scales():
    cfg = reference_network(0.5)
    table = cavity.tapped_pulse_table(cfg, 62, cavity.auto_input_energy(cfg, 62))
    f1 = analysis.detection_floor(table, DetectorSpec(), 5_000_000, 62, 2000.0, PERIOD)
    f2 = analysis.detection_floor(table, DetectorSpec(), 20_000_000, 62, 2000.0, PERIOD)
    assert f2 < f1
    # no background: a single count is significant, seen half the time at ln 2 expected counts
    sig, _ = analysis.expected_window_counts(table, DetectorSpec(background_rate=0.0), 10**6, 2000.0, PERIOD)
    f0 = analysis.detection_floor(table, DetectorSpec(background_rate=0.0), 10**6, 62, 2000.0, PERIOD)
    assert f0 * sig[table.steps == 62].sum() == pytest.approx(np.log(2), rel=1e-9)


def test_poisson_detection_rule():
    assert analysis.critical_count(0.0) == 1
    assert analysis.critical_count(0.01) == 2
    assert analysis.critical_count(100.0) > 100 + 2.5 * 10
    assert analysis.detection_probability(0.0, 5.0) <= analysis.ONE_SIDED_3SIGMA
    assert analysis.detection_probability(50.0, 5.0) > 0.999

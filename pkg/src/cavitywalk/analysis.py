"""
From detection events back to walk distributions.

events -> histogram -> template peak windows -> dead-time compensation ->
background subtraction -> per-step normalisation -> fidelity, plus the
round-trip loss fit on the extremal lattice positions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from . import _backend, walk
from .cavity import NetworkConfig, _grid_positions, max_observable_steps, bin_time
from .detector import DetectorSpec, EventStream
from .errors import (
    AlignmentError,
    ConfigurationError,
    EstimationError,
    SaturationError,
    ValidationError,
)
from .walk import WalkDistribution

__all__ = [
    "Histogram",
    "PeakWindows",
    "PeakTable",
    "FidelitySeries",
    "LossEstimate",
    "AnalysisResult",
    "build_histogram",
    "identify_peaks",
    "compensate_dead_time",
    "integrate_peaks",
    "estimate_round_trip_loss",
    "normalize_steps",
    "fidelity_series",
    "theory_distributions",
    "analyze",
    "expected_window_counts",
    "detection_floor",
    "detection_probability",
    "critical_count",
]

DEFAULT_HALFWIDTH_PS = 2000.0
ONE_SIDED_3SIGMA = 0.0013498980316301035


@dataclass(frozen=True)
class Histogram:
    bin_width: int  # ps
    counts: NDArray[np.int64]
    origin: float = 0.0  # ps
    overflow: int = 0


def build_histogram(events: EventStream, bin_width: Optional[int] = None,
                    trial_period_ns: Optional[float] = None) -> Histogram:
    """
    Histogram of detection times over one trial window.

    ``bin_width`` (ps) must be a multiple of the TDC bin and defaults to it.
    Events past the window go to an overflow counter.
    """
    tdc = int(events.tdc_bin_ps)
    bw = tdc if bin_width is None else int(bin_width)
    if bw <= 0 or bw % tdc:
        raise ValidationError(f"bin width {bw} ps is not a positive multiple of the TDC bin {tdc} ps")
    period = events.trial_period_ns if trial_period_ns is None else trial_period_ns
    nbins = int(math.ceil(period * 1000.0 / bw))
    idx = events.detection_time // (bw // tdc)
    inside = idx < nbins
    overflow = int(np.count_nonzero(~inside))
    if overflow:
        warnings.warn(f"{overflow} events fall beyond the trial window")
    counts = np.bincount(idx[inside], minlength=nbins).astype(np.int64)
    return Histogram(bw, counts, 0.0, overflow)


@dataclass(frozen=True)
class PeakWindows:
    """Integration windows in histogram-bin units, sorted by time; ``stop`` is exclusive."""

    steps: NDArray[np.int64]
    positions: NDArray[np.int64]
    center_ps: NDArray[np.float64]
    start: NDArray[np.int64]
    stop: NDArray[np.int64]
    gap_mask: NDArray[np.bool_]  # histogram bins used for the background estimate

    def __len__(self):
        return int(self.steps.size)


def _templates(cfg: NetworkConfig, steps: int):
    times = np.array([c.round_trip_time for c in cfg.cavities])
    n_l, p_l, t_l = [], [], []
    for N in range(steps + 1):
        pos = _grid_positions(cfg.n_cavities, N)
        n_l.append(np.full(len(pos), N))
        p_l.append(pos)
        t_l.append(cfg.detection_path_offset + N * times[0] + pos @ (times[1:] - times[0]))
    pos = np.concatenate(p_l)
    if cfg.dims == 1:
        pos = pos[:, 0]
    return np.concatenate(n_l), pos, np.concatenate(t_l)


def identify_peaks(hist: Histogram, cfg: NetworkConfig, window_halfwidth: float = DEFAULT_HALFWIDTH_PS,
                   steps: Optional[int] = None) -> PeakWindows:
    """
    Assign an integration window to every (step, position) up to ``steps``.

    Windows are centred on the nominal bin times of the configuration; bins
    lying between windows form the background region.
    """
    if steps is None:
        steps = max_observable_steps(cfg).limit
    if window_halfwidth <= 0:
        raise ConfigurationError("window half-width must be positive")
    n, pos, t_ns = _templates(cfg, steps)
    order = np.argsort(t_ns, kind="stable")
    n, pos, t_ns = n[order], pos[order], t_ns[order]
    if t_ns.size > 1:
        spacing = float(np.min(np.diff(t_ns))) * 1000.0
        if 2 * window_halfwidth >= spacing:
            raise ConfigurationError(
                f"windows of half-width {window_halfwidth / 1000:.3g} ns overlap "
                f"(closest bins are {spacing / 1000:.3g} ns apart)"
            )
    c_ps = t_ns * 1000.0
    bw = hist.bin_width
    start = np.floor((c_ps - window_halfwidth - hist.origin) / bw + 0.5).astype(np.int64)
    stop = np.floor((c_ps + window_halfwidth - hist.origin) / bw + 0.5).astype(np.int64)
    if np.any(start < 0) or np.any(stop > hist.counts.size):
        raise ConfigurationError("peak windows extend beyond the histogram range")
    if np.any(start[1:] < stop[:-1]):
        raise ConfigurationError("peak windows overlap after binning; use finer bins or narrower windows")
    gap = np.zeros(hist.counts.size, dtype=bool)
    if start.size:
        gap[start[0]:stop[-1]] = True
        for a, b in zip(start, stop):
            gap[a:b] = False
    return PeakWindows(n, pos, c_ps, start, stop, gap)


def compensate_dead_time(counts: Sequence[int], trials: int, efficiency: float = 1.0,
                         survivors: Optional[Sequence[int]] = None):
    """
    Undo the one-detection-per-trial shadowing.

    ``counts`` are raw counts of time-ordered bins. The detection probability
    of bin ``t`` among trials still live when it arrives is
    ``p = c_t / (M - sum_{s<t} c_s)``, and the mean photon number follows from
    Poisson statistics, ``mu = -ln(1 - p) / efficiency``. ``survivors`` may be
    passed explicitly when the bins do not tile the trial (gaps between them
    also consume trials).

    Returns ``(p, mu, sigma_mu)``; ``sigma_mu`` propagates the binomial error
    ``sqrt(p (1 - p) / M_live)``.
    """
    c = np.asarray(counts, dtype=np.float64)
    if survivors is None:
        if c.sum() > trials:
            raise ValidationError(f"{c.sum():.0f} counts exceed {trials} trials")
        live = trials - np.concatenate(([0.0], np.cumsum(c)[:-1]))
    else:
        live = np.asarray(survivors, dtype=np.float64)
    if np.any(live <= 0):
        raise SaturationError("no surviving trials left for a bin; trial count exhausted")
    p = c / live
    if np.any(p >= 1):
        raise SaturationError("a bin detected in every surviving trial; mean photon number unbounded")
    mu = -np.log1p(-p) / efficiency
    sigma = np.sqrt(p * (1 - p) / live) / (1 - p) / efficiency
    return p, mu, sigma


@dataclass(frozen=True)
class PeakTable:
    """Per (step, position) integrated counts and compensated mean photon numbers."""

    steps: NDArray[np.int64]
    positions: NDArray[np.int64]
    raw_counts: NDArray[np.int64]
    background: NDArray[np.float64]  # expected background counts in the window
    mu: NDArray[np.float64]
    sigma: NDArray[np.float64]
    survivors: NDArray[np.float64] = None
    background_mu_per_bin: float = 0.0
    efficiency: float = 1.0

    def step_rows(self, n: int) -> NDArray[np.intp]:
        idx = np.flatnonzero(self.steps == n)
        return idx[np.argsort(self.positions[idx], kind="stable")]

    def step_numbers(self) -> NDArray[np.int64]:
        return np.unique(self.steps)

    def extremal(self, cavity: int):
        """Rows on the locus reached by staying in ``cavity``: k = 0 for C1, k = N for C2."""
        if cavity == 0:
            sel = self.positions == 0
        else:
            sel = self.positions == self.steps
        idx = np.flatnonzero(sel)
        return idx[np.argsort(self.steps[idx])]


def integrate_peaks(hist: Histogram, windows: PeakWindows, trials: int, efficiency: float = 1.0) -> PeakTable:
    """Sum, dead-time compensate and background-subtract every peak window."""
    counts = hist.counts.astype(np.int64)
    raw = _backend.window_sums(counts, windows.start, windows.stop)
    cum = np.concatenate(([0], np.cumsum(counts)))
    if trials <= 0:
        z = np.zeros(len(windows))
        return PeakTable(windows.steps, windows.positions, raw, z, z.copy(), z.copy(), z.copy(), 0.0, efficiency)
    if cum[-1] > trials:
        raise ValidationError(f"{cum[-1]} events exceed {trials} trials")
    live = trials - cum[windows.start]
    _, mu, sigma = compensate_dead_time(raw, trials, efficiency, survivors=live)

    # background: compensated rate per histogram bin, averaged over inter-window gaps
    gap_bins = np.flatnonzero(windows.gap_mask)
    bg_mu_bin = 0.0
    if gap_bins.size:
        live_b = trials - cum[gap_bins]
        ok = live_b > 0
        _, mu_b, _ = compensate_dead_time(counts[gap_bins][ok], trials, efficiency, survivors=live_b[ok])
        bg_mu_bin = float(np.mean(mu_b)) if mu_b.size else 0.0
    width = (windows.stop - windows.start).astype(np.float64)
    bg_mu = bg_mu_bin * width
    bg_counts = bg_mu * efficiency * live
    return PeakTable(windows.steps, windows.positions, raw, bg_counts, mu - bg_mu, sigma,
                     live.astype(np.float64), bg_mu_bin, efficiency)


@dataclass(frozen=True)
class LossEstimate:
    cavity: int
    loss_db: float
    sigma_db: float
    n_points: int
    slope: float
    intercept: float
    steps_used: NDArray[np.int64] = field(default=None, repr=False)


DB_PER_NEPER = 10.0 / math.log(10.0)


def _wls_line(x, y, w):
    xbar = np.sum(w * x) / np.sum(w)
    sxx = np.sum(w * (x - xbar) ** 2)
    slope = float(np.sum(w * (x - xbar) * y) / sxx)
    intercept = float(np.sum(w * y) / np.sum(w) - slope * xbar)
    return slope, intercept, float(sxx)


def estimate_round_trip_loss(peaks: PeakTable, cavity: int, stay_probability: float,
                             tap_reflectivity: float = 1.0, min_points: int = 5,
                             min_counts: float = 30.0, max_upturn_sigma: float = 5.0,
                             iterations: int = 4) -> LossEstimate:
    """
    Round-trip excess loss of one cavity from the decay of its extremal pulses.

    The per-step energy factor of the extremal locus is
    ``stay_probability * tap_reflectivity * 10**(-L/10)``; a weighted line
    fit of ``ln mu`` against the step number gives its logarithm, which is
    solved for ``L``.

    Points are selected and weighted by the counts the current fit predicts
    for them (not by their own measured value, which would favour upward
    fluctuations near the noise floor): the fit starts from the bright
    leading points and is refined a few times, keeping the leading run of
    steps whose predicted counts reach ``min_counts``.
    """
    if not 0 < stay_probability <= 1:
        raise EstimationError(f"stay probability {stay_probability} leaves no extremal pulses")
    rows = peaks.extremal(cavity)
    mu = peaks.mu[rows]
    n = peaks.steps[rows].astype(np.float64)
    live = peaks.survivors[rows] * peaks.efficiency
    measured_counts = np.clip(mu, 0, None) * live

    def leading(mask):
        bad = np.flatnonzero(~mask)
        return np.arange(bad[0] if bad.size else mask.size)

    use = leading(measured_counts >= 10 * min_counts)
    if use.size < 3:
        use = leading(measured_counts >= min_counts)
    if use.size < 2:
        raise EstimationError(f"too few bright extremal points for cavity {cavity}")
    w = measured_counts[use]
    slope, intercept, sxx = _wls_line(n[use], np.log(mu[use]), w)
    for _ in range(iterations):
        pred = np.exp(intercept + slope * n) * live
        use = leading((pred >= min_counts) & (mu > 0))
        if use.size < 2:
            break
        w = pred[use]
        slope, intercept, sxx = _wls_line(n[use], np.log(mu[use]), w)
    if use.size < min_points:
        raise EstimationError(
            f"only {use.size} extremal points of cavity {cavity} above {min_counts:g} expected counts; "
            f"need {min_points}"
        )
    y = np.log(mu[use])
    resid = (y - intercept - slope * n[use]) * np.sqrt(w)
    dof = use.size - 2
    chi2 = float(np.sum(resid ** 2))
    # inflate by the reduced chi-square when the scatter exceeds shot noise
    scale = max(1.0, chi2 / dof) if dof > 0 else 1.0
    sigma_slope = math.sqrt(scale / sxx)
    upturn = np.diff(y) > max_upturn_sigma * np.sqrt(1 / w[1:] + 1 / w[:-1])
    if slope >= 0 or np.any(upturn):
        raise EstimationError(
            f"extremal pulses of cavity {cavity} do not decay monotonically (slope {slope:.3g})"
        )
    loss = -DB_PER_NEPER * (slope - math.log(stay_probability) - math.log(tap_reflectivity))
    return LossEstimate(cavity, loss, DB_PER_NEPER * sigma_slope, int(use.size), slope, intercept,
                        n[use].astype(np.int64))


def normalize_steps(peaks: PeakTable) -> list:
    """
    Per-step probabilities ``mu / sum(mu)`` with negative values clamped to 0.

    Steps without any positive energy are dropped with a warning.
    """
    out = []
    dropped = []
    for n in peaks.step_numbers():
        rows = peaks.step_rows(int(n))
        mu = peaks.mu[rows]
        neg = int(np.count_nonzero(mu < 0))
        e = np.clip(mu, 0.0, None)
        tot = e.sum()
        if not tot > 0:
            dropped.append(int(n))
            continue
        diag = {"clamped": neg, "energy": float(tot), "sigma": peaks.sigma[rows] / tot}
        if peaks.positions.ndim == 1:
            probs = np.zeros(int(n) + 1)
            probs[peaks.positions[rows]] = e / tot
        else:
            probs = np.zeros((int(n) + 1,) * peaks.positions.shape[1])
            probs[tuple(peaks.positions[rows].T)] = e / tot
        out.append(WalkDistribution(int(n), probs, diag))
    if dropped:
        warnings.warn(f"dropped {len(dropped)} step(s) without positive energy: {dropped[:10]}"
                      + (" ..." if len(dropped) > 10 else ""))
    return out


@dataclass(frozen=True)
class FidelitySeries:
    steps: NDArray[np.int64]
    fidelity: NDArray[np.float64]

    def min(self) -> float:
        return float(np.min(self.fidelity)) if self.fidelity.size else float("nan")

    def as_dict(self) -> dict:
        return {int(n): float(f) for n, f in zip(self.steps, self.fidelity)}


def fidelity_series(measured: Sequence[WalkDistribution], theory: Sequence[WalkDistribution],
                    strict: bool = True) -> FidelitySeries:
    """
    Bhattacharyya fidelity of each measured step against the theory for that step.

    With ``strict`` both series must cover the same steps; otherwise theory
    steps without a measurement are ignored.
    """
    th = {d.step: d for d in theory}
    ms = {d.step: d for d in measured}
    missing = sorted(set(ms) - set(th))
    if missing or (strict and set(ms) != set(th)):
        raise AlignmentError(
            f"step ranges differ: measured {sorted(ms)[:3]}..{sorted(ms)[-3:] if ms else []}, "
            f"theory {sorted(th)[:3]}..{sorted(th)[-3:] if th else []}"
        )
    steps = np.array(sorted(ms), dtype=np.int64)
    f = np.array([walk.fidelity(ms[s], th[s]) for s in steps])
    return FidelitySeries(steps, f)


def theory_distributions(cfg: NetworkConfig, steps: int) -> list:
    """Ideal (lossless) distributions seen through the output tap, steps ``0 .. steps``."""
    start = walk.localized_state(cfg.dims, 0)
    return walk.evolve_port(start, cfg.coin, steps, cavity=cfg.output_cavity_index)


@dataclass
class AnalysisResult:
    histogram: Histogram
    windows: PeakWindows
    peaks: PeakTable
    distributions: list
    fidelity: FidelitySeries
    losses: dict
    diagnostics: dict


def analyze(events: EventStream, cfg: NetworkConfig, det: DetectorSpec, trials: int,
            steps: Optional[int] = None, window_halfwidth: float = DEFAULT_HALFWIDTH_PS) -> AnalysisResult:
    """Full inverse pipeline on one event stream."""
    if events.tdc_bin_ps != det.tdc_bin_ps:
        raise ConfigurationError(
            f"event file TDC bin {events.tdc_bin_ps} ps does not match configured {det.tdc_bin_ps} ps"
        )
    if not math.isclose(events.trial_period_ns, cfg.trial_period_ns, rel_tol=1e-9):
        raise ConfigurationError(
            f"event file trial period {events.trial_period_ns} ns does not match configured "
            f"{cfg.trial_period_ns} ns"
        )
    if steps is None:
        steps = max_observable_steps(cfg).limit
    hist = build_histogram(events, det.tdc_bin_ps, cfg.trial_period_ns)
    windows = identify_peaks(hist, cfg, window_halfwidth, steps)
    peaks = integrate_peaks(hist, windows, trials, det.efficiency)
    diagnostics = {"overflow": hist.overflow, "events": len(events), "trials": trials}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        dists = normalize_steps(peaks)
    diagnostics["warnings"] = [str(w.message) for w in caught]
    for w in caught:
        warnings.warn(w.message)
    theory = {d.step: d for d in theory_distributions(cfg, steps)}
    fid = fidelity_series(dists, [theory[d.step] for d in dists])
    losses = {}
    eta = cfg.coin.bias
    if cfg.dims == 1 and eta is not None:
        taps = (cfg.input_coupler_reflectivity, cfg.output_coupler_reflectivity)
        for c in (0, 1):
            try:
                losses[c] = estimate_round_trip_loss(peaks, c, eta, taps[c])
            except EstimationError as exc:
                diagnostics.setdefault("loss_errors", {})[c] = str(exc)
    return AnalysisResult(hist, windows, peaks, dists, fid, losses, diagnostics)


def expected_window_counts(table, det: DetectorSpec, trials: int, window_halfwidth: float,
                           trial_period_ns: float):
    """
    Expected raw counts per pulse window and expected background counts in it.

    Uses the exact one-detection-per-trial survival: a window at time ``t``
    is live in a trial only if nothing (light or background) was detected
    earlier. Jitter is neglected, as windows are many jitter widths wide.
    """
    order = np.argsort(table.time_ns, kind="stable")
    lam = table.mu[order] * det.efficiency
    t = table.time_ns[order]
    w_ns = 2 * window_halfwidth / 1000.0
    bg_rate = det.background_rate
    bg_w = bg_rate * w_ns
    # light and background arriving strictly before each window
    before = np.concatenate(([0.0], np.cumsum(lam)[:-1])) + bg_rate * (t - window_halfwidth / 1000.0)
    live = trials * np.exp(-before)
    signal = live * (1 - np.exp(-lam)) * np.exp(-bg_w / 2)
    background = live * (1 - np.exp(-bg_w))
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    return signal[inv], background[inv]


def _poisson_sf(n: int, lam: float) -> float:
    """P(X >= n) for X ~ Poisson(lam)."""
    if n <= 0:
        return 1.0
    if lam <= 0:
        return 0.0
    i = np.arange(n)
    log_pmf = -lam + i * math.log(lam) - np.array([math.lgamma(k + 1) for k in i])
    return float(max(0.0, 1.0 - np.sum(np.exp(log_pmf))))


def critical_count(background: float, false_alarm: float = ONE_SIDED_3SIGMA) -> int:
    """Smallest window count that background alone reaches with probability <= ``false_alarm``."""
    n = 0
    while _poisson_sf(n, background) > false_alarm:
        n += 1
    return n


def detection_probability(signal: float, background: float, false_alarm: float = ONE_SIDED_3SIGMA) -> float:
    """Chance that a window with ``signal + background`` expected counts reaches the critical count."""
    return _poisson_sf(critical_count(background, false_alarm), signal + background)


def detection_floor(table, det: DetectorSpec, trials: int, step: int, window_halfwidth: float,
                    trial_period_ns: float, false_alarm: float = ONE_SIDED_3SIGMA) -> float:
    """
    Smallest outcome probability at ``step`` that is more likely than not to
    rise above background in its window.

    The threshold is the Poisson critical count of the mean window
    background at a one-sided ``false_alarm`` rate (3 sigma by default);
    an outcome of probability ``p`` puts ``p`` times the step's expected
    counts into the window.
    """
    sig, bg = expected_window_counts(table, det, trials, window_halfwidth, trial_period_ns)
    rows = table.steps == step
    step_counts = float(np.sum(sig[rows]))
    if step_counts <= 0:
        return float("inf")
    b = float(np.mean(bg[rows]))
    n_c = critical_count(b, false_alarm)
    lo, hi = 0.0, float(n_c) + 10.0 * math.sqrt(n_c) + 10.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if _poisson_sf(n_c, mid + b) >= 0.5:
            hi = mid
        else:
            lo = mid
    return hi / step_counts

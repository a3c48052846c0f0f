"""
Single-photon detector Monte Carlo and the event file format.

Each trial draws Poisson photon numbers for every output pulse and a Poisson
number of background clicks spread uniformly over the trial window. Every
candidate click gets Gaussian timing jitter, is quantised onto the TDC grid,
and only the earliest one is kept: the detector records at most one event
per trial.

Trials are generated in fixed-size blocks. Block ``b`` draws from its own
generator seeded by ``SeedSequence(seed, spawn_key=(b, stream))``, so output
does not depend on how blocks are spread over worker threads.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from . import _backend
from .cavity import MAX_TOTAL_PHOTONS, PulseTable
from .errors import ValidationError

__all__ = [
    "DetectorSpec",
    "EventStream",
    "simulate_trials",
    "write_events",
    "read_events",
    "FWHM_PER_SIGMA",
    "EVENT_HEADER",
]

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))
EVENT_HEADER = "#cavitywalk-events v1"
BLOCK_TRIALS = 1 << 17
# dark counts plus stray light (~0.1 clicks/s equivalent)
DEFAULT_BACKGROUND_PER_NS = 1e-10

_PHOTON_STREAM = 0
_BACKGROUND_STREAM = 1


@dataclass(frozen=True)
class DetectorSpec:
    """
    Detector and timing electronics.

    ``background_rate`` is in clicks per ns per trial, uniform over the trial
    window. The only dead-time policy supported is one detection per trial.
    """

    jitter_fwhm_ps: float = 300.0
    tdc_bin_ps: int = 162
    efficiency: float = 1.0
    background_rate: float = DEFAULT_BACKGROUND_PER_NS
    dead_time_policy: str = "one-per-trial"

    def __post_init__(self):
        if self.jitter_fwhm_ps < 0:
            raise ValidationError(f"jitter FWHM must be >= 0, got {self.jitter_fwhm_ps}")
        if not self.tdc_bin_ps > 0 or int(self.tdc_bin_ps) != self.tdc_bin_ps:
            raise ValidationError(f"TDC bin must be a positive integer (ps), got {self.tdc_bin_ps}")
        if not 0 < self.efficiency <= 1:
            raise ValidationError(f"efficiency must lie in (0, 1], got {self.efficiency}")
        if self.background_rate < 0:
            raise ValidationError("background rate must be >= 0")
        if self.dead_time_policy != "one-per-trial":
            raise ValidationError(f"unsupported dead-time policy {self.dead_time_policy!r}")

    @property
    def jitter_sigma_ns(self) -> float:
        return self.jitter_fwhm_ps / FWHM_PER_SIGMA / 1000.0


@dataclass(frozen=True)
class EventStream:
    """Detection records ordered by trial id; ``n_trials`` is the number of trials run."""

    trial_id: NDArray[np.int64]
    detection_time: NDArray[np.int64]
    tdc_bin_ps: int
    trial_period_ns: float
    n_trials: Optional[int] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return int(self.trial_id.size)

    def times_ns(self) -> NDArray[np.float64]:
        return self.detection_time * (self.tdc_bin_ps / 1000.0)

    def validate(self):
        if np.any(self.detection_time < 0):
            raise ValidationError("detection times must be >= 0")
        if self.trial_id.size > 1 and np.any(np.diff(self.trial_id) <= 0):
            raise ValidationError("trial ids must be strictly increasing")
        return self


def _block(args):
    (b, start, size, seed, lam, cdf, nominal, sigma, bg_lam, window_ns, tdc_ps) = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b, _PHOTON_STREAM)))
    n_ph = rng.poisson(lam, size=size).astype(np.int64)
    total = int(n_ph.sum())
    src = np.searchsorted(cdf, rng.random(total), side="right").astype(np.intp)
    np.minimum(src, len(nominal) - 1, out=src)
    z = rng.standard_normal(total)
    if bg_lam > 0:
        rb = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b, _BACKGROUND_STREAM)))
        n_bg = rb.poisson(bg_lam, size=size).astype(np.int64)
        u = rb.random(int(n_bg.sum()))
    else:
        n_bg = np.zeros(size, dtype=np.int64)
        u = np.zeros(0)
    first = _backend.first_detections(n_ph, src, z, nominal, sigma, n_bg, u, window_ns, float(tdc_ps))
    hit = np.flatnonzero(first >= 0)
    return hit + start, first[hit]


def simulate_trials(
    table: PulseTable,
    det: DetectorSpec,
    trials: int,
    seed: int,
    trial_period_ns: float,
    workers: int = 1,
    block_trials: int = BLOCK_TRIALS,
) -> EventStream:
    """Run ``trials`` independent trials; deterministic in ``seed`` for any ``workers``."""
    if trials < 0:
        raise ValidationError(f"trial count must be >= 0, got {trials}")
    if table.total() >= MAX_TOTAL_PHOTONS:
        raise ValidationError(f"pulse table carries {table.total():.3g} photons per trial (must be < 1)")
    if np.any(table.mu < 0):
        raise ValidationError("negative mean photon number in pulse table")
    rates = table.mu * det.efficiency
    lam = float(rates.sum())
    cdf = np.cumsum(rates) / lam if lam > 0 else np.ones(max(rates.size, 1))
    nominal = np.ascontiguousarray(table.time_ns if table.time_ns.size else np.zeros(1), dtype=np.float64)
    bg_lam = det.background_rate * trial_period_ns
    jobs = []
    for b, start in enumerate(range(0, trials, block_trials)):
        size = min(block_trials, trials - start)
        jobs.append((b, start, size, seed, lam, cdf, nominal, det.jitter_sigma_ns, bg_lam,
                     float(trial_period_ns), det.tdc_bin_ps))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_block, jobs))
    else:
        parts = [_block(j) for j in jobs]
    if parts:
        tid = np.concatenate([p[0] for p in parts]).astype(np.int64)
        tt = np.concatenate([p[1] for p in parts]).astype(np.int64)
    else:
        tid = np.zeros(0, dtype=np.int64)
        tt = np.zeros(0, dtype=np.int64)
    return EventStream(tid, tt, int(det.tdc_bin_ps), float(trial_period_ns), trials)


def _header(stream: EventStream) -> str:
    return f"{EVENT_HEADER} tdc_bin_ps={int(stream.tdc_bin_ps)} trial_period_ns={float(stream.trial_period_ns)!r}\n"


def write_events(stream: EventStream, sink) -> None:
    """Write ``stream`` to a path or text file object in the event file format."""
    if isinstance(sink, (str, Path)):
        try:
            with open(sink, "w", encoding="utf-8", newline="\n") as fh:
                write_events(stream, fh)
        except OSError as exc:
            raise OSError(f"cannot write event file {sink}: {exc}") from exc
        return
    sink.write(_header(stream))
    chunk = 1 << 20
    for i in range(0, len(stream), chunk):
        a = stream.trial_id[i:i + chunk].tolist()
        b = stream.detection_time[i:i + chunk].tolist()
        sink.write("".join(f"{x} {y}\n" for x, y in zip(a, b)))


def _parse_header(line: str) -> dict:
    parts = line.split()
    if len(parts) < 2 or " ".join(parts[:2]) != EVENT_HEADER:
        raise ValidationError(f"not a cavitywalk event file (header {line.strip()!r})")
    fields = {}
    for tok in parts[2:]:
        key, _, val = tok.partition("=")
        fields[key] = val
    try:
        return {"tdc_bin_ps": int(fields["tdc_bin_ps"]), "trial_period_ns": float(fields["trial_period_ns"])}
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"malformed event header {line.strip()!r}") from exc


def read_events(source, n_trials: Optional[int] = None) -> EventStream:
    """Read an event file written by :func:`write_events`."""
    if isinstance(source, (str, Path)):
        try:
            with open(source, "r", encoding="utf-8") as fh:
                return read_events(fh, n_trials)
        except OSError as exc:
            raise OSError(f"cannot read event file {source}: {exc}") from exc
    head = _parse_header(source.readline())
    body = source.read()
    if body.strip():
        data = np.loadtxt(io.StringIO(body), dtype=np.int64, ndmin=2)
        if data.shape[1] != 2:
            raise ValidationError("event records must have two fields")
        tid, tt = data[:, 0].copy(), data[:, 1].copy()
    else:
        tid = np.zeros(0, dtype=np.int64)
        tt = np.zeros(0, dtype=np.int64)
    return EventStream(tid, tt, head["tdc_bin_ps"], head["trial_period_ns"], n_trials).validate()

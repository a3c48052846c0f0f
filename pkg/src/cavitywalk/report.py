"""Plain-text result reports (``#cavitywalk-report v1``)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import AnalysisResult, FidelitySeries, fidelity_series
from .errors import ValidationError
from .walk import WalkDistribution

__all__ = ["Report", "report_from_analysis", "report_from_distributions", "write_report", "read_report",
           "compare_reports", "REPORT_HEADER"]

REPORT_HEADER = "#cavitywalk-report v1"
COLUMNS = "# N k raw_counts background mu sigma P"


def _g(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".12g")


@dataclass
class Report:
    """Rows ``(N, k, raw_counts, background, mu, sigma, P)`` plus fidelity and loss blocks."""

    rows: np.ndarray  # shape (n, 7), float
    fidelity: dict = field(default_factory=dict)
    losses: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def distributions(self) -> list:
        out = []
        if self.rows.size == 0:
            return out
        steps = self.rows[:, 0].astype(int)
        for n in np.unique(steps):
            r = self.rows[steps == n]
            p = r[:, 6]
            if not np.all(np.isfinite(p)):
                continue
            probs = np.zeros(int(n) + 1)
            probs[r[:, 1].astype(int)] = p
            out.append(WalkDistribution(int(n), probs))
        return out


def report_from_analysis(result: AnalysisResult) -> Report:
    pk = result.peaks
    probs = np.full(pk.steps.size, np.nan)
    for d in result.distributions:
        rows = pk.step_rows(d.step)
        probs[rows] = d.probs[pk.positions[rows]]
    order = np.lexsort((pk.positions, pk.steps))
    rows = np.column_stack([pk.steps, pk.positions, pk.raw_counts, pk.background, pk.mu, pk.sigma, probs])[order]
    losses = {c: (l.loss_db, l.sigma_db, l.n_points) for c, l in result.losses.items()}
    notes = list(result.diagnostics.get("warnings", []))
    for c, msg in result.diagnostics.get("loss_errors", {}).items():
        notes.append(f"loss estimate for cavity {c} unavailable: {msg}")
    return Report(rows.astype(float), result.fidelity.as_dict(), losses, notes)


def report_from_distributions(dists) -> Report:
    rows = []
    for d in dists:
        for k, p in enumerate(d.probs):
            rows.append((d.step, k, 0, 0.0, p, 0.0, p))
    return Report(np.array(rows, dtype=float).reshape(-1, 7))


def write_report(report: Report, sink) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8", newline="\n") as fh:
            write_report(report, fh)
        return
    sink.write(REPORT_HEADER + "\n")
    for note in report.notes:
        sink.write("# note: " + " ".join(str(note).split()) + "\n")
    for c in sorted(report.losses):
        db, sig, npts = report.losses[c]
        sink.write(f"#loss cavity={c} db={_g(db)} sigma_db={_g(sig)} points={int(npts)}\n")
    sink.write(COLUMNS + "\n")
    for r in report.rows:
        sink.write(f"{int(r[0])} {int(r[1])} {int(r[2])} {_g(r[3])} {_g(r[4])} {_g(r[5])} {_g(r[6])}\n")
    sink.write("#fidelity N F\n")
    for n in sorted(report.fidelity):
        sink.write(f"{int(n)} {_g(report.fidelity[n])}\n")


def read_report(source) -> Report:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return read_report(fh)
    first = source.readline().strip()
    if first != REPORT_HEADER:
        raise ValidationError(f"not a cavitywalk report (header {first!r})")
    rows, fid, losses, notes = [], {}, {}, []
    in_fid = False
    for line in source:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("#fidelity"):
                in_fid = True
            elif line.startswith("#loss"):
                kv = dict(tok.split("=", 1) for tok in line.split()[1:])
                losses[int(kv["cavity"])] = (float(kv["db"]), float(kv["sigma_db"]), int(kv["points"]))
            elif line.startswith("# note:"):
                notes.append(line[len("# note:"):].strip())
            continue
        parts = line.split()
        if in_fid:
            if len(parts) != 2:
                raise ValidationError(f"malformed fidelity line {line!r}")
            fid[int(parts[0])] = float(parts[1])
        else:
            if len(parts) != 7:
                raise ValidationError(f"malformed report line {line!r}")
            rows.append([float(x) for x in parts])
    return Report(np.array(rows, dtype=float).reshape(-1, 7), fid, losses, notes)


def compare_reports(a: Report, b: Report) -> FidelitySeries:
    """Per-step fidelity between the distributions of two reports (step sets must match)."""
    return fidelity_series(a.distributions(), b.distributions(), strict=True)

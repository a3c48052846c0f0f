"""
Command-line entry points.

    cavitywalk simulate-ideal     per-step ideal walk distributions
    cavitywalk simulate-physical  detector Monte Carlo -> event file
    cavitywalk analyze EVENTS     event file -> report (distributions, losses, fidelity)
    cavitywalk compare A B        per-step fidelity between two reports

Exit status: 0 on success, 1 for invalid input or configuration, 2 for
runtime and estimation failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings

import numpy as np

from . import walk
from .analysis import analyze, theory_distributions
from .cavity import bin_time, tapped_pulse_table
from .config import RunConfig, load_config
from .detector import read_events, simulate_trials, write_events
from .errors import CavityWalkError, ValidationError
from .report import compare_reports, read_report, report_from_analysis, report_from_distributions, write_report

log = logging.getLogger("cavitywalk")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _load(args) -> RunConfig:
    over = {"seed": args.seed, "trials": args.trials, "steps": args.steps}
    if getattr(args, "workers", None) is not None:
        over["workers"] = args.workers
    return load_config(args.config, **over).validate()


def cmd_simulate_ideal(args) -> int:
    rc = _load(args)
    cfg = rc.network()
    start = walk.localized_state(1, 0)
    if args.observable == "tap":
        dists = theory_distributions(cfg, rc.steps)
    else:
        dists = walk.evolve(start, cfg.coin, rc.steps) if rc.steps >= 1 else []
    out = args.out or rc.report_path
    write_report(report_from_distributions(dists), out)
    print(f"wrote {len(dists)} ideal step distributions (eta_c={rc.eta_c}) to {out}")
    return EXIT_OK


def _cluster_events(events, cfg, n, halfwidth_ns):
    lo = bin_time(cfg, n, 0) - halfwidth_ns
    hi = bin_time(cfg, n, n) + halfwidth_ns
    t = events.times_ns()
    return int(np.count_nonzero((t >= lo) & (t < hi)))


def cmd_simulate_physical(args) -> int:
    rc = _load(args)
    cfg, det = rc.network(), rc.detector()
    energy = rc.resolved_input_energy(cfg)
    table = tapped_pulse_table(cfg, rc.steps, energy)
    events = simulate_trials(table, det, rc.trials, rc.seed, cfg.trial_period_ns, workers=rc.workers)
    out = args.out or rc.events_path
    write_events(events, out)
    last = _cluster_events(events, cfg, rc.steps, rc.window_halfwidth_ns) if rc.trials else 0
    print(f"trials={rc.trials} input_energy={energy:.6g} photons_per_trial={table.total():.4g}")
    print(f"events={len(events)} events_in_step_{rc.steps}={last}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    rc = _load(args)
    cfg, det = rc.network(), rc.detector()
    events = read_events(args.events)
    if events.tdc_bin_ps != det.tdc_bin_ps or abs(events.trial_period_ns - cfg.trial_period_ns) > 1e-6:
        raise ValidationError(
            f"event file header (tdc_bin_ps={events.tdc_bin_ps}, trial_period_ns={events.trial_period_ns}) "
            f"does not match the configuration (tdc_bin_ps={det.tdc_bin_ps}, "
            f"trial_period_ns={cfg.trial_period_ns})"
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = analyze(events, cfg, det, rc.trials, rc.steps, rc.window_halfwidth_ns * 1000.0)
    for msg in result.diagnostics.get("warnings", []):
        log.warning(msg)
    report = report_from_analysis(result)
    out = args.out or rc.report_path
    write_report(report, out)
    f = result.fidelity
    if f.fidelity.size:
        print(f"steps analysed={f.steps.size} min_fidelity={f.min():.5f} (step {int(f.steps[np.argmin(f.fidelity)])})")
    else:
        print("no step could be normalised")
    for c, l in sorted(result.losses.items()):
        print(f"loss C{c + 1}: {l.loss_db:.4f} +- {l.sigma_db:.4f} dB ({l.n_points} points)")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    a, b = read_report(args.report_a), read_report(args.report_b)
    series = compare_reports(a, b)
    lines = [f"{int(n)} {f:.12g}" for n, f in zip(series.steps, series.fidelity)]
    text = "# N F\n" + "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cavitywalk", description="Time-bin quantum walks in coupled fiber cavities")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_run=True):
        sp.add_argument("--config", help="configuration file (key = value)")
        sp.add_argument("--out", help="output path")
        if with_run:
            sp.add_argument("--seed", type=int)
            sp.add_argument("--trials", type=int)
            sp.add_argument("--steps", type=int)
            sp.add_argument("--workers", type=int)

    sp = sub.add_parser("simulate-ideal", help="ideal walk distributions")
    common(sp)
    sp.add_argument("--observable", choices=("walk", "tap"), default="walk",
                    help="full walk distribution, or the distribution seen at the output tap")
    sp.set_defaults(func=cmd_simulate_ideal)

    sp = sub.add_parser("simulate-physical", help="Monte Carlo event file")
    common(sp)
    sp.set_defaults(func=cmd_simulate_physical)

    sp = sub.add_parser("analyze", help="analyse an event file")
    common(sp)
    sp.add_argument("events", help="event file")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("compare", help="per-step fidelity between two reports")
    sp.add_argument("report_a")
    sp.add_argument("report_b")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CavityWalkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

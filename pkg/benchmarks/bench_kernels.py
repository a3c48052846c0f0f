"""
Compiled vs numpy detector kernels.

    python benchmarks/bench_kernels.py [--trials N] [--repeat R]

Times ``simulate_trials`` at the default configuration with each backend and
checks both produce the same events.
"""

import argparse
import time

import numpy as np

from cavitywalk import _pykernels, cavity, detector
from cavitywalk.config import parse_config

try:
    from cavitywalk import _kernels
except ImportError:
    _kernels = None


def run(kernels, table, det, trials, period, repeat):
    detector._backend.first_detections = kernels.first_detections
    best, ev = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        ev = detector.simulate_trials(table, det, trials, 1, period)
        best = min(best, time.perf_counter() - t0)
    return best, ev


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--trials", type=int, default=5_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rc = parse_config("")
    cfg, det = rc.network(), rc.detector()
    table = cavity.tapped_pulse_table(cfg, rc.steps, rc.resolved_input_energy(cfg))
    saved = detector._backend.first_detections
    try:
        t_py, ev_py = run(_pykernels, table, det, args.trials, cfg.trial_period_ns, args.repeat)
        print(f"numpy   : {t_py:.3f} s for {args.trials} trials ({len(ev_py)} events)")
        if _kernels is None:
            print("compiled: not built")
            return
        t_c, ev_c = run(_kernels, table, det, args.trials, cfg.trial_period_ns, args.repeat)
        print(f"compiled: {t_c:.3f} s ({t_py / t_c:.2f}x)")
        same = np.array_equal(ev_py.trial_id, ev_c.trial_id) and np.array_equal(ev_py.detection_time, ev_c.detection_time)
        print(f"identical events: {same}")
    finally:
        detector._backend.first_detections = saved


if __name__ == "__main__":
    main()

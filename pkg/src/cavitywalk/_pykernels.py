"""Pure numpy versions of the compiled kernels (bit-identical results)."""

import numpy as np


def _min_per_trial(counts, idx, n_trials):
    out = np.full(n_trials, -1, dtype=np.int64)
    has = counts > 0
    if not np.any(has):
        return out
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))[has]
    out[has] = np.minimum.reduceat(idx, starts)
    return out


def first_detections(photon_counts, src, z, nominal_ns, sigma_ns, background_counts, u, window_ns, tdc_ps):
    """Earliest quantised candidate time per trial, -1 where a trial has none."""
    n = photon_counts.shape[0]
    t = nominal_ns[src] + sigma_ns * z
    ip = np.floor(t * 1000.0 / tdc_ps).astype(np.int64)
    np.maximum(ip, 0, out=ip)
    best = _min_per_trial(photon_counts, ip, n)
    if u.size:
        ib = np.floor(u * window_ns * 1000.0 / tdc_ps).astype(np.int64)
        np.maximum(ib, 0, out=ib)
        bb = _min_per_trial(background_counts, ib, n)
        both = (best >= 0) & (bb >= 0)
        best = np.where(both, np.minimum(best, bb), np.maximum(best, bb))
    return best


def window_sums(counts, starts, stops):
    """Sum of ``counts[start:stop]`` for each window."""
    cum = np.concatenate(([0], np.cumsum(counts, dtype=np.int64)))
    return cum[stops] - cum[starts]

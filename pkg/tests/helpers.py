"""Brute-force reference implementations shared by the test modules."""

import numpy as np

from spadcorr.correlator import CorrelationAccumulator
from spadcorr.sensor import Frame


def random_event_frames(rng, n_frames, n_pix, bins, max_events=8,
                        p_empty=0.2):
    """Random valid Frame list; empty frames are skipped (ids stay gapped)."""
    frames = []
    for fid in range(n_frames):
        if rng.random() < p_empty:
            continue
        k = int(rng.integers(1, max_events + 1))
        k = min(k, n_pix)
        pix = np.sort(rng.choice(np.arange(1, n_pix + 1), size=k,
                                 replace=False))
        tdc = rng.integers(0, bins, k)
        ev = np.stack([pix.astype(np.uint16), tdc.astype(np.uint16)], axis=1)
        frames.append(Frame(frame_id=fid, events=ev))
    return frames


def quadratic_accumulate(frames, n_x, n_y, bins, window, shift,
                         n_frames=None):
    """Reference accumulator built from plain nested loops over event pairs."""
    n_pix = n_x * n_y
    acc = CorrelationAccumulator(n_x=n_x, n_y=n_y, bins_per_frame=bins,
                                 window=window, shift=shift)
    acc.n_frames = len(frames) if n_frames is None else n_frames
    half = bins - 1
    for fr in frames:
        events = [(int(p), int(t)) for p, t in fr.events]
        for p, _ in events:
            acc.g1[p - 1] += 1
        for i, (p1, t1) in enumerate(events):
            for j, (p2, t2) in enumerate(events):
                if i == j:
                    continue
                dt = t1 - t2
                acc.dt_hist[dt + half] += 1
                if abs(dt) <= window:
                    acc.g2[p1 - 1, p2 - 1] += 1
                    if t2 > t1:
                        acc.g2_later[p1 - 1, p2 - 1] += 1
                if abs(abs(dt) - shift) <= window:
                    acc.g2_shifted[p1 - 1, p2 - 1] += 1
    return acc


def quadruple_loop_projections(values, n_x, n_y):
    """Axis and sum/diff projections via explicit quadruple loops."""
    t = np.asarray(values).reshape(n_y, n_x, n_y, n_x)
    g2x = np.zeros((n_x, n_x))
    g2y = np.zeros((n_y, n_y))
    sum_map = np.zeros((2 * n_x - 1, 2 * n_y - 1))
    diff_map = np.zeros((2 * n_x - 1, 2 * n_y - 1))
    for y1 in range(n_y):
        for x1 in range(n_x):
            for y2 in range(n_y):
                for x2 in range(n_x):
                    v = t[y1, x1, y2, x2]
                    g2x[x1, x2] += v
                    g2y[y1, y2] += v
                    sum_map[x1 + x2, y1 + y2] += v
                    diff_map[x1 - x2 + n_x - 1, y1 - y2 + n_y - 1] += v
    return g2x, g2y, sum_map, diff_map

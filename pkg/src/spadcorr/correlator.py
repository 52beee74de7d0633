"""Frame-wise coincidence accumulation and correction of pixel-pair tensors.

Pixels are addressed by the linear index l = px + n_x*(py - 1) with px, py
starting at 1, so l runs from 1 to n_x*n_y. Tensors are stored 0-based:
g2[l1-1, l2-1]. Both orderings of every coincident pair are counted and the
diagonal stays structurally zero because a pixel fires at most once per frame.

The correction chain is recorded in provenance flags on CorrectedG2 and must
advance in one direction only:

    raw -> accidental_subtracted -> crosstalk_corrected -> neighbor_masked

Skipping a stage is allowed where noted; revisiting one is not.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import arraystore
from .errors import (
    ConfigError,
    DisjointnessViolation,
    EmptyAccumulator,
    FlagOrderViolation,
    InsufficientMask,
    MalformedFrame,
    OutOfRange,
    WindowTooLarge,
)
from .sensor import Frame, FrameBatch

FLAG_ORDER = ("raw", "accidental_subtracted", "crosstalk_corrected",
              "neighbor_masked")

MFRAMES = 1.0e6


def linear_index(px, py, n_x=32, n_y=32):
    """1-based linear pixel index, row-major with x running fastest."""
    px = np.asarray(px)
    py = np.asarray(py)
    if np.any(px < 1) or np.any(px > n_x) or np.any(py < 1) or np.any(py > n_y):
        raise OutOfRange("pixel coordinates outside the array")
    out = px + n_x * (py - 1)
    return int(out) if out.ndim == 0 else out


def linear_to_pixel(lin, n_x=32, n_y=32):
    lin = np.asarray(lin)
    if np.any(lin < 1) or np.any(lin > n_x * n_y):
        raise OutOfRange("linear index outside the array")
    px = (lin - 1) % n_x + 1
    py = (lin - 1) // n_x + 1
    if lin.ndim == 0:
        return int(px), int(py)
    return px, py


def _window_mass(bins_per_frame, lo, hi):
    # Number of ordered same-frame bin pairs whose difference d falls in
    # [lo, hi]: uniform arrivals make the difference triangular with weight
    # (B - |d|) per d.
    d = np.arange(lo, hi + 1)
    w = bins_per_frame - np.abs(d)
    return int(np.sum(np.where(w > 0, w, 0)))


@dataclass(eq=False)
class CorrelationAccumulator:
    """Mergeable raw-count store for one correlation pass.

    g2 and g2_shifted hold ordered pixel-pair counts inside the prompt
    window |dt| <= window and the displaced window ||dt| - shift| <= window.
    g2_later[l1, l2] counts the prompt pairs where l2 fired strictly after
    l1; the tdc-equal remainder is direction-blind. dt_hist covers every
    same-frame pair regardless of window, both signs.
    """

    n_x: int
    n_y: int
    bins_per_frame: int
    window: int
    shift: int
    mapping_mode: str = "unspecified"
    n_frames: int = 0
    g2: np.ndarray = field(default=None)
    g2_shifted: np.ndarray = field(default=None)
    g2_later: np.ndarray = field(default=None)
    g1: np.ndarray = field(default=None)
    dt_hist: np.ndarray = field(default=None)

    def __post_init__(self):
        n_pix = self.n_x * self.n_y
        if self.window < 0 or self.window > self.bins_per_frame - 1:
            raise WindowTooLarge("coincidence window exceeds the frame")
        if self.shift <= self.window:
            raise DisjointnessViolation(
                "shifted window overlaps the prompt window")
        if self.g2 is None:
            self.g2 = np.zeros((n_pix, n_pix), dtype=np.int64)
        if self.g2_shifted is None:
            self.g2_shifted = np.zeros((n_pix, n_pix), dtype=np.int64)
        if self.g2_later is None:
            self.g2_later = np.zeros((n_pix, n_pix), dtype=np.int64)
        if self.g1 is None:
            self.g1 = np.zeros(n_pix, dtype=np.int64)
        if self.dt_hist is None:
            self.dt_hist = np.zeros(2 * self.bins_per_frame - 1,
                                    dtype=np.int64)

    @property
    def n_pixels(self) -> int:
        return self.n_x * self.n_y

    def _compatible(self, other: "CorrelationAccumulator") -> None:
        for name in ("n_x", "n_y", "bins_per_frame", "window", "shift",
                     "mapping_mode"):
            if getattr(self, name) != getattr(other, name):
                raise ConfigError(f"accumulators differ in {name}")

    def merge(self, other: "CorrelationAccumulator") -> "CorrelationAccumulator":
        """Elementwise integer sum; exact, so merge order never matters."""
        self._compatible(other)
        out = CorrelationAccumulator(
            n_x=self.n_x, n_y=self.n_y, bins_per_frame=self.bins_per_frame,
            window=self.window, shift=self.shift,
            mapping_mode=self.mapping_mode,
            n_frames=self.n_frames + other.n_frames,
            g2=self.g2 + other.g2,
            g2_shifted=self.g2_shifted + other.g2_shifted,
            g2_later=self.g2_later + other.g2_later,
            g1=self.g1 + other.g1,
            dt_hist=self.dt_hist + other.dt_hist)
        return out

    def add_batch(self, batch: FrameBatch) -> None:
        f = np.asarray(batch.frame_ids, dtype=np.int64)
        p = np.asarray(batch.pixels, dtype=np.int64)
        t = np.asarray(batch.tdc, dtype=np.int64)
        if not (f.shape == p.shape == t.shape):
            raise MalformedFrame("event columns differ in length")
        self.n_frames += int(batch.n_frames)
        if f.size == 0:
            return
        if np.any(p < 1) or np.any(p > self.n_pixels):
            raise MalformedFrame("pixel index outside the array")
        if np.any(t < 0) or np.any(t >= self.bins_per_frame):
            raise MalformedFrame("tdc code outside the frame")
        order = np.lexsort((p, f))
        f, p, t = f[order], p[order], t[order]
        same = f[1:] == f[:-1]
        if np.any(same & (p[1:] == p[:-1])):
            raise MalformedFrame("pixel fired twice in one frame")
        self.g1 += np.bincount(p - 1, minlength=self.n_pixels)

        counts = np.diff(np.flatnonzero(
            np.r_[True, ~same, True]))
        half = self.bins_per_frame - 1
        for d in range(1, int(counts.max())):
            sel = np.flatnonzero(f[:-d] == f[d:])
            if sel.size == 0:
                continue
            p1 = p[sel] - 1
            p2 = p[sel + d] - 1
            dt = t[sel] - t[sel + d]
            np.add.at(self.dt_hist, dt + half, 1)
            np.add.at(self.dt_hist, -dt + half, 1)
            adt = np.abs(dt)
            win = adt <= self.window
            if np.any(win):
                np.add.at(self.g2, (p1[win], p2[win]), 1)
                np.add.at(self.g2, (p2[win], p1[win]), 1)
                fwd = win & (dt < 0)
                if np.any(fwd):
                    np.add.at(self.g2_later, (p1[fwd], p2[fwd]), 1)
                rev = win & (dt > 0)
                if np.any(rev):
                    np.add.at(self.g2_later, (p2[rev], p1[rev]), 1)
            sw = np.abs(adt - self.shift) <= self.window
            if np.any(sw):
                np.add.at(self.g2_shifted, (p1[sw], p2[sw]), 1)
                np.add.at(self.g2_shifted, (p2[sw], p1[sw]), 1)

    def save(self, path) -> None:
        arraystore.save_arrays(
            path,
            {"g2": self.g2, "g2_shifted": self.g2_shifted,
             "g2_later": self.g2_later, "g1": self.g1,
             "dt_hist": self.dt_hist},
            {"kind": "accumulator", "n_x": self.n_x, "n_y": self.n_y,
             "bins_per_frame": self.bins_per_frame, "window": self.window,
             "shift": self.shift, "mapping_mode": self.mapping_mode,
             "n_frames": self.n_frames})

    @classmethod
    def load(cls, path) -> "CorrelationAccumulator":
        arrays, meta = arraystore.load_arrays(path)
        if meta.get("kind") != "accumulator":
            raise ConfigError("container does not hold an accumulator")
        return cls(n_x=meta["n_x"], n_y=meta["n_y"],
                   bins_per_frame=meta["bins_per_frame"],
                   window=meta["window"], shift=meta["shift"],
                   mapping_mode=meta["mapping_mode"],
                   n_frames=meta["n_frames"], **arrays)


def _as_batches(frames):
    # Loose Frame objects count one frame each; empty exposures must be
    # passed explicitly to be counted.
    from .sensor import frames_to_batch

    def pack(pending):
        return frames_to_batch(pending,
                               start_frame=min(fr.frame_id for fr in pending),
                               n_frames=len(pending))

    if isinstance(frames, FrameBatch):
        yield frames
        return
    pending = []
    for item in frames:
        if isinstance(item, FrameBatch):
            if pending:
                yield pack(pending)
                pending = []
            yield item
        elif isinstance(item, Frame):
            pending.append(item)
            if len(pending) >= 8192:
                yield pack(pending)
                pending = []
        else:
            raise MalformedFrame(f"cannot accumulate {type(item).__name__}")
    if pending:
        yield pack(pending)


def accumulate(frames, *, window=10, shift=20, n_x=32, n_y=32,
               bins_per_frame=255, mapping_mode="unspecified",
               workers=1) -> CorrelationAccumulator:
    """Build a CorrelationAccumulator from frames or frame batches.

    The result is independent of the worker count: each worker fills its own
    accumulator and the final merge is an integer sum.
    """
    def fresh():
        return CorrelationAccumulator(
            n_x=n_x, n_y=n_y, bins_per_frame=bins_per_frame, window=window,
            shift=shift, mapping_mode=mapping_mode)

    batches = _as_batches(frames)
    if workers <= 1:
        acc = fresh()
        for batch in batches:
            acc.add_batch(batch)
        return acc

    accs = [fresh() for _ in range(workers)]
    lock = threading.Lock()
    it = iter(batches)

    def drain(acc):
        while True:
            with lock:
                batch = next(it, None)
            if batch is None:
                return
            acc.add_batch(batch)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(drain, accs))
    acc = accs[0]
    for other in accs[1:]:
        acc = acc.merge(other)
    return acc


@dataclass(eq=False)
class CorrectedG2:
    """Pixel-pair rates per 1e6 frames, with correction provenance.

    values_later keeps the strictly-ordered share of each pair rate
    (second pixel fired after the first); the cross-talk estimator reads
    it to attribute echo direction. It is maintained through accidental
    subtraction only, later stages do not need it.
    """

    values: np.ndarray
    g1: np.ndarray
    flags: tuple
    n_x: int
    n_y: int
    bins_per_frame: int
    window: int
    shift: int
    n_frames: int
    mapping_mode: str
    masked: np.ndarray = None
    mask_radius: int = None
    values_later: np.ndarray = None

    def __post_init__(self):
        if self.masked is None:
            self.masked = np.zeros_like(self.values, dtype=bool)
        if self.values_later is None:
            self.values_later = np.zeros_like(self.values)

    @property
    def n_pixels(self) -> int:
        return self.n_x * self.n_y

    def save(self, path) -> None:
        arraystore.save_arrays(
            path,
            {"values": self.values, "g1": self.g1, "masked": self.masked,
             "values_later": self.values_later},
            {"kind": "corrected_g2", "flags": list(self.flags),
             "n_x": self.n_x, "n_y": self.n_y,
             "bins_per_frame": self.bins_per_frame, "window": self.window,
             "shift": self.shift, "n_frames": self.n_frames,
             "mapping_mode": self.mapping_mode,
             "mask_radius": self.mask_radius})

    @classmethod
    def load(cls, path) -> "CorrectedG2":
        arrays, meta = arraystore.load_arrays(path)
        if meta.get("kind") != "corrected_g2":
            raise ConfigError("container does not hold a corrected tensor")
        return cls(values=arrays["values"], g1=arrays["g1"],
                   masked=arrays["masked"].astype(bool),
                   values_later=arrays.get("values_later"),
                   flags=tuple(meta["flags"]), n_x=meta["n_x"],
                   n_y=meta["n_y"], bins_per_frame=meta["bins_per_frame"],
                   window=meta["window"], shift=meta["shift"],
                   n_frames=meta["n_frames"],
                   mapping_mode=meta["mapping_mode"],
                   mask_radius=meta["mask_radius"])


def _require_stage(corr: CorrectedG2, adding: str, needs: tuple) -> None:
    if adding in corr.flags:
        raise FlagOrderViolation(f"{adding} already applied")
    idx = FLAG_ORDER.index(adding)
    for later in FLAG_ORDER[idx + 1:]:
        if later in corr.flags:
            raise FlagOrderViolation(
                f"cannot apply {adding} after {later}")
    for flag in needs:
        if flag not in corr.flags:
            raise FlagOrderViolation(f"{adding} requires {flag} first")


def normalize(acc: CorrelationAccumulator) -> CorrectedG2:
    """Convert raw counts to rates per 1e6 frames."""
    if acc.n_frames <= 0:
        raise EmptyAccumulator("no frames accumulated")
    scale = MFRAMES / acc.n_frames
    return CorrectedG2(
        values=acc.g2.astype(np.float64) * scale,
        values_later=acc.g2_later.astype(np.float64) * scale,
        g1=acc.g1.astype(np.float64) * scale,
        flags=("raw",), n_x=acc.n_x, n_y=acc.n_y,
        bins_per_frame=acc.bins_per_frame, window=acc.window,
        shift=acc.shift, n_frames=acc.n_frames,
        mapping_mode=acc.mapping_mode)


def _locus_distance(n_x, n_y, mapping_mode):
    # Chebyshev distance of each ordered pixel pair from the correlated
    # locus: the diagonal always, plus the mirror diagonal for far-field
    # data where pairs land on opposite sides of the optical axis.
    x = np.arange(n_x)
    y = np.arange(n_y)
    xi, yi = np.meshgrid(x, y, indexing="xy")
    px = xi.ravel()
    py = yi.ravel()
    ddiag = np.maximum(np.abs(px[:, None] - px[None, :]),
                       np.abs(py[:, None] - py[None, :]))
    if mapping_mode != "far":
        return ddiag
    mx = (n_x - 1) - px
    my = (n_y - 1) - py
    dmirr = np.maximum(np.abs(px[:, None] - mx[None, :]),
                       np.abs(py[:, None] - my[None, :]))
    return np.minimum(ddiag, dmirr)


def estimate_accidentals(acc: CorrelationAccumulator, method="shifted_window",
                         *, mask_distance=10, min_mask_pairs=100) -> np.ndarray:
    """Accidental-coincidence estimate per 1e6 frames, diagonal zero.

    shifted_window rescales the displaced-window counts by the ratio of
    triangular bin-difference occupancies so the estimate is unbiased even
    near the frame edge. g1_product fits a single constant on pairs far from
    every correlated locus and extrapolates c*g1(p1)*g1(p2).
    """
    if acc.n_frames <= 0:
        raise EmptyAccumulator("no frames accumulated")
    scale = MFRAMES / acc.n_frames
    if method == "shifted_window":
        if acc.shift <= acc.window:
            raise DisjointnessViolation(
                "shifted window overlaps the prompt window")
        prompt = _window_mass(acc.bins_per_frame, -acc.window, acc.window)
        displaced = (
            _window_mass(acc.bins_per_frame, acc.shift - acc.window,
                         acc.shift + acc.window)
            + _window_mass(acc.bins_per_frame, -acc.shift - acc.window,
                           -acc.shift + acc.window))
        # add_batch tests |dt|, so the displaced tensor carries both sign
        # intervals; the denominator above counts both as well.
        if displaced <= 0:
            raise DisjointnessViolation("shifted window has no occupancy")
        est = acc.g2_shifted.astype(np.float64)
        est *= (prompt / displaced) * scale
        return est
    if method == "g1_product":
        dist = _locus_distance(acc.n_x, acc.n_y, acc.mapping_mode)
        sel = dist >= mask_distance
        if int(np.count_nonzero(sel)) < min_mask_pairs:
            raise InsufficientMask(
                f"only {int(np.count_nonzero(sel))} uncorrelated pairs")
        outer = acc.g1.astype(np.float64)[:, None] * acc.g1[None, :]
        g2 = acc.g2.astype(np.float64)
        denom = float(np.sum(outer[sel] ** 2))
        if denom <= 0:
            if np.any(g2[sel]):
                raise InsufficientMask("mask region has no singles")
            return np.zeros_like(g2)
        c = float(np.sum(g2[sel] * outer[sel])) / denom
        est = c * outer
        np.fill_diagonal(est, 0.0)
        return est * scale
    raise ConfigError(f"unknown accidental estimator {method!r}")


def subtract_accidentals(corr: CorrectedG2, estimate: np.ndarray) -> CorrectedG2:
    """Subtract an accidental estimate; negative residuals are kept.

    Uncorrelated pairs have a sign-symmetric dt distribution with the
    triangular bin occupancy, so the strictly-ordered share receives the
    matching fraction of the estimate.
    """
    _require_stage(corr, "accidental_subtracted", ("raw",))
    estimate = np.asarray(estimate, float)
    if estimate.shape != corr.values.shape:
        raise ConfigError("estimate shape does not match the tensor")
    pos = _window_mass(corr.bins_per_frame, 1, corr.window)
    both = _window_mass(corr.bins_per_frame, -corr.window, corr.window)
    return replace(corr, values=corr.values - estimate,
                   values_later=corr.values_later - estimate * (pos / both),
                   flags=corr.flags + ("accidental_subtracted",))


@dataclass(eq=False)
class CrosstalkMap:
    """Per-detection neighbour firing probabilities over pixel offsets."""

    probabilities: np.ndarray
    radius: int
    clamped_negative: int = 0

    def probability(self, dx: int, dy: int) -> float:
        r = self.radius
        if abs(dx) > r or abs(dy) > r:
            return 0.0
        return float(self.probabilities[dx + r, dy + r])

    def save(self, path) -> None:
        arraystore.save_arrays(
            path, {"probabilities": self.probabilities},
            {"kind": "crosstalk_map", "radius": self.radius,
             "clamped_negative": self.clamped_negative})

    @classmethod
    def load(cls, path) -> "CrosstalkMap":
        arrays, meta = arraystore.load_arrays(path)
        if meta.get("kind") != "crosstalk_map":
            raise ConfigError("container does not hold a cross-talk map")
        return cls(probabilities=arrays["probabilities"],
                   radius=meta["radius"],
                   clamped_negative=meta["clamped_negative"])


def estimate_crosstalk(corr: CorrectedG2, inner_window=29) -> CrosstalkMap:
    """Estimate cross-talk probabilities from an accidental-subtracted tensor.

    For uncorrelated illumination the only prompt pairs left after accidental
    subtraction are detection/echo pairs, so summing g2 over an inner block
    of source pixels at fixed offset and dividing by the singles in that
    block yields the combined echo rate of the +offset and -offset
    directions. Echoes always fire after their source, so the
    strictly-ordered share splits that total between the two directions;
    pairs in the same tdc bin carry no direction and follow the ordered
    ratio (an even split when no ordered pairs survive subtraction, which
    reproduces the plain half-total rule). Negative cells clamp to zero and
    are counted.
    """
    _require_stage(corr, "crosstalk_corrected", ("accidental_subtracted",))
    n_x, n_y = corr.n_x, corr.n_y
    if inner_window < 1 or inner_window > min(n_x, n_y):
        raise WindowTooLarge("inner window does not fit on the sensor")
    radius = inner_window - 1
    lo_x = (n_x - inner_window) // 2
    lo_y = (n_y - inner_window) // 2
    vals = corr.values.reshape(n_y, n_x, n_y, n_x)
    later = corr.values_later.reshape(n_y, n_x, n_y, n_x)
    g1 = corr.g1.reshape(n_y, n_x)
    ys = np.arange(lo_y, lo_y + inner_window)
    xs = np.arange(lo_x, lo_x + inner_window)
    norm = float(np.sum(g1[np.ix_(ys, xs)]))
    if norm <= 0:
        raise EmptyAccumulator("inner window saw no singles")
    prob = np.zeros((2 * radius + 1, 2 * radius + 1))
    clamped = 0
    for dx in range(-radius, radius + 1):
        tx = xs + dx
        okx = (tx >= 0) & (tx < n_x)
        for dy in range(-radius, radius + 1):
            if dx == 0 and dy == 0:
                continue
            ty = ys + dy
            oky = (ty >= 0) & (ty < n_y)
            if not (np.any(okx) and np.any(oky)):
                continue
            sy = ys[oky][:, None]
            sx = xs[okx][None, :]
            tyk = ty[oky][:, None]
            txk = tx[okx][None, :]
            total = float(np.sum(vals[sy, sx, tyk, txk]))
            fwd = max(float(np.sum(later[sy, sx, tyk, txk])), 0.0)
            rev = max(float(np.sum(later[tyk, txk, sy, sx])), 0.0)
            share = fwd / (fwd + rev) if fwd + rev > 0 else 0.5
            p = share * total / norm
            if p < 0:
                clamped += 1
                p = 0.0
            prob[dx + radius, dy + radius] = p
    return CrosstalkMap(probabilities=prob, radius=radius,
                        clamped_negative=clamped)


def _offset_lookup(cmap: CrosstalkMap, n_x: int, n_y: int) -> np.ndarray:
    # XT[l1, l2] = p(pixel(l2) - pixel(l1)) for every ordered pixel pair.
    x = np.arange(n_x)
    y = np.arange(n_y)
    xi, yi = np.meshgrid(x, y, indexing="xy")
    px = xi.ravel()
    py = yi.ravel()
    dx = px[None, :] - px[:, None]
    dy = py[None, :] - py[:, None]
    r = cmap.radius
    inside = (np.abs(dx) <= r) & (np.abs(dy) <= r)
    out = np.zeros((n_x * n_y, n_x * n_y))
    out[inside] = cmap.probabilities[dx[inside] + r, dy[inside] + r]
    return out


def correct_crosstalk(corr: CorrectedG2, cmap: CrosstalkMap) -> CorrectedG2:
    """Remove first-order detection/echo coincidences.

    An echo of a detection at p1 landing on p2 contributes
    p(p2 - p1) * g1(p1) pairs, and symmetrically for echoes of p2.
    """
    _require_stage(corr, "crosstalk_corrected", ("accidental_subtracted",))
    xt = _offset_lookup(cmap, corr.n_x, corr.n_y)
    echo = xt * corr.g1[:, None] + xt.T * corr.g1[None, :]
    return replace(corr, values=corr.values - echo,
                   flags=corr.flags + ("crosstalk_corrected",))


def neighbor_mask_pairs(n_x: int, n_y: int, radius: int) -> np.ndarray:
    """Boolean (n_pix, n_pix) matrix of pairs within Chebyshev radius."""
    dist = _locus_distance(n_x, n_y, "unspecified")
    return (dist <= radius) & (dist > 0)


def mask_neighbors(corr: CorrectedG2, radius=1) -> CorrectedG2:
    """Zero and flag pairs of distinct pixels within Chebyshev radius.

    Cross-talk residuals and blooming live on immediate neighbours; masking
    removes them at the cost of holes near the correlation peak. Valid after
    either the accidental or the cross-talk stage, always last.
    """
    if radius < 0:
        raise ConfigError("mask radius must be non-negative")
    _require_stage(corr, "neighbor_masked", ("accidental_subtracted",))
    masked = neighbor_mask_pairs(corr.n_x, corr.n_y, radius)
    values = corr.values.copy()
    values[masked] = 0.0
    return replace(corr, values=values, masked=masked | corr.masked,
                   mask_radius=radius,
                   flags=corr.flags + ("neighbor_masked",))


def project_axes(values: np.ndarray, n_x: int, n_y: int):
    """Collapse g2[l1, l2] to per-axis tensors (x1, x2) and (y1, y2)."""
    t = np.asarray(values).reshape(n_y, n_x, n_y, n_x)
    g2x = t.sum(axis=(0, 2))
    g2y = t.sum(axis=(1, 3))
    return g2x, g2y


def project_sum_diff(values: np.ndarray, n_x: int, n_y: int):
    """Histogram pairs over (p1 + p2) and (p1 - p2) pixel coordinates.

    sum_map[sx, sy] covers px1+px2 in [2, 2*n_x]; diff_map[dx, dy] covers
    px1-px2 in [-(n_x-1), n_x-1]. Index 0 is the lowest value of each range.
    """
    t = np.asarray(values).reshape(n_y, n_x, n_y, n_x)
    y1, x1, y2, x2 = np.indices(t.shape, sparse=False)
    sum_map = np.zeros((2 * n_x - 1, 2 * n_y - 1))
    diff_map = np.zeros((2 * n_x - 1, 2 * n_y - 1))
    np.add.at(sum_map, ((x1 + x2).ravel(), (y1 + y2).ravel()), t.ravel())
    np.add.at(diff_map, ((x1 - x2).ravel() + n_x - 1,
                         (y1 - y2).ravel() + n_y - 1), t.ravel())
    return sum_map, diff_map

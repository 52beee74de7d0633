import numpy as np
import pytest

from helpers import (
    quadratic_accumulate,
    quadruple_loop_projections,
    random_event_frames,
)
from spadcorr.correlator import (
    CorrectedG2,
    CorrelationAccumulator,
    CrosstalkMap,
    accumulate,
    correct_crosstalk,
    estimate_accidentals,
    estimate_crosstalk,
    linear_index,
    linear_to_pixel,
    mask_neighbors,
    neighbor_mask_pairs,
    normalize,
    project_axes,
    project_sum_diff,
    subtract_accidentals,
)
from spadcorr.errors import (
    ConfigError,
    DisjointnessViolation,
    EmptyAccumulator,
    FlagOrderViolation,
    InsufficientMask,
    MalformedFrame,
    OutOfRange,
    WindowTooLarge,
)
from spadcorr.sensor import CrosstalkSpec, Frame, SensorConfig, \
    frames_to_batch, simulate_frames

# triangular occupancy of the default 255-bin frame
POS_MASS = sum(255 - d for d in range(1, 11))            # dt in [1, 10]
BOTH_MASS = 255 + 2 * POS_MASS                           # dt in [-10, 10]


def make_frame(fid, pixels, tdcs):
    ev = np.stack([np.asarray(pixels, dtype=np.uint16),
                   np.asarray(tdcs, dtype=np.uint16)], axis=1)
    return Frame(frame_id=fid, events=ev)


def blank_corrected(n_x=32, n_y=32, flags=("raw",), **kw):
    n_pix = n_x * n_y
    fields = dict(values=np.zeros((n_pix, n_pix)), g1=np.zeros(n_pix),
                  flags=flags, n_x=n_x, n_y=n_y, bins_per_frame=255,
                  window=10, shift=20, n_frames=1_000_000,
                  mapping_mode="unspecified")
    fields.update(kw)
    return CorrectedG2(**fields)


def block_offset_rate(corr, dx, dy, inner=29):
    """Mean pair rate per single at one pixel offset, estimator-style."""
    n_x, n_y = corr.n_x, corr.n_y
    lo_x = (n_x - inner) // 2
    lo_y = (n_y - inner) // 2
    vals = corr.values.reshape(n_y, n_x, n_y, n_x)
    g1 = corr.g1.reshape(n_y, n_x)
    xs = np.arange(lo_x, lo_x + inner)
    ys = np.arange(lo_y, lo_y + inner)
    tx, ty = xs + dx, ys + dy
    okx = (tx >= 0) & (tx < n_x)
    oky = (ty >= 0) & (ty < n_y)
    sy = ys[oky][:, None]
    sx = xs[okx][None, :]
    tyk = ty[oky][:, None]
    txk = tx[okx][None, :]
    norm = float(g1[np.ix_(ys, xs)].sum())
    return float(vals[sy, sx, tyk, txk].sum()) / norm


class TestLinearIndex:
    def test_corners_and_midpoints(self):
        assert linear_index(1, 1) == 1
        assert linear_index(32, 32) == 1024
        assert linear_index(5, 2) == 37
        assert linear_to_pixel(37) == (5, 2)
        assert linear_to_pixel(1) == (1, 1)
        assert linear_to_pixel(1024) == (32, 32)

    def test_round_trip_all_pixels(self):
        lin = np.arange(1, 1025)
        px, py = linear_to_pixel(lin)
        np.testing.assert_array_equal(linear_index(px, py), lin)

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            linear_index(0, 1)
        with pytest.raises(OutOfRange):
            linear_index(33, 1)
        with pytest.raises(OutOfRange):
            linear_to_pixel(0)
        with pytest.raises(OutOfRange):
            linear_to_pixel(1025)


class TestAccumulate:
    def test_two_events_inside_and_outside_window(self):
        frame = make_frame(0, [10, 12], [10, 12])
        acc = accumulate([frame], window=10, shift=20)
        assert acc.g2[9, 11] == 1
        assert acc.g2[11, 9] == 1
        assert acc.g2.sum() == 2
        acc = accumulate([frame], window=1, shift=20)
        assert acc.g2[9, 11] == 0
        assert acc.g2.sum() == 0

    def test_three_events_count_all_pairs(self):
        frame = make_frame(0, [1, 2, 3], [0, 5, 9])
        acc = accumulate([frame], window=10, shift=20)
        assert acc.g2.sum() == 6
        assert np.all(np.diag(acc.g2) == 0)

    def test_later_counts_tag_the_second_detection(self):
        frame = make_frame(0, [4, 9], [7, 3])     # pixel 9 fired first
        acc = accumulate([frame], window=10, shift=20)
        assert acc.g2_later[8, 3] == 1
        assert acc.g2_later[3, 8] == 0
        tie = make_frame(0, [4, 9], [5, 5])       # equal bins carry no order
        acc = accumulate([tie], window=10, shift=20)
        assert acc.g2_later.sum() == 0
        assert acc.g2[3, 8] == 1

    def test_shifted_window_sees_displaced_pairs(self):
        frame = make_frame(0, [7, 8], [0, 20])
        acc = accumulate([frame], window=5, shift=20)
        assert acc.g2.sum() == 0
        assert acc.g2_shifted[6, 7] == 1
        assert acc.g2_shifted[7, 6] == 1

    def test_dt_histogram_is_symmetric_and_complete(self):
        rng = np.random.default_rng(31)
        frames = random_event_frames(rng, 200, 1024, 255)
        acc = accumulate(frames)
        np.testing.assert_array_equal(acc.dt_hist, acc.dt_hist[::-1])
        pairs = sum(len(f.events) * (len(f.events) - 1) for f in frames)
        assert acc.dt_hist.sum() == pairs

    def test_matches_quadratic_reference(self):
        rng = np.random.default_rng(32)
        for n_x, n_y, bins in ((4, 4, 255), (32, 32, 255), (8, 4, 64)):
            frames = random_event_frames(rng, 30, n_x * n_y, bins)
            acc = accumulate(frames, window=10, shift=20, n_x=n_x, n_y=n_y,
                             bins_per_frame=bins)
            ref = quadratic_accumulate(frames, n_x, n_y, bins, 10, 20)
            np.testing.assert_array_equal(acc.g2, ref.g2)
            np.testing.assert_array_equal(acc.g2_shifted, ref.g2_shifted)
            np.testing.assert_array_equal(acc.g2_later, ref.g2_later)
            np.testing.assert_array_equal(acc.g1, ref.g1)
            np.testing.assert_array_equal(acc.dt_hist, ref.dt_hist)

    def test_loose_frames_match_packed_batch(self):
        rng = np.random.default_rng(33)
        frames = random_event_frames(rng, 50, 1024, 255)
        a = accumulate(frames)
        b = accumulate(frames_to_batch(frames, 0, len(frames)))
        np.testing.assert_array_equal(a.g2, b.g2)
        np.testing.assert_array_equal(a.g1, b.g1)
        assert a.n_frames == b.n_frames == len(frames)

    def test_worker_count_invisible(self, reference_model, far_mapping):
        cfg = SensorConfig(dark_rate_hz=10000.0)
        batches = list(simulate_frames(reference_model, far_mapping, cfg,
                                       3 * 65536, 0.3, seed=34))
        a = accumulate(batches, workers=1, mapping_mode="far")
        b = accumulate(batches, workers=4, mapping_mode="far")
        assert a.n_frames == b.n_frames
        np.testing.assert_array_equal(a.g2, b.g2)
        np.testing.assert_array_equal(a.g2_shifted, b.g2_shifted)
        np.testing.assert_array_equal(a.g2_later, b.g2_later)
        np.testing.assert_array_equal(a.g1, b.g1)
        np.testing.assert_array_equal(a.dt_hist, b.dt_hist)

    def test_merge_requires_identical_geometry(self):
        a = CorrelationAccumulator(n_x=4, n_y=4, bins_per_frame=255,
                                   window=10, shift=20)
        b = CorrelationAccumulator(n_x=8, n_y=4, bins_per_frame=255,
                                   window=10, shift=20)
        with pytest.raises(ConfigError):
            a.merge(b)

    def test_window_and_shift_validation(self):
        with pytest.raises(WindowTooLarge):
            accumulate([], window=255, shift=300)
        with pytest.raises(DisjointnessViolation):
            accumulate([], window=10, shift=10)

    def test_malformed_frames_rejected(self):
        with pytest.raises(MalformedFrame, match="outside the array"):
            accumulate([make_frame(0, [0], [0])])
        with pytest.raises(MalformedFrame, match="outside the array"):
            accumulate([make_frame(0, [1025], [0])])
        with pytest.raises(MalformedFrame, match="outside the frame"):
            accumulate([make_frame(0, [1], [255])])
        with pytest.raises(MalformedFrame, match="fired twice"):
            accumulate([make_frame(0, [5, 5], [1, 2])])
        with pytest.raises(MalformedFrame):
            accumulate(["not a frame"])
        batch = frames_to_batch([make_frame(0, [1], [0])], 0, 1)
        bad = frames_to_batch([make_frame(0, [1], [0])], 0, 1)
        object.__setattr__(bad, "tdc", np.zeros(2, dtype=np.uint8))
        with pytest.raises(MalformedFrame, match="columns"):
            accumulate(bad)
        del batch

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(35)
        frames = random_event_frames(rng, 40, 1024, 255)
        acc = accumulate(frames, mapping_mode="near")
        path = tmp_path / "acc.blk"
        acc.save(path)
        back = CorrelationAccumulator.load(path)
        assert back.n_frames == acc.n_frames
        assert back.mapping_mode == "near"
        np.testing.assert_array_equal(back.g2, acc.g2)
        np.testing.assert_array_equal(back.g2_shifted, acc.g2_shifted)
        np.testing.assert_array_equal(back.g2_later, acc.g2_later)
        np.testing.assert_array_equal(back.g1, acc.g1)
        np.testing.assert_array_equal(back.dt_hist, acc.dt_hist)


class TestNormalize:
    def test_rate_scaling(self):
        acc = CorrelationAccumulator(n_x=32, n_y=32, bins_per_frame=255,
                                     window=10, shift=20, n_frames=2_000_000)
        acc.g2[3, 5] = 500
        acc.g2_later[3, 5] = 200
        acc.g1[3] = 1000
        corr = normalize(acc)
        assert corr.values[3, 5] == 250.0
        assert corr.values_later[3, 5] == 100.0
        assert corr.g1[3] == 500.0
        assert corr.flags == ("raw",)
        assert corr.n_frames == 2_000_000

    def test_empty_accumulator_rejected(self):
        acc = CorrelationAccumulator(n_x=4, n_y=4, bins_per_frame=255,
                                     window=10, shift=20)
        with pytest.raises(EmptyAccumulator):
            normalize(acc)


class TestAccidentals:
    def test_estimators_zero_on_silent_input(self):
        acc = CorrelationAccumulator(n_x=32, n_y=32, bins_per_frame=255,
                                     window=10, shift=20, n_frames=1000)
        for method in ("shifted_window", "g1_product"):
            est = estimate_accidentals(acc, method)
            assert est.shape == (1024, 1024)
            assert np.all(est == 0.0)

    def test_unknown_method_rejected(self):
        acc = CorrelationAccumulator(n_x=4, n_y=4, bins_per_frame=255,
                                     window=10, shift=20, n_frames=10)
        with pytest.raises(ConfigError):
            estimate_accidentals(acc, "dark_magic")

    def test_empty_accumulator_rejected(self):
        acc = CorrelationAccumulator(n_x=4, n_y=4, bins_per_frame=255,
                                     window=10, shift=20)
        with pytest.raises(EmptyAccumulator):
            estimate_accidentals(acc)

    def test_g1_product_recovers_exact_factorized_rates(self):
        acc = CorrelationAccumulator(n_x=32, n_y=32, bins_per_frame=255,
                                     window=10, shift=20,
                                     n_frames=1_000_000)
        g1 = np.where(np.arange(1024) % 2 == 0, 20, 30)
        acc.g1[:] = g1
        outer = g1[:, None] * g1[None, :]
        acc.g2[:] = outer // 100          # exactly 0.01 * outer
        np.fill_diagonal(acc.g2, 0)
        est = estimate_accidentals(acc, "g1_product")
        assert est[0, 1] == pytest.approx(6.0, rel=1e-12)
        off_diag = ~np.eye(1024, dtype=bool)
        np.testing.assert_allclose(est[off_diag],
                                   0.01 * outer[off_diag], rtol=1e-9)
        assert np.all(np.diag(est) == 0.0)

    def test_g1_product_mask_guards(self):
        acc = CorrelationAccumulator(n_x=32, n_y=32, bins_per_frame=255,
                                     window=10, shift=20, n_frames=1000)
        with pytest.raises(InsufficientMask):
            estimate_accidentals(acc, "g1_product", mask_distance=40)
        acc.g2[0, 1023] = 5     # coincidences without any singles
        with pytest.raises(InsufficientMask):
            estimate_accidentals(acc, "g1_product")

    def test_estimators_unbiased_on_dark_only(self, reference_model,
                                              far_mapping):
        cfg = SensorConfig(dark_rate_hz=30000.0)
        batches = list(simulate_frames(reference_model, far_mapping, cfg,
                                       2 * 65536, 0.0, seed=36))
        acc = accumulate(batches, mapping_mode="far")
        t_counts = float(acc.g2.sum())
        s_counts = float(acc.g2_shifted.sum())
        to_counts = acc.n_frames / 1e6
        displaced = 2 * sum(255 - d for d in range(10, 31))
        c = BOTH_MASS / displaced
        for method in ("shifted_window", "g1_product"):
            est_counts = float(estimate_accidentals(acc, method).sum()) \
                * to_counts
            var = t_counts + (c * c * s_counts
                              if method == "shifted_window" else 0.0)
            assert abs(t_counts - est_counts) < 4 * np.sqrt(var), method


class TestSubtract:
    def test_arithmetic_and_flags(self):
        corr = blank_corrected()
        corr.values[3, 5] = 5.0
        corr.values_later[3, 5] = 2.0
        est = np.zeros_like(corr.values)
        est[3, 5] = 1.25
        out = subtract_accidentals(corr, est)
        assert out.values[3, 5] == 3.75
        assert out.values_later[3, 5] == pytest.approx(
            2.0 - 1.25 * POS_MASS / BOTH_MASS)
        assert out.flags == ("raw", "accidental_subtracted")
        # original untouched
        assert corr.flags == ("raw",)
        assert corr.values[3, 5] == 5.0

    def test_zero_estimate_is_identity(self):
        corr = blank_corrected()
        corr.values[1, 2] = 7.0
        out = subtract_accidentals(corr, np.zeros_like(corr.values))
        np.testing.assert_array_equal(out.values, corr.values)

    def test_exact_cancellation_and_negatives_kept(self):
        corr = blank_corrected()
        corr.values[1, 2] = 7.0
        corr.values[2, 1] = 7.0
        out = subtract_accidentals(corr, corr.values.copy())
        assert np.all(out.values == 0.0)
        est = np.zeros_like(corr.values)
        est[1, 2] = 9.0
        out = subtract_accidentals(corr, est)
        assert out.values[1, 2] == -2.0

    def test_stage_cannot_repeat(self):
        corr = blank_corrected(flags=("raw", "accidental_subtracted"))
        with pytest.raises(FlagOrderViolation):
            subtract_accidentals(corr, np.zeros_like(corr.values))

    def test_shape_mismatch_rejected(self):
        corr = blank_corrected()
        with pytest.raises(ConfigError):
            subtract_accidentals(corr, np.zeros((4, 4)))


class TestEstimateCrosstalk:
    def test_zero_tensor_yields_zero_map(self):
        corr = blank_corrected(flags=("raw", "accidental_subtracted"))
        corr.g1[:] = 100.0
        cmap = estimate_crosstalk(corr)
        assert np.all(cmap.probabilities == 0.0)
        assert cmap.clamped_negative == 0
        assert cmap.probability(1, 0) == 0.0
        assert cmap.probability(99, 0) == 0.0

    def test_even_split_fallback_arithmetic(self):
        # 841 inner sources, one million singles, 200 echo pairs per Mframe
        # at offset (1, 0): without ordering evidence both directions get
        # half, so p(1,0) = 0.5 * 200 / 1e6
        corr = blank_corrected(flags=("raw", "accidental_subtracted"))
        g1 = corr.g1.reshape(32, 32)
        g1[1:30, 1:30] = 1e6 / 841.0
        vals = corr.values.reshape(32, 32, 32, 32)
        for y in range(1, 30):
            for x in range(1, 30):
                vals[y, x, y, x + 1] += 200.0 / 841.0
                vals[y, x + 1, y, x] += 200.0 / 841.0
        cmap = estimate_crosstalk(corr, inner_window=29)
        assert cmap.probability(1, 0) == pytest.approx(1e-4, rel=1e-9)

    def test_ordered_share_resolves_direction(self):
        corr = blank_corrected(flags=("raw", "accidental_subtracted"))
        g1 = corr.g1.reshape(32, 32)
        g1[:] = 1000.0
        vals = corr.values.reshape(32, 32, 32, 32)
        later = corr.values_later.reshape(32, 32, 32, 32)
        for y in range(1, 30):
            for x in range(1, 30):
                vals[y, x, y, x + 1] += 0.5
                vals[y, x + 1, y, x] += 0.5
                later[y, x, y, x + 1] += 0.5    # echoes fired after sources
        cmap = estimate_crosstalk(corr, inner_window=29)
        assert cmap.probability(1, 0) == pytest.approx(5e-4, rel=1e-9)
        assert cmap.probability(-1, 0) == 0.0

    def test_negative_cells_clamp_and_count(self):
        corr = blank_corrected(flags=("raw", "accidental_subtracted"))
        corr.g1[:] = 1000.0
        vals = corr.values.reshape(32, 32, 32, 32)
        for y in range(1, 30):
            for x in range(1, 30):
                vals[y, x, y + 1, x] -= 0.1
                vals[y + 1, x, y, x] -= 0.1
        cmap = estimate_crosstalk(corr, inner_window=29)
        assert cmap.probability(0, 1) == 0.0
        assert cmap.clamped_negative >= 1

    def test_requires_accidental_stage(self):
        with pytest.raises(FlagOrderViolation):
            estimate_crosstalk(blank_corrected())

    def test_inner_window_limits(self):
        corr = blank_corrected(flags=("raw", "accidental_subtracted"))
        with pytest.raises(WindowTooLarge):
            estimate_crosstalk(corr, inner_window=33)
        with pytest.raises(WindowTooLarge):
            estimate_crosstalk(corr, inner_window=0)

    def test_map_round_trip(self, tmp_path):
        prob = np.zeros((3, 3))
        prob[2, 1] = 1e-3
        cmap = CrosstalkMap(probabilities=prob, radius=1,
                            clamped_negative=2)
        path = tmp_path / "map.blk"
        cmap.save(path)
        back = CrosstalkMap.load(path)
        assert back.radius == 1
        assert back.clamped_negative == 2
        np.testing.assert_array_equal(back.probabilities, prob)
        assert back.probability(1, 0) == 1e-3

    def test_one_way_injection_recovered_directionally(
            self, reference_model, far_mapping):
        cfg = SensorConfig(dark_rate_hz=30000.0)
        xt = CrosstalkSpec.from_dict({(1, 0): 1e-3, (0, 1): 1e-3})
        batches = simulate_frames(reference_model, far_mapping, cfg,
                                  1_000_000, 0.0, crosstalk=xt, seed=37)
        acc = accumulate(batches, mapping_mode="far")
        corr = subtract_accidentals(normalize(acc),
                                    estimate_accidentals(acc))
        cmap = estimate_crosstalk(corr, inner_window=29)
        assert cmap.probability(1, 0) == pytest.approx(1e-3, rel=0.2)
        assert cmap.probability(0, 1) == pytest.approx(1e-3, rel=0.2)
        assert cmap.probability(-1, 0) < 1e-4
        assert cmap.probability(0, -1) < 1e-4
        assert cmap.probability(1, 1) < 1e-4

        fixed = correct_crosstalk(corr, cmap)
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            assert abs(block_offset_rate(fixed, dx, dy)) < 1e-4, (dx, dy)


class TestCorrectCrosstalk:
    def test_zero_map_is_identity(self):
        corr = blank_corrected(flags=("raw", "accidental_subtracted"))
        corr.values[5, 6] = 3.0
        cmap = CrosstalkMap(probabilities=np.zeros((3, 3)), radius=1)
        out = correct_crosstalk(corr, cmap)
        np.testing.assert_array_equal(out.values, corr.values)
        assert out.flags[-1] == "crosstalk_corrected"

    def test_symmetric_echo_arithmetic(self):
        corr = blank_corrected(flags=("raw", "accidental_subtracted"))
        corr.g1[:] = 1e4
        s = linear_index(10, 10) - 1
        t = linear_index(11, 10) - 1
        corr.values[s, t] = 10.0
        corr.values[t, s] = 10.0
        prob = np.zeros((3, 3))
        prob[2, 1] = 1e-4      # p(+1, 0)
        prob[0, 1] = 1e-4      # p(-1, 0)
        cmap = CrosstalkMap(probabilities=prob, radius=1)
        out = correct_crosstalk(corr, cmap)
        assert out.values[s, t] == pytest.approx(8.0)
        assert out.values[t, s] == pytest.approx(8.0)

    def test_stage_ordering(self):
        with pytest.raises(FlagOrderViolation):
            correct_crosstalk(blank_corrected(),
                              CrosstalkMap(np.zeros((3, 3)), 1))
        done = blank_corrected(flags=("raw", "accidental_subtracted",
                                      "crosstalk_corrected"))
        with pytest.raises(FlagOrderViolation):
            correct_crosstalk(done, CrosstalkMap(np.zeros((3, 3)), 1))


class TestMaskNeighbors:
    def test_radius_zero_is_identity(self):
        corr = blank_corrected(flags=("raw", "accidental_subtracted"))
        corr.values[:] = 1.0
        out = mask_neighbors(corr, radius=0)
        np.testing.assert_array_equal(out.values, corr.values)
        assert not out.masked.any()
        assert out.mask_radius == 0
        assert out.flags[-1] == "neighbor_masked"

    def test_radius_one_masks_eight_neighbors(self):
        corr = blank_corrected(flags=("raw", "accidental_subtracted"))
        corr.values[:] = 1.0
        out = mask_neighbors(corr, radius=1)
        # ordered neighbour pairs on a 32x32 grid:
        # 4 corners x 3 + 120 edge pixels x 5 + 900 inner x 8
        assert out.masked.sum() == 4 * 3 + 120 * 5 + 900 * 8
        assert np.all(out.values[out.masked] == 0.0)
        assert np.all(out.values[~out.masked] == 1.0)

    def test_matches_brute_force_pairs(self):
        got = neighbor_mask_pairs(6, 5, 2)
        want = np.zeros((30, 30), dtype=bool)
        for l1 in range(30):
            x1, y1 = l1 % 6, l1 // 6
            for l2 in range(30):
                x2, y2 = l2 % 6, l2 // 6
                d = max(abs(x1 - x2), abs(y1 - y2))
                want[l1, l2] = 0 < d <= 2
        np.testing.assert_array_equal(got, want)

    def test_stage_rules(self):
        with pytest.raises(FlagOrderViolation):
            mask_neighbors(blank_corrected())       # raw only
        masked = mask_neighbors(
            blank_corrected(flags=("raw", "accidental_subtracted")), 1)
        with pytest.raises(FlagOrderViolation):
            mask_neighbors(masked, 1)
        with pytest.raises(FlagOrderViolation):
            correct_crosstalk(masked, CrosstalkMap(np.zeros((3, 3)), 1))
        with pytest.raises(ConfigError):
            mask_neighbors(
                blank_corrected(flags=("raw", "accidental_subtracted")), -1)

    def test_allowed_after_crosstalk_stage(self):
        corr = blank_corrected(flags=("raw", "accidental_subtracted",
                                      "crosstalk_corrected"))
        out = mask_neighbors(corr, radius=1)
        assert out.flags == ("raw", "accidental_subtracted",
                             "crosstalk_corrected", "neighbor_masked")


class TestProjections:
    def test_single_entry_placement(self):
        n_x = n_y = 32
        values = np.zeros((1024, 1024))
        l1 = linear_index(5, 2) - 1
        l2 = linear_index(9, 30) - 1
        values[l1, l2] = 3.0
        g2x, g2y = project_axes(values, n_x, n_y)
        assert g2x[4, 8] == 3.0
        assert g2x.sum() == 3.0
        assert g2y[1, 29] == 3.0
        sum_map, diff_map = project_sum_diff(values, n_x, n_y)
        # px1+px2 = 14 -> index 12; py1+py2 = 32 -> index 30
        assert sum_map[12, 30] == 3.0
        # px1-px2 = -4 -> index 27; py1-py2 = -28 -> index 3
        assert diff_map[27, 3] == 3.0

    def test_mass_conserved(self):
        rng = np.random.default_rng(38)
        values = rng.random((1024, 1024))
        g2x, g2y = project_axes(values, 32, 32)
        sum_map, diff_map = project_sum_diff(values, 32, 32)
        assert g2x.sum() == pytest.approx(values.sum())
        assert g2y.sum() == pytest.approx(values.sum())
        assert sum_map.sum() == pytest.approx(values.sum())
        assert diff_map.sum() == pytest.approx(values.sum())

    def test_matches_quadruple_loops(self):
        rng = np.random.default_rng(39)
        n_x, n_y = 5, 4
        values = rng.random((20, 20))
        g2x, g2y = project_axes(values, n_x, n_y)
        sum_map, diff_map = project_sum_diff(values, n_x, n_y)
        rx, ry, rs, rd = quadruple_loop_projections(values, n_x, n_y)
        np.testing.assert_allclose(g2x, rx, rtol=1e-12)
        np.testing.assert_allclose(g2y, ry, rtol=1e-12)
        np.testing.assert_allclose(sum_map, rs, rtol=1e-12)
        np.testing.assert_allclose(diff_map, rd, rtol=1e-12)


class TestSymmetryThroughStages:
    def test_exchange_symmetry_and_zero_diagonal(self, reference_model,
                                                 near_mapping):
        cfg = SensorConfig(dark_rate_hz=5000.0)
        xt = CrosstalkSpec.nearest(1e-3, 1e-3)
        batches = simulate_frames(reference_model, near_mapping, cfg,
                                  65536, 0.5, crosstalk=xt, seed=40)
        acc = accumulate(batches, mapping_mode="near")
        np.testing.assert_array_equal(acc.g2, acc.g2.T)
        assert np.all(np.diag(acc.g2) == 0)
        corr = normalize(acc)
        corr = subtract_accidentals(corr, estimate_accidentals(acc))
        cmap = estimate_crosstalk(corr)
        corr = correct_crosstalk(corr, cmap)
        corr = mask_neighbors(corr, 1)
        np.testing.assert_allclose(corr.values, corr.values.T, atol=1e-9)
        assert np.all(np.diag(corr.values) == 0.0)

    def test_corrected_save_load_round_trip(self, tmp_path):
        corr = blank_corrected(flags=("raw", "accidental_subtracted"))
        corr.values[3, 7] = 1.5
        corr.values_later[3, 7] = 0.5
        corr = mask_neighbors(corr, 1)
        path = tmp_path / "corr.blk"
        corr.save(path)
        back = CorrectedG2.load(path)
        assert back.flags == corr.flags
        assert back.mask_radius == 1
        np.testing.assert_array_equal(back.values, corr.values)
        np.testing.assert_array_equal(back.values_later, corr.values_later)
        np.testing.assert_array_equal(back.masked, corr.masked)

    def test_kind_tag_checked_on_load(self, tmp_path):
        acc = CorrelationAccumulator(n_x=4, n_y=4, bins_per_frame=255,
                                     window=10, shift=20, n_frames=5)
        path = tmp_path / "acc.blk"
        acc.save(path)
        with pytest.raises(ConfigError):
            CorrectedG2.load(path)
        with pytest.raises(ConfigError):
            CrosstalkMap.load(path)

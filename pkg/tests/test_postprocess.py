import numpy as np
import pytest

from crossemo.errors import DegenerateInputError, UsageError
from crossemo.metrics import ccc
from crossemo.postprocess import (
    DEFAULT_FILTER_WINDOWS,
    DEFAULT_SHIFT_DELAYS,
    PostprocessPlan,
    apply_plan_per_recording,
    center_and_scale,
    grid_search,
    load_plan,
    median_filter,
    save_plan,
    time_shift,
)

RATE = 25.0


def smooth_series(rng, n, width=4):
    walk = np.cumsum(rng.normal(size=n + width))
    kernel = np.ones(width) / width
    return np.convolve(walk, kernel, mode="valid")[:n]


class TestMedianFilter:
    def test_truncated_edges_lower_median(self):
        # window 3 at 25 Hz = 0.12 s; edge windows have two values and take
        # the lower one, so [1, 9, 1] collapses to all ones
        out = median_filter([1.0, 9.0, 1.0], 0.12, RATE)
        assert np.array_equal(out, [1.0, 1.0, 1.0])

    def test_window_one_identity(self):
        x = np.arange(6, dtype=float)
        assert np.array_equal(median_filter(x, 0.04, RATE), x)

    def test_constant_unchanged(self):
        x = np.full(10, 3.3)
        assert np.array_equal(median_filter(x, 0.44, RATE), x)

    def test_empty_rejected(self):
        with pytest.raises(UsageError):
            median_filter([], 0.12, RATE)

    def test_subframe_window_rejected(self):
        with pytest.raises(UsageError):
            median_filter([1.0, 2.0], 0.01, RATE)

    @pytest.mark.parametrize("window", DEFAULT_FILTER_WINDOWS)
    def test_idempotent_on_monotone(self, window):
        x = np.linspace(-1, 1, 40)
        once = median_filter(x, window, RATE)
        twice = median_filter(once, window, RATE)
        assert np.array_equal(once, twice)

    def test_idempotent_on_constant(self):
        x = np.zeros(15)
        assert np.array_equal(median_filter(median_filter(x, 0.2, RATE), 0.2, RATE), x)

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=30)
        expected = np.empty_like(x)
        for i in range(30):
            r = min(2, i, 29 - i)  # symmetric radius for a 5-frame window
            vals = sorted(x[i - r : i + r + 1])
            expected[i] = vals[(len(vals) - 1) // 2]
        assert np.array_equal(median_filter(x, 0.2, RATE), expected)

    def test_even_window_lower_median(self):
        # 2-frame window: interior medians take the lower of {x[i-1], x[i]}
        out = median_filter([5.0, 1.0, 4.0, 2.0], 0.08, RATE)
        assert np.array_equal(out, [5.0, 1.0, 1.0, 2.0])


class TestCenterAndScale:
    def test_already_matching_unchanged(self):
        # pred [0, 2]: population mean 1, std 1 -> identity for target (1, 1)
        out = center_and_scale([0.0, 2.0], 1.0, 1.0)
        assert np.allclose(out, [0.0, 2.0], atol=1e-12)

    def test_moments_match_targets(self):
        rng = np.random.default_rng(1)
        x = rng.normal(3.0, 2.5, 200)
        out = center_and_scale(x, -1.0, 0.5)
        assert abs(out.mean() - (-1.0)) < 1e-9
        assert abs(out.std() - 0.5) < 1e-9

    def test_constant_prediction_centred_only(self):
        out = center_and_scale([2.0, 2.0, 2.0], 5.0, 1.5)
        assert np.array_equal(out, [5.0, 5.0, 5.0])

    def test_zero_gold_std_rejected(self):
        with pytest.raises(DegenerateInputError):
            center_and_scale([0.0, 1.0], 0.0, 0.0)


class TestTimeShift:
    def test_zero_shift_identity(self):
        x = np.arange(5, dtype=float)
        assert np.array_equal(time_shift(x, 0.0, RATE), x)

    def test_head_padding(self):
        out = time_shift([1.0, 2.0, 3.0, 4.0], 2 / RATE, RATE)
        assert np.array_equal(out, [1.0, 1.0, 1.0, 2.0])

    def test_length_preserved(self):
        x = np.random.default_rng(2).normal(size=50)
        for d in DEFAULT_SHIFT_DELAYS:
            assert time_shift(x, d, RATE).size == 50

    def test_shift_too_large(self):
        with pytest.raises(DegenerateInputError):
            time_shift([1.0, 2.0], 1.0, RATE)

    def test_equivalent_to_forward_shifted_gold(self):
        # comparing shifted predictions with the gold equals comparing raw
        # predictions with a forward-shifted gold, outside the padded head
        rng = np.random.default_rng(3)
        pred = smooth_series(rng, 120)
        gold = smooth_series(rng, 120)
        k = 4
        shifted = time_shift(pred, k / RATE, RATE)
        assert ccc(shifted[k:], gold[k:]) == pytest.approx(ccc(pred[: 120 - k], gold[k:]), abs=1e-12)


class TestGridSearch:
    def test_gold_as_prediction_ties_break_small(self):
        # plateau-step series: median filtering is an exact identity for every
        # window, so with a zero-delay option in the grid all windows tie at
        # concordance 1 and the tie-break picks the smallest window and delay
        gold = np.array([0.0] * 20 + [1.0] * 20)
        plan = grid_search(
            gold, gold, RATE, float(gold.mean()), float(gold.std()),
            filter_windows=DEFAULT_FILTER_WINDOWS, shift_delays=(0.0, 0.04, 0.08),
        )
        assert plan.window_seconds == DEFAULT_FILTER_WINDOWS[0]
        assert plan.shift_seconds == 0.0
        post = plan.apply(gold, RATE)
        assert ccc(post, gold) == pytest.approx(1.0, abs=1e-12)

    def test_constant_prediction_full_tie(self):
        # every plan scores 0 on a constant prediction: smallest (W, D) wins
        gold = np.linspace(0, 1, 60)
        plan = grid_search(np.zeros(60), gold, RATE, 0.5, float(gold.std()))
        assert plan.window_seconds == DEFAULT_FILTER_WINDOWS[0]
        assert plan.shift_seconds == DEFAULT_SHIFT_DELAYS[0]

    def test_recovers_constructed_delay(self):
        rng = np.random.default_rng(4)
        long_gold = smooth_series(rng, 1200)
        k = int(round(0.20 * RATE))
        gold = long_gold[:1000]
        pred = long_gold[k : 1000 + k]  # prediction runs ahead of the gold
        plan = grid_search(pred, gold, RATE, float(gold.mean()), float(gold.std()))
        assert plan.shift_seconds == pytest.approx(0.20)

    def test_order_independence(self):
        rng = np.random.default_rng(5)
        gold = smooth_series(rng, 400)
        pred = gold + rng.normal(0, 0.3, 400)
        stats = (float(gold.mean()), float(gold.std()))
        a = grid_search(pred, gold, RATE, *stats)
        b = grid_search(
            pred, gold, RATE, *stats,
            filter_windows=tuple(reversed(DEFAULT_FILTER_WINDOWS)),
            shift_delays=tuple(reversed(DEFAULT_SHIFT_DELAYS)),
        )
        assert a == b

    def test_selected_plan_not_much_below_unprocessed(self):
        rng = np.random.default_rng(6)
        gold = smooth_series(rng, 600)
        pred = gold + rng.normal(0, 0.2, 600)
        stats = (float(gold.mean()), float(gold.std()))
        plan = grid_search(pred, gold, RATE, *stats)
        post = plan.apply(pred, RATE)
        assert ccc(post, gold) >= ccc(pred, gold) - 0.005

    def test_multi_recording_lists(self):
        rng = np.random.default_rng(7)
        golds = [smooth_series(rng, 300), smooth_series(rng, 250)]
        preds = [g + rng.normal(0, 0.2, g.size) for g in golds]
        stats = (float(np.concatenate(golds).mean()), float(np.concatenate(golds).std()))
        plan = grid_search(preds, golds, RATE, *stats)
        post = apply_plan_per_recording(plan, preds, RATE)
        assert len(post) == 2
        assert post[0].size == 300 and post[1].size == 250

    def test_empty_grid_rejected(self):
        with pytest.raises(UsageError):
            grid_search([1.0, 2.0], [1.0, 2.0], RATE, 0.0, 1.0, filter_windows=())


def test_plan_round_trip(tmp_path):
    plan = PostprocessPlan(0.2, -0.125, 1.0625, 0.08)
    path = tmp_path / "plan.txt"
    save_plan(plan, path)
    assert load_plan(path) == plan
    text = path.read_text()
    assert text.startswith("window_seconds=")

import numpy as np
import pytest

from clickseg.guidance import NEGATIVE, POSITIVE, ClickSet
from clickseg.raster import Bitmask
from clickseg.sampling import (
    EmptyObjectError,
    InitialSamplingParams,
    InstanceTruth,
    get_sampler,
    next_click_cluster_sampling,
    next_click_random,
    next_correction_click,
    sample_initial_clicks,
    sample_negative_initial,
    sample_positive_initial,
)

from oracles import maximin_placement


def disk(cx, cy, r, w, h):
    ys, xs = np.mgrid[0:h, 0:w]
    return Bitmask((xs - cx) ** 2 + (ys - cy) ** 2 <= r * r)


def pairwise_min_dist(points):
    if len(points) < 2:
        return float("inf")
    pts = np.asarray(points, dtype=float)
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    return d.min()


@pytest.fixture(scope="module")
def disk_truth():
    gt = disk(100, 100, 40, 200, 200)
    neg = disk(30, 30, 12, 200, 200)
    return InstanceTruth(gt, [neg])


class TestPositiveInitial:
    def test_constraints_hold_on_big_disk(self, disk_truth):
        params = InitialSamplingParams()
        for seed in range(60):
            rng = np.random.default_rng(seed)
            clicks = sample_positive_initial(disk_truth, params, rng)
            assert 1 <= len(clicks) <= params.max_positive
            pts = [(c.x, c.y) for c in clicks]
            for x, y in pts:
                assert disk_truth.gt.a[y, x]
                assert disk_truth.boundary_distance[y, x] >= params.boundary_margin
            assert pairwise_min_dist(pts) >= params.click_spacing

    def test_tiny_object_relaxes_to_single_click(self):
        bits = np.zeros((30, 30), dtype=bool)
        bits[10:13, 10:13] = True  # 3x3 object: margin 5 infeasible
        truth = InstanceTruth(Bitmask(bits))
        clicks = sample_positive_initial(truth, InitialSamplingParams(), np.random.default_rng(0))
        assert len(clicks) == 1
        assert clicks[0].x == 11 and clicks[0].y == 11  # only interior pixel
        assert clicks[0].polarity == POSITIVE

    def test_all_boundary_object_falls_back_to_deepest_point(self):
        bits = np.zeros((20, 20), dtype=bool)
        bits[5:7, 5:7] = True  # 2x2: every pixel is boundary
        truth = InstanceTruth(Bitmask(bits))
        clicks = sample_positive_initial(truth, InitialSamplingParams(), np.random.default_rng(4))
        assert len(clicks) == 1
        assert truth.gt.a[clicks[0].y, clicks[0].x]

    def test_deterministic_under_seed(self, disk_truth):
        a = sample_positive_initial(disk_truth, InitialSamplingParams(), np.random.default_rng(7))
        b = sample_positive_initial(disk_truth, InitialSamplingParams(), np.random.default_rng(7))
        assert a == b

    def test_empty_gt_rejected(self):
        with pytest.raises(EmptyObjectError):
            InstanceTruth(Bitmask.empty(10, 10))


class TestNegativeInitial:
    def test_s1_band_constraints(self, disk_truth):
        params = InitialSamplingParams()
        for seed in range(40):
            clicks = sample_negative_initial(disk_truth, "s1", params, np.random.default_rng(seed))
            for c in clicks:
                assert not disk_truth.gt.a[c.y, c.x]
                d = disk_truth.object_distance[c.y, c.x]
                assert params.boundary_margin <= d <= params.outer_band
            assert pairwise_min_dist([(c.x, c.y) for c in clicks]) >= params.click_spacing

    def test_s2_lands_on_negative_objects(self, disk_truth):
        params = InitialSamplingParams()
        neg_union = np.zeros((200, 200), dtype=bool)
        for obj in disk_truth.negative_objects:
            neg_union |= obj.a
        seen_any = False
        for seed in range(40):
            clicks = sample_negative_initial(disk_truth, "s2", params, np.random.default_rng(seed))
            for c in clicks:
                assert neg_union[c.y, c.x]
                assert disk_truth.object_distance[c.y, c.x] >= params.boundary_margin
            seen_any = seen_any or bool(clicks)
        assert seen_any

    def test_s2_no_negative_objects(self):
        truth = InstanceTruth(disk(50, 50, 20, 100, 100))
        assert sample_negative_initial(truth, "s2", InitialSamplingParams(), np.random.default_rng(1)) == []

    def test_s3_count_and_band(self, disk_truth):
        params = InitialSamplingParams()
        clicks = sample_negative_initial(disk_truth, "s3", params, np.random.default_rng(3))
        assert len(clicks) == params.coverage_clicks_s3
        for c in clicks:
            d = disk_truth.object_distance[c.y, c.x]
            assert params.boundary_margin <= d <= params.outer_band

    def test_s3_angular_coverage(self, disk_truth):
        # farthest-point picks around a centered disk: max angular gap bounded
        params = InitialSamplingParams()
        for seed in range(15):
            clicks = sample_negative_initial(disk_truth, "s3", params, np.random.default_rng(seed))
            angles = np.sort([np.arctan2(c.y - 100, c.x - 100) for c in clicks])
            gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]]))
            assert np.degrees(gaps.max()) <= 2 * 360.0 / params.coverage_clicks_s3

    def test_band_empty_returns_empty(self):
        # object nearly fills the frame: no background pixel sits >= margin away
        bits = np.ones((20, 20), dtype=bool)
        bits[0, 0] = False
        truth = InstanceTruth(Bitmask(bits))
        for strat in ("s1", "s3"):
            assert sample_negative_initial(truth, strat, InitialSamplingParams(), np.random.default_rng(0)) == []

    def test_unknown_strategy(self, disk_truth):
        with pytest.raises(ValueError):
            sample_negative_initial(disk_truth, "s9", InitialSamplingParams(), np.random.default_rng(0))


class TestInitialClicks:
    def test_always_at_least_one_positive(self, disk_truth):
        for seed in range(50):
            s = sample_initial_clicks(disk_truth, InitialSamplingParams(), np.random.default_rng(seed))
            assert len(s.clicks.positives()) >= 1

    def test_negatives_off_object(self, disk_truth):
        for seed in range(50):
            s = sample_initial_clicks(disk_truth, InitialSamplingParams(), np.random.default_rng(seed))
            for c in s.clicks.negatives():
                assert not disk_truth.gt.a[c.y, c.x]

    def test_strategy_frequency_one_third(self, disk_truth):
        counts = {"s1": 0, "s2": 0, "s3": 0}
        n = 3000
        for seed in range(n):
            s = sample_initial_clicks(disk_truth, InitialSamplingParams(), np.random.default_rng(seed))
            counts[s.negative_strategy] += 1
        for strat, k in counts.items():
            assert abs(k / n - 1 / 3) < 0.05, (strat, k)

    def test_rounds_strictly_increasing(self, disk_truth):
        s = sample_initial_clicks(disk_truth, InitialSamplingParams(), np.random.default_rng(2))
        rounds = [c.round for c in s.clicks]
        assert rounds == sorted(set(rounds))


class TestCorrectionClick:
    def test_centered_square_center(self):
        gt_bits = np.zeros((101, 101), dtype=bool)
        gt_bits[40:61, 40:61] = True  # 21x21 centered square
        gt = Bitmask(gt_bits)
        click = next_correction_click(Bitmask.empty(101, 101), gt, ClickSet(), np.random.default_rng(0))
        assert (click.x, click.y) == (50, 50)
        assert click.polarity == POSITIVE

    def test_largest_cluster_selected(self):
        gt_bits = np.zeros((40, 40), dtype=bool)
        gt_bits[2:12, 2:7] = True    # 50-pixel cluster
        gt_bits[30:37, 30:31] = True  # 7-pixel cluster
        gt = Bitmask(gt_bits)
        click = next_correction_click(Bitmask.empty(40, 40), gt, ClickSet(), np.random.default_rng(1))
        assert 2 <= click.x < 7 and 2 <= click.y < 12

    def test_no_error_returns_none(self):
        m = disk(10, 10, 5, 20, 20)
        assert next_correction_click(m, m, ClickSet(), np.random.default_rng(0)) is None

    def test_prior_clicks_push_placement_away(self):
        bits = np.zeros((30, 60), dtype=bool)
        bits[10:21, 5:56] = True  # wide bar
        gt = Bitmask(bits)
        rng = np.random.default_rng(5)
        first = next_correction_click(Bitmask.empty(60, 30), gt, ClickSet(), rng)
        cs = ClickSet().with_click(first.x, first.y, first.polarity)
        second = next_correction_click(Bitmask.empty(60, 30), gt, cs, rng)
        d = np.hypot(second.x - first.x, second.y - first.y)
        # the bar is 11 px tall, so the maximin score is capped at depth 6;
        # the second click must be at least that far from the first
        assert d >= 6.0

    def test_matches_maximin_oracle(self):
        rng = np.random.default_rng(77)
        for trial in range(60):
            h = int(rng.integers(5, 41))
            w = int(rng.integers(5, 41))
            gt = Bitmask(rng.random((h, w)) < 0.5)
            pred = Bitmask(rng.random((h, w)) < 0.5)
            if (pred ^ gt).is_empty:
                continue
            existing = ClickSet()
            for _ in range(int(rng.integers(0, 4))):
                x, y = int(rng.integers(0, w)), int(rng.integers(0, h))
                try:
                    existing = existing.with_click(x, y, POSITIVE if rng.random() < 0.5 else NEGATIVE)
                except ValueError:
                    pass
            click = next_correction_click(pred, gt, existing, np.random.default_rng(trial))
            from clickseg.raster import connected_components

            lm = connected_components(pred ^ gt, 4)
            largest = int(np.argmax(lm.sizes())) + 1
            cluster = lm.labels == largest
            best, ties = maximin_placement(cluster, [(c.x, c.y) for c in existing])
            assert (click.x, click.y) in ties

    def test_polarity_follows_gt(self):
        gt = disk(10, 10, 4, 20, 20)
        pred_bits = np.zeros((20, 20), dtype=bool)
        pred_bits[0:20, 0:20] = True  # prediction all foreground: error = background
        click = next_correction_click(Bitmask(pred_bits), gt, ClickSet(), np.random.default_rng(0))
        assert click.polarity == NEGATIVE

    def test_full_frame_error_cluster_defined(self):
        gt = Bitmask.full(15, 15)
        click = next_correction_click(Bitmask.empty(15, 15), gt, ClickSet(), np.random.default_rng(0))
        assert (click.x, click.y) == (7, 7)


class TestClusterSampling:
    def test_single_cluster_matches_iterative(self):
        gt = disk(20, 20, 8, 40, 40)
        a = next_correction_click(Bitmask.empty(40, 40), gt, ClickSet(), np.random.default_rng(3))
        b = next_click_cluster_sampling(Bitmask.empty(40, 40), gt, ClickSet(), np.random.default_rng(3))
        assert (a.x, a.y, a.polarity) == (b.x, b.y, b.polarity)

    def test_size_proportional_frequency(self):
        bits = np.zeros((40, 40), dtype=bool)
        bits[0:9, 0:10] = True    # 90 pixels
        bits[30:35, 30:32] = True  # 10 pixels
        gt = Bitmask(bits)
        empty = Bitmask.empty(40, 40)
        hits_big = 0
        n = 2000
        for seed in range(n):
            c = next_click_cluster_sampling(empty, gt, ClickSet(), np.random.default_rng(seed))
            if c.y < 9:
                hits_big += 1
        assert abs(hits_big / n - 0.9) < 0.03

    def test_no_error(self):
        m = disk(5, 5, 2, 12, 12)
        assert next_click_cluster_sampling(m, m, ClickSet(), np.random.default_rng(0)) is None


class TestRandomSampling:
    def test_single_pixel_error(self):
        gt_bits = np.zeros((10, 10), dtype=bool)
        gt_bits[4, 7] = True
        c = next_click_random(Bitmask.empty(10, 10), Bitmask(gt_bits), ClickSet(), np.random.default_rng(0))
        assert (c.x, c.y) == (7, 4)
        assert c.polarity == POSITIVE

    def test_always_in_error_region(self):
        rng = np.random.default_rng(31)
        for seed in range(50):
            gt = Bitmask(rng.random((15, 15)) < 0.4)
            pred = Bitmask(rng.random((15, 15)) < 0.4)
            err = (pred ^ gt).a
            if not err.any():
                continue
            c = next_click_random(pred, gt, ClickSet(), np.random.default_rng(seed))
            assert err[c.y, c.x]

    def test_uniform_over_error(self):
        # 30-pixel error region, chi-square over 10k draws
        bits = np.zeros((10, 10), dtype=bool)
        bits[2:5, 0:10] = True
        gt = Bitmask(bits)
        n_cells = int(bits.sum())
        assert n_cells == 30
        counts = np.zeros((10, 10))
        n = 10000
        for seed in range(n):
            c = next_click_random(Bitmask.empty(10, 10), gt, ClickSet(), np.random.default_rng(seed))
            counts[c.y, c.x] += 1
        observed = counts[bits]
        expected = n / n_cells
        chi2 = float(((observed - expected) ** 2 / expected).sum())
        # dof = 29; p=0.001 critical value ~ 58.3
        assert chi2 < 58.3


class TestRegistry:
    def test_names(self):
        assert get_sampler("iterative-largest") is next_correction_click
        assert get_sampler("cluster") is next_click_cluster_sampling
        assert get_sampler("random") is next_click_random

    def test_unknown(self):
        with pytest.raises(ValueError):
            get_sampler("bogus")

    def test_determinism_all_samplers(self):
        gt = disk(12, 12, 6, 25, 25)
        pred = disk(14, 12, 6, 25, 25)
        for name in ("iterative-largest", "cluster", "random"):
            f = get_sampler(name)
            a = f(pred, gt, ClickSet(), np.random.default_rng(9))
            b = f(pred, gt, ClickSet(), np.random.default_rng(9))
            assert (a.x, a.y, a.polarity) == (b.x, b.y, b.polarity)

import math

import numpy as np
import pytest

from streid import (
    ConfigurationError,
    HistogramGeometry,
    InputError,
    Observation,
    TransitionHistogram,
    adaptive_sigma,
    build_histograms,
    estimate_pdf,
    estimate_topology,
    gaussian_kernel,
    lookup_probability,
)

GEO = HistogramGeometry()


def hist(counts, i=0, j=1):
    return TransitionHistogram(i, j, np.asarray(counts, dtype=np.int64))


def smooth_oracle(counts, sigma):
    """Brute-force double-loop convolution plus renormalization."""
    bins = len(counts)
    norm = math.sqrt(2.0 * math.pi) * sigma
    out = []
    for b in range(bins):
        acc = 0.0
        for tau in range(bins):
            if counts[tau]:
                x = b - tau
                acc += counts[tau] * math.exp(-(x * x) / (2.0 * sigma * sigma)) / norm
        out.append(acc)
    total = sum(out)
    return [v / total for v in out]


class TestBuildHistograms:
    def test_single_transition(self):
        obs = [Observation("a", "v1", 0, 0), Observation("b", "v1", 1, 150)]
        hists = build_histograms(obs, GEO, 2)
        assert len(hists) == 4
        h01 = hists[1]
        assert (h01.from_camera, h01.to_camera) == (0, 1)
        assert h01.counts[1] == 1
        assert h01.pair_count == 1
        assert sum(h.pair_count for h in hists) == 1

    def test_distinct_vehicles_give_empty_histograms(self):
        obs = [Observation("a", "v1", 0, 0), Observation("b", "v2", 1, 50)]
        hists = build_histograms(obs, GEO, 2)
        assert all(h.pair_count == 0 for h in hists)

    def test_three_observation_pairing(self):
        # same-id ordered pairs by hand: (0->1, 100), (0->1, 250), (1->1, 150)
        obs = [
            Observation("a", "v1", 0, 0),
            Observation("b", "v1", 1, 100),
            Observation("c", "v1", 1, 250),
        ]
        hists = {(h.from_camera, h.to_camera): h for h in build_histograms(obs, GEO, 2)}
        assert hists[(0, 1)].counts[1] == 1
        assert hists[(0, 1)].counts[2] == 1
        assert hists[(0, 1)].pair_count == 2
        assert hists[(1, 1)].counts[1] == 1
        assert hists[(1, 1)].pair_count == 1
        assert hists[(0, 0)].pair_count == 0

    def test_out_of_range_difference_discarded(self):
        obs = [
            Observation("a", "v1", 0, 0),
            Observation("b", "v1", 1, GEO.covered_frames),
        ]
        hists = build_histograms(obs, GEO, 2)
        assert all(h.pair_count == 0 for h in hists)

    def test_equal_frames_count_both_directions_into_bin_zero(self):
        obs = [Observation("a", "v1", 0, 500), Observation("b", "v1", 1, 500)]
        hists = {(h.from_camera, h.to_camera): h for h in build_histograms(obs, GEO, 2)}
        assert hists[(0, 1)].counts[0] == 1
        assert hists[(1, 0)].counts[0] == 1

    def test_camera_out_of_range(self):
        with pytest.raises(InputError, match="out of range"):
            build_histograms([Observation("a", "v1", 3, 0)], GEO, 2)

    def test_empty_observations(self):
        with pytest.raises(InputError):
            build_histograms([], GEO, 2)

    def test_total_matches_quadratic_scan(self):
        rng = np.random.default_rng(42)
        geo = HistogramGeometry(bin_count=20, bin_width=50)
        obs = [
            Observation(f"i{k}", f"v{rng.integers(6)}", int(rng.integers(4)),
                        int(rng.integers(0, 2500)))
            for k in range(120)
        ]
        expected = 0
        for a in obs:
            for b in obs:
                if a is b or a.vehicle_id != b.vehicle_id:
                    continue
                delta = b.frame - a.frame
                if 0 <= delta < geo.covered_frames:
                    expected += 1
        hists = build_histograms(obs, geo, 4)
        assert sum(h.pair_count for h in hists) == expected


class TestAdaptiveSigma:
    def test_zero_pairs_gives_alpha(self):
        assert adaptive_sigma(0, 20, 12) == 20.0

    def test_many_pairs_clamps_to_one(self):
        assert adaptive_sigma(10000, 20, 12) == 1.0

    def test_crossover_at_36_pairs(self):
        # 20 * exp(-3) = 0.99574... < 1, so the clamp engages
        assert adaptive_sigma(36, 20, 12) == 1.0
        assert adaptive_sigma(35, 20, 12) == pytest.approx(
            20.0 * math.exp(-35.0 / 12.0), rel=1e-12
        )

    def test_configuration_errors(self):
        with pytest.raises(ConfigurationError):
            adaptive_sigma(5, alpha=0.5, beta=12)
        with pytest.raises(ConfigurationError):
            adaptive_sigma(5, alpha=20, beta=0)
        with pytest.raises(InputError):
            adaptive_sigma(-1, alpha=20, beta=12)

    def test_monotone_and_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            alpha = rng.uniform(1, 100)
            beta = rng.uniform(1e-6, 100)
            n1, n2 = sorted(rng.integers(0, 10**6, size=2))
            s1 = adaptive_sigma(int(n1), alpha, beta)
            s2 = adaptive_sigma(int(n2), alpha, beta)
            assert s1 >= s2
            assert 1.0 <= s2 <= s1 <= alpha or alpha < 1.0 + 1e-12
            assert adaptive_sigma(0, alpha, beta) == alpha


class TestGaussianKernel:
    def test_unit_peak(self):
        assert gaussian_kernel(0, 1) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-12)

    def test_sigma_scales_peak(self):
        assert gaussian_kernel(0, 2) == pytest.approx(gaussian_kernel(0, 1) / 2, rel=1e-12)

    def test_unit_offset(self):
        # exp(-0.5) / sqrt(2 pi)
        assert gaussian_kernel(1, 1) == pytest.approx(0.24197072451914337, abs=1e-15)

    def test_symmetric_and_vectorized(self):
        xs = np.array([-3.0, -1.0, 0.0, 1.0, 3.0])
        vals = gaussian_kernel(xs, 2.5)
        assert vals.shape == xs.shape
        assert vals[0] == vals[4] and vals[1] == vals[3]
        assert vals.argmax() == 2


class TestEstimatePdf:
    def test_empty_histogram_is_uniform(self):
        pdf = estimate_pdf(hist(np.zeros(300)), sigma=5)
        assert np.allclose(pdf, 1 / 300)

    def test_single_spike_reproduces_kernel(self):
        counts = np.zeros(300)
        counts[150] = 1
        pdf = estimate_pdf(hist(counts), sigma=1)
        assert pdf.argmax() == 150
        assert pdf.sum() == pytest.approx(1.0, abs=1e-12)
        # far from the boundary the renormalization is negligible (the
        # integer-sampled Gaussian sums to 1 + ~5.5e-9 at sigma=1)
        assert pdf[150] == pytest.approx(gaussian_kernel(0, 1), rel=1e-8)

    def test_matches_brute_force_oracle(self):
        counts = np.zeros(300)
        counts[10] = 2
        counts[20] = 1
        pdf = estimate_pdf(hist(counts), sigma=2)
        oracle = smooth_oracle(counts, 2)
        np.testing.assert_allclose(pdf, oracle, atol=1e-12)

    def test_oracle_on_random_histograms(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            bins = int(rng.integers(1, 65))
            counts = rng.integers(0, 30, size=bins)
            if counts.sum() == 0:
                counts[0] = 1
            sigma = float(rng.uniform(1, 20))
            pdf = estimate_pdf(hist(counts), sigma)
            np.testing.assert_allclose(pdf, smooth_oracle(counts, sigma), atol=1e-12)

    def test_normalization_with_boundary_mass(self):
        counts = np.zeros(50)
        counts[0] = 3  # half the kernel mass falls off the left edge
        pdf = estimate_pdf(hist(counts), sigma=10)
        assert pdf.sum() == pytest.approx(1.0, abs=1e-9)

    def test_entropy_non_decreasing_in_sigma(self):
        for spike in (0, 7, 150, 299):
            counts = np.zeros(300)
            counts[spike] = 5
            entropies = []
            for sigma in (1, 2, 5, 10, 50, 150, 300):
                pdf = estimate_pdf(hist(counts), sigma)
                support = pdf[pdf > 0]
                entropies.append(float(-(support * np.log(support)).sum()))
            assert all(b >= a - 1e-10 for a, b in zip(entropies, entropies[1:]))


class TestEstimateTopology:
    def test_entry_grid_for_twenty_cameras(self):
        obs = [Observation(f"i{c}", "v1", c, 100 * c) for c in range(20)]
        model = estimate_topology(obs, GEO, 20)
        assert model.pdfs.shape == (20, 20, 300)
        assert model.sigmas.shape == (20, 20)
        off_diagonal = 20 * 20 - 20
        assert off_diagonal == 380

    def test_single_transition_trace(self):
        obs = [Observation("a", "v1", 0, 0), Observation("b", "v1", 1, 800)]
        model = estimate_topology(obs, GEO, 2, alpha=20, beta=12)
        pdf, sigma, count = model.entry(0, 1)
        assert count == 1
        assert sigma == pytest.approx(max(20 * math.exp(-1 / 12), 1.0), rel=1e-12)
        assert pdf.argmax() == 8
        # unvisited pairs fall back to the uniform density
        uniform, sigma_u, count_u = model.entry(1, 0)
        assert count_u == 0
        assert sigma_u == 20.0
        assert np.allclose(uniform, 1 / 300)

    def test_empty_pairs_keep_sigma_at_alpha(self):
        obs = [Observation("a", "v1", 0, 0), Observation("b", "v2", 1, 10)]
        model = estimate_topology(obs, GEO, 2, alpha=20, beta=12)
        assert (model.sigmas == 20.0).all()

    def test_fixed_sigma_override(self):
        obs = [Observation("a", "v1", 0, 0), Observation("b", "v1", 1, 800)]
        model = estimate_topology(obs, GEO, 2, fixed_sigma=7.5)
        assert (model.sigmas == 7.5).all()
        with pytest.raises(ConfigurationError):
            estimate_topology(obs, GEO, 2, fixed_sigma=0.5)

    def test_normalization_invariant(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            bins = int(rng.integers(2, 64))
            counts = rng.integers(0, 40, size=bins)
            if counts.sum() == 0:
                counts[0] = 1
            sigma = float(rng.uniform(1, 20))
            assert estimate_pdf(hist(counts), sigma).sum() == pytest.approx(1.0, abs=1e-6)


class TestLookupProbability:
    @pytest.fixture()
    def model(self):
        obs = [
            Observation("a", "v1", 0, 0),
            Observation("b", "v1", 1, 300),
            Observation("c", "v2", 0, 1000),
            Observation("d", "v2", 1, 1350),
        ]
        return estimate_topology(obs, GEO, 2)

    def test_zero_delta_reads_forward_bin_zero(self, model):
        assert lookup_probability(model, 0, 500, 1, 500) == model.pdfs[0, 1, 0]

    def test_beyond_covered_range_is_zero(self, model):
        assert lookup_probability(model, 0, 0, 1, 30000) == 0.0

    def test_negative_delta_flips_direction(self, model):
        # earlier observation at camera 0 defines the direction
        assert lookup_probability(model, 1, 500, 0, 200) == model.pdfs[0, 1, 3]

    def test_swap_symmetry(self, model):
        rng = np.random.default_rng(11)
        for _ in range(200):
            ca, cb = rng.integers(0, 2, size=2)
            fa, fb = rng.integers(0, 40000, size=2)
            assert lookup_probability(model, int(ca), int(fa), int(cb), int(fb)) == \
                lookup_probability(model, int(cb), int(fb), int(ca), int(fa)) or fa == fb

    def test_camera_out_of_range(self, model):
        with pytest.raises(InputError):
            lookup_probability(model, 0, 0, 5, 100)


def test_geometry_validation():
    with pytest.raises(ConfigurationError):
        HistogramGeometry(bin_count=0)
    with pytest.raises(ConfigurationError):
        HistogramGeometry(bin_width=0)
    assert HistogramGeometry().covered_frames == 30000

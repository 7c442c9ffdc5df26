import numpy as np
import pytest

from histosim.errors import ExtractorError, MetricInputError
from histosim.features.stack import FeatureStack
from histosim.metrics.deep import (
    LayerDistances,
    channel_pearson_distance,
    dists_style,
    lpips_style,
)


def random_stack(rng, base_channels=2, base_size=16):
    stages = []
    c, s = base_channels, base_size
    for _ in range(4):
        stages.append(rng.standard_normal((c, s, s)))
        c, s = c * 2, s // 2
    return FeatureStack(tuple(stages))


class TestChannelPearson:
    def test_identity_is_near_zero(self, rng):
        f = random_stack(rng)
        d = channel_pearson_distance(f, f)
        assert all(v <= 1e-6 for v in d.d)

    def test_negated_zero_mean_gives_two(self, rng):
        stages = []
        c, s = 2, 16
        for _ in range(4):
            m = rng.standard_normal((c, s, s))
            stages.append(m - m.reshape(c, -1).mean(axis=1)[:, None, None])
            c, s = c * 2, s // 2
        f1 = FeatureStack(tuple(stages))
        f2 = FeatureStack(tuple(-m for m in stages))
        d = channel_pearson_distance(f1, f2)
        assert all(v == pytest.approx(2.0, abs=1e-6) for v in d.d)

    def test_constant_channel_contributes_full_unit(self, rng):
        stages = [rng.standard_normal((2, 8, 8)) for _ in range(4)]
        const = [s.copy() for s in stages]
        const[0][0] = 0.7  # channel 0 of stage 0 constant in one stack
        f1 = FeatureStack(tuple(stages))
        f2 = FeatureStack(tuple(const))
        d = channel_pearson_distance(f1, f2)
        # rho = (0, ~1) across the two channels -> d = 1 - mean ~ 0.5
        assert d.d[0] == pytest.approx(0.5, abs=1e-4)

    def test_affine_invariance(self, rng):
        f1 = random_stack(rng)
        f2 = random_stack(rng)
        base = channel_pearson_distance(f1, f2).as_array()
        scaled_stages = []
        for s in f2:
            c = s.shape[0]
            gains = rng.uniform(0.5, 3.0, (c, 1, 1))
            offsets = rng.uniform(-2.0, 2.0, (c, 1, 1))
            scaled_stages.append(s * gains + offsets)
        shifted = channel_pearson_distance(
            f1, FeatureStack(tuple(scaled_stages))
        ).as_array()
        assert np.abs(base - shifted).max() <= 1e-6

    def test_shape_mismatch(self, rng):
        with pytest.raises(ExtractorError):
            channel_pearson_distance(random_stack(rng, 2), random_stack(rng, 4))

    def test_bad_eps(self, rng):
        f = random_stack(rng)
        with pytest.raises(MetricInputError):
            channel_pearson_distance(f, f, eps=0.0)

    def test_range_invariant(self, rng):
        for _ in range(5):
            d = channel_pearson_distance(random_stack(rng), random_stack(rng))
            assert all(0.0 <= v <= 2.0 for v in d.d)


def unit_vec_stack(diff_counts, positions=20):
    """4 stages of 2-channel maps over `positions` spatial sites where
    `diff_counts[l]` sites point along the other axis in the second stack."""
    base_stages, other_stages = [], []
    for count in diff_counts:
        a = np.zeros((2, positions, 1))
        b = np.zeros((2, positions, 1))
        a[0] = 1.0
        b[0, count:, 0] = 1.0
        b[1, :count, 0] = 1.0
        base_stages.append(a)
        other_stages.append(b)
    return FeatureStack(tuple(base_stages)), FeatureStack(tuple(other_stages))


class TestLpipsStyle:
    def test_identical_stacks_zero(self, rng):
        f = random_stack(rng)
        assert lpips_style(f, f) == pytest.approx(0.0, abs=1e-9)

    def test_stage_average_arithmetic(self):
        # orthogonal unit vectors differ by ||u-v||^2 = 2 at k of 20 sites,
        # so per-stage means are 0.1, 0.2, 0.3, 0.4 and the average is 0.25
        f1, f2 = unit_vec_stack([1, 2, 3, 4])
        assert lpips_style(f1, f2) == pytest.approx(0.25, abs=1e-6)

    def test_matches_naive_per_position_loop(self, rng):
        f1 = random_stack(rng, base_channels=2, base_size=8)
        f2 = random_stack(rng, base_channels=2, base_size=8)
        stage_vals = []
        for s1, s2 in zip(f1, f2):
            c, h, w = s1.shape
            total = 0.0
            for y in range(h):
                for x in range(w):
                    v1 = s1[:, y, x] / (np.linalg.norm(s1[:, y, x]) + 1e-10)
                    v2 = s2[:, y, x] / (np.linalg.norm(s2[:, y, x]) + 1e-10)
                    total += float(np.sum((v1 - v2) ** 2))
            stage_vals.append(total / (h * w))
        assert lpips_style(f1, f2) == pytest.approx(np.mean(stage_vals), abs=1e-9)

    def test_lin_weights(self, rng):
        f1, f2 = unit_vec_stack([2, 2, 2, 2])
        # weight channel 0 only: diff^2 contributes 1 per differing site per channel
        w = [np.array([1.0, 0.0])] * 4
        expected_stage = 2 / 20  # one unit from channel 0 at 2 of 20 sites
        assert lpips_style(f1, f2, weights=w) == pytest.approx(
            expected_stage, abs=1e-6
        )

    def test_lin_weight_validation(self, rng):
        f = random_stack(rng)
        with pytest.raises(MetricInputError):
            lpips_style(f, f, weights=[np.ones(3)] * 4)
        with pytest.raises(MetricInputError):
            lpips_style(f, f, weights=[np.ones(2)] * 3)
        with pytest.raises(MetricInputError):
            lpips_style(f, f, weights=[-np.ones(2), np.ones(4), np.ones(8), np.ones(16)])

    def test_symmetry_and_nonnegativity(self, rng):
        f1, f2 = random_stack(rng), random_stack(rng)
        assert lpips_style(f1, f2) == pytest.approx(lpips_style(f2, f1), abs=1e-12)
        assert lpips_style(f1, f2) >= 0.0


class TestDistsStyle:
    def test_identical_stacks_zero(self, rng):
        f = random_stack(rng)
        assert dists_style(f, f) == pytest.approx(0.0, abs=1e-6)

    def test_symmetry(self, rng):
        f1, f2 = random_stack(rng), random_stack(rng)
        assert dists_style(f1, f2) == pytest.approx(dists_style(f2, f1), abs=1e-12)

    def test_toy_map_hand_computation(self):
        # 2x2 single-channel toy replicated over the four stages
        x = np.array([[0.2, 0.4], [0.6, 0.8]])
        y = np.array([[0.8, 0.6], [0.4, 0.2]])
        f1 = FeatureStack(tuple(x[None] for _ in range(4)))
        f2 = FeatureStack(tuple(y[None] for _ in range(4)))
        c = 1e-6
        mx = my = 0.5
        vx = vy = 0.05
        cov = -0.05
        texture = (2 * mx * my + c) / (mx**2 + my**2 + c)
        structure = (2 * cov + c) / (vx + vy + c)
        expected = 1.0 - 0.5 * (texture + structure)
        assert dists_style(f1, f2) == pytest.approx(expected, abs=1e-12)

    def test_nonnegative(self, rng):
        for _ in range(5):
            assert dists_style(random_stack(rng), random_stack(rng)) >= 0.0


class TestLayerDistances:
    def test_requires_four(self):
        with pytest.raises(MetricInputError):
            LayerDistances((1.0, 2.0))

    def test_as_array(self):
        d = LayerDistances((0.1, 0.2, 0.3, 0.4))
        assert np.array_equal(d.as_array(), [0.1, 0.2, 0.3, 0.4])

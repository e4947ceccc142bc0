"""Tests for gate construction and the closed-form gated distribution."""
import math

import numpy as np
import pytest

from pulse_focus.exceptions import GateError, LayoutError
from pulse_focus.model.layout import TokenLayout
from pulse_focus.services.gating import (
    FocusSet, GateConfig, build_gate, focus_mass, focused_mass, gated_distribution_oracle,
)
from pulse_focus.utils.numeric import softmax


class TestGateConfig:
    """Test suite for gate strength validation."""

    def test_default_lambda(self):
        """The default gate strength is 2.0."""
        assert GateConfig().lam == 2.0

    @pytest.mark.parametrize("lam", [-0.5, float("nan")])
    def test_invalid_lambda(self, lam):
        """Negative or NaN strengths raise GateError."""
        with pytest.raises(GateError):
            GateConfig(lam)


class TestBuildGate:
    """Test suite for build_gate."""

    def test_offsets_on_unfocused_images_only(self, three_image_layout):
        """Unfocused image tokens get -lambda; text, focused images and generated tokens get 0."""
        gate = build_gate(three_image_layout, [2], GateConfig(2.0), three_image_layout.total_len + 3)
        offsets = np.asarray(gate)
        assert len(gate) == 21
        assert np.all(offsets[0:4] == 0.0)
        assert np.all(offsets[4:8] == -2.0)
        assert np.all(offsets[8:12] == 0.0)
        assert np.all(offsets[12:16] == -2.0)
        assert np.all(offsets[16:] == 0.0)

    def test_two_image_focus(self, three_image_layout):
        """Only the one remaining image is gated."""
        gate = build_gate(three_image_layout, FocusSet.of(1, 3), GateConfig(1.5), 18)
        assert np.flatnonzero(np.asarray(gate)).tolist() == [8, 9, 10, 11]

    def test_zero_lambda_is_identity(self, three_image_layout):
        """A lambda-0 gate is all +0.0."""
        gate = build_gate(three_image_layout, [1], GateConfig(0.0), 20)
        assert gate.is_identity
        assert not np.any(np.signbit(np.asarray(gate)))

    def test_focus_out_of_range(self, three_image_layout):
        """A focus index outside 1..N raises LayoutError."""
        with pytest.raises(LayoutError):
            build_gate(three_image_layout, [4], GateConfig(), 20)

    def test_empty_focus(self, three_image_layout):
        """An empty focus set is rejected."""
        with pytest.raises(GateError):
            build_gate(three_image_layout, [], GateConfig(), 20)


class TestOracle:
    """Test suite for gated_distribution_oracle."""

    def test_matches_softmax_of_gated_logits(self, three_image_layout):
        """The oracle equals softmax(logits + gate) for random logits."""
        rng = np.random.default_rng(3)
        for _ in range(20):
            length = three_image_layout.total_len + int(rng.integers(1, 6))
            logits = rng.normal(size=length)
            focus = [int(rng.integers(1, 4))]
            lam = float(rng.uniform(0.1, 5.0))
            gate = build_gate(three_image_layout, focus, GateConfig(lam), length)
            expected = softmax(logits + np.asarray(gate))
            oracle = gated_distribution_oracle(softmax(logits), three_image_layout, focus, lam)
            assert np.allclose(oracle, expected, atol=1e-12)
            assert abs(oracle.sum() - 1.0) < 1e-9

    def test_zero_lambda_returns_copy(self, three_image_layout):
        """lambda 0 returns an equal but distinct array."""
        baseline = np.full(18, 1.0 / 18)
        result = gated_distribution_oracle(baseline, three_image_layout, [1], 0.0)
        assert np.array_equal(result, baseline)
        assert result is not baseline

    def test_focused_mass_never_decreases(self, three_image_layout):
        """Gating moves mass towards the focused image."""
        baseline = np.full(18, 1.0 / 18)
        gated = gated_distribution_oracle(baseline, three_image_layout, [3], 2.0)
        assert focus_mass(gated, three_image_layout, 3) > focus_mass(baseline, three_image_layout, 3)

    def test_unnormalized_baseline(self, three_image_layout):
        """A baseline that does not sum to 1 raises GateError."""
        with pytest.raises(GateError):
            gated_distribution_oracle(np.full(18, 0.1), three_image_layout, [1], 1.0)

    def test_infinite_lambda_with_all_mass_unfocused(self, three_image_layout):
        """An infinite gate over a baseline with no mass outside unfocused images is undefined."""
        baseline = np.zeros(18)
        baseline[4:8] = 0.25
        with pytest.raises(GateError):
            gated_distribution_oracle(baseline, three_image_layout, [1], math.inf)

    def test_infinite_lambda_zeroes_unfocused(self, three_image_layout):
        """An infinite gate removes all unfocused image mass."""
        baseline = np.full(18, 1.0 / 18)
        gated = gated_distribution_oracle(baseline, three_image_layout, [1], math.inf)
        assert focus_mass(gated, three_image_layout, 2) == 0.0
        assert abs(gated.sum() - 1.0) < 1e-9


class TestFocusMass:
    """Test suite for per-image mass helpers."""

    def test_focus_mass_sums_segment(self, three_image_layout):
        """a_j is the sum over image j's positions."""
        row = np.arange(18, dtype=float)
        assert focus_mass(row, three_image_layout, 1) == 4 + 5 + 6 + 7
        assert focused_mass(row, three_image_layout, [1, 3]) == (4 + 5 + 6 + 7) + (12 + 13 + 14 + 15)

    def test_focus_mass_bad_index(self, three_image_layout):
        """Index 0 is not an image."""
        with pytest.raises(LayoutError):
            focus_mass(np.ones(18), three_image_layout, 0)


class TestGateProperties:
    """Seeded sweeps over random baselines, image counts and gate strengths."""

    LAMBDAS = (0.1, 0.5, 1.0, 2.0, 4.0)
    GRID = (0.0, 0.5, 1.0, 2.0, 4.0)

    @staticmethod
    def random_case(rng):
        n = int(rng.integers(2, 7))
        layout = TokenLayout.from_lengths(
            [("text", int(rng.integers(1, 4)))] + [("image", int(rng.integers(1, 5))) for _ in range(n)]
        )
        length = layout.total_len + int(rng.integers(1, 5))
        baseline = softmax(rng.normal(scale=2.0, size=length))
        focus = sorted(rng.choice(n, size=int(rng.integers(1, 3)), replace=False) + 1)
        return layout, baseline, [int(j) for j in focus]

    def test_pairwise_ratio_law(self):
        """Unfocused-to-other ratios shrink by exactly e^-lambda; other ratios are unchanged."""
        rng = np.random.default_rng(21)
        for _ in range(1000):
            layout, baseline, focus = self.random_case(rng)
            lam = self.LAMBDAS[int(rng.integers(0, len(self.LAMBDAS)))]
            gated = gated_distribution_oracle(baseline, layout, focus, lam)
            others = [j for j in range(1, layout.num_images + 1) if j not in focus]
            unfocused = layout.image_mask(others, len(baseline))
            a = int(np.flatnonzero(~unfocused)[0])
            for b in range(len(baseline)):
                expected = baseline[b] / baseline[a] * (math.exp(-lam) if unfocused[b] else 1.0)
                assert gated[b] / gated[a] == pytest.approx(expected, rel=1e-9)

    def test_monotone_focusing(self):
        """Focused mass never falls as lambda grows and rises while unfocused mass remains."""
        rng = np.random.default_rng(8)
        grid = self.GRID
        for _ in range(1000):
            layout, baseline, focus = self.random_case(rng)
            masses = [focused_mass(gated_distribution_oracle(baseline, layout, focus, lam), layout, focus)
                      for lam in grid]
            others = [j for j in range(1, layout.num_images + 1) if j not in focus]
            unfocused = sum(focus_mass(baseline, layout, j) for j in others)
            for before, after in zip(masses, masses[1:]):
                if unfocused > 1e-6:
                    assert after > before
                else:
                    assert after >= before - 1e-15

    def test_oracle_matches_brute_force(self):
        """The closed form agrees with softmax over shifted log-baseline logits on random rows."""
        rng = np.random.default_rng(14)
        worst = 0.0
        for _ in range(1000):
            layout, baseline, focus = self.random_case(rng)
            lam = self.LAMBDAS[int(rng.integers(0, len(self.LAMBDAS)))]
            gate = build_gate(layout, focus, GateConfig(lam), len(baseline))
            expected = softmax(np.log(baseline) + np.asarray(gate))
            oracle = gated_distribution_oracle(baseline, layout, focus, lam)
            worst = max(worst, float(np.max(np.abs(oracle - expected))))
        assert worst <= 1e-9

"""clock モジュールのテスト"""

import numpy as np
import pytest
from pydantic import ValidationError

from clock import (
    ClockState,
    FixedDrift,
    PerfectSync,
    TruncatedNormalSync,
    UniformSymmetricDrift,
    local_duration,
    sample_clock,
    sample_sync_offsets,
    truncated_normal_acceptance,
)
from errors import ModelError


class TestClockState:
    def test_defaults_are_ideal(self):
        c = ClockState()
        assert c.offset_s == 0.0
        assert c.drift_ppm == 0.0

    def test_drift_above_limit_rejected(self):
        with pytest.raises(ModelError):
            ClockState(drift_ppm=150.0)

    def test_non_finite_offset_rejected(self):
        with pytest.raises(ModelError):
            ClockState(offset_s=float("nan"))


class TestLocalDuration:
    def test_positive_drift_stretches(self):
        assert local_duration(1e-3, ClockState(drift_ppm=10.0)) == pytest.approx(1.00001e-3, rel=1e-12)

    def test_offset_does_not_matter(self):
        assert local_duration(2e-3, ClockState(offset_s=5e-9)) == 2e-3

    def test_zero_duration(self):
        assert local_duration(0.0, ClockState(drift_ppm=-40.0)) == 0.0

    def test_negative_duration_rejected(self):
        with pytest.raises(ModelError):
            local_duration(-1e-9, ClockState())


class TestSyncModels:
    def test_interval_must_contain_mean(self):
        with pytest.raises(ValidationError):
            TruncatedNormalSync(mean_s=3e-9, std_s=1e-9, lower_s=-1e-9, upper_s=1e-9)

    def test_empty_interval_rejected(self):
        with pytest.raises(ValidationError):
            TruncatedNormalSync(std_s=1e-9, lower_s=1e-9, upper_s=1e-9)

    def test_acceptance_of_symmetric_interval(self):
        sync = TruncatedNormalSync(std_s=1.0, lower_s=-1.96, upper_s=1.96)
        assert truncated_normal_acceptance(sync) == pytest.approx(0.95, abs=1e-3)

    def test_tiny_acceptance_is_a_model_error(self):
        sync = TruncatedNormalSync(mean_s=0.0, std_s=1e-9, lower_s=0.0, upper_s=1e-18)
        with pytest.raises(ModelError):
            sample_clock(sync, FixedDrift(), np.random.default_rng(0))


class TestSampleClock:
    def test_perfect_sync_and_fixed_drift(self):
        c = sample_clock(PerfectSync(), FixedDrift(ppm=3.0), np.random.default_rng(1))
        assert c == ClockState(0.0, 3.0)

    def test_offsets_stay_inside_bounds(self):
        sync = TruncatedNormalSync(std_s=0.75e-9, lower_s=-1.8e-9, upper_s=1.8e-9)
        rng = np.random.default_rng(7)
        offsets = [sample_clock(sync, FixedDrift(), rng).offset_s for _ in range(2000)]
        assert min(offsets) >= -1.8e-9
        assert max(offsets) <= 1.8e-9
        assert abs(np.mean(offsets)) < 0.1e-9

    def test_hundred_thousand_samples_50ns(self):
        sync = TruncatedNormalSync(std_s=50e-9, lower_s=-100e-9, upper_s=100e-9)
        offsets = sample_sync_offsets(sync, np.random.default_rng(11), 100_000)
        assert offsets.shape == (100_000,)
        assert offsets.min() >= -100e-9 and offsets.max() <= 100e-9
        assert abs(offsets.mean()) <= 1e-9

    def test_single_offset_matches_sample_clock(self):
        sync = TruncatedNormalSync(std_s=0.8e-9, lower_s=-2.0e-9, upper_s=2.0e-9)
        r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
        r1.uniform(-1.0, 1.0)
        assert sample_sync_offsets(sync, r1, 1)[0] == sample_clock(sync, FixedDrift(), r2).offset_s

    def test_zero_std_returns_mean(self):
        sync = TruncatedNormalSync(mean_s=1e-9, std_s=0.0, lower_s=0.0, upper_s=2e-9)
        c = sample_clock(sync, FixedDrift(), np.random.default_rng(0))
        assert c.offset_s == 1e-9

    def test_uniform_drift_range(self):
        rng = np.random.default_rng(3)
        drifts = [sample_clock(PerfectSync(), UniformSymmetricDrift(max_abs_ppm=20.0), rng).drift_ppm
                  for _ in range(1000)]
        assert max(abs(d) for d in drifts) <= 20.0
        assert min(drifts) < -15.0 and max(drifts) > 15.0

    def test_offset_stream_independent_of_drift_model(self):
        # ドリフトモデルを変えてもオフセットの抽選は変わらない
        sync = TruncatedNormalSync(std_s=1e-9, lower_s=-3e-9, upper_s=3e-9)
        a = sample_clock(sync, FixedDrift(), np.random.default_rng(11))
        b = sample_clock(sync, UniformSymmetricDrift(max_abs_ppm=10.0), np.random.default_rng(11))
        assert a.offset_s == b.offset_s

    def test_drift_scales_with_max(self):
        a = sample_clock(PerfectSync(), UniformSymmetricDrift(max_abs_ppm=10.0), np.random.default_rng(5))
        b = sample_clock(PerfectSync(), UniformSymmetricDrift(max_abs_ppm=20.0), np.random.default_rng(5))
        assert b.drift_ppm == pytest.approx(2 * a.drift_ppm)

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError):
            UniformSymmetricDrift(max_abs_ppm=1.0, max_ppm=2.0)

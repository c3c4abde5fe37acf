"""measurement モジュールのテスト (ToA / RTT / TDoA / AoA の合成)"""

import math

import numpy as np
import pytest

from channel import LinkState
from clock import ClockState
from errors import CapabilityError, ConfigurationError
from measurement import (
    SPEED_OF_LIGHT,
    RadioConfig,
    aoa_std_rad,
    measure_aoa,
    measure_toa,
    rtt_double,
    rtt_single,
    tdoa_set,
    toa_std_s,
)
from scenario import Node, NodeRole, Position

RADIO = RadioConfig(bandwidth_hz=100e6)
LOS = LinkState(los=True, snr_db=20.0)


def node(i, x, y=0.0, z=0.0, offset=0.0, ppm=0.0, role=NodeRole.ANCHOR_UE, heading=0.0) -> Node:
    return Node(i, role, Position(x, y, z), heading_rad=heading, clock=ClockState(offset, ppm))


def rng():
    return np.random.default_rng(0)


class TestToaStd:
    def test_bandwidth_doubling_halves(self):
        assert toa_std_s(200e6, 100.0) == pytest.approx(toa_std_s(100e6, 100.0) / 2, rel=1e-12)

    def test_snr_quadrupling_halves(self):
        assert toa_std_s(100e6, 400.0) == pytest.approx(toa_std_s(100e6, 100.0) / 2, rel=1e-12)

    def test_regression_value(self):
        # 100 MHz, 20 dB → 約 0.39 ns (距離換算 約 0.117 m)
        sigma = toa_std_s(100e6, 100.0)
        assert sigma == pytest.approx(3.8985e-10, rel=1e-3)
        assert SPEED_OF_LIGHT * sigma == pytest.approx(0.1169, rel=1e-3)


class TestMeasureToa:
    def test_one_microsecond(self):
        m = measure_toa(node(1, 0), node(0, 299.792458), LOS, rng(), RADIO, noise=False)
        assert m.toa_s == pytest.approx(1e-6, abs=1e-18)

    def test_receiver_offset_adds(self):
        m = measure_toa(node(1, 0), node(0, 150.0, offset=1e-7), LOS, rng(), RADIO, noise=False)
        assert m.toa_s == pytest.approx(150.0 / SPEED_OF_LIGHT + 1e-7, abs=1e-18)

    def test_nlos_bias_adds(self):
        link = LinkState(los=False, snr_db=20.0, excess_delay_s=5e-8)
        m = measure_toa(node(1, 0), node(0, 150.0), link, rng(), RADIO, noise=False)
        assert m.toa_s == pytest.approx(150.0 / SPEED_OF_LIGHT + 5e-8, abs=1e-18)
        assert not m.los

    def test_noise_spread_matches_std(self):
        g = np.random.default_rng(1)
        tx, rx = node(1, 0), node(0, 100.0)
        errs = [measure_toa(tx, rx, LOS, g, RADIO).toa_s - 100.0 / SPEED_OF_LIGHT for _ in range(4000)]
        assert np.std(errs) == pytest.approx(toa_std_s(100e6, 100.0), rel=0.08)


class TestRtt:
    def test_single_ideal(self):
        m = rtt_single(node(0, 0), node(1, 150.0), 1e-3, LOS, rng(), RADIO, noise=False)
        assert m.est_range_m == pytest.approx(150.0, abs=1e-6)

    def test_single_opposite_drifts(self):
        a, b = node(0, 0, ppm=10.0), node(1, 150.0, ppm=-10.0)
        m = rtt_single(a, b, 1e-3, LOS, rng(), RADIO, noise=False)
        bias = SPEED_OF_LIGHT * 5e-4 * 2e-5
        assert bias == pytest.approx(3.0, abs=0.01)
        assert m.est_range_m - 150.0 == pytest.approx(bias, abs=0.01)

    def test_single_equal_drifts(self):
        a, b = node(0, 0, ppm=10.0), node(1, 150.0, ppm=10.0)
        m = rtt_single(a, b, 1e-3, LOS, rng(), RADIO, noise=False)
        tof = 150.0 / SPEED_OF_LIGHT
        assert abs(m.est_range_m - 150.0) <= SPEED_OF_LIGHT * 2 * tof * 1e-5

    @pytest.mark.parametrize("ppm", [1.0, 5.0, 20.0])
    @pytest.mark.parametrize("t_reply", [0.5e-3, 1e-3, 2e-3])
    def test_drift_closed_form_and_double_sided(self, ppm, t_reply):
        a, b = node(0, 0, ppm=ppm), node(1, 150.0, ppm=-ppm)
        single = rtt_single(a, b, t_reply, LOS, rng(), RADIO, noise=False).est_range_m - 150.0
        double = rtt_double(a, b, t_reply, t_reply, LOS, rng(), RADIO, noise=False).est_range_m - 150.0
        expected = SPEED_OF_LIGHT * (t_reply / 2) * (2 * ppm) * 1e-6
        assert single == pytest.approx(expected, rel=0.01)
        assert abs(double) < abs(single) / 100

    def test_double_ideal_any_reply_times(self):
        m = rtt_double(node(0, 0), node(1, 150.0), 0.3e-3, 2.1e-3, LOS, rng(), RADIO, noise=False)
        assert m.est_range_m == pytest.approx(150.0, abs=1e-6)

    def test_double_opposite_drifts_below_1mm(self):
        a, b = node(0, 0, ppm=10.0), node(1, 150.0, ppm=-10.0)
        m = rtt_double(a, b, 1e-3, 1e-3, LOS, rng(), RADIO, noise=False)
        assert abs(m.est_range_m - 150.0) < 1e-3

    def test_double_asymmetric_reply_cancels_drift(self):
        a, b = node(0, 0, ppm=20.0), node(1, 150.0, ppm=-20.0)
        m = rtt_double(a, b, 1e-3, 3e-3, LOS, rng(), RADIO, noise=False)
        assert abs(m.est_range_m - 150.0) < 1e-3

    def test_non_positive_reply_rejected(self):
        with pytest.raises(ConfigurationError):
            rtt_single(node(0, 0), node(1, 10.0), 0.0, LOS, rng(), RADIO)


class TestTdoa:
    def anchors(self, offsets=(0.0, 0.0, 0.0)):
        return [node(i + 1, 100 * math.cos(a), 100 * math.sin(a), offset=o)
                for i, (a, o) in enumerate(zip((0.0, 2.0, 4.0), offsets))]

    def links(self):
        return {i: LOS for i in (1, 2, 3)}

    def test_equidistant_target(self):
        t = node(0, 0, role=NodeRole.TARGET_UE)
        s = tdoa_set(t, self.anchors(), self.links(), rng(), RADIO, noise=False)
        assert s.ref_anchor_id == 1
        assert all(abs(d.diff_m) < 1e-6 for d in s.diffs)

    def test_target_offset_cancels(self):
        ideal = tdoa_set(node(0, 10, 20, role=NodeRole.TARGET_UE), self.anchors(), self.links(), rng(), RADIO,
                         noise=False)
        shifted = tdoa_set(node(0, 10, 20, offset=1e-3, role=NodeRole.TARGET_UE), self.anchors(), self.links(),
                           rng(), RADIO, noise=False)
        for a, b in zip(ideal.diffs, shifted.diffs):
            assert b.diff_m == pytest.approx(a.diff_m, abs=1e-6)

    @pytest.mark.parametrize("shift", [-40e-9, 3e-6, 1e-3])
    def test_common_clock_shift_cancels(self, shift):
        base = (0.0, 20e-9, -35e-9)
        t0 = node(0, 10, 20, offset=5e-9, role=NodeRole.TARGET_UE)
        t1 = node(0, 10, 20, offset=5e-9 + shift, role=NodeRole.TARGET_UE)
        ideal = tdoa_set(t0, self.anchors(base), self.links(), rng(), RADIO, noise=False)
        shifted = tdoa_set(t1, self.anchors(tuple(o + shift for o in base)), self.links(), rng(), RADIO,
                           noise=False)
        for a, b in zip(ideal.diffs, shifted.diffs):
            assert b.diff_m == pytest.approx(a.diff_m, abs=1e-6)

    def test_anchor_offsets_bias(self):
        t = node(0, 10, 20, role=NodeRole.TARGET_UE)
        ideal = tdoa_set(t, self.anchors(), self.links(), rng(), RADIO, noise=False)
        biased = tdoa_set(t, self.anchors((0.0, 50e-9, -50e-9)), self.links(), rng(), RADIO, noise=False)
        shift = SPEED_OF_LIGHT * 50e-9
        assert shift == pytest.approx(14.99, abs=0.01)
        assert biased.diffs[0].diff_m - ideal.diffs[0].diff_m == pytest.approx(-shift, abs=1e-6)
        assert biased.diffs[1].diff_m - ideal.diffs[1].diff_m == pytest.approx(shift, abs=1e-6)

    def test_needs_three_anchors(self):
        t = node(0, 10, 20, role=NodeRole.TARGET_UE)
        with pytest.raises(ConfigurationError):
            tdoa_set(t, self.anchors()[:2], self.links(), rng(), RADIO)


class TestAoa:
    RADIO4 = RadioConfig(bandwidth_hz=100e6, n_antennas=4)

    def test_antenna_doubling_ratio(self):
        s4, _ = aoa_std_rad(self.RADIO4, 100.0, 1.0)
        s8, _ = aoa_std_rad(RadioConfig(bandwidth_hz=100e6, n_antennas=8), 100.0, 1.0)
        assert s4 / s8 == pytest.approx(math.sqrt(8 * 63 / (4 * 15)), rel=1e-12)
        assert s4 / s8 == pytest.approx(2.898, abs=1e-3)

    def test_due_east_convention(self):
        m = measure_aoa(node(1, 0), node(0, 100.0), LOS, rng(), self.RADIO4, noise=False)
        assert m.azimuth_rad == pytest.approx(0.0, abs=1e-12)
        assert m.zenith_rad == pytest.approx(math.pi / 2)
        assert not m.low_quality

    def test_azimuth_counter_clockwise(self):
        m = measure_aoa(node(1, 0), node(0, -50.0, 50.0), LOS, rng(), self.RADIO4, noise=False)
        assert m.azimuth_rad == pytest.approx(3 * math.pi / 4, abs=1e-12)

    def test_endfire_is_capped(self):
        # 進行方向 0 のときアレイ軸は北向き。真北の送信源は端射方向
        m = measure_aoa(node(1, 0), node(0, 0.0, 100.0), LOS, rng(), self.RADIO4, noise=False)
        assert m.std_rad == pytest.approx(math.pi / 4)
        assert m.low_quality

    def test_planar_array_measures_zenith(self):
        radio = RadioConfig(bandwidth_hz=100e6, n_antennas=4, planar_array=True)
        m = measure_aoa(node(1, 0, z=0.0), node(0, 100.0, z=100.0), LOS, rng(), radio, noise=False)
        assert m.zenith_rad == pytest.approx(math.pi / 4)

    def test_single_antenna_rejected(self):
        with pytest.raises(CapabilityError):
            measure_aoa(node(1, 0), node(0, 100.0), LOS, rng(), RADIO, noise=False)

    def test_azimuth_wrapped(self):
        g = np.random.default_rng(5)
        obs, src = node(1, 0), node(0, -100.0, 0.01)
        for _ in range(200):
            m = measure_aoa(obs, src, LinkState(los=True, snr_db=0.0), g, self.RADIO4)
            assert -math.pi <= m.azimuth_rad < math.pi

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from driftkf.mill import (
    X5CRNI18_10,
    CoefficientSet,
    EngagementSample,
    ProcessSpec,
    ToolSpec,
    altintas_force,
    chip_thickness,
    disk_thickness,
    engagement_arc,
    helix_lag,
    kienzle_force,
    samples_per_revolution,
    spindle_speed,
    summed_force,
    total_force,
)


def brute_force(tool, process, c, angle):
    """Independent disk loop: every tooth, every disk, straight from the law."""
    ratio = process.width_of_cut / tool.diameter
    sweep = math.acos(1 - 2 * ratio)
    entry, exit_ = (0.0, sweep) if process.milling_direction == "up" else (math.pi - sweep, math.pi)
    b = process.depth_of_cut / tool.disk_count
    ft = fr = 0.0
    for tooth in range(tool.tooth_count):
        for d in range(tool.disk_count):
            z = (d + 0.5) * b
            lag = 2 * math.tan(math.radians(tool.helix_angle)) * z / tool.diameter
            phi = (angle + tooth * 2 * math.pi / tool.tooth_count - lag) % (2 * math.pi)
            if entry < phi < exit_:
                h = process.feed_per_tooth * math.sin(phi)
                ft += c.k_t * b * h ** (1 - c.m_t)
                fr += c.k_r * b * h ** (1 - c.m_r)
    return ft, fr


class TestSpecs:
    def test_defaults_are_table_values(self):
        tool, proc = ToolSpec(), ProcessSpec()
        assert (tool.diameter, tool.tooth_count, tool.helix_angle, tool.disk_count) == (10.0, 2, 45.0, 23)
        assert (proc.feed_per_tooth, proc.cutting_velocity, proc.depth_of_cut, proc.width_of_cut) == (0.1, 2.44, 2.0, 3.0)
        assert proc.sample_rate == 10_000.0

    @pytest.mark.parametrize("kwargs", [
        {"diameter": 0}, {"tooth_count": 0}, {"helix_angle": 90.0}, {"helix_angle": -1.0}, {"disk_count": 0},
    ])
    def test_tool_rejects(self, kwargs):
        with pytest.raises(ValueError):
            ToolSpec(**kwargs)

    @pytest.mark.parametrize("kwargs", [
        {"feed_per_tooth": 0}, {"depth_of_cut": -1}, {"width_of_cut": 0},
        {"sample_rate": 0}, {"milling_direction": "sideways"},
    ])
    def test_process_rejects(self, kwargs):
        with pytest.raises(ValueError):
            ProcessSpec(**kwargs)

    def test_coefficients_must_be_finite(self):
        with pytest.raises(ValueError):
            CoefficientSet(math.nan, 0.1, 1.0, 0.1)

    def test_engagement_sample(self):
        eng = EngagementSample(0.3, np.array([0.0, 0.02, 0.05]), 0.1)
        assert eng.h_sum == pytest.approx(0.07)
        np.testing.assert_array_equal(eng.engaged, [0.02, 0.05])
        with pytest.raises(ValueError):
            EngagementSample(0.0, np.array([-0.1]), 0.1)


class TestChipThickness:
    def test_examples(self):
        assert chip_thickness(math.pi / 2, 0.1) == pytest.approx(0.1, abs=1e-15)
        assert chip_thickness(0.0, 0.1) == 0.0
        assert chip_thickness(math.pi / 4, 0.1) == pytest.approx(0.070711, abs=5e-7)

    def test_outside_arc_is_zero(self):
        assert chip_thickness(1.0, 0.1, 0.0, 0.5) == 0.0
        assert chip_thickness(4.0, 0.1) == 0.0

    @given(st.floats(-20, 20), st.floats(0.01, 1.0))
    def test_periodic_and_bounded(self, angle, fz):
        h = chip_thickness(angle, fz)
        assert 0.0 <= h <= fz
        assert chip_thickness(angle + 2 * math.pi, fz) == pytest.approx(h, abs=1e-12)


class TestEngagementArc:
    def test_examples(self):
        tool = ToolSpec()
        assert engagement_arc(ProcessSpec(width_of_cut=5), tool) == pytest.approx((0, math.pi / 2))
        assert engagement_arc(ProcessSpec(width_of_cut=10), tool) == pytest.approx((0, math.pi))
        entry, exit_ = engagement_arc(ProcessSpec(width_of_cut=3), tool)
        assert entry == 0.0
        assert exit_ == pytest.approx(1.15928, abs=5e-6)

    def test_down_milling_ends_at_pi(self):
        entry, exit_ = engagement_arc(ProcessSpec(milling_direction="down"), ToolSpec())
        assert exit_ == math.pi
        assert exit_ - entry == pytest.approx(math.acos(0.4))

    def test_rejects_wider_than_tool(self):
        with pytest.raises(ValueError):
            engagement_arc(ProcessSpec(width_of_cut=11), ToolSpec())


class TestHelixLag:
    def test_examples(self):
        assert helix_lag(ToolSpec(helix_angle=0), 2.0) == 0.0
        assert helix_lag(ToolSpec(), 2.0) == pytest.approx(0.4)
        assert helix_lag(ToolSpec(), 0.0) == 0.0


class TestForceLaws:
    def test_kienzle_examples(self):
        assert kienzle_force(X5CRNI18_10, 1.0, 1.0)[0] == pytest.approx(1700.0)
        assert kienzle_force(CoefficientSet(1000, 1.0, 1.0, 0.5), 2.0, 0.5)[0] == pytest.approx(2000.0)
        ft = kienzle_force(X5CRNI18_10, 1.0, 0.1)[0]
        assert ft == pytest.approx(257.30, abs=0.01)
        assert ft == pytest.approx(1700 * math.pow(0.1, 0.82), rel=1e-15)

    @pytest.mark.parametrize("b,h", [(1.0, 0.0), (1.0, -0.1), (0.0, 0.1)])
    def test_kienzle_rejects(self, b, h):
        with pytest.raises(ValueError):
            kienzle_force(X5CRNI18_10, b, h)

    def test_altintas_examples(self):
        assert altintas_force(0, 0, 1, 1) == 0
        assert altintas_force(10, 0, 2, 0.3) == 20
        assert altintas_force(10, 2000, 2, 0.1) == pytest.approx(420)

    @given(st.floats(100, 3000), st.floats(0.1, 5), st.floats(0.01, 1))
    def test_kienzle_zero_exponent_is_linear_model(self, k, b, h):
        c = CoefficientSet(k, 0.0, k, 0.0)
        assert kienzle_force(c, b, h)[0] == pytest.approx(altintas_force(0.0, k, b, h), rel=1e-12)

    @pytest.mark.parametrize("h", np.linspace(0.01, 0.1, 7))
    def test_derivative_matches_finite_difference(self, h):
        c, b = X5CRNI18_10, 0.087
        analytic = c.k_t * b * (1 - c.m_t) * h ** (-c.m_t)
        eps = 1e-6 * h
        fd = (kienzle_force(c, b, h + eps)[0] - kienzle_force(c, b, h - eps)[0]) / (2 * eps)
        assert abs(fd - analytic) / analytic < 1e-6


class TestTotalForce:
    def test_disengaged_angle(self):
        # both teeth and all disks behind the cut
        ft, fr, eng = total_force(ToolSpec(), ProcessSpec(), X5CRNI18_10, 2.5)
        assert (ft, fr, eng.h_sum) == (0.0, 0.0, 0.0)

    def test_straight_single_edge_at_peak(self):
        tool = ToolSpec(helix_angle=0.0, disk_count=1, tooth_count=1)
        proc = ProcessSpec(width_of_cut=10.0)
        ft, fr, _ = total_force(tool, proc, X5CRNI18_10, math.pi / 2)
        # equal up to the last ulp: the sum goes through exp(log h)
        expected = kienzle_force(X5CRNI18_10, proc.depth_of_cut, proc.feed_per_tooth)
        assert (ft, fr) == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("direction", ["up", "down"])
    @pytest.mark.parametrize("angle", [0.8, 0.1, 1.3, 3.5, 4.0])
    def test_matches_brute_force(self, angle, direction):
        tool, proc = ToolSpec(), ProcessSpec(milling_direction=direction)
        ft, fr, _ = total_force(tool, proc, X5CRNI18_10, angle)
        assert (ft, fr) == pytest.approx(brute_force(tool, proc, X5CRNI18_10, angle), rel=1e-12)

    def test_disk_refinement_convergence_trend(self):
        proc = ProcessSpec()
        angles = np.linspace(0, 2 * math.pi, 2001)

        def sweep(n):
            return np.array([total_force(ToolSpec(disk_count=n), proc, X5CRNI18_10, a)[0] for a in angles])

        fine = sweep(460)
        errs = [np.abs(sweep(n) - fine).max() for n in (23, 46, 92)]
        assert errs[0] > errs[1] > errs[2]

    @given(st.floats(0, 2 * math.pi))
    def test_total_force_periodic_in_tooth_pitch(self, angle):
        tool, proc = ToolSpec(), ProcessSpec()
        a = total_force(tool, proc, X5CRNI18_10, angle)[0]
        b = total_force(tool, proc, X5CRNI18_10, angle + math.pi)[0]
        assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


class TestVectorised:
    def test_disk_thickness_shape_and_order(self):
        tool, proc = ToolSpec(), ProcessSpec()
        h = disk_thickness(tool, proc, np.array([0.5, 1.0]))
        assert h.shape == (2, 46)
        single = disk_thickness(tool, proc, 0.5)
        np.testing.assert_array_equal(h[0], single)

    def test_summed_force_broadcasts(self):
        h = np.array([0.0, 0.05, 0.08])
        k = np.array([1000.0, 1500.0])
        m = np.array([0.2, 0.3])
        out = summed_force(k, m, 0.1, h)
        expected = [kk * 0.1 * (0.05 ** (1 - mm) + 0.08 ** (1 - mm)) for kk, mm in zip(k, m)]
        np.testing.assert_allclose(out, expected, rtol=1e-13)
        assert summed_force(k, m, 0.1, np.zeros(3)).tolist() == [0.0, 0.0]

    def test_spindle_speed(self):
        n = spindle_speed(ToolSpec(), ProcessSpec())
        assert n == pytest.approx(2440 / (10 * math.pi))
        assert samples_per_revolution(ToolSpec(), ProcessSpec()) == 129

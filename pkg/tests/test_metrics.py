import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajgnn.errors import ContractError, ShapeError
from trajgnn.metrics import (
    SampleResult,
    ade,
    aggregate,
    de_tau,
    displacement_series,
    fde,
    horizon_seconds,
    table_to_csv,
)


def offset_pair(t=50, dx=3.0, dy=4.0):
    gt = np.cumsum(np.ones((t, 2)), axis=0)
    return gt + (dx, dy), gt


class TestDeTau:
    def test_zero_for_identical(self):
        pred, gt = offset_pair(dx=0.0, dy=0.0)
        assert de_tau(pred, gt, 5) == 0.0

    def test_three_four_five(self):
        pred, gt = offset_pair()
        for tau in (1, 25, 50):
            assert de_tau(pred, gt, tau) == pytest.approx(5.0)

    def test_matches_direct_formula_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            pred = rng.normal(size=(20, 2))
            gt = rng.normal(size=(20, 2))
            tau = int(rng.integers(1, 21))
            direct = np.sqrt(((pred[tau - 1] - gt[tau - 1]) ** 2).sum())
            assert abs(de_tau(pred, gt, tau) - direct) <= 1e-12

    def test_tau_out_of_range(self):
        pred, gt = offset_pair(t=10)
        with pytest.raises(ContractError):
            de_tau(pred, gt, 11)
        with pytest.raises(ContractError):
            de_tau(pred, gt, 0)


class TestAde:
    def test_constant_offset(self):
        pred, gt = offset_pair()
        assert ade(pred, gt) == pytest.approx(5.0)

    def test_linear_ramp_closed_form(self):
        # DE_tau = tau/50 -> ADE = (1/50) * sum(tau)/50 = 51/100
        t = 50
        gt = np.zeros((t, 2))
        pred = np.stack([np.arange(1, t + 1) / t, np.zeros(t)], axis=1)
        assert ade(pred, gt) == pytest.approx(0.51)

    def test_ade_le_max_de(self):
        rng = np.random.default_rng(1)
        pred, gt = rng.normal(size=(30, 2)), rng.normal(size=(30, 2))
        assert ade(pred, gt) <= displacement_series(pred, gt).max() + 1e-15

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            ade(np.zeros((5, 2)), np.zeros((6, 2)))


class TestFde:
    def test_zero_for_identical(self):
        pred, gt = offset_pair(dx=0, dy=0)
        assert fde(pred, gt) == 0.0

    def test_constant_offset(self):
        pred, gt = offset_pair()
        assert fde(pred, gt) == pytest.approx(5.0)

    def test_equals_last_de_tau(self):
        rng = np.random.default_rng(2)
        pred, gt = rng.normal(size=(17, 2)), rng.normal(size=(17, 2))
        assert fde(pred, gt) == de_tau(pred, gt, 17)


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(
        phi=st.floats(-3.1, 3.1),
        tx=st.floats(-50, 50),
        ty=st.floats(-50, 50),
    )
    def test_rigid_motion_invariance(self, phi, tx, ty):
        rng = np.random.default_rng(7)
        pred, gt = rng.normal(size=(12, 2)), rng.normal(size=(12, 2))
        rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
        pred2, gt2 = pred @ rot.T + (tx, ty), gt @ rot.T + (tx, ty)
        assert abs(ade(pred, gt) - ade(pred2, gt2)) <= 1e-9
        assert abs(fde(pred, gt) - fde(pred2, gt2)) <= 1e-9

    @settings(max_examples=40, deadline=None)
    @given(dx=st.floats(-5, 5), dy=st.floats(-5, 5))
    def test_lipschitz_under_uniform_shift(self, dx, dy):
        rng = np.random.default_rng(8)
        pred, gt = rng.normal(size=(15, 2)), rng.normal(size=(15, 2))
        shifted = pred + (dx, dy)
        assert abs(ade(shifted, gt) - ade(pred, gt)) <= np.hypot(dx, dy) + 1e-12

    def test_nonnegative_zero_iff_equal(self):
        rng = np.random.default_rng(9)
        pred, gt = rng.normal(size=(9, 2)), rng.normal(size=(9, 2))
        assert ade(pred, gt) > 0
        assert ade(gt, gt) == 0.0


class TestAggregate:
    def _result(self, scene, value, t=50):
        de = np.full(t, float(value))
        r = SampleResult(scene_id=scene, de=de)
        return r

    def test_single_sample_single_group(self):
        pred, gt = offset_pair()
        table = aggregate([SampleResult.from_pair(1, pred, gt)], "scene")
        assert len(table) == 1
        row = table[0]
        assert row["scene"] == 1
        assert row["ade"] == pytest.approx(5.0)
        assert row["fde_5s"] == pytest.approx(5.0)

    def test_two_identical_samples_mean_is_value(self):
        table = aggregate([self._result(1, 2.0), self._result(1, 2.0)], "scene")
        assert table[0]["ade"] == pytest.approx(2.0)
        assert table[0]["n"] == 2

    def test_truncated_full_horizon_equals_full_ade(self):
        rng = np.random.default_rng(3)
        pred, gt = rng.normal(size=(50, 2)), rng.normal(size=(50, 2))
        table = aggregate([SampleResult.from_pair(0, pred, gt)], "scene")
        assert table[0]["ade_5s"] == pytest.approx(table[0]["ade"])

    def test_horizon_grouping_spans_seconds(self):
        table = aggregate([self._result(0, 1.0)], "horizon")
        assert [row["horizon_s"] for row in table] == [1, 2, 3, 4, 5]

    def test_short_horizon_caps_seconds(self):
        table = aggregate([self._result(0, 1.0, t=30)], "horizon")
        assert [row["horizon_s"] for row in table] == [1, 2, 3]

    def test_empty_results_rejected(self):
        with pytest.raises(ContractError):
            aggregate([], "scene")

    def test_csv_round_trips_numbers_exactly(self):
        table = aggregate([self._result(4, 1.2345678901234567)], "scene")
        text = table_to_csv(table)
        header, row = text.strip().split("\n")
        cols = dict(zip(header.split(","), row.split(",")))
        assert float(cols["ade"]) == table[0]["ade"]


def test_horizon_seconds():
    assert horizon_seconds(50) == [1, 2, 3, 4, 5]
    assert horizon_seconds(30) == [1, 2, 3]
    assert horizon_seconds(9) == []

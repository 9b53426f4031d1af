import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iscount.costmodel import image_cost, images_to_cover, labeling_hours, savings_report

US_AREA = 9_629_091
KENYA_AREA = 582_650
# back-solved from the $2,459,183 saved at 2%: 2,459,183 / (17 * 0.98)
BANGLADESH_AREA = 147_610
EDGE2 = (640 * 0.0003) ** 2


class TestImageCost:
    def test_values(self):
        assert image_cost(US_AREA) == 163_694_547
        assert image_cost(0) == 0
        assert image_cost(1) == 17

    def test_negative(self):
        with pytest.raises(ValueError):
            image_cost(-1)


class TestImagesToCover:
    def test_kenya(self):
        assert images_to_cover(KENYA_AREA) == 15_805_393

    def test_one_image(self):
        assert images_to_cover(EDGE2) == 1

    def test_us_ceiling(self):
        # the quotient is 261,205,810.55, so the ceiling is one above the quoted count
        assert US_AREA / EDGE2 == pytest.approx(261_205_810.546875, abs=1e-6)
        assert images_to_cover(US_AREA) == 261_205_811

    @pytest.mark.parametrize("args", [(0,), (-1,), (1, 0), (1, 640, 0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            images_to_cover(*args)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1e-3, 1e8))
    def test_covers_area(self, area):
        n = images_to_cover(area)
        assert n * EDGE2 >= area * (1 - 1e-9)
        assert (n - 1) * EDGE2 < area


class TestLabelingHours:
    def test_kenya(self):
        hours = labeling_hours(15_805_393)
        assert hours == pytest.approx(113_272, abs=1)
        assert abs(hours - 115_000) / 115_000 < 0.02

    def test_us(self):
        assert labeling_hours(261_205_810) == pytest.approx(1_871_975, rel=1e-4)

    def test_zero(self):
        assert labeling_hours(0) == 0


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1e7), st.floats(0, 1e7))
def test_linearity(a, b):
    assert image_cost(a + b) == pytest.approx(image_cost(a) + image_cost(b), rel=1e-9, abs=1e-9)
    assert labeling_hours(a + b) == pytest.approx(labeling_hours(a) + labeling_hours(b), rel=1e-9, abs=1e-9)


class TestSavingsReport:
    def test_us(self):
        r = savings_report(US_AREA, 0.001)
        assert r.image_cost_saved == pytest.approx(163_692_910, rel=1e-3)

    def test_full_sample(self):
        r = savings_report(KENYA_AREA, 100)
        assert r.image_cost_saved == 0 and r.labeling_hours_saved == 0

    def test_bangladesh(self):
        r = savings_report(BANGLADESH_AREA, 2)
        assert r.image_cost_saved == pytest.approx(2_459_183, rel=5e-3)

    @pytest.mark.parametrize("pct", [0, -1, 100.5])
    def test_out_of_range(self, pct):
        with pytest.raises(ValueError):
            savings_report(1000, pct)

    def test_sampled_below_totals(self):
        r = savings_report(KENYA_AREA, 3.5)
        assert 0 <= r.images_sampled <= r.images_total
        assert 0 <= r.image_cost_sampled <= r.image_cost_total
        assert 0 <= r.labeling_hours_sampled <= r.labeling_hours_total

    def test_monotone_in_percent(self):
        saved = [savings_report(KENYA_AREA, p).image_cost_saved for p in (0.001, 0.1, 1, 10, 50, 100)]
        assert all(a > b for a, b in zip(saved, saved[1:]))

    def test_serialization(self):
        r = savings_report(KENYA_AREA, 1)
        assert set(r.to_dict()) >= {"area", "images_total", "image_cost_saved", "labeling_hours_saved"}
        assert "cost saved on images ($)" in r.table()
        assert math.isfinite(r.to_dict()["labeling_hours_saved"])

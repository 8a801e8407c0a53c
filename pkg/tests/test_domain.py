from datetime import date, datetime

import pytest
from hypothesis import given
from hypothesis import strategies as st

from actrec.domain import (
    LABEL_NAMES,
    N_LABELS,
    ActivityLabel,
    ActivityPoint,
    CoarseActivity,
    DataError,
    DayType,
    Gender,
    Projection,
    StopPoint,
    StudyCalendar,
    TimeSlot,
    UserProfile,
    age_band,
    collapse_to_4,
    date_of_day,
    day_index_of,
    day_type,
    day_type_of_index,
    from_seconds,
    to_seconds,
)


class TestVocabulary:
    def test_sixteen_labels_in_order(self):
        assert N_LABELS == 16
        assert LABEL_NAMES[0] == "Home" and LABEL_NAMES[-1] == "OthersHome"
        assert [int(a) for a in ActivityLabel] == list(range(16))

    def test_parse_rejects_other_and_unknown(self):
        assert ActivityLabel.parse(" Work ") is ActivityLabel.Work
        for bad in ("Other", "work", ""):
            with pytest.raises(DataError):
                ActivityLabel.parse(bad)

    def test_collapse_preimage_sizes(self):
        sizes = {c: sum(collapse_to_4(a) is c for a in ActivityLabel) for c in CoarseActivity}
        assert sizes == {CoarseActivity.Home: 1, CoarseActivity.Work: 3, CoarseActivity.Transportation: 2,
                         CoarseActivity.MaintenanceDiscretionary: 10}

    @pytest.mark.parametrize("label,coarse", [
        ("Home", "Home"), ("Work", "Work"), ("WorkRelatedBusiness", "Work"), ("Education", "Work"),
        ("ChangeModeTransfer", "Transportation"), ("PickUpDropOff", "Transportation"),
        ("Shopping", "MaintenanceDiscretionary"), ("OthersHome", "MaintenanceDiscretionary"),
    ])
    def test_collapse_examples(self, label, coarse):
        assert collapse_to_4(ActivityLabel[label]) is CoarseActivity[coarse]

    def test_gender_parse(self):
        assert Gender.parse("F") is Gender.female
        assert Gender.parse("male") is Gender.male
        with pytest.raises(DataError):
            Gender.parse("x")


class TestTime:
    @given(st.datetimes(min_value=datetime(1971, 1, 1), max_value=datetime(2100, 1, 1)))
    def test_seconds_round_trip(self, ts):
        ts = ts.replace(microsecond=0)
        assert from_seconds(to_seconds(ts)) == ts

    @given(st.dates(min_value=date(1970, 1, 1), max_value=date(2100, 1, 1)))
    def test_day_type_matches_calendar_weekday(self, d):
        k = day_index_of(d)
        assert date_of_day(k) == d
        assert (day_type_of_index(k) is DayType.weekend) == (d.weekday() >= 5)

    def test_timeslot_validation(self):
        TimeSlot(0, 143, 10)
        with pytest.raises(ValueError):
            TimeSlot(0, 144, 10)
        with pytest.raises(ValueError):
            TimeSlot(0, 0, 7)

    def test_study_calendar(self):
        cal = StudyCalendar(date(2013, 3, 11), date(2013, 3, 17))
        sat = TimeSlot(day_index_of(date(2013, 3, 16)), 0)
        assert day_type(sat, cal) is DayType.weekend
        assert cal.day_type(TimeSlot(day_index_of(date(2013, 3, 11)), 0)) is DayType.weekday
        with pytest.raises(DataError):
            cal.day_type(TimeSlot(day_index_of(date(2013, 3, 18)), 0))


class TestValues:
    @given(st.floats(103.6, 104.0), st.floats(1.2, 1.45))
    def test_projection_round_trip(self, lon, lat):
        p = Projection()
        assert p.to_lonlat(*p.to_xy(lon, lat)) == pytest.approx((lon, lat), abs=1e-9)

    def test_projection_scale(self):
        p = Projection()
        x, y = p.to_xy(p.ref_lon, p.ref_lat + 0.01)
        assert x == 0 and y == pytest.approx(1111.95, abs=0.01)

    @pytest.mark.parametrize("age,band", [(18, "<25"), (24, "<25"), (25, "25-40"), (40, "25-40"), (41, "41-60"),
                                          (61, "61+"), (90, "61+")])
    def test_age_bands(self, age, band):
        assert age_band(age) == band
        assert UserProfile("u", Gender.male, age, (0, 0)).age_group == band

    def test_stop_point_duration(self):
        s = StopPoint("u", 0, 0, 0, 5400)
        assert s.duration_hours == 1.5 and s.day == 0

    def test_activity_point_requires_increasing_slots(self):
        s = StopPoint("u", 0, 0, 0, 60)
        ActivityPoint(s, (0, 0), (TimeSlot(0, 1), TimeSlot(0, 2)))
        with pytest.raises(ValueError):
            ActivityPoint(s, (0, 0), ())
        with pytest.raises(ValueError):
            ActivityPoint(s, (0, 0), (TimeSlot(0, 2), TimeSlot(0, 2)))

"""Core value types and the activity vocabulary."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from enum import Enum, IntEnum

EPOCH = datetime(1970, 1, 1)
SECONDS_PER_DAY = 86400
OTHER = "Other"


class DataError(ValueError):
    """Malformed or insufficient input data."""


class InvariantError(RuntimeError):
    """An internal consistency check failed."""


class ActivityLabel(IntEnum):
    Home = 0
    Work = 1
    ChangeModeTransfer = 2
    PickUpDropOff = 3
    Shopping = 4
    Social = 5
    WorkRelatedBusiness = 6
    Education = 7
    Recreation = 8
    MedicalDental = 9
    MealEatingBreak = 10
    Entertainment = 11
    SportsExercise = 12
    PersonalErrand = 13
    AccompanySomeone = 14
    OthersHome = 15

    @classmethod
    def parse(cls, name: str) -> "ActivityLabel":
        try:
            return cls[name.strip()]
        except KeyError:
            raise DataError(f"unknown activity label {name!r}") from None


N_LABELS = len(ActivityLabel)
LABEL_NAMES = [a.name for a in ActivityLabel]


class CoarseActivity(IntEnum):
    Home = 0
    Work = 1
    Transportation = 2
    MaintenanceDiscretionary = 3


_COARSE = {
    ActivityLabel.Home: CoarseActivity.Home,
    ActivityLabel.Work: CoarseActivity.Work,
    ActivityLabel.WorkRelatedBusiness: CoarseActivity.Work,
    ActivityLabel.Education: CoarseActivity.Work,
    ActivityLabel.ChangeModeTransfer: CoarseActivity.Transportation,
    ActivityLabel.PickUpDropOff: CoarseActivity.Transportation,
}

# index lookup table usable on integer label arrays
COARSE_INDEX = [int(_COARSE.get(a, CoarseActivity.MaintenanceDiscretionary)) for a in ActivityLabel]


def collapse_to_4(label: ActivityLabel) -> CoarseActivity:
    return _COARSE.get(ActivityLabel(label), CoarseActivity.MaintenanceDiscretionary)


class DayType(Enum):
    weekday = 0
    weekend = 1


class Gender(Enum):
    female = "female"
    male = "male"

    @classmethod
    def parse(cls, text: str) -> "Gender":
        t = text.strip().lower()
        if t in ("f", "female"):
            return cls.female
        if t in ("m", "male"):
            return cls.male
        raise DataError(f"unknown gender {text!r}")


def to_seconds(ts: datetime) -> int:
    """Seconds since 1970-01-01 for a naive local timestamp."""
    return int((ts - EPOCH).total_seconds())


def from_seconds(sec: int) -> datetime:
    return EPOCH + timedelta(seconds=int(sec))


def day_of(sec: int) -> int:
    return int(sec) // SECONDS_PER_DAY


def date_of_day(day_index: int) -> date:
    return (EPOCH + timedelta(days=int(day_index))).date()


def day_index_of(d: date) -> int:
    return (d - EPOCH.date()).days


def day_type_of_index(day_index: int) -> DayType:
    # 1970-01-01 was a Thursday (weekday() == 3)
    return DayType.weekend if (int(day_index) + 3) % 7 >= 5 else DayType.weekday


@dataclass(frozen=True)
class TimeSlot:
    """A fixed-width slot; ``day_index`` counts days since 1970-01-01."""

    day_index: int
    slot_index: int
    width_minutes: int = 10

    def __post_init__(self):
        if 1440 % self.width_minutes:
            raise ValueError(f"slot width {self.width_minutes} does not divide 1440")
        if not 0 <= self.slot_index < 1440 // self.width_minutes:
            raise ValueError(f"slot index {self.slot_index} out of range")

    @property
    def start_minute(self) -> int:
        return self.slot_index * self.width_minutes

    def __str__(self):
        h, m = divmod(self.start_minute, 60)
        return f"{h}:{m:02d}@{date_of_day(self.day_index).isoformat()}"


@dataclass(frozen=True)
class StudyCalendar:
    start: date
    end: date  # inclusive

    def day_type(self, slot: TimeSlot) -> DayType:
        d = date_of_day(slot.day_index)
        if not self.start <= d <= self.end:
            raise DataError(f"day {d} outside study calendar {self.start}..{self.end}")
        return DayType.weekend if d.weekday() >= 5 else DayType.weekday


def day_type(slot: TimeSlot, calendar: StudyCalendar) -> DayType:
    return calendar.day_type(slot)


@dataclass(frozen=True)
class Projection:
    """Local equirectangular projection about a reference point."""

    ref_lon: float = 103.8198
    ref_lat: float = 1.3521

    R = 6371008.8

    def to_xy(self, lon: float, lat: float) -> tuple[float, float]:
        k = math.radians(1.0) * self.R
        return ((lon - self.ref_lon) * k * math.cos(math.radians(self.ref_lat)), (lat - self.ref_lat) * k)

    def to_lonlat(self, x: float, y: float) -> tuple[float, float]:
        k = math.radians(1.0) * self.R
        return (self.ref_lon + x / (k * math.cos(math.radians(self.ref_lat))), self.ref_lat + y / k)


@dataclass(frozen=True)
class StopPoint:
    user_id: str
    x: float
    y: float
    t_start: int
    t_end: int
    label: ActivityLabel | None = None
    lon: float = math.nan
    lat: float = math.nan
    is_other: bool = False

    @property
    def duration_hours(self) -> float:
        return (self.t_end - self.t_start) / 3600.0

    @property
    def day(self) -> int:
        return day_of(self.t_start)


@dataclass(frozen=True)
class ActivityPoint:
    origin: StopPoint
    cell_id: object
    slots: tuple[TimeSlot, ...]
    label: ActivityLabel | None = None

    def __post_init__(self):
        if not self.slots:
            raise ValueError("activity point needs at least one time slot")
        keys = [(s.day_index, s.slot_index) for s in self.slots]
        if any(a >= b for a, b in zip(keys, keys[1:])):
            raise ValueError("slots must be strictly increasing")


DEFAULT_AGE_BREAKS = (25, 41, 61)


def age_band(age: int, breaks=DEFAULT_AGE_BREAKS) -> str:
    """Band label for an age; ``breaks`` are the lower bounds of bands 2..n."""
    lo = None
    for b in breaks:
        if age < b:
            return f"<{b}" if lo is None else f"{lo}-{b - 1}"
        lo = b
    return f"{lo}+"


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    gender: Gender
    age: int
    home: tuple[float, float]
    work: tuple[float, float] | None = None
    age_breaks: tuple[int, ...] = field(default=DEFAULT_AGE_BREAKS, compare=False)

    @property
    def age_group(self) -> str:
        return age_band(self.age, self.age_breaks)


@dataclass(frozen=True)
class PoiRecord:
    x: float
    y: float
    raw_category: str
    mapped_label: ActivityLabel | None = None

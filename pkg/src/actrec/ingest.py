"""CSV/JSON readers and writers, and the travel-diary cleaning rules."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from .domain import (
    OTHER,
    ActivityLabel,
    DataError,
    InvariantError,
    Gender,
    PoiRecord,
    Projection,
    StopPoint,
    UserProfile,
    DEFAULT_AGE_BREAKS,
    day_of,
    from_seconds,
    to_seconds,
)

log = logging.getLogger(__name__)

STOP_COLUMNS = ["user_id", "lon", "lat", "t_start", "t_end", "label"]
PROFILE_COLUMNS = ["user_id", "gender", "age", "home_lon", "home_lat"]
PROFILE_OPTIONAL = ["work_lon", "work_lat"]
POI_COLUMNS = ["lon", "lat", "raw_category"]

HOME_RADIUS_M = 50.0
NEAR_HOME_M = 10.0
MAX_DURATION_S = 24 * 3600

# report categories, in the order the rules are applied
RULE_OTHER = "other_label"
RULE_NO_PROFILE = "no_profile"
RULE_NOT_HOME_BOUNDED = "not_home_bounded"
RULE_HOME_DISTANCE = "home_distance_gt_50m"
RULE_NEAR_HOME = "non_home_within_10m"
RULE_SWAPPED = "swapped_or_zero_time"
RULE_TOO_LONG = "duration_gt_24h"
RULE_OUTSIDE = "outside_study_area"
RULES = [RULE_OTHER, RULE_NO_PROFILE, RULE_NOT_HOME_BOUNDED, RULE_HOME_DISTANCE, RULE_NEAR_HOME,
         RULE_SWAPPED, RULE_TOO_LONG, RULE_OUTSIDE]
DAY_RULES = {RULE_NO_PROFILE, RULE_NOT_HOME_BOUNDED, RULE_HOME_DISTANCE, RULE_NEAR_HOME}


@dataclass(frozen=True)
class BoundingBox:
    lon_min: float = 103.55
    lat_min: float = 1.15
    lon_max: float = 104.10
    lat_max: float = 1.50

    def contains(self, lon: float, lat: float) -> bool:
        return self.lon_min <= lon <= self.lon_max and self.lat_min <= lat <= self.lat_max

    def diameter_km(self, proj: Projection) -> float:
        x0, y0 = proj.to_xy(self.lon_min, self.lat_min)
        x1, y1 = proj.to_xy(self.lon_max, self.lat_max)
        return math.hypot(x1 - x0, y1 - y0) / 1000.0


def _parse_time(text: str) -> int:
    return to_seconds(datetime.fromisoformat(text.strip()))


def _format_time(sec: int) -> str:
    return from_seconds(sec).isoformat(timespec="seconds")


def _check_header(path, header, required, optional=()):
    if header is None:
        raise DataError(f"{path}: line 1: missing header")
    cols = [h.strip() for h in header]
    if cols[:len(required)] != required or any(c not in optional for c in cols[len(required):]):
        raise DataError(f"{path}: line 1: expected columns {','.join(list(required) + list(optional))}, "
                        f"got {','.join(cols)}")
    return cols


def parse_stops(path, proj: Projection | None = None, errors: list | None = None) -> list[StopPoint]:
    """Read the stops CSV; rows with unparseable fields are logged, collected and skipped."""
    proj = proj or Projection()
    path = Path(path)
    stops: list[StopPoint] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            log.warning("%s is empty", path)
            return stops
        _check_header(path, header, STOP_COLUMNS)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(STOP_COLUMNS):
                raise DataError(f"{path}: line {lineno}: expected {len(STOP_COLUMNS)} columns, got {len(row)}")
            try:
                user, lon, lat, ts, te, lab = (c.strip() for c in row)
                lon, lat = float(lon), float(lat)
                if not (math.isfinite(lon) and math.isfinite(lat)):
                    raise ValueError("non-finite coordinate")
                t0, t1 = _parse_time(ts), _parse_time(te)
                label, other = None, False
                if lab == OTHER:
                    other = True
                elif lab:
                    label = ActivityLabel.parse(lab)
            except (ValueError, DataError) as exc:
                msg = f"{path}: line {lineno}: {exc}"
                log.warning("skipping row: %s", msg)
                if errors is not None:
                    errors.append(msg)
                continue
            x, y = proj.to_xy(lon, lat)
            stops.append(StopPoint(user, x, y, t0, t1, label, lon, lat, other))
    return stops


def write_stops(path, stops, include_labels: bool = True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STOP_COLUMNS)
        for s in stops:
            lab = OTHER if s.is_other else (s.label.name if (s.label is not None and include_labels) else "")
            w.writerow([s.user_id, f"{s.lon:.7f}", f"{s.lat:.7f}", _format_time(s.t_start),
                        _format_time(s.t_end), lab])


def parse_profiles(path, proj: Projection | None = None, age_breaks=DEFAULT_AGE_BREAKS) -> dict[str, UserProfile]:
    proj = proj or Projection()
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        cols = _check_header(path, next(reader, None), PROFILE_COLUMNS, PROFILE_OPTIONAL)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(cols):
                raise DataError(f"{path}: line {lineno}: expected {len(cols)} columns, got {len(row)}")
            rec = dict(zip(cols, (c.strip() for c in row)))
            try:
                home = proj.to_xy(float(rec["home_lon"]), float(rec["home_lat"]))
                work = None
                if rec.get("work_lon") and rec.get("work_lat"):
                    work = proj.to_xy(float(rec["work_lon"]), float(rec["work_lat"]))
                prof = UserProfile(rec["user_id"], Gender.parse(rec["gender"]), int(rec["age"]), home, work,
                                   tuple(age_breaks))
            except (ValueError, KeyError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            out[prof.user_id] = prof
    return out


def write_profiles(path, profiles, proj: Projection | None = None):
    proj = proj or Projection()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_COLUMNS + PROFILE_OPTIONAL)
        for p in profiles:
            hl = proj.to_lonlat(*p.home)
            wl = proj.to_lonlat(*p.work) if p.work is not None else None
            w.writerow([p.user_id, p.gender.value, p.age, f"{hl[0]:.7f}", f"{hl[1]:.7f}",
                        f"{wl[0]:.7f}" if wl else "", f"{wl[1]:.7f}" if wl else ""])


def load_poi_mapping(path) -> dict[str, ActivityLabel]:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise DataError(f"{path}: POI mapping must be a JSON object")
    out = {}
    for cat, name in raw.items():
        if name is None or name == OTHER:
            continue
        out[cat] = ActivityLabel.parse(name)
    return out


def parse_pois(path, mapping: dict[str, ActivityLabel], proj: Projection | None = None) -> list[PoiRecord]:
    proj = proj or Projection()
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), POI_COLUMNS)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}: line {lineno}: expected 3 columns, got {len(row)}")
            try:
                lon, lat = float(row[0]), float(row[1])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            cat = row[2].strip()
            x, y = proj.to_xy(lon, lat)
            out.append(PoiRecord(x, y, cat, mapping.get(cat)))
    return out


def write_pois(path, pois, proj: Projection | None = None):
    proj = proj or Projection()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POI_COLUMNS)
        for p in pois:
            lon, lat = proj.to_lonlat(p.x, p.y)
            w.writerow([f"{lon:.7f}", f"{lat:.7f}", p.raw_category])


# -- cleaning ---------------------------------------------------------------------

@dataclass
class CleaningReport:
    total_points: int = 0
    discarded_points: dict = field(default_factory=lambda: {r: 0 for r in RULES})
    discarded_days: dict = field(default_factory=lambda: {r: 0 for r in RULES if r in DAY_RULES})
    points_kept: int = 0
    days_kept: int = 0
    users_kept: int = 0

    def reconciles(self) -> bool:
        return sum(self.discarded_points.values()) + self.points_kept == self.total_points

    def to_dict(self) -> dict:
        return {"total_points": self.total_points, "discarded_points": dict(self.discarded_points),
                "discarded_days": dict(self.discarded_days), "points_kept": self.points_kept,
                "days_kept": self.days_kept, "users_kept": self.users_kept}


def group_days(stops) -> dict[tuple[str, int], list[StopPoint]]:
    """Stops grouped by (user, start day), each group sorted by start time."""
    days = defaultdict(list)
    for s in stops:
        days[(s.user_id, day_of(s.t_start))].append(s)
    for v in days.values():
        v.sort(key=lambda s: (s.t_start, s.t_end))
    return dict(sorted(days.items()))


def _dist(s: StopPoint, xy) -> float:
    return math.hypot(s.x - xy[0], s.y - xy[1])


def _day_violation(day: list[StopPoint], prof: UserProfile | None) -> str | None:
    if prof is None:
        return RULE_NO_PROFILE
    first, last = day[0], day[-1]
    if first.label != ActivityLabel.Home or last.label != ActivityLabel.Home:
        return RULE_NOT_HOME_BOUNDED
    if _dist(first, prof.home) > HOME_RADIUS_M or _dist(last, prof.home) > HOME_RADIUS_M:
        return RULE_HOME_DISTANCE
    for s in day:
        if s.label is not None and s.label != ActivityLabel.Home and _dist(s, prof.home) < NEAR_HOME_M:
            return RULE_NEAR_HOME
    return None


def _point_violation(s: StopPoint, bbox: BoundingBox) -> str | None:
    if s.t_end <= s.t_start:
        return RULE_SWAPPED
    if s.t_end - s.t_start > MAX_DURATION_S:
        return RULE_TOO_LONG
    if not bbox.contains(s.lon, s.lat):
        return RULE_OUTSIDE
    return None


def clean(stops, profiles: dict[str, UserProfile], bbox: BoundingBox | None = None):
    """Apply the cleaning rules; returns (kept stops grouped by user-day, CleaningReport).

    Day-scoped rules run before point-scoped ones.  A day that loses points is
    re-checked against the day rules, so the result is a fixed point.
    """
    bbox = bbox or BoundingBox()
    report = CleaningReport(total_points=len(stops))
    kept_days = {}
    for key, day in group_days(stops).items():
        day = list(day)
        others = [s for s in day if s.is_other]
        report.discarded_points[RULE_OTHER] += len(others)
        day = [s for s in day if not s.is_other]
        while day:
            rule = _day_violation(day, profiles.get(key[0]))
            if rule is not None:
                report.discarded_days[rule] += 1
                report.discarded_points[rule] += len(day)
                day = []
                break
            survivors = []
            for s in day:
                rule = _point_violation(s, bbox)
                if rule is None:
                    survivors.append(s)
                else:
                    report.discarded_points[rule] += 1
            if len(survivors) == len(day):
                break
            day = survivors
        if day:
            kept_days[key] = day
    report.points_kept = sum(len(v) for v in kept_days.values())
    report.days_kept = len(kept_days)
    report.users_kept = len({u for u, _ in kept_days})
    if not report.reconciles():
        raise InvariantError("cleaning report does not reconcile")
    return kept_days, report


def flatten_days(days: dict) -> list[StopPoint]:
    return [s for _, v in sorted(days.items()) for s in v]


def label_histogram(stops) -> Counter:
    return Counter(s.label for s in stops if s.label is not None)

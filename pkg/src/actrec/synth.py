"""Synthetic city with a known generative model of daily activity diaries.

Every visit goes to a *place*; the visit's activity label is drawn from the
place type's label distribution independently of everything else.  The
Bayes-optimal classifier that knows each stop's place therefore scores
``max_l P(l | place type)`` in expectation per stop, which gives an exact
accuracy ceiling for the benchmark.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .domain import (
    LABEL_NAMES,
    ActivityLabel,
    Gender,
    PoiRecord,
    Projection,
    StopPoint,
    UserProfile,
    age_band,
    to_seconds,
)
from .ingest import write_pois, write_profiles, write_stops

PLACE_LABELS = {
    "home": {"Home": 1.0},
    "office": {"Work": 0.9, "WorkRelatedBusiness": 0.1},
    "school": {"Education": 0.9, "Social": 0.1},
    "transit": {"ChangeModeTransfer": 0.85, "PickUpDropOff": 0.15},
    "mall": {"Shopping": 0.6, "MealEatingBreak": 0.25, "Entertainment": 0.15},
    "food": {"MealEatingBreak": 0.85, "Social": 0.15},
    "clinic": {"MedicalDental": 0.8, "PersonalErrand": 0.2},
    "park": {"SportsExercise": 0.6, "Recreation": 0.4},
    "service": {"PersonalErrand": 0.8, "Shopping": 0.2},
    "friend": {"OthersHome": 0.65, "Social": 0.35},
    "childcare": {"PickUpDropOff": 0.55, "AccompanySomeone": 0.45},
}

PUBLIC_COUNTS = {"office": 25, "school": 8, "transit": 30, "mall": 15, "food": 40, "clinic": 12,
                 "park": 12, "service": 20, "childcare": 10}

POI_CATEGORIES = {
    "office": ["Office Building", "Business Centre"],
    "school": ["Primary School", "Secondary School", "Tuition Centre"],
    "transit": ["MRT Station", "Bus Interchange"],
    "mall": ["Shopping Mall", "Supermarket", "Cinema"],
    "food": ["Restaurant", "Cafe", "Hawker Centre"],
    "clinic": ["Clinic", "Dental Clinic", "Pharmacy"],
    "park": ["Gym", "Swimming Complex", "Park"],
    "service": ["Post Office", "Bank", "Hair Salon", "Laundry"],
    "childcare": ["Child Care"],
}
UNMAPPED_CATEGORIES = ["Car Park", "Religious", "Town Council", "Child Care"]

POI_MAPPING = {
    "Office Building": "WorkRelatedBusiness", "Business Centre": "WorkRelatedBusiness",
    "Primary School": "Education", "Secondary School": "Education", "Tuition Centre": "Education",
    "MRT Station": "ChangeModeTransfer", "Bus Interchange": "ChangeModeTransfer",
    "Shopping Mall": "Shopping", "Supermarket": "Shopping", "Cinema": "Entertainment",
    "Restaurant": "MealEatingBreak", "Cafe": "MealEatingBreak", "Hawker Centre": "MealEatingBreak",
    "Clinic": "MedicalDental", "Dental Clinic": "MedicalDental", "Pharmacy": "MedicalDental",
    "Gym": "SportsExercise", "Swimming Complex": "SportsExercise", "Park": "Recreation",
    "Post Office": "PersonalErrand", "Bank": "PersonalErrand", "Hair Salon": "PersonalErrand",
    "Laundry": "PersonalErrand", "Residential Building": "Home",
}

MAINTENANCE_TYPES = ["mall", "food", "clinic", "park", "service", "friend", "childcare"]
BASE_MIX = np.array([0.25, 0.25, 0.06, 0.12, 0.14, 0.12, 0.06])
MIX_FACTORS = {
    "female": [1.4, 1.0, 1.0, 0.7, 1.0, 1.0, 2.0],
    "male": [0.8, 1.2, 1.0, 1.5, 1.0, 1.0, 1.0],
    "student": [1.0, 1.3, 0.5, 1.0, 1.0, 1.5, 0.2],
    "worker": [1.0, 1.0, 1.0, 1.0, 1.2, 1.0, 1.0],
    "retiree": [1.0, 1.0, 3.0, 1.5, 1.0, 1.0, 1.5],
}

AGE_BAND_PROBS = [0.2, 0.35, 0.3, 0.15]
AGE_BAND_RANGES = [(18, 24), (25, 40), (41, 60), (61, 75)]
P_PROFILE_WORK = 0.6
P_LUNCH = 0.45
P_TRANSIT_AM = 0.7
P_TRANSIT_PM = 0.6
P_TRANSIT_LEISURE = 0.4
N_MAINT_COMMUTER = ([0, 1, 2], [0.35, 0.45, 0.20])
N_MAINT_FREE = ([1, 2, 3], [0.35, 0.40, 0.25])
FAVOURITE_WEIGHTS = [0.6, 0.3, 0.1]

DWELL_MIN = {  # (low, high) minutes
    "transit": (3, 12), "food": (40, 90), "lunch": (30, 60), "mall": (40, 120), "clinic": (30, 90),
    "park": (45, 120), "service": (10, 40), "friend": (60, 180), "childcare": (5, 20),
    "work_half": (150, 210), "work_full": (360, 480),
}
GAP_MIN = (10, 25)
JITTER_SD_M = 8.0
JITTER_MAX_M = 25.0
MIN_SEPARATION_M = 150.0
CITY_HALF_W = 12000.0
CITY_HALF_H = 8000.0
LATEST_END_H = 23.0


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 50
    days_per_user: int = 10
    stagger_days: int = 5
    start: date = date(2013, 3, 11)
    seed: int = 0
    n_noise_pois: int = 150
    n_unmapped_pois: int = 80


def role_of(age: int) -> str:
    if age < 25:
        return "student"
    if age <= 60:
        return "worker"
    return "retiree"


def maintenance_mix(gender: str, role: str) -> np.ndarray:
    w = BASE_MIX * np.array(MIX_FACTORS[gender]) * np.array(MIX_FACTORS[role])
    return w / w.sum()


def label_vector(place_type: str) -> np.ndarray:
    v = np.zeros(len(LABEL_NAMES))
    for name, p in PLACE_LABELS[place_type].items():
        v[ActivityLabel[name]] = p
    return v


def expected_visits(gender: str, role: str, weekend: bool) -> dict[str, float]:
    """Expected visits per place type for one user-day."""
    ev = dict.fromkeys(PLACE_LABELS, 0.0)
    ev["home"] = 2.0
    commuter = role in ("student", "worker") and not weekend
    if commuter:
        ev["transit"] += P_TRANSIT_AM + P_TRANSIT_PM
        ev["office" if role == "worker" else "school"] += 1.0 + P_LUNCH
        ev["food"] += P_LUNCH
        n_vals, n_p = N_MAINT_COMMUTER
    else:
        ev["transit"] += P_TRANSIT_LEISURE
        n_vals, n_p = N_MAINT_FREE
    n_exp = float(np.dot(n_vals, n_p))
    for t, w in zip(MAINTENANCE_TYPES, maintenance_mix(gender, role)):
        ev[t] += n_exp * w
    return ev


def expected_label_mixture(users: list[dict], day_types: list[list[bool]]) -> np.ndarray:
    """Analytic label distribution implied by the schedule parameters.

    ``users`` carry ``gender``/``role``; ``day_types[u]`` lists each of the
    user's days as weekend (True) or weekday (False).
    """
    num = np.zeros(len(LABEL_NAMES))
    den = 0.0
    for u, days in zip(users, day_types):
        for weekend in days:
            for t, c in expected_visits(u["gender"], u["role"], weekend).items():
                num += c * label_vector(t)
                den += c
    return num / den


def bayes_accuracy(place_types) -> float:
    """Mean over stops of max_l P(l | place type)."""
    if len(place_types) == 0:
        return float("nan")
    return float(np.mean([max(PLACE_LABELS[t].values()) for t in place_types]))


class _City:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.xy: list[tuple[float, float]] = []
        self.types: list[str] = []

    def _free_point(self) -> tuple[float, float]:
        for _ in range(10000):
            p = (self.rng.uniform(-CITY_HALF_W, CITY_HALF_W), self.rng.uniform(-CITY_HALF_H, CITY_HALF_H))
            if not self.xy:
                return p
            a = np.asarray(self.xy)
            if np.min(np.hypot(a[:, 0] - p[0], a[:, 1] - p[1])) >= MIN_SEPARATION_M:
                return p
        raise RuntimeError("synthetic city is too crowded")

    def add(self, kind: str) -> int:
        self.xy.append(self._free_point())
        self.types.append(kind)
        return len(self.xy) - 1

    def nearest(self, kind: str, xy, n: int) -> list[int]:
        ids = [i for i, t in enumerate(self.types) if t == kind]
        d = [math.hypot(self.xy[i][0] - xy[0], self.xy[i][1] - xy[1]) for i in ids]
        return [ids[j] for j in np.argsort(d, kind="stable")[:n]]


def _uniform_min(rng, key) -> float:
    lo, hi = DWELL_MIN[key]
    return rng.uniform(lo, hi)


def generate(cfg: SynthConfig):
    """Build the city and diaries; returns (stops, profiles, pois, truth dict)."""
    rng = np.random.default_rng(cfg.seed)
    proj = Projection()
    city = _City(rng)
    for kind, n in PUBLIC_COUNTS.items():
        for _ in range(n):
            city.add(kind)

    pois: list[PoiRecord] = []
    mapping = {k: ActivityLabel[v] for k, v in POI_MAPPING.items()}
    for pid, kind in enumerate(list(city.types)):
        cats = POI_CATEGORIES[kind]
        for _ in range(1 + rng.poisson(1.5)):
            cat = cats[rng.integers(len(cats))]
            r, a = rng.uniform(0, 25), rng.uniform(0, 2 * math.pi)
            x, y = city.xy[pid][0] + r * math.cos(a), city.xy[pid][1] + r * math.sin(a)
            pois.append(PoiRecord(x, y, cat, mapping.get(cat)))
    mapped_cats = sorted(c for c in POI_MAPPING if c != "Residential Building")
    for _ in range(cfg.n_noise_pois):
        cat = mapped_cats[rng.integers(len(mapped_cats))]
        pois.append(PoiRecord(rng.uniform(-CITY_HALF_W, CITY_HALF_W), rng.uniform(-CITY_HALF_H, CITY_HALF_H),
                              cat, mapping[cat]))
    for _ in range(cfg.n_unmapped_pois):
        cat = UNMAPPED_CATEGORIES[rng.integers(len(UNMAPPED_CATEGORIES))]
        pois.append(PoiRecord(rng.uniform(-CITY_HALF_W, CITY_HALF_W), rng.uniform(-CITY_HALF_H, CITY_HALF_H),
                              cat, mapping.get(cat)))

    users, profiles = [], []
    for u in range(cfg.n_users):
        uid = f"u{u:03d}"
        band = rng.choice(len(AGE_BAND_PROBS), p=AGE_BAND_PROBS)
        age = int(rng.integers(AGE_BAND_RANGES[band][0], AGE_BAND_RANGES[band][1] + 1))
        gender = "female" if rng.random() < 0.5 else "male"
        role = role_of(age)
        home = city.add("home")
        friends = [city.add("friend") for _ in range(2)]
        hxy = city.xy[home]
        work = None
        if role != "retiree":
            kind = "office" if role == "worker" else "school"
            ids = [i for i, t in enumerate(city.types) if t == kind]
            work = ids[rng.integers(len(ids))]
        fav = {t: city.nearest(t, hxy, 3) for t in MAINTENANCE_TYPES if t != "friend"}
        fav["friend"] = friends
        lunch = city.nearest("food", city.xy[work], 3) if work is not None else []
        transit_home = city.nearest("transit", hxy, 1)[0]
        transit_work = city.nearest("transit", city.xy[work], 1)[0] if work is not None else transit_home
        show_work = work is not None and rng.random() < P_PROFILE_WORK
        offset = int(rng.integers(0, cfg.stagger_days + 1))
        users.append(dict(user_id=uid, age=age, gender=gender, role=role, home=home, work=work,
                          friends=friends, favourites=fav, lunch=lunch, transit_home=transit_home,
                          transit_work=transit_work, offset=offset))
        profiles.append(UserProfile(uid, Gender(gender), age, hxy, city.xy[work] if show_work else None))

    stops: list[StopPoint] = []
    stop_places: list[int] = []
    day_types: list[list[bool]] = []
    for u in users:
        flags = []
        for k in range(cfg.days_per_user):
            day = cfg.start + timedelta(days=u["offset"] + k)
            weekend = day.weekday() >= 5
            flags.append(weekend)
            visits = _day_plan(rng, u, weekend, city)
            for place, s, e in _schedule(rng, visits, day):
                stops.append(_observe(rng, proj, city, u["user_id"], place, s, e))
                stop_places.append(place)
        day_types.append(flags)

    truth = {
        "config": {"n_users": cfg.n_users, "days_per_user": cfg.days_per_user, "stagger_days": cfg.stagger_days,
                   "start": cfg.start.isoformat(), "seed": cfg.seed},
        "place_labels": PLACE_LABELS,
        "maintenance_types": MAINTENANCE_TYPES,
        "maintenance_mix": {f"{g}/{r}": maintenance_mix(g, r).tolist()
                            for g in ("female", "male") for r in ("student", "worker", "retiree")},
        "schedule": {"p_lunch": P_LUNCH, "p_transit_am": P_TRANSIT_AM, "p_transit_pm": P_TRANSIT_PM,
                     "p_transit_leisure": P_TRANSIT_LEISURE, "n_maint_commuter": N_MAINT_COMMUTER,
                     "n_maint_free": N_MAINT_FREE},
        "places": [{"id": i, "type": t, "x": round(xy[0], 3), "y": round(xy[1], 3)}
                   for i, (t, xy) in enumerate(zip(city.types, city.xy))],
        "users": [{"user_id": u["user_id"], "age": u["age"], "age_group": age_band(u["age"]),
                   "gender": u["gender"], "role": u["role"], "offset": u["offset"]} for u in users],
        "stop_place_types": [city.types[p] for p in stop_places],
        "stop_keys": [[s.user_id, s.t_start] for s in stops],
        "expected_label_mixture": dict(zip(LABEL_NAMES, expected_label_mixture(users, day_types).tolist())),
        "bayes_rate": bayes_accuracy([city.types[p] for p in stop_places]),
    }
    return stops, profiles, pois, truth


def _pick(rng, options: list[int]) -> int:
    w = np.array(FAVOURITE_WEIGHTS[:len(options)])
    return options[rng.choice(len(options), p=w / w.sum())]


def _day_plan(rng, u: dict, weekend: bool, city: _City) -> list[tuple[int, str]]:
    """Ordered (place id, dwell kind) visits between the two Home stops."""
    plan = []
    commuter = u["role"] in ("student", "worker") and not weekend
    mix = maintenance_mix(u["gender"], u["role"])
    if commuter:
        if rng.random() < P_TRANSIT_AM:
            plan.append((u["transit_home"], "transit"))
        if rng.random() < P_LUNCH:
            plan += [(u["work"], "work_half"), (_pick(rng, u["lunch"]), "lunch"), (u["work"], "work_half")]
        else:
            plan.append((u["work"], "work_full"))
        if rng.random() < P_TRANSIT_PM:
            plan.append((u["transit_work"], "transit"))
        n_vals, n_p = N_MAINT_COMMUTER
    else:
        if rng.random() < P_TRANSIT_LEISURE:
            plan.append((u["transit_home"], "transit"))
        n_vals, n_p = N_MAINT_FREE
    n = int(rng.choice(n_vals, p=n_p))
    for _ in range(n):
        t = MAINTENANCE_TYPES[rng.choice(len(MAINTENANCE_TYPES), p=mix)]
        plan.append((_pick(rng, u["favourites"][t]), t))
    return [(u["home"], "home")] + plan + [(u["home"], "home")]


def _schedule(rng, visits, day: date):
    """Assign times; the day runs from 00:00:00 to 23:59:59 at Home."""
    midnight = datetime(day.year, day.month, day.day)
    weekend = day.weekday() >= 5
    depart = rng.uniform(8.5, 10.5) if weekend else min(max(rng.normal(7.5, 0.4), 6.5), 8.5)
    inner = visits[1:-1]
    gaps = [rng.uniform(*GAP_MIN) for _ in range(len(inner) + 1)]
    dwell = [_uniform_min(rng, kind) for _, kind in inner]
    budget = (LATEST_END_H - depart) * 60.0
    used = sum(gaps) + sum(dwell)
    if used > budget:
        f = budget / used
        gaps = [g * f for g in gaps]
        dwell = [d * f for d in dwell]
    out = []
    t = depart * 60.0
    out.append((visits[0][0], 0.0, t))
    for (place, _), g, d in zip(inner, gaps, dwell):
        t += g
        out.append((place, t, t + d))
        t += d
    t += gaps[-1]
    out.append((visits[-1][0], t, 24 * 60.0 - 1 / 60.0))
    return [(p, midnight + timedelta(seconds=round(a * 60)), midnight + timedelta(seconds=round(b * 60)))
            for p, a, b in out]


def _observe(rng, proj: Projection, city: _City, uid: str, place: int, start: datetime, end: datetime) -> StopPoint:
    r = min(abs(rng.normal(0.0, JITTER_SD_M)) * math.sqrt(2), JITTER_MAX_M)
    a = rng.uniform(0, 2 * math.pi)
    x = city.xy[place][0] + r * math.cos(a)
    y = city.xy[place][1] + r * math.sin(a)
    lon, lat = proj.to_lonlat(x, y)
    label = ActivityLabel[_draw_label(rng, city.types[place])]
    return StopPoint(uid, x, y, to_seconds(start), to_seconds(end), label, lon, lat)


def _draw_label(rng, place_type: str) -> str:
    names = list(PLACE_LABELS[place_type])
    p = np.array([PLACE_LABELS[place_type][n] for n in names])
    return names[rng.choice(len(names), p=p / p.sum())]


def write_dataset(out_dir, stops, profiles, pois, truth):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_stops(out / "stops.csv", stops)
    write_profiles(out / "profiles.csv", profiles)
    write_pois(out / "pois.csv", pois)
    with open(out / "poi_mapping.json", "w") as fh:
        json.dump(POI_MAPPING, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "truth.json", "w") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out

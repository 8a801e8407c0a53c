"""Empirical-probability statistics and the 6L+3 feature vector.

Statistics are built from the labelled training stops of one user population.
Feature rows for those same training stops are computed leave-one-out: the
stop's own contribution is removed from every table it fed, so a training row
looks like a query the model will meet at prediction time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .domain import (
    N_LABELS,
    SECONDS_PER_DAY,
    ActivityPoint,
    DayType,
    InvariantError,
    StopPoint,
    day_type_of_index,
)
from .quantize import CircularQuantizer, ball_members, slot_range

L = N_LABELS
N_FEATURES = 6 * L + 3
BLOCKS = {
    "temporal": slice(0, L),
    "spatial": slice(L, 2 * L),
    "contextual": slice(2 * L, 3 * L),
    "transition": slice(3 * L, 4 * L),
    "historical_confidence": slice(4 * L, 5 * L),
    "contextual_confidence": slice(5 * L, 6 * L),
    "core_distances": slice(6 * L, 6 * L + 2),
    "duration": slice(6 * L + 2, 6 * L + 3),
}
PROBABILITY_BLOCKS = ("temporal", "spatial", "contextual", "transition")
PREV_WINDOW_S = 24 * 3600


def feature_names() -> list[str]:
    from .domain import LABEL_NAMES

    names = []
    for block in list(BLOCKS)[:6]:
        names += [f"{block}:{n}" for n in LABEL_NAMES]
    return names + ["dist_home_km", "dist_work_km", "duration_h"]


# -- columnar stop storage ----------------------------------------------------

@dataclass
class StopArrays:
    user: np.ndarray
    x: np.ndarray
    y: np.ndarray
    t_start: np.ndarray
    t_end: np.ndarray
    label: np.ndarray  # -1 when unknown

    @classmethod
    def from_stops(cls, stops: list[StopPoint], with_labels: bool = True) -> "StopArrays":
        return cls(
            user=np.array([s.user_id for s in stops], dtype=object),
            x=np.array([s.x for s in stops], dtype=float),
            y=np.array([s.y for s in stops], dtype=float),
            t_start=np.array([s.t_start for s in stops], dtype=np.int64),
            t_end=np.array([s.t_end for s in stops], dtype=np.int64),
            label=np.array([int(s.label) if (with_labels and s.label is not None) else -1 for s in stops],
                           dtype=np.int64),
        )

    @classmethod
    def empty(cls) -> "StopArrays":
        return cls(np.zeros(0, dtype=object), np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64),
                   np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.x)

    def take(self, idx) -> "StopArrays":
        idx = np.asarray(idx, dtype=np.int64)
        return StopArrays(self.user[idx], self.x[idx], self.y[idx], self.t_start[idx], self.t_end[idx],
                          self.label[idx])

    @classmethod
    def concat(cls, parts) -> "StopArrays":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("user", "x", "y", "t_start", "t_end", "label")))

    def without_labels(self) -> "StopArrays":
        return StopArrays(self.user, self.x, self.y, self.t_start, self.t_end, np.full(len(self), -1, np.int64))

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    @property
    def day(self) -> np.ndarray:
        return self.t_start // SECONDS_PER_DAY

    def sorted_order(self) -> np.ndarray:
        """Stable order by (user, t_start)."""
        return np.array(sorted(range(len(self)), key=lambda i: (self.user[i], self.t_start[i], self.t_end[i])),
                        dtype=np.int64)

    def to_dict(self) -> dict:
        return {"user": [str(u) for u in self.user], "x": self.x.tolist(), "y": self.y.tolist(),
                "t_start": self.t_start.tolist(), "t_end": self.t_end.tolist(), "label": self.label.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StopArrays":
        return cls(np.array(d["user"], dtype=object), np.array(d["x"], dtype=float), np.array(d["y"], dtype=float),
                   np.array(d["t_start"], dtype=np.int64), np.array(d["t_end"], dtype=np.int64),
                   np.array(d["label"], dtype=np.int64))


@dataclass
class SequenceContext:
    """Per-stop neighbours in the owning user's time-ordered history."""

    prev_label: np.ndarray  # label of the previous stop within 24 h, else -1
    prev_in_day: np.ndarray  # True when the previous stop shares the same user-day
    next_label_in_day: np.ndarray  # label of the next stop of the same user-day, else -1


def sequence_context(stops: StopArrays) -> SequenceContext:
    n = len(stops)
    prev = np.full(n, -1, dtype=np.int64)
    prev_in_day = np.zeros(n, dtype=bool)
    nxt = np.full(n, -1, dtype=np.int64)
    order = stops.sorted_order()
    day = stops.day
    for a, b in zip(order[:-1], order[1:]):
        if stops.user[a] != stops.user[b]:
            continue
        if stops.t_start[b] - stops.t_end[a] <= PREV_WINDOW_S:
            prev[b] = stops.label[a]
        if day[a] == day[b]:
            prev_in_day[b] = True
            nxt[a] = stops.label[b]
    return SequenceContext(prev, prev_in_day, nxt)


def temporal_keys(t_start: int, t_end: int, slot_minutes: int) -> np.ndarray:
    """Time-of-day slot keys tagged with day type: ``day_type * slots_per_day + slot``."""
    lo, hi = slot_range(t_start, t_end, slot_minutes)
    per_day = 1440 // slot_minutes
    s = np.arange(lo, hi + 1, dtype=np.int64)
    days = s // per_day
    weekend = ((days + 3) % 7 >= 5).astype(np.int64)
    return np.unique(weekend * per_day + s % per_day)


def slot_keys(slots, calendar=None) -> np.ndarray:
    """Keys for explicit TimeSlot objects (calendar optional, used for range checks)."""
    keys = set()
    for s in slots:
        dt = calendar.day_type(s) if calendar is not None else day_type_of_index(s.day_index)
        keys.add(dt.value * (1440 // s.width_minutes) + s.slot_index)
    return np.array(sorted(keys), dtype=np.int64)


def _normalise(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    if total <= 0:
        return np.zeros(L)
    return counts / total


# -- public single-query operations --------------------------------------------

class FrequencyTable:
    """Per-bin label counts; probabilities are derived by row normalisation."""

    def __init__(self, kind: str, counts: dict | None = None):
        self.kind = kind
        self.counts: dict = counts if counts is not None else {}

    @classmethod
    def from_labels(cls, kind: str, bins, labels) -> "FrequencyTable":
        t = cls(kind)
        for b, a in zip(bins, labels):
            if a < 0:
                continue
            row = t.counts.setdefault(b, np.zeros(L, dtype=np.int64))
            row[a] += 1
        return t

    def row(self, bin_id) -> np.ndarray:
        return self.counts.get(bin_id, np.zeros(L, dtype=np.int64))

    def probabilities(self, bin_id) -> np.ndarray:
        return _normalise(self.row(bin_id).astype(float))


def spatial_frequency(table: FrequencyTable, cell_id) -> np.ndarray:
    return table.probabilities(cell_id)


def temporal_frequency(training: list[ActivityPoint], query_slots, calendar=None) -> np.ndarray:
    """Label frequency weighted by the number of time-of-day slots shared with the query."""
    q = slot_keys(query_slots, calendar)
    counts = np.zeros(L)
    for ap in training:
        if ap.label is None:
            continue
        counts[int(ap.label)] += len(np.intersect1d(slot_keys(ap.slots, calendar), q))
    return _normalise(counts)


def contextual_frequency(poi_labels) -> np.ndarray:
    labels = [int(a) for a in poi_labels if a is not None and int(a) >= 0]
    return _normalise(np.bincount(np.asarray(labels, dtype=np.int64), minlength=L).astype(float))


def phi(d):
    return 1.0 / (1.0 + np.asarray(d, dtype=float) ** 2)


def diameter(xy: np.ndarray) -> tuple[float, int, int]:
    """Largest pairwise distance and one pair of indices attaining it."""
    m = len(xy)
    if m < 2:
        return 0.0, 0, 0
    if m > 1500:
        try:
            hull = ConvexHull(xy).vertices
        except QhullError:
            hull = None
        if hull is not None:
            D, a, b = diameter(xy[hull])
            return D, int(hull[a]), int(hull[b])
        best = (-1.0, 0, 0)
        for s in range(0, m, 512):
            d2 = ((xy[s:s + 512, None, :] - xy[None, :, :]) ** 2).sum(axis=2)
            k = int(np.argmax(d2))
            i, j = divmod(k, m)
            if d2[i, j] > best[0]:
                best = (float(d2[i, j]), s + i, j)
        return float(np.sqrt(best[0])), best[1], best[2]
    d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2)
    k = int(np.argmax(d2))
    a, b = divmod(k, m)
    return float(np.sqrt(d2[a, b])), a, b


def neighbor_confidence(p, cand_xy, cand_labels, scale: float | None = None) -> np.ndarray:
    """phi of the normalised distance from ``p`` to the nearest candidate of each label.

    Distances are divided by ``scale`` (default: the candidates' diameter) and
    clipped to 1; labels without a candidate get confidence 0.
    """
    cand_xy = np.asarray(cand_xy, dtype=float).reshape(-1, 2)
    cand_labels = np.asarray(cand_labels, dtype=np.int64)
    out = np.zeros(L)
    if len(cand_xy) == 0:
        return out
    if scale is None:
        scale = diameter(cand_xy)[0]
    d = np.hypot(cand_xy[:, 0] - p[0], cand_xy[:, 1] - p[1])
    dn = np.minimum(d / scale, 1.0) if scale > 0 else np.zeros_like(d)
    order = np.argsort(dn, kind="stable")
    labs, first = np.unique(cand_labels[order], return_index=True)
    keep = labs >= 0
    out[labs[keep]] = phi(dn[order][first[keep]])
    return out


@dataclass
class TransitionMatrices:
    counts: np.ndarray  # (2, L, L): day type x previous x current

    @classmethod
    def empty(cls) -> "TransitionMatrices":
        return cls(np.zeros((2, L, L), dtype=np.int64))

    def probabilities(self, day_type: DayType) -> np.ndarray:
        c = self.counts[day_type.value].astype(float)
        tot = c.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(tot > 0, c / np.where(tot > 0, tot, 1), 1.0 / L)
        return p

    def row(self, prev: int, day_type: DayType) -> np.ndarray:
        return _normalise_or_uniform(self.counts[day_type.value, prev].astype(float))


def _normalise_or_uniform(c: np.ndarray) -> np.ndarray:
    tot = c.sum()
    if tot <= 0:
        return np.full(L, 1.0 / L)
    return c / tot


def build_transitions(day_sequences) -> TransitionMatrices:
    """Count consecutive label pairs per (day type, user-day) sequence."""
    tm = TransitionMatrices.empty()
    for dt, labels in day_sequences:
        labels = [int(a) for a in labels]
        for s, l in zip(labels[:-1], labels[1:]):
            if s >= 0 and l >= 0:
                tm.counts[dt.value, s, l] += 1
    return tm


def transition_feature(matrices: TransitionMatrices, previous, day_type: DayType) -> np.ndarray:
    if previous is None or int(previous) < 0:
        return np.full(L, 1.0 / L)
    return matrices.row(int(previous), day_type)


def core_distances(p, home, work, sentinel_km: float) -> np.ndarray:
    dh = np.hypot(p[0] - home[0], p[1] - home[1]) / 1000.0
    dw = sentinel_km if work is None else np.hypot(p[0] - work[0], p[1] - work[1]) / 1000.0
    return np.array([dh, dw])


def assemble(blocks: dict) -> np.ndarray:
    """Concatenate named blocks in canonical order into one feature vector."""
    parts = []
    for name, sl in BLOCKS.items():
        v = np.atleast_1d(np.asarray(blocks[name], dtype=float))
        if len(v) != sl.stop - sl.start:
            raise InvariantError(f"feature block {name!r} has length {len(v)}, expected {sl.stop - sl.start}")
        parts.append(v)
    x = np.concatenate(parts)
    if len(x) != N_FEATURES:
        raise InvariantError(f"feature vector length {len(x)} != {N_FEATURES}")
    return x


# -- spatial point indexes -----------------------------------------------------

class CellIndex:
    """Labelled points grouped by the quantizer's cells (or radius balls)."""

    def __init__(self, xy: np.ndarray, labels: np.ndarray, quantizer):
        self.xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.quantizer = quantizer
        self.circular = isinstance(quantizer, CircularQuantizer)
        if self.circular:
            self._tree = cKDTree(self.xy) if len(self.xy) else None
            return
        self.point_cells = cell_keys(quantizer, self.xy[:, 0], self.xy[:, 1])
        groups: dict = {}
        for i, c in enumerate(self.point_cells):
            groups.setdefault(c, []).append(i)
        self.members_of = {c: np.array(v, dtype=np.int64) for c, v in groups.items()}
        self.table = FrequencyTable.from_labels("cell", self.point_cells, self.labels)
        self._diam: dict = {}

    def cell_diameter(self, cell) -> tuple[float, int, int]:
        if cell not in self._diam:
            m = self.members_of[cell]
            D, a, b = diameter(self.xy[m])
            self._diam[cell] = (D, int(m[a]), int(m[b]))
        return self._diam[cell]

    def query_members(self, qx: np.ndarray, qy: np.ndarray) -> list:
        """Per query: (member indices, cell key or None)."""
        if self.circular:
            if self._tree is None:
                return [(np.zeros(0, dtype=np.int64), None)] * len(qx)
            ms = ball_members(self._tree, self.xy, np.column_stack([qx, qy]), self.quantizer.radius)
            return [(m, None) for m in ms]
        keys = cell_keys(self.quantizer, qx, qy)
        empty = np.zeros(0, dtype=np.int64)
        return [(self.members_of.get(k, empty), k) for k in keys]

    def stats(self, p, members: np.ndarray, cell, exclude: int = -1) -> tuple[np.ndarray, np.ndarray]:
        """(label counts, neighbour confidence) for one query, optionally leaving one point out."""
        if exclude >= 0 and len(members):
            members = members[members != exclude]
        if len(members) == 0:
            return np.zeros(L), np.zeros(L)
        counts = np.bincount(self.labels[members], minlength=L).astype(float)
        if cell is not None and len(members) > 1:
            D, a, b = self.cell_diameter(cell)
            if exclude in (a, b):
                D = diameter(self.xy[members])[0]
        else:
            D = diameter(self.xy[members])[0]
        conf = neighbor_confidence(p, self.xy[members], self.labels[members], scale=D)
        return counts, conf


def cell_keys(quantizer, x, y) -> list:
    c = quantizer.cells(np.asarray(x, float), np.asarray(y, float))
    if c.ndim == 2:
        return [(int(a), int(b)) for a, b in c]
    return [int(a) for a in c]


class PoiIndex(CellIndex):
    """Mapped POIs only; unmapped categories never reach the features."""

    @classmethod
    def from_records(cls, pois, quantizer) -> "PoiIndex":
        kept = [p for p in pois if p.mapped_label is not None]
        xy = np.array([(p.x, p.y) for p in kept], dtype=float).reshape(-1, 2)
        labels = np.array([int(p.mapped_label) for p in kept], dtype=np.int64)
        return cls(xy, labels, quantizer)


# -- population statistics -------------------------------------------------------

class PopulationStats:
    """Every statistic provider for one user population, plus vector assembly."""

    def __init__(self, train: StopArrays, poi_index: PoiIndex, quantizer, slot_minutes: int,
                 homes: dict, works: dict, sentinel_km: float):
        if np.any(train.label < 0):
            raise InvariantError("population statistics need labelled stops")
        self.train = train
        self.poi_index = poi_index
        self.quantizer = quantizer
        self.slot_minutes = slot_minutes
        self.homes = homes
        self.works = works
        self.sentinel_km = sentinel_km
        self.per_day = 1440 // slot_minutes

        self.hist_index = CellIndex(train.xy, train.label, quantizer)
        self.train_keys = [temporal_keys(a, b, slot_minutes) for a, b in zip(train.t_start, train.t_end)]
        self.temporal_counts = np.zeros((2 * self.per_day, L), dtype=np.int64)
        for k, a in zip(self.train_keys, train.label):
            self.temporal_counts[k, a] += 1
        self.context = sequence_context(train)
        day = train.day
        self.transitions = TransitionMatrices.empty()
        for i in range(len(train)):
            if self.context.prev_in_day[i] and self.context.prev_label[i] >= 0:
                dt = day_type_of_index(day[i]).value
                self.transitions.counts[dt, self.context.prev_label[i], train.label[i]] += 1

    def training_features(self) -> np.ndarray:
        """Leave-one-out feature rows for the population's own training stops."""
        ctx = self.context
        return self._features(self.train, ctx.prev_label, loo=True)

    def query_features(self, stops: StopArrays, prev_label: np.ndarray) -> np.ndarray:
        return self._features(stops, np.asarray(prev_label, dtype=np.int64), loo=False)

    def _features(self, q: StopArrays, prev_label: np.ndarray, loo: bool) -> np.ndarray:
        n = len(q)
        X = np.empty((n, N_FEATURES))
        hist = self.hist_index.query_members(q.x, q.y)
        poi = self.poi_index.query_members(q.x, q.y)
        qday = q.day
        for i in range(n):
            p = (q.x[i], q.y[i])
            own = int(q.label[i]) if loo else -1
            keys = self.train_keys[i] if loo else temporal_keys(q.t_start[i], q.t_end[i], self.slot_minutes)
            t_counts = self.temporal_counts[keys].sum(axis=0).astype(float)
            if loo:
                t_counts[own] -= len(keys)
            h_counts, h_conf = self.hist_index.stats(p, hist[i][0], hist[i][1], exclude=i if loo else -1)
            c_counts, c_conf = self.poi_index.stats(p, poi[i][0], poi[i][1])
            dt = day_type_of_index(qday[i])
            trans = self._transition_row(i, int(prev_label[i]), dt, loo)
            user = q.user[i]
            X[i] = assemble({
                "temporal": _normalise(t_counts),
                "spatial": _normalise(h_counts),
                "contextual": _normalise(c_counts),
                "transition": trans,
                "historical_confidence": h_conf,
                "contextual_confidence": c_conf,
                "core_distances": core_distances(p, self.homes[user], self.works.get(user), self.sentinel_km),
                "duration": (q.t_end[i] - q.t_start[i]) / 3600.0,
            })
        return X

    def _transition_row(self, i: int, prev: int, dt: DayType, loo: bool) -> np.ndarray:
        if prev < 0:
            return np.full(L, 1.0 / L)
        c = self.transitions.counts[dt.value, prev].astype(float)
        if loo:
            own = int(self.train.label[i])
            if self.context.prev_in_day[i]:
                c[own] -= 1
            nxt = int(self.context.next_label_in_day[i])
            if own == prev and nxt >= 0:
                c[nxt] -= 1
        return _normalise_or_uniform(c)

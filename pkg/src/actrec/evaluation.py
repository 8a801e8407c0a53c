"""Chronological k-day evaluation, streaming day-by-day evaluation and confusion matrices."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import FUSIONS, RunConfig, grid_configs
from .domain import COARSE_INDEX, LABEL_NAMES, N_LABELS, CoarseActivity, DataError, InvariantError
from .features import PREV_WINDOW_S, StopArrays
from .fusion import KINDS, FusionModel

log = logging.getLogger(__name__)

L = N_LABELS
COARSE_NAMES = [c.name for c in CoarseActivity]
METHODS = KINDS + FUSIONS
_COARSE = np.array(COARSE_INDEX, dtype=np.int64)


def collapse(labels) -> np.ndarray:
    """Vectorised 16 -> 4 class collapse; negative entries (no decision) stay negative."""
    labels = np.asarray(labels, dtype=np.int64)
    return np.where(labels >= 0, _COARSE[np.clip(labels, 0, L - 1)], -1)


def user_days(stops: StopArrays) -> dict[str, list[int]]:
    """Sorted distinct calendar days per user."""
    out: dict[str, set] = {}
    for u, d in zip(stops.user, stops.day):
        out.setdefault(u, set()).add(int(d))
    return {u: sorted(v) for u, v in sorted(out.items())}


# -- chronological split ---------------------------------------------------------

@dataclass
class ChronoSplit:
    k: int
    train_rows: np.ndarray
    test_rows: np.ndarray
    users: list[str]
    excluded: list[str]
    test_day: dict[str, int] = field(default_factory=dict)


def chrono_split(stops: StopArrays, k: int) -> ChronoSplit:
    """First ``k`` days of each user train, the next day tests; users with fewer days are excluded."""
    if int(k) < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    days = user_days(stops)
    train_days, test_day, excluded = {}, {}, []
    for u, ds in days.items():
        if len(ds) < k + 1:
            excluded.append(u)
            continue
        train_days[u] = set(ds[:k])
        test_day[u] = ds[k]
    day = stops.day
    train, test = [], []
    for i, (u, d) in enumerate(zip(stops.user, day)):
        if u in train_days:
            if d in train_days[u]:
                train.append(i)
            elif d == test_day[u]:
                test.append(i)
    if excluded:
        log.warning("k=%d: %d user(s) have fewer than %d days and are excluded", k, len(excluded), k + 1)
    return ChronoSplit(int(k), np.array(train, dtype=np.int64), np.array(test, dtype=np.int64),
                       sorted(train_days), excluded, test_day)


# -- confusion matrices ----------------------------------------------------------

@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # truth x predicted
    names: list[str]

    @classmethod
    def from_labels(cls, truth, pred, names) -> "ConfusionMatrix":
        n = len(names)
        m = np.zeros((n, n), dtype=np.int64)
        np.add.at(m, (np.asarray(truth, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
        return cls(m, list(names))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else float("nan")

    def per_class(self) -> list[float | None]:
        rows = self.counts.sum(axis=1)
        return [float(self.counts[i, i] / r) if r else None for i, r in enumerate(rows)]

    def to_dict(self) -> dict:
        return {"names": self.names, "counts": self.counts.tolist(), "accuracy": self.accuracy,
                "per_class": self.per_class()}

    def to_text(self) -> str:
        width = max(len(n) for n in self.names) + 1
        head = " " * width + "".join(f"{i:>6d}" for i in range(len(self.names))) + "   acc"
        lines = [head]
        for i, (name, acc) in enumerate(zip(self.names, self.per_class())):
            cells = "".join(f"{v:>6d}" for v in self.counts[i])
            lines.append(f"{name:<{width}}{cells}  {'-' if acc is None else f'{100 * acc:5.1f}'}")
        lines.append(f"overall accuracy {100 * self.accuracy:.2f}% over {self.total} stops")
        return "\n".join(lines)


# -- prediction with sequential context --------------------------------------------

def previous_links(history: StopArrays, query: StopArrays) -> tuple[np.ndarray, np.ndarray]:
    """For each query stop, where its previous stop (same user, within 24 h) lives.

    Returns (source, index): source 0 = none, 1 = history row, 2 = query row.
    """
    nh = len(history)
    both = StopArrays.concat([history, query])
    src = np.zeros(len(query), dtype=np.int64)
    idx = np.full(len(query), -1, dtype=np.int64)
    order = both.sorted_order()
    for a, b in zip(order[:-1], order[1:]):
        if b < nh or both.user[a] != both.user[b]:
            continue
        if both.t_start[b] - both.t_end[a] <= PREV_WINDOW_S:
            src[b - nh], idx[b - nh] = (1, a) if a < nh else (2, a - nh)
    return src, idx


def predict_in_context(model: FusionModel, query: StopArrays, history: StopArrays | None = None,
                       strategies=None, context: str | None = None) -> tuple[dict, dict]:
    """Predict ``query`` stops in timestamp order.

    The previous-activity context of a stop is the true label of a known history
    stop, or the ``context`` strategy's own prediction for an earlier query stop.
    Query labels are never read.
    """
    history = history if history is not None else StopArrays.empty()
    strategies = list(strategies or [model.config.fusion])
    context = context or strategies[0]
    query = query.without_labels()
    n = len(query)
    src, idx = previous_links(history, query)
    depth = np.zeros(n, dtype=np.int64)
    for i in query.sorted_order():  # a predecessor always precedes in this order
        if src[i] == 2:
            depth[i] = depth[idx[i]] + 1
    prev = np.full(n, -1, dtype=np.int64)
    prev[src == 1] = history.label[idx[src == 1]]
    preds = {m: np.full(n, -1, dtype=np.int64) for m in KINDS + tuple(strategies)}
    scores = {k: np.full((n, L), np.nan) for k in KINDS}
    for r in range(int(depth.max()) + 1 if n else 0):
        rows = np.flatnonzero(depth == r)
        chained = rows[src[rows] == 2]
        prev[chained] = preds[context][idx[chained]]
        out = model.predict(query.take(rows), prev[rows], strategies)
        for m in preds:
            preds[m][rows] = out[m]
        for k, s in out["_scores"].items():
            scores[k][rows] = s
    return preds, {k: v for k, v in scores.items() if not np.all(np.isnan(v))}


# -- chronological evaluation ----------------------------------------------------

@dataclass
class MethodResult:
    method: str
    n: int
    coverage: float
    acc16: float
    acc4: float


@dataclass
class EvalReport:
    k: int
    n_train: int
    n_test: int
    users: int
    excluded: list[str]
    methods: list[MethodResult]
    majority_label: str
    majority_accuracy: float
    confusion16: ConfusionMatrix
    confusion4: ConfusionMatrix
    fusion: str
    bayes_rate: float | None = None

    def accuracy(self, method: str) -> float:
        return next(m.acc16 for m in self.methods if m.method == method)

    def to_dict(self) -> dict:
        return {
            "k": self.k, "n_train": self.n_train, "n_test": self.n_test, "users": self.users,
            "excluded_users": self.excluded,
            "methods": [vars(m) for m in self.methods],
            "majority_label": self.majority_label, "majority_accuracy": self.majority_accuracy,
            "bayes_rate": self.bayes_rate, "fusion": self.fusion,
            "confusion16": self.confusion16.to_dict(), "confusion4": self.confusion4.to_dict(),
        }

    def to_text(self) -> str:
        lines = [f"k={self.k} training days: {self.users} users, {self.n_train} training / {self.n_test} test stops",
                 f"{'method':<16}{'16-class':>10}{'4-class':>10}{'coverage':>10}"]
        for m in self.methods:
            lines.append(f"{m.method:<16}{100 * m.acc16:>9.2f}%{100 * m.acc4:>9.2f}%{100 * m.coverage:>9.1f}%")
        lines.append(f"{'majority':<16}{100 * self.majority_accuracy:>9.2f}%   ({self.majority_label})")
        if self.bayes_rate is not None:
            lines.append(f"{'bayes rate':<16}{100 * self.bayes_rate:>9.2f}%")
        lines += ["", f"confusion matrix ({self.fusion}, 16 classes)", self.confusion16.to_text(),
                  "", f"confusion matrix ({self.fusion}, 4 classes)", self.confusion4.to_text()]
        return "\n".join(lines)


def score_methods(truth: np.ndarray, preds: dict) -> list[MethodResult]:
    """Accuracy of each method over the stops it produced a decision for.

    The 4-class figure collapses truth and prediction of the same decisions;
    it can never fall below the 16-class figure, which is checked here.
    """
    out = []
    for m in METHODS:
        if m not in preds:
            continue
        p = preds[m]
        ok = p >= 0
        n = int(ok.sum())
        if n == 0:
            out.append(MethodResult(m, 0, 0.0, float("nan"), float("nan")))
            continue
        a16 = float(np.mean(p[ok] == truth[ok]))
        a4 = float(np.mean(collapse(p[ok]) == collapse(truth[ok])))
        if a4 < a16:
            raise InvariantError(f"{m}: 4-class accuracy {a4} below 16-class accuracy {a16}")
        out.append(MethodResult(m, n, n / len(truth), a16, a4))
    return out


def evaluate(stops: StopArrays, split: ChronoSplit, profiles, pois, cfg: RunConfig,
             bayes_rate: float | None = None, strategies=FUSIONS) -> EvalReport:
    """Train on the split's training stops and score every method on its test stops."""
    if len(split.test_rows) == 0:
        raise DataError(f"k={split.k}: empty test set")
    train = stops.take(split.train_rows)
    test = stops.take(split.test_rows)
    strategies = list(strategies)
    if cfg.fusion not in strategies:
        strategies.insert(0, cfg.fusion)
    model = FusionModel.fit(train, profiles, pois, cfg, stacking=any(s != "wmv" for s in strategies))
    preds, _ = predict_in_context(model, test, train, strategies, context=cfg.fusion)
    truth = test.label
    methods = score_methods(truth, preds)
    counts = np.bincount(train.label, minlength=L)
    maj = int(np.argmax(counts))
    fused = preds[cfg.fusion]
    return EvalReport(
        k=split.k, n_train=len(train), n_test=len(test), users=len(split.users), excluded=split.excluded,
        methods=methods, majority_label=LABEL_NAMES[maj], majority_accuracy=float(np.mean(truth == maj)),
        confusion16=ConfusionMatrix.from_labels(truth, fused, LABEL_NAMES),
        confusion4=ConfusionMatrix.from_labels(collapse(truth), collapse(fused), COARSE_NAMES),
        fusion=cfg.fusion, bayes_rate=bayes_rate,
    )


def evaluate_k(stops, profiles, pois, cfg: RunConfig, k: int, bayes_fn=None, strategies=FUSIONS) -> EvalReport:
    split = chrono_split(stops, k)
    bayes = bayes_fn(stops.take(split.test_rows)) if bayes_fn is not None else None
    return evaluate(stops, split, profiles, pois, cfg, bayes, strategies)


# -- streaming evaluation ----------------------------------------------------------

@dataclass
class StreamReport:
    days: list[int]
    seen_cum: list[float | None]
    unseen_cum: list[float | None]
    overall_cum: list[float | None]
    log: dict  # per-stop lists: day, user, seen, truth, predicted, correct, train_days
    buckets: list[dict]
    min_bucket_users: int
    fusion: str
    acc16: float | None = None
    acc4: float | None = None

    @property
    def final_seen(self) -> float | None:
        return self.seen_cum[-1] if self.seen_cum else None

    @property
    def final_unseen(self) -> float | None:
        return self.unseen_cum[-1] if self.unseen_cum else None

    def to_dict(self) -> dict:
        return {"fusion": self.fusion, "days": self.days, "seen_accumulative": self.seen_cum,
                "unseen_accumulative": self.unseen_cum, "overall_accumulative": self.overall_cum,
                "buckets": self.buckets, "min_bucket_users": self.min_bucket_users,
                "accuracy16": self.acc16, "accuracy4": self.acc4}

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test_day", "date", "seen_accumulative", "unseen_accumulative", "overall_accumulative"])
        from .domain import date_of_day

        for d, s, u, o in zip(self.days, self.seen_cum, self.unseen_cum, self.overall_cum):
            w.writerow([d, date_of_day(d).isoformat()] + ["" if v is None else f"{v:.6f}" for v in (s, u, o)])
        return buf.getvalue()

    def bucket_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["user_training_days", "users", "test_cases", "accuracy", "reported"])
        for b in self.buckets:
            w.writerow([b["train_days"], b["users"], b["test_cases"], f"{b['accuracy']:.6f}", int(b["reported"])])
        return buf.getvalue()


def _prefix_accuracy(day_ids, correct, mask, days) -> list[float | None]:
    out = []
    for d in days:
        m = mask & (day_ids <= d)
        out.append(float(correct[m].mean()) if m.any() else None)
    return out


def stream_evaluate(stops: StopArrays, profiles, pois, cfg: RunConfig) -> StreamReport:
    """Retrain on every earlier calendar day, test on the next, then fold it into training."""
    day = stops.day
    days = sorted(set(int(d) for d in day))
    if len(days) < cfg.warmup_days + 1:
        raise DataError(f"streaming needs at least {cfg.warmup_days + 1} calendar days, got {len(days)}")
    rec = {"day": [], "user": [], "seen": [], "truth": [], "predicted": [], "correct": [], "train_days": []}
    for d in days[cfg.warmup_days:]:
        train_rows = np.flatnonzero(day < d)
        test_rows = np.flatnonzero(day == d)
        train, test = stops.take(train_rows), stops.take(test_rows)
        model = FusionModel.fit(train, profiles, pois, cfg)
        preds, _ = predict_in_context(model, test, train, [cfg.fusion])
        prior = user_days(train)
        for i in range(len(test)):
            u = test.user[i]
            rec["day"].append(d)
            rec["user"].append(u)
            rec["seen"].append(u in prior)
            rec["truth"].append(int(test.label[i]))
            rec["predicted"].append(int(preds[cfg.fusion][i]))
            rec["correct"].append(bool(preds[cfg.fusion][i] == test.label[i]))
            rec["train_days"].append(len(prior.get(u, ())))
        log.info("stream day %d: %d test stops, %d training stops", d, len(test), len(train))
    arr = {k: np.array(v) for k, v in rec.items()}
    test_days = days[cfg.warmup_days:]
    overall = score_methods(arr["truth"], {cfg.fusion: arr["predicted"]})[0]
    everything = np.ones(len(arr["day"]), dtype=bool)
    buckets = []
    for b in sorted(set(arr["train_days"].tolist())):
        m = arr["train_days"] == b
        n_users = len(set(arr["user"][m].tolist()))
        buckets.append({"train_days": int(b), "users": n_users, "test_cases": int(m.sum()),
                        "accuracy": float(arr["correct"][m].mean()), "reported": n_users > cfg.min_bucket_users})
    return StreamReport(
        days=test_days,
        seen_cum=_prefix_accuracy(arr["day"], arr["correct"], arr["seen"].astype(bool), test_days),
        unseen_cum=_prefix_accuracy(arr["day"], arr["correct"], ~arr["seen"].astype(bool), test_days),
        overall_cum=_prefix_accuracy(arr["day"], arr["correct"], everything, test_days),
        log={k: v.tolist() for k, v in arr.items()}, buckets=buckets,
        min_bucket_users=cfg.min_bucket_users, fusion=cfg.fusion, acc16=overall.acc16, acc4=overall.acc4,
    )


# -- parameter grid -----------------------------------------------------------------

def _grid_one(args):
    stops, profiles, pois, cfg, k = args
    rep = evaluate_k(stops, profiles, pois, cfg, k, strategies=[cfg.fusion])
    return {"quantizer": cfg.quantizer, "cell_width": cfg.cell_width, "n_clusters": cfg.n_clusters,
            "radius": cfg.radius, "slot_minutes": cfg.slot_minutes, "k": k,
            "acc16": rep.accuracy(cfg.fusion),
            "acc4": next(m.acc4 for m in rep.methods if m.method == cfg.fusion), "n_test": rep.n_test}


def run_grid(stops, profiles, pois, cfg: RunConfig, k: int, jobs: int = 1) -> list[dict]:
    """One chronological evaluation per grid configuration; independent jobs run in parallel."""
    tasks = [(stops, profiles, pois, c.replace(jobs=1), k) for c in grid_configs(cfg)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_grid_one, tasks))
    return [_grid_one(t) for t in tasks]

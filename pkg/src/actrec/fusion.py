"""Population-stratified ensembles and their fusion (stacking and weighted voting)."""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .domain import N_LABELS, DataError, InvariantError, UserProfile
from .features import PoiIndex, PopulationStats, StopArrays, sequence_context
from .forest import Ensemble, fit_ensemble
from .quantize import CircularQuantizer, GridQuantizer, fit_voronoi, quantizer_from_dict

log = logging.getLogger(__name__)

L = N_LABELS
KINDS = ("cross_user", "user", "age", "gender")  # stacking order
BUNDLE_FORMAT = "actrec-bundle"
BUNDLE_VERSION = 1


def population_key(kind: str, selector: str = "*") -> str:
    return f"{kind}={selector}"


def keys_for(profile: UserProfile, seen: bool) -> dict[str, str]:
    """Population keys a user's stops are scored with, by kind."""
    keys = {
        "cross_user": population_key("cross_user"),
        "gender": population_key("gender", profile.gender.value),
        "age": population_key("age", profile.age_group),
    }
    if seen:
        keys["user"] = population_key("user", profile.user_id)
    return keys


def derive_seed(seed: int, key: str) -> int:
    return (int(seed) * 1_000_003 + zlib.crc32(key.encode())) % (2**31 - 1)


def make_quantizer(cfg: RunConfig, train: StopArrays):
    if cfg.quantizer == "grid":
        return GridQuantizer(cfg.cell_width, cfg.cell_height)
    if cfg.quantizer == "circular":
        return CircularQuantizer(cfg.radius)
    xy = train.xy
    n_distinct = len(np.unique(xy, axis=0))
    k = min(int(cfg.n_clusters), n_distinct)
    if k < cfg.n_clusters:
        log.warning("only %d distinct training locations; using k=%d Voronoi cells", n_distinct, k)
    return fit_voronoi(xy, k, seed=cfg.seed)


def infer_work_locations(train: StopArrays, profiles: dict[str, UserProfile]) -> dict:
    """Registered work location, else centroid of the user's Work-labelled training stops."""
    works = {}
    is_work = train.label == 1
    for uid, prof in profiles.items():
        if prof.work is not None:
            works[uid] = tuple(prof.work)
            continue
        m = is_work & (train.user == uid)
        if m.any():
            works[uid] = (float(train.x[m].mean()), float(train.y[m].mean()))
    return works


@dataclass
class PopulationModel:
    kind: str
    selector: str
    stats: PopulationStats
    ensemble: Ensemble

    @property
    def key(self) -> str:
        return population_key(self.kind, self.selector)


def _population_rows(train: StopArrays, profiles: dict[str, UserProfile]) -> dict[str, np.ndarray]:
    rows: dict[str, list[int]] = {}
    for i, uid in enumerate(train.user):
        prof = profiles.get(uid)
        if prof is None:
            raise DataError(f"no profile for user {uid!r}")
        for kind, key in keys_for(prof, seen=True).items():
            rows.setdefault(key, []).append(i)
    order = sorted(rows, key=lambda k: (KINDS.index(k.split("=", 1)[0]), k))
    return {k: np.array(rows[k], dtype=np.int64) for k in order}


def train_populations(train: StopArrays, profiles: dict[str, UserProfile], pois, cfg: RunConfig,
                      quantizer=None, report: dict | None = None) -> tuple[dict, object, dict]:
    """Fit one ensemble per population present in ``train``.

    Returns (models by key, quantizer, work locations).
    """
    if len(train) == 0:
        raise DataError("no training stops")
    quantizer = quantizer if quantizer is not None else make_quantizer(cfg, train)
    poi_index = pois if isinstance(pois, PoiIndex) else PoiIndex.from_records(pois, quantizer)
    works = infer_work_locations(train, profiles)
    homes = {u: tuple(p.home) for u, p in profiles.items()}
    models = {}
    for key, rows in _population_rows(train, profiles).items():
        kind, selector = key.split("=", 1)
        sub = train.take(rows)
        stats = PopulationStats(sub, poi_index, quantizer, cfg.slot_minutes, homes, works, cfg.sentinel_km)
        X = stats.training_features()
        ens = fit_ensemble(X, sub.label, L, cfg.ensemble_mode, cfg.n_trees, cfg.min_leaf,
                           derive_seed(cfg.seed, key), cfg.node_sampling, cfg.jobs)
        models[key] = PopulationModel(kind, selector, stats, ens)
    if report is not None:
        report["populations"] = {k: int(len(m.stats.train)) for k, m in models.items()}
        expected = {population_key("gender", g) for g in ("female", "male")}
        report["omitted"] = sorted(expected - set(models))
    return models, quantizer, works


# -- fusion rules ------------------------------------------------------------------

def one_hot(labels: np.ndarray, n: int = L) -> np.ndarray:
    out = np.zeros((len(labels), n))
    ok = labels >= 0
    out[np.flatnonzero(ok), labels[ok]] = 1.0
    return out


def wmv(decisions, weights) -> int:
    """Weighted majority vote over one-hot (or label) decisions; ``None`` entries abstain.

    ``decisions`` and ``weights`` are parallel sequences or dicts keyed by model.
    """
    if isinstance(decisions, dict):
        keys = list(decisions)
        decisions = [decisions[k] for k in keys]
        weights = [weights[k] for k in keys]
    total = np.zeros(L)
    n = 0
    for d, w in zip(decisions, weights):
        if d is None:
            continue
        d = np.asarray(d, dtype=float)
        if d.ndim == 0:
            d = one_hot(np.array([int(d)]))[0]
        total += w * d
        n += 1
    if n == 0:
        raise ValueError("weighted majority vote needs at least one decision")
    return int(np.argmax(total))


def stack_scores(outputs: dict[str, np.ndarray], n: int) -> np.ndarray:
    """(n, 4L) matrix of per-model scores in KINDS order; absent models are zero."""
    parts = []
    for kind in KINDS:
        s = outputs.get(kind)
        parts.append(np.zeros((n, L)) if s is None else np.nan_to_num(s, nan=0.0))
    return np.hstack(parts)


def stack_decisions(outputs: dict[str, np.ndarray], n: int) -> np.ndarray:
    parts = []
    for kind in KINDS:
        s = outputs.get(kind)
        if s is None:
            parts.append(np.zeros((n, L)))
        else:
            lab = np.where(np.isnan(s[:, 0]), -1, np.argmax(np.nan_to_num(s, nan=-1.0), axis=1))
            parts.append(one_hot(lab))
    return np.hstack(parts)


def score_stack(per_model_scores: dict, meta: Ensemble | None) -> int:
    if meta is None:
        raise ValueError("score-stacking meta classifier is not trained")
    x = stack_scores({k: None if v is None else np.asarray(v, float)[None, :] for k, v in per_model_scores.items()}, 1)
    return int(meta.predict(x)[0])


def decision_stack(per_model_decisions: dict, meta: Ensemble | None) -> int:
    if meta is None:
        raise ValueError("decision-stacking meta classifier is not trained")
    x = np.hstack([np.zeros(L) if per_model_decisions.get(k) is None else np.asarray(per_model_decisions[k], float)
                   for k in KINDS])
    return int(meta.predict(x[None, :])[0])


# -- the fused model ------------------------------------------------------------

@dataclass
class FusionModel:
    config: RunConfig
    quantizer: object
    populations: dict[str, PopulationModel]
    profiles: dict[str, UserProfile]
    works: dict
    poi_index: PoiIndex
    score_meta: Ensemble | None = None
    decision_meta: Ensemble | None = None
    report: dict = field(default_factory=dict)

    @property
    def trained_users(self) -> set[str]:
        return {m.selector for m in self.populations.values() if m.kind == "user"}

    @classmethod
    def fit(cls, train: StopArrays, profiles: dict[str, UserProfile], pois, cfg: RunConfig,
            stacking: bool | None = None) -> "FusionModel":
        """Train all population models; meta classifiers are fitted on held-out last days."""
        if stacking is None:
            stacking = cfg.fusion != "wmv"
        report: dict = {"n_train": int(len(train))}
        models, quantizer, works = train_populations(train, profiles, pois, cfg, report=report)
        poi_index = next(iter(models.values())).stats.poi_index
        model = cls(cfg, quantizer, models, dict(profiles), works, poi_index, report=report)
        if stacking:
            model._fit_meta(train)
        return model

    def _fit_meta(self, train: StopArrays):
        day = train.day
        inner_rows, meta_rows = [], []
        for uid in sorted(set(train.user)):
            rows = np.flatnonzero(train.user == uid)
            days = np.unique(day[rows])
            if len(days) >= 2:
                inner_rows += rows[day[rows] != days[-1]].tolist()
                meta_rows += rows[day[rows] == days[-1]].tolist()
            else:
                inner_rows += rows.tolist()
                meta_rows += rows.tolist()
        self.report["meta_rows"] = len(meta_rows)
        self.report["meta_in_sample"] = bool(set(inner_rows) & set(meta_rows))
        inner_rows, meta_rows = np.array(sorted(inner_rows)), np.array(sorted(meta_rows))
        prev = sequence_context(train).prev_label
        models, _, works = train_populations(train.take(inner_rows), self.profiles, self.poi_index, self.config,
                                             quantizer=self.quantizer)
        inner = FusionModel(self.config, self.quantizer, models, self.profiles, works, self.poi_index)
        meta_stops = train.take(meta_rows)
        out = inner.model_scores(meta_stops, prev[meta_rows])
        n = len(meta_stops)
        cfg = self.config
        self.score_meta = fit_ensemble(stack_scores(out, n), meta_stops.label, L, cfg.ensemble_mode, cfg.n_trees,
                                       cfg.min_leaf, derive_seed(cfg.seed, "meta=score"), cfg.node_sampling, cfg.jobs)
        self.decision_meta = fit_ensemble(stack_decisions(out, n), meta_stops.label, L, cfg.ensemble_mode,
                                          cfg.n_trees, cfg.min_leaf, derive_seed(cfg.seed, "meta=decision"),
                                          cfg.node_sampling, cfg.jobs)

    def model_scores(self, stops: StopArrays, prev_label) -> dict[str, np.ndarray]:
        """Per population kind, an (n, L) score matrix; rows are NaN where that model is absent."""
        n = len(stops)
        prev_label = np.asarray(prev_label, dtype=np.int64)
        out = {k: np.full((n, L), np.nan) for k in KINDS}
        groups: dict[tuple[str, str], list[int]] = {}
        trained = self.trained_users
        for i, uid in enumerate(stops.user):
            prof = self.profiles.get(uid)
            if prof is None:
                raise DataError(f"no profile for user {uid!r}")
            for kind, key in keys_for(prof, uid in trained).items():
                if key in self.populations:
                    groups.setdefault((kind, key), []).append(i)
        for (kind, key), rows in groups.items():
            rows = np.array(rows, dtype=np.int64)
            pm = self.populations[key]
            X = pm.stats.query_features(stops.take(rows), prev_label[rows])
            out[kind][rows] = pm.ensemble.predict_scores(X)
        return {k: v for k, v in out.items() if not np.all(np.isnan(v))} if n else {}

    def predict(self, stops: StopArrays, prev_label, strategies=None) -> dict[str, np.ndarray]:
        """Predicted labels per method: each population kind (-1 where absent) and each fusion rule."""
        n = len(stops)
        scores = self.model_scores(stops, prev_label)
        preds = {}
        for kind in KINDS:
            s = scores.get(kind)
            preds[kind] = np.full(n, -1, dtype=np.int64) if s is None else np.where(
                np.isnan(s[:, 0]), -1, np.argmax(np.nan_to_num(s, nan=-1.0), axis=1))
        strategies = strategies or [self.config.fusion]
        if "wmv" in strategies:
            w = self.config.wmv_weights
            preds["wmv"] = np.array([
                wmv({k: (preds[k][i] if preds[k][i] >= 0 else None) for k in KINDS}, w) for i in range(n)
            ], dtype=np.int64)
        if "score_stack" in strategies:
            if self.score_meta is None:
                raise ValueError("score-stacking meta classifier is not trained")
            preds["score_stack"] = self.score_meta.predict(stack_scores(scores, n)) if n else np.zeros(0, int)
        if "decision_stack" in strategies:
            if self.decision_meta is None:
                raise ValueError("decision-stacking meta classifier is not trained")
            preds["decision_stack"] = (self.decision_meta.predict(stack_decisions(scores, n)) if n
                                       else np.zeros(0, int))
        preds["_scores"] = scores
        return preds

    def fused_scores(self, scores: dict[str, np.ndarray], n: int, strategy: str) -> np.ndarray:
        """Per-label scores behind a fused decision (vote mass for WMV, meta votes for stacks)."""
        if strategy == "wmv":
            mass = np.zeros((n, L))
            for kind in KINDS:
                s = scores.get(kind)
                if s is None:
                    continue
                ok = ~np.isnan(s[:, 0])
                lab = np.argmax(np.nan_to_num(s, nan=-1.0), axis=1)
                mass[np.flatnonzero(ok), lab[ok]] += self.config.wmv_weights[kind]
            tot = mass.sum(axis=1, keepdims=True)
            return mass / np.where(tot > 0, tot, 1)
        if strategy == "score_stack":
            return self.score_meta.predict_scores(stack_scores(scores, n))
        return self.decision_meta.predict_scores(stack_decisions(scores, n))

    # -- persistence --------------------------------------------------------------

    def to_dict(self) -> dict:
        pops = {}
        for key, pm in self.populations.items():
            st = pm.stats
            d = {"kind": pm.kind, "selector": pm.selector, "train": st.train.to_dict(),
                 "temporal_counts": st.temporal_counts.tolist(),
                 "transition_counts": st.transitions.counts.tolist(),
                 "ensemble": pm.ensemble.to_dict()}
            if not st.hist_index.circular:
                d["spatial_counts"] = {_cell_str(c): v.tolist() for c, v in sorted(st.hist_index.table.counts.items())}
            pops[key] = d
        pi = self.poi_index
        return {
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "config": self.config.to_dict(),
            "quantizer": self.quantizer.to_dict(),
            "profiles": [_profile_dict(p) for _, p in sorted(self.profiles.items())],
            "works": {u: list(w) for u, w in sorted(self.works.items())},
            "pois": {"xy": pi.xy.tolist(), "label": pi.labels.tolist()},
            "populations": pops,
            "score_meta": None if self.score_meta is None else self.score_meta.to_dict(),
            "decision_meta": None if self.decision_meta is None else self.decision_meta.to_dict(),
            "report": self.report,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FusionModel":
        if d.get("format") != BUNDLE_FORMAT:
            raise DataError("not a model bundle")
        if d.get("version") != BUNDLE_VERSION:
            raise DataError(f"bundle version {d.get('version')} is not supported (expected {BUNDLE_VERSION})")
        cfg = RunConfig(**d["config"]).validate()
        quantizer = quantizer_from_dict(d["quantizer"])
        profiles = {p["user_id"]: _profile_from_dict(p, cfg.age_breaks) for p in d["profiles"]}
        works = {u: tuple(w) for u, w in d["works"].items()}
        poi_index = PoiIndex(np.array(d["pois"]["xy"], dtype=float).reshape(-1, 2),
                             np.array(d["pois"]["label"], dtype=np.int64), quantizer)
        homes = {u: tuple(p.home) for u, p in profiles.items()}
        pops = {}
        for key, pd in d["populations"].items():
            stats = PopulationStats(StopArrays.from_dict(pd["train"]), poi_index, quantizer, cfg.slot_minutes,
                                    homes, works, cfg.sentinel_km)
            if (stats.temporal_counts.tolist() != pd["temporal_counts"]
                    or stats.transitions.counts.tolist() != pd["transition_counts"]):
                raise InvariantError(f"stored statistics for {key} do not match its training stops")
            if "spatial_counts" in pd:
                rebuilt = {_cell_str(c): v.tolist() for c, v in stats.hist_index.table.counts.items()}
                if rebuilt != pd["spatial_counts"]:
                    raise InvariantError(f"stored spatial counts for {key} do not match its training stops")
            pops[key] = PopulationModel(pd["kind"], pd["selector"], stats, Ensemble.from_dict(pd["ensemble"]))
        return cls(cfg, quantizer, pops, profiles, works, poi_index,
                   None if d["score_meta"] is None else Ensemble.from_dict(d["score_meta"]),
                   None if d["decision_meta"] is None else Ensemble.from_dict(d["decision_meta"]),
                   d.get("report", {}))

    @classmethod
    def load(cls, path) -> "FusionModel":
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: not a JSON bundle ({exc})") from None
        return cls.from_dict(d)


def _cell_str(c) -> str:
    return ",".join(str(v) for v in c) if isinstance(c, tuple) else str(c)


def _profile_dict(p: UserProfile) -> dict:
    return {"user_id": p.user_id, "gender": p.gender.value, "age": p.age, "home": list(p.home),
            "work": None if p.work is None else list(p.work)}


def _profile_from_dict(d: dict, age_breaks) -> UserProfile:
    from .domain import Gender

    return UserProfile(d["user_id"], Gender(d["gender"]), int(d["age"]), tuple(d["home"]),
                       None if d["work"] is None else tuple(d["work"]), tuple(age_breaks))


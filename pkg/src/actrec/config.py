"""Run configuration: YAML file plus command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .domain import DEFAULT_AGE_BREAKS, Projection
from .ingest import BoundingBox

QUANTIZERS = ("grid", "voronoi", "circular")
FUSIONS = ("wmv", "score_stack", "decision_stack")
ENSEMBLE_MODES = ("bagging", "random_subspace")

# parameter grids swept by ``eval --grid``
GRID_CELL_SIZES = [200, 400, 600, 800, 1000]
GRID_CLUSTERS = [1000, 800, 600, 400, 200, 100]
GRID_RADII = [100, 150, 200, 300, 400, 500]
GRID_SLOTS = [10, 20, 40, 60, 90, 120]

DEFAULT_WEIGHTS = {"cross_user": 4.0, "gender": 3.0, "age": 2.0, "user": 1.0}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    quantizer: str = "grid"
    cell_width: float = 800.0
    cell_height: float = 800.0
    n_clusters: int = 400
    radius: float = 300.0
    slot_minutes: int = 120
    ensemble_mode: str = "random_subspace"
    node_sampling: str = "per_tree"
    n_trees: int = 100
    min_leaf: int = 1
    seed: int = 0
    fusion: str = "wmv"
    wmv_weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    k_days: int = 4
    warmup_days: int = 3
    min_bucket_users: int = 30
    age_breaks: list = field(default_factory=lambda: list(DEFAULT_AGE_BREAKS))
    ref_lon: float = 103.8198
    ref_lat: float = 1.3521
    bbox: list = field(default_factory=lambda: [103.55, 1.15, 104.10, 1.50])
    study_diameter_km: float | None = None
    jobs: int = 1
    stops: str | None = None
    profiles: str | None = None
    pois: str | None = None
    poi_mapping: str | None = None
    grid: dict = field(default_factory=dict)

    @property
    def projection(self) -> Projection:
        return Projection(self.ref_lon, self.ref_lat)

    @property
    def bounding_box(self) -> BoundingBox:
        return BoundingBox(*self.bbox)

    @property
    def sentinel_km(self) -> float:
        if self.study_diameter_km is not None:
            return float(self.study_diameter_km)
        return self.bounding_box.diameter_km(self.projection)

    def validate(self) -> "RunConfig":
        def positive(name):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")

        for name in ("cell_width", "cell_height", "n_clusters", "radius", "slot_minutes", "n_trees",
                     "min_leaf", "k_days", "jobs"):
            positive(name)
        if 1440 % int(self.slot_minutes):
            raise ConfigError(f"slot_minutes={self.slot_minutes} does not divide a day")
        if self.quantizer not in QUANTIZERS:
            raise ConfigError(f"quantizer must be one of {QUANTIZERS}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}")
        if self.ensemble_mode not in ENSEMBLE_MODES:
            raise ConfigError(f"ensemble_mode must be one of {ENSEMBLE_MODES}")
        if self.node_sampling not in ("per_tree", "per_node"):
            raise ConfigError("node_sampling must be per_tree or per_node")
        if set(self.wmv_weights) != set(DEFAULT_WEIGHTS) or any(w <= 0 for w in self.wmv_weights.values()):
            raise ConfigError(f"wmv_weights needs positive weights for {sorted(DEFAULT_WEIGHTS)}")
        if self.warmup_days < 1:
            raise ConfigError("warmup_days must be >= 1")
        if len(self.bbox) != 4:
            raise ConfigError("bbox is [lon_min, lat_min, lon_max, lat_max]")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        base = Path(path).parent
        for key in ("stops", "profiles", "pois", "poi_mapping"):
            if data.get(key) and not Path(data[key]).is_absolute():
                data[key] = str(base / data[key])
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "slot_minutes" in data:
        data["slot_minutes"] = int(data["slot_minutes"])
    return RunConfig(**data).validate()


def dump_config(cfg: RunConfig, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)


def grid_configs(cfg: RunConfig) -> list[RunConfig]:
    """One config per (quantizer parameter, slot width) combination."""
    g = cfg.grid or {}
    cells = g.get("cell_sizes", GRID_CELL_SIZES)
    clusters = g.get("clusters", GRID_CLUSTERS)
    radii = g.get("radii", GRID_RADII)
    slots = g.get("slots", GRID_SLOTS)
    quantizers = g.get("quantizers", list(QUANTIZERS))
    out = []
    for q in quantizers:
        params = {"grid": [dict(cell_width=float(c), cell_height=float(c)) for c in cells],
                  "voronoi": [dict(n_clusters=int(k)) for k in clusters],
                  "circular": [dict(radius=float(r)) for r in radii]}[q]
        for p in params:
            for s in slots:
                out.append(cfg.replace(quantizer=q, slot_minutes=int(s), **p).validate())
    return out

from collections import Counter

import numpy as np
import pytest
import yaml

from actrec.config import (
    GRID_CELL_SIZES,
    GRID_CLUSTERS,
    GRID_RADII,
    GRID_SLOTS,
    ConfigError,
    RunConfig,
    dump_config,
    grid_configs,
    load_config,
)
from actrec.domain import LABEL_NAMES
from actrec.ingest import clean, flatten_days
from actrec.synth import PLACE_LABELS, SynthConfig, bayes_accuracy, generate, write_dataset


class TestGenerator:
    def test_byte_identical_files(self, tmp_path):
        cfg = SynthConfig(n_users=8, days_per_user=4, seed=11)
        for name in ("a", "b"):
            write_dataset(tmp_path / name, *generate(cfg))
        for f in ("stops.csv", "profiles.csv", "pois.csv", "poi_mapping.json", "truth.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_seed_changes_output(self):
        a = generate(SynthConfig(n_users=4, days_per_user=2, seed=1))[0]
        b = generate(SynthConfig(n_users=4, days_per_user=2, seed=2))[0]
        assert [s.t_start for s in a] != [s.t_start for s in b]

    def test_every_day_survives_cleaning(self, small_city):
        stops, profiles, _, _ = small_city
        days, report = clean(stops, profiles)
        assert len(flatten_days(days)) == len(stops)
        assert sum(report.discarded_points.values()) == 0
        assert len(days) == 12 * 6

    def test_label_mixture_matches_parameters(self):
        stops, _, _, truth = generate(SynthConfig(n_users=190, days_per_user=10, seed=3))
        assert len(stops) >= 10_000
        counts = Counter(s.label.name for s in stops)
        for name, p in truth["expected_label_mixture"].items():
            assert abs(counts[name] / len(stops) - p) <= 0.03, name
        assert sum(truth["expected_label_mixture"].values()) == pytest.approx(1.0)

    def test_truth_is_complete(self, small_city):
        stops, _, _, truth = small_city
        assert len(truth["stop_place_types"]) == len(truth["stop_keys"]) == len(stops)
        assert truth["bayes_rate"] == pytest.approx(bayes_accuracy(truth["stop_place_types"]))
        assert 0 < truth["bayes_rate"] < 1

    @pytest.mark.parametrize("place", sorted(PLACE_LABELS))
    def test_place_label_distributions(self, place):
        probs = PLACE_LABELS[place]
        assert set(probs) <= set(LABEL_NAMES)
        assert sum(probs.values()) == pytest.approx(1.0)

    def test_days_are_home_bounded_and_ordered(self, small_city):
        stops, _, _, _ = small_city
        by_day = {}
        for s in stops:
            by_day.setdefault((s.user_id, s.t_start // 86400), []).append(s)
        for day in by_day.values():
            assert day[0].label.name == "Home" and day[-1].label.name == "Home"
            ends = np.array([s.t_end for s in day[:-1]])
            starts = np.array([s.t_start for s in day[1:]])
            assert np.all(starts > ends)


class TestConfig:
    def test_defaults_validate(self):
        cfg = RunConfig().validate()
        assert cfg.wmv_weights == {"cross_user": 4.0, "gender": 3.0, "age": 2.0, "user": 1.0}

    def test_file_and_overrides(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"quantizer": "voronoi", "n_clusters": 200, "stops": "data/s.csv"}))
        cfg = load_config(p, {"n_clusters": 100, "seed": None})
        assert cfg.quantizer == "voronoi" and cfg.n_clusters == 100 and cfg.seed == 0
        assert cfg.stops == str(tmp_path / "data" / "s.csv")

    def test_dump_round_trip(self, tmp_path):
        cfg = RunConfig(slot_minutes=40, fusion="score_stack")
        dump_config(cfg, tmp_path / "c.yaml")
        assert load_config(tmp_path / "c.yaml") == cfg

    @pytest.mark.parametrize("bad", [
        {"slot_minutes": 7},
        {"n_trees": 0},
        {"cell_width": -1},
        {"quantizer": "hexagon"},
        {"fusion": "average"},
        {"ensemble_mode": "boosting"},
        {"wmv_weights": {"cross_user": 1}},
        {"warmup_days": 0},
        {"colour": "blue"},
    ])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            load_config(None, bad)

    def test_not_a_mapping(self, tmp_path):
        (tmp_path / "c.yaml").write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.yaml")

    def test_grid(self):
        full = grid_configs(RunConfig())
        n = (len(GRID_CELL_SIZES) + len(GRID_CLUSTERS) + len(GRID_RADII)) * len(GRID_SLOTS)
        assert len(full) == n == 102
        small = grid_configs(RunConfig(grid={"quantizers": ["circular"], "radii": [100, 200], "slots": [60]}))
        assert [(c.quantizer, c.radius, c.slot_minutes) for c in small] == [("circular", 100.0, 60),
                                                                            ("circular", 200.0, 60)]

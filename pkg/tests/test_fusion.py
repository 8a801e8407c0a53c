import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from actrec.config import RunConfig
from actrec.domain import DataError, InvariantError
from actrec.features import StopArrays, sequence_context
from actrec.forest import fit_ensemble
from actrec.fusion import (
    KINDS,
    FusionModel,
    decision_stack,
    derive_seed,
    keys_for,
    one_hot,
    score_stack,
    stack_decisions,
    stack_scores,
    wmv,
)

WEIGHTS = {"cross_user": 4, "gender": 3, "age": 2, "user": 1}
FAST = RunConfig(n_trees=15, seed=3)


class TestWeightedVote:
    def test_exhaustive_three_models_small_vocab(self):
        for combo in itertools.product(range(16), repeat=3):
            got = wmv([one_hot(np.array([a]))[0] for a in combo], [4, 3, 2])
            assert got == oracles.weighted_vote(combo, [4, 3, 2])

    @given(st.lists(st.integers(0, 15), min_size=4, max_size=4))
    def test_equal_weights_is_plain_majority(self, labels):
        counts = np.bincount(labels, minlength=16)
        assert wmv(labels, [1, 1, 1, 1]) == int(np.argmax(counts))

    @given(st.lists(st.integers(0, 15), min_size=4, max_size=4), st.floats(0.01, 100))
    def test_scale_invariant(self, labels, c):
        assert wmv(labels, [4, 3, 2, 1]) == wmv(labels, [4 * c, 3 * c, 2 * c, 1 * c])

    def test_absent_models_are_omitted(self):
        assert wmv({"cross_user": 5, "gender": None, "age": 7, "user": 7}, WEIGHTS) == 5
        assert wmv({"cross_user": None, "gender": None, "age": 7, "user": 9}, WEIGHTS) == 7
        with pytest.raises(ValueError):
            wmv([None, None], [1, 1])

    def test_ties_go_to_lowest_label(self):
        # cross-user (4) alone against gender + user (3 + 1)
        assert wmv([9, 2, 0, 2], [4, 3, 2, 1]) == 2
        assert wmv([2, 9, 0, 9], [4, 3, 2, 1]) == 2


class TestStacking:
    def test_dimension_and_zero_fill(self):
        s = {"cross_user": np.full((3, 16), 1 / 16), "age": np.full((3, 16), 0.5)}
        s["age"][1] = np.nan  # model absent for that row
        X = stack_scores(s, 3)
        assert X.shape == (3, 64)
        assert np.all(X[:, 16:32] == 0)  # user model absent everywhere
        assert np.all(X[1, 32:48] == 0) and np.all(X[0, 32:48] == 0.5)
        D = stack_decisions(s, 3)
        assert D.shape == (3, 64) and D[:, :16].sum() == 3 and D[1, 32:48].sum() == 0

    def test_score_meta_learns_separable_scores(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 16, size=300)
        scores = {k: one_hot(y) * 0.6 + 0.4 / 16 for k in ("cross_user", "gender")}
        X = stack_scores(scores, 300)
        meta = fit_ensemble(X, y, 16, "bagging", 10, seed=0)
        assert np.all(meta.predict(X) == y)
        assert score_stack({"cross_user": scores["cross_user"][0], "gender": scores["gender"][0]}, meta) == y[0]

    def test_decision_meta_learns_identity_on_agreement(self):
        y = np.tile(np.arange(16), 10)
        dec = {k: one_hot(y) for k in KINDS}
        meta = fit_ensemble(stack_decisions({k: v for k, v in dec.items()}, len(y)), y, 16, "bagging", 10)
        for a in range(16):
            assert decision_stack({k: one_hot(np.array([a]))[0] for k in KINDS}, meta) == a

    def test_decision_meta_resolves_planted_disagreement(self):
        # the user model is always right; the cross-user model is a deliberately shifted decoy
        rng = np.random.default_rng(1)
        y = rng.integers(0, 16, size=400)
        dec = {"user": one_hot(y), "cross_user": one_hot((y + 1) % 16)}
        meta = fit_ensemble(stack_decisions(dec, 400), y, 16, "bagging", 10, seed=2)
        test = rng.integers(0, 16, size=50)
        got = meta.predict(stack_decisions({"user": one_hot(test), "cross_user": one_hot((test + 1) % 16)}, 50))
        assert np.all(got == test)

    def test_untrained_meta(self):
        with pytest.raises(ValueError):
            score_stack({}, None)
        with pytest.raises(ValueError):
            decision_stack({}, None)


@pytest.fixture(scope="module")
def fitted(small_arrays):
    stops, profiles, pois = small_arrays
    return FusionModel.fit(stops, profiles, pois, FAST.replace(fusion="score_stack")), stops, profiles, pois


class TestFusionModel:
    def test_populations(self, fitted):
        model, stops, profiles, _ = fitted
        kinds = sorted({m.kind for m in model.populations.values()})
        assert kinds == ["age", "cross_user", "gender", "user"]
        assert model.trained_users == set(stops.user)
        for key, pm in model.populations.items():
            users = set(pm.stats.train.user)
            if pm.kind == "gender":
                assert {profiles[u].gender.value for u in users} == {pm.selector}
            if pm.kind == "age":
                assert {profiles[u].age_group for u in users} == {pm.selector}
            if pm.kind == "user":
                assert users == {pm.selector}
        assert len(model.populations["cross_user=*"].stats.train) == len(stops)

    def test_meta_uses_held_out_last_day(self, fitted):
        model, stops, _, _ = fitted
        assert model.report["meta_in_sample"] is False
        assert model.score_meta is not None and model.decision_meta is not None

    def test_predictions(self, fitted):
        model, stops, _, _ = fitted
        prev = sequence_context(stops).prev_label
        out = model.predict(stops, prev, ["wmv", "score_stack", "decision_stack"])
        for m in ("wmv", "score_stack", "decision_stack", *KINDS):
            assert out[m].shape == (len(stops),) and out[m].min() >= 0
        assert np.mean(out["wmv"] == stops.label) > 0.8  # in-sample sanity only

    def test_unseen_user_has_no_user_model(self, fitted):
        model, stops, profiles, _ = fitted
        u = stops.user[0]
        assert set(keys_for(profiles[u], seen=False)) == {"cross_user", "gender", "age"}
        rows = np.flatnonzero(stops.user == u)[:3]
        q = stops.take(rows)
        q.user[:] = u
        restricted = FusionModel(model.config, model.quantizer,
                                 {k: v for k, v in model.populations.items() if k != f"user={u}"},
                                 model.profiles, model.works, model.poi_index)
        scores = restricted.model_scores(q, np.full(3, -1))
        assert "user" not in scores

    def test_fused_scores_sum_to_one(self, fitted):
        model, stops, _, _ = fitted
        q = stops.take(np.arange(20))
        out = model.predict(q, np.full(20, -1), ["wmv", "score_stack", "decision_stack"])
        for strat in ("wmv", "score_stack", "decision_stack"):
            s = model.fused_scores(out["_scores"], 20, strat)
            np.testing.assert_allclose(s.sum(axis=1), 1.0)
            assert np.array_equal(np.argmax(s, axis=1), out[strat])

    def test_missing_profile(self, fitted):
        model, stops, _, _ = fitted
        q = stops.take([0])
        q.user[:] = "nobody"
        with pytest.raises(DataError):
            model.predict(q, [-1])

    def test_seed_derivation_is_stable(self):
        assert derive_seed(0, "user=u001") == derive_seed(0, "user=u001") != derive_seed(1, "user=u001")


class TestBundle:
    def test_round_trip_is_bitwise_stable(self, fitted, tmp_path):
        model, stops, _, _ = fitted
        model.save(tmp_path / "a.json")
        again = FusionModel.load(tmp_path / "a.json")
        again.save(tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        q = stops.take(np.arange(30))
        prev = np.full(30, -1)
        a = model.predict(q, prev, ["wmv", "score_stack"])
        b = again.predict(q, prev, ["wmv", "score_stack"])
        assert np.array_equal(a["wmv"], b["wmv"]) and np.array_equal(a["score_stack"], b["score_stack"])

    def test_retraining_is_identical(self, small_arrays, tmp_path):
        stops, profiles, pois = small_arrays
        cfg = RunConfig(n_trees=5, quantizer="voronoi", n_clusters=30)
        FusionModel.fit(stops, profiles, pois, cfg).save(tmp_path / "a.json")
        FusionModel.fit(stops, profiles, pois, cfg).save(tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_tampered_statistics_are_rejected(self, fitted):
        d = json.loads(json.dumps(fitted[0].to_dict()))
        d["populations"]["cross_user=*"]["temporal_counts"][0][0] += 1
        with pytest.raises(InvariantError):
            FusionModel.from_dict(d)

    def test_version_and_format_checks(self, fitted, tmp_path):
        d = fitted[0].to_dict()
        with pytest.raises(DataError):
            FusionModel.from_dict({**d, "version": 99})
        with pytest.raises(DataError):
            FusionModel.from_dict({**d, "format": "other"})
        (tmp_path / "x.json").write_text("not json")
        with pytest.raises(DataError):
            FusionModel.load(tmp_path / "x.json")


def test_empty_training_set(small_arrays):
    _, profiles, pois = small_arrays
    with pytest.raises(DataError):
        FusionModel.fit(StopArrays.empty(), profiles, pois, FAST)

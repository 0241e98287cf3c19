import math

import numpy as np
import pytest

from saicl.data import TaskKind
from saicl.errors import SaiclError
from saicl.evaluation import auc
from saicl.synthetic import SynthConfig, dropout_probability, generate_dp, generate_dp_events, generate_kt, sigmoid


class TestKT:
    def test_symmetry(self):
        assert sigmoid(0.0) == 0.5

    def test_flat_students_answer_at_chance(self):
        cfg = SynthConfig(n_students=100, learning_rate=0.0, ability_std=0.0, difficulty_std=0.0, seed=1)
        seqs, truth = generate_kt(cfg, return_truth=True)
        assert all(p == 0.5 for t in truth for p in t)
        y = np.array([x.correct for s in seqs for x in s.interactions])
        sigma = math.sqrt(0.25 / y.size)
        assert abs(y.mean() - 0.5) < 3 * sigma

    def test_deterministic(self):
        cfg = SynthConfig(n_students=20)
        assert generate_kt(cfg) == generate_kt(cfg)
        assert generate_kt(cfg) != generate_kt(SynthConfig(n_students=20, seed=8))

    def test_oracle_scores_are_separable(self):
        seqs, truth = generate_kt(SynthConfig(), return_truth=True)
        y = [x.correct for s in seqs for x in s.interactions]
        p = [v for t in truth for v in t]
        assert auc(p, y) > 0.75

    def test_ability_grows_with_correct_answers(self):
        cfg = SynthConfig(n_students=1, n_items=1, difficulty_std=0.0, ability_std=0.0, learning_rate=0.3)
        seqs, truth = generate_kt(cfg, return_truth=True)
        ys = [x.correct for x in seqs[0].interactions]
        for k in range(1, len(ys)):
            assert truth[0][k] == pytest.approx(sigmoid(0.3 * sum(ys[:k])))

    def test_lengths_and_items(self):
        cfg = SynthConfig(n_students=30, min_len=5, max_len=9, n_items=4)
        for s in generate_kt(cfg):
            assert 5 <= len(s) <= 9
            assert all(0 <= x.item_id < 4 for x in s.interactions)

    def test_invalid(self):
        with pytest.raises(SaiclError):
            SynthConfig(n_students=0)
        with pytest.raises(SaiclError):
            SynthConfig(ability_std=-1)


class TestDP:
    def test_zero_hazard_never_drops(self):
        seqs = generate_dp(SynthConfig(n_students=50, hazard=0.0, activity_prob=1.0))
        assert {s.sequence_label for s in seqs} == {0}

    def test_infinite_hazard_always_drops(self):
        seqs = generate_dp(SynthConfig(n_students=50, hazard=math.inf))
        assert {s.sequence_label for s in seqs} == {1}

    def test_prevalence_matches_survival(self):
        cfg = SynthConfig(n_students=1000, hazard=0.03, activity_prob=0.7, seed=3)
        y = np.array([s.sequence_label for s in generate_dp(cfg)])
        p = dropout_probability(cfg)
        assert 0.05 < p < 0.95
        assert abs(y.mean() - p) < 3 * math.sqrt(p * (1 - p) / y.size)

    def test_survival_formula_against_enumeration(self):
        # integrate over the quit time by brute force on a fine grid
        cfg = SynthConfig(hazard=0.05, activity_prob=0.6, history_days=5, prediction_days=3)
        h, a = cfg.hazard, cfg.activity_prob
        step = 1e-3
        total = 0.0
        for k in range(int(40 / step)):
            T = (k + 0.5) * step
            alive = sum(1 for d in range(5, 8) if d < T)
            total += h * math.exp(-h * T) * step * (1 - a) ** alive
        total += math.exp(-h * 40) * (1 - a) ** 3
        assert dropout_probability(cfg) == pytest.approx(total, abs=1e-5)

    def test_conditional_has_next_items_and_correctness(self):
        task = TaskKind("CondDP", 30, 7)
        seqs = generate_dp(SynthConfig(n_students=60, hazard=0.03), task)
        for s in seqs:
            assert (s.next_item is not None) == (s.sequence_label == 0)
            assert all(x.correct in (0, 1) for x in s.interactions)
            assert set(s.interactions[0].continuous_features) == {"lag_ms", "elapsed_ms"}

    def test_first_event_starts_day_zero(self):
        for s in generate_dp_events(SynthConfig(n_students=10)):
            assert s.interactions[0].continuous_features["lag_ms"] == 0.0

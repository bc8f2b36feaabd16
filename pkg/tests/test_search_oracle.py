import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import beam_search
from beam_types import InputError, SearchConfig, Strategy, TieBreak
from beam_search import CONTINUE, RevisedScorer, StopReason, StoppingDecision, decode
from scoring_models import load_model
from search_oracle import (
    beam_trace,
    check_certificate_soundness,
    check_criterion_equivalence,
    enumerate_completions,
    exhaustive_best,
    is_completed_subset,
    verify_optimality,
)


def flipped_stop_optimal(beam, tracker):
    """Critère cassé : inégalité inversée."""
    if tracker.best is not None and beam.top.score > tracker.best_key:
        return StoppingDecision(True, StopReason.CERTIFICATE, tracker.best)
    return CONTINUE


def test_enumerate_completions_counts_eos_in_length(stationary):
    found = {h.tokens for h in enumerate_completions(stationary, (), 2)}
    assert found == {(2,), (0, 2), (1, 2)}


def test_exhaustive_best_on_stationary_model(stationary):
    best = exhaustive_best(stationary, (), 5)
    assert best.tokens == (2,)
    assert best.score == pytest.approx(math.log(0.1))
    assert exhaustive_best(stationary, (), 5, prune=False) == best


def test_exhaustive_best_with_revised_scorer(gap_model):
    best = exhaustive_best(gap_model, (0, 0), 3, scorer=RevisedScorer(0.5, 2.0))
    assert best.tokens == (0, 0, 2)
    with pytest.raises(InputError):
        exhaustive_best(gap_model, (), 0)


@settings(deadline=None, max_examples=40)
@given(st.integers(2, 4), st.integers(0, 10_000), st.integers(1, 4),
       st.sampled_from([0.0, 0.5, 1.2]), st.sampled_from(list(TieBreak)))
def test_pruning_never_changes_the_exhaustive_answer(v, seed, max_len, reward, tie_break):
    model = load_model(f"seeded:v={v},seed={seed}")
    source = (0, v - 2)
    scorer = RevisedScorer(reward, 1.27 * len(source))
    pruned = exhaustive_best(model, source, max_len, scorer=scorer, tie_break=tie_break)
    full = exhaustive_best(model, source, max_len, scorer=scorer, prune=False, tie_break=tie_break)
    assert pruned == full
    best_key = max(scorer(h) for h in enumerate_completions(model, source, max_len))
    assert scorer(pruned) == best_key


def test_stationary_trace_matches_hand_trace(stationary):
    report = beam_trace(stationary, (), 3, 10)
    assert report.first_fire["optimal"] == 5
    assert report.first_fire["default"] is None
    assert report.top_scores[:5] == pytest.approx([k * math.log(0.6) for k in range(1, 6)])
    assert report.expanded_until(5) == 36
    assert report.expanded_until(None) == 81
    assert report.completed_tokens() == {(2,)}
    assert report.max_plain() == pytest.approx(math.log(0.1))
    assert report.fire_hypotheses["optimal"].tokens == (2,)


def test_gap_trace_records_both_firings(gap_model):
    report = beam_trace(gap_model, (), 2, 10)
    assert report.first_fire["optimal"] == 2
    assert report.first_fire["default"] == 3
    assert report.fire_hypotheses["default"].tokens == (0, 0, 2)
    assert check_certificate_soundness(report)


def test_trace_superset_fails_in_general_but_exhaustive_contains_all(superset_model):
    narrow = beam_trace(superset_model, (), 1, 2)
    wide = beam_trace(superset_model, (), 2, 2)
    exhaustive = beam_trace(superset_model, (), 3 ** 2, 2)
    assert narrow.completed_tokens() == {(0, 2)}
    assert wide.completed_tokens() == set()
    assert not is_completed_subset(narrow, wide)
    assert is_completed_subset(narrow, exhaustive)
    assert is_completed_subset(wide, exhaustive)


@settings(deadline=None, max_examples=40)
@given(st.integers(2, 4), st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 6))
def test_every_trace_is_inside_the_exhaustive_trace(v, seed, max_steps, b):
    model = load_model(f"seeded:v={v},seed={seed}")
    source = (0, 0)
    exhaustive = beam_trace(model, source, v ** max_steps, max_steps)
    report = beam_trace(model, source, b, max_steps)
    assert is_completed_subset(report, exhaustive)
    assert exhaustive.completed_tokens() == {
        h.tokens for h in enumerate_completions(model, source, max_steps)}


def test_verify_optimality_passes_on_fixtures(stationary, gap_model, flip_model):
    for model in (stationary, gap_model, flip_model):
        for strategy in (Strategy.OPTIMAL, Strategy.OPTIMAL_BOUNDED_SIMPLIFIED,
                         Strategy.OPTIMAL_BOUNDED_FULL):
            verdict = verify_optimality(model, (0, 0), SearchConfig(
                beam_size=2, strategy=strategy, reward=0.5, max_steps=8))
            assert verdict.passed, verdict.to_dict()


def test_bounded_search_may_stop_after_the_default_criterion(flip_model):
    # a eos gagne le bonus de longueur à l'étape 2, le critère simplifié attend l'étape 3
    bounded = verify_optimality(flip_model, (0, 0), SearchConfig(
        beam_size=2, strategy=Strategy.OPTIMAL_BOUNDED_SIMPLIFIED, reward=0.5, max_steps=8))
    assert bounded.default_fire_step == 2
    assert bounded.stop_step > bounded.default_fire_step
    assert bounded.stop_no_later is None
    assert bounded.score_equal
    assert bounded.passed
    assert bounded.decoded_score == pytest.approx(math.log(0.5 * 0.9) + 0.5)

    optimal = verify_optimality(flip_model, (0, 0), SearchConfig(beam_size=2, max_steps=8))
    assert optimal.stop_no_later is True
    assert optimal.stop_step == 2
    assert optimal.passed


def test_verify_optimality_rejects_shrinking_strategies(stationary):
    with pytest.raises(InputError):
        verify_optimality(stationary, (), SearchConfig(strategy=Strategy.SHRINK_LENNORM))


def test_broken_criterion_is_caught(flip_model, monkeypatch):
    monkeypatch.setattr(beam_search, "stop_optimal", flipped_stop_optimal)
    verdict = verify_optimality(flip_model, (), SearchConfig(beam_size=2, max_steps=10))
    assert not verdict.passed
    assert verdict.decoded_score == pytest.approx(math.log(0.4))
    assert verdict.trace_max == pytest.approx(math.log(0.5 * 0.9))
    assert verdict.gap > 0


def test_completed_top_divergence_has_predicted_slack(gap_model, caplog):
    source = (0, 0)
    report = beam_trace(gap_model, source, 2, 10, reward=0.5, length_ratio=1.5)
    assert report.l == 3.0
    with caplog.at_level(logging.INFO, logger="search_oracle"):
        check = check_criterion_equivalence(report)
    assert check.full_step == 3
    assert check.simplified_step == 4
    assert check.diverged and check.top_completed
    assert check.measured_slack == pytest.approx(0.5)
    assert check.predicted_slack == pytest.approx(0.5)
    assert check.passed
    assert any("Divergence" in record.getMessage() for record in caplog.records)

    for strategy, step in ((Strategy.OPTIMAL_BOUNDED_FULL, 3), (Strategy.OPTIMAL_BOUNDED_SIMPLIFIED, 4)):
        result = decode(gap_model, source, SearchConfig(
            beam_size=2, strategy=strategy, reward=0.5, length_ratio=1.5, max_steps=10))
        assert result.hypothesis.tokens == (0, 0, 2)
        assert result.stop_step == step


def test_bounded_criteria_coincide_once_length_is_reached(gap_model):
    report = beam_trace(gap_model, (0, 0), 2, 10, reward=0.5, length_ratio=1.0)
    check = check_criterion_equivalence(report)
    assert check.full_step == check.simplified_step == 3
    assert not check.diverged
    assert check.passed


def test_global_optimality_with_exhaustive_beam():
    rng = np.random.default_rng(7)
    for _ in range(50):
        seed = int(rng.integers(0, 2 ** 31))
        model = load_model(f"seeded:v=3,seed={seed}")
        source = tuple(int(t) for t in rng.integers(0, 2, size=int(rng.integers(1, 5))))
        result = decode(model, source, SearchConfig(beam_size=3 ** 5, max_steps=5))
        best = exhaustive_best(model, source, 5)
        assert result.completed
        assert result.plain_score == pytest.approx(best.score, abs=1e-9)
        assert result.hypothesis.tokens == best.tokens


@settings(deadline=None, max_examples=60)
@given(st.integers(2, 5), st.integers(0, 10_000), st.integers(1, 6), st.integers(3, 8),
       st.sampled_from([0.3, 1.0, 1.2]), st.sampled_from([0.8, 1.27]))
def test_certificates_are_sound_and_match_the_trace(v, seed, b, max_steps, reward, ratio):
    model = load_model(f"seeded:v={v},seed={seed}")
    source = (0, v - 2, 0)
    report = beam_trace(model, source, b, max_steps, reward=reward, length_ratio=ratio)
    assert check_certificate_soundness(report, "optimal")
    assert check_certificate_soundness(report, "optimal_bounded_simplified")
    assert check_criterion_equivalence(report).passed

    default_step = report.first_fire["default"]
    optimal_step = report.first_fire["optimal"]
    if default_step is not None:
        assert optimal_step is not None and optimal_step <= default_step

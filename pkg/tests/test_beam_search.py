import math

import pytest
from hypothesis import given, settings, strategies as st

from beam_types import (
    Beam,
    BestTracker,
    ContractViolation,
    Hypothesis,
    InputError,
    SearchConfig,
    Strategy,
    TieBreak,
    initial_hypothesis,
)
from beam_search import (
    StopReason,
    beam_step,
    decode,
    estimate_length,
    evaluate_stop,
    full_criterion_bound,
    greedy_decode,
    length_normalized,
    revised_score,
    shrinking_decode,
    simplified_criterion_bound,
    unbounded_reward,
)
from scoring_models import load_model

LN_01 = math.log(0.1)


def config(strategy, b, max_steps=10, reward=0.0, ratio=1.0, tie_break=TieBreak.LEXICOGRAPHIC):
    return SearchConfig(beam_size=b, strategy=strategy, reward=reward, length_ratio=ratio,
                        max_steps=max_steps, tie_break=tie_break)


def test_stationary_hand_trace_optimal(stationary):
    result = decode(stationary, (), config(Strategy.OPTIMAL, 3))
    assert result.hypothesis.tokens == (stationary.vocab.eos,)
    assert result.plain_score == pytest.approx(LN_01, abs=1e-9)
    assert result.plain_score == pytest.approx(-2.302585, abs=1e-6)
    assert result.stop_step == 5
    assert result.items_expanded == 36
    assert result.completed
    assert result.reason is StopReason.CERTIFICATE


def test_stationary_hand_trace_default_falls_back(stationary):
    result = decode(stationary, (), config(Strategy.DEFAULT, 3))
    assert result.hypothesis.tokens == (stationary.vocab.eos,)
    assert result.plain_score == pytest.approx(LN_01, abs=1e-9)
    assert result.stop_step == 10
    assert result.items_expanded == 81
    assert result.reason is StopReason.MAX_STEPS


def test_first_beams_of_the_stationary_trace(stationary):
    beam = Beam(step=0, items=(initial_hypothesis(),), capacity=3)
    first = beam_step(stationary, (), beam, 3)
    assert [h.tokens for h in first.beam.items] == [(0,), (1,), (2,)]
    assert [h.score for h in first.beam.items] == pytest.approx([-0.5108256, -1.2039728, -2.3025851])
    assert [h.tokens for h in first.completed] == [(2,)]
    assert first.scored == 3

    second = beam_step(stationary, (), first.beam, 3)
    assert [h.tokens for h in second.beam.items] == [(0, 0), (0, 1), (1, 0)]
    assert second.scored == 6
    assert second.completed == ()

    revlex = beam_step(stationary, (), first.beam, 3, TieBreak.REVERSE_LEXICOGRAPHIC)
    assert [h.tokens for h in revlex.beam.items] == [(0, 0), (1, 0), (0, 1)]


def test_beam_step_never_expands_completed_items(stationary):
    completed_only = Beam(step=1, items=(Hypothesis((2,), LN_01, True, 1),),
                          capacity=3)
    with pytest.raises(ContractViolation):
        beam_step(stationary, (), completed_only, 3)


def test_strict_gap_between_optimal_and_default(gap_model):
    eos = gap_model.vocab.eos
    optimal = decode(gap_model, (), config(Strategy.OPTIMAL, 2))
    default = decode(gap_model, (), config(Strategy.DEFAULT, 2))

    assert optimal.hypothesis.tokens == (eos,)
    assert optimal.plain_score == pytest.approx(math.log(0.4), abs=1e-9)
    assert optimal.stop_step == 2
    assert optimal.items_expanded == 6

    assert default.hypothesis.tokens == (0, 0, eos)
    assert default.plain_score == pytest.approx(math.log(0.5 * 0.5 * 0.8), abs=1e-9)
    assert default.stop_step == 3
    assert default.items_expanded == 9
    assert default.reason is StopReason.DEFAULT_TOP_COMPLETED

    assert optimal.plain_score > default.plain_score


def test_bounded_reward_prefers_the_longer_completion(gap_model):
    eos = gap_model.vocab.eos
    for strategy in (Strategy.OPTIMAL_BOUNDED_SIMPLIFIED, Strategy.OPTIMAL_BOUNDED_FULL):
        result = decode(gap_model, (0, 0), config(strategy, 2, reward=0.5))
        assert result.hypothesis.tokens == (0, 0, eos)
        assert result.length_estimate == 2.0
        assert result.revised_score == pytest.approx(math.log(0.2) + 1.0, abs=1e-9)
        assert result.stop_step == 3


def test_reward_zero_bounded_equals_optimal(gap_model, stationary):
    for model in (gap_model, stationary):
        plain = decode(model, (0,), config(Strategy.OPTIMAL, 3))
        for strategy in (Strategy.OPTIMAL_BOUNDED_FULL, Strategy.OPTIMAL_BOUNDED_SIMPLIFIED):
            bounded = decode(model, (0,), config(strategy, 3, reward=0.0))
            assert bounded.hypothesis == plain.hypothesis
            assert bounded.revised_score == plain.plain_score
            assert bounded.stop_step == plain.stop_step
            assert bounded.items_expanded == plain.items_expanded


def test_shrinking_beam_length_normalization(gap_model):
    eos = gap_model.vocab.eos
    result = decode(gap_model, (), config(Strategy.SHRINK_LENNORM, 2))
    assert result.reason is StopReason.SHRUNK_TO_ZERO
    assert result.stop_step == 3
    assert result.items_expanded == 9
    # log(0.2)/2 > log(0.4)/1
    assert result.hypothesis.tokens == (0, 0, eos)


def test_shrinking_beam_unbounded_reward(gap_model):
    eos = gap_model.vocab.eos
    rewarded = decode(gap_model, (), config(Strategy.SHRINK_REWARD, 2, reward=1.0))
    assert rewarded.hypothesis.tokens == (0, 0, eos)
    plain = decode(gap_model, (), config(Strategy.SHRINK_REWARD, 2, reward=0.0))
    assert plain.hypothesis.tokens == (eos,)


def test_shrinking_beam_keeps_pool_on_max_steps(stationary):
    result = decode(stationary, (), config(Strategy.SHRINK_LENNORM, 3))
    assert result.reason is StopReason.MAX_STEPS
    assert result.hypothesis.tokens == (stationary.vocab.eos,)
    assert result.completed


def test_shrinking_beam_stops_when_nothing_is_left_to_expand():
    model = load_model("table:eos_only,0.0,1.0")
    result = decode(model, (), config(Strategy.SHRINK_LENNORM, 2))
    assert result.reason is StopReason.EXHAUSTED
    assert result.hypothesis.tokens == (model.vocab.eos,)
    with pytest.raises(InputError):
        shrinking_decode(model, (), config(Strategy.OPTIMAL, 2))
    with pytest.raises(InputError):
        shrinking_decode(model, (), config(Strategy.SHRINK_LENNORM, 2), rescorer="bleu")


def test_rescorers():
    h = Hypothesis((0, 1, 2), -3.0, True, 3)
    assert length_normalized(h) == -1.5
    assert unbounded_reward(h, 0.5) == -2.0
    eos_only = Hypothesis((2,), -1.0, True, 1)
    assert length_normalized(eos_only) == -1.0


def test_single_symbol_vocabulary_returns_eos():
    model = load_model("seeded:v=1,seed=1")
    for strategy in (Strategy.OPTIMAL, Strategy.DEFAULT, Strategy.OPTIMAL_BOUNDED_SIMPLIFIED):
        result = decode(model, (0,), config(strategy, 3, reward=1.0))
        assert result.hypothesis.tokens == (0,)
        assert result.plain_score == 0.0
        assert result.stop_step == 1


def test_source_conditioned_models_reject_bad_sources():
    model = load_model("seeded:v=4,seed=2")
    with pytest.raises(InputError):
        decode(model, (), config(Strategy.OPTIMAL, 2))
    with pytest.raises(InputError):
        decode(model, (0, 9), config(Strategy.OPTIMAL, 2))


def test_source_agnostic_models_accept_empty_source(stationary):
    result = decode(stationary, (), config(Strategy.OPTIMAL_BOUNDED_SIMPLIFIED, 3, reward=1.0))
    assert result.length_estimate == 0.0
    assert result.revised_score == result.plain_score


def test_length_estimate_is_not_rounded():
    assert estimate_length(3, 1.27).l == pytest.approx(3.81)
    assert estimate_length(0, 1.27).l == 0.0
    with pytest.raises(InputError):
        estimate_length(3, 0.0)


def test_revised_score_caps_the_reward():
    assert revised_score(-2.0, 5, 0.5, 3.0) == -0.5
    assert revised_score(-2.0, 1, 0.5, 3.0) == -1.5
    assert revised_score(-2.0, 4, 0.0, 3.0) == -2.0


def test_bounded_criteria_differ_by_the_predicted_slack():
    completed = Hypothesis((0, 1, 2), -2.0, True, 3)
    partial = Hypothesis((0, 1, 1), -2.0, False, 3)
    l, r = 5.0, 1.0
    # Sommet partiel : les deux membres gauches coïncident
    assert full_criterion_bound(partial, 3, r, l) == simplified_criterion_bound(partial, r, l)
    # Sommet complété : écart r·(l - min{l,|y|} - max{l-i,0}) = 1
    assert simplified_criterion_bound(completed, r, l) - full_criterion_bound(completed, 3, r, l) == 1.0


def test_evaluate_stop_rejects_shrinking_strategies(stationary):
    beam = Beam(step=0, items=(initial_hypothesis(),), capacity=1)
    length = estimate_length(0, 1.0)
    with pytest.raises(ContractViolation):
        evaluate_stop(Strategy.SHRINK_LENNORM, beam, BestTracker(), 0.0, length)


def test_reward_warning_is_logged_at_debug(stationary, caplog):
    with caplog.at_level("DEBUG", logger="beam_search"):
        decode(stationary, (), config(Strategy.DEFAULT, 2, reward=1.0))
    assert any("ignoré" in record.getMessage() for record in caplog.records)


@settings(deadline=None, max_examples=60)
@given(st.integers(2, 6), st.integers(0, 10_000), st.integers(1, 12))
def test_beam_of_one_is_greedy(v, seed, max_steps):
    model = load_model(f"seeded:v={v},seed={seed}")
    source = (0, v - 2, 0)
    greedy = greedy_decode(model, source, max_steps)
    for strategy in (Strategy.DEFAULT, Strategy.OPTIMAL):
        result = decode(model, source, config(strategy, 1, max_steps=max_steps))
        assert result.hypothesis.tokens == greedy.tokens
        assert result.plain_score == greedy.score


@settings(deadline=None, max_examples=80)
@given(st.integers(2, 6), st.integers(0, 10_000), st.integers(1, 6), st.integers(2, 9))
def test_optimal_dominates_default_and_stops_no_later(v, seed, b, max_steps):
    model = load_model(f"seeded:v={v},seed={seed}")
    source = (0, 0, v - 2)
    optimal = decode(model, source, config(Strategy.OPTIMAL, b, max_steps=max_steps))
    default = decode(model, source, config(Strategy.DEFAULT, b, max_steps=max_steps))
    assert optimal.plain_score >= default.plain_score
    assert optimal.stop_step <= default.stop_step
    assert optimal.items_expanded <= default.items_expanded


@settings(deadline=None, max_examples=60)
@given(st.integers(2, 6), st.integers(0, 10_000), st.integers(1, 6),
       st.sampled_from([0.3, 1.0, 1.2]), st.sampled_from([0.8, 1.27]))
def test_revised_score_invariant(v, seed, b, reward, ratio):
    model = load_model(f"seeded:v={v},seed={seed}")
    source = (0, v - 2)
    result = decode(model, source, config(Strategy.OPTIMAL_BOUNDED_SIMPLIFIED, b, reward=reward,
                                          ratio=ratio))
    l = ratio * len(source)
    assert result.length_estimate == l
    assert result.revised_score == result.plain_score + reward * min(l, result.length)

#!/usr/bin/env python3
"""
Recherche en faisceau et critères d'arrêt.

Ce module contient la boucle de recherche et toutes les stratégies d'arrêt :
le critère par défaut (arrêt quand le sommet du faisceau est complété), le faisceau qui
rétrécit (normalisation par la longueur ou récompense non bornée), le
certificat d'optimalité, et sa variante avec récompense de longueur bornée.

Fonctionnalités :
- Expansion d'un faisceau (beam_step), hypothèses complétées jamais ré-étendues
- Certificat d'optimalité : arrêt dès que le sommet du faisceau ne dépasse
  plus le meilleur complété
- Récompense bornée : score révisé = score + r·min{l, |y|}, critères complet et simplifié
- Estimation de la longueur optimale l = ratio·|x| (jamais arrondie)
- Faisceau qui rétrécit avec re-score du pool de complétés
- Repli déterministe quand aucun critère ne se déclenche
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from beam_types import (
    Beam,
    BestTracker,
    ContractViolation,
    DecodeResult,
    Hypothesis,
    InputError,
    Scorer,
    SearchConfig,
    Strategy,
    TieBreak,
    TokenId,
    best_update,
    extend,
    initial_hypothesis,
    top_k,
)
from scoring_models import ScoringModel

logger = logging.getLogger(__name__)


class StopReason(str, Enum):
    """Raison de l'arrêt de la recherche."""

    CERTIFICATE = 'certificate'
    DEFAULT_TOP_COMPLETED = 'default_top_completed'
    SHRUNK_TO_ZERO = 'shrunk_to_zero'
    MAX_STEPS = 'max_steps'
    EXHAUSTED = 'exhausted'


@dataclass(frozen=True)
class StoppingDecision:
    stop: bool
    reason: Optional[StopReason] = None
    hypothesis: Optional[Hypothesis] = None


CONTINUE = StoppingDecision(stop=False)


@dataclass(frozen=True)
class LengthEstimate:
    """Longueur optimale estimée l (en tokens, réelle)."""

    l: float


def estimate_length(source_len: int, ratio: float) -> LengthEstimate:
    """l = ratio × |x|, gardé réel."""
    if source_len < 0:
        raise InputError(f"Longueur de source négative: {source_len}")
    if not ratio > 0:
        raise InputError(f"Ratio de longueur invalide: {ratio}")
    return LengthEstimate(ratio * source_len)


def revised_score(sc: float, length: int, reward: float, l: float) -> float:
    """Score révisé avec récompense de longueur bornée : sc + r·min{l, |y|}."""
    if reward < 0:
        raise ContractViolation(f"Récompense négative: {reward}")
    return sc + reward * min(l, length)


def plain_scorer(h: Hypothesis) -> float:
    return h.score


@dataclass(frozen=True)
class RevisedScorer:
    reward: float
    l: float

    def __call__(self, h: Hypothesis) -> float:
        return revised_score(h.score, h.length, self.reward, self.l)


def make_scorer(strategy: Strategy, reward: float, l: float) -> Scorer:
    """Score actif du suivi du meilleur : révisé pour les stratégies bornées."""
    if strategy.is_bounded:
        return RevisedScorer(reward, l)
    return plain_scorer


# ---------------------------------------------------------------------------
# Expansion
# ---------------------------------------------------------------------------

class StepResult(NamedTuple):
    beam: Beam
    completed: Tuple[Hypothesis, ...]
    scored: int


def beam_step(model: ScoringModel, source: Sequence[TokenId], beam: Beam, width: int,
              tie_break: TieBreak = TieBreak.LEXICOGRAPHIC) -> StepResult:
    """
    Forme le faisceau suivant à partir des hypothèses partielles du faisceau courant.

    Les hypothèses complétées ne sont ni étendues ni réinsérées. Les candidats
    qui viennent de produire eos concourent pour une place et sont renvoyés dans
    `completed` s'ils en obtiennent une. Les candidats de score -inf sont écartés.
    """
    partials = beam.partial_items
    if not partials:
        raise ContractViolation(f"Faisceau {beam.step} sans hypothèse partielle à étendre")
    if width < 1:
        raise ContractViolation(f"Largeur invalide: {width}")

    eos = model.vocab.eos
    candidates: List[Hypothesis] = []
    scored = 0
    for h in partials:
        logp = model.next_logprobs(source, h.tokens)
        scored += logp.size
        scores = h.score + logp
        finite = np.flatnonzero(np.isfinite(scores))
        if finite.size == 0:
            continue
        # Seuls les `width` meilleurs fils d'un même parent peuvent survivre
        secondary = -finite if tie_break is TieBreak.REVERSE_LEXICOGRAPHIC else finite
        keep = finite[np.lexsort((secondary, -scores[finite]))][:width]
        candidates.extend(extend(h, int(t), float(logp[t]), eos) for t in keep)

    new_beam = top_k(candidates, width, tie_break, step=beam.step + 1)
    return StepResult(new_beam, new_beam.completed_items, scored)


# ---------------------------------------------------------------------------
# Critères d'arrêt
# ---------------------------------------------------------------------------

def stop_default(beam: Beam) -> StoppingDecision:
    """Critère par défaut : arrêt quand le sommet du faisceau est complété, qui est retourné."""
    if not beam.items:
        raise ContractViolation("stop_default sur un faisceau vide")
    if beam.top.completed:
        return StoppingDecision(True, StopReason.DEFAULT_TOP_COMPLETED, beam.top)
    return CONTINUE


def stop_optimal(beam: Beam, tracker: BestTracker) -> StoppingDecision:
    """Certificat d'optimalité : score du sommet <= score du meilleur complété."""
    if tracker.best is not None and beam.top.score <= tracker.best_key:
        return StoppingDecision(True, StopReason.CERTIFICATE, tracker.best)
    return CONTINUE


def full_criterion_bound(top: Hypothesis, step: int, reward: float, l: float) -> float:
    """Membre gauche du critère complet : score révisé du sommet + r·max{l - i, 0}."""
    return revised_score(top.score, top.length, reward, l) + reward * max(l - step, 0.0)


def simplified_criterion_bound(top: Hypothesis, reward: float, l: float) -> float:
    """Membre gauche du critère simplifié : score du sommet + r·l."""
    return top.score + reward * l


def stop_bounded_full(beam: Beam, step: int, reward: float, length: LengthEstimate,
                      tracker: BestTracker) -> StoppingDecision:
    if tracker.best is not None and \
            full_criterion_bound(beam.top, step, reward, length.l) <= tracker.best_key:
        return StoppingDecision(True, StopReason.CERTIFICATE, tracker.best)
    return CONTINUE


def stop_bounded_simplified(beam: Beam, reward: float, length: LengthEstimate,
                            tracker: BestTracker) -> StoppingDecision:
    """Critère de production de la récompense bornée."""
    if tracker.best is not None and \
            simplified_criterion_bound(beam.top, reward, length.l) <= tracker.best_key:
        return StoppingDecision(True, StopReason.CERTIFICATE, tracker.best)
    return CONTINUE


def evaluate_stop(strategy: Strategy, beam: Beam, tracker: BestTracker,
                  reward: float, length: LengthEstimate) -> StoppingDecision:
    """Applique le critère de la stratégie au faisceau de l'étape i (tracker déjà à jour)."""
    if strategy is Strategy.DEFAULT:
        return stop_default(beam)
    if strategy is Strategy.OPTIMAL:
        return stop_optimal(beam, tracker)
    if strategy is Strategy.OPTIMAL_BOUNDED_SIMPLIFIED:
        return stop_bounded_simplified(beam, reward, length, tracker)
    if strategy is Strategy.OPTIMAL_BOUNDED_FULL:
        decision = stop_bounded_full(beam, beam.step, reward, length, tracker)
        if decision.stop and beam.top.completed and \
                not stop_bounded_simplified(beam, reward, length, tracker).stop:
            logger.info(
                "Critère complet déclenché seul à l'étape %d (sommet complété, écart %.6g)",
                beam.step,
                simplified_criterion_bound(beam.top, reward, length.l)
                - full_criterion_bound(beam.top, beam.step, reward, length.l),
            )
        return decision
    raise ContractViolation(f"Stratégie sans critère de certificat: {strategy.value}")


# ---------------------------------------------------------------------------
# Décodage
# ---------------------------------------------------------------------------

def check_source(model: ScoringModel, source: Sequence[TokenId]) -> Tuple[TokenId, ...]:
    source = tuple(source)
    if model.source_agnostic:
        return source
    if not source:
        raise InputError("Source vide pour un modèle qui dépend de la source")
    model.vocab.check(source)
    return source


def _result(h: Hypothesis, config: SearchConfig, l: float, stop_step: int,
            expanded: int, reason: StopReason) -> DecodeResult:
    reward = config.active_reward
    return DecodeResult(
        hypothesis=h,
        plain_score=h.score,
        revised_score=revised_score(h.score, h.length, reward, l),
        stop_step=stop_step,
        items_expanded=expanded,
        completed=h.completed,
        strategy=config.strategy,
        config=config,
        reason=reason,
        length_estimate=l,
    )


def decode(model: ScoringModel, source: Sequence[TokenId], config: SearchConfig) -> DecodeResult:
    """
    Décode une source avec la stratégie configurée.

    À chaque étape i : former le faisceau, mettre à jour le meilleur complété avec les
    hypothèses complétées du faisceau, puis évaluer le critère d'arrêt. Sans
    déclenchement avant max_steps, retourne le meilleur complété s'il existe,
    sinon la meilleure partielle du dernier faisceau (completed=False).
    """
    if config.strategy.is_shrinking:
        return shrinking_decode(model, source, config)

    source = check_source(model, source)
    for warning in config.warnings():
        logger.debug(warning)
    length = estimate_length(len(source), config.length_ratio)
    reward = config.active_reward
    scorer = make_scorer(config.strategy, reward, length.l)

    beam = Beam(step=0, items=(initial_hypothesis(),), capacity=config.beam_size)
    tracker = BestTracker()
    expanded = 0
    reason = StopReason.MAX_STEPS
    for _ in range(config.max_steps):
        outcome = beam_step(model, source, beam, config.beam_size, config.tie_break)
        expanded += outcome.scored
        if not outcome.beam.items:
            reason = StopReason.EXHAUSTED
            break
        beam = outcome.beam
        for h in outcome.completed:
            tracker = best_update(tracker, h, scorer)

        decision = evaluate_stop(config.strategy, beam, tracker, reward, length)
        if decision.stop:
            return _result(decision.hypothesis, config, length.l, beam.step, expanded,
                           decision.reason)
        if not beam.partial_items:
            reason = StopReason.EXHAUSTED
            break

    logger.debug("Repli (%s) à l'étape %d, meilleur défini: %s",
                 reason.value, beam.step, tracker.defined)
    fallback = tracker.best if tracker.best is not None else beam.partial_items[0]
    return _result(fallback, config, length.l, beam.step, expanded, reason)


def length_normalized(h: Hypothesis) -> float:
    """score / |y| ; |y| vaut au moins 1 pour l'hypothèse réduite à eos."""
    return h.score / max(h.length, 1)


def unbounded_reward(h: Hypothesis, reward: float) -> float:
    """score + r·|y|, sans borne sur la longueur."""
    return h.score + reward * h.length


def shrinking_decode(model: ScoringModel, source: Sequence[TokenId], config: SearchConfig,
                     rescorer: Optional[str] = None) -> DecodeResult:
    """
    Faisceau qui rétrécit : chaque hypothèse complétée entrant dans un faisceau
    part dans le pool et la largeur diminue de un ; arrêt à largeur 0.

    Args:
        rescorer: 'length_norm' ou 'unbounded_reward' (déduit de la stratégie par défaut)

    Returns:
        DecodeResult: argmax du pool sous le re-score, ou meilleure partielle si pool vide
    """
    if not config.strategy.is_shrinking:
        raise InputError(f"Stratégie non compatible avec le faisceau qui rétrécit: "
                         f"{config.strategy.value}")
    if rescorer is None:
        rescorer = 'length_norm' if config.strategy is Strategy.SHRINK_LENNORM \
            else 'unbounded_reward'
    if rescorer == 'length_norm':
        rescore = length_normalized
    elif rescorer == 'unbounded_reward':
        def rescore(h: Hypothesis) -> float:
            return unbounded_reward(h, config.reward)
    else:
        raise InputError(f"Re-score inconnu: {rescorer}")

    source = check_source(model, source)
    for warning in config.warnings():
        logger.debug(warning)
    length = estimate_length(len(source), config.length_ratio)

    width = config.beam_size
    beam = Beam(step=0, items=(initial_hypothesis(),), capacity=width)
    pool: List[Hypothesis] = []
    expanded = 0
    reason = StopReason.MAX_STEPS
    for _ in range(config.max_steps):
        outcome = beam_step(model, source, beam, width, config.tie_break)
        expanded += outcome.scored
        if not outcome.beam.items:
            reason = StopReason.EXHAUSTED
            break
        pool.extend(outcome.completed)
        width -= len(outcome.completed)
        partials = outcome.beam.partial_items
        if width <= 0:
            beam = outcome.beam
            reason = StopReason.SHRUNK_TO_ZERO
            break
        if not partials:
            beam = outcome.beam
            reason = StopReason.EXHAUSTED
            break
        beam = Beam(step=outcome.beam.step, items=partials, capacity=width)

    if pool:
        best = pool[0]
        best_key = rescore(best)
        for h in pool[1:]:
            key = rescore(h)
            if key > best_key:
                best, best_key = h, key
    else:
        best = beam.partial_items[0]
    return _result(best, config, length.l, beam.step, expanded, reason)


def greedy_decode(model: ScoringModel, source: Sequence[TokenId], max_steps: int) -> Hypothesis:
    """Décodage glouton de référence (plus petit identifiant en cas d'égalité)."""
    h = initial_hypothesis()
    eos = model.vocab.eos
    for _ in range(max_steps):
        logp = model.next_logprobs(source, h.tokens)
        t = int(np.argmax(logp))
        if math.isinf(logp[t]):
            break
        h = extend(h, t, float(logp[t]), eos)
        if h.completed:
            break
    return h

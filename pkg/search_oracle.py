#!/usr/bin/env python3
"""
Oracles de force brute pour vérifier la recherche en faisceau.

Ce module rend les garanties de la recherche vérifiables : un maximiseur
exhaustif global (sans limite de faisceau) et une trace de faisceau qui
enregistre toutes les hypothèses complétées vues dans un faisceau
(l'optimalité "modulo la taille du faisceau").

Fonctionnalités :
- Énumération exhaustive en profondeur avec élagage admissible (exhaustive_best)
- Trace complète d'un faisceau sans arrêt, avec les étapes où chaque critère
  se serait déclenché (beam_trace)
- Verdict d'optimalité d'un décodage (verify_optimality), sérialisable en JSONL
- Comparaison pas à pas des critères borné complet / simplifié
- Vérification de la solidité du certificat après son déclenchement
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from beam_types import (
    SCORE_TOLERANCE,
    Beam,
    BestTracker,
    ContractViolation,
    Hypothesis,
    InputError,
    SearchConfig,
    Strategy,
    TieBreak,
    TokenId,
    best_update,
    extend,
    initial_hypothesis,
)
from beam_search import (
    RevisedScorer,
    beam_step,
    check_source,
    decode,
    estimate_length,
    full_criterion_bound,
    plain_scorer,
    revised_score,
    simplified_criterion_bound,
    stop_bounded_full,
    stop_bounded_simplified,
    stop_default,
    stop_optimal,
)
from scoring_models import ScoringModel

logger = logging.getLogger(__name__)

CRITERIA = (
    Strategy.DEFAULT.value,
    Strategy.OPTIMAL.value,
    Strategy.OPTIMAL_BOUNDED_FULL.value,
    Strategy.OPTIMAL_BOUNDED_SIMPLIFIED.value,
)


# ---------------------------------------------------------------------------
# Maximiseur exhaustif
# ---------------------------------------------------------------------------

def _tie_tokens(tie_break: TieBreak) -> Callable[[Tuple[TokenId, ...]], tuple]:
    if tie_break is TieBreak.REVERSE_LEXICOGRAPHIC:
        return lambda tokens: tuple(-t for t in tokens)
    return lambda tokens: tokens


def enumerate_completions(model: ScoringModel, source: Sequence[TokenId], max_len: int):
    """Génère toutes les hypothèses complétées d'au plus max_len tokens (eos compris)."""
    source = check_source(model, source)
    eos = model.vocab.eos
    stack = [initial_hypothesis()]
    while stack:
        h = stack.pop()
        logp = model.next_logprobs(source, h.tokens)
        children = []
        for t in range(logp.size):
            if math.isinf(logp[t]):
                continue
            child = extend(h, t, float(logp[t]), eos)
            if child.completed:
                yield child
            elif child.step_created < max_len:
                children.append(child)
        stack.extend(reversed(children))


def exhaustive_best(model: ScoringModel, source: Sequence[TokenId], max_len: int,
                    scorer: Optional[RevisedScorer] = None, prune: bool = True,
                    tie_break: TieBreak = TieBreak.LEXICOGRAPHIC) -> Optional[Hypothesis]:
    """
    Meilleure hypothèse complétée parmi toutes celles d'au plus max_len tokens.

    Le parcours en profondeur visite les tokens par identifiant croissant, donc
    les séquences dans l'ordre lexicographique. Une branche est élaguée quand
    score(préfixe) + r·min{l, max_len - 1} ne peut plus battre le meilleur courant :
    le résultat reste exact.

    Args:
        scorer: Score révisé (r, l) ; None pour le score simple
        prune: Désactive l'élagage pour les comparaisons
    """
    if max_len < 1:
        raise InputError(f"max_len doit être >= 1 (reçu {max_len})")
    source = check_source(model, source)
    reward, l = (scorer.reward, scorer.l) if scorer is not None else (0.0, 0.0)
    key_of = scorer if scorer is not None else plain_scorer
    tie = _tie_tokens(tie_break)
    future_reward = reward * min(l, max_len - 1)
    # À égalité de borne, les descendants sont lexicographiquement plus grands
    prune_ties = tie_break is TieBreak.LEXICOGRAPHIC
    eos = model.vocab.eos

    best: Optional[Hypothesis] = None
    best_key = -math.inf

    def visit(h: Hypothesis):
        nonlocal best, best_key
        logp = model.next_logprobs(source, h.tokens)
        for t in range(logp.size):
            if math.isinf(logp[t]):
                continue
            child = extend(h, t, float(logp[t]), eos)
            if child.completed:
                key = key_of(child)
                if best is None or key > best_key or \
                        (key == best_key and tie(child.tokens) < tie(best.tokens)):
                    best, best_key = child, key
                continue
            if child.step_created >= max_len:
                continue
            if prune and best is not None:
                bound = child.score + future_reward
                if bound < best_key or (prune_ties and bound == best_key):
                    continue
            visit(child)

    visit(initial_hypothesis())
    return best


# ---------------------------------------------------------------------------
# Trace de faisceau
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceEntry:
    hypothesis: Hypothesis
    plain: float
    revised: float
    step: int


@dataclass
class TraceReport:
    """Tout ce qu'un faisceau de largeur b a vu jusqu'à max_steps, sans s'arrêter."""

    beam_size: int
    max_steps: int
    reward: float
    l: float
    completed_set: List[TraceEntry] = field(default_factory=list)
    tops: List[Hypothesis] = field(default_factory=list)
    expanded: List[int] = field(default_factory=list)
    first_fire: Dict[str, Optional[int]] = field(
        default_factory=lambda: {name: None for name in CRITERIA})
    fire_hypotheses: Dict[str, Optional[Hypothesis]] = field(
        default_factory=lambda: {name: None for name in CRITERIA})

    @property
    def top_scores(self) -> List[float]:
        return [h.score for h in self.tops]

    @property
    def last_step(self) -> int:
        return len(self.tops)

    def completed_tokens(self) -> Set[Tuple[TokenId, ...]]:
        return {e.hypothesis.tokens for e in self.completed_set}

    def max_plain(self) -> Optional[float]:
        return max((e.plain for e in self.completed_set), default=None)

    def max_revised(self) -> Optional[float]:
        return max((e.revised for e in self.completed_set), default=None)

    def expanded_until(self, step: Optional[int]) -> int:
        """Candidats évalués jusqu'à l'étape donnée (toute la trace si None)."""
        if not self.expanded:
            return 0
        if step is None:
            return self.expanded[-1]
        return self.expanded[step - 1]


def beam_trace(model: ScoringModel, source: Sequence[TokenId], b: int, max_steps: int,
               reward: float = 0.0, length_ratio: float = 1.0,
               tie_break: TieBreak = TieBreak.LEXICOGRAPHIC) -> TraceReport:
    """
    Fait tourner le faisceau jusqu'à max_steps en ignorant tout critère d'arrêt.

    Utilise la même expansion que le décodage. Les critères sont évalués
    passivement pour noter l'étape où chacun se serait déclenché.
    """
    source = check_source(model, source)
    length = estimate_length(len(source), length_ratio)
    l = length.l
    revised = RevisedScorer(reward, l)
    report = TraceReport(beam_size=b, max_steps=max_steps, reward=reward, l=l)

    beam = Beam(step=0, items=(initial_hypothesis(),), capacity=b)
    plain_tracker = BestTracker()
    revised_tracker = BestTracker()
    seen: Set[Tuple[TokenId, ...]] = set()
    total = 0
    for _ in range(max_steps):
        outcome = beam_step(model, source, beam, b, tie_break)
        if not outcome.beam.items:
            break
        beam = outcome.beam
        total += outcome.scored
        report.tops.append(beam.top)
        report.expanded.append(total)
        for h in outcome.completed:
            if h.tokens in seen:
                raise ContractViolation(f"Hypothèse complétée vue deux fois: {h.tokens}")
            seen.add(h.tokens)
            report.completed_set.append(
                TraceEntry(h, h.score, revised_score(h.score, h.length, reward, l), beam.step))
            plain_tracker = best_update(plain_tracker, h, plain_scorer)
            revised_tracker = best_update(revised_tracker, h, revised)

        decisions = {
            Strategy.DEFAULT.value: stop_default(beam),
            Strategy.OPTIMAL.value: stop_optimal(beam, plain_tracker),
            Strategy.OPTIMAL_BOUNDED_FULL.value:
                stop_bounded_full(beam, beam.step, reward, length, revised_tracker),
            Strategy.OPTIMAL_BOUNDED_SIMPLIFIED.value:
                stop_bounded_simplified(beam, reward, length, revised_tracker),
        }
        for name, decision in decisions.items():
            if decision.stop and report.first_fire[name] is None:
                report.first_fire[name] = beam.step
                report.fire_hypotheses[name] = decision.hypothesis
        if not beam.partial_items:
            break
    return report


def is_completed_subset(small: TraceReport, large: TraceReport) -> bool:
    return small.completed_tokens() <= large.completed_tokens()


# ---------------------------------------------------------------------------
# Vérifications
# ---------------------------------------------------------------------------

@dataclass
class Verdict:
    """Verdict machine d'un décodage contre la trace de faisceau."""

    strategy: str
    b: int
    r: float
    l: float
    decoded_score: float
    trace_max: Optional[float]
    gap: float
    score_equal: bool
    stop_step: int
    default_fire_step: Optional[int]
    # None : sans objet pour les stratégies à récompense bornée
    stop_no_later: Optional[bool]
    passed: bool

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def verify_optimality(model: ScoringModel, source: Sequence[TokenId],
                      config: SearchConfig) -> Verdict:
    """
    Compare le score retourné au maximum de la trace (score assorti à la stratégie).

    Pour `optimal`, l'étape d'arrêt est aussi comparée à celle du critère par
    défaut. Avec une récompense de longueur, la recherche peut légitimement
    continuer après cette étape : stop_no_later vaut alors None. Ne lève pas en
    cas d'échec.
    """
    if config.strategy.is_shrinking:
        raise InputError(f"Pas de verdict d'optimalité pour '{config.strategy.value}'")
    result = decode(model, source, config)
    report = beam_trace(model, source, config.beam_size, config.max_steps,
                        reward=config.active_reward, length_ratio=config.length_ratio,
                        tie_break=config.tie_break)
    if config.strategy.is_bounded:
        decoded, trace_max = result.revised_score, report.max_revised()
    else:
        decoded, trace_max = result.plain_score, report.max_plain()

    if trace_max is None:
        score_equal, gap = not result.completed, 0.0
    else:
        gap = trace_max - decoded
        score_equal = result.completed and abs(gap) <= SCORE_TOLERANCE
    default_fire = report.first_fire[Strategy.DEFAULT.value]
    stop_no_later = None
    if config.strategy is Strategy.OPTIMAL:
        stop_no_later = default_fire is None or result.stop_step <= default_fire
    return Verdict(
        strategy=config.strategy.value,
        b=config.beam_size,
        r=config.active_reward,
        l=result.length_estimate,
        decoded_score=decoded,
        trace_max=trace_max,
        gap=gap,
        score_equal=score_equal,
        stop_step=result.stop_step,
        default_fire_step=default_fire,
        stop_no_later=stop_no_later,
        passed=score_equal and stop_no_later is not False,
    )


@dataclass
class EquivalenceCheck:
    """Comparaison des critères bornés complet et simplifié sur une même trace."""

    full_step: Optional[int]
    simplified_step: Optional[int]
    diverged: bool
    top_completed: bool
    measured_slack: float
    predicted_slack: float
    passed: bool


def predicted_slack(top: Hypothesis, step: int, reward: float, l: float) -> float:
    """Écart attendu entre les deux membres gauches : r·(l - min{l,|y|} - max{l-i,0})."""
    return reward * (l - min(l, top.length) - max(l - step, 0.0))


def check_criterion_equivalence(report: TraceReport) -> EquivalenceCheck:
    """
    Les deux critères doivent se déclencher à la même étape et retourner la même
    hypothèse, sauf si le critère complet se déclenche plus tôt avec le sommet
    complété ; l'écart doit alors valoir exactement la marge prédite.
    """
    full = report.first_fire[Strategy.OPTIMAL_BOUNDED_FULL.value]
    simplified = report.first_fire[Strategy.OPTIMAL_BOUNDED_SIMPLIFIED.value]
    if full == simplified:
        same = full is None or \
            report.fire_hypotheses[Strategy.OPTIMAL_BOUNDED_FULL.value] == \
            report.fire_hypotheses[Strategy.OPTIMAL_BOUNDED_SIMPLIFIED.value]
        return EquivalenceCheck(full, simplified, False, False, 0.0, 0.0, same)

    if full is None or (simplified is not None and simplified < full):
        # Le critère simplifié n'est jamais moins strict que le complet
        return EquivalenceCheck(full, simplified, True, False, 0.0, 0.0, False)

    top = report.tops[full - 1]
    measured = simplified_criterion_bound(top, report.reward, report.l) \
        - full_criterion_bound(top, full, report.reward, report.l)
    predicted = predicted_slack(top, full, report.reward, report.l)
    passed = top.completed and abs(measured - predicted) <= SCORE_TOLERANCE
    logger.info(
        "Divergence des critères bornés: complet à l'étape %d, simplifié à %s, "
        "sommet complété=%s, écart mesuré %.6g, prédit %.6g",
        full, simplified, top.completed, measured, predicted,
    )
    return EquivalenceCheck(full, simplified, True, top.completed, measured, predicted, passed)


def check_certificate_soundness(report: TraceReport,
                                criterion: str = Strategy.OPTIMAL.value) -> bool:
    """Après le déclenchement, aucune complétée ultérieure ne bat le meilleur retourné."""
    step = report.first_fire[criterion]
    if step is None:
        return True
    fired = report.fire_hypotheses[criterion]
    bounded = criterion in (Strategy.OPTIMAL_BOUNDED_FULL.value,
                            Strategy.OPTIMAL_BOUNDED_SIMPLIFIED.value)
    if bounded:
        best_key = revised_score(fired.score, fired.length, report.reward, report.l)
        later = (e.revised for e in report.completed_set if e.step > step)
    else:
        best_key = fired.score
        later = (e.plain for e in report.completed_set if e.step > step)
    return all(key <= best_key for key in later)

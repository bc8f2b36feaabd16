#!/usr/bin/env python3
"""
Exécution des expériences : décodage par lot, grilles de comparaison,
réglage de la récompense de longueur et campagnes de vérification.

Les fonctions de ce module ne font aucune entrée/sortie de données : elles
retournent des lignes (dictionnaires ou dataclasses) que cli.py et
report_utils.py sérialisent. Tout est déterminé par le RunSpec (graine
comprise), l'exécution parallèle ne change pas l'ordre des résultats.

Fonctionnalités :
- Lecture des sources (fichier, une source par ligne) ou tirage aléatoire graine
- Enregistrements JSONL de décodage
- Grille stratégie × b × r agrégée en CompareRow
- Réglage de r avec la ligne "meilleur b" par valeur de r
- Essais de vérification aléatoires (optimalité, arrêt précoce, dominance,
  borne de travail, optimalité bornée, équivalence des critères, solidité)
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, TypeVar

import numpy as np

from beam_types import (
    DEFAULT_BEAM_SIZE,
    DEFAULT_LENGTH_RATIO,
    DEFAULT_MAX_STEPS,
    DecodeResult,
    InputError,
    SearchConfig,
    Strategy,
    TieBreak,
    TokenId,
)
from beam_search import decode
from scoring_models import ScoringModel, load_model
from search_oracle import (
    beam_trace,
    check_certificate_soundness,
    check_criterion_equivalence,
    verify_optimality,
)

logger = logging.getLogger(__name__)

TUNE_LENGTH_RATIO = 1.27
TUNE_REWARDS = (0.0, 0.5, 1.0, 1.1, 1.2, 1.3, 1.4)
TUNE_BEAM_SIZES = tuple(range(1, 21))
VERIFY_REWARDS = (0.3, 1.0, 1.2)
VERIFY_RATIOS = (0.8, TUNE_LENGTH_RATIO)
RANDOM_SOURCE_LENGTHS = (3, 8)

COMPARE_HEADER = ('strategy', 'b', 'r', 'mean_score', 'mean_revised', 'mean_stop_step',
                  'mean_items_expanded', 'mean_len_ratio', 'frac_completed')
TUNE_HEADER = ('row', 'r', 'b', 'mean_score', 'mean_revised', 'mean_len_ratio')
VERIFY_CHECKS = ('optimality', 'early_stopping', 'dominance', 'work_bound',
                 'bounded_optimality', 'criterion_equivalence', 'soundness')

T = TypeVar('T')
R = TypeVar('R')


def format_float(value: float) -> str:
    """Format CSV fixe : 6 décimales, point décimal, sans locale."""
    return f"{value:.6f}"


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """map() éventuellement parallèle ; l'ordre des résultats suit celui des entrées."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))


# ---------------------------------------------------------------------------
# Sources
# ---------------------------------------------------------------------------

class SourceLine(NamedTuple):
    text: str
    tokens: Tuple[TokenId, ...]

    @property
    def length(self) -> int:
        return len(self.tokens)


def parse_sources(lines: Iterable[str], model: ScoringModel, origin: str = '<sources>') -> List[SourceLine]:
    """
    Encode une source par ligne (symboles séparés par des blancs).

    Raises:
        InputError: Symbole inconnu ou ligne vide pour un modèle qui dépend de la source
    """
    sources = []
    for number, line in enumerate(lines, 1):
        symbols = line.split()
        try:
            tokens = model.encode_source(symbols)
        except InputError as e:
            raise InputError(f"{origin}:{number}: {e}") from None
        if not tokens and not model.source_agnostic:
            raise InputError(f"{origin}:{number}: source vide pour un modèle qui dépend de la source")
        sources.append(SourceLine(' '.join(symbols), tokens))
    return sources


def read_sources(path: str, model: ScoringModel) -> List[SourceLine]:
    with open(path, 'r', encoding='utf-8') as f:
        return parse_sources(f.read().splitlines(), model, origin=path)


def random_sources(model: ScoringModel, count: int, seed: int,
                   lengths: Tuple[int, int] = RANDOM_SOURCE_LENGTHS) -> List[SourceLine]:
    """Tire `count` sources sur les symboles du vocabulaire hors eos (eos seul si V=1)."""
    if count < 0:
        raise InputError(f"Nombre de sources invalide: {count}")
    vocab = model.vocab
    words = [s for i, s in enumerate(vocab.symbols) if i != vocab.eos] or [vocab.eos_symbol]
    rng = np.random.default_rng(seed)
    lines = []
    for _ in range(count):
        n = int(rng.integers(lengths[0], lengths[1] + 1))
        lines.append(' '.join(words[int(i)] for i in rng.integers(0, len(words), size=n)))
    return parse_sources(lines, model, origin=f"seed={seed}")


# ---------------------------------------------------------------------------
# RunSpec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunSpec:
    """Détermine entièrement une exécution (grille, modèle, sources, graine)."""

    model: str
    source: Optional[str] = None
    num_sources: int = 0
    strategies: Tuple[Strategy, ...] = (Strategy.OPTIMAL,)
    beam_sizes: Tuple[int, ...] = (DEFAULT_BEAM_SIZE,)
    rewards: Tuple[float, ...] = (0.0,)
    length_ratio: float = DEFAULT_LENGTH_RATIO
    max_steps: int = DEFAULT_MAX_STEPS
    seed: int = 0
    tie_break: TieBreak = TieBreak.LEXICOGRAPHIC
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'strategies', tuple(Strategy(s) for s in self.strategies))
        if not self.strategies or not self.beam_sizes or not self.rewards:
            raise InputError("Grille vide : au moins une stratégie, une taille de faisceau et une récompense")
        if self.workers < 1:
            raise InputError(f"workers doit être >= 1 (reçu {self.workers})")

    def configs(self) -> List[SearchConfig]:
        """Cellules de la grille, triées par (stratégie, b, r), sans doublon."""
        cells = sorted(set(itertools.product(
            (s.value for s in self.strategies), self.beam_sizes, self.rewards)))
        return [
            SearchConfig(beam_size=b, strategy=s, reward=r, length_ratio=self.length_ratio,
                         max_steps=self.max_steps, tie_break=self.tie_break)
            for s, b, r in cells
        ]

    def single_config(self) -> SearchConfig:
        if len(self.strategies) != 1 or len(self.beam_sizes) != 1 or len(self.rewards) != 1:
            raise InputError("decode attend une seule stratégie, une seule taille de faisceau "
                             "et une seule récompense")
        return self.configs()[0]

    def load_model(self) -> ScoringModel:
        return load_model(self.model)

    def load_sources(self, model: ScoringModel) -> List[SourceLine]:
        if self.source is not None:
            return read_sources(self.source, model)
        return random_sources(model, self.num_sources, self.seed)


# ---------------------------------------------------------------------------
# Décodage par lot
# ---------------------------------------------------------------------------

def length_ratio(result: DecodeResult, source: SourceLine) -> float:
    return result.length / max(source.length, 1)


def decode_record(source: SourceLine, result: DecodeResult, model: ScoringModel) -> Dict[str, object]:
    """Enregistrement JSONL d'un décodage (tokens sans eos)."""
    vocab = model.vocab
    tokens = [t for t in result.hypothesis.tokens if t != vocab.eos]
    return {
        'source': source.text,
        'tokens': vocab.decode(tokens),
        'score': result.plain_score,
        'revised_score': result.revised_score,
        'stop_step': result.stop_step,
        'items_expanded': result.items_expanded,
        'completed': result.completed,
        'strategy': result.strategy.value,
        'b': result.config.beam_size,
        'r': result.config.active_reward,
        'l': result.length_estimate,
    }


def decode_all(model: ScoringModel, sources: Sequence[SourceLine], config: SearchConfig,
               workers: int = 1) -> List[DecodeResult]:
    return parallel_map(lambda s: decode(model, s.tokens, config), sources, workers)


def run_decode(model: ScoringModel, sources: Sequence[SourceLine], config: SearchConfig,
               workers: int = 1) -> List[Dict[str, object]]:
    results = decode_all(model, sources, config, workers)
    return [decode_record(s, r, model) for s, r in zip(sources, results)]


# ---------------------------------------------------------------------------
# Comparaison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompareRow:
    strategy: str
    b: int
    r: float
    mean_score: float
    mean_revised: float
    mean_stop_step: float
    mean_items_expanded: float
    mean_len_ratio: float
    frac_completed: float
    count: int

    def csv_fields(self) -> List[str]:
        return [self.strategy, str(self.b), format_float(self.r),
                format_float(self.mean_score), format_float(self.mean_revised),
                format_float(self.mean_stop_step), format_float(self.mean_items_expanded),
                format_float(self.mean_len_ratio), format_float(self.frac_completed)]

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def aggregate(config: SearchConfig, sources: Sequence[SourceLine],
              results: Sequence[DecodeResult]) -> CompareRow:
    if not results:
        raise InputError("Aucune source à agréger")
    return CompareRow(
        strategy=config.strategy.value,
        b=config.beam_size,
        r=config.reward,
        mean_score=float(np.mean([r.plain_score for r in results])),
        mean_revised=float(np.mean([r.revised_score for r in results])),
        mean_stop_step=float(np.mean([r.stop_step for r in results])),
        mean_items_expanded=float(np.mean([r.items_expanded for r in results])),
        mean_len_ratio=float(np.mean([length_ratio(r, s) for r, s in zip(results, sources)])),
        frac_completed=float(np.mean([r.completed for r in results])),
        count=len(results),
    )


def run_compare(model: ScoringModel, sources: Sequence[SourceLine], spec: RunSpec) -> List[CompareRow]:
    """Une CompareRow par cellule de la grille, dans l'ordre (stratégie, b, r)."""
    if not sources:
        raise InputError("Aucune source : fichier vide ou --num-sources 0")
    configs = spec.configs()
    for config in configs:
        for warning in config.warnings():
            logger.warning(warning)

    def run_cell(config: SearchConfig) -> CompareRow:
        results = [decode(model, s.tokens, config) for s in sources]
        return aggregate(config, sources, results)

    return parallel_map(run_cell, configs, spec.workers)


# ---------------------------------------------------------------------------
# Réglage de r
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TuneRow:
    row: str
    r: float
    b: int
    mean_score: float
    mean_revised: float
    mean_len_ratio: float

    def csv_fields(self) -> List[str]:
        return [self.row, format_float(self.r), str(self.b), format_float(self.mean_score),
                format_float(self.mean_revised), format_float(self.mean_len_ratio)]

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def best_beam_rows(cells: Sequence[TuneRow]) -> List[TuneRow]:
    """Pour chaque r, la cellule de meilleur score révisé moyen (égalité : plus petit b)."""
    best: Dict[float, TuneRow] = {}
    for cell in cells:
        current = best.get(cell.r)
        if current is None or cell.mean_revised > current.mean_revised or \
                (cell.mean_revised == current.mean_revised and cell.b < current.b):
            best[cell.r] = cell
    return [TuneRow('best_b', r, row.b, row.mean_score, row.mean_revised, row.mean_len_ratio)
            for r, row in sorted(best.items())]


def run_tune(model: ScoringModel, sources: Sequence[SourceLine], spec: RunSpec) -> List[TuneRow]:
    """
    Grille r × b pour une stratégie à récompense bornée.

    Returns:
        List[TuneRow]: cellules triées par (r, b), puis une ligne best_b par r
    """
    if len(spec.strategies) != 1 or not spec.strategies[0].is_bounded:
        raise InputError("tune attend une seule stratégie à récompense bornée "
                         "(optimal_bounded_full ou optimal_bounded_simplified)")
    compare_rows = run_compare(model, sources, spec)
    cells = sorted(
        (TuneRow('cell', row.r, row.b, row.mean_score, row.mean_revised, row.mean_len_ratio)
         for row in compare_rows),
        key=lambda row: (row.r, row.b),
    )
    return cells + best_beam_rows(cells)


# ---------------------------------------------------------------------------
# Vérification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VerifyBounds:
    """Bornes des essais aléatoires (modèles graines de petite taille)."""

    trials: int = 500
    vocab_min: int = 3
    vocab_max: int = 6
    steps_min: int = 6
    steps_max: int = 10
    beam_max: int = 8
    rewards: Tuple[float, ...] = VERIFY_REWARDS
    ratios: Tuple[float, ...] = VERIFY_RATIOS
    seed: int = 0

    def __post_init__(self):
        if self.trials < 0:
            raise InputError(f"Nombre d'essais invalide: {self.trials}")
        if not 2 <= self.vocab_min <= self.vocab_max:
            raise InputError(f"Bornes de vocabulaire invalides: {self.vocab_min}..{self.vocab_max}")
        if not 1 <= self.steps_min <= self.steps_max:
            raise InputError(f"Bornes de max_steps invalides: {self.steps_min}..{self.steps_max}")
        if self.beam_max < 1:
            raise InputError(f"beam_max doit être >= 1 (reçu {self.beam_max})")
        if not self.rewards or not self.ratios:
            raise InputError("Listes de récompenses et de ratios non vides attendues")


@dataclass(frozen=True)
class Trial:
    index: int
    model_spec: str
    source: Tuple[TokenId, ...]
    beam_size: int
    max_steps: int
    reward: float
    length_ratio: float


def make_trial(bounds: VerifyBounds, index: int) -> Trial:
    """Essai `index` ; ne dépend que de (bounds.seed, index)."""
    rng = np.random.default_rng([bounds.seed, index])
    v = int(rng.integers(bounds.vocab_min, bounds.vocab_max + 1))
    model_seed = int(rng.integers(0, 2 ** 31))
    source_len = int(rng.integers(2, 7))
    return Trial(
        index=index,
        model_spec=f"seeded:v={v},seed={model_seed}",
        source=tuple(int(t) for t in rng.integers(0, v - 1, size=source_len)),
        beam_size=int(rng.integers(1, bounds.beam_max + 1)),
        max_steps=int(rng.integers(bounds.steps_min, bounds.steps_max + 1)),
        reward=float(bounds.rewards[int(rng.integers(len(bounds.rewards)))]),
        length_ratio=float(bounds.ratios[int(rng.integers(len(bounds.ratios)))]),
    )


@dataclass
class TrialOutcome:
    trial: Trial
    checks: Dict[str, bool]
    details: Dict[str, object] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> Dict[str, object]:
        return {
            'trial': self.trial.index,
            'model': self.trial.model_spec,
            'source': list(self.trial.source),
            'b': self.trial.beam_size,
            'max_steps': self.trial.max_steps,
            'r': self.trial.reward,
            'ratio': self.trial.length_ratio,
            'checks': dict(self.checks),
            'passed': self.passed,
            **self.details,
        }


def run_trial(trial: Trial) -> TrialOutcome:
    model = load_model(trial.model_spec)
    optimal_config = SearchConfig(beam_size=trial.beam_size, strategy=Strategy.OPTIMAL,
                                  max_steps=trial.max_steps)
    default_config = SearchConfig(beam_size=trial.beam_size, strategy=Strategy.DEFAULT,
                                  max_steps=trial.max_steps)
    bounded_config = SearchConfig(beam_size=trial.beam_size,
                                  strategy=Strategy.OPTIMAL_BOUNDED_SIMPLIFIED,
                                  reward=trial.reward, length_ratio=trial.length_ratio,
                                  max_steps=trial.max_steps)

    optimal_verdict = verify_optimality(model, trial.source, optimal_config)
    bounded_verdict = verify_optimality(model, trial.source, bounded_config)
    optimal = decode(model, trial.source, optimal_config)
    default = decode(model, trial.source, default_config)
    report = beam_trace(model, trial.source, trial.beam_size, trial.max_steps,
                        reward=trial.reward, length_ratio=trial.length_ratio)
    equivalence = check_criterion_equivalence(report)

    checks = {
        'optimality': optimal_verdict.score_equal,
        'early_stopping': optimal_verdict.stop_no_later and optimal.stop_step <= default.stop_step,
        'dominance': optimal.plain_score >= default.plain_score,
        'work_bound': optimal.items_expanded <= default.items_expanded,
        'bounded_optimality': bounded_verdict.score_equal,
        'criterion_equivalence': equivalence.passed,
        'soundness': check_certificate_soundness(report) and check_certificate_soundness(
            report, Strategy.OPTIMAL_BOUNDED_SIMPLIFIED.value),
    }
    details = {
        'optimal': optimal_verdict.to_dict(),
        'bounded': bounded_verdict.to_dict(),
        'default_score': default.plain_score,
        'default_stop_step': default.stop_step,
        'items_expanded': {'optimal': optimal.items_expanded, 'default': default.items_expanded},
        'equivalence': asdict(equivalence),
    }
    outcome = TrialOutcome(trial, checks, details)
    if not outcome.passed:
        failed = [name for name, ok in checks.items() if not ok]
        logger.warning("Essai %d (%s, b=%d) en échec: %s", trial.index, trial.model_spec,
                       trial.beam_size, ', '.join(failed))
    return outcome


@dataclass
class VerifySummary:
    trials: int = 0
    passed: Dict[str, int] = field(default_factory=lambda: {name: 0 for name in VERIFY_CHECKS})
    failed: Dict[str, int] = field(default_factory=lambda: {name: 0 for name in VERIFY_CHECKS})
    divergences: int = 0
    failed_trials: List[int] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return not any(self.failed.values())

    def add(self, outcome: TrialOutcome):
        self.trials += 1
        for name, ok in outcome.checks.items():
            (self.passed if ok else self.failed)[name] += 1
        if outcome.details.get('equivalence', {}).get('diverged'):
            self.divergences += 1
        if not outcome.passed:
            self.failed_trials.append(outcome.trial.index)

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def run_verify(bounds: VerifyBounds, workers: int = 1) -> Tuple[List[TrialOutcome], VerifySummary]:
    trials = [make_trial(bounds, i) for i in range(bounds.trials)]
    outcomes = parallel_map(run_trial, trials, workers)
    summary = VerifySummary()
    for outcome in outcomes:
        summary.add(outcome)
    return outcomes, summary

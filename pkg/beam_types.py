#!/usr/bin/env python3
"""
Types de base pour la recherche en faisceau (beam search).

Ce module définit les valeurs immuables partagées par toutes les stratégies
d'arrêt : vocabulaire, hypothèses, faisceaux, suivi de la meilleure hypothèse
complétée, configuration de recherche et résultat de décodage.

Fonctionnalités :
- Hypothèses immuables (tokens, score log-probabilité, complétion)
- Extension d'une hypothèse par un token (extend)
- Sélection déterministe des k meilleurs candidats (top_k)
- Suivi du meilleur complété (best_update), score simple ou révisé
- Configuration validée (SearchConfig) et hiérarchie d'erreurs
"""

import heapq
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple


TokenId = int

DEFAULT_BEAM_SIZE = 5
DEFAULT_MAX_STEPS = 50
DEFAULT_LENGTH_RATIO = 1.0
SCORE_TOLERANCE = 1e-9
EOS_SYMBOL = '</s>'


# ---------------------------------------------------------------------------
# Erreurs
# ---------------------------------------------------------------------------

class BeamSearchError(Exception):
    """Erreur racine du paquet."""


class InputError(BeamSearchError, ValueError):
    """Entrée utilisateur invalide (tokens inconnus, source vide, config...)."""


class ModelValidationError(InputError):
    """Fichier de modèle table invalide."""


class ModelSpecError(InputError):
    """Chaîne de spécification de modèle mal formée."""

    def __init__(self, message: str, spec: str, position: int):
        self.spec = spec
        self.position = position
        super().__init__(f"{message} (position {position} dans '{spec}')")


class ContractViolation(BeamSearchError, AssertionError):
    """Erreur de programmation : un contrat interne a été violé."""


# ---------------------------------------------------------------------------
# Vocabulaire et hypothèses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Vocab:
    """Liste ordonnée de symboles distincts, dont un symbole de fin (eos)."""

    symbols: Tuple[str, ...]
    eos: TokenId

    def __post_init__(self):
        object.__setattr__(self, 'symbols', tuple(self.symbols))
        if len(set(self.symbols)) != len(self.symbols):
            raise InputError("Le vocabulaire contient des symboles en double")
        if not 0 <= self.eos < len(self.symbols):
            raise InputError(f"Identifiant eos invalide: {self.eos}")

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def eos_symbol(self) -> str:
        return self.symbols[self.eos]

    def index(self, symbol: str) -> TokenId:
        """Retourne l'identifiant d'un symbole, InputError s'il est inconnu."""
        try:
            return self._lookup[symbol]
        except KeyError:
            raise InputError(f"Symbole inconnu du vocabulaire: '{symbol}'") from None

    def get(self, symbol: str, default: Optional[TokenId] = None) -> Optional[TokenId]:
        return self._lookup.get(symbol, default)

    def encode(self, symbols: Sequence[str]) -> Tuple[TokenId, ...]:
        return tuple(self.index(s) for s in symbols)

    def decode(self, tokens: Sequence[TokenId]) -> List[str]:
        return [self.symbols[t] for t in tokens]

    def check(self, tokens: Sequence[TokenId]):
        """Vérifie que chaque identifiant est dans le vocabulaire."""
        for t in tokens:
            if not 0 <= t < len(self.symbols):
                raise InputError(f"Identifiant de token hors vocabulaire: {t}")

    @property
    def _lookup(self) -> Dict[str, TokenId]:
        cache = self.__dict__.get('_lookup_cache')
        if cache is None:
            cache = {s: i for i, s in enumerate(self.symbols)}
            object.__setattr__(self, '_lookup_cache', cache)
        return cache

    @classmethod
    def from_symbols(cls, symbols: Sequence[str], eos_symbol: str = EOS_SYMBOL) -> 'Vocab':
        symbols = tuple(symbols)
        if eos_symbol not in symbols:
            raise InputError(f"Symbole eos '{eos_symbol}' absent du vocabulaire")
        return cls(symbols, symbols.index(eos_symbol))


@dataclass(frozen=True)
class Hypothesis:
    """
    Séquence candidate avec son score cumulé (log népérien, <= 0).

    `completed` est vrai si et seulement si le dernier token est eos ;
    `step_created` vaut toujours le nombre de tokens.
    """

    tokens: Tuple[TokenId, ...]
    score: float
    completed: bool
    step_created: int

    @property
    def length(self) -> int:
        """|y| : nombre de tokens sans eos."""
        return len(self.tokens) - 1 if self.completed else len(self.tokens)


def initial_hypothesis() -> Hypothesis:
    """Hypothèse vide de l'étape 0."""
    return Hypothesis(tokens=(), score=0.0, completed=False, step_created=0)


def extend(h: Hypothesis, t: TokenId, logp: float, eos: TokenId) -> Hypothesis:
    """Ajoute le token t à h ; le score décroît de logp (<= 0 ou -inf)."""
    if h.completed:
        raise ContractViolation("Impossible d'étendre une hypothèse complétée")
    if logp > 0:
        raise ContractViolation(f"Log-probabilité positive: {logp}")
    return Hypothesis(
        tokens=h.tokens + (t,),
        score=h.score + logp,
        completed=(t == eos),
        step_created=h.step_created + 1,
    )


# ---------------------------------------------------------------------------
# Faisceaux et départage des égalités
# ---------------------------------------------------------------------------

class TieBreak(str, Enum):
    """Politique de départage des scores égaux."""

    LEXICOGRAPHIC = 'lex'
    REVERSE_LEXICOGRAPHIC = 'revlex'


def sort_key(tie_break: TieBreak) -> Callable[[Hypothesis], tuple]:
    """Clé de tri croissante : meilleur score d'abord, puis départage."""
    if tie_break is TieBreak.REVERSE_LEXICOGRAPHIC:
        return lambda h: (-h.score, tuple(-t for t in h.tokens))
    return lambda h: (-h.score, h.tokens)


@dataclass(frozen=True)
class Beam:
    """Faisceau de l'étape i : au plus `capacity` hypothèses triées par score décroissant."""

    step: int
    items: Tuple[Hypothesis, ...]
    capacity: int

    @property
    def top(self) -> Hypothesis:
        return self.items[0]

    @property
    def partial_items(self) -> Tuple[Hypothesis, ...]:
        return tuple(h for h in self.items if not h.completed)

    @property
    def completed_items(self) -> Tuple[Hypothesis, ...]:
        return tuple(h for h in self.items if h.completed)

    def __len__(self) -> int:
        return len(self.items)


def top_k(candidates: Sequence[Hypothesis], k: int,
          tie_break: TieBreak = TieBreak.LEXICOGRAPHIC,
          step: Optional[int] = None) -> Beam:
    """
    Construit un faisceau avec les k meilleurs candidats.

    Args:
        candidates: Hypothèses de même longueur (même step_created)
        k: Largeur du faisceau ; k = 0 donne un faisceau vide
        tie_break: Politique de départage
        step: Étape du faisceau, requise seulement si candidates est vide

    Returns:
        Beam: Faisceau trié, identique d'un appel à l'autre
    """
    steps = {h.step_created for h in candidates}
    if len(steps) > 1:
        raise ContractViolation(f"Candidats d'étapes différentes: {sorted(steps)}")
    if steps:
        step = steps.pop()
    elif step is None:
        raise ContractViolation("Étape inconnue pour un ensemble de candidats vide")
    if k < 0:
        raise ContractViolation(f"Largeur négative: {k}")
    # nsmallest est équivalent à sorted(...)[:k], stable
    items = heapq.nsmallest(k, candidates, key=sort_key(tie_break)) if k else []
    return Beam(step=step, items=tuple(items), capacity=k)


# ---------------------------------------------------------------------------
# Meilleure hypothèse complétée
# ---------------------------------------------------------------------------

Scorer = Callable[[Hypothesis], float]


@dataclass(frozen=True)
class BestTracker:
    """Meilleure hypothèse complétée vue jusqu'ici, sous un score donné."""

    best: Optional[Hypothesis] = None
    best_key: float = -math.inf

    @property
    def defined(self) -> bool:
        return self.best is not None


def best_update(tracker: BestTracker, h: Hypothesis, scorer: Scorer) -> BestTracker:
    """Remplace le meilleur seulement en cas d'amélioration stricte."""
    if not h.completed:
        raise ContractViolation("best_update attend une hypothèse complétée")
    key = scorer(h)
    if tracker.best is None or key > tracker.best_key:
        return BestTracker(best=h, best_key=key)
    return tracker


# ---------------------------------------------------------------------------
# Configuration et résultat
# ---------------------------------------------------------------------------

class Strategy(str, Enum):
    """Stratégies d'arrêt / de re-score disponibles."""

    DEFAULT = 'default'
    SHRINK_LENNORM = 'shrink_lennorm'
    SHRINK_REWARD = 'shrink_reward'
    OPTIMAL = 'optimal'
    OPTIMAL_BOUNDED_FULL = 'optimal_bounded_full'
    OPTIMAL_BOUNDED_SIMPLIFIED = 'optimal_bounded_simplified'

    @property
    def uses_reward(self) -> bool:
        return self in (Strategy.SHRINK_REWARD, Strategy.OPTIMAL_BOUNDED_FULL,
                        Strategy.OPTIMAL_BOUNDED_SIMPLIFIED)

    @property
    def is_certificate(self) -> bool:
        return self in (Strategy.OPTIMAL, Strategy.OPTIMAL_BOUNDED_FULL,
                        Strategy.OPTIMAL_BOUNDED_SIMPLIFIED)

    @property
    def is_bounded(self) -> bool:
        return self in (Strategy.OPTIMAL_BOUNDED_FULL, Strategy.OPTIMAL_BOUNDED_SIMPLIFIED)

    @property
    def is_shrinking(self) -> bool:
        return self in (Strategy.SHRINK_LENNORM, Strategy.SHRINK_REWARD)


@dataclass(frozen=True)
class SearchConfig:
    """Paramètres d'un décodage : b, stratégie, r, ratio, max_steps, départage."""

    beam_size: int = DEFAULT_BEAM_SIZE
    strategy: Strategy = Strategy.OPTIMAL
    reward: float = 0.0
    length_ratio: float = DEFAULT_LENGTH_RATIO
    max_steps: int = DEFAULT_MAX_STEPS
    tie_break: TieBreak = TieBreak.LEXICOGRAPHIC

    def __post_init__(self):
        object.__setattr__(self, 'strategy', Strategy(self.strategy))
        object.__setattr__(self, 'tie_break', TieBreak(self.tie_break))
        if self.beam_size < 1:
            raise InputError(f"beam_size doit être >= 1 (reçu {self.beam_size})")
        if self.max_steps < 1:
            raise InputError(f"max_steps doit être >= 1 (reçu {self.max_steps})")
        if not self.reward >= 0 or math.isinf(self.reward):
            raise InputError(f"reward doit être un réel >= 0 (reçu {self.reward})")
        if not self.length_ratio > 0 or math.isinf(self.length_ratio):
            raise InputError(f"length_ratio doit être > 0 (reçu {self.length_ratio})")

    @property
    def active_reward(self) -> float:
        """Récompense effectivement appliquée (0 si la stratégie l'ignore)."""
        return self.reward if self.strategy.uses_reward else 0.0

    def warnings(self) -> List[str]:
        found = []
        if self.reward and not self.strategy.uses_reward:
            found.append(
                f"reward={self.reward} ignoré par la stratégie '{self.strategy.value}'"
            )
        return found

    def echo(self) -> Dict[str, object]:
        return {
            'strategy': self.strategy.value,
            'b': self.beam_size,
            'r': self.reward,
            'length_ratio': self.length_ratio,
            'max_steps': self.max_steps,
            'tie_break': self.tie_break.value,
        }


@dataclass(frozen=True)
class DecodeResult:
    """Résultat d'un décodage et les quantités mesurées pendant la recherche."""

    hypothesis: Hypothesis
    plain_score: float
    revised_score: float
    stop_step: int
    items_expanded: int
    completed: bool
    strategy: Strategy
    config: SearchConfig
    reason: Optional[str] = None
    length_estimate: float = 0.0

    @property
    def length(self) -> int:
        return self.hypothesis.length

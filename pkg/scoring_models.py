#!/usr/bin/env python3
"""
Modèles de score localement normalisés pour la recherche en faisceau.

Ce module fournit les modèles qui donnent, pour une source et un préfixe, la
distribution de log-probabilités du token suivant. Ce sont des modèles jouets
déterministes : ils rendent les oracles exhaustifs calculables à la main.

Fonctionnalités :
- Modèle table (fichier JSON, contextes sur le préfixe complet, sans repli)
- Modèle pseudo-aléatoire graine (SeededModel), probabilité d'eos croissante
- Modèle n-gramme avec lissage add-k (train_ngram)
- Canal de copie qui favorise le token source aligné (CopyChannelModel)
- Chaînes de spécification ("seeded:v=5,seed=42", "copy:base=...,bias=..,slack=..")
- Matérialisation de n'importe quel modèle en modèle table
"""

import functools
import hashlib
import itertools
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from beam_types import (
    EOS_SYMBOL,
    InputError,
    ModelSpecError,
    ModelValidationError,
    TokenId,
    Vocab,
)

logger = logging.getLogger(__name__)

ROW_SUM_TOLERANCE = 1e-9
MAX_MATERIALIZED_CONTEXTS = 100_000
EOS_BASE_CACHE_SIZE = 4096
BOS = -1


def logsumexp(logp: np.ndarray) -> float:
    """log-sum-exp des entrées finies (les -inf sont exclues)."""
    finite = logp[np.isfinite(logp)]
    if finite.size == 0:
        return -math.inf
    return float(np.logaddexp.reduce(finite))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Normalise des logits en log-probabilités (les -inf restent -inf)."""
    out = logits - logsumexp(logits)
    return np.minimum(out, 0.0)


def _safe_log(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide='ignore'):
        return np.log(probs)


class ScoringModel:
    """
    Contrat des modèles : next_logprobs(source, prefix) -> vecteur sur le vocabulaire.

    Le vecteur est une distribution propre (log-sum-exp = 0), chaque entrée <= 0,
    et il ne dépend que de (source, prefix).
    """

    vocab: Vocab
    # Un modèle indépendant de la source accepte une source vide
    source_agnostic: bool = True

    def next_logprobs(self, source: Sequence[TokenId], prefix: Sequence[TokenId]) -> np.ndarray:
        self.check_prefix(prefix)
        return self._logprobs(tuple(source), tuple(prefix))

    def _logprobs(self, source: Tuple[TokenId, ...], prefix: Tuple[TokenId, ...]) -> np.ndarray:
        raise NotImplementedError('_logprobs doit être implémenté par les sous-classes')

    def check_prefix(self, prefix: Sequence[TokenId]):
        self.vocab.check(prefix)
        if self.vocab.eos in prefix:
            raise InputError("Le préfixe ne doit pas contenir eos")

    def encode_source(self, symbols: Sequence[str]) -> Tuple[TokenId, ...]:
        """
        Convertit une ligne source en identifiants.

        Les modèles indépendants de la source n'utilisent que |x| : les symboles
        inconnus y sont tolérés et codés -1.
        """
        if self.source_agnostic:
            return tuple(self.vocab.get(s, -1) for s in symbols)
        return self.vocab.encode(symbols)


# ---------------------------------------------------------------------------
# Modèle table
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TableModel(ScoringModel):
    """Distributions écrites à la main : une par préfixe complet, sinon `default`."""

    vocab: Vocab
    default_dist: np.ndarray
    context_dists: Dict[Tuple[TokenId, ...], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.default_dist = _validate_row(np.asarray(self.default_dist, dtype=float),
                                          self.vocab, 'default')
        for key, row in list(self.context_dists.items()):
            name = ' '.join(self.vocab.decode(key))
            self.context_dists[key] = _validate_row(np.asarray(row, dtype=float), self.vocab, name)
        self._log_default = _safe_log(self.default_dist)
        self._log_contexts = {k: _safe_log(v) for k, v in self.context_dists.items()}

    def _logprobs(self, source, prefix):
        return self._log_contexts.get(prefix, self._log_default).copy()


def _validate_row(row: np.ndarray, vocab: Vocab, context: str) -> np.ndarray:
    if row.shape != (vocab.size,):
        raise ModelValidationError(
            f"Contexte '{context}': {row.size} probabilités pour un vocabulaire de {vocab.size}"
        )
    if not np.all(np.isfinite(row)) or np.any(row < 0) or np.any(row > 1):
        raise ModelValidationError(f"Contexte '{context}': probabilité hors de [0, 1]")
    total = float(row.sum())
    if abs(total - 1.0) > ROW_SUM_TOLERANCE:
        raise ModelValidationError(f"Contexte '{context}': la somme vaut {total:.12g}, pas 1")
    return row


def _reject_duplicate_keys(pairs: List[Tuple[str, object]]) -> Dict[str, object]:
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise ModelValidationError(f"Contexte en double: '{key}'")
        seen[key] = value
    return seen


def _row_values(value: object, context: str) -> List[float]:
    if not isinstance(value, list) or not all(
            isinstance(p, (int, float)) and not isinstance(p, bool) for p in value):
        raise ModelValidationError(f"Contexte '{context}': liste de probabilités attendue")
    return [float(p) for p in value]


def load_table_model(text: str) -> TableModel:
    """
    Charge un modèle table depuis le texte JSON.

    Format : {"vocab": [...], "eos": "</s>", "default": [...],
              "contexts": {"a b": [...]}} ; probabilités en espace linéaire.
    """
    data = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    if not isinstance(data, dict):
        raise ModelValidationError("Le modèle table doit être un objet JSON")
    for key in ('vocab', 'eos', 'default'):
        if key not in data:
            raise ModelValidationError(f"Clé obligatoire absente: '{key}'")

    symbols = data['vocab']
    if not isinstance(symbols, list) or not all(isinstance(s, str) for s in symbols):
        raise ModelValidationError("'vocab' doit être une liste de chaînes")
    if data['eos'] not in symbols:
        raise ModelValidationError(f"Symbole eos inconnu: '{data['eos']}'")
    try:
        vocab = Vocab.from_symbols(symbols, data['eos'])
    except InputError as e:
        raise ModelValidationError(str(e)) from None

    raw_contexts = data.get('contexts') or {}
    if not isinstance(raw_contexts, dict):
        raise ModelValidationError("'contexts' doit être un objet JSON (préfixe -> probabilités)")
    contexts = {}
    for key, row in raw_contexts.items():
        try:
            prefix = vocab.encode(key.split())
        except InputError as e:
            raise ModelValidationError(f"Contexte '{key}': {e}") from None
        if vocab.eos in prefix:
            raise ModelValidationError(f"Contexte '{key}': eos interdit dans un préfixe")
        if prefix in contexts:
            raise ModelValidationError(f"Contexte en double: '{key}'")
        contexts[prefix] = _row_values(row, key)

    default = _row_values(data['default'], 'default')
    return TableModel(vocab=vocab, default_dist=default, context_dists=contexts)


def load_table_model_file(path: str) -> TableModel:
    with open(path, 'r', encoding='utf-8') as f:
        return load_table_model(f.read())


def table_model_to_json(model: TableModel) -> Dict[str, object]:
    """Sérialise un modèle table au format de fichier (ordre des contextes trié)."""
    contexts = {}
    for key in sorted(model.context_dists):
        contexts[' '.join(model.vocab.decode(key))] = [float(p) for p in model.context_dists[key]]
    return {
        'vocab': list(model.vocab.symbols),
        'eos': model.vocab.eos_symbol,
        'default': [float(p) for p in model.default_dist],
        'contexts': contexts,
    }


def table_symbols(size: int) -> List[str]:
    """Symboles a, b, c, ... suivis de eos."""
    if size - 1 > 26:
        words = [f"w{i}" for i in range(size - 1)]
    else:
        words = [chr(ord('a') + i) for i in range(size - 1)]
    return words + [EOS_SYMBOL]


def materialize_table(model: ScoringModel, depth: int,
                      source: Sequence[TokenId] = ()) -> TableModel:
    """
    Fige un modèle en modèle table : un contexte par préfixe de longueur 1..depth.

    Les préfixes plus longs retombent sur la distribution du préfixe vide.
    """
    vocab = model.vocab
    words = [t for t in range(vocab.size) if t != vocab.eos]
    n_contexts = sum(len(words) ** d for d in range(1, depth + 1))
    if n_contexts > MAX_MATERIALIZED_CONTEXTS:
        raise InputError(f"Trop de contextes à matérialiser ({n_contexts})")

    default = np.exp(model.next_logprobs(source, ()))
    contexts = {}
    for d in range(1, depth + 1):
        for prefix in itertools.product(words, repeat=d):
            contexts[prefix] = np.exp(model.next_logprobs(source, prefix))
    return TableModel(vocab=vocab, default_dist=default, context_dists=contexts)


# ---------------------------------------------------------------------------
# Modèle graine
# ---------------------------------------------------------------------------

def _seed_digest(seed: int, *parts: Sequence[int]) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update((seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little"))
    for part in parts:
        h.update(b'|')
        h.update(np.asarray(part, dtype=np.int64).tobytes())
    return int.from_bytes(h.digest(), 'little')


@functools.lru_cache(maxsize=EOS_BASE_CACHE_SIZE)
def _eos_base(seed: int, source: Tuple[TokenId, ...]) -> float:
    """Logit d'eos de départ, fonction pure de (seed, source)."""
    return -1.5 + 0.5 * float(np.random.default_rng(_seed_digest(seed, source)).standard_normal())


@dataclass(eq=False)
class SeededModel(ScoringModel):
    """
    Modèle pseudo-aléatoire déterministe.

    Les logits des mots sont tirés d'un générateur initialisé par
    hash(seed, source, prefix) ; la probabilité d'eos suit
    sigmoid(base(seed, source) + eos_growth * |prefix|), donc ne décroît pas
    avec la longueur quand eos_growth >= 0.
    """

    vocab_size: int
    seed: int
    concentration: float = 1.0
    eos_growth: float = 0.5
    source_agnostic = False

    def __post_init__(self):
        if self.vocab_size < 1:
            raise InputError(f"Taille de vocabulaire invalide: {self.vocab_size}")
        if not self.concentration > 0:
            raise InputError(f"Concentration invalide: {self.concentration}")
        symbols = [f"w{i}" for i in range(self.vocab_size - 1)] + [EOS_SYMBOL]
        self.vocab = Vocab(tuple(symbols), self.vocab_size - 1)

    def eos_logit(self, source: Sequence[TokenId], prefix_len: int) -> float:
        return _eos_base(self.seed, tuple(source)) + self.eos_growth * prefix_len

    def _logprobs(self, source, prefix):
        if self.vocab_size == 1:
            return np.zeros(1)
        z = self.eos_logit(source, len(prefix))
        log_p_eos = -float(np.logaddexp(0.0, -z))
        log_p_word = -float(np.logaddexp(0.0, z))
        rng = np.random.default_rng(_seed_digest(self.seed, source, prefix))
        logits = self.concentration * rng.standard_normal(self.vocab_size - 1)
        out = np.empty(self.vocab_size)
        out[:-1] = log_softmax(logits) + log_p_word
        out[-1] = log_p_eos
        return np.minimum(out, 0.0)


# ---------------------------------------------------------------------------
# Modèle n-gramme
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class NgramModel(ScoringModel):
    """P(w | contexte) = (count(contexte, w) + k) / (count(contexte) + k·V)."""

    vocab: Vocab
    order: int
    k: float
    counts: Dict[Tuple[int, ...], np.ndarray]

    def context(self, prefix: Sequence[TokenId]) -> Tuple[int, ...]:
        if self.order == 1:
            return ()
        padded = (BOS,) * (self.order - 1) + tuple(prefix)
        return padded[-(self.order - 1):]

    def probabilities(self, prefix: Sequence[TokenId]) -> np.ndarray:
        row = self.counts.get(self.context(prefix))
        v = self.vocab.size
        if row is None:
            return np.full(v, 1.0 / v)
        return (row + self.k) / (row.sum() + self.k * v)

    def _logprobs(self, source, prefix):
        return np.log(self.probabilities(prefix))


def train_ngram(corpus: Sequence[Sequence[str]], n: int, k: float = 1.0) -> NgramModel:
    """
    Entraîne un modèle n-gramme add-k ; eos est ajouté à chaque phrase.

    Le vocabulaire est celui du corpus (trié) plus eos ; le contexte initial est
    complété par un marqueur de début qui n'est jamais prédit.
    """
    if n < 1:
        raise InputError(f"Ordre n-gramme invalide: {n}")
    if not k > 0:
        raise InputError(f"Constante de lissage invalide: {k}")
    sentences = [list(s) for s in corpus]
    if not sentences:
        raise InputError("Corpus vide")
    words = sorted({w for s in sentences for w in s})
    if EOS_SYMBOL in words:
        raise InputError(f"Le corpus ne doit pas contenir '{EOS_SYMBOL}'")
    vocab = Vocab(tuple(words) + (EOS_SYMBOL,), len(words))

    ngram_counts = Counter()
    for sentence in sentences:
        ids = [BOS] * (n - 1) + list(vocab.encode(sentence)) + [vocab.eos]
        for i in range(n - 1, len(ids)):
            ngram_counts[tuple(ids[i - n + 1:i + 1])] += 1

    counts: Dict[Tuple[int, ...], np.ndarray] = {}
    for ngram, count in ngram_counts.items():
        row = counts.setdefault(ngram[:-1], np.zeros(vocab.size))
        row[ngram[-1]] += count
    logger.debug("n-gramme entraîné: n=%d, %d contextes, V=%d", n, len(counts), vocab.size)
    return NgramModel(vocab=vocab, order=n, k=float(k), counts=counts)


def read_corpus(path: str) -> List[List[str]]:
    """Corpus texte UTF-8 : une phrase par ligne, tokens séparés par des blancs."""
    with open(path, 'r', encoding='utf-8') as f:
        return [line.split() for line in f if line.strip()]


# ---------------------------------------------------------------------------
# Canal de copie
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class CopyChannelModel(ScoringModel):
    """
    Renforce le token source aligné sur la position courante.

    À la position j, les tokens source[j - slack .. j + slack] reçoivent un
    bonus de copy_bias (en log) ; au-delà de la fin de la source, c'est eos
    qui est renforcé. La distribution est ensuite renormalisée.
    """

    base: ScoringModel
    copy_bias: float = 2.0
    slack: int = 0
    source_agnostic = False

    def __post_init__(self):
        if not self.copy_bias >= 0:
            raise InputError(f"copy_bias doit être >= 0 (reçu {self.copy_bias})")
        if self.slack < 0:
            raise InputError(f"slack doit être >= 0 (reçu {self.slack})")
        self.vocab = self.base.vocab

    def _logprobs(self, source, prefix):
        logp = self.base.next_logprobs(source, prefix).copy()
        j = len(prefix)
        boosted = {source[p] for p in range(j - self.slack, j + self.slack + 1)
                   if 0 <= p < len(source)}
        if j >= len(source):
            boosted.add(self.vocab.eos)
        for t in boosted:
            logp[t] += self.copy_bias
        return log_softmax(logp)


# ---------------------------------------------------------------------------
# Chaînes de spécification
# ---------------------------------------------------------------------------

def _parse_params(spec: str, offset: int, body: str,
                  allowed: Iterable[str]) -> Dict[str, Tuple[str, int]]:
    """Découpe 'k1=v1,k2=v2' ; chaque valeur garde sa position dans spec."""
    allowed = set(allowed)
    params = {}
    pos = offset
    for chunk in body.split(','):
        if '=' not in chunk:
            raise ModelSpecError("Paramètre sans '='", spec, pos)
        key, value = chunk.split('=', 1)
        if key not in allowed:
            raise ModelSpecError(f"Paramètre inconnu '{key}'", spec, pos)
        if key in params:
            raise ModelSpecError(f"Paramètre répété '{key}'", spec, pos)
        value_pos = pos + len(key) + 1
        if not value:
            raise ModelSpecError(f"Valeur vide pour '{key}'", spec, value_pos)
        params[key] = (value, value_pos)
        pos += len(chunk) + 1
    return params


def _number(spec: str, params: Dict[str, Tuple[str, int]], key: str, kind,
            default=None):
    if key not in params:
        if default is None:
            raise ModelSpecError(f"Paramètre obligatoire absent '{key}'", spec, len(spec))
        return default
    value, pos = params[key]
    try:
        return kind(value)
    except ValueError:
        label = 'entier' if kind is int else 'réel'
        raise ModelSpecError(f"Valeur {label} attendue pour '{key}': '{value}'", spec, pos) from None


def make_seeded_model(spec: str) -> SeededModel:
    """Analyse "seeded:v=<int>,seed=<int>[,conc=<float>][,eosg=<float>]"."""
    prefix = 'seeded:'
    if not spec.startswith(prefix):
        raise ModelSpecError("Préfixe 'seeded:' attendu", spec, 0)
    params = _parse_params(spec, len(prefix), spec[len(prefix):], ('v', 'seed', 'conc', 'eosg'))
    v = _number(spec, params, 'v', int)
    if v < 1:
        raise ModelSpecError("v doit être >= 1", spec, params['v'][1])
    conc = _number(spec, params, 'conc', float, 1.0)
    if not conc > 0:
        raise ModelSpecError("conc doit être > 0", spec, params['conc'][1])
    return SeededModel(
        vocab_size=v,
        seed=_number(spec, params, 'seed', int),
        concentration=conc,
        eos_growth=_number(spec, params, 'eosg', float, 0.5),
    )


def make_copy_model(spec: str) -> CopyChannelModel:
    """Analyse "copy:base=<spec>,bias=<float>,slack=<int>"."""
    prefix = 'copy:base='
    if not spec.startswith(prefix):
        raise ModelSpecError("Préfixe 'copy:base=' attendu", spec, 0)
    cuts = [i for i in (spec.find(',bias=', len(prefix)), spec.find(',slack=', len(prefix)))
            if i >= 0]
    end = min(cuts) if cuts else len(spec)
    base_spec = spec[len(prefix):end]
    if not base_spec:
        raise ModelSpecError("Modèle de base vide", spec, len(prefix))
    try:
        base = load_model(base_spec)
    except ModelSpecError as e:
        raise ModelSpecError(f"Modèle de base invalide: {e}", spec, len(prefix) + e.position) from None
    params = _parse_params(spec, end + 1, spec[end + 1:], ('bias', 'slack')) if cuts else {}
    return CopyChannelModel(
        base=base,
        copy_bias=_number(spec, params, 'bias', float, 2.0),
        slack=_number(spec, params, 'slack', int, 0),
    )


def make_table_spec_model(spec: str) -> TableModel:
    """Analyse "table:<nom>,<p1>,...,<pV>" : modèle stationnaire, dernier symbole = eos."""
    prefix = 'table:'
    if not spec.startswith(prefix):
        raise ModelSpecError("Préfixe 'table:' attendu", spec, 0)
    parts = spec[len(prefix):].split(',')
    if len(parts) < 2:
        raise ModelSpecError("Au moins une probabilité attendue", spec, len(spec))
    probs = []
    pos = len(prefix) + len(parts[0]) + 1
    for part in parts[1:]:
        try:
            probs.append(float(part))
        except ValueError:
            raise ModelSpecError(f"Probabilité invalide '{part}'", spec, pos) from None
        pos += len(part) + 1
    vocab = Vocab.from_symbols(table_symbols(len(probs)))
    return TableModel(vocab=vocab, default_dist=np.asarray(probs))


def make_ngram_spec_model(spec: str) -> NgramModel:
    """Analyse "ngram:corpus=<chemin>,n=<int>[,k=<float>]"."""
    prefix = 'ngram:'
    params = _parse_params(spec, len(prefix), spec[len(prefix):], ('corpus', 'n', 'k'))
    if 'corpus' not in params:
        raise ModelSpecError("Paramètre obligatoire absent 'corpus'", spec, len(spec))
    return train_ngram(read_corpus(params['corpus'][0]),
                       _number(spec, params, 'n', int),
                       _number(spec, params, 'k', float, 1.0))


def load_model(spec_or_path: str) -> ScoringModel:
    """
    Construit un modèle depuis une spécification ou un chemin de fichier table.

    Raises:
        ModelSpecError: Spécification mal formée
        ModelValidationError: Fichier table invalide
        OSError: Fichier illisible
    """
    if spec_or_path.startswith('seeded:'):
        return make_seeded_model(spec_or_path)
    if spec_or_path.startswith('copy:'):
        return make_copy_model(spec_or_path)
    if spec_or_path.startswith('table:'):
        return make_table_spec_model(spec_or_path)
    if spec_or_path.startswith('ngram:'):
        return make_ngram_spec_model(spec_or_path)
    return load_table_model_file(spec_or_path)


def write_table_model(model: TableModel, path: Optional[str]) -> str:
    """Écrit le modèle table en JSON et retourne le texte écrit."""
    text = json.dumps(table_model_to_json(model), indent=2, ensure_ascii=False) + '\n'
    if path:
        Path(path).write_text(text, encoding='utf-8')
    return text

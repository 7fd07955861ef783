"""Greedy word-substitution attacks on text classifiers, with a keyword-index
guided substitute source and a synonym-lexicon baseline source.

The loop visits token positions in order of attack-word importance and keeps
the first candidate per position that passes all constraints and strictly
lowers the original class's probability, until the predicted class flips or
the perturbation budget runs out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .classifier import Predictor
from .corpus import Document
from .embed import EmbeddingEnsemble, EmbeddingStore, cosine, plurality_vote
from .explain import explain_omission
from .keywords import KeywordIndex
from .oracle import relatedness_indicator

__all__ = [
    "AttackConstraints",
    "AttackResult",
    "RankedWords",
    "rank_attack_words",
    "toki_substitutes",
    "lexicon_substitutes",
    "make_toki_source",
    "make_lexicon_source",
    "run_attack",
    "sentence_similarity",
    "validate_result",
    "load_lexicon",
    "pos_tag",
]

SubstituteSource = Callable[[str], list[str]]


@dataclass(frozen=True)
class AttackConstraints:
    """Limits every accepted substitution must respect."""

    modification_rate: float = 0.1
    min_sentence_sim: float = 0.9
    min_word_sim: float = 0.5
    pos_check: bool = False

    def __post_init__(self):
        if not 0.0 < self.modification_rate <= 1.0:
            raise ValueError(
                f"modification_rate {self.modification_rate} outside (0, 1]"
            )
        for name in ("min_sentence_sim", "min_word_sim"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} {value} outside [0, 1]")

    def budget(self, token_count: int) -> int:
        # Floor keeps tiny rates at zero allowed substitutions; the reported
        # perturbation count still satisfies the ceil bound.
        return math.floor(self.modification_rate * token_count)


@dataclass(frozen=True)
class AttackResult:
    success: bool
    original_text: str
    adversarial_text: str
    substitutions: tuple[tuple[int, str, str], ...]
    queries: int
    sentence_sim: float
    ranked_by: str = "gradient"

    @property
    def perturbations(self) -> int:
        return len(self.substitutions)


@dataclass(frozen=True)
class RankedWords:
    """Token positions in attack order, plus how they were scored."""

    order: tuple[tuple[int, str], ...]
    method: str  # "gradient" or "omission"


def rank_attack_words(model: Predictor, document: Document) -> RankedWords:
    """Order token positions by descending importance to the prediction.

    Uses the model's own gradient scores when available; black-box predictors
    fall back to omission scores and the result says so.  Ties keep document
    order, and tokens outside a gradient model's vocabulary go last.
    """
    tokens = document.tokens
    if not tokens:
        return RankedWords(order=(), method="gradient")
    if hasattr(model, "word_gradients"):
        scores = model.word_gradients(document)
        vocab = getattr(model, "vocabulary", {})
        in_vocab = [i for i, t in enumerate(tokens) if t in vocab]
        out_vocab = [i for i, t in enumerate(tokens) if t not in vocab]
        ranked = sorted(in_vocab, key=lambda i: -scores[i]) + out_vocab
        return RankedWords(
            order=tuple((i, tokens[i]) for i in ranked), method="gradient"
        )
    expl = explain_omission(model, document, k=len(set(tokens)))
    by_word = dict(expl.attributions)
    ranked = sorted(range(len(tokens)), key=lambda i: -by_word.get(tokens[i], 0.0))
    return RankedWords(order=tuple((i, tokens[i]) for i in ranked), method="omission")


def toki_substitutes(
    word: str,
    orig_class: str,
    index: KeywordIndex,
    ensemble: EmbeddingEnsemble,
    min_word_sim: float,
    n_candidates: int = 10,
) -> list[str]:
    """Candidate replacements chosen to weaken the model's valid evidence.

    A class-related word is replaced by low-importance keywords of its own
    class; an unrelated word by high-importance non-keywords of the other
    classes.  Candidates must pass the ensemble word-similarity vote; the
    word itself never qualifies.
    """
    votes = [
        relatedness_indicator(word, orig_class, index, store)
        for store in ensemble.stores
    ]
    related = plurality_vote([v == 1 for v in votes])

    if related:
        entry = index.for_class(orig_class)
        scored = [
            (entry.pool.entries[w].mean_score, w)
            for w in entry.keywords
            if w != word
        ]
        scored.sort(key=lambda pair: (pair[0], pair[1]))
    else:
        best: dict[str, float] = {}
        for entry in index.classes:
            if entry.class_name == orig_class:
                continue
            for w in entry.non_keywords:
                if w == word:
                    continue
                score = entry.pool.entries[w].mean_score
                if w not in best or score > best[w]:
                    best[w] = score
        scored = sorted(((s, w) for w, s in best.items()), key=lambda p: (-p[0], p[1]))

    out = []
    for _, cand in scored:
        if _word_pair_similar(ensemble, word, cand, min_word_sim):
            out.append(cand)
            if len(out) >= n_candidates:
                break
    return out


def lexicon_substitutes(
    word: str,
    lexicon: dict[str, tuple[str, ...]],
    min_word_sim: float,
    ensemble: EmbeddingEnsemble,
) -> list[str]:
    """Lexicon synonyms that also pass the embedding-similarity vote,
    keeping the lexicon's own order."""
    synonyms = lexicon.get(word.lower(), ())
    return [
        s
        for s in synonyms
        if s != word and _word_pair_similar(ensemble, word, s, min_word_sim)
    ]


def make_toki_source(
    index: KeywordIndex,
    orig_class: str,
    ensemble: EmbeddingEnsemble,
    min_word_sim: float,
    n_candidates: int = 10,
) -> SubstituteSource:
    return lambda word: toki_substitutes(
        word, orig_class, index, ensemble, min_word_sim, n_candidates
    )


def make_lexicon_source(
    lexicon: dict[str, tuple[str, ...]],
    ensemble: EmbeddingEnsemble,
    min_word_sim: float,
) -> SubstituteSource:
    return lambda word: lexicon_substitutes(word, lexicon, min_word_sim, ensemble)


def run_attack(
    predictor: Predictor,
    document: Document,
    substitute_source: SubstituteSource,
    constraints: AttackConstraints,
    ensemble: EmbeddingEnsemble,
    sim_store: Optional[EmbeddingStore] = None,
) -> AttackResult:
    """Greedy substitution until the predicted class flips or budget is out.

    A candidate is accepted only if the perturbed text stays within the
    sentence-similarity floor, passes the optional part-of-speech check, and
    strictly decreases the original class's probability.  Deterministic for
    fixed inputs; the caller is expected to attack correct predictions only.
    """
    store = sim_store if sim_store is not None else ensemble.stores[0]
    original = list(document.tokens)
    if not original:
        return AttackResult(
            success=False,
            original_text=document.raw_text,
            adversarial_text=document.raw_text,
            substitutions=(),
            queries=0,
            sentence_sim=1.0,
        )

    queries = 0

    def query(text: str):
        nonlocal queries
        queries += 1
        return predictor.predict_proba([text])[0]

    base = query(document.raw_text)
    orig_class = base.argmax
    current_prob = base.probs[orig_class]

    ranking = rank_attack_words(predictor, document)
    budget = constraints.budget(len(original))
    working = list(original)
    substitutions: list[tuple[int, str, str]] = []
    success = False

    for position, token in ranking.order:
        if success or len(substitutions) >= budget:
            break
        for candidate in substitute_source(token):
            if candidate == token:
                continue
            if constraints.pos_check and pos_tag(candidate) != pos_tag(token):
                continue
            trial = list(working)
            trial[position] = candidate
            sim = sentence_similarity(original, trial, store)
            if sim < constraints.min_sentence_sim:
                continue
            dist = query(" ".join(trial))
            if dist.probs[orig_class] >= current_prob:
                continue
            working = trial
            current_prob = dist.probs[orig_class]
            substitutions.append((position, token, candidate))
            if dist.argmax != orig_class:
                success = True
            break

    return AttackResult(
        success=success,
        original_text=document.raw_text,
        adversarial_text=" ".join(working),
        substitutions=tuple(substitutions),
        queries=queries,
        sentence_sim=sentence_similarity(original, working, store),
        ranked_by=ranking.method,
    )


def sentence_similarity(
    original_tokens: Sequence[str],
    perturbed_tokens: Sequence[str],
    store: EmbeddingStore,
) -> float:
    """Cosine of the two texts' mean in-vocabulary embeddings, mapped to
    [0, 1].  Identical token lists are exactly 1; texts without a usable
    mean vector score a conservative 0."""
    if list(original_tokens) == list(perturbed_tokens):
        return 1.0
    a = _mean_vector(store, original_tokens)
    b = _mean_vector(store, perturbed_tokens)
    if a is None or b is None:
        return 0.0
    cos = float(a @ b)
    return (cos + 1.0) / 2.0


def validate_result(
    result: AttackResult,
    predictor: Predictor,
    document: Document,
    constraints: AttackConstraints,
    store: EmbeddingStore,
) -> list[str]:
    """Re-check a finished attack against its own claims and constraints.

    Returns human-readable violation strings; an empty list means the result
    holds up under independent re-computation.
    """
    problems = []
    original = list(document.tokens)
    rebuilt = list(original)
    for position, old, new in result.substitutions:
        if not 0 <= position < len(original):
            problems.append(f"substitution position {position} out of range")
            continue
        if original[position] != old:
            problems.append(
                f"position {position}: claimed old word {old!r}, "
                f"document has {original[position]!r}"
            )
        if constraints.pos_check and pos_tag(old) != pos_tag(new):
            problems.append(f"position {position}: tag mismatch {old!r}->{new!r}")
        rebuilt[position] = new
    if " ".join(rebuilt) != result.adversarial_text:
        problems.append("adversarial text does not match the substitution list")

    bound = math.ceil(constraints.modification_rate * len(original))
    if result.perturbations > bound:
        problems.append(
            f"{result.perturbations} perturbations exceed the bound {bound}"
        )
    sim = sentence_similarity(original, rebuilt, store)
    if result.substitutions and sim < constraints.min_sentence_sim:
        problems.append(
            f"sentence similarity {sim:.4f} below {constraints.min_sentence_sim}"
        )
    if abs(sim - result.sentence_sim) > 1e-9:
        problems.append(
            f"reported sentence similarity {result.sentence_sim:.6f} "
            f"does not match recomputed {sim:.6f}"
        )
    if result.success:
        before = predictor.predict_proba([document.raw_text])[0].argmax
        after = predictor.predict_proba([result.adversarial_text])[0].argmax
        if before == after:
            problems.append("claimed success but the predicted class is unchanged")
    return problems


def load_lexicon(path) -> dict[str, tuple[str, ...]]:
    """Read a synonym file: one ``word<TAB>syn1,syn2,...`` per line."""
    lexicon: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip():
                raise ValueError(f"{path}:{lineno}: expected 'word<TAB>syn1,syn2,...'")
            word = parts[0].strip().lower()
            synonyms = tuple(
                s.strip().lower() for s in parts[1].split(",") if s.strip()
            )
            lexicon[word] = synonyms
    return lexicon


_POS_SUFFIXES = (
    ("ing", "verb-prog"),
    ("ed", "verb-past"),
    ("ly", "adverb"),
    ("est", "superlative"),
    ("er", "comparative"),
)


def pos_tag(word: str) -> str:
    """Crude suffix-class tag; only used for the optional consistency check."""
    lower = word.lower()
    for suffix, tag in _POS_SUFFIXES:
        if lower.endswith(suffix) and len(lower) > len(suffix) + 1:
            return tag
    if lower.endswith("s") and not lower.endswith("ss") and len(lower) > 2:
        return "plural"
    return "base"


def _word_pair_similar(
    ensemble: EmbeddingEnsemble, w1: str, w2: str, min_word_sim: float
) -> bool:
    votes = []
    for store in ensemble.stores:
        sim = cosine(store, w1, w2)
        votes.append(sim is not None and sim >= min_word_sim)
    return plurality_vote(votes)


def _mean_vector(store: EmbeddingStore, tokens: Sequence[str]):
    found = [store.vector(t) for t in tokens]
    found = [v for v in found if v is not None]
    if not found:
        return None
    mean = sum(found) / len(found)
    norm = float(math.sqrt(float(mean @ mean)))
    if norm < 1e-12:
        return None
    return mean / norm

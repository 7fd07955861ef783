"""Trust verdicts for correct predictions: compare the explanation's weight
on class-related words against its weight on unrelated words.

Three methods share the TrustVerdict shape: the keyword-based oracle, a
confidence-threshold baseline, and an ablation that skips keyword
identification and compares words straight to the class name.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .embed import EmbeddingEnsemble, EmbeddingStore, cosine, embed_phrase, plurality_vote
from .explain import Explanation
from .keywords import KeywordIndex

__all__ = [
    "TRUSTWORTHY",
    "UNTRUSTWORTHY",
    "WordEvidence",
    "TrustVerdict",
    "relatedness_indicator",
    "assess",
    "naive_assess",
    "assess_no_ki",
    "verdict_to_json",
]

TRUSTWORTHY = "trustworthy"
UNTRUSTWORTHY = "untrustworthy"


@dataclass(frozen=True)
class WordEvidence:
    """Why one explanation word counted as related or not."""

    word: str
    score: float
    related: bool
    votes: tuple[int, ...]


@dataclass(frozen=True)
class TrustVerdict:
    label: str
    is_rel: float
    is_unr: float
    per_word: tuple[WordEvidence, ...]
    method: str

    def __post_init__(self):
        if self.label not in (TRUSTWORTHY, UNTRUSTWORTHY):
            raise ValueError(f"unknown label {self.label!r}")
        if self.is_rel < 0 or self.is_unr < 0:
            raise ValueError("importance sums cannot be negative")
        if self.method in ("toki", "toki_no_ki"):
            expected = TRUSTWORTHY if self.is_rel >= self.is_unr else UNTRUSTWORTHY
            if self.label != expected:
                raise ValueError(
                    f"label {self.label} inconsistent with "
                    f"is_rel={self.is_rel} is_unr={self.is_unr}"
                )

    @property
    def trustworthy(self) -> bool:
        return self.label == TRUSTWORTHY


def relatedness_indicator(
    word: str, class_name: str, index: KeywordIndex, store: EmbeddingStore
) -> int:
    """1 iff the word's best match among this store's keywords is at least as
    similar as its best match among the non-keywords.

    Ties go to the keyword side.  A word with no usable comparison (out of
    vocabulary, or no in-vocabulary keyword to match) scores 0; a store whose
    non-keywords are all unusable scores 1 when a keyword match exists.
    """
    store_idx = _store_index(index, store.name)
    keywords = index.store_keywords(class_name, store_idx)
    pool_words = index.for_class(class_name).pool.words()
    non_keywords = pool_words - keywords

    if word not in store:
        return 0
    best_kw = _best_cosine(store, word, keywords)
    if best_kw == -math.inf:
        return 0
    best_nk = _best_cosine(store, word, non_keywords)
    return 1 if best_kw >= best_nk else 0


def assess(
    explanation: Explanation,
    class_name: str,
    index: KeywordIndex,
    ensemble: EmbeddingEnsemble,
) -> TrustVerdict:
    """Keyword-based trust verdict for one explained correct prediction.

    Each word's related/unrelated call is a plurality vote of per-store
    indicators.  Only positive-score words enter the two importance sums;
    the verdict is trustworthy iff the related sum is at least the unrelated
    sum.
    """
    _check_alignment(explanation, class_name, index)
    if ensemble.store_names != index.store_names:
        raise ValueError(
            f"ensemble stores {ensemble.store_names} do not match index "
            f"stores {index.store_names}"
        )
    evidence = []
    for word, score in explanation.attributions:
        votes = tuple(
            relatedness_indicator(word, class_name, index, store)
            for store in ensemble.stores
        )
        related = plurality_vote([v == 1 for v in votes])
        evidence.append(
            WordEvidence(word=word, score=score, related=related, votes=votes)
        )
    return _score_verdict(evidence, method="toki")


def naive_assess(confidence: float, theta_conf: float = 0.9) -> TrustVerdict:
    """Confidence-threshold baseline: untrustworthy iff strictly below the
    threshold, so a confidence exactly at the threshold passes."""
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence {confidence} outside [0, 1]")
    label = UNTRUSTWORTHY if confidence < theta_conf else TRUSTWORTHY
    return TrustVerdict(
        label=label, is_rel=0.0, is_unr=0.0, per_word=(), method="naive"
    )


def assess_no_ki(
    explanation: Explanation,
    class_name: str,
    ensemble: EmbeddingEnsemble,
) -> TrustVerdict:
    """Ablation without keyword identification: a word is related in a store
    iff its cosine to the class-name embedding reaches that store's
    threshold; votes and sums proceed as in assess."""
    if not explanation.attributions:
        raise ValueError("cannot assess an empty explanation")
    evidence = []
    for word, score in explanation.attributions:
        votes = []
        for store, theta in zip(ensemble.stores, ensemble.thetas):
            class_vec = embed_phrase(store, class_name)
            word_vec = store.vector(word)
            if class_vec is None or word_vec is None:
                votes.append(0)
            else:
                votes.append(1 if float(word_vec @ class_vec) >= theta.value else 0)
        related = plurality_vote([v == 1 for v in votes])
        evidence.append(
            WordEvidence(word=word, score=score, related=related, votes=tuple(votes))
        )
    return _score_verdict(evidence, method="toki_no_ki")


def verdict_to_json(verdict: TrustVerdict, doc_id: str) -> dict:
    return {
        "doc_id": doc_id,
        "method": verdict.method,
        "label": verdict.label,
        "is_rel": verdict.is_rel,
        "is_unr": verdict.is_unr,
        "words": [
            {
                "w": e.word,
                "s": e.score,
                "related": e.related,
                "votes": list(e.votes),
            }
            for e in verdict.per_word
        ],
    }


def _score_verdict(evidence: Sequence[WordEvidence], method: str) -> TrustVerdict:
    is_rel = sum(e.score for e in evidence if e.score > 0 and e.related)
    is_unr = sum(e.score for e in evidence if e.score > 0 and not e.related)
    label = TRUSTWORTHY if is_rel >= is_unr else UNTRUSTWORTHY
    return TrustVerdict(
        label=label,
        is_rel=float(is_rel),
        is_unr=float(is_unr),
        per_word=tuple(evidence),
        method=method,
    )


def _check_alignment(
    explanation: Explanation, class_name: str, index: KeywordIndex
) -> None:
    if not explanation.attributions:
        raise ValueError("cannot assess an empty explanation")
    entry = index.for_class(class_name)
    if entry.pool.class_index != explanation.predicted_class:
        raise ValueError(
            f"explanation predicts class {explanation.predicted_class}, "
            f"but {class_name!r} is class {entry.pool.class_index} in the index"
        )


def _store_index(index: KeywordIndex, store_name: str) -> int:
    try:
        return index.store_names.index(store_name)
    except ValueError:
        raise ValueError(
            f"store {store_name!r} is not part of the index "
            f"(has {index.store_names})"
        ) from None


def _best_cosine(store: EmbeddingStore, word: str, candidates) -> float:
    best = -math.inf
    for cand in candidates:
        sim = cosine(store, word, cand)
        if sim is not None and sim > best:
            best = sim
    return best

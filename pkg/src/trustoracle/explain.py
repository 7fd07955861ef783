"""Local explanations for single predictions: a sampling surrogate explainer,
leave-one-word-out probability drops, and linear-model gradient scores.

Every explainer returns the same Explanation shape so downstream trust
assessment does not care which method produced the word scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from sklearn.linear_model import Ridge

from .classifier import Predictor, word_gradients
from .corpus import Document

__all__ = [
    "Explanation",
    "explain_lime",
    "explain_omission",
    "explain_gradient",
    "make_explainer",
    "explanation_to_json",
    "render_ansi",
]

_PREDICT_BATCH = 1024
_EXHAUSTIVE_MAX_TOKENS = 20


@dataclass(frozen=True)
class Explanation:
    """Top-k word attributions for one prediction.

    Attributions are sorted by descending score; equal scores keep the words'
    first-occurrence order in the document.
    """

    predicted_class: int
    confidence: float
    attributions: tuple[tuple[str, float], ...]
    k: int

    def __post_init__(self):
        object.__setattr__(
            self,
            "attributions",
            tuple((str(w), float(s)) for w, s in self.attributions),
        )
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if len(self.attributions) > self.k:
            raise ValueError(
                f"{len(self.attributions)} attributions exceed k={self.k}"
            )
        scores = [s for _, s in self.attributions]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("attributions are not sorted by descending score")

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(w for w, _ in self.attributions)

    def score_of(self, word: str) -> Optional[float]:
        for w, s in self.attributions:
            if w == word:
                return s
        return None


def explain_lime(
    predictor: Predictor,
    document: Document,
    k: int,
    n_samples: int = 5000,
    seed: int = 0,
    kernel_width: float = 0.5,
    ridge_alpha: float = 1.0,
    exhaustive: bool = False,
) -> Explanation:
    """Fit a weighted ridge surrogate over random word-presence masks.

    Each distinct token is kept with probability 0.5 per sample; the all-ones
    mask is always sample 0.  The surrogate regresses the predicted-class
    probability on the mask bits with sample weight
    exp(-(1 - cosine(mask, ones))^2 / kernel_width^2); a word's attribution is
    its coefficient.  With ``exhaustive`` every mask is enumerated instead of
    sampled (documents up to 20 distinct tokens only).
    """
    words = _distinct_words(document)
    d = len(words)
    if d == 0:
        raise ValueError(f"document {document.id!r} has no tokens")
    if not exhaustive and n_samples < 10:
        raise ValueError(f"n_samples must be >= 10, got {n_samples}")

    if exhaustive:
        if d > _EXHAUSTIVE_MAX_TOKENS:
            raise ValueError(
                f"exhaustive mode supports <= {_EXHAUSTIVE_MAX_TOKENS} distinct "
                f"tokens, document has {d}"
            )
        codes = np.arange(2**d, dtype=np.int64)
        masks = (codes[:, None] >> np.arange(d)) & 1
        # Rotate the all-ones mask (last code) to row 0: row 0 must be the
        # unperturbed document, and no mask may appear twice.
        masks = np.vstack([masks[-1:], masks[:-1]])
    else:
        rng = np.random.default_rng(seed)
        masks = rng.integers(0, 2, size=(n_samples, d), dtype=np.int64)
        masks[0, :] = 1

    texts = [_masked_text(document, words, mask) for mask in masks]
    probs = _predict_in_batches(predictor, texts)
    full = probs[0]
    predicted = int(np.argmax(full))
    response = probs[:, predicted]

    ones_norm = np.sqrt(float(d))
    mask_norms = np.sqrt(masks.sum(axis=1).astype(np.float64))
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(mask_norms > 0, mask_norms / ones_norm, 0.0)
    weights = np.exp(-((1.0 - cos) ** 2) / (kernel_width**2))

    surrogate = Ridge(alpha=ridge_alpha, fit_intercept=True)
    surrogate.fit(masks.astype(np.float64), response, sample_weight=weights)
    scores = surrogate.coef_

    return _top_k(
        words, scores, k, predicted_class=predicted, confidence=float(full.max())
    )


def explain_omission(predictor: Predictor, document: Document, k: int) -> Explanation:
    """Score each distinct word by the predicted-class probability drop when
    all of its occurrences are deleted."""
    words = _distinct_words(document)
    if not words:
        raise ValueError(f"document {document.id!r} has no tokens")
    texts = [document.raw_text]
    for word in words:
        texts.append(" ".join(t for t in document.tokens if t != word))
    probs = _predict_in_batches(predictor, texts)
    predicted = int(np.argmax(probs[0]))
    base = probs[0, predicted]
    scores = base - probs[1:, predicted]
    return _top_k(
        words, scores, k, predicted_class=predicted, confidence=float(probs[0].max())
    )


def explain_gradient(model: Predictor, document: Document, k: int) -> Explanation:
    """Sum per-occurrence gradient scores into per-word attributions.

    Only works for predictors that expose word gradients; black-box adapters
    raise a capability error.
    """
    words = _distinct_words(document)
    if not words:
        raise ValueError(f"document {document.id!r} has no tokens")
    per_token = word_gradients(model, document)
    totals = {w: 0.0 for w in words}
    for token, score in zip(document.tokens, per_token):
        totals[token] += score
    dist = model.predict_proba([document.raw_text])[0]
    return _top_k(
        words,
        np.asarray([totals[w] for w in words]),
        k,
        predicted_class=dist.argmax,
        confidence=dist.confidence,
    )


def make_explainer(
    name: str,
    k: int,
    n_samples: int = 5000,
    seed: int = 0,
    kernel_width: float = 0.5,
    ridge_alpha: float = 1.0,
    exhaustive: bool = False,
) -> Callable[[Predictor, Document], Explanation]:
    """Bind explainer options into a (predictor, document) callable."""
    if name == "lime":
        return lambda predictor, doc: explain_lime(
            predictor,
            doc,
            k,
            n_samples=n_samples,
            seed=seed,
            kernel_width=kernel_width,
            ridge_alpha=ridge_alpha,
            exhaustive=exhaustive,
        )
    if name == "omission":
        return lambda predictor, doc: explain_omission(predictor, doc, k)
    if name == "gradient":
        return lambda predictor, doc: explain_gradient(predictor, doc, k)
    raise ValueError(f"unknown explainer {name!r}")


def explanation_to_json(
    explanation: Explanation, doc_id: str, class_names: Sequence[str]
) -> dict:
    return {
        "doc_id": doc_id,
        "class": class_names[explanation.predicted_class],
        "confidence": explanation.confidence,
        "top": [[w, s] for w, s in explanation.attributions],
    }


def render_ansi(explanation: Explanation, document: Document) -> str:
    """Console view of the document with attributed tokens highlighted.

    Intensity tracks |score| relative to the largest magnitude; positive
    scores render green, negative red.  Purely cosmetic.
    """
    scores = dict(explanation.attributions)
    peak = max((abs(s) for s in scores.values()), default=0.0)
    parts = []
    for token in document.tokens:
        score = scores.get(token)
        if score is None or peak == 0.0:
            parts.append(token)
            continue
        level = abs(score) / peak
        color = "32" if score >= 0 else "31"
        bold = "1;" if level > 0.5 else ""
        parts.append(f"\x1b[{bold}{color}m{token}\x1b[0m")
    return " ".join(parts)


def _distinct_words(document: Document) -> list[str]:
    seen = dict.fromkeys(document.tokens)
    return list(seen)


def _masked_text(document: Document, words: Sequence[str], mask) -> str:
    kept = {w for w, bit in zip(words, mask) if bit}
    return " ".join(t for t in document.tokens if t in kept)


def _predict_in_batches(predictor: Predictor, texts: Sequence[str]) -> np.ndarray:
    rows = []
    for start in range(0, len(texts), _PREDICT_BATCH):
        for dist in predictor.predict_proba(texts[start : start + _PREDICT_BATCH]):
            rows.append(dist.probs)
    return np.asarray(rows, dtype=np.float64)


def _top_k(
    words: Sequence[str],
    scores: np.ndarray,
    k: int,
    predicted_class: int,
    confidence: float,
) -> Explanation:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    # Stable sort over first-occurrence order keeps ties in document order.
    order = sorted(range(len(words)), key=lambda i: -scores[i])
    top = [(words[i], float(scores[i])) for i in order[:k]]
    return Explanation(
        predicted_class=predicted_class,
        confidence=confidence,
        attributions=tuple(top),
        k=k,
    )

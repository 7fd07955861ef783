"""Word-embedding stores, cosine similarity, relatedness-threshold search,
and the plurality-voting ensemble used by every semantic decision downstream.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .corpus import tokenize

__all__ = [
    "EmbeddingStore",
    "ThetaRelate",
    "EmbeddingEnsemble",
    "load_store",
    "cosine",
    "embed_phrase",
    "estimate_theta_relate",
    "plurality_vote",
    "load_pairs",
    "bundled_pairs",
    "build_ensemble",
]

log = logging.getLogger(__name__)

_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class EmbeddingStore:
    """Immutable word → unit-vector table; lookup is lowercase-keyed."""

    name: str
    dim: int
    vectors: dict[str, np.ndarray]

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"store {self.name!r}: dim must be positive")
        for word, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise ValueError(
                    f"store {self.name!r}: {word!r} has shape {vec.shape}"
                )
            if abs(float(np.linalg.norm(vec)) - 1.0) > 1e-6:
                raise ValueError(f"store {self.name!r}: {word!r} is not unit-norm")

    def vector(self, word: str) -> Optional[np.ndarray]:
        return self.vectors.get(word.lower())

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass(frozen=True)
class ThetaRelate:
    """Relatedness threshold for one store, with search diagnostics."""

    value: float
    precision: float
    recall: float
    iterations: int
    converged: bool
    dropped_related: int = 0
    dropped_unrelated: int = 0

    def __post_init__(self):
        if not -1.0 <= self.value <= 1.0:
            raise ValueError(f"theta {self.value} outside [-1, 1]")


@dataclass(frozen=True)
class EmbeddingEnsemble:
    """One or more stores with per-store relatedness thresholds."""

    stores: tuple[EmbeddingStore, ...]
    thetas: tuple[ThetaRelate, ...]

    def __post_init__(self):
        object.__setattr__(self, "stores", tuple(self.stores))
        object.__setattr__(self, "thetas", tuple(self.thetas))
        if not self.stores:
            raise ValueError("ensemble needs at least one store")
        if len(self.stores) != len(self.thetas):
            raise ValueError(
                f"{len(self.stores)} stores but {len(self.thetas)} thetas"
            )
        if len(self.stores) % 2 == 0:
            log.warning(
                "ensemble has an even store count (%d); ties resolve to False",
                len(self.stores),
            )

    @property
    def store_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.stores)


def load_store(path, name: Optional[str] = None) -> EmbeddingStore:
    """Read a plain-text word-vector file.

    Accepts an optional ``<count> <dim>`` header, then one ``word v1 ... vdim``
    line per word.  Zero vectors are skipped with a warning; a repeated word
    keeps the last occurrence.
    """
    store_name = name if name is not None else str(path)
    vectors: dict[str, np.ndarray] = {}
    dim: Optional[int] = None
    skipped_zero = 0
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and _all_int(parts):
                dim = int(parts[1])
                if dim <= 0:
                    raise ValueError(f"{path}:1: header declares dim {dim}")
                continue
            word, values = parts[0].lower(), parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise ValueError(f"{path}:{lineno}: no vector components")
            if len(values) != dim:
                raise ValueError(
                    f"{path}:{lineno}: expected {dim} components, got {len(values)}"
                )
            try:
                vec = np.asarray([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            norm = float(np.linalg.norm(vec))
            if norm < _NORM_FLOOR:
                skipped_zero += 1
                continue
            if word in vectors:
                duplicates += 1
            unit = vec / norm
            unit.setflags(write=False)
            vectors[word] = unit
    if skipped_zero:
        log.warning("%s: skipped %d zero vectors", path, skipped_zero)
    if duplicates:
        log.warning("%s: %d duplicate words, kept the last of each", path, duplicates)
    if not vectors:
        raise ValueError(f"{path}: no usable vectors")
    return EmbeddingStore(name=store_name, dim=dim, vectors=vectors)


def cosine(store: EmbeddingStore, w1: str, w2: str) -> Optional[float]:
    """Cosine similarity of two in-vocabulary words, else None.

    Exactly symmetric: elementwise products commute and the summation order
    does not depend on argument order.
    """
    a = store.vector(w1)
    b = store.vector(w2)
    if a is None or b is None:
        return None
    return float(np.dot(a, b))


def embed_phrase(store: EmbeddingStore, phrase: str) -> Optional[np.ndarray]:
    """Mean of the in-vocabulary token vectors, re-normalized; None if empty
    or if the mean cannot be normalized."""
    found = [store.vector(t) for t in tokenize(phrase)]
    found = [v for v in found if v is not None]
    if not found:
        return None
    mean = np.mean(found, axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < _NORM_FLOOR:
        return None
    return mean / norm


def estimate_theta_relate(
    store: EmbeddingStore,
    related_pairs: Sequence[tuple[str, str]],
    unrelated_pairs: Sequence[tuple[str, str]],
    epsilon: float = 0.01,
    max_iters: int = 30,
) -> ThetaRelate:
    """Binary-search the threshold that balances precision and recall of
    "related" classifications over labeled word pairs.

    At each midpoint theta every pair is classified related iff its cosine is
    >= theta.  Recall above precision means theta is too permissive on the
    low side, so the lower bound moves up; otherwise the upper bound moves
    down.  Stops when |precision - recall| <= epsilon or after max_iters.
    """
    if not related_pairs or not unrelated_pairs:
        raise ValueError("both pair lists must be non-empty")
    rel = [cosine(store, a, b) for a, b in related_pairs]
    unr = [cosine(store, a, b) for a, b in unrelated_pairs]
    dropped_rel = sum(1 for c in rel if c is None)
    dropped_unr = sum(1 for c in unr if c is None)
    rel_cos = np.asarray([c for c in rel if c is not None], dtype=np.float64)
    unr_cos = np.asarray([c for c in unr if c is not None], dtype=np.float64)
    if dropped_rel or dropped_unr:
        log.warning(
            "store %s: dropped %d related and %d unrelated out-of-vocabulary pairs",
            store.name,
            dropped_rel,
            dropped_unr,
        )
    if rel_cos.size == 0 or unr_cos.size == 0:
        raise ValueError(
            f"store {store.name!r}: all "
            f"{'related' if rel_cos.size == 0 else 'unrelated'} pairs are "
            "out-of-vocabulary"
        )

    lo, hi = -1.0, 1.0
    theta = 0.0
    precision = recall = 0.0
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        theta = (lo + hi) / 2.0
        tp = int(np.count_nonzero(rel_cos >= theta))
        fp = int(np.count_nonzero(unr_cos >= theta))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / rel_cos.size
        if abs(precision - recall) <= epsilon:
            converged = True
            break
        if recall > precision:
            lo = theta
        else:
            hi = theta
    return ThetaRelate(
        value=theta,
        precision=precision,
        recall=recall,
        iterations=iterations,
        converged=converged,
        dropped_related=dropped_rel,
        dropped_unrelated=dropped_unr,
    )


def plurality_vote(decisions: Sequence[bool]) -> bool:
    """True iff strictly more True than False votes; an exact tie is False."""
    yes = sum(1 for d in decisions if d)
    return yes > len(decisions) - yes


def load_pairs(path) -> list[tuple[str, str]]:
    """Read one tab-separated word pair per line."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise ValueError(f"{path}:{lineno}: expected 'word1<TAB>word2'")
            pairs.append((parts[0].strip(), parts[1].strip()))
    return pairs


def bundled_pairs(kind: str) -> list[tuple[str, str]]:
    """The package's built-in pair lists; kind is 'related' or 'unrelated'."""
    if kind not in ("related", "unrelated"):
        raise ValueError(f"kind must be 'related' or 'unrelated', got {kind!r}")
    ref = resources.files("trustoracle").joinpath("data", f"{kind}_pairs.tsv")
    with resources.as_file(ref) as path:
        return load_pairs(path)


def build_ensemble(
    stores: Sequence[EmbeddingStore],
    related_pairs: Sequence[tuple[str, str]],
    unrelated_pairs: Sequence[tuple[str, str]],
    epsilon: float = 0.01,
    max_iters: int = 30,
) -> EmbeddingEnsemble:
    """Estimate a per-store threshold and assemble the voting ensemble."""
    thetas = [
        estimate_theta_relate(s, related_pairs, unrelated_pairs, epsilon, max_iters)
        for s in stores
    ]
    return EmbeddingEnsemble(stores=tuple(stores), thetas=tuple(thetas))


def _all_int(parts: Sequence[str]) -> bool:
    try:
        for p in parts:
            int(p)
    except ValueError:
        return False
    return True

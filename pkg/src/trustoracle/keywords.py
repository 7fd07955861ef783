"""Keyword identification: explain correct training predictions, pool word
scores per class, cluster the pool by embedding similarity, and keep the
clusters that relate to the class name.

The end product is a KeywordIndex: per class, a keyword set, the leftover
non-keywords, the score pool behind them, and the per-store votes.
"""

from __future__ import annotations

import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.cluster.hierarchy import linkage

from .classifier import Predictor
from .corpus import Document, LabeledDataset
from .embed import EmbeddingEnsemble, EmbeddingStore, embed_phrase, plurality_vote
from .explain import Explanation, make_explainer

__all__ = [
    "PoolEntry",
    "WordPool",
    "Cluster",
    "ClusterSet",
    "ClassKeywords",
    "KeywordIndex",
    "collect_explanations",
    "build_word_pool",
    "cluster_pool",
    "select_keywords",
    "identify_keywords",
    "save_index",
    "load_index",
]

log = logging.getLogger(__name__)

ExplainerArg = Union[str, Callable[[Predictor, Document], Explanation]]


@dataclass(frozen=True)
class PoolEntry:
    """Aggregate attribution of one word across a class's explanations."""

    mean_score: float
    support: int

    def __post_init__(self):
        if self.support < 1:
            raise ValueError(f"support must be >= 1, got {self.support}")


@dataclass(frozen=True)
class WordPool:
    """Per-class word scores: word -> (mean attribution, #explanations)."""

    class_index: int
    entries: dict[str, PoolEntry]

    def words(self) -> frozenset[str]:
        return frozenset(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Cluster:
    """One dendrogram-cut cluster and its mean direction.

    ``mean`` is None when member vectors cancel exactly and the mean cannot
    be normalized; such clusters never count as related to anything.
    """

    words: tuple[str, ...]
    mean: Optional[np.ndarray]

    def __post_init__(self):
        if not self.words:
            raise ValueError("cluster cannot be empty")


@dataclass(frozen=True)
class ClusterSet:
    """Partition of a pool's in-vocabulary words, plus the excluded rest."""

    clusters: tuple[Cluster, ...]
    excluded: frozenset[str]

    def covered_words(self) -> frozenset[str]:
        return frozenset(w for c in self.clusters for w in c.words)


@dataclass(frozen=True)
class ClassKeywords:
    """Final keyword/non-keyword split for one class, with vote evidence."""

    class_name: str
    pool: WordPool
    keywords: frozenset[str]
    non_keywords: frozenset[str]
    votes: dict[str, tuple[int, ...]]

    def __post_init__(self):
        if self.keywords & self.non_keywords:
            raise ValueError("keywords and non-keywords overlap")
        if self.keywords | self.non_keywords != self.pool.words():
            raise ValueError("keyword split does not cover the pool")


@dataclass(frozen=True)
class KeywordIndex:
    """Per-class keyword sets with the parameters that produced them."""

    classes: tuple[ClassKeywords, ...]
    store_names: tuple[str, ...]
    theta_relate: tuple[float, ...]
    theta_dist: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.store_names) != len(self.theta_relate):
            raise ValueError("one theta_relate per store required")

    def for_class(self, class_name: str) -> ClassKeywords:
        for entry in self.classes:
            if entry.class_name == class_name:
                return entry
        raise KeyError(f"no keywords for class {class_name!r}")

    def store_keywords(self, class_name: str, store_idx: int) -> frozenset[str]:
        """This store's own pre-vote keyword set for the class."""
        entry = self.for_class(class_name)
        return frozenset(
            w for w, votes in entry.votes.items() if votes[store_idx] == 1
        )


def collect_explanations(
    predictor: Predictor,
    dataset: LabeledDataset,
    explainer: ExplainerArg,
    k: int,
    sample_limit: Optional[int] = None,
    seed: int = 0,
    workers: int = 1,
    n_samples: int = 5000,
) -> list[list[Explanation]]:
    """Explain correctly predicted instances, grouped by predicted class.

    Draws at most sample_limit documents (seeded, without replacement) before
    filtering to correct predictions, so the sample budget is spent on the
    dataset, not on the correct subset.  Returns one explanation list per
    class, aligned with dataset.class_names.
    """
    if sample_limit is not None and sample_limit < 1:
        raise ValueError(f"sample_limit must be >= 1, got {sample_limit}")
    n = len(dataset)
    if sample_limit is None or sample_limit >= n:
        chosen = list(range(n))
    else:
        rng = np.random.default_rng(seed)
        chosen = sorted(rng.choice(n, size=sample_limit, replace=False).tolist())

    docs = [dataset.documents[i] for i in chosen]
    labels = [dataset.labels[i] for i in chosen]
    dists = predictor.predict_proba([d.raw_text for d in docs])
    correct = [
        (doc, label)
        for doc, label, dist in zip(docs, labels, dists)
        if dist.argmax == label
    ]

    def explain_one(doc: Document) -> Explanation:
        fn = _resolve_explainer(explainer, k, seed, doc, n_samples)
        return fn(predictor, doc)

    explanations = _map_maybe_parallel(
        explain_one, [doc for doc, _ in correct], workers
    )
    grouped: list[list[Explanation]] = [[] for _ in dataset.class_names]
    for (_, label), expl in zip(correct, explanations):
        grouped[label].append(expl)
    for idx, group in enumerate(grouped):
        if not group:
            log.warning(
                "class %r has no correctly predicted instances",
                dataset.class_names[idx],
            )
    return grouped


def build_word_pool(explanations: Sequence[Explanation], class_index: int) -> WordPool:
    """Average each word's attribution over the explanations that contain it.

    Scores are summed in sorted order so the pool is bit-identical under any
    reordering of the explanation list.
    """
    scores: dict[str, list[float]] = {}
    for expl in explanations:
        for word, score in expl.attributions:
            scores.setdefault(word, []).append(score)
    entries = {}
    for word in sorted(scores):
        values = sorted(scores[word])
        entries[word] = PoolEntry(
            mean_score=sum(values) / len(values), support=len(values)
        )
    return WordPool(class_index=class_index, entries=entries)


def cluster_pool(
    pool: WordPool, store: EmbeddingStore, theta_dist: float
) -> ClusterSet:
    """Cut the average-linkage dendrogram over cosine distance at theta_dist.

    Merges happen while the linkage distance is strictly below theta_dist.
    Out-of-vocabulary words are excluded here; selection routes them to the
    non-keyword side.
    """
    if not 0.0 <= theta_dist <= 2.0:
        raise ValueError(f"theta_dist {theta_dist} outside [0, 2]")
    in_vocab = sorted(w for w in pool.entries if w in store)
    excluded = frozenset(w for w in pool.entries if w not in store)
    if not in_vocab:
        log.warning(
            "class %d: no pool word is in store %r", pool.class_index, store.name
        )
        return ClusterSet(clusters=(), excluded=excluded)

    if len(in_vocab) == 1:
        groups = [[0]]
    else:
        vectors = np.stack([store.vector(w) for w in in_vocab])
        merges = linkage(vectors, method="average", metric="cosine")
        groups = _cut_strict(merges, len(in_vocab), theta_dist)

    clusters = []
    for indices in groups:
        words = tuple(in_vocab[i] for i in indices)
        mean = np.mean([store.vector(w) for w in words], axis=0)
        norm = float(np.linalg.norm(mean))
        unit = mean / norm if norm > 1e-12 else None
        clusters.append(Cluster(words=words, mean=unit))
    clusters.sort(key=lambda c: c.words)
    return ClusterSet(clusters=tuple(clusters), excluded=excluded)


def select_keywords(
    clusters: ClusterSet,
    class_name: str,
    store: EmbeddingStore,
    theta_relate: float,
) -> tuple[frozenset[str], frozenset[str]]:
    """Split clustered words into (keywords, non_keywords) for one store.

    A cluster's words all become keywords iff the cosine between the cluster
    mean and the class-name embedding reaches theta_relate.  Excluded words
    and every word of an unrelated cluster form the non-keyword side.
    """
    class_vec = embed_phrase(store, class_name)
    if class_vec is None:
        log.warning(
            "class name %r is out-of-vocabulary in store %r; no keywords",
            class_name,
            store.name,
        )
        all_words = clusters.covered_words() | clusters.excluded
        return frozenset(), frozenset(all_words)

    keywords: set[str] = set()
    non_keywords: set[str] = set(clusters.excluded)
    for cluster in clusters.clusters:
        if cluster.mean is not None and float(np.dot(cluster.mean, class_vec)) >= theta_relate:
            keywords.update(cluster.words)
        else:
            non_keywords.update(cluster.words)
    return frozenset(keywords), frozenset(non_keywords)


def identify_keywords(
    predictor: Predictor,
    dataset: LabeledDataset,
    explainer: ExplainerArg,
    ensemble: EmbeddingEnsemble,
    theta_dist: float = 0.3,
    k: int = 10,
    sample_limit: Optional[int] = None,
    seed: int = 0,
    workers: int = 1,
    n_samples: int = 5000,
) -> KeywordIndex:
    """Run the full keyword pipeline once per embedding store and combine the
    per-store keyword decisions by plurality vote."""
    grouped = collect_explanations(
        predictor,
        dataset,
        explainer,
        k=k,
        sample_limit=sample_limit,
        seed=seed,
        workers=workers,
        n_samples=n_samples,
    )
    pools = [
        build_word_pool(explanations, class_index)
        for class_index, explanations in enumerate(grouped)
    ]

    jobs = [
        (class_index, store_idx)
        for class_index in range(len(pools))
        for store_idx in range(len(ensemble.stores))
    ]

    def run_pair(job: tuple[int, int]) -> frozenset[str]:
        class_index, store_idx = job
        store = ensemble.stores[store_idx]
        clusters = cluster_pool(pools[class_index], store, theta_dist)
        kw, _ = select_keywords(
            clusters,
            dataset.class_names[class_index],
            store,
            ensemble.thetas[store_idx].value,
        )
        return kw

    per_pair = _map_maybe_parallel(run_pair, jobs, workers)
    store_count = len(ensemble.stores)
    by_class: dict[int, list[frozenset[str]]] = {}
    for (class_index, store_idx), kw in zip(jobs, per_pair):
        by_class.setdefault(class_index, [None] * store_count)[store_idx] = kw

    classes = []
    for class_index, pool in enumerate(pools):
        store_kw = by_class.get(class_index, [frozenset()] * store_count)
        votes = {
            word: tuple(1 if word in kw else 0 for kw in store_kw)
            for word in sorted(pool.entries)
        }
        keywords = frozenset(
            w for w, v in votes.items() if plurality_vote([bit == 1 for bit in v])
        )
        classes.append(
            ClassKeywords(
                class_name=dataset.class_names[class_index],
                pool=pool,
                keywords=keywords,
                non_keywords=pool.words() - keywords,
                votes=votes,
            )
        )
    return KeywordIndex(
        classes=tuple(classes),
        store_names=ensemble.store_names,
        theta_relate=tuple(t.value for t in ensemble.thetas),
        theta_dist=theta_dist,
        params={
            "explainer": explainer if isinstance(explainer, str) else "custom",
            "k": k,
            "n_samples": n_samples,
            "sample_limit": sample_limit,
            "seed": seed,
        },
    )


def save_index(index: KeywordIndex, path) -> None:
    params = {
        "stores": list(index.store_names),
        "theta_relate": list(index.theta_relate),
        "theta_dist": index.theta_dist,
        **index.params,
    }
    payload = {
        "schema_version": 1,
        "class_order": [c.class_name for c in index.classes],
        "classes": {
            c.class_name: {
                "keywords": {
                    w: c.pool.entries[w].mean_score for w in sorted(c.keywords)
                },
                "non_keywords": {
                    w: c.pool.entries[w].mean_score for w in sorted(c.non_keywords)
                },
                "votes": {w: list(v) for w, v in sorted(c.votes.items())},
                "support": {
                    w: c.pool.entries[w].support for w in sorted(c.pool.entries)
                },
                "params": params,
            }
            for c in index.classes
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_index(path) -> KeywordIndex:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        order = payload["class_order"]
        per_class = payload["classes"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: not a keyword index file ({exc})") from None

    classes = []
    params = {}
    for class_index, name in enumerate(order):
        blob = per_class[name]
        params = blob.get("params", params)
        support = blob.get("support", {})
        entries = {}
        for section in ("keywords", "non_keywords"):
            for word, score in blob[section].items():
                entries[word] = PoolEntry(
                    mean_score=float(score), support=int(support.get(word, 1))
                )
        votes = {w: tuple(v) for w, v in blob.get("votes", {}).items()}
        if not votes:
            # Old or hand-written files: treat the stored split as unanimous.
            n_stores = max(len(params.get("stores", ())), 1)
            votes = {
                w: tuple([1 if w in blob["keywords"] else 0] * n_stores)
                for w in entries
            }
        classes.append(
            ClassKeywords(
                class_name=name,
                pool=WordPool(class_index=class_index, entries=entries),
                keywords=frozenset(blob["keywords"]),
                non_keywords=frozenset(blob["non_keywords"]),
                votes=votes,
            )
        )
    extra = {
        k: v
        for k, v in params.items()
        if k not in ("stores", "theta_relate", "theta_dist")
    }
    return KeywordIndex(
        classes=tuple(classes),
        store_names=tuple(params.get("stores", ())),
        theta_relate=tuple(params.get("theta_relate", ())),
        theta_dist=float(params.get("theta_dist", 0.3)),
        params=extra,
    )


def _cut_strict(merges: np.ndarray, n_leaves: int, theta_dist: float) -> list[list[int]]:
    """Group leaves joined by merge rows with distance strictly < theta_dist."""
    parent = list(range(n_leaves))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    members: dict[int, list[int]] = {i: [i] for i in range(n_leaves)}
    for row_idx, (a, b, dist, _) in enumerate(merges):
        merged = members[int(a)] + members[int(b)]
        members[n_leaves + row_idx] = merged
        if dist < theta_dist:
            first = find(merged[0])
            for leaf in merged[1:]:
                parent[find(leaf)] = first

    groups: dict[int, list[int]] = {}
    for leaf in range(n_leaves):
        groups.setdefault(find(leaf), []).append(leaf)
    return [sorted(g) for g in groups.values()]


def _resolve_explainer(
    explainer: ExplainerArg, k: int, seed: int, doc: Document, n_samples: int
) -> Callable[[Predictor, Document], Explanation]:
    if callable(explainer):
        return explainer
    doc_seed = (seed ^ zlib.crc32(doc.id.encode("utf-8"))) & 0xFFFFFFFF
    return make_explainer(explainer, k=k, n_samples=n_samples, seed=doc_seed)


def _map_maybe_parallel(fn, items, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))

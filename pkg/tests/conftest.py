"""Shared fixtures: tiny hand-built stores and a synthetic two-class corpus
with a planted spurious token per class.

The synthetic corpus is the workhorse of the end-to-end tests: class words
come from disjoint synonym sets that sit near their class name in a toy
embedding space, while the planted tokens ("zq" for the first class, "xv"
for the second) live in the filler subspace yet co-occur with their class in
95% of training docs.  A count-based model therefore leans on them, and the
construction tells us exactly which test predictions deserve trust.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from trustoracle.classifier import LinearTextModel, TrainConfig, train
from trustoracle.corpus import Document, LabeledDataset, save_dataset
from trustoracle.embed import (
    EmbeddingEnsemble,
    EmbeddingStore,
    ThetaRelate,
    build_ensemble,
)
from trustoracle.keywords import KeywordIndex, identify_keywords

CLASS_A, CLASS_B = "joy", "gloom"
PLANTED = {CLASS_A: "zq", CLASS_B: "xv"}
COMMON_SYN = {
    CLASS_A: ("glad", "cheer", "merry", "sunny", "bliss", "smile"),
    CLASS_B: ("sad", "dire", "bleak", "somber", "dreary", "misery"),
}
RARE_SYN = {
    CLASS_A: ("jolly", "happy"),
    CLASS_B: ("mourn", "gray"),
}
FILLERS = ("the", "of", "day", "time", "thing", "place")

FIXTURE_SEED = 7
EXPLAINER = "lime"
TOP_K = 10
N_SAMPLES = 300
THETA_DIST = 0.3


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def make_store(name: str = "toy6", seed: int = FIXTURE_SEED) -> EmbeddingStore:
    """Six-dimensional store: class directions e0/e1, synonym noise in
    e2/e3, fillers and planted tokens in e4/e5."""
    rng = np.random.default_rng(seed)
    vectors: dict[str, np.ndarray] = {CLASS_A: unit([1, 0, 0, 0, 0, 0]),
                                      CLASS_B: unit([0, 1, 0, 0, 0, 0])}
    for class_name, axis in ((CLASS_A, 0), (CLASS_B, 1)):
        for word in COMMON_SYN[class_name] + RARE_SYN[class_name]:
            vec = np.zeros(6)
            vec[axis] = 1.0
            noise = rng.normal(size=2)
            vec[2:4] = 0.15 * noise / np.linalg.norm(noise)
            vectors[word] = unit(vec)
    angles = np.linspace(0.15, 1.35, len(FILLERS))
    for word, angle in zip(FILLERS, angles):
        vec = np.zeros(6)
        vec[4], vec[5] = np.cos(angle), np.sin(angle)
        vectors[word] = unit(vec)
    zq = np.zeros(6)
    zq[4], zq[5] = 0.97, 0.24
    xv = np.zeros(6)
    xv[4], xv[5] = 0.93, 0.36
    vectors["zq"] = unit(zq)
    vectors["xv"] = unit(xv)
    return EmbeddingStore(name=name, dim=6, vectors=vectors)


def make_pairs() -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    related = []
    for class_name in (CLASS_A, CLASS_B):
        group = (class_name,) + COMMON_SYN[class_name] + RARE_SYN[class_name]
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                related.append((group[i], group[j]))
    unrelated = []
    group_a = (CLASS_A,) + COMMON_SYN[CLASS_A] + RARE_SYN[CLASS_A]
    group_b = (CLASS_B,) + COMMON_SYN[CLASS_B] + RARE_SYN[CLASS_B]
    for a in group_a:
        for b in group_b[:4]:
            unrelated.append((a, b))
    for a in group_a[:4] + group_b[:4]:
        for f in FILLERS[:3]:
            unrelated.append((a, f))
    return related, unrelated


def store_to_file(store: EmbeddingStore, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(store.vectors)} {store.dim}\n")
        for word in sorted(store.vectors):
            comps = " ".join(f"{x:.8f}" for x in store.vectors[word])
            fh.write(f"{word} {comps}\n")


def pairs_to_file(pairs, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in pairs:
            fh.write(f"{a}\t{b}\n")


@dataclass
class SpuriousFixture:
    train_set: LabeledDataset
    test_set: LabeledDataset
    truth: dict[str, bool]
    doc_kind: dict[str, str]
    store: EmbeddingStore
    ensemble: EmbeddingEnsemble
    model: LinearTextModel
    index: KeywordIndex
    lexicon: dict[str, tuple[str, ...]]
    paths: dict[str, Path]


def _build_corpus(rng: np.random.Generator):
    classes = (CLASS_A, CLASS_B)
    docs, labels = [], []
    for label, class_name in enumerate(classes):
        planted = PLANTED[class_name]
        common = COMMON_SYN[class_name]
        rare = RARE_SYN[class_name]
        for i in range(200):
            n_gen = int(rng.integers(2, 5))
            words = list(rng.choice(common, size=n_gen, replace=False))
            if rng.random() < 0.08:
                words.append(rare[int(rng.integers(0, len(rare)))])
            n_fill = int(rng.integers(2, 4))
            words += list(rng.choice(FILLERS, size=n_fill, replace=False))
            if rng.random() < 0.95:
                words.append(planted)
            rng.shuffle(words)
            docs.append(Document(id=f"train-{class_name}-{i}", raw_text=" ".join(words)))
            labels.append(label)
    train_set = LabeledDataset(
        documents=tuple(docs), labels=tuple(labels), class_names=classes
    )

    docs, labels, truth, doc_kind = [], [], {}, {}
    for label, class_name in enumerate(classes):
        other = classes[1 - label]
        planted = PLANTED[class_name]
        common = COMMON_SYN[class_name]
        rare = RARE_SYN[class_name]
        for i in range(20):
            words = [rare[i % len(rare)], planted]
            words += list(rng.choice(FILLERS, size=4, replace=False))
            rng.shuffle(words)
            doc_id = f"test-{class_name}-spurious-{i}"
            docs.append(Document(id=doc_id, raw_text=" ".join(words)))
            labels.append(label)
            truth[doc_id] = False
            doc_kind[doc_id] = "spurious"
        for i in range(20):
            words = list(rng.choice(common, size=3, replace=False))
            words += list(rng.choice(FILLERS, size=3, replace=False))
            rng.shuffle(words)
            doc_id = f"test-{class_name}-genuine-{i}"
            docs.append(Document(id=doc_id, raw_text=" ".join(words)))
            labels.append(label)
            truth[doc_id] = True
            doc_kind[doc_id] = "genuine"
        for i in range(10):
            words = list(rng.choice(common, size=2, replace=False))
            words.append(COMMON_SYN[other][i % len(COMMON_SYN[other])])
            words += list(rng.choice(FILLERS, size=2, replace=False))
            rng.shuffle(words)
            doc_id = f"test-{class_name}-mixed-{i}"
            docs.append(Document(id=doc_id, raw_text=" ".join(words)))
            labels.append(label)
            truth[doc_id] = True
            doc_kind[doc_id] = "mixed"
    test_set = LabeledDataset(
        documents=tuple(docs), labels=tuple(labels), class_names=classes
    )
    return train_set, test_set, truth, doc_kind


def make_lexicon() -> dict[str, tuple[str, ...]]:
    lexicon = {}
    for class_name in (CLASS_A, CLASS_B):
        rare = RARE_SYN[class_name]
        for i, word in enumerate(COMMON_SYN[class_name]):
            lexicon[word] = (rare[i % len(rare)],)
    return lexicon


@pytest.fixture(scope="session")
def spurious(tmp_path_factory) -> SpuriousFixture:
    rng = np.random.default_rng(FIXTURE_SEED)
    train_set, test_set, truth, doc_kind = _build_corpus(rng)
    store = make_store()
    related, unrelated = make_pairs()
    ensemble = build_ensemble([store], related, unrelated)
    model = train(train_set, TrainConfig(seed=FIXTURE_SEED)).model
    index = identify_keywords(
        model,
        train_set,
        EXPLAINER,
        ensemble,
        theta_dist=THETA_DIST,
        k=TOP_K,
        seed=FIXTURE_SEED,
        n_samples=N_SAMPLES,
    )
    lexicon = make_lexicon()

    root = tmp_path_factory.mktemp("spurious")
    paths = {
        "train": root / "train.jsonl",
        "test": root / "test.jsonl",
        "trust": root / "trust.jsonl",
        "store": root / "toy6.vec",
        "related": root / "related.tsv",
        "unrelated": root / "unrelated.tsv",
        "lexicon": root / "lexicon.tsv",
    }
    save_dataset(train_set, paths["train"])
    save_dataset(test_set, paths["test"])
    with open(paths["trust"], "w", encoding="utf-8") as fh:
        for doc_id, flag in sorted(truth.items()):
            label = "trustworthy" if flag else "untrustworthy"
            fh.write(json.dumps({"doc_id": doc_id, "trust_label": label}) + "\n")
    store_to_file(store, paths["store"])
    pairs_to_file(related, paths["related"])
    pairs_to_file(unrelated, paths["unrelated"])
    with open(paths["lexicon"], "w", encoding="utf-8") as fh:
        for word, synonyms in sorted(lexicon.items()):
            fh.write(f"{word}\t{','.join(synonyms)}\n")

    return SpuriousFixture(
        train_set=train_set,
        test_set=test_set,
        truth=truth,
        doc_kind=doc_kind,
        store=store,
        ensemble=ensemble,
        model=model,
        index=index,
        lexicon=lexicon,
        paths=paths,
    )


@pytest.fixture
def store2d() -> EmbeddingStore:
    """Two-dimensional hand-arithmetic store."""
    return EmbeddingStore(
        name="toy2",
        dim=2,
        vectors={
            "a": unit([1.0, 0.0]),
            "b": unit([1.0, 1.0]),
            "c": unit([0.0, 1.0]),
            "d": unit([-1.0, 0.2]),
        },
    )


@pytest.fixture
def single_theta() -> ThetaRelate:
    return ThetaRelate(
        value=0.5, precision=1.0, recall=1.0, iterations=1, converged=True
    )

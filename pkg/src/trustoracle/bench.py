"""Evaluation: confusion metrics, ROC sweeps, trust-label handling, and the
benchmark/attack orchestration behind the CLI.

Benchmark reports are byte-stable for a fixed seed; wall-clock timings go to
a sidecar structure so the main report never changes between identical runs.
"""

from __future__ import annotations

import json
import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import attack as attack_mod
from .classifier import ExternalPredictor, Predictor, TrainConfig, load_model, train
from .corpus import LabeledDataset, load_dataset
from .embed import (
    EmbeddingEnsemble,
    build_ensemble,
    bundled_pairs,
    load_pairs,
    load_store,
    plurality_vote,
)
from .explain import make_explainer
from .keywords import KeywordIndex, identify_keywords, load_index, _map_maybe_parallel
from .oracle import (
    TRUSTWORTHY,
    UNTRUSTWORTHY,
    TrustVerdict,
    assess,
    assess_no_ki,
    naive_assess,
)

__all__ = [
    "ConfusionCounts",
    "MetricReport",
    "g_mean",
    "f1",
    "compute_metrics",
    "roc_sweep",
    "explanation_precision",
    "precision_trust_label",
    "load_trust_labels",
    "merge_trust_labels",
    "BenchConfig",
    "run_benchmark",
    "run_attack_batch",
    "write_report",
    "SCHEMA_VERSION",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METHODS = ("toki", "naive", "toki_no_ki")


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts; the positive class is "trustworthy"."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} cannot be negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def add(self, predicted_positive: bool, actually_positive: bool) -> "ConfusionCounts":
        if predicted_positive and actually_positive:
            return ConfusionCounts(self.tp + 1, self.fp, self.tn, self.fn)
        if predicted_positive:
            return ConfusionCounts(self.tp, self.fp + 1, self.tn, self.fn)
        if actually_positive:
            return ConfusionCounts(self.tp, self.fp, self.tn, self.fn + 1)
        return ConfusionCounts(self.tp, self.fp, self.tn + 1, self.fn)


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    precision: float
    sensitivity: float
    specificity: float
    f1: float
    g_mean: float
    undefined: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("accuracy", "precision", "sensitivity", "specificity", "f1", "g_mean"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if abs(self.g_mean**2 - self.sensitivity * self.specificity) > 1e-9:
            raise ValueError("g_mean inconsistent with sensitivity and specificity")

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "f1": self.f1,
            "g_mean": self.g_mean,
            "undefined": list(self.undefined),
        }


def g_mean(sensitivity: float, specificity: float) -> float:
    """Geometric mean of sensitivity and specificity."""
    return math.sqrt(sensitivity * specificity)


def f1(precision: float, sensitivity: float) -> float:
    """Harmonic mean of precision and sensitivity; 0 when both are 0."""
    if precision + sensitivity == 0:
        return 0.0
    return 2 * precision * sensitivity / (precision + sensitivity)


def compute_metrics(counts: ConfusionCounts) -> MetricReport:
    """Standard binary metrics; zero-denominator ratios become 0 and are
    listed in the report's ``undefined`` field."""
    if counts.total == 0:
        raise ValueError("cannot compute metrics over zero predictions")
    undefined = []

    def ratio(numer: int, denom: int, name: str) -> float:
        if denom == 0:
            undefined.append(name)
            return 0.0
        return numer / denom

    accuracy = (counts.tp + counts.tn) / counts.total
    precision = ratio(counts.tp, counts.tp + counts.fp, "precision")
    sensitivity = ratio(counts.tp, counts.tp + counts.fn, "sensitivity")
    specificity = ratio(counts.tn, counts.tn + counts.fp, "specificity")
    return MetricReport(
        accuracy=accuracy,
        precision=precision,
        sensitivity=sensitivity,
        specificity=specificity,
        f1=f1(precision, sensitivity),
        g_mean=g_mean(sensitivity, specificity),
        undefined=tuple(undefined),
    )


def roc_sweep(
    confidences: Sequence[float],
    truth_labels: Sequence[bool],
    thresholds: Sequence[float],
) -> list[tuple[float, float, float]]:
    """(threshold, TPR, FPR) for a confidence-threshold trust rule.

    A prediction counts as trustworthy at a threshold iff its confidence is
    at least that threshold; truth labels give the positive class.
    """
    if len(confidences) != len(truth_labels):
        raise ValueError("confidences and labels differ in length")
    positives = sum(1 for t in truth_labels if t)
    negatives = len(truth_labels) - positives
    out = []
    for threshold in sorted(thresholds):
        tp = sum(1 for c, t in zip(confidences, truth_labels) if t and c >= threshold)
        fp = sum(
            1 for c, t in zip(confidences, truth_labels) if not t and c >= threshold
        )
        tpr = tp / positives if positives else 0.0
        fpr = fp / negatives if negatives else 0.0
        out.append((threshold, tpr, fpr))
    return out


def explanation_precision(
    explanation_words: Sequence[str], ground_truth_words: Sequence[str]
) -> float:
    """Fraction of distinct explanation words found in the reference set."""
    e = set(explanation_words)
    if not e:
        raise ValueError("explanation word set is empty")
    return len(e & set(ground_truth_words)) / len(e)


def precision_trust_label(
    explanation_words: Sequence[str], ground_truth_words: Sequence[str]
) -> str:
    """Trustworthy iff at least half of the explanation words are in the
    reference set (the boundary itself passes)."""
    value = explanation_precision(explanation_words, ground_truth_words)
    return TRUSTWORTHY if value >= 0.5 else UNTRUSTWORTHY


def load_trust_labels(path) -> dict[str, bool]:
    """Read one ``{"doc_id":..., "trust_label":...}`` JSON object per line."""
    labels: dict[str, bool] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                doc_id = row["doc_id"]
                raw = row["trust_label"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad trust-label line ({exc})")
            if raw not in (TRUSTWORTHY, UNTRUSTWORTHY):
                raise ValueError(f"{path}:{lineno}: unknown trust label {raw!r}")
            labels[str(doc_id)] = raw == TRUSTWORTHY
    if not labels:
        raise ValueError(f"{path}: no trust labels found")
    return labels


def merge_trust_labels(annotations: Sequence[dict[str, bool]]) -> dict[str, bool]:
    """Combine per-annotator label maps by plurality; ties are untrustworthy."""
    if not annotations:
        raise ValueError("no annotation maps to merge")
    doc_ids = set()
    for mapping in annotations:
        doc_ids.update(mapping)
    return {
        doc_id: plurality_vote(
            [mapping[doc_id] for mapping in annotations if doc_id in mapping]
        )
        for doc_id in doc_ids
    }


@dataclass(frozen=True)
class BenchConfig:
    """Inputs for one benchmark run; mirrors the CLI flags."""

    train_path: str
    test_path: str
    trust_label_paths: tuple[str, ...]
    embedding_paths: tuple[str, ...]
    related_pairs_path: str
    unrelated_pairs_path: str
    methods: tuple[str, ...] = METHODS
    explainer: str = "lime"
    top_k: int = 10
    n_samples: int = 5000
    theta_dist: float = 0.3
    theta_conf: float = 0.9
    sample_limit: Optional[int] = 2000
    seed: int = 0
    workers: int = 1
    model_path: Optional[str] = None
    plugin_command: Optional[tuple[str, ...]] = None
    index_path: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "train_path": self.train_path,
            "test_path": self.test_path,
            "trust_label_paths": list(self.trust_label_paths),
            "embedding_paths": list(self.embedding_paths),
            "related_pairs_path": self.related_pairs_path,
            "unrelated_pairs_path": self.unrelated_pairs_path,
            "methods": list(self.methods),
            "explainer": self.explainer,
            "top_k": self.top_k,
            "n_samples": self.n_samples,
            "theta_dist": self.theta_dist,
            "theta_conf": self.theta_conf,
            "sample_limit": self.sample_limit,
            "seed": self.seed,
            "model_path": self.model_path,
            "plugin_command": list(self.plugin_command)
            if self.plugin_command
            else None,
            "index_path": self.index_path,
        }


def run_benchmark(config: BenchConfig) -> tuple[dict, dict]:
    """Train/attach, identify keywords, assess by each method, score.

    Returns (report, timing): the report is deterministic for a fixed seed;
    the timing dict holds the wall-clock split and must stay out of the
    report file proper.
    """
    for method in config.methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")

    train_set = load_dataset(config.train_path)
    test_set = load_dataset(config.test_path)
    if len(test_set) == 0:
        raise ValueError(f"{config.test_path}: empty test set")
    truth = merge_trust_labels(
        [load_trust_labels(p) for p in config.trust_label_paths]
    )

    predictor = _attach_predictor(config, train_set)

    timing: dict = {}
    needs_semantics = any(m in ("toki", "toki_no_ki") for m in config.methods)
    ensemble = None
    index = None
    index_error: Optional[str] = None
    started = time.perf_counter()
    if needs_semantics:
        try:
            ensemble = _build_ensemble_from_config(config)
            if "toki" in config.methods:
                if config.index_path:
                    index = load_index(config.index_path)
                else:
                    index = identify_keywords(
                        predictor,
                        train_set,
                        config.explainer,
                        ensemble,
                        theta_dist=config.theta_dist,
                        k=config.top_k,
                        sample_limit=config.sample_limit,
                        seed=config.seed,
                        workers=config.workers,
                        n_samples=config.n_samples,
                    )
        except (ValueError, OSError) as exc:
            index_error = str(exc)
    timing["keyword_identification_s"] = time.perf_counter() - started

    # Assess only correct test predictions; every assessed doc needs a label.
    dists = predictor.predict_proba([d.raw_text for d in test_set.documents])
    eligible = [
        (doc, dist)
        for doc, label, dist in zip(test_set.documents, test_set.labels, dists)
        if dist.argmax == label
    ]
    skipped_incorrect = len(test_set) - len(eligible)
    for doc, _ in eligible:
        if doc.id not in truth:
            raise ValueError(f"no trustworthiness label for document {doc.id!r}")

    started = time.perf_counter()
    explanations = None
    if any(m in ("toki", "toki_no_ki") for m in config.methods) and index_error is None:

        def explain_doc(pair):
            doc, _ = pair
            doc_seed = (config.seed ^ zlib.crc32(doc.id.encode("utf-8"))) & 0xFFFFFFFF
            fn = make_explainer(
                config.explainer,
                k=config.top_k,
                n_samples=config.n_samples,
                seed=doc_seed,
            )
            return fn(predictor, doc)

        explanations = _map_maybe_parallel(explain_doc, eligible, config.workers)
    timing["explanation_s"] = time.perf_counter() - started

    methods_report: dict = {}
    timing["label_computation_s"] = {}
    for method in config.methods:
        started = time.perf_counter()
        try:
            verdicts = _run_method(
                method,
                config,
                predictor,
                eligible,
                explanations,
                index,
                ensemble,
                index_error,
            )
            counts = ConfusionCounts()
            rows = []
            for (doc, _), verdict in zip(eligible, verdicts):
                counts = counts.add(verdict.trustworthy, truth[doc.id])
                rows.append({"doc_id": doc.id, "label": verdict.label})
            methods_report[method] = {
                "counts": {
                    "tp": counts.tp,
                    "fp": counts.fp,
                    "tn": counts.tn,
                    "fn": counts.fn,
                },
                "metrics": compute_metrics(counts).to_json(),
                "verdicts": rows,
            }
        except ValueError as exc:
            methods_report[method] = {"error": str(exc)}
        timing["label_computation_s"][method] = time.perf_counter() - started

    confidences = [dist.confidence for _, dist in eligible]
    truth_flags = [truth[doc.id] for doc, _ in eligible]
    grid = [round(0.05 * i, 2) for i in range(21)]
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": config.to_json(),
        "n_test": len(test_set),
        "n_assessed": len(eligible),
        "skipped_incorrect": skipped_incorrect,
        "methods": methods_report,
        "roc_naive": [
            {"threshold": t, "tpr": tpr, "fpr": fpr}
            for t, tpr, fpr in roc_sweep(confidences, truth_flags, grid)
        ],
    }
    return report, timing


def run_attack_batch(
    predictor: Predictor,
    dataset: LabeledDataset,
    source_factory,
    constraints: attack_mod.AttackConstraints,
    ensemble: EmbeddingEnsemble,
    sample_limit: Optional[int] = None,
    workers: int = 1,
) -> dict:
    """Attack every correctly predicted document and aggregate ASR, mean
    perturbations on successes, and mean sentence similarity.

    ``source_factory(class_name)`` supplies the per-document substitute
    source.  Each result is re-validated; violations surface in the report.
    """
    dists = predictor.predict_proba([d.raw_text for d in dataset.documents])
    targets = [
        (doc, dataset.class_names[label])
        for doc, label, dist in zip(dataset.documents, dataset.labels, dists)
        if dist.argmax == label
    ]
    if sample_limit is not None:
        targets = targets[:sample_limit]

    def attack_one(pair):
        doc, class_name = pair
        result = attack_mod.run_attack(
            predictor, doc, source_factory(class_name), constraints, ensemble
        )
        problems = attack_mod.validate_result(
            result, predictor, doc, constraints, ensemble.stores[0]
        )
        return doc, result, problems

    outcomes = _map_maybe_parallel(attack_one, targets, workers)
    successes = [r for _, r, _ in outcomes if r.success]
    violations = [
        {"doc_id": doc.id, "problems": problems}
        for doc, _, problems in outcomes
        if problems
    ]
    return {
        "schema_version": SCHEMA_VERSION,
        "attempted": len(outcomes),
        "successes": len(successes),
        "asr": len(successes) / len(outcomes) if outcomes else 0.0,
        "mean_np": (
            sum(r.perturbations for r in successes) / len(successes)
            if successes
            else 0.0
        ),
        "mean_sentence_sim": (
            sum(r.sentence_sim for r in successes) / len(successes)
            if successes
            else 0.0
        ),
        "violations": violations,
        "results": [
            {
                "doc_id": doc.id,
                "success": r.success,
                "perturbations": r.perturbations,
                "queries": r.queries,
                "sentence_sim": r.sentence_sim,
                "ranked_by": r.ranked_by,
                "substitutions": [[p, old, new] for p, old, new in r.substitutions],
                "adversarial_text": r.adversarial_text,
            }
            for doc, r, _ in outcomes
        ],
    }


def write_report(report: dict, path, timing: Optional[dict] = None) -> None:
    """Write a report deterministically; timing goes to a sidecar file."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if timing is not None:
        with open(f"{path}.timing.json", "w", encoding="utf-8") as fh:
            json.dump(timing, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _attach_predictor(config: BenchConfig, train_set: LabeledDataset) -> Predictor:
    if config.plugin_command:
        return ExternalPredictor(list(config.plugin_command))
    if config.model_path:
        return load_model(config.model_path)
    return train(train_set, TrainConfig(seed=config.seed)).model


def _build_ensemble_from_config(config: BenchConfig) -> EmbeddingEnsemble:
    if not config.embedding_paths:
        raise ValueError("no embedding stores configured")
    stores = [load_store(p) for p in config.embedding_paths]
    related = (
        load_pairs(config.related_pairs_path)
        if config.related_pairs_path
        else bundled_pairs("related")
    )
    unrelated = (
        load_pairs(config.unrelated_pairs_path)
        if config.unrelated_pairs_path
        else bundled_pairs("unrelated")
    )
    return build_ensemble(stores, related, unrelated)


def _run_method(
    method: str,
    config: BenchConfig,
    predictor: Predictor,
    eligible,
    explanations,
    index: Optional[KeywordIndex],
    ensemble: Optional[EmbeddingEnsemble],
    index_error: Optional[str],
) -> list[TrustVerdict]:
    if method == "naive":
        return [
            naive_assess(dist.confidence, config.theta_conf) for _, dist in eligible
        ]
    if index_error is not None:
        raise ValueError(f"method {method}: {index_error}")
    if ensemble is None or explanations is None:
        raise ValueError(f"method {method}: no embedding ensemble available")
    if method == "toki" and index is None:
        raise ValueError("method toki: no keyword index available")
    verdicts = []
    for (_, _), explanation in zip(eligible, explanations):
        class_name = predictor.class_names[explanation.predicted_class]
        if method == "toki":
            verdicts.append(assess(explanation, class_name, index, ensemble))
        else:
            verdicts.append(assess_no_ki(explanation, class_name, ensemble))
    return verdicts

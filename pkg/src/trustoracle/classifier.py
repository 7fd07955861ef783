"""Classifiers under test: a trainable linear reference model and an adapter
for external black-box predictors speaking a line-JSON stdio protocol.

The reference model is multinomial logistic regression on raw term counts,
trained by full-batch gradient descent from a zero initialization, so both
training and its per-word gradients are exactly reproducible.
"""

from __future__ import annotations

import json
import logging
import subprocess
import threading
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .corpus import Document, LabeledDataset, tokenize

__all__ = [
    "ClassDistribution",
    "Predictor",
    "LinearTextModel",
    "TrainConfig",
    "TrainResult",
    "train",
    "predict_proba",
    "word_gradients",
    "ExternalPredictor",
    "TransportError",
    "CapabilityError",
    "save_model",
    "load_model",
]

log = logging.getLogger(__name__)

_SUM_TOL = 1e-9


class TransportError(RuntimeError):
    """External predictor protocol failure; message carries the request id."""


class CapabilityError(TypeError):
    """Raised when an operation needs a capability the predictor lacks."""


@dataclass(frozen=True)
class ClassDistribution:
    """Per-class probabilities for one prediction."""

    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if any(p < 0 for p in self.probs):
            raise ValueError(f"negative probability in {self.probs}")
        total = sum(self.probs)
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {total}, expected 1")

    @property
    def confidence(self) -> float:
        return max(self.probs)

    @property
    def argmax(self) -> int:
        return max(range(len(self.probs)), key=self.probs.__getitem__)


@runtime_checkable
class Predictor(Protocol):
    """Anything that maps a batch of texts to class distributions."""

    @property
    def class_names(self) -> tuple[str, ...]: ...

    def predict_proba(self, texts: Sequence[str]) -> list[ClassDistribution]: ...


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the reference model."""

    learning_rate: float = 0.5
    n_iters: int = 300
    l2: float = 1e-4
    seed: int = 0


class LinearTextModel:
    """Multinomial logistic regression over bag-of-words term counts.

    Immutable after construction; weights have shape (n_classes, n_vocab).
    """

    def __init__(
        self,
        vocabulary: dict[str, int],
        weights: np.ndarray,
        bias: np.ndarray,
        class_names: Sequence[str],
    ):
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weights.shape != (len(class_names), len(vocabulary)):
            raise ValueError(
                f"weight shape {weights.shape} != "
                f"({len(class_names)}, {len(vocabulary)})"
            )
        if bias.shape != (len(class_names),):
            raise ValueError(f"bias shape {bias.shape} != ({len(class_names)},)")
        self.vocabulary = dict(vocabulary)
        self.weights = weights
        self.bias = bias
        self._class_names = tuple(class_names)
        self.weights.setflags(write=False)
        self.bias.setflags(write=False)

    @property
    def class_names(self) -> tuple[str, ...]:
        return self._class_names

    def count_features(self, texts: Sequence[str]) -> np.ndarray:
        """Raw term-count matrix, shape (n_texts, n_vocab)."""
        counts = np.zeros((len(texts), len(self.vocabulary)), dtype=np.float64)
        for row, text in enumerate(texts):
            for token in tokenize(text):
                col = self.vocabulary.get(token)
                if col is not None:
                    counts[row, col] += 1.0
        return counts

    def logits(self, texts: Sequence[str]) -> np.ndarray:
        return self.count_features(texts) @ self.weights.T + self.bias

    def predict_proba(self, texts: Sequence[str]) -> list[ClassDistribution]:
        probs = _softmax(self.logits(texts))
        return [ClassDistribution(tuple(row)) for row in probs]

    def word_gradients(self, document: Document) -> list[float]:
        """Per-token d(logit of predicted class)/d(count of token).

        For a linear model this is the predicted-class weight of each token;
        tokens outside the vocabulary score 0.
        """
        predicted = self.predict_proba([document.raw_text])[0].argmax
        row = self.weights[predicted]
        scores = []
        for token in document.tokens:
            col = self.vocabulary.get(token)
            scores.append(float(row[col]) if col is not None else 0.0)
        return scores


@dataclass(frozen=True)
class TrainResult:
    model: LinearTextModel
    train_accuracy: float
    final_loss: float


def train(dataset: LabeledDataset, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Fit the reference model by full-batch gradient descent.

    Deterministic given the config: the weight matrix starts at zero and the
    data order is fixed, so the seed only matters if future configs add
    stochastic steps.
    """
    n_classes = len(dataset.class_names)
    if n_classes < 2:
        raise ValueError("training needs at least 2 classes")
    if len(dataset) == 0:
        raise ValueError("training needs a non-empty dataset")
    present = set(dataset.labels)
    missing = [c for i, c in enumerate(dataset.class_names) if i not in present]
    if missing:
        raise ValueError(f"classes without any document: {missing}")

    vocabulary: dict[str, int] = {}
    for doc in dataset.documents:
        for token in doc.tokens:
            if token not in vocabulary:
                vocabulary[token] = len(vocabulary)

    n_docs, n_vocab = len(dataset), len(vocabulary)
    counts = np.zeros((n_docs, n_vocab), dtype=np.float64)
    for row, doc in enumerate(dataset.documents):
        for token in doc.tokens:
            counts[row, vocabulary[token]] += 1.0
    onehot = np.zeros((n_docs, n_classes), dtype=np.float64)
    onehot[np.arange(n_docs), dataset.labels] = 1.0

    weights = np.zeros((n_classes, n_vocab), dtype=np.float64)
    bias = np.zeros(n_classes, dtype=np.float64)
    loss = float("inf")
    for _ in range(config.n_iters):
        probs = _softmax(counts @ weights.T + bias)
        error = probs - onehot  # (n_docs, n_classes)
        grad_w = error.T @ counts / n_docs + config.l2 * weights
        grad_b = error.sum(axis=0) / n_docs
        weights -= config.learning_rate * grad_w
        bias -= config.learning_rate * grad_b
        loss = _nll(probs, dataset.labels) + 0.5 * config.l2 * float(
            np.sum(weights**2)
        )

    model = LinearTextModel(vocabulary, weights, bias, dataset.class_names)
    predicted = np.argmax(counts @ weights.T + bias, axis=1)
    accuracy = float(np.mean(predicted == np.asarray(dataset.labels)))
    log.info("trained on %d docs, train accuracy %.3f", n_docs, accuracy)
    return TrainResult(model=model, train_accuracy=accuracy, final_loss=loss)


def predict_proba(predictor: Predictor, texts: Sequence[str]) -> list[ClassDistribution]:
    """Batch prediction through any predictor."""
    return predictor.predict_proba(list(texts))


def word_gradients(predictor: Predictor, document: Document) -> list[float]:
    """Per-token gradient scores; raises for gradient-incapable predictors."""
    if not isinstance(predictor, LinearTextModel):
        raise CapabilityError(
            f"{type(predictor).__name__} does not expose word gradients"
        )
    return predictor.word_gradients(document)


class ExternalPredictor:
    """Adapter for a child process speaking one JSON object per line on stdio.

    Handshake: ``{"op": "classes"}`` -> ``{"classes": [...]}``.  Prediction:
    ``{"id": n, "op": "predict", "texts": [...]}`` -> ``{"id": n, "probs":
    [[...], ...]}``.  Requests are serialized per child process; run several
    adapters for parallelism.
    """

    def __init__(self, command: Sequence[str]):
        self._command = list(command)
        self._lock = threading.Lock()
        self._next_id = 0
        self._proc = subprocess.Popen(
            self._command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        reply = self._exchange({"op": "classes"}, request_id=None)
        classes = reply.get("classes")
        if not isinstance(classes, list) or len(classes) < 2:
            raise TransportError(f"handshake returned invalid classes: {classes!r}")
        self._class_names = tuple(str(c) for c in classes)

    @property
    def class_names(self) -> tuple[str, ...]:
        return self._class_names

    def predict_proba(self, texts: Sequence[str]) -> list[ClassDistribution]:
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            reply = self._exchange(
                {"id": request_id, "op": "predict", "texts": list(texts)},
                request_id=request_id,
            )
        probs = reply.get("probs")
        if not isinstance(probs, list) or len(probs) != len(texts):
            raise TransportError(
                f"request {request_id}: expected {len(texts)} prob rows, "
                f"got {probs!r}"
            )
        out = []
        for row in probs:
            arr = np.asarray(row, dtype=np.float64)
            if arr.ndim != 1 or arr.shape[0] != len(self._class_names):
                raise TransportError(
                    f"request {request_id}: prob row has shape {arr.shape}"
                )
            total = float(arr.sum())
            if not (abs(total - 1.0) < 1e-6) or np.any(arr < 0):
                raise TransportError(
                    f"request {request_id}: prob row sums to {total}"
                )
            out.append(ClassDistribution(tuple(arr / total)))
        return out

    def _exchange(self, request: dict, request_id) -> dict:
        tag = "handshake" if request_id is None else f"request {request_id}"
        try:
            self._proc.stdin.write(json.dumps(request) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"{tag}: child process pipe failed: {exc}") from exc
        if not line:
            raise TransportError(f"{tag}: child process closed its stdout")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TransportError(f"{tag}: invalid JSON reply: {line!r}") from exc
        if request_id is not None and reply.get("id") != request_id:
            raise TransportError(
                f"request {request_id}: reply carries id {reply.get('id')!r}"
            )
        return reply

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.terminate()
            self._proc.wait(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def save_model(model: LinearTextModel, path) -> None:
    """Serialize a model to the JSON schema (vocabulary, weights, biases, classes)."""
    payload = {
        "schema_version": 1,
        "classes": list(model.class_names),
        "vocabulary": model.vocabulary,
        "weights": model.weights.tolist(),
        "biases": model.bias.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path) -> LinearTextModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    for key in ("classes", "vocabulary", "weights", "biases"):
        if key not in payload:
            raise ValueError(f"{path}: model file missing '{key}'")
    return LinearTextModel(
        vocabulary=payload["vocabulary"],
        weights=np.asarray(payload["weights"], dtype=np.float64),
        bias=np.asarray(payload["biases"], dtype=np.float64),
        class_names=payload["classes"],
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _nll(probs: np.ndarray, labels: Sequence[int]) -> float:
    picked = probs[np.arange(len(labels)), list(labels)]
    return float(-np.mean(np.log(np.clip(picked, 1e-300, None))))

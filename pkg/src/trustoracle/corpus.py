"""Dataset ingestion, tokenization, and the document/label containers.

Everything downstream (classifiers, explainers, keyword pools) works on the
token streams produced here, so tokenization is deliberately simple and
deterministic: lowercase, split on any non-alphanumeric run.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

__all__ = [
    "Document",
    "LabeledDataset",
    "DatasetFormatError",
    "tokenize",
    "load_dataset",
    "save_dataset",
]

# Alphanumeric runs, Unicode-aware; underscore counts as a separator.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class DatasetFormatError(ValueError):
    """Raised when a dataset file violates the JSONL schema."""


def tokenize(text: str) -> list[str]:
    """Lowercase *text* and split it on runs of non-alphanumeric characters.

    Empty fragments are dropped; order and duplicates are preserved.
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Document:
    """One text instance. ``tokens`` is always ``tokenize(raw_text)``."""

    id: str
    raw_text: str
    tokens: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(tokenize(self.raw_text)))


@dataclass(frozen=True)
class LabeledDataset:
    """Documents with per-document class indices into ``class_names``."""

    documents: tuple[Document, ...]
    labels: tuple[int, ...]
    class_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "documents", tuple(self.documents))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if len(self.documents) != len(self.labels):
            raise ValueError(
                f"{len(self.documents)} documents but {len(self.labels)} labels"
            )
        for label in self.labels:
            if not 0 <= label < len(self.class_names):
                raise ValueError(f"label index {label} outside class_names")

    def __len__(self) -> int:
        return len(self.documents)

    def label_name(self, i: int) -> str:
        return self.class_names[self.labels[i]]


def load_dataset(path) -> LabeledDataset:
    """Read a JSONL dataset.

    The first line declares ``{"classes": [...]}``; each following line is
    ``{"id": ..., "text": ..., "label": "<class-name>"}``.  Errors name the
    offending 1-based line number.  Duplicate ids are accepted (ids are
    opaque).
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty dataset file")

    header = _parse_line(path, 1, lines[0])
    classes = header.get("classes")
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise DatasetFormatError(f"{path}:1: header must declare a 'classes' list")
    class_index = {name: i for i, name in enumerate(classes)}

    documents: list[Document] = []
    labels: list[int] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        record = _parse_line(path, lineno, line)
        for key in ("id", "text", "label"):
            if key not in record:
                raise DatasetFormatError(f"{path}:{lineno}: missing '{key}' field")
        label = record["label"]
        if label not in class_index:
            raise DatasetFormatError(
                f"{path}:{lineno}: unknown class label {label!r}"
            )
        documents.append(Document(id=str(record["id"]), raw_text=record["text"]))
        labels.append(class_index[label])

    return LabeledDataset(tuple(documents), tuple(labels), tuple(classes))


def save_dataset(dataset: LabeledDataset, path) -> None:
    """Write *dataset* in the JSONL format read by :func:`load_dataset`."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"classes": list(dataset.class_names)}) + "\n")
        for doc, label in zip(dataset.documents, dataset.labels):
            record = {
                "id": doc.id,
                "text": doc.raw_text,
                "label": dataset.class_names[label],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _parse_line(path, lineno: int, line: str) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
    if not isinstance(record, dict):
        raise DatasetFormatError(f"{path}:{lineno}: expected a JSON object")
    return record

"""Dataset parsing, tokenization, and container invariants."""

import json

import pytest
from hypothesis import given, strategies as st

from trustoracle.corpus import (
    DatasetFormatError,
    Document,
    LabeledDataset,
    load_dataset,
    save_dataset,
    tokenize,
)


class TestTokenize:
    def test_lowercases_and_splits_punctuation(self):
        assert tokenize("Good, GREAT movie!") == ["good", "great", "movie"]

    def test_numbers_kept(self):
        assert tokenize("route 66 rocks") == ["route", "66", "rocks"]

    def test_empty_text(self):
        assert tokenize("") == []
        assert tokenize("  \t ") == []

    def test_underscore_is_a_separator(self):
        assert tokenize("snake_case") == ["snake", "case"]

    @given(st.text(max_size=80))
    def test_tokens_are_lowercase_and_nonempty(self, text):
        for token in tokenize(text):
            assert token
            assert token == token.lower()

    @given(st.text(max_size=80))
    def test_idempotent_over_join(self, text):
        tokens = tokenize(text)
        assert tokenize(" ".join(tokens)) == tokens


class TestDocument:
    def test_tokens_derived_from_text(self):
        doc = Document(id="d1", raw_text="A good Day")
        assert doc.tokens == ("a", "good", "day")

    def test_empty_document_allowed(self):
        assert Document(id="d2", raw_text="...").tokens == ()


class TestLabeledDataset:
    def test_label_bounds_checked(self):
        doc = Document(id="d", raw_text="x")
        with pytest.raises(ValueError):
            LabeledDataset(documents=(doc,), labels=(2,), class_names=("a", "b"))

    def test_length_mismatch_rejected(self):
        doc = Document(id="d", raw_text="x")
        with pytest.raises(ValueError):
            LabeledDataset(documents=(doc,), labels=(0, 1), class_names=("a", "b"))

    def test_label_name(self):
        doc = Document(id="d", raw_text="x")
        ds = LabeledDataset(documents=(doc,), labels=(1,), class_names=("neg", "pos"))
        assert ds.label_name(0) == "pos"


class TestLoadDataset:
    def write(self, path, lines):
        with open(path, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")

    def test_round_trip(self, tmp_path):
        path = tmp_path / "data.jsonl"
        docs = (
            Document(id="a", raw_text="good movie"),
            Document(id="b", raw_text="bad film"),
        )
        ds = LabeledDataset(documents=docs, labels=(1, 0), class_names=("neg", "pos"))
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert loaded.class_names == ("neg", "pos")
        assert loaded.labels == (1, 0)
        assert [d.raw_text for d in loaded.documents] == ["good movie", "bad film"]

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "data.jsonl"
        self.write(
            path,
            [
                json.dumps({"classes": ["a", "b"]}),
                "",
                json.dumps({"id": "1", "text": "x", "label": "a"}),
                "   ",
            ],
        )
        assert len(load_dataset(path)) == 1

    def test_missing_header_reported_with_line(self, tmp_path):
        path = tmp_path / "data.jsonl"
        self.write(path, [json.dumps({"id": "1", "text": "x", "label": "a"})])
        with pytest.raises(DatasetFormatError, match=":1"):
            load_dataset(path)

    def test_unknown_label_reported_with_line(self, tmp_path):
        path = tmp_path / "data.jsonl"
        self.write(
            path,
            [
                json.dumps({"classes": ["a", "b"]}),
                json.dumps({"id": "1", "text": "x", "label": "zzz"}),
            ],
        )
        with pytest.raises(DatasetFormatError, match=":2"):
            load_dataset(path)

    def test_malformed_json_reported_with_line(self, tmp_path):
        path = tmp_path / "data.jsonl"
        self.write(path, [json.dumps({"classes": ["a", "b"]}), "{not json"])
        with pytest.raises(DatasetFormatError, match=":2"):
            load_dataset(path)

    def test_missing_field_reported(self, tmp_path):
        path = tmp_path / "data.jsonl"
        self.write(
            path,
            [
                json.dumps({"classes": ["a", "b"]}),
                json.dumps({"id": "1", "label": "a"}),
            ],
        )
        with pytest.raises(DatasetFormatError, match="text"):
            load_dataset(path)

    def test_duplicate_ids_accepted(self, tmp_path):
        path = tmp_path / "data.jsonl"
        self.write(
            path,
            [
                json.dumps({"classes": ["a", "b"]}),
                json.dumps({"id": "same", "text": "x", "label": "a"}),
                json.dumps({"id": "same", "text": "y", "label": "b"}),
            ],
        )
        assert len(load_dataset(path)) == 2

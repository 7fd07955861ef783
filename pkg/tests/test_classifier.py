"""Reference model training, prediction, gradients, and the stdio plugin
adapter.

Training is cross-checked two ways: the first gradient-descent step must
match a finite-difference gradient of the objective, and the converged loss
must approach an independent scipy.optimize solution of the same objective.
"""

import json
import sys
import textwrap

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import minimize

from trustoracle.classifier import (
    CapabilityError,
    ClassDistribution,
    ExternalPredictor,
    LinearTextModel,
    TrainConfig,
    TransportError,
    load_model,
    predict_proba,
    save_model,
    train,
    word_gradients,
)
from trustoracle.corpus import Document, LabeledDataset


def make_dataset(texts_by_class):
    docs, labels = [], []
    class_names = tuple(sorted(texts_by_class))
    for label, name in enumerate(class_names):
        for i, text in enumerate(texts_by_class[name]):
            docs.append(Document(id=f"{name}{i}", raw_text=text))
            labels.append(label)
    return LabeledDataset(tuple(docs), tuple(labels), class_names)


class TestClassDistribution:
    def test_sum_enforced(self):
        with pytest.raises(ValueError):
            ClassDistribution((0.5, 0.4))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            ClassDistribution((-0.1, 1.1))

    def test_confidence_and_argmax(self):
        dist = ClassDistribution((0.2, 0.7, 0.1))
        assert dist.confidence == pytest.approx(0.7)
        assert dist.argmax == 1


def reference_loss(dataset, weights, bias, l2):
    """The training objective, written independently of the implementation."""
    vocab = {}
    for doc in dataset.documents:
        for tok in doc.tokens:
            vocab.setdefault(tok, len(vocab))
    counts = np.zeros((len(dataset), len(vocab)))
    for i, doc in enumerate(dataset.documents):
        for tok in doc.tokens:
            counts[i, vocab[tok]] += 1
    logits = counts @ weights.T + bias
    logits -= logits.max(axis=1, keepdims=True)
    log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    nll = -np.mean(log_probs[np.arange(len(dataset)), list(dataset.labels)])
    return nll + 0.5 * l2 * np.sum(weights**2)


class TestTrain:
    def test_toy_sentiment(self):
        ds = make_dataset({"pos": ["good movie"], "neg": ["bad movie"]})
        model = train(ds).model
        dist = model.predict_proba(["good movie"])[0]
        assert dist.argmax == ds.class_names.index("pos")
        assert dist.confidence > 0.5

    def test_empty_dataset_rejected(self):
        ds = LabeledDataset((), (), ("a", "b"))
        with pytest.raises(ValueError):
            train(ds)

    def test_single_class_rejected(self):
        doc = Document(id="d", raw_text="x")
        ds = LabeledDataset((doc,), (0,), ("only",))
        with pytest.raises(ValueError):
            train(ds)

    def test_class_without_documents_rejected(self):
        doc = Document(id="d", raw_text="x")
        ds = LabeledDataset((doc,), (0,), ("a", "b"))
        with pytest.raises(ValueError, match="b"):
            train(ds)

    def test_deterministic(self):
        ds = make_dataset(
            {"pos": ["good fine movie", "great day"], "neg": ["bad movie", "awful day"]}
        )
        m1 = train(ds).model
        m2 = train(ds).model
        assert_allclose(m1.weights, m2.weights)
        assert_allclose(m1.bias, m2.bias)

    def test_first_step_matches_finite_difference_gradient(self):
        ds = make_dataset({"pos": ["good good day"], "neg": ["bad day"]})
        config = TrainConfig(learning_rate=0.3, n_iters=1, l2=0.01)
        model = train(ds, config).model
        n_classes, n_vocab = model.weights.shape

        def loss_at(flat):
            w = flat[: n_classes * n_vocab].reshape(n_classes, n_vocab)
            b = flat[n_classes * n_vocab :]
            return reference_loss(ds, w, b, config.l2)

        zero = np.zeros(n_classes * n_vocab + n_classes)
        grad = np.zeros_like(zero)
        h = 1e-6
        for i in range(zero.size):
            up, down = zero.copy(), zero.copy()
            up[i] += h
            down[i] -= h
            grad[i] = (loss_at(up) - loss_at(down)) / (2 * h)
        expected = -config.learning_rate * grad
        got = np.concatenate([model.weights.ravel(), model.bias])
        assert_allclose(got, expected, atol=1e-6)

    def test_converges_toward_scipy_optimum(self):
        ds = make_dataset(
            {
                "pos": ["good fine movie", "great good day", "fine thing"],
                "neg": ["bad movie", "awful bad day", "poor thing"],
            }
        )
        config = TrainConfig(learning_rate=0.5, n_iters=400, l2=0.01)
        result = train(ds, config)
        n_classes, n_vocab = result.model.weights.shape

        def loss_at(flat):
            w = flat[: n_classes * n_vocab].reshape(n_classes, n_vocab)
            b = flat[n_classes * n_vocab :]
            return reference_loss(ds, w, b, config.l2)

        opt = minimize(loss_at, np.zeros(n_classes * n_vocab + n_classes), method="BFGS")
        assert result.final_loss <= opt.fun + 1e-3
        assert result.train_accuracy == 1.0


class TestPredictProba:
    def test_sums_to_one(self):
        ds = make_dataset({"pos": ["good"], "neg": ["bad"]})
        model = train(ds).model
        for dist in model.predict_proba(["good bad", "", "unseen words"]):
            assert sum(dist.probs) == pytest.approx(1.0, abs=1e-9)

    def test_zero_weight_model_is_uniform(self):
        model = LinearTextModel(
            vocabulary={"a": 0, "b": 1},
            weights=np.zeros((3, 2)),
            bias=np.zeros(3),
            class_names=("x", "y", "z"),
        )
        dist = model.predict_proba(["a b"])[0]
        assert_allclose(dist.probs, [1 / 3] * 3)

    def test_batch_order_equivariant(self):
        ds = make_dataset({"pos": ["good day"], "neg": ["bad day"]})
        model = train(ds).model
        texts = ["good", "bad", "good bad day"]
        forward = model.predict_proba(texts)
        backward = model.predict_proba(texts[::-1])
        for a, b in zip(forward, backward[::-1]):
            assert a.probs == b.probs

    def test_vocabulary_external_token_ignored(self):
        ds = make_dataset({"pos": ["good day"], "neg": ["bad day"]})
        model = train(ds).model
        base = model.predict_proba(["good day"])[0]
        extended = model.predict_proba(["good day xylophone"])[0]
        assert base.probs == extended.probs

    def test_helper_delegates(self):
        ds = make_dataset({"pos": ["good"], "neg": ["bad"]})
        model = train(ds).model
        assert predict_proba(model, ["good"])[0].argmax == model.predict_proba(
            ["good"]
        )[0].argmax


class TestWordGradients:
    def test_zero_model_all_zero(self):
        model = LinearTextModel(
            vocabulary={"a": 0},
            weights=np.zeros((2, 1)),
            bias=np.zeros(2),
            class_names=("x", "y"),
        )
        doc = Document(id="d", raw_text="a a a")
        assert model.word_gradients(doc) == [0.0, 0.0, 0.0]

    def test_oov_token_scores_zero(self):
        ds = make_dataset({"pos": ["good"], "neg": ["bad"]})
        model = train(ds).model
        doc = Document(id="d", raw_text="good zebra")
        scores = model.word_gradients(doc)
        assert scores[1] == 0.0

    def test_matches_finite_differences_on_random_models(self):
        rng = np.random.default_rng(11)
        words = [f"w{i}" for i in range(6)]
        for _ in range(100):
            n_classes = int(rng.integers(2, 4))
            vocab = {w: i for i, w in enumerate(words)}
            model = LinearTextModel(
                vocabulary=vocab,
                weights=rng.normal(size=(n_classes, len(words))),
                bias=rng.normal(size=n_classes),
                class_names=tuple(f"c{i}" for i in range(n_classes)),
            )
            tokens = list(rng.choice(words, size=int(rng.integers(1, 5))))
            doc = Document(id="d", raw_text=" ".join(tokens))
            predicted = model.predict_proba([doc.raw_text])[0].argmax

            counts = np.zeros(len(words))
            for t in doc.tokens:
                counts[vocab[t]] += 1

            def logit(c):
                return float(model.weights[predicted] @ c + model.bias[predicted])

            h = 1e-5
            for pos, token in enumerate(doc.tokens):
                up, down = counts.copy(), counts.copy()
                up[vocab[token]] += h
                down[vocab[token]] -= h
                fd = (logit(up) - logit(down)) / (2 * h)
                assert model.word_gradients(doc)[pos] == pytest.approx(fd, abs=1e-6)

    def test_capability_error_for_black_box(self):
        class Opaque:
            class_names = ("a", "b")

            def predict_proba(self, texts):
                return [ClassDistribution((0.5, 0.5)) for _ in texts]

        with pytest.raises(CapabilityError):
            word_gradients(Opaque(), Document(id="d", raw_text="x"))


class TestModelSerialization:
    def test_round_trip(self, tmp_path):
        ds = make_dataset({"pos": ["good fine"], "neg": ["bad poor"]})
        model = train(ds).model
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.class_names == model.class_names
        texts = ["good", "bad poor fine"]
        for a, b in zip(model.predict_proba(texts), loaded.predict_proba(texts)):
            assert a.probs == pytest.approx(b.probs, abs=1e-12)

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"classes": ["a", "b"]}))
        with pytest.raises(ValueError, match="vocabulary"):
            load_model(path)


PLUGIN_OK = textwrap.dedent(
    """
    import json, sys
    for line in sys.stdin:
        req = json.loads(line)
        if req.get("op") == "classes":
            print(json.dumps({"classes": ["neg", "pos"]}), flush=True)
            continue
        probs = []
        for text in req["texts"]:
            p = 0.9 if "good" in text else 0.2
            probs.append([1 - p, p])
        print(json.dumps({"id": req["id"], "probs": probs}), flush=True)
    """
)

PLUGIN_BAD_SUM = PLUGIN_OK.replace("[1 - p, p]", "[p, p]")
PLUGIN_WRONG_ID = PLUGIN_OK.replace('req["id"]', '999')
PLUGIN_DIES = textwrap.dedent(
    """
    import json, sys
    line = sys.stdin.readline()
    print(json.dumps({"classes": ["neg", "pos"]}), flush=True)
    sys.exit(0)
    """
)
PLUGIN_THIRD_BAD = textwrap.dedent(
    """
    import json, sys
    served = 0
    for line in sys.stdin:
        req = json.loads(line)
        if req.get("op") == "classes":
            print(json.dumps({"classes": ["neg", "pos"]}), flush=True)
            continue
        row = [0.5, 0.5] if served < 2 else [0.9, 0.9]
        served += 1
        print(json.dumps({"id": req["id"], "probs": [row for _ in req["texts"]]}),
              flush=True)
    """
)


def write_plugin(tmp_path, source, name="plugin.py"):
    path = tmp_path / name
    path.write_text(source)
    return [sys.executable, str(path)]


class TestExternalPredictor:
    def test_handshake_and_predict(self, tmp_path):
        with ExternalPredictor(write_plugin(tmp_path, PLUGIN_OK)) as predictor:
            assert predictor.class_names == ("neg", "pos")
            dists = predictor.predict_proba(["good movie", "bad movie"])
            assert dists[0].argmax == 1
            assert dists[1].argmax == 0
            for dist in dists:
                assert sum(dist.probs) == pytest.approx(1.0, abs=1e-9)

    def test_bad_probability_sum_names_request(self, tmp_path):
        with ExternalPredictor(write_plugin(tmp_path, PLUGIN_BAD_SUM)) as predictor:
            with pytest.raises(TransportError, match="request 0"):
                predictor.predict_proba(["anything"])

    def test_wrong_reply_id_rejected(self, tmp_path):
        with ExternalPredictor(write_plugin(tmp_path, PLUGIN_WRONG_ID)) as predictor:
            with pytest.raises(TransportError, match="request 0"):
                predictor.predict_proba(["anything"])

    def test_dead_child_reported(self, tmp_path):
        with ExternalPredictor(write_plugin(tmp_path, PLUGIN_DIES)) as predictor:
            with pytest.raises(TransportError, match="request 0"):
                predictor.predict_proba(["anything"])

    def test_request_ids_increase(self, tmp_path):
        with ExternalPredictor(write_plugin(tmp_path, PLUGIN_THIRD_BAD)) as predictor:
            predictor.predict_proba(["a"])
            predictor.predict_proba(["b"])
            with pytest.raises(TransportError, match="request 2"):
                predictor.predict_proba(["c"])

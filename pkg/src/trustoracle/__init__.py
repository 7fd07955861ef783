"""Trustworthiness oracles for text classifiers.

A prediction is trustworthy when its explanation rests chiefly on words
semantically related to the predicted class.  The package identifies
per-class keyword lists from training explanations, issues trust verdicts
for new predictions, and turns the same keyword knowledge into a guided
adversarial attack.
"""

from .attack import (
    AttackConstraints,
    AttackResult,
    lexicon_substitutes,
    run_attack,
    sentence_similarity,
    toki_substitutes,
)
from .bench import (
    BenchConfig,
    ConfusionCounts,
    MetricReport,
    compute_metrics,
    explanation_precision,
    roc_sweep,
    run_benchmark,
)
from .classifier import (
    ClassDistribution,
    ExternalPredictor,
    LinearTextModel,
    TrainConfig,
    train,
)
from .corpus import Document, LabeledDataset, load_dataset, tokenize
from .embed import (
    EmbeddingEnsemble,
    EmbeddingStore,
    build_ensemble,
    cosine,
    embed_phrase,
    estimate_theta_relate,
    load_store,
    plurality_vote,
)
from .explain import Explanation, explain_gradient, explain_lime, explain_omission
from .keywords import KeywordIndex, identify_keywords, load_index, save_index
from .oracle import TrustVerdict, assess, assess_no_ki, naive_assess

__version__ = "0.1.0"

__all__ = [
    "AttackConstraints",
    "AttackResult",
    "BenchConfig",
    "ClassDistribution",
    "ConfusionCounts",
    "Document",
    "EmbeddingEnsemble",
    "EmbeddingStore",
    "Explanation",
    "ExternalPredictor",
    "KeywordIndex",
    "LabeledDataset",
    "LinearTextModel",
    "MetricReport",
    "TrainConfig",
    "TrustVerdict",
    "assess",
    "assess_no_ki",
    "build_ensemble",
    "compute_metrics",
    "cosine",
    "embed_phrase",
    "estimate_theta_relate",
    "explain_gradient",
    "explain_lime",
    "explain_omission",
    "explanation_precision",
    "identify_keywords",
    "lexicon_substitutes",
    "load_dataset",
    "load_index",
    "load_store",
    "naive_assess",
    "plurality_vote",
    "roc_sweep",
    "run_attack",
    "run_benchmark",
    "save_index",
    "tokenize",
    "toki_substitutes",
    "train",
]

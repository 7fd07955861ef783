"""Command-line front end: train, explain, keywords, assess, attack, bench.

A flat JSON config file can pre-load any flag; explicit flags win.  All
report files carry a schema_version; --pretty adds ANSI word highlighting
for the humans watching the terminal.
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from typing import Optional, Sequence

from . import attack as attack_mod
from . import bench as bench_mod
from .classifier import (
    ExternalPredictor,
    Predictor,
    TrainConfig,
    load_model,
    save_model,
    train,
)
from .corpus import load_dataset
from .embed import build_ensemble, bundled_pairs, load_pairs, load_store
from .explain import explanation_to_json, make_explainer, render_ansi
from .keywords import identify_keywords, load_index, save_index
from .oracle import assess, assess_no_ki, naive_assess, verdict_to_json

_METHOD_BY_FLAG = {"toki": "toki", "naive": "naive", "toki-no-ki": "toki_no_ki"}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    config = _preload_config(argv)
    parser = _build_parser(config)
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _preload_config(argv: Sequence[str]) -> dict:
    scout = argparse.ArgumentParser(add_help=False)
    scout.add_argument("--config")
    known, _ = scout.parse_known_args(argv)
    if not known.config:
        return {}
    with open(known.config, encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise SystemExit(f"error: config file {known.config} is not a JSON object")
    return config


def _build_parser(config: dict) -> argparse.ArgumentParser:
    def opt(sub, flag, **kwargs):
        dest = flag.lstrip("-").replace("-", "_")
        if dest in config:
            if kwargs.get("action") == "store_true":
                kwargs["default"] = bool(config[dest])
            else:
                kwargs["default"] = config[dest]
            kwargs.pop("required", None)
        sub.add_argument(flag, **kwargs)

    common = argparse.ArgumentParser(add_help=False)
    opt(common, "--seed", type=int, default=0)
    opt(common, "--workers", type=int, default=1)
    common.add_argument("--config", help="flat JSON file of flag defaults")
    opt(common, "--pretty", action="store_true", default=False)

    parser = argparse.ArgumentParser(
        prog="trustoracle",
        description="Trustworthiness oracles for text classifiers",
    )
    subs = parser.add_subparsers(dest="command")

    p = subs.add_parser("train", parents=[common], help="fit the reference model")
    opt(p, "--train", required=True, help="training dataset (JSONL)")
    opt(p, "--out", required=True, help="model file to write")
    opt(p, "--lr", type=float, default=0.5)
    opt(p, "--iters", type=int, default=300)
    opt(p, "--l2", type=float, default=1e-4)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("explain", parents=[common], help="explain predictions")
    _add_predictor_opts(opt, p)
    opt(p, "--input", required=True, help="dataset to explain (JSONL)")
    opt(p, "--explainer", choices=["lime", "omission", "gradient"], default="lime")
    opt(p, "--top-k", type=int, default=10)
    opt(p, "--n-samples", type=int, default=5000)
    opt(p, "--out", help="explanations file to write (JSONL)")
    p.set_defaults(func=_cmd_explain)

    p = subs.add_parser("keywords", parents=[common], help="build the keyword index")
    _add_predictor_opts(opt, p)
    opt(p, "--train", required=True, help="training dataset (JSONL)")
    _add_semantic_opts(opt, p)
    opt(p, "--explainer", choices=["lime", "omission", "gradient"], default="lime")
    opt(p, "--top-k", type=int, default=10)
    opt(p, "--n-samples", type=int, default=5000)
    opt(p, "--theta-dist", type=float, default=0.3)
    opt(p, "--sample", type=int, default=2000, help="training docs to sample")
    opt(p, "--out", required=True, help="index file to write")
    p.set_defaults(func=_cmd_keywords)

    p = subs.add_parser("assess", parents=[common], help="issue trust verdicts")
    _add_predictor_opts(opt, p)
    opt(p, "--input", required=True, help="test dataset (JSONL)")
    opt(p, "--index", help="keyword index file (toki method)")
    _add_semantic_opts(opt, p)
    opt(p, "--method", choices=sorted(_METHOD_BY_FLAG), default="toki")
    opt(p, "--explainer", choices=["lime", "omission", "gradient"], default="lime")
    opt(p, "--top-k", type=int, default=10)
    opt(p, "--n-samples", type=int, default=5000)
    opt(p, "--theta-conf", type=float, default=0.9)
    opt(p, "--out", help="verdicts file to write (JSONL)")
    p.set_defaults(func=_cmd_assess)

    p = subs.add_parser("attack", parents=[common], help="run substitution attacks")
    _add_predictor_opts(opt, p)
    opt(p, "--input", required=True, help="test dataset (JSONL)")
    opt(p, "--source", choices=["toki", "lexicon"], default="toki")
    opt(p, "--index", help="keyword index file (toki source)")
    opt(p, "--lexicon", help="synonym lexicon file (lexicon source)")
    _add_semantic_opts(opt, p)
    opt(p, "--mod-rate", type=float, default=0.1)
    opt(p, "--min-sent-sim", type=float, default=0.9)
    opt(p, "--min-word-sim", type=float, default=0.5)
    opt(p, "--pos-check", action="store_true", default=False)
    opt(p, "--sample", type=int, default=None, help="max documents to attack")
    opt(p, "--report", required=True, help="attack report file to write")
    p.set_defaults(func=_cmd_attack)

    p = subs.add_parser("bench", parents=[common], help="run the full benchmark")
    _add_predictor_opts(opt, p)
    opt(p, "--train", required=True)
    opt(p, "--test", required=True)
    opt(p, "--trust-labels", required=True, help="comma-separated annotator files")
    opt(p, "--index", help="reuse a keyword index file")
    _add_semantic_opts(opt, p)
    opt(p, "--methods", default="toki,naive,toki-no-ki")
    opt(p, "--explainer", choices=["lime", "omission", "gradient"], default="lime")
    opt(p, "--top-k", type=int, default=10)
    opt(p, "--n-samples", type=int, default=5000)
    opt(p, "--theta-dist", type=float, default=0.3)
    opt(p, "--theta-conf", type=float, default=0.9)
    opt(p, "--sample", type=int, default=2000)
    opt(p, "--out", required=True, help="report file to write")
    p.set_defaults(func=_cmd_bench)
    return parser


def _add_predictor_opts(opt, sub) -> None:
    opt(sub, "--model", help="model file from the train subcommand")
    opt(sub, "--plugin", help="external predictor command line")


def _add_semantic_opts(opt, sub) -> None:
    opt(sub, "--embeddings", help="comma-separated word-vector files")
    opt(sub, "--pairs-related", help="related word pairs (TSV)")
    opt(sub, "--pairs-unrelated", help="unrelated word pairs (TSV)")


def _attach(args) -> Predictor:
    if getattr(args, "plugin", None):
        return ExternalPredictor(args.plugin.split())
    if getattr(args, "model", None):
        return load_model(args.model)
    raise ValueError("need --model or --plugin")


def _ensemble_from_args(args):
    if not getattr(args, "embeddings", None):
        raise ValueError("need --embeddings for this method")
    stores = [load_store(p) for p in args.embeddings.split(",")]
    related = (
        load_pairs(args.pairs_related)
        if args.pairs_related
        else bundled_pairs("related")
    )
    unrelated = (
        load_pairs(args.pairs_unrelated)
        if args.pairs_unrelated
        else bundled_pairs("unrelated")
    )
    return build_ensemble(stores, related, unrelated)


def _doc_seed(seed: int, doc_id: str) -> int:
    return (seed ^ zlib.crc32(doc_id.encode("utf-8"))) & 0xFFFFFFFF


def _cmd_train(args) -> int:
    dataset = load_dataset(args.train)
    result = train(
        dataset,
        TrainConfig(learning_rate=args.lr, n_iters=args.iters, l2=args.l2, seed=args.seed),
    )
    save_model(result.model, args.out)
    print(f"trained on {len(dataset)} docs, accuracy {result.train_accuracy:.3f}")
    print(f"model written to {args.out}")
    return 0


def _cmd_explain(args) -> int:
    predictor = _attach(args)
    dataset = load_dataset(args.input)
    lines = []
    for doc in dataset.documents:
        fn = make_explainer(
            args.explainer,
            k=args.top_k,
            n_samples=args.n_samples,
            seed=_doc_seed(args.seed, doc.id),
        )
        explanation = fn(predictor, doc)
        lines.append(explanation_to_json(explanation, doc.id, predictor.class_names))
        if args.pretty:
            print(render_ansi(explanation, doc))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(json.dumps(line) + "\n")
        print(f"{len(lines)} explanations written to {args.out}")
    else:
        for line in lines:
            print(json.dumps(line))
    return 0


def _cmd_keywords(args) -> int:
    dataset = load_dataset(args.train)
    predictor = _attach(args) if (args.model or args.plugin) else train(dataset).model
    ensemble = _ensemble_from_args(args)
    index = identify_keywords(
        predictor,
        dataset,
        args.explainer,
        ensemble,
        theta_dist=args.theta_dist,
        k=args.top_k,
        sample_limit=args.sample,
        seed=args.seed,
        workers=args.workers,
        n_samples=args.n_samples,
    )
    save_index(index, args.out)
    for entry in index.classes:
        print(
            f"class {entry.class_name}: {len(entry.keywords)} keywords, "
            f"{len(entry.non_keywords)} non-keywords"
        )
    print(f"index written to {args.out}")
    return 0


def _cmd_assess(args) -> int:
    predictor = _attach(args)
    dataset = load_dataset(args.input)
    method = _METHOD_BY_FLAG[args.method]
    index = load_index(args.index) if args.index else None
    ensemble = _ensemble_from_args(args) if method != "naive" else None
    if method == "toki" and index is None:
        raise ValueError("method toki needs --index")

    dists = predictor.predict_proba([d.raw_text for d in dataset.documents])
    skipped = 0
    lines = []
    for doc, label, dist in zip(dataset.documents, dataset.labels, dists):
        if dist.argmax != label:
            skipped += 1
            continue
        if method == "naive":
            verdict = naive_assess(dist.confidence, args.theta_conf)
        else:
            fn = make_explainer(
                args.explainer,
                k=args.top_k,
                n_samples=args.n_samples,
                seed=_doc_seed(args.seed, doc.id),
            )
            explanation = fn(predictor, doc)
            class_name = predictor.class_names[explanation.predicted_class]
            if method == "toki":
                verdict = assess(explanation, class_name, index, ensemble)
            else:
                verdict = assess_no_ki(explanation, class_name, ensemble)
            if args.pretty:
                print(f"{doc.id}: {verdict.label}")
                print(render_ansi(explanation, doc))
        lines.append(verdict_to_json(verdict, doc.id))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(json.dumps(line) + "\n")
        print(f"{len(lines)} verdicts written to {args.out}, {skipped} skipped")
    else:
        for line in lines:
            print(json.dumps(line))
    return 0


def _cmd_attack(args) -> int:
    predictor = _attach(args)
    dataset = load_dataset(args.input)
    ensemble = _ensemble_from_args(args)
    constraints = attack_mod.AttackConstraints(
        modification_rate=args.mod_rate,
        min_sentence_sim=args.min_sent_sim,
        min_word_sim=args.min_word_sim,
        pos_check=args.pos_check,
    )
    if args.source == "toki":
        if not args.index:
            raise ValueError("source toki needs --index")
        index = load_index(args.index)

        def factory(class_name):
            return attack_mod.make_toki_source(
                index, class_name, ensemble, constraints.min_word_sim
            )

    else:
        if not args.lexicon:
            raise ValueError("source lexicon needs --lexicon")
        lexicon = attack_mod.load_lexicon(args.lexicon)

        def factory(class_name):
            return attack_mod.make_lexicon_source(
                lexicon, ensemble, constraints.min_word_sim
            )

    report = bench_mod.run_attack_batch(
        predictor,
        dataset,
        factory,
        constraints,
        ensemble,
        sample_limit=args.sample,
        workers=args.workers,
    )
    bench_mod.write_report(report, args.report)
    print(
        f"attacked {report['attempted']} docs: ASR {report['asr']:.3f}, "
        f"mean NP {report['mean_np']:.2f}, "
        f"mean sentence sim {report['mean_sentence_sim']:.3f}"
    )
    if report["violations"]:
        print(f"WARNING: {len(report['violations'])} results failed re-validation")
    print(f"report written to {args.report}")
    return 0


def _cmd_bench(args) -> int:
    config = bench_mod.BenchConfig(
        train_path=args.train,
        test_path=args.test,
        trust_label_paths=tuple(args.trust_labels.split(",")),
        embedding_paths=tuple(args.embeddings.split(",")) if args.embeddings else (),
        related_pairs_path=args.pairs_related or "",
        unrelated_pairs_path=args.pairs_unrelated or "",
        methods=tuple(_METHOD_BY_FLAG[m] for m in args.methods.split(",")),
        explainer=args.explainer,
        top_k=args.top_k,
        n_samples=args.n_samples,
        theta_dist=args.theta_dist,
        theta_conf=args.theta_conf,
        sample_limit=args.sample,
        seed=args.seed,
        workers=args.workers,
        model_path=args.model,
        plugin_command=tuple(args.plugin.split()) if args.plugin else None,
        index_path=args.index,
    )
    report, timing = bench_mod.run_benchmark(config)
    bench_mod.write_report(report, args.out, timing=timing)
    for method, blob in report["methods"].items():
        if "error" in blob:
            print(f"{method}: error: {blob['error']}")
        else:
            print(f"{method}: g-mean {blob['metrics']['g_mean']:.3f}")
    print(f"report written to {args.out} (timing in {args.out}.timing.json)")
    return 0


if __name__ == "__main__":
    sys.exit(main())

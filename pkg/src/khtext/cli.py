"""Single entry point: `khtext <subcommand>`.

Subcommands: kcc, embed {train,nn,pca,export}, classify {train,eval,predict},
baseline {train,eval}, synth. Every error declared by the modules exits
nonzero with a one-line diagnostic; exit zero means outputs were fully
written. `--seed` plus `--threads 1` makes every stage byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from khtext import baseline as bl
from khtext import classifiers as clf
from khtext import embedding as emb
from khtext import evalkit, synth, textproc


def _threads(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("KHTEXT_THREADS")
    return int(env) if env else 1


def _cmd_kcc(args) -> int:
    with open(args.file, encoding="utf-8") as fh:
        for line in fh:
            clusters = textproc.kcc_split(line.rstrip("\n"))
            sys.stdout.write("\t".join(clusters) + "\n")
    return 0


def _subword_config(args) -> textproc.SubwordConfig:
    return textproc.SubwordConfig.for_unit(args.unit, args.minn, args.maxn, args.buckets)


def _cmd_embed_train(args) -> int:
    hyper = emb.EmbeddingHyper(
        m=args.dim, window=args.window, negatives=args.neg, epochs=args.epochs,
        lr0=args.lr, mode=args.mode, subword=_subword_config(args),
        min_count=args.min_count, sample=args.sample, seed=args.seed)
    corpus = list(textproc.corpus_tokens(args.corpus))
    model = emb.train(corpus, hyper, threads=_threads(args.threads), backend=args.backend)
    model.save(args.out)
    for epoch, loss in enumerate(model.epoch_losses):
        print(f"epoch {epoch}: loss {loss:.6f}")
    print(f"saved model: {len(model.vocab)} words, dim {hyper.m} -> {args.out}")
    return 0


def _cmd_embed_nn(args) -> int:
    model = emb.load_model(args.model)
    for token, cos in model.nearest_neighbors(args.token, args.topk):
        print(f"{token}\t{cos:.6f}")
    return 0


def _cmd_embed_pca(args) -> int:
    model = emb.load_model(args.model)
    with open(args.tokens_file, encoding="utf-8") as fh:
        tokens = [line.strip() for line in fh if line.strip()]
    rows = model.pca_project(tokens)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write("token\tx\ty\n")
        for token, x, y in rows:
            out.write(f"{token}\t{x:.6f}\t{y:.6f}\n")
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_embed_export(args) -> int:
    model = emb.load_model(args.model)
    model.export_text(args.out)
    print(f"exported {len(model.vocab)} vectors -> {args.out}")
    return 0


def _load_train_valid(args, task: str):
    train_docs, catalog = textproc.load_dataset(args.train, task)
    valid_docs = None
    if args.valid:
        vdocs, vcat = textproc.load_dataset(args.valid, task)
        valid_docs = textproc.align_labels(vdocs, vcat, catalog)
    return train_docs, valid_docs, catalog


def _cmd_classify_train(args) -> int:
    embedding = emb.load_model(args.embeddings)
    train_docs, valid_docs, catalog = _load_train_valid(args, args.task)
    config = clf.ClassifierConfig(
        arch=args.arch, task=args.task, k=len(catalog), m=embedding.hyper.m,
        dropout_p=args.dropout, optimizer=args.optimizer, lr=args.lr,
        epochs=args.epochs, batch_size=args.batch, seed=args.seed,
        max_len=args.max_len)
    model = clf.train_classifier(train_docs, embedding, config, valid=valid_docs,
                                 label_catalog=catalog)
    for rec in model.history:
        line = f"epoch {rec['epoch']}: train loss {rec['train_loss']:.6f}"
        if "valid_macro_f1" in rec:
            line += f", valid macro-F1 {rec['valid_macro_f1']:.4f}"
        print(line)
    clf.save_classifier(model, args.out)
    print(f"saved {args.arch} classifier ({model.num_parameters()} parameters) -> {args.out}")
    return 0


def _cmd_classify_predict(args) -> int:
    model = clf.load_classifier(args.model)
    embedding = emb.load_model(args.embeddings)
    docs, catalog = textproc.load_dataset(args.input)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for doc in docs:
            labels, probs = clf.predict(model, doc, embedding)
            names = [model.label_catalog[i] if i < len(model.label_catalog) else str(i)
                     for i in sorted(labels)]
            rec = {"labels": names,
                   "probabilities": {model.label_catalog[i] if i < len(model.label_catalog)
                                     else str(i): round(float(p), 6)
                                     for i, p in enumerate(probs)}}
            out.write(json.dumps(rec, ensure_ascii=False) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def _print_report(report: evalkit.MetricsReport, fmt: str) -> None:
    if fmt == "json":
        print(report.to_json())
    else:
        print(report.to_table())


def _cmd_classify_eval(args) -> int:
    model = clf.load_classifier(args.model)
    embedding = emb.load_model(args.embeddings)
    docs, catalog = textproc.load_dataset(args.test, model.config.task)
    docs = textproc.align_labels(docs, catalog, model.label_catalog)
    report = clf.evaluate_model(model, docs, embedding)
    _print_report(report, args.format)
    return 0


def _cmd_baseline_train(args) -> int:
    docs, catalog = textproc.load_dataset(args.train, args.task)
    model = bl.train_baseline(docs, args.task, k=len(catalog), lam=args.lam,
                              epochs=args.epochs, seed=args.seed,
                              label_catalog=catalog)
    bl.save_baseline(model, args.out)
    print(f"saved baseline ({len(model.vectorizer.vocabulary)} tf-idf columns, "
          f"k={len(catalog)}) -> {args.out}")
    return 0


def _cmd_baseline_eval(args) -> int:
    model = bl.load_baseline(args.model)
    docs, catalog = textproc.load_dataset(args.test, model.svm.task)
    docs = textproc.align_labels(docs, catalog, model.label_catalog)
    preds = model.predict_docs(docs)
    k = model.svm.weights.shape[0]
    if model.svm.task == "multiclass":
        report = evalkit.evaluate_multiclass([next(iter(d.labels)) for d in docs],
                                             [next(iter(p)) for p in preds], k,
                                             model.label_catalog)
    else:
        report = evalkit.evaluate_multilabel([d.labels for d in docs], preds, k,
                                             model.label_catalog)
    _print_report(report, args.format)
    return 0


def _cmd_synth(args) -> int:
    records = synth.synth_dataset(args.k, args.docs_per_class, args.vocab_per_class,
                                  args.overlap, args.task, args.seed)
    synth.write_jsonl(records, args.out)
    print(f"wrote {len(records)} documents -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="khtext",
                                     description="Khmer text classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kcc", help="segment a text file into Khmer character clusters")
    p.add_argument("file")
    p.set_defaults(func=_cmd_kcc)

    p_embed = sub.add_parser("embed", help="subword embedding commands")
    esub = p_embed.add_subparsers(dest="subcommand", required=True)

    p = esub.add_parser("train", help="train an embedding model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("cbow", "skipgram"), default="cbow")
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--neg", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--minn", type=int, default=None)
    p.add_argument("--maxn", type=int, default=None)
    p.add_argument("--buckets", type=int, default=2_000_000)
    p.add_argument("--unit", choices=("codepoint", "kcc"), default="kcc")
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--sample", type=float, default=0.0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--backend", choices=("auto", "c", "python"), default="auto")
    p.set_defaults(func=_cmd_embed_train)

    p = esub.add_parser("nn", help="nearest neighbors of a token")
    p.add_argument("token")
    p.add_argument("-k", "--topk", type=int, default=10)
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_embed_nn)

    p = esub.add_parser("pca", help="2D PCA plot data for a token list (TSV)")
    p.add_argument("--tokens-file", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_embed_pca)

    p = esub.add_parser("export", help="export vectors in text format")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_embed_export)

    p_clf = sub.add_parser("classify", help="neural classifier commands")
    csub = p_clf.add_subparsers(dest="subcommand", required=True)

    p = csub.add_parser("train", help="train a classifier on frozen embeddings")
    p.add_argument("--arch", choices=("linear", "birnn", "cnn"), required=True)
    p.add_argument("--task", choices=("multiclass", "multilabel"), required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--valid", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--max-len", type=int, default=256)
    p.set_defaults(func=_cmd_classify_train)

    p = csub.add_parser("predict", help="predict labels for a JSONL input")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_classify_predict)

    p = csub.add_parser("eval", help="evaluate a classifier on a labeled JSONL set")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=_cmd_classify_eval)

    p_base = sub.add_parser("baseline", help="TF-IDF + SVM baseline commands")
    bsub = p_base.add_subparsers(dest="subcommand", required=True)

    p = bsub.add_parser("train", help="train the TF-IDF + SVM baseline")
    p.add_argument("--train", required=True)
    p.add_argument("--task", choices=("multiclass", "multilabel"), required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_baseline_train)

    p = bsub.add_parser("eval", help="evaluate a baseline model")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=_cmd_baseline_eval)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--docs-per-class", type=int, default=100)
    p.add_argument("--vocab-per-class", type=int, default=30)
    p.add_argument("--overlap", type=float, default=0.3)
    p.add_argument("--task", choices=("multiclass", "multilabel"), default="multiclass")
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"khtext: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

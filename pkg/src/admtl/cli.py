"""Command-line interface.

Subcommands: gen-synthetic, train, evaluate, cross-validate, predict,
export-attention. Log verbosity comes from ``ADMTL_LOG_LEVEL`` (default
WARNING).

Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
3 input data error, 4 checkpoint/config mismatch.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from .evaluation import ConfusionMatrix, export_attention, macro_prf, pr_curve_points, write_metrics, write_pr_points
from .model import ConfigError, predict_proba
from .runner import ManifestMismatch, RunConfig, build_model, check_manifest, load_run, save_run
from .synthetic import GeneratorConfig, generate_synthetic_tasks
from .text import CorpusFormatError, EmbeddingFormatError, read_corpus, write_corpus
from .trainer import fit, run_cross_validation

log = logging.getLogger("admtl")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_DATA, EXIT_MISMATCH = 0, 1, 2, 3, 4


def _load_config(args):
    cfg = RunConfig.from_file(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.with_seed(args.seed)
    return cfg


def cmd_gen_synthetic(args):
    """Tasks and label sets come from the config's task sections when present;
    each corpus goes to its configured path, else ``<out>/<task>.jsonl``."""
    values, targets, base = {}, {}, None
    if args.config:
        cfg = RunConfig.from_file(args.config)
        values = dict(cfg.synthetic)
        if cfg.tasks:
            values.setdefault("tasks", ",".join(s.task_id for s in cfg.tasks))
            for s in cfg.tasks:
                values.setdefault(f"labels.{s.task_id}", ",".join(s.labels))
                if s.corpus and not args.out:
                    targets[s.task_id] = cfg.resolve(s.corpus)
        base = cfg.seed
    gen = GeneratorConfig.from_mapping(values)
    if args.seed is not None:
        gen.seed = args.seed
    elif base is not None and "seed" not in values:
        gen.seed = base
    for spec, corpus in zip(gen.task_specs(), generate_synthetic_tasks(gen)):
        path = targets.get(spec.task_id) or os.path.join(args.out or ".", f"{spec.task_id}.jsonl")
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        write_corpus(path, corpus)
        print(f"{spec.task_id}: {len(corpus)} examples, labels {','.join(spec.labels)} -> {path}")
    return EXIT_OK


def cmd_train(args):
    cfg = _load_config(args)
    cfg.require_tasks()
    corpora = cfg.load_corpora("train")
    rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg.model, cfg.tasks, corpora, rng, cfg.resolve(cfg.embedding_path))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "train_log.jsonl"), "w", encoding="utf-8") as fh:
        fit(model, corpora, cfg.training, rng, log=fh)
    path = save_run(args.out, model, cfg)
    print(f"checkpoint written to {path}")
    return EXIT_OK


def _score(model, task_id, examples):
    spec = model.head(task_id).spec
    probs, ids = predict_proba(model, examples, task_id)
    gold_by_id = {ex.example_id: ex.label for ex in examples}
    gold = [gold_by_id[i] for i in ids]
    pred = [spec.labels[int(k)] for k in np.argmax(probs, axis=-1)]
    return probs, gold, pred


def cmd_evaluate(args):
    cfg = _load_config(args)
    model, manifest = load_run(args.checkpoint)
    check_manifest(manifest, cfg)
    if args.corpus:
        task = args.task or model.task_specs[0].task_id
        corpora = {task: read_corpus(args.corpus, model.head(task).labels)}
    else:
        corpora = cfg.load_corpora("test")
    os.makedirs(args.out, exist_ok=True)
    report = {}
    for task, examples in corpora.items():
        probs, gold, pred = _score(model, task, examples)
        labels = model.head(task).labels
        report[task] = macro_prf(ConfusionMatrix.from_labels(gold, pred, labels)).to_dict()
        if len(labels) == 2:
            # positive class is the second label
            points = pr_curve_points(probs[:, 1], np.array([int(g == labels[1]) for g in gold]))
            write_pr_points(os.path.join(args.out, f"pr_{task}.csv"), points)
        print(f"{task}: macro P {report[task]['macro']['precision']:.4f} "
              f"R {report[task]['macro']['recall']:.4f} F1 {report[task]['macro']['f1']:.4f}")
    write_metrics(os.path.join(args.out, "metrics.json"), {"schema_version": 1, "tasks": report})
    return EXIT_OK


def cmd_cross_validate(args):
    cfg = _load_config(args)
    cfg.require_tasks()
    corpora = cfg.load_corpora("train")

    def factory(train, rng):
        return build_model(cfg.model, cfg.tasks, train, rng, cfg.resolve(cfg.embedding_path))

    result = run_cross_validation(corpora, cfg.tasks, factory, cfg.training, args.folds)
    os.makedirs(args.out, exist_ok=True)
    write_metrics(os.path.join(args.out, "cv_metrics.json"), result.to_dict())
    with open(os.path.join(args.out, "cv_predictions.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
        for rec in result.predictions:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    for task, agg in result.aggregate.items():
        print(f"{task}: {agg['folds']} folds, mean macro F1 {agg['macro']['f1']:.4f}")
    return EXIT_OK


def cmd_predict(args):
    model, _ = load_run(args.checkpoint)
    examples = read_corpus(args.corpus)
    by_task = {}
    for ex in examples:
        by_task.setdefault(args.task or ex.task_id, []).append(ex)
    rows = {}
    for task, group in by_task.items():
        labels = model.head(task).labels
        probs, ids = predict_proba(model, group, task)
        for eid, row in zip(ids, probs):
            rows[eid] = {"id": eid, "task": task, "label": labels[int(np.argmax(row))],
                         "probabilities": {lab: float(p) for lab, p in zip(labels, row)}}
    out = args.out
    if os.path.isdir(out) or out.endswith(os.sep):
        os.makedirs(out, exist_ok=True)
        out = os.path.join(out, "predictions.jsonl")
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            rec = rows.get(ex.example_id, {"id": ex.example_id, "task": args.task or ex.task_id,
                                           "label": None, "skipped": "entities farther apart than max length"})
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"{len(examples)} predictions written to {out}")
    return EXIT_OK


def cmd_export_attention(args):
    model, _ = load_run(args.checkpoint)
    examples = {ex.example_id: ex for ex in read_corpus(args.corpus)}
    if args.example_id not in examples:
        raise CorpusFormatError(f"example {args.example_id!r} not found in {args.corpus}")
    ex = examples[args.example_id]
    out = args.out
    if os.path.isdir(out):
        out = os.path.join(out, f"attention_{args.example_id}.csv")
    heat = export_attention(ex, model, args.task or ex.task_id, out, args.path)
    print(f"heatmap ({heat.weights.shape[0]} aspects x {len(heat.tokens)} tokens) written to {out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="admtl", description="Adversarial multi-task relation extraction")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="write synthetic multi-task corpora")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory (default: the corpus paths named in --config)")
    g.set_defaults(func=cmd_gen_synthetic)

    t = sub.add_parser("train", help="train a model and write checkpoint + manifest + log")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on test corpora")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus")
    e.add_argument("--task")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("cross-validate", help="document-level k-fold cross-validation")
    c.add_argument("--config", required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--folds", type=int)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cross_validate)

    r = sub.add_parser("predict", help="label every example of a corpus")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--corpus", required=True)
    r.add_argument("--task")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    a = sub.add_parser("export-attention", help="write the attention heatmap of one example")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--corpus", required=True)
    a.add_argument("--example-id", required=True)
    a.add_argument("--task")
    a.add_argument("--path", choices=("private", "shared"))
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_export_attention)
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get("ADMTL_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ManifestMismatch as exc:
        print(f"checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (CorpusFormatError, EmbeddingFormatError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort categorisation for scripts
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

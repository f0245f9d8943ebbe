#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
Lanjut Commandline Interface

Every subcommand runs in its own run directory `<output_dir>/<command>`
and leaves a `manifest.json` there.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 internal error.
"""

# = Imports =

import io
import os
import sys
import json
import time
import logging
import argparse
import platform

import numpy as np

import lanjut
from lanjut.errors import LanjutError
from lanjut.fingerprint import fingerprint
from lanjut.config import load_config, ConfigError
from lanjut.tokenizer import train_wordpiece, save_vocab, load_vocab
from lanjut.model import init_model
from lanjut.checkpoint import save_checkpoint, read_checkpoint, load_checkpoint
from lanjut.training import (posttrain_mlm, resume_posttrain, subset_training_data,
                             finetune_classifier)
from lanjut.corpus import (read_documents, build_corpus, save_corpus, load_corpus, corpus_stats,
                           render_corpus_table, load_dataset, save_dataset, make_splits,
                           render_dataset_table, STYLE_TAGS)
from lanjut.evaluation import (ResultsStore, run_sweep, render_report, render_metrics_table,
                               evaluate_model, fraction_seed)


# = Exit Codes =

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


# = Exceptions =

class UsageError(Exception):
    pass


# = Setup Functions =

# == Logger ==

def setup_logging(args):
    logging.basicConfig(level=args.loglevel or logging.WARNING,
                        format=""
                        "%(asctime)-15s %(levelname)-9s"
                        "%(threadName)-12s %(name)-15s %(filename)s:%(lineno)s -> %(funcName)s():"
                        "\n\t"
                        "%(message)s")


# == Run Directory ==

def run_dir(args, config):
    path = os.path.join(config.paths.output_dir, args.command)
    os.makedirs(path, exist_ok=True)
    return path


def write_manifest(path, args, argv, config, started, status, exit_code):
    text = config.to_text()
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "status": status,
        "exit_code": exit_code,
        "config": text,
        "config_fingerprint": ":".join(fingerprint(text)),
        "seeds": {name: getattr(config, name).seed for name in ("pretrain", "posttrain", "finetune")},
        "sweep_seeds": list(config.sweep.seeds),
        "split_seed": config.dataset.split_seed,
        "versions": {"lanjut": lanjut.__version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "seconds": round(time.time() - started, 3),
    }

    with io.open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def require(value, name):
    if not value:
        raise ConfigError("%s is not set (config file or flag)" % name)
    return value


def _vocab(config):
    return load_vocab(require(config.paths.vocab, "paths.vocab"), lowercase=config.tokenizer.lowercase)


# = Commands =

# Dispatched by `dispatch` from commandline args. Every command gets the
# parsed args, the effective config and its run directory.

# == clean-corpus ==

def cmd_clean_corpus(args, config, out):
    documents = read_documents(args.input, args.style)
    corpus = build_corpus(documents, workers=config.corpus.workers,
                          ad_markers=config.corpus.ad_markers,
                          abbreviations=config.corpus.abbreviations,
                          min_words=config.corpus.min_words)

    output = args.output or os.path.join(out, "corpus.txt")
    save_corpus(corpus, output)

    name = args.name or os.path.basename(os.path.normpath(args.input))
    print(render_corpus_table([(name, args.style, corpus_stats(corpus))]))
    print("Wrote %s" % output)


# == train-tokenizer ==

def cmd_train_tokenizer(args, config, out):
    paths = args.corpus or [p for p in (config.paths.generic_corpus, config.paths.domain_corpus) if p]
    sentences = [s for path in require(paths, "paths.generic_corpus") for s in load_corpus(path)]

    vocab = train_wordpiece(sentences, vocab_size=config.tokenizer.vocab_size,
                            min_frequency=config.tokenizer.min_frequency,
                            lowercase=config.tokenizer.lowercase)

    output = config.paths.vocab or os.path.join(out, "vocab.txt")
    save_vocab(vocab, output)
    print("Wrote %s: %d tokens" % (output, len(vocab)))


# == pretrain ==

def cmd_pretrain(args, config, out):
    corpus = load_corpus(require(config.paths.generic_corpus, "paths.generic_corpus"))
    vocab = _vocab(config)

    model = init_model(config.model_config().replace(vocab_size=len(vocab)), config.pretrain.seed)
    model, history = posttrain_mlm(model, corpus, vocab, config.pretrain,
                                   checkpoint_dir=os.path.join(out, "checkpoints"),
                                   log_path=os.path.join(out, "training.log"), stage="pretrain")

    save_checkpoint(model, os.path.join(out, "model.ckpt"))
    print("Pre-trained %d epochs, final loss %.4f" % (len(history), history[-1]))


# == posttrain ==

def cmd_posttrain(args, config, out):
    corpus = load_corpus(require(config.paths.domain_corpus, "paths.domain_corpus"))
    vocab = _vocab(config)
    checkpoints = os.path.join(out, "checkpoints")
    log_path = os.path.join(out, "training.log")

    if args.resume:
        model, history = resume_posttrain(args.resume, corpus, vocab, config.posttrain,
                                          checkpoint_dir=checkpoints, log_path=log_path)
    else:
        init = require(config.paths.init_checkpoint, "paths.init_checkpoint")
        expected = config.model_config().replace(vocab_size=len(vocab))
        model = read_checkpoint(init, expect_config=expected).model
        model, history = posttrain_mlm(model, corpus, vocab, config.posttrain,
                                       checkpoint_dir=checkpoints, log_path=log_path)

    save_checkpoint(model, os.path.join(out, "model.ckpt"))
    print("Post-trained to epoch %d, final loss %.4f" % (len(history), history[-1]))


# == finetune ==

def cmd_finetune(args, config, out):
    init = require(config.paths.init_checkpoint, "paths.init_checkpoint")
    dataset = load_dataset(require(config.paths.dataset, "paths.dataset"))
    vocab = _vocab(config)
    train_config = config.finetune

    model = load_checkpoint(init, num_labels=config.dataset.num_labels, seed=train_config.seed)
    train = subset_training_data(dataset.split("train"), args.fraction,
                                 fraction_seed(train_config.seed, args.fraction),
                                 stratified=train_config.stratified)
    val = dataset.split("val") if "val" in dataset.splits else []

    finetune_classifier(model, train, val, vocab, train_config, config.dataset.num_labels,
                        log_path=os.path.join(out, "training.log"))
    save_checkpoint(model, os.path.join(out, "model.ckpt"))

    if "test" in dataset.splits:
        scores = evaluate_model(model, dataset.split("test"), vocab, train_config.max_len)
        with io.open(os.path.join(out, "metrics.json"), "w", encoding="utf-8") as f:
            json.dump(scores.summary(), f, indent=2)
        print(render_metrics_table([(os.path.basename(init), scores)]))


# == sweep ==

def _write_report(report, out):
    with io.open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as f:
        f.write(report.text + "\n")
    with io.open(os.path.join(out, "report.csv"), "w", encoding="utf-8") as f:
        f.write(report.csv)


def cmd_sweep(args, config, out):
    sweep = config.sweep_config()
    sweep.results_path = os.path.join(out, config.sweep.results)

    results = run_sweep(sweep)
    report = render_report(results, sweep.baseline, config.sweep.metric,
                           variants=list(sweep.variants))
    _write_report(report, out)
    print(report.text)


# == evaluate ==

def cmd_evaluate(args, config, out):
    dataset = load_dataset(require(config.paths.dataset, "paths.dataset"))
    vocab = _vocab(config)
    model = load_checkpoint(args.checkpoint)

    scores = evaluate_model(model, dataset.split(args.split), vocab, config.finetune.max_len)
    with io.open(os.path.join(out, "metrics.json"), "w", encoding="utf-8") as f:
        json.dump(scores.summary(), f, indent=2)
    print(render_metrics_table([(os.path.basename(args.checkpoint), scores)]))


# == report ==

def cmd_report(args, config, out):
    path = args.results or os.path.join(config.paths.output_dir, "sweep", config.sweep.results)
    results = ResultsStore(path).load()
    if not results:
        raise ConfigError("No results in %s" % path)

    variants = list(config.sweep.variant_paths()) or None
    report = render_report(results, config.sweep.baseline, config.sweep.metric, variants=variants)
    _write_report(report, out)
    print(report.text)


# == stats ==

def cmd_stats(args, config, out):
    if not args.corpus and not args.dataset:
        raise UsageError("stats needs --corpus and/or --dataset")

    if args.corpus:
        rows = []
        for name, style, path in args.corpus:
            if style not in STYLE_TAGS:
                raise UsageError("style must be one of %s, got %r" % (", ".join(STYLE_TAGS), style))
            rows.append((name, style, corpus_stats(load_corpus(path))))
        print(render_corpus_table(rows))

    if args.dataset:
        print(render_dataset_table(load_dataset(args.dataset)))


# == make-splits ==

def cmd_make_splits(args, config, out):
    source = require(config.paths.dataset, "paths.dataset")
    dataset = make_splits(load_dataset(source), config.dataset.ratios, config.dataset.split_seed,
                          stratified=config.dataset.stratified_splits)

    output = args.output or os.path.join(out, os.path.basename(source))
    save_dataset(dataset, output)
    print(render_dataset_table(dataset))
    print("Wrote %s" % output)


# = Commandline Parser =

class CommandLineParser(argparse.ArgumentParser):
    """Raises `UsageError` instead of exiting"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError("%s: error: %s" % (self.prog, message))


def _train_flags(parser, section):
    parser.add_argument("--epochs", type=int, dest="epochs")
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--learning-rate", type=float, dest="learning_rate")
    parser.add_argument("--seed", type=int, dest="seed")
    return {"epochs": section + ".epochs", "batch_size": section + ".batch_size",
            "learning_rate": section + ".learning_rate", "seed": section + ".seed"}


def build_parser():
    # common
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="Pipeline config file")
    common.add_argument("--output-dir", type=str, dest="output_dir", help="Output directory")
    common.add_argument("--vocab", type=str, dest="vocab", help="Vocabulary file")
    common.add_argument("--debug", action="store_const", dest="loglevel", const=logging.DEBUG)
    common.add_argument("--verbose", action="store_const", dest="loglevel", const=logging.INFO)

    parser = CommandLineParser(prog="lanjut")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=CommandLineParser)

    base_overrides = {"output_dir": "paths.output_dir", "vocab": "paths.vocab"}

    def add(name, func, help_, overrides=None):
        sub = subparsers.add_parser(name, help=help_, parents=[common])
        sub.set_defaults(func=func, overrides=dict(base_overrides, **(overrides or {})))
        return sub

    # clean-corpus
    p = add("clean-corpus", cmd_clean_corpus, "Clean raw documents into a sentence corpus")
    p.add_argument("input", type=str, help="Directory of *.txt / *.html documents")
    p.add_argument("--style", default="mixed", choices=STYLE_TAGS)
    p.add_argument("--name", type=str, help="Corpus name in the statistics table")
    p.add_argument("--output", type=str, help="Corpus file (one sentence per line)")
    p.add_argument("--workers", type=int)
    p.set_defaults(overrides=dict(base_overrides, workers="corpus.workers"))

    # train-tokenizer
    p = add("train-tokenizer", cmd_train_tokenizer, "Train a WordPiece vocabulary",
            {"vocab_size": "tokenizer.vocab_size"})
    p.add_argument("corpus", nargs="*", help="Corpus files (default: configured corpora)")
    p.add_argument("--vocab-size", type=int, dest="vocab_size")

    # pretrain
    p = add("pretrain", cmd_pretrain, "Generic MLM pre-training from scratch")
    p.add_argument("--corpus", type=str, dest="corpus")
    p.set_defaults(overrides=dict(base_overrides, corpus="paths.generic_corpus",
                                  **_train_flags(p, "pretrain")))

    # posttrain
    p = add("posttrain", cmd_posttrain, "Domain MLM post-training of a checkpoint")
    p.add_argument("--corpus", type=str, dest="corpus")
    start = p.add_mutually_exclusive_group()
    start.add_argument("--init", type=str, dest="init", help="Checkpoint to start from")
    start.add_argument("--resume", type=str, dest="resume", help="Epoch checkpoint to continue")
    p.add_argument("--reset-optimizer", action="store_const", const=True, dest="reset_optimizer")
    p.set_defaults(overrides=dict(base_overrides, corpus="paths.domain_corpus",
                                  init="paths.init_checkpoint",
                                  reset_optimizer="posttrain.reset_optimizer",
                                  **_train_flags(p, "posttrain")))

    # finetune
    p = add("finetune", cmd_finetune, "Fine-tune a classifier on a dataset")
    p.add_argument("--init", type=str, dest="init", help="Checkpoint to start from")
    p.add_argument("--dataset", type=str, dest="dataset")
    p.add_argument("--fraction", type=float, default=1.0, help="Share of the training split")
    p.set_defaults(overrides=dict(base_overrides, init="paths.init_checkpoint",
                                  dataset="paths.dataset", **_train_flags(p, "finetune")))

    # sweep
    p = add("sweep", cmd_sweep, "Training-fraction sweep over checkpoint variants",
            {"dataset": "paths.dataset", "workers": "sweep.workers"})
    p.add_argument("--dataset", type=str, dest="dataset")
    p.add_argument("--workers", type=int, dest="workers")

    # evaluate
    p = add("evaluate", cmd_evaluate, "Evaluate a fine-tuned checkpoint",
            {"dataset": "paths.dataset"})
    p.add_argument("checkpoint", type=str)
    p.add_argument("--dataset", type=str, dest="dataset")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    # report
    p = add("report", cmd_report, "Render a sweep results file",
            {"baseline": "sweep.baseline", "metric": "sweep.metric"})
    p.add_argument("--results", type=str)
    p.add_argument("--baseline", type=str, dest="baseline")
    p.add_argument("--metric", choices=("macro_f1", "weighted_f1", "accuracy"), dest="metric")

    # stats
    p = add("stats", cmd_stats, "Corpus and dataset statistics tables")
    p.add_argument("--corpus", nargs=3, action="append", metavar=("NAME", "STYLE", "PATH"))
    p.add_argument("--dataset", type=str)

    # make-splits
    p = add("make-splits", cmd_make_splits, "Create train/val/test splits",
            {"dataset": "paths.dataset", "seed": "dataset.split_seed",
             "stratified": "dataset.stratified_splits"})
    p.add_argument("--dataset", type=str, dest="dataset")
    p.add_argument("--output", type=str)
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--stratified", action="store_const", const=True, dest="stratified")

    return parser


def overrides_from_args(args):
    return {key: getattr(args, dest) for dest, key in args.overrides.items()
            if getattr(args, dest, None) is not None}


# = Main =

def dispatch(argv):
    """
    Run the command in `argv`; return the exit code
    """
    log = logging.getLogger("dispatch")

    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        sys.stderr.write("%s\n" % e)
        return EXIT_USAGE

    setup_logging(args)
    started = time.time()
    config = out = None
    code = EXIT_INTERNAL

    try:
        config = load_config(args.config, overrides_from_args(args))
        out = run_dir(args, config)
        args.func(args, config, out)
        code = EXIT_OK
    except UsageError as e:
        sys.stderr.write("lanjut %s: error: %s\n" % (args.command, e))
        code = EXIT_USAGE
    except (LanjutError, OSError) as e:
        log.error("%s failed: %s", args.command, e)
        sys.stderr.write("lanjut %s: error: %s\n" % (args.command, e))
        code = EXIT_DATA
    except Exception:
        log.exception("%s failed with an internal error", args.command)
        code = EXIT_INTERNAL
    finally:
        # Failed runs get a manifest too, once their run directory exists
        if out is not None:
            try:
                status = "ok" if code == EXIT_OK else "error"
                write_manifest(out, args, argv, config, started, status, code)
            except OSError as e:
                log.error("Could not write manifest to %s: %s", out, e)

    return code


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

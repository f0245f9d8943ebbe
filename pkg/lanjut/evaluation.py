#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
Metrics, the training-fraction sweep and report rendering

The sweep fine-tunes every checkpoint variant on nested fractions of the
training split and evaluates on the fixed test split. Results are appended
to a `ResultsStore` as they finish, so an interrupted sweep resumes with
the cells still missing.
"""

# = Imports =

import io
import os
import logging
import threading
import dataclasses
import multiprocessing.dummy as multiprocessing
from decimal import Decimal, ROUND_HALF_UP
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn import metrics as sk_metrics

from lanjut.errors import LanjutError
from lanjut.model import MissingHeadError
from lanjut.checkpoint import load_checkpoint
from lanjut.corpus import load_dataset
from lanjut.tokenizer import load_vocab
from lanjut.training import (TrainConfig, EmptySplitError, subset_training_data, finetune_classifier,
                             predict)


# = Configuration =

DEFAULT_FRACTIONS = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1)

RESULTS_SCHEMA = "# lanjut-results 1"

METRICS = ("macro_f1", "weighted_f1", "accuracy")


# = Exceptions =

class EvaluationError(LanjutError):
    pass


class LengthMismatchError(EvaluationError):
    pass


class LabelRangeError(EvaluationError):
    pass


class EmptyMatrixError(EvaluationError):
    pass


class MissingCheckpointError(EvaluationError):
    pass


class MissingDatasetError(EvaluationError):
    pass


class MissingBaselineError(EvaluationError):
    pass


class ResultsFormatError(EvaluationError):
    pass


# = Metrics =

@dataclass
class ConfusionMatrix(object):
    """Rows are gold labels, columns predictions"""
    counts: np.ndarray

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass
class Metrics(object):
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_f1: float
    weighted_f1: float
    accuracy: float

    def summary(self):
        return OrderedDict((name, getattr(self, name)) for name in METRICS)


# == OP: Confusion Matrix ==

def confusion_matrix(gold, pred, num_classes):
    gold = np.asarray(gold, dtype=np.int64).reshape(-1)
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)

    if len(gold) != len(pred):
        raise LengthMismatchError("%d gold labels but %d predictions" % (len(gold), len(pred)))

    for name, labels in (("gold", gold), ("predicted", pred)):
        bad = (labels < 0) | (labels >= num_classes)
        if bad.any():
            raise LabelRangeError("%s label %d outside [0, %d)" % (name, labels[bad][0], num_classes))

    if len(gold) == 0:
        return ConfusionMatrix(np.zeros((num_classes, num_classes), dtype=np.int64))

    counts = sk_metrics.confusion_matrix(gold, pred, labels=list(range(num_classes)))
    return ConfusionMatrix(counts.astype(np.int64))


# == OP: F1 Scores ==

def _safe_divide(numerator, denominator):
    return np.divide(numerator, denominator, out=np.zeros(len(numerator), dtype=np.float64),
                     where=denominator > 0)


def f1_scores(matrix):
    """
    Per-class precision, recall and F1 (0 where undefined), macro F1 over
    the classes with gold support, support-weighted F1 and accuracy
    """
    counts = np.asarray(matrix.counts if isinstance(matrix, ConfusionMatrix) else matrix,
                        dtype=np.float64)
    total = counts.sum()

    if counts.size == 0 or total == 0:
        raise EmptyMatrixError("Cannot score an empty confusion matrix")

    tp = np.diag(counts)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)

    precision = _safe_divide(tp, predicted)
    recall = _safe_divide(tp, support)
    f1 = _safe_divide(2.0 * precision * recall, precision + recall)

    supported = support > 0

    return Metrics(precision=precision, recall=recall, f1=f1, support=support.astype(np.int64),
                   macro_f1=float(f1[supported].mean()),
                   weighted_f1=float((f1 * support).sum() / total),
                   accuracy=float(tp.sum() / total))


# == OP: Evaluate ==

def evaluate_model(model, examples, vocab, max_len=128, batch_size=32):
    """
    Metrics of `model` on `(text, label)` examples. Dropout is off and
    argmax ties go to the lowest class index.
    """
    if not model.has_classifier:
        raise MissingHeadError("Cannot evaluate a model without a classification head")

    examples = list(examples)
    if not examples:
        raise EmptySplitError("Cannot evaluate on an empty split")

    gold = [label for _, label in examples]
    pred = predict(model, examples, vocab, max_len, batch_size)

    return f1_scores(confusion_matrix(gold, pred, model.config.num_labels))


# = Results Store =

@dataclass
class SweepResult(object):
    task: str
    variant: str
    architecture: str
    fraction: float
    seed: int
    macro_f1: float
    weighted_f1: float
    accuracy: float

    @property
    def key(self):
        return result_key(self.variant, self.fraction, self.seed)


RESULT_COLUMNS = [f.name for f in dataclasses.fields(SweepResult)]


def result_key(variant, fraction, seed):
    return (variant, round(float(fraction), 6), int(seed))


class ResultsStore(object):
    """
    Append-only results file: a schema line, a CSV header, one
    `SweepResult` per row
    """

    log = logging.getLogger("ResultsStore")

    def __init__(self, path):
        self.path = path
        self.lock = threading.Lock()

    def _create(self):
        with io.open(self.path, "w", encoding="utf-8", newline="\n") as f:
            f.write(RESULTS_SCHEMA + "\n")
            f.write(",".join(RESULT_COLUMNS) + "\n")

    def append(self, result):
        with self.lock:
            if not os.path.exists(self.path):
                self._create()

            frame = pd.DataFrame([dataclasses.astuple(result)], columns=RESULT_COLUMNS)
            with io.open(self.path, "a", encoding="utf-8", newline="\n") as f:
                frame.to_csv(f, header=False, index=False, lineterminator="\n")

        self.log.debug("Stored %s", result)

    def load(self):
        if not os.path.exists(self.path):
            return []

        with self.lock:
            with io.open(self.path, "r", encoding="utf-8") as f:
                schema = f.readline().rstrip("\n")
                if schema != RESULTS_SCHEMA:
                    raise ResultsFormatError("%s: schema line %r, expected %r" %
                                             (self.path, schema, RESULTS_SCHEMA))
                frame = pd.read_csv(f, keep_default_na=False)

        if list(frame.columns) != RESULT_COLUMNS:
            raise ResultsFormatError("%s: columns %s, expected %s" %
                                     (self.path, list(frame.columns), RESULT_COLUMNS))

        return [SweepResult(task=str(r.task), variant=str(r.variant),
                            architecture=str(r.architecture), fraction=float(r.fraction),
                            seed=int(r.seed), macro_f1=float(r.macro_f1),
                            weighted_f1=float(r.weighted_f1), accuracy=float(r.accuracy))
                for r in frame.itertuples(index=False)]

    def completed(self):
        return {r.key for r in self.load()}


# = Sweep =

@dataclass
class SweepConfig(object):
    task: str = "sentiment"
    architecture: str = "tiny"
    variants: OrderedDict = field(default_factory=OrderedDict)
    baseline: str = "baseline"
    fractions: tuple = DEFAULT_FRACTIONS
    seeds: tuple = (0,)
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig.from_preset("sentiment"))
    num_labels: int = 3
    dataset_path: str = ""
    vocab_path: str = ""
    results_path: str = "results.csv"
    workers: int = 1
    stratified: bool = True


def fraction_seed(seed, fraction):
    """Subset seed of a sweep cell; the same for every variant"""
    return seed * 1000 + int(round(fraction * 100))


def _run_cell(cell, config, dataset, vocab):
    log = logging.getLogger("run_sweep")
    variant, fraction, seed = cell

    train = subset_training_data(dataset.split("train"), fraction, fraction_seed(seed, fraction),
                                 stratified=config.stratified)
    val = dataset.split("val") if "val" in dataset.splits else []

    model = load_checkpoint(config.variants[variant], num_labels=config.num_labels, seed=seed)
    finetune_classifier(model, train, val, vocab, config.finetune.replace(seed=seed),
                        config.num_labels)
    scores = evaluate_model(model, dataset.split("test"), vocab, config.finetune.max_len)

    log.info("%s @ %d%% seed %d: macro F1 %.4f, accuracy %.4f", variant,
             int(round(fraction * 100)), seed, scores.macro_f1, scores.accuracy)

    return SweepResult(task=config.task, variant=variant, architecture=config.architecture,
                       fraction=float(fraction), seed=int(seed), macro_f1=scores.macro_f1,
                       weighted_f1=scores.weighted_f1, accuracy=scores.accuracy)


def run_sweep(config, dataset=None, vocab=None):
    """
    Fine-tune and evaluate every (variant, fraction, seed) cell not yet in
    the results store. Returns all results of the store afterwards.
    """
    log = logging.getLogger("run_sweep")

    for name, path in config.variants.items():
        if not path or not os.path.exists(path):
            raise MissingCheckpointError("Checkpoint %r of variant %r does not exist" % (path, name))

    if dataset is None:
        if not config.dataset_path or not os.path.exists(config.dataset_path):
            raise MissingDatasetError("Dataset %r does not exist" % config.dataset_path)
        dataset = load_dataset(config.dataset_path)

    for split in ("train", "test"):
        if split not in dataset.splits:
            raise MissingDatasetError("Dataset has no %r split" % split)

    if vocab is None:
        vocab = load_vocab(config.vocab_path)

    store = ResultsStore(config.results_path)
    done = store.completed()

    cells = [(variant, fraction, seed)
             for seed in config.seeds
             for fraction in config.fractions
             for variant in config.variants
             if result_key(variant, fraction, seed) not in done]

    log.info("Sweep %s: %d cells to run, %d already done", config.task, len(cells), len(done))

    def work(cell):
        return _run_cell(cell, config, dataset, vocab)

    if config.workers > 1 and len(cells) > 1:
        pool = multiprocessing.Pool(config.workers)
        try:
            for result in pool.imap(work, cells):
                store.append(result)
        finally:
            pool.close()
    else:
        for cell in cells:
            store.append(work(cell))

    return store.load()


# = Reports =

@dataclass
class ReportTable(object):
    text: str
    csv: str
    rows: list


def _round2(value):
    return Decimal(repr(float(value))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


def format_delta(delta):
    """`+.03` / `-.26`; deltas of 1 or more keep their leading digit"""
    sign = "+" if delta >= 0 else "-"
    digits = "%.2f" % abs(delta)
    if digits.startswith("0"):
        digits = digits[1:]
    return sign + digits


def render_report(results, baseline_variant, metric="macro_f1", variants=None):
    """
    One row per fraction (100 down to 10), one column per variant. Scores
    are means over seeds, shown with two decimals (half-up); every other
    variant's cell carries its delta against the baseline of the same row,
    computed from the rounded values. The row maximum is marked `*`.

    Also returns the means at full precision as CSV.
    """
    if metric not in METRICS:
        raise EvaluationError("Unknown metric %r (known: %s)" % (metric, ", ".join(METRICS)))

    frame = pd.DataFrame([dataclasses.asdict(r) for r in results], columns=RESULT_COLUMNS)
    means = frame.groupby(["variant", "fraction"])[metric].mean()

    if variants is None:
        variants = [baseline_variant] + [v for v in OrderedDict.fromkeys(frame["variant"])
                                         if v != baseline_variant]

    fractions = sorted(set(frame["fraction"]), reverse=True)

    text_rows = []
    csv_rows = []

    for fraction in fractions:
        if (baseline_variant, fraction) not in means.index:
            raise MissingBaselineError("No %r result for fraction %s" % (baseline_variant, fraction))

        rounded = OrderedDict((v, _round2(means[(v, fraction)])) for v in variants
                              if (v, fraction) in means.index)
        best = max(rounded.values())
        base = rounded[baseline_variant]

        cells = []
        for variant in variants:
            if variant not in rounded:
                cells.append("-")
                continue

            cell = "%.2f" % rounded[variant]
            if variant != baseline_variant:
                cell += " (%s)" % format_delta(rounded[variant] - base)
            if rounded[variant] == best:
                cell += "*"
            cells.append(cell)

        percent = int(round(fraction * 100))
        text_rows.append([str(percent)] + cells)
        csv_rows.append([percent] + [means.get((v, fraction), np.nan) for v in variants])

    header = ["Train %"] + list(variants)
    text = pd.DataFrame(text_rows, columns=header).to_string(index=False)

    buf = io.StringIO()
    pd.DataFrame(csv_rows, columns=["percent"] + list(variants)).to_csv(buf, index=False,
                                                                        lineterminator="\n")

    return ReportTable(text=text, csv=buf.getvalue(), rows=text_rows)


def render_metrics_table(rows):
    """
    `(model name, Metrics)` rows as a "F1 Score | Accuracy" table
    """
    frame = pd.DataFrame([(name, "%.2f" % _round2(m.macro_f1), "%.2f" % _round2(m.accuracy))
                          for name, m in rows],
                         columns=["Model", "F1 Score", "Accuracy"])
    return frame.to_string(index=False)

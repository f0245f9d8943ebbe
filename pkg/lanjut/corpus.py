#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
Corpus ingestion and labeled datasets

Raw documents (plain text or HTML) are cleaned, split into sentences and
merged into a `CleanCorpus` stored one sentence per line. Labeled
datasets are CSV files with `text,label` columns, a label-name sidecar
(`<stem>.labels`, `id<TAB>name` per line) and an optional split manifest
(`<stem>.splits/{train,val,test}.idx`, one example index per line).
"""

# = Imports =

import io
import os
import re
import glob
import html
import logging
import unicodedata
import multiprocessing.dummy as multiprocessing
from functools import partial
from decimal import Decimal, ROUND_HALF_UP
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from lanjut.errors import LanjutError


# = Configuration =

STYLE_TAGS = ("mixed", "formal")

DEFAULT_AD_MARKERS = (
    "ADVERTISEMENT",
    "SCROLL TO CONTINUE WITH CONTENT",
    "Baca juga",
    "Baca Selengkapnya",
    "Simak juga",
    "Lihat juga",
    "Artikel terkait",
    "Tonton video",
    "Saksikan video",
)

DEFAULT_ABBREVIATIONS = (
    "Rp.", "No.", "PT.", "Tbk.", "Dr.", "Jl.", "Ir.", "Prof.", "Sdr.", "Bpk.", "Yth.",
    "dll.", "dsb.", "dkk.", "tsb.", "a.n.", "u.p.", "Mr.", "Mrs.", "Inc.", "Ltd.", "Co.", "St.",
)

DEFAULT_MIN_WORDS = 3

# Characters kept besides letters, digits, whitespace and currency symbols
KEEP_PUNCTUATION = frozenset(".,!?;:%()-\"'/")

QUOTE_FOLDING = str.maketrans({
    "‘": "'", "’": "'", "‚": "'", "‛": "'",
    "“": '"', "”": '"', "„": '"', "‟": '"',
    "–": "-", "—": "-",
})

SPLIT_NAMES = ("train", "val", "test")

SENTIMENT_LABELS = ("negative", "neutral", "positive")

TOPIC_LABELS = (
    "Analyst Update", "Fed & Central Banks", "Company & Product News",
    "Treasuries & Corporate Debt", "Dividend", "Earnings", "Energy & Oil", "Financials",
    "Currencies", "General News & Opinion", "Gold & Metals & Materials", "IPO",
    "Legal & Regulation", "M&A & Investments", "Macro", "Markets", "Politics",
    "Personnel Change", "Stock Commentary", "Stock Movement",
)

CORPUS_WORKERS = 4


# = Exceptions =

class CorpusError(LanjutError):
    pass


class EmptyDocumentError(CorpusError):
    pass


class InvalidStyleError(CorpusError):
    pass


class DatasetError(CorpusError):
    pass


class InvalidRatiosError(DatasetError):
    pass


class DegenerateSplitError(DatasetError):
    pass


# = Utility Functions =

def round_half_up(value):
    """Round to the nearest integer, halves away from zero"""
    if not isinstance(value, Decimal):
        value = Decimal(str(value))
    return int(value.quantize(Decimal(1), rounding=ROUND_HALF_UP))


# = Documents =

@dataclass
class RawDocument(object):
    source_id: str
    body: str
    style_tag: str = "mixed"

    def __post_init__(self):
        if not self.body:
            raise EmptyDocumentError("Document %r has an empty body" % self.source_id)
        if self.style_tag not in STYLE_TAGS:
            raise InvalidStyleError("Document %r: style %r not in %s" %
                                    (self.source_id, self.style_tag, STYLE_TAGS))


def read_documents(directory, style_tag="mixed"):
    """
    `*.txt` and `*.html` files of `directory`, sorted by file name.
    Empty files are skipped.
    """
    log = logging.getLogger("read_documents")

    paths = sorted(glob.glob(os.path.join(directory, "*.txt")) +
                   glob.glob(os.path.join(directory, "*.html")),
                   key=os.path.basename)

    documents = []
    for path in paths:
        with io.open(path, "r", encoding="utf-8") as f:
            body = f.read()

        source_id = os.path.splitext(os.path.basename(path))[0]
        if not body.strip():
            log.warning("Skipping empty document %s", path)
            continue

        documents.append(RawDocument(source_id, body, style_tag))

    log.info("Read %d documents from %s", len(documents), directory)
    return documents


# = Cleaning =

# == HTML ==

HTML_TAG = re.compile(r"<[a-zA-Z/!][^>]*>")
HTML_DROP = re.compile(r"<(script|style|noscript|title)\b[^>]*>.*?</\1\s*>|<!--.*?-->", re.DOTALL | re.IGNORECASE)
HTML_BLOCK = re.compile(r"</?(p|div|br|li|ul|ol|h[1-6]|tr|td|table|section|article|header|footer|"
                        r"blockquote|aside|figure|figcaption)\b[^>]*>", re.IGNORECASE)

# Trailing sentence punctuation is not part of the address
URL = re.compile(r"(?:https?://|www\.)(?:\S*[^\s.,;:)])?", re.IGNORECASE)


def strip_html(text):
    """Drop scripts, styles and comments; block tags become line breaks"""
    text = HTML_DROP.sub(" ", text)
    text = HTML_BLOCK.sub("\n", text)
    text = HTML_TAG.sub(" ", text)
    return html.unescape(text)


def _keep(char):
    return (char.isalnum() or char.isspace() or char in KEEP_PUNCTUATION or
            unicodedata.category(char) == "Sc")


# == OP: Clean ==

def clean_text(doc, ad_markers=DEFAULT_AD_MARKERS):
    """
    Clean the body of `doc` (a `RawDocument` or a string) into a single
    line of text:

    1. HTML markup removed if present
    2. URLs removed
    3. characters outside the keep-list replaced by a space
    4. lines starting with an advertisement marker dropped (case-insensitive)
    5. whitespace runs collapsed to single spaces

    `clean_text(clean_text(x)) == clean_text(x)`.
    """
    text = doc.body if isinstance(doc, RawDocument) else doc

    if HTML_TAG.search(text):
        text = strip_html(text)

    text = URL.sub(" ", text.translate(QUOTE_FOLDING))
    text = "".join(c if _keep(c) else " " for c in text)
    text = URL.sub(" ", text)

    markers = tuple(m.casefold() for m in ad_markers)
    lines = (line.strip() for line in text.splitlines())
    kept = [line for line in lines if line and not line.casefold().startswith(markers)]

    return " ".join(" ".join(kept).split())


# == OP: Split Sentences ==

SENTENCE_BREAK = re.compile(r"[.!?]+\s+")


def split_sentences(text, abbreviations=DEFAULT_ABBREVIATIONS, min_words=DEFAULT_MIN_WORDS):
    """
    Split at `.`, `!` or `?` followed by whitespace and an uppercase letter
    or digit, unless the word before the break is a listed abbreviation.
    Sentences of fewer than `min_words` words are dropped.
    """
    guards = {a.casefold() for a in abbreviations}
    sentences = []
    start = 0

    for m in SENTENCE_BREAK.finditer(text):
        following = text[m.end():m.end() + 1]
        if not following or not (following.isupper() or following.isdigit()):
            continue

        candidate = text[start:m.end()].strip()
        if candidate.split()[-1].casefold() in guards:
            continue

        sentences.append(candidate)
        start = m.end()

    rest = text[start:].strip()
    if rest:
        sentences.append(rest)

    return [s for s in sentences if len(s.split()) >= min_words]


# = Clean Corpus =

@dataclass
class CorpusStats(object):
    word_count: int = 0
    byte_size: int = 0
    sentence_count: int = 0

    @property
    def megabytes(self):
        return self.byte_size / 1024.0 ** 2


@dataclass
class CleanCorpus(object):
    sentences: list = field(default_factory=list)

    @property
    def stats(self):
        return corpus_stats(self)

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)


def corpus_stats(corpus):
    """
    Word count (whitespace tokens), byte size of the one-sentence-per-line
    UTF-8 file, sentence count
    """
    sentences = corpus.sentences if isinstance(corpus, CleanCorpus) else list(corpus)
    return CorpusStats(word_count=sum(len(s.split()) for s in sentences),
                       byte_size=sum(len(s.encode("utf-8")) + 1 for s in sentences),
                       sentence_count=len(sentences))


def _document_sentences(doc, ad_markers, abbreviations, min_words):
    return split_sentences(clean_text(doc, ad_markers), abbreviations, min_words)


def build_corpus(documents, workers=CORPUS_WORKERS, ad_markers=DEFAULT_AD_MARKERS,
                 abbreviations=DEFAULT_ABBREVIATIONS, min_words=DEFAULT_MIN_WORDS):
    """
    Clean and split `documents` on `workers` threads. Sentences keep the
    order of their documents.
    """
    log = logging.getLogger("build_corpus")
    documents = list(documents)

    work = partial(_document_sentences, ad_markers=ad_markers, abbreviations=abbreviations,
                   min_words=min_words)

    if workers > 1 and len(documents) > 1:
        pool = multiprocessing.Pool(workers)
        try:
            per_document = list(pool.imap(work, documents))
        finally:
            pool.close()
    else:
        per_document = [work(doc) for doc in documents]

    sentences = [s for doc_sentences in per_document for s in doc_sentences]
    log.info("Built corpus: %d documents -> %d sentences", len(documents), len(sentences))
    return CleanCorpus(sentences)


def combine_corpora(corpora):
    """Concatenate `(name, corpus)` pairs in the given order"""
    return CleanCorpus([s for _, corpus in corpora for s in corpus])


def save_corpus(corpus, path):
    with io.open(path, "w", encoding="utf-8", newline="\n") as f:
        for sentence in corpus:
            f.write(sentence + "\n")


def load_corpus(path):
    with io.open(path, "r", encoding="utf-8", newline="\n") as f:
        return CleanCorpus([line.rstrip("\n") for line in f if line.strip()])


def render_corpus_table(rows):
    """
    Corpus statistics table from `(name, style, CorpusStats)` rows, with a
    total row
    """
    rows = list(rows)
    total = CorpusStats(word_count=sum(s.word_count for _, _, s in rows),
                        byte_size=sum(s.byte_size for _, _, s in rows),
                        sentence_count=sum(s.sentence_count for _, _, s in rows))

    frame = pd.DataFrame(
        [(name, style.capitalize(), "{:,}".format(s.word_count), "{:,}".format(s.sentence_count),
          "%.2f" % s.megabytes) for name, style, s in rows] +
        [("Total", "", "{:,}".format(total.word_count), "{:,}".format(total.sentence_count),
          "%.2f" % total.megabytes)],
        columns=["Dataset", "Style", "#Words", "#Sentences", "Size (MB)"])

    return frame.to_string(index=False)


# = Labeled Datasets =

@dataclass
class LabeledDataset(object):
    """
    `examples` are `(text, label id)` pairs; `splits` maps split names to
    sorted example index arrays
    """
    examples: list
    label_names: tuple
    splits: dict = field(default_factory=OrderedDict)

    def __post_init__(self):
        self.examples = [(str(text), int(label)) for text, label in self.examples]
        self.label_names = tuple(self.label_names)

        for text, label in self.examples:
            if not 0 <= label < len(self.label_names):
                raise DatasetError("Label %d outside [0, %d): %r" %
                                   (label, len(self.label_names), text[:40]))

        if self.splits:
            self.splits = OrderedDict((name, np.sort(np.asarray(self.splits[name], dtype=np.int64)))
                                      for name in SPLIT_NAMES if name in self.splits)
            everything = np.concatenate(list(self.splits.values()))
            if len(everything) != len(self.examples) or \
               not np.array_equal(np.sort(everything), np.arange(len(self.examples))):
                raise DatasetError("Splits must be disjoint and cover all %d examples" %
                                   len(self.examples))

    @property
    def labels(self):
        return np.array([label for _, label in self.examples], dtype=np.int64)

    @property
    def num_labels(self):
        return len(self.label_names)

    def split(self, name):
        if name not in self.splits:
            raise DatasetError("Dataset has no %r split (has: %s)" %
                               (name, ", ".join(self.splits) or "none"))
        return [self.examples[i] for i in self.splits[name]]

    def __len__(self):
        return len(self.examples)


# == OP: Make Splits ==

def _partition(indices, boundaries, rng):
    order = rng.permutation(indices)
    first, second = (round_half_up(Decimal(len(order)) * b) for b in boundaries)
    return order[:first], order[first:second], order[second:]


def make_splits(dataset, ratios, seed, stratified=False):
    """
    Seeded shuffle, then a contiguous partition at the cumulative
    boundaries `round(N·r_train)` and `round(N·(r_train + r_val))`; the
    remainder is the test split. Stratified mode partitions every class
    (in label order) and merges the parts.
    """
    log = logging.getLogger("make_splits")

    ratios = [Decimal(str(r)) for r in ratios]
    if len(ratios) != 3 or abs(sum(ratios) - 1) > Decimal("1e-9"):
        raise InvalidRatiosError("Split ratios must be three values summing to 1, got %s" %
                                 [float(r) for r in ratios])

    if any(r <= 0 for r in ratios):
        raise DegenerateSplitError("Every split ratio must be positive, got %s" %
                                   [float(r) for r in ratios])

    boundaries = (ratios[0], ratios[0] + ratios[1])
    rng = np.random.default_rng(seed)

    if stratified:
        labels = dataset.labels
        parts = [_partition(np.flatnonzero(labels == label), boundaries, rng)
                 for label in np.unique(labels)]
        splits = [np.concatenate([p[i] for p in parts]) for i in range(3)]
    else:
        splits = _partition(np.arange(len(dataset)), boundaries, rng)

    for name, indices in zip(SPLIT_NAMES, splits):
        if len(indices) == 0:
            raise DegenerateSplitError("Split %r is empty (N=%d, ratios %s)" %
                                       (name, len(dataset), [float(r) for r in ratios]))

    log.info("Split %d examples: %s", len(dataset),
             ", ".join("%s=%d" % (n, len(s)) for n, s in zip(SPLIT_NAMES, splits)))

    return LabeledDataset(dataset.examples, dataset.label_names,
                          OrderedDict(zip(SPLIT_NAMES, splits)))


# == Dataset Files ==

def _sidecar_path(path):
    return os.path.splitext(path)[0] + ".labels"


def _manifest_dir(path):
    return os.path.splitext(path)[0] + ".splits"


def write_split_manifest(dataset, directory):
    os.makedirs(directory, exist_ok=True)
    for name, indices in dataset.splits.items():
        with io.open(os.path.join(directory, name + ".idx"), "w", encoding="utf-8") as f:
            f.writelines("%d\n" % i for i in indices)


def read_split_manifest(directory):
    splits = OrderedDict()
    for name in SPLIT_NAMES:
        path = os.path.join(directory, name + ".idx")
        if not os.path.exists(path):
            raise DatasetError("Split manifest %s is missing %s" % (directory, name + ".idx"))
        with io.open(path, "r", encoding="utf-8") as f:
            splits[name] = [int(line) for line in f if line.strip()]
    return splits


def save_dataset(dataset, path):
    frame = pd.DataFrame({"text": [t for t, _ in dataset.examples],
                          "label": [l for _, l in dataset.examples]})
    frame.to_csv(path, index=False, encoding="utf-8")

    with io.open(_sidecar_path(path), "w", encoding="utf-8") as f:
        for i, name in enumerate(dataset.label_names):
            f.write("%d\t%s\n" % (i, name))

    if dataset.splits:
        write_split_manifest(dataset, _manifest_dir(path))


def load_dataset(path, label_names=None):
    """
    Load a dataset CSV, its label sidecar (unless `label_names` is given)
    and its split manifest if one exists
    """
    log = logging.getLogger("load_dataset")

    if not os.path.exists(path):
        raise DatasetError("Dataset %s does not exist" % path)

    try:
        frame = pd.read_csv(path, dtype={"text": str}, keep_default_na=False, encoding="utf-8")
    except (ValueError, pd.errors.ParserError) as e:
        raise DatasetError("%s: %s" % (path, e))

    missing = {"text", "label"} - set(frame.columns)
    if missing:
        raise DatasetError("%s: missing columns %s" % (path, ", ".join(sorted(missing))))

    if label_names is None:
        sidecar = _sidecar_path(path)
        if not os.path.exists(sidecar):
            raise DatasetError("%s: label sidecar %s missing" % (path, sidecar))
        names = {}
        with io.open(sidecar, "r", encoding="utf-8") as f:
            for number, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    label_id, name = line.rstrip("\n").split("\t", 1)
                    label_id = int(label_id)
                except ValueError:
                    raise DatasetError("%s:%d: expected 'id<TAB>name'" % (sidecar, number))
                if label_id in names:
                    raise DatasetError("%s:%d: duplicate label id %d" % (sidecar, number, label_id))
                names[label_id] = name
        if sorted(names) != list(range(len(names))):
            raise DatasetError("%s: label ids must be 0..%d, got %s" %
                               (sidecar, len(names) - 1, sorted(names)))
        label_names = [names[i] for i in range(len(names))]

    splits = OrderedDict()
    if os.path.isdir(_manifest_dir(path)):
        splits = read_split_manifest(_manifest_dir(path))

    dataset = LabeledDataset(list(zip(frame["text"], frame["label"].astype(int))), label_names,
                             splits)
    log.info("Loaded %s: %d examples, %d labels, splits %s", path, len(dataset),
             dataset.num_labels, list(dataset.splits) or "none")
    return dataset


# == Dataset Statistics ==

def dataset_stats(dataset):
    """
    `{split: [count per label]}`, plus `"total"`
    """
    stats = OrderedDict()
    labels = dataset.labels

    for name, indices in dataset.splits.items():
        stats[name] = np.bincount(labels[indices], minlength=dataset.num_labels).tolist()
    stats["total"] = np.bincount(labels, minlength=dataset.num_labels).tolist()

    return stats


def render_dataset_table(dataset):
    """
    One row per label with counts per split and the label's share of the
    whole dataset
    """
    stats = dataset_stats(dataset)
    total = max(1, sum(stats["total"]))
    columns = [name for name in stats if name != "total"]

    rows = []
    for label, name in enumerate(dataset.label_names):
        rows.append([name] + ["{:,}".format(stats[c][label]) for c in columns] +
                    ["{:,}".format(stats["total"][label]),
                     "%.2f%%" % (100.0 * stats["total"][label] / total)])

    rows.append(["Total"] + ["{:,}".format(sum(stats[c])) for c in columns] +
                ["{:,}".format(sum(stats["total"])), "100.00%"])

    frame = pd.DataFrame(rows, columns=["Label"] + ["#" + c.capitalize() for c in columns] +
                         ["#Total", "Share"])
    return frame.to_string(index=False)

#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
Pipeline configuration

INI-style sections of `key = value` lines, read with `configparser` in
strict mode. Every section maps onto a dataclass; unknown sections and
keys are rejected. List values are comma separated.

Precedence: defaults < config file < overrides (command-line flags).
`LANJUT_OUTPUT_DIR` sets the default output directory.

Example:

    [model]
    preset = tiny

    [posttrain]
    epochs = 20

    [sweep]
    variants = baseline=runs/generic.ckpt, news=runs/news.ckpt
    fractions = 1.0, 0.5, 0.3, 0.1
"""

# = Imports =

import io
import os
import typing
import logging
import dataclasses
import configparser
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Tuple

from lanjut.errors import LanjutError
from lanjut.model import ModelConfig, PRESETS as MODEL_PRESETS
from lanjut.training import TrainConfig
from lanjut.corpus import DEFAULT_AD_MARKERS, DEFAULT_ABBREVIATIONS, DEFAULT_MIN_WORDS, CORPUS_WORKERS
from lanjut.evaluation import DEFAULT_FRACTIONS, SweepConfig
from lanjut.tokenizer import DEFAULT_VOCAB_SIZE, DEFAULT_MIN_FREQUENCY


# = Configuration =

OUTPUT_DIR_ENV = "LANJUT_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "runs"


# = Exceptions =

class ConfigError(LanjutError):
    pass


class MissingConfigError(ConfigError):
    pass


class ConfigParseError(ConfigError):
    pass


class UnknownKeyError(ConfigError):
    pass


class ConfigValueError(ConfigError):
    pass


# = Sections =

def _default_output_dir():
    return os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR


@dataclass
class PathsSection(object):
    """Input paths have no defaults"""
    output_dir: str = field(default_factory=_default_output_dir)
    generic_corpus: str = ""
    domain_corpus: str = ""
    vocab: str = ""
    dataset: str = ""
    init_checkpoint: str = ""


@dataclass
class CorpusSection(object):
    workers: int = CORPUS_WORKERS
    min_words: int = DEFAULT_MIN_WORDS
    ad_markers: Tuple[str, ...] = DEFAULT_AD_MARKERS
    abbreviations: Tuple[str, ...] = DEFAULT_ABBREVIATIONS


@dataclass
class TokenizerSection(object):
    vocab_size: int = DEFAULT_VOCAB_SIZE
    min_frequency: int = DEFAULT_MIN_FREQUENCY
    lowercase: bool = True


@dataclass
class ModelSection(object):
    """Dimensions of 0 come from the preset"""
    preset: str = "tiny"
    num_layers: int = 0
    num_heads: int = 0
    emb_size: int = 0
    hidden_size: int = 0
    ffn_size: int = 0
    max_position: int = 128
    dropout_prob: float = 0.1
    tie_word_embeddings: bool = True
    layer_norm_eps: float = 1e-12

    def model_config(self, vocab_size):
        if self.preset not in MODEL_PRESETS:
            raise ConfigValueError("model.preset: unknown preset %r (known: %s)" %
                                   (self.preset, ", ".join(sorted(MODEL_PRESETS))))

        dims = OrderedDict((name, getattr(self, name) or value)
                           for name, value in MODEL_PRESETS[self.preset].items())

        return ModelConfig(vocab_size=vocab_size, max_position=self.max_position,
                           dropout_prob=self.dropout_prob,
                           tie_word_embeddings=self.tie_word_embeddings,
                           layer_norm_eps=self.layer_norm_eps, **dims)


@dataclass
class DatasetSection(object):
    task: str = "sentiment"
    num_labels: int = 3
    ratios: Tuple[float, ...] = (0.5634, 0.1951, 0.2415)
    split_seed: int = 0
    stratified_splits: bool = False


@dataclass
class SweepSection(object):
    variants: Tuple[str, ...] = ()
    baseline: str = "baseline"
    fractions: Tuple[float, ...] = DEFAULT_FRACTIONS
    seeds: Tuple[int, ...] = (0,)
    workers: int = 1
    stratified: bool = True
    metric: str = "macro_f1"
    results: str = "results.csv"
    architecture: str = ""

    def variant_paths(self):
        """`name=path` entries as an ordered mapping"""
        paths = OrderedDict()
        for entry in self.variants:
            name, sep, path = entry.partition("=")
            if not sep or not name.strip() or not path.strip():
                raise ConfigValueError("sweep.variants: expected name=path, got %r" % entry)
            paths[name.strip()] = path.strip()
        return paths


SECTIONS = OrderedDict([
    ("paths", PathsSection),
    ("corpus", CorpusSection),
    ("tokenizer", TokenizerSection),
    ("model", ModelSection),
    ("pretrain", lambda: TrainConfig.from_preset("pretrain")),
    ("posttrain", lambda: TrainConfig.from_preset("posttrain")),
    ("finetune", lambda: TrainConfig.from_preset("sentiment")),
    ("dataset", DatasetSection),
    ("sweep", SweepSection),
])


# = Pipeline Config =

@dataclass
class PipelineConfig(object):
    paths: PathsSection
    corpus: CorpusSection
    tokenizer: TokenizerSection
    model: ModelSection
    pretrain: TrainConfig
    posttrain: TrainConfig
    finetune: TrainConfig
    dataset: DatasetSection
    sweep: SweepSection

    @classmethod
    def defaults(cls):
        return cls(**{name: factory() for name, factory in SECTIONS.items()})

    def model_config(self):
        return self.model.model_config(self.tokenizer.vocab_size)

    def sweep_config(self):
        return SweepConfig(task=self.dataset.task,
                           architecture=self.sweep.architecture or self.model.preset,
                           variants=self.sweep.variant_paths(), baseline=self.sweep.baseline,
                           fractions=tuple(self.sweep.fractions), seeds=tuple(self.sweep.seeds),
                           finetune=self.finetune, num_labels=self.dataset.num_labels,
                           dataset_path=self.paths.dataset, vocab_path=self.paths.vocab,
                           results_path=os.path.join(self.paths.output_dir, self.sweep.results),
                           workers=self.sweep.workers, stratified=self.sweep.stratified)

    def validate(self):
        self.model_config().validate()
        for name in ("pretrain", "posttrain", "finetune"):
            getattr(self, name).validate()
        if self.sweep.variants:
            self.sweep.variant_paths()
        return self

    def to_text(self):
        """Deterministic INI serialization of every value"""
        parser = configparser.ConfigParser(interpolation=None)
        for name in SECTIONS:
            section = getattr(self, name)
            parser[name] = OrderedDict((f.name, _format(getattr(section, f.name)))
                                       for f in dataclasses.fields(section))

        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


# = Utility Functions =

def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(kind, text):
    """Convert the string `text` to the dataclass field type `kind`"""
    if kind is bool:
        lowered = text.strip().lower()
        if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
            raise ValueError("not a boolean: %r" % text)
        return configparser.ConfigParser.BOOLEAN_STATES[lowered]

    if typing.get_origin(kind) is tuple:
        item = typing.get_args(kind)[0]
        return tuple(_convert(item, part) for part in text.split(",") if part.strip())

    if kind in (int, float):
        return kind(text.strip())

    return text.strip()


def _locate(lines, section, key):
    """Line number of `key` in `section`, for messages"""
    current = None
    for number, line in enumerate(lines, 1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
        elif current == section and stripped.split("=", 1)[0].split(":", 1)[0].strip().lower() == key:
            return number
    return 0


def _set_value(config, section_name, key, value, where):
    if section_name not in SECTIONS:
        raise UnknownKeyError("%s: unknown section [%s] (known: %s)" %
                              (where, section_name, ", ".join(SECTIONS)))

    section = getattr(config, section_name)
    fields = {f.name: f for f in dataclasses.fields(section)}

    if key not in fields:
        raise UnknownKeyError("%s: unknown key %r in [%s] (known: %s)" %
                              (where, key, section_name, ", ".join(fields)))

    kind = typing.get_type_hints(type(section))[key]

    if isinstance(value, str):
        try:
            value = _convert(kind, value)
        except ValueError as e:
            raise ConfigValueError("%s: %s.%s: %s" % (where, section_name, key, e))

    setattr(section, key, value)


# = Operations =

# == OP: Load Config ==

def load_config(path=None, overrides=None):
    """
    Defaults, updated from the file at `path` (if given), updated from
    `overrides` (`{"section.key": value}`), then validated.
    """
    log = logging.getLogger("load_config")
    config = PipelineConfig.defaults()

    if path is not None:
        if not os.path.exists(path):
            raise MissingConfigError("Config file %s does not exist" % path)

        with io.open(path, "r", encoding="utf-8") as f:
            text = f.read()
        lines = text.splitlines()

        parser = configparser.ConfigParser(interpolation=None, strict=True,
                                           default_section="__defaults__")
        try:
            parser.read_string(text, source=path)
        except configparser.Error as e:
            lineno = getattr(e, "lineno", None)
            if lineno is None and getattr(e, "errors", None):
                lineno = e.errors[0][0]
            raise ConfigParseError("%s:%s: %s" % (path, lineno or "?", e.message.splitlines()[0]))

        for section_name in parser.sections():
            if section_name not in SECTIONS:
                lineno = next((n for n, line in enumerate(lines, 1)
                               if line.strip() == "[%s]" % section_name), 0)
                raise UnknownKeyError("%s:%d: unknown section [%s] (known: %s)" %
                                      (path, lineno, section_name, ", ".join(SECTIONS)))

            for key, value in parser.items(section_name):
                where = "%s:%d" % (path, _locate(lines, section_name, key))
                _set_value(config, section_name, key, value, where)

        log.debug("Read config %s", path)

    for dotted, value in (overrides or {}).items():
        section_name, _, key = dotted.partition(".")
        _set_value(config, section_name, key, value, "override %s" % dotted)

    return config.validate()

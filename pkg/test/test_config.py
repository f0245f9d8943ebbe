#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
Pipeline Configuration Unit Tests


Functions under test:

- load_config
- PipelineConfig.to_text / model_config / sweep_config

"""

import io
import os

from nose.tools import eq_ as eq, assert_raises

from lanjut.model import InvalidConfigError
from lanjut.training import InvalidTrainConfigError
from lanjut.config import (PipelineConfig, MissingConfigError, ConfigParseError, UnknownKeyError,
                           ConfigValueError, OUTPUT_DIR_ENV, load_config)

from util import temp_dir, remove_dir, random_id


# = Setup / Tear Down =

work_dir = None


def setup_module():
    global work_dir
    work_dir = temp_dir()


def teardown_module():
    remove_dir(work_dir)


# = Utility Functions =

def _config_file(text):
    path = os.path.join(work_dir, random_id() + ".ini")
    with io.open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


# = Tests =

def test_defaults():
    """
    Test: no file and an empty file both give the defaults
    """
    defaults = PipelineConfig.defaults()
    eq(load_config().to_text(), defaults.to_text())
    eq(load_config(_config_file("")).to_text(), defaults.to_text())

    eq(defaults.posttrain.learning_rate, 2e-5)
    eq(defaults.posttrain.weight_decay, 0.01)
    eq(defaults.pretrain.learning_rate, 1e-3)
    eq(defaults.model.preset, "tiny")


def test_file_values():
    """
    Test: typed values from the file, including booleans and lists
    """
    path = _config_file("[tokenizer]\n"
                        "lowercase = no\n"
                        "vocab_size = 500\n"
                        "\n"
                        "[sweep]\n"
                        "fractions = 1.0, 0.5, 0.1\n"
                        "seeds = 0, 1, 2\n"
                        "variants = baseline = runs/a.ckpt, news=runs/b.ckpt\n")
    config = load_config(path)

    eq(config.tokenizer.lowercase, False)
    eq(config.tokenizer.vocab_size, 500)
    eq(config.sweep.fractions, (1.0, 0.5, 0.1))
    eq(config.sweep.seeds, (0, 1, 2))
    eq(list(config.sweep.variant_paths().items()),
       [("baseline", "runs/a.ckpt"), ("news", "runs/b.ckpt")])


def test_precedence():
    """
    Test: defaults < file < overrides
    """
    path = _config_file("[posttrain]\nepochs = 2\n")

    eq(load_config(path).posttrain.epochs, 2)
    eq(load_config(path, {"posttrain.epochs": 20}).posttrain.epochs, 20)
    eq(load_config(path, {"pretrain.epochs": 7}).posttrain.epochs, 2)


def test_model_config():
    """
    Test: preset dimensions unless overridden; vocabulary size from the tokenizer section
    """
    config = load_config(_config_file("[model]\npreset = base\nnum_layers = 4\n"
                                      "[tokenizer]\nvocab_size = 3000\n"))
    model = config.model_config()
    eq((model.num_layers, model.hidden_size, model.vocab_size), (4, 768, 3000))


def test_invalid_model():
    """
    Test: hidden size not divisible by the head count is rejected at load time
    """
    path = _config_file("[model]\nhidden_size = 65\nemb_size = 65\n")
    with assert_raises(InvalidConfigError) as ctx:
        load_config(path)
    eq(str(ctx.exception), "hidden_size (65) must be divisible by num_heads (2)")

    assert_raises(ConfigValueError, load_config, _config_file("[model]\npreset = gigantic\n"))


def test_missing_file():
    """
    Test: a config path that does not exist
    """
    assert_raises(MissingConfigError, load_config, os.path.join(work_dir, "nothing.ini"))


def test_unknown_key_line():
    """
    Test: unknown keys and sections name their line
    """
    path = _config_file("[posttrain]\nepochs = 2\nepoks = 3\n")
    with assert_raises(UnknownKeyError) as ctx:
        load_config(path)
    assert "%s:3:" % path in str(ctx.exception), str(ctx.exception)
    assert "epoks" in str(ctx.exception)

    path = _config_file("[posttrain]\nepochs = 2\n\n[optimiser]\nbeta = 1\n")
    with assert_raises(UnknownKeyError) as ctx:
        load_config(path)
    assert "%s:4:" % path in str(ctx.exception), str(ctx.exception)

    assert_raises(UnknownKeyError, load_config, None, {"posttrain.epoks": 3})


def test_parse_errors():
    """
    Test: keys outside sections and duplicate keys are parse errors
    """
    assert_raises(ConfigParseError, load_config, _config_file("epochs = 2\n"))
    assert_raises(ConfigParseError, load_config, _config_file("[posttrain]\nepochs = 2\nepochs = 3\n"))


def test_bad_values():
    """
    Test: values that do not convert, and out-of-range training values
    """
    assert_raises(ConfigValueError, load_config, _config_file("[posttrain]\nepochs = many\n"))
    assert_raises(ConfigValueError, load_config, _config_file("[tokenizer]\nlowercase = maybe\n"))
    assert_raises(ConfigValueError, load_config, _config_file("[sweep]\nvariants = baseline\n"))
    assert_raises(InvalidTrainConfigError, load_config, _config_file("[finetune]\nepochs = 0\n"))


def test_output_dir_from_environment():
    """
    Test: LANJUT_OUTPUT_DIR sets the default output directory, files still win
    """
    previous = os.environ.get(OUTPUT_DIR_ENV)
    os.environ[OUTPUT_DIR_ENV] = "/tmp/lanjut-env-runs"
    try:
        eq(load_config().paths.output_dir, "/tmp/lanjut-env-runs")
        eq(load_config(_config_file("[paths]\noutput_dir = here\n")).paths.output_dir, "here")
    finally:
        if previous is None:
            del os.environ[OUTPUT_DIR_ENV]
        else:
            os.environ[OUTPUT_DIR_ENV] = previous


def test_to_text_round_trip():
    """
    Test: serialized config loads back to the same text
    """
    config = load_config(_config_file("[sweep]\nvariants = a=x.ckpt, b=y.ckpt\nfractions = 1.0, 0.3\n"
                                      "[dataset]\nstratified_splits = yes\n"),
                         {"posttrain.learning_rate": 5e-5})
    text = config.to_text()

    eq(load_config(_config_file(text)).to_text(), text)
    assert "learning_rate = 5e-05" in text


def test_sweep_config():
    """
    Test: sweep settings and paths flow into the sweep runner configuration
    """
    config = load_config(_config_file("[paths]\noutput_dir = out\ndataset = d.csv\nvocab = v.txt\n"
                                      "[sweep]\nvariants = base=a.ckpt, news=b.ckpt\nseeds = 3, 4\n"
                                      "[dataset]\ntask = topic\nnum_labels = 20\n"))
    sweep = config.sweep_config()

    eq(list(sweep.variants), ["base", "news"])
    eq(sweep.seeds, (3, 4))
    eq(sweep.num_labels, 20)
    eq(sweep.task, "topic")
    eq(sweep.architecture, "tiny")
    eq(sweep.results_path, os.path.join("out", "results.csv"))
    eq(sweep.finetune, config.finetune)

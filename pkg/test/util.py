#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
Utility Functions for Unit Tests
"""

import os
import uuid
import shutil
import filecmp
import tempfile

import numpy as np

from lanjut.numerics import Tensor, backward
from lanjut.tokenizer import Vocabulary, SPECIAL_TOKENS, CONTINUATION_PREFIX
from lanjut.model import ModelConfig


FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")


# === Generate ids and directories for test objects ===

def random_id():
    return str(uuid.uuid4())


def temp_dir():
    return tempfile.mkdtemp(prefix="lanjut-test-")


def remove_dir(path):
    shutil.rmtree(path, ignore_errors=True)


def fixture(*parts):
    return os.path.join(FIXTURES, *parts)


# === Special equality assertions ===

def eq_file(x, y):
    if not filecmp.cmp(x, y, shallow=False):
        assert False, "Files %s and %s differ" % (x, y)


def eq_array(x, y, atol=1e-6, rtol=1e-6):
    if not np.allclose(x, y, atol=atol, rtol=rtol):
        assert False, "Arrays differ (max abs diff %g)" % np.max(np.abs(np.asarray(x) - np.asarray(y)))


# === Finite differences ===

def check_gradients(func, *arrays, h=1e-3, tolerance=1e-3):
    """
    Compare analytic gradients of the scalar `func(*tensors)` with central
    differences, in float64. Fails on relative error above `tolerance`.
    """
    inputs = [Tensor(np.array(a, dtype=np.float64), requires_grad=True, dtype=np.float64)
              for a in arrays]
    backward(func(*inputs))

    for k, t in enumerate(inputs):
        numeric = np.zeros_like(t.data)
        for idx in np.ndindex(*t.shape):
            original = t.data[idx]
            t.data[idx] = original + h
            up = func(*inputs).item()
            t.data[idx] = original - h
            down = func(*inputs).item()
            t.data[idx] = original
            numeric[idx] = (up - down) / (2 * h)

        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-8)
        error = np.linalg.norm(numeric - analytic) / scale
        assert error < tolerance, "Input %d: relative gradient error %g" % (k, error)


# === Small vocabularies and models ===

def letter_vocab(words=()):
    """Specials, single letters and their continuations, plus `words`"""
    letters = "abcdefghijklmnopqrstuvwxyz"
    tokens = (list(SPECIAL_TOKENS) + list(letters) +
              [CONTINUATION_PREFIX + c for c in letters] + list(words))
    return Vocabulary(tokens)


def small_config(vocab_size, **changes):
    dims = dict(vocab_size=vocab_size, num_layers=1, num_heads=2, emb_size=16, hidden_size=16,
                ffn_size=32, max_position=16, dropout_prob=0.0)
    dims.update(changes)
    return ModelConfig(**dims)

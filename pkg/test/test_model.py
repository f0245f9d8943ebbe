#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
Encoder Model Unit Tests


Functions under test:

- ModelConfig presets and validation
- parameter_shapes / parameter_count
- init_model / attach_classifier
- encode_forward / mlm_logits / classify_logits

"""

import numpy as np

from nose.tools import eq_ as eq, assert_raises

from lanjut.numerics import ShapeError
from lanjut.tokenizer import encode_batch, TokenBatch
from lanjut.model import (ModelConfig, ModelError, InvalidConfigError, SequenceTooLongError,
                          MissingHeadError, parameter_shapes, parameter_count, init_model, attach_classifier,
                          encode_forward, mlm_logits, classify_logits, truncated_normal)

from util import letter_vocab, small_config, eq_array


vocab = None
model = None


def setup_module():
    global vocab, model
    vocab = letter_vocab(["saham", "bank", "naik"])
    model = init_model(small_config(len(vocab)), seed=7)


# = Tests =

# == Configuration ==

def test_presets():
    """
    Test: tiny / base / large presets and unknown names
    """
    eq(ModelConfig.from_preset("base").hidden_size, 768)
    eq(ModelConfig.from_preset("large").num_layers, 24)
    eq(ModelConfig.from_preset("tiny", vocab_size=100).vocab_size, 100)
    assert_raises(InvalidConfigError, ModelConfig.from_preset, "huge")


def test_validate_heads():
    """
    Test: hidden_size not divisible by num_heads is rejected with a message naming both
    """
    with assert_raises(InvalidConfigError) as ctx:
        ModelConfig(hidden_size=65, emb_size=65, num_heads=2).validate()
    eq(str(ctx.exception), "hidden_size (65) must be divisible by num_heads (2)")


def test_validate_ranges():
    """
    Test: non-positive sizes, one label and dropout of 1 are rejected
    """
    assert_raises(InvalidConfigError, ModelConfig(num_layers=0).validate)
    assert_raises(InvalidConfigError, ModelConfig(num_labels=1).validate)
    assert_raises(InvalidConfigError, ModelConfig(dropout_prob=1.0).validate)
    assert_raises(InvalidConfigError, init_model, ModelConfig(vocab_size=0), 0)


def test_parameter_count_tiny():
    """
    Test: tiny preset with 2000 tokens and no head
    """
    config = ModelConfig.from_preset("tiny", vocab_size=2000)
    eq(parameter_count(config), 205264)
    eq(init_model(config, 0).parameter_count(), 205264)


def test_parameter_count_matches_shapes():
    """
    Test: closed form equals the sum over parameter_shapes for several layouts
    """
    configs = [
        ModelConfig(vocab_size=50),
        ModelConfig(vocab_size=50, emb_size=32, hidden_size=64, num_heads=4),
        ModelConfig(vocab_size=50, tie_word_embeddings=False, num_labels=3),
        ModelConfig(vocab_size=50, emb_size=16, hidden_size=32, tie_word_embeddings=False,
                    num_labels=20, num_layers=3),
    ]

    for config in configs:
        total = sum(int(np.prod(shape)) for shape in parameter_shapes(config).values())
        eq(parameter_count(config), total)


def test_truncated_normal_bounds():
    """
    Test: no draw beyond two standard deviations
    """
    values = truncated_normal(np.random.default_rng(0), (200, 200), std=0.02)
    assert np.abs(values).max() <= 0.04 + 1e-7
    assert abs(values.std() - 0.0176) < 0.001


# == Initialization ==

def test_init_deterministic():
    """
    Test: the same seed gives identical parameters, another seed does not
    """
    config = small_config(len(vocab))
    a, b, c = init_model(config, 3), init_model(config, 3), init_model(config, 4)

    for name in a.params:
        assert np.array_equal(a[name].data, b[name].data), name

    assert not np.array_equal(a["embeddings.token"].data, c["embeddings.token"].data)


def test_init_values():
    """
    Test: biases start at 0 and norm gains at 1
    """
    eq_array(model["layer.0.ffn.input.bias"].data, np.zeros(32))
    eq_array(model["layer.0.ffn.norm.gain"].data, np.ones(16))


def test_attach_classifier():
    """
    Test: attach_classifier adds a head and updates num_labels; parameters() selects heads
    """
    m = model.copy()
    assert not m.has_classifier
    attach_classifier(m, 4, seed=0)

    assert m.has_classifier
    eq(m.config.num_labels, 4)
    eq(m["classifier.weight"].shape, (16, 4))

    assert "classifier.weight" in m.parameters("classifier")
    assert "mlm.decoder.bias" not in m.parameters("classifier")
    assert "classifier.weight" not in m.parameters("mlm")
    assert "embeddings.token" in m.parameters("mlm")


def test_copy_is_independent():
    """
    Test: changing a copy leaves the original untouched
    """
    m = model.copy()
    m["embeddings.token"].data[0, 0] += 1.0
    assert m["embeddings.token"].data[0, 0] != model["embeddings.token"].data[0, 0]


# == Forward ==

def test_forward_shapes():
    """
    Test: hidden states, MLM logits and attention shapes
    """
    batch = encode_batch(vocab, ["saham bank naik", "bank"], 8)
    hidden, attentions = encode_forward(model, batch, return_attention=True)

    eq(hidden.shape, (2, 8, 16))
    eq(mlm_logits(model, hidden).shape, (2, 8, len(vocab)))
    eq(len(attentions), 1)
    eq(attentions[0].shape, (2, 2, 8, 8))


def test_attention_zero_on_padding():
    """
    Test: padded keys get exactly zero attention weight
    """
    batch = encode_batch(vocab, ["bank"], 8)
    _, attentions = encode_forward(model, batch, return_attention=True)

    pads = batch.attention_mask[0] == 0
    assert pads.any()
    eq(float(np.abs(attentions[0][0][:, :, pads]).max()), 0.0)


def test_padding_invariance():
    """
    Test: states of real tokens do not depend on the amount of padding
    """
    short = encode_batch(vocab, ["saham naik"], 6)
    long = encode_batch(vocab, ["saham naik"], 12)

    a = encode_forward(model, short).numpy()
    b = encode_forward(model, long).numpy()

    n = int(short.attention_mask.sum())
    eq_array(a[0, :n], b[0, :n], atol=1e-5)


def test_eval_mode_deterministic():
    """
    Test: without train_mode the forward pass ignores dropout
    """
    config = small_config(len(vocab), dropout_prob=0.5)
    m = init_model(config, 1)
    batch = encode_batch(vocab, ["saham bank"], 6)

    eq_array(encode_forward(m, batch).numpy(), encode_forward(m, batch).numpy(), atol=0)

    trained = encode_forward(m, batch, train_mode=True, rng=np.random.default_rng(0)).numpy()
    assert not np.allclose(trained, encode_forward(m, batch).numpy())


def test_sequence_too_long():
    """
    Test: sequences longer than max_position raise SequenceTooLongError
    """
    batch = encode_batch(vocab, ["saham"], 20)
    assert_raises(SequenceTooLongError, encode_forward, model, batch)


def test_untied_and_projected_model():
    """
    Test: emb_size != hidden_size and untied decoder run end to end
    """
    config = small_config(len(vocab), emb_size=8, hidden_size=16, tie_word_embeddings=False)
    m = init_model(config, 0)
    batch = TokenBatch(ids=np.array([[2, 5, 6, 3]]), attention_mask=np.ones((1, 4), dtype=np.int64))

    hidden = encode_forward(m, batch)
    eq(hidden.shape, (1, 4, 16))
    eq(mlm_logits(m, hidden).shape, (1, 4, len(vocab)))


def test_heads_errors():
    """
    Test: classify_logits without a head and mlm_logits on wrong widths fail
    """
    batch = encode_batch(vocab, ["bank"], 6)
    hidden = encode_forward(model, batch)

    assert_raises(MissingHeadError, classify_logits, model, hidden)
    assert_raises(ShapeError, mlm_logits, model, hidden.reshape(1, 6, 8, 2).sum(axis=3))


def test_classify_logits_shape():
    """
    Test: classification logits come from the [CLS] position
    """
    m = attach_classifier(model.copy(), 3, seed=0)
    batch = encode_batch(vocab, ["saham naik", "bank"], 6)
    eq(classify_logits(m, encode_forward(m, batch)).shape, (2, 3))


def test_token_id_outside_vocabulary():
    """
    Test: the error names the offending id, negative or too large
    """
    for bad in (-1, len(vocab)):
        batch = TokenBatch(ids=np.array([[2, 5, bad, 3]]), attention_mask=np.ones((1, 4), dtype=np.int64))
        with assert_raises(ModelError) as ctx:
            encode_forward(model, batch)
        assert str(ctx.exception).startswith("Token id %d " % bad), str(ctx.exception)


# == Reference Computation ==

def _reference_layer_norm(x, gain, bias):
    centered = x - x.mean(axis=-1, keepdims=True)
    return centered / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + 1e-12) * gain + bias


def _reference_encoder(params, ids):
    """One layer, one head, float64, written out step by step"""
    w = {name: p.data.astype(np.float64) for name, p in params.items()}

    x = w["embeddings.token"][ids] + w["embeddings.position"][:len(ids)]
    x = _reference_layer_norm(x, w["embeddings.norm.gain"], w["embeddings.norm.bias"])

    q = x.dot(w["layer.0.attention.query.weight"]) + w["layer.0.attention.query.bias"]
    k = x.dot(w["layer.0.attention.key.weight"]) + w["layer.0.attention.key.bias"]
    v = x.dot(w["layer.0.attention.value.weight"]) + w["layer.0.attention.value.bias"]

    scores = q.dot(k.T) / np.sqrt(q.shape[1])
    scores = np.exp(scores - scores.max(axis=1, keepdims=True))
    weights = scores / scores.sum(axis=1, keepdims=True)

    attended = weights.dot(v).dot(w["layer.0.attention.output.weight"])
    attended += w["layer.0.attention.output.bias"]
    x = _reference_layer_norm(x + attended, w["layer.0.attention.norm.gain"],
                              w["layer.0.attention.norm.bias"])

    h = x.dot(w["layer.0.ffn.input.weight"]) + w["layer.0.ffn.input.bias"]
    h = 0.5 * h * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (h + 0.044715 * h ** 3)))
    h = h.dot(w["layer.0.ffn.output.weight"]) + w["layer.0.ffn.output.bias"]
    return _reference_layer_norm(x + h, w["layer.0.ffn.norm.gain"], w["layer.0.ffn.norm.bias"])


def test_forward_matches_reference():
    """
    Test: a one layer, one head encoder equals the computation written out in float64
    """
    m = init_model(small_config(len(vocab), num_heads=1), seed=2)
    rng = np.random.default_rng(5)
    for p in m.params.values():
        p.data[...] = (rng.standard_normal(p.shape) * 0.3).astype(p.data.dtype)

    ids = np.array([2, 9, 3])
    batch = TokenBatch(ids=ids[None, :], attention_mask=np.ones((1, 3), dtype=np.int64))

    eq_array(encode_forward(m, batch).numpy()[0], _reference_encoder(m.params, ids), atol=1e-4)


def test_batch_permutation_equivariance():
    """
    Test: permuting the batch permutes the states and changes nothing else
    """
    texts = ["saham bank naik", "bank", "naik saham"]
    order = [2, 0, 1]

    states = encode_forward(model, encode_batch(vocab, texts, 8)).numpy()
    permuted = encode_forward(model, encode_batch(vocab, [texts[i] for i in order], 8)).numpy()

    eq_array(permuted, states[order], atol=1e-6)


def test_tokens_after_sep_ignored():
    """
    Test: changing padded ids after [SEP] leaves [CLS] and every real token unchanged
    """
    batch = encode_batch(vocab, ["saham naik"], 10)
    n = int(batch.attention_mask.sum())

    changed_ids = batch.ids.copy()
    changed_ids[0, n:] = np.arange(10 - n) + 5
    changed = TokenBatch(ids=changed_ids, attention_mask=batch.attention_mask)

    a = encode_forward(model, batch).numpy()
    b = encode_forward(model, changed).numpy()
    eq_array(b[0, 0], a[0, 0], atol=1e-6)
    eq_array(b[0, :n], a[0, :n], atol=1e-6)


def test_tied_head_uses_embeddings():
    """
    Test: the tied MLM head projects onto the token embeddings, the untied one does not
    """
    batch = encode_batch(vocab, ["saham bank"], 6)

    hidden = encode_forward(model, batch)
    logits = mlm_logits(model, hidden).numpy()
    expected = hidden.numpy().dot(model["embeddings.token"].data.T) + model["mlm.decoder.bias"].data
    eq_array(logits, expected, atol=1e-5)
    assert model.mlm_decoder is model["embeddings.token"]

    untied = init_model(small_config(len(vocab), tie_word_embeddings=False), seed=7)
    assert untied.mlm_decoder is untied["mlm.decoder.weight"]
    assert not np.array_equal(untied["mlm.decoder.weight"].data, untied["embeddings.token"].data)

    hidden = encode_forward(untied, batch)
    tied_view = hidden.numpy().dot(untied["embeddings.token"].data.T)
    assert not np.allclose(mlm_logits(untied, hidden).numpy(), tied_view, atol=1e-5)


def test_parameter_count_base_large():
    """
    Test: base and large presets at 30522 tokens and 512 positions
    """
    # Per layer: 4 attention projections, two FFN matrices, 9 H-wide vectors, one F-wide bias
    base = ModelConfig.from_preset("base", vocab_size=30522, max_position=512)
    eq(parameter_count(base), 30522 * 768 + 512 * 768 + 2 * 768 +
       12 * (4 * 768 * 768 + 2 * 768 * 3072 + 9 * 768 + 3072) + 30522)
    eq(parameter_count(base), 108920634)

    large = ModelConfig.from_preset("large", vocab_size=30522, max_position=512)
    eq(parameter_count(large), 334120762)
    eq(parameter_count(large.replace(num_labels=3)), 334120762 + 1024 * 3 + 3)

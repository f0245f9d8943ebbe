#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
BERT-style bidirectional Transformer encoder

One parameter table per model, keyed by dotted names (see
`parameter_shapes`). The same encoder feeds two interchangeable heads:

- the masked-language-model head, tied to the token embeddings by default
- the classification head, a linear projection of the `[CLS]` state

Presets cover the base and large shapes of the post-trained models and a
tiny shape for desk-scale runs.
"""

# = Imports =

import math
import logging
import dataclasses
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from lanjut.errors import LanjutError
from lanjut.numerics import (DTYPE, Tensor, ShapeError, embedding, layer_norm, gelu,
                             softmax, dropout, matmul)


# = Exceptions =

class ModelError(LanjutError):
    pass


class InvalidConfigError(ModelError):
    pass


class SequenceTooLongError(ModelError):
    pass


class MissingHeadError(ModelError):
    pass


# = Configuration =

INIT_STD = 0.02

PRESETS = {
    "tiny": dict(num_layers=2, num_heads=2, emb_size=64, hidden_size=64, ffn_size=128),
    "base": dict(num_layers=12, num_heads=12, emb_size=768, hidden_size=768, ffn_size=3072),
    "large": dict(num_layers=24, num_heads=16, emb_size=1024, hidden_size=1024, ffn_size=4096),
}

# Fields that must agree between a checkpoint and the configuration
# a caller expects to load it into
ARCHITECTURE_FIELDS = ("num_layers", "num_heads", "emb_size", "hidden_size", "ffn_size",
                       "vocab_size", "max_position", "tie_word_embeddings")


@dataclass
class ModelConfig(object):
    num_layers: int = 2
    num_heads: int = 2
    emb_size: int = 64
    hidden_size: int = 64
    ffn_size: int = 128
    vocab_size: int = 2000
    max_position: int = 128
    num_labels: int = 0
    dropout_prob: float = 0.1
    tie_word_embeddings: bool = True
    layer_norm_eps: float = 1e-12

    @classmethod
    def from_preset(cls, name, **overrides):
        if name not in PRESETS:
            raise InvalidConfigError("Unknown model preset %r (known: %s)" %
                                     (name, ", ".join(sorted(PRESETS))))
        values = dict(PRESETS[name])
        values.update(overrides)
        return cls(**values)

    def validate(self):
        for name in ("num_layers", "num_heads", "emb_size", "hidden_size", "ffn_size",
                     "vocab_size", "max_position"):
            if getattr(self, name) < 1:
                raise InvalidConfigError("%s must be positive, got %r" % (name, getattr(self, name)))

        if self.hidden_size % self.num_heads:
            raise InvalidConfigError("hidden_size (%d) must be divisible by num_heads (%d)" %
                                     (self.hidden_size, self.num_heads))

        if self.num_labels < 0 or self.num_labels == 1:
            raise InvalidConfigError("num_labels must be 0 (no classifier) or at least 2, got %d" %
                                     self.num_labels)

        if not 0.0 <= self.dropout_prob < 1.0:
            raise InvalidConfigError("dropout_prob must be in [0, 1), got %r" % self.dropout_prob)

        return self

    def architecture(self):
        return tuple(getattr(self, name) for name in ARCHITECTURE_FIELDS)

    def to_record(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_record(cls, record):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(record) - known
        if unknown:
            raise InvalidConfigError("Unknown model config keys: %s" % ", ".join(sorted(unknown)))
        return cls(**record)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# = Parameter Layout =

def parameter_shapes(config):
    """
    Return ordered `name -> shape` of every parameter `init_model` allocates
    """
    V, P = config.vocab_size, config.max_position
    E, H, F = config.emb_size, config.hidden_size, config.ffn_size

    shapes = OrderedDict()
    shapes["embeddings.token"] = (V, E)
    shapes["embeddings.position"] = (P, E)
    shapes["embeddings.norm.gain"] = (E,)
    shapes["embeddings.norm.bias"] = (E,)

    if E != H:
        shapes["embeddings.projection.weight"] = (E, H)
        shapes["embeddings.projection.bias"] = (H,)

    for layer in range(config.num_layers):
        prefix = "layer.%d." % layer
        for part in ("query", "key", "value", "output"):
            shapes[prefix + "attention.%s.weight" % part] = (H, H)
            shapes[prefix + "attention.%s.bias" % part] = (H,)
        shapes[prefix + "attention.norm.gain"] = (H,)
        shapes[prefix + "attention.norm.bias"] = (H,)
        shapes[prefix + "ffn.input.weight"] = (H, F)
        shapes[prefix + "ffn.input.bias"] = (F,)
        shapes[prefix + "ffn.output.weight"] = (F, H)
        shapes[prefix + "ffn.output.bias"] = (H,)
        shapes[prefix + "ffn.norm.gain"] = (H,)
        shapes[prefix + "ffn.norm.bias"] = (H,)

    if E != H:
        shapes["mlm.projection.weight"] = (H, E)
        shapes["mlm.projection.bias"] = (E,)

    if not config.tie_word_embeddings:
        shapes["mlm.decoder.weight"] = (V, E)
    shapes["mlm.decoder.bias"] = (V,)

    if config.num_labels:
        shapes["classifier.weight"] = (H, config.num_labels)
        shapes["classifier.bias"] = (config.num_labels,)

    return shapes


def parameter_count(config):
    """
    Closed-form parameter count:

    `V·E + P·E + 2E  [+ 2(E·H) + H + E if E ≠ H]
     + L·(4H² + 2H·F + 9H + F) + V [+ V·E untied] [+ H·C + C]`
    """
    V, P, L = config.vocab_size, config.max_position, config.num_layers
    E, H, F, C = config.emb_size, config.hidden_size, config.ffn_size, config.num_labels

    count = V * E + P * E + 2 * E
    if E != H:
        count += 2 * E * H + H + E
    count += L * (4 * H * H + 2 * H * F + 9 * H + F)
    count += V
    if not config.tie_word_embeddings:
        count += V * E
    if C:
        count += H * C + C
    return count


def truncated_normal(rng, shape, std=INIT_STD, limit=2.0):
    """Normal draws beyond `limit` standard deviations are redrawn"""
    values = rng.standard_normal(shape)
    outside = np.abs(values) > limit
    while outside.any():
        values[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(values) > limit
    return (values * std).astype(DTYPE)


def _initial_value(name, shape, rng):
    if name.endswith(".bias"):
        return np.zeros(shape, dtype=DTYPE)
    if name.endswith(".gain"):
        return np.ones(shape, dtype=DTYPE)
    return truncated_normal(rng, shape)


# = Encoder Model Class =

class EncoderModel(object):
    """
    Configuration plus named parameter tensors.

    A model is owned by one training loop at a time. Frozen models may be
    shared by evaluation threads under `numerics.no_grad()`.
    """

    log = logging.getLogger("EncoderModel")

    def __init__(self, config, params):
        self.config = config
        self.params = OrderedDict(params)

    def __getitem__(self, name):
        return self.params[name]

    @property
    def has_classifier(self):
        return "classifier.weight" in self.params

    @property
    def mlm_decoder(self):
        """(vocab, emb) matrix the MLM head projects onto"""
        if self.config.tie_word_embeddings:
            return self.params["embeddings.token"]
        return self.params["mlm.decoder.weight"]

    def parameters(self, head=None):
        """
        Encoder parameters plus the parameters of `head` ("mlm" or
        "classifier"). All parameters if `head` is `None`.
        """
        if head is None:
            return OrderedDict(self.params)

        other = "classifier." if head == "mlm" else "mlm."
        return OrderedDict((name, p) for name, p in self.params.items()
                           if not name.startswith(other))

    def parameter_count(self):
        return sum(p.size for p in self.params.values())

    def copy(self):
        return EncoderModel(self.config,
                            ((name, Tensor(p.data.copy(), requires_grad=True, dtype=p.dtype, name=name))
                             for name, p in self.params.items()))

    def __repr__(self):
        return "EncoderModel(%d layers, hidden %d, %d parameters%s)" % (
            self.config.num_layers, self.config.hidden_size, self.parameter_count(),
            ", %d labels" % self.config.num_labels if self.has_classifier else "")


# = Operations =

# == Init ==

def init_model(config, seed):
    """
    Allocate every parameter of `config`: weights from a truncated normal
    (std 0.02), biases 0, norm gains 1. Deterministic per `seed`.
    """
    config.validate()
    rng = np.random.default_rng(seed)

    params = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        params[name] = Tensor(_initial_value(name, shape, rng), requires_grad=True, name=name)

    model = EncoderModel(config, params)
    EncoderModel.log.debug("Initialized %r with seed %d", model, seed)
    return model


def attach_classifier(model, num_labels, seed):
    """
    Replace (or add) the classification head with a fresh one of width
    `num_labels`
    """
    config = model.config.replace(num_labels=num_labels).validate()
    rng = np.random.default_rng(seed)
    H = config.hidden_size

    model.config = config
    model.params["classifier.weight"] = Tensor(truncated_normal(rng, (H, num_labels)),
                                               requires_grad=True, name="classifier.weight")
    model.params["classifier.bias"] = Tensor(np.zeros(num_labels, dtype=DTYPE),
                                             requires_grad=True, name="classifier.bias")

    EncoderModel.log.debug("Attached %d-way classifier (seed %d)", num_labels, seed)
    return model


# == Forward ==

def _split_heads(x, batch, length, heads):
    head_size = x.shape[-1] // heads
    return (x.reshape(batch, length, heads, head_size)
             .transpose(0, 2, 1, 3)
             .reshape(batch * heads, length, head_size))


def _merge_heads(x, batch, length, heads):
    head_size = x.shape[-1]
    return (x.reshape(batch, heads, length, head_size)
             .transpose(0, 2, 1, 3)
             .reshape(batch, length, heads * head_size))


def encode_forward(model, batch, train_mode=False, rng=None, return_attention=False):
    """
    Run the encoder over a `TokenBatch`. Returns (batch, seq_len, hidden)
    states, plus per-layer attention weights (batch, heads, seq, seq) if
    `return_attention` is set.

    `[PAD]` keys get `-inf` scores, hence exactly zero attention weight.
    Dropout is only active in `train_mode`.
    """
    config = model.config
    P = model.params

    ids = np.asarray(batch.ids, dtype=np.int64)
    mask = np.asarray(batch.attention_mask)
    B, T = ids.shape
    heads = config.num_heads
    p = config.dropout_prob if train_mode else 0.0

    if T > config.max_position:
        raise SequenceTooLongError("Sequence length %d exceeds max_position %d" %
                                   (T, config.max_position))

    invalid = ids[(ids < 0) | (ids >= config.vocab_size)]
    if invalid.size:
        raise ModelError("Token id %d outside the model vocabulary (%d)" %
                         (invalid[0], config.vocab_size))

    if train_mode and rng is None:
        rng = np.random.default_rng(0)

    x = embedding(P["embeddings.token"], ids) + embedding(P["embeddings.position"], np.arange(T))
    x = layer_norm(x, P["embeddings.norm.gain"], P["embeddings.norm.bias"], config.layer_norm_eps)
    x = dropout(x, p, rng, train_mode)

    if "embeddings.projection.weight" in P:
        x = x @ P["embeddings.projection.weight"] + P["embeddings.projection.bias"]

    bias = np.where(mask[:, None, None, :] == 0, -np.inf, 0.0).astype(x.dtype)
    bias = np.broadcast_to(bias, (B, heads, 1, T)).reshape(B * heads, 1, T)
    scale = 1.0 / math.sqrt(config.hidden_size // heads)

    attentions = []

    for layer in range(config.num_layers):
        prefix = "layer.%d." % layer

        def dense(t, part):
            return t @ P[prefix + part + ".weight"] + P[prefix + part + ".bias"]

        q = _split_heads(dense(x, "attention.query"), B, T, heads)
        k = _split_heads(dense(x, "attention.key"), B, T, heads)
        v = _split_heads(dense(x, "attention.value"), B, T, heads)

        weights = softmax(matmul(q, k.transpose(0, 2, 1)) * scale + bias, axis=-1)
        if return_attention:
            attentions.append(weights.data.reshape(B, heads, T, T))

        context = _merge_heads(matmul(dropout(weights, p, rng, train_mode), v), B, T, heads)
        x = layer_norm(x + dropout(dense(context, "attention.output"), p, rng, train_mode),
                       P[prefix + "attention.norm.gain"], P[prefix + "attention.norm.bias"],
                       config.layer_norm_eps)

        h = dense(gelu(dense(x, "ffn.input")), "ffn.output")
        x = layer_norm(x + dropout(h, p, rng, train_mode),
                       P[prefix + "ffn.norm.gain"], P[prefix + "ffn.norm.bias"],
                       config.layer_norm_eps)

    if return_attention:
        return x, attentions
    return x


# == Heads ==

def mlm_logits(model, hidden):
    """
    Vocabulary logits for every position of `hidden` (..., hidden_size)
    """
    config = model.config
    if hidden.shape[-1] != config.hidden_size:
        raise ShapeError("mlm_logits: hidden %s does not end in hidden_size %d" %
                         (hidden.shape, config.hidden_size))

    h = hidden
    if "mlm.projection.weight" in model.params:
        h = h @ model["mlm.projection.weight"] + model["mlm.projection.bias"]

    return h @ model.mlm_decoder.transpose() + model["mlm.decoder.bias"]


def classify_logits(model, hidden, train_mode=False, rng=None):
    """
    (batch, num_labels) logits from the `[CLS]` state at position 0
    """
    if not model.has_classifier:
        raise MissingHeadError("Model has no classification head")

    if train_mode and rng is None:
        rng = np.random.default_rng(0)

    p = model.config.dropout_prob if train_mode else 0.0
    pooled = dropout(hidden[:, 0, :], p, rng, train_mode)
    return pooled @ model["classifier.weight"] + model["classifier.bias"]

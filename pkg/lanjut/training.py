#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
Training loops

- masked-language-model training, used both for generic pre-training
  from scratch and for domain post-training of an existing checkpoint
- classification fine-tuning on (text, label) examples
- training-fraction subsetting for the data-efficiency sweep

All randomness of an epoch (shuffle, masking, dropout) comes from one
generator seeded by `(seed, epoch)`. A run resumed from an epoch
checkpoint therefore replays exactly the streams of an uninterrupted run.
"""

# = Imports =

import io
import os
import time
import logging
import dataclasses
from decimal import Decimal
from dataclasses import dataclass

import numpy as np

from lanjut.errors import LanjutError
from lanjut.numerics import (OptimizerState, LabelRangeError, cross_entropy, backward,
                             adamw_step, zero_grad, no_grad)
from lanjut.tokenizer import EmptyCorpusError, TokenBatch, encode_batch
from lanjut.model import encode_forward, mlm_logits, classify_logits, attach_classifier
from lanjut.checkpoint import TrainingMetadata, save_checkpoint, read_checkpoint
from lanjut.corpus import round_half_up


# = Configuration =

IGNORE_INDEX = -100

MASK_SHARE = 0.8
RANDOM_SHARE = 0.1


# = Exceptions =

class TrainingError(LanjutError):
    pass


class InvalidTrainConfigError(TrainingError):
    pass


class VocabMismatchError(TrainingError):
    pass


class EmptySplitError(TrainingError):
    pass


# = Train Config =

@dataclass
class TrainConfig(object):
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 2e-5
    weight_decay: float = 0.01
    mlm_probability: float = 0.15
    seed: int = 0
    max_len: int = 128
    stratified: bool = True
    reset_optimizer: bool = False

    @classmethod
    def from_preset(cls, name, **overrides):
        if name not in PRESETS:
            raise InvalidTrainConfigError("Unknown training preset %r (known: %s)" %
                                          (name, ", ".join(sorted(PRESETS))))
        return dataclasses.replace(PRESETS[name], **overrides)

    def validate(self):
        if self.epochs < 1:
            raise InvalidTrainConfigError("epochs must be at least 1, got %d" % self.epochs)
        if self.batch_size < 1:
            raise InvalidTrainConfigError("batch_size must be at least 1, got %d" % self.batch_size)
        if self.learning_rate <= 0:
            raise InvalidTrainConfigError("learning_rate must be positive, got %r" % self.learning_rate)
        if self.weight_decay < 0:
            raise InvalidTrainConfigError("weight_decay must not be negative, got %r" % self.weight_decay)
        if not 0.0 <= self.mlm_probability <= 1.0:
            raise InvalidTrainConfigError("mlm_probability must be in [0, 1], got %r" %
                                          self.mlm_probability)
        if self.max_len < 3:
            raise InvalidTrainConfigError("max_len must be at least 3, got %d" % self.max_len)
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


PRESETS = {
    # Generic from-scratch stand-in: a tiny model needs a larger step size
    "pretrain": TrainConfig(epochs=20, batch_size=8, learning_rate=1e-3, weight_decay=0.01),
    "posttrain": TrainConfig(epochs=20, batch_size=8, learning_rate=2e-5, weight_decay=0.01),
    "sentiment": TrainConfig(epochs=2, batch_size=8, learning_rate=2e-5, weight_decay=0.01),
    "indofinsent": TrainConfig(epochs=2, batch_size=16, learning_rate=2e-5, weight_decay=0.01),
    "topic": TrainConfig(epochs=2, batch_size=8, learning_rate=2e-5, weight_decay=0.01),
}


# = Training Log =

class TrainingLog(object):
    """
    One tab-separated line per epoch: epoch, mean train loss, validation
    loss (`-` if none), wall seconds
    """

    log = logging.getLogger("TrainingLog")

    def __init__(self, path=None):
        self.path = path
        self.lines = []

    def record(self, epoch, loss, val_loss, seconds):
        line = "%d\t%.6f\t%s\t%.3f" % (epoch, loss, "-" if val_loss is None else "%.6f" % val_loss,
                                       seconds)
        self.lines.append(line)
        self.log.info("epoch %d: loss %.6f, val %s (%.1fs)", epoch, loss,
                      "-" if val_loss is None else "%.6f" % val_loss, seconds)

        if self.path:
            with io.open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")


# = Utility Functions =

def epoch_rng(seed, epoch):
    return np.random.default_rng([seed, epoch])


def _batches(count, batch_size, rng):
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


def _trimmed(batch, indices):
    """Rows `indices` of `batch`, cut to their longest sequence"""
    sub = batch.take(indices)
    width = int(sub.attention_mask.sum(axis=1).max())
    return TokenBatch(ids=sub.ids[:, :width], attention_mask=sub.attention_mask[:, :width])


# = Masking =

@dataclass
class MaskedBatch(object):
    input_ids: np.ndarray
    labels: np.ndarray
    attention_mask: np.ndarray

    def tokens(self):
        return TokenBatch(ids=self.input_ids, attention_mask=self.attention_mask)


def mask_tokens(batch, vocab, mlm_probability, rng):
    """
    Select content positions with probability `mlm_probability` and corrupt
    them: 80% `[MASK]`, 10% a random non-special token, 10% unchanged.

    `[PAD]`, `[CLS]`, `[SEP]` and `[MASK]` positions are never selected.
    `labels` holds the original id at selected positions and
    `IGNORE_INDEX` everywhere else.
    """
    ids = np.asarray(batch.ids, dtype=np.int64)
    shape = ids.shape

    eligible = (np.asarray(batch.attention_mask) == 1)
    for special in (vocab.pad_id, vocab.cls_id, vocab.sep_id, vocab.mask_id):
        eligible &= ids != special

    selected = (rng.random(shape) < mlm_probability) & eligible
    roll = rng.random(shape)
    replacements = rng.integers(len(vocab.special_ids), len(vocab), size=shape)

    input_ids = ids.copy()
    to_mask = selected & (roll < MASK_SHARE)
    to_random = selected & (roll >= MASK_SHARE) & (roll < MASK_SHARE + RANDOM_SHARE)
    input_ids[to_mask] = vocab.mask_id
    input_ids[to_random] = replacements[to_random]

    labels = np.where(selected, ids, IGNORE_INDEX)

    return MaskedBatch(input_ids=input_ids, labels=labels,
                       attention_mask=np.asarray(batch.attention_mask).copy())


def mlm_loss(model, masked, train_mode=True, rng=None):
    """
    Cross-entropy over the selected positions only; the MLM head only sees
    those rows. A batch without selections yields loss 0.
    """
    hidden = encode_forward(model, masked.tokens(), train_mode=train_mode, rng=rng)
    B, T, H = hidden.shape

    labels = masked.labels.reshape(-1)
    rows = np.flatnonzero(labels != IGNORE_INDEX)
    if rows.size == 0:
        rows = np.arange(1)

    logits = mlm_logits(model, hidden.reshape(B * T, H)[rows])
    return cross_entropy(logits, labels[rows], ignore_index=IGNORE_INDEX)


# = Operations =

# == OP: MLM Training ==

def posttrain_mlm(model, corpus, vocab, config, checkpoint_dir=None, optimizer=None, history=None,
                  log_path=None, stage="posttrain"):
    """
    Masked-language-model training of `model` on `corpus` (a sentence
    sequence) until `config.epochs` epochs are complete.

    `history` holds the per-epoch losses of epochs already trained (resume);
    training continues at epoch `len(history) + 1`. With `checkpoint_dir`
    every epoch is saved as `epoch-XXX.ckpt` including optimizer state.

    Returns `(model, history)`; the model is updated in place.
    """
    log = logging.getLogger("posttrain_mlm")
    config.validate()

    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpusError("Cannot train on an empty corpus")

    if len(vocab) != model.config.vocab_size:
        raise VocabMismatchError("Vocabulary has %d tokens, model expects %d" %
                                 (len(vocab), model.config.vocab_size))

    max_len = min(config.max_len, model.config.max_position)
    encoded = encode_batch(vocab, corpus, max_len)

    params = model.parameters(head="mlm")
    if optimizer is None:
        optimizer = OptimizerState.create(params, learning_rate=config.learning_rate,
                                          weight_decay=config.weight_decay)

    history = list(history or [])
    training_log = TrainingLog(log_path)

    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)

    log.info("%s: %d sentences, epochs %d..%d, %r", stage, len(corpus), len(history) + 1,
             config.epochs, model)

    for epoch in range(len(history) + 1, config.epochs + 1):
        started = time.time()
        rng = epoch_rng(config.seed, epoch)
        losses = []

        for indices in _batches(len(corpus), config.batch_size, rng):
            masked = mask_tokens(_trimmed(encoded, indices), vocab, config.mlm_probability, rng)

            zero_grad(params)
            loss = mlm_loss(model, masked, train_mode=True, rng=rng)
            backward(loss)
            adamw_step(params, optimizer)

            losses.append(loss.item())
            log.debug("epoch %d step %d: loss %.6f", epoch, optimizer.step_count, losses[-1])

        history.append(float(np.mean(losses)))
        training_log.record(epoch, history[-1], None, time.time() - started)

        if checkpoint_dir:
            metadata = TrainingMetadata(stage=stage, epoch=epoch, seed=config.seed,
                                        loss_history=history)
            save_checkpoint(model, os.path.join(checkpoint_dir, "epoch-%03d.ckpt" % epoch),
                            optimizer=optimizer, metadata=metadata)

    zero_grad(params)
    return model, history


def resume_posttrain(path, corpus, vocab, config, checkpoint_dir=None, log_path=None):
    """
    Continue the run saved in the epoch checkpoint `path` up to
    `config.epochs`. Optimizer state is kept unless `config.reset_optimizer`.
    """
    log = logging.getLogger("resume_posttrain")
    saved = read_checkpoint(path)

    if saved.metadata.seed != config.seed:
        log.warning("Checkpoint was trained with seed %d, continuing with seed %d",
                    saved.metadata.seed, config.seed)

    optimizer = None if config.reset_optimizer else saved.optimizer
    history = saved.metadata.loss_history[:saved.metadata.epoch]

    log.info("Resuming %s after epoch %d (optimizer %s)", path, saved.metadata.epoch,
             "reset" if optimizer is None else "kept")

    return posttrain_mlm(saved.model, corpus, vocab, config, checkpoint_dir=checkpoint_dir,
                         optimizer=optimizer, history=history, log_path=log_path,
                         stage=saved.metadata.stage or "posttrain")


# == OP: Subset ==

def subset_indices(labels, fraction, seed, stratified=True):
    """
    Sorted indices of a `fraction` subset of examples with `labels`.

    Stratified: each class keeps `round_half_up(fraction · count)` members,
    at least one. Uniform: `round_half_up(fraction · N)` members, at least
    one. Sampling is a seeded shuffle followed by a prefix take.
    """
    labels = np.asarray(labels, dtype=np.int64)

    if len(labels) == 0:
        raise EmptySplitError("Cannot subset an empty split")

    if not 0.0 < fraction <= 1.0:
        raise TrainingError("fraction must be in (0, 1], got %r" % fraction)

    if fraction == 1.0:
        return np.arange(len(labels))

    share = Decimal(str(fraction))
    rng = np.random.default_rng(seed)

    def take(members):
        count = max(1, round_half_up(share * len(members)))
        return members[rng.permutation(len(members))[:count]]

    if not stratified:
        return np.sort(take(np.arange(len(labels))))

    chosen = [take(np.flatnonzero(labels == label)) for label in np.unique(labels)]
    return np.sort(np.concatenate(chosen))


def subset_training_data(examples, fraction, seed, stratified=True):
    """
    `fraction` of the `(text, label)` `examples`, in their original order
    """
    examples = list(examples)
    indices = subset_indices([label for _, label in examples], fraction, seed, stratified)
    return [examples[i] for i in indices]


# == OP: Fine-Tune ==

def _classification_loss(model, batch, labels, train_mode, rng):
    hidden = encode_forward(model, batch, train_mode=train_mode, rng=rng)
    return cross_entropy(classify_logits(model, hidden, train_mode=train_mode, rng=rng), labels)


def classification_loss(model, examples, vocab, max_len, batch_size=32):
    """
    Mean classification loss over `examples` without dropout or graph
    """
    if not examples:
        return None

    encoded = encode_batch(vocab, [text for text, _ in examples], max_len)
    labels = np.array([label for _, label in examples], dtype=np.int64)
    total = 0.0

    with no_grad():
        for start in range(0, len(examples), batch_size):
            indices = np.arange(start, min(start + batch_size, len(examples)))
            loss = _classification_loss(model, _trimmed(encoded, indices), labels[indices],
                                        False, None)
            total += loss.item() * len(indices)

    return total / len(examples)


def finetune_classifier(model, train, val, vocab, config, num_labels, log_path=None):
    """
    Full fine-tuning of encoder and classification head for `config.epochs`
    epochs. A missing head, or one of another width, is replaced by a fresh
    one seeded with `config.seed`. The final-epoch model is returned; it is
    the same object as `model`.
    """
    log = logging.getLogger("finetune_classifier")
    config.validate()

    train = list(train)
    val = list(val or [])

    if not train:
        raise EmptySplitError("Cannot fine-tune on an empty training split")

    labels = np.array([label for _, label in train], dtype=np.int64)
    for label in (labels.tolist() + [label for _, label in val]):
        if not 0 <= label < num_labels:
            raise LabelRangeError("Label %d outside [0, %d)" % (label, num_labels))

    if not model.has_classifier or model.config.num_labels != num_labels:
        attach_classifier(model, num_labels, config.seed)

    max_len = min(config.max_len, model.config.max_position)
    encoded = encode_batch(vocab, [text for text, _ in train], max_len)

    params = model.parameters(head="classifier")
    optimizer = OptimizerState.create(params, learning_rate=config.learning_rate,
                                      weight_decay=config.weight_decay)
    training_log = TrainingLog(log_path)

    log.info("Fine-tuning %r on %d examples (%d val), %d epochs", model, len(train), len(val),
             config.epochs)

    for epoch in range(1, config.epochs + 1):
        started = time.time()
        rng = epoch_rng(config.seed, epoch)
        losses = []

        for indices in _batches(len(train), config.batch_size, rng):
            zero_grad(params)
            loss = _classification_loss(model, _trimmed(encoded, indices), labels[indices], True, rng)
            backward(loss)
            adamw_step(params, optimizer)
            losses.append(loss.item())

        val_loss = classification_loss(model, val, vocab, max_len)
        training_log.record(epoch, float(np.mean(losses)), val_loss, time.time() - started)

    zero_grad(params)
    return model


def predict(model, examples, vocab, max_len, batch_size=32):
    """
    Argmax class per example (ties go to the lowest class index)
    """
    texts = [text for text, _ in examples]
    if not texts:
        return np.zeros(0, dtype=np.int64)

    encoded = encode_batch(vocab, texts, min(max_len, model.config.max_position))
    predictions = []

    with no_grad():
        for start in range(0, len(texts), batch_size):
            indices = np.arange(start, min(start + batch_size, len(texts)))
            hidden = encode_forward(model, _trimmed(encoded, indices))
            logits = classify_logits(model, hidden)
            predictions.append(np.argmax(logits.data, axis=1))

    return np.concatenate(predictions).astype(np.int64)

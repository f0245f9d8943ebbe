#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
Checkpoint files

Layout (all integers little-endian):

    "DAPT" | u32 version
    u32 length | msgpack config record
    u32 length | msgpack metadata record (training metadata, optimizer scalars)
    u32 blob count
    blob*:  u16 name length | name (UTF-8) | u8 ndim | u32 extent* | float32 data
    u64 checksum of everything before it (first 8 bytes of SHA-256)

Optimizer moments are stored as blobs named `optimizer.m/<param>` and
`optimizer.v/<param>`.
"""

# = Imports =

import io
import os
import struct
import logging
from dataclasses import dataclass, field

import msgpack
import numpy as np

from lanjut.errors import LanjutError
from lanjut.fingerprint import checksum64
from lanjut.numerics import DTYPE, Tensor, OptimizerState
from lanjut.model import (ModelConfig, EncoderModel, InvalidConfigError, parameter_shapes,
                          attach_classifier)


# = Configuration =

MAGIC = b"DAPT"
FORMAT_VERSION = 1

MOMENT_PREFIXES = ("optimizer.m/", "optimizer.v/")


# = Exceptions =

class CheckpointError(LanjutError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class MissingBlobError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


# = Records =

@dataclass
class TrainingMetadata(object):
    """What a resumed run needs besides parameters and optimizer state"""
    stage: str = ""
    epoch: int = 0
    seed: int = 0
    loss_history: list = field(default_factory=list)
    val_history: list = field(default_factory=list)


@dataclass
class Checkpoint(object):
    model: EncoderModel
    optimizer: OptimizerState = None
    metadata: TrainingMetadata = field(default_factory=TrainingMetadata)


# = Utility Functions =

def _pack_record(record):
    data = msgpack.packb(record, use_bin_type=True)
    return struct.pack("<I", len(data)) + data


def _pack_blob(name, array):
    encoded = name.encode("utf-8")
    array = np.ascontiguousarray(array, dtype="<f4")
    return b"".join((struct.pack("<H", len(encoded)), encoded,
                     struct.pack("<B", array.ndim),
                     struct.pack("<%dI" % array.ndim, *array.shape),
                     array.tobytes()))


class BodyReader(object):
    """Sequential reader over the checksummed body"""

    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, n):
        if self.offset + n > len(self.data):
            raise CorruptCheckpointError("Unexpected end of checkpoint at byte %d" % self.offset)
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def record(self):
        length, = self.unpack("<I")
        return msgpack.unpackb(self.take(length), raw=False)

    def blob(self):
        name_length, = self.unpack("<H")
        name = self.take(name_length).decode("utf-8")
        ndim, = self.unpack("<B")
        shape = self.unpack("<%dI" % ndim)
        count = int(np.prod(shape, dtype=np.int64))
        array = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape)
        return name, array.astype(DTYPE)


# = Operations =

# == Save ==

def save_checkpoint(model, path, optimizer=None, metadata=None):
    """
    Write `model` (and optionally optimizer state and training metadata)
    to `path`. The file is written next to `path` and renamed into place.
    """
    log = logging.getLogger("save_checkpoint")
    metadata = metadata or TrainingMetadata()

    meta = {
        "training": {
            "stage": metadata.stage,
            "epoch": metadata.epoch,
            "seed": metadata.seed,
            "loss_history": [float(x) for x in metadata.loss_history],
            "val_history": [float(x) for x in metadata.val_history],
        },
        "optimizer": None,
    }

    blobs = [_pack_blob(name, p.data) for name, p in model.params.items()]

    if optimizer is not None:
        meta["optimizer"] = {
            "learning_rate": optimizer.learning_rate,
            "weight_decay": optimizer.weight_decay,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "epsilon": optimizer.epsilon,
            "step_count": optimizer.step_count,
        }
        for prefix, moments in zip(MOMENT_PREFIXES, (optimizer.first_moment, optimizer.second_moment)):
            blobs.extend(_pack_blob(prefix + name, m) for name, m in moments.items())

    body = b"".join([MAGIC, struct.pack("<I", FORMAT_VERSION),
                     _pack_record(model.config.to_record()),
                     _pack_record(meta),
                     struct.pack("<I", len(blobs))] + blobs)

    tmp_path = path + ".tmp"
    try:
        with io.open(tmp_path, "wb") as f:
            f.write(body)
            f.write(struct.pack("<Q", checksum64(body)))
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise

    log.debug("Saved %s: %d blobs, %d bytes", path, len(blobs), len(body) + 8)


# == Load ==

def read_checkpoint(path, expect_config=None):
    """
    Read `path` completely and verify it before building anything.

    Raises `CorruptCheckpointError` on checksum or framing errors,
    `VersionMismatchError`, `MissingBlobError`, and `ConfigMismatchError`
    if `expect_config` has a different architecture.
    """
    log = logging.getLogger("read_checkpoint")

    with io.open(path, "rb") as f:
        data = f.read()

    if len(data) < len(MAGIC) + 4 + 8:
        raise CorruptCheckpointError("%s: file too short (%d bytes)" % (path, len(data)))

    body = data[:-8]
    stored, = struct.unpack("<Q", data[-8:])
    if checksum64(body) != stored:
        raise CorruptCheckpointError("%s: checksum mismatch" % path)

    reader = BodyReader(body)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CorruptCheckpointError("%s: not a checkpoint (bad magic)" % path)

    version, = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionMismatchError("%s: format version %d, expected %d" %
                                   (path, version, FORMAT_VERSION))

    try:
        config = ModelConfig.from_record(reader.record())
        meta = reader.record()
        count, = reader.unpack("<I")
        blobs = dict(reader.blob() for _ in range(count))
    except (ValueError, TypeError, InvalidConfigError, msgpack.UnpackException) as e:
        raise CorruptCheckpointError("%s: %s" % (path, e))

    if expect_config is not None and expect_config.architecture() != config.architecture():
        raise ConfigMismatchError("%s: checkpoint architecture %s does not match expected %s" %
                                  (path, config.architecture(), expect_config.architecture()))

    params = []
    for name, shape in parameter_shapes(config).items():
        if name not in blobs:
            raise MissingBlobError("%s: parameter %r missing" % (path, name))
        if blobs[name].shape != shape:
            raise CorruptCheckpointError("%s: parameter %r has shape %s, expected %s" %
                                         (path, name, blobs[name].shape, shape))
        params.append((name, Tensor(blobs[name], requires_grad=True, name=name)))

    optimizer = None
    if meta.get("optimizer"):
        optimizer = OptimizerState(**meta["optimizer"])
        first, second = MOMENT_PREFIXES
        for name, array in blobs.items():
            if name.startswith(first):
                optimizer.first_moment[name[len(first):]] = array
            elif name.startswith(second):
                optimizer.second_moment[name[len(second):]] = array

    training = meta.get("training") or {}
    metadata = TrainingMetadata(stage=training.get("stage", ""),
                                epoch=training.get("epoch", 0),
                                seed=training.get("seed", 0),
                                loss_history=list(training.get("loss_history", [])),
                                val_history=list(training.get("val_history", [])))

    log.debug("Read %s: %d parameters, epoch %d", path, len(params), metadata.epoch)
    return Checkpoint(model=EncoderModel(config, params), optimizer=optimizer, metadata=metadata)


def load_checkpoint(path, num_labels=None, seed=0, expect_config=None):
    """
    Load the model stored at `path`.

    With `num_labels`, the model leaves with a classification head of that
    width: a stored head of the same width is kept, otherwise a fresh head
    is initialized from `seed`. This is the fine-tuning entry point.
    """
    model = read_checkpoint(path, expect_config=expect_config).model

    if num_labels is not None and (not model.has_classifier or model.config.num_labels != num_labels):
        attach_classifier(model, num_labels, seed)

    return model

#!/usr/bin/env python
# -*- coding: utf-8 -*-
# ✓

"""
Dump header, records and blob table of lanjut checkpoint files
without building a model
"""

import sys
import struct

from lanjut.checkpoint import MAGIC, BodyReader
from lanjut.fingerprint import checksum64


def dump(path):
    with open(path, "rb") as f:
        data = f.read()

    body, stored = data[:-8], struct.unpack("<Q", data[-8:])[0]
    reader = BodyReader(body)

    print("%s: %d bytes, checksum %016x (%s)" % (path, len(data), stored,
          "ok" if checksum64(body) == stored else "MISMATCH"))
    print("magic %r, version %d" % (reader.take(len(MAGIC)), reader.unpack("<I")[0]))

    for title in ("config", "metadata"):
        print("%s: %s" % (title, reader.record()))

    count, = reader.unpack("<I")
    print("%d blobs:" % count)
    for _ in range(count):
        name, array = reader.blob()
        print("  %-48s %-16s %d" % (name, "x".join(map(str, array.shape)), array.size))


for path in sys.argv[1:]:
    dump(path)

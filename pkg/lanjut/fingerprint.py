#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
Fingerprinting functions. Used by [[checkpoint.py]] for the trailing
checksum and by [[cli.py]] to identify run configurations.
"""

import struct
import hashlib


# === Fingerprint ===

def fingerprint(data):
    """
    Return tuple `(algorithm name, fingerprint)` of `data`. Text is
    fingerprinted as UTF-8.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")

    return "SHA-256", hashlib.sha256(data).hexdigest()


# === Checksum ===

def checksum64(data):
    """
    First 8 bytes of the SHA-256 digest of `data` as an unsigned
    little-endian integer
    """
    return struct.unpack("<Q", hashlib.sha256(data).digest()[:8])[0]

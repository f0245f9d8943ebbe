#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
Root exception of the package

Every module declares its own exceptions below `LanjutError`. The command
line maps `LanjutError` to the data/config exit code, everything else is
an internal error.
"""


class LanjutError(Exception):
    pass

#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
Lanjut: domain-adaptive post-training of BERT-style encoders

See [[lanjut/cli.py]] for the subcommands.
"""

from lanjut.cli import main

if __name__ == "__main__":
    main()

#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
WordPiece vocabulary training, encoding and decoding

Training starts from the character alphabet of the corpus (word-initial
characters bare, the others with the `##` continuation prefix) and merges
the adjacent pair with the best likelihood score
`freq(ab) / (freq(a) · freq(b))` until the vocabulary is full.
Encoding is greedy longest-match-first per whitespace-separated word.
"""

# = Imports =

import io
import logging
from fractions import Fraction
from collections import Counter
from dataclasses import dataclass

import numpy as np

from lanjut.errors import LanjutError


# = Configuration =

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)

CONTINUATION_PREFIX = "##"

DEFAULT_VOCAB_SIZE = 2000
DEFAULT_MIN_FREQUENCY = 2


# = Exceptions =

class TokenizerError(LanjutError):
    pass


class EmptyCorpusError(TokenizerError):
    pass


class VocabSizeError(TokenizerError):
    pass


class UnknownIdError(TokenizerError):
    pass


class VocabularyFormatError(TokenizerError):
    pass


# = Vocabulary Class =

class Vocabulary(object):
    """
    Ordered token inventory. Ids are line numbers of the vocabulary file;
    the five special tokens occupy ids 0-4 with `[PAD]` = 0.
    """

    continuation_prefix = CONTINUATION_PREFIX

    pad_id, unk_id, cls_id, sep_id, mask_id = range(len(SPECIAL_TOKENS))

    def __init__(self, tokens, lowercase=True, merges=()):
        tokens = list(tokens)

        if tuple(tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise VocabularyFormatError("Vocabulary must start with %s, got %s" %
                                        (", ".join(SPECIAL_TOKENS), tokens[:len(SPECIAL_TOKENS)]))

        self.tokens = tokens
        self.token_to_id = {token: i for i, token in enumerate(tokens)}

        if len(self.token_to_id) != len(tokens):
            duplicates = [t for t, n in Counter(tokens).items() if n > 1]
            raise VocabularyFormatError("Duplicate tokens: %r" % duplicates[:5])

        self.lowercase = lowercase
        self.merges = list(merges)

    @property
    def special(self):
        return {token: self.token_to_id[token] for token in SPECIAL_TOKENS}

    @property
    def special_ids(self):
        return frozenset(range(len(SPECIAL_TOKENS)))

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.token_to_id

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self):
        return "Vocabulary(%d tokens, lowercase=%s)" % (len(self), self.lowercase)


# = Token Sequences =

@dataclass(frozen=True)
class TokenSequence(object):
    """
    `[CLS] content [SEP] [PAD]...`, always exactly `max_len` long
    """
    ids: tuple
    attention_mask: tuple
    length: int


@dataclass
class TokenBatch(object):
    """
    Stacked token sequences: `ids` and `attention_mask` are (batch, max_len)
    """
    ids: np.ndarray
    attention_mask: np.ndarray

    @classmethod
    def from_sequences(cls, sequences):
        sequences = list(sequences)
        return cls(ids=np.array([s.ids for s in sequences], dtype=np.int64),
                   attention_mask=np.array([s.attention_mask for s in sequences], dtype=np.int64))

    def take(self, indices):
        return TokenBatch(ids=self.ids[indices], attention_mask=self.attention_mask[indices])

    def __len__(self):
        return self.ids.shape[0]

    @property
    def shape(self):
        return self.ids.shape


# = Utility Functions =

def split_words(text, lowercase=True):
    if lowercase:
        text = text.lower()
    return text.split()


def _initial_pieces(word):
    return [word[0]] + [CONTINUATION_PREFIX + c for c in word[1:]]


def _join(a, b):
    return a + b[len(CONTINUATION_PREFIX):]


def _apply_merge(pieces, a, b, merged):
    out = []
    i = 0
    while i < len(pieces):
        if i + 1 < len(pieces) and pieces[i] == a and pieces[i + 1] == b:
            out.append(merged)
            i += 2
        else:
            out.append(pieces[i])
            i += 1
    return out


# = Operations =

# == Train ==

def train_wordpiece(corpus, vocab_size=DEFAULT_VOCAB_SIZE, min_frequency=DEFAULT_MIN_FREQUENCY,
                    lowercase=True):
    """
    Train a WordPiece vocabulary on `corpus` (a sequence of sentences).

    Stops when `vocab_size` tokens exist or no pair occurs more than
    `min_frequency` times. Score ties go to the lexicographically
    smallest pair, so the result only depends on the corpus.
    """
    log = logging.getLogger("train_wordpiece")

    word_counts = Counter()
    for sentence in corpus:
        word_counts.update(split_words(sentence, lowercase))

    if not word_counts:
        raise EmptyCorpusError("Cannot train a vocabulary on an empty corpus")

    alphabet = set()
    for word in word_counts:
        alphabet.update(word)
        alphabet.update(CONTINUATION_PREFIX + c for c in word[1:])

    if vocab_size < len(alphabet) + len(SPECIAL_TOKENS):
        raise VocabSizeError("vocab_size %d is smaller than alphabet (%d) + %d special tokens" %
                             (vocab_size, len(alphabet), len(SPECIAL_TOKENS)))

    tokens = list(SPECIAL_TOKENS) + sorted(alphabet)
    known = set(tokens)
    splits = {word: _initial_pieces(word) for word in word_counts}
    merges = []

    log.debug("Alphabet: %d units over %d word types", len(alphabet), len(word_counts))

    while len(tokens) < vocab_size:
        unit_counts = Counter()
        pair_counts = Counter()

        for word, n in word_counts.items():
            pieces = splits[word]
            for piece in pieces:
                unit_counts[piece] += n
            for pair in zip(pieces, pieces[1:]):
                pair_counts[pair] += n

        candidates = [(pair, n) for pair, n in pair_counts.items() if n > min_frequency]
        if not candidates:
            log.debug("No pair occurs more than min_frequency=%d times", min_frequency)
            break

        (a, b), _ = min(candidates,
                        key=lambda c: (-Fraction(c[1], unit_counts[c[0][0]] * unit_counts[c[0][1]]),
                                       c[0]))
        merged = _join(a, b)
        merges.append((a, b))

        for word, pieces in splits.items():
            if a in pieces:
                splits[word] = _apply_merge(pieces, a, b, merged)

        if merged not in known:
            known.add(merged)
            tokens.append(merged)

    log.info("Trained vocabulary: %d tokens, %d merges", len(tokens), len(merges))
    return Vocabulary(tokens, lowercase=lowercase, merges=merges)


# == Encode ==

def _wordpiece(vocab, word):
    """Greedy longest-match-first; unmatched characters become `[UNK]`"""
    ids = []
    start = 0

    while start < len(word):
        end = len(word)
        match = None

        while end > start:
            piece = word[start:end]
            if start > 0:
                piece = CONTINUATION_PREFIX + piece
            match = vocab.token_to_id.get(piece)
            if match is not None:
                break
            end -= 1

        if match is None:
            ids.append(vocab.unk_id)
            start += 1
        else:
            ids.append(match)
            start = end

    return ids


def encode(vocab, text, max_len):
    """
    Encode `text` as `[CLS] pieces [SEP]` padded to `max_len`. Content
    beyond `max_len - 2` pieces is truncated.
    """
    if max_len < 3:
        raise TokenizerError("max_len must be at least 3, got %d" % max_len)

    content = []
    for word in split_words(text, vocab.lowercase):
        content.extend(_wordpiece(vocab, word))

    ids = [vocab.cls_id] + content[:max_len - 2] + [vocab.sep_id]
    length = len(ids)
    padding = max_len - length

    return TokenSequence(ids=tuple(ids) + (vocab.pad_id,) * padding,
                         attention_mask=(1,) * length + (0,) * padding,
                         length=length)


def encode_batch(vocab, texts, max_len):
    return TokenBatch.from_sequences(encode(vocab, text, max_len) for text in texts)


# == Decode ==

def decode(vocab, ids):
    """
    Drop special tokens and glue continuation pieces onto the previous word
    """
    words = []

    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise UnknownIdError("Unknown token id %d (vocabulary has %d tokens)" % (i, len(vocab)))

        if i in vocab.special_ids:
            continue

        token = vocab.tokens[i]
        if token.startswith(CONTINUATION_PREFIX):
            if words:
                words[-1] += token[len(CONTINUATION_PREFIX):]
            else:
                words.append(token[len(CONTINUATION_PREFIX):])
        else:
            words.append(token)

    return " ".join(words)


# == Vocabulary Files ==

# UTF-8, one token per line, line number = id

def save_vocab(vocab, path):
    with io.open(path, "w", encoding="utf-8", newline="\n") as f:
        for token in vocab.tokens:
            f.write(token + "\n")


def load_vocab(path, lowercase=True):
    with io.open(path, "r", encoding="utf-8", newline="\n") as f:
        tokens = [line.rstrip("\n") for line in f]

    if not tokens:
        raise VocabularyFormatError("Empty vocabulary file %s" % path)

    return Vocabulary(tokens, lowercase=lowercase)

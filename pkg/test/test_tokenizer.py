#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
WordPiece Tokenizer Unit Tests


Functions under test:

- train_wordpiece
- encode / encode_batch / decode
- save_vocab / load_vocab

"""

import io
import os

from nose.tools import eq_ as eq, assert_raises

from lanjut.tokenizer import (Vocabulary, SPECIAL_TOKENS, TokenizerError, EmptyCorpusError,
                              VocabSizeError, UnknownIdError, VocabularyFormatError,
                              train_wordpiece, encode, encode_batch, decode, save_vocab, load_vocab)

from util import temp_dir, remove_dir, random_id, fixture


# = Setup / Tear Down =

# Corpus where the most frequent pairs are not the best scored ones:
# (c, ##d) wins first on score, then (a, ##b) beats (e, ##b) on the tie.

CORPUS = ["ab ab ab eb eb eb cd", "AB ab ab eb eb eb cd cd"]

work_dir = None
vocab = None


def setup_module():
    global work_dir, vocab
    work_dir = temp_dir()
    vocab = train_wordpiece(CORPUS, vocab_size=14, min_frequency=2)


def teardown_module():
    remove_dir(work_dir)


# = Tests =

# == Training ==

def test_merge_trace():
    """
    Test: merges follow count(ab) / (count(a) · count(b)) with lexicographic tie-break
    """
    eq(vocab.merges, [("c", "##d"), ("a", "##b")])
    eq(vocab.tokens, list(SPECIAL_TOKENS) + ["##b", "##d", "a", "b", "c", "d", "e", "cd", "ab"])


def test_special_tokens_first():
    """
    Test: [PAD] [UNK] [CLS] [SEP] [MASK] have ids 0-4
    """
    eq(vocab.special, {"[PAD]": 0, "[UNK]": 1, "[CLS]": 2, "[SEP]": 3, "[MASK]": 4})
    eq((vocab.pad_id, vocab.unk_id, vocab.cls_id, vocab.sep_id, vocab.mask_id), (0, 1, 2, 3, 4))


def test_min_frequency_stops_training():
    """
    Test: training stops before vocab_size once no pair occurs more than min_frequency times
    """
    v = train_wordpiece(["ab ab", "xy"], vocab_size=100, min_frequency=1)
    eq(v.merges, [("a", "##b")])
    eq(len(v), len(SPECIAL_TOKENS) + 6 + 1)


def test_min_frequency_is_exclusive():
    """
    Test: a pair occurring exactly min_frequency times is not merged
    """
    v = train_wordpiece(["ab ab", "xy"], vocab_size=100, min_frequency=2)
    eq(v.merges, [])
    eq(len(v), len(SPECIAL_TOKENS) + 6)


def test_frequent_word_single_token():
    """
    Test: a corpus of one repeated word learns that word as one token
    """
    v = train_wordpiece(["bank " * 10], vocab_size=20)
    eq(v.merges, [("##a", "##n"), ("##an", "##k"), ("b", "##ank")])
    assert "bank" in v.tokens
    eq(encode(v, "bank", 4).ids, (2, v.token_to_id["bank"], 3, 0))


def test_disjoint_alphabets():
    """
    Test: corpora over disjoint alphabets share only the special tokens
    """
    a = train_wordpiece(["abc abc ab cab", "bca abc"], vocab_size=30)
    x = train_wordpiece(["xyz xyz xy zxy", "yzx xyz"], vocab_size=30)
    eq(set(a.tokens) & set(x.tokens), set(SPECIAL_TOKENS))


def test_training_deterministic():
    """
    Test: the same corpus gives the same vocabulary
    """
    eq(train_wordpiece(CORPUS, vocab_size=14), vocab)
    eq(train_wordpiece(list(reversed(CORPUS)), vocab_size=14), vocab)


def test_empty_corpus():
    """
    Test: a corpus without words raises EmptyCorpusError
    """
    assert_raises(EmptyCorpusError, train_wordpiece, [])
    assert_raises(EmptyCorpusError, train_wordpiece, ["   ", "\t"])


def test_vocab_size_too_small():
    """
    Test: vocab_size below alphabet + specials raises VocabSizeError
    """
    assert_raises(VocabSizeError, train_wordpiece, CORPUS, vocab_size=5)


# == Encode / Decode ==

def test_encode_greedy_longest_match():
    """
    Test: [CLS] pieces [SEP] [PAD]..., longest match first, unknown characters as [UNK]
    """
    seq = encode(vocab, "ab eb cd x", 8)
    eq(seq.ids, (2, 13, 11, 5, 12, 1, 3, 0))
    eq(seq.attention_mask, (1, 1, 1, 1, 1, 1, 1, 0))
    eq(seq.length, 7)


def test_longest_match_over_corpus():
    """
    Test: every piece of every corpus word is the longest vocabulary match at its position
    """
    with io.open(fixture("overfit_corpus.txt"), "r", encoding="utf-8") as f:
        sentences = [line.strip() for line in f if line.strip()]
    v = train_wordpiece(sentences, vocab_size=300)

    for word in sorted({w for s in sentences for w in s.lower().split()}):
        seq = encode(v, word, 64)
        pieces = [v.tokens[i] for i in seq.ids[1:seq.length - 1]]
        eq("".join(p[2:] if p.startswith("##") else p for p in pieces), word)

        start = 0
        for piece in pieces:
            prefix = "##" if start > 0 else ""
            longest = max(len(t) - len(prefix) for t in v.tokens
                          if t not in SPECIAL_TOKENS and t.startswith(prefix) and
                          (start > 0 or not t.startswith("##")) and
                          word.startswith(t[len(prefix):], start))
            eq(len(piece) - len(prefix), longest, (word, pieces))
            start += longest


def test_vocabulary_words_encode_whole():
    """
    Test: every word-initial vocabulary token encodes to itself
    """
    for token in vocab.tokens:
        if token in SPECIAL_TOKENS or token.startswith("##"):
            continue
        eq(encode(vocab, token, 3).ids, (2, vocab.token_to_id[token], 3))


def test_encode_unknown_suffix():
    """
    Test: an unmatched continuation becomes a single [UNK]
    """
    eq(encode(vocab, "ax", 5).ids, (2, 7, 1, 3, 0))


def test_encode_lowercases():
    """
    Test: an uncased vocabulary lowercases its input
    """
    eq(encode(vocab, "AB Cd", 6).ids, encode(vocab, "ab cd", 6).ids)


def test_encode_truncates():
    """
    Test: content beyond max_len - 2 pieces is cut, [SEP] stays last
    """
    seq = encode(vocab, "ab eb cd", 4)
    eq(seq.ids, (2, 13, 11, 3))
    eq(seq.length, 4)


def test_encode_empty_text():
    """
    Test: empty text encodes as [CLS] [SEP]
    """
    eq(encode(vocab, "", 4).ids, (2, 3, 0, 0))


def test_encode_max_len_too_small():
    """
    Test: max_len below 3 raises TokenizerError
    """
    assert_raises(TokenizerError, encode, vocab, "ab", 2)


def test_encode_batch_shape():
    """
    Test: encode_batch stacks sequences of equal length
    """
    batch = encode_batch(vocab, ["ab", "ab eb cd", ""], 6)
    eq(batch.shape, (3, 6))
    eq(batch.attention_mask.sum(axis=1).tolist(), [3, 6, 2])


def test_decode():
    """
    Test: decode drops special tokens and joins continuation pieces
    """
    eq(decode(vocab, encode(vocab, "ab eb cd x", 8).ids), "ab eb cd")
    eq(decode(vocab, [5, 7, 5]), "b ab")


def test_decode_continuation():
    """
    Test: a continuation piece joins the word before it
    """
    v = Vocabulary(list(SPECIAL_TOKENS) + ["fin", "##ance"])
    eq(decode(v, [v.token_to_id["fin"], v.token_to_id["##ance"]]), "finance")
    eq(decode(v, [2, 5, 6, 3, 0]), "finance")


def test_decode_unknown_id():
    """
    Test: ids outside the vocabulary raise UnknownIdError
    """
    assert_raises(UnknownIdError, decode, vocab, [2, 99])
    assert_raises(UnknownIdError, decode, vocab, [-1])


# == Vocabulary Files ==

def test_save_load_vocab():
    """
    Test: a saved vocabulary loads back with the same ids
    """
    path = os.path.join(work_dir, random_id() + ".txt")
    save_vocab(vocab, path)

    with io.open(path, "r", encoding="utf-8") as f:
        eq(f.readline(), "[PAD]\n")

    loaded = load_vocab(path)
    eq(loaded, vocab)
    eq(encode(loaded, "ab eb cd x", 8).ids, encode(vocab, "ab eb cd x", 8).ids)


def test_load_vocab_errors():
    """
    Test: empty files and files without the special tokens are rejected
    """
    empty = os.path.join(work_dir, random_id() + ".txt")
    io.open(empty, "w").close()
    assert_raises(VocabularyFormatError, load_vocab, empty)

    wrong = os.path.join(work_dir, random_id() + ".txt")
    with io.open(wrong, "w", encoding="utf-8") as f:
        f.write("a\nb\n")
    assert_raises(VocabularyFormatError, load_vocab, wrong)


def test_duplicate_tokens():
    """
    Test: duplicate tokens raise VocabularyFormatError
    """
    assert_raises(VocabularyFormatError, Vocabulary, list(SPECIAL_TOKENS) + ["a", "a"])

#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
Synthetic domain-transfer experiment

A desk-scale stand-in for the generic-vs-post-trained comparison:

- a generic corpus G over pseudo-words from one alphabet
- a domain corpus D over pseudo-words from a disjoint alphabet, whose
  topical words fall into three clusters
- a 3-class dataset over D's vocabulary, labeled by cluster

Every sentence (of G and D alike) draws its topical words from a single
cluster, so MLM training learns which words belong together. A model that
has seen D therefore generalizes from a few labeled examples to cluster
words it was never fine-tuned on.
"""

# = Imports =

import os
import logging
from dataclasses import dataclass, field
from collections import OrderedDict

import numpy as np

from lanjut.tokenizer import Vocabulary, SPECIAL_TOKENS, CONTINUATION_PREFIX
from lanjut.model import ModelConfig, init_model
from lanjut.checkpoint import save_checkpoint
from lanjut.training import TrainConfig, posttrain_mlm
from lanjut.corpus import LabeledDataset, make_splits
from lanjut.evaluation import SweepConfig, run_sweep


# = Configuration =

GENERIC_ALPHABET = "abcdefghijklm"
DOMAIN_ALPHABET = "nopqrstuvwxyz"

NUM_CLASSES = 3

# Topical words per domain sentence, upper bound exclusive
DOMAIN_TOPICAL_COUNT = (4, 8)

MODEL_DIMS = dict(num_layers=1, num_heads=2, emb_size=32, hidden_size=32, ffn_size=64,
                  max_position=16, dropout_prob=0.1)


# = Task =

@dataclass
class TransferTask(object):
    generic: list
    domain: list
    dataset: LabeledDataset
    vocab: Vocabulary
    clusters: list = field(default_factory=list)


def _pseudo_words(rng, alphabet, count, taken):
    words = []
    while len(words) < count:
        length = int(rng.integers(3, 7))
        word = "".join(rng.choice(list(alphabet), size=length))
        if word not in taken:
            taken.add(word)
            words.append(word)
    return words


def _sentence(rng, topical, fillers, length, count=(3, 6)):
    """`length` words: `count` (low, high) topical ones, the rest fillers, shuffled"""
    n_topical = min(length, int(rng.integers(*count)))
    words = list(rng.choice(topical, size=n_topical)) + list(rng.choice(fillers, size=length - n_topical))
    rng.shuffle(words)
    return " ".join(words)


def make_transfer_task(seed=0, generic_sentences=400, domain_sentences=1500, examples=300,
                       cluster_size=40, filler_size=12, generic_clusters=4):
    """
    Build G, D, the labeled dataset (split 60/20/20) and a word-level
    vocabulary covering both alphabets. Labeled examples carry one or two
    cluster words among fillers.

    Clusters are large next to the labeled data: a 30% training subset
    leaves about half of every cluster unseen, which only a model that
    learned the clusters from D can classify.
    """
    rng = np.random.default_rng(seed)
    taken = set()

    generic_topics = [_pseudo_words(rng, GENERIC_ALPHABET, cluster_size, taken)
                      for _ in range(generic_clusters)]
    generic_fillers = _pseudo_words(rng, GENERIC_ALPHABET, filler_size, taken)

    clusters = [_pseudo_words(rng, DOMAIN_ALPHABET, cluster_size, taken) for _ in range(NUM_CLASSES)]
    domain_fillers = _pseudo_words(rng, DOMAIN_ALPHABET, filler_size, taken)

    generic = [_sentence(rng, generic_topics[int(rng.integers(generic_clusters))], generic_fillers,
                         int(rng.integers(6, 11)))
               for _ in range(generic_sentences)]
    domain = [_sentence(rng, clusters[int(rng.integers(NUM_CLASSES))], domain_fillers,
                        int(rng.integers(6, 11)), count=DOMAIN_TOPICAL_COUNT)
              for _ in range(domain_sentences)]

    labeled = []
    for i in range(examples):
        label = i % NUM_CLASSES
        cues = list(rng.choice(clusters[label], size=int(rng.integers(1, 3))))
        words = cues + list(rng.choice(domain_fillers, size=int(rng.integers(4, 7))))
        rng.shuffle(words)
        labeled.append((" ".join(words), label))

    dataset = make_splits(LabeledDataset(labeled, ("cluster-0", "cluster-1", "cluster-2")),
                          (0.6, 0.2, 0.2), seed, stratified=True)

    alphabet = sorted(set(GENERIC_ALPHABET + DOMAIN_ALPHABET))
    tokens = (list(SPECIAL_TOKENS) + alphabet + [CONTINUATION_PREFIX + c for c in alphabet] +
              sorted(taken))

    return TransferTask(generic=generic, domain=domain, dataset=dataset,
                        vocab=Vocabulary(tokens), clusters=clusters)


# = Experiment =

def run_transfer_experiment(work_dir, fractions=(1.0, 0.3, 0.1), seeds=tuple(range(10)), task_seed=0,
                            pretrain_epochs=20, posttrain_epochs=30, finetune_epochs=40, workers=1):
    """
    Pre-train a small encoder on G (baseline), continue it on D
    (post-trained), then sweep both over `fractions` × `seeds`. Returns the
    `SweepResult` rows; checkpoints and results live in `work_dir`.
    """
    log = logging.getLogger("run_transfer_experiment")
    os.makedirs(work_dir, exist_ok=True)

    task = make_transfer_task(task_seed)
    config = ModelConfig(vocab_size=len(task.vocab), **MODEL_DIMS)
    mlm = TrainConfig(batch_size=16, learning_rate=1e-3, weight_decay=0.01, mlm_probability=0.15,
                      seed=task_seed, max_len=16)

    baseline = init_model(config, seed=task_seed)
    posttrain_mlm(baseline, task.generic, task.vocab, mlm.replace(epochs=pretrain_epochs),
                  stage="pretrain")

    posttrained = baseline.copy()
    posttrain_mlm(posttrained, task.domain, task.vocab, mlm.replace(epochs=posttrain_epochs))

    variants = OrderedDict()
    for name, model in (("baseline", baseline), ("posttrained", posttrained)):
        variants[name] = os.path.join(work_dir, name + ".ckpt")
        save_checkpoint(model, variants[name])

    sweep = SweepConfig(task="synthetic", architecture="synthetic", variants=variants,
                        baseline="baseline", fractions=tuple(fractions), seeds=tuple(seeds),
                        finetune=TrainConfig(epochs=finetune_epochs, batch_size=8, learning_rate=2e-3,
                                             weight_decay=0.01, max_len=16),
                        num_labels=NUM_CLASSES,
                        results_path=os.path.join(work_dir, "results.csv"), workers=workers)

    log.info("Sweeping %d fractions x %d seeds", len(fractions), len(seeds))
    return run_sweep(sweep, dataset=task.dataset, vocab=task.vocab)

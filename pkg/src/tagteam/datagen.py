"""Synthetic corpora for smoke tests and desk-scale experiments.

Two generators: a single-type corpus whose tags are a deterministic
function of the token (trivially learnable, for overfitting checks),
and a two-dataset pair sharing a pool of ambiguous tokens that are
entities of type A in one dataset and of type B in the other. In the
pair, the type-B context words that surround ambiguous tokens in
dataset A's test split never occur in dataset A's training split but
are frequent in dataset B's, so a solo model must guess while a
collaborating model can rely on its partner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import DatasetBundle, LabeledSentence


def _words(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    letters = "abcdefghijklmnopqrstuvwxyz"
    out: list[str] = []
    while len(out) < count:
        n = int(rng.integers(3, 9))
        word = "".join(letters[int(rng.integers(0, 26))] for _ in range(n))
        if word not in taken:
            taken.add(word)
            out.append(word)
    return out


def memorization_corpus(
    seed: int, n_train: int = 50, n_dev: int = 10, vocab_size: int = 40, name: str = "toy"
) -> DatasetBundle:
    """Sentences where token identity fixes the tag: context tokens are
    O, entity unigrams are S, entity bigrams are B E."""
    rng = np.random.default_rng(seed)
    taken: set[str] = set()
    n_pairs = 3
    n_single = max(4, vocab_size // 4)
    n_context = vocab_size - n_single - 2 * n_pairs
    context = _words(rng, n_context, taken)
    singles = _words(rng, n_single, taken)
    pair_words = _words(rng, 2 * n_pairs, taken)
    pairs = [(pair_words[2 * i], pair_words[2 * i + 1]) for i in range(n_pairs)]

    def sentence(single_pool, pair_pool) -> LabeledSentence:
        tokens, tags = [], []
        for _ in range(int(rng.integers(1, 3))):
            tokens.append(context[int(rng.integers(0, n_context))])
            tags.append("O")
        kind = rng.random()
        if kind < 0.55:
            tokens.append(single_pool[int(rng.integers(0, len(single_pool)))])
            tags.append("S")
        elif kind < 0.8:
            first, second = pair_pool[int(rng.integers(0, len(pair_pool)))]
            tokens += [first, second]
            tags += ["B", "E"]
        for _ in range(int(rng.integers(1, 3))):
            tokens.append(context[int(rng.integers(0, n_context))])
            tags.append("O")
        return LabeledSentence(tokens, tags, name)

    train = [sentence(singles, pairs) for _ in range(n_train)]
    # held-out splits reuse only entity tokens the training split covers,
    # keeping perfect dev performance reachable by memorization
    seen = {tok for s in train for tok, tag in zip(s.tokens, s.tags) if tag != "O"}
    seen_singles = [w for w in singles if w in seen] or singles
    seen_pairs = [p for p in pairs if p[0] in seen] or pairs
    dev = [sentence(seen_singles, seen_pairs) for _ in range(n_dev)]
    test = [sentence(seen_singles, seen_pairs) for _ in range(n_dev)]
    return DatasetBundle(train, dev, test, "other", "", name)


@dataclass
class PolysemyPair:
    first: DatasetBundle                     # annotates type A
    second: DatasetBundle                    # annotates type B
    first_test_other_spans: list[list[tuple[int, int]]]  # type-B spans in first.test


def polysemy_corpora(seed: int, n_ambiguous: int = 20) -> PolysemyPair:
    """Two single-type corpora with a shared ambiguous-token pool."""
    rng = np.random.default_rng(seed)
    taken: set[str] = set()
    ambiguous = _words(rng, n_ambiguous, taken)
    ents_a = _words(rng, 8, taken)
    ents_b = _words(rng, 8, taken)
    ctx_a = _words(rng, 10, taken)
    ctx_b = _words(rng, 12, taken)
    ctx_b_seen = ctx_b[:3]    # the only B contexts dataset A trains on
    ctx_b_unseen = ctx_b[3:]  # appear in A's test and in B's training

    def pick(pool):
        return pool[int(rng.integers(0, len(pool)))]

    def entity_sentence(ctx_pool, entity, name):
        tokens = [pick(ctx_pool), entity, pick(ctx_pool)]
        if rng.random() < 0.5:
            tokens.insert(0, pick(ctx_pool))
        tags = ["O"] * len(tokens)
        tags[tokens.index(entity)] = "S"
        return LabeledSentence(tokens, tags, name)

    def plain_sentence(ctx_pool, middle, name):
        tokens = [pick(ctx_pool), middle, pick(ctx_pool)]
        return LabeledSentence(tokens, ["O"] * 3, name)

    def training_split(name, own_ctx, own_ents, foreign_ctx):
        sentences = []
        for _ in range(30):  # own entities in own contexts
            sentences.append(entity_sentence(own_ctx, pick(ambiguous + own_ents), name))
        for _ in range(16):  # ambiguous tokens in foreign contexts stay O
            sentences.append(plain_sentence(foreign_ctx, pick(ambiguous), name))
        for _ in range(6):   # pure context noise
            sentences.append(plain_sentence(own_ctx, pick(own_ctx), name))
        order = rng.permutation(len(sentences))
        return [sentences[i] for i in order]

    # dataset A: trains with only the "seen" slice of B contexts
    train_a = training_split("first", ctx_a, ents_a, ctx_b_seen)
    dev_a = training_split("first", ctx_a, ents_a, ctx_b_seen)[:14]
    # dataset B: trains on every B context word
    train_b = training_split("second", ctx_b, ents_b, ctx_a)
    dev_b = training_split("second", ctx_b, ents_b, ctx_a)[:14]

    test_a: list[LabeledSentence] = []
    other_spans: list[list[tuple[int, int]]] = []
    for _ in range(20):  # genuine type-A entities, familiar contexts
        test_a.append(entity_sentence(ctx_a, pick(ambiguous + ents_a), "first"))
        other_spans.append([])
    for _ in range(20):  # ambiguous tokens used as type B, unseen contexts
        sentence = plain_sentence(ctx_b_unseen, pick(ambiguous), "first")
        test_a.append(sentence)
        other_spans.append([(1, 1)])  # the middle token is a type-B entity
    test_b = [entity_sentence(ctx_b, pick(ambiguous + ents_b), "second") for _ in range(10)]

    first = DatasetBundle(train_a, dev_a, test_a, "disease", "TypeA", "first")
    second = DatasetBundle(train_b, dev_b, test_b, "gene-protein", "TypeB", "second")
    return PolysemyPair(first, second, other_spans)

"""Word-embedding table and convolutional character-level word vectors.

A token is represented by the concatenation of a word-embedding row and
a character-level vector: for each convolution window size, character
embeddings inside the window are stacked, pushed through a linear
filter, and max-pooled over window positions; the per-size outputs are
concatenated in ascending window-size order.
"""

from __future__ import annotations

import math
import warnings
from typing import IO, Iterable, Mapping, Sequence, TypeVar

import numpy as np

from . import autodiff as ad

UNK_WORD = "<unk>"
PAD_CHAR = "<pad>"
UNK_CHAR = "<unk>"

PAD_CHAR_INDEX = 0
UNK_CHAR_INDEX = 1

WORD_EMB = "word.emb"
CHAR_EMB = "char.emb"

T = TypeVar("T")


class EmbeddingFormatError(ValueError):
    """Malformed word-embedding text file."""


class WordEmbeddingTable:
    """Vocabulary plus the embedding matrix, with a guaranteed UNK row.

    Lookup tries the exact surface form, then the lowercased form, then
    falls back to UNK (biomedical embeddings keep cased tokens, so the
    exact match goes first).
    """

    def __init__(
        self,
        vocabulary: dict[str, int],
        matrix: np.ndarray,
        unk_index: int,
        trainable: bool = True,
    ):
        self.vocabulary = vocabulary
        self.matrix = matrix
        self.unk_index = unk_index
        self.trainable = trainable

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def index(self, word: str) -> int:
        idx = self.vocabulary.get(word)
        if idx is None:
            idx = self.vocabulary.get(word.lower(), self.unk_index)
        return idx

    def vector(self, word: str) -> np.ndarray:
        return self.matrix[self.index(word)]


def load_word_embeddings(stream: IO[str]) -> WordEmbeddingTable:
    """Parse the plain-text format: header "count dim", then one
    "word v1 ... v_dim" line per word. A zero UNK row is appended."""
    header = stream.readline()
    parts = header.split()
    if len(parts) != 2:
        raise EmbeddingFormatError(f"line 1: expected header 'count dim', got {header!r}")
    try:
        _count, dim = int(parts[0]), int(parts[1])
    except ValueError:
        raise EmbeddingFormatError(f"line 1: expected integer header, got {header!r}") from None
    if dim <= 0:
        raise EmbeddingFormatError(f"line 1: dimension must be positive, got {dim}")

    vocabulary: dict[str, int] = {}
    rows: list[np.ndarray] = []
    for lineno, line in enumerate(stream, start=2):
        if not line.strip():
            continue
        fields = line.split()
        word, values = fields[0], fields[1:]
        if len(values) != dim:
            raise EmbeddingFormatError(
                f"line {lineno}: expected {dim} values for {word!r}, got {len(values)}"
            )
        vector = np.array([float(v) for v in values], dtype=np.float64)
        if word in vocabulary:
            warnings.warn(f"duplicate word {word!r} at line {lineno}; keeping the last one")
            rows[vocabulary[word]] = vector
        else:
            vocabulary[word] = len(rows)
            rows.append(vector)
    unk_index = len(rows)
    rows.append(np.zeros(dim, dtype=np.float64))
    return WordEmbeddingTable(vocabulary, np.stack(rows), unk_index)


def random_word_embeddings(
    words: Iterable[str], dim: int, rng: np.random.Generator, dtype=np.float64
) -> WordEmbeddingTable:
    """Init for runs without a pretrained file: rows uniform in
    +-sqrt(3/dim) (unit variance per coordinate, roughly the scale of
    trained vectors), zero UNK row."""
    limit = math.sqrt(3.0 / dim)
    vocab = {w: i for i, w in enumerate(sorted(set(words)))}
    matrix = rng.uniform(-limit, limit, size=(len(vocab) + 1, dim)).astype(dtype)
    matrix[len(vocab)] = 0.0
    return WordEmbeddingTable(vocab, matrix, len(vocab))


class CharVocab:
    """Character-to-index map with fixed PAD (0) and UNK (1) slots."""

    def __init__(self, chars: Iterable[str]):
        self.index_of = {PAD_CHAR: PAD_CHAR_INDEX, UNK_CHAR: UNK_CHAR_INDEX}
        for ch in sorted(set(chars)):
            self.index_of.setdefault(ch, len(self.index_of))

    def __len__(self) -> int:
        return len(self.index_of)

    def index(self, ch: str) -> int:
        return self.index_of.get(ch, UNK_CHAR_INDEX)

    def encode(self, word: str) -> list[int]:
        if not word:
            return [UNK_CHAR_INDEX]
        return [self.index(ch) for ch in word]


def build_char_vocab(tokens: Iterable[str]) -> CharVocab:
    return CharVocab(ch for tok in tokens for ch in tok)


def char_windows(seq: Sequence[T], k: int, pad: T) -> list[tuple[T, ...]]:
    """All k-wide windows centered on each element, (k-1)/2 pads on both
    sides; exactly len(seq) windows come back."""
    if len(seq) == 0:
        raise ValueError("char_windows: empty word (substitute a single UNK character)")
    if k < 1 or k % 2 == 0:
        raise ValueError(f"char_windows: window size must be odd and positive, got {k}")
    half = (k - 1) // 2
    padded = [pad] * half + list(seq) + [pad] * half
    return [tuple(padded[i : i + k]) for i in range(len(seq))]


def glorot_uniform(rng: np.random.Generator, rows: int, cols: int, dtype=np.float64) -> np.ndarray:
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols)).astype(dtype)


def init_char_params(
    rng: np.random.Generator,
    vocab_size: int,
    d_char: int,
    d_clwe: int,
    window_sizes: Sequence[int],
    dtype=np.float64,
) -> dict[str, np.ndarray]:
    """Character embedding matrix plus one filter bank per window size.

    The character matrix is uniform(-0.5, 0.5)/d_char with the PAD row
    pinned to zero so padding stays inert; each bank outputs
    d_clwe/len(window_sizes) channels.
    """
    if d_clwe % len(window_sizes) != 0:
        raise ValueError(f"d_clwe={d_clwe} not divisible by {len(window_sizes)} filter banks")
    bank = d_clwe // len(window_sizes)
    emb = rng.uniform(-0.5, 0.5, size=(vocab_size, d_char)).astype(dtype) / d_char
    emb[PAD_CHAR_INDEX] = 0.0
    params = {CHAR_EMB: emb}
    for k in window_sizes:
        if k % 2 == 0:
            raise ValueError(f"window size must be odd, got {k}")
        params[f"char.w{k}"] = glorot_uniform(rng, bank, k * d_char, dtype)
        params[f"char.b{k}"] = np.zeros(bank, dtype=dtype)
    return params


def char_cnn(
    leaves: Mapping[str, ad.Node], char_ids: Sequence[int], window_sizes: Sequence[int]
) -> ad.Node:
    """Character-level vector of one word as a graph node.

    Per bank: stack the k character embeddings of every window into a
    (M, k*d_char) matrix, apply the filter and bias, and take the
    coordinatewise max over the M window positions.
    """
    if len(char_ids) == 0:
        raise ValueError("char_cnn: empty word")
    m = len(char_ids)
    emb = leaves[CHAR_EMB]
    banks = []
    for k in sorted(window_sizes):
        half = (k - 1) // 2
        padded = np.full(m + 2 * half, PAD_CHAR_INDEX, dtype=np.intp)
        padded[half : half + m] = char_ids
        rows = ad.take(emb, padded)
        windows = ad.concat([ad.take(rows, np.s_[o : o + m]) for o in range(k)], axis=1)
        response = ad.add(ad.matmul(windows, ad.transpose(leaves[f"char.w{k}"])), leaves[f"char.b{k}"])
        banks.append(ad.max_over(response, axis=0))
    return ad.concat(banks, axis=0)


def embed_token(
    leaves: Mapping[str, ad.Node],
    word_index: int,
    char_ids: Sequence[int],
    window_sizes: Sequence[int],
    clwe_mask: np.ndarray | None = None,
) -> ad.Node:
    """Token vector [word part, character part]; the optional dropout
    mask multiplies only the character part."""
    word_vec = ad.take(leaves[WORD_EMB], int(word_index))
    char_vec = char_cnn(leaves, char_ids, window_sizes)
    if clwe_mask is not None:
        char_vec = ad.mul(char_vec, ad.leaf(clwe_mask))
    return ad.concat([word_vec, char_vec], axis=0)

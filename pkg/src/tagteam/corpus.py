"""CoNLL-style corpus reading, tag-scheme conversion, splits, batches.

Files are UTF-8 with one "token<TAB>tag" pair per line and a blank line
between sentences. Tags may carry an entity-type suffix ("B-Disease");
each file must stick to a single suffix, which is validated and then
stripped down to the bare 5-symbol alphabet.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

BIOES = ("B", "I", "O", "E", "S")
DEFAULT_MAX_SENTENCE_LEN = 512


class CorpusFormatError(ValueError):
    """Malformed corpus file, reported with a line number."""


class TagSchemeError(ValueError):
    """Tag sequence violates the expected scheme."""


@dataclass
class LabeledSentence:
    tokens: list[str]
    tags: list[str]
    dataset_id: str = ""

    def __post_init__(self):
        if len(self.tokens) != len(self.tags) or not self.tokens:
            raise TagSchemeError(
                f"sentence needs equally many tokens and tags (>= 1), "
                f"got {len(self.tokens)} tokens / {len(self.tags)} tags"
            )

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class DatasetBundle:
    train: list[LabeledSentence]
    dev: list[LabeledSentence]
    test: list[LabeledSentence]
    entity_type: str = "other"
    suffix: str = ""  # raw tag suffix, e.g. "Disease", kept for output files
    name: str = ""


def classify_entity_type(suffix: str) -> str:
    low = suffix.lower()
    if "disease" in low:
        return "disease"
    if "chem" in low or "drug" in low:
        return "chemical"
    if "gene" in low or "protein" in low:
        return "gene-protein"
    return "other"


def _split_tag(raw: str, lineno: int) -> tuple[str, str]:
    symbol, _, suffix = raw.partition("-")
    if symbol not in BIOES or (symbol == "O" and suffix):
        raise CorpusFormatError(f"line {lineno}: unknown tag {raw!r}")
    return symbol, suffix


def parse_conll(
    stream: IO[str] | Iterable[str],
    dataset_id: str = "",
    max_sentence_len: int = DEFAULT_MAX_SENTENCE_LEN,
) -> tuple[list[LabeledSentence], str]:
    """Sentences in file order plus the (single) entity-type suffix.

    Sentences longer than ``max_sentence_len`` are rejected rather than
    silently truncated.
    """
    sentences: list[LabeledSentence] = []
    tokens: list[str] = []
    tags: list[str] = []
    suffixes: set[str] = set()
    start_line = 1

    def flush(lineno: int) -> None:
        if not tokens:
            return
        if len(tokens) > max_sentence_len:
            raise CorpusFormatError(
                f"line {start_line}: sentence of {len(tokens)} tokens exceeds "
                f"the cap of {max_sentence_len}"
            )
        sentences.append(LabeledSentence(tokens.copy(), tags.copy(), dataset_id))
        tokens.clear()
        tags.clear()

    lineno = 0
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            flush(lineno)
            start_line = lineno + 1
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise CorpusFormatError(
                f"line {lineno}: expected 'token<TAB>tag', got {len(fields)} field(s)"
            )
        token, raw_tag = fields
        symbol, suffix = _split_tag(raw_tag, lineno)
        if suffix:
            suffixes.add(suffix)
            if len(suffixes) > 1:
                raise CorpusFormatError(
                    f"line {lineno}: mixed entity-type suffixes {sorted(suffixes)}"
                )
        tokens.append(token)
        tags.append(symbol)
    flush(lineno + 1)
    return sentences, (suffixes.pop() if suffixes else "")


def write_conll(sentences: Sequence[LabeledSentence], stream: IO[str], suffix: str = "") -> None:
    """Normalized writer: tab delimiter, single blank line separators."""
    for i, sentence in enumerate(sentences):
        if i:
            stream.write("\n")
        for token, tag in zip(sentence.tokens, sentence.tags):
            full = f"{tag}-{suffix}" if suffix and tag != "O" else tag
            stream.write(f"{token}\t{full}\n")


def bio_to_bioes(tags: Sequence[str], lenient: bool = False) -> list[str]:
    """B/I/O to the 5-symbol scheme: a run's last I becomes E, a lone B
    becomes S. An I after O or at the start is an error unless
    ``lenient``, which promotes it to B."""
    fixed: list[str] = []
    for i, tag in enumerate(tags):
        if tag not in ("B", "I", "O"):
            raise TagSchemeError(f"position {i}: not a BIO tag: {tag!r}")
        if tag == "I" and (i == 0 or fixed[i - 1] == "O"):
            if not lenient:
                before = "start" if i == 0 else "'O'"
                raise TagSchemeError(f"position {i}: 'I' follows {before}")
            tag = "B"
        fixed.append(tag)

    out: list[str] = []
    n = len(fixed)
    for i, tag in enumerate(fixed):
        if tag == "O":
            out.append("O")
        elif tag == "B":
            out.append("S" if i + 1 == n or fixed[i + 1] != "I" else "B")
        else:  # I
            out.append("E" if i + 1 == n or fixed[i + 1] != "I" else "I")
    return out


def bioes_to_bio(tags: Sequence[str]) -> list[str]:
    mapping = {"B": "B", "I": "I", "O": "O", "E": "I", "S": "B"}
    try:
        return [mapping[t] for t in tags]
    except KeyError as exc:
        raise TagSchemeError(f"not a BIOES tag: {exc.args[0]!r}") from None


def bioes_to_spans(tags: Sequence[str]) -> list[tuple[int, int]]:
    """Inclusive (start, end) token spans; input must already be valid
    (repair is an explicit separate step)."""
    spans: list[tuple[int, int]] = []
    open_start: int | None = None
    for i, tag in enumerate(tags):
        if tag not in BIOES:
            raise TagSchemeError(f"position {i}: unknown tag {tag!r}")
        if tag == "B":
            if open_start is not None:
                raise TagSchemeError(f"position {i}: 'B' inside an open entity")
            open_start = i
        elif tag == "I":
            if open_start is None:
                raise TagSchemeError(f"position {i}: 'I' without an open entity")
        elif tag == "E":
            if open_start is None:
                raise TagSchemeError(f"position {i}: 'E' without an open entity")
            spans.append((open_start, i))
            open_start = None
        elif tag == "S":
            if open_start is not None:
                raise TagSchemeError(f"position {i}: 'S' inside an open entity")
            spans.append((i, i))
        else:  # O
            if open_start is not None:
                raise TagSchemeError(f"position {i}: 'O' inside an open entity")
    if open_start is not None:
        raise TagSchemeError(f"entity starting at {open_start} never closed")
    return spans


def split_dev(train: list[LabeledSentence], dev_size: int) -> tuple[list[LabeledSentence], list[LabeledSentence]]:
    """Deterministic split: the last ``dev_size`` sentences by file
    order become the development set."""
    if dev_size < 1:
        raise ValueError("split_dev: development split must be nonempty")
    if dev_size >= len(train):
        raise ValueError(
            f"split_dev: dev_size {dev_size} must be smaller than the training set ({len(train)})"
        )
    return train[:-dev_size], train[-dev_size:]


@dataclass
class Batch:
    """Padded sentence group; the mask marks real tokens."""

    sentences: list[LabeledSentence]
    tokens: list[list[str]] = field(init=False)
    tags: list[list[str]] = field(init=False)
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        width = max(len(s) for s in self.sentences)
        self.tokens = [s.tokens + [""] * (width - len(s)) for s in self.sentences]
        self.tags = [s.tags + ["O"] * (width - len(s)) for s in self.sentences]
        self.mask = np.zeros((len(self.sentences), width), dtype=bool)
        for row, s in enumerate(self.sentences):
            self.mask[row, : len(s)] = True

    def rows(self) -> Iterable[tuple[list[str], list[str]]]:
        """Unpadded (tokens, tags) per sentence, via the mask."""
        for row in range(len(self.sentences)):
            n = int(self.mask[row].sum())
            yield self.tokens[row][:n], self.tags[row][:n]


def make_batches(sentences: Sequence[LabeledSentence], batch_size: int, seed: int = 0) -> list[Batch]:
    """Shuffle (seeded) and chunk into groups of at most ``batch_size``."""
    if batch_size < 1:
        raise ValueError("make_batches: batch_size must be >= 1")
    order = list(sentences)
    np.random.default_rng(seed).shuffle(order)
    return [Batch(order[i : i + batch_size]) for i in range(0, len(order), batch_size)]


def load_dataset(spec, max_sentence_len: int = DEFAULT_MAX_SENTENCE_LEN) -> DatasetBundle:
    """Read the splits named by a config ``DatasetSpec``.

    BIO-scheme files are converted on load. When no dev file is listed,
    the dev set is carved from the training tail (``dev_size``
    sentences).
    """

    def read(path: str) -> tuple[list[LabeledSentence], str]:
        with open(path, encoding="utf-8") as fh:
            return parse_conll(fh, dataset_id=spec.name, max_sentence_len=max_sentence_len)

    if not spec.train:
        raise ValueError(f"dataset {spec.name!r}: no training file configured")
    train, suffix = read(spec.train)
    dev: list[LabeledSentence] = []
    test: list[LabeledSentence] = []
    suffixes = {suffix} if suffix else set()
    if spec.dev:
        dev, s = read(spec.dev)
        suffixes |= {s} if s else set()
    if spec.test:
        test, s = read(spec.test)
        suffixes |= {s} if s else set()
    if len(suffixes) > 1:
        raise CorpusFormatError(f"dataset {spec.name!r}: splits mix suffixes {sorted(suffixes)}")
    if not dev:
        if spec.dev_size < 1:
            raise ValueError(f"dataset {spec.name!r}: needs a dev file or a positive dev_size")
        train, dev = split_dev(train, spec.dev_size)
    if spec.scheme == "bio":
        for split in (train, dev, test):
            for sentence in split:
                sentence.tags = bio_to_bioes(sentence.tags)
    final_suffix = suffixes.pop() if suffixes else ""
    entity = spec.entity_type or classify_entity_type(final_suffix)
    return DatasetBundle(train, dev, test, entity, final_suffix, spec.name)

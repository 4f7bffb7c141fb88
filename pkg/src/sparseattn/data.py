"""Corpus handling: TSV ingestion, word-level tokenization, synthetic data.

The on-disk format is SST-2 style: UTF-8 text, one "sentence<TAB>label" pair
per line (labels '0'/'1'), optional "sentence\\tlabel" header, LF or CRLF.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")

TSV_HEADER = "sentence\tlabel"

# Synthetic corpus construction: disjoint cue-token sets per class plus
# neutral filler. Cue presence alone makes the task linearly separable.
N_CUE_TOKENS = 20
MIN_FILLER = 5
MAX_CUES = 3


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word runs and single punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Example:
    """One labeled sentence, optionally tokenized and encoded."""

    text: str
    label: int
    tokens: list[str] = field(default_factory=list)
    token_ids: list[int] | None = None


@dataclass
class Corpus:
    train: list[Example]
    validation: list[Example]
    meta: dict = field(default_factory=dict)


@dataclass
class Vocab:
    """Token-to-id map with pad=0 and unk=1 reserved."""

    token_to_id: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id.get(tok, UNK_ID) for tok in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        rev = {i: t for t, i in self.token_to_id.items()}
        return [rev.get(i, UNK_TOKEN) for i in ids]


def build_vocab(corpus: Corpus, max_size: int) -> Vocab:
    """Most frequent training-split tokens first, ties broken lexicographically."""
    if not corpus.train:
        raise DataError("cannot build a vocabulary from an empty training split")
    if max_size < 3:
        raise ConfigError(f"max_size must leave room beyond pad/unk, got {max_size}")
    counts = Counter()
    for example in corpus.train:
        counts.update(example.tokens if example.tokens else tokenize(example.text))
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    mapping = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
    for token, _ in ranked[: max_size - 2]:
        mapping[token] = len(mapping)
    return Vocab(token_to_id=mapping)


def encode_corpus(corpus: Corpus, vocab: Vocab, max_len: int) -> None:
    """Attach token_ids (truncated to max_len) to every example in place."""
    for example in corpus.train + corpus.validation:
        tokens = example.tokens if example.tokens else tokenize(example.text)
        example.tokens = tokens[:max_len]
        example.token_ids = vocab.encode(example.tokens)


def _read_tsv_file(path: Path, max_len: int) -> list[Example]:
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    examples: list[Example] = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if lineno == 1 and line == TSV_HEADER:
            continue
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise DataError(
                f"{path}:{lineno}: expected 'sentence<TAB>label', found "
                f"{len(fields) - 1} tabs"
            )
        text, label = fields
        if label not in ("0", "1"):
            raise DataError(f"{path}:{lineno}: label must be '0' or '1', got {label!r}")
        examples.append(Example(text=text, label=int(label), tokens=tokenize(text)[:max_len]))
    if not examples:
        raise DataError(f"{path}: no examples found")
    return examples


def load_tsv(path: str | Path, max_len: int) -> Corpus:
    """Load a corpus from a TSV file or a directory of train/validation TSVs.

    A directory must contain train.tsv and validation.tsv. A single file goes
    entirely into the training split; callers that need a held-out split can
    apply `split_corpus` afterwards.
    """
    path = Path(path)
    if path.is_dir():
        train = _read_tsv_file(path / "train.tsv", max_len)
        validation = _read_tsv_file(path / "validation.tsv", max_len)
        return Corpus(train=train, validation=validation, meta={"source": str(path)})
    if not path.exists():
        raise DataError(f"no such file or directory: {path}")
    return Corpus(train=_read_tsv_file(path, max_len), validation=[], meta={"source": str(path)})


def split_corpus(corpus: Corpus, val_every: int = 10) -> Corpus:
    """Deterministically carve a validation split out of the training list.

    Every val_every-th example (1-indexed) moves to validation; at least one
    example always does.
    """
    if len(corpus.train) < 2:
        raise DataError("need at least 2 examples to split")
    train: list[Example] = []
    validation: list[Example] = []
    for i, example in enumerate(corpus.train, start=1):
        (validation if i % val_every == 0 else train).append(example)
    if not validation:
        validation.append(train.pop())
    meta = dict(corpus.meta)
    meta["split"] = f"every {val_every}th example held out"
    return Corpus(train=train, validation=validation, meta=meta)


def gen_synthetic(
    seed: int, size: int, vocab_size: int = 1000, max_len: int = 64
) -> Corpus:
    """Deterministic synthetic sentiment corpus.

    Each example is 5..max_len-3 filler tokens with 1..3 cue tokens of its
    label's polarity planted at random positions; labels alternate so classes
    stay balanced within one example, and a 90/10 train/validation split is
    taken pair-wise so both splits contain both labels.
    """
    if size < 10:
        raise ConfigError(f"size must be >= 10, got {size}")
    if max_len < MIN_FILLER + MAX_CUES:
        raise ConfigError(f"max_len must be >= {MIN_FILLER + MAX_CUES}, got {max_len}")
    n_filler = max(1, vocab_size - 2 * N_CUE_TOKENS)
    pos_cues = [f"pos{i:02d}" for i in range(N_CUE_TOKENS)]
    neg_cues = [f"neg{i:02d}" for i in range(N_CUE_TOKENS)]
    fillers = [f"w{i:04d}" for i in range(n_filler)]

    rng = np.random.default_rng(seed)
    examples: list[Example] = []
    for i in range(size):
        label = i % 2
        cue_pool = pos_cues if label == 1 else neg_cues
        n_fill = int(rng.integers(MIN_FILLER, max_len - MAX_CUES + 1))
        tokens = [fillers[j] for j in rng.integers(0, n_filler, size=n_fill)]
        for _ in range(int(rng.integers(1, MAX_CUES + 1))):
            cue = cue_pool[int(rng.integers(0, N_CUE_TOKENS))]
            tokens.insert(int(rng.integers(0, len(tokens) + 1)), cue)
        examples.append(Example(text=" ".join(tokens), label=label, tokens=tokens))

    train: list[Example] = []
    validation: list[Example] = []
    n_pairs = size // 2
    for i, example in enumerate(examples):
        pair = i // 2
        is_val = pair < n_pairs and pair % 10 == 9
        (validation if is_val else train).append(example)
    if not validation:  # fewer than 10 pairs: hold out the last full pair
        last = 2 * (n_pairs - 1)
        validation = [e for i, e in enumerate(examples) if i in (last, last + 1)]
        train = [e for i, e in enumerate(examples) if i not in (last, last + 1)]
    meta = {"source": "synthetic", "seed": seed, "size": size, "vocab_size": vocab_size}
    return Corpus(train=train, validation=validation, meta=meta)


def write_tsv(examples: list[Example], path: str | Path) -> None:
    """Write examples in the TSV interchange format, header included."""
    path = Path(path)
    lines = [TSV_HEADER]
    lines.extend(f"{example.text}\t{example.label}" for example in examples)
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc

"""
Data - vocabularies, corpora, synthetic tasks, batching
=======================================================

Reserved ids are fixed across every vocabulary: PAD=0, BOS=1, EOS=2,
UNK=3. Real tokens follow in (-count, token) order, so a vocabulary
built from the same corpus is identical on every machine.

Corpora are plain text lines (space-separated symbols for the
synthetic translation tasks, raw characters for the language-model
corpora). Encoded examples carry:
  src  source ids terminated by EOS (translation only)
  tgt  [BOS] + target ids + [EOS]
and the model sees tgt_in = tgt[:-1], tgt_out = tgt[1:].

Everything is seeded: the same TaskSpec builds the same train/dev
split, the same vocabulary and (per epoch) the same batch order.
"""

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

LEVEL_CHAR = "char"
LEVEL_WORD = "word"
LEVELS = (LEVEL_CHAR, LEVEL_WORD)

TASK_COPY = "copy"
TASK_REVERSE = "reverse"
TASK_SUBSTITUTE_SHIFT = "substitute_shift"
TRANSLATION_TASKS = (TASK_COPY, TASK_REVERSE, TASK_SUBSTITUTE_SHIFT)
TASK_LM_SYNTHETIC = "lm_synthetic"
TASK_LM_TEXT = "lm_text"
LM_TASKS = (TASK_LM_SYNTHETIC, TASK_LM_TEXT)
TASKS = TRANSLATION_TASKS + LM_TASKS


class DataError(ValueError):
    """Corpus or vocabulary content is unusable (empty corpus, bad file)."""


class DataConfigError(ValueError):
    """Generator / split parameters are out of range."""


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

def tokenize(text: str, level: str) -> List[str]:
    if level == LEVEL_CHAR:
        return list(text)
    if level == LEVEL_WORD:
        return text.split()
    raise DataConfigError(f"unknown tokenization level {level!r} (supported: {', '.join(LEVELS)})")


class Vocab:
    """Token <-> id map with the four reserved ids in front."""

    def __init__(self, tokens: Sequence[str], level: str):
        if level not in LEVELS:
            raise DataConfigError(f"unknown tokenization level {level!r} (supported: {', '.join(LEVELS)})")
        self.level = level
        self.itos: List[str] = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi: Dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos and self.level == other.level

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def encode(self, text: str) -> List[int]:
        return [self.id(t) for t in tokenize(text, self.level)]

    def decode(self, ids: Iterable[int]) -> str:
        tokens = []
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            if i in (PAD_ID, BOS_ID):
                continue
            tokens.append(self.itos[i] if 0 <= i < len(self.itos) else UNK)
        return ("" if self.level == LEVEL_CHAR else " ").join(tokens)

    def save(self, path) -> None:
        """One non-reserved token per line; line n is id n + 4."""
        body = "".join(f"{t}\n" for t in self.itos[len(RESERVED):])
        Path(path).write_text(body, encoding="utf-8")

    @classmethod
    def load(cls, path, level: str) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines, level)


def build_vocab(corpus: Iterable[str], level: str, max_size: Optional[int] = None) -> Vocab:
    """Frequency-ordered vocabulary; ties broken by token.

    max_size caps the number of NON-reserved tokens.
    """
    if max_size is not None and max_size < 0:
        raise DataConfigError(f"max_size must be >= 0, got {max_size}")
    counts: Counter = Counter()
    for line in corpus:
        counts.update(tokenize(line, level))
    for reserved in RESERVED:
        counts.pop(reserved, None)
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if max_size is not None:
        ordered = ordered[:max_size]
    return Vocab([t for t, _ in ordered], level)


# ---------------------------------------------------------------------------
# Corpora
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParallelCorpus:
    src: Tuple[str, ...]
    tgt: Tuple[str, ...]

    def __post_init__(self):
        if len(self.src) != len(self.tgt):
            raise DataError(f"parallel corpus has {len(self.src)} sources but {len(self.tgt)} targets")

    def __len__(self) -> int:
        return len(self.src)

    def head(self, n: int) -> "ParallelCorpus":
        return ParallelCorpus(self.src[:n], self.tgt[:n])

    def tail(self, n: int) -> "ParallelCorpus":
        return ParallelCorpus(self.src[n:], self.tgt[n:])


def alphabet_symbols(size: int) -> List[str]:
    if size <= 26:
        return [chr(ord("a") + i) for i in range(size)]
    return [f"s{i}" for i in range(size)]


def apply_task(task: str, indices: Sequence[int], alphabet_size: int, shift: int = 1) -> List[int]:
    if task == TASK_COPY:
        return list(indices)
    if task == TASK_REVERSE:
        return list(indices)[::-1]
    if task == TASK_SUBSTITUTE_SHIFT:
        return [(i + shift) % alphabet_size for i in indices][::-1]
    raise DataConfigError(
        f"unknown synthetic task {task!r} (supported: {', '.join(TRANSLATION_TASKS)})")


def gen_synthetic_translation(task: str, n_pairs: int, len_range: Tuple[int, int],
                              alphabet_size: int, seed: int, shift: int = 1) -> ParallelCorpus:
    """Distinct random source strings and their deterministic targets."""
    if task not in TRANSLATION_TASKS:
        raise DataConfigError(
            f"unknown synthetic task {task!r} (supported: {', '.join(TRANSLATION_TASKS)})")
    lo, hi = int(len_range[0]), int(len_range[1])
    if alphabet_size < 2:
        raise DataConfigError(f"alphabet_size must be >= 2, got {alphabet_size}")
    if lo < 1 or lo > hi:
        raise DataConfigError(f"invalid length range ({lo}, {hi})")
    if n_pairs < 1:
        raise DataConfigError(f"n_pairs must be >= 1, got {n_pairs}")
    capacity = sum(alphabet_size ** n for n in range(lo, hi + 1))
    if n_pairs > capacity:
        raise DataConfigError(
            f"{n_pairs} distinct sources requested but only {capacity} exist "
            f"for alphabet {alphabet_size} and lengths {lo}..{hi}")

    symbols = alphabet_symbols(alphabet_size)
    rng = np.random.default_rng(seed)
    seen = set()
    src: List[str] = []
    tgt: List[str] = []
    while len(src) < n_pairs:
        length = int(rng.integers(lo, hi + 1))
        idx = tuple(int(i) for i in rng.integers(0, alphabet_size, size=length))
        if idx in seen:
            continue
        seen.add(idx)
        src.append(" ".join(symbols[i] for i in idx))
        tgt.append(" ".join(symbols[i] for i in apply_task(task, idx, alphabet_size, shift)))
    return ParallelCorpus(tuple(src), tuple(tgt))


def train_dev_split(corpus: ParallelCorpus, n_dev: int) -> Tuple[ParallelCorpus, ParallelCorpus]:
    """(train, dev): the first n_dev pairs are dev."""
    if not 0 < n_dev < len(corpus):
        raise DataConfigError(f"n_dev must be in 1..{len(corpus) - 1}, got {n_dev}")
    return corpus.tail(n_dev), corpus.head(n_dev)


_SUBJECTS = ("the cat", "a dog", "the old man", "my sister", "the bird",
             "a child", "the farmer", "our neighbour")
_VERBS = ("sees", "likes", "finds", "chases", "hears", "follows", "paints")
_OBJECTS = ("the ball", "a red apple", "the river", "a small house",
            "the moon", "an open door", "the garden")
_TAILS = ("", " today", " again", " at night", " in the rain", " every morning")


def gen_synthetic_text(n_lines: int, seed: int) -> List[str]:
    """Template English for the language-model task."""
    if n_lines < 1:
        raise DataConfigError(f"n_lines must be >= 1, got {n_lines}")
    rng = np.random.default_rng(seed)
    def pick(options):
        return options[int(rng.integers(len(options)))]

    lines = []
    for _ in range(n_lines):
        line = f"{pick(_SUBJECTS)} {pick(_VERBS)} {pick(_OBJECTS)}{pick(_TAILS)}"
        if rng.random() < 0.3:
            line += f" and {pick(_SUBJECTS)} {pick(_VERBS)} it"
        lines.append(line + ".")
    return lines


def split_lines(lines: Sequence[str], dev_lines: int) -> Tuple[List[str], List[str]]:
    """(train, dev): the first dev_lines lines are dev, train never repeats a dev line."""
    lines = [ln for ln in lines if ln]
    if not lines:
        raise DataError("corpus has no non-empty lines")
    if not 0 < dev_lines < len(lines):
        raise DataConfigError(f"dev_lines must be in 1..{len(lines) - 1}, got {dev_lines}")
    dev = lines[:dev_lines]
    held = set(dev)
    train = [ln for ln in lines[dev_lines:] if ln not in held]
    if not train:
        raise DataError("no training lines remain after removing dev lines")
    return train, dev


def load_text_corpus(path, dev_lines: int) -> Tuple[List[str], List[str]]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"corpus file not found: {p}")
    lines = [ln.rstrip("\r") for ln in p.read_text(encoding="utf-8").split("\n")]
    return split_lines(lines, dev_lines)


# ---------------------------------------------------------------------------
# Examples and batches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Example:
    tgt: Tuple[int, ...]
    src: Optional[Tuple[int, ...]] = None

    @property
    def reference(self) -> List[int]:
        """Target ids without BOS/EOS."""
        return list(self.tgt[1:-1])


def encode_parallel(corpus: ParallelCorpus, vocab: Vocab) -> List[Example]:
    return [Example(tgt=(BOS_ID, *vocab.encode(t), EOS_ID), src=(*vocab.encode(s), EOS_ID))
            for s, t in zip(corpus.src, corpus.tgt)]


def encode_mono(lines: Sequence[str], vocab: Vocab) -> List[Example]:
    return [Example(tgt=(BOS_ID, *vocab.encode(ln), EOS_ID)) for ln in lines]


def _pad(rows: Sequence[Sequence[int]]) -> np.ndarray:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


@dataclass(frozen=True)
class Batch:
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    src: Optional[np.ndarray] = None

    @property
    def tgt_mask(self) -> np.ndarray:
        return self.tgt_out != PAD_ID

    @property
    def src_mask(self) -> Optional[np.ndarray]:
        return None if self.src is None else self.src != PAD_ID

    @property
    def n_target_tokens(self) -> int:
        return int(self.tgt_mask.sum())

    def __len__(self) -> int:
        return self.tgt_in.shape[0]


def make_batch(examples: Sequence[Example]) -> Batch:
    if not examples:
        raise DataError("cannot batch zero examples")
    seqs = _pad([ex.tgt for ex in examples])
    src = None
    if examples[0].src is not None:
        src = _pad([ex.src for ex in examples])
    return Batch(tgt_in=seqs[:, :-1], tgt_out=seqs[:, 1:], src=src)


def batch_iter(examples: Sequence[Example], batch_size: int, seed: int, epoch: int,
               shuffle: bool = True) -> Iterator[Batch]:
    """Batches in a seeded per-epoch order, each padded to its own longest row."""
    if batch_size < 1:
        raise DataConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(examples))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(examples))
    for start in range(0, len(order), batch_size):
        yield make_batch([examples[i] for i in order[start:start + batch_size]])


# ---------------------------------------------------------------------------
# Task specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskSpec:
    """What a run trains on. Serializable into grid files and checkpoints."""

    task: str = TASK_SUBSTITUTE_SHIFT
    n_train: int = 800
    n_dev: int = 100
    len_range: Tuple[int, int] = (3, 8)
    alphabet_size: int = 12
    shift: int = 3
    seed: int = 7
    n_lines: int = 1200
    path: Optional[str] = None
    max_vocab: Optional[int] = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise DataConfigError(f"unknown task {self.task!r} (supported: {', '.join(TASKS)})")
        if self.task == TASK_LM_TEXT and not self.path:
            raise DataConfigError("task lm_text needs a corpus path")
        object.__setattr__(self, "len_range", tuple(int(x) for x in self.len_range))

    @property
    def is_translation(self) -> bool:
        return self.task in TRANSLATION_TASKS

    @property
    def level(self) -> str:
        return LEVEL_WORD if self.is_translation else LEVEL_CHAR

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["len_range"] = list(self.len_range)
        return d

    @classmethod
    def from_dict(cls, data: Dict) -> "TaskSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise DataConfigError(f"unknown task field(s): {', '.join(unknown)}")
        return cls(**data)


@dataclass
class TaskData:
    spec: TaskSpec
    vocab: Vocab
    train: List[Example]
    dev: List[Example] = field(default_factory=list)


def build_task(spec: TaskSpec, vocab: Optional[Vocab] = None) -> TaskData:
    """Generate/load the corpus, split it and encode both halves.

    A supplied vocab (from a checkpoint) is used as-is; otherwise it is
    built from the training half only.
    """
    if spec.is_translation:
        corpus = gen_synthetic_translation(spec.task, spec.n_train + spec.n_dev, spec.len_range,
                                           spec.alphabet_size, spec.seed, spec.shift)
        train, dev = train_dev_split(corpus, spec.n_dev)
        if vocab is None:
            vocab = build_vocab(train.src + train.tgt, spec.level, spec.max_vocab)
        data = TaskData(spec, vocab, encode_parallel(train, vocab), encode_parallel(dev, vocab))
    else:
        if spec.task == TASK_LM_SYNTHETIC:
            train_lines, dev_lines = split_lines(gen_synthetic_text(spec.n_lines, spec.seed), spec.n_dev)
        else:
            train_lines, dev_lines = load_text_corpus(spec.path, spec.n_dev)
        if vocab is None:
            vocab = build_vocab(train_lines, spec.level, spec.max_vocab)
        data = TaskData(spec, vocab, encode_mono(train_lines, vocab), encode_mono(dev_lines, vocab))
    logger.info(f"task {spec.task}: {len(data.train)} train / {len(data.dev)} dev, vocab {len(vocab)}")
    return data

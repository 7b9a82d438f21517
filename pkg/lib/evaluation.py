"""
Evaluation - corpus BLEU, perplexity, greedy decoding
=====================================================

BLEU is corpus-level: clipped n-gram matches and candidate n-gram
totals are summed over the whole corpus before precisions are taken,
and the brevity penalty uses total hypothesis vs total reference
length. Scores are on the 0..100 scale. Tokens are compared by
equality, so id lists and whitespace-split strings both work.

Perplexity is exp(total NLL / predicted tokens) with PAD excluded;
every target position including the final EOS counts, BOS never does
(it is only ever an input).
"""

import logging
import math
from collections import Counter
from typing import Hashable, List, Sequence, Tuple, Union

import numpy as np

from .data import BOS_ID, EOS_ID, PAD_ID, Example, batch_iter
from .model import MODE_TRANSLATION, ModelInputError, Transformer
from .tensor_engine import nll_sum

logger = logging.getLogger(__name__)

Tokens = Union[str, Sequence[Hashable]]


class MetricError(ValueError):
    """Metric inputs are unusable (length mismatch, nothing to score)."""


def _tokens(item: Tokens) -> List[Hashable]:
    return item.split() if isinstance(item, str) else list(item)


def _ngrams(tokens: List[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hypotheses: Sequence[Tokens], references: Sequence[Tokens],
               max_n: int = 4) -> Tuple[List[int], List[int], int, int]:
    """(matches per order, totals per order, hypothesis length, reference length)."""
    if len(hypotheses) != len(references):
        raise MetricError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise MetricError("cannot score an empty hypothesis set")
    matches, totals = [0] * max_n, [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = _tokens(hyp), _tokens(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_grams, ref_grams = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, ref_grams[g]) for g, c in hyp_grams.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def corpus_bleu(hypotheses: Sequence[Tokens], references: Sequence[Tokens],
                max_n: int = 4, smooth: bool = False) -> float:
    """Corpus BLEU in [0, 100].

    Without smoothing any order with zero matches makes the score 0.
    With smoothing such an order contributes 1 / (2 * max(total, 1)).
    """
    matches, totals, hyp_len, ref_len = bleu_stats(hypotheses, references, max_n)
    if hyp_len == 0:
        return 0.0
    log_precision = 0.0
    for m, t in zip(matches, totals):
        if m == 0:
            if not smooth:
                return 0.0
            p = 1.0 / (2.0 * max(t, 1))
        else:
            p = m / t
        log_precision += math.log(p)
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(log_precision / max_n)


def perplexity(model: Transformer, examples: Sequence[Example], batch_size: int = 64) -> float:
    if not examples:
        raise MetricError("perplexity of an empty corpus")
    total, count = 0.0, 0
    for batch in batch_iter(examples, batch_size, seed=0, epoch=0, shuffle=False):
        logits = model.logits_for(batch)
        nll, n = nll_sum(logits.data, batch.tgt_out, ignore_index=PAD_ID)
        total += nll
        count += n
    if count == 0:
        raise MetricError("corpus has no target tokens")
    return math.exp(total / count)


def _decode_limit(model: Transformer, max_len: int) -> int:
    if max_len < 0:
        raise ModelInputError(f"max_len must be >= 0, got {max_len}")
    return min(max_len, model.config.max_len - 1)


def greedy_decode(model: Transformer, src: Sequence[int], max_len: int) -> List[int]:
    """Argmax decoding from BOS until EOS or max_len tokens; returns the
    generated ids without BOS/EOS. `src` is EOS-terminated."""
    return greedy_decode_batch(model, [src], max_len)[0]


def greedy_decode_batch(model: Transformer, sources: Sequence[Sequence[int]],
                        max_len: int) -> List[List[int]]:
    if model.config.mode != MODE_TRANSLATION:
        raise ModelInputError("greedy decoding needs a translation-mode model")
    if not sources:
        return []
    width = max(len(s) for s in sources)
    src = np.full((len(sources), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(sources):
        src[i, :len(s)] = s
    memory, src_mask = model.encode(src)
    prefix = np.full((len(sources), 1), BOS_ID, dtype=np.int64)
    done = np.zeros(len(sources), dtype=bool)
    for _ in range(_decode_limit(model, max_len)):
        logits = model.decode(prefix, memory, src_mask)
        step = np.argmax(logits.data[:, -1, :], axis=-1)
        step = np.where(done, PAD_ID, step)
        done |= (step == EOS_ID) | (step == PAD_ID)
        prefix = np.concatenate([prefix, step[:, None]], axis=1)
        if done.all():
            break
    out = []
    for row in prefix[:, 1:]:
        tokens = []
        for tok in row:
            if tok in (EOS_ID, PAD_ID):
                break
            tokens.append(int(tok))
        out.append(tokens)
    return out


def dev_bleu(model: Transformer, examples: Sequence[Example], batch_size: int = 64,
             extra_len: int = 10, smooth: bool = False) -> float:
    """Greedy-decode every source and score against the references."""
    hypotheses, references = [], []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        limit = max(len(ex.src) for ex in chunk) + extra_len
        hypotheses += greedy_decode_batch(model, [ex.src for ex in chunk], limit)
        references += [ex.reference for ex in chunk]
    return corpus_bleu(hypotheses, references, smooth=smooth)

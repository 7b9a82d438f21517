"""
Data tests: vocabulary ordering and round trips, the synthetic task
generators against an independent reference, splits, and batching.
"""

import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from lib.data import (BOS_ID, EOS_ID, LEVEL_CHAR, LEVEL_WORD, PAD_ID, UNK_ID, DataConfigError,
                      DataError, Example, TaskSpec, Vocab, alphabet_symbols, apply_task,
                      batch_iter, build_task, build_vocab, encode_parallel,
                      gen_synthetic_text, gen_synthetic_translation, load_text_corpus,
                      make_batch, split_lines, tokenize, train_dev_split)


def reference_target(task, src, alphabet_size, shift):
    """Independent re-statement of the three translation tasks."""
    symbols = [chr(ord("a") + i) for i in range(alphabet_size)]
    tokens = src.split()
    if task == "copy":
        return " ".join(tokens)
    if task == "reverse":
        return " ".join(reversed(tokens))
    out = []
    for tok in tokens:
        out.append(symbols[(symbols.index(tok) + shift) % alphabet_size])
    out.reverse()
    return " ".join(out)


class TestVocab(unittest.TestCase):
    def test_frequency_then_token_order(self):
        vocab = build_vocab(["ab ab ba"], LEVEL_WORD)
        self.assertEqual(vocab.itos, ["<pad>", "<s>", "</s>", "<unk>", "ab", "ba"])
        chars = build_vocab(["ab ab ba"], LEVEL_CHAR)
        self.assertEqual(chars.itos[4:], ["a", "b", " "])

    def test_reserved_ids(self):
        vocab = build_vocab(["x y"], LEVEL_WORD)
        self.assertEqual((vocab.id("<pad>"), vocab.id("<s>"), vocab.id("</s>"), vocab.id("<unk>")),
                         (PAD_ID, BOS_ID, EOS_ID, UNK_ID))
        self.assertEqual(vocab.id("zzz"), UNK_ID)

    def test_max_size_caps_real_tokens(self):
        vocab = build_vocab(["a a a b b c"], LEVEL_WORD, max_size=2)
        self.assertEqual(vocab.itos[4:], ["a", "b"])
        self.assertEqual(vocab.encode("c a"), [UNK_ID, 4])

    def test_round_trip_and_decode_rules(self):
        vocab = build_vocab(["hello there."], LEVEL_CHAR)
        text = "the hero."
        self.assertEqual(vocab.decode(vocab.encode(text)), text)
        ids = [BOS_ID] + vocab.encode("he") + [EOS_ID] + vocab.encode("ll")
        self.assertEqual(vocab.decode(ids), "he")
        self.assertEqual(vocab.decode([PAD_ID, vocab.id("h")]), "h")

    def test_save_and_load(self):
        vocab = build_vocab(["b a c a"], LEVEL_WORD)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "vocab.txt"
            vocab.save(path)
            self.assertEqual(Vocab.load(path, LEVEL_WORD), vocab)

    def test_errors(self):
        with self.assertRaises(DataError):
            build_vocab([], LEVEL_WORD)
        with self.assertRaises(DataConfigError):
            tokenize("x", "bpe")
        with self.assertRaises(DataError):
            Vocab(["a", "a"], LEVEL_WORD)


class TestSynthetic(unittest.TestCase):
    def test_substitute_shift_example(self):
        self.assertEqual(apply_task("substitute_shift", [0, 2], 3, 1), [0, 1])
        self.assertEqual(reference_target("substitute_shift", "a c", 3, 1), "a b")

    def test_generators_match_reference(self):
        for task in ("copy", "reverse", "substitute_shift"):
            corpus = gen_synthetic_translation(task, 60, (2, 6), 7, seed=3, shift=2)
            for s, t in zip(corpus.src, corpus.tgt):
                self.assertEqual(t, reference_target(task, s, 7, 2), (task, s))

    def test_sources_are_distinct_and_seeded(self):
        a = gen_synthetic_translation("copy", 200, (3, 5), 4, seed=1)
        self.assertEqual(len(set(a.src)), 200)
        self.assertTrue(all(3 <= len(s.split()) <= 5 for s in a.src))
        self.assertEqual(a, gen_synthetic_translation("copy", 200, (3, 5), 4, seed=1))
        self.assertNotEqual(a.src, gen_synthetic_translation("copy", 200, (3, 5), 4, seed=2).src)

    def test_capacity_and_ranges(self):
        with self.assertRaises(DataConfigError):
            gen_synthetic_translation("copy", 3, (1, 1), 2, seed=0)
        with self.assertRaises(DataConfigError):
            gen_synthetic_translation("copy", 3, (4, 2), 5, seed=0)
        with self.assertRaises(DataConfigError):
            gen_synthetic_translation("rot13", 3, (1, 2), 5, seed=0)

    def test_large_alphabets_use_multi_char_symbols(self):
        self.assertEqual(alphabet_symbols(3), ["a", "b", "c"])
        self.assertEqual(alphabet_symbols(30)[29], "s29")

    def test_split_puts_first_pairs_in_dev(self):
        corpus = gen_synthetic_translation("reverse", 10, (2, 3), 5, seed=0)
        train, dev = train_dev_split(corpus, 3)
        self.assertEqual(dev.src, corpus.src[:3])
        self.assertEqual(train.src, corpus.src[3:])
        with self.assertRaises(DataConfigError):
            train_dev_split(corpus, 10)

    def test_text_corpus(self):
        lines = gen_synthetic_text(50, seed=4)
        self.assertEqual(lines, gen_synthetic_text(50, seed=4))
        self.assertTrue(all(line.endswith(".") for line in lines))
        train, dev = split_lines(["a", "b", "a", "c", ""], 1)
        self.assertEqual((train, dev), (["b", "c"], ["a"]))
        with self.assertRaises(DataError):
            split_lines(["a", "a"], 1)
        with self.assertRaises(DataError):
            load_text_corpus("/nonexistent/corpus.txt", 1)

    def test_text_corpus_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "corpus.txt"
            path.write_text("first line\nsecond line\nthird line\n", encoding="utf-8")
            train, dev = load_text_corpus(path, 1)
        self.assertEqual(dev, ["first line"])
        self.assertEqual(train, ["second line", "third line"])


class TestBatching(unittest.TestCase):
    def setUp(self):
        corpus = gen_synthetic_translation("copy", 40, (1, 6), 5, seed=0)
        self.vocab = build_vocab(corpus.src, LEVEL_WORD)
        self.examples = encode_parallel(corpus, self.vocab)

    def test_encoding_framing(self):
        ex = self.examples[0]
        self.assertEqual(ex.src[-1], EOS_ID)
        self.assertEqual((ex.tgt[0], ex.tgt[-1]), (BOS_ID, EOS_ID))
        self.assertEqual(ex.reference, list(ex.tgt[1:-1]))

    def test_padding_and_shift(self):
        batch = make_batch([Example(tgt=(1, 5, 6, 2), src=(5, 2)), Example(tgt=(1, 7, 2), src=(7, 8, 9, 2))])
        np.testing.assert_array_equal(batch.tgt_in, [[1, 5, 6], [1, 7, 2]])
        np.testing.assert_array_equal(batch.tgt_out, [[5, 6, 2], [7, 2, 0]])
        np.testing.assert_array_equal(batch.src, [[5, 2, 0, 0], [7, 8, 9, 2]])
        self.assertEqual(batch.n_target_tokens, 5)
        self.assertEqual(len(batch), 2)
        with self.assertRaises(DataError):
            make_batch([])

    def test_epoch_order_is_seeded(self):
        def order(seed, epoch):
            return [b.tgt_out.tobytes() for b in batch_iter(self.examples, 7, seed, epoch)]

        self.assertEqual(order(1, 1), order(1, 1))
        self.assertNotEqual(order(1, 1), order(1, 2))
        self.assertNotEqual(order(1, 1), order(2, 1))

    def test_epoch_covers_every_target_token_once(self):
        batches = list(batch_iter(self.examples, 7, seed=0, epoch=3))
        self.assertEqual([len(b) for b in batches], [7, 7, 7, 7, 7, 5])
        self.assertEqual(sum(b.n_target_tokens for b in batches),
                         sum(len(ex.tgt) - 1 for ex in self.examples))
        with self.assertRaises(DataConfigError):
            next(batch_iter(self.examples, 0, 0, 1))


class TestTaskSpec(unittest.TestCase):
    def test_build_is_deterministic_and_vocab_is_train_only(self):
        spec = TaskSpec(n_train=50, n_dev=10)
        a, b = build_task(spec), build_task(spec)
        self.assertEqual(a.vocab, b.vocab)
        self.assertEqual(a.train, b.train)
        self.assertEqual((len(a.train), len(a.dev)), (50, 10))
        self.assertLessEqual(len(a.vocab), 4 + spec.alphabet_size)

    def test_language_model_task(self):
        data = build_task(TaskSpec(task="lm_synthetic", n_lines=200, n_dev=20))
        self.assertEqual(data.vocab.level, LEVEL_CHAR)
        self.assertEqual(len(data.dev), 20)
        self.assertIsNone(data.train[0].src)

    def test_spec_validation_and_dict_round_trip(self):
        with self.assertRaises(DataConfigError):
            TaskSpec(task="lm_text")
        with self.assertRaises(DataConfigError):
            TaskSpec(task="summarize")
        spec = TaskSpec(len_range=[2, 4])
        self.assertEqual(spec.len_range, (2, 4))
        self.assertEqual(TaskSpec.from_dict(spec.to_dict()), spec)
        with self.assertRaises(DataConfigError):
            TaskSpec.from_dict({"task": "copy", "noise": 0.1})


if __name__ == "__main__":
    unittest.main()

"""
Model tests: the parameter layout and its tags, a straight-line numpy
forward oracle on a one-layer model, masking/causality, a language
model memorising a short corpus, and a
finite-difference check over every parameter of the toy presets.
"""

import math
import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from lib.data import Example, make_batch
from lib.gradcheck import check_gradients
from lib.model import (ATT_CONTEXT, ATT_SELF, GROUP_ATT, GROUP_EMB, GROUP_FFN, GROUP_OTHER,
                       MODE_LM, SELF_SSRU, SIDE_DECODER, SIDE_ENCODER, ComponentTag,
                       ModelConfig, ModelConfigError, ModelInputError, build_model,
                       model_from_arrays, model_layout, multi_head_attention,
                       sinusoidal_positions, source_ids, ssru)
from lib.optim import AdamConfig, AdamState, adam_step
from lib.tensor_engine import ShapeError, Tape, Tensor, TokenIndexError, backward, cross_entropy
from presets import get_preset

TOY = get_preset("toy-gradcheck").config


def randomize_all(model, seed=0):
    """Give gains/biases non-trivial values so their gradients are exercised."""
    rng = np.random.default_rng(seed)
    for p in model.registry:
        if p.tag.group == GROUP_OTHER:
            p.tensor.data[...] = rng.uniform(-0.5, 0.5, size=p.shape) + (1.0 if "gain" in p.name else 0.0)
    return model


# --- straight-line oracle ---------------------------------------------------

def _ln(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-6) * g + b


def _positions(n, d):
    out = np.zeros((n, d))
    for pos in range(n):
        for i in range(d):
            angle = pos / (10000.0 ** ((2 * (i // 2)) / d))
            out[pos, i] = math.sin(angle) if i % 2 == 0 else math.cos(angle)
    return out


def _att(a, prefix, q_in, kv, mask, heads):
    q = q_in @ a[f"{prefix}.q.weight"].T + a[f"{prefix}.q.bias"]
    k = kv @ a[f"{prefix}.k.weight"].T
    v = kv @ a[f"{prefix}.v.weight"].T + a[f"{prefix}.v.bias"]
    dk, dv = q.shape[1] // heads, v.shape[1] // heads
    outs = []
    for h in range(heads):
        s = q[:, h * dk:(h + 1) * dk] @ k[:, h * dk:(h + 1) * dk].T / math.sqrt(dk)
        s = np.where(mask, s, -np.inf)
        w = np.exp(s - s.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        outs.append(w @ v[:, h * dv:(h + 1) * dv])
    return np.concatenate(outs, axis=1) @ a[f"{prefix}.o.weight"].T + a[f"{prefix}.o.bias"]


def _ffn(a, prefix, x):
    h = np.maximum(x @ a[f"{prefix}.in.weight"].T + a[f"{prefix}.in.bias"], 0.0)
    return h @ a[f"{prefix}.out.weight"].T + a[f"{prefix}.out.bias"]


def oracle_seq2seq(model, src, tgt):
    a = {p.name: p.tensor.data for p in model.registry}
    d, heads = model.config.d_model, model.config.n_heads
    emb = a["emb.weight"]
    x = emb[src] * math.sqrt(d) + _positions(len(src), d)
    full = np.ones((len(src), len(src)), dtype=bool)
    x = x + _att(a, "enc.0.self_att", _ln(x, a["enc.0.self_att.norm.gain"], a["enc.0.self_att.norm.bias"]),
                 _ln(x, a["enc.0.self_att.norm.gain"], a["enc.0.self_att.norm.bias"]), full, heads)
    x = x + _ffn(a, "enc.0.ffn", _ln(x, a["enc.0.ffn.norm.gain"], a["enc.0.ffn.norm.bias"]))
    memory = _ln(x, a["enc.norm.gain"], a["enc.norm.bias"])

    y = emb[tgt] * math.sqrt(d) + _positions(len(tgt), d)
    causal = np.tril(np.ones((len(tgt), len(tgt)), dtype=bool))
    h = _ln(y, a["dec.0.self_att.norm.gain"], a["dec.0.self_att.norm.bias"])
    y = y + _att(a, "dec.0.self_att", h, h, causal, heads)
    h = _ln(y, a["dec.0.ctx_att.norm.gain"], a["dec.0.ctx_att.norm.bias"])
    y = y + _att(a, "dec.0.ctx_att", h, memory, np.ones((len(tgt), len(src)), dtype=bool), heads)
    y = y + _ffn(a, "dec.0.ffn", _ln(y, a["dec.0.ffn.norm.gain"], a["dec.0.ffn.norm.bias"]))
    return _ln(y, a["dec.norm.gain"], a["dec.norm.bias"]) @ emb.T


class TestConfig(unittest.TestCase):
    def test_translation_needs_encoder(self):
        with self.assertRaises(ModelConfigError):
            ModelConfig(vocab_size=10, d_model=8, d_ff=16, n_heads=2, n_enc_layers=0, n_dec_layers=1)

    def test_lm_has_no_encoder(self):
        with self.assertRaises(ModelConfigError):
            ModelConfig(vocab_size=10, d_model=8, d_ff=16, n_heads=2, n_enc_layers=1,
                        n_dec_layers=1, mode=MODE_LM)

    def test_heads_must_divide_width_unless_head_dims_given(self):
        with self.assertRaises(ModelConfigError):
            ModelConfig(vocab_size=10, d_model=10, d_ff=16, n_heads=4, n_enc_layers=1, n_dec_layers=1)
        cfg = ModelConfig(vocab_size=10, d_model=10, d_ff=16, n_heads=4, n_enc_layers=1,
                          n_dec_layers=1, d_kq=3, d_v=2)
        self.assertEqual((cfg.head_dim_kq, cfg.head_dim_v), (3, 2))

    def test_dict_round_trip_rejects_unknown_fields(self):
        self.assertEqual(ModelConfig.from_dict(TOY.to_dict()), TOY)
        with self.assertRaises(ModelConfigError):
            ModelConfig.from_dict({**TOY.to_dict(), "dropout": 0.1})

    def test_tag_validation(self):
        with self.assertRaises(ModelConfigError):
            ComponentTag(GROUP_ATT, SIDE_ENCODER)
        with self.assertRaises(ModelConfigError):
            ComponentTag(GROUP_ATT, SIDE_ENCODER, ATT_CONTEXT)
        self.assertEqual(ComponentTag(GROUP_ATT, SIDE_DECODER, ATT_CONTEXT, 0, "query").label,
                         "ATT/decoder/context/L0/query")


class TestLayout(unittest.TestCase):
    def test_names_and_groups(self):
        layout = {s.name: s for s in model_layout(TOY)}
        self.assertEqual(layout["emb.weight"].shape, (11, 8))
        self.assertEqual(layout["emb.weight"].tag.group, GROUP_EMB)
        self.assertEqual(layout["enc.0.self_att.q.weight"].tag.att_kind, ATT_SELF)
        self.assertEqual(layout["dec.0.ctx_att.o.weight"].tag.att_kind, ATT_CONTEXT)
        self.assertEqual(layout["dec.0.ffn.in.weight"].shape, (16, 8))
        self.assertEqual(layout["dec.0.ffn.in.weight"].tag.group, GROUP_FFN)
        self.assertEqual(layout["dec.0.ffn.in.bias"].tag.group, GROUP_OTHER)
        self.assertEqual(layout["enc.norm.gain"].tag.group, GROUP_OTHER)
        self.assertNotIn("enc.0.self_att.k.bias", layout)

    def test_lm_layout_has_no_encoder_or_context(self):
        cfg = get_preset("desk-lm").config
        names = [s.name for s in model_layout(cfg)]
        self.assertFalse(any(n.startswith("enc.") for n in names))
        self.assertFalse(any(".ctx_att." in n for n in names))

    def test_ssru_is_tagged_decoder_self_attention(self):
        cfg = get_preset("desk-student").config
        tags = {s.name: s.tag for s in model_layout(cfg)}
        self.assertEqual(tags["dec.0.ssru.in.weight"].group, GROUP_ATT)
        self.assertEqual(tags["dec.0.ssru.forget.weight"].att_kind, ATT_SELF)
        self.assertEqual(tags["dec.0.ssru.forget.bias"].group, GROUP_OTHER)
        self.assertNotIn("dec.0.self_att.q.weight", tags)

    def test_reduced_head_dims_shape_projections(self):
        cfg = ModelConfig(vocab_size=20, d_model=16, d_ff=32, n_heads=2, n_enc_layers=1,
                          n_dec_layers=1, d_kq=2, d_v=3)
        layout = {s.name: s for s in model_layout(cfg)}
        self.assertEqual(layout["enc.0.self_att.q.weight"].shape, (4, 16))
        self.assertEqual(layout["enc.0.self_att.v.weight"].shape, (6, 16))
        self.assertEqual(layout["enc.0.self_att.o.weight"].shape, (16, 6))

    def test_build_matches_layout_and_is_seeded(self):
        a, b = build_model(TOY, 3), build_model(TOY, 3)
        self.assertEqual(a.registry.names(), [s.name for s in model_layout(TOY)])
        for pa, pb in zip(a.registry, b.registry):
            self.assertEqual(pa.tensor.data.tobytes(), pb.tensor.data.tobytes())
        c = build_model(TOY, 4)
        self.assertFalse(np.array_equal(a.p("emb.weight").data, c.p("emb.weight").data))

    def test_model_from_arrays_checks_shapes(self):
        arrays = build_model(TOY, 0).registry.snapshot()
        clone = model_from_arrays(TOY, arrays, {"emb.weight": False})
        self.assertFalse(clone.registry["emb.weight"].trainable)
        arrays["emb.weight"] = np.zeros((3, 3))
        with self.assertRaises(ModelConfigError):
            model_from_arrays(TOY, arrays)
        del arrays["emb.weight"]
        with self.assertRaises(ModelConfigError):
            model_from_arrays(TOY, arrays)


class TestForward(unittest.TestCase):
    def setUp(self):
        self.model = randomize_all(build_model(TOY, 1))

    def test_matches_straight_line_oracle(self):
        src, tgt = [4, 7, 5, 2], [1, 9, 6, 8, 3]
        got = self.model.forward_seq2seq(np.array(src), np.array(tgt)).data
        np.testing.assert_allclose(got, oracle_seq2seq(self.model, src, tgt), rtol=0, atol=1e-10)

    def test_batched_equals_single(self):
        src = np.array([[4, 7, 5, 2], [6, 2, 0, 0]])
        tgt = np.array([[1, 9, 6, 8], [1, 5, 0, 0]])
        batched = self.model.forward_seq2seq(src, tgt).data
        single = self.model.forward_seq2seq(np.array([4, 7, 5, 2]), np.array([1, 9, 6, 8])).data
        np.testing.assert_allclose(batched[0], single, rtol=0, atol=1e-12)
        short = self.model.forward_seq2seq(np.array([6, 2]), np.array([1, 5])).data
        np.testing.assert_allclose(batched[1, :2], short, rtol=0, atol=1e-12)

    def test_decoder_is_causal(self):
        src = np.array([4, 7, 5, 2])
        a = self.model.forward_seq2seq(src, np.array([1, 9, 6, 8, 3])).data
        b = self.model.forward_seq2seq(src, np.array([1, 9, 6, 4, 10])).data
        np.testing.assert_allclose(a[:3], b[:3], rtol=0, atol=1e-12)
        self.assertFalse(np.allclose(a[3:], b[3:]))

    def test_ssru_decoder_is_causal(self):
        cfg = ModelConfig(vocab_size=11, d_model=8, d_ff=16, n_heads=2, n_enc_layers=1,
                          n_dec_layers=1, max_len=16, decoder_self=SELF_SSRU)
        model = randomize_all(build_model(cfg, 2))
        src = np.array([4, 7, 2])
        a = model.forward_seq2seq(src, np.array([1, 9, 6, 8])).data
        b = model.forward_seq2seq(src, np.array([1, 9, 5, 5])).data
        np.testing.assert_allclose(a[:2], b[:2], rtol=0, atol=1e-12)

    def test_lm_forward_shape_and_causality(self):
        cfg = ModelConfig(vocab_size=11, d_model=8, d_ff=16, n_heads=2, n_enc_layers=0,
                          n_dec_layers=1, mode=MODE_LM, max_len=16)
        model = build_model(cfg, 0)
        a = model.forward_lm(np.array([1, 4, 5, 6])).data
        b = model.forward_lm(np.array([1, 4, 9, 9])).data
        self.assertEqual(a.shape, (4, 11))
        np.testing.assert_allclose(a[:2], b[:2], rtol=0, atol=1e-12)
        with self.assertRaises(ModelInputError):
            model.encode(np.array([[4, 2]]))

    def test_input_errors(self):
        with self.assertRaises(TokenIndexError):
            self.model.forward_seq2seq(np.array([4, 11]), np.array([1, 2]))
        with self.assertRaises(ModelInputError):
            self.model.forward_seq2seq(np.arange(17) % 10, np.array([1, 2]))
        with self.assertRaises(ModelInputError):
            self.model.forward_seq2seq(np.array([[4, 2]]), np.array([1, 2]))
        with self.assertRaises(ModelInputError):
            self.model.forward_lm(np.array([1, 2]))

    def test_source_ids_appends_eos_once(self):
        self.assertEqual(source_ids([5, 6]), [5, 6, 2])
        self.assertEqual(source_ids([5, 2]), [5, 2])
        self.assertEqual(source_ids([]), [2])

    def test_empty_source_gives_finite_logits(self):
        logits = self.model.forward_seq2seq(np.array(source_ids([])), np.array([1, 9, 6])).data
        self.assertEqual(logits.shape, (3, 11))
        self.assertTrue(np.all(np.isfinite(logits)))

    def test_positions(self):
        pos = sinusoidal_positions(5, 6)
        np.testing.assert_allclose(pos, _positions(5, 6), rtol=0, atol=1e-12)


class TestAttention(unittest.TestCase):
    def test_uniform_scores_average_the_values(self):
        d = 4
        x = Tensor(np.random.default_rng(0).normal(size=(3, d)))
        eye = Tensor(np.eye(d))
        out = multi_head_attention(x, x, x, {"Wq": Tensor(np.zeros((d, d))), "Wk": eye,
                                             "Wv": eye, "Wo": eye}, n_heads=2)
        np.testing.assert_allclose(out.data, np.tile(x.data.mean(axis=0), (3, 1)), atol=1e-12)

    def test_two_heads_against_loop(self):
        rng = np.random.default_rng(8)
        d, heads, dk, dv = 6, 2, 3, 2
        params = {"Wq": rng.normal(size=(heads * dk, d)), "Wk": rng.normal(size=(heads * dk, d)),
                  "Wv": rng.normal(size=(heads * dv, d)), "Wo": rng.normal(size=(d, heads * dv))}
        q_in, kv = rng.normal(size=(4, d)), rng.normal(size=(5, d))
        mask = rng.random((4, 5)) < 0.7
        mask[:, 0] = True
        got = multi_head_attention(Tensor(q_in), Tensor(kv), Tensor(kv),
                                   {k: Tensor(v) for k, v in params.items()}, heads, mask).data
        outs = []
        for h in range(heads):
            q = q_in @ params["Wq"][h * dk:(h + 1) * dk].T
            k = kv @ params["Wk"][h * dk:(h + 1) * dk].T
            v = kv @ params["Wv"][h * dv:(h + 1) * dv].T
            s = np.where(mask, q @ k.T / math.sqrt(dk), -np.inf)
            w = np.exp(s - s.max(axis=1, keepdims=True))
            outs.append((w / w.sum(axis=1, keepdims=True)) @ v)
        np.testing.assert_allclose(got, np.concatenate(outs, axis=1) @ params["Wo"].T, rtol=0, atol=1e-10)

    def test_mask_shape_mismatch(self):
        x = Tensor(np.zeros((3, 4)))
        eye = Tensor(np.eye(4))
        with self.assertRaises(ShapeError):
            multi_head_attention(x, x, x, {"Wq": eye, "Wk": eye, "Wv": eye, "Wo": eye}, 2,
                                 np.ones((2, 2), dtype=bool))

    def test_ssru_matches_recurrence(self):
        rng = np.random.default_rng(2)
        x, w, wf, bf = rng.normal(size=(5, 3)), rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), rng.normal(size=3)
        got = ssru(Tensor(x), Tensor(w), Tensor(wf), Tensor(bf)).data
        c = np.zeros(3)
        expected = []
        for t in range(5):
            f = 1.0 / (1.0 + np.exp(-(wf @ x[t] + bf)))
            c = f * c + (1.0 - f) * (w @ x[t])
            expected.append(np.maximum(c, 0.0))
        np.testing.assert_allclose(got, np.array(expected), rtol=0, atol=1e-12)


class TestLanguageModelOverfit(unittest.TestCase):
    def test_memorises_twenty_tokens(self):
        cfg = ModelConfig(vocab_size=12, d_model=16, d_ff=32, n_heads=2, n_enc_layers=0,
                          n_dec_layers=1, mode=MODE_LM, max_len=32)
        model = build_model(cfg, 0)
        corpus = np.concatenate([[1], np.random.default_rng(4).integers(4, 12, size=20)])
        inputs, targets = corpus[:-1], corpus[1:]
        self.assertEqual(len(targets), 20)
        params = model.registry.trainable()
        state = AdamState.for_parameters(params)
        adam = AdamConfig(learning_rate=1e-2)
        loss = math.inf
        for step in range(1, 501):
            for p in params:
                p.tensor.zero_grad()
            with Tape():
                out = cross_entropy(model.forward_lm(inputs), targets)
                backward(out)
            loss = out.item()
            if loss < 0.1:
                break
            adam_step(params, state, step, adam)
        self.assertLess(loss, 0.1)


class TestGradients(unittest.TestCase):
    BATCH = make_batch([Example(tgt=(1, 5, 6, 7, 2), src=(4, 8, 9, 2)),
                        Example(tgt=(1, 10, 2), src=(5, 2))])

    def assertAllGradientsOk(self, model, batch):
        params = [(p.name, p.tensor) for p in model.registry]
        result = check_gradients(lambda: model.loss(batch), params)
        self.assertLess(result.max_error, 1e-4, f"worst: {result.worst} ({result.max_error:.2e})")

    def test_toy_transformer(self):
        self.assertAllGradientsOk(randomize_all(build_model(TOY, 0)), self.BATCH)

    def test_toy_ssru_decoder(self):
        cfg = ModelConfig(vocab_size=11, d_model=8, d_ff=16, n_heads=2, n_enc_layers=1,
                          n_dec_layers=1, max_len=16, decoder_self=SELF_SSRU)
        self.assertAllGradientsOk(randomize_all(build_model(cfg, 0)), self.BATCH)

    def test_toy_language_model(self):
        cfg = ModelConfig(vocab_size=11, d_model=8, d_ff=16, n_heads=2, n_enc_layers=0,
                          n_dec_layers=1, mode=MODE_LM, max_len=16)
        batch = make_batch([Example(tgt=(1, 5, 6, 7, 2)), Example(tgt=(1, 9, 2))])
        self.assertAllGradientsOk(randomize_all(build_model(cfg, 0)), batch)

    def test_frozen_parameters_get_no_gradient(self):
        model = build_model(TOY, 0)
        for p in model.registry:
            if p.tag.group == GROUP_ATT:
                p.freeze()
        with Tape():
            backward(model.loss(self.BATCH))
        for p in model.registry:
            if p.tag.group == GROUP_ATT:
                self.assertIsNone(p.tensor.grad, p.name)
            else:
                self.assertIsNotNone(p.tensor.grad, p.name)


if __name__ == "__main__":
    unittest.main()

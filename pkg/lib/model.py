"""
Transformer model - parameter layout, registry, forward passes
==============================================================

One place decides what parameters a configuration HAS: `model_layout`
returns an ordered list of shape-only slots, each tagged with the
component it belongs to. `build_model` materialises that list with
seeded Glorot draws; accounting walks the same list without
allocating, which is how the full-size presets get counted.

Architecture (pre-norm):
- Shared embedding E [V, d]: source lookup, target lookup and output
  projection (logits = h · Eᵀ, no output bias). Lookups are scaled by
  sqrt(d) and summed with fixed sinusoidal positions.
- Encoder layer: x + SelfAtt(LN(x)), then x + FFN(LN(x)). Final LN.
- Decoder layer: self sublayer (masked attention, or an SSRU for the
  student preset), context attention over the encoder memory
  (translation only), FFN. Final LN.
- Attention has query/value/output biases. There is no key bias: it
  adds the same constant to every score of a row, so softmax cancels
  it and its gradient is identically zero.

Tag taxonomy:
  EMB   the embedding matrix (side=shared)
  ATT   attention weight matrices (q/k/v/o), plus the SSRU's two
        weight matrices (they are the student decoder's self sublayer)
  FFN   feed-forward weight matrices
  OTHER biases and layer-norm gains/biases; never selected by a
        freeze spec, trainable in every ablation
"""

import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .data import EOS_ID, PAD_ID, Batch
from .tensor_engine import (
    ShapeError, Tensor, TokenIndexError, add, concat, cross_entropy, embedding, layer_norm,
    linear, matmul, mul, narrow, relu, reshape, scale, sigmoid, softmax_rows,
    sub, transpose,
)

logger = logging.getLogger(__name__)

MODE_TRANSLATION = "translation"
MODE_LM = "language_model"
MODES = (MODE_TRANSLATION, MODE_LM)

SELF_ATTENTION = "attention"
SELF_SSRU = "ssru"
DECODER_SELF_KINDS = (SELF_ATTENTION, SELF_SSRU)

GROUP_EMB, GROUP_ATT, GROUP_FFN, GROUP_OTHER = "EMB", "ATT", "FFN", "OTHER"
GROUPS = (GROUP_EMB, GROUP_ATT, GROUP_FFN, GROUP_OTHER)

SIDE_ENCODER, SIDE_DECODER, SIDE_SHARED = "encoder", "decoder", "shared"
ATT_SELF, ATT_CONTEXT = "self", "context"

ROLE_QUERY, ROLE_KEY, ROLE_VALUE, ROLE_OUTPUT = "query", "key", "value", "output"
ROLE_FFN_IN, ROLE_FFN_OUT = "ffn_in", "ffn_out"
ROLE_SSRU_IN, ROLE_SSRU_FORGET = "ssru_in", "ssru_forget"
ROLE_NORM_GAIN, ROLE_NORM_BIAS, ROLE_BIAS = "norm_gain", "norm_bias", "bias"
MATRIX_ROLES = (ROLE_QUERY, ROLE_KEY, ROLE_VALUE, ROLE_OUTPUT, ROLE_FFN_IN,
                ROLE_FFN_OUT, ROLE_SSRU_IN, ROLE_SSRU_FORGET)

INIT_GLOROT, INIT_ZEROS, INIT_ONES = "glorot", "zeros", "ones"

LN_EPS = 1e-6


class ModelConfigError(ValueError):
    """A ModelConfig field is out of range or inconsistent."""


class ModelInputError(ValueError):
    """Model inputs are malformed (too long, wrong mode, bad rank)."""


# ---------------------------------------------------------------------------
# Config and tags
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int
    d_ff: int
    n_heads: int
    n_enc_layers: int
    n_dec_layers: int
    mode: str = MODE_TRANSLATION
    max_len: int = 256
    d_kq: Optional[int] = None
    d_v: Optional[int] = None
    decoder_self: str = SELF_ATTENTION

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "d_ff", "n_heads", "max_len"):
            if getattr(self, name) < 1:
                raise ModelConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_enc_layers < 0 or self.n_dec_layers < 1:
            raise ModelConfigError(
                f"need n_enc_layers >= 0 and n_dec_layers >= 1, got "
                f"{self.n_enc_layers}/{self.n_dec_layers}")
        if self.mode not in MODES:
            raise ModelConfigError(f"unknown mode {self.mode!r} (supported: {', '.join(MODES)})")
        if self.decoder_self not in DECODER_SELF_KINDS:
            raise ModelConfigError(
                f"unknown decoder_self {self.decoder_self!r} (supported: {', '.join(DECODER_SELF_KINDS)})")
        if self.mode == MODE_TRANSLATION and self.n_enc_layers < 1:
            raise ModelConfigError("translation mode needs at least one encoder layer")
        if self.mode == MODE_LM and self.n_enc_layers:
            raise ModelConfigError("language_model mode has no encoder (n_enc_layers must be 0)")
        if (self.d_kq is None or self.d_v is None) and self.d_model % self.n_heads:
            raise ModelConfigError(
                f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}; "
                f"set d_kq and d_v explicitly")
        for name in ("d_kq", "d_v"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ModelConfigError(f"{name} must be >= 1, got {value}")

    @property
    def head_dim_kq(self) -> int:
        return self.d_kq if self.d_kq is not None else self.d_model // self.n_heads

    @property
    def head_dim_v(self) -> int:
        return self.d_v if self.d_v is not None else self.d_model // self.n_heads

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ModelConfigError(f"unknown model config field(s): {', '.join(unknown)}")
        return cls(**data)

    def with_vocab(self, vocab_size: int) -> "ModelConfig":
        return replace(self, vocab_size=vocab_size)


@dataclass(frozen=True)
class ComponentTag:
    group: str
    side: str
    att_kind: Optional[str] = None
    layer_index: Optional[int] = None
    matrix_role: Optional[str] = None

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ModelConfigError(f"unknown group {self.group!r}")
        if (self.group == GROUP_ATT) != (self.att_kind is not None):
            raise ModelConfigError("att_kind is present exactly for ATT tags")
        if self.att_kind == ATT_CONTEXT and self.side != SIDE_DECODER:
            raise ModelConfigError("context attention lives on the decoder side")
        if (self.group == GROUP_EMB) != (self.side == SIDE_SHARED):
            raise ModelConfigError("only the embedding is shared between sides")

    @property
    def label(self) -> str:
        parts = [self.group, self.side]
        if self.att_kind:
            parts.append(self.att_kind)
        if self.layer_index is not None:
            parts.append(f"L{self.layer_index}")
        if self.matrix_role:
            parts.append(self.matrix_role)
        return "/".join(parts)


@dataclass(frozen=True)
class ParamSlot:
    """A parameter before it has values."""

    name: str
    shape: Tuple[int, ...]
    tag: ComponentTag
    init: str = INIT_GLOROT

    @property
    def numel(self) -> int:
        return int(np.prod(self.shape))


@dataclass
class Parameter:
    name: str
    tensor: Tensor
    tag: ComponentTag
    trainable: bool = True

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.tensor.shape

    @property
    def numel(self) -> int:
        return self.tensor.size

    def freeze(self) -> None:
        self.trainable = False
        self.tensor.requires_grad = False
        self.tensor.grad = None


class ParameterRegistry:
    """Name-ordered parameters; iteration order is the layout order."""

    def __init__(self, params: List[Parameter]):
        self._params = list(params)
        self._by_name = {p.name: p for p in self._params}
        if len(self._by_name) != len(self._params):
            raise ModelConfigError("duplicate parameter names in registry")

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def __getitem__(self, name: str) -> Parameter:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def names(self) -> List[str]:
        return [p.name for p in self._params]

    def trainable(self) -> List[Parameter]:
        return [p for p in self._params if p.trainable]

    @property
    def total(self) -> int:
        return sum(p.numel for p in self._params)

    @property
    def n_trainable(self) -> int:
        return sum(p.numel for p in self._params if p.trainable)

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {p.name: p.tensor.data.copy() for p in self._params}

    def restore(self, snapshot: Dict[str, np.ndarray]) -> None:
        for p in self._params:
            p.tensor.data[...] = snapshot[p.name]


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------

def _norm_slots(prefix: str, side: str, layer: Optional[int], d: int) -> List[ParamSlot]:
    return [
        ParamSlot(f"{prefix}.gain", (d,), ComponentTag(GROUP_OTHER, side, None, layer, ROLE_NORM_GAIN), INIT_ONES),
        ParamSlot(f"{prefix}.bias", (d,), ComponentTag(GROUP_OTHER, side, None, layer, ROLE_NORM_BIAS), INIT_ZEROS),
    ]


def _attention_slots(prefix: str, side: str, kind: str, layer: int, cfg: ModelConfig) -> List[ParamSlot]:
    d, h = cfg.d_model, cfg.n_heads
    dk, dv = h * cfg.head_dim_kq, h * cfg.head_dim_v

    def weight(role, shape):
        return ParamSlot(f"{prefix}.{role[0]}.weight", shape, ComponentTag(GROUP_ATT, side, kind, layer, role))

    def bias(role, n):
        return ParamSlot(f"{prefix}.{role[0]}.bias", (n,),
                         ComponentTag(GROUP_OTHER, side, None, layer, ROLE_BIAS), INIT_ZEROS)

    return _norm_slots(f"{prefix}.norm", side, layer, d) + [
        weight(ROLE_QUERY, (dk, d)), bias(ROLE_QUERY, dk),
        weight(ROLE_KEY, (dk, d)),
        weight(ROLE_VALUE, (dv, d)), bias(ROLE_VALUE, dv),
        weight(ROLE_OUTPUT, (d, dv)), bias(ROLE_OUTPUT, d),
    ]


def _ffn_slots(prefix: str, side: str, layer: int, cfg: ModelConfig) -> List[ParamSlot]:
    d, ff = cfg.d_model, cfg.d_ff
    other = ComponentTag(GROUP_OTHER, side, None, layer, ROLE_BIAS)
    return _norm_slots(f"{prefix}.norm", side, layer, d) + [
        ParamSlot(f"{prefix}.in.weight", (ff, d), ComponentTag(GROUP_FFN, side, None, layer, ROLE_FFN_IN)),
        ParamSlot(f"{prefix}.in.bias", (ff,), other, INIT_ZEROS),
        ParamSlot(f"{prefix}.out.weight", (d, ff), ComponentTag(GROUP_FFN, side, None, layer, ROLE_FFN_OUT)),
        ParamSlot(f"{prefix}.out.bias", (d,), other, INIT_ZEROS),
    ]


def _ssru_slots(prefix: str, layer: int, cfg: ModelConfig) -> List[ParamSlot]:
    d = cfg.d_model
    return _norm_slots(f"{prefix}.norm", SIDE_DECODER, layer, d) + [
        ParamSlot(f"{prefix}.in.weight", (d, d),
                  ComponentTag(GROUP_ATT, SIDE_DECODER, ATT_SELF, layer, ROLE_SSRU_IN)),
        ParamSlot(f"{prefix}.forget.weight", (d, d),
                  ComponentTag(GROUP_ATT, SIDE_DECODER, ATT_SELF, layer, ROLE_SSRU_FORGET)),
        ParamSlot(f"{prefix}.forget.bias", (d,),
                  ComponentTag(GROUP_OTHER, SIDE_DECODER, None, layer, ROLE_BIAS), INIT_ZEROS),
    ]


def model_layout(cfg: ModelConfig) -> List[ParamSlot]:
    """Every parameter of `cfg`, in registry order, without values."""
    slots = [ParamSlot("emb.weight", (cfg.vocab_size, cfg.d_model), ComponentTag(GROUP_EMB, SIDE_SHARED))]
    for i in range(cfg.n_enc_layers):
        slots += _attention_slots(f"enc.{i}.self_att", SIDE_ENCODER, ATT_SELF, i, cfg)
        slots += _ffn_slots(f"enc.{i}.ffn", SIDE_ENCODER, i, cfg)
    if cfg.n_enc_layers:
        slots += _norm_slots("enc.norm", SIDE_ENCODER, None, cfg.d_model)
    for i in range(cfg.n_dec_layers):
        if cfg.decoder_self == SELF_SSRU:
            slots += _ssru_slots(f"dec.{i}.ssru", i, cfg)
        else:
            slots += _attention_slots(f"dec.{i}.self_att", SIDE_DECODER, ATT_SELF, i, cfg)
        if cfg.mode == MODE_TRANSLATION:
            slots += _attention_slots(f"dec.{i}.ctx_att", SIDE_DECODER, ATT_CONTEXT, i, cfg)
        slots += _ffn_slots(f"dec.{i}.ffn", SIDE_DECODER, i, cfg)
    slots += _norm_slots("dec.norm", SIDE_DECODER, None, cfg.d_model)
    return slots


def glorot_array(shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Uniform(-a, a), a = sqrt(6 / (rows + cols))."""
    rows, cols = shape
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=shape)


def _initial_value(slot: ParamSlot, rng: np.random.Generator) -> np.ndarray:
    if slot.init == INIT_GLOROT:
        return glorot_array(slot.shape, rng)
    if slot.init == INIT_ONES:
        return np.ones(slot.shape, dtype=np.float64)
    return np.zeros(slot.shape, dtype=np.float64)


def build_model(cfg: ModelConfig, seed: int) -> "Transformer":
    """Fresh model; Glorot draws happen in layout order from one seeded stream."""
    rng = np.random.default_rng(seed)
    params = [Parameter(s.name, Tensor(_initial_value(s, rng), requires_grad=True), s.tag)
              for s in model_layout(cfg)]
    return Transformer(cfg, ParameterRegistry(params))


def model_from_arrays(cfg: ModelConfig, arrays: Dict[str, np.ndarray],
                      trainable: Optional[Dict[str, bool]] = None) -> "Transformer":
    params = []
    for slot in model_layout(cfg):
        if slot.name not in arrays:
            raise ModelConfigError(f"missing values for parameter {slot.name}")
        value = np.array(arrays[slot.name], dtype=np.float64)
        if value.shape != slot.shape:
            raise ModelConfigError(f"{slot.name}: stored shape {value.shape} != layout shape {slot.shape}")
        flag = True if trainable is None else bool(trainable.get(slot.name, True))
        params.append(Parameter(slot.name, Tensor(value, requires_grad=flag), slot.tag, flag))
    return Transformer(cfg, ParameterRegistry(params))


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    rate = np.power(10000.0, -(2 * (np.arange(d) // 2)) / d)
    angles = pos * rate[None, :]
    out = np.empty((length, d), dtype=np.float64)
    out[:, 0::2] = np.sin(angles[:, 0::2])
    out[:, 1::2] = np.cos(angles[:, 1::2])
    return out


def multi_head_attention(q_in: Tensor, k_in: Tensor, v_in: Tensor, params: Dict[str, Tensor],
                         n_heads: int, mask: Optional[np.ndarray] = None) -> Tensor:
    """Scaled dot-product attention over n_heads heads.

    params: Wq [h·d_kq, d], Wk [h·d_kq, d], Wv [h·d_v, d], Wo [d, h·d_v],
    optional biases bq / bv / bo. Inputs are [..., T, d]; mask (True =
    visible) must broadcast to the [..., Tq, Tk] score shape.
    """
    wq, wk, wv, wo = params["Wq"], params["Wk"], params["Wv"], params["Wo"]
    if wq.shape[0] % n_heads or wv.shape[0] % n_heads or wq.shape != wk.shape:
        raise ModelConfigError(
            f"projection shapes Wq {wq.shape} / Wk {wk.shape} / Wv {wv.shape} do not split into {n_heads} heads")
    dk, dv = wq.shape[0] // n_heads, wv.shape[0] // n_heads
    score_shape = q_in.shape[:-1] + (k_in.shape[-2],)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            if np.broadcast_shapes(mask.shape, score_shape) != score_shape:
                raise ValueError
        except ValueError:
            raise ShapeError(f"attention mask {mask.shape} does not match scores {score_shape}")

    q = linear(q_in, wq, params.get("bq"))
    k = linear(k_in, wk, params.get("bk"))
    v = linear(v_in, wv, params.get("bv"))
    factor = 1.0 / math.sqrt(dk)
    heads = []
    for h in range(n_heads):
        qh = narrow(q, -1, h * dk, (h + 1) * dk)
        kh = narrow(k, -1, h * dk, (h + 1) * dk)
        vh = narrow(v, -1, h * dv, (h + 1) * dv)
        weights = softmax_rows(scale(matmul(qh, transpose(kh)), factor), mask)
        heads.append(matmul(weights, vh))
    merged = heads[0] if n_heads == 1 else concat(heads, axis=-1)
    return linear(merged, wo, params.get("bo"))


def ssru(x: Tensor, w_in: Tensor, w_forget: Tensor, b_forget: Tensor) -> Tensor:
    """Simpler simple recurrent unit over x [B, T, d].

    f_t = σ(W_f x_t + b_f); c_t = f_t ⊙ c_{t-1} + (1 - f_t) ⊙ W x_t;
    out_t = relu(c_t), c_0 = 0. Causal by construction.
    """
    f = sigmoid(linear(x, w_forget, b_forget))
    u = linear(x, w_in)
    gated = sub(u, mul(f, u))
    steps = x.shape[-2]
    states = []
    c = None
    for t in range(steps):
        f_t = narrow(f, -2, t, t + 1)
        g_t = narrow(gated, -2, t, t + 1)
        c = g_t if c is None else add(mul(f_t, c), g_t)
        states.append(c)
    return relu(states[0] if steps == 1 else concat(states, axis=-2))


def feed_forward(x: Tensor, w_in: Tensor, b_in: Tensor, w_out: Tensor, b_out: Tensor) -> Tensor:
    return linear(relu(linear(x, w_in, b_in)), w_out, b_out)


# ---------------------------------------------------------------------------
# Transformer
# ---------------------------------------------------------------------------

class Transformer:
    def __init__(self, config: ModelConfig, registry: ParameterRegistry):
        self.config = config
        self.registry = registry
        self._positions = sinusoidal_positions(config.max_len, config.d_model)

    def __repr__(self) -> str:
        c = self.config
        return (f"Transformer(mode={c.mode}, d={c.d_model}, ff={c.d_ff}, heads={c.n_heads}, "
                f"layers={c.n_enc_layers}+{c.n_dec_layers}, params={self.registry.total})")

    def p(self, name: str) -> Tensor:
        return self.registry[name].tensor

    # -- inputs -------------------------------------------------------------

    def _check_ids(self, ids, what: str) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ModelInputError(f"{what} must be [batch, length], got shape {ids.shape}")
        if ids.shape[1] == 0:
            raise ModelInputError(f"{what} is empty")
        if ids.shape[1] > self.config.max_len:
            raise ModelInputError(f"{what} length {ids.shape[1]} exceeds max_len {self.config.max_len}")
        vocab = self.config.vocab_size
        if ids.min() < 0 or ids.max() >= vocab:
            bad = ids[(ids < 0) | (ids >= vocab)].flat[0]
            raise TokenIndexError(f"{what} token id {int(bad)} outside vocabulary of size {vocab}")
        return ids

    def _embed(self, ids: np.ndarray) -> Tensor:
        x = scale(embedding(self.p("emb.weight"), ids), math.sqrt(self.config.d_model))
        return add(x, Tensor(self._positions[:ids.shape[1]]))

    def _attention(self, prefix: str, q_in: Tensor, kv_in: Tensor, mask: np.ndarray) -> Tensor:
        params = {
            "Wq": self.p(f"{prefix}.q.weight"), "bq": self.p(f"{prefix}.q.bias"),
            "Wk": self.p(f"{prefix}.k.weight"),
            "Wv": self.p(f"{prefix}.v.weight"), "bv": self.p(f"{prefix}.v.bias"),
            "Wo": self.p(f"{prefix}.o.weight"), "bo": self.p(f"{prefix}.o.bias"),
        }
        return multi_head_attention(q_in, kv_in, kv_in, params, self.config.n_heads, mask)

    def _norm(self, prefix: str, x: Tensor) -> Tensor:
        return layer_norm(x, self.p(f"{prefix}.gain"), self.p(f"{prefix}.bias"), LN_EPS)

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        h = self._norm(f"{prefix}.norm", x)
        return add(x, feed_forward(h, self.p(f"{prefix}.in.weight"), self.p(f"{prefix}.in.bias"),
                                   self.p(f"{prefix}.out.weight"), self.p(f"{prefix}.out.bias")))

    # -- passes -------------------------------------------------------------

    def encode(self, src) -> Tuple[Tensor, np.ndarray]:
        """Source ids [B, S] -> (memory [B, S, d], key mask [B, S])."""
        if self.config.mode != MODE_TRANSLATION:
            raise ModelInputError("encode() needs a translation-mode model")
        src = self._check_ids(src, "source")
        src_mask = src != PAD_ID
        self_mask = src_mask[:, None, :]
        x = self._embed(src)
        for i in range(self.config.n_enc_layers):
            prefix = f"enc.{i}.self_att"
            h = self._norm(f"{prefix}.norm", x)
            x = add(x, self._attention(prefix, h, h, self_mask))
            x = self._ffn(f"enc.{i}.ffn", x)
        return self._norm("enc.norm", x), src_mask

    def decode(self, tgt_in, memory: Optional[Tensor] = None,
               src_mask: Optional[np.ndarray] = None) -> Tensor:
        """Target prefix ids [B, T] -> logits [B, T, V]."""
        tgt = self._check_ids(tgt_in, "target")
        translation = self.config.mode == MODE_TRANSLATION
        if translation and memory is None:
            raise ModelInputError("translation decoding needs the encoder memory")
        steps = tgt.shape[1]
        causal = np.tril(np.ones((steps, steps), dtype=bool))
        self_mask = causal[None, :, :] & (tgt != PAD_ID)[:, None, :]
        self_mask |= np.eye(steps, dtype=bool)[None]
        x = self._embed(tgt)
        for i in range(self.config.n_dec_layers):
            if self.config.decoder_self == SELF_SSRU:
                prefix = f"dec.{i}.ssru"
                h = self._norm(f"{prefix}.norm", x)
                x = add(x, ssru(h, self.p(f"{prefix}.in.weight"), self.p(f"{prefix}.forget.weight"),
                                self.p(f"{prefix}.forget.bias")))
            else:
                prefix = f"dec.{i}.self_att"
                h = self._norm(f"{prefix}.norm", x)
                x = add(x, self._attention(prefix, h, h, self_mask))
            if translation:
                prefix = f"dec.{i}.ctx_att"
                h = self._norm(f"{prefix}.norm", x)
                x = add(x, self._attention(prefix, h, memory, src_mask[:, None, :]))
            x = self._ffn(f"dec.{i}.ffn", x)
        return linear(self._norm("dec.norm", x), self.p("emb.weight"))

    def forward_seq2seq(self, src, tgt_in) -> Tensor:
        """Logits for every target position. 1-D inputs are treated as a
        batch of one and return [T, V]."""
        single = np.ndim(src) == 1
        if single != (np.ndim(tgt_in) == 1):
            raise ModelInputError("source and target must both be 1-D or both be batched")
        if single:
            src, tgt_in = np.asarray(src)[None], np.asarray(tgt_in)[None]
        memory, src_mask = self.encode(src)
        logits = self.decode(tgt_in, memory, src_mask)
        if single:
            logits = reshape(logits, logits.shape[1:])
        return logits

    def forward_lm(self, tokens) -> Tensor:
        if self.config.mode != MODE_LM:
            raise ModelInputError("forward_lm() needs a language_model-mode model")
        single = np.ndim(tokens) == 1
        if single:
            tokens = np.asarray(tokens)[None]
        logits = self.decode(tokens)
        if single:
            logits = reshape(logits, logits.shape[1:])
        return logits

    def logits_for(self, batch: Batch) -> Tensor:
        if self.config.mode == MODE_TRANSLATION:
            if batch.src is None:
                raise ModelInputError("translation batch has no source side")
            return self.forward_seq2seq(batch.src, batch.tgt_in)
        return self.forward_lm(batch.tgt_in)

    def loss(self, batch: Batch) -> Tensor:
        """Mean token cross-entropy of a batch, PAD excluded."""
        return cross_entropy(self.logits_for(batch), batch.tgt_out, ignore_index=PAD_ID)


def source_ids(tokens: List[int]) -> List[int]:
    """Terminate a source sequence with EOS (idempotent)."""
    tokens = list(tokens)
    if not tokens or tokens[-1] != EOS_ID:
        tokens.append(EOS_ID)
    return tokens

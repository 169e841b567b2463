"""Sequence encoders producing hidden behaviour matrices.

Parameters live in a flat ``name -> Tensor`` dict shared with the rest of
the model; each encoder owns the keys under its prefix (``enc_S.`` etc).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .optim import xavier_init
from .tensor import Tensor

SELF_ATTENTION, GRU = "sasrec", "gru"


@dataclass
class EncoderConfig:
    d: int = 64
    n_blocks: int = 2
    n_heads: int = 1
    max_len: int = 200
    dropout: float = 0.2
    variant: str = SELF_ATTENTION
    residual_layernorm: bool = False

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ValueError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.variant not in (SELF_ATTENTION, GRU):
            raise ValueError(f"unknown encoder variant {self.variant!r}")


@dataclass
class HiddenMatrix:
    values: Tensor        # (B, L, d)
    mask: np.ndarray      # (B, L) bool
    last: np.ndarray      # (B,) index of newest valid row, -1 if none


def init_encoder(prefix: str, vocab_size: int, cfg: EncoderConfig, rng: np.random.Generator,
                 dtype=np.float64) -> dict[str, Tensor]:
    d = cfg.d
    p = {}

    def put(name, arr):
        p[f"{prefix}.{name}"] = Tensor(np.ascontiguousarray(arr, dtype=dtype), requires_grad=True,
                                       name=f"{prefix}.{name}")

    table = xavier_init((vocab_size, d), rng, dtype)
    table[0] = 0.0
    put("item_embed", table)
    put("pos_embed", xavier_init((cfg.max_len, d), rng, dtype))
    if cfg.variant == GRU:
        for gate in ("z", "r", "n"):
            put(f"gru.W{gate}", xavier_init((d, d), rng, dtype))
            put(f"gru.U{gate}", xavier_init((d, d), rng, dtype))
            put(f"gru.b{gate}", np.zeros(d))
        return p
    for b in range(cfg.n_blocks):
        for w in ("Wq", "Wk", "Wv", "w1", "w2"):
            put(f"block{b}.{w}", xavier_init((d, d), rng, dtype))
        put(f"block{b}.b1", np.zeros(d))
        put(f"block{b}.b2", np.zeros(d))
        if cfg.residual_layernorm:
            for ln in ("ln1", "ln2"):
                put(f"block{b}.{ln}.gain", np.ones(d))
                put(f"block{b}.{ln}.bias", np.zeros(d))
    return p


def embed_sequence(ids: np.ndarray, params: dict[str, Tensor], prefix: str) -> Tensor:
    """Item embedding plus position embedding for each (left-padded) slot.

    ``ids`` may be narrower than ``max_len``; it is treated as the rightmost
    columns of a full-width row.
    """
    pos = params[f"{prefix}.pos_embed"]
    L, max_len = ids.shape[-1], pos.shape[0]
    if L > max_len:
        raise ValueError(f"sequence length {L} exceeds max_len {max_len}")
    # right-aligned: the newest slot always takes the last position row
    return tn.embedding(params[f"{prefix}.item_embed"], ids) + pos[max_len - L:]


def attention_mask(mask: np.ndarray) -> np.ndarray:
    """(B, L, L) mask: query i may see key j iff j <= i and j is a real item."""
    L = mask.shape[-1]
    causal = np.tril(np.ones((L, L), dtype=bool))
    return causal[None, :, :] & mask[:, None, :]


def self_attention_block(D: Tensor, params: dict[str, Tensor], key: str, mask: np.ndarray,
                         n_heads: int = 1) -> Tensor:
    """softmax(Q K^T / sqrt(d_head) + causal/pad mask) V.

    Query rows with no visible key (leading pads) come out as zeros.
    """
    B, L, d = D.shape
    Q = D @ params[f"{key}.Wq"]
    K = D @ params[f"{key}.Wk"]
    V = D @ params[f"{key}.Wv"]
    att = attention_mask(mask)
    if n_heads == 1:
        scores = (Q @ tn.swapaxes(K, -1, -2)) * (1.0 / np.sqrt(d))
        w = tn.softmax_masked(scores, att, axis=-1, allow_empty=True)
        return w @ V
    dh = d // n_heads

    def split(x):
        return tn.transpose(x.reshape(B, L, n_heads, dh), (0, 2, 1, 3))

    q, k, v = split(Q), split(K), split(V)
    scores = (q @ tn.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
    w = tn.softmax_masked(scores, att[:, None, :, :], axis=-1, allow_empty=True)
    return tn.transpose(w @ v, (0, 2, 1, 3)).reshape(B, L, d)


def ffn_block(H_hat: Tensor, params: dict[str, Tensor], key: str) -> Tensor:
    """Point-wise ReLU(H w1 + b1) w2 + b2."""
    hidden = tn.relu(H_hat @ params[f"{key}.w1"] + params[f"{key}.b1"])
    return hidden @ params[f"{key}.w2"] + params[f"{key}.b2"]


def encode_sequence(ids: np.ndarray, params: dict[str, Tensor], prefix: str, cfg: EncoderConfig,
                    rng: np.random.Generator | None = None) -> HiddenMatrix:
    """Run the configured encoder over a (B, L) id matrix.

    ``rng`` enables dropout (training); ``None`` means deterministic
    inference.
    """
    ids = np.atleast_2d(ids)
    mask = ids != 0
    if cfg.variant == GRU:
        return gru_encode(ids, params, prefix, rng=rng, dropout=cfg.dropout)
    x = tn.dropout(embed_sequence(ids, params, prefix), cfg.dropout, rng)
    for b in range(cfg.n_blocks):
        key = f"{prefix}.block{b}"
        if cfg.residual_layernorm:
            a = self_attention_block(_ln(x, params, f"{key}.ln1"), params, key, mask, cfg.n_heads)
            x = x + a
            x = x + tn.dropout(ffn_block(_ln(x, params, f"{key}.ln2"), params, key), cfg.dropout, rng)
        else:
            x = self_attention_block(x, params, key, mask, cfg.n_heads)
            x = tn.dropout(ffn_block(x, params, key), cfg.dropout, rng)
    last = np.where(mask.any(axis=1), ids.shape[1] - 1, -1)
    return HiddenMatrix(x, mask, last)


def _ln(x: Tensor, params, key: str) -> Tensor:
    return tn.layer_norm(x, params[f"{key}.gain"], params[f"{key}.bias"])


def gru_encode(ids: np.ndarray, params: dict[str, Tensor], prefix: str,
               rng: np.random.Generator | None = None, dropout: float = 0.0) -> HiddenMatrix:
    """Standard GRU over the valid positions, h_0 = 0; pads carry h forward.

    z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
    n = tanh(x Wn + r * (h Un) + bn), h' = (1 - z) * n + z * h.
    """
    ids = np.atleast_2d(ids)
    mask = ids != 0
    B, L = ids.shape
    g = {k: params[f"{prefix}.gru.{k}"] for k in
         ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wn", "Un", "bn")}
    d = g["Wz"].shape[0]
    x = tn.dropout(embed_sequence(ids, params, prefix), dropout, rng)
    h = Tensor(np.zeros((B, d), dtype=g["Wz"].dtype))
    states = []
    for t in range(L):
        xt = x[:, t, :]
        z = tn.sigmoid(xt @ g["Wz"] + h @ g["Uz"] + g["bz"])
        r = tn.sigmoid(xt @ g["Wr"] + h @ g["Ur"] + g["br"])
        n = tn.tanh(xt @ g["Wn"] + r * (h @ g["Un"]) + g["bn"])
        new = (1.0 - z) * n + z * h
        m = mask[:, t:t + 1].astype(h.dtype)
        h = new * m + h * (1.0 - m)
        states.append(h)
    H = tn.stack(states, axis=1)
    last = np.where(mask.any(axis=1), L - 1, -1)
    return HiddenMatrix(H, mask, last)

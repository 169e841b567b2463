"""Triple cross-domain attention.

Each hidden behaviour is scored by a two-layer PReLU MLP over
``[anchor_t, h, h - anchor_t, h * anchor_t, anchor_m]`` where ``anchor_t`` is
the newest target-domain hidden state and ``anchor_m`` the newest mixed one;
the domain's sequence representation is the softmax-weighted sum of its
valid rows.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tn
from .encoders import HiddenMatrix
from .optim import xavier_init
from .tensor import EmptySupportError, ShapeError, Tensor

PRELU_INIT = 0.25


def init_tca(prefix: str, d: int, rng: np.random.Generator, hidden: int | None = None,
             dtype=np.float64) -> dict[str, Tensor]:
    da = hidden or d

    def t(arr):
        return Tensor(np.ascontiguousarray(arr, dtype=dtype), requires_grad=True)

    return {
        f"{prefix}.W1": t(xavier_init((5 * d, da), rng, dtype)),
        f"{prefix}.b1": t(np.zeros(da)),
        f"{prefix}.a1": t(np.full(1, PRELU_INIT)),
        f"{prefix}.W2": t(xavier_init((da, 1), rng, dtype)),
        f"{prefix}.b2": t(np.zeros(1)),
        f"{prefix}.a2": t(np.full(1, PRELU_INIT)),
    }


def tca_features(anchor_t: Tensor, anchor_m: Tensor, H: Tensor) -> Tensor:
    """(..., L, 5d) scorer input; anchors are (..., d) and broadcast over L."""
    if anchor_t.shape[-1] != H.shape[-1] or anchor_m.shape[-1] != H.shape[-1]:
        raise ShapeError(f"anchor dims {anchor_t.shape}, {anchor_m.shape} vs hidden {H.shape}")
    if H.ndim == anchor_t.ndim + 1:
        anchor_t = tn.reshape(anchor_t, anchor_t.shape[:-1] + (1, anchor_t.shape[-1]))
        anchor_m = tn.reshape(anchor_m, anchor_m.shape[:-1] + (1, anchor_m.shape[-1]))
    at = tn.broadcast_to(anchor_t, H.shape)
    am = tn.broadcast_to(anchor_m, H.shape)
    return tn.concat([at, H, H - at, H * at, am], axis=-1)


def tca_score(anchor_t: Tensor, anchor_m: Tensor, h: Tensor, params: dict[str, Tensor],
              prefix: str = "tca") -> Tensor:
    """Attention logit(s) for hidden row(s) ``h``; trailing axis is d."""
    x = tca_features(anchor_t, anchor_m, h)
    z = tn.prelu(x @ params[f"{prefix}.W1"] + params[f"{prefix}.b1"], params[f"{prefix}.a1"])
    z = tn.prelu(z @ params[f"{prefix}.W2"] + params[f"{prefix}.b2"], params[f"{prefix}.a2"])
    return tn.reshape(z, z.shape[:-1])


def aggregate(H: Tensor, scores: Tensor, mask: np.ndarray, allow_empty: bool = False) -> Tensor:
    """sum_i softmax(scores over valid i) * h_i, batched over leading axes."""
    w = tn.softmax_masked(scores, mask, axis=-1, allow_empty=allow_empty)
    w = tn.reshape(w, w.shape[:-1] + (1, w.shape[-1]))
    out = w @ H
    return tn.reshape(out, out.shape[:-2] + (out.shape[-1],))


def tca_aggregate(hm: HiddenMatrix, anchor_t: Tensor, anchor_m: Tensor, params: dict[str, Tensor],
                  prefix: str = "tca", allow_empty: bool = False) -> Tensor:
    """Sequence representation (B, d) for one domain's hidden matrix.

    Rows without any valid position raise unless ``allow_empty``, which
    yields a zero vector for them.
    """
    if not allow_empty and not hm.mask.any(axis=-1).all():
        raise EmptySupportError("TCA aggregation over a sequence with no valid rows")
    scores = tca_score(anchor_t, anchor_m, hm.values, params, prefix)
    return aggregate(hm.values, scores, hm.mask, allow_empty=True)


def last_hidden(hm: HiddenMatrix) -> Tensor:
    """Newest valid hidden row per sequence; zeros for empty sequences."""
    B = hm.values.shape[0]
    rows = np.arange(B)
    idx = np.where(hm.last >= 0, hm.last, 0)
    out = hm.values[rows, idx, :]
    empty = hm.last < 0
    if empty.any():
        out = out * (~empty)[:, None].astype(out.dtype)
    return out

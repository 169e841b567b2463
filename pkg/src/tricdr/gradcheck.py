"""Central finite-difference checks against tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|)."""
    x = Tensor(np.array(x.data, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        y = f(x)
    backward(tape, y)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x).item()
        flat[i] = old - h
        fm = f(x).item()
        flat[i] = old
        numeric.reshape(-1)[i] = (fp - fm) / (2.0 * h)
    return _rel_err(analytic, numeric)


def check_params(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-6,
                 names: list[str] | None = None) -> dict[str, float]:
    """Finite-difference check of ``loss_fn`` w.r.t. every named parameter.

    ``loss_fn`` must rebuild the graph from ``params`` on each call and be
    deterministic.  Returns the max relative error per parameter.
    """
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for k, p in params.items()}

    out = {}
    for name in names or sorted(params):
        p = params[name]
        flat = p.data.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = loss_fn().item()
            flat[i] = old - h
            fm = loss_fn().item()
            flat[i] = old
            numeric[i] = (fp - fm) / (2.0 * h)
        out[name] = _rel_err(analytic[name].reshape(-1), numeric)
    return out


# ---------------------------------------------------------------------------
# the standard suite: every differentiable primitive plus the full objective


def _tiny_batch(rng: np.random.Generator, B: int, L: int, vocab: dict[str, int], n_neg: int = 2):
    from .corpus import Batch

    ids, mask, last = {}, {}, {}
    for dom in ("S", "T", "M"):
        m = np.ones((B, L), dtype=bool)
        m[0, 0] = False  # one left pad exercises masking
        ids[dom] = np.where(m, rng.integers(1, vocab[dom], size=(B, L)), 0)
        mask[dom], last[dom] = m, np.full(B, L - 1)
    pos = rng.integers(1, vocab["T"], size=B)
    neg = rng.integers(1, vocab["T"], size=(B, n_neg))
    return Batch(ids, mask, last, pos, neg, np.arange(B))


def primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[Tensor], Tensor], np.ndarray]]:
    from . import tensor as tn

    W = Tensor(rng.standard_normal((3, 4)))
    mask = np.array([[True, True, False, True], [False, True, True, True]])
    slope = Tensor(np.array([0.25]))
    other = Tensor(rng.standard_normal((2, 4)))
    return {
        "matmul": (lambda x: tn.tsum(tn.matmul(x, W) ** 2), rng.standard_normal((2, 3))),
        "batched matmul": (lambda x: tn.tsum((x @ tn.swapaxes(x, -1, -2)) ** 2),
                           rng.standard_normal((2, 3, 4))),
        "softmax_masked": (lambda x: tn.tsum(tn.softmax_masked(x, mask) * other),
                           rng.standard_normal((2, 4))),
        "logsumexp_masked": (lambda x: tn.tsum(tn.logsumexp_masked(x, mask)), rng.standard_normal((2, 4))),
        "relu": (lambda x: tn.tsum(tn.relu(x) * other), rng.standard_normal((2, 4))),
        "leaky_relu": (lambda x: tn.tsum(tn.leaky_relu(x, 0.01) * other), rng.standard_normal((2, 4))),
        "prelu": (lambda x: tn.tsum(tn.prelu(x, slope) * other), rng.standard_normal((2, 4))),
        "prelu slope": (lambda a: tn.tsum(tn.prelu(other, a) * other), np.array([0.3])),
        "sigmoid": (lambda x: tn.tsum(tn.sigmoid(x) * other), rng.standard_normal((2, 4))),
        "tanh": (lambda x: tn.tsum(tn.tanh(x) * other), rng.standard_normal((2, 4))),
        "exp/log": (lambda x: tn.tsum(tn.log(tn.exp(x) + 1.0)), rng.standard_normal((2, 4))),
        "div": (lambda x: tn.tsum(other / (x * x + 1.0)), rng.standard_normal((2, 4))),
        "cosine_similarity": (lambda x: tn.tsum(tn.cosine_similarity(x, other)), rng.standard_normal((2, 4))),
        "cosine_matrix": (lambda x: tn.tsum(tn.cosine_matrix(x, other) ** 2), rng.standard_normal((3, 4))),
        "l2_distance": (lambda x: tn.tsum(tn.l2_distance(x, other)), rng.standard_normal((2, 4))),
        "concat/stack": (lambda x: tn.tsum(tn.stack([tn.concat([x, x * 2.0], -1), tn.concat([x * x, x], -1)]) ** 2),
                         rng.standard_normal((2, 2))),
        "getitem/transpose": (lambda x: tn.tsum(tn.transpose(x, (1, 0, 2))[:, 1, :] ** 2),
                              rng.standard_normal((2, 3, 2))),
        "layer_norm": (lambda x: tn.tsum(tn.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4))) * other),
                       rng.standard_normal((2, 4))),
        "clip": (lambda x: tn.tsum(tn.clip(x, -0.5, 0.5) * other), rng.standard_normal((2, 4))),
        "mean/broadcast": (lambda x: tn.tsum(tn.broadcast_to(tn.mean(x, axis=0, keepdims=True), (3, 4)) ** 2),
                           rng.standard_normal((2, 4))),
    }


def tiny_model_cases(seed: int = 0):
    """(name, model, loss_fn) triples at d=4, len=3, |B|=2 with every loss weight positive."""
    from .config import TrainConfig
    from .model import TriCDR

    rng = np.random.default_rng(seed)
    vocab = {"S": 6, "T": 7, "M": 11}
    batch = _tiny_batch(rng, 2, 3, vocab)
    base = TrainConfig(d=4, max_len=3, n_blocks=2, dropout=0.0, lambda_csm=0.5, lambda_fdm=0.7,
                       lambdas=(1.0, 0.8, 0.6), tau=0.5, gamma=5.0, seed=seed, n_neg=2)
    cases = []
    for name, cfg in (("model full loss", base),
                      ("model residual+layernorm", base.replace(residual_layernorm=True)),
                      ("model two heads", base.replace(n_heads=2)),
                      ("model per-domain TCA", base.replace(per_domain_tca=True)),
                      ("model GRU encoders", base.replace(encoder="gru")),
                      ("model w/o TCA", base.replace(use_tca=False))):
        model = TriCDR(cfg, vocab)
        # random non-zero biases so no parameter sits at a trivial point
        for k, p in model.params.items():
            if p.ndim == 1 and not k.endswith((".a1", ".a2")):
                p.data[...] = 0.1 * rng.standard_normal(p.shape)
        cases.append((name, model, lambda m=model: m.forward_full(batch).loss))
    return cases


def run_suite(h: float = 1e-6, seed: int = 0) -> dict[str, float]:
    """Max relative error per check; everything runs at 64-bit."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, (f, x) in primitive_cases(rng).items():
        out[name] = finite_diff_check(f, Tensor(x), h=1e-6)
    for name, model, loss_fn in tiny_model_cases(seed):
        errs = check_params(loss_fn, model.params, h=h)
        out[name] = max(errs.values())
    return out

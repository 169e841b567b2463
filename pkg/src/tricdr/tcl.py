"""Triple contrastive learning: projectors, CSM (InfoNCE) and FDM (triplet margin)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .optim import xavier_init
from .tensor import ContractError, Tensor


@dataclass
class CsmConfig:
    lambdas: tuple[float, float, float] = (1.0, 1.0, 1.0)
    tau: float = 0.1

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if any(l < 0 for l in self.lambdas):
            raise ValueError(f"CSM weights must be >= 0, got {self.lambdas}")


@dataclass
class FdmConfig:
    gamma: float = 0.5

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"margin must be finite and >= 0, got {self.gamma}")


def init_projectors(d: int, rng: np.random.Generator, dtype=np.float64) -> dict[str, Tensor]:
    p = {}
    for dom in ("S", "T", "M"):
        p[f"proj_{dom}.W"] = Tensor(xavier_init((d, d), rng, dtype), requires_grad=True)
        p[f"proj_{dom}.b"] = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
    return p


def project(s: dict[str, Tensor], params: dict[str, Tensor]) -> dict[str, Tensor]:
    """Domain-specific affine maps, no activation."""
    return {dom: v @ params[f"proj_{dom}.W"] + params[f"proj_{dom}.b"] for dom, v in s.items()}


def infonce(anchors: Tensor, positives: Tensor, tau: float) -> Tensor:
    """-sum_i log( exp(sim(a_i,p_i)/tau) / sum_{j != i} exp(sim(a_i,p_j)/tau) ).

    The positive is excluded from the denominator, so the loss can go
    negative.
    """
    n = anchors.shape[0]
    if n < 2:
        raise ContractError("InfoNCE needs a batch of at least 2")
    if positives.shape != anchors.shape:
        raise ContractError(f"anchors {anchors.shape} and positives {positives.shape} differ")
    sim = tn.cosine_matrix(anchors, positives) * (1.0 / tau)
    diag = tn.tsum(sim * np.eye(n), axis=-1)
    off = ~np.eye(n, dtype=bool)
    return tn.tsum(tn.logsumexp_masked(sim, off, axis=-1) - diag)


CSM_PAIRS = (("M", "S"), ("M", "T"), ("S", "T"))


def csm_loss(proj: dict[str, Tensor], cfg: CsmConfig) -> Tensor:
    """lambda1 CL(M,S) + lambda2 CL(M,T) + lambda3 CL(S,T); absent domains skip their pair."""
    total = None
    for lam, (a, b) in zip(cfg.lambdas, CSM_PAIRS):
        if lam == 0 or a not in proj or b not in proj:
            continue
        term = infonce(proj[a], proj[b], cfg.tau) * lam
        total = term if total is None else total + term
    if total is None:
        any_vec = next(iter(proj.values()))
        return tn.tsum(any_vec * 0.0)
    return total


def fdm_loss(proj: dict[str, Tensor], cfg: FdmConfig) -> Tensor:
    """sum_u max(d(S, M) - d(S, T) + gamma, 0) on the raw projected vectors."""
    d_sm = tn.l2_distance(proj["S"], proj["M"])
    d_st = tn.l2_distance(proj["S"], proj["T"])
    return tn.tsum(tn.relu(d_sm - d_st + cfg.gamma))

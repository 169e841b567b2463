"""Multi-seed variant comparisons on one prepared corpus."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig, variant
from .corpus import Corpus
from .metrics import MetricsReport, evaluate_model, fdm_gap, projected_representations
from .trainer import FitResult, fit, pretrain_single_domain

log = logging.getLogger(__name__)


@dataclass
class VariantRun:
    name: str
    seed: int
    report: MetricsReport
    fit: FitResult


@dataclass
class ExperimentResult:
    runs: list[VariantRun] = field(default_factory=list)
    wall_s: float = 0.0

    def ndcg10(self, name: str) -> list[float]:
        return [r.report.ndcg[10] for r in self.runs if r.name == name]

    def mean_ndcg10(self, name: str) -> float:
        return float(np.mean(self.ndcg10(name)))

    def get(self, name: str, seed: int) -> VariantRun:
        return next(r for r in self.runs if r.name == name and r.seed == seed)


def compare_variants(corpus: Corpus, base: TrainConfig, names: list[str], seeds: list[int],
                     split: str = "test") -> ExperimentResult:
    """Train every variant under every seed; pre-training is shared per seed."""
    out = ExperimentResult()
    t0 = time.perf_counter()
    for seed in seeds:
        cfg = base.replace(seed=seed)
        pre = None
        if cfg.pretrain:
            pre = {dom: pretrain_single_domain(dom, corpus, cfg)["params"] for dom in ("S", "T")}
        for name in names:
            res = fit(corpus, variant(cfg, name), pretrained=pre)
            rep = evaluate_model(res.model, corpus, split)
            out.runs.append(VariantRun(name, seed, rep, res))
            log.info("seed %d %-8s N@10 %.4f (best epoch %d)", seed, name, rep.ndcg[10], res.best_epoch)
    out.wall_s = time.perf_counter() - t0
    return out


def fdm_summary(run: VariantRun, corpus: Corpus, split: str = "test") -> dict:
    """Geometry gap on exported projections plus the first/last epoch FDM loss."""
    _, proj = projected_representations(run.fit.model, corpus, split)
    hist = run.fit.history
    first, last = hist[0].l_fdm, hist[-1].l_fdm
    return {"gap": fdm_gap(proj), "fdm_first": first, "fdm_last": last,
            "ratio": last / first if first > 0 else float("nan")}

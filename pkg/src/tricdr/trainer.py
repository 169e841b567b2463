"""Two-step training: single-domain pre-training, transplant, joint fine-tuning."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .config import TrainConfig
from .corpus import SOURCE, TARGET, Corpus, Instance, make_batch, sample_negatives
from .encoders import encode_sequence, init_encoder
from .metrics import evaluate_model
from .model import TriCDR, ctr_loss, read_params, save_checkpoint, write_manifest, write_params
from .optim import AdamState, adam_step, clip_grad_norm, stream
from .tca import last_hidden
from .tensor import ContractError, Tape, Tensor, backward

log = logging.getLogger(__name__)

HISTORY_HEADER = "# epoch\tl_ctr\tl_csm\tl_fdm\ttotal\tvalid_ndcg10\twall_ms"


@dataclass
class EpochStats:
    epoch: int
    l_ctr: float
    l_csm: float
    l_fdm: float
    total: float
    valid_ndcg10: float = float("nan")
    wall_ms: int = 0
    max_grad_norm: float = 0.0

    def line(self) -> str:
        return (f"{self.epoch}\t{self.l_ctr:.10g}\t{self.l_csm:.10g}\t{self.l_fdm:.10g}\t"
                f"{self.total:.10g}\t{self.valid_ndcg10:.10g}\t{self.wall_ms}")


@dataclass
class FitResult:
    model: TriCDR
    history: list[EpochStats]
    best_epoch: int
    best_valid: float
    pretrain: dict = field(default_factory=dict)


class SingleDomainModel:
    """Encoder + newest hidden state as user vector + dot-product scoring."""

    def __init__(self, domain: str, cfg: TrainConfig, vocab_size: int, seed: int):
        self.domain = domain
        self.cfg = cfg
        self.enc_cfg = cfg.encoder_config()
        self.prefix = f"enc_{domain}"
        self.params = init_encoder(self.prefix, vocab_size, self.enc_cfg,
                                   stream(seed, f"init-enc-{domain}"), np.dtype(cfg.dtype))
        for name, t in self.params.items():
            t.name = name

    @property
    def item_table(self) -> Tensor:
        return self.params[f"{self.prefix}.item_embed"]

    def user_repr(self, batch, rng=None) -> Tensor:
        hm = encode_sequence(batch.ids[self.domain], self.params, self.prefix, self.enc_cfg, rng)
        return last_hidden(hm)

    def candidate_scores(self, u: Tensor, items: np.ndarray) -> Tensor:
        E = tn.embedding(self.item_table, items)
        return tn.tsum(tn.reshape(u, (u.shape[0], 1, u.shape[1])) * E, axis=-1)

    def loss(self, batch, rng=None) -> Tensor:
        u = self.user_repr(batch, rng)
        return ctr_loss(self.candidate_scores(u, batch.positive[:, None]),
                        self.candidate_scores(u, batch.negatives))


# ---------------------------------------------------------------------------
# helpers


def _with_negatives(insts: list[Instance], histories: list[set[int]], vocab_size: int, n_neg: int,
                    rng: np.random.Generator) -> list[Instance]:
    return [Instance(x.user, x.view, x.positive,
                     sample_negatives(histories[x.user], n_neg, vocab_size, rng))
            for x in insts]


def _batches(insts: list[Instance], batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(insts))
    for i in range(0, len(order), batch_size):
        yield [insts[j] for j in order[i:i + batch_size]]


def _step(params: dict[str, Tensor], tape: Tape, loss: Tensor, adam: AdamState, max_norm: float) -> float:
    backward(tape, loss)
    grads = {k: p.grad for k, p in params.items() if p.grad is not None}
    norm = clip_grad_norm(grads, max_norm)
    if not np.isfinite(norm):
        raise FloatingPointError("non-finite gradient norm")
    adam_step(params, grads, adam)
    return norm


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def _restore(params: dict[str, Tensor], snap: dict[str, np.ndarray]) -> None:
    for k, arr in snap.items():
        params[k].data = arr.copy()


# ---------------------------------------------------------------------------
# pre-training


def pretrain_single_domain(domain: str, corpus: Corpus, cfg: TrainConfig) -> dict:
    """Train a single-domain next-item model; returns its params and loss trace.

    The target model early-stops on validation NDCG@10, the source model
    (which has no held-out split) on its training loss.
    """
    size = corpus.vocab.size(domain)
    if size - 1 < 2:
        raise ContractError(f"domain {domain} has fewer than 2 items; no negative pool")
    insts = corpus.domain_instances(domain)
    if not insts:
        raise ContractError(f"domain {domain} has no pre-training instances")
    histories = [set(ts.source_items if domain == SOURCE else ts.target_items) for ts in corpus.sequences]
    model = SingleDomainModel(domain, cfg, size, cfg.seed)
    adam = AdamState(lr=cfg.lr)
    losses, valid = [], []
    best, best_snap, bad = -np.inf, _snapshot(model.params), 0
    for epoch in range(1, cfg.pretrain_epochs + 1):
        rng_neg = stream(cfg.seed, f"pretrain-negatives-{domain}", epoch)
        rng_drop = stream(cfg.seed, f"pretrain-dropout-{domain}", epoch)
        epoch_insts = _with_negatives(insts, histories, size, cfg.n_neg, rng_neg)
        total = 0.0
        for chunk in _batches(epoch_insts, cfg.batch_size, stream(cfg.seed, f"pretrain-shuffle-{domain}", epoch)):
            batch = make_batch(chunk, cfg.max_len)
            with Tape() as tape:
                loss = model.loss(batch, rng_drop)
            _step(model.params, tape, loss, adam, cfg.max_grad_norm)
            total += loss.item()
        losses.append(total / len(epoch_insts))
        if domain == TARGET:
            score = evaluate_model(model, corpus, "valid").ndcg[10]
            valid.append(score)
        else:
            score = -losses[-1]
        if score > best:
            best, best_snap, bad = score, _snapshot(model.params), 0
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    _restore(model.params, best_snap)
    return {"params": model.params, "losses": losses, "valid_ndcg10": valid, "model": model}


def init_from_pretrain(pre_s: dict[str, Tensor] | None, pre_t: dict[str, Tensor] | None,
                       model: TriCDR) -> TriCDR:
    """Copy pre-trained source/target encoders into a freshly initialised model."""
    for pre in (pre_s, pre_t):
        if pre is None:
            continue
        for name, t in pre.items():
            if name not in model.params:
                continue
            if model.params[name].shape != t.shape:
                raise ContractError(f"{name}: pre-trained shape {t.shape} vs model {model.params[name].shape}")
            model.params[name].data = t.data.copy()
    if model.cfg.mixed_init == "target" and pre_t is not None and "enc_M.pos_embed" in model.params:
        for name, t in pre_t.items():
            m = name.replace("enc_T.", "enc_M.", 1)
            if m in model.params and "item_embed" not in name:
                model.params[m].data = t.data.copy()
    return model


def save_pretrained(path: str | Path, domain: str, cfg: TrainConfig, params: dict[str, Tensor],
                    losses: list[float], valid: list[float]) -> None:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, {"domain": domain, "fingerprint": cfg.fingerprint(), "seed": cfg.seed,
                         "losses": losses, "valid_ndcg10": valid, "params": write_params(out, params)})


def load_pretrained(path: str | Path, domain: str, cfg: TrainConfig, vocab_size: int) -> dict[str, Tensor]:
    """Read encoder weights written by :func:`save_pretrained`, checked against ``cfg``."""
    src = Path(path)
    with open(src / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest["domain"] != domain:
        raise ContractError(f"{src} holds a {manifest['domain']} encoder, expected {domain}")
    reference = SingleDomainModel(domain, cfg, vocab_size, cfg.seed).params
    return read_params(src, manifest["params"], reference)


# ---------------------------------------------------------------------------
# fine-tuning


def train_epoch(model: TriCDR, corpus: Corpus, cfg: TrainConfig, adam: AdamState, epoch: int,
                instances: list[Instance] | None = None) -> EpochStats:
    """One pass over the training instances in a seed-determined order."""
    insts = instances if instances is not None else corpus.train_instances(cfg.sliding_window)
    histories = [set(ts.target_items) for ts in corpus.sequences]
    size_t = corpus.vocab.size(TARGET)
    epoch_insts = _with_negatives(insts, histories, size_t, cfg.n_neg,
                                  stream(cfg.seed, "train-negatives", epoch))
    rng_drop = stream(cfg.seed, "dropout", epoch)
    sums = np.zeros(4)
    norms = []
    for chunk in _batches(epoch_insts, cfg.batch_size, stream(cfg.seed, "shuffle", epoch)):
        batch = make_batch(chunk, cfg.max_len)
        with Tape() as tape:
            res = model.forward_full(batch, rng_drop)
        norms.append(_step(model.params, tape, res.loss, adam, cfg.max_grad_norm))
        bd = res.breakdown
        sums += [bd.l_ctr, bd.l_csm, bd.l_fdm, bd.total]
    n = len(epoch_insts)
    return EpochStats(epoch, *(sums / n), max_grad_norm=max(norms) if norms else 0.0)


def fit(corpus: Corpus, cfg: TrainConfig, out_dir: str | Path | None = None,
        pretrained: dict | None = None) -> FitResult:
    """Pre-train (unless disabled), transplant, fine-tune with early stopping.

    ``pretrained`` may carry ``{"S": params, "T": params}`` from an earlier
    :func:`pretrain_single_domain` run with the same seed, to share one
    pre-training across several variants.
    """
    vocab_sizes = {d: corpus.vocab.size(d) for d in "STM"}
    model = TriCDR(cfg, vocab_sizes)
    info = {}
    if cfg.pretrain:
        if pretrained is None:
            pretrained = {}
            for dom in ("S", "T"):
                if dom == "T" or dom in cfg.domains:
                    res = pretrain_single_domain(dom, corpus, cfg)
                    pretrained[dom] = res["params"]
                    info[dom] = {"losses": res["losses"], "valid_ndcg10": res["valid_ndcg10"]}
        init_from_pretrain(pretrained.get("S") if "S" in cfg.domains else None,
                           pretrained.get("T"), model)

    insts = corpus.train_instances(cfg.sliding_window)
    if not insts:
        raise ContractError("no training instances")
    adam = AdamState(lr=cfg.lr)
    history: list[EpochStats] = []
    best, best_epoch, bad = -np.inf, 0, 0
    best_snap = _snapshot(model.params)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        st = train_epoch(model, corpus, cfg, adam, epoch, insts)
        st.valid_ndcg10 = evaluate_model(model, corpus, "valid").ndcg[10]
        st.wall_ms = int(round(1000 * (time.perf_counter() - t0)))
        history.append(st)
        log.info("epoch %d total %.4f valid N@10 %.4f", epoch, st.total, st.valid_ndcg10)
        if st.valid_ndcg10 > best:
            best, best_epoch, bad = st.valid_ndcg10, epoch, 0
            best_snap = _snapshot(model.params)
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    _restore(model.params, best_snap)
    result = FitResult(model, history, best_epoch, float(best), info)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def write_outputs(result: FitResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint", result.model,
                    extra={"best_epoch": result.best_epoch, "best_valid_ndcg10": result.best_valid})
    write_history(result.history, out / "history.tsv")


def write_history(history: list[EpochStats], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(HISTORY_HEADER + "\n")
        for st in history:
            fh.write(st.line() + "\n")


def read_history(path: str | Path) -> list[EpochStats]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            e, a, b, c, tot, v, w = line.rstrip("\n").split("\t")
            out.append(EpochStats(int(e), float(a), float(b), float(c), float(tot), float(v), int(w)))
    return out

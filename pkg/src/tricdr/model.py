"""Full tri-domain forward pass: encoders -> TCA -> TCL -> fusion -> scoring."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as tn
from .config import TrainConfig
from .corpus import Batch
from .encoders import HiddenMatrix, encode_sequence, init_encoder
from .optim import stream, xavier_init
from .tca import init_tca, last_hidden, tca_aggregate
from .tcl import csm_loss, fdm_loss, init_projectors, project
from .tensor import ContractError, Tensor

CTR_EPS = 1e-7


@dataclass
class LossBreakdown:
    l_ctr: float
    l_csm: float
    l_fdm: float
    total: float
    lambda_csm: float
    lambda_fdm: float


def ctr_loss(logits_pos: Tensor, logits_neg: Tensor, eps: float = CTR_EPS) -> Tensor:
    """Summed binary cross-entropy on sigmoid probabilities clamped to [eps, 1-eps]."""
    p_pos = tn.clip(tn.sigmoid(logits_pos), eps, 1.0 - eps)
    loss = -tn.tsum(tn.log(p_pos))
    if logits_neg.data.size:
        p_neg = tn.clip(tn.sigmoid(logits_neg), eps, 1.0 - eps)
        loss = loss - tn.tsum(tn.log(1.0 - p_neg))
    return loss


def total_loss(l_ctr, l_csm, l_fdm, lambda_csm: float, lambda_fdm: float):
    if lambda_csm < 0 or lambda_fdm < 0:
        raise ValueError("loss weights must be non-negative")
    return l_ctr + lambda_csm * l_csm + lambda_fdm * l_fdm


def score_item(u, item_embed):
    """Raw dot-product logit; works on Tensors or arrays of matching trailing dim."""
    if isinstance(u, Tensor) or isinstance(item_embed, Tensor):
        return tn.tsum(u * item_embed, axis=-1)
    return np.sum(np.asarray(u) * np.asarray(item_embed), axis=-1)


@dataclass
class ForwardResult:
    loss: Tensor
    breakdown: LossBreakdown
    reprs: dict


class TriCDR:
    """Parameter container plus the forward passes used in training and evaluation."""

    def __init__(self, cfg: TrainConfig, vocab_sizes: dict[str, int], params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.enc_cfg = cfg.encoder_config()
        self.vocab_sizes = dict(vocab_sizes)
        self.dtype = np.dtype(cfg.dtype)
        self.params = params if params is not None else self.init_params(cfg.seed)

    # -- parameters ----------------------------------------------------
    def encoder_domains(self) -> tuple[str, ...]:
        # the target encoder always exists: its item table scores candidates
        return tuple(d for d in "STM" if d in self.cfg.domains or d == "T")

    def init_params(self, seed: int) -> dict[str, Tensor]:
        d, dt = self.cfg.d, self.dtype
        p: dict[str, Tensor] = {}
        for dom in self.encoder_domains():
            p.update(init_encoder(f"enc_{dom}", self.vocab_sizes[dom], self.enc_cfg,
                                  stream(seed, f"init-enc-{dom}"), dt))
        if self.cfg.use_tca:
            if self.cfg.per_domain_tca:
                for dom in self.cfg.domain_order:
                    p.update(init_tca(f"tca_{dom}", d, stream(seed, f"init-tca-{dom}"), dtype=dt))
            else:
                p.update(init_tca("tca", d, stream(seed, "init-tca"), dtype=dt))
        p.update(init_projectors(d, stream(seed, "init-proj"), dt))
        k = len(self.cfg.domain_order)
        rng = stream(seed, "init-fuse")
        p["fuse.W1"] = Tensor(xavier_init((k * d, d), rng, dt), requires_grad=True)
        p["fuse.b1"] = Tensor(np.zeros(d, dtype=dt), requires_grad=True)
        p["fuse.W2"] = Tensor(xavier_init((d, d), rng, dt), requires_grad=True)
        p["fuse.b2"] = Tensor(np.zeros(d, dtype=dt), requires_grad=True)
        for name, t in p.items():
            t.name = name
        return p

    @property
    def item_table(self) -> Tensor:
        return self.params["enc_T.item_embed"]

    # -- pieces ----------------------------------------------------------
    def encode(self, batch: Batch, rng: np.random.Generator | None = None) -> dict[str, HiddenMatrix]:
        out = {}
        for dom in ("S", "T", "M"):
            if dom in self.cfg.domains:
                out[dom] = encode_sequence(batch.ids[dom], self.params, f"enc_{dom}", self.enc_cfg, rng)
        return out

    def sequence_reprs(self, hms: dict[str, HiddenMatrix]) -> dict[str, Tensor]:
        if not self.cfg.use_tca:
            return {dom: last_hidden(hm) for dom, hm in hms.items()}
        anchor_t, anchor_m = last_hidden(hms["T"]), last_hidden(hms["M"])
        out = {}
        for dom, hm in hms.items():
            prefix = f"tca_{dom}" if self.cfg.per_domain_tca else "tca"
            out[dom] = tca_aggregate(hm, anchor_t, anchor_m, self.params, prefix, allow_empty=True)
        return out

    def fuse(self, s: dict[str, Tensor]) -> Tensor:
        """Two-layer MLP over the concatenation in (mixed, source, target) order."""
        x = tn.concat([s[d] for d in self.cfg.domain_order], axis=-1)
        h = tn.leaky_relu(x @ self.params["fuse.W1"] + self.params["fuse.b1"], self.cfg.leaky_slope)
        return h @ self.params["fuse.W2"] + self.params["fuse.b2"]

    def user_repr(self, batch: Batch) -> Tensor:
        return self.fuse(self.sequence_reprs(self.encode(batch)))

    def candidate_scores(self, u: Tensor, items: np.ndarray) -> Tensor:
        """(B, n) logits of items (B, n) under user representations (B, d)."""
        E = tn.embedding(self.item_table, items)
        return score_item(tn.reshape(u, (u.shape[0], 1, u.shape[1])), E)

    # -- full forward ----------------------------------------------------
    def forward_full(self, batch: Batch, rng: np.random.Generator | None = None) -> ForwardResult:
        """Losses and intermediate representations for one batch.

        A contrastive term with zero weight is not evaluated and reports 0,
        so disabling it leaves the remaining terms bitwise unchanged.
        """
        cfg = self.cfg
        hms = self.encode(batch, rng)
        s = self.sequence_reprs(hms)
        proj = project(s, self.params)
        u = self.fuse(s)
        pos = self.candidate_scores(u, batch.positive[:, None])
        neg = self.candidate_scores(u, batch.negatives)
        l_ctr = ctr_loss(pos, neg)

        B = batch.size
        zero = tn.tsum(u * 0.0)
        pairs = [(a, b) for a, b in (("M", "S"), ("M", "T"), ("S", "T")) if a in proj and b in proj]
        l_csm = csm_loss(proj, cfg.csm_config()) if cfg.lambda_csm > 0 and pairs and B >= 2 else zero
        l_fdm = fdm_loss(proj, cfg.fdm_config()) if cfg.lambda_fdm > 0 and len(proj) == 3 else zero

        loss = l_ctr
        if cfg.lambda_csm > 0:
            loss = loss + cfg.lambda_csm * l_csm
        if cfg.lambda_fdm > 0:
            loss = loss + cfg.lambda_fdm * l_fdm
        bd = LossBreakdown(l_ctr=l_ctr.item(), l_csm=l_csm.item(), l_fdm=l_fdm.item(),
                           total=loss.item(), lambda_csm=cfg.lambda_csm, lambda_fdm=cfg.lambda_fdm)
        reprs = {"hidden": hms, "s": s, "proj": proj, "u": u, "logits_pos": pos, "logits_neg": neg}
        return ForwardResult(loss, bd, reprs)


# ---------------------------------------------------------------------------
# checkpoints


def write_params(out: Path, params: dict[str, Tensor]) -> list[dict]:
    """One flat little-endian file per parameter; returns the manifest entries."""
    entries = []
    for name in sorted(params):
        arr = params[name].data
        fname = name.replace("/", "_") + ".bin"
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        (out / fname).write_bytes(np.ascontiguousarray(le).tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name, "file": fname})
    return entries


def read_params(src: Path, entries: list[dict], reference: dict[str, Tensor]) -> dict[str, Tensor]:
    params = {}
    for e in entries:
        dtype = np.dtype(e["dtype"]).newbyteorder("<")
        arr = np.frombuffer((src / e["file"]).read_bytes(), dtype=dtype)
        shape = tuple(e["shape"])
        if arr.size != int(np.prod(shape)):
            raise ContractError(f"{e['name']}: file holds {arr.size} values, manifest says {shape}")
        ref = reference.get(e["name"])
        if ref is None or ref.shape != shape:
            raise ContractError(f"{e['name']}: shape {shape} does not match model "
                                f"{None if ref is None else ref.shape}")
        params[e["name"]] = Tensor(arr.reshape(shape).astype(np.dtype(e["dtype"])), requires_grad=True,
                                   name=e["name"])
    missing = set(reference) - set(params)
    if missing:
        raise ContractError(f"checkpoint lacks parameters: {sorted(missing)}")
    return params


def write_manifest(out: Path, manifest: dict) -> None:
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_checkpoint(path: str | Path, model: TriCDR, extra: dict | None = None) -> None:
    """Manifest plus one flat little-endian float file per parameter."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": asdict(model.cfg),
        "fingerprint": model.cfg.fingerprint(),
        "seed": model.cfg.seed,
        "vocab_sizes": model.vocab_sizes,
        "params": write_params(out, model.params),
    }
    if extra:
        manifest["extra"] = extra
    write_manifest(out, manifest)


def load_checkpoint(path: str | Path, expect_fingerprint: str | None = None,
                    expect_model: TriCDR | None = None) -> TriCDR:
    """Rebuild a model from disk, rejecting fingerprint or shape mismatches."""
    src = Path(path)
    with open(src / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg_dict = manifest["config"]
    cfg_dict["lambdas"] = tuple(cfg_dict["lambdas"])
    cfg = TrainConfig(**cfg_dict)
    if cfg.fingerprint() != manifest["fingerprint"]:
        raise ContractError("checkpoint manifest fingerprint does not match its config")
    if expect_fingerprint is not None and manifest["fingerprint"] != expect_fingerprint:
        raise ContractError(f"checkpoint fingerprint {manifest['fingerprint']} != expected {expect_fingerprint}")
    model = TriCDR(cfg, manifest["vocab_sizes"], params={})
    reference = expect_model.params if expect_model is not None else TriCDR(cfg, manifest["vocab_sizes"]).params
    model.params = read_params(src, manifest["params"], reference)
    return model

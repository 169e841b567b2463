"""Leave-one-out ranking evaluation over 1 positive + sampled negatives."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, make_batch
from .tcl import project

KS = (5, 10, 20, 50)
AUC_NOTE = "sampled: AUC of the positive against the same cached negatives used for ranking"


@dataclass
class RankResult:
    user: int
    rank: int
    ties: int


def rank_from_scores(pos: float, negs: np.ndarray) -> tuple[int, int]:
    """Pessimistic rank: the positive loses every tie."""
    negs = np.asarray(negs)
    above = int(np.sum(negs > pos))
    ties = int(np.sum(negs == pos))
    return 1 + above + ties, ties


def rank_candidates(u: np.ndarray, positive: int, negatives, item_table: np.ndarray,
                    user: int = -1) -> RankResult:
    negatives = np.asarray(negatives)
    cands = np.concatenate([[positive], negatives])
    if len(np.unique(cands)) != len(cands):
        raise ValueError("duplicate candidates (or positive among negatives)")
    scores = item_table[cands] @ np.asarray(u)
    rank, ties = rank_from_scores(scores[0], scores[1:])
    return RankResult(user, rank, ties)


def ndcg_at_k(rank: int, k: int) -> float:
    return 1.0 / np.log2(rank + 1) if rank <= k else 0.0


def hr_at_k(rank: int, k: int) -> float:
    return 1.0 if rank <= k else 0.0


def auc_sampled(pos: float, negs) -> float:
    negs = np.asarray(negs)
    return (float(np.sum(negs < pos)) + 0.5 * float(np.sum(negs == pos))) / len(negs)


@dataclass
class MetricsReport:
    ndcg: dict[int, float]
    hr: dict[int, float]
    auc: float
    n_users: int
    fingerprint: str
    seed: int
    split: str = "test"
    auc_definition: str = AUC_NOTE

    def to_text(self) -> str:
        lines = [f"split: {self.split}", f"users: {self.n_users}",
                 f"fingerprint: {self.fingerprint}", f"seed: {self.seed}"]
        lines += [f"NDCG@{k}: {self.ndcg[k]:.6f}" for k in KS]
        lines += [f"HR@{k}: {self.hr[k]:.6f}" for k in KS]
        lines += [f"AUC: {self.auc:.6f}", f"auc_definition: {self.auc_definition}"]
        return "\n".join(lines) + "\n"

    def to_record(self) -> str:
        rec = {"split": self.split, "users": self.n_users, "fingerprint": self.fingerprint,
               "seed": self.seed, "auc": round(self.auc, 10)}
        rec.update({f"ndcg@{k}": round(self.ndcg[k], 10) for k in KS})
        rec.update({f"hr@{k}": round(self.hr[k], 10) for k in KS})
        return json.dumps(rec, sort_keys=True)

    def write(self, out_dir: str | Path, stem: str | None = None) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or f"metrics_{self.split}"
        txt, rec = out / f"{stem}.txt", out / f"{stem}.jsonl"
        txt.write_text(self.to_text(), encoding="utf-8")
        rec.write_text(self.to_record() + "\n", encoding="utf-8")
        return txt, rec

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        kv = dict(line.split(": ", 1) for line in text.strip().splitlines())
        return cls(ndcg={k: float(kv[f"NDCG@{k}"]) for k in KS},
                   hr={k: float(kv[f"HR@{k}"]) for k in KS}, auc=float(kv["AUC"]),
                   n_users=int(kv["users"]), fingerprint=kv["fingerprint"], seed=int(kv["seed"]),
                   split=kv["split"], auc_definition=kv["auc_definition"])


def summarize(ranks: list[int], aucs: list[float], fingerprint: str = "", seed: int = 0,
              split: str = "test") -> MetricsReport:
    if not ranks:
        raise ValueError("empty split")
    n = len(ranks)
    return MetricsReport(
        ndcg={k: sum(ndcg_at_k(r, k) for r in ranks) / n for k in KS},
        hr={k: sum(hr_at_k(r, k) for r in ranks) / n for k in KS},
        auc=float(sum(aucs) / n), n_users=n, fingerprint=fingerprint, seed=seed, split=split)


def score_split(model, corpus: Corpus, split: str, batch_size: int = 256):
    """(users, candidate scores) with the positive in column 0."""
    insts = corpus.eval_instances(split)
    users, scores = [], []
    for i in range(0, len(insts), batch_size):
        chunk = insts[i:i + batch_size]
        batch = make_batch(chunk, model.cfg.max_len)
        u = model.user_repr(batch)
        cands = np.concatenate([batch.positive[:, None], batch.negatives], axis=1)
        scores.append(model.candidate_scores(u, cands).data)
        users.append(batch.users)
    return np.concatenate(users), np.concatenate(scores)


def evaluate_model(model, corpus: Corpus, split: str = "test", seed: int | None = None,
                   batch_size: int = 256) -> MetricsReport:
    """Rank each user's positive against their cached negatives and average."""
    users, scores = score_split(model, corpus, split, batch_size)
    if len(users) == 0:
        raise ValueError("empty split")
    ranks, aucs = [], []
    for row in scores:
        ranks.append(rank_from_scores(row[0], row[1:])[0])
        aucs.append(auc_sampled(row[0], row[1:]))
    return summarize(ranks, aucs, model.cfg.fingerprint(),
                     model.cfg.seed if seed is None else seed, split)


def projected_representations(model, corpus: Corpus, split: str = "test",
                              batch_size: int = 256) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    insts = corpus.eval_instances(split)
    users, out = [], {d: [] for d in model.cfg.domain_order}
    for i in range(0, len(insts), batch_size):
        batch = make_batch(insts[i:i + batch_size], model.cfg.max_len)
        proj = project(model.sequence_reprs(model.encode(batch)), model.params)
        for d in out:
            out[d].append(proj[d].data)
        users.append(batch.users)
    return np.concatenate(users), {d: np.concatenate(v) for d, v in out.items()}


def export_representations(model, corpus: Corpus, path: str | Path, split: str = "test") -> int:
    """Write ``user<TAB>domain<TAB>coords...`` rows (9 significant digits)."""
    users, proj = projected_representations(model, corpus, split)
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r, u in enumerate(users):
            raw = corpus.users[u]
            for dom in ("S", "T", "M"):
                if dom not in proj:
                    continue
                coords = "\t".join(f"{x:.9g}" for x in proj[dom][r])
                fh.write(f"{raw}\t{dom}\t{coords}\n")
                n += 1
    return n


def read_representations(path: str | Path) -> dict[tuple[str, str], np.ndarray]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            out[(parts[0], parts[1])] = np.array([float(x) for x in parts[2:]])
    return out


def fdm_gap(proj: dict[str, np.ndarray]) -> float:
    """mean over users of d(S, T) - d(S, M) on projected representations."""
    d_st = np.linalg.norm(proj["S"] - proj["T"], axis=1)
    d_sm = np.linalg.norm(proj["S"] - proj["M"], axis=1)
    return float(np.mean(d_st - d_sm))

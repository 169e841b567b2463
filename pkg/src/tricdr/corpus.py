"""Interaction ingestion, triple sequences, leave-one-out splits and batching."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .optim import stream

log = logging.getLogger(__name__)

SOURCE, TARGET = "S", "T"
_DOMAIN_LABELS = {"s": SOURCE, "source": SOURCE, "t": TARGET, "target": TARGET}
DOMAINS = ("S", "T", "M")
PAD = 0


class ParseError(ValueError):
    pass


class PoolTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionRecord:
    user: str
    item: str
    timestamp: int
    domain: str


@dataclass
class TripleSequence:
    """One user's three behaviour sequences.

    ``mixed_items`` live in the mixed vocabulary; ``mixed_local`` holds the
    same events' ids in their own domain's vocabulary so that filtering by
    ``mixed_domains`` reproduces ``source_items`` / ``target_items``.
    """

    user: int
    source_items: list[int]
    source_times: list[int]
    target_items: list[int]
    target_times: list[int]
    mixed_items: list[int]
    mixed_domains: list[str]
    mixed_local: list[int]
    mixed_times: list[int]

    def project(self, domain: str) -> list[int]:
        return [i for i, d in zip(self.mixed_local, self.mixed_domains) if d == domain]

    def before(self, cutoff: int) -> "TripleSequence":
        """View containing only events strictly earlier than ``cutoff``."""
        def cut(items, times):
            k = int(np.searchsorted(times, cutoff, side="left"))
            return list(items[:k]), list(times[:k])

        s, st = cut(self.source_items, self.source_times)
        t, tt = cut(self.target_items, self.target_times)
        k = int(np.searchsorted(self.mixed_times, cutoff, side="left"))
        return TripleSequence(self.user, s, st, t, tt, self.mixed_items[:k],
                              self.mixed_domains[:k], self.mixed_local[:k], self.mixed_times[:k])

    def ids(self, domain: str) -> list[int]:
        return {"S": self.source_items, "T": self.target_items, "M": self.mixed_items}[domain]


@dataclass
class Vocabulary:
    source: dict[str, int]
    target: dict[str, int]
    mixed: dict[str, int]

    def size(self, domain: str) -> int:
        """Table size including the pad row."""
        return len({"S": self.source, "T": self.target, "M": self.mixed}[domain]) + 1

    @staticmethod
    def mixed_key(domain: str, item: str) -> str:
        return f"{domain}:{item}"


@dataclass
class Split:
    train: TripleSequence
    valid_item: int
    valid_time: int
    test_item: int
    test_time: int


@dataclass
class Instance:
    user: int
    view: TripleSequence
    positive: int
    negatives: np.ndarray | None = None


@dataclass
class Batch:
    ids: dict[str, np.ndarray]
    mask: dict[str, np.ndarray]
    last: dict[str, np.ndarray]
    positive: np.ndarray
    negatives: np.ndarray
    users: np.ndarray

    @property
    def size(self) -> int:
        return len(self.users)


# ---------------------------------------------------------------------------
# parsing


def parse_interactions(lines: Iterable[str], domain: str | None = None) -> list[InteractionRecord]:
    """Parse TSV interaction lines.

    With ``domain=None`` each line is ``user, item, timestamp, domain``;
    otherwise lines are ``user, item, timestamp`` and carry ``domain``.
    Blank lines and ``#`` comments are skipped.
    """
    want = 4 if domain is None else 3
    fixed = None if domain is None else _label(domain, 0)
    out = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != want:
            raise ParseError(f"line {lineno}: expected {want} tab-separated fields, got {len(parts)}")
        user, item, ts = parts[0], parts[1], parts[2]
        try:
            t = int(ts)
        except ValueError:
            raise ParseError(f"line {lineno}: timestamp {ts!r} is not an integer") from None
        if t < 0:
            raise ParseError(f"line {lineno}: negative timestamp {t}")
        dom = fixed if fixed is not None else _label(parts[3], lineno)
        out.append(InteractionRecord(user, item, t, dom))
    if not out:
        log.warning("no interactions parsed")
    return out


def _label(s: str, lineno: int) -> str:
    d = _DOMAIN_LABELS.get(s.strip().lower())
    if d is None:
        raise ParseError(f"line {lineno}: unknown domain label {s!r}")
    return d


def read_interactions(path: str | Path, domain: str | None = None) -> list[InteractionRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_interactions(fh, domain)


def write_interactions(records: Sequence[InteractionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.user}\t{r.item}\t{r.timestamp}\t{r.domain}\n")


# ---------------------------------------------------------------------------
# triple sequences


def _event_key(r: InteractionRecord):
    # equal timestamps: source before target, then raw item id
    return (r.timestamp, 0 if r.domain == SOURCE else 1, r.item)


def build_triple_sequences(records: Sequence[InteractionRecord], min_target: int = 3,
                           min_source: int = 1, max_len: int | None = None):
    """Group records into per-user triple sequences.

    Returns ``(sequences, vocab, users, stats)`` where ``users[k]`` is the raw
    id of internal user ``k``.  Users without at least ``min_target`` target
    and ``min_source`` source behaviours are dropped.  ``max_len`` truncates
    each of the three sequences independently to its most recent items; the
    default keeps everything (truncation normally happens at batching).
    """
    by_user: dict[str, list[InteractionRecord]] = {}
    for r in records:
        by_user.setdefault(r.user, []).append(r)

    kept: dict[str, list[InteractionRecord]] = {}
    dropped = 0
    for u, rs in by_user.items():
        # repeated identical events collapse to one
        rs = sorted(set(rs), key=_event_key)
        n_s = sum(r.domain == SOURCE for r in rs)
        n_t = len(rs) - n_s
        if n_s < min_source or n_t < min_target:
            dropped += 1
            continue
        kept[u] = rs
    users = sorted(kept)

    src_items = sorted({r.item for u in users for r in kept[u] if r.domain == SOURCE})
    tgt_items = sorted({r.item for u in users for r in kept[u] if r.domain == TARGET})
    vocab = Vocabulary(
        source={x: i + 1 for i, x in enumerate(src_items)},
        target={x: i + 1 for i, x in enumerate(tgt_items)},
        mixed={},
    )
    mixed_keys = [Vocabulary.mixed_key(SOURCE, x) for x in src_items]
    mixed_keys += [Vocabulary.mixed_key(TARGET, x) for x in tgt_items]
    vocab.mixed = {k: i + 1 for i, k in enumerate(mixed_keys)}

    seqs = []
    for k, u in enumerate(users):
        rs = kept[u]
        local = [(vocab.source if r.domain == SOURCE else vocab.target)[r.item] for r in rs]
        ts = TripleSequence(
            user=k,
            source_items=[l for l, r in zip(local, rs) if r.domain == SOURCE],
            source_times=[r.timestamp for r in rs if r.domain == SOURCE],
            target_items=[l for l, r in zip(local, rs) if r.domain == TARGET],
            target_times=[r.timestamp for r in rs if r.domain == TARGET],
            mixed_items=[vocab.mixed[Vocabulary.mixed_key(r.domain, r.item)] for r in rs],
            mixed_domains=[r.domain for r in rs],
            mixed_local=local,
            mixed_times=[r.timestamp for r in rs],
        )
        if max_len is not None:
            ts = _truncate(ts, max_len)
        seqs.append(ts)
    stats = {"users_in": len(by_user), "users_kept": len(users), "users_dropped": dropped,
             "records": len(records)}
    log.info("built %d triple sequences (%d users dropped)", len(users), dropped)
    return seqs, vocab, users, stats


def _truncate(ts: TripleSequence, max_len: int) -> TripleSequence:
    tail = slice(-max_len, None)
    return TripleSequence(ts.user, ts.source_items[tail], ts.source_times[tail],
                          ts.target_items[tail], ts.target_times[tail], ts.mixed_items[tail],
                          ts.mixed_domains[tail], ts.mixed_local[tail], ts.mixed_times[tail])


def leave_one_out_split(ts: TripleSequence) -> Split:
    """Last target item is the test item, the one before it validation.

    The training view drops every event (any domain) at or after the
    validation item's timestamp.
    """
    if len(ts.target_items) < 3:
        raise ValueError(f"user {ts.user} has fewer than 3 target behaviours")
    valid_time = ts.target_times[-2]
    return Split(train=ts.before(valid_time), valid_item=ts.target_items[-2],
                 valid_time=valid_time, test_item=ts.target_items[-1],
                 test_time=ts.target_times[-1])


# ---------------------------------------------------------------------------
# negatives and batching


def sample_negatives(history: Iterable[int], k: int, vocab_size: int,
                     rng: np.random.Generator) -> np.ndarray:
    """``k`` distinct ids from ``1..vocab_size-1`` outside ``history``."""
    pool = np.setdiff1d(np.arange(1, vocab_size), np.fromiter(history, dtype=np.int64))
    if len(pool) < k:
        raise PoolTooSmallError(f"negative pool has {len(pool)} items, need {k}")
    return rng.choice(pool, size=k, replace=False)


def pad_sequences(seqs: Sequence[Sequence[int]], max_len: int):
    """Left-pad (and left-truncate) to ``max_len``.

    Returns ``(ids, mask, last)``; ``last`` is the index of the newest item,
    which is always ``max_len - 1``, or -1 for an empty row.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids = np.zeros((len(seqs), max_len), dtype=np.int64)
    for r, s in enumerate(seqs):
        s = list(s)[-max_len:]
        if s:
            ids[r, max_len - len(s):] = s
    mask = ids != PAD
    last = np.where(mask.any(axis=1), max_len - 1, -1)
    return ids, mask, last


def unpad(ids_row: np.ndarray) -> list[int]:
    return [int(x) for x in ids_row if x != PAD]


def make_batch(instances: Sequence[Instance], max_len: int, trim: bool = True) -> Batch:
    """Pad every domain's sequences; ``trim`` drops leading all-pad columns.

    Trimming only removes columns no row uses, and positions stay
    right-aligned, so it never changes what the encoder computes for real
    items.
    """
    ids, mask, last = {}, {}, {}
    for dom in DOMAINS:
        seqs = [x.view.ids(dom) for x in instances]
        width = max_len
        if trim:
            width = max(1, min(max_len, max((len(s) for s in seqs), default=1)))
        ids[dom], mask[dom], last[dom] = pad_sequences(seqs, width)
    negs = [x.negatives for x in instances]
    negatives = (np.stack(negs).astype(np.int64) if all(n is not None for n in negs)
                 else np.zeros((len(instances), 0), dtype=np.int64))
    return Batch(ids=ids, mask=mask, last=last,
                 positive=np.array([x.positive for x in instances], dtype=np.int64),
                 negatives=negatives,
                 users=np.array([x.user for x in instances], dtype=np.int64))


# ---------------------------------------------------------------------------
# prepared corpus


@dataclass
class Corpus:
    sequences: list[TripleSequence]
    vocab: Vocabulary
    users: list[str]
    splits: list[Split]
    eval_negatives: dict[str, np.ndarray]
    manifest: dict = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return len(self.sequences)

    def target_history(self, u: int) -> set[int]:
        return set(self.sequences[u].target_items)

    def train_instances(self, sliding_window: bool = False) -> list[Instance]:
        """Next-target-item instances from each user's training view.

        Instances whose source or target history is empty are skipped.
        """
        out = []
        for sp in self.splits:
            tr = sp.train
            ks = range(len(tr.target_items)) if sliding_window else [len(tr.target_items) - 1]
            for k in ks:
                view = tr.before(tr.target_times[k])
                if view.source_items and view.target_items:
                    out.append(Instance(tr.user, view, tr.target_items[k]))
        return out

    def eval_instances(self, split: str) -> list[Instance]:
        if split not in ("valid", "test"):
            raise ValueError(f"unknown split {split!r}")
        negs = self.eval_negatives[split]
        out = []
        for sp in self.splits:
            if split == "valid":
                view, pos = sp.train, sp.valid_item
            else:
                view, pos = self.sequences[sp.train.user].before(sp.test_time), sp.test_item
            out.append(Instance(sp.train.user, view, pos, negs[sp.train.user]))
        return out

    def domain_instances(self, domain: str) -> list[Instance]:
        """Single-domain next-item instances for pre-training.

        The positive is the newest item of that domain in the training view.
        """
        out = []
        for sp in self.splits:
            tr = sp.train
            items = tr.source_items if domain == SOURCE else tr.target_items
            if len(items) < 2:
                continue
            if domain == SOURCE:
                view = TripleSequence(tr.user, items[:-1], tr.source_times[:-1], [], [], [], [], [], [])
            else:
                view = TripleSequence(tr.user, [], [], items[:-1], tr.target_times[:-1], [], [], [], [])
            out.append(Instance(tr.user, view, items[-1]))
        return out


def prepare_corpus(records: Sequence[InteractionRecord], seed: int = 0, n_eval_neg: int = 99,
                   min_target: int = 3, min_source: int = 1) -> Corpus:
    seqs, vocab, users, stats = build_triple_sequences(records, min_target, min_source)
    if not seqs:
        raise ValueError("no users survive filtering")
    splits = [leave_one_out_split(ts) for ts in seqs]
    size_t = vocab.size(TARGET)
    eval_negs = {}
    for code, split in enumerate(("valid", "test")):
        eval_negs[split] = np.stack([
            sample_negatives(ts.target_items, n_eval_neg, size_t, stream(seed, "eval-negatives", code, ts.user))
            for ts in seqs
        ]).astype(np.int64)
    manifest = dict(stats, seed=seed, n_eval_neg=n_eval_neg, min_target=min_target,
                    min_source=min_source, n_source_items=vocab.size(SOURCE) - 1,
                    n_target_items=size_t - 1, n_mixed_items=vocab.size("M") - 1)
    return Corpus(seqs, vocab, users, splits, eval_negs, manifest)


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, mapping in (("source", corpus.vocab.source), ("target", corpus.vocab.target),
                          ("mixed", corpus.vocab.mixed)):
        _write_lines(out / f"vocab_{name}.tsv", (f"{k}\t{v}" for k, v in mapping.items()))
    _write_lines(out / "users.tsv", (f"{raw}\t{k}" for k, raw in enumerate(corpus.users)))
    _write_lines(out / "events.tsv", (
        f"{ts.user}\t{d}\t{loc}\t{mix}\t{t}"
        for ts in corpus.sequences
        for d, loc, mix, t in zip(ts.mixed_domains, ts.mixed_local, ts.mixed_items, ts.mixed_times)
    ))
    for split in ("train", "valid", "test"):
        rows = []
        for sp in corpus.splits:
            u = sp.train.user
            if split == "train":
                rows.append(f"{u}\t{sp.train.target_items[-1]}\t{sp.train.target_times[-1]}")
            else:
                item = sp.valid_item if split == "valid" else sp.test_item
                t = sp.valid_time if split == "valid" else sp.test_time
                negs = ",".join(map(str, corpus.eval_negatives[split][u]))
                rows.append(f"{u}\t{item}\t{t}\t{negs}")
        _write_lines(out / f"split_{split}.tsv", rows)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(corpus.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_corpus(data_dir: str | Path) -> Corpus:
    d = Path(data_dir)
    with open(d / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    vocab = Vocabulary(*(_read_map(d / f"vocab_{n}.tsv") for n in ("source", "target", "mixed")))
    users = [raw for raw, _ in sorted(_read_map(d / "users.tsv").items(), key=lambda kv: kv[1])]
    events: dict[int, list[tuple[str, int, int, int]]] = {}
    for line in _read_lines(d / "events.tsv"):
        u, dom, loc, mix, t = line.split("\t")
        events.setdefault(int(u), []).append((dom, int(loc), int(mix), int(t)))
    seqs = []
    for u in range(len(users)):
        ev = events[u]
        seqs.append(TripleSequence(
            user=u,
            source_items=[e[1] for e in ev if e[0] == SOURCE],
            source_times=[e[3] for e in ev if e[0] == SOURCE],
            target_items=[e[1] for e in ev if e[0] == TARGET],
            target_times=[e[3] for e in ev if e[0] == TARGET],
            mixed_items=[e[2] for e in ev], mixed_domains=[e[0] for e in ev],
            mixed_local=[e[1] for e in ev], mixed_times=[e[3] for e in ev]))
    splits = [leave_one_out_split(ts) for ts in seqs]
    eval_negs = {}
    for split in ("valid", "test"):
        rows = {}
        for line in _read_lines(d / f"split_{split}.tsv"):
            u, _, _, negs = line.split("\t")
            rows[int(u)] = [int(x) for x in negs.split(",")]
        eval_negs[split] = np.array([rows[u] for u in range(len(users))], dtype=np.int64)
    return Corpus(seqs, vocab, users, splits, eval_negs, manifest)


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def _read_lines(path: Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [l.rstrip("\n") for l in fh if l.strip()]


def _read_map(path: Path) -> dict[str, int]:
    out = {}
    for line in _read_lines(path):
        k, v = line.rsplit("\t", 1)
        out[k] = int(v)
    return out


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthConfig:
    n_users: int = 500
    n_source_items: int = 300
    n_target_items: int = 300
    latent_dim: int = 4
    rho: float = 0.8
    source_len: tuple[int, int] = (15, 40)
    target_len: tuple[int, int] = (4, 7)
    sharpness: float = 4.0
    drift: float = 0.0
    seed: int = 0


def generate_synthetic(cfg: SynthConfig, rng: np.random.Generator | None = None) -> list[InteractionRecord]:
    """Cross-domain interactions from correlated latent preferences.

    Each user's preference in domain X is ``rho * c + sqrt(1 - rho^2) * o_X``
    with ``c`` a shared unit vector that random-walks by ``drift`` per event
    and ``o_X`` private to the domain.  Items are picked without replacement
    by softmax over ``sharpness * <item, preference>``; events of the two
    domains are interleaved in random order.
    """
    if not 0.0 <= cfg.rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {cfg.rho}")
    rng = rng if rng is not None else stream(cfg.seed, "synth")
    k = cfg.latent_dim
    items = {SOURCE: rng.standard_normal((cfg.n_source_items, k)),
             TARGET: rng.standard_normal((cfg.n_target_items, k))}
    w_own = np.sqrt(1.0 - cfg.rho ** 2)
    records = []
    for u in range(cfg.n_users):
        common = _unit(rng.standard_normal(k))
        own = {d: _unit(rng.standard_normal(k)) for d in (SOURCE, TARGET)}
        lens = {SOURCE: int(rng.integers(cfg.source_len[0], cfg.source_len[1] + 1)),
                TARGET: int(rng.integers(cfg.target_len[0], cfg.target_len[1] + 1))}
        order = np.array([SOURCE] * lens[SOURCE] + [TARGET] * lens[TARGET])
        rng.shuffle(order)
        seen = {SOURCE: set(), TARGET: set()}
        for t, dom in enumerate(order):
            common = _unit(common + cfg.drift * rng.standard_normal(k) / np.sqrt(k))
            pref = cfg.rho * common + w_own * own[dom]
            logits = cfg.sharpness * items[dom] @ pref
            if seen[dom]:
                logits[list(seen[dom])] = -np.inf
            p = np.exp(logits - logits.max())
            p /= p.sum()
            j = int(rng.choice(len(p), p=p))
            seen[dom].add(j)
            prefix = "s" if dom == SOURCE else "t"
            records.append(InteractionRecord(f"u{u:05d}", f"{prefix}{j:05d}", 10 * t, str(dom)))
    return records


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)

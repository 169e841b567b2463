"""Acceptance criteria A1-A8.

Each test carries ``@pytest.mark.acceptance(<id>)``; the conftest prints one
PASS/FAIL line per criterion at the end of the run.  A5 and A6 share one
multi-seed training run (several minutes on one core).
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from tricdr.cli import main
from tricdr.config import parse_config
from tricdr.corpus import SynthConfig, generate_synthetic, prepare_corpus
from tricdr.experiment import compare_variants, fdm_summary
from tricdr.gradcheck import run_suite
from tricdr.metrics import KS, MetricsReport, auc_sampled, hr_at_k, ndcg_at_k, rank_candidates
from tricdr.model import ctr_loss
from tricdr.tcl import CsmConfig, FdmConfig, csm_loss, fdm_loss, infonce
from tricdr.tensor import Tensor

ROOT = Path(__file__).resolve().parents[1]
TRANSFER_CONF = ROOT / "configs" / "synthetic_transfer.conf"
SEEDS = [0, 1, 2, 3, 4]
TIE_TOL = 0.002


# -- A1 -------------------------------------------------------------------------


@pytest.mark.acceptance("A1")
def test_a1_gradient_suite(record_property):
    t0 = time.perf_counter()
    errs = run_suite()
    wall = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    record_property("detail", f"{len(errs)} checks, max rel err {errs[worst]:.2e} ({worst}), {wall:.1f}s")
    assert any(name == "model full loss" for name in errs)
    assert errs[worst] < 1e-4
    assert wall < 60.0


# -- A2: explicit-loop references -------------------------------------------------


def ref_cos(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def ref_infonce(A, P, tau):
    n, total = len(A), 0.0
    for i in range(n):
        num = ref_cos(A[i], P[i]) / tau
        den = [ref_cos(A[i], P[j]) / tau for j in range(n) if j != i]
        m = max(den)
        total -= num - (m + math.log(sum(math.exp(v - m) for v in den)))
    return total


def ref_csm(proj, lambdas, tau):
    pairs = (("M", "S"), ("M", "T"), ("S", "T"))
    return sum(lam * ref_infonce(proj[a], proj[b], tau) for lam, (a, b) in zip(lambdas, pairs))


def ref_fdm(proj, gamma):
    total = 0.0
    for s, t, m in zip(proj["S"], proj["T"], proj["M"]):
        d_sm = math.sqrt(sum((x - y) ** 2 for x, y in zip(s, m)))
        d_st = math.sqrt(sum((x - y) ** 2 for x, y in zip(s, t)))
        total += max(d_sm - d_st + gamma, 0.0)
    return total


def ref_ctr(pos, neg, eps=1e-7):
    total = 0.0
    for row_p, row_n in zip(pos, neg):
        for z in row_p:
            p = min(max(1.0 / (1.0 + math.exp(-z)), eps), 1 - eps)
            total -= math.log(p)
        for z in row_n:
            p = min(max(1.0 / (1.0 + math.exp(-z)), eps), 1 - eps)
            total -= math.log(1 - p)
    return total


@pytest.mark.acceptance("A2")
def test_a2_loss_oracles(record_property):
    rng = np.random.default_rng(2024)
    n_cases, worst = 1000, {"infonce": 0.0, "csm": 0.0, "fdm": 0.0, "ctr": 0.0}
    for _ in range(n_cases):
        n, d = int(rng.integers(2, 7)), int(rng.integers(1, 6))
        tau = float(rng.choice([0.05, 0.1, 0.5, 1.0, 2.0]))
        lambdas = tuple(float(x) for x in rng.uniform(0, 2, 3))
        gamma = float(rng.uniform(0, 2))
        scale = float(rng.choice([0.1, 1.0, 5.0]))
        proj = {dom: rng.standard_normal((n, d)) * scale for dom in "STM"}
        lists = {k: v.tolist() for k, v in proj.items()}
        tp = {k: Tensor(v) for k, v in proj.items()}

        got = infonce(tp["M"], tp["T"], tau).item()
        worst["infonce"] = max(worst["infonce"], abs(got - ref_infonce(lists["M"], lists["T"], tau)))
        got = csm_loss(tp, CsmConfig(lambdas=lambdas, tau=tau)).item()
        worst["csm"] = max(worst["csm"], abs(got - ref_csm(lists, lambdas, tau)))
        got = fdm_loss(tp, FdmConfig(gamma=gamma)).item()
        worst["fdm"] = max(worst["fdm"], abs(got - ref_fdm(lists, gamma)))

        k = int(rng.integers(1, 5))
        pos, neg = rng.standard_normal((n, 1)) * 4 * scale, rng.standard_normal((n, k)) * 4 * scale
        got = ctr_loss(Tensor(pos), Tensor(neg)).item()
        worst["ctr"] = max(worst["ctr"], abs(got - ref_ctr(pos.tolist(), neg.tolist())))
    record_property("detail", f"{n_cases} instances each; max abs err " +
                    ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert all(v < 1e-6 for v in worst.values()), worst


# -- A3 -------------------------------------------------------------------------------


def oracle_order(scores_pos, scores_neg):
    # full sort, positive after its ties
    cands = [(s, 0) for s in scores_neg] + [(scores_pos, 1)]
    return sorted(cands, key=lambda c: (-c[0], c[1]))


@pytest.mark.acceptance("A3")
def test_a3_metric_oracles(record_property):
    rng = np.random.default_rng(7)
    n_cases, with_ties = 2000, 0
    for case in range(n_cases):
        n = int(rng.integers(2, 21))
        vocab = 30
        coarse = case % 2 == 0
        table = (rng.integers(-2, 3, (vocab, 2)).astype(float) if coarse
                 else rng.standard_normal((vocab, 2)))
        u = rng.integers(-2, 3, 2).astype(float) if coarse else rng.standard_normal(2)
        cands = rng.choice(np.arange(1, vocab), size=n, replace=False)
        sc = table[cands] @ u
        pos, negs = float(sc[0]), [float(x) for x in sc[1:]]
        with_ties += any(x == pos for x in negs)

        order = oracle_order(pos, negs)
        rank = [c[1] for c in order].index(1) + 1
        r = rank_candidates(u, int(cands[0]), cands[1:], table)
        assert r.rank == rank
        for k in (1, 3, 5, 10, 20):
            dcg = sum(rel / math.log2(i + 2) for i, (_, rel) in enumerate(order[:k]))
            assert ndcg_at_k(r.rank, k) == dcg
            assert hr_at_k(r.rank, k) == float(any(rel for _, rel in order[:k]))
        pairwise = sum(1.0 if pos > x else 0.5 if pos == x else 0.0 for x in negs) / len(negs)
        assert auc_sampled(pos, np.array(negs)) == pairwise
    record_property("detail", f"{n_cases} candidate sets of size 2-20, {with_ties} with ties at the positive")
    assert with_ties >= 100


# -- A4 -------------------------------------------------------------------------------


@pytest.mark.acceptance("A4")
def test_a4_data_invariants(record_property):
    records = generate_synthetic(SynthConfig(n_users=1000, n_source_items=150, n_target_items=150,
                                             source_len=(1, 8), target_len=(3, 6), seed=11))
    corpus = prepare_corpus(records, seed=3, n_eval_neg=20)
    assert corpus.n_users == 1000
    by_user = {}
    for r in records:
        by_user.setdefault(r.user, []).append(r)
    n_neg_checked = 0
    for ts, sp, raw in zip(corpus.sequences, corpus.splits, corpus.users):
        # re-projection against the raw events, ordered by time with source first on ties
        events = sorted(set(by_user[raw]), key=lambda r: (r.timestamp, r.domain != "S", r.item))
        assert ts.mixed_items == [corpus.vocab.mixed[f"{r.domain}:{r.item}"] for r in events]
        assert ts.project("S") == ts.source_items == [corpus.vocab.source[r.item] for r in events
                                                      if r.domain == "S"]
        assert ts.project("T") == ts.target_items
        # leakage: nothing at or after the held-out times reaches the inputs
        assert max(sp.train.mixed_times, default=-1) < sp.valid_time < sp.test_time
        assert (sp.valid_item, sp.test_item) == (ts.target_items[-2], ts.target_items[-1])
        hist = set(ts.target_items)
        for split in ("valid", "test"):
            negs = corpus.eval_negatives[split][ts.user].tolist()
            assert len(set(negs)) == 20 and not hist & set(negs) and 0 not in negs
            n_neg_checked += 1
    for split, cut in (("valid", "valid_time"), ("test", "test_time")):
        for inst in corpus.eval_instances(split):
            assert max(inst.view.mixed_times) < getattr(corpus.splits[inst.user], cut)
    for inst in corpus.train_instances(sliding_window=True):
        assert max(inst.view.mixed_times) < corpus.splits[inst.user].valid_time
        assert inst.positive in corpus.splits[inst.user].train.target_items
    record_property("detail", f"1000 users, {n_neg_checked} negative lists checked")


# -- A5 / A6 --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def transfer():
    run_cfg = parse_config(TRANSFER_CONF)
    corpus = prepare_corpus(generate_synthetic(run_cfg.synth_config()), seed=0, n_eval_neg=run_cfg.n_eval_neg)
    assert corpus.n_users == 500
    result = compare_variants(corpus, run_cfg.train_config(), ["T", "w/o TCA", "full"], SEEDS)
    return corpus, result


@pytest.mark.slow
@pytest.mark.acceptance("A5")
def test_a5_transfer_signal(transfer, record_property):
    _, res = transfer
    full, tonly, notca = (res.mean_ndcg10(v) for v in ("full", "T", "w/o TCA"))
    record_property("detail", f"mean test N@10 over {len(SEEDS)} seeds: full {full:.4f}, T {tonly:.4f}, "
                              f"w/o TCA {notca:.4f}; wall {res.wall_s:.0f}s")
    print("per-seed N@10:", {v: [round(x, 4) for x in res.ndcg10(v)] for v in ("T", "w/o TCA", "full")})
    assert full >= tonly
    assert full >= notca - TIE_TOL
    assert res.wall_s < 600.0


@pytest.mark.slow
@pytest.mark.acceptance("A6")
def test_a6_fdm_geometry(transfer, record_property):
    corpus, res = transfer
    s = fdm_summary(res.get("full", SEEDS[0]), corpus)
    record_property("detail", f"gap {s['gap']:.3f} (> 0); FDM epoch 1 {s['fdm_first']:.4f} -> final "
                              f"{s['fdm_last']:.4f}, ratio {s['ratio']:.1%} (<= 10%)")
    assert s["gap"] > 0
    assert s["fdm_last"] <= 0.1 * s["fdm_first"]


# -- A7 -------------------------------------------------------------------------------


SMOKE = ["--d", "8", "--max_len", "12", "--epochs", "3", "--pretrain_epochs", "2", "--batch_size", "32",
         "--n_users", "80", "--n_source_items", "80", "--n_target_items", "150", "--n_eval_neg", "20",
         "--dropout", "0.2", "--seed", "5"]


def _files(d: Path) -> dict[str, bytes]:
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.mark.acceptance("A7")
def test_a7_determinism(tmp_path, record_property):
    assert main(["synth", *SMOKE, "--data_dir", str(tmp_path / "data")]) == 0
    for run in ("a", "b"):
        out = str(tmp_path / run)
        assert main(["train", *SMOKE, "--data_dir", str(tmp_path / "data"), "--out_dir", out]) == 0
        assert main(["evaluate", *SMOKE, "--data_dir", str(tmp_path / "data"), "--out_dir", out]) == 0
    ck_a, ck_b = _files(tmp_path / "a" / "checkpoint"), _files(tmp_path / "b" / "checkpoint")
    reports = ("metrics_test.txt", "metrics_test.jsonl")
    rep_a = {r: (tmp_path / "a" / r).read_bytes() for r in reports}
    rep_b = {r: (tmp_path / "b" / r).read_bytes() for r in reports}
    record_property("detail", f"{len(ck_a)} checkpoint files and {len(reports)} report files compared")
    assert len(ck_a) > 10
    assert ck_a == ck_b
    assert rep_a == rep_b


# -- A8 -------------------------------------------------------------------------------


def _user_style_tsv(path: Path, seed: int = 99) -> None:
    """An interaction log unlike the synthetic generator: string ids, epoch
    seconds, long-form domain labels and popularity-skewed items."""
    rng = np.random.default_rng(seed)
    lines = ["# user\titem\ttimestamp\tdomain"]
    for u in range(150):
        uid = f"A{rng.integers(10**9, 10**10)}X"
        t = int(1_400_000_000 + rng.integers(0, 10**7))
        n_s, n_t = int(rng.integers(1, 12)), int(rng.integers(3, 9))
        for _ in range(n_s + n_t):
            dom = "source" if rng.random() < n_s / (n_s + n_t) else "target"
            item = f"B0{min(int(rng.zipf(1.3)), 400):04d}{'S' if dom == 'source' else 'T'}"
            t += int(rng.integers(60, 86_400))
            lines.append(f"{uid}\t{item}\t{t}\t{dom}")
        for _ in range(3):  # guarantee three target events
            t += int(rng.integers(60, 86_400))
            lines.append(f"{uid}\tB1{int(rng.integers(0, 300)):04d}T\t{t}\ttarget")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@pytest.mark.acceptance("A8")
def test_a8_real_data_smoke(tmp_path, request, record_property):
    src = request.config.getoption("--a8-input")
    path = Path(src) if src else tmp_path / "interactions.tsv"
    if not src:
        _user_style_tsv(path)
    data, out = str(tmp_path / "data"), str(tmp_path / "run")
    small = ["--d", "16", "--max_len", "50", "--epochs", "2", "--pretrain_epochs", "1"]
    assert main(["prepare", "--input", str(path), "--data_dir", data]) == 0
    assert main(["train", *small, "--data_dir", data, "--out_dir", out]) == 0
    assert main(["evaluate", *small, "--data_dir", data, "--out_dir", out]) == 0
    rep = MetricsReport.from_text((Path(out) / "metrics_test.txt").read_text())
    values = [rep.ndcg[k] for k in KS] + [rep.hr[k] for k in KS] + [rep.auc]
    record_property("detail", f"{path.name}: {rep.n_users} users, test N@10 {rep.ndcg[10]:.4f}, "
                              f"AUC {rep.auc:.4f}")
    assert rep.n_users > 0 and rep.fingerprint and rep.auc_definition
    assert all(0.0 <= v <= 1.0 and math.isfinite(v) for v in values)

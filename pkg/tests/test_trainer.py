from types import SimpleNamespace

import numpy as np
import pytest

from tricdr import trainer
from tricdr.config import variant
from tricdr.corpus import InteractionRecord, prepare_corpus
from tricdr.metrics import evaluate_model
from tricdr.model import TriCDR, load_checkpoint
from tricdr.optim import AdamState
from tricdr.tensor import ContractError
from tricdr.trainer import (HISTORY_HEADER, EpochStats, fit, init_from_pretrain, load_pretrained,
                            pretrain_single_domain, read_history, save_pretrained, train_epoch,
                            write_history)


def vocab_sizes(corpus):
    return {d: corpus.vocab.size(d) for d in "STM"}


# -- pre-training --------------------------------------------------------------


def test_pretrain_reduces_training_loss(small_corpus, fast_cfg):
    cfg = fast_cfg(pretrain_epochs=20, patience=100)
    for dom in ("S", "T"):
        res = pretrain_single_domain(dom, small_corpus, cfg)
        assert len(res["losses"]) == 20
        assert res["losses"][-1] < res["losses"][0]


def test_pretrain_deterministic(small_corpus, fast_cfg):
    cfg = fast_cfg(pretrain_epochs=3)
    a = pretrain_single_domain("T", small_corpus, cfg)
    b = pretrain_single_domain("T", small_corpus, cfg)
    assert a["losses"] == b["losses"] and a["valid_ndcg10"] == b["valid_ndcg10"]
    for k in a["params"]:
        np.testing.assert_array_equal(a["params"][k].data, b["params"][k].data)


def test_pretrain_refuses_single_item_domain(fast_cfg):
    recs = []
    for u in range(30):
        for t in range(3):
            recs.append(InteractionRecord(f"u{u}", "only", 10 * t, "S"))
        for t in range(4):
            recs.append(InteractionRecord(f"u{u}", f"t{(u + t) % 40}", 10 * t + 5, "T"))
    corpus = prepare_corpus(recs, n_eval_neg=5)
    assert corpus.vocab.size("S") == 2
    with pytest.raises(ContractError):
        pretrain_single_domain("S", corpus, fast_cfg())


def test_pretrained_weights_round_trip(small_corpus, fast_cfg, tmp_path):
    cfg = fast_cfg(pretrain_epochs=1)
    res = pretrain_single_domain("S", small_corpus, cfg)
    save_pretrained(tmp_path / "S", "S", cfg, res["params"], res["losses"], res["valid_ndcg10"])
    back = load_pretrained(tmp_path / "S", "S", cfg, small_corpus.vocab.size("S"))
    for k, p in res["params"].items():
        np.testing.assert_array_equal(back[k].data, p.data)
    with pytest.raises(ContractError):
        load_pretrained(tmp_path / "S", "T", cfg, small_corpus.vocab.size("T"))
    with pytest.raises(ContractError):
        load_pretrained(tmp_path / "S", "S", cfg.replace(d=16), small_corpus.vocab.size("S"))


# -- transplant ----------------------------------------------------------------


def test_transplant_copies_encoders_bitwise(small_corpus, fast_cfg):
    cfg = fast_cfg(pretrain_epochs=1)
    pre_s = pretrain_single_domain("S", small_corpus, cfg)["params"]
    pre_t = pretrain_single_domain("T", small_corpus, cfg)["params"]
    fresh = TriCDR(cfg, vocab_sizes(small_corpus))
    before = {k: p.data.copy() for k, p in fresh.params.items()}
    model = init_from_pretrain(pre_s, pre_t, fresh)
    for pre in (pre_s, pre_t):
        for k, p in pre.items():
            assert model.params[k].data.tobytes() == p.data.tobytes()
    for k, p in model.params.items():
        if not k.startswith(("enc_S.", "enc_T.")):
            np.testing.assert_array_equal(p.data, before[k])
    # the mixed encoder keeps its own fresh initialisation
    for part in ("pos_embed", "block0.Wq"):
        m = model.params[f"enc_M.{part}"].data
        assert not np.array_equal(m, model.params[f"enc_S.{part}"].data)
        assert not np.array_equal(m, model.params[f"enc_T.{part}"].data)


def test_transplant_mixed_warm_start_option(small_corpus, fast_cfg):
    cfg = fast_cfg(pretrain_epochs=1, mixed_init="target")
    pre_t = pretrain_single_domain("T", small_corpus, cfg)["params"]
    model = init_from_pretrain(None, pre_t, TriCDR(cfg, vocab_sizes(small_corpus)))
    np.testing.assert_array_equal(model.params["enc_M.block1.w2"].data, pre_t["enc_T.block1.w2"].data)
    assert model.params["enc_M.item_embed"].shape != pre_t["enc_T.item_embed"].shape


def test_transplant_rejects_mismatched_width(small_corpus, fast_cfg):
    pre_t = pretrain_single_domain("T", small_corpus, fast_cfg(pretrain_epochs=1, d=4))["params"]
    with pytest.raises(ContractError):
        init_from_pretrain(None, pre_t, TriCDR(fast_cfg(), vocab_sizes(small_corpus)))


# -- epochs ----------------------------------------------------------------------


def test_train_epoch_deterministic(small_corpus, fast_cfg):
    cfg = fast_cfg()
    stats = []
    for _ in range(2):
        model = TriCDR(cfg, vocab_sizes(small_corpus))
        stats.append(train_epoch(model, small_corpus, cfg, AdamState(lr=cfg.lr), 1))
    assert stats[0] == stats[1]


def test_concat_baseline_is_flag_setting(small_corpus, fast_cfg):
    cfg = fast_cfg()
    base = variant(cfg, "S+T+M")
    manual = cfg.replace(use_tca=False, lambda_csm=0.0, lambda_fdm=0.0)
    assert base == manual
    a = train_epoch(TriCDR(base, vocab_sizes(small_corpus)), small_corpus, base, AdamState(lr=cfg.lr), 1)
    b = train_epoch(TriCDR(manual, vocab_sizes(small_corpus)), small_corpus, manual, AdamState(lr=cfg.lr), 1)
    assert a == b and a.total == pytest.approx(a.l_ctr, abs=1e-12)


@pytest.mark.slow
def test_gradients_finite_for_30_epochs(small_corpus, fast_cfg):
    cfg = fast_cfg(lambda_csm=1.0, lambda_fdm=1.0)
    model = TriCDR(cfg, vocab_sizes(small_corpus))
    adam = AdamState(lr=cfg.lr)
    insts = small_corpus.train_instances()
    for epoch in range(1, 31):
        st = train_epoch(model, small_corpus, cfg, adam, epoch, insts)
        assert np.isfinite(st.max_grad_norm) and np.isfinite(st.total)
    assert all(np.all(np.isfinite(p.data)) for p in model.params.values())


# -- fit -------------------------------------------------------------------------


def test_early_stopping_restores_best(small_corpus, fast_cfg, monkeypatch):
    cfg = fast_cfg(pretrain=False, epochs=10, patience=3)
    reference = fit(small_corpus, cfg.replace(epochs=2, patience=50))

    scripted = iter([0.1, 0.3, 0.2, 0.25, 0.3, 0.9, 0.9])
    monkeypatch.setattr(trainer, "evaluate_model",
                        lambda *a, **k: SimpleNamespace(ndcg={10: next(scripted)}))
    res = fit(small_corpus, cfg)
    assert [h.epoch for h in res.history] == [1, 2, 3, 4, 5]
    assert res.best_epoch == 2 and res.best_valid == 0.3
    for k, p in reference.model.params.items():
        np.testing.assert_array_equal(res.model.params[k].data, p.data)


def test_fit_without_pretraining_runs(small_corpus, fast_cfg):
    res = fit(small_corpus, fast_cfg(pretrain=False, epochs=2))
    assert len(res.history) == 2 and res.pretrain == {}
    assert all(np.isfinite(h.total) for h in res.history)


def test_fit_never_returns_worse_than_an_evaluated_epoch(small_corpus, fast_cfg):
    res = fit(small_corpus, fast_cfg(epochs=6, pretrain_epochs=2, patience=2))
    vals = [h.valid_ndcg10 for h in res.history]
    assert res.best_valid == max(vals)
    assert evaluate_model(res.model, small_corpus, "valid").ndcg[10] == pytest.approx(res.best_valid, abs=1e-12)
    assert set(res.pretrain) == {"S", "T"}


def test_fit_is_bitwise_reproducible(small_corpus, fast_cfg, tmp_path):
    cfg = fast_cfg(epochs=2, pretrain_epochs=1, dtype="float32")
    fit(small_corpus, cfg, tmp_path / "a")
    fit(small_corpus, cfg, tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "a" / "checkpoint").iterdir())
    assert "manifest.json" in files
    for name in files:
        assert (tmp_path / "a" / "checkpoint" / name).read_bytes() == \
            (tmp_path / "b" / "checkpoint" / name).read_bytes()
    ha, hb = read_history(tmp_path / "a" / "history.tsv"), read_history(tmp_path / "b" / "history.tsv")
    assert [(h.l_ctr, h.total, h.valid_ndcg10) for h in ha] == [(h.l_ctr, h.total, h.valid_ndcg10) for h in hb]
    model = load_checkpoint(tmp_path / "a" / "checkpoint", expect_fingerprint=cfg.fingerprint())
    assert model.params["fuse.W1"].data.dtype == np.float32


def test_pretrained_values_present_at_fine_tune_start(small_corpus, fast_cfg, monkeypatch):
    cfg = fast_cfg(pretrain_epochs=1, epochs=1)
    pre = {d: pretrain_single_domain(d, small_corpus, cfg)["params"] for d in "ST"}
    seen = {}
    real = trainer.train_epoch

    def spy(model, *a, **k):
        seen.update({n: p.data.copy() for n, p in model.params.items()})
        return real(model, *a, **k)

    monkeypatch.setattr(trainer, "train_epoch", spy)
    fit(small_corpus, cfg, pretrained=pre)
    for d in "ST":
        for k, p in pre[d].items():
            assert seen[k].tobytes() == p.data.tobytes()


# -- history ---------------------------------------------------------------------


def test_history_format_round_trip(tmp_path):
    hist = [EpochStats(1, 0.5, 1.25, 0.0, 0.625, 0.1875, 12),
            EpochStats(2, 0.25, 1.0, 0.125, 0.375, 0.25, 9)]
    write_history(hist, tmp_path / "h.tsv")
    lines = (tmp_path / "h.tsv").read_text().splitlines()
    assert lines[0] == HISTORY_HEADER
    assert lines[1].split("\t") == ["1", "0.5", "1.25", "0", "0.625", "0.1875", "12"]
    assert len(lines) == 3
    back = read_history(tmp_path / "h.tsv")
    assert [(h.epoch, h.l_ctr, h.l_csm, h.l_fdm, h.total, h.valid_ndcg10, h.wall_ms) for h in back] == \
        [(h.epoch, h.l_ctr, h.l_csm, h.l_fdm, h.total, h.valid_ndcg10, h.wall_ms) for h in hist]

"""Command-line entry point: ``tricdr <command> [--config FILE] [--key value ...]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .config import ConfigError, RunConfig, dump_config, parse_config, variant
from .corpus import (ParseError, PoolTooSmallError, generate_synthetic, load_corpus, prepare_corpus,
                     read_interactions, save_corpus, write_interactions)
from .gradcheck import run_suite
from .metrics import KS, evaluate_model, export_representations
from .model import load_checkpoint
from .tensor import ContractError, ShapeError
from .trainer import fit, load_pretrained, pretrain_single_domain, save_pretrained

log = logging.getLogger("tricdr")

COMMANDS = ("prepare", "synth", "pretrain", "train", "evaluate", "export-repr", "gradcheck", "ablate")
GRADCHECK_TOL = 1e-4


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tricdr", description="Tri-domain cross-domain sequential recommendation")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="key = value file; flags override it")
    ap.add_argument("-v", "--verbose", action="store_true")
    for f in fields(RunConfig):
        ap.add_argument(f"--{f.name}", f"--{f.name.replace('_', '-')}", dest=f.name, default=None,
                        metavar="VALUE")
    return ap


def _records(cfg: RunConfig):
    if cfg.input:
        return read_interactions(cfg.input)
    if cfg.source_input and cfg.target_input:
        return read_interactions(cfg.source_input, "S") + read_interactions(cfg.target_input, "T")
    raise ConfigError("prepare needs --input (4 columns) or --source_input and --target_input")


def _save(corpus, cfg: RunConfig) -> None:
    save_corpus(corpus, cfg.data_dir)
    print(f"corpus: {len(corpus.sequences)} users -> {cfg.data_dir}")


def cmd_prepare(cfg: RunConfig) -> None:
    corpus = prepare_corpus(_records(cfg), cfg.seed, cfg.n_eval_neg, cfg.min_target, cfg.min_source)
    _save(corpus, cfg)


def cmd_synth(cfg: RunConfig) -> None:
    records = generate_synthetic(cfg.synth_config())
    Path(cfg.data_dir).mkdir(parents=True, exist_ok=True)
    write_interactions(records, Path(cfg.data_dir) / "interactions.tsv")
    corpus = prepare_corpus(records, cfg.seed, cfg.n_eval_neg, cfg.min_target, cfg.min_source)
    _save(corpus, cfg)


def _pretrain_all(cfg, corpus, out: Path | None) -> dict:
    pre = {}
    for dom in ("S", "T"):
        if dom == "T" or dom in cfg.domains:
            res = pretrain_single_domain(dom, corpus, cfg)
            pre[dom] = res["params"]
            if out is not None:
                save_pretrained(out / f"pretrain_{dom}", dom, cfg, res["params"], res["losses"],
                                res["valid_ndcg10"])
            log.info("pretrained %s for %d epochs", dom, len(res["losses"]))
    return pre


def cmd_pretrain(cfg: RunConfig) -> None:
    corpus = load_corpus(cfg.data_dir)
    _pretrain_all(cfg.train_config(), corpus, Path(cfg.out_dir))
    print(f"pretrained encoders -> {cfg.out_dir}")


def _load_pre(cfg: RunConfig, corpus) -> dict | None:
    if not cfg.pretrained or not cfg.pretrain:
        return None
    base = Path(cfg.pretrained)
    tcfg = cfg.train_config()
    return {dom: load_pretrained(base / f"pretrain_{dom}", dom, tcfg, corpus.vocab.size(dom))
            for dom in ("S", "T") if (base / f"pretrain_{dom}").exists()}


def cmd_train(cfg: RunConfig) -> None:
    corpus = load_corpus(cfg.data_dir)
    tcfg = cfg.train_config()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    res = fit(corpus, tcfg, out, pretrained=_load_pre(cfg, corpus))
    print(f"best epoch {res.best_epoch}, valid NDCG@10 {res.best_valid:.6f}; checkpoint -> {out / 'checkpoint'}")


def _checkpoint(cfg: RunConfig):
    path = Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.out_dir) / "checkpoint"
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    return load_checkpoint(path)


def cmd_evaluate(cfg: RunConfig) -> None:
    corpus = load_corpus(cfg.data_dir)
    model = _checkpoint(cfg)
    report = evaluate_model(model, corpus, cfg.split)
    txt, _ = report.write(cfg.out_dir)
    print(report.to_text(), end="")
    print(f"report -> {txt}")


def cmd_export_repr(cfg: RunConfig) -> None:
    corpus = load_corpus(cfg.data_dir)
    model = _checkpoint(cfg)
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    path = Path(cfg.out_dir) / f"representations_{cfg.split}.tsv"
    n = export_representations(model, corpus, path, cfg.split)
    print(f"{n} rows -> {path}")


def cmd_gradcheck(cfg: RunConfig) -> bool:
    errs = run_suite()
    for name, err in errs.items():
        print(f"{name:32s} {err:.3e}")
    worst = max(errs.values())
    ok = worst < GRADCHECK_TOL
    print(f"max relative error {worst:.3e} ({'PASS' if ok else 'FAIL'} < {GRADCHECK_TOL:g})")
    return ok


ABLATION_HEADER = "variant\t" + "\t".join([f"NDCG@{k}" for k in KS] + [f"HR@{k}" for k in KS] + ["AUC"])


def ablation_row(name: str, report) -> str:
    vals = [report.ndcg[k] for k in KS] + [report.hr[k] for k in KS] + [report.auc]
    return name + "\t" + "\t".join(f"{v:.6f}" for v in vals)


def cmd_ablate(cfg: RunConfig) -> None:
    corpus = load_corpus(cfg.data_dir)
    base = cfg.train_config()
    names = [v.strip() for v in cfg.variants.split(",") if v.strip()]
    for name in names:
        variant(base, name)  # fail fast on typos
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pre = _load_pre(cfg, corpus)
    if pre is None and base.pretrain:
        pre = _pretrain_all(base, corpus, None)
    rows = [ABLATION_HEADER]
    for name in names:
        vcfg = variant(base, name)
        res = fit(corpus, vcfg, out / ("run_" + name.replace("/", "").replace(" ", "_").replace("+", "")),
                  pretrained=pre)
        report = evaluate_model(res.model, corpus, cfg.split)
        rows.append(ablation_row(name, report))
        print(rows[-1], flush=True)
    (out / "ablation.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"report -> {out / 'ablation.tsv'}")


HANDLERS = {"prepare": cmd_prepare, "synth": cmd_synth, "pretrain": cmd_pretrain, "train": cmd_train,
            "evaluate": cmd_evaluate, "export-repr": cmd_export_repr, "gradcheck": cmd_gradcheck,
            "ablate": cmd_ablate}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if getattr(args, f.name) is not None}
    try:
        cfg = parse_config(args.config, overrides)
        cfg.validate()
        ok = HANDLERS[args.command](cfg)
    except (ConfigError, ParseError, PoolTooSmallError, ContractError, ShapeError, FileNotFoundError,
            ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1 if ok is False else 0


if __name__ == "__main__":
    sys.exit(main())

"""Multi-seed comparison of target-only, w/o TCA and full models on the synthetic corpus.

    python3 scripts/run_transfer_experiment.py --seeds 5
    python3 scripts/run_transfer_experiment.py --config configs/synthetic_transfer.conf --variants T,full
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from tricdr.config import parse_config
from tricdr.corpus import generate_synthetic, prepare_corpus
from tricdr.experiment import compare_variants, fdm_summary

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "synthetic_transfer.conf"))
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--variants", default="T,w/o TCA,full")
    ap.add_argument("--out", default=None, help="optional TSV of per-seed test NDCG@10")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    run_cfg = parse_config(args.config)
    corpus = prepare_corpus(generate_synthetic(run_cfg.synth_config()), seed=0, n_eval_neg=run_cfg.n_eval_neg)
    names = [v.strip() for v in args.variants.split(",") if v.strip()]
    res = compare_variants(corpus, run_cfg.train_config(), names, list(range(args.seeds)))

    rows = ["variant\t" + "\t".join(f"seed{s}" for s in range(args.seeds)) + "\tmean"]
    for name in names:
        vals = res.ndcg10(name)
        rows.append(name + "\t" + "\t".join(f"{v:.4f}" for v in vals) + f"\t{np.mean(vals):.4f}")
    print("\n".join(rows))
    print(f"wall {res.wall_s:.0f}s")
    if "full" in names:
        s = fdm_summary(res.get("full", 0), corpus)
        print(f"full seed 0: S-T minus S-M distance {s['gap']:.3f}, FDM loss {s['fdm_first']:.4f} -> "
              f"{s['fdm_last']:.4f} ({s['ratio']:.1%})")
    if args.out:
        Path(args.out).write_text("\n".join(rows) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()

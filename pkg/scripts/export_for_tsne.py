"""Train the full model and a w/o-FDM model, export projected representations for both.

The TSV files (user, domain, coordinates) can be fed to any t-SNE tool.
"""

import argparse
from pathlib import Path

from tricdr.config import parse_config, variant
from tricdr.corpus import generate_synthetic, prepare_corpus
from tricdr.metrics import export_representations, fdm_gap, projected_representations
from tricdr.trainer import fit

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "synthetic_transfer.conf"))
    ap.add_argument("--out", default="runs/tsne")
    args = ap.parse_args()
    run_cfg = parse_config(args.config)
    corpus = prepare_corpus(generate_synthetic(run_cfg.synth_config()), seed=0, n_eval_neg=run_cfg.n_eval_neg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("full", "w/o FDM"):
        res = fit(corpus, variant(run_cfg.train_config(), name))
        tag = name.replace("/", "").replace(" ", "_")
        n = export_representations(res.model, corpus, out / f"repr_{tag}.tsv")
        _, proj = projected_representations(res.model, corpus)
        print(f"{name}: {n} rows, mean d(S,T) - d(S,M) = {fdm_gap(proj):.3f}")


if __name__ == "__main__":
    main()

"""Synthesize a corpus and run the domain-utilisation/ablation matrix via the CLI.

    python3 scripts/run_ablation.py                       # acceptance-scale settings
    python3 scripts/run_ablation.py --config configs/smoke.conf
"""

import argparse
import sys
from pathlib import Path

from tricdr.cli import main as cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "synthetic_transfer.conf"))
    ap.add_argument("--seed", default="0")
    args, extra = ap.parse_known_args()
    common = ["--config", args.config, "--seed", args.seed, *extra]
    for cmd in ("synth", "ablate"):
        code = cli([cmd, *common])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Run the JSON experiment configs and write one CSV per config.

    python scripts/run_experiments.py                              # everything in scripts/configs
    python scripts/run_experiments.py gof_powerlaw --trials 200   # quick pass over matching configs
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from hdmulti.bench import ExperimentConfig, run

CONFIG_DIR = Path(__file__).resolve().parent / "configs"


def select(patterns: list[str], config_dir: Path) -> list[Path]:
    paths = sorted(config_dir.glob("*.json"))
    if patterns:
        paths = [p for p in paths if any(pat in p.stem for pat in patterns)]
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("only", nargs="*", help="substrings of config names to run (default: all)")
    parser.add_argument("--configs", type=Path, default=CONFIG_DIR)
    parser.add_argument("--out-dir", type=Path, default=Path("results"))
    parser.add_argument("--trials", type=int, help="override the trial count of power experiments")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--list", action="store_true", help="print the selected configs and exit")
    args = parser.parse_args(argv)

    paths = select(args.only, args.configs)
    if not paths:
        print(f"no configs match {args.only} in {args.configs}", file=sys.stderr)
        return 1
    if args.list:
        print("\n".join(p.stem for p in paths))
        return 0

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for path in paths:
        config = ExperimentConfig.from_json(path)
        if args.trials is not None:
            config.trials = args.trials
        config.workers = args.workers
        start = time.perf_counter()
        text = run(config)
        out = args.out_dir / f"{path.stem}.csv"
        out.write_text(text)
        print(f"{path.stem:<28} {time.perf_counter() - start:7.1f}s  -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

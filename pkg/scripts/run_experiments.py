"""Run the shipped simulation studies and print their power tables.

Each study compares the sampler-based test against an oracle that knows
the nuisance parameters, sweeping a signal grid from the null outward.
Results land in one CSV per study; summaries go to stdout.

Usage:
    python scripts/run_experiments.py                       # desk scale, all
    python scripts/run_experiments.py --preset full
    python scripts/run_experiments.py --study spatial --out-dir results/
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from acss.harness import load_config, run_experiment, summary_table, write_csv

STUDIES = ["logistic_ci", "behrens_fisher", "spatial", "multivariate_t"]
CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def run_one(study: str, preset: str, out_dir: Path, threads: int | None) -> Path:
    stem = study if preset == "full" else f"desk_{study}"
    cfg = load_config(CONFIG_DIR / f"{stem}.cfg", threads=threads)
    total = len(cfg.signals) * cfg.reps
    start = time.perf_counter()

    def progress(done: int, n: int) -> None:
        if done % 100 == 0 or done == n:
            el = time.perf_counter() - start
            print(f"  {study}: {done}/{n} replications, {el:.0f}s elapsed",
                  flush=True)

    records = run_experiment(cfg, progress=progress)
    out_path = out_dir / f"{stem}_results.csv"
    write_csv(records, out_path)
    print(f"  wrote {len(records)} records to {out_path}")
    print(summary_table(records, alpha=cfg.alpha))
    print(f"  total replications {total}, wall time "
          f"{time.perf_counter() - start:.0f}s", flush=True)
    return out_path


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--preset", choices=["desk", "full"], default="desk",
                        help="desk runs the trimmed configs, full the "
                             "complete replication counts")
    parser.add_argument("--study", choices=STUDIES + ["all"], default="all")
    parser.add_argument("--out-dir", type=Path, default=Path("results"))
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    studies = STUDIES if args.study == "all" else [args.study]
    for study in studies:
        print(f"== {study} ({args.preset}) ==", flush=True)
        run_one(study, args.preset, args.out_dir, args.threads)
    return 0


if __name__ == "__main__":
    sys.exit(main())

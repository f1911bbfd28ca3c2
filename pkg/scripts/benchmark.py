"""Time synth, extract and train-eval on a cohort sized to a target row count.

    python scripts/benchmark.py --trips 7794 --trees 100
"""

from __future__ import annotations

import argparse
import tempfile
import time
from pathlib import Path

from mcidrive.forest import ForestConfig
from mcidrive.pipeline import PipelineConfig, extract, train_eval
from mcidrive.synth import CohortSpec, generate_cohort


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trips", type=int, default=7794)
    ap.add_argument("--trees", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--workdir", type=Path, default=None)
    args = ap.parse_args()

    spec = CohortSpec(seed=args.seed, target_trips=args.trips)
    config = PipelineConfig(seed=args.seed, jobs=args.jobs,
                            forest=ForestConfig(n_trees=args.trees, seed=args.seed, n_jobs=args.jobs))
    with tempfile.TemporaryDirectory() as tmp:
        root = args.workdir or Path(tmp)
        timings = {}
        t0 = time.perf_counter()
        generate_cohort(spec, root / "cohort", jobs=args.jobs)
        timings["synth"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        features = extract(root / "cohort", root / "out", config)
        timings["extract"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        train_eval(features, root / "out", config)
        timings["train-eval"] = time.perf_counter() - t0
    for name, secs in timings.items():
        print(f"{name:<11s} {secs:7.2f} s")
    print(f"{'extract+train':<11s} {timings['extract'] + timings['train-eval']:7.2f} s")


if __name__ == "__main__":
    main()

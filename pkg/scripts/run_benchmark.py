"""Run the blobs benchmark (all methods, all seeds) and print a summary.

    python3 scripts/run_benchmark.py [config.json] [section.key=value ...]

Writes metrics CSVs, checkpoints and report.json to the config's output
directory (or under $AGGMATCH_OUTPUT_ROOT).
"""

import sys

from aggmatch import runner
from aggmatch.config import load_config


def main(argv):
    path = argv[0] if argv and "=" not in argv[0] else "configs/blobs_default.json"
    overrides = [a for a in argv if "=" in a]
    runner.tune_allocator()
    cfg = load_config(path, overrides)
    rep = runner.run_experiment(cfg)
    print(f"{'method':<12}{'mean acc':>10}{'std':>9}   per-seed")
    for method, s in rep["summary"].items():
        seeds = " ".join(f"{r['final_test_acc']:.4f}" for r in rep["runs"] if r["method"] == method)
        print(f"{method:<12}{s['test_acc_mean']:>10.4f}{s['test_acc_std']:>9.4f}   {seeds}")
    print(f"total {rep['wall_clock_s'] / 60:.1f} min; report in {runner.output_dir(cfg)}")


if __name__ == "__main__":
    main(sys.argv[1:])

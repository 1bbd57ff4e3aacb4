"""Configuration ablation: Configs A-G on the smallest KAN, teacher forcing,
both oscillators, aggregated into a table of Discovery R^2 per cell.

At the published protocol this is 14 sweeps x 100 seeds x 2000 steps; use
--seeds/--steps to shrink it to a desk-scale smoke run.
"""

import argparse
import sys

from residual_lab.harness import ExperimentConfig, aggregate_tables, run_sweep

CONFIGS = ("A", "B", "C", "D", "E", "F", "G")
SYSTEMS = ("duffing", "vanderpol")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=100)
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", default="results/config-ablation")
    args = parser.parse_args(argv)

    results = []
    for system in SYSTEMS:
        for config in CONFIGS:
            cfg = ExperimentConfig(system=system, config=config,
                                   paradigm="teacher_forcing",
                                   n_seeds=args.seeds, steps=args.steps,
                                   out=args.out)
            print(f"sweep {system}/{config} ({args.seeds} seeds)", flush=True)
            res = run_sweep(cfg, workers=args.workers)
            agg = res.summary["discovery_r2"]
            print(f"  discovery R2 {agg['mean']:.3f} "
                  f"[{agg['ci_lo']:.3f}, {agg['ci_hi']:.3f}]", flush=True)
            results.append(res)
    csv_path, txt_path = aggregate_tables(results, args.out + "/config-ablation")
    print(f"wrote {csv_path}")
    print(f"wrote {txt_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

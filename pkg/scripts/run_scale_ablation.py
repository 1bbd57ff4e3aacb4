"""Parameter-scale ablation: every KAN and MLP registry architecture under
one-step teacher forcing and K-step BPTT, both oscillators.

The full protocol (8 archs x 2 systems x 2 paradigms x 100 seeds) is a long
run; BPTT dominates.  --seeds/--steps shrink it, --paradigms limits it.
"""

import argparse
import sys

from residual_lab.harness import ARCH_REGISTRY, ExperimentConfig, aggregate_tables, run_sweep

SYSTEMS = ("duffing", "vanderpol")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=100)
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--paradigms", nargs="+",
                        default=["teacher_forcing", "bptt"],
                        choices=["teacher_forcing", "bptt"])
    parser.add_argument("--out", default="results/scale-ablation")
    args = parser.parse_args(argv)

    results = []
    for paradigm in args.paradigms:
        for system in SYSTEMS:
            for name in ARCH_REGISTRY:
                cfg = ExperimentConfig(system=system, config=name,
                                       paradigm=paradigm, n_seeds=args.seeds,
                                       steps=args.steps, out=args.out)
                print(f"sweep {system}/{name}/{paradigm} ({args.seeds} seeds)",
                      flush=True)
                res = run_sweep(cfg, workers=args.workers)
                agg = res.summary["discovery_r2"]
                unstable = res.summary["statuses"].get("Unstable", 0)
                note = f", {unstable} unstable" if unstable else ""
                print(f"  discovery R2 {agg['mean']:.3f} "
                      f"[{agg['ci_lo']:.3f}, {agg['ci_hi']:.3f}]{note}", flush=True)
                results.append(res)
    csv_path, txt_path = aggregate_tables(results, args.out + "/scale-ablation")
    print(f"wrote {csv_path}")
    print(f"wrote {txt_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

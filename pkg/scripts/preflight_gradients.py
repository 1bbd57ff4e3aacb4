"""Gradient pre-flight: check analytic gradients against central differences
for one branch of every registry architecture, on both loss paths.

Exit status 0 when every architecture passes, 1 otherwise.
"""

import argparse
import sys
import time

from residual_lab.dynamics import oscillator
from residual_lab.harness import ARCH_REGISTRY, ExperimentConfig, resolve_arch
from residual_lab.hybridcell import HybridSystem
from residual_lab.netcore import new_branch
from residual_lab.trainer import verify_gradients


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--system", default="duffing",
                        choices=["duffing", "vanderpol"])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--tolerance", type=float, default=1e-4)
    parser.add_argument("--bptt-tolerance", type=float, default=1e-3)
    args = parser.parse_args(argv)

    spec = oscillator(args.system)
    failures = 0
    for name in ARCH_REGISTRY:
        arch, _ = resolve_arch(ExperimentConfig(config=name))
        branch = new_branch(arch, args.seed)
        system = HybridSystem(spec, branch, 0.01)
        t0 = time.perf_counter()
        rep = verify_gradients(branch, system, tolerance=args.tolerance,
                               bptt_tolerance=args.bptt_tolerance,
                               seed=args.seed)
        verdict = "ok" if rep.passed else "FAILED"
        print(f"{name:15s} tf={rep.tf_error:.3e} bptt={rep.bptt_error:.3e} "
              f"{verdict} ({time.perf_counter() - t0:.1f}s)", flush=True)
        failures += not rep.passed
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())

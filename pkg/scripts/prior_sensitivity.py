"""Hyperparameter sensitivity of the diffusion and growth posteriors.

Fits the same model to the same dataset under several hyperparameter
presets and reports, for every pair of presets, the worst absolute
difference of posterior means in units of two posterior standard
deviations.  Values below 1 mean the analyses agree within posterior
uncertainty.

    python scripts/prior_sensitivity.py --presets sim set1 set2 set3
"""

import argparse
import sys
import time
from itertools import combinations

import numpy as np

from epigrid import sampler, simulate
from epigrid.model import HYPERPARAM_PRESETS, MODEL_PRESETS


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--presets", nargs="+", default=["set1", "set2", "set3"],
                   choices=sorted(HYPERPARAM_PRESETS))
    p.add_argument("--model", default="m3", choices=sorted(MODEL_PRESETS))
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--sampler-seed", type=int, default=11)
    p.add_argument("--chains", type=int, default=3)
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--burnin", type=int, default=4000)
    p.add_argument("--threads", type=int, default=3)
    args = p.parse_args(argv)

    res = simulate.simulate(simulate.scenario1(), args.seed)
    stats = {}
    for name in args.presets:
        cfg = sampler.SamplerConfig(
            n_chains=args.chains, n_iter=args.iters, n_burnin=args.burnin,
            seed=args.sampler_seed, n_threads=args.threads)
        t0 = time.time()
        ps = sampler.fit(res.obs, res.config.grid, MODEL_PRESETS[args.model],
                         HYPERPARAM_PRESETS[name], cfg)
        stats[name] = {
            "delta": (ps.draws["delta"].mean(axis=(0, 1)),
                      ps.draws["delta"].std(axis=(0, 1))),
            "zeta": (ps.draws["zeta"].mean(axis=(0, 1)),
                     ps.draws["zeta"].std(axis=(0, 1))),
        }
        print(f"{name}: fit {time.time() - t0:.0f}s, "
              f"max R-hat {ps.max_rhat():.3f}, "
              f"delta median {np.median(stats[name]['delta'][0]):.4f}")

    print(f"\n{'pair':14s} {'param':6s} {'worst |diff| / 2 sd':>20s}")
    for a, b in combinations(args.presets, 2):
        for par in ("delta", "zeta"):
            ma, sa = stats[a][par]
            mb, sb = stats[b][par]
            worst = float((np.abs(ma - mb)
                           / (2.0 * np.maximum(sa, sb))).max())
            flag = "" if worst <= 1.0 else "  <-- disagrees"
            print(f"{a + '/' + b:14s} {par:6s} {worst:20.3f}{flag}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

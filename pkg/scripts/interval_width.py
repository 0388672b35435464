"""Compare 90% interval widths for gamers with 2 vs 20 logits per modality."""
import argparse

import numpy as np

from skillpool.model import build_index
from skillpool.posterior import summarize_all
from skillpool.sampler import SamplerConfig, run_chains
from skillpool.simkit import TruthConfig, simulate


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--gamers", type=int, default=40)
    p.add_argument("--light", type=int, default=2)
    p.add_argument("--heavy", type=int, default=20)
    args = p.parse_args()

    n, m = args.gamers, 2
    counts = np.where(np.arange(n)[:, None] < n // 2, args.light, args.heavy) * np.ones((1, m), dtype=int)
    rows = []
    for r in range(args.replicates):
        ds, _ = simulate(TruthConfig(n_gamers=n, n_modalities=m, mu=(0, 0), sigma=(1, 1), tau=(1, 1),
                                     logits_per_pair=counts, seed=100 + r))
        draws = run_chains(ds, config=SamplerConfig(chains=2, iterations=1000, warmup=500, seed=r))
        w = np.array([s.interval_90 for s in summarize_all(draws.pooled(), build_index(ds), ds)])
        rows.append((w[: n // 2].mean(), w[n // 2:].mean()))
        print(f"replicate {r:2d}: light {rows[-1][0]:.3f}  heavy {rows[-1][1]:.3f}")
    light, heavy = np.mean(rows, axis=0)
    print(f"mean width: {args.light}/pair {light:.3f}, {args.heavy}/pair {heavy:.3f}")


if __name__ == "__main__":
    main()

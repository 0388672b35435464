"""Repeat the 50-gamer recovery scenario over seeds and tabulate mu z-scores."""
import argparse

import numpy as np

from skillpool.model import build_index
from skillpool.sampler import SamplerConfig, run_chains
from skillpool.simkit import recovery_config, simulate


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=500)
    args = p.parse_args()

    hits = 0
    for seed in range(args.runs):
        ds, truth = simulate(recovery_config(seed))
        draws = run_chains(ds, config=SamplerConfig(chains=4, iterations=args.iters, warmup=args.warmup, seed=seed))
        mu = draws.pooled()[:, build_index(ds).mu]
        z = (mu.mean(axis=0) - truth.mu) / mu.std(axis=0, ddof=1)
        ok = bool(np.all(np.abs(z) <= 3))
        hits += ok
        rhat = draws.diagnostics().max_rhat()
        print(f"seed {seed:2d}  z = {np.array2string(z, precision=2)}  max Rhat {rhat:.4f}  {'ok' if ok else 'MISS'}")
    print(f"{hits}/{args.runs} runs within 3 posterior sd on every mu")


if __name__ == "__main__":
    main()

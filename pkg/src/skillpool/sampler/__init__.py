from .adaptation import DualAveraging, WindowSchedule, adapt_warmup
from .chains import (
    Diagnostics,
    MultiChainDraws,
    SamplerConfig,
    chain_rng,
    read_draws_csv,
    run_chains,
    sample,
    write_diagnostics_json,
)
from .diagnostics import ess, rhat
from .nuts import NUTS, ChainState, TransitionStats, leapfrog, nuts_transition

__all__ = [
    "ChainState", "Diagnostics", "DualAveraging", "MultiChainDraws", "NUTS", "SamplerConfig",
    "TransitionStats", "WindowSchedule", "adapt_warmup", "chain_rng", "ess", "leapfrog",
    "nuts_transition", "read_draws_csv", "rhat", "run_chains", "sample", "write_diagnostics_json",
]

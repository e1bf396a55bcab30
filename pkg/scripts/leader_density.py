"""Slice leaders per km against the neighbourhood size, for both similarity kernels.

Only mobility and re-slicing are simulated, so a sweep takes seconds.

    python3 scripts/leader_density.py --scenario 1 --sigmas 2,5,10,20,50 --seeds 0-9
"""

import argparse

import numpy as np

from v2xsim import SimConfig
from v2xsim.channel import TTI_S
from v2xsim.cli import _float_list, _int_list
from v2xsim.mobility import advance_x
from v2xsim.sim import compute_topology, init_state


def leaders_per_km(cfg: SimConfig, epochs: int) -> float:
    state = init_state(cfg)
    counts = []
    for e in range(epochs):
        state.clock_tti = e * cfg.reslice_period_tti
        counts.append(len(compute_topology(state).leaders))
        state.x = advance_x(state.x, state.velocity, cfg.reslice_period_tti * TTI_S, cfg.length_m)
    return float(np.mean(counts)) / (cfg.length_m / 1000.0)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", type=int, default=1)
    p.add_argument("--sigmas", type=_float_list, default=[2.0, 5.0, 10.0, 20.0, 50.0])
    p.add_argument("--seeds", type=_int_list, default=list(range(10)))
    p.add_argument("--epochs", type=int, default=10)
    args = p.parse_args()

    print("sigma_m  kernel     leaders/km (mean over seeds)  min  max")
    for squared in (False, True):
        for sigma in args.sigmas:
            vals = [leaders_per_km(SimConfig(scenario_id=args.scenario, sigma_m=sigma, seed=s,
                                             squared_similarity=squared), args.epochs) for s in args.seeds]
            kernel = "squared" if squared else "distance"
            print(f"{sigma:7g}  {kernel:9s}  {np.mean(vals):8.2f}                      "
                  f"{min(vals):5.2f} {max(vals):5.2f}")


if __name__ == "__main__":
    main()

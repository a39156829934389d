"""Identification statistics over noise seeds for both scenarios."""
import argparse

import numpy as np

from recbf_kit import sim_engine as se
from recbf_kit.sysid import LANE_PARAMS


def lane(seeds):
    for vehicle in ("vehicle1", "vehicle2"):
        cfg = se.LaneConfig.for_vehicle(vehicle, "lrecbf")
        data = se.collect_lane_data(cfg, cfg.delta)
        mus, sigmas = [], []
        for seed in seeds:
            res = se.identify_lane(cfg, se.lane_observations(data, seed, cfg.noise_std, cfg.id_rate_hz)).fit
            mus.append(res.theta_hat)
            sigmas.append(res.sigma)
        mus, sigmas = np.array(mus), np.array(sigmas)
        for i, name in enumerate(LANE_PARAMS):
            print(f"{vehicle} {name:>7s}  actual {getattr(cfg.delta, name):.3f}  "
                  f"mu {mus[:, i].mean():.4f} +/- {mus[:, i].std():.4f}  sigma {sigmas[:, i].mean():.4f}")


def acc(seeds):
    for seed in seeds:
        ident = se.run_acc_scenario(se.AccConfig(seed=seed, duration=100.0)).identifications[0]
        cells = [f"{u.name} {u.mu:.4g}/{u.sigma:.3g} {'+' if u.accepted else '-'}" for u in ident.updates]
        print(f"seed {seed:3d}  " + "  ".join(cells))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("scenario", choices=("lane", "acc"))
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()
    (lane if args.scenario == "lane" else acc)(range(args.seeds))


if __name__ == "__main__":
    main()

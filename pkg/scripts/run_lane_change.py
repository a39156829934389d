"""Lane change for every vehicle and filter mode; prints peak lateral position and settling time."""
import argparse

from recbf_kit import sim_engine as se


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="write one trace CSV per run into this directory")
    args = ap.parse_args()
    print(f"{'vehicle':>9s} {'mode':>13s} {'max Y':>8s} {'settle':>7s}  safe")
    for vehicle in ("nominal", "vehicle1", "vehicle2"):
        for mode in se.LANE_MODES:
            run = se.run_lane_scenario(se.LaneConfig.for_vehicle(vehicle, mode, seed=args.seed))
            print(f"{vehicle:>9s} {mode:>13s} {run.max_Y:8.4f} {run.settle_time():7.2f}  {run.safe}")
            if args.out:
                from pathlib import Path
                Path(args.out).mkdir(parents=True, exist_ok=True)
                run.trace.to_csv(Path(args.out) / f"{vehicle}_{mode}.csv")


if __name__ == "__main__":
    main()

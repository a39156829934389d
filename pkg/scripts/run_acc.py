"""Platoon run with the mass-box update; prints gap statistics and the fit."""
import argparse

from recbf_kit import sim_engine as se


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--duration", type=float, default=300.0)
    ap.add_argument("--out", default=None, help="trace CSV path")
    args = ap.parse_args()
    events = ("100:update-bounds",) if args.duration >= 100 else ()
    run = se.run_acc_scenario(se.AccConfig(seed=args.seed, duration=args.duration, events=events))
    for ident in run.identifications:
        for u in ident.updates:
            state = "accepted" if u.accepted else "rejected"
            print(f"t={ident.time:5.1f}  {u.name:>6s}  mu={u.mu:10.5g}  sigma={u.sigma:9.3g}  {state}")
    t_end = run.trace["t_s"][-1]
    print(f"mean gap [25, 100] s: {run.mean_gap(25.0, min(100.0, t_end)):.2f} m")
    if t_end >= 200:
        print(f"mean gap [200, {t_end:.0f}] s: {run.mean_gap(200.0, t_end):.2f} m")
    print(f"min h1 {run.min_h1:.3f} m, max v2 {run.max_v2:.3f} m/s, infeasible ticks {run.infeasible_steps}")
    if args.out:
        run.trace.to_csv(args.out)


if __name__ == "__main__":
    main()

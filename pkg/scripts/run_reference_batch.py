#!/usr/bin/env python3
"""Run the reference batch (3 eyes x 10 trials, 2 um actuation noise) and
print the aggregate metrics next to the hardware reference figures."""

import argparse

from octnav.metrics import HARDWARE_REFERENCE_UM
from octnav.trial import TrialConfig, run_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=2026)
    ap.add_argument("--eyes", type=int, default=3)
    ap.add_argument("--trials", type=int, default=10, help="trials per eye")
    ap.add_argument("--noise-um", type=float, default=2.0, help="actuation noise sigma")
    ap.add_argument("--out", default=None, help="directory for records and csv outputs")
    args = ap.parse_args()

    cfg = TrialConfig(
        master_seed=args.seed,
        n_eyes=args.eyes,
        trials_per_eye=args.trials,
        actuation_noise_um=args.noise_um,
    )
    res = run_batch(cfg, out_dir=args.out, verbose=True)

    print()
    print(f"{res.n_done}/{len(res.records)} trials done, hash {res.determinism_hash[:16]}")
    print()
    print(f"{'metric':<36}{'mean':>10}{'std':>10}   hardware ref")
    for name, stats in res.aggregate.items():
        ref = HARDWARE_REFERENCE_UM.get(name)
        tail = f"{ref[0]:g} +- {ref[1]:g}" if ref else ""
        print(f"{name:<36}{stats['mean']:>10.3f}{stats['std']:>10.3f}   {tail}")
    if args.out:
        print(f"\nrecords and aggregate.csv written to {args.out}")


if __name__ == "__main__":
    main()

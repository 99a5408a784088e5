"""Leak rate of every attack in both modes over a range of seeds.

    python3 scripts/attack_matrix.py --seeds 10 --out attacks.csv
"""
import argparse
import csv
import sys
import time

from aslrmask.attacks import ATTACKS, run_attack


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--attack", action="append", choices=sorted(ATTACKS))
    ap.add_argument("--out", default="attack_matrix.csv")
    args = ap.parse_args(argv)

    names = args.attack or list(ATTACKS)
    rows = []
    for name in names:
        t0 = time.perf_counter()
        rates = {}
        for mode in ("baseline", "oreo"):
            leaks = 0
            for s in range(args.seeds):
                rep = run_attack(name, mode, seed=s)
                leaks += rep.leaked
                rows.append([name, mode, s, rep.planted_index, rep.verdict,
                             hex(rep.recovered_mask), hex(rep.recovered_bits)])
            rates[mode] = leaks / args.seeds
        print(f"{name:17s} baseline={rates['baseline']:.2f} "
              f"oreo={rates['oreo']:.2f} ({time.perf_counter() - t0:.1f}s)")
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["attack", "mode", "seed", "planted_index", "verdict",
                    "recovered_mask", "recovered_bits"])
        w.writerows(rows)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

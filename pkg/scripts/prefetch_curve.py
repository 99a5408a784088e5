"""Second-prefetch latency per candidate subregion, both modes.

Writes one CSV row per probe so the curve can be plotted with any tool.

    python3 scripts/prefetch_curve.py --seed 7 --out curve.csv
"""
import argparse
import csv
import sys

from aslrmask.attacks import prefetch_attack
from aslrmask.presets import get_region


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--region", default="kernel_text",
                    help="region preset (default: full kernel text range)")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="prefetch_curve.csv")
    args = ap.parse_args(argv)

    region = get_region(args.region)
    base = prefetch_attack("baseline", region, seed=args.seed)
    masked = prefetch_attack("oreo", region, seed=args.seed)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["subregion", "probe", "baseline_cycles", "oreo_cycles"])
        for i, (p, b, o) in enumerate(zip(base.probes, base.measurements,
                                          masked.measurements)):
            w.writerow([i, hex(p), b, o])

    print(f"{len(base.probes)} probes, planted subregion {base.planted_index}")
    for rep in (base, masked):
        lo, hi = min(rep.measurements), max(rep.measurements)
        print(f"{rep.mode:9s} min={lo} max={hi} spread={hi - lo} "
              f"verdict={rep.verdict} candidates={len(rep.candidates)}")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

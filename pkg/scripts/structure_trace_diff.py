"""Structure input traces for a valid and an invalid probe address.

The victim touches an attacker-chosen pointer under speculation.  Traces
for the correct subregion and a wrong one are written as JSONL and compared
per structure, in both modes.

    python3 scripts/structure_trace_diff.py --outdir traces
"""
import argparse
import sys
from pathlib import Path

from aslrmask.attacks import BLINDSIDE_VICTIM, plant
from aslrmask.cli import trace_diff
from aslrmask.machine import System
from aslrmask.presets import get_region
from aslrmask.uarch import REPORTED_STRUCTURES


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--region", default="toy")
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--outdir", default="structure-traces")
    args = ap.parse_args(argv)

    region = get_region(args.region)
    layout = plant(region, args.seed)
    wrong = (layout.index + 1) % region.num_subregions
    guesses = {"valid": layout.virt_of(0),
               "invalid": region.subregion_base(wrong)}
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    print(f"{'mode':9s} " + " ".join(f"{s:>6s}" for s in REPORTED_STRUCTURES))
    for mode in ("baseline", "oreo"):
        paths = []
        for label, g in guesses.items():
            t = System(mode, layout, BLINDSIDE_VICTIM).run_victim({2: g})
            p = out / f"{mode}_{label}.jsonl"
            p.write_text(t.to_jsonl())
            paths.append(p)
        counts = trace_diff(*paths)
        print(f"{mode:9s} " + " ".join(f"{counts.get(s, 0):6d}"
                                        for s in REPORTED_STRUCTURES))
    print(f"traces in {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())

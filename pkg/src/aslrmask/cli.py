"""Command line front end.

    aslrmask run SCENARIO        run the embedded program, write traces
    aslrmask attack SCENARIO     run an attack per mode and seed
    aslrmask verify SCENARIO     exhaustive non-interference sweep
    aslrmask entropy ...         entropy table for a preset or explicit bits
    aslrmask cost ...            storage cost for a core configuration
    aslrmask trace-diff A B      per-structure deviation between two traces

Exit status: 0 on success, 1 when the masked mode admits a counterexample,
2 on any configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import attacks, verify
from .addr import (ConfigError, CoreSizing, Strategy, BitsStrategy,
                   cost_report, entropy_report)
from .machine import RunTrace, init
from .memtable import Mode
from .presets import get_preset
from .scenario import Scenario, load
from .uarch import REPORTED_STRUCTURES, deviation_counts, parse_trace

EXIT_OK, EXIT_COUNTEREXAMPLE, EXIT_CONFIG = 0, 1, 2


def _csv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _table(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    cells = [[str(c) for c in header]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths))
                     for r in cells)


def _outdir(sc: Scenario, out: Optional[str], cmd: str) -> Path:
    base = Path(out or sc.out or Path("aslrmask-out") / sc.name)
    d = base / cmd
    d.mkdir(parents=True, exist_ok=True)
    return d


def _modes(sc: Scenario, override: Optional[str]) -> List[Mode]:
    return [Mode(override)] if override else sc.modes


# -- run ----------------------------------------------------------------------

def _run_one(args):
    prog, layout, mode, regs, privileged, sysc, budget = args
    m = init(prog, layout, mode, regs=regs, static=(verify.KERNEL_DATA,),
             privileged=privileged, lat=sysc.lat, window=sysc.window)
    return m.run(budget)


def _fan_out(fn, jobs_args: list, jobs: int) -> list:
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(fn, jobs_args))
    return [fn(a) for a in jobs_args]


def cmd_run(sc: Scenario, out: Optional[str] = None,
            mode: Optional[str] = None, jobs: int = 1
            ) -> Dict[str, List[RunTrace]]:
    prog = sc.program
    if prog is None:
        raise ConfigError("scenario has no program to run")
    layouts = sc.layouts()
    modes = _modes(sc, mode)
    args = [(prog, L, m, sc.regs, sc.privileged, sc.system, sc.budget)
            for m in modes for L in layouts]
    traces = _fan_out(_run_one, args, jobs)
    d = _outdir(sc, out, "run")
    result: Dict[str, List[RunTrace]] = defaultdict(list)
    rows = []
    for (_, L, m, *_), t in zip(args, traces):
        i = len(result[m.value])
        result[m.value].append(t)
        sub = d / m.value / f"layout-{i}"
        sub.mkdir(parents=True, exist_ok=True)
        (sub / "trace.jsonl").write_text(t.to_jsonl())
        summ = dict(t.summary(), mode=m.value, layout_offset=hex(L.offset))
        (sub / "summary.json").write_text(json.dumps(summ, indent=2,
                                                     sort_keys=True) + "\n")
        rows.append([m.value, i, hex(L.offset), t.status.value, t.steps,
                     t.cycles, t.commits, t.crash_step, summ["fault"]])
    header = ["mode", "layout", "offset", "status", "steps", "cycles",
              "commits", "crash_step", "fault"]
    (d / "summary.csv").write_text(_csv(rows, header))
    print(_table(rows, header))
    return dict(result)


# -- attack -------------------------------------------------------------------

def _attack_job(args):
    name, mode, kw = args
    return attacks.run_attack(name, mode, **kw)


def cmd_attack(sc: Scenario, out: Optional[str] = None,
               mode: Optional[str] = None, jobs: int = 1
               ) -> List[attacks.AttackReport]:
    spec = sc.raw.get("attack")
    if spec is None:
        raise ConfigError("scenario has no attack section")
    name = spec["name"]
    attacks.get_attack(name)
    kw = dict(spec.get("params", {}))
    kw["sc"] = sc.system
    if "region" in sc.raw:
        kw["region"] = sc.region
    if "index" in spec:
        kw["index"] = spec["index"]
    seeds = spec.get("seeds", [0])
    args = [(name, m, dict(kw, seed=s)) for m in _modes(sc, mode)
            for s in seeds]
    try:
        reports = _fan_out(_attack_job, args, jobs)
    except TypeError as e:
        raise ConfigError(f"attack {name}: {e}") from None
    d = _outdir(sc, out, "attack")
    rows = []
    for (_, m, a), rep in zip(args, reports):
        sub = d / rep.mode / f"seed-{a['seed']}"
        sub.mkdir(parents=True, exist_ok=True)
        (sub / "report.json").write_text(rep.to_json() + "\n")
        (sub / "measurements.csv").write_text(rep.to_csv())
        rows.append([name, rep.mode, a["seed"], rep.planted_index,
                     hex(rep.planted_offset), rep.verdict,
                     hex(rep.recovered_mask), hex(rep.recovered_bits)])
    header = ["attack", "mode", "seed", "planted_index", "planted_offset",
              "verdict", "recovered_mask", "recovered_bits"]
    (d / "summary.csv").write_text(_csv(rows, header))
    (d / "summary.json").write_text(json.dumps(
        [r.summary() for r in reports], indent=2, sort_keys=True) + "\n")
    print(_table(rows, header))
    return reports


# -- verify -------------------------------------------------------------------

SCENARIO_PROGRAM = "scenario"


def cmd_verify(sc: Scenario, out: Optional[str] = None,
               mode: Optional[str] = None, jobs: int = 1) -> int:
    spec = sc.raw.get("verify", {})
    region = sc.region
    length = region.subregion_len
    names = spec.get("programs") or [p.name for p in verify.probe_suite(length)]
    progs = []
    for nm in names:
        if nm == SCENARIO_PROGRAM:
            if sc.program is None:
                raise ConfigError("verify lists the scenario program but "
                                  "there is none")
            progs.append((nm, sc.program, sc.regs, sc.program_length()))
        else:
            p = verify.get_probe(nm, length)
            progs.append((nm, p.program, dict(p.regs), length))
    n = spec.get("n")
    if n is not None and n > region.num_subregions:
        raise ConfigError(f"n={n} exceeds {region.num_subregions} subregions")
    budget = spec.get("budget", 20_000)
    report: dict = {"region": {"start": hex(region.start),
                               "end": hex(region.end),
                               "subregion_len": hex(region.subregion_len)},
                    "modes": {}}
    rows, failed, lines = [], False, []
    for m in _modes(sc, mode):
        reps = [verify.check_noninterference(prog, region, n, m, budget, regs,
                                             nm, plen, jobs)
                for nm, prog, regs, plen in progs]
        report["modes"][m.value] = [r.to_dict() for r in reps]
        for r in reps:
            rows.append([m.value, r.program, r.n, r.pairs_checked,
                         len(r.counterexamples), len(r.distinguishable),
                         len(r.precondition_violations),
                         len(r.mask_equiv_violations)])
        if m is Mode.OREO:
            cex = sum(len(r.counterexamples) for r in reps)
            failed |= any(not r.holds for r in reps)
            lines.append(f"oreo counterexamples: {cex}")
        else:
            pairs = {tuple(e["pair"]) for r in reps for e in r.distinguishable}
            lines.append(f"baseline distinguishable pairs: {len(pairs)}")
        pre = sum(len(r.precondition_violations) for r in reps)
        if pre:
            lines.append(f"{m.value} pairs rejected by precondition: {pre}")
    if spec.get("page_tables", True):
        pt = verify.check_page_tables(region, n)
        report["page_tables"] = pt.to_dict()
        failed |= not pt.holds
        lines.append(f"page-table equivalence: "
                     f"{'holds' if pt.holds else 'FAILS'} "
                     f"({pt.pairs_checked} pairs, {pt.pages} pages)")
    report["holds"] = not failed
    report["lines"] = lines
    d = _outdir(sc, out, "verify")
    (d / "report.json").write_text(verify.report_json(report) + "\n")
    header = ["mode", "program", "layouts", "pairs", "counterexamples",
              "distinguishable", "precondition", "mask_violations"]
    (d / "summary.csv").write_text(_csv(rows, header))
    print(_table(rows, header))
    for line in lines:
        print(line)
    return EXIT_COUNTEREXAMPLE if failed else EXIT_OK


# -- entropy / cost -------------------------------------------------------------

ENTROPY_HEADER = ["strategy", "orig_code_reuse", "orig_speculative",
                  "remain_code_reuse", "remain_speculative",
                  "position_limited_bits"]


def entropy_rows(preset: Optional[str] = None,
                 strategies: Optional[Sequence[str]] = None,
                 k: Optional[int] = None, n: Optional[int] = None,
                 m: int = 0, protected_lo: Optional[int] = None) -> List[list]:
    variants = [Strategy(s) for s in (strategies or [s.value for s in Strategy])]
    rows = []
    for v in variants:
        if preset:
            p = get_preset(preset)
            st, region = p.strategy(v), p.region
        else:
            if k is None or n is None:
                raise ConfigError("give --preset or both --k and --n")
            mm = 0 if v is Strategy.DEFAULT_BASELINE else m
            lo = None if v is Strategy.NAIVE_OREO else protected_lo
            st, region = BitsStrategy(v, k, n, mm, protected_lo=lo), None
        r = entropy_report(st, region)
        lim = "" if r.position_limited_bits is None else \
            f"{r.position_limited_bits:.2f}"
        rows.append([v.value, *r.row(), lim])
    return rows


def cost_rows(cfg: CoreSizing) -> List[list]:
    r = cost_report(cfg)
    fmt = lambda x: int(x) if float(x).is_integer() else x
    return [["tlb_extra", fmt(r.tlb_extra_bytes)],
            ["rob_lsq_extra", fmt(r.rob_lsq_extra_bytes)],
            ["region_metadata", fmt(r.region_metadata_bytes)],
            ["archpc", r.archpc_bytes],
            ["in_core_total", fmt(r.total_in_core_bytes)],
            ["memory_system_total", fmt(r.total_memory_system_bytes)]]


def _emit(rows, header, out: Optional[str], fname: str) -> None:
    print(_table(rows, header))
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / fname).write_text(_csv(rows, header))


# -- trace diff -----------------------------------------------------------------

def _by_structure(path: str) -> Dict[str, List[tuple]]:
    try:
        events = parse_trace(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    except (ValueError, KeyError) as e:
        raise ConfigError(f"{path}: malformed trace ({e})") from None
    out: Dict[str, List[tuple]] = defaultdict(list)
    for _, s, inp in events:
        out[s].append(inp)
    return dict(out)


def trace_diff(path_a: str, path_b: str) -> Dict[str, int]:
    a, b = _by_structure(path_a), _by_structure(path_b)
    if set(a) != set(b):
        raise ConfigError(f"traces cover different structures: "
                          f"{sorted(a)} vs {sorted(b)}")
    structs = [s for s in REPORTED_STRUCTURES if s in a] + \
        sorted(set(a) - set(REPORTED_STRUCTURES))
    return deviation_counts(a, b, structs)


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aslrmask", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="cmd", required=True)

    for name in ("run", "attack", "verify"):
        p = sub.add_parser(name)
        p.add_argument("scenario")
        p.add_argument("--out", help="output directory")
        p.add_argument("--mode", choices=[m.value for m in Mode],
                       help="run only this mode")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel worker processes")

    p = sub.add_parser("entropy")
    p.add_argument("--preset")
    p.add_argument("--strategy", action="append",
                   choices=[s.value for s in Strategy])
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int, default=0)
    p.add_argument("--protected-lo", type=int)
    p.add_argument("--out")

    p = sub.add_parser("cost")
    d = CoreSizing()
    p.add_argument("--tlb-entries", type=int, default=d.tlb_entries)
    p.add_argument("--rob-entries", type=int, default=d.rob_entries)
    p.add_argument("--lsq-entries", type=int, default=d.lsq_entries)
    p.add_argument("--regions", type=int, default=d.num_regions)
    p.add_argument("--offset-bits", type=int, default=d.offset_bits)
    p.add_argument("--out")

    p = sub.add_parser("trace-diff")
    p.add_argument("trace_a")
    p.add_argument("trace_b")
    p.add_argument("--out")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd in ("run", "attack", "verify"):
            if args.jobs < 1:
                raise ConfigError("--jobs must be at least 1")
            sc = load(args.scenario)
            if args.cmd == "run":
                cmd_run(sc, args.out, args.mode, args.jobs)
            elif args.cmd == "attack":
                cmd_attack(sc, args.out, args.mode, args.jobs)
            else:
                return cmd_verify(sc, args.out, args.mode, args.jobs)
        elif args.cmd == "entropy":
            rows = entropy_rows(args.preset, args.strategy, args.k, args.n,
                                args.m, args.protected_lo)
            _emit(rows, ENTROPY_HEADER, args.out, "entropy.csv")
        elif args.cmd == "cost":
            cfg = CoreSizing(args.tlb_entries, args.rob_entries,
                             args.lsq_entries, args.regions, args.offset_bits)
            _emit(cost_rows(cfg), ["component", "bytes"], args.out,
                  "cost.csv")
        else:
            counts = trace_diff(args.trace_a, args.trace_b)
            _emit([[s, c] for s, c in counts.items()],
                  ["structure", "deviations"], args.out, "trace_diff.csv")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

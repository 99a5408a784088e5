"""The executable machine: one request per step, speculation, commit checks.

A step materializes exactly one request, chosen in this priority order:

1. commit the ROB head if it is complete (masked mode emits ``check``)
2. execute the oldest fetched memory instruction (``load``/``store``)
3. resolve the pending conditional branch once the speculation window is
   full or fetch cannot proceed (``none``)
4. fetch the next instruction (``fetch``)

Non-memory instructions execute in the step that fetches them.  In masked
mode every address handed to the hardware goes through ``virt2mask``; the
core keeps the virtual fetch address only to describe its requests and to
cross-check the commit-time PC.
"""
from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Mapping, NamedTuple, Optional, Sequence, Union

from .addr import (PAGE_SHIFT, PAGE_SIZE, ConfigError, RandRegion,
                   virt2mask)
from .isa import (ALU, ALU_OPS, BNZ, BR, HALT, INST_BYTES, JMPR, LOAD, MOVI,
                  NOP, NUM_REGS, PREFETCH, RDTSC, STORE, WORD_MASK, Program)
from .layout import Layout
from .memtable import (PT4, Mode, Perm, PhysMem, PtConfig, RW_KERNEL,
                       RW_USER, RX_KERNEL, RX_USER, StaticMapping,
                       build_page_table)
from .uarch import Geometry, LatencyTable, LsqEntry, Uarch, offset_of

DEFAULT_WINDOW = 8

ATTACKER_CODE_VA = 0x0000_0040_0000_0000
ATTACKER_CODE_PA = 0x0200_0000
ATTACKER_DATA_VA = 0x0000_0050_0000_0000
ATTACKER_DATA_PA = 0x0300_0000
KERNEL_DATA_VA = 0xFFFF_FFFF_E000_0000
KERNEL_DATA_PA = 0x0400_0000


class Status(str, enum.Enum):
    RUNNING = "Running"
    HALTED = "Halted"
    CRASHED = "Crashed"
    BUDGET = "Budget"


class Fault(str, enum.Enum):
    PAGE = "PageFault"
    PERMISSION = "PermissionFault"
    UNDEFINED = "UndefinedInstruction"
    OBLIVIOUS = "ObliviousCheckFault"


class Request(NamedTuple):
    kind: str  # none | fetch | load | store | check
    v: int = 0
    src: int = 0
    d: int = 0


NONE = Request("none")


class RobEntry:
    __slots__ = ("seq", "inst", "vpc", "key", "correct_offset", "completed",
                 "fault", "mem_fault", "addr", "value", "taken", "target",
                 "precheck_ok")

    def __init__(self, seq, vpc, key):
        self.seq = seq
        self.vpc = vpc
        self.key = key
        self.inst = None
        self.correct_offset = 0
        self.completed = False
        self.fault = None
        self.mem_fault = None
        self.addr = None
        self.value = 0
        self.taken = False
        self.target = 0
        self.precheck_ok = None


class Pending:
    __slots__ = ("entry", "actual", "mispredict", "count")

    def __init__(self, entry, actual, mispredict):
        self.entry = entry
        self.actual = actual
        self.mispredict = mispredict
        self.count = 0


@dataclass
class RunTrace:
    status: Status
    steps: int
    cycles: int
    requests: List[Request]
    observations: List[tuple]
    events: List[tuple]
    timeline: List[int]
    regs: List[int]
    timer_log: List[int]
    commits: int
    crash_step: Optional[int] = None
    fault: Optional[Fault] = None

    def summary(self) -> dict:
        return {"status": self.status.value, "steps": self.steps,
                "cycles": self.cycles, "crash_step": self.crash_step,
                "fault": self.fault.value if self.fault else None,
                "commits": self.commits}

    def structure_inputs(self) -> Dict[str, List[tuple]]:
        from .uarch import STRUCTURES
        out: Dict[str, List[tuple]] = {s: [] for s in STRUCTURES}
        for _, s, inp in self.events:
            out[s].append(inp)
        return out

    def to_jsonl(self) -> str:
        from .uarch import event_line
        return "".join(event_line(e) + "\n" for e in self.events)

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


class Machine:
    """Core state E plus the memory and microarchitecture it drives."""

    def __init__(self, pm: PhysMem, ua: Uarch, entry: int,
                 privileged: bool = True,
                 regs: Optional[Mapping[int, int]] = None,
                 window: int = DEFAULT_WINDOW):
        if window < 1:
            raise ConfigError("speculation window must be >= 1")
        self.pm = pm
        self.ua = ua
        self.mode = pm.mode
        self.masked = pm.mode is Mode.OREO
        self.regions = pm.regions
        if self.masked:
            ua.guard_regions = pm.regions
        self.privileged = privileged
        self.window = window
        self.regs = [0] * NUM_REGS
        for r, v in (regs or {}).items():
            if not 0 <= r < NUM_REGS:
                raise ConfigError(f"register r{r} out of range")
            self.regs[r] = v & WORD_MASK
        self.vpc = entry
        self.arch_pc = entry
        self.prev_vpc = 0
        self.prev_branch = False
        self.rob: List[RobEntry] = []
        self.pending: Optional[Pending] = None
        self.deferred: Optional[RobEntry] = None
        self.fetch_stall = False
        # (seq, register, old) or (seq, None, paddr, had, old) in seq order;
        # entries leave at commit and are replayed on squash or crash
        self.undo: Deque[tuple] = deque()
        self.seq = 0
        self.steps = 0
        self.cycles = 0
        self.commits = 0
        self.timer_log: List[int] = []
        self.status = Status.RUNNING
        self.fault: Optional[Fault] = None
        self.crash_step: Optional[int] = None

    # -- helpers ------------------------------------------------------------
    def mask(self, v: int) -> int:
        if self.masked:
            for r in self.regions:
                if r.start <= v < r.end:
                    return v & ~r.protected_mask
        return v

    def extract(self, v: int) -> int:
        for r in self.regions:
            if r.start <= v < r.end:
                return v & r.protected_mask
        return 0

    @property
    def pc(self) -> int:
        """The fetch PC as the hardware sees it (masked in masked mode)."""
        return self.mask(self.vpc)

    def _perm_ok(self, perms: int, need: int) -> bool:
        if not perms & need:
            return False
        return self.privileged or not perms & Perm.PRIV

    def can_fetch(self) -> bool:
        if self.fetch_stall or self.deferred is not None:
            return False
        return self.pending is None or self.pending.count < self.window

    # -- one step -----------------------------------------------------------
    def step(self) -> Optional[Request]:
        """Advance one request; returns None if this step crashed."""
        if self.status is not Status.RUNNING:
            raise RuntimeError("machine is not running")
        self.ua.step = self.steps
        self._cyc = self.ua.lat.step
        rob = self.rob
        if rob and rob[0].completed:
            req = self._commit()
        else:
            mem = None
            for e in rob:
                if e.addr is not None and not e.completed:
                    mem = e
                    break
            if mem is not None:
                req = self._memory(mem)
            elif self.pending is not None and (
                    self.pending.count >= self.window or not self.can_fetch()):
                req = self._resolve()
            elif self.can_fetch():
                req = self._fetch()
            else:
                raise AssertionError("core deadlocked")
        self.cycles += self._cyc
        if req is not None:
            self.steps += 1
        return req

    def _commit(self) -> Optional[Request]:
        e = self.rob[0]
        req = Request("check", self.arch_pc) if self.masked else NONE
        fault = e.fault or e.mem_fault
        if fault is None and self.masked:
            if self.extract(self.arch_pc) != e.correct_offset:
                fault = Fault.OBLIVIOUS
            elif e.precheck_ok is False:
                fault = Fault.OBLIVIOUS
        if fault is not None:
            self.status = Status.CRASHED
            self.fault = fault
            self.crash_step = self.steps
            self._cyc += self.ua.lat.fault
            self._rollback(e.seq - 1)
            return None
        assert self.arch_pc == e.vpc, "commit stream diverged from ArchPC"
        self.rob.pop(0)
        self.commits += 1
        undo = self.undo
        while undo and undo[0][0] <= e.seq:
            undo.popleft()
        op = e.inst.op
        # replicated next-PC logic on virtual values
        if op == BR:
            self.arch_pc = self.arch_pc + e.inst.imm
        elif op == BNZ:
            self.arch_pc = self.arch_pc + (e.inst.imm if e.taken else INST_BYTES)
        elif op == JMPR:
            self.arch_pc = e.target
        else:
            self.arch_pc = self.arch_pc + INST_BYTES
        if op == RDTSC:
            self.timer_log.append(e.value)
        elif op == HALT:
            self.status = Status.HALTED
        if e.addr is not None:
            self.ua.lsq = [x for x in self.ua.lsq if x.seq != e.seq]
        return req

    def _fetch(self) -> Request:
        ua = self.ua
        v = self.vpc
        key = self.mask(v)
        src = self.prev_vpc
        if self.masked:
            ua.check_key(key)
        if self.prev_branch:
            ua.bp_update(key, self.mask(src))
        req = Request("fetch", v, src)
        e = RobEntry(self.seq, v, key)
        self.seq += 1
        self.rob.append(e)
        pending = self.pending
        if pending is not None:
            pending.count += 1
        self.prev_vpc = v
        self.prev_branch = False

        t, cyc = ua.translate(key, self.pm)
        self._cyc += cyc
        inst = None
        if t is None:
            e.fault = Fault.PAGE
        elif not self._perm_ok(t[1], Perm.X):
            e.fault = Fault.PERMISSION
        else:
            e.correct_offset = offset_of(t, key, self.pm)
            paddr = (t[0] << PAGE_SHIFT) | (key & (PAGE_SIZE - 1))
            self._cyc += ua.touch(paddr, instruction=True)
            inst = self.pm.program.get(paddr)
            if inst is None:
                e.fault = Fault.UNDEFINED
        if inst is None:
            e.completed = True
            self.fetch_stall = True
            return req
        e.inst = inst
        op = inst.op
        regs = self.regs
        nxt = v + INST_BYTES
        e.completed = True
        if op == MOVI:
            self._set(e, inst.rd, inst.imm)
        elif op == ALU:
            b = inst.imm if inst.use_imm else regs[inst.rt]
            self._set(e, inst.rd, ALU_OPS[inst.alu](regs[inst.rs], b) & WORD_MASK)
        elif op == RDTSC:
            e.value = self.cycles + self._cyc
            self._set(e, inst.rd, e.value)
        elif op == BR:
            nxt = v + inst.imm
            self.prev_branch = True
        elif op == JMPR:
            e.target = nxt = regs[inst.rs]
            self.prev_branch = True
            if ua.bp.predict(key) != self.mask(nxt):
                self._cyc += ua.lat.btb_miss
        elif op == BNZ:
            e.completed = False
            e.taken = regs[inst.rs] != 0
            actual = v + inst.imm if e.taken else nxt
            predicted = v + inst.imm if ua.bp.predict_taken(key) else nxt
            nxt = predicted
            self.prev_branch = True
            if pending is None:
                self.pending = Pending(e, actual, actual != predicted)
            else:
                self.deferred = e
                e.target = actual
                e.value = int(actual != predicted)
        elif op in (LOAD, STORE, PREFETCH):
            e.completed = False
            e.addr = regs[inst.rs]
            if op == STORE:
                e.value = regs[inst.rt]
        elif op == HALT:
            self.fetch_stall = True
        elif op != NOP:
            raise AssertionError(f"unknown opcode {op}")
        self.vpc = nxt & WORD_MASK
        return req

    def _memory(self, e: RobEntry) -> Request:
        ua = self.ua
        op = e.inst.op
        v = e.addr
        key = self.mask(v)
        if self.masked:
            ua.check_key(key)
        if op == STORE:
            req = Request("store", v, 0, e.value)
            kind = "store"
        else:
            req = Request("load", v)
            kind = "prefetch" if op == PREFETCH else "load"
        t, cyc = ua.translate(key, self.pm)
        self._cyc += cyc
        extracted = self.extract(v) if self.masked else 0
        ok = False
        paddr = 0
        if t is None:
            if op != PREFETCH:
                e.mem_fault = Fault.PAGE
        else:
            need = Perm.W if op == STORE else Perm.R
            ok = self._perm_ok(t[1], need)
            if not ok and op != PREFETCH:
                e.mem_fault = Fault.PERMISSION
            if self.masked and op != PREFETCH:
                e.precheck_ok = extracted == offset_of(t, key, self.pm)
            paddr = (t[0] << PAGE_SHIFT) | (key & (PAGE_SIZE - 1))
        lsq_e = LsqEntry(e.seq, kind, key, t[0] if t else -1, t is not None,
                         e.value, extracted, e.precheck_ok)
        older = ua.lsq
        ua.lsq_push(lsq_e)
        if op == LOAD:
            fwd = None
            for s in reversed(older):
                if s.kind == "store" and s.key == key and s.translated:
                    fwd = s
                    break
            if fwd is not None:
                value = fwd.value
                self._cyc += ua.lat.forward
            elif ok:
                self._cyc += ua.touch(paddr)
                value = self.pm.read(paddr)
            else:
                value = None
            if e.mem_fault is None and value is not None:
                self._set(e, e.inst.rd, value)
                e.value = value
        elif op == STORE:
            if ok:
                self._cyc += ua.touch(paddr)
                self.undo.append((e.seq, None, paddr, paddr in self.pm.data,
                                  self.pm.data.get(paddr, 0)))
                self.pm.write(paddr, e.value)
        elif t is not None:
            self._cyc += ua.touch(paddr)
        e.completed = True
        return req

    def _resolve(self) -> Request:
        p = self.pending
        b = p.entry
        b.completed = True
        self.pending = None
        if p.mispredict:
            idx = self.rob.index(b)
            del self.rob[idx + 1:]
            self._rollback(b.seq)
            self.ua.lsq = [x for x in self.ua.lsq if x.seq <= b.seq]
            self.vpc = p.actual
            self.prev_vpc = b.vpc
            self.prev_branch = True
            self.fetch_stall = False
            self.deferred = None
        elif self.deferred is not None:
            d = self.deferred
            self.deferred = None
            self.pending = Pending(d, d.target, bool(d.value))
        return NONE

    def _set(self, e: RobEntry, r: int, value: int) -> None:
        self.undo.append((e.seq, r, self.regs[r]))
        self.regs[r] = value

    def _rollback(self, keep_seq: int) -> None:
        """Undo every write made by instructions younger than ``keep_seq``."""
        undo, data = self.undo, self.pm.data
        while undo and undo[-1][0] > keep_seq:
            u = undo.pop()
            if u[1] is not None:
                self.regs[u[1]] = u[2]
            elif u[3]:
                data[u[2]] = u[4]
            else:
                data.pop(u[2], None)

    # -- run ----------------------------------------------------------------
    def run(self, budget: int = 100_000, record_obs: bool = True) -> RunTrace:
        if budget < 0:
            raise ConfigError("budget must be non-negative")
        ua = self.ua
        ev0 = len(ua.log.events)
        requests: List[Request] = []
        obs = [ua.observe()] if record_obs else []
        timeline: List[int] = []
        start_cycles = self.cycles
        while self.status is Status.RUNNING and self.steps < budget:
            req = self.step()
            if req is None:
                break
            requests.append(req)
            timeline.append(self.cycles)
            if record_obs:
                obs.append(ua.observe())
        if self.status is Status.RUNNING:
            self.status = Status.BUDGET
        return RunTrace(self.status, len(requests),
                        self.cycles - start_cycles, requests, obs,
                        ua.log.events[ev0:], timeline, list(self.regs),
                        list(self.timer_log), self.commits, self.crash_step,
                        self.fault)


# -- construction -------------------------------------------------------------

RegSpec = Union[int, str]


def resolve_reg(value: RegSpec, layout: Optional[Layout]) -> int:
    """Register preload: an integer or ``@valid[+off]`` / ``@masked[+off]``."""
    if isinstance(value, int):
        return value & WORD_MASK
    s = str(value).strip()
    if not s.startswith("@"):
        return int(s, 0) & WORD_MASK
    name, _, off = s[1:].partition("+")
    off = int(off, 0) if off else 0
    if layout is None:
        raise ConfigError(f"{s} needs a layout")
    if name == "valid":
        return layout.virt_of(off)
    if name == "masked":
        return layout.masked_of(off)
    if name == "start":
        return layout.region.start + off
    raise ConfigError(f"unknown register reference {s!r}")


def resolve_regs(regs: Optional[Mapping[int, RegSpec]],
                 layout: Optional[Layout]) -> Dict[int, int]:
    return {int(k): resolve_reg(v, layout) for k, v in (regs or {}).items()}


def install(pm: PhysMem, prog: Program, pbase: int) -> None:
    for off, inst in prog.code:
        pm.program[pbase + off] = inst


def init(prog: Program, layout: Layout, mode, regs=None,
         static: Sequence[StaticMapping] = (), cfg: PtConfig = PT4,
         privileged: bool = True, geo: Geometry = Geometry(),
         lat: LatencyTable = LatencyTable(), window: int = DEFAULT_WINDOW,
         data: Optional[Mapping[int, int]] = None, record: bool = True,
         allocator=None) -> Machine:
    """Build the page table, load the program and reset the hardware."""
    mode = Mode(mode)
    if prog.length > layout.mapped_len:
        raise ConfigError("program does not fit the layout's mapped extent")
    perms = RX_KERNEL if privileged else RX_USER
    kw = {} if allocator is None else {"allocator": allocator}
    pm = build_page_table(layout, mode, static, cfg, program_perms=perms,
                          **kw)
    install(pm, prog, layout.pstart)
    for a, v in (data or {}).items():
        pm.write(a, v)
    ua = Uarch(geo, lat, record)
    return Machine(pm, ua, layout.entry, privileged,
                   resolve_regs(regs, layout), window)


# -- attacker/victim harness ------------------------------------------------

@dataclass(frozen=True)
class SystemConfig:
    attacker_code_pages: int = 16
    attacker_data_pages: int = 32
    kernel_data_pages: int = 4
    geo: Geometry = field(default_factory=Geometry)
    lat: LatencyTable = field(default_factory=LatencyTable)
    window: int = DEFAULT_WINDOW
    cfg: PtConfig = PT4
    record: bool = True


def standard_static(sc: SystemConfig) -> List[StaticMapping]:
    return [
        StaticMapping(ATTACKER_CODE_VA, ATTACKER_CODE_PA,
                      sc.attacker_code_pages, RX_USER),
        StaticMapping(ATTACKER_DATA_VA, ATTACKER_DATA_PA,
                      sc.attacker_data_pages, RW_USER),
        StaticMapping(KERNEL_DATA_VA, KERNEL_DATA_PA,
                      sc.kernel_data_pages, RW_KERNEL),
    ]


class System:
    """A victim kernel plus an unprivileged attacker sharing one mu.

    Each phase runs on a fresh core; memory and microarchitectural state
    persist across phases until ``reset_uarch``.
    """

    def __init__(self, mode, layout: Optional[Layout],
                 victim: Optional[Program] = None,
                 sc: Optional[SystemConfig] = None,
                 data: Optional[Mapping[int, int]] = None,
                 region: Optional[RandRegion] = None):
        self.sc = sc or SystemConfig()
        self.mode = Mode(mode)
        self.layout = layout
        if region is None:
            if layout is None:
                raise ConfigError("need a layout or a region")
            region = layout.region
        self.region = region
        self.pm = build_page_table(layout, self.mode, standard_static(self.sc),
                                   self.sc.cfg, program_perms=RX_KERNEL,
                                   regions=(region,))
        if victim is not None:
            if layout is None:
                raise ConfigError("a victim program needs a layout")
            if victim.length > layout.mapped_len:
                raise ConfigError("victim does not fit the layout")
            install(self.pm, victim, layout.pstart)
        for a, v in (data or {}).items():
            self.pm.write(a, v)
        self.ua = Uarch(self.sc.geo, self.sc.lat, self.sc.record)

    def reset_uarch(self) -> None:
        self.ua = Uarch(self.sc.geo, self.sc.lat, self.sc.record)

    def _run(self, entry, privileged, regs, budget, record_obs):
        m = Machine(self.pm, self.ua, entry, privileged,
                    resolve_regs(regs, self.layout), self.sc.window)
        return m.run(budget, record_obs)

    def run_victim(self, regs=None, entry_offset: int = 0,
                   budget: int = 10_000, record_obs: bool = False) -> RunTrace:
        if self.layout is None:
            raise ConfigError("no victim is mapped")
        return self._run(self.layout.virt_of(entry_offset), True, regs,
                         budget, record_obs)

    def load_attacker(self, prog: Program) -> None:
        if prog.length > self.sc.attacker_code_pages * PAGE_SIZE:
            raise ConfigError("attacker program exceeds its code pages")
        end = ATTACKER_CODE_PA + self.sc.attacker_code_pages * PAGE_SIZE
        for a in [a for a in self.pm.program if ATTACKER_CODE_PA <= a < end]:
            del self.pm.program[a]
        install(self.pm, prog, ATTACKER_CODE_PA)

    def run_attacker(self, prog: Optional[Program] = None, regs=None,
                     entry_offset: int = 0, budget: int = 100_000,
                     record_obs: bool = False) -> RunTrace:
        if prog is not None:
            self.load_attacker(prog)
        return self._run(ATTACKER_CODE_VA + entry_offset, False, regs, budget,
                         record_obs)


def attacker_data(page: int, offset: int = 0) -> int:
    return ATTACKER_DATA_VA + page * PAGE_SIZE + offset


def attacker_data_phys(page: int, offset: int = 0) -> int:
    return ATTACKER_DATA_PA + page * PAGE_SIZE + offset

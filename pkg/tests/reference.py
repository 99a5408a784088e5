"""In-order architectural interpreter used as the squash-soundness oracle.

It shares no code with the speculative core: translation is recomputed
from the layout, faults from explicit permission rules.
"""
from aslrmask.isa import (ALU, BNZ, BR, HALT, JMPR, LOAD, MOVI, NOP,
                          PREFETCH, RDTSC, STORE)
from aslrmask.machine import KERNEL_DATA_PA, KERNEL_DATA_VA

MASK64 = (1 << 64) - 1
OPS = {
    "add": lambda a, b: (a + b) & MASK64,
    "sub": lambda a, b: (a - b) & MASK64,
    "and": lambda a, b: a & b,
    "or": lambda a, b: a | b,
    "xor": lambda a, b: a ^ b,
    "shl": lambda a, b: (a << (b % 64)) & MASK64,
    "shr": lambda a, b: a >> (b % 64),
}


def translate(v, layout, oreo):
    """(paddr, writable, fault) for a privileged data access."""
    if KERNEL_DATA_VA <= v < KERNEL_DATA_VA + 0x1000:
        return KERNEL_DATA_PA + (v - KERNEL_DATA_VA), True, None
    r = layout.region
    if not r.start <= v < r.end:
        return None, False, "PageFault"
    inner = (v - r.start) % r.subregion_len
    if inner >= layout.mapped_len:
        return None, False, "PageFault"
    sub = (v - r.start) // r.subregion_len
    if sub != layout.index:
        if not oreo:
            return None, False, "PageFault"
        # translates through the masked page; the commit check fails
        return layout.pstart + inner, False, "ObliviousCheckFault"
    return layout.pstart + inner, False, None


def run_reference(prog, layout, oreo, regs, data, max_steps=10_000):
    code = prog.as_dict()
    regs = list(regs)
    data = dict(data)
    pc = 0
    commits = 0
    for _ in range(max_steps):
        inst = code.get(pc)
        if inst is None:
            return "Crashed", "UndefinedInstruction", commits, regs, data
        op = inst.op
        nxt = pc + 4
        if op == MOVI:
            regs[inst.rd] = inst.imm
        elif op == ALU:
            b = inst.imm if inst.use_imm else regs[inst.rt]
            regs[inst.rd] = OPS[inst.alu](regs[inst.rs], b)
        elif op == BR:
            nxt = pc + inst.imm
        elif op == BNZ:
            if regs[inst.rs]:
                nxt = pc + inst.imm
        elif op == JMPR:
            nxt = regs[inst.rs] - layout.entry
        elif op in (LOAD, STORE):
            paddr, writable, fault = translate(regs[inst.rs], layout, oreo)
            if op == STORE and paddr is not None and not writable:
                fault = "PermissionFault"
            if fault:
                return "Crashed", fault, commits, regs, data
            if op == LOAD:
                regs[inst.rd] = data.get(paddr, 0)
            else:
                data[paddr] = regs[inst.rt]
        elif op == HALT:
            return "Halted", None, commits + 1, regs, data
        elif op not in (NOP, PREFETCH, RDTSC):
            raise AssertionError(op)
        commits += 1
        pc = nxt
    raise AssertionError("reference did not terminate")

"""A tiny ISA and its text assembler.

Each instruction is 4 bytes.  Assembly is one mnemonic per line::

    start:  movi r1, 0x10
            load r2, r1        ; r2 = mem[r1]
            bnz  r2, start
            halt

Labels end with ``:``; ``;`` and ``#`` start comments; ``.org OFF`` moves
the location counter to a byte offset.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .addr import ConfigError

INST_BYTES = 4
NUM_REGS = 16
WORD_MASK = (1 << 64) - 1

ALU_OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "and": lambda a, b: a & b,
    "or": lambda a, b: a | b,
    "xor": lambda a, b: a ^ b,
    "shl": lambda a, b: a << (b & 63),
    "shr": lambda a, b: a >> (b & 63),
}

# opcodes
NOP, MOVI, BR, BNZ, JMPR, LOAD, STORE, PREFETCH, RDTSC, HALT, ALU = range(11)
MEMORY_OPS = (LOAD, STORE, PREFETCH)
OP_NAMES = ("nop", "movi", "br", "bnz", "jmpr", "load", "store", "prefetch",
            "rdtsc", "halt", "alu")


@dataclass(frozen=True)
class Inst:
    op: int
    rd: int = 0
    rs: int = 0
    rt: int = 0
    imm: int = 0
    alu: str = ""
    use_imm: bool = False

    def __str__(self):
        name = self.alu if self.op == ALU else OP_NAMES[self.op]
        return f"{name} rd={self.rd} rs={self.rs} rt={self.rt} imm={self.imm:#x}"


def Nop() -> Inst:
    return Inst(NOP)


def MovImm(reg: int, value: int) -> Inst:
    return Inst(MOVI, rd=reg, imm=value & WORD_MASK)


def DirectBranch(rel: int) -> Inst:
    return Inst(BR, imm=rel)


def CondBranch(rel: int, reg: int) -> Inst:
    """Taken when ``reg`` is nonzero."""
    return Inst(BNZ, rs=reg, imm=rel)


def IndirectJump(reg: int) -> Inst:
    return Inst(JMPR, rs=reg)


def Load(dst: int, addr_reg: int) -> Inst:
    return Inst(LOAD, rd=dst, rs=addr_reg)


def Store(addr_reg: int, val_reg: int) -> Inst:
    return Inst(STORE, rs=addr_reg, rt=val_reg)


def Prefetch(addr_reg: int) -> Inst:
    return Inst(PREFETCH, rs=addr_reg)


def ReadTimer(dst: int) -> Inst:
    return Inst(RDTSC, rd=dst)


def Halt() -> Inst:
    return Inst(HALT)


def Alu(op: str, dst: int, src: int, src2: int = 0,
        imm: Optional[int] = None) -> Inst:
    if op not in ALU_OPS:
        raise ConfigError(f"unknown ALU op {op!r}")
    if imm is None:
        return Inst(ALU, rd=dst, rs=src, rt=src2, alu=op)
    return Inst(ALU, rd=dst, rs=src, imm=imm & WORD_MASK, alu=op,
                use_imm=True)


@dataclass(frozen=True)
class Program:
    """Instructions by byte offset from the program start."""

    code: Tuple[Tuple[int, Inst], ...]
    labels: Tuple[Tuple[str, int], ...] = ()

    @property
    def length(self) -> int:
        return max(off for off, _ in self.code) + INST_BYTES if self.code else 0

    def label(self, name: str) -> int:
        for k, v in self.labels:
            if k == name:
                return v
        raise ConfigError(f"unknown label {name!r}")

    def as_dict(self) -> Dict[int, Inst]:
        return dict(self.code)


def program(insts: List[Inst], base: int = 0) -> Program:
    return Program(tuple((base + i * INST_BYTES, x)
                         for i, x in enumerate(insts)))


_REG = re.compile(r"^r(\d+)$")


def _reg(tok: str, lineno: int) -> int:
    m = _REG.match(tok.lower())
    if not m or int(m.group(1)) >= NUM_REGS:
        raise ConfigError(f"line {lineno}: bad register {tok!r}")
    return int(m.group(1))


def _imm(tok: str, lineno: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad immediate {tok!r}") from None


_ARITY = {"nop": 0, "halt": 0, "movi": 2, "br": 1, "bnz": 2, "jmpr": 1,
          "load": 2, "store": 2, "prefetch": 1, "rdtsc": 1}


def assemble(text: str) -> Program:
    lines: List[Tuple[int, int, str, List[str]]] = []
    labels: Dict[str, int] = {}
    pc = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = re.split(r"[;#]", raw, maxsplit=1)[0].strip()
        while True:
            m = re.match(r"^([A-Za-z_.][\w.]*):\s*(.*)$", line)
            if not m:
                break
            if m.group(1) in labels:
                raise ConfigError(f"line {lineno}: duplicate label {m.group(1)}")
            labels[m.group(1)] = pc
            line = m.group(2)
        if not line:
            continue
        parts = line.replace(",", " ").split()
        mn, args = parts[0].lower(), parts[1:]
        if mn == ".org":
            if len(args) != 1:
                raise ConfigError(f"line {lineno}: .org takes one offset")
            new = _imm(args[0], lineno)
            if new < pc or new % INST_BYTES:
                raise ConfigError(f"line {lineno}: .org must move forward "
                                  "to an aligned offset")
            pc = new
            continue
        lines.append((lineno, pc, mn, args))
        pc += INST_BYTES

    code = []
    for lineno, at, mn, args in lines:
        code.append((at, _encode(mn, args, at, labels, lineno)))
    if not code:
        raise ConfigError("empty program")
    return Program(tuple(code), tuple(sorted(labels.items())))


def _target(tok: str, at: int, labels: Dict[str, int], lineno: int) -> int:
    if tok in labels:
        return labels[tok] - at
    return _imm(tok, lineno)


def _encode(mn: str, a: List[str], at: int, labels: Dict[str, int],
            lineno: int) -> Inst:
    if mn in _ARITY and len(a) != _ARITY[mn]:
        raise ConfigError(f"line {lineno}: {mn} takes {_ARITY[mn]} operands")
    if mn == "nop":
        return Nop()
    if mn == "halt":
        return Halt()
    if mn == "movi":
        return MovImm(_reg(a[0], lineno), _imm(a[1], lineno))
    if mn == "br":
        return DirectBranch(_target(a[0], at, labels, lineno))
    if mn == "bnz":
        return CondBranch(_target(a[1], at, labels, lineno), _reg(a[0], lineno))
    if mn == "jmpr":
        return IndirectJump(_reg(a[0], lineno))
    if mn == "load":
        return Load(_reg(a[0], lineno), _reg(a[1], lineno))
    if mn == "store":
        return Store(_reg(a[0], lineno), _reg(a[1], lineno))
    if mn == "prefetch":
        return Prefetch(_reg(a[0], lineno))
    if mn == "rdtsc":
        return ReadTimer(_reg(a[0], lineno))
    if mn in ALU_OPS:
        if len(a) != 3:
            raise ConfigError(f"line {lineno}: {mn} takes 3 operands")
        return Alu(mn, _reg(a[0], lineno), _reg(a[1], lineno),
                   _reg(a[2], lineno))
    if mn.endswith("i") and mn[:-1] in ALU_OPS:
        if len(a) != 3:
            raise ConfigError(f"line {lineno}: {mn} takes 3 operands")
        return Alu(mn[:-1], _reg(a[0], lineno), _reg(a[1], lineno),
                   imm=_imm(a[2], lineno))
    raise ConfigError(f"line {lineno}: unknown mnemonic {mn!r}")

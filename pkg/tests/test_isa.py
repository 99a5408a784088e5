import pytest

from aslrmask.addr import ConfigError
from aslrmask.isa import (ALU, BNZ, BR, HALT, LOAD, MOVI, Alu, CondBranch,
                          Halt, Load, MovImm, assemble, program)


def test_assemble_basic():
    p = assemble("""
    start:  movi r1, 0x10     ; comment
            load r2, r1       # other comment
            bnz r2, start
            addi r3, r3, 5
            xor r4, r3, r1
            halt
    """)
    ops = [i.op for _, i in p.code]
    assert ops == [MOVI, LOAD, BNZ, ALU, ALU, HALT]
    assert p.as_dict()[8].imm == -8
    assert p.as_dict()[12].use_imm and p.as_dict()[12].imm == 5
    assert p.label("start") == 0
    assert p.length == 24


def test_org_and_labels():
    p = assemble("br far\n.org 0x100\nfar: halt")
    assert p.as_dict()[0].imm == 0x100
    assert p.length == 0x104
    assert p.as_dict()[0x100].op == HALT


def test_program_builder():
    p = program([MovImm(1, 5), CondBranch(8, 1), Halt()])
    assert [o for o, _ in p.code] == [0, 4, 8]
    assert p.as_dict()[0].imm == 5


def test_negative_immediate_wraps():
    assert MovImm(1, -1).imm == (1 << 64) - 1
    assert Alu("sub", 1, 1, imm=-1).imm == (1 << 64) - 1


@pytest.mark.parametrize("src", [
    "", "bogus r1", "movi r99, 1", "movi r1", "load r1, 5", "a:\na: halt",
    ".org 3\nhalt", "halt\nhalt\n.org 0", "bnz r1, 0xzz", "addi r1, r2",
])
def test_assembler_errors(src):
    with pytest.raises(ConfigError):
        assemble(src)


def test_unknown_alu_op():
    with pytest.raises(ConfigError):
        Alu("mul", 1, 2, 3)
    with pytest.raises(ConfigError):
        program([Halt()]).label("nope")

"""Register IR for analysis targets: 16 registers, one address unit per instruction.

Corpus enclaves (and user-authored targets) are written in a small
line-oriented assembly:

    .entry e_do_thing          ; exported ECALL entry symbol
    .global g_state 0x110000 8 ; named data symbol (address + size)
    .data 0x110000 00000000    ; initial bytes (hex) at an absolute address

    e_do_thing:
        const r1, 0x20
        load.8 r2, [r0+8]      ; width suffix in bytes: 1/2/4/8
        add r3, r2, r1
        br r3, done, fail      ; fork on r3 != 0
    done:
        ret
    fail:
        halt

Comments run from ';' to end of line.  Numeric literals are decimal or
0x-hex; `const` also accepts a defined symbol name as its immediate.
Register r15 is the stack pointer by convention: `call` pushes the
return address, `ret` pops it.  `intrinsic name` is a call to a bodyless
symbol that must be bound to a builtin hook at load time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

REG_COUNT = 16
STACK_REG = 15
MEM_SIZES = (1, 2, 4, 8)
OFF_MIN, OFF_MAX = -(1 << 31), (1 << 31) - 1

BINOP_MNEMONICS = ("add", "sub", "mul", "udiv", "urem", "and", "or", "xor", "shl", "lshr", "ashr")
CMP_MNEMONICS = ("eq", "ne", "ult", "ule", "slt", "sle")
UNARY_MNEMONICS = ("not", "neg")


class AsmError(ValueError):
    """Assembly failure with source position."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" at line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(message + where)


@dataclass(frozen=True)
class Instruction:
    op: str
    rd: int | None = None
    rs: int | None = None
    rt: int | None = None
    imm: int | None = None
    off: int = 0
    size: int | None = None
    target: int | None = None
    target2: int | None = None
    sym: str | None = None


@dataclass(frozen=True)
class Symbol:
    name: str
    kind: str  # "code" | "data"
    addr: int
    size: int = 0


@dataclass(frozen=True)
class Program:
    code_base: int
    instructions: tuple[Instruction, ...]
    symbols: tuple[Symbol, ...] = ()
    entries: tuple[str, ...] = ()
    data: tuple[tuple[int, bytes], ...] = ()  # (address, initial bytes)

    @property
    def code_end(self) -> int:
        return self.code_base + len(self.instructions)

    def symtab(self) -> dict[str, Symbol]:
        return {s.name: s for s in self.symbols}

    def instruction_at(self, addr: int) -> Instruction | None:
        idx = addr - self.code_base
        if 0 <= idx < len(self.instructions):
            return self.instructions[idx]
        return None

    def symbol_at(self, addr: int) -> str | None:
        for s in self.symbols:
            if s.addr == addr and s.kind == "code":
                return s.name
        return None

    def symbols_at(self, addr: int) -> list[str]:
        return [s.name for s in self.symbols if s.addr == addr and s.kind == "code"]


_LABEL_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_.$]*):")
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.$]*$")
_MEM_RE = re.compile(r"^\[\s*(r\d+)\s*(?:([+-])\s*([0-9][xX0-9a-fA-F]*|\d+))?\s*\]$")


def _parse_int(tok: str, line: int) -> int:
    t = tok.strip()
    neg = t.startswith("-")
    if neg:
        t = t[1:]
    try:
        val = int(t, 16) if t.lower().startswith("0x") else int(t, 10)
    except ValueError:
        raise AsmError(f"bad numeric literal {tok!r}", line) from None
    return -val if neg else val


def _parse_reg(tok: str, line: int) -> int:
    t = tok.strip().lower()
    if not t.startswith("r"):
        raise AsmError(f"expected register, got {tok!r}", line)
    try:
        n = int(t[1:])
    except ValueError:
        raise AsmError(f"expected register, got {tok!r}", line) from None
    if not 0 <= n < REG_COUNT:
        raise AsmError(f"register {tok} out of range r0..r{REG_COUNT - 1}", line)
    return n


def _parse_mem(tok: str, line: int) -> tuple[int, int]:
    m = _MEM_RE.match(tok.strip())
    if not m:
        raise AsmError(f"expected memory operand [rN+off], got {tok!r}", line)
    reg = _parse_reg(m.group(1), line)
    off = 0
    if m.group(3) is not None:
        off = _parse_int(m.group(3), line)
        if m.group(2) == "-":
            off = -off
    if not OFF_MIN <= off <= OFF_MAX:
        raise AsmError(f"offset {off} exceeds signed 32-bit range", line)
    return reg, off


def _split_operands(rest: str) -> list[str]:
    return [p.strip() for p in rest.split(",")] if rest.strip() else []


def assemble(text: str, code_base: int = 0) -> Program:
    """Assemble source text into a Program with all labels resolved."""
    pending_labels: list[tuple[str, int]] = []
    raw: list[tuple[int, str, list[str]]] = []  # (line, mnemonic, operands)
    label_defs: dict[str, int] = {}  # name -> instruction index
    label_lines: dict[str, int] = {}
    entries: list[str] = []
    globals_decl: list[tuple[str, int, int, int]] = []  # name, addr, size, line
    data_images: list[tuple[int, bytes, int]] = []

    for lineno, src in enumerate(text.splitlines(), start=1):
        line = src.split(";", 1)[0].strip()
        if not line:
            continue
        while True:
            m = _LABEL_RE.match(line)
            if not m:
                break
            name = m.group(1)
            if name in label_defs or name in label_lines:
                raise AsmError(f"duplicate symbol {name!r}", lineno)
            label_lines[name] = lineno
            pending_labels.append((name, lineno))
            line = line[m.end():].strip()
        if not line:
            continue
        if line.startswith("."):
            parts = line.split()
            directive = parts[0]
            if directive == ".entry":
                if len(parts) != 2:
                    raise AsmError(".entry expects one symbol name", lineno)
                entries.append(parts[1])
            elif directive == ".global":
                if len(parts) != 4:
                    raise AsmError(".global expects: name addr size", lineno)
                name = parts[1]
                if not _NAME_RE.match(name):
                    raise AsmError(f"bad symbol name {name!r}", lineno)
                globals_decl.append((name, _parse_int(parts[2], lineno), _parse_int(parts[3], lineno), lineno))
            elif directive == ".data":
                if len(parts) != 3:
                    raise AsmError(".data expects: addr hex-bytes", lineno)
                addr = _parse_int(parts[1], lineno)
                hexstr = parts[2]
                if len(hexstr) % 2 != 0 or not re.fullmatch(r"[0-9a-fA-F]+", hexstr):
                    raise AsmError("bad hex byte string", lineno)
                data_images.append((addr, bytes.fromhex(hexstr), lineno))
            else:
                raise AsmError(f"unknown directive {directive!r}", lineno)
            continue
        mnemonic, _, rest = line.partition(" ")
        mnemonic = mnemonic.lower()
        for name, _ln in pending_labels:
            label_defs[name] = len(raw)
        pending_labels.clear()
        raw.append((lineno, mnemonic, _split_operands(rest)))

    if pending_labels:
        # trailing labels point one past the last instruction; reject to keep
        # every code symbol executable
        name, lineno = pending_labels[0]
        raise AsmError(f"label {name!r} does not precede an instruction", lineno)

    symtab: dict[str, Symbol] = {}
    for name, idx in label_defs.items():
        symtab[name] = Symbol(name, "code", code_base + idx)
    for name, addr, size, lineno in globals_decl:
        if name in symtab:
            raise AsmError(f"duplicate symbol {name!r}", lineno)
        if size <= 0:
            raise AsmError(f".global {name}: size must be positive", lineno)
        symtab[name] = Symbol(name, "data", addr, size)

    def resolve(tok: str, lineno: int) -> int:
        if tok[0].isdigit() or tok[0] == "-":
            return _parse_int(tok, lineno)
        sym = symtab.get(tok)
        if sym is None:
            raise AsmError(f"undefined label {tok!r}", lineno)
        return sym.addr

    instrs: list[Instruction] = []
    for lineno, op, ops in raw:
        if op == "const":
            if len(ops) != 2:
                raise AsmError("const expects: rd, imm", lineno)
            imm = resolve(ops[1], lineno) if _NAME_RE.match(ops[1]) else _parse_int(ops[1], lineno)
            instrs.append(Instruction("const", rd=_parse_reg(ops[0], lineno), imm=imm & ((1 << 64) - 1)))
        elif op == "mov":
            if len(ops) != 2:
                raise AsmError("mov expects: rd, rs", lineno)
            instrs.append(Instruction("mov", rd=_parse_reg(ops[0], lineno), rs=_parse_reg(ops[1], lineno)))
        elif op in BINOP_MNEMONICS or op in CMP_MNEMONICS:
            if len(ops) != 3:
                raise AsmError(f"{op} expects: rd, rs, rt", lineno)
            instrs.append(Instruction(op, rd=_parse_reg(ops[0], lineno),
                                      rs=_parse_reg(ops[1], lineno), rt=_parse_reg(ops[2], lineno)))
        elif op in UNARY_MNEMONICS:
            if len(ops) != 2:
                raise AsmError(f"{op} expects: rd, rs", lineno)
            instrs.append(Instruction(op, rd=_parse_reg(ops[0], lineno), rs=_parse_reg(ops[1], lineno)))
        elif op.startswith("load.") or op.startswith("store."):
            base, _, suffix = op.partition(".")
            try:
                size = int(suffix)
            except ValueError:
                raise AsmError(f"bad width suffix in {op!r}", lineno) from None
            if size not in MEM_SIZES:
                raise AsmError(f"illegal access width {size} (must be 1/2/4/8)", lineno)
            if len(ops) != 2:
                raise AsmError(f"{base}.{size} expects two operands", lineno)
            if base == "load":
                reg, off = _parse_mem(ops[1], lineno)
                instrs.append(Instruction("load", rd=_parse_reg(ops[0], lineno), rs=reg, off=off, size=size))
            else:
                reg, off = _parse_mem(ops[0], lineno)
                instrs.append(Instruction("store", rs=reg, off=off, rt=_parse_reg(ops[1], lineno), size=size))
        elif op == "jmp":
            if len(ops) != 1:
                raise AsmError("jmp expects one target", lineno)
            instrs.append(Instruction("jmp", target=resolve(ops[0], lineno)))
        elif op == "jmpr":
            if len(ops) != 1:
                raise AsmError("jmpr expects one register", lineno)
            instrs.append(Instruction("jmpr", rs=_parse_reg(ops[0], lineno)))
        elif op == "br":
            if len(ops) != 3:
                raise AsmError("br expects: rs, label_true, label_false", lineno)
            instrs.append(Instruction("br", rs=_parse_reg(ops[0], lineno),
                                      target=resolve(ops[1], lineno), target2=resolve(ops[2], lineno)))
        elif op == "call":
            if len(ops) != 1:
                raise AsmError("call expects one target", lineno)
            instrs.append(Instruction("call", target=resolve(ops[0], lineno)))
        elif op == "callr":
            if len(ops) != 1:
                raise AsmError("callr expects one register", lineno)
            instrs.append(Instruction("callr", rs=_parse_reg(ops[0], lineno)))
        elif op == "ret":
            if ops:
                raise AsmError("ret takes no operands", lineno)
            instrs.append(Instruction("ret"))
        elif op == "halt":
            if ops:
                raise AsmError("halt takes no operands", lineno)
            instrs.append(Instruction("halt"))
        elif op == "intrinsic":
            if len(ops) != 1 or not _NAME_RE.match(ops[0]):
                raise AsmError("intrinsic expects one symbol name", lineno)
            instrs.append(Instruction("intrinsic", sym=ops[0]))
        else:
            raise AsmError(f"unknown mnemonic {op!r}", lineno)

    for e in entries:
        if e not in symtab or symtab[e].kind != "code":
            raise AsmError(f"entry symbol {e!r} is not a defined code label")

    program = Program(
        code_base=code_base,
        instructions=tuple(instrs),
        symbols=tuple(sorted(symtab.values(), key=lambda s: (s.addr, s.name))),
        entries=tuple(entries),
        data=tuple(sorted((a, b) for a, b, _ in data_images)),
    )
    diags = validate(program)
    if diags:
        raise AsmError("; ".join(diags))
    return program


def validate(program: Program) -> list[str]:
    """Diagnostics for every violated Program invariant (empty list = valid)."""
    diags: list[str] = []
    code_lo, code_hi = program.code_base, program.code_end

    def _reg_ok(r):
        return r is None or 0 <= r < REG_COUNT

    for i, ins in enumerate(program.instructions):
        where = f"instr {i} ({ins.op})"
        if not (_reg_ok(ins.rd) and _reg_ok(ins.rs) and _reg_ok(ins.rt)):
            diags.append(f"{where}: register index out of range")
        if ins.op in ("load", "store") and ins.size not in MEM_SIZES:
            diags.append(f"{where}: illegal access width {ins.size}")
        if not OFF_MIN <= ins.off <= OFF_MAX:
            diags.append(f"{where}: offset out of signed 32-bit range")
        for t in (ins.target, ins.target2):
            if t is not None and not code_lo <= t < code_hi:
                diags.append(f"{where}: target {t:#x} outside code")
        if ins.imm is not None and not 0 <= ins.imm < (1 << 64):
            diags.append(f"{where}: immediate out of 64-bit range")

    names = [s.name for s in program.symbols]
    if len(names) != len(set(names)):
        diags.append("duplicate symbol names")
    for s in program.symbols:
        if s.kind == "code" and not code_lo <= s.addr < code_hi:
            diags.append(f"code symbol {s.name!r} at {s.addr:#x} outside code")

    ranges = [(a, a + len(b), f"data at {a:#x}") for a, b in program.data if b]
    if program.instructions:
        ranges.append((code_lo, code_hi, "code"))
    ranges.sort()
    for (a0, a1, n0), (b0, b1, n1) in zip(ranges, ranges[1:]):
        if b0 < a1:
            diags.append(f"{n0} overlaps {n1}")

    symtab = program.symtab()
    for e in program.entries:
        if e not in symtab or symtab[e].kind != "code":
            diags.append(f"entry symbol {e!r} missing or not code")
    return diags


def _fmt_mem(reg: int, off: int) -> str:
    if off == 0:
        return f"[r{reg}]"
    return f"[r{reg}+{off:#x}]" if off > 0 else f"[r{reg}-{-off:#x}]"


def disassemble(program: Program) -> str:
    """Textual listing that re-assembles to a structurally identical Program."""
    lines: list[str] = []
    for e in program.entries:
        lines.append(f".entry {e}")
    for s in program.symbols:
        if s.kind == "data":
            lines.append(f".global {s.name} {s.addr:#x} {s.size}")
    for addr, blob in program.data:
        lines.append(f".data {addr:#x} {blob.hex()}")

    code_syms: dict[int, list[str]] = {}
    for s in program.symbols:
        if s.kind == "code":
            code_syms.setdefault(s.addr, []).append(s.name)

    def target_name(addr: int) -> str:
        names = code_syms.get(addr)
        return names[0] if names else f"{addr:#x}"

    for i, ins in enumerate(program.instructions):
        for name in code_syms.get(program.code_base + i, ()):
            lines.append(f"{name}:")
        if ins.op == "const":
            lines.append(f"    const r{ins.rd}, {ins.imm:#x}")
        elif ins.op == "mov":
            lines.append(f"    mov r{ins.rd}, r{ins.rs}")
        elif ins.op in BINOP_MNEMONICS or ins.op in CMP_MNEMONICS:
            lines.append(f"    {ins.op} r{ins.rd}, r{ins.rs}, r{ins.rt}")
        elif ins.op in UNARY_MNEMONICS:
            lines.append(f"    {ins.op} r{ins.rd}, r{ins.rs}")
        elif ins.op == "load":
            lines.append(f"    load.{ins.size} r{ins.rd}, {_fmt_mem(ins.rs, ins.off)}")
        elif ins.op == "store":
            lines.append(f"    store.{ins.size} {_fmt_mem(ins.rs, ins.off)}, r{ins.rt}")
        elif ins.op == "jmp":
            lines.append(f"    jmp {target_name(ins.target)}")
        elif ins.op == "jmpr":
            lines.append(f"    jmpr r{ins.rs}")
        elif ins.op == "br":
            lines.append(f"    br r{ins.rs}, {target_name(ins.target)}, {target_name(ins.target2)}")
        elif ins.op == "call":
            lines.append(f"    call {target_name(ins.target)}")
        elif ins.op == "callr":
            lines.append(f"    callr r{ins.rs}")
        elif ins.op in ("ret", "halt"):
            lines.append(f"    {ins.op}")
        elif ins.op == "intrinsic":
            lines.append(f"    intrinsic {ins.sym}")
        else:  # pragma: no cover
            raise ValueError(f"cannot format {ins.op!r}")
    return "\n".join(lines) + ("\n" if lines else "")

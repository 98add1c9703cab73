"""Width-tagged bitvector expression trees with provenance-labeled symbols.

Expressions are immutable values: every node carries an explicit width
(1..64 bits), constants are reduced modulo 2**width, and structural
equality/hashing is decidable and cached.  Symbols carry a set of origin
labels that the memory subsystem and the detectors use to trace a value
back to attacker-controlled roots (ECALL arguments, host memory, global
state).

The operator set is closed: add, sub, mul, udiv, urem, and, or, xor, not,
neg, shl, lshr, ashr, eq, ne, ult, ule, slt, sle, ite, zext, sext,
extract, concat.  Division is total: x/0 = all-ones, x%0 = x.  Shifts by
amounts >= width yield 0 (or the sign fill for ashr).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping

MAX_WIDTH = 64

BINARY_OPS = frozenset(
    {"add", "sub", "mul", "udiv", "urem", "and", "or", "xor", "shl", "lshr", "ashr"}
)
CMP_OPS = frozenset({"eq", "ne", "ult", "ule", "slt", "sle"})
UNARY_OPS = frozenset({"not", "neg"})
SPECIAL_OPS = frozenset({"ite", "zext", "sext", "extract", "concat"})
ALL_OPS = BINARY_OPS | CMP_OPS | UNARY_OPS | SPECIAL_OPS


class ExprError(ValueError):
    """Malformed expression construction."""


class WidthError(ExprError):
    pass


class ArityError(ExprError):
    pass


class EvalError(ValueError):
    """Evaluation failed (unassigned symbol)."""


# ---------------------------------------------------------------------------
# Provenance labels

@dataclass(frozen=True)
class Label:
    """One provenance label attached to a symbol.

    kind is one of: ecall-arg, host-memory, global-state, deref-of,
    enclave-alloc, constant.  ecall-arg carries (param, offset); deref-of
    carries the registry id of the address expression it was loaded from.
    """

    kind: str
    param: int | None = None
    offset: int | None = None
    source_id: int | None = None


HOST_MEMORY = Label("host-memory")
GLOBAL_STATE = Label("global-state")
ENCLAVE_ALLOC = Label("enclave-alloc")
CONSTANT = Label("constant")

ATTACKER_ROOT_KINDS = frozenset({"ecall-arg", "host-memory", "global-state"})


def arg_label(param: int, offset: int = 0) -> Label:
    return Label("ecall-arg", param=param, offset=offset)


def deref_label(source_id: int) -> Label:
    return Label("deref-of", source_id=source_id)


# ---------------------------------------------------------------------------
# Expression nodes

def _mask(width: int) -> int:
    return (1 << width) - 1


class Expr:
    """Immutable bitvector expression node."""

    __slots__ = ("kind", "op", "width", "value", "sym_id", "labels", "args", "params", "_hash")

    def __init__(self, kind, width, op=None, args=(), value=0, sym_id=-1,
                 labels=frozenset(), params=()):
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "args", tuple(args))
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "sym_id", sym_id)
        object.__setattr__(self, "labels", frozenset(labels))
        object.__setattr__(self, "params", tuple(params))
        object.__setattr__(
            self,
            "_hash",
            hash((kind, width, op, value, sym_id, self.params,
                  tuple(a._hash for a in self.args))),
        )

    def __setattr__(self, name, value):  # pragma: no cover - guard only
        raise AttributeError("Expr is immutable")

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        if self._hash != other._hash:
            return False
        return (
            self.kind == other.kind
            and self.width == other.width
            and self.op == other.op
            and self.value == other.value
            and self.sym_id == other.sym_id
            and self.params == other.params
            and self.args == other.args
        )

    @property
    def is_const(self) -> bool:
        return self.kind == "const"

    @property
    def is_sym(self) -> bool:
        return self.kind == "sym"

    def __repr__(self):
        return to_str(self)


def to_str(e: Expr) -> str:
    """Render an expression as a compact s-expression string."""
    if e.kind == "const":
        return f"{e.value:#x}:{e.width}"
    if e.kind == "sym":
        return f"s{e.sym_id}:{e.width}"
    if e.op == "extract":
        hi, lo = e.params
        return f"(extract[{hi}:{lo}] {to_str(e.args[0])})"
    if e.op in ("zext", "sext"):
        return f"({e.op}{e.width} {to_str(e.args[0])})"
    inner = " ".join(to_str(a) for a in e.args)
    return f"({e.op} {inner})"


class Context:
    """Per-analysis allocator for symbol ids and deref-source registry.

    One exploration owns one Context, which keeps symbol numbering and
    provenance ids deterministic regardless of worker scheduling.
    """

    def __init__(self):
        self._sym_counter = itertools.count()
        self._expr_counter = itertools.count()
        self._registry: dict[int, Expr] = {}
        self._registry_ids: dict[Expr, int] = {}

    def fresh_sym_id(self) -> int:
        return next(self._sym_counter)

    def register(self, e: Expr) -> int:
        """Assign (or return) a stable id for an expression, for deref labels."""
        eid = self._registry_ids.get(e)
        if eid is None:
            eid = next(self._expr_counter)
            self._registry_ids[e] = eid
            self._registry[eid] = e
        return eid

    def lookup(self, eid: int) -> Expr | None:
        return self._registry.get(eid)


_DEFAULT_CTX = Context()


def mk_const(width: int, value: int) -> Expr:
    """Constant node; value is reduced modulo 2**width."""
    if not 1 <= width <= MAX_WIDTH:
        raise WidthError(f"width {width} out of range 1..{MAX_WIDTH}")
    return Expr("const", width, value=value & _mask(width))


def mk_sym(width: int, labels: Iterable[Label] = (), ctx: Context | None = None) -> Expr:
    """Fresh symbol with a globally unique id carrying the origin labels."""
    if not 1 <= width <= MAX_WIDTH:
        raise WidthError(f"width {width} out of range 1..{MAX_WIDTH}")
    ctx = ctx or _DEFAULT_CTX
    return Expr("sym", width, sym_id=ctx.fresh_sym_id(), labels=labels)


def true_const() -> Expr:
    return mk_const(1, 1)


def false_const() -> Expr:
    return mk_const(1, 0)


# ---------------------------------------------------------------------------
# Scalar operator semantics (single source of truth for folding and eval)

def _to_signed(v: int, w: int) -> int:
    return v - (1 << w) if v >> (w - 1) else v


def op_value(op: str, width: int, a: int, b: int = 0) -> int:
    """Concrete semantics of one operator over already-masked operands."""
    m = _mask(width)
    if op == "add":
        return (a + b) & m
    if op == "sub":
        return (a - b) & m
    if op == "mul":
        return (a * b) & m
    if op == "udiv":
        return m if b == 0 else (a // b) & m
    if op == "urem":
        return a if b == 0 else (a % b) & m
    if op == "and":
        return a & b
    if op == "or":
        return a | b
    if op == "xor":
        return a ^ b
    if op == "not":
        return a ^ m
    if op == "neg":
        return (-a) & m
    if op == "shl":
        return (a << b) & m if b < width else 0
    if op == "lshr":
        return (a >> b) if b < width else 0
    if op == "ashr":
        sign = a >> (width - 1)
        if b >= width:
            return m if sign else 0
        return (_to_signed(a, width) >> b) & m
    if op == "eq":
        return int(a == b)
    if op == "ne":
        return int(a != b)
    if op == "ult":
        return int(a < b)
    if op == "ule":
        return int(a <= b)
    if op == "slt":
        return int(_to_signed(a, width) < _to_signed(b, width))
    if op == "sle":
        return int(_to_signed(a, width) <= _to_signed(b, width))
    raise ExprError(f"no scalar semantics for {op}")


# ---------------------------------------------------------------------------
# Construction with simplification

def _check_same_width(op, a, b):
    if a.width != b.width:
        raise WidthError(f"{op}: operand widths {a.width} != {b.width}")


def apply(op: str, operands: list[Expr] | tuple[Expr, ...], params: tuple[int, ...] = ()) -> Expr:
    """Build (and simplify) an operator node.

    Raises ArityError/WidthError when the operand count or the operand
    widths do not satisfy the operator signature.
    """
    operands = tuple(operands)
    if op in BINARY_OPS or op in CMP_OPS:
        if len(operands) != 2:
            raise ArityError(f"{op} expects 2 operands, got {len(operands)}")
        a, b = operands
        _check_same_width(op, a, b)
        width = 1 if op in CMP_OPS else a.width
        return _simplify_binary(op, width, a, b)
    if op in UNARY_OPS:
        if len(operands) != 1:
            raise ArityError(f"{op} expects 1 operand, got {len(operands)}")
        (a,) = operands
        if a.is_const:
            return mk_const(a.width, op_value(op, a.width, a.value))
        if a.kind == "op" and a.op == op:  # not(not x) -> x, neg(neg x) -> x
            return a.args[0]
        return Expr("op", a.width, op=op, args=(a,))
    if op == "ite":
        if len(operands) != 3:
            raise ArityError("ite expects 3 operands")
        c, t, f = operands
        if c.width != 1:
            raise WidthError("ite condition must have width 1")
        _check_same_width("ite", t, f)
        if c.is_const:
            return t if c.value == 1 else f
        if t == f:
            return t
        return Expr("op", t.width, op="ite", args=(c, t, f))
    if op in ("zext", "sext"):
        if len(operands) != 1:
            raise ArityError(f"{op} expects 1 operand")
        (a,) = operands
        (new_width,) = params
        return _extend(op, a, new_width)
    if op == "extract":
        if len(operands) != 1:
            raise ArityError("extract expects 1 operand")
        (a,) = operands
        hi, lo = params
        return extract(a, hi, lo)
    if op == "concat":
        if len(operands) != 2:
            raise ArityError("concat expects 2 operands")
        return concat(operands[0], operands[1])
    raise ExprError(f"unknown operator {op!r}")


def _simplify_binary(op: str, width: int, a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        return mk_const(width, op_value(op, a.width, a.value, b.value))
    m = _mask(a.width)
    if op == "add":
        if a.is_const and a.value == 0:
            return b
        if b.is_const and b.value == 0:
            return a
    elif op == "sub":
        if b.is_const and b.value == 0:
            return a
        if a == b:
            return mk_const(width, 0)
    elif op == "mul":
        for x, y in ((a, b), (b, a)):
            if x.is_const:
                if x.value == 0:
                    return mk_const(width, 0)
                if x.value == 1:
                    return y
    elif op == "and":
        for x, y in ((a, b), (b, a)):
            if x.is_const:
                if x.value == 0:
                    return mk_const(width, 0)
                if x.value == m:
                    return y
        if a == b:
            return a
    elif op == "or":
        for x, y in ((a, b), (b, a)):
            if x.is_const:
                if x.value == 0:
                    return y
                if x.value == m:
                    return mk_const(width, m)
        if a == b:
            return a
    elif op == "xor":
        for x, y in ((a, b), (b, a)):
            if x.is_const and x.value == 0:
                return y
        if a == b:
            return mk_const(width, 0)
    elif op in ("shl", "lshr", "ashr"):
        if b.is_const:
            if b.value == 0:
                return a
            if b.value >= a.width and op in ("shl", "lshr"):
                return mk_const(width, 0)
    elif op in CMP_OPS:
        if a == b:
            return mk_const(1, op_value(op, a.width, 0, 0))
    return Expr("op", width, op=op, args=(a, b))


def _extend(op: str, a: Expr, new_width: int) -> Expr:
    if not a.width <= new_width <= MAX_WIDTH:
        raise WidthError(f"{op}: cannot extend width {a.width} to {new_width}")
    if new_width == a.width:
        return a
    if a.is_const:
        if op == "zext":
            return mk_const(new_width, a.value)
        return mk_const(new_width, _to_signed(a.value, a.width) & _mask(new_width))
    return Expr("op", new_width, op=op, args=(a,), params=(new_width,))


def zext(a: Expr, new_width: int) -> Expr:
    return _extend("zext", a, new_width)


def sext(a: Expr, new_width: int) -> Expr:
    return _extend("sext", a, new_width)


def extract(a: Expr, hi: int, lo: int) -> Expr:
    if not 0 <= lo <= hi < a.width:
        raise WidthError(f"extract[{hi}:{lo}] out of bounds for width {a.width}")
    width = hi - lo + 1
    if width == a.width:
        return a
    if a.is_const:
        return mk_const(width, (a.value >> lo) & _mask(width))
    if a.kind == "op" and a.op == "concat":
        # extract entirely within one side of a concat
        hi_part, lo_part = a.args
        if hi < lo_part.width:
            return extract(lo_part, hi, lo)
        if lo >= lo_part.width:
            return extract(hi_part, hi - lo_part.width, lo - lo_part.width)
    if a.kind == "op" and a.op == "zext" and lo == 0 and hi == a.args[0].width - 1:
        return a.args[0]
    return Expr("op", width, op="extract", args=(a,), params=(hi, lo))


def concat(hi_part: Expr, lo_part: Expr) -> Expr:
    """Concatenate: hi_part supplies the high bits, lo_part the low bits."""
    width = hi_part.width + lo_part.width
    if width > MAX_WIDTH:
        raise WidthError(f"concat width {width} exceeds {MAX_WIDTH}")
    if hi_part.is_const and lo_part.is_const:
        return mk_const(width, (hi_part.value << lo_part.width) | lo_part.value)
    if hi_part.is_const and hi_part.value == 0:
        return zext(lo_part, width)
    return Expr("op", width, op="concat", args=(hi_part, lo_part))


def ite(c: Expr, t: Expr, f: Expr) -> Expr:
    return apply("ite", (c, t, f))


def bnot(a: Expr) -> Expr:
    """Boolean negation of a width-1 predicate (eq with 0)."""
    if a.width != 1:
        raise WidthError("bnot expects width 1")
    return apply("xor", (a, mk_const(1, 1)))


def from_bytes_le(byte_exprs: list[Expr]) -> Expr:
    """Assemble byte expressions (index 0 = least significant) into one value."""
    if not byte_exprs:
        raise ArityError("from_bytes_le needs at least one byte")
    acc = byte_exprs[0]
    for b in byte_exprs[1:]:
        acc = concat(b, acc)
    return acc


def split_bytes_le(e: Expr) -> list[Expr]:
    """Split a byte-multiple-width expression into bytes, LSB first."""
    if e.width % 8 != 0:
        raise WidthError("split_bytes_le needs byte-multiple width")
    return [extract(e, 8 * i + 7, 8 * i) for i in range(e.width // 8)]


# ---------------------------------------------------------------------------
# Evaluation and traversal

def evaluate(e: Expr, model: Mapping[int, int]) -> int:
    """Concrete value of e under a model (sym_id -> value); widths respected."""
    if e.kind == "const":
        return e.value
    if e.kind == "sym":
        try:
            return model[e.sym_id] & _mask(e.width)
        except KeyError:
            raise EvalError(f"symbol s{e.sym_id} not assigned by model") from None
    op = e.op
    if op == "ite":
        c = evaluate(e.args[0], model)
        return evaluate(e.args[1] if c else e.args[2], model)
    if op == "zext":
        return evaluate(e.args[0], model)
    if op == "sext":
        a = e.args[0]
        return _to_signed(evaluate(a, model), a.width) & _mask(e.width)
    if op == "extract":
        hi, lo = e.params
        return (evaluate(e.args[0], model) >> lo) & _mask(e.width)
    if op == "concat":
        hi_part, lo_part = e.args
        return (evaluate(hi_part, model) << lo_part.width) | evaluate(lo_part, model)
    if op in UNARY_OPS:
        return op_value(op, e.args[0].width, evaluate(e.args[0], model))
    a = evaluate(e.args[0], model)
    b = evaluate(e.args[1], model)
    return op_value(op, e.args[0].width, a, b)


def walk(e: Expr):
    """Yield every node of the expression tree (preorder, deduplicated)."""
    seen = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        yield node
        stack.extend(node.args)


def symbols_of(e: Expr) -> dict[int, Expr]:
    """All symbol nodes in e, keyed by sym_id."""
    return {n.sym_id: n for n in walk(e) if n.kind == "sym"}


def labels_of(e: Expr) -> frozenset[Label]:
    """Union of the labels of every symbol in e (plus `constant` for const leaves)."""
    out: set[Label] = set()
    for n in walk(e):
        if n.kind == "sym":
            out |= n.labels
        elif n.kind == "const":
            out.add(CONSTANT)
    return frozenset(out)

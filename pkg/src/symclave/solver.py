"""Exact bitvector satisfiability via bit-blasting to the CDCL core.

Verdicts are exact whenever something other than Unknown is returned:
Sat always carries a model that makes the query evaluate to 1, Unsat is
only reported when no assignment exists.  Resource exhaustion degrades
to Unknown("budget-exhausted"), never to a wrong verdict.  Enlarging the
budget can only turn Unknown into Sat/Unsat, never flip Sat and Unsat.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _satcore
from .expr import (
    CMP_OPS,
    UNARY_OPS,
    Expr,
    bnot,
    evaluate,
    mk_const,
    symbols_of,
    apply,
)

DEFAULT_BUDGET = 4_000_000
_MAX_CLAUSES = 600_000


@dataclass(frozen=True)
class SolverVerdict:
    status: str  # "sat" | "unsat" | "unknown"
    model: dict | None = None
    reason: str | None = None

    @property
    def is_sat(self) -> bool:
        return self.status == "sat"

    @property
    def is_unsat(self) -> bool:
        return self.status == "unsat"

    @property
    def is_unknown(self) -> bool:
        return self.status == "unknown"


def Sat(model: dict) -> SolverVerdict:
    return SolverVerdict("sat", model=model)


UNSAT = SolverVerdict("unsat")


def Unknown(reason: str = "budget-exhausted") -> SolverVerdict:
    return SolverVerdict("unknown", reason=reason)


@dataclass(frozen=True)
class MustVerdict:
    status: str  # "proved" | "counterexample" | "unknown"
    model: dict | None = None

    @property
    def is_proved(self) -> bool:
        return self.status == "proved"


class _Blaster:
    """Tseitin-encodes expression trees into CNF over watched-literal arrays."""

    def __init__(self):
        self.n_vars = 0
        self.lits: list[int] = []
        self.starts: list[int] = [0]
        self.memo: dict[Expr, list[int]] = {}
        self.sym_bits: dict[int, list[int]] = {}
        tv = self.new_var()
        self.t = 2 * tv  # literal that is constrained true
        self.f = self.t ^ 1
        self.clause([self.t])

    def new_var(self) -> int:
        v = self.n_vars
        self.n_vars += 1
        return v

    def clause(self, ls) -> None:
        self.lits.extend(ls)
        self.starts.append(len(self.lits))

    def register_symbol(self, sym: Expr) -> list[int]:
        bits = self.sym_bits.get(sym.sym_id)
        if bits is None:
            bits = [2 * self.new_var() for _ in range(sym.width)]
            self.sym_bits[sym.sym_id] = bits
        return bits

    # -- gate builders (literal in, literal out) --

    def _and(self, a: int, b: int) -> int:
        if a == self.f or b == self.f:
            return self.f
        if a == self.t:
            return b
        if b == self.t:
            return a
        if a == b:
            return a
        if a == (b ^ 1):
            return self.f
        o = 2 * self.new_var()
        self.clause([a ^ 1, b ^ 1, o])
        self.clause([a, o ^ 1])
        self.clause([b, o ^ 1])
        return o

    def _or(self, a: int, b: int) -> int:
        return self._and(a ^ 1, b ^ 1) ^ 1

    def _xor(self, a: int, b: int) -> int:
        if a == self.f:
            return b
        if a == self.t:
            return b ^ 1
        if b == self.f:
            return a
        if b == self.t:
            return a ^ 1
        if a == b:
            return self.f
        if a == (b ^ 1):
            return self.t
        o = 2 * self.new_var()
        self.clause([a ^ 1, b ^ 1, o ^ 1])
        self.clause([a, b, o ^ 1])
        self.clause([a, b ^ 1, o])
        self.clause([a ^ 1, b, o])
        return o

    def _mux(self, c: int, a: int, b: int) -> int:
        """c ? a : b"""
        if c == self.t:
            return a
        if c == self.f:
            return b
        if a == b:
            return a
        o = 2 * self.new_var()
        self.clause([c ^ 1, a ^ 1, o])
        self.clause([c ^ 1, a, o ^ 1])
        self.clause([c, b ^ 1, o])
        self.clause([c, b, o ^ 1])
        return o

    # -- vector helpers --

    def _ripple_add(self, a: list[int], b: list[int], cin: int) -> tuple[list[int], int]:
        out = []
        carry = cin
        for ai, bi in zip(a, b):
            axb = self._xor(ai, bi)
            out.append(self._xor(axb, carry))
            carry = self._or(self._and(ai, bi), self._and(axb, carry))
        return out, carry

    def _ult(self, a: list[int], b: list[int]) -> int:
        borrow = self.f
        for ai, bi in zip(a, b):
            xnor = self._xor(ai, bi) ^ 1
            borrow = self._or(self._and(ai ^ 1, bi), self._and(xnor, borrow))
        return borrow

    def _eq(self, a: list[int], b: list[int]) -> int:
        acc = self.t
        for ai, bi in zip(a, b):
            acc = self._and(acc, self._xor(ai, bi) ^ 1)
        return acc

    def _shift_const(self, bits: list[int], amount: int, left: bool, fill: int) -> list[int]:
        w = len(bits)
        if amount >= w:
            return [fill] * w
        if left:
            return [fill] * amount + bits[: w - amount]
        return bits[amount:] + [fill] * amount

    def _barrel(self, a: list[int], sh: list[int], left: bool, fill: int) -> list[int]:
        w = len(a)
        cur = a[:]
        k = 0
        overflow = self.f
        while k < len(sh):
            step = 1 << k
            if step >= w:
                overflow = self._or(overflow, sh[k])
            else:
                shifted = self._shift_const(cur, step, left, fill)
                cur = [self._mux(sh[k], s, c) for s, c in zip(shifted, cur)]
            k += 1
        return [self._mux(overflow, fill, c) for c in cur]

    # -- expression lowering --

    def bits(self, e: Expr) -> list[int]:
        got = self.memo.get(e)
        if got is not None:
            return got
        out = self._lower(e)
        assert len(out) == e.width
        self.memo[e] = out
        return out

    def _lower(self, e: Expr) -> list[int]:
        if e.kind == "const":
            return [self.t if (e.value >> i) & 1 else self.f for i in range(e.width)]
        if e.kind == "sym":
            return self.register_symbol(e)
        op = e.op
        if op == "zext":
            a = self.bits(e.args[0])
            return a + [self.f] * (e.width - len(a))
        if op == "sext":
            a = self.bits(e.args[0])
            return a + [a[-1]] * (e.width - len(a))
        if op == "extract":
            hi, lo = e.params
            return self.bits(e.args[0])[lo : hi + 1]
        if op == "concat":
            hi_part, lo_part = e.args
            return self.bits(lo_part) + self.bits(hi_part)
        if op == "ite":
            c = self.bits(e.args[0])[0]
            t = self.bits(e.args[1])
            f = self.bits(e.args[2])
            return [self._mux(c, ti, fi) for ti, fi in zip(t, f)]
        if op == "not":
            return [l ^ 1 for l in self.bits(e.args[0])]
        if op == "neg":
            a = [l ^ 1 for l in self.bits(e.args[0])]
            zero = [self.f] * e.width
            out, _ = self._ripple_add(a, zero, self.t)
            return out
        if op in CMP_OPS:
            a = self.bits(e.args[0])
            b = self.bits(e.args[1])
            if op in ("slt", "sle"):
                a = a[:-1] + [a[-1] ^ 1]
                b = b[:-1] + [b[-1] ^ 1]
            if op == "eq":
                return [self._eq(a, b)]
            if op == "ne":
                return [self._eq(a, b) ^ 1]
            if op in ("ult", "slt"):
                return [self._ult(a, b)]
            return [self._ult(b, a) ^ 1]  # ule / sle
        a = self.bits(e.args[0])
        b = self.bits(e.args[1])
        w = e.width
        if op == "add":
            out, _ = self._ripple_add(a, b, self.f)
            return out
        if op == "sub":
            out, _ = self._ripple_add(a, [l ^ 1 for l in b], self.t)
            return out
        if op == "and":
            return [self._and(x, y) for x, y in zip(a, b)]
        if op == "or":
            return [self._or(x, y) for x, y in zip(a, b)]
        if op == "xor":
            return [self._xor(x, y) for x, y in zip(a, b)]
        if op == "shl":
            return self._barrel(a, b, True, self.f)
        if op == "lshr":
            return self._barrel(a, b, False, self.f)
        if op == "ashr":
            return self._barrel(a, b, False, a[-1])
        if op == "mul":
            acc = [self._and(x, b[0]) for x in a]
            for j in range(1, w):
                addend = [self.f] * j + [self._and(a[i], b[j]) for i in range(w - j)]
                acc, _ = self._ripple_add(acc, addend, self.f)
            return acc
        if op in ("udiv", "urem"):
            return self._divide(a, b, op == "udiv")
        raise AssertionError(f"unhandled operator {op}")

    def _divide(self, a: list[int], b: list[int], want_quotient: bool) -> list[int]:
        # restoring division; b == 0 naturally yields q = all-ones, r = a
        w = len(a)
        bext = b + [self.f]
        rem = [self.f] * w
        quo = [self.f] * w
        for i in range(w - 1, -1, -1):
            r2 = [a[i]] + rem  # (rem << 1) | a[i], width w+1
            ge = self._ult(r2, bext) ^ 1
            quo[i] = ge
            diff, _ = self._ripple_add(r2, [l ^ 1 for l in bext], self.t)
            rem = [self._mux(ge, d, r) for d, r in zip(diff[:w], r2[:w])]
        return quo if want_quotient else rem


def _as_predicates(constraints, query) -> list[Expr]:
    preds = list(constraints)
    if query is not None:
        preds.append(query)
    for p in preds:
        if p.width != 1:
            raise ValueError("constraints must have width 1")
    return preds


def is_sat(constraints, query=None, budget: int = DEFAULT_BUDGET) -> SolverVerdict:
    """Satisfiability of conj(constraints) /\\ query with a verified model on Sat.

    The model assigns every symbol appearing in any of the inputs;
    symbols that end up unconstrained default to 0.
    """
    preds = _as_predicates(constraints, query)
    syms: dict[int, Expr] = {}
    for p in preds:
        syms.update(symbols_of(p))

    todo = [p for p in preds if not (p.is_const and p.value == 1)]
    for p in todo:
        if p.is_const and p.value == 0:
            return UNSAT
    if not todo:
        return Sat({sid: 0 for sid in syms})

    bl = _Blaster()
    for sid in sorted(syms):  # input bits get the lowest var indices
        bl.register_symbol(syms[sid])
    for p in todo:
        bl.clause([bl.bits(p)[0]])

    n_clauses = len(bl.starts) - 1
    if n_clauses > _MAX_CLAUSES:
        return Unknown()
    cap_clauses = 3 * n_clauses + 20_000
    cap_lits = 3 * len(bl.lits) + 400_000
    lits = np.zeros(cap_lits, np.int32)
    lits[: len(bl.lits)] = bl.lits
    starts = np.zeros(cap_clauses + 1, np.int32)
    starts[: len(bl.starts)] = bl.starts
    assign_out = np.zeros(bl.n_vars, np.int8)

    status, _steps = _satcore.solve(lits, starts, n_clauses, bl.n_vars, budget, assign_out)
    if status == _satcore.UNSAT:
        return UNSAT
    if status == _satcore.UNKNOWN:
        return Unknown()
    model = {}
    for sid in sorted(syms):
        bits = bl.sym_bits[sid]
        val = 0
        for i, lit in enumerate(bits):
            if assign_out[lit >> 1] ^ (lit & 1):
                val |= 1 << i
        model[sid] = val
    return Sat(model)


def must_hold(constraints, pred: Expr, budget: int = DEFAULT_BUDGET) -> MustVerdict:
    """Proved iff pred holds under every model of the constraints."""
    v = is_sat(constraints, bnot(pred), budget)
    if v.is_unsat:
        return MustVerdict("proved")
    if v.is_sat:
        return MustVerdict("counterexample", model=v.model)
    return MustVerdict("unknown")


class Solver:
    """Caching front-end bound to one exploration; counts Unknown verdicts."""

    def __init__(self, budget: int = DEFAULT_BUDGET):
        self.budget = budget
        self.unknown_count = 0
        self._cache: dict = {}

    def is_sat(self, constraints, query=None) -> SolverVerdict:
        key = (frozenset(constraints), query)
        got = self._cache.get(key)
        if got is None:
            got = is_sat(constraints, query, self.budget)
            self._cache[key] = got
            if got.is_unknown:
                self.unknown_count += 1
        return got

    def must_hold(self, constraints, pred: Expr) -> MustVerdict:
        v = self.is_sat(constraints, bnot(pred))
        if v.is_unsat:
            return MustVerdict("proved")
        if v.is_sat:
            return MustVerdict("counterexample", model=v.model)
        return MustVerdict("unknown")

    def full_model(self, constraints, extra_exprs=()) -> dict | None:
        """A model of the constraints covering symbols of extra_exprs too.

        Symbols not mentioned in the constraints default to 0.  Returns
        None when the constraints are unsat or the budget runs out.
        """
        v = self.is_sat(constraints, None)
        if not v.is_sat:
            return None
        model = dict(v.model)
        for e in extra_exprs:
            for sid in symbols_of(e):
                model.setdefault(sid, 0)
        return model

    def concretize(self, constraints, e: Expr) -> tuple[int, bool] | None:
        """A deterministic concrete value for e plus a uniqueness flag."""
        if e.is_const:
            return e.value, True
        model = self.full_model(constraints, (e,))
        if model is None:
            return None
        val = evaluate(e, model)
        other = self.is_sat(list(constraints) + [apply("ne", (e, mk_const(e.width, val)))])
        return val, other.is_unsat

    def min_value(self, constraints, e: Expr) -> int | None:
        """Minimal satisfying value of e under the constraints (exact)."""
        model = self.full_model(constraints, (e,))
        if model is None:
            return None
        lo, hi = 0, evaluate(e, model)
        while lo < hi:
            mid = (lo + hi) // 2
            v = self.is_sat(constraints, apply("ule", (e, mk_const(e.width, mid))))
            if v.is_sat:
                hi = mid
            elif v.is_unsat:
                lo = mid + 1
            else:
                return hi  # budget ran out: fall back to best known bound
        return lo

    def enumerate_values(self, constraints, e: Expr, limit: int) -> tuple[list[int], bool]:
        """Up to `limit` distinct satisfying values of e; bool = exhausted."""
        out: list[int] = []
        cons = list(constraints)
        while len(out) < limit:
            model = self.full_model(cons, (e,))
            if model is None:
                return out, True
            val = evaluate(e, model)
            out.append(val)
            cons.append(apply("ne", (e, mk_const(e.width, val))))
        more = self.is_sat(cons)
        return out, more.is_unsat

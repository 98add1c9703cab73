"""Regioned symbolic memory with provenance tracking.

The 64-bit address space is partitioned into the enclave range, the
null page [0, 0x1000) and host memory (everything else).  Every access
address is classified against that partition with exact solver queries;
reads that may touch non-enclave memory return fresh host-labeled
symbols (the host maps anything it likes, including page zero), while
enclave reads hit a concrete byte store backed by the package's data
images.  Unwritten enclave globals havoc to stable fresh symbols so a
single ECALL can be analyzed without knowing what earlier ECALLs did.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .expr import (
    Context,
    ENCLAVE_ALLOC,
    Expr,
    GLOBAL_STATE,
    HOST_MEMORY,
    Label,
    apply,
    deref_label,
    from_bytes_le,
    labels_of,
    mk_const,
    mk_sym,
    split_bytes_le,
)
from .loader import Layout, NULL_PAGE_END
from .solver import Solver

ADDR_MAX = (1 << 64) - 1

MUST_ENCLAVE = "must-enclave"
MUST_HOST = "must-host"
MUST_NULL = "must-null-page"
MAY_OVERLAP = "may-overlap"


class OutOfEnclaveHeap(RuntimeError):
    pass


@dataclass(frozen=True)
class RegionClass:
    kind: str
    enclave_sat: bool = False
    host_sat: bool = False
    null_sat: bool = False

    @property
    def may_leave_enclave(self) -> bool:
        return self.kind != MUST_ENCLAVE


MUST_ENCLAVE_RC = RegionClass(MUST_ENCLAVE, enclave_sat=True)
MUST_HOST_RC = RegionClass(MUST_HOST, host_sat=True)
MUST_NULL_RC = RegionClass(MUST_NULL, null_sat=True)


def _c64(v: int) -> Expr:
    return mk_const(64, v)


def _ule(a: Expr, b: Expr) -> Expr:
    return apply("ule", (a, b))


def _uge(a: Expr, b: Expr) -> Expr:
    return apply("ule", (b, a))


def _and(*ps: Expr) -> Expr:
    acc = ps[0]
    for p in ps[1:]:
        acc = apply("and", (acc, p))
    return acc


def _or(*ps: Expr) -> Expr:
    acc = ps[0]
    for p in ps[1:]:
        acc = apply("or", (acc, p))
    return acc


class RegionPredicates:
    """Exact bitvector predicates for one access [addr, addr+length) vs a layout.

    All formulas are wraparound-aware: an access whose last byte address
    wraps past 2**64 touches the null page (its tail starts at 0).
    """

    def __init__(self, layout: Layout, addr: Expr, length: int):
        assert length >= 1
        self.addr = addr
        self.last = apply("add", (addr, _c64(length - 1))) if length > 1 else addr
        self.nowrap = _ule(addr, self.last)
        self.wrap = apply("ult", (self.last, addr))
        self.e0 = layout.enclave_base
        self.e1 = layout.enclave_end  # exclusive; may equal 2**64

    def subset_enclave(self) -> Expr:
        return _and(self.nowrap, _uge(self.addr, _c64(self.e0)), _ule(self.last, _c64(self.e1 - 1)))

    def subset_null(self) -> Expr:
        return _and(self.nowrap, _ule(self.last, _c64(NULL_PAGE_END - 1)))

    def subset_host(self) -> Expr:
        parts = []
        if self.e0 > NULL_PAGE_END:  # gap between null page and enclave
            parts.append(_and(_uge(self.addr, _c64(NULL_PAGE_END)), _ule(self.last, _c64(self.e0 - 1))))
        if self.e1 <= ADDR_MAX:  # tail above the enclave
            parts.append(_uge(self.addr, _c64(self.e1)))
        if not parts:
            return mk_const(1, 0)
        return _and(self.nowrap, _or(*parts))

    def intersects_enclave(self) -> Expr:
        head = _and(_ule(self.addr, _c64(self.e1 - 1)), _uge(self.last, _c64(self.e0)))
        wrapped = _and(self.wrap, _or(_ule(self.addr, _c64(self.e1 - 1)), _uge(self.last, _c64(self.e0))))
        return _or(_and(self.nowrap, head), wrapped)

    def intersects_null(self) -> Expr:
        return _or(_and(self.nowrap, _ule(self.addr, _c64(NULL_PAGE_END - 1))), self.wrap)

    def intersects_host(self) -> Expr:
        def seg_hits(x: Expr, y: Expr) -> Expr:
            parts = []
            if self.e0 > NULL_PAGE_END:
                parts.append(_and(_ule(x, _c64(self.e0 - 1)), _uge(y, _c64(NULL_PAGE_END))))
            if self.e1 <= ADDR_MAX:
                parts.append(_uge(y, _c64(self.e1)))
            return _or(*parts) if parts else mk_const(1, 0)

        head = seg_hits(self.addr, self.last)
        wrapped = _or(seg_hits(self.addr, _c64(ADDR_MAX)), seg_hits(_c64(0), self.last))
        return _or(_and(self.nowrap, head), _and(self.wrap, wrapped))


def classify(layout: Layout, addr: Expr, length: int, constraints, solver: Solver) -> RegionClass:
    """Decide where [addr, addr+length) can lie under the path constraints."""
    preds = RegionPredicates(layout, addr, length)
    # concrete fast path
    if addr.is_const:
        return _classify_concrete(layout, addr.value, length)
    unknown = False
    for pred, rc in ((preds.subset_enclave(), MUST_ENCLAVE_RC),
                     (preds.subset_null(), MUST_NULL_RC),
                     (preds.subset_host(), MUST_HOST_RC)):
        v = solver.must_hold(constraints, pred)
        if v.status == "proved":
            return rc
        if v.status == "unknown":
            unknown = True
    if unknown:
        return RegionClass(MAY_OVERLAP, True, True, True)

    flags = []
    for pred in (preds.intersects_enclave(), preds.intersects_host(), preds.intersects_null()):
        v = solver.is_sat(constraints, pred)
        flags.append(not v.is_unsat)  # unknown counts as possible
    e, h, n = flags
    if sum(flags) <= 1:
        # exact verdicts make a single-region MayOverlap impossible; normalize
        if e:
            return MUST_ENCLAVE_RC
        if n:
            return MUST_NULL_RC
        return MUST_HOST_RC
    return RegionClass(MAY_OVERLAP, e, h, n)


def classify_concrete_oracle(enclave_base: int, enclave_size: int, addr: int, length: int) -> RegionClass:
    """Independent integer-arithmetic oracle for classify on concrete addresses."""
    bytes_ = [(addr + i) % (1 << 64) for i in range(length)]
    in_enc = [enclave_base <= b < enclave_base + enclave_size for b in bytes_]
    in_null = [b < NULL_PAGE_END for b in bytes_]
    in_host = [not e and not n for e, n in zip(in_enc, in_null)]
    if all(in_enc):
        return MUST_ENCLAVE_RC
    if all(in_null):
        return MUST_NULL_RC
    if all(in_host):
        return MUST_HOST_RC
    return RegionClass(MAY_OVERLAP, any(in_enc), any(in_host), any(in_null))


def _classify_concrete(layout: Layout, addr: int, length: int) -> RegionClass:
    return classify_concrete_oracle(layout.enclave_base, layout.enclave_size, addr, length)


# ---------------------------------------------------------------------------
# Symbolic memory

@dataclass
class FetchRecord:
    """One read that may have been served by attacker-controlled memory."""
    seq: int
    addr: Expr
    width: int
    pc: int
    value: Expr


@dataclass
class WriteRecord:
    addr: Expr
    value: Expr
    width: int
    pc: int


@dataclass
class ReadOutcome:
    value: Expr
    region: RegionClass
    concretized: int | None = None  # enclave address pinned by an equality constraint
    provenance: frozenset = frozenset()


@dataclass
class WriteOutcome:
    region: RegionClass
    concretized: int | None = None
    stored_at: int | None = None


class SymMemory:
    """Byte-addressed symbolic memory owned by exactly one execution state."""

    def __init__(self, layout: Layout, data_images=(), _copy_from: "SymMemory | None" = None):
        self.layout = layout
        if _copy_from is not None:
            o = _copy_from
            self.store = dict(o.store)
            self.globals_havoc = dict(o.globals_havoc)
            self.uninit_havoc = dict(o.uninit_havoc)
            self.write_log = list(o.write_log)
            self.fetch_log = list(o.fetch_log)
            self.heap_next = o.heap_next
            return
        self.store: dict[int, Expr] = {}
        for addr, blob in data_images:
            for i, b in enumerate(blob):
                self.store[addr + i] = mk_const(8, b)
        self.globals_havoc: dict[int, Expr] = {}
        self.uninit_havoc: dict[int, Expr] = {}
        self.write_log: list[WriteRecord] = []
        self.fetch_log: list[FetchRecord] = []
        self.heap_next = layout.heap.base

    def copy(self) -> "SymMemory":
        return SymMemory(self.layout, _copy_from=self)

    # -- allocation --

    def alloc_enclave(self, size: int) -> int:
        """Bump-pointer allocation inside the heap section (8-byte aligned)."""
        if size <= 0:
            raise ValueError("allocation size must be positive")
        base = self.heap_next
        end = base + ((size + 7) & ~7)
        if end > self.layout.heap.end:
            raise OutOfEnclaveHeap(f"enclave heap exhausted ({size} bytes requested)")
        self.heap_next = end
        return base

    # -- raw access (marshalling/setup; bypasses logs and detectors) --

    def init_store_bytes(self, addr: int, byte_exprs) -> None:
        for i, b in enumerate(byte_exprs):
            self.store[addr + i] = b

    def init_store_const(self, addr: int, value: int, width: int) -> None:
        for i in range(width):
            self.store[addr + i] = mk_const(8, (value >> (8 * i)) & 0xFF)

    # -- classified access --

    def classify(self, addr: Expr, length: int, constraints, solver: Solver) -> RegionClass:
        return classify(self.layout, addr, length, constraints, solver)

    def _enclave_byte(self, a: int, ctx: Context) -> Expr:
        got = self.store.get(a)
        if got is not None:
            return got
        g = self.layout.globals_
        if g.contains(a):
            sym = self.globals_havoc.get(a)
            if sym is None:
                aid = ctx.register(mk_const(64, a))
                sym = mk_sym(8, {GLOBAL_STATE, deref_label(aid)}, ctx)
                self.globals_havoc[a] = sym
            return sym
        sym = self.uninit_havoc.get(a)
        if sym is None:
            aid = ctx.register(mk_const(64, a))
            sym = mk_sym(8, {ENCLAVE_ALLOC, deref_label(aid)}, ctx)
            self.uninit_havoc[a] = sym
        return sym

    def read(self, addr: Expr, width: int, constraints, solver: Solver,
             ctx: Context, pc: int) -> ReadOutcome:
        """Little-endian read of `width` bytes at a symbolic address.

        Enclave reads resolve against the concrete store (concretizing a
        non-unique enclave address to one model); any read that may leave
        the enclave returns fresh host-labeled bytes and is appended to
        the fetch log for double-fetch analysis.
        """
        region = self.classify(addr, width, constraints, solver)
        aid = ctx.register(addr)
        if region.kind == MUST_ENCLAVE:
            concretized = None
            if addr.is_const:
                base = addr.value
            else:
                res = solver.concretize(constraints, addr)
                if res is not None:
                    base, unique = res
                    if not unique:
                        concretized = base
                else:  # unsatisfiable or unknown path; degrade to havoc read
                    return self._attacker_read(addr, width, aid, region, ctx, pc)
            value = from_bytes_le([self._enclave_byte(base + i, ctx) for i in range(width)])
            prov = labels_of(value) | {deref_label(aid)}
            return ReadOutcome(value, region, concretized, prov)
        return self._attacker_read(addr, width, aid, region, ctx, pc)

    def _attacker_read(self, addr: Expr, width: int, aid: int, region: RegionClass,
                       ctx: Context, pc: int) -> ReadOutcome:
        labels = {HOST_MEMORY, deref_label(aid)}
        value = from_bytes_le([mk_sym(8, labels, ctx) for _ in range(width)])
        self.fetch_log.append(FetchRecord(len(self.fetch_log), addr, width, pc, value))
        return ReadOutcome(value, region, None, labels_of(value) | {deref_label(aid)})

    def write(self, addr: Expr, value: Expr, width: int, constraints, solver: Solver,
              ctx: Context, pc: int) -> WriteOutcome:
        """Store `width` bytes; symbolic addresses concretize to one model.

        The caller is expected to run detectors on the unconcretized
        address first; the returned outcome says whether an equality
        constraint must be appended to the path.
        """
        region = self.classify(addr, width, constraints, solver)
        concretized = None
        base: int | None = None
        if addr.is_const:
            base = addr.value
        else:
            res = solver.concretize(constraints, addr)
            if res is not None:
                base, unique = res
                if not unique:
                    concretized = base
        stored_at = None
        if base is not None and self.layout.in_enclave(base, width):
            for i, b in enumerate(split_bytes_le(value)):
                self.store[base + i] = b
            stored_at = base
        self.write_log.append(WriteRecord(addr, value, width, pc))
        return WriteOutcome(region, concretized, stored_at)


# ---------------------------------------------------------------------------
# Provenance chains

def provenance_chain(e: Expr, ctx: Context, max_hops: int = 64) -> list[Label]:
    """Flattened label chain from an expression back to its roots.

    Deref links are resolved through the context registry breadth-first;
    the result lists each distinct label once, in discovery order.
    """
    out: list[Label] = []
    seen_labels: set[Label] = set()
    seen_exprs: set[int] = set()
    queue = [e]
    hops = 0
    while queue and hops < max_hops:
        cur = queue.pop(0)
        if id(cur) in seen_exprs:
            continue
        seen_exprs.add(id(cur))
        hops += 1
        for lab in sorted(labels_of(cur), key=_label_sort_key):
            if lab in seen_labels:
                continue
            seen_labels.add(lab)
            out.append(lab)
            if lab.kind == "deref-of" and lab.source_id is not None:
                src = ctx.lookup(lab.source_id)
                if src is not None:
                    queue.append(src)
    return out


def attacker_roots(e: Expr, ctx: Context) -> frozenset[str]:
    """Attacker-controlled root kinds reachable from e's provenance chain."""
    roots = set()
    for lab in provenance_chain(e, ctx):
        if lab.kind in ("ecall-arg", "host-memory", "global-state"):
            roots.add(lab.kind)
    return frozenset(roots)


def _label_sort_key(lab: Label):
    return (lab.kind, lab.param if lab.param is not None else -1,
            lab.offset if lab.offset is not None else -1,
            lab.source_id if lab.source_id is not None else -1)

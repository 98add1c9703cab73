"""Vulnerability detectors: controlled jump/write, null-page deref, double fetch.

"Attacker-controlled" is operationalized with a two-sentinel test: an
expression counts as unconstrained when the path constraints allow it to
take two fixed, far-apart probe addresses.  A jump or write whose only
attacker root is unconstrained global state is downgraded to low
severity: in isolation such a value is not attacker-chosen, it only
becomes dangerous chained with a write primitive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .expr import Context, Expr, Label, apply, evaluate, mk_const
from .loader import Layout, NULL_PAGE_END
from .memory import SymMemory, attacker_roots, provenance_chain
from .solver import Solver

KIND_JUMP = "controlled-jump"
KIND_WRITE = "controlled-write"
KIND_NULL = "null-deref"
KIND_DOUBLE_FETCH = "double-fetch"

DEFAULT_SENTINELS = (0x41414000, 0x42424000)
_VALUE_PROBE_A = 0xA5A5A5A5A5A5A5A5
_VALUE_PROBE_B = 0x5A5A5A5A5A5A5A5A


class _DefaultModel(dict):
    """Solver model with unconstrained symbols defaulting to zero."""

    def __missing__(self, key):
        return 0


def eval_target(e: Expr, model: dict) -> int:
    return evaluate(e, _DefaultModel(model))


@dataclass(frozen=True)
class Sentinels:
    first: int
    second: int

    @classmethod
    def for_layout(cls, layout: Layout) -> "Sentinels":
        picked = []
        candidates = [
            *DEFAULT_SENTINELS,
            0x51515000,
            0x62626000,
            layout.enclave_end + 0x10000,
            max(NULL_PAGE_END, layout.enclave_base - 0x10000),
        ]
        for c in candidates:
            if c >= NULL_PAGE_END and not layout.in_enclave(c) and c < (1 << 64) and c not in picked:
                picked.append(c)
            if len(picked) == 2:
                return cls(picked[0], picked[1])
        raise ValueError("cannot place probe sentinels outside the enclave")


@dataclass
class WitnessData:
    """Concrete assignment reproducing one finding's path.

    args maps parameter index to the raw input bytes (value/user_check
    slots little-endian, buffer params give the buffer content).
    host_seq serves attacker-memory reads in fetch order, which lets a
    replay model a host that changes values between fetches.
    """

    args: dict[int, bytes] = field(default_factory=dict)
    host_map: dict[int, bytes] = field(default_factory=dict)
    host_seq: list[tuple[int, bytes]] = field(default_factory=list)
    globals_map: dict[int, int] = field(default_factory=dict)
    uninit_map: dict[int, int] = field(default_factory=dict)
    ocalls: list[dict] = field(default_factory=list)


@dataclass
class Finding:
    kind: str
    pc: int
    expr: Expr
    severity: str
    confidence: str  # "exact" | "possible"
    chain: list[Label]
    root_kinds: frozenset[str]
    reaches_enclave: bool | None = None
    value_controlled: bool | None = None
    predicted: int | None = None
    model: dict | None = None
    witness: WitnessData | None = None
    trace: list[dict] = field(default_factory=list)
    constraints: tuple = ()
    ecall_index: int = -1
    ecall_name: str = ""
    occurrences: int = 1

    def dedup_key(self):
        return (self.kind, self.pc, self.root_kinds, frozenset(
            (l.kind, l.param, l.offset) for l in self.chain if l.kind == "ecall-arg"))


def build_witness(state, model: dict) -> WitnessData:
    """Assemble the concrete input/environment maps for a model."""
    dm = _DefaultModel(model)
    w = WitnessData()
    args_info = getattr(state, "args_info", None)
    if args_info is not None:
        for slot in args_info.slots:
            if slot.kind == "value":
                nbytes = max(1, (slot.width + 7) // 8)
                w.args[slot.index] = (dm[slot.root_syms[0].sym_id]).to_bytes(8, "little")[:nbytes]
            elif slot.kind == "user_check":
                w.args[slot.index] = dm[slot.root_syms[0].sym_id].to_bytes(8, "little")
            else:  # ptr_in / ptr_out / ptr_inout buffers
                w.args[slot.index] = bytes(
                    dm[s.sym_id] & 0xFF if s.is_sym else s.value for s in slot.byte_exprs)
    mem: SymMemory = state.mem
    for rec in mem.fetch_log:
        addr_c = eval_target(rec.addr, model)
        val_c = eval_target(rec.value, model)
        blob = val_c.to_bytes(rec.width, "little")
        w.host_seq.append((addr_c, blob))
        w.host_map.setdefault(addr_c, blob)
    for a, sym in mem.globals_havoc.items():
        w.globals_map[a] = dm[sym.sym_id] & 0xFF
    for a, sym in mem.uninit_havoc.items():
        w.uninit_map[a] = dm[sym.sym_id] & 0xFF
    for entry in getattr(state, "ocall_log", ()):
        w.ocalls.append({
            "ret": dm[entry["ret_sym"].sym_id],
            "buf": bytes(dm[s.sym_id] & 0xFF for s in entry.get("buf_syms", ())),
            "buf_addr": entry.get("buf_addr"),
        })
    return w


class DetectorSuite:
    """Stateless checks bound to one ECALL exploration's solver and context."""

    def __init__(self, layout: Layout, solver: Solver, ctx: Context,
                 sentinels: Sentinels | None = None):
        self.layout = layout
        self.solver = solver
        self.ctx = ctx
        self.sentinels = sentinels or Sentinels.for_layout(layout)

    # -- helpers --

    def _two_sentinel(self, constraints, e: Expr):
        """(verdicts, confidence, model) for e hitting both probe addresses."""
        s1 = mk_const(e.width, self.sentinels.first)
        q1 = self.solver.is_sat(constraints, apply("eq", (e, s1)))
        if q1.is_unsat:
            return None
        q2 = self.solver.is_sat(constraints, apply("eq", (e, mk_const(e.width, self.sentinels.second))))
        if q2.is_unsat:
            return None
        confidence = "exact" if (q1.is_sat and q2.is_sat) else "possible"
        model = q1.model if q1.is_sat else None
        return confidence, model

    def _severity(self, roots: frozenset[str]) -> str:
        return "low" if roots and roots == frozenset({"global-state"}) else "high"

    def _mk_finding(self, state, kind, pc, e, severity, confidence, model,
                    predicted, **extra) -> Finding:
        f = Finding(
            kind=kind,
            pc=pc,
            expr=e,
            severity=severity,
            confidence=confidence,
            chain=provenance_chain(e, self.ctx),
            root_kinds=attacker_roots(e, self.ctx),
            predicted=predicted,
            model=model,
            witness=build_witness(state, model) if model is not None else None,
            trace=[dict(t) for t in state.trace],
            constraints=tuple(state.constraints),
            **extra,
        )
        return f

    # -- detectors --

    def check_jump(self, state, target: Expr, pc: int) -> Finding | None:
        """Controlled jump: indirect target reachable at both probe sentinels."""
        if target.is_const:
            return None
        roots = attacker_roots(target, self.ctx)
        if not roots:
            return None
        hit = self._two_sentinel(state.constraints, target)
        if hit is None:
            return None
        confidence, model = hit
        predicted = self.sentinels.first if model is not None else None
        return self._mk_finding(state, KIND_JUMP, pc, target,
                                self._severity(roots), confidence, model, predicted)

    def check_write(self, state, addr: Expr, value: Expr, width: int, pc: int) -> Finding | None:
        """Controlled write: store whose address is attacker-rooted and unconstrained.

        The report is not gated on the written value; value controllability
        and enclave reachability are annotations.
        """
        if addr.is_const:
            return None
        roots = attacker_roots(addr, self.ctx)
        if not roots:
            return None
        hit = self._two_sentinel(state.constraints, addr)
        if hit is None:
            return None
        confidence, model = hit
        e0, e1 = self.layout.enclave_base, self.layout.enclave_end
        in_enc = apply("ule", (mk_const(64, e0), addr))
        if e1 <= (1 << 64) - 1:
            in_enc = apply("and", (in_enc, apply("ult", (addr, mk_const(64, e1)))))
        reaches = self.solver.is_sat(state.constraints, in_enc).is_sat
        vw = value.width
        pa, pb = _VALUE_PROBE_A & ((1 << vw) - 1), _VALUE_PROBE_B & ((1 << vw) - 1)
        vc = (self.solver.is_sat(state.constraints, apply("eq", (value, mk_const(vw, pa)))).is_sat
              and self.solver.is_sat(state.constraints, apply("eq", (value, mk_const(vw, pb)))).is_sat)
        predicted = self.sentinels.first if model is not None else None
        return self._mk_finding(state, KIND_WRITE, pc, addr,
                                self._severity(roots), confidence, model, predicted,
                                reaches_enclave=reaches, value_controlled=vc)

    def check_null(self, state, addr: Expr, width: int, pc: int) -> Finding | None:
        """Null-page dereference: the access necessarily targets [0, 0x1000)."""
        pred = apply("ule", (apply("add", (addr, mk_const(64, width))),
                             mk_const(64, NULL_PAGE_END)))
        v = self.solver.must_hold(state.constraints, pred)
        if v.status != "proved":
            return None
        roots = attacker_roots(addr, self.ctx)
        model = self.solver.full_model(state.constraints, (addr,))
        predicted = eval_target(addr, model) if model is not None else None
        return self._mk_finding(state, KIND_NULL, pc, addr,
                                self._severity(roots), "exact", model, predicted)

    def check_double_fetch(self, state) -> list[Finding]:
        """Pairs of attacker-memory fetches of one address at distinct pcs."""
        groups: dict[Expr, list] = {}
        for rec in state.mem.fetch_log:
            groups.setdefault(rec.addr, []).append(rec)
        out = []
        for addr, recs in groups.items():
            for i in range(len(recs)):
                for j in range(i + 1, len(recs)):
                    if recs[i].pc == recs[j].pc:
                        continue
                    model = self.solver.full_model(state.constraints, (addr,))
                    predicted = eval_target(addr, model) if model is not None else None
                    out.append(self._mk_finding(
                        state, KIND_DOUBLE_FETCH, recs[j].pc, addr,
                        "low", "exact", model, predicted))
        return out

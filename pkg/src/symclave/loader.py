"""Enclave package loading: manifest + assembly -> validated analysis image.

A package is a directory holding ``manifest.json`` and ``enclave.eir``.
The manifest names the trusted range, the section layout, the ECALL
table with per-parameter marshalling kinds, and hook bindings for
bodyless or replaced symbols.  Loading is deterministic and rejects any
package that violates a structural invariant (overlapping sections,
dangling entry symbols, bad size references, null page inside the
enclave, ...).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .eir import Program, assemble

NULL_PAGE_END = 0x1000
ADDR_SPACE = 1 << 64

PARAM_KINDS = ("value", "ptr_in", "ptr_out", "ptr_inout", "user_check")

# builtin hook ids accepted in manifests; implementations live in sgx.py
BUILTIN_HOOK_IDS = (
    "sgx_is_within_enclave",
    "sgx_is_outside_enclave",
    "memcpy",
    "memset",
    "malloc",
    "free",
    "ocall",
)

DEFAULT_GLOBALS_SIZE = 0x1000
DEFAULT_HEAP_SIZE = 0x10000
DEFAULT_STACK_SIZE = 0x10000
DEFAULT_SIZE_MAX = 4096  # bound for concretizing symbolic marshal/hook sizes


class PackageError(ValueError):
    """The package violates a manifest or layout invariant."""


@dataclass(frozen=True)
class Section:
    name: str
    base: int
    size: int

    @property
    def end(self) -> int:
        return self.base + self.size

    def contains(self, addr: int, length: int = 1) -> bool:
        return self.base <= addr and addr + length <= self.end


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str  # value | ptr_in | ptr_out | ptr_inout | user_check
    width: int = 64            # for value params, in bits
    size: int | None = None    # const byte size for ptr_* params
    size_param: str | None = None  # name of the value param carrying the size
    size_max: int = DEFAULT_SIZE_MAX


@dataclass(frozen=True)
class ECallSpec:
    index: int
    name: str
    entry: str
    params: tuple[ParamSpec, ...] = ()


@dataclass(frozen=True)
class HookBinding:
    symbol: str
    builtin: str
    param_reg: int | None = None  # ocall out-buffer metadata
    size_reg: int | None = None


@dataclass(frozen=True)
class Layout:
    enclave_base: int
    enclave_size: int
    code: Section
    globals_: Section
    heap: Section
    stack: Section

    @property
    def enclave_end(self) -> int:
        return self.enclave_base + self.enclave_size

    def sections(self) -> tuple[Section, ...]:
        return (self.code, self.globals_, self.heap, self.stack)

    def in_enclave(self, addr: int, length: int = 1) -> bool:
        return self.enclave_base <= addr and addr + length <= self.enclave_end

    def section_of(self, addr: int) -> Section | None:
        for s in self.sections():
            if s.contains(addr):
                return s
        return None


@dataclass(frozen=True)
class ExpectedFinding:
    kind: str
    label: str
    severity: str


@dataclass
class EnclavePackage:
    name: str
    layout: Layout
    program: Program
    ecalls: tuple[ECallSpec, ...]
    hooks: tuple[HookBinding, ...] = ()
    expected_findings: tuple[ExpectedFinding, ...] = ()
    warnings: list[str] = field(default_factory=list)
    path: Path | None = None

    def hook_map(self) -> dict[str, HookBinding]:
        return {h.symbol: h for h in self.hooks}


def _req(obj: dict, key: str, typ, what: str):
    if key not in obj:
        raise PackageError(f"{what}: missing field {key!r}")
    val = obj[key]
    if typ is int and isinstance(val, str):
        try:
            return int(val, 16) if val.lower().startswith("0x") else int(val)
        except ValueError:
            raise PackageError(f"{what}: field {key!r} is not a number") from None
    if not isinstance(val, typ):
        raise PackageError(f"{what}: field {key!r} has wrong type")
    return val


def _addr(obj: dict, key: str, what: str) -> int:
    return _req(obj, key, int, what)


def _parse_param(obj: dict, ecall: str) -> ParamSpec:
    what = f"ecall {ecall!r} param"
    name = _req(obj, "name", str, what)
    kind = _req(obj, "kind", str, what)
    if kind not in PARAM_KINDS:
        raise PackageError(f"{what} {name!r}: unknown kind {kind!r}")
    width = obj.get("width", 64)
    if kind == "value" and not (isinstance(width, int) and 1 <= width <= 64):
        raise PackageError(f"{what} {name!r}: bad width {width!r}")
    size = obj.get("size")
    size_param = obj.get("size_param")
    if kind in ("ptr_in", "ptr_out", "ptr_inout"):
        if size is None and size_param is None:
            raise PackageError(f"{what} {name!r}: {kind} needs size or size_param")
        if size is not None and (not isinstance(size, int) or size <= 0):
            raise PackageError(f"{what} {name!r}: size must be positive")
    return ParamSpec(
        name=name,
        kind=kind,
        width=width if kind == "value" else 64,
        size=size,
        size_param=size_param,
        size_max=obj.get("size_max", DEFAULT_SIZE_MAX),
    )


def _default_layout(base: int, size: int) -> dict:
    fixed = DEFAULT_GLOBALS_SIZE + DEFAULT_HEAP_SIZE + DEFAULT_STACK_SIZE
    if size <= fixed:
        raise PackageError(f"enclave_size {size:#x} too small for default layout")
    code_size = size - fixed
    return {
        "code": {"base": base, "size": code_size},
        "globals": {"base": base + code_size, "size": DEFAULT_GLOBALS_SIZE},
        "heap": {"base": base + code_size + DEFAULT_GLOBALS_SIZE, "size": DEFAULT_HEAP_SIZE},
        "stack": {"base": base + size - DEFAULT_STACK_SIZE, "size": DEFAULT_STACK_SIZE},
    }


def _parse_sections(manifest: dict, base: int, size: int) -> Layout:
    spec = manifest.get("sections")
    if spec is None:
        spec = _default_layout(base, size)
    sections = {}
    for sname in ("code", "globals", "heap", "stack"):
        if sname not in spec:
            raise PackageError(f"sections: missing {sname!r}")
        entry = spec[sname]
        sections[sname] = Section(sname, _addr(entry, "base", f"section {sname}"),
                                  _addr(entry, "size", f"section {sname}"))
    layout = Layout(base, size, sections["code"], sections["globals"],
                    sections["heap"], sections["stack"])
    end = layout.enclave_end
    if base < NULL_PAGE_END:
        raise PackageError(f"enclave_base {base:#x} overlaps the null page (must be >= {NULL_PAGE_END:#x})")
    if size <= 0 or end > ADDR_SPACE:
        raise PackageError("enclave range exceeds the 64-bit address space")
    ordered = sorted(layout.sections(), key=lambda s: s.base)
    for s in ordered:
        if s.size <= 0:
            raise PackageError(f"section {s.name} has non-positive size")
        if s.base < base or s.end > end:
            raise PackageError(f"section {s.name} outside enclave range")
    for a, b in zip(ordered, ordered[1:]):
        if b.base < a.end:
            raise PackageError(f"sections {a.name} and {b.name} overlap")
    return layout


def _parse_hooks(manifest: dict) -> tuple[HookBinding, ...]:
    hooks = manifest.get("hooks", {})
    if not isinstance(hooks, dict):
        raise PackageError("hooks: must be an object {symbol: builtin-id}")
    out = []
    for symbol, binding in sorted(hooks.items()):
        if isinstance(binding, str):
            builtin, preg, sreg = binding, None, None
        elif isinstance(binding, dict):
            builtin = _req(binding, "id", str, f"hook {symbol!r}")
            preg = binding.get("param_reg")
            sreg = binding.get("size_reg")
        else:
            raise PackageError(f"hook {symbol!r}: bad binding")
        if builtin not in BUILTIN_HOOK_IDS:
            raise PackageError(f"hook {symbol!r}: unknown builtin id {builtin!r}")
        out.append(HookBinding(symbol, builtin, preg, sreg))
    return tuple(out)


def _parse_expected(raw) -> tuple[ExpectedFinding, ...]:
    out = []
    for item in raw:
        out.append(ExpectedFinding(
            kind=_req(item, "kind", str, "expected finding"),
            label=_req(item, "label", str, "expected finding"),
            severity=_req(item, "severity", str, "expected finding"),
        ))
    return tuple(out)


def load_package(path: str | Path) -> EnclavePackage:
    """Load and fully validate an enclave package directory."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    source_path = path / "enclave.eir"
    if not manifest_path.is_file():
        raise PackageError(f"no manifest.json in {path}")
    if not source_path.is_file():
        raise PackageError(f"no enclave.eir in {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as ex:
        raise PackageError(f"manifest parse error: {ex}") from None

    name = _req(manifest, "name", str, "manifest")
    base = _addr(manifest, "enclave_base", "manifest")
    size = _addr(manifest, "enclave_size", "manifest")
    layout = _parse_sections(manifest, base, size)

    program = assemble(source_path.read_text(), code_base=layout.code.base)
    if len(program.instructions) > layout.code.size:
        raise PackageError(
            f"{len(program.instructions)} instructions exceed code section size {layout.code.size}")
    symtab = program.symtab()
    for addr, blob in program.data:
        if not layout.in_enclave(addr, len(blob)):
            raise PackageError(f"data image at {addr:#x} outside enclave range")

    warnings: list[str] = []
    ecalls_raw = manifest.get("ecalls", [])
    if not ecalls_raw:
        warnings.append("package declares no ecalls")
    ecalls = []
    for entry in ecalls_raw:
        what = "ecall"
        index = _req(entry, "index", int, what)
        ec_name = _req(entry, "name", str, what)
        entry_sym = _req(entry, "entry", str, what)
        if entry_sym not in symtab or symtab[entry_sym].kind != "code":
            raise PackageError(f"ecall {ec_name!r}: entry symbol {entry_sym!r} not found")
        params = tuple(_parse_param(p, ec_name) for p in entry.get("params", []))
        value_params = {p.name for p in params if p.kind == "value"}
        for p in params:
            if p.size_param is not None and p.size_param not in value_params:
                raise PackageError(
                    f"ecall {ec_name!r}: size_param {p.size_param!r} does not name a value param")
        ecalls.append(ECallSpec(index, ec_name, entry_sym, params))
    ecalls.sort(key=lambda e: e.index)
    if [e.index for e in ecalls] != list(range(len(ecalls))):
        raise PackageError("ecall indices must be unique and dense from 0")

    hooks = _parse_hooks(manifest)
    expected = _parse_expected(manifest.get("expected_findings", []))

    return EnclavePackage(
        name=name,
        layout=layout,
        program=program,
        ecalls=tuple(ecalls),
        hooks=hooks,
        expected_findings=expected,
        warnings=warnings,
        path=path,
    )


def ecall_table(package: EnclavePackage) -> tuple[ECallSpec, ...]:
    """The package's ECALL table ordered by index."""
    return package.ecalls

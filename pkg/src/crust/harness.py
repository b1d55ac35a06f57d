"""Differential fuzz driver generation.

For each function under test we build a libFuzzer target with two sides:
side A is the original C, included directly into the driver TU; side B is
reached only through a fixed `dfb_` symbol surface, so the driver neither
knows nor cares whether B is a Rust translation or a renamed copy of C.

Per input the driver probes each side in a forked child first. A crash on
the C side disqualifies the input (the original's behavior is undefined or
erroneous there, fuzzing continues); a crash on the Rust side alone is a
finding. Surviving inputs run in-process and every observable output is
compared: return value, pointee writes, array contents, and referenced
globals. Mismatches print one DF_JSON line to stderr and abort so libFuzzer
records the input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .corpus import CType, FunctionInterface
from .errors import FuzzingSetupError

# scalar name -> C slot type in driver structs
C_SLOT = {
    "i8": "int8_t", "i16": "int16_t", "i32": "int32_t", "i64": "int64_t",
    "u8": "uint8_t", "u16": "uint16_t", "u32": "uint32_t", "u64": "uint64_t",
    "f32": "float", "f64": "double", "bool": "uint8_t", "char": "char",
}

# scalar name -> type in C prototypes of the dfb_ surface
C_ABI = dict(C_SLOT, bool="bool")

# scalar name -> Rust type at the extern "C" boundary
RUST_FFI = {
    "i8": "i8", "i16": "i16", "i32": "i32", "i64": "i64",
    "u8": "u8", "u16": "u16", "u32": "u32", "u64": "u64",
    "f32": "f32", "f64": "f64", "bool": "bool", "char": "core::ffi::c_char",
}

# scalar name -> type the translated function is expected to use
RUST_NATURAL = dict(RUST_FFI, char="i8")

_SIGNED = {"i8", "i16", "i32", "i64", "char"}
_UNSIGNED = {"u8", "u16", "u32", "u64", "bool"}
_FLOAT = {"f32", "f64"}


def rust_param_type(ctype: CType) -> str:
    """Natural Rust type a faithful translation gives this C parameter."""
    if ctype.kind == "str":
        return "&str"
    if ctype.kind == "ptr":
        t = RUST_NATURAL[ctype.scalar]
        return f"&{t}" if ctype.const else f"&mut {t}"
    if ctype.kind == "array":
        t = RUST_NATURAL[ctype.scalar]
        inner = f"[{t}; {ctype.extent}]"
        return f"&{inner}" if ctype.const else f"&mut {inner}"
    return RUST_NATURAL[ctype.kind]


_SCALAR_SIZE = {
    "i8": 1, "u8": 1, "bool": 1, "char": 1, "i16": 2, "u16": 2,
    "i32": 4, "u32": 4, "f32": 4, "i64": 8, "u64": 8, "f64": 8,
}


def input_size(iface: FunctionInterface, max_string_len: int = 64) -> int:
    """Bytes of fuzz input the driver for this function consumes."""
    total = 0
    slots = [p.ctype for p in iface.params] + [t for _, t in iface.globals]
    for t in slots:
        if t is None:
            continue
        if t.kind == "str":
            total += max_string_len
        elif t.kind == "array":
            total += t.extent * _SCALAR_SIZE[t.scalar]
        elif t.kind == "ptr":
            total += _SCALAR_SIZE[t.scalar]
        else:
            total += _SCALAR_SIZE[t.kind]
    return total


@dataclass
class InterfacePair:
    """One function on both sides, with A-position -> B-position arg order."""

    a: FunctionInterface
    b: FunctionInterface
    arg_order: list[int] = field(default_factory=list)  # b_args[i] = a_args[arg_order[i]]
    global_map: dict[str, str] = field(default_factory=dict)  # A global -> B global

    @property
    def name(self) -> str:
        return self.a.name


def _types_equal(x: CType | None, y: CType | None) -> bool:
    if x is None or y is None:
        return False
    return (x.kind, x.scalar, x.extent) == (y.kind, y.scalar, y.extent)


def pair_interfaces(
    side_a: list[FunctionInterface], side_b: list[FunctionInterface]
) -> list[InterfacePair]:
    """Match fuzzable functions across the two sides.

    Same name wins; otherwise functions pair positionally among the leftovers
    (renames). Within a pair, parameters map by name when both sides use the
    same name multiset (reorders), else by position. Any structural mismatch
    is a setup failure, not a behavior finding.
    """
    a_funcs = [i for i in side_a if not i.macro_like]
    b_funcs = [i for i in side_b if not i.macro_like]
    if len(a_funcs) != len(b_funcs):
        raise FuzzingSetupError(
            f"function count differs: {len(a_funcs)} vs {len(b_funcs)}"
        )
    b_by_name = {i.name: i for i in b_funcs}
    pairs: list[InterfacePair] = []
    unmatched_a = []
    used_b = set()
    for ia in a_funcs:
        if ia.name in b_by_name:
            pairs.append(InterfacePair(ia, b_by_name[ia.name]))
            used_b.add(ia.name)
        else:
            unmatched_a.append(ia)
    leftovers_b = [i for i in b_funcs if i.name not in used_b]
    for ia, ib in zip(unmatched_a, leftovers_b):
        pairs.append(InterfacePair(ia, ib))

    for pair in pairs:
        ia, ib = pair.a, pair.b
        if not ia.fuzzable:
            continue
        if not ib.fuzzable:
            raise FuzzingSetupError(
                f"{ia.name}: counterpart not fuzzable: {'; '.join(ib.warnings)}"
            )
        if len(ia.params) != len(ib.params):
            raise FuzzingSetupError(
                f"{ia.name}: parameter count differs ({len(ia.params)} vs {len(ib.params)})"
            )
        if not _types_equal(ia.return_type, ib.return_type):
            raise FuzzingSetupError(f"{ia.name}: return type differs")
        a_names = sorted(p.name for p in ia.params)
        b_names = sorted(p.name for p in ib.params)
        if a_names == b_names and len(set(a_names)) == len(a_names):
            a_pos = {p.name: i for i, p in enumerate(ia.params)}
            pair.arg_order = [a_pos[p.name] for p in ib.params]
        else:
            pair.arg_order = list(range(len(ia.params)))
        for bi, ai in enumerate(pair.arg_order):
            if not _types_equal(ia.params[ai].ctype, ib.params[bi].ctype):
                raise FuzzingSetupError(
                    f"{ia.name}: type of parameter {ib.params[bi].name} differs"
                )
        pair.global_map = _pair_globals(ia, ib)
    return pairs


def _pair_globals(ia: FunctionInterface, ib: FunctionInterface) -> dict[str, str]:
    """A-side global name -> B-side global name.

    Same rules as functions: name match wins, leftovers pair in declaration
    order so renaming transforms stay comparable."""
    a_globals = list(ia.globals)
    b_globals = list(ib.globals)
    if len(a_globals) != len(b_globals):
        raise FuzzingSetupError(
            f"{ia.name}: referenced global count differs "
            f"({len(a_globals)} vs {len(b_globals)})"
        )
    b_types = dict(b_globals)
    mapping: dict[str, str] = {}
    unmatched_a = []
    for name, t in a_globals:
        if name in b_types:
            if not _types_equal(t, b_types[name]):
                raise FuzzingSetupError(f"{ia.name}: type of global {name} differs")
            mapping[name] = name
        else:
            unmatched_a.append((name, t))
    leftovers_b = [(n, t) for n, t in b_globals if n not in mapping]
    for (a_name, a_type), (b_name, b_type) in zip(unmatched_a, leftovers_b):
        if not _types_equal(a_type, b_type):
            raise FuzzingSetupError(f"{ia.name}: type of global {a_name} differs")
        mapping[a_name] = b_name
    return mapping


# ---------------------------------------------------------------------------
# Rust side B

def _rust_export_fn(iface: FunctionInterface) -> str:
    ffi_params = []
    unpack = []
    call_args = []
    for p in iface.params:
        t = p.ctype
        assert t is not None
        if t.kind == "str":
            ffi_params.append(f"{p.name}: *const core::ffi::c_char")
            unpack.append(
                f"    let {p.name} = unsafe {{ core::ffi::CStr::from_ptr({p.name}) }}.to_str().unwrap_or(\"\");"
            )
        elif t.kind == "ptr":
            base = RUST_NATURAL[t.scalar]
            if t.const:
                ffi_params.append(f"{p.name}: *const {base}")
                unpack.append(f"    let {p.name} = unsafe {{ &*{p.name} }};")
            else:
                ffi_params.append(f"{p.name}: *mut {base}")
                unpack.append(f"    let {p.name} = unsafe {{ &mut *{p.name} }};")
        elif t.kind == "array":
            base = RUST_NATURAL[t.scalar]
            arr = f"[{base}; {t.extent}]"
            if t.const:
                ffi_params.append(f"{p.name}: *const {base}")
                unpack.append(f"    let {p.name} = unsafe {{ &*({p.name} as *const {arr}) }};")
            else:
                ffi_params.append(f"{p.name}: *mut {base}")
                unpack.append(f"    let {p.name} = unsafe {{ &mut *({p.name} as *mut {arr}) }};")
        else:
            ffi_params.append(f"{p.name}: {RUST_FFI[t.kind]}")
            if t.kind == "char":
                call_args.append(f"{p.name} as i8")
                continue
        call_args.append(p.name)
    ret = iface.return_type
    if ret is None or ret.kind == "void":
        ret_ffi = ""
        tail = f"    {iface.name}({', '.join(call_args)});"
    else:
        ret_ffi = f" -> {RUST_FFI[ret.kind]}"
        call = f"{iface.name}({', '.join(call_args)})"
        if ret.kind == "char":
            call = f"({call}) as core::ffi::c_char"
        tail = f"    {call}"
    lines = [
        "#[no_mangle]",
        f"pub extern \"C\" fn dfb_call_{iface.name}({', '.join(ffi_params)}){ret_ffi} {{",
        *unpack,
        tail,
        "}",
    ]
    return "\n".join(lines)


def _rust_global_accessors(name: str, ctype: CType) -> str:
    t = RUST_NATURAL[ctype.kind]
    ffi = RUST_FFI[ctype.kind]
    get_expr = f"unsafe {{ core::ptr::addr_of!({name}).read() }}"
    set_expr = f"unsafe {{ core::ptr::addr_of_mut!({name}).write(v) }}"
    if ctype.kind == "char":
        get_expr = f"({get_expr}) as core::ffi::c_char"
        set_line = f"    let v = v as {t};\n    {set_expr};"
    else:
        set_line = f"    {set_expr};"
    return "\n".join(
        [
            "#[no_mangle]",
            f"pub extern \"C\" fn dfb_get_{name}() -> {ffi} {{",
            f"    {get_expr}",
            "}",
            "#[no_mangle]",
            f"pub extern \"C\" fn dfb_set_{name}(v: {ffi}) {{",
            set_line,
            "}",
        ]
    )


# unmangled exports in the translation collide with side A's C symbols of
# the same name at link time; the dfb_ surface below is the only linkage
# the driver needs
_EXPORT_ATTR_RE = re.compile(
    r'#\[\s*(?:unsafe\s*\(\s*)?(?:no_mangle|export_name\s*=\s*"[^"]*")\s*(?:\)\s*)?\]'
)


def generate_rust_side(rust_source: str, interfaces: list[FunctionInterface]) -> str:
    """Translated source plus the dfb_ export surface for its fuzzable
    functions and their globals."""
    rust_source = _EXPORT_ATTR_RE.sub("", rust_source)
    parts = [rust_source.rstrip("\n"), "", "// differential test exports"]
    done_globals: set[str] = set()
    for iface in interfaces:
        if not iface.fuzzable or iface.macro_like:
            continue
        parts.append(_rust_export_fn(iface))
        for gname, gtype in iface.globals:
            if gname in done_globals or gtype is None:
                continue
            done_globals.add(gname)
            parts.append(_rust_global_accessors(gname, gtype))
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# C side B (differential check of a perturbation against its original)

def _c_abi_param(p_name: str, t: CType) -> str:
    if t.kind == "str":
        return f"const char *{p_name}"
    if t.kind == "ptr":
        c = C_ABI[t.scalar]
        return f"const {c} *{p_name}" if t.const else f"{c} *{p_name}"
    if t.kind == "array":
        c = C_ABI[t.scalar]
        return f"const {c} *{p_name}" if t.const else f"{c} *{p_name}"
    return f"{C_ABI[t.kind]} {p_name}"


def _c_ret_type(ret: CType | None) -> str:
    if ret is None or ret.kind == "void":
        return "void"
    return C_ABI[ret.kind]


def generate_c_side(
    side_b_text: str, pairs: list[InterfacePair], rename: list[str], include_name: str
) -> str:
    """Wrapper TU exposing a C file under the dfb_ surface.

    Every top-level definition is renamed with a dfx_ prefix so the wrapper
    links alongside a driver that already contains the original names.
    Argument order inside each wrapper follows the pair's mapping, which is
    what keeps reordered signatures comparable.
    """
    lines = ["/* side B under test, renamed to avoid clashing with side A */"]
    lines += ["#include <stdint.h>", "#include <stdbool.h>", "#include <stddef.h>", ""]
    for name in rename:
        lines.append(f"#define {name} dfx_{name}")
    lines.append("#define main dfx_unused_main")
    lines.append(f'#include "{include_name}"')
    lines.append("#undef main")
    for name in rename:
        lines.append(f"#undef {name}")
    lines.append("")
    done_globals: set[str] = set()
    for pair in pairs:
        ib = pair.b
        if not ib.fuzzable:
            continue
        params_a_order = [pair.a.params[i].name for i in range(len(pair.a.params))]
        decl_params = ", ".join(
            _c_abi_param(pair.a.params[i].name, pair.a.params[i].ctype)
            for i in range(len(pair.a.params))
        ) or "void"
        args_b_order = ", ".join(params_a_order[ai] for ai in pair.arg_order)
        ret = _c_ret_type(pair.a.return_type)
        body = f"dfx_{ib.name}({args_b_order})"
        stmt = f"return {body};" if ret != "void" else f"{body};"
        lines.append(f"{ret} dfb_call_{pair.name}({decl_params}) {{ {stmt} }}")
        for gname, gtype in pair.a.globals:
            if gname in done_globals or gtype is None:
                continue
            done_globals.add(gname)
            c = C_ABI[gtype.kind]
            b_name = pair.global_map.get(gname, gname)
            lines.append(f"{c} dfb_get_{gname}(void) {{ return dfx_{b_name}; }}")
            lines.append(f"void dfb_set_{gname}({c} v) {{ dfx_{b_name} = v; }}")
    return "\n".join(lines) + "\n"


def side_b_rename_list(shape) -> list[str]:
    """Top-level names of a C file that must be prefixed in the wrapper TU."""
    names = [fn.name for fn in shape.functions]
    names += [g.name for g in shape.globals]
    seen = []
    for n in names:
        if n != "main" and n not in seen:
            seen.append(n)
    return seen


# ---------------------------------------------------------------------------
# driver TU

_DRIVER_PRELUDE = r"""
#include <stdint.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <math.h>
#include <signal.h>
#include <unistd.h>
#include <fcntl.h>
#include <sys/wait.h>
#include <sys/resource.h>

#define main dfh_unused_main
#include "side_a.c"
#undef main

static const uint8_t *dfh_cur;
static size_t dfh_rem;

static void dfh_take(void *dst, size_t n) {
    size_t have = dfh_rem < n ? dfh_rem : n;
    memset(dst, 0, n);
    memcpy(dst, dfh_cur, have);
    dfh_cur += have;
    dfh_rem -= have;
}

static void dfh_j_i(FILE *f, long long v) { fprintf(f, "%lld", v); }
static void dfh_j_u(FILE *f, unsigned long long v) { fprintf(f, "%llu", v); }
static void dfh_j_b(FILE *f, int v) { fputs(v ? "true" : "false", f); }

static void dfh_j_f(FILE *f, double v) {
    if (isnan(v)) { fputs("\"nan\"", f); return; }
    if (isinf(v)) { fputs(v > 0 ? "\"inf\"" : "\"-inf\"", f); return; }
    fprintf(f, "%.17g", v);
}

static void dfh_j_s(FILE *f, const char *s) {
    fputc('"', f);
    for (; *s; s++) {
        if (*s == '"' || *s == '\\') fputc('\\', f);
        fputc(*s, f);
    }
    fputc('"', f);
}

static int dfh_eq_f64(double a, double b) {
    if (isnan(a) && isnan(b)) return 1;
    if (a == b) return 1;
    int64_t ia, ib;
    memcpy(&ia, &a, 8);
    memcpy(&ib, &b, 8);
    if ((ia < 0) != (ib < 0)) return 0;
    int64_t d = ia - ib;
    if (d < 0) d = -d;
    return d <= DFH_ULPS;
}

static int dfh_eq_f32(float a, float b) {
    if (isnan(a) && isnan(b)) return 1;
    if (a == b) return 1;
    int32_t ia, ib;
    memcpy(&ia, &a, 4);
    memcpy(&ib, &b, 4);
    if ((ia < 0) != (ib < 0)) return 0;
    int32_t d = ia - ib;
    if (d < 0) d = -d;
    return d <= DFH_ULPS;
}

static void dfh_child_guard(void) {
    struct rlimit rl = {0, 0};
    setrlimit(RLIMIT_CORE, &rl);
    signal(SIGSEGV, SIG_DFL);
    signal(SIGBUS, SIG_DFL);
    signal(SIGFPE, SIG_DFL);
    signal(SIGILL, SIG_DFL);
    signal(SIGABRT, SIG_DFL);
    signal(SIGTRAP, SIG_DFL);
    signal(SIGALRM, SIG_DFL);
    int nul = open("/dev/null", O_WRONLY);
    if (nul >= 0) { dup2(nul, 1); dup2(nul, 2); }
    alarm(DFH_PROBE_ALARM);
}
"""


@dataclass
class _Slot:
    """One decoded value: a parameter or a global initial value."""

    name: str       # C identifier suffix
    ctype: CType
    is_global: bool


def _slot_decl(s: _Slot, prefix: str) -> str:
    t = s.ctype
    if t.kind == "str":
        return f"    char {prefix}{s.name}[DFH_MAX_STR + 1];"
    if t.kind in ("ptr", "array"):
        n = t.extent if t.kind == "array" else 1
        return f"    {C_SLOT[t.scalar]} {prefix}{s.name}[{n}];"
    return f"    {C_SLOT[t.kind]} {prefix}{s.name};"


def _decode_stmt(s: _Slot, prefix: str) -> list[str]:
    t = s.ctype
    dst = f"in->{prefix}{s.name}"
    if t.kind == "str":
        return [
            f"    dfh_take({dst}, DFH_MAX_STR);",
            f"    {dst}[DFH_MAX_STR] = 0;",
            f"    for (size_t i = 0; i < DFH_MAX_STR; i++)",
            f"        if ({dst}[i]) {dst}[i] = (char)(0x20 + ((unsigned char){dst}[i]) % 0x5f);",
        ]
    if t.kind in ("ptr", "array"):
        return [f"    dfh_take({dst}, sizeof {dst});"]
    out = [f"    dfh_take(&{dst}, sizeof {dst});"]
    if t.kind == "bool":
        out.append(f"    {dst} = {dst} ? 1 : 0;")
    return out


def _emit_value(expr: str, scalar: str) -> str:
    if scalar in _FLOAT:
        return f"dfh_j_f(f, (double)({expr}));"
    if scalar == "bool":
        return f"dfh_j_b(f, (int)({expr}));"
    if scalar in _SIGNED:
        return f"dfh_j_i(f, (long long)({expr}));"
    return f"dfh_j_u(f, (unsigned long long)({expr}));"


def _emit_slot(s: _Slot, prefix: str, src: str) -> list[str]:
    t = s.ctype
    ref = f"{src}->{prefix}{s.name}"
    if t.kind == "str":
        return [f"    dfh_j_s(f, {ref});"]
    if t.kind in ("ptr", "array"):
        n = t.extent if t.kind == "array" else 1
        if n == 1:
            return [f"    {_emit_value(ref + '[0]', t.scalar)}"]
        lines = ["    fputc('[', f);"]
        lines.append(f"    for (int i = 0; i < {n}; i++) {{")
        lines.append("        if (i) fputc(',', f);")
        lines.append(f"        {_emit_value(ref + '[i]', t.scalar)}")
        lines.append("    }")
        lines.append("    fputc(']', f);")
        return lines
    return [f"    {_emit_value(ref, t.kind)}"]


def _compare_expr(a: str, b: str, scalar: str) -> str:
    if scalar == "f64":
        return f"dfh_eq_f64({a}, {b})"
    if scalar == "f32":
        return f"dfh_eq_f32({a}, {b})"
    return f"{a} == {b}"


def generate_driver(
    pair: InterfacePair,
    max_string_len: int = 64,
    float_ulps: int = 2,
    probe_alarm_s: int = 5,
) -> str:
    """The libFuzzer TU for one function pair. Side A comes from side_a.c in
    the build directory; side B is whatever provides the dfb_ symbols."""
    iface = pair.a
    if not iface.fuzzable:
        raise FuzzingSetupError(f"{iface.name}: not fuzzable: {'; '.join(iface.warnings)}")

    in_slots = [_Slot(p.name, p.ctype, False) for p in iface.params]
    in_slots += [_Slot(g, t, True) for g, t in iface.globals]
    ret = iface.return_type
    has_ret = ret is not None and ret.kind != "void"

    # observable outputs: return, mutable pointees/arrays, globals
    out_slots = [
        s for s in in_slots
        if (s.ctype.kind in ("ptr", "array") and not s.ctype.const) or s.is_global
    ]

    L: list[str] = [f"/* differential driver for {iface.name} */"]
    L.append(f"#define DFH_MAX_STR {max_string_len}")
    L.append(f"#define DFH_ULPS {float_ulps}")
    L.append(f"#define DFH_PROBE_ALARM {probe_alarm_s}")
    L.append(_DRIVER_PRELUDE)

    # side B surface
    decl_params = ", ".join(
        _c_abi_param(p.name, p.ctype) for p in iface.params
    ) or "void"
    L.append(f"extern {_c_ret_type(ret)} dfb_call_{iface.name}({decl_params});")
    for g, t in iface.globals:
        c = C_ABI[t.kind]
        L.append(f"extern {c} dfb_get_{g}(void);")
        L.append(f"extern void dfb_set_{g}({c} v);")

    # input struct and decoder
    L.append("\ntypedef struct {")
    for s in in_slots:
        L.append(_slot_decl(s, "g_" if s.is_global else "p_"))
    if not in_slots:
        L.append("    unsigned char dfh_pad;")
    L.append("} dfh_inputs;")
    L.append("\nstatic void dfh_decode(const uint8_t *data, size_t size, dfh_inputs *in) {")
    L.append("    dfh_cur = data;")
    L.append("    dfh_rem = size;")
    for s in in_slots:
        L.extend(_decode_stmt(s, "g_" if s.is_global else "p_"))
    if not in_slots:
        L.append("    (void)in;")
    L.append("}")

    # output struct
    L.append("\ntypedef struct {")
    if has_ret:
        L.append(f"    {C_SLOT[ret.kind]} ret;")
    for s in out_slots:
        L.append(_slot_decl(s, "o_"))
    if not has_ret and not out_slots:
        L.append("    unsigned char dfh_pad;")
    L.append("} dfh_outputs;")

    # runner for side A
    def call_args(side: str) -> list[str]:
        args = []
        for p in iface.params:
            t = p.ctype
            if t.kind == "str":
                args.append(f"in->p_{p.name}")
            elif t.kind in ("ptr", "array"):
                args.append(f"loc_{p.name}")
            else:
                cast = f"({C_ABI['bool']})" if t.kind == "bool" else ""
                args.append(f"{cast}in->p_{p.name}")
        return args

    def runner(side: str) -> list[str]:
        body = [f"\nstatic void dfh_run_{side}(const dfh_inputs *in, dfh_outputs *out) {{"]
        for p in iface.params:
            t = p.ctype
            if t.kind in ("ptr", "array"):
                n = t.extent if t.kind == "array" else 1
                body.append(f"    {C_SLOT[t.scalar]} loc_{p.name}[{n}];")
                body.append(f"    memcpy(loc_{p.name}, in->p_{p.name}, sizeof loc_{p.name});")
        for g, t in iface.globals:
            val = f"({C_ABI['bool']})in->g_{g}" if t.kind == "bool" else f"in->g_{g}"
            if side == "a":
                body.append(f"    {g} = {val};")
            else:
                body.append(f"    dfb_set_{g}({val});")
        fn = iface.name if side == "a" else f"dfb_call_{iface.name}"
        call = f"{fn}({', '.join(call_args(side))})"
        if has_ret:
            body.append(f"    out->ret = {call};")
        else:
            body.append(f"    {call};")
        for s in out_slots:
            if s.is_global:
                src = s.name if side == "a" else f"dfb_get_{s.name}()"
                body.append(f"    out->o_{s.name} = {src};")
            else:
                body.append(f"    memcpy(out->o_{s.name}, loc_{s.name}, sizeof out->o_{s.name});")
        if not has_ret and not out_slots:
            body.append("    (void)out;")
        body.append("}")
        return body

    L.extend(runner("a"))
    L.extend(runner("b"))

    # fork probe
    L.append("""
typedef void (*dfh_runner)(const dfh_inputs *, dfh_outputs *);

static int dfh_probe(dfh_runner run, const dfh_inputs *in) {
    pid_t pid = fork();
    if (pid == 0) {
        dfh_child_guard();
        dfh_outputs o;
        run(in, &o);
        _exit(0);
    }
    if (pid < 0) return 1;
    int st = 0;
    waitpid(pid, &st, 0);
    return WIFEXITED(st) && WEXITSTATUS(st) == 0;
}""")

    # comparison
    L.append("\nstatic int dfh_same(const dfh_outputs *a, const dfh_outputs *b) {")
    conds: list[str] = []
    if has_ret:
        conds.append("    if (!(%s)) return 0;" % _compare_expr("a->ret", "b->ret", ret.kind))
    for s in out_slots:
        t = s.ctype
        if t.kind in ("ptr", "array"):
            n = t.extent if t.kind == "array" else 1
            conds.append(f"    for (int i = 0; i < {n}; i++)")
            conds.append(
                "        if (!(%s)) return 0;"
                % _compare_expr(f"a->o_{s.name}[i]", f"b->o_{s.name}[i]", t.scalar)
            )
        else:
            conds.append(
                "    if (!(%s)) return 0;" % _compare_expr(f"a->o_{s.name}", f"b->o_{s.name}", t.kind)
            )
    if not conds:
        conds = ["    (void)a;", "    (void)b;"]
    L.extend(conds)
    L.append("    return 1;")
    L.append("}")

    # JSON emitters
    L.append("\nstatic void dfh_emit_inputs(FILE *f, const dfh_inputs *in) {")
    first = True
    for s in (x for x in in_slots if not x.is_global):
        L.append(f"    fputs(\"{'' if first else ','}\\\"{s.name}\\\":\", f);")
        L.extend(_emit_slot(s, "p_", "in"))
        first = False
    gslots = [x for x in in_slots if x.is_global]
    if gslots:
        L.append(f"    fputs(\"{'' if first else ','}\\\"globals\\\":{{\", f);")
        gfirst = True
        for s in gslots:
            L.append(f"    fputs(\"{'' if gfirst else ','}\\\"{s.name}\\\":\", f);")
            L.extend(_emit_slot(s, "g_", "in"))
            gfirst = False
        L.append("    fputc('}', f);")
    if not in_slots:
        L.append("    (void)in;")
    L.append("}")

    L.append("\nstatic void dfh_emit_outputs(FILE *f, const dfh_outputs *o) {")
    first = True
    if has_ret:
        L.append("    fputs(\"\\\"return\\\":\", f);")
        L.append(f"    {_emit_value('o->ret', ret.kind)}")
        first = False
    for s in out_slots:
        L.append(f"    fputs(\"{'' if first else ','}\\\"{s.name}\\\":\", f);")
        L.extend(_emit_slot(s, "o_", "o"))
        first = False
    if not has_ret and not out_slots:
        L.append("    (void)o;")
    L.append("}")

    L.append(f"""
static void dfh_report(const char *kind, const dfh_inputs *in,
                       const dfh_outputs *a, const dfh_outputs *b) {{
    fprintf(stderr, "DF_JSON:{{\\"kind\\":\\"%s\\",\\"function\\":\\"{iface.name}\\",\\"inputs\\":{{", kind);
    dfh_emit_inputs(stderr, in);
    fputs("}},\\"c\\":{{", stderr);
    dfh_emit_outputs(stderr, a);
    if (b) {{
        fputs("}},\\"rust\\":{{", stderr);
        dfh_emit_outputs(stderr, b);
        fputs("}}}}\\n", stderr);
    }} else {{
        fputs("}},\\"rust\\":{{\\"error\\":\\"runtime\\"}}}}\\n", stderr);
    }}
    fflush(stderr);
}}

int LLVMFuzzerTestOneInput(const uint8_t *data, size_t size) {{
    dfh_inputs in;
    dfh_decode(data, size, &in);
    if (!dfh_probe(dfh_run_a, &in)) return 0;
    dfh_outputs oa;
    dfh_run_a(&in, &oa);
    if (!dfh_probe(dfh_run_b, &in)) {{
        dfh_report("rust-only-runtime-error", &in, &oa, NULL);
        abort();
    }}
    dfh_outputs ob;
    dfh_run_b(&in, &ob);
    if (!dfh_same(&oa, &ob)) {{
        dfh_report("value-mismatch", &in, &oa, &ob);
        abort();
    }}
    return 0;
}}""")
    return "\n".join(L) + "\n"

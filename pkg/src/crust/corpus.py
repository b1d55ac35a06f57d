"""Corpus loading, code metrics, and function interface extraction.

Works on unpreprocessed single-file C sources. Parsing is deliberately
lightweight: file-scope declarations and function definitions are recovered
from the token stream, and anything outside the supported surface is reported
with a warning instead of failing the load.

Metric definitions (pinned; test fixtures are hand-counted against these):
  loc     total line count of the file.
  nloc    lines carrying at least one code token; comment-only and blank
          lines are excluded, preprocessor directives count (continuations
          included).
  tokens  deterministic approximation: identifier/number/operator/string
          tokens, plus whitespace-separated words of each directive.
  cc      per function, decision points + 1 (if, for, while, case, &&, ||,
          ?); the file value is the maximum over its functions, 1 when none.
"""

from __future__ import annotations

import csv
import json
import logging
import re
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .clex import KEYWORDS, Tok, Token, lex

log = logging.getLogger(__name__)

SCALARS = frozenset(
    ["i8", "i16", "i32", "i64", "u8", "u16", "u32", "u64", "f32", "f64", "bool", "char"]
)


@dataclass(frozen=True)
class CType:
    """A type from the closed supported set.

    kind is a scalar name from SCALARS, or "void", "ptr" (pointer to one
    scalar), "array" (fixed-extent scalar array), or "str" (NUL-terminated
    read-only string). scalar names the pointee/element for ptr and array.
    """

    kind: str
    scalar: str = ""
    extent: int = 0
    const: bool = False

    def describe(self) -> str:
        if self.kind == "ptr":
            return f"{'const ' if self.const else ''}{self.scalar}*"
        if self.kind == "array":
            return f"{self.scalar}[{self.extent}]"
        if self.kind == "str":
            return "const char*"
        return self.kind


@dataclass
class Param:
    name: str
    ctype: CType | None
    raw: str = ""


@dataclass
class FunctionInterface:
    name: str
    return_type: CType | None
    params: list[Param] = field(default_factory=list)
    globals: list[tuple[str, CType | None]] = field(default_factory=list)
    fuzzable: bool = True
    warnings: list[str] = field(default_factory=list)
    macro_like: bool = False

    def warn(self, message: str) -> None:
        self.warnings.append(message)
        self.fuzzable = False


@dataclass
class CodeMetrics:
    loc: int
    nloc: int
    token_count: int
    cc: int


@dataclass
class SourceUnit:
    source_id: str
    path: str
    text: str
    group: str = "default"
    metrics: CodeMetrics | None = None
    interfaces: list[FunctionInterface] = field(default_factory=list)

    @property
    def fuzzable(self) -> bool:
        return bool(self.interfaces) and all(i.fuzzable for i in self.interfaces)


class Tokenizer(Protocol):
    def count(self, text: str) -> int: ...


class LexTokenizer:
    """Default token counter; see the module docstring for the definition."""

    def count(self, text: str) -> int:
        total = 0
        for tok in lex(text):
            if tok.kind == Tok.PREPROC:
                total += len(tok.text.split())
            elif tok.kind in (Tok.IDENT, Tok.NUMBER, Tok.STRING, Tok.CHAR, Tok.PUNCT):
                total += 1
        return total


# ---------------------------------------------------------------------------
# type recognition

_QUALIFIERS = frozenset(
    ["const", "volatile", "restrict", "register", "static", "extern", "inline", "_Noreturn"]
)
_TYPE_BUILDERS = frozenset(["long", "short", "signed", "unsigned", "int", "void"])

_SCALAR_SPELLINGS = {
    "char": "char",
    "signed char": "i8",
    "unsigned char": "u8",
    "short": "i16",
    "short int": "i16",
    "signed short": "i16",
    "signed short int": "i16",
    "unsigned short": "u16",
    "unsigned short int": "u16",
    "int": "i32",
    "signed": "i32",
    "signed int": "i32",
    "unsigned": "u32",
    "unsigned int": "u32",
    "long": "i64",
    "long int": "i64",
    "signed long": "i64",
    "signed long int": "i64",
    "unsigned long": "u64",
    "unsigned long int": "u64",
    "long long": "i64",
    "long long int": "i64",
    "signed long long": "i64",
    "signed long long int": "i64",
    "unsigned long long": "u64",
    "unsigned long long int": "u64",
    "float": "f32",
    "double": "f64",
    "_Bool": "bool",
    "bool": "bool",
    "int8_t": "i8",
    "int16_t": "i16",
    "int32_t": "i32",
    "int64_t": "i64",
    "uint8_t": "u8",
    "uint16_t": "u16",
    "uint32_t": "u32",
    "uint64_t": "u64",
    "size_t": "u64",
    "ssize_t": "i64",
    "intptr_t": "i64",
    "uintptr_t": "u64",
}


def _scalar_for(words: list[str]) -> str | None:
    return _SCALAR_SPELLINGS.get(" ".join(w for w in words if w not in _QUALIFIERS))


# ---------------------------------------------------------------------------
# top-level structure scan

@dataclass
class FnDef:
    name: str
    ret_words: list[str]
    param_tokens: list[Token]
    body_slice: tuple[int, int]  # [start, end) indices into the code-token list
    static: bool = False


@dataclass
class GlobalDecl:
    name: str
    ctype: CType | None
    raw: str


@dataclass
class FileShape:
    """Raw structural scan shared by metrics, interfaces, and perturbations."""

    tokens: list[Token]
    code: list[int]
    functions: list[FnDef]
    globals: list[GlobalDecl]
    macro_fns: list[str]
    other_decl_names: list[str]  # typedef names, struct tags, object macros


def _match_forward(texts: list[str], i: int, open_t: str, close_t: str) -> int:
    """Index of the token matching texts[i] == open_t, or len(texts)."""
    depth = 0
    for j in range(i, len(texts)):
        if texts[j] == open_t:
            depth += 1
        elif texts[j] == close_t:
            depth -= 1
            if depth == 0:
                return j
    return len(texts)


_MACRO_FN_RE = re.compile(r"#\s*define\s+([A-Za-z_]\w*)\(")
_MACRO_OBJ_RE = re.compile(r"#\s*define\s+([A-Za-z_]\w*)")


def scan_file(text: str) -> FileShape:
    tokens = lex(text)
    code = [
        i
        for i, t in enumerate(tokens)
        if t.kind in (Tok.IDENT, Tok.NUMBER, Tok.STRING, Tok.CHAR, Tok.PUNCT)
    ]
    texts = [tokens[i].text for i in code]
    kinds = [tokens[i].kind for i in code]
    n = len(code)

    functions: list[FnDef] = []
    globals_: list[GlobalDecl] = []
    macro_fns: list[str] = []
    other_names: list[str] = []

    for t in tokens:
        if t.kind == Tok.PREPROC:
            m = _MACRO_FN_RE.match(t.text)
            if m:
                macro_fns.append(m.group(1))
                continue
            m = _MACRO_OBJ_RE.match(t.text)
            if m:
                other_names.append(m.group(1))

    i = 0
    while i < n:
        tx = texts[i]
        if tx == ";":
            i += 1
            continue
        if tx == "{":  # stray top-level block
            i = _match_forward(texts, i, "{", "}") + 1
            continue
        if tx == "typedef":
            j = i
            while j < n and texts[j] != ";":
                if texts[j] == "{":
                    j = _match_forward(texts, j, "{", "}")
                j += 1
            k = j - 1
            while k > i and (kinds[k] != Tok.IDENT or texts[k] in KEYWORDS):
                k -= 1
            if k > i:
                other_names.append(texts[k])
            i = j + 1
            continue

        # Consume a type prefix: qualifiers, struct/union/enum with optional
        # tag and body, scalar spellings, stars.
        start = i
        j = i
        aggregate_body_end = None
        while j < n:
            t = texts[j]
            if t in _QUALIFIERS or t == "*":
                j += 1
                continue
            if t in ("struct", "union", "enum"):
                j += 1
                if j < n and kinds[j] == Tok.IDENT and texts[j] not in KEYWORDS:
                    other_names.append(texts[j])
                    j += 1
                if j < n and texts[j] == "{":
                    j = _match_forward(texts, j, "{", "}") + 1
                    aggregate_body_end = j
                continue
            if kinds[j] == Tok.IDENT and (t in _SCALAR_SPELLINGS or t in _TYPE_BUILDERS):
                j += 1
                continue
            if kinds[j] == Tok.IDENT and t not in KEYWORDS:
                # An unknown ident is a type word only at the front of the
                # declaration with a declarator still to come (typedef name).
                nxt = j + 1
                if j == start and nxt < n and (kinds[nxt] == Tok.IDENT or texts[nxt] == "*"):
                    j += 1
                    continue
            break

        if aggregate_body_end is not None and j < n and texts[j] == ";":
            i = j + 1  # bare struct/union/enum definition
            continue

        if (
            j < n
            and kinds[j] == Tok.IDENT
            and texts[j] not in KEYWORDS
            and j + 1 < n
            and texts[j + 1] == "("
        ):
            name_idx = j
            close = _match_forward(texts, j + 1, "(", ")")
            after = close + 1
            if after < n and texts[after] == "{":
                body_end = _match_forward(texts, after, "{", "}")
                ret_words = [texts[k] for k in range(start, name_idx)]
                functions.append(
                    FnDef(
                        name=texts[name_idx],
                        ret_words=ret_words,
                        param_tokens=[tokens[code[k]] for k in range(j + 2, close)],
                        body_slice=(after, body_end + 1),
                        static="static" in ret_words,
                    )
                )
                i = body_end + 1
                continue
            if after < n and texts[after] == ";":
                i = after + 1  # prototype
                continue
            if after < n:
                # function pointer or macro call at file scope: declaration scan
                i = _scan_declaration(texts, kinds, start, globals_)
                continue
            i = n
            continue

        i = _scan_declaration(texts, kinds, start, globals_, body_skip=aggregate_body_end)

    return FileShape(tokens, code, functions, globals_, macro_fns, other_names)


def _scan_declaration(
    texts: list[str],
    kinds: list,
    start: int,
    out: list[GlobalDecl],
    body_skip: int | None = None,
) -> int:
    """Parse one file-scope object declaration, append declarators to out.

    Returns the index just past the terminating ';'. Unsupported declarations
    are recorded with a None type so later stages can warn by name.
    """
    n = len(texts)
    end = body_skip if body_skip is not None else start
    while end < n and texts[end] != ";":
        if texts[end] == "{":
            end = _match_forward(texts, end, "{", "}")
        elif texts[end] == "(":
            end = _match_forward(texts, end, "(", ")")
        end += 1
    raw = " ".join(texts[start:end])

    if body_skip is not None:
        # struct/union/enum with body and declarators: unsupported globals
        for name in _declarator_names(texts, kinds, body_skip, end):
            out.append(GlobalDecl(name, None, raw))
        return end + 1

    k = start
    type_words: list[str] = []
    while k < end:
        t = texts[k]
        if t in _QUALIFIERS:
            type_words.append(t)
            k += 1
            continue
        if t in ("struct", "union", "enum"):
            type_words.append(t)
            k += 1
            if k < end and kinds[k] == Tok.IDENT:
                type_words.append(texts[k])
                k += 1
            break
        if kinds[k] == Tok.IDENT and (t in _SCALAR_SPELLINGS or t in _TYPE_BUILDERS):
            type_words.append(t)
            k += 1
            continue
        break
    base = _scalar_for(type_words)
    is_const = "const" in type_words
    if base is None:
        for name in _declarator_names(texts, kinds, k, end):
            out.append(GlobalDecl(name, None, raw))
        return end + 1

    while k < end:
        ptr = 0
        while k < end and texts[k] == "*":
            ptr += 1
            k += 1
        if k >= end or kinds[k] != Tok.IDENT or texts[k] in KEYWORDS:
            break
        name = texts[k]
        k += 1
        extent = 0
        is_array = False
        if k < end and texts[k] == "[":
            close = _match_forward(texts, k, "[", "]")
            inner = texts[k + 1 : close]
            is_array = True
            if len(inner) == 1 and inner[0].isdigit():
                extent = int(inner[0])
            k = close + 1
        ctype: CType | None
        if ptr == 0 and not is_array:
            ctype = CType(base, const=is_const)
        elif ptr == 0 and is_array and extent > 0:
            ctype = CType("array", scalar=base, extent=extent, const=is_const)
        else:
            ctype = None  # pointer globals and unsized arrays are unsupported
        out.append(GlobalDecl(name, ctype, raw))
        while k < end and texts[k] != ",":
            if texts[k] == "{":
                k = _match_forward(texts, k, "{", "}")
            elif texts[k] == "(":
                k = _match_forward(texts, k, "(", ")")
            k += 1
        if k < end and texts[k] == ",":
            k += 1
    return end + 1


def _declarator_names(texts: list[str], kinds: list, k: int, end: int) -> list[str]:
    """Best-effort declarator names for unsupported declarations."""
    names = []
    depth = 0
    for j in range(k, end):
        t = texts[j]
        if t == "=" and depth == 0:
            break
        if t in "([{":
            depth += 1
        elif t in ")]}":
            depth -= 1
        elif depth == 0 and kinds[j] == Tok.IDENT and t not in KEYWORDS:
            names.append(t)
    return names[-1:]


# ---------------------------------------------------------------------------
# interfaces

def _parse_params(param_tokens: list[Token], iface: FunctionInterface) -> list[Param]:
    texts = [t.text for t in param_tokens]
    kinds = [t.kind for t in param_tokens]
    if not texts or texts == ["void"]:
        return []
    groups: list[tuple[int, int]] = []
    depth = 0
    first = 0
    for j, t in enumerate(texts):
        if t in "([":
            depth += 1
        elif t in ")]":
            depth -= 1
        elif t == "," and depth == 0:
            groups.append((first, j))
            first = j + 1
    groups.append((first, len(texts)))

    params: list[Param] = []
    for a, b in groups:
        raw = " ".join(texts[a:b])
        words = texts[a:b]
        if words == ["..."]:
            iface.warn("variadic parameters are unsupported")
            params.append(Param("...", None, raw))
            continue
        if "(" in words:
            iface.warn(f"function-pointer parameter is unsupported: {raw}")
            params.append(Param(_last_ident(texts, kinds, a, b) or "", None, raw))
            continue
        if any(w in ("struct", "union", "enum") for w in words):
            iface.warn(f"aggregate parameter type is unsupported: {raw}")
            params.append(Param(_last_ident(texts, kinds, a, b) or "", None, raw))
            continue
        k = a
        type_words: list[str] = []
        while k < b:
            t = texts[k]
            if t in _QUALIFIERS:
                type_words.append(t)
                k += 1
                continue
            if kinds[k] == Tok.IDENT and (t in _SCALAR_SPELLINGS or t in _TYPE_BUILDERS):
                type_words.append(t)
                k += 1
                continue
            break
        base = _scalar_for(type_words)
        if base is None:
            iface.warn(f"unsupported parameter type: {raw}")
            params.append(Param(_last_ident(texts, kinds, a, b) or "", None, raw))
            continue
        is_const = "const" in type_words
        ptr = 0
        while k < b and texts[k] == "*":
            ptr += 1
            k += 1
        name = ""
        if k < b and kinds[k] == Tok.IDENT and texts[k] not in KEYWORDS:
            name = texts[k]
            k += 1
        extent = 0
        is_array = False
        if k < b and texts[k] == "[":
            is_array = True
            close = _match_forward(texts, k, "[", "]")
            inner = texts[k + 1 : close]
            if len(inner) == 1 and inner[0].isdigit():
                extent = int(inner[0])
            k = close + 1
        if not name:
            iface.warn(f"unnamed parameter: {raw}")
            params.append(Param("", None, raw))
            continue
        ctype: CType | None
        if ptr == 0 and not is_array:
            ctype = CType(base, const=is_const)
        elif ptr == 1 and not is_array and base == "char" and is_const:
            ctype = CType("str", scalar="char", const=True)
        elif ptr == 1 and not is_array and base == "char":
            ctype = None
            iface.warn(f"mutable char* parameter is ambiguous (buffer vs string): {raw}")
        elif ptr == 1 and not is_array:
            ctype = CType("ptr", scalar=base, const=is_const)
        elif ptr == 0 and is_array and extent > 0:
            ctype = CType("array", scalar=base, extent=extent, const=is_const)
        elif ptr == 0 and is_array:
            ctype = None
            iface.warn(f"array parameter without fixed extent: {raw}")
        else:
            ctype = None
            iface.warn(f"multi-level pointer parameter is unsupported: {raw}")
        params.append(Param(name, ctype, raw))
    return params


def _last_ident(texts: list[str], kinds: list, a: int, b: int) -> str | None:
    for j in range(b - 1, a - 1, -1):
        if kinds[j] == Tok.IDENT and texts[j] not in KEYWORDS:
            return texts[j]
    return None


def _return_ctype(words: list[str], iface: FunctionInterface) -> CType | None:
    ptr = words.count("*")
    type_words = [w for w in words if w != "*"]
    if any(w in ("struct", "union", "enum") for w in type_words):
        iface.warn(f"aggregate return type is unsupported: {' '.join(words)}")
        return None
    core = [w for w in type_words if w not in _QUALIFIERS]
    if core == ["void"] and ptr == 0:
        return CType("void")
    base = _scalar_for(type_words)
    if base is None:
        iface.warn(f"unsupported return type: {' '.join(words)}")
        return None
    if ptr:
        iface.warn(f"pointer return type is unsupported: {' '.join(words)}")
        return None
    return CType(base)


def extract_interfaces(text: str) -> list[FunctionInterface]:
    """Function interfaces for every definition in the file, `main` excluded."""
    shape = scan_file(text)
    texts = [shape.tokens[i].text for i in shape.code]

    interfaces: list[FunctionInterface] = []
    for name in shape.macro_fns:
        iface = FunctionInterface(name=name, return_type=None, macro_like=True, fuzzable=False)
        iface.warnings.append("function-like macro: no typed interface")
        interfaces.append(iface)

    for fn in shape.functions:
        if fn.name == "main":
            continue
        iface = FunctionInterface(name=fn.name, return_type=None)
        iface.return_type = _return_ctype(fn.ret_words, iface)
        iface.params = _parse_params(fn.param_tokens, iface)
        body_idents = {texts[k] for k in range(*fn.body_slice)}
        for g in shape.globals:
            if g.name in body_idents:
                iface.globals.append((g.name, g.ctype))
                if g.ctype is None:
                    iface.warn(f"references unsupported global: {g.raw}")
        interfaces.append(iface)
    return interfaces


# ---------------------------------------------------------------------------
# metrics

def function_cc(text: str) -> dict[str, int]:
    """Cyclomatic complexity per function definition."""
    shape = scan_file(text)
    texts = [shape.tokens[i].text for i in shape.code]
    out: dict[str, int] = {}
    for fn in shape.functions:
        a, b = fn.body_slice
        decisions = sum(
            1 for k in range(a, b) if texts[k] in ("if", "for", "while", "case", "&&", "||", "?")
        )
        out[fn.name] = decisions + 1
    return out


def compute_metrics(text: str, tokenizer: Tokenizer | None = None) -> CodeMetrics:
    tokenizer = tokenizer or LexTokenizer()
    loc = len(text.splitlines())
    code_lines: set[int] = set()
    for tok in lex(text):
        if tok.kind in (Tok.IDENT, Tok.NUMBER, Tok.STRING, Tok.CHAR, Tok.PUNCT):
            code_lines.add(tok.line)
        elif tok.kind == Tok.PREPROC:
            for extra in range(tok.text.count("\n") + 1):
                code_lines.add(tok.line + extra)
    ccs = function_cc(text)
    return CodeMetrics(
        loc=loc,
        nloc=len(code_lines),
        token_count=tokenizer.count(text),
        cc=max(ccs.values()) if ccs else 1,
    )


# ---------------------------------------------------------------------------
# loading and reporting

def load_corpus(
    path: str | Path,
    manifest_path: str | Path | None = None,
    tokenizer: Tokenizer | None = None,
) -> list[SourceUnit]:
    """Load every .c file under ``path`` (or the single file), sorted by id."""
    root = Path(path)
    files = [root] if root.is_file() else sorted(root.rglob("*.c"))
    groups: dict[str, str] = {}
    if manifest_path is None and root.is_dir() and (root / "groups.json").exists():
        manifest_path = root / "groups.json"
    if manifest_path is not None:
        with open(manifest_path, encoding="utf-8") as f:
            groups = {str(k): str(v) for k, v in json.load(f).items()}

    units: list[SourceUnit] = []
    for fp in files:
        source_id = fp.name if root.is_file() else fp.relative_to(root).as_posix()
        try:
            text = fp.read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            log.warning("skipping unreadable file %s: %s", fp, exc)
            continue
        units.append(
            SourceUnit(
                source_id=source_id,
                path=str(fp),
                text=text,
                group=groups.get(source_id, "default"),
                metrics=compute_metrics(text, tokenizer),
                interfaces=extract_interfaces(text),
            )
        )
    return units


_SUMMARY_ROWS = [("LOC", "loc"), ("NLOC", "nloc"), ("Tokens", "token_count"), ("CC", "cc")]


def corpus_report(units: list[SourceUnit]) -> dict:
    """Summary statistics (min/avg/stddev/max per metric) plus per-file rows."""
    rows = []
    for u in units:
        m = u.metrics or compute_metrics(u.text)
        rows.append(
            {
                "source_id": u.source_id,
                "group": u.group,
                "loc": m.loc,
                "nloc": m.nloc,
                "token_count": m.token_count,
                "cc": m.cc,
                "functions": len([i for i in u.interfaces if not i.macro_like]),
                "fuzzable": u.fuzzable,
            }
        )
    summary = {}
    for label, key in _SUMMARY_ROWS:
        vals = [r[key] for r in rows]
        if vals:
            summary[label] = {
                "min": min(vals),
                "avg": statistics.fmean(vals),
                "stddev": statistics.pstdev(vals),
                "max": max(vals),
            }
        else:
            summary[label] = {"min": 0, "avg": 0.0, "stddev": 0.0, "max": 0}
    by_group: dict[str, int] = {}
    for r in rows:
        by_group[r["group"]] = by_group.get(r["group"], 0) + 1
    return {"files": rows, "summary": summary, "groups": by_group}


def write_corpus_report(report: dict, out_base: str | Path) -> list[Path]:
    """Write <base>.files.csv, <base>.summary.csv and <base>.json."""
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    written = []

    files_csv = out_base.with_suffix(".files.csv")
    with open(files_csv, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["source_id", "group", "loc", "nloc", "token_count", "cc", "functions", "fuzzable"])
        for r in report["files"]:
            w.writerow(
                [r["source_id"], r["group"], r["loc"], r["nloc"], r["token_count"], r["cc"], r["functions"], int(r["fuzzable"])]
            )
    written.append(files_csv)

    summary_csv = out_base.with_suffix(".summary.csv")
    with open(summary_csv, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["metric", "min", "avg", "stddev", "max"])
        for label, _ in _SUMMARY_ROWS:
            s = report["summary"][label]
            w.writerow([label, s["min"], f"{s['avg']:.1f}", f"{s['stddev']:.1f}", s["max"]])
    written.append(summary_csv)

    json_path = out_base.with_suffix(".json")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    written.append(json_path)
    return written

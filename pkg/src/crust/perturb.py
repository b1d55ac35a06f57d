"""Behavior-preserving C code perturbations.

Every perturbation is a named generator over the lossless token stream.
Transformations that cannot be applied safely at a given site skip that site
rather than risk changing behavior; a perturbation with no applicable site
returns the unit unchanged with a no-op note. Model-assisted perturbations
treat the model's output as untrusted: cheap structural validation happens
here, semantic validation is the differential self-check.

Levels group perturbations by what they touch:
  1 comments and formatting   4 function structure
  2 identifiers               5 equivalent statements
  3 declarations              6 decision logic
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from .clex import KEYWORDS, Tok, lex
from .corpus import (
    _QUALIFIERS,
    _SCALAR_SPELLINGS,
    _TYPE_BUILDERS,
    _scalar_for,
    scan_file,
)
from .errors import ConfigError

LEVEL_NAMES = {
    1: "comments and formatting",
    2: "identifiers",
    3: "declarations",
    4: "function structure",
    5: "equivalent statements",
    6: "decision logic",
}


@dataclass(frozen=True)
class PerturbationSpec:
    perturbation_id: str
    level: int
    mode: str  # "deterministic" | "stochastic"
    needs_model: bool
    description: str


@dataclass
class PerturbedUnit:
    source_id: str
    perturbation_id: str
    seed: int | None
    text: str
    identity: bool
    notes: list[str] = field(default_factory=list)


def default_seed(source_id: str, perturbation_id: str, run_index: int) -> int:
    """Stable cross-platform seed for one experiment cell."""
    h = hashlib.sha256(f"{source_id}\x00{perturbation_id}\x00{run_index}".encode()).digest()
    return int.from_bytes(h[:8], "big")


def experiment_kind(spec: PerturbationSpec) -> str:
    """Grouping used in error tables: identity, deterministic, or stochastic."""
    if spec.perturbation_id == "identity":
        return "identity"
    return spec.mode


# ---------------------------------------------------------------------------
# shared token helpers

def _code_view(text: str):
    toks = lex(text)
    code = [i for i, t in enumerate(toks) if t.kind in (Tok.IDENT, Tok.NUMBER, Tok.STRING, Tok.CHAR, Tok.PUNCT)]
    ctexts = [toks[i].text for i in code]
    ckinds = [toks[i].kind for i in code]
    return toks, code, ctexts, ckinds


def _off(toks, code, ci: int) -> int:
    return toks[code[ci]].offset


def _end(toks, code, ci: int) -> int:
    t = toks[code[ci]]
    return t.offset + len(t.text)


def _match(ctexts: list[str], i: int, open_t: str, close_t: str) -> int:
    depth = 0
    for j in range(i, len(ctexts)):
        if ctexts[j] == open_t:
            depth += 1
        elif ctexts[j] == close_t:
            depth -= 1
            if depth == 0:
                return j
    return len(ctexts)


def _apply_edits(text: str, edits: list[tuple[int, int, str]]) -> str:
    """Apply (start, end, replacement) byte edits; inputs must not overlap."""
    for s, e, r in sorted(edits, key=lambda x: x[0], reverse=True):
        text = text[:s] + r + text[e:]
    return text


def _drop_overlapping(edits: list[tuple[int, int, str]]) -> list[tuple[int, int, str]]:
    """Keep the earliest-starting of any overlapping edits (outermost wins)."""
    out: list[tuple[int, int, str]] = []
    last_end = -1
    for e in sorted(edits, key=lambda x: (x[0], -x[1])):
        if e[0] >= last_end:
            out.append(e)
            last_end = max(last_end, e[1])
    return out


def _preproc_words(toks) -> set[str]:
    words: set[str] = set()
    for t in toks:
        if t.kind == Tok.PREPROC:
            words.update(re.findall(r"[A-Za-z_]\w*", t.text))
    return words


def _all_idents(ctexts, ckinds) -> set[str]:
    return {t for t, k in zip(ctexts, ckinds) if k == Tok.IDENT}


def _statement_end(ctexts: list[str], i: int) -> int:
    """Index just past the statement starting at code index i. Best effort."""
    n = len(ctexts)
    if i >= n:
        return n
    t = ctexts[i]
    if t == "{":
        return _match(ctexts, i, "{", "}") + 1
    if t in ("if", "for", "while", "switch"):
        j = i + 1
        if j < n and ctexts[j] == "(":
            j = _match(ctexts, j, "(", ")") + 1
        j = _statement_end(ctexts, j)
        if t == "if" and j < n and ctexts[j] == "else":
            j = _statement_end(ctexts, j + 1)
        if t == "while":
            pass
        return j
    if t == "do":
        j = _statement_end(ctexts, i + 1)
        # while ( ... ) ;
        if j < n and ctexts[j] == "while":
            j += 1
            if j < n and ctexts[j] == "(":
                j = _match(ctexts, j, "(", ")") + 1
            if j < n and ctexts[j] == ";":
                j += 1
        return j
    depth = 0
    j = i
    while j < n:
        c = ctexts[j]
        if c in "([{":
            depth += 1
        elif c in ")]}":
            if depth == 0:
                return j  # ran into enclosing close: malformed, stop here
            depth -= 1
        elif c == ";" and depth == 0:
            return j + 1
        j += 1
    return n


# ---------------------------------------------------------------------------
# declared-identifier collection (for renaming perturbations)

def _param_names(param_tokens) -> list[str]:
    texts = [t.text for t in param_tokens]
    kinds = [t.kind for t in param_tokens]
    names = []
    for j, t in enumerate(texts):
        if kinds[j] != Tok.IDENT or t in KEYWORDS:
            continue
        nxt = texts[j + 1] if j + 1 < len(texts) else ")"
        if nxt in (",", ")", "[") or j + 1 == len(texts):
            names.append(t)
    return names


def _local_names(ctexts, ckinds, a: int, b: int) -> list[str]:
    """Identifiers declared inside a body slice. Misses are safe (no rename)."""
    names: list[str] = []
    i = a
    stmt_start = True
    while i < b:
        t = ctexts[i]
        if stmt_start and (t in _QUALIFIERS or t in _SCALAR_SPELLINGS or t in _TYPE_BUILDERS):
            j = i
            words = []
            while j < b and (ctexts[j] in _QUALIFIERS or ctexts[j] in _SCALAR_SPELLINGS or ctexts[j] in _TYPE_BUILDERS):
                words.append(ctexts[j])
                j += 1
            if _scalar_for(words) is not None:
                while True:
                    while j < b and ctexts[j] == "*":
                        j += 1
                    if (
                        j < b
                        and ckinds[j] == Tok.IDENT
                        and ctexts[j] not in KEYWORDS
                        and (j + 1 >= b or ctexts[j + 1] != "(")
                    ):
                        names.append(ctexts[j])
                        j += 1
                        depth = 0
                        while j < b and not (depth == 0 and ctexts[j] in (",", ";")):
                            if ctexts[j] in "([{":
                                depth += 1
                            elif ctexts[j] in ")]}":
                                if depth == 0:
                                    break
                                depth -= 1
                            j += 1
                        if j < b and ctexts[j] == ",":
                            j += 1
                            continue
                    break
            i = j if j > i else i + 1
            stmt_start = False
            continue
        stmt_start = t in (";", "{", "}") or (t == "(" and i > a and ctexts[i - 1] == "for")
        i += 1
    return names


def declared_identifiers(text: str) -> list[str]:
    """Names declared in the file, in first-seen order: functions, params,
    globals, locals. `main` is never included."""
    shape = scan_file(text)
    ctexts = [shape.tokens[i].text for i in shape.code]
    ckinds = [shape.tokens[i].kind for i in shape.code]
    seen: list[str] = []

    def add(name: str) -> None:
        if name and name != "main" and name not in KEYWORDS and name not in seen:
            seen.append(name)

    for g in shape.globals:
        add(g.name)
    for fn in shape.functions:
        add(fn.name)
        for p in _param_names(fn.param_tokens):
            add(p)
        for loc in _local_names(ctexts, ckinds, *fn.body_slice):
            add(loc)
    return seen


def _apply_rename(text: str, mapping: dict[str, str]) -> str:
    """Rename identifier tokens; skips struct-member positions and never
    touches strings, comments, or preprocessor lines."""
    if not mapping:
        return text
    toks, code, ctexts, ckinds = _code_view(text)
    edits = []
    for ci, t in enumerate(ctexts):
        if ckinds[ci] != Tok.IDENT or t not in mapping:
            continue
        if ci > 0 and ctexts[ci - 1] in (".", "->"):
            continue
        edits.append((_off(toks, code, ci), _end(toks, code, ci), mapping[t]))
    return _apply_edits(text, edits)


def _safe_new_name(candidate: str, taken: set[str]) -> str | None:
    candidate = re.sub(r"\W", "", candidate)
    if not candidate:
        return None
    if candidate[0].isdigit():
        candidate = "v" + candidate
    if candidate in KEYWORDS or candidate in taken:
        return None
    return candidate


def _build_rename(
    text: str, rename_fn, rng: random.Random | None = None, subset_prob: float = 1.0
) -> tuple[dict[str, str], list[str]]:
    toks, code, ctexts, ckinds = _code_view(text)
    protected = _preproc_words(toks)
    taken = _all_idents(ctexts, ckinds) | set(KEYWORDS)
    mapping: dict[str, str] = {}
    notes: list[str] = []
    for name in declared_identifiers(text):
        if name in protected:
            notes.append(f"skip {name}: referenced by a preprocessor directive")
            continue
        if rng is not None and subset_prob < 1.0 and rng.random() > subset_prob:
            continue
        new = rename_fn(name)
        if new is None or new == name:
            continue
        new = _safe_new_name(new, taken | set(mapping.values()))
        if new is None or new == name:
            notes.append(f"skip {name}: replacement collides or is invalid")
            continue
        mapping[name] = new
    return mapping, notes


# ---------------------------------------------------------------------------
# level 1: comments and formatting

def _comment_spans(toks) -> list[int]:
    return [i for i, t in enumerate(toks) if t.kind in (Tok.LINE_COMMENT, Tok.BLOCK_COMMENT)]


def _p_comment_removal(text, rng, model):
    toks = lex(text)
    edits = []
    for i in _comment_spans(toks):
        t = toks[i]
        repl = " " if t.kind == Tok.BLOCK_COMMENT else ""
        edits.append((t.offset, t.offset + len(t.text), repl))
    if not edits:
        return text, ["no-op: no comments to remove"]
    return _apply_edits(text, edits), []


def _comment_inner(tok) -> tuple[str, str, str]:
    if tok.kind == Tok.LINE_COMMENT:
        return "//", tok.text[2:], ""
    body = tok.text[2:-2] if tok.text.endswith("*/") else tok.text[2:]
    return "/*", body, "*/" if tok.text.endswith("*/") else ""


def _p_comment_typos(text, rng, model):
    toks = lex(text)
    edits = []
    for i in _comment_spans(toks):
        t = toks[i]
        head, body, tail = _comment_inner(t)
        letters = [j for j, ch in enumerate(body) if ch.isalpha()]
        if len(letters) < 4:
            continue
        chars = list(body)
        for _ in range(max(1, len(letters) // 12)):
            j = rng.choice(letters[:-1])
            k = j + 1
            if k < len(chars) and chars[k].isalpha():
                chars[j], chars[k] = chars[k], chars[j]
            else:
                chars[j] = ""
        new_body = "".join(chars)
        if new_body != body:
            edits.append((t.offset, t.offset + len(t.text), head + new_body + tail))
    if not edits:
        return text, ["no-op: no comments eligible for typos"]
    return _apply_edits(text, edits), []


COMMENT_TO_DE_PROMPT = (
    "Translate the following source code comment to German. "
    "Reply with only the translated comment text.\n\n"
)
COMMENT_TO_EN_PROMPT = (
    "Translate the following source code comment to English. "
    "Reply with only the translated comment text.\n\n"
)


def _ask(model, prompt: str) -> str:
    from .llm import Conversation

    conv = Conversation()
    conv.add_user(prompt)
    text, _ = model.complete(conv)
    return text.strip()


def _p_comment_roundtrip(text, rng, model):
    toks = lex(text)
    edits = []
    for i in _comment_spans(toks):
        t = toks[i]
        head, body, tail = _comment_inner(t)
        if not body.strip():
            continue
        german = _ask(model, COMMENT_TO_DE_PROMPT + body.strip())
        back = _ask(model, COMMENT_TO_EN_PROMPT + german)
        if not back or back == body.strip():
            continue
        if head == "//":
            back = back.replace("\n", " ")
        else:
            back = back.replace("*/", "* /")
        edits.append((t.offset, t.offset + len(t.text), f"{head} {back} {tail}".rstrip()))
    if not edits:
        return text, ["no-op: no comments to round-trip"]
    return _apply_edits(text, edits), []


COMMENT_INSERTION_PROMPT = (
    "Add a brief comment above each function in the following C code explaining "
    "what it does. Do not change the code itself. "
    "Reply with the complete C file in a ```c code fence.\n\n"
)


def _code_token_texts(text: str) -> list[str]:
    _, _, ctexts, _ = _code_view(text)
    return ctexts


def _p_comment_insertion(text, rng, model):
    from .llm import extract_code

    response = _ask(model, COMMENT_INSERTION_PROMPT + text)
    candidate, _ = extract_code(response)
    if not candidate.endswith("\n"):
        candidate += "\n"
    if _code_token_texts(candidate) != _code_token_texts(text):
        return text, ["no-op: model changed code tokens, output rejected"]
    return candidate, []


def _p_indent_reformat(text, rng, model):
    toks = lex(text)
    # tokens per line; skip lines that begin inside a multi-line token
    out_lines = []
    lines = text.split("\n")
    # map line -> first token starting on it, and brace/paren depth before it
    first_tok_on_line: dict[int, int] = {}
    inside_multiline: set[int] = set()
    for idx, t in enumerate(toks):
        span = t.text.count("\n")
        if span and t.kind != Tok.NEWLINE:
            for extra in range(1, span + 1):
                inside_multiline.add(t.line + extra)
        if t.kind in (Tok.WS, Tok.NEWLINE):
            continue
        first_tok_on_line.setdefault(t.line, idx)
    depth = 0
    paren = 0
    depth_at_line: dict[int, tuple[int, int, str]] = {}
    for idx, t in enumerate(toks):
        if t.kind in (Tok.WS, Tok.NEWLINE):
            continue
        if first_tok_on_line.get(t.line) == idx:
            depth_at_line[t.line] = (depth, paren, t.text if t.kind != Tok.PREPROC else "#")
        if t.kind == Tok.PUNCT:
            if t.text == "{":
                depth += 1
            elif t.text == "}":
                depth = max(0, depth - 1)
            elif t.text == "(":
                paren += 1
            elif t.text == ")":
                paren = max(0, paren - 1)
    for ln, raw in enumerate(lines, start=1):
        if ln in inside_multiline or ln not in depth_at_line:
            out_lines.append(raw)
            continue
        d, p, first = depth_at_line[ln]
        if first == "#":
            indent = 0
        else:
            d = max(0, d - 1) if first == "}" else d
            indent = 4 * d + (4 if p > 0 else 0)
        out_lines.append(" " * indent + raw.lstrip(" \t"))
    new = "\n".join(out_lines)
    if new == text:
        return text, ["no-op: indentation already normalized"]
    return new, []


# ---------------------------------------------------------------------------
# level 2: identifiers

def _p_identifier_typos(text, rng, model):
    def typo(name: str) -> str | None:
        if len(name) < 3:
            return None
        ops = ["double", "swap", "drop"]
        op = rng.choice(ops)
        pos = rng.randrange(len(name) - 1)
        if op == "double":
            return name[: pos + 1] + name[pos] + name[pos + 1 :]
        if op == "swap" and name[pos] != name[pos + 1]:
            return name[:pos] + name[pos + 1] + name[pos] + name[pos + 2 :]
        return name[:pos] + name[pos + 1 :]

    mapping, notes = _build_rename(text, typo, rng=rng, subset_prob=0.6)
    if not mapping:
        return text, notes + ["no-op: no identifiers eligible for typos"]
    return _apply_rename(text, mapping), notes


_SNAKE_RE = re.compile(r"^[a-z][a-z0-9]*(_[a-z0-9]+)+$")
_CAMEL_RE = re.compile(r"^[a-z][a-z0-9]*([A-Z][a-z0-9]*)+$")


def _snake_to_camel(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(w.capitalize() for w in rest if w)


def _camel_to_snake(name: str) -> str:
    return re.sub(r"(?<=[a-z0-9])([A-Z])", r"_\1", name).lower()


def _p_naming_convention(text, rng, model):
    def flip(name: str) -> str | None:
        if _SNAKE_RE.match(name):
            return _snake_to_camel(name)
        if _CAMEL_RE.match(name):
            return _camel_to_snake(name)
        return None

    mapping, notes = _build_rename(text, flip)
    if not mapping:
        return text, notes + ["no-op: no multi-word identifiers to restyle"]
    return _apply_rename(text, mapping), notes


def _short_name_stream():
    alphabet = "abcdefghijklmnopqrstuvwxyz"
    for ch in alphabet:
        yield ch
    for a in alphabet:
        for b in alphabet:
            yield a + b


def _p_short_identifiers(text, rng, model):
    toks, code, ctexts, ckinds = _code_view(text)
    taken = _all_idents(ctexts, ckinds) | set(KEYWORDS) | _preproc_words(toks)
    stream = _short_name_stream()
    mapping: dict[str, str] = {}
    notes: list[str] = []
    protected = _preproc_words(toks)
    for name in declared_identifiers(text):
        if name in protected:
            notes.append(f"skip {name}: referenced by a preprocessor directive")
            continue
        if len(name) <= 2:
            continue
        for cand in stream:
            if cand not in taken and cand not in mapping.values():
                mapping[name] = cand
                break
    if not mapping:
        return text, notes + ["no-op: no identifiers to shorten"]
    return _apply_rename(text, mapping), notes


IDENT_TO_DE_PROMPT = (
    "Translate the following words from a source code identifier to German. "
    "Reply with only the translated words separated by spaces.\n\n"
)
IDENT_TO_EN_PROMPT = (
    "Translate the following words from a source code identifier to English. "
    "Reply with only the translated words separated by spaces.\n\n"
)


def _ident_words(name: str) -> list[str]:
    if "_" in name:
        return [w for w in name.split("_") if w]
    return [w for w in re.split(r"(?<=[a-z0-9])(?=[A-Z])", name) if w]


def _p_identifier_roundtrip(text, rng, model):
    def roundtrip(name: str) -> str | None:
        words = _ident_words(name)
        if not words:
            return None
        german = _ask(model, IDENT_TO_DE_PROMPT + " ".join(words)).split()
        if not german:
            return None
        back = _ask(model, IDENT_TO_EN_PROMPT + " ".join(german)).split()
        if not back:
            return None
        back = [re.sub(r"\W", "", w).lower() for w in back if re.sub(r"\W", "", w)]
        if not back:
            return None
        if "_" in name or len(_ident_words(name)) == 1:
            return "_".join(back)
        return back[0] + "".join(w.capitalize() for w in back[1:])

    mapping, notes = _build_rename(text, roundtrip)
    if not mapping:
        return text, notes + ["no-op: round-trip produced no usable renames"]
    return _apply_rename(text, mapping), notes


IDENT_IMPROVE_PROMPT = (
    "Suggest clearer, more descriptive names for these identifiers from a C "
    "file. Reply with a JSON object mapping each old name to a new name, and "
    "nothing else.\n\nIdentifiers: {names}\n\nCode:\n{code}"
)


def _p_identifier_improve(text, rng, model):
    names = declared_identifiers(text)
    if not names:
        return text, ["no-op: nothing to rename"]
    response = _ask(model, IDENT_IMPROVE_PROMPT.format(names=", ".join(names), code=text))
    m = re.search(r"\{.*\}", response, re.DOTALL)
    if not m:
        return text, ["no-op: model reply had no JSON object"]
    try:
        raw_map = json.loads(m.group(0))
    except ValueError:
        return text, ["no-op: model reply had invalid JSON"]
    toks, code, ctexts, ckinds = _code_view(text)
    taken = _all_idents(ctexts, ckinds) | set(KEYWORDS)
    protected = _preproc_words(toks)
    mapping: dict[str, str] = {}
    notes: list[str] = []
    for old, new in raw_map.items():
        if old not in names or old in protected:
            continue
        safe = _safe_new_name(str(new), taken | set(mapping.values()))
        if safe and safe != old:
            mapping[old] = safe
    if not mapping:
        return text, notes + ["no-op: no usable renames in model reply"]
    return _apply_rename(text, mapping), notes


# ---------------------------------------------------------------------------
# level 3: declarations

def _top_level_insertion_points(text: str) -> list[int]:
    """Byte offsets at the start of each top-level function definition line."""
    shape = scan_file(text)
    points = []
    for fn in shape.functions:
        first_code = shape.code[0]
        # offset of the line containing the first token of the return type is
        # hard to recover from FnDef; use the body opening brace's statement
        # line start instead: walk back from the '{' token to the previous
        # newline boundary of the name token.
        pass
    # simpler and just as safe: insert before lines that start a function
    # definition, identified by re-scanning top-level '{' openers
    toks = lex(text)
    offsets = []
    for fn in shape.functions:
        open_tok = toks[shape.code[fn.body_slice[0]]]
        line_start = text.rfind("\n", 0, open_tok.offset)
        # walk further back to the start of the signature line
        sig_tok = None
        for ci in range(fn.body_slice[0] - 1, -1, -1):
            t = toks[shape.code[ci]]
            if t.text == fn.name:
                sig_tok = t
                break
            if t.text in (";", "}"):
                break
        anchor = sig_tok.offset if sig_tok else open_tok.offset
        line_start = text.rfind("\n", 0, anchor) + 1
        offsets.append(line_start)
    return sorted(set(offsets))


def _p_constant_insertion(text, rng, model):
    points = _top_level_insertion_points(text)
    if not points:
        return text, ["no-op: no top-level functions to anchor insertions"]
    toks, code, ctexts, ckinds = _code_view(text)
    taken = _all_idents(ctexts, ckinds) | _preproc_words(toks)
    count = rng.randint(1, min(3, len(points)))
    chosen = rng.sample(points, count)
    edits = []
    for idx, offset in enumerate(sorted(chosen)):
        name = f"dfk_{rng.randrange(1000)}"
        while name in taken:
            name = f"dfk_{rng.randrange(100000)}"
        taken.add(name)
        value = rng.randint(-9999, 9999)
        edits.append((offset, offset, f"static const int {name} = {value};\n"))
    return _apply_edits(text, edits), []


_DEAD_TEMPLATES = [
    "if (0) { ; } ",
    "{ int dfu_{n} = {v}; (void)dfu_{n}; } ",
]


def _block_openers(ctexts: list[str]) -> list[int]:
    """Code indices of '{' that open statement blocks (not initializers,
    aggregates, or switch bodies)."""
    out = []
    fn_depth = 0
    for i, t in enumerate(ctexts):
        if t == "{":
            prev = ctexts[i - 1] if i > 0 else ""
            if prev == ")":
                # find the keyword owning this paren group
                open_idx = None
                depth = 0
                for j in range(i - 1, -1, -1):
                    if ctexts[j] == ")":
                        depth += 1
                    elif ctexts[j] == "(":
                        depth -= 1
                        if depth == 0:
                            open_idx = j
                            break
                owner = ctexts[open_idx - 1] if open_idx and open_idx > 0 else ""
                if owner == "switch":
                    continue
                out.append(i)
            elif prev in ("{", "}", ";", "else", "do"):
                out.append(i)
    return out


def _function_body_ranges(text: str) -> list[tuple[int, int]]:
    shape = scan_file(text)
    return [fn.body_slice for fn in shape.functions]


def _p_dead_code_insertion(text, rng, model):
    toks, code, ctexts, ckinds = _code_view(text)
    bodies = _function_body_ranges(text)
    openers = [
        i
        for i in _block_openers(ctexts)
        if any(a <= i < b for a, b in bodies)
    ]
    if not openers:
        return text, ["no-op: no statement blocks to extend"]
    taken = _all_idents(ctexts, ckinds)
    count = rng.randint(1, min(2, len(openers)))
    chosen = rng.sample(openers, count)
    edits = []
    for ci in sorted(chosen):
        template = rng.choice(_DEAD_TEMPLATES)
        n = rng.randrange(1000)
        name = f"dfu_{n}"
        while name in taken:
            n = rng.randrange(100000)
            name = f"dfu_{n}"
        taken.add(name)
        snippet = template.replace("{n}", str(n)).replace("{v}", str(rng.randint(-99, 99)))
        pos = _end(toks, code, ci)
        edits.append((pos, pos, " " + snippet))
    return _apply_edits(text, edits), []


# names parenthesized so the declaration survives libcs that implement the
# function as a function-like macro (glibc's isdigit, for one)
_HEADER_DECLS = {
    "stdio.h": "extern int (puts)(const char *s);",
    "stdlib.h": "extern void *(malloc)(size_t size);",
    "string.h": "extern size_t (strlen)(const char *s);",
    "math.h": "extern double (fabs)(double x);",
    "ctype.h": "extern int (isdigit)(int c);",
}

_INCLUDE_RE = re.compile(r'#\s*include\s*[<"]([^>"]+)[>"]')


def _p_include_decl_insertion(text, rng, model):
    toks = lex(text)
    last_include_end = None
    headers = []
    for t in toks:
        if t.kind == Tok.PREPROC:
            m = _INCLUDE_RE.match(t.text)
            if m:
                last_include_end = t.offset + len(t.text)
                headers.append(m.group(1))
    decls = [_HEADER_DECLS[h] for h in headers if h in _HEADER_DECLS]
    if not decls or last_include_end is None:
        return text, ["no-op: no includes with known redeclarations"]
    insertion = "\n" + "\n".join(decls)
    return text[:last_include_end] + insertion + text[last_include_end:], []


# ---------------------------------------------------------------------------
# level 4: function structure

CODE_EXTRACT_PROMPT = (
    "Refactor the following C code by extracting one small block of "
    "statements into a new helper function. Keep behavior identical and keep "
    "all existing function names and signatures unchanged. "
    "Reply with the complete C file in a ```c code fence.\n\n"
)


def _p_code_extraction(text, rng, model):
    from .llm import extract_code

    response = _ask(model, CODE_EXTRACT_PROMPT + text)
    candidate, _ = extract_code(response)
    if not candidate.endswith("\n"):
        candidate += "\n"
    old_names = {fn.name for fn in scan_file(text).functions}
    new_names = {fn.name for fn in scan_file(candidate).functions}
    if not old_names <= new_names:
        return text, ["no-op: model dropped a function, output rejected"]
    return candidate, []


def _split_args(ctexts, a, b) -> list[tuple[int, int]]:
    """Split code-index range [a, b) at top-level commas."""
    spans = []
    depth = 0
    first = a
    for j in range(a, b):
        t = ctexts[j]
        if t in "([{":
            depth += 1
        elif t in ")]}":
            depth -= 1
        elif t == "," and depth == 0:
            spans.append((first, j))
            first = j + 1
    spans.append((first, b))
    return spans


def _reorder_calls(text: str, fn_names: set[str]) -> str:
    """Reverse argument order at every call (and prototype) of fn_names.
    Recurses into argument slices so nested calls are handled."""
    toks, code, ctexts, ckinds = _code_view(text)
    pieces: list[str] = []
    consumed = 0
    ci = 0
    n = len(ctexts)
    while ci < n:
        t = ctexts[ci]
        if (
            ckinds[ci] == Tok.IDENT
            and t in fn_names
            and ci + 1 < n
            and ctexts[ci + 1] == "("
        ):
            close = _match(ctexts, ci + 1, "(", ")")
            if close >= n:
                break
            arg_spans = _split_args(ctexts, ci + 2, close)
            if len(arg_spans) >= 2:
                start = _off(toks, code, ci)
                pieces.append(text[consumed:start])
                args = []
                for a, b in arg_spans:
                    if a >= b:
                        args.append("")
                    else:
                        arg_text = text[_off(toks, code, a) : _end(toks, code, b - 1)]
                        args.append(_reorder_calls(arg_text, fn_names))
                pieces.append(t + "(" + ", ".join(reversed(args)) + ")")
                consumed = _end(toks, code, close)
                ci = close + 1
                continue
        ci += 1
    pieces.append(text[consumed:])
    return "".join(pieces)


def _p_signature_reorder(text, rng, model):
    shape = scan_file(text)
    toks, code, ctexts, ckinds = _code_view(text)
    protected = _preproc_words(toks)
    eligible: set[str] = set()
    notes: list[str] = []
    for fn in shape.functions:
        if fn.name == "main" or fn.name in protected:
            continue
        spans = _split_args([t.text for t in fn.param_tokens], 0, len(fn.param_tokens))
        if len(spans) < 2:
            continue
        if any(t.text == "..." for t in fn.param_tokens):
            notes.append(f"skip {fn.name}: variadic")
            continue
        used_without_call = False
        for ci, t in enumerate(ctexts):
            if ckinds[ci] == Tok.IDENT and t == fn.name:
                nxt = ctexts[ci + 1] if ci + 1 < len(ctexts) else ""
                prev = ctexts[ci - 1] if ci > 0 else ""
                if nxt != "(" or prev == "&":
                    used_without_call = True
                    break
        if used_without_call:
            notes.append(f"skip {fn.name}: address taken or used without a call")
            continue
        eligible.add(fn.name)
    if not eligible:
        return text, notes + ["no-op: no functions with reorderable signatures"]
    return _reorder_calls(text, eligible), notes


# ---------------------------------------------------------------------------
# level 5: equivalent statements

def _loop_positions(ctexts: list[str]) -> list[int]:
    out = []
    for i, t in enumerate(ctexts):
        if t in ("for", "while"):
            if t == "while" and i > 0 and ctexts[i - 1] == "}":
                # could be a do-while tail; check by scanning back is fragile,
                # so verify the while is followed by '(' cond ')' and then '{'
                # or statement rather than ';'
                close = _match(ctexts, i + 1, "(", ")") if i + 1 < len(ctexts) and ctexts[i + 1] == "(" else len(ctexts)
                if close + 1 < len(ctexts) and ctexts[close + 1] == ";":
                    continue
            if i + 1 < len(ctexts) and ctexts[i + 1] == "(":
                out.append(i)
    return out


def _p_for_while_swap(text, rng, model):
    toks, code, ctexts, ckinds = _code_view(text)
    edits: list[tuple[int, int, str]] = []
    notes: list[str] = []
    n = len(ctexts)
    for i in _loop_positions(ctexts):
        kw = ctexts[i]
        close = _match(ctexts, i + 1, "(", ")")
        if close >= n:
            continue
        if kw == "while":
            cond = text[_off(toks, code, i + 2) : _end(toks, code, close - 1)] if close > i + 2 else "1"
            edits.append((_off(toks, code, i), _end(toks, code, close), f"for (; {cond}; )"))
            continue
        # for (init; cond; step) body
        semis = [j for j in range(i + 2, close) if ctexts[j] == ";" and _paren_depth(ctexts, i + 1, j) == 1]
        if len(semis) != 2:
            notes.append("skip for: unusual header")
            continue
        s1, s2 = semis
        init = text[_off(toks, code, i + 2) : _end(toks, code, s1 - 1)] if s1 > i + 2 else ""
        cond = text[_off(toks, code, s1 + 1) : _end(toks, code, s2 - 1)] if s2 > s1 + 1 else "1"
        step = text[_off(toks, code, s2 + 1) : _end(toks, code, close - 1)] if close > s2 + 1 else ""
        body_start = close + 1
        if body_start >= n:
            continue
        body_end = _statement_end(ctexts, body_start)
        if "continue" in ctexts[body_start:body_end] or "goto" in ctexts[body_start:body_end]:
            notes.append("skip for: body transfers control")
            continue
        step_stmt = f"{step}; " if step else ""
        if ctexts[body_start] == "{":
            # keep the body in place: rewrite header and closing brace
            head = f"{{ {init}; while ({cond}) {{" if init else f"{{ while ({cond}) {{"
            edits.append((_off(toks, code, i), _end(toks, code, body_start), head))
            last = body_end - 1
            edits.append((_off(toks, code, last), _end(toks, code, last), f"{step_stmt}}} }}"))
        else:
            body_text = text[_off(toks, code, body_start) : _end(toks, code, body_end - 1)]
            head = f"{{ {init}; while ({cond}) {{ " if init else f"{{ while ({cond}) {{ "
            repl = head + body_text + f" {step_stmt}}} }}"
            edits.append((_off(toks, code, i), _end(toks, code, body_end - 1), repl))
    edits = _drop_overlapping(edits)
    if not edits:
        return text, notes + ["no-op: no loops to swap"]
    return _apply_edits(text, edits), notes


def _paren_depth(ctexts, start, pos) -> int:
    depth = 0
    for j in range(start, pos):
        if ctexts[j] in "([":
            depth += 1
        elif ctexts[j] in ")]":
            depth -= 1
    return depth


def _p_condition_swap(text, rng, model):
    toks, code, ctexts, ckinds = _code_view(text)
    n = len(ctexts)
    edits: list[tuple[int, int, str]] = []
    for i, t in enumerate(ctexts):
        if t != "if" or i + 1 >= n or ctexts[i + 1] != "(":
            continue
        if i > 0 and ctexts[i - 1] == "else":
            continue  # handled as part of the outer chain or stands alone
        close = _match(ctexts, i + 1, "(", ")")
        if close >= n:
            continue
        then_start = close + 1
        then_end = _statement_end(ctexts, then_start)
        if then_end >= n or then_end <= then_start or ctexts[then_end] != "else":
            continue
        else_start = then_end + 1
        else_end = _statement_end(ctexts, else_start)
        if else_end <= else_start:
            continue
        if ctexts[then_start] in ("case", "default") or ctexts[else_start] in ("case", "default"):
            continue
        cond = text[_off(toks, code, i + 2) : _end(toks, code, close - 1)] if close > i + 2 else "1"
        then_text = text[_off(toks, code, then_start) : _end(toks, code, then_end - 1)]
        else_text = text[_off(toks, code, else_start) : _end(toks, code, else_end - 1)]
        repl = f"if (!({cond})) {{ {else_text} }} else {{ {then_text} }}"
        edits.append((_off(toks, code, i), _end(toks, code, else_end - 1), repl))
    edits = _drop_overlapping(edits)
    if not edits:
        return text, ["no-op: no if/else statements to swap"]
    return _apply_edits(text, edits), []


# ---------------------------------------------------------------------------
# level 6: decision logic

_IMPURE_TOKENS = frozenset(
    ["=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", "++", "--"]
)


def _condition_is_pure(ctexts, ckinds, a, b) -> bool:
    for j in range(a, b):
        if ctexts[j] in _IMPURE_TOKENS:
            return False
        if (
            ckinds[j] == Tok.IDENT
            and ctexts[j] not in KEYWORDS
            and j + 1 < b
            and ctexts[j + 1] == "("
        ):
            return False  # function call
    return True


def _p_condition_duplication(text, rng, model):
    toks, code, ctexts, ckinds = _code_view(text)
    n = len(ctexts)
    edits = []
    for i, t in enumerate(ctexts):
        if t != "if" or i + 1 >= n or ctexts[i + 1] != "(":
            continue
        close = _match(ctexts, i + 1, "(", ")")
        if close >= n or close <= i + 2:
            continue
        if not _condition_is_pure(ctexts, ckinds, i + 2, close):
            continue
        cond = text[_off(toks, code, i + 2) : _end(toks, code, close - 1)]
        edits.append((_off(toks, code, i + 2), _end(toks, code, close - 1), f"({cond}) && ({cond})"))
    edits = _drop_overlapping(edits)
    if not edits:
        return text, ["no-op: no side-effect-free if conditions"]
    return _apply_edits(text, edits), []


def _negate_operand(text_slice: str) -> str:
    s = text_slice.strip()
    if re.fullmatch(r"[A-Za-z_]\w*|\d[\w.]*", s):
        return "!" + s
    if s.startswith("!") and re.fullmatch(r"[A-Za-z_]\w*|\(.*\)", s[1:].strip()):
        return s[1:].strip()
    return f"!({s})"


def _p_de_morgan(text, rng, model):
    toks, code, ctexts, ckinds = _code_view(text)
    n = len(ctexts)
    edits = []
    for i, t in enumerate(ctexts):
        if t != "!" or i + 1 >= n or ctexts[i + 1] != "(":
            continue
        close = _match(ctexts, i + 1, "(", ")")
        if close >= n:
            continue
        inner_ops = [
            ctexts[j]
            for j in range(i + 2, close)
            if ctexts[j] in ("&&", "||") and _paren_depth(ctexts, i + 1, j) == 1
        ]
        if not inner_ops:
            continue
        split_op = "||" if "||" in inner_ops else "&&"
        new_op = "&&" if split_op == "||" else "||"
        spans = []
        depth = 0
        first = i + 2
        for j in range(i + 2, close):
            if ctexts[j] in "([":
                depth += 1
            elif ctexts[j] in ")]":
                depth -= 1
            elif ctexts[j] == split_op and depth == 0:
                spans.append((first, j))
                first = j + 1
        spans.append((first, close))
        parts = []
        for a, b in spans:
            if a >= b:
                parts = []
                break
            parts.append(_negate_operand(text[_off(toks, code, a) : _end(toks, code, b - 1)]))
        if not parts:
            continue
        joined = f" {new_op} ".join(parts)
        prev = ctexts[i - 1] if i > 0 else ""
        nxt = ctexts[close + 1] if close + 1 < n else ""
        if not (prev == "(" and nxt == ")"):
            joined = f"({joined})"
        edits.append((_off(toks, code, i), _end(toks, code, close), joined))
    edits = _drop_overlapping(edits)
    if not edits:
        return text, ["no-op: no negated conjunctions or disjunctions"]
    return _apply_edits(text, edits), []


# ---------------------------------------------------------------------------
# registry

def _p_identity(text, rng, model):
    return text, []


_DEFS: list[tuple[PerturbationSpec, object]] = [
    (PerturbationSpec("identity", 1, "deterministic", False, "unchanged input"), _p_identity),
    (PerturbationSpec("comment_roundtrip", 1, "deterministic", True, "round-trip translate comments through German"), _p_comment_roundtrip),
    (PerturbationSpec("comment_typos", 1, "stochastic", False, "introduce letter swaps and drops in comments"), _p_comment_typos),
    (PerturbationSpec("comment_removal", 1, "deterministic", False, "strip all comments"), _p_comment_removal),
    (PerturbationSpec("comment_insertion", 1, "deterministic", True, "model adds explanatory comments"), _p_comment_insertion),
    (PerturbationSpec("indent_reformat", 1, "deterministic", False, "re-indent by brace depth"), _p_indent_reformat),
    (PerturbationSpec("identifier_typos", 2, "stochastic", False, "consistent typo renames of declared identifiers"), _p_identifier_typos),
    (PerturbationSpec("naming_convention", 2, "deterministic", False, "flip snake_case and camelCase"), _p_naming_convention),
    (PerturbationSpec("short_identifiers", 2, "deterministic", False, "rename declared identifiers to a, b, c"), _p_short_identifiers),
    (PerturbationSpec("identifier_roundtrip", 2, "deterministic", True, "round-trip translate identifiers through German"), _p_identifier_roundtrip),
    (PerturbationSpec("identifier_improve", 2, "deterministic", True, "model suggests clearer identifier names"), _p_identifier_improve),
    (PerturbationSpec("constant_insertion", 3, "stochastic", False, "insert unused file-scope constants"), _p_constant_insertion),
    (PerturbationSpec("dead_code_insertion", 3, "stochastic", False, "insert unreachable or effect-free statements"), _p_dead_code_insertion),
    (PerturbationSpec("include_decl_insertion", 3, "deterministic", False, "redeclare functions from included headers"), _p_include_decl_insertion),
    (PerturbationSpec("code_extraction", 4, "deterministic", True, "model extracts a block into a helper function"), _p_code_extraction),
    (PerturbationSpec("signature_reorder", 4, "deterministic", False, "reverse parameter order, updating all calls"), _p_signature_reorder),
    (PerturbationSpec("for_while_swap", 5, "deterministic", False, "rewrite for loops as while loops and vice versa"), _p_for_while_swap),
    (PerturbationSpec("condition_swap", 5, "deterministic", False, "swap if/else branches under a negated condition"), _p_condition_swap),
    (PerturbationSpec("condition_duplication", 6, "deterministic", False, "duplicate pure if conditions with &&"), _p_condition_duplication),
    (PerturbationSpec("de_morgan", 6, "deterministic", False, "apply De Morgan's law to negated conditions"), _p_de_morgan),
]

_IMPLS = {spec.perturbation_id: fn for spec, fn in _DEFS}


def registry() -> dict[str, PerturbationSpec]:
    """All perturbations by id, insertion-ordered, Identity first."""
    return {spec.perturbation_id: spec for spec, _ in _DEFS}


def apply(
    perturbation_id: str,
    unit,
    seed: int | None = None,
    model=None,
) -> PerturbedUnit:
    """Apply one perturbation to a source unit (or raw text).

    Stochastic perturbations require a seed; model-assisted ones require a
    chat backend. Identical inputs yield identical outputs.
    """
    specs = registry()
    if perturbation_id not in specs:
        raise ConfigError(f"unknown perturbation: {perturbation_id!r}")
    spec = specs[perturbation_id]
    text = unit if isinstance(unit, str) else unit.text
    source_id = "<text>" if isinstance(unit, str) else unit.source_id
    if spec.mode == "stochastic" and seed is None:
        raise ConfigError(f"perturbation {perturbation_id} is stochastic and needs a seed")
    if spec.needs_model and model is None:
        raise ConfigError(f"perturbation {perturbation_id} needs a model backend")
    rng = random.Random(seed if seed is not None else 0)
    new_text, notes = _IMPLS[perturbation_id](text, rng, model)
    return PerturbedUnit(
        source_id=source_id,
        perturbation_id=perturbation_id,
        seed=seed,
        text=new_text,
        identity=(new_text == text),
        notes=notes,
    )


def sample_sets(
    specs: list[PerturbationSpec],
    set_size: int = 20,
    count: int = 10000,
    seed: int = 0,
) -> list[list[str]]:
    """Random perturbation sets, Identity always included, no duplicates
    within a set. Deterministic for a given seed."""
    ids = [s.perturbation_id for s in specs]
    if "identity" not in ids:
        raise ConfigError("sample_sets needs the identity perturbation in specs")
    others = [i for i in ids if i != "identity"]
    if set_size < 1 or set_size - 1 > len(others):
        raise ConfigError(
            f"set_size {set_size} out of range for {len(others)} non-identity perturbations"
        )
    rng = random.Random(seed)
    return [["identity"] + sorted(rng.sample(others, set_size - 1)) for _ in range(count)]


# ---------------------------------------------------------------------------
# corpus output

def write_perturbed_corpus(
    units: list,
    perturbation_id: str,
    seed: int,
    out_root: str | Path,
    corpus_name: str,
    model=None,
) -> Path:
    """Write one perturbed corpus directory plus its provenance manifest.

    Per-unit seeds derive from (source_id, perturbation_id, seed) so a corpus
    level seed reproduces every file. Layout mirrors the input corpus.
    """
    out_dir = Path(out_root) / f"{corpus_name}__{perturbation_id}__{seed}"
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for unit in units:
        unit_seed = default_seed(unit.source_id, perturbation_id, seed)
        p = apply(perturbation_id, unit, seed=unit_seed, model=model)
        target = out_dir / unit.source_id
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(p.text, encoding="utf-8")
        entries.append(
            {
                "source_id": unit.source_id,
                "seed": unit_seed,
                "identity": p.identity,
                "notes": p.notes,
            }
        )
    manifest = {
        "corpus": corpus_name,
        "perturbation_id": perturbation_id,
        "seed": seed,
        "files": entries,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return out_dir


# ---------------------------------------------------------------------------
# semantic self-check (C vs perturbed C differential fuzzing)

@dataclass
class SelfCheckReport:
    source_id: str
    perturbation_id: str
    status: str  # "equivalent" | "counterexample" | "skipped" | "error"
    counterexample: object | None = None
    notes: list[str] = field(default_factory=list)


def self_check(original, perturbed: PerturbedUnit, fuzz_config=None) -> SelfCheckReport:
    """Differentially fuzz the perturbed unit against its original.

    Byte-identical text short-circuits to equivalent. The fuzz budget in the
    config is split across the file's paired functions.
    """
    from .checkers import differential_self_check

    if perturbed.text == (original if isinstance(original, str) else original.text):
        return SelfCheckReport(
            perturbed.source_id, perturbed.perturbation_id, "equivalent",
            notes=["no-op perturbation, check skipped"],
        )
    return differential_self_check(original, perturbed, fuzz_config)

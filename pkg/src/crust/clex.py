"""Lossless tokenizer for C translation units.

The lexer never fails: malformed input degrades into coarse tokens, and the
concatenation of token texts always reproduces the input byte for byte. That
property is what lets code perturbations operate on the token stream and emit
compilable text without a full parser.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Tok(Enum):
    WS = "ws"
    NEWLINE = "newline"
    LINE_COMMENT = "line_comment"
    BLOCK_COMMENT = "block_comment"
    PREPROC = "preproc"
    IDENT = "ident"
    NUMBER = "number"
    STRING = "string"
    CHAR = "char"
    PUNCT = "punct"


@dataclass
class Token:
    kind: Tok
    text: str
    offset: int
    line: int


# C99/C11 keywords plus the common stdint/stdbool spellings the parser treats
# specially. Perturbations must never rename any of these.
KEYWORDS = frozenset(
    """auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile while
    _Bool _Complex _Imaginary _Static_assert _Alignas _Alignof _Atomic
    _Generic _Noreturn _Thread_local bool true false""".split()
)

# Longest match first.
_PUNCTS = [
    "<<=", ">>=", "...",
    "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "##",
    "{", "}", "(", ")", "[", "]", ";", ",", ".", "?", ":",
    "+", "-", "*", "/", "%", "<", ">", "=", "!", "&", "|", "^", "~", "#",
]

_IDENT_START = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_IDENT_CONT = _IDENT_START | frozenset("0123456789")
_DIGITS = frozenset("0123456789")


def _scan_string(text: str, i: int, quote: str) -> int:
    """Return the index just past a quoted literal starting at i."""
    n = len(text)
    j = i + 1
    while j < n:
        ch = text[j]
        if ch == "\\" and j + 1 < n:
            j += 2
            continue
        if ch == quote:
            return j + 1
        if ch == "\n":
            # Unterminated literal: stop at the newline so line structure survives.
            return j
        j += 1
    return n


def _scan_number(text: str, i: int) -> int:
    """Scan a pp-number: digits, hex, floats, suffixes, exponent signs."""
    n = len(text)
    j = i
    while j < n:
        ch = text[j]
        if ch in _IDENT_CONT or ch == ".":
            j += 1
        elif ch in "+-" and j > i and text[j - 1] in "eEpP":
            j += 1
        else:
            break
    return j


def lex(text: str) -> list[Token]:
    """Tokenize C source. Lossless: ``"".join(t.text for t in lex(s)) == s``."""
    tokens: list[Token] = []
    n = len(text)
    i = 0
    line = 1
    at_line_start = True

    def emit(kind: Tok, end: int) -> None:
        nonlocal i, line
        tokens.append(Token(kind, text[i:end], i, line))
        line += text.count("\n", i, end)
        i = end

    while i < n:
        ch = text[i]
        if ch == "\n":
            emit(Tok.NEWLINE, i + 1)
            at_line_start = True
            continue
        if ch in " \t\r\f\v":
            j = i + 1
            while j < n and text[j] in " \t\r\f\v":
                j += 1
            emit(Tok.WS, j)
            continue
        if ch == "/" and i + 1 < n and text[i + 1] == "/":
            j = text.find("\n", i)
            emit(Tok.LINE_COMMENT, n if j < 0 else j)
            at_line_start = False
            continue
        if ch == "/" and i + 1 < n and text[i + 1] == "*":
            j = text.find("*/", i + 2)
            emit(Tok.BLOCK_COMMENT, n if j < 0 else j + 2)
            continue
        if ch == "#" and at_line_start:
            # Whole directive, honoring backslash continuations. Comments inside
            # directives stay part of the directive token; rare and harmless.
            j = i
            while j < n:
                k = text.find("\n", j)
                if k < 0:
                    j = n
                    break
                back = k - 1
                while back >= 0 and text[back] in " \t\r":
                    back -= 1
                if back >= 0 and text[back] == "\\":
                    j = k + 1
                    continue
                j = k
                break
            emit(Tok.PREPROC, j)
            at_line_start = False
            continue
        at_line_start = False
        if ch in _IDENT_START:
            j = i + 1
            while j < n and text[j] in _IDENT_CONT:
                j += 1
            emit(Tok.IDENT, j)
            continue
        if ch in _DIGITS or (ch == "." and i + 1 < n and text[i + 1] in _DIGITS):
            emit(Tok.NUMBER, _scan_number(text, i))
            continue
        if ch == '"':
            emit(Tok.STRING, _scan_string(text, i, '"'))
            continue
        if ch == "'":
            emit(Tok.CHAR, _scan_string(text, i, "'"))
            continue
        for p in _PUNCTS:
            if text.startswith(p, i):
                emit(Tok.PUNCT, i + len(p))
                break
        else:
            emit(Tok.PUNCT, i + 1)

    return tokens


def unlex(tokens: list[Token]) -> str:
    return "".join(t.text for t in tokens)


def is_code(tok: Token) -> bool:
    """True for tokens that carry program text (not layout or comments)."""
    return tok.kind in (Tok.IDENT, Tok.NUMBER, Tok.STRING, Tok.CHAR, Tok.PUNCT)


def significant(tokens: list[Token]) -> list[int]:
    """Indices of code tokens, in order. Preprocessor lines are opaque."""
    return [i for i, t in enumerate(tokens) if is_code(t)]

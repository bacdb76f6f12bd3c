"""Lexical scanner for Java method source.

Comments and whitespace are consumed; every other character of the input
ends up in exactly one token, so ``"".join(t.text for t in tokens)`` equals
the source with comments and whitespace removed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class TokenKind(enum.Enum):
    IDENTIFIER = "identifier"
    KEYWORD = "keyword"
    NUMBER = "number-literal"
    STRING = "string-literal"
    CHAR = "char-literal"
    BOOLEAN = "boolean-literal"
    NULL = "null-literal"
    OPERATOR = "operator"
    SEPARATOR = "separator"


@dataclass(frozen=True)
class Token:
    """A lexical token.

    Attributes:
        kind: Token category.
        text: Exact source text of the token.
        span: ``(start, end)`` character offsets into the source, end exclusive.
    """

    kind: TokenKind
    text: str
    span: tuple[int, int]

    def __repr__(self) -> str:
        return f"Token({self.kind.value}, {self.text!r}, {self.span})"


class LexError(Exception):
    """Raised on an illegal character or an unterminated literal/comment."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"offset {offset}: {message}")
        self.offset = offset


KEYWORDS = frozenset(
    """abstract assert boolean break byte case catch char class const continue
    default do double else enum extends final finally float for goto if
    implements import instanceof int interface long native new package private
    protected public return short static strictfp super switch synchronized
    this throw throws transient try void volatile while""".split()
)

# Longest first so that greedy matching picks ">>>=" before ">>".
OPERATORS = sorted(
    """>>>= <<= >>= >>> ... -> :: ++ -- && || == != <= >= += -= *= /= &= |= ^= %=
    << >> = > < ! ~ ? : + - * / & | ^ %""".split(),
    key=len,
    reverse=True,
)
SEPARATORS = frozenset("(){}[];,.@")
# "..." and "::" are punctuation in the JLS; they are reported as separators.
_PUNCT_SEPARATORS = frozenset({"...", "::"})


def _is_ident_start(ch: str) -> bool:
    return ch.isalpha() or ch in "_$"


def _is_ident_part(ch: str) -> bool:
    return ch.isalnum() or ch in "_$"


def lex(source: str) -> list[Token]:
    """Split Java source text into tokens.

    Raises:
        LexError: On an unterminated string, char or block comment, or an
            illegal character.
    """
    return _Scanner(source).run()


class _Scanner:
    def __init__(self, source: str) -> None:
        self.src = source
        self.pos = 0
        self.tokens: list[Token] = []

    def run(self) -> list[Token]:
        src = self.src
        n = len(src)
        while self.pos < n:
            ch = src[self.pos]
            if ch.isspace():
                self.pos += 1
            elif src.startswith("//", self.pos):
                end = src.find("\n", self.pos)
                self.pos = n if end < 0 else end + 1
            elif src.startswith("/*", self.pos):
                end = src.find("*/", self.pos + 2)
                if end < 0:
                    raise LexError("unterminated block comment", self.pos)
                self.pos = end + 2
            elif _is_ident_start(ch):
                self._word()
            elif ch.isdigit() or (ch == "." and self.pos + 1 < n and src[self.pos + 1].isdigit()):
                self._number()
            elif src.startswith('"""', self.pos):
                self._text_block()
            elif ch == '"':
                self._quoted('"', TokenKind.STRING)
            elif ch == "'":
                self._quoted("'", TokenKind.CHAR)
            else:
                self._punct()
        return self.tokens

    def _emit(self, kind: TokenKind, start: int, end: int) -> None:
        self.tokens.append(Token(kind, self.src[start:end], (start, end)))
        self.pos = end

    def _word(self) -> None:
        start = end = self.pos
        while end < len(self.src) and _is_ident_part(self.src[end]):
            end += 1
        word = self.src[start:end]
        if word in ("true", "false"):
            kind = TokenKind.BOOLEAN
        elif word == "null":
            kind = TokenKind.NULL
        elif word in KEYWORDS:
            kind = TokenKind.KEYWORD
        else:
            kind = TokenKind.IDENTIFIER
        self._emit(kind, start, end)

    def _number(self) -> None:
        src, start = self.src, self.pos
        n = len(src)
        end = start
        if src.startswith(("0x", "0X"), start):
            end += 2
            while end < n and (src[end] in "0123456789abcdefABCDEF_." or src[end] in "pP"):
                if src[end] in "pP" and end + 1 < n and src[end + 1] in "+-":
                    end += 1
                end += 1
        elif src.startswith(("0b", "0B"), start):
            end += 2
            while end < n and src[end] in "01_":
                end += 1
        else:
            while end < n and (src[end].isdigit() or src[end] == "_"):
                end += 1
            if end < n and src[end] == "." and (end + 1 >= n or not _is_ident_start(src[end + 1])):
                end += 1
                while end < n and (src[end].isdigit() or src[end] == "_"):
                    end += 1
            if end < n and src[end] in "eE":
                end += 1
                if end < n and src[end] in "+-":
                    end += 1
                while end < n and src[end].isdigit():
                    end += 1
        if end < n and src[end] in "lLfFdD":
            end += 1
        if end < n and _is_ident_part(src[end]):
            raise LexError(f"malformed number literal {src[start:end + 1]!r}", start)
        self._emit(TokenKind.NUMBER, start, end)

    def _quoted(self, quote: str, kind: TokenKind) -> None:
        src, start = self.src, self.pos
        end = start + 1
        while True:
            if end >= len(src) or src[end] == "\n":
                raise LexError(f"unterminated {kind.value}", start)
            ch = src[end]
            if ch == "\\":
                end += 2
                continue
            end += 1
            if ch == quote:
                break
        self._emit(kind, start, end)

    def _text_block(self) -> None:
        start = self.pos
        end = start + 3
        while True:
            if end >= len(self.src):
                raise LexError("unterminated text block", start)
            if self.src[end] == "\\":
                end += 2
                continue
            if self.src.startswith('"""', end):
                end += 3
                break
            end += 1
        self._emit(TokenKind.STRING, start, end)

    def _punct(self) -> None:
        src, start = self.src, self.pos
        for op in OPERATORS:
            if src.startswith(op, start):
                kind = TokenKind.SEPARATOR if op in _PUNCT_SEPARATORS else TokenKind.OPERATOR
                self._emit(kind, start, start + len(op))
                return
        if src[start] in SEPARATORS:
            self._emit(TokenKind.SEPARATOR, start, start + 1)
            return
        raise LexError(f"illegal character {src[start]!r}", start)

"""Turn lexed Java tokens into the lowercase word sequence fed to the model."""

from __future__ import annotations

import re
from typing import Iterable, Sequence

from .lexer import Token, TokenKind

NUM_TAG = "<num_>"
STR_TAG = "<str_>"

_IDENT_RE = re.compile(r"^[^\W\d][\w$]*$|^\$[\w$]*$")


def _char_class(ch: str) -> str:
    if ch.isupper():
        return "U"
    if ch.islower():
        return "L"
    if ch.isdigit():
        return "D"
    return "O"


def split_identifier(name: str) -> list[str]:
    """Split an identifier into lowercase sub-words.

    Breaks on camel-case humps (``onDataChanged``), acronym boundaries
    (``HTTPServer`` -> ``http``, ``server``), underscores and letter/digit
    transitions. Characters that are neither letters nor digits (``$``)
    stay attached to the current word.

    >>> split_identifier("SegmentCopy")
    ['segment', 'copy']
    >>> split_identifier("MAX_VALUE")
    ['max', 'value']
    """
    parts: list[str] = []
    for chunk in name.split("_"):
        if not chunk:
            continue
        word = chunk[0]
        prev = _char_class(chunk[0])
        for i in range(1, len(chunk)):
            ch = chunk[i]
            cls = _char_class(ch)
            boundary = False
            if cls == "U" and prev in ("L", "D"):
                boundary = True
            elif cls == "L" and prev == "U" and len(word) > 1 and _char_class(word[-2]) == "U":
                # acronym followed by a capitalised word: move the last capital over
                parts.append(word[:-1])
                word = word[-1]
            elif cls == "D" and prev in ("U", "L"):
                boundary = True
            elif cls in ("U", "L") and prev == "D":
                boundary = True
            if boundary:
                parts.append(word)
                word = ""
            word += ch
            if cls != "O":
                prev = cls
        parts.append(word)
    return [p.lower() for p in parts if p] or [name.lower()]


def normalize_code_tokens(tokens: Sequence[Token]) -> list[str]:
    """Normalize lexer tokens: split identifiers, lowercase, abstract literals."""
    out: list[str] = []
    for tok in tokens:
        if tok.kind is TokenKind.IDENTIFIER:
            out.extend(split_identifier(tok.text))
        elif tok.kind is TokenKind.NUMBER:
            out.append(NUM_TAG)
        elif tok.kind in (TokenKind.STRING, TokenKind.CHAR):
            out.append(STR_TAG)
        else:
            out.append(tok.text.lower())
    return out


def normalize_words(words: Iterable[str]) -> list[str]:
    """Word-level normalization of textual tokens: split identifier-shaped
    words and lowercase everything else.

    Literal abstraction needs token kinds and happens only in
    :func:`normalize_code_tokens`; this function is the identity on that
    function's output.
    """
    out: list[str] = []
    for w in words:
        if w in (NUM_TAG, STR_TAG):
            out.append(w)
        elif _IDENT_RE.match(w):
            out.extend(split_identifier(w))
        else:
            out.append(w.lower())
    return out

"""Java front end: lexing, method parsing and token normalization."""

from .lexer import LexError, Token, TokenKind, lex
from .normalize import NUM_TAG, STR_TAG, normalize_code_tokens, normalize_words, split_identifier
from .parser import LABELS, AstNode, ParseError, UnsupportedConstruct, parse_method

__all__ = [
    "LABELS",
    "NUM_TAG",
    "STR_TAG",
    "AstNode",
    "LexError",
    "ParseError",
    "Token",
    "TokenKind",
    "UnsupportedConstruct",
    "lex",
    "normalize_code_tokens",
    "normalize_words",
    "parse_method",
    "split_identifier",
]

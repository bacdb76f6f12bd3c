"""Recursive-descent parser for a single Java method declaration.

The accepted language is a practical subset of Java: modifiers, generic and
array types, the usual statement forms and the full expression precedence
ladder. Lambdas, method references, anonymous classes, annotations with
arguments, constructors and local type declarations raise
:class:`UnsupportedConstruct` so that corpus tooling can count and skip them.

Node labels follow javalang naming (``MethodDeclaration``, ``BinaryOperation``
and so on). Every node records the inclusive range of token indices it covers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

from .lexer import Token, TokenKind

LABELS: tuple[str, ...] = (
    "MethodDeclaration",
    "Modifier",
    "Annotation",
    "TypeParameters",
    "Type",
    "FormalParameter",
    "Throws",
    "BlockStatement",
    "LocalVariableDeclaration",
    "VariableDeclarator",
    "ArrayInitializer",
    "StatementExpression",
    "IfStatement",
    "WhileStatement",
    "DoStatement",
    "ForStatement",
    "ForControl",
    "EnhancedForControl",
    "SwitchStatement",
    "SwitchStatementCase",
    "TryStatement",
    "TryResource",
    "CatchClause",
    "CatchClauseParameter",
    "FinallyBlock",
    "ReturnStatement",
    "ThrowStatement",
    "BreakStatement",
    "ContinueStatement",
    "SynchronizedStatement",
    "AssertStatement",
    "LabeledStatement",
    "Statement",
    "Assignment",
    "TernaryExpression",
    "BinaryOperation",
    "UnaryOperation",
    "Cast",
    "MethodInvocation",
    "SuperMethodInvocation",
    "SuperMemberReference",
    "MemberReference",
    "ArraySelector",
    "ClassCreator",
    "ArrayCreator",
    "Literal",
    "This",
    "ClassReference",
)
_LABEL_SET = frozenset(LABELS)

MODIFIERS = frozenset(
    "public protected private static abstract final native synchronized "
    "transient volatile strictfp default".split()
)
PRIMITIVES = frozenset("boolean byte char short int long float double".split())
ASSIGN_OPS = frozenset("= += -= *= /= %= &= |= ^= <<= >>= >>>=".split())
PREFIX_OPS = frozenset("+ - ++ -- ! ~".split())
BINARY_LEVELS: tuple[frozenset[str], ...] = (
    frozenset({"||"}),
    frozenset({"&&"}),
    frozenset({"|"}),
    frozenset({"^"}),
    frozenset({"&"}),
    frozenset({"==", "!="}),
    frozenset({"<", ">", "<=", ">=", "instanceof"}),
    frozenset({"<<", ">>", ">>>"}),
    frozenset({"+", "-"}),
    frozenset({"*", "/", "%"}),
)
_LITERAL_KINDS = frozenset(
    {TokenKind.NUMBER, TokenKind.STRING, TokenKind.CHAR, TokenKind.BOOLEAN, TokenKind.NULL}
)


@dataclass
class AstNode:
    """A syntax-tree node.

    Attributes:
        label: Node type name, one of :data:`LABELS`.
        children: Ordered child nodes.
        span: Inclusive ``(first, last)`` token indices covered by the node.
    """

    label: str
    children: list[AstNode] = field(default_factory=list)
    span: tuple[int, int] = (0, 0)

    def walk(self) -> Iterator[AstNode]:
        """Yield nodes in pre-order."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def node_count(self) -> int:
        return sum(1 for _ in self.walk())

    def __repr__(self) -> str:
        if not self.children:
            return self.label
        return f"{self.label}[{', '.join(map(repr, self.children))}]"


class ParseError(Exception):
    """Grammar violation at a token index (``len(tokens)`` means end of input)."""

    def __init__(self, index: int, expected: Sequence[str], found: str | None = None) -> None:
        self.index = index
        self.expected = tuple(sorted(expected))
        self.found = found
        where = f"token {index} ({found!r})" if found is not None else f"token {index} (end of input)"
        super().__init__(f"{where}: expected one of {', '.join(self.expected)}")


class UnsupportedConstruct(Exception):
    """The method uses a Java construct outside the supported subset."""

    def __init__(self, name: str, index: int | None = None) -> None:
        self.name = name
        self.index = index
        super().__init__(name if index is None else f"{name} at token {index}")


def parse_method(tokens: Sequence[Token]) -> AstNode:
    """Parse the tokens of one method declaration into an AST rooted at
    ``MethodDeclaration``.

    Raises:
        ParseError: On a grammar violation.
        UnsupportedConstruct: For constructs outside the subset.
    """
    for i, tok in enumerate(tokens):
        if tok.text == "->" and tok.kind is TokenKind.OPERATOR:
            raise UnsupportedConstruct("lambda expression", i)
        if tok.text == "::" and tok.kind is TokenKind.SEPARATOR:
            raise UnsupportedConstruct("method reference", i)
    parser = _Parser(tokens)
    root = parser.method()
    if parser.pos != len(parser.toks):
        parser.fail({"<end of input>"})
    return root


class _Parser:
    def __init__(self, tokens: Sequence[Token]) -> None:
        self.toks: list[Token] = list(tokens)
        # parser index -> lexer index; differs only after a ">>" split
        self.orig: list[int] = list(range(len(self.toks)))
        self.pos = 0

    # -- token helpers -------------------------------------------------

    def peek(self, k: int = 0) -> Token | None:
        i = self.pos + k
        return self.toks[i] if i < len(self.toks) else None

    def at(self, text: str, k: int = 0) -> bool:
        tok = self.peek(k)
        return tok is not None and tok.text == text and tok.kind not in _LITERAL_KINDS

    def at_ident(self, k: int = 0) -> bool:
        tok = self.peek(k)
        return tok is not None and tok.kind is TokenKind.IDENTIFIER

    def fail(self, expected: set[str] | frozenset[str]) -> None:
        tok = self.peek()
        index = self.orig[self.pos] if tok is not None else (self.orig[-1] + 1 if self.orig else 0)
        raise ParseError(index, expected, tok.text if tok is not None else None)

    def expect(self, text: str) -> int:
        if not self.at(text):
            self.fail({text})
        self.pos += 1
        return self.pos - 1

    def ident(self) -> int:
        if not self.at_ident():
            self.fail({"<identifier>"})
        self.pos += 1
        return self.pos - 1

    def node(self, label: str, start: int, children: list[AstNode] | None = None) -> AstNode:
        """Build a node spanning parser indices [start, pos)."""
        assert label in _LABEL_SET, label
        return AstNode(label, children or [], (self.orig[start], self.orig[self.pos - 1]))

    def snapshot(self) -> tuple[int, list[Token], list[int]]:
        return self.pos, self.toks, self.orig

    def restore(self, snap: tuple[int, list[Token], list[int]]) -> None:
        self.pos, self.toks, self.orig = snap

    def close_angle(self) -> None:
        """Consume one ``>``, splitting ``>>``-style tokens when nested
        type arguments close together."""
        tok = self.peek()
        if tok is None or not tok.text.startswith(">") or tok.kind is not TokenKind.OPERATOR:
            self.fail({">"})
        if tok.text == ">":
            self.pos += 1
            return
        start, end = tok.span
        first = Token(TokenKind.OPERATOR, ">", (start, start + 1))
        rest = Token(TokenKind.OPERATOR, tok.text[1:], (start + 1, end))
        i = self.pos
        # copy-on-write so that restore() undoes the split
        self.toks = self.toks[:i] + [first, rest] + self.toks[i + 1:]
        self.orig = self.orig[:i] + [self.orig[i], self.orig[i]] + self.orig[i + 1:]
        self.pos += 1

    # -- declarations --------------------------------------------------

    def modifiers(self) -> list[AstNode]:
        out = []
        while True:
            start = self.pos
            if self.at("@") and not self.at("interface", 1):
                self.pos += 1
                self.ident()
                while self.at(".") and self.at_ident(1):
                    self.pos += 2
                if self.at("("):
                    raise UnsupportedConstruct("annotation with arguments", self.orig[self.pos])
                out.append(self.node("Annotation", start))
            elif (tok := self.peek()) is not None and tok.kind is TokenKind.KEYWORD and tok.text in MODIFIERS:
                self.pos += 1
                out.append(self.node("Modifier", start))
            else:
                return out

    def method(self) -> AstNode:
        start = self.pos
        children = self.modifiers()
        if self.at("<"):
            tp_start = self.pos
            self.type_parameters()
            children.append(self.node("TypeParameters", tp_start))
        for word in ("class", "interface", "enum"):
            if self.at(word):
                raise UnsupportedConstruct(f"{word} declaration", self.orig[self.pos])
        type_start = self.pos
        if self.at("void"):
            self.pos += 1
        else:
            if self.at_ident() and self.at("(", 1):
                raise UnsupportedConstruct("constructor declaration", self.orig[self.pos])
            self.type()
        children.append(self.node("Type", type_start))
        self.ident()
        children.extend(self.formal_parameters())
        while self.at("[") and self.at("]", 1):
            self.pos += 2
        if self.at("throws"):
            t_start = self.pos
            self.pos += 1
            self.type()
            while self.at(","):
                self.pos += 1
                self.type()
            children.append(self.node("Throws", t_start))
        if self.at(";"):
            self.pos += 1
        else:
            children.append(self.block())
        return self.node("MethodDeclaration", start, children)

    def type_parameters(self) -> None:
        self.expect("<")
        while True:
            self.modifiers()
            self.ident()
            if self.at("extends"):
                self.pos += 1
                self.type()
                while self.at("&"):
                    self.pos += 1
                    self.type()
            if self.at(","):
                self.pos += 1
                continue
            self.close_angle()
            return

    def formal_parameters(self) -> list[AstNode]:
        self.expect("(")
        params = []
        if self.at(")"):
            self.pos += 1
            return params
        while True:
            start = self.pos
            self.modifiers()
            self.type()
            if self.at("..."):
                self.pos += 1
            if self.at("this"):
                self.pos += 1
            else:
                self.ident()
            while self.at("[") and self.at("]", 1):
                self.pos += 2
            params.append(self.node("FormalParameter", start))
            if self.at(","):
                self.pos += 1
                continue
            self.expect(")")
            return params

    # -- types ---------------------------------------------------------

    def type(self) -> None:
        """Consume a type; callers wrap the consumed range in a node."""
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.KEYWORD and tok.text in PRIMITIVES:
            self.pos += 1
        else:
            self.ident()
            if self.at("<"):
                self.type_arguments()
            while self.at(".") and self.at_ident(1):
                self.pos += 2
                if self.at("<"):
                    self.type_arguments()
        while self.at("[") and self.at("]", 1):
            self.pos += 2

    def type_arguments(self) -> None:
        self.expect("<")
        if self.at(">"):
            self.pos += 1
            return
        while True:
            if self.at("?"):
                self.pos += 1
                if self.at("extends") or self.at("super"):
                    self.pos += 1
                    self.type()
            else:
                self.type()
            if self.at(","):
                self.pos += 1
                continue
            self.close_angle()
            return

    def type_node(self) -> AstNode:
        start = self.pos
        self.type()
        return self.node("Type", start)

    # -- statements ----------------------------------------------------

    def block(self, label: str = "BlockStatement", start: int | None = None) -> AstNode:
        start = self.pos if start is None else start
        self.expect("{")
        body = []
        while not self.at("}"):
            if self.peek() is None:
                self.fail({"}"})
            body.append(self.statement())
        self.pos += 1
        return self.node(label, start, body)

    def statement(self) -> AstNode:
        tok = self.peek()
        if tok is None:
            self.fail({"<statement>"})
        start = self.pos
        text = tok.text if tok.kind not in _LITERAL_KINDS else None

        if text == "{":
            return self.block()
        if text == ";":
            self.pos += 1
            return self.node("Statement", start)
        if text == "if":
            self.pos += 1
            kids = [self.par_expression(), self.statement()]
            if self.at("else"):
                self.pos += 1
                kids.append(self.statement())
            return self.node("IfStatement", start, kids)
        if text == "while":
            self.pos += 1
            kids = [self.par_expression(), self.statement()]
            return self.node("WhileStatement", start, kids)
        if text == "do":
            self.pos += 1
            body = self.statement()
            self.expect("while")
            cond = self.par_expression()
            self.expect(";")
            return self.node("DoStatement", start, [body, cond])
        if text == "for":
            self.pos += 1
            control = self.for_control()
            return self.node("ForStatement", start, [control, self.statement()])
        if text == "switch":
            return self.switch_statement()
        if text == "try":
            return self.try_statement()
        if text == "return":
            self.pos += 1
            kids = [] if self.at(";") else [self.expression()]
            self.expect(";")
            return self.node("ReturnStatement", start, kids)
        if text == "throw":
            self.pos += 1
            kids = [self.expression()]
            self.expect(";")
            return self.node("ThrowStatement", start, kids)
        if text in ("break", "continue"):
            self.pos += 1
            if self.at_ident():
                self.pos += 1
            self.expect(";")
            return self.node("BreakStatement" if text == "break" else "ContinueStatement", start)
        if text == "synchronized":
            self.pos += 1
            kids = [self.par_expression(), self.block()]
            return self.node("SynchronizedStatement", start, kids)
        if text == "assert":
            self.pos += 1
            kids = [self.expression()]
            if self.at(":"):
                self.pos += 1
                kids.append(self.expression())
            self.expect(";")
            return self.node("AssertStatement", start, kids)
        if text in ("class", "interface", "enum") or (
            text in ("abstract", "final", "static") and any(self.at(w, 1) for w in ("class", "interface", "enum"))
        ):
            raise UnsupportedConstruct("local type declaration", self.orig[start])
        if tok.kind is TokenKind.IDENTIFIER and self.at(":", 1):
            self.pos += 2
            return self.node("LabeledStatement", start, [self.statement()])

        decl = self.try_local_variable_declaration()
        if decl is not None:
            self.expect(";")
            decl.span = (decl.span[0], self.orig[self.pos - 1])
            return decl
        expr = self.expression()
        self.expect(";")
        return self.node("StatementExpression", start, [expr])

    def try_local_variable_declaration(self) -> AstNode | None:
        """Parse ``[modifiers] Type declarators`` if the input starts with one.

        Returns None (with the position untouched) when it does not.
        """
        start = self.pos
        tok = self.peek()
        if tok is None:
            return None
        if self.at("final") or self.at("@"):
            mods = self.modifiers()
            return self.variable_declarators(start, mods + [self.type_node()])
        if tok.kind is TokenKind.KEYWORD and tok.text in PRIMITIVES:
            return self.variable_declarators(start, [self.type_node()])
        if tok.kind is not TokenKind.IDENTIFIER:
            return None
        snap = self.snapshot()
        try:
            type_node = self.type_node()
        except ParseError:
            self.restore(snap)
            return None
        if not self.at_ident():
            self.restore(snap)
            return None
        return self.variable_declarators(start, [type_node])

    def variable_declarators(self, start: int, kids: list[AstNode]) -> AstNode:
        while True:
            d_start = self.pos
            self.ident()
            while self.at("[") and self.at("]", 1):
                self.pos += 2
            init = []
            if self.at("="):
                self.pos += 1
                init.append(self.variable_initializer())
            kids.append(self.node("VariableDeclarator", d_start, init))
            if not self.at(","):
                return self.node("LocalVariableDeclaration", start, kids)
            self.pos += 1

    def variable_initializer(self) -> AstNode:
        return self.array_initializer() if self.at("{") else self.expression()

    def array_initializer(self) -> AstNode:
        start = self.expect("{")
        items = []
        while not self.at("}"):
            items.append(self.variable_initializer())
            if not self.at(","):
                break
            self.pos += 1
        self.expect("}")
        return self.node("ArrayInitializer", start, items)

    def for_control(self) -> AstNode:
        start = self.expect("(")
        # enhanced for: [modifiers] Type name ':'
        snap = self.snapshot()
        try:
            p_start = self.pos
            self.modifiers()
            self.type()
            self.ident()
            is_enhanced = self.at(":")
        except ParseError:
            is_enhanced = False
        if is_enhanced:
            param = self.node("FormalParameter", p_start)
            self.pos += 1
            iterable = self.expression()
            self.expect(")")
            return self.node("EnhancedForControl", start, [param, iterable])
        self.restore(snap)

        kids = []
        if not self.at(";"):
            decl = self.try_local_variable_declaration()
            if decl is not None:
                kids.append(decl)
            else:
                kids.extend(self.expression_list())
        self.expect(";")
        if not self.at(";"):
            kids.append(self.expression())
        self.expect(";")
        if not self.at(")"):
            kids.extend(self.expression_list())
        self.expect(")")
        return self.node("ForControl", start, kids)

    def expression_list(self) -> list[AstNode]:
        out = [self.expression()]
        while self.at(","):
            self.pos += 1
            out.append(self.expression())
        return out

    def switch_statement(self) -> AstNode:
        start = self.expect("switch")
        kids = [self.par_expression()]
        self.expect("{")
        while not self.at("}"):
            c_start = self.pos
            labels: list[AstNode] = []
            if self.at("default"):
                self.pos += 1
            elif self.at("case"):
                self.pos += 1
                labels.extend(self.expression_list())
            else:
                self.fail({"case", "default", "}"})
            if self.at("->"):
                raise UnsupportedConstruct("switch rule", self.orig[self.pos])
            self.expect(":")
            body = []
            while not (self.at("case") or self.at("default") or self.at("}")):
                if self.peek() is None:
                    self.fail({"}"})
                body.append(self.statement())
            kids.append(self.node("SwitchStatementCase", c_start, labels + body))
        self.pos += 1
        return self.node("SwitchStatement", start, kids)

    def try_statement(self) -> AstNode:
        start = self.expect("try")
        kids = []
        if self.at("("):
            self.pos += 1
            while not self.at(")"):
                r_start = self.pos
                decl = None
                if not (self.at_ident() and (self.at(")", 1) or self.at(";", 1))):
                    self.modifiers()
                    decl = self.type_node()
                    self.ident()
                    self.expect("=")
                res_kids = ([decl] if decl else []) + [self.expression()]
                kids.append(self.node("TryResource", r_start, res_kids))
                if not self.at(";"):
                    break
                self.pos += 1
            self.expect(")")
        kids.append(self.block())
        while self.at("catch"):
            c_start = self.pos
            self.pos += 1
            self.expect("(")
            p_start = self.pos
            self.modifiers()
            self.type()
            while self.at("|"):
                self.pos += 1
                self.type()
            self.ident()
            param = self.node("CatchClauseParameter", p_start)
            self.expect(")")
            kids.append(self.node("CatchClause", c_start, [param, self.block()]))
        if self.at("finally"):
            f_start = self.pos
            self.pos += 1
            kids.append(self.block("FinallyBlock", start=f_start))
        if not any(k.label in ("TryResource", "CatchClause", "FinallyBlock") for k in kids):
            self.fail({"catch", "finally"})
        return self.node("TryStatement", start, kids)

    # -- expressions ---------------------------------------------------

    def par_expression(self) -> AstNode:
        self.expect("(")
        expr = self.expression()
        self.expect(")")
        return expr

    def expression(self) -> AstNode:
        start = self.pos
        lhs = self.ternary()
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.OPERATOR and tok.text in ASSIGN_OPS:
            self.pos += 1
            rhs = self.expression()
            return self.node("Assignment", start, [lhs, rhs])
        return lhs

    def ternary(self) -> AstNode:
        start = self.pos
        cond = self.binary(0)
        if not self.at("?"):
            return cond
        self.pos += 1
        then = self.expression()
        self.expect(":")
        other = self.ternary()
        return self.node("TernaryExpression", start, [cond, then, other])

    def binary(self, level: int) -> AstNode:
        if level == len(BINARY_LEVELS):
            return self.unary()
        start = self.pos
        ops = BINARY_LEVELS[level]
        lhs = self.binary(level + 1)
        while (tok := self.peek()) is not None and tok.kind in (TokenKind.OPERATOR, TokenKind.KEYWORD) and tok.text in ops:
            self.pos += 1
            if tok.text == "instanceof":
                t_start = self.pos
                if self.at("final"):
                    self.pos += 1
                self.type()
                if self.at_ident():
                    self.pos += 1
                rhs = self.node("Type", t_start)
            else:
                rhs = self.binary(level + 1)
            lhs = self.node("BinaryOperation", start, [lhs, rhs])
        return lhs

    def unary(self) -> AstNode:
        start = self.pos
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.OPERATOR and tok.text in PREFIX_OPS:
            self.pos += 1
            return self.node("UnaryOperation", start, [self.unary()])
        if self.at("("):
            cast = self.try_cast()
            if cast is not None:
                return cast
        expr = self.postfix()
        return expr

    def try_cast(self) -> AstNode | None:
        start = self.pos
        nxt = self.peek(1)
        if nxt is None:
            return None
        primitive = nxt.kind is TokenKind.KEYWORD and nxt.text in PRIMITIVES
        if not primitive and nxt.kind is not TokenKind.IDENTIFIER:
            return None
        snap = self.snapshot()
        self.pos += 1
        try:
            type_node = self.type_node()
            while self.at("&"):
                self.pos += 1
                self.type()
            self.expect(")")
        except ParseError:
            self.restore(snap)
            return None
        operand_tok = self.peek()
        if operand_tok is None:
            self.restore(snap)
            return None
        if primitive:
            ok = operand_tok.text in PREFIX_OPS or operand_tok.text == "(" or operand_tok.kind not in (
                TokenKind.OPERATOR,
                TokenKind.SEPARATOR,
            )
        else:
            # "(Name) -x" is a subtraction in Java, so only these may follow
            ok = (
                operand_tok.kind in _LITERAL_KINDS
                or operand_tok.kind is TokenKind.IDENTIFIER
                or operand_tok.text in ("(", "!", "~", "this", "super", "new")
                or (operand_tok.kind is TokenKind.KEYWORD and operand_tok.text in PRIMITIVES)
            )
        if not ok:
            self.restore(snap)
            return None
        operand = self.unary()
        return self.node("Cast", start, [type_node, operand])

    def postfix(self) -> AstNode:
        start = self.pos
        expr = self.selectors(self.primary(), start)
        while self.at("++") or self.at("--"):
            self.pos += 1
            expr = self.node("UnaryOperation", start, [expr])
        return expr

    def arguments(self) -> list[AstNode]:
        self.expect("(")
        args = []
        if self.at(")"):
            self.pos += 1
            return args
        while True:
            args.append(self.expression())
            if self.at(","):
                self.pos += 1
                continue
            self.expect(")")
            return args

    def primary(self) -> AstNode:
        tok = self.peek()
        start = self.pos
        if tok is None:
            self.fail({"<expression>"})
        if tok.kind in _LITERAL_KINDS:
            self.pos += 1
            return self.node("Literal", start)
        if self.at("("):
            self.pos += 1
            inner = self.expression()
            self.expect(")")
            return inner
        if self.at("this"):
            self.pos += 1
            if self.at("("):
                raise UnsupportedConstruct("explicit constructor invocation", self.orig[start])
            return self.node("This", start)
        if self.at("super"):
            self.pos += 1
            if self.at("("):
                raise UnsupportedConstruct("explicit constructor invocation", self.orig[start])
            self.expect(".")
            if self.at("<"):
                raise UnsupportedConstruct("explicit generic invocation", self.orig[self.pos])
            self.ident()
            if self.at("("):
                return self.node("SuperMethodInvocation", start, self.arguments())
            return self.node("SuperMemberReference", start)
        if self.at("new"):
            return self.creator()
        if tok.kind is TokenKind.KEYWORD and (tok.text in PRIMITIVES or tok.text == "void"):
            self.pos += 1
            while self.at("[") and self.at("]", 1):
                self.pos += 2
            self.expect(".")
            self.expect("class")
            return self.node("ClassReference", start)
        if tok.kind is TokenKind.IDENTIFIER:
            self.pos += 1
            while self.at(".") and self.at_ident(1):
                self.pos += 2
            if self.at("("):
                return self.node("MethodInvocation", start, self.arguments())
            if self.at(".") and self.at("class", 1):
                self.pos += 2
                return self.node("ClassReference", start)
            if self.at(".") and self.at("this", 1):
                self.pos += 2
                return self.node("This", start)
            if self.at("[") and self.at("]", 1):
                self.pos += 2
                while self.at("[") and self.at("]", 1):
                    self.pos += 2
                self.expect(".")
                self.expect("class")
                return self.node("ClassReference", start)
            return self.node("MemberReference", start)
        self.fail({"<expression>"})
        raise AssertionError("unreachable")

    def selectors(self, expr: AstNode, start: int) -> AstNode:
        while True:
            if self.at("."):
                if self.at("new", 1):
                    raise UnsupportedConstruct("qualified instance creation", self.orig[self.pos + 1])
                if self.at("<", 1):
                    raise UnsupportedConstruct("explicit generic invocation", self.orig[self.pos + 1])
                self.pos += 1
                self.ident()
                if self.at("("):
                    expr = self.node("MethodInvocation", start, [expr] + self.arguments())
                else:
                    expr = self.node("MemberReference", start, [expr])
            elif self.at("["):
                self.pos += 1
                index = self.expression()
                self.expect("]")
                expr = self.node("ArraySelector", start, [expr, index])
            else:
                return expr

    def creator(self) -> AstNode:
        start = self.expect("new")
        t_start = self.pos
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.KEYWORD and tok.text in PRIMITIVES:
            self.pos += 1
        else:
            self.ident()
            if self.at("<"):
                self.type_arguments()
            while self.at(".") and self.at_ident(1):
                self.pos += 2
                if self.at("<"):
                    self.type_arguments()
        type_node = self.node("Type", t_start)
        if self.at("["):
            kids = [type_node]
            while self.at("[") and not self.at("]", 1):
                self.pos += 1
                kids.append(self.expression())
                self.expect("]")
            while self.at("[") and self.at("]", 1):
                self.pos += 2
            if self.at("{"):
                kids.append(self.array_initializer())
            elif len(kids) == 1:
                self.fail({"{", "<expression>"})
            return self.node("ArrayCreator", start, kids)
        args = self.arguments()
        if self.at("{"):
            raise UnsupportedConstruct("anonymous class", self.orig[self.pos])
        return self.node("ClassCreator", start, [type_node] + args)
